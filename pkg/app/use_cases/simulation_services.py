# use_cases/simulation_services.py
"""Monte Carlo convergence runs and parameter sweeps pairing limiting and empirical risks."""
import logging
from functools import partial

import numpy as np
from pydantic import ValidationError

from app.api.schemas import (EstimatorSpec, RunConfig, SimGD, SimMinNorm, SimOptimalSD, SimPCR, SimRidge, SimSD,
                             SimTunedRidge, SimulateBlock)
from app.core.errors import ConfigError, SpectralDistillError, service_handler
from app.domain import spectra
from app.domain.federated import federated_coefficients
from app.domain.measures import mixture_weights
from app.domain.model import SDParams, SpikedModel
from app.domain.optimal import optimal_est_rule, optimal_pred_rule, synthesize_sd_params
from app.domain.risk import (limiting_est_risk, limiting_pred_risk, min_norm_surrogate, named_surrogates,
                             pcr_components_fn, pcr_surrogate, supercritical_outliers, tune_ridge)
from app.domain.shrinkage import GDPoly, Ridge, SDChain, ShrinkageFn
from app.infrastructure.simulator import (Estimator, SimConfig, SimData, converge_harness, fit_gd, fit_minnorm,
                                          fit_pcr, fit_sd, fit_shrinkage)

logger = logging.getLogger(__name__)


def _coef_of(fit, *args):
    def run(data: SimData) -> np.ndarray:
        return fit(data.X, data.y, *args).coefficients
    return run


def interpolator_limit(model: SpikedModel) -> ShrinkageFn:
    """Limit of the full-rank fit: min-norm surrogate for c > 1, OLS (ridge at 0) for c < 1."""
    return min_norm_surrogate(model) if model.c > 1.0 else Ridge(0.0)


def pcr_limit(model: SpikedModel, m: int, p: int) -> ShrinkageFn:
    """Surrogate for PCR with m components: outliers first, then the top (m − s⁺)/p of the bulk."""
    s_plus = len(supercritical_outliers(model))
    if m <= s_plus:
        return pcr_components_fn(model, m)
    tau = (m - s_plus) / p
    if tau >= min(1.0, 1.0 / model.c):
        return interpolator_limit(model)
    return pcr_surrogate(model, tau)


def resolve_estimator(model: SpikedModel, spec: EstimatorSpec, p: int, n: int) -> tuple[str, Estimator, ShrinkageFn]:
    """EstimatorSpec -> (label, fit on SimData, limiting rule)."""
    match spec:
        case SimRidge(lam=lam):
            rule = Ridge(lam)
            return f"ridge(lam={lam:g})", _coef_of(fit_shrinkage, rule), rule
        case SimTunedRidge():
            rule = tune_ridge(model).rule
            return "tuned_ridge", _coef_of(fit_shrinkage, rule), rule
        case SimOptimalSD(ordering=ordering):
            rule, _ = optimal_pred_rule(model)
            params = synthesize_sd_params(rule, ordering)
            return "optimal_sd", _coef_of(fit_sd, params), rule
        case SimSD(lambdas=lambdas, xis=xis):
            params = SDParams(lambdas, xis)
            return f"sd(k={params.k})", _coef_of(fit_sd, params), SDChain(params)
        case SimPCR(m=m, tau=tau):
            m = m if m is not None else max(1, int(np.floor(tau * p)))
            if m > min(n, p):
                raise ConfigError(f"PCR m={m} exceeds min(n, p) = {min(n, p)}")
            return f"pcr(m={m})", _coef_of(fit_pcr, m), pcr_limit(model, m, p)
        case SimMinNorm():
            return "min_norm", _coef_of(fit_minnorm), interpolator_limit(model)
        case SimGD(eta=eta, steps=steps):
            return f"gd(eta={eta:g},steps={steps})", _coef_of(fit_gd, eta, steps), GDPoly(eta, steps)
    raise ConfigError(f"unsupported estimator spec {spec!r}")


def sim_config(model: SpikedModel, block: SimulateBlock, seed: int) -> SimConfig:
    try:
        return SimConfig(model=model, n=block.n, p=block.p, seed=seed, entry_dist=block.entry_dist, df=block.df,
                         n_replicates=block.n_replicates)
    except ValidationError as e:
        raise ConfigError(f"infeasible simulation sizes: {e.errors()[0]['msg']}") from e


def harness_rows(model: SpikedModel, block: SimulateBlock, seed: int, threads: int | None) -> list[dict]:
    cfg = sim_config(model, block, seed)
    estimators: dict[str, Estimator] = {}
    targets: dict[str, float] = {}
    for spec in block.estimators:
        name, fit, rule = resolve_estimator(model, spec, block.p, block.n)
        estimators[name] = fit
        targets[name] = limiting_pred_risk(model, rule).total
    return [r.to_dict() for r in converge_harness(cfg, estimators, targets, threads)]


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _moved(model: SpikedModel, axis: str, spike: int, value: float) -> SpikedModel:
    if axis == "delta":
        return model.with_delta(spike - 1, value)
    return model.replace(sigma_eps_sq=value)


def risk_columns(model: SpikedModel) -> dict:
    """Limiting prediction risks of the named rules (plus f*_est under the estimation risk)."""
    row = {"tuned_ridge": tune_ridge(model).risk}
    pred, _ = optimal_pred_rule(model)
    row["optimal_pred"] = limiting_pred_risk(model, pred).total
    for name, rule in named_surrogates(model).items():
        row[name] = limiting_pred_risk(model, rule).total
    row["gain_pct_vs_ridge"] = 100.0 * (row["tuned_ridge"] - row["optimal_pred"]) / row["tuned_ridge"]
    row["optimal_est_est_risk"] = limiting_est_risk(model, optimal_est_rule(model)).total
    return row


def sd_param_columns(model: SpikedModel, ordering: str = "outlier_first") -> dict:
    rule, _ = optimal_pred_rule(model)
    params = synthesize_sd_params(rule, ordering)
    row = {f"lambda_{i}": v for i, v in enumerate(params.lambdas)}
    row.update({f"xi_{i}": v for i, v in enumerate(params.xis, start=1)})
    for j, d in enumerate(model.deltas, start=1):
        row[f"xstar_{j}"] = spectra.outlier_location(model, d)
    return row


def b0_columns(model: SpikedModel, K: int) -> dict:
    b = federated_coefficients(model, K)
    gamma0 = model.sigma0_sq * model.r ** 2 * mixture_weights(model).omega0
    return {"b0": b[0], "rho_star": b[0] / gamma0, **{f"b_{j}": v for j, v in enumerate(b[1:], start=1)}}


class SimulationService:
    """simulate / sweep"""

    def __init__(self, logger: logging.Logger | None = None):
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    @service_handler("simulation")
    def simulate(self, cfg: RunConfig) -> dict:
        if cfg.simulate is None:
            raise ConfigError("the simulate command needs a 'simulate' block")
        return {"rows": harness_rows(cfg.model, cfg.simulate, cfg.seed, cfg.threads)}

    @service_handler("sweep")
    def sweep(self, cfg: RunConfig) -> dict:
        sw = cfg.sweep
        if sw is None:
            raise ConfigError("the sweep command needs a 'sweep' block")
        match sw.kind:
            case "risk":
                columns = risk_columns
            case "sd_params":
                columns = partial(sd_param_columns, ordering=cfg.optimal.ordering)
            case _:
                columns = partial(b0_columns, K=sw.K)
        rows = []
        for value in sw.grid.points():
            row: dict = {sw.axis: float(value)}
            try:
                model = _moved(cfg.model, sw.axis, sw.spike, float(value))
                row.update(columns(model))
                if sw.kind == "risk" and sw.empirical:
                    for rep in harness_rows(model, cfg.simulate, cfg.seed, cfg.threads):
                        name = rep["estimator"]
                        row[f"{name}_limiting"] = rep["limiting"]
                        row[f"{name}_empirical"] = rep["empirical_mean"]
                        row[f"{name}_stderr"] = rep["stderr"]
            except (SpectralDistillError, ValidationError) as e:
                # вырожденная точка сетки не прерывает весь свип
                self.logger.warning("sweep point %s=%g skipped: %s", sw.axis, value, e)
                row["error"] = str(e).splitlines()[0]
            rows.append(row)
        return {"rows": rows}
