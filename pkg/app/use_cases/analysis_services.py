# use_cases/analysis_services.py
"""Deterministic commands: measure tables, limiting risks, optimal rules, SD parameters, federated optimum."""
import logging

import numpy as np

from app.api.schemas import (GDSpec, MinNormSpec, OptimalSpec, PCRSpec, RationalSpec, RidgeSpec, RuleSpec, RunConfig,
                             SDSpec)
from app.core.errors import ConfigError, service_handler
from app.domain import spectra
from app.domain.federated import aggregation_gain, federated_optimum, federated_risk
from app.domain.measures import mixture_measure, spectral_grid
from app.domain.model import SDParams, SpikedModel
from app.domain.optimal import (RationalRule, coprimality_check, fixed_point_residual, optimal_est_rule,
                                optimal_pred_rule, ridge_ensemble, round_trip_error, rule_coefficients,
                                synthesize_sd_params)
from app.domain.risk import (limiting_est_risk, limiting_pred_risk, min_norm_surrogate, pcr_components_fn,
                             pcr_surrogate)
from app.domain.shrinkage import GDPoly, ShrinkageFn, make_rational, make_ridge, sd_chain_fn


def resolve_rules(model: SpikedModel, spec: RuleSpec) -> list[tuple[str, ShrinkageFn]]:
    """RuleSpec -> [(label, rule)]; a ridge grid expands to one rule per λ."""
    match spec:
        case RidgeSpec(lam=lam, grid=None):
            return [(f"ridge(lam={lam:g})", make_ridge(lam, model))]
        case RidgeSpec(grid=grid):
            return [(f"ridge(lam={lam:.6g})", make_ridge(float(lam), model)) for lam in grid.points()]
        case SDSpec(lambdas=lambdas, xis=xis):
            return [(f"sd(k={len(xis)})", sd_chain_fn(SDParams(lambdas, xis), model))]
        case GDSpec(eta=eta, steps=steps):
            return [(f"gd(eta={eta:g},steps={steps})", GDPoly(eta, steps))]
        case PCRSpec(tau=tau, m=None):
            return [(f"pcr(tau={tau:g})", pcr_surrogate(model, tau))]
        case PCRSpec(m=m):
            return [(f"pcr(m={m})", pcr_components_fn(model, m))]
        case MinNormSpec():
            return [("min_norm", min_norm_surrogate(model))]
        case RationalSpec(num=num, den=den):
            return [("rational", make_rational(num, den, model))]
        case OptimalSpec(kind="optimal_pred"):
            return [("optimal_pred", optimal_pred_rule(model)[0])]
        case OptimalSpec(kind="optimal_est"):
            return [("optimal_est", optimal_est_rule(model))]
    raise ConfigError(f"unsupported rule spec {spec!r}")


def risk_row(model: SpikedModel, label: str, rule: ShrinkageFn) -> dict:
    pred = limiting_pred_risk(model, rule)
    est = limiting_est_risk(model, rule)
    row = {"rule": label, "kind": rule.kind, "pred_bias_bulk": pred.bias_bulk}
    for j, v in enumerate(pred.bias_spikes, start=1):
        row[f"pred_bias_spike_{j}"] = v
    row.update({
        "pred_variance": pred.variance,
        "pred_total": pred.total,
        "est_bias": est.bias_bulk,
        "est_variance": est.variance,
        "est_total": est.total,
    })
    return row


def rule_block(model: SpikedModel, rule: RationalRule, ordering: str, kind: str, fixed_point: bool = True) -> dict:
    """Serialized rule with its SD realisation and self-checks."""
    grid = spectral_grid(model)
    params = synthesize_sd_params(rule, ordering)
    weights, penalties = ridge_ensemble(rule)
    risk = limiting_pred_risk(model, rule) if kind == "pred" else limiting_est_risk(model, rule)
    return {
        **rule.to_dict(),
        "sd_params": params.to_dict(),
        "coprime": coprimality_check(rule),
        "ridge_ensemble": {"weights": weights, "lambdas": penalties},
        "risk": risk.to_dict(),
        "self_check": {
            "round_trip_sup_error": round_trip_error(rule, params, grid),
            "fixed_point_residual": fixed_point_residual(model, rule) if kind == "pred" and fixed_point else None,
        },
    }


class AnalysisService:
    """Commands that only evaluate limiting quantities."""

    def __init__(self, logger: logging.Logger | None = None):
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    @service_handler("measure table")
    def measure(self, cfg: RunConfig) -> dict:
        model = cfg.model
        a, b = spectra.mp_support(model)
        n = cfg.measure.grid_size
        x = a + (b - a) * (np.arange(n) + 0.5) / n
        columns = {"x": x, "f_MP": spectra.mp_density(model, x)}
        for j, d in enumerate(model.deltas, start=1):
            columns[f"f_delta_{j}"] = spectra.spiked_density(model, d, x)
        rows = [{k: float(v[i]) for k, v in columns.items()} for i in range(n)]

        measures = [spectra.mp_measure(model)]
        measures += [spectra.spiked_measure(model, d) for d in model.deltas]
        if model.s:
            measures.append(mixture_measure(model))
        names = ["MP"] + [f"delta_{j}" for j in range(1, model.s + 1)] + (["alpha"] if model.s else [])
        atoms = [{"measure": name, "label": at.label, "location": at.location, "mass": at.mass}
                 for name, m in zip(names, measures) for at in m.atoms]
        self.logger.info("measure: %d rows, %d atoms", len(rows), len(atoms))
        return {"rows": rows, "atoms": atoms}

    @service_handler("limiting risks")
    def risk(self, cfg: RunConfig) -> dict:
        if cfg.risk is None:
            raise ConfigError("the risk command needs a 'risk' block")
        model = cfg.model
        rows = [risk_row(model, label, rule) for spec in cfg.risk.rules for label, rule in resolve_rules(model, spec)]
        return {"rows": rows}

    @service_handler("optimal rules")
    def optimal(self, cfg: RunConfig) -> dict:
        model = cfg.model
        ordering = cfg.optimal.ordering
        pred, coeffs = optimal_pred_rule(model)
        doc = {
            "model": model.to_dict(),
            "pred": {**rule_block(model, pred, ordering, "pred"), **coeffs.to_dict()},
            "est": rule_block(model, optimal_est_rule(model), ordering, "est"),
        }
        self.logger.info("optimal pred rule roots %s", pred.roots)
        return doc

    @service_handler("SD parameters")
    def sd_params(self, cfg: RunConfig) -> dict:
        model = cfg.model
        ordering = cfg.optimal.ordering
        pred, _ = optimal_pred_rule(model)
        doc = {
            "pred": synthesize_sd_params(pred, ordering).to_dict(),
            "est": synthesize_sd_params(optimal_est_rule(model), ordering).to_dict(),
        }
        if cfg.federated is not None:
            fed = federated_optimum(model, cfg.federated.K, cfg.federated.ordering)
            doc["federated_local"] = fed.sd_params.to_dict() if fed.sd_params else None
        return doc

    @service_handler("federated optimum")
    def federated(self, cfg: RunConfig) -> dict:
        if cfg.federated is None:
            raise ConfigError("the federated command needs a 'federated' block")
        model, K = cfg.model, cfg.federated.K
        fed = federated_optimum(model, K, cfg.federated.ordering, synthesize=False)
        # блок "pred" локального правила устроен как "pred" команды optimal; при K = 1 они совпадают
        coeffs = rule_coefficients(model, fed.local_rule, fed.b / fed.rho_star).to_dict()
        if K > 1:
            coeffs["fixed_point_residual"] = None
        doc = {
            "model": model.to_dict(),
            "K": K,
            "b": fed.b.tolist(),
            "rho_star": fed.rho_star,
            "fK": fed.fK.to_dict(),
            "pred": {**rule_block(model, fed.local_rule, cfg.federated.ordering, "pred", fixed_point=K == 1), **coeffs},
            "risk": federated_risk(model, K, [fed.local_rule] * K, [fed.rho_star] * K),
            "aggregation_gain": aggregation_gain(model, K),
        }
        return doc
