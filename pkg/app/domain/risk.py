# domain/risk.py
"""Limiting prediction/estimation risks of shrinkage rules, named surrogates and hyperparameter searches."""
import logging
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np
from scipy import optimize

from app.core.errors import DomainError, NumericalError, UnsupportedError
from app.core.settings import settings
from app.domain.measures import SpectralGrid, spectral_grid
from app.domain.model import RiskBreakdown, SDParams, SpikedModel
from app.domain.shrinkage import (GDPoly, MinNormSurrogate, PCRSurrogate, Ridge, ShrinkageFn, SDChain,
                                  check_admissible, zero_rule)
from app.domain import spectra

logger = logging.getLogger(__name__)

RiskKind = Literal["pred", "est"]


def _grid_for(model: SpikedModel, f: ShrinkageFn, n_nodes: int | None = None) -> SpectralGrid:
    return spectral_grid(model, n_nodes, f.breakpoints(model))


def _xf(grid: SpectralGrid, f: ShrinkageFn) -> tuple[np.ndarray, np.ndarray]:
    """(x·f, f) on the grid; x·f := 0 at the zero atom"""
    vals = f(grid.x)
    pos = grid.positive
    fv = np.where(pos, vals, 0.0)
    return grid.x * fv, fv


def _finite(*vals: float) -> None:
    if not all(np.isfinite(v) for v in vals):
        raise NumericalError("risk integral is not finite")


def limiting_pred_risk(model: SpikedModel, f: ShrinkageFn, n_nodes: int | None = None) -> RiskBreakdown:
    """σ₀²r²∫(1−xf)²dF_α + Σδ_jα_j²(∫(1−xf)dF_δj)² + cσ₀²σ_ε²∫xf²dF_MP"""
    check_admissible(model, f)
    grid = _grid_for(model, f, n_nodes)
    with np.errstate(over="ignore", invalid="ignore"):
        xf, fv = _xf(grid, f)
        one_minus = 1.0 - xf
        s0r2 = model.sigma0_sq * model.r ** 2
        bias_bulk = s0r2 * float(np.sum(one_minus ** 2 * grid.alpha))
        spikes = []
        for j, (d, a) in enumerate(zip(model.deltas, model.alphas)):
            m = grid.spiked[j]
            spikes.append(d * a ** 2 * float(np.sum(one_minus * m)) ** 2)
        variance = model.c * model.sigma0_sq * model.sigma_eps_sq * float(np.sum(xf * fv * grid.mp))
    _finite(bias_bulk, variance, *spikes)
    return RiskBreakdown(bias_bulk=bias_bulk, bias_spikes=tuple(spikes), variance=variance)


def limiting_est_risk(model: SpikedModel, f: ShrinkageFn, n_nodes: int | None = None) -> RiskBreakdown:
    """r²∫(1−xf)²dF_α + cσ_ε²∫xf²dF_MP"""
    check_admissible(model, f)
    grid = _grid_for(model, f, n_nodes)
    with np.errstate(over="ignore", invalid="ignore"):
        xf, fv = _xf(grid, f)
        bias_bulk = model.r ** 2 * float(np.sum((1.0 - xf) ** 2 * grid.alpha))
        variance = model.c * model.sigma_eps_sq * float(np.sum(xf * fv * grid.mp))
    _finite(bias_bulk, variance)
    return RiskBreakdown(bias_bulk=bias_bulk, bias_spikes=(0.0,) * model.s, variance=variance)


def limiting_risk(model: SpikedModel, f: ShrinkageFn, kind: RiskKind = "pred") -> RiskBreakdown:
    if kind == "pred":
        return limiting_pred_risk(model, f)
    if kind == "est":
        return limiting_est_risk(model, f)
    raise DomainError(f"unknown risk kind {kind!r}")


def safe_total(model: SpikedModel, f: ShrinkageFn, kind: RiskKind = "pred") -> float:
    """Total risk, +inf for rules that overflow or are inadmissible (used by searches)."""
    try:
        return limiting_risk(model, f, kind).total
    except (NumericalError, DomainError):
        return float("inf")


# ---------------------------------------------------------------------------
# Surrogates
# ---------------------------------------------------------------------------

def _ramp_width(model: SpikedModel, fraction: float | None) -> float:
    a, b = spectra.mp_support(model)
    return (settings.RAMP_FRACTION if fraction is None else fraction) * (b - a)


def min_norm_surrogate(model: SpikedModel, ramp_fraction: float | None = None) -> MinNormSurrogate:
    """0 on [0, a/4), 1/x beyond; the ramp stays inside the gap (0, a)."""
    if model.c == 1.0:
        raise UnsupportedError("min-norm interpolator has infinite limiting risk at c = 1")
    a, _ = spectra.mp_support(model)
    cut = 0.25 * a
    width = min(_ramp_width(model, ramp_fraction), cut)
    return MinNormSurrogate(threshold=cut, ramp_width=width)


def pcr_surrogate(model: SpikedModel, tau: float, ramp_fraction: float | None = None) -> PCRSurrogate:
    """Keep the top-τ fraction of the bulk (plus all outliers)."""
    top = min(1.0, 1.0 / model.c)
    if not 0.0 < tau < top:
        raise DomainError(f"PCR tau must lie in (0, {top:g}), got {tau}")
    thr = spectra.mp_quantile_inverse(model, tau)
    return PCRSurrogate(threshold=thr, ramp_width=_ramp_width(model, ramp_fraction))


def supercritical_outliers(model: SpikedModel) -> list[float]:
    """x⋆ of spikes above the BBP threshold, descending"""
    return sorted((spectra.outlier_location(model, d) for d in model.deltas
                   if spectra.is_supercritical(model, d)), reverse=True)


def pcr_components_fn(model: SpikedModel, m: int) -> ShrinkageFn:
    """PCR keeping exactly the m largest outliers (m ≤ s⁺)."""
    outs = supercritical_outliers(model)
    if not 0 <= m <= len(outs):
        raise DomainError(f"m must lie in 0..{len(outs)} (supercritical spikes), got {m}")
    if m == 0:
        return zero_rule()
    _, b = spectra.mp_support(model)
    lower = outs[m] if m < len(outs) else b
    gap = outs[m - 1] - lower
    return PCRSurrogate(threshold=lower + 0.5 * gap, ramp_width=0.25 * gap)


def named_surrogates(model: SpikedModel, taus: Iterable[float] = (0.05, 0.1, 0.3)) -> dict[str, ShrinkageFn]:
    out: dict[str, ShrinkageFn] = {}
    if model.c != 1.0:
        out["min_norm"] = min_norm_surrogate(model)
    top = min(1.0, 1.0 / model.c)
    for tau in taus:
        if 0.0 < tau < top:
            out[f"pcr_tau={tau:g}"] = pcr_surrogate(model, tau)
    s_plus = len(supercritical_outliers(model))
    if s_plus:
        out[f"pcr_m={s_plus}"] = pcr_components_fn(model, s_plus)
    return out


# ---------------------------------------------------------------------------
# Searches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchResult:
    rule: ShrinkageFn
    risk: float


def ridge_grid(size: int | None = None, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    return np.logspace(np.log10(lo or settings.RIDGE_GRID_MIN), np.log10(hi or settings.RIDGE_GRID_MAX),
                       size or settings.RIDGE_GRID_SIZE)


def ridge_grid_search(model: SpikedModel, kind: RiskKind = "pred", grid: np.ndarray | None = None) -> SearchResult:
    lams = ridge_grid() if grid is None else np.asarray(grid, dtype=float)
    risks = np.array([safe_total(model, Ridge(float(lam)), kind) for lam in lams])
    i = int(np.argmin(risks))
    return SearchResult(Ridge(float(lams[i])), float(risks[i]))


def tune_ridge(model: SpikedModel, kind: RiskKind = "pred") -> SearchResult:
    """Grid search, then bounded scalar refinement in log λ around the best grid point."""
    lams = ridge_grid()
    best = ridge_grid_search(model, kind, lams)
    i = int(np.searchsorted(lams, best.rule.lam))
    lo = np.log(lams[max(i - 1, 0)])
    hi = np.log(lams[min(i + 1, lams.size - 1)])
    if hi <= lo:
        return best
    res = optimize.minimize_scalar(lambda t: safe_total(model, Ridge(float(np.exp(t))), kind),
                                   bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    if res.fun < best.risk:
        return SearchResult(Ridge(float(np.exp(res.x))), float(res.fun))
    return best


def gd_grid_search(model: SpikedModel, etas: Iterable[float] = (0.01, 0.1), steps: Iterable[int] = (10, 100, 1000),
                   kind: RiskKind = "pred") -> SearchResult:
    best: SearchResult | None = None
    for eta in etas:
        for t in steps:
            rule = GDPoly(float(eta), int(t))
            risk = safe_total(model, rule, kind)
            if best is None or risk < best.risk:
                best = SearchResult(rule, risk)
    if best is None:
        raise DomainError("empty GD grid")
    return best


def optimal_xi(model: SpikedModel, lambda0: float, lambda1: float, kind: RiskKind = "pred") -> tuple[float, float]:
    """Best ξ for one-step SD with fixed penalties; the risk is a quadratic in ξ."""
    def risk(xi: float) -> float:
        return limiting_risk(model, SDChain(SDParams((lambda0, lambda1), (xi,))), kind).total

    r_m, r_0, r_p = risk(-1.0), risk(0.0), risk(1.0)
    curv = 0.5 * (r_p + r_m) - r_0
    slope = 0.5 * (r_p - r_m)
    if curv <= 0:
        raise NumericalError("one-step SD risk is not convex in xi for these penalties")
    xi = -slope / (2.0 * curv)
    return float(xi), float(r_0 - slope ** 2 / (4.0 * curv))


def relative_gain(model: SpikedModel, f: ShrinkageFn, baseline: ShrinkageFn, kind: RiskKind = "pred") -> float:
    """Percent risk reduction of f over baseline"""
    rb = limiting_risk(model, baseline, kind).total
    rf = limiting_risk(model, f, kind).total
    return 100.0 * (rb - rf) / rb
