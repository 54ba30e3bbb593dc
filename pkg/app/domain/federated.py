# domain/federated.py
"""K-client aggregation: optimal local rule and weights, the aggregated risk and the
cross-client product-form limit."""
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from app.core.errors import ArgumentError, AssumptionViolation, DomainError
from app.domain.measures import SpectralGrid, gram_system, integrate, mixture_weights, spectral_grid
from app.domain.model import SDParams, SpikedModel
from app.domain.optimal import (RationalRule, Ordering, optimal_numerator, assemble_rule, optimal_pred_rule,
                                solve_coefficients, synthesize_sd_params)
from app.domain.shrinkage import ShrinkageFn, check_admissible

logger = logging.getLogger(__name__)

# |b₀| ниже этой доли ‖γ‖ считается нулём
_B0_RTOL = 1e-10


@dataclass(frozen=True)
class FederatedOptimum:
    K: int
    b: np.ndarray = field(repr=False)
    rho_star: float
    fK: RationalRule
    local_rule: RationalRule
    sd_params: SDParams | None = None

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "b": self.b.tolist(),
            "rho_star": self.rho_star,
            "fK": self.fK.to_dict(),
            "local_rule": self.local_rule.to_dict(),
            "sd_params": self.sd_params.to_dict() if self.sd_params else None,
        }


def federated_diag(model: SpikedModel, K: int) -> np.ndarray:
    """𝔇_K = diag(σ₀²r²ω₀(K−1), ((K−1)σ₀² + Kδ_j)α_j²)"""
    mw = mixture_weights(model)
    s0 = model.sigma0_sq
    return np.concatenate([[s0 * model.r ** 2 * mw.omega0 * (K - 1)],
                           ((K - 1) * s0 + K * model.deltas) * model.alphas ** 2])


def federated_coefficients(model: SpikedModel, K: int, n_nodes: int | None = None) -> np.ndarray:
    if K < 1:
        raise ArgumentError(f"K must be >= 1, got {K}")
    gram = gram_system(spectral_grid(model, n_nodes))
    return solve_coefficients(gram, federated_diag(model, K))


def federated_optimum(model: SpikedModel, K: int, ordering: Ordering = "outlier_first",
                      synthesize: bool = True) -> FederatedOptimum:
    """Optimal common local rule for K clients, its aggregation weight ρ* and SD parameters."""
    b = federated_coefficients(model, K)
    gamma = gram_system(spectral_grid(model)).gamma
    if abs(b[0]) < _B0_RTOL * np.linalg.norm(gamma):
        raise AssumptionViolation("nonzero-b0 assumption", f"b0 = {b[0]:.3g} at K = {K}")
    rho = float(b[0] / gamma[0])
    fK = assemble_rule(model, optimal_numerator(model, b))
    local = fK.scaled(1.0 / rho)
    params = synthesize_sd_params(local, ordering) if synthesize else None
    logger.info("federated optimum K=%d: rho*=%.6g b=%s", K, rho, b)
    return FederatedOptimum(K=K, b=b, rho_star=rho, fK=fK, local_rule=local, sd_params=params)


def b0_noise_limit(model: SpikedModel, K: int) -> float:
    """Limit of b₀^(K) as σ_ε² → ∞: σ₀²r²ω₀."""
    limit = model.sigma0_sq * model.r ** 2 * mixture_weights(model).omega0
    gaps = [abs(federated_coefficients(model.replace(sigma_eps_sq=v), K)[0] - limit) for v in (1e3, 1e6)]
    if not gaps[1] <= gaps[0]:
        logger.warning("b0 does not approach its noise limit: gap %.3g at 1e3, %.3g at 1e6", *gaps)
    return float(limit)


def b0_sign_scan(model: SpikedModel, K: int, sigma_eps_grid: Sequence[float]) -> tuple[np.ndarray, list[int]]:
    """b₀^(K) along a σ_ε² grid and the indices i where sign(b₀) differs between i−1 and i."""
    values = np.array([federated_coefficients(model.replace(sigma_eps_sq=float(v)), K)[0] for v in sigma_eps_grid])
    signs = np.sign(values)
    changes = [i for i in range(1, values.size) if signs[i] != signs[i - 1]]
    if changes:
        logger.info("b0 changes sign at sigma_eps_sq indices %s", changes)
    return values, changes


# ---------------------------------------------------------------------------
# Risk
# ---------------------------------------------------------------------------

def _joint_grid(model: SpikedModel, rules: Sequence[ShrinkageFn]) -> SpectralGrid:
    bps = sorted({p for f in rules for p in f.breakpoints(model)})
    return spectral_grid(model, None, bps)


def _inner(grid: SpectralGrid, phi: np.ndarray, psi: np.ndarray) -> float:
    pos = grid.positive
    return float(np.sum(phi[pos] * psi[pos] * grid.inner_weights[pos]))


def federated_risk(model: SpikedModel, K: int, rules: Sequence[ShrinkageFn], rhos: Sequence[float]) -> float:
    """Limiting prediction risk of Σ_ℓ ρ_ℓ β̂_ℓ with client rules f_ℓ (equal aspect ratios)."""
    if len(rules) != K or len(rhos) != K:
        raise ArgumentError(f"expected {K} rules and {K} weights, got {len(rules)} and {len(rhos)}")
    for f in rules:
        check_admissible(model, f)
    grid = _joint_grid(model, rules)
    mw = mixture_weights(model)
    s0r2 = model.sigma0_sq * model.r ** 2
    # f̃_ℓ = Kρ_ℓ f_ℓ
    tilde = [K * float(rho) * np.where(grid.positive, f(grid.x), 0.0) for f, rho in zip(rules, rhos)]

    norms = sum(_inner(grid, t, t) for t in tilde)
    cross_g = sum(_inner(grid, grid.g, t) for t in tilde)
    proj = np.array([[_inner(grid, grid.h[j], t) for t in tilde] for j in range(model.s + 1)])  # (s+1, K)

    def pair_sum(row: np.ndarray) -> float:
        return 0.5 * (row.sum() ** 2 - np.sum(row ** 2))

    total = norms - 2.0 * K * cross_g
    total += 2.0 * s0r2 * mw.omega0 * pair_sum(proj[0])
    for j, (d, a) in enumerate(zip(model.deltas, model.alphas), start=1):
        total += 2.0 * model.sigma0_sq * a ** 2 * pair_sum(proj[j])
        total += d * a ** 2 * proj[j].sum() ** 2
    total += K ** 2 * (s0r2 + float(np.sum(model.deltas * model.alphas ** 2)))
    return float(total / K ** 2)


def dispersion_penalty(model: SpikedModel, phi: ShrinkageFn) -> float:
    """‖φ‖²_w − σ₀²r²ω₀⟨h₀,φ⟩²_w − Σσ₀²α_j²⟨h_j,φ⟩²_w; non-negative, zero only for φ ≡ 0 on the support."""
    check_admissible(model, phi)
    grid = _joint_grid(model, [phi])
    vals = np.where(grid.positive, phi(grid.x), 0.0)
    out = _inner(grid, vals, vals)
    out -= model.sigma0_sq * model.r ** 2 * mixture_weights(model).omega0 * _inner(grid, grid.h[0], vals) ** 2
    for j, a in enumerate(model.alphas, start=1):
        out -= model.sigma0_sq * a ** 2 * _inner(grid, grid.h[j], vals) ** 2
    return float(out)


def aggregation_gain(model: SpikedModel, K: int) -> float:
    """Risk of averaging K single-client optima (ρ = 1/K) minus the risk of the federated optimum."""
    single, _ = optimal_pred_rule(model)
    naive = federated_risk(model, K, [single] * K, [1.0 / K] * K)
    opt = federated_optimum(model, K, synthesize=False)
    best = federated_risk(model, K, [opt.local_rule] * K, [opt.rho_star] * K)
    return naive - best


# ---------------------------------------------------------------------------
# Product form across aspect ratios
# ---------------------------------------------------------------------------

def product_form_limit(model: SpikedModel, phi: ShrinkageFn, psi: ShrinkageFn, c_l: float, c_k: float) -> float:
    """Limit of β₀ᵀφ(Σ̂_ℓ)ψ(Σ̂_k)β₀/r² for independent samples with aspect ratios c_ℓ, c_k:
    ω₀∫φdF_MP,cℓ·∫ψdF_MP,ck + Σω_j∫φdF_δj,cℓ·∫ψdF_δj,ck."""
    if c_l <= 0 or c_k <= 0:
        raise DomainError(f"aspect ratios must be positive, got {c_l}, {c_k}")
    mw = mixture_weights(model)
    ml, mk = model.replace(c=float(c_l)), model.replace(c=float(c_k))
    check_admissible(ml, phi)
    check_admissible(mk, psi)
    gl = spectral_grid(ml, None, phi.breakpoints(ml))
    gk = spectral_grid(mk, None, psi.breakpoints(mk))
    pv, qv = phi(gl.x), psi(gk.x)
    out = mw.omega0 * integrate(gl, pv, "mp") * integrate(gk, qv, "mp")
    for j, om in enumerate(mw.omegas, start=1):
        out += om * integrate(gl, pv, j) * integrate(gk, qv, j)
    return float(out)
