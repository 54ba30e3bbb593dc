# domain/optimal.py
"""Optimal shrinkage rules f*_pred / f*_est, the root structure of their denominator and the
self-distillation parameters that realise them exactly."""
import logging
from dataclasses import dataclass, field
from typing import ClassVar, Literal

import numpy as np
from numpy.polynomial import Polynomial
from scipy import optimize

from app.core.errors import NumericalError, StructuralError, SynthesisError, UnsupportedError
from app.domain.measures import GramSystem, SpectralGrid, gram_system, rn_polynomials, spectral_grid
from app.domain.model import SDParams, SpikedModel
from app.domain.shrinkage import Rational, Ridge, SDChain, in_closed_support
from app.domain import spectra

logger = logging.getLogger(__name__)

Ordering = Literal["outlier_first", "max_residual"]

# x⋆ ближе этого (относительно) считаются совпадающими
_XSTAR_RTOL = 1e-9
# кандидат с |R_k(γ)| меньше этой доли от максимума считается вырожденным
_ADMISSIBLE_RTOL = 1e-9
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class RationalRule(Rational):
    """Q/P with monic P of degree s+1 and its s+1 real roots (ascending)."""
    kind: ClassVar[str] = "rational_rule"
    roots: tuple[float, ...] = ()

    @property
    def P(self) -> Polynomial:
        return self.denominator

    @property
    def Q(self) -> Polynomial:
        return self.numerator

    @property
    def degree(self) -> int:
        return len(self.den_coeffs) - 1

    def scaled(self, factor: float) -> "RationalRule":
        return RationalRule(tuple(np.asarray(self.num_coeffs) * factor), self.den_coeffs, self.roots)

    def to_dict(self) -> dict:
        return {"P_coeffs": list(self.den_coeffs), "Q_coeffs": list(self.num_coeffs), "P_roots": list(self.roots)}


@dataclass(frozen=True)
class OptimalCoefficients:
    """b solves (I + 𝔇H)b = γ; A_j = ⟨f*, h_j⟩_w."""
    b: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    fixed_point_residual: float = float("nan")

    def to_dict(self) -> dict:
        return {"b": self.b.tolist(), "A": self.A.tolist(), "fixed_point_residual": self.fixed_point_residual}


# ---------------------------------------------------------------------------
# Linear system and polynomial assembly
# ---------------------------------------------------------------------------

def solve_coefficients(gram: GramSystem, diag: np.ndarray) -> np.ndarray:
    """(I + diag(𝔇)·H) b = γ; a zero first entry of 𝔇 keeps b₀ = γ₀ exactly."""
    H, gamma = gram.H, gram.gamma
    n = gamma.size
    M = np.eye(n) + diag[:, None] * H
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NumericalError(f"(I + DH) is ill-conditioned (cond={cond:.3g})")
    if diag[0] == 0.0:
        b = np.empty(n)
        b[0] = gamma[0]
        if n > 1:
            rhs = gamma[1:] - M[1:, 0] * gamma[0]
            b[1:] = np.linalg.solve(M[1:, 1:], rhs)
        return b
    return np.linalg.solve(M, gamma)


def _denominator0(model: SpikedModel) -> Polynomial:
    """P⁰ = σ₀²r²x·D + cσ₀²σ_ε²ν"""
    rn = rn_polynomials(model)
    x = Polynomial([0.0, 1.0])
    return model.sigma0_sq * model.r ** 2 * x * rn.denom + model.c * model.sigma0_sq * model.sigma_eps_sq * rn.nu


def optimal_numerator(model: SpikedModel, b: np.ndarray) -> Polynomial:
    """Q⁰ = b₀ν + Σb_jν_{−j}"""
    rn = rn_polynomials(model)
    out = Polynomial([0.0])
    for i, bi in enumerate(b):
        out = out + bi * rn.nu_minus_ext(i)
    return out


def _monic_pair(num: Polynomial, den: Polynomial) -> tuple[Polynomial, Polynomial]:
    lead = den.coef[-1]
    return num / lead, den / lead


def assemble_rule(model: SpikedModel, num0: Polynomial) -> RationalRule:
    """Normalise (num0, P⁰) by the leading coefficient of P⁰ and locate the roots of P."""
    if model.sigma_eps_sq == 0.0:
        raise UnsupportedError("the optimal rule requires sigma_eps_sq > 0; "
                               "with no noise P has a root at 0 inside the support")
    Q, P = _monic_pair(num0, _denominator0(model))
    P = Polynomial(np.concatenate([P.coef[:-1], [1.0]]))
    roots = denominator_roots(model, P)
    q = np.zeros(model.s + 1)
    q[: Q.coef.size] = Q.coef[: model.s + 1]
    return RationalRule(tuple(q), tuple(P.coef), tuple(roots))


# ---------------------------------------------------------------------------
# Roots of P
# ---------------------------------------------------------------------------

def _sign(v: float) -> int:
    return int(np.sign(v))


def _polish(P: Polynomial, root: float, steps: int = 3) -> float:
    dP = P.deriv()
    for _ in range(steps):
        d = dP(root)
        if d == 0.0:
            break
        step = P(root) / d
        if not np.isfinite(step):
            break
        root -= step
    return float(root)


def _expand(P: Polynomial, anchor: float, start: float, direction: float) -> float:
    """Double |span| from anchor until P changes sign."""
    span = start
    s0 = _sign(P(anchor))
    for _ in range(200):
        edge = anchor + direction * span
        if _sign(P(edge)) != s0 and _sign(P(edge)) != 0:
            return edge
        span *= 2.0
    raise StructuralError("no sign change found while expanding a root bracket")


def denominator_roots(model: SpikedModel, P: Polynomial) -> np.ndarray:
    """The s+1 real roots of P: one in each (x⋆_i, x⋆_{i+1}), one above x⋆_s, one negative."""
    xstars = np.sort([spectra.outlier_location(model, d) for d in model.deltas])
    if xstars.size > 1:
        gaps = np.diff(xstars) / xstars[1:]
        if np.any(gaps < _XSTAR_RTOL):
            raise StructuralError("two outlier locations x* nearly coincide; spikes are too close to degenerate")
    p0 = P(0.0)
    if abs(p0) <= 1e-14 * np.max(np.abs(P.coef)):
        raise StructuralError("P(0) = 0: a root at the origin")

    brackets: list[tuple[float, float]] = []
    for lo, hi in zip(xstars[:-1], xstars[1:]):
        brackets.append((lo, hi))
    if xstars.size:
        top = xstars[-1]
        brackets.append((top, _expand(P, top, top, 1.0)))
    # при s = 0 остаётся только отрицательный корень
    brackets.append((_expand(P, 0.0, 1.0, -1.0), 0.0))

    roots = []
    scale = 0.0
    for lo, hi in brackets:
        flo, fhi = P(lo), P(hi)
        scale = max(scale, abs(flo), abs(fhi))
        if flo == 0.0 or fhi == 0.0 or _sign(flo) == _sign(fhi):
            raise StructuralError(f"P has no sign change on ({lo:.6g}, {hi:.6g}); root structure broken")
        r = optimize.brentq(P, lo, hi, xtol=1e-15 * max(1.0, abs(lo), abs(hi)), rtol=4 * np.finfo(float).eps, maxiter=500)
        r = _polish(P, r)
        if not lo < r < hi:
            raise StructuralError(f"root polishing left the bracket ({lo:.6g}, {hi:.6g})")
        roots.append(r)
    roots = np.sort(np.array(roots))

    resid = np.max(np.abs(P(roots))) / max(scale, 1e-300)
    if resid > 1e-12:
        logger.warning("denominator roots residual %.3g relative to bracket scale", resid)
    if np.sum(roots < 0) != 1:
        raise StructuralError(f"expected exactly one negative root, got {roots.tolist()}")
    for r in roots:
        if in_closed_support(model, r):
            raise StructuralError(f"root {r:.6g} of P lies in the closed support")
    logger.debug("P roots: %s", roots)
    return roots


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

def _fixed_point_residual(grid: SpectralGrid, f_vals: np.ndarray, A: np.ndarray) -> float:
    """max |𝒜f − g| with 𝒜f = f + Σδ_jα_j²⟨f,h_j⟩_w h_j, over x > 0."""
    model = grid.model
    pos = grid.positive
    Af = f_vals[pos] + ((model.deltas * model.alphas ** 2 * A)[:, None] * grid.h[1:, pos]).sum(axis=0)
    return float(np.max(np.abs(Af - grid.g[pos])))


def optimal_pred_rule(model: SpikedModel, n_nodes: int | None = None) -> tuple[RationalRule, OptimalCoefficients]:
    """f*_pred = Q/P with (I + 𝔇H)b = γ, 𝔇 = diag(0, δ_jα_j²)."""
    grid = spectral_grid(model, n_nodes)
    gram = gram_system(grid)
    diag = np.concatenate([[0.0], model.deltas * model.alphas ** 2])
    b = solve_coefficients(gram, diag)
    rule = assemble_rule(model, optimal_numerator(model, b))
    f_vals = rule(grid.x)
    pos = grid.positive
    A = (grid.h[1:, pos] * grid.inner_weights[pos]) @ f_vals[pos]
    resid = _fixed_point_residual(grid, f_vals, A)
    if resid > 1e-8:
        logger.warning("fixed-point residual %.3g exceeds 1e-8", resid)
    logger.debug("optimal pred rule: b=%s A=%s", b, A)
    return rule, OptimalCoefficients(b=b, A=A, fixed_point_residual=resid)


def fixed_point_residual(model: SpikedModel, rule: Rational, n_nodes: int | None = None) -> float:
    """max over x > 0 of |𝒜f − g| for an arbitrary rational rule."""
    grid = spectral_grid(model, n_nodes)
    f_vals = rule(grid.x)
    pos = grid.positive
    A = (grid.h[1:, pos] * grid.inner_weights[pos]) @ f_vals[pos]
    return _fixed_point_residual(grid, f_vals, A)


def rule_coefficients(model: SpikedModel, rule: Rational, b: np.ndarray,
                      n_nodes: int | None = None) -> OptimalCoefficients:
    """b as given, A_j = ⟨f, h_j⟩_w and the single-client fixed-point residual of f."""
    grid = spectral_grid(model, n_nodes)
    f_vals = rule(grid.x)
    pos = grid.positive
    A = (grid.h[1:, pos] * grid.inner_weights[pos]) @ f_vals[pos]
    return OptimalCoefficients(b=np.asarray(b, dtype=float), A=A,
                               fixed_point_residual=_fixed_point_residual(grid, f_vals, A))


def optimal_est_rule(model: SpikedModel) -> RationalRule:
    """f*_est = σ₀²r²D / P⁰ (same denominator as f*_pred)."""
    rn = rn_polynomials(model)
    return assemble_rule(model, model.sigma0_sq * model.r ** 2 * rn.denom)


def isotropic_optimal(model: SpikedModel) -> Ridge:
    """Ridge at λ* = cσ_ε²/r²"""
    if model.s != 0:
        raise UnsupportedError("isotropic_optimal needs s = 0; use optimal_pred_rule for spiked models")
    return Ridge(model.c * model.sigma_eps_sq / model.r ** 2)


# ---------------------------------------------------------------------------
# SD synthesis
# ---------------------------------------------------------------------------

def _basis(x: float, d: int, k: int, chosen: list[float]) -> float:
    """x^{d−k}·Π_{l<k}(x − γ_l)"""
    out = x ** (d - k)
    for g in chosen[:k]:
        out *= x - g
    return out


def synthesize_sd_params(rule: RationalRule, ordering: Ordering = "outlier_first") -> SDParams:
    """Write Q = Σ_k t_k x^{d−k}Π_{l<k}(x−γ_l) over an admissible ordering of the roots of P,
    then map λ_k = −γ_k, ξ_k = S_{k−1}/S_k with S_k = t₀+…+t_k."""
    roots = list(rule.roots)
    d = len(roots) - 1
    Q = rule.Q
    lead = Q.coef[d] if Q.coef.size > d else 0.0
    if abs(lead - 1.0) > 1e-9:
        raise SynthesisError(f"SD chains realise rules with x*f(x) -> 1; numerator leading coefficient is {lead:.6g}")

    chosen: list[float] = []
    t: list[float] = []
    partial = 0.0
    remaining = sorted(roots)
    for k in range(d):
        cands = []
        for g in remaining:
            num = Q(g) - sum(t[i] * _basis(g, d, i, chosen) for i in range(k))
            bk = _basis(g, d, k, chosen)
            tk = num / bk
            cands.append((g, tk, (partial + tk) * bk))
        biggest = max(abs(c[2]) for c in cands)
        admissible = [c for c in cands if abs(c[2]) > _ADMISSIBLE_RTOL * biggest and abs(c[2]) > 0.0]
        if not admissible:
            raise SynthesisError(f"no admissible root at step {k}: partial sums degenerate")
        if k == 0 and ordering == "outlier_first" and any(c[0] == max(remaining) for c in admissible):
            pick = next(c for c in admissible if c[0] == max(remaining))
        else:
            pick = max(admissible, key=lambda c: abs(c[2]))
        g, tk, _ = pick
        chosen.append(g)
        t.append(tk)
        partial += tk
        remaining.remove(g)
    chosen.append(remaining[0])
    t.append(1.0 - partial)

    sums = np.cumsum(t)
    sums[-1] = 1.0
    lambdas = tuple(-g for g in chosen)
    xis = tuple(float(sums[i - 1] / sums[i]) for i in range(1, d + 1))
    logger.debug("SD synthesis (%s): lambdas=%s xis=%s", ordering, lambdas, xis)
    return SDParams(lambdas, xis)


def round_trip_error(rule: Rational, params: SDParams, grid: SpectralGrid) -> float:
    """sup over grid ∪ atoms of |SD chain − rule|"""
    return float(np.max(np.abs(SDChain(params)(grid.x) - rule(grid.x))))


def coprimality_check(rule: Rational, rtol: float = 1e-8) -> bool:
    """True iff no root of the denominator is (numerically) a root of the numerator."""
    Q = rule.numerator
    roots = getattr(rule, "roots", ()) or tuple(rule.denominator.roots())
    qc = np.abs(Q.coef)
    for p in roots:
        scale = float(np.sum(qc * np.abs(p) ** np.arange(qc.size)))
        if scale == 0.0 or abs(Q(p)) <= rtol * scale:
            return False
    return True


def ridge_ensemble(rule: RationalRule) -> tuple[np.ndarray, np.ndarray]:
    """Partial fractions Q/P = Σ c_i/(x − γ_i): weights c_i = Q(γ_i)/P'(γ_i), penalties −γ_i."""
    roots = np.asarray(rule.roots)
    weights = rule.Q(roots) / rule.P.deriv()(roots)
    return weights, -roots
