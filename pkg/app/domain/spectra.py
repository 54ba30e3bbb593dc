# domain/spectra.py
"""Marchenko–Pastur law, one-spike limiting measures F_δ, Stieltjes transforms and bulk quadrature.

Bulk integrals use the substitution x = m + h·cos θ with m = (a+b)/2, h = (b−a)/2, under which the
MP mass element becomes h²·sin²θ / (2πσ₀²c·x) dθ: smooth for every c, including c = 1.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from app.core.errors import DomainError
from app.domain.model import SpikedModel

logger = logging.getLogger(__name__)

ArrayLike = float | complex | np.ndarray


@dataclass(frozen=True)
class Atom:
    location: float
    mass: float
    label: str = ""


@dataclass(frozen=True)
class SpectralMeasure:
    """Bulk density on [a, b] plus finitely many atoms."""
    bulk_lo: float
    bulk_hi: float
    bulk_density: Callable[[np.ndarray], np.ndarray]
    atoms: tuple[Atom, ...] = ()
    name: str = "MP"

    def integrate(self, phi: Callable[[np.ndarray], np.ndarray], rule: "QuadratureRule") -> float:
        """∫φ dμ: bulk by the rule's dx-weights, atoms exactly."""
        x = rule.nodes
        bulk = float(np.sum(rule.weights * self.bulk_density(x) * phi(x)))
        atoms = sum(a.mass * float(phi(np.array([a.location]))[0]) for a in self.atoms)
        return bulk + atoms

    def total_mass(self, rule: "QuadratureRule") -> float:
        return self.integrate(np.ones_like, rule)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in (a, b) with dx-weights (`weights`) and MP masses (`mp_weights`, edge factor absorbed)."""
    n_nodes: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    mp_weights: np.ndarray = field(repr=False)

    def integrate_mp(self, g: Callable[[np.ndarray], np.ndarray]) -> float:
        """Bulk part of ∫ g dF_MP"""
        return float(np.sum(self.mp_weights * g(self.nodes)))


# ---------------------------------------------------------------------------
# MP law
# ---------------------------------------------------------------------------

def mp_support(model: SpikedModel) -> tuple[float, float]:
    sq = np.sqrt(model.c)
    a = model.sigma0_sq * (1.0 - sq) ** 2
    if model.c == 1.0:
        a = 0.0
    return float(a), float(model.sigma0_sq * (1.0 + sq) ** 2)


def bbp_threshold(model: SpikedModel) -> float:
    return float(model.sigma0_sq * np.sqrt(model.c))


def is_supercritical(model: SpikedModel, delta: float) -> bool:
    return bool(delta > bbp_threshold(model))


def mp_zero_atom(model: SpikedModel) -> float:
    return max(0.0, 1.0 - 1.0 / model.c)


def mp_density(model: SpikedModel, x: ArrayLike) -> np.ndarray:
    """f_MP(x) = √((b−x)(x−a)) / (2πσ₀²c·x) inside (a, b), 0 elsewhere."""
    a, b = mp_support(model)
    x = np.asarray(x, dtype=float)
    inside = (x > a) & (x < b)
    xs = np.where(inside, x, 0.5 * (a + b))
    dens = np.sqrt((b - xs) * (xs - a)) / (2.0 * np.pi * model.sigma0_sq * model.c * xs)
    return np.where(inside, dens, 0.0)


def _check_off_axis(z: np.ndarray) -> None:
    bad = (z.imag == 0.0) & (z.real >= 0.0)
    if np.any(bad):
        raise DomainError(f"Stieltjes transform undefined on [0, inf): z={z[bad][0]}")


def mp_stieltjes(model: SpikedModel, z: ArrayLike, from_above: bool = False) -> np.ndarray | complex:
    """m(z) = ∫(x−z)⁻¹dF_MP(x).

    With ``from_above=True`` real arguments inside the bulk return the boundary value m(x + i0).
    """
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    a, b = mp_support(model)
    s0, c = model.sigma0_sq, model.c
    on_axis = (z.imag == 0.0) & (z.real >= 0.0)
    if from_above:
        # x + i0 на балке: корень = i·√((b−x)(x−a))
        bulk = on_axis & (z.real > a) & (z.real < b)
        if np.any(on_axis & ~bulk):
            raise DomainError("from_above is only defined strictly inside the bulk (a, b)")
    else:
        bulk = np.zeros(z.shape, dtype=bool)
        _check_off_axis(z)

    root = np.sqrt((z - a) * (z - b))
    xr = z.real
    root = np.where(bulk, 1j * np.sqrt(np.clip((b - xr) * (xr - a), 0.0, None)), root)
    denom = 2.0 * c * z * s0
    m_plus = (s0 * (1.0 - c) - z + root) / denom
    m_minus = (s0 * (1.0 - c) - z - root) / denom
    # ветвь выбирается по знаку: Im m ~ Im z, m > 0 при z < 0
    upper = z.imag > 0
    lower = z.imag < 0
    real_neg = (z.imag == 0.0) & (z.real < 0.0)
    keep = np.where(upper, m_plus.imag > 0,
            np.where(lower, m_plus.imag < 0,
            np.where(real_neg, m_plus.real > 0, True)))
    m = np.where(keep, m_plus, m_minus)
    return complex(m[0]) if scalar else m


def companion_stieltjes(model: SpikedModel, z: ArrayLike, from_above: bool = False) -> np.ndarray | complex:
    """m̲(z) = −(1−c)/z + c·m(z)"""
    m = mp_stieltjes(model, z, from_above=from_above)
    zz = np.asarray(z, dtype=complex)
    out = -(1.0 - model.c) / zz + model.c * np.asarray(m)
    return complex(out) if np.ndim(out) == 0 else out


def spiked_stieltjes(model: SpikedModel, delta: float, z: ArrayLike, from_above: bool = False) -> np.ndarray | complex:
    """m_δ(z) = σ₀²m(z) / (σ₀² + δ + δ·z·m(z))"""
    if delta < 0:
        raise DomainError(f"delta must be >= 0, got {delta}")
    m = np.asarray(mp_stieltjes(model, z, from_above=from_above))
    zz = np.asarray(z, dtype=complex)
    s0 = model.sigma0_sq
    out = s0 * m / (s0 + delta + delta * zz * m)
    return complex(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# One-spike measure F_δ
# ---------------------------------------------------------------------------

def outlier_location(model: SpikedModel, delta: float) -> float:
    """x⋆ = (δ+σ₀²)(δ+cσ₀²)/δ"""
    if delta <= 0:
        raise DomainError(f"outlier location needs delta > 0, got {delta}")
    s0 = model.sigma0_sq
    return float((delta + s0) * (delta + model.c * s0) / delta)


def rn_derivative(model: SpikedModel, delta: float, x: ArrayLike) -> np.ndarray:
    """ν_δ(x) = dF_MP/dF_δ = δ(x⋆ − x) / (cσ₀²(δ+σ₀²)); ν_0 ≡ 1."""
    x = np.asarray(x, dtype=float)
    if delta == 0:
        return np.ones_like(x)
    s0 = model.sigma0_sq
    return delta * (outlier_location(model, delta) - x) / (model.c * s0 * (delta + s0))


def spiked_density(model: SpikedModel, delta: float, x: ArrayLike) -> np.ndarray:
    """f_δ = f_MP / ν_δ on the bulk"""
    return mp_density(model, x) / rn_derivative(model, delta, x)


def spiked_zero_atom(model: SpikedModel, delta: float) -> float:
    if model.c <= 1.0:
        return 0.0
    s0 = model.sigma0_sq
    return float(s0 * (model.c - 1.0) / (model.c * s0 + delta))


def spiked_outlier_mass(model: SpikedModel, delta: float) -> float:
    """F_δ({x⋆}) = (δ² − cσ₀⁴)/(δ(δ+cσ₀²)) above the BBP threshold, else 0"""
    if not is_supercritical(model, delta):
        return 0.0
    s0 = model.sigma0_sq
    return float((delta ** 2 - model.c * s0 ** 2) / (delta * (delta + model.c * s0)))


def mp_measure(model: SpikedModel) -> SpectralMeasure:
    a, b = mp_support(model)
    atoms = (Atom(0.0, mp_zero_atom(model), "zero"),) if model.c > 1.0 else ()
    return SpectralMeasure(a, b, lambda x: mp_density(model, x), atoms, name="MP")


def spiked_measure(model: SpikedModel, delta: float) -> SpectralMeasure:
    if delta < 0:
        raise DomainError(f"delta must be >= 0, got {delta}")
    if delta == 0:
        return mp_measure(model)
    if np.isclose(delta ** 2, model.c * model.sigma0_sq ** 2, rtol=1e-12, atol=0.0):
        raise DomainError("F_delta is not handled at delta^2 = c*sigma0^4 (outlier merges with the bulk edge)")
    a, b = mp_support(model)
    atoms = []
    if model.c > 1.0:
        atoms.append(Atom(0.0, spiked_zero_atom(model, delta), "zero"))
    if is_supercritical(model, delta):
        atoms.append(Atom(outlier_location(model, delta), spiked_outlier_mass(model, delta), "outlier"))
    return SpectralMeasure(a, b, lambda x: spiked_density(model, delta, x), tuple(atoms), name=f"delta={delta:g}")


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def _theta_of(model: SpikedModel, x: float) -> float:
    a, b = mp_support(model)
    m, h = 0.5 * (a + b), 0.5 * (b - a)
    return float(np.arccos(np.clip((x - m) / h, -1.0, 1.0)))


def _theta_rule(model: SpikedModel, th_lo: float, th_hi: float, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gauss–Legendre in θ on [th_lo, th_hi]: nodes, dx-weights, MP masses"""
    a, b = mp_support(model)
    m, h = 0.5 * (a + b), 0.5 * (b - a)
    t, w = special.roots_legendre(n)
    th = 0.5 * (th_hi - th_lo) * t + 0.5 * (th_hi + th_lo)
    wt = 0.5 * (th_hi - th_lo) * w
    x = m + h * np.cos(th)
    dx = h * np.sin(th) * wt
    mass = h ** 2 * np.sin(th) ** 2 / (2.0 * np.pi * model.sigma0_sq * model.c * x) * wt
    return x, dx, mass


def make_quadrature(model: SpikedModel, n_nodes: int, breakpoints: Sequence[float] = ()) -> QuadratureRule:
    """Bulk rule exact (to rounding) for polynomial integrands against F_MP.

    Without breakpoints: Gauss–Chebyshev of the second kind (Gauss–Jacobi(½, −½) at c = 1, where
    the 1/x factor cancels one edge). With breakpoints inside (a, b): piecewise Gauss–Legendre in θ,
    so integrands with kinks (surrogate ramps) are integrated per smooth piece.
    """
    if n_nodes < 16:
        raise DomainError(f"n_nodes must be >= 16, got {n_nodes}")
    a, b = mp_support(model)
    m, h = 0.5 * (a + b), 0.5 * (b - a)
    s0, c = model.sigma0_sq, model.c
    cuts = sorted({float(p) for p in breakpoints if a < p < b})

    if cuts:
        thetas = [np.pi] + [_theta_of(model, p) for p in cuts] + [0.0]
        per_piece = max(16, n_nodes // len(cuts) + 1)
        pieces = [_theta_rule(model, thetas[i + 1], thetas[i], per_piece) for i in range(len(thetas) - 1)]
        x = np.concatenate([p[0] for p in pieces])
        dx = np.concatenate([p[1] for p in pieces])
        mass = np.concatenate([p[2] for p in pieces])
    elif c == 1.0:
        t, w = special.roots_jacobi(n_nodes, 0.5, -0.5)
        x = m + h * t
        dx = h * w * np.sqrt(1.0 + t) / np.sqrt(1.0 - t)
        mass = h * w / (2.0 * np.pi * s0)
    else:
        t, w = special.roots_chebyu(n_nodes)
        x = m + h * t
        dx = h * w / np.sqrt(1.0 - t ** 2)
        mass = h ** 2 * w / (2.0 * np.pi * s0 * c * x)

    order = np.argsort(x)
    logger.debug("quadrature: %d nodes on [%.6g, %.6g], %d breakpoints", x.size, a, b, len(cuts))
    return QuadratureRule(n_nodes=int(x.size), nodes=x[order], weights=dx[order], mp_weights=mass[order])


# ---------------------------------------------------------------------------
# Upper tail and its inverse
# ---------------------------------------------------------------------------

_TAIL_NODES = 256


def _tail_mass_theta(model: SpikedModel, theta: float) -> float:
    if theta <= 0.0:
        return 0.0
    _, _, mass = _theta_rule(model, 0.0, theta, _TAIL_NODES)
    return float(mass.sum())


def mp_upper_tail(model: SpikedModel, x: float) -> float:
    """Q_c(x) = F_MP((x, ∞)) for x in the bulk"""
    a, b = mp_support(model)
    if x >= b:
        return 0.0
    if x <= a:
        return min(1.0, 1.0 / model.c)
    return _tail_mass_theta(model, _theta_of(model, x))


def mp_quantile_inverse(model: SpikedModel, tau: float) -> float:
    """Q_c⁻¹(τ): bulk point with upper-tail MP mass τ, for τ in [0, min(1, 1/c))."""
    top = min(1.0, 1.0 / model.c)
    if not (0.0 <= tau < top):
        raise DomainError(f"tau must lie in [0, {top:g}), got {tau}")
    a, b = mp_support(model)
    if tau == 0.0:
        return b
    theta = optimize.bisect(lambda th: _tail_mass_theta(model, th) - tau, 0.0, np.pi, xtol=1e-13, maxiter=200)
    m, h = 0.5 * (a + b), 0.5 * (b - a)
    return float(m + h * np.cos(theta))
