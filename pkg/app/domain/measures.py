# domain/measures.py
"""Mixture F_α, Radon–Nikodym polynomials ν/μ, the weight w, target g, basis h_j and the Gram system.

Everything is tabulated once per model on a :class:`SpectralGrid` (bulk quadrature nodes plus atoms),
each point carrying its mass under F_MP, every F_δj and F_α.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from app.core.errors import DomainError, NumericalError
from app.core.settings import settings
from app.domain.model import MixtureWeights, SpikedModel
from app.domain import spectra

logger = logging.getLogger(__name__)

# точки, отличающиеся от x⋆ меньше этого (относительно), считаются самим атомом
_SNAP_RTOL = 1e-12


def mixture_weights(model: SpikedModel) -> MixtureWeights:
    """ω₀ = 1 − Σα_j²/r², ω_j = α_j²/r²"""
    omegas = tuple(float(a ** 2 / model.r ** 2) for a in model.alphas)
    return MixtureWeights(omega0=1.0 - sum(omegas), omegas=omegas)


def mixture_measure(model: SpikedModel) -> spectra.SpectralMeasure:
    """F_α = ω₀F_MP + Σω_jF_δj"""
    mw = mixture_weights(model)
    parts = [spectra.spiked_measure(model, d) for d in model.deltas]
    mp = spectra.mp_measure(model)

    def density(x: np.ndarray) -> np.ndarray:
        out = mw.omega0 * mp.bulk_density(x)
        for om, part in zip(mw.omegas, parts):
            out = out + om * part.bulk_density(x)
        return out

    atoms: list[spectra.Atom] = []
    if model.c > 1.0:
        zero = mw.omega0 * spectra.mp_zero_atom(model)
        zero += sum(om * spectra.spiked_zero_atom(model, d) for om, d in zip(mw.omegas, model.deltas))
        atoms.append(spectra.Atom(0.0, zero, "zero"))
    for j, (om, d) in enumerate(zip(mw.omegas, model.deltas), start=1):
        mass = spectra.spiked_outlier_mass(model, d)
        if mass > 0:
            atoms.append(spectra.Atom(spectra.outlier_location(model, d), om * mass, f"outlier_{j}"))
    a, b = spectra.mp_support(model)
    return spectra.SpectralMeasure(a, b, density, tuple(atoms), name="alpha")


# ---------------------------------------------------------------------------
# ν polynomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RnPolynomials:
    """ν_j(x) = κ_j(x⋆_j − x), ν = Πν_j, ν_{−j} = Π_{i≠j}ν_i, D = ω₀ν + Σω_jν_{−j}."""
    kappas: np.ndarray
    xstars: np.ndarray
    nu_j: tuple[Polynomial, ...]
    nu: Polynomial
    nu_minus: tuple[Polynomial, ...]
    denom: Polynomial

    def nu_minus_ext(self, i: int) -> Polynomial:
        """ν_{−0} ≡ ν, ν_{−i} для i ≥ 1"""
        return self.nu if i == 0 else self.nu_minus[i - 1]


def rn_polynomials(model: SpikedModel) -> RnPolynomials:
    s0 = model.sigma0_sq
    deltas = model.deltas
    kappas = deltas / (model.c * s0 * (deltas + s0))
    xstars = np.array([spectra.outlier_location(model, d) for d in deltas])
    nu_j = tuple(Polynomial([k * xs, -k]) for k, xs in zip(kappas, xstars))
    one = Polynomial([1.0])
    nu = one
    for p in nu_j:
        nu = nu * p
    nu_minus = []
    for j in range(model.s):
        prod = one
        for i, p in enumerate(nu_j):
            if i != j:
                prod = prod * p
        nu_minus.append(prod)
    mw = mixture_weights(model)
    denom = mw.omega0 * nu
    for om, p in zip(mw.omegas, nu_minus):
        denom = denom + om * p
    return RnPolynomials(kappas, xstars, nu_j, nu, tuple(nu_minus), denom)


def _mu_matrix(model: SpikedModel, x: np.ndarray) -> np.ndarray:
    """Rows μ₀..μ_s at points x (assumed in S_c⁺)."""
    mw = mixture_weights(model)
    nus = np.array([spectra.rn_derivative(model, d, x) for d in model.deltas]).reshape(model.s, x.size)
    # ν_{−j} как произведение остальных, без деления (ν_j(x⋆_j) = 0)
    nu_minus = np.ones((model.s, x.size))
    for j in range(model.s):
        for i in range(model.s):
            if i != j:
                nu_minus[j] *= nus[i]
    nu = np.prod(nus, axis=0) if model.s else np.ones(x.size)
    denom = mw.omega0 * nu + (np.asarray(mw.omegas)[:, None] * nu_minus).sum(axis=0)
    return np.vstack([nu[None, :], nu_minus]) / denom


def _snap(model: SpikedModel, x: np.ndarray) -> np.ndarray:
    """Проверка x ∈ S_c⁺ = [a, b] ∪ {0} ∪ {x⋆_j}; близкие к x⋆_j значения прижимаются к атому."""
    a, b = spectra.mp_support(model)
    x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    ok = (x >= a * (1 - 1e-12)) & (x <= b * (1 + 1e-12)) | (x == 0.0)
    for d in model.deltas:
        if spectra.is_supercritical(model, d):
            xs = spectra.outlier_location(model, d)
            near = np.abs(x - xs) <= _SNAP_RTOL * xs
            x[near] = xs
            ok |= near
    if not np.all(ok):
        raise DomainError(f"x={x[~ok][0]:g} is outside the limiting support S_c+")
    return x


def mu_j(model: SpikedModel, j: int, x: float | np.ndarray) -> np.ndarray:
    """μ₀ = dF_MP/dF_α, μ_j = dF_δj/dF_α"""
    if not 0 <= j <= model.s:
        raise DomainError(f"index j must be in 0..{model.s}, got {j}")
    return _mu_matrix(model, _snap(model, x))[j]


def weight_w(model: SpikedModel, x: float | np.ndarray) -> np.ndarray:
    """w(x) = σ₀²r²x + cσ₀²σ_ε²μ₀(x)"""
    x = _snap(model, x)
    mu0 = _mu_matrix(model, x)[0]
    return model.sigma0_sq * model.r ** 2 * x + model.c * model.sigma0_sq * model.sigma_eps_sq * mu0


def target_g(model: SpikedModel, x: float | np.ndarray) -> np.ndarray:
    """g(x) = (σ₀²r² + Σδ_jα_j²μ_j(x)) / w(x)"""
    x = _snap(model, x)
    mu = _mu_matrix(model, x)
    num = model.sigma0_sq * model.r ** 2 + (model.deltas * model.alphas ** 2) @ mu[1:]
    return num / weight_w(model, x)


def basis_h(model: SpikedModel, j: int, x: float | np.ndarray) -> np.ndarray:
    """h_j(x) = μ_j(x) / w(x)"""
    x = _snap(model, x)
    return mu_j(model, j, x) / weight_w(model, x)


# ---------------------------------------------------------------------------
# Общая сетка
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralGrid:
    """Bulk nodes followed by atoms; per-point masses, μ, w, g and h tabulated."""
    model: SpikedModel
    x: np.ndarray = field(repr=False)
    n_bulk: int
    mp: np.ndarray = field(repr=False)
    spiked: np.ndarray = field(repr=False)      # (s, N)
    alpha: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)          # (s+1, N)
    w: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)           # (s+1, N)
    atom_labels: tuple[str, ...] = ()
    breakpoints: tuple[float, ...] = ()

    @property
    def positive(self) -> np.ndarray:
        """Маска x > 0: нулевой атом не входит в ⟨·,·⟩_w"""
        return self.x > 0.0

    @property
    def inner_weights(self) -> np.ndarray:
        return np.where(self.positive, self.x * self.w * self.alpha, 0.0)

    @property
    def bulk(self) -> np.ndarray:
        return self.x[: self.n_bulk]

    def masses(self, measure: str | int) -> np.ndarray:
        """'mp', 'alpha' или индекс спайка j ≥ 1"""
        if measure == "mp":
            return self.mp
        if measure == "alpha":
            return self.alpha
        if isinstance(measure, (int, np.integer)) and 1 <= measure <= self.model.s:
            return self.spiked[measure - 1]
        raise DomainError(f"unknown measure {measure!r}")

    def values(self, phi: Callable[[np.ndarray], np.ndarray] | np.ndarray) -> np.ndarray:
        vals = phi(self.x) if callable(phi) else np.asarray(phi, dtype=float)
        if vals.shape != self.x.shape:
            raise DomainError(f"tabulated values must have shape {self.x.shape}, got {vals.shape}")
        return vals


@lru_cache(maxsize=64)
def _build_grid(model: SpikedModel, n_nodes: int, breakpoints: tuple[float, ...]) -> SpectralGrid:
    rule = spectra.make_quadrature(model, n_nodes, breakpoints)
    mw = mixture_weights(model)
    deltas = model.deltas

    points = [rule.nodes]
    labels: list[str] = []
    mp_mass = [rule.mp_weights]
    spiked_mass = [[rule.mp_weights / spectra.rn_derivative(model, d, rule.nodes)] for d in deltas]

    if model.c > 1.0:
        points.append(np.array([0.0]))
        labels.append("zero")
        mp_mass.append(np.array([spectra.mp_zero_atom(model)]))
        for j, d in enumerate(deltas):
            spiked_mass[j].append(np.array([spectra.spiked_zero_atom(model, d)]))
    for k, dk in enumerate(deltas):
        if not spectra.is_supercritical(model, dk):
            continue
        points.append(np.array([spectra.outlier_location(model, dk)]))
        labels.append(f"outlier_{k + 1}")
        mp_mass.append(np.array([0.0]))
        for j, d in enumerate(deltas):
            spiked_mass[j].append(np.array([spectra.spiked_outlier_mass(model, d) if j == k else 0.0]))

    x = np.concatenate(points)
    mp = np.concatenate(mp_mass)
    spiked = np.array([np.concatenate(sm) for sm in spiked_mass]).reshape(model.s, x.size)
    alpha = mw.omega0 * mp + (np.asarray(mw.omegas)[:, None] * spiked).sum(axis=0)

    mu = _mu_matrix(model, x)
    s0 = model.sigma0_sq
    w = s0 * model.r ** 2 * x + model.c * s0 * model.sigma_eps_sq * mu[0]
    safe_w = np.where(w > 0, w, 1.0)
    num = s0 * model.r ** 2 + (deltas * model.alphas ** 2) @ mu[1:]
    # в нуле значения g, h не участвуют ни в одном интеграле
    g = np.where(w > 0, num / safe_w, 0.0)
    h = np.where(w > 0, mu / safe_w, 0.0)
    logger.debug("spectral grid: %d bulk nodes, atoms=%s", rule.n_nodes, labels)
    return SpectralGrid(model, x, rule.n_nodes, mp, spiked, alpha, mu, w, g, h, tuple(labels), breakpoints)


def spectral_grid(model: SpikedModel, n_nodes: int | None = None, breakpoints: Sequence[float] = ()) -> SpectralGrid:
    """Cached grid per (model, n_nodes, breakpoints); SPECTRAL_DISTILL_NODES sets the default size."""
    bp = tuple(sorted(float(b) for b in breakpoints))
    return _build_grid(model, int(n_nodes or settings.NODES), bp)


def as_grid(source: SpikedModel | SpectralGrid) -> SpectralGrid:
    return source if isinstance(source, SpectralGrid) else spectral_grid(source)


def integrate(source: SpikedModel | SpectralGrid, phi, measure: str | int = "alpha") -> float:
    """∫φ dμ for μ ∈ {'mp', 'alpha', j}"""
    grid = as_grid(source)
    vals = grid.values(phi)
    m = grid.masses(measure)
    used = m != 0.0
    out = float(np.sum(vals[used] * m[used]))
    if not np.isfinite(out):
        raise NumericalError(f"non-finite integral against {measure!r}")
    return out


def inner_w(source: SpikedModel | SpectralGrid, phi, psi) -> float:
    """⟨φ,ψ⟩_w = ∫φψ·x·w dF_α (zero atom skipped)"""
    grid = as_grid(source)
    pos = grid.positive
    a = grid.values(phi)[pos]
    b = grid.values(psi)[pos]
    out = float(np.sum(a * b * grid.inner_weights[pos]))
    if not np.isfinite(out):
        raise NumericalError("non-finite integrand in <phi, psi>_w")
    return out


@dataclass(frozen=True)
class GramSystem:
    """H_ij = ⟨h_i, h_j⟩_w and γ = (σ₀²r²ω₀, (δ_j+σ₀²)α_j²)"""
    H: np.ndarray
    gamma: np.ndarray


def gram_system(source: SpikedModel | SpectralGrid) -> GramSystem:
    grid = as_grid(source)
    model = grid.model
    pos = grid.positive
    weighted = grid.h[:, pos] * grid.inner_weights[pos]
    H = weighted @ grid.h[:, pos].T
    H = 0.5 * (H + H.T)
    if not np.all(np.isfinite(H)):
        raise NumericalError("Gram matrix has non-finite entries")
    mw = mixture_weights(model)
    gamma = np.concatenate([[model.sigma0_sq * model.r ** 2 * mw.omega0],
                            (model.deltas + model.sigma0_sq) * model.alphas ** 2])
    return GramSystem(H, gamma)
