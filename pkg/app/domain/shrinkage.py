# domain/shrinkage.py
"""Spectral shrinkage rules f, evaluated with the pseudoinverse convention (a pole contributes 0)."""
import logging
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from numpy.polynomial import Polynomial

from app.core.errors import DomainError, NumericalError
from app.domain.model import SDParams, SpikedModel
from app.domain import spectra

logger = logging.getLogger(__name__)

# относительная близость к атому x⋆, при которой точка считается атомом
_ATOM_RTOL = 1e-12


def _pinv(v: np.ndarray) -> np.ndarray:
    """1/v с соглашением 1/0 := 0"""
    v = np.asarray(v, dtype=float)
    safe = np.where(v == 0.0, 1.0, v)
    return np.where(v == 0.0, 0.0, 1.0 / safe)


def smoothstep(u: np.ndarray) -> np.ndarray:
    """C¹ cubic ramp: 0 for u ≤ 0, 1 for u ≥ 1"""
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def in_support(model: SpikedModel, y: float) -> bool:
    """y ∈ S_c⁺: bulk, zero atom (c > 1) or a supercritical outlier"""
    a, b = spectra.mp_support(model)
    if a <= y <= b:
        return True
    if y == 0.0 and model.c > 1.0:
        return True
    for d in model.deltas:
        if spectra.is_supercritical(model, d):
            xs = spectra.outlier_location(model, d)
            if abs(y - xs) <= _ATOM_RTOL * xs:
                return True
    return False


def in_closed_support(model: SpikedModel, y: float, rtol: float = _ATOM_RTOL) -> bool:
    """y ∈ S_c ∪ {0} ∪ {x⋆_j} (all spikes, sub- and supercritical)"""
    a, b = spectra.mp_support(model)
    if a <= y <= b or y == 0.0:
        return True
    return any(abs(y - spectra.outlier_location(model, d)) <= rtol * spectra.outlier_location(model, d)
               for d in model.deltas)


@dataclass(frozen=True)
class ShrinkageFn:
    """Base of all rule variants; subclasses implement `_evaluate`."""
    kind: ClassVar[str] = "abstract"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            out = self._evaluate(x)
        return out

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def breakpoints(self, model: SpikedModel) -> tuple[float, ...]:
        """Kinks of f inside the bulk (the grid splits there)"""
        return ()

    def poles(self) -> tuple[float, ...]:
        """Real poles, checked against S_c⁺"""
        return ()

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params()}


@dataclass(frozen=True)
class Ridge(ShrinkageFn):
    kind: ClassVar[str] = "ridge"
    lam: float

    def _evaluate(self, x):
        return _pinv(x + self.lam)

    def poles(self):
        return (-self.lam,)

    def params(self):
        return {"lam": self.lam}


@dataclass(frozen=True)
class Rational(ShrinkageFn):
    """num/den, ascending coefficients"""
    kind: ClassVar[str] = "rational"
    num_coeffs: tuple[float, ...]
    den_coeffs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "num_coeffs", tuple(float(v) for v in np.atleast_1d(self.num_coeffs)))
        object.__setattr__(self, "den_coeffs", tuple(float(v) for v in np.atleast_1d(self.den_coeffs)))
        if not any(self.den_coeffs):
            raise DomainError("denominator polynomial is identically zero")

    @property
    def numerator(self) -> Polynomial:
        return Polynomial(self.num_coeffs)

    @property
    def denominator(self) -> Polynomial:
        return Polynomial(self.den_coeffs)

    def _evaluate(self, x):
        den = self.denominator(x)
        hit = den == 0.0
        if np.any(hit):
            logger.warning("rational rule evaluated at %d pole(s); value set to 0", int(hit.sum()))
        return self.numerator(x) * _pinv(den)

    def poles(self):
        roots = self.denominator.roots()
        return tuple(float(r.real) for r in roots if abs(r.imag) <= 1e-12 * max(1.0, abs(r)))

    def params(self):
        return {"num": list(self.num_coeffs), "den": list(self.den_coeffs)}


@dataclass(frozen=True)
class SDChain(ShrinkageFn):
    """k-step self-distillation as a closed-form sum over stages.

    f_k(x) = Σ_j (1−ξ_j)(Π_{t>j} ξ_t)(Π_{t>j} x/(x+λ_t)) / (x+λ_j), ξ₀ = 0.
    """
    kind: ClassVar[str] = "sd"
    sd: SDParams

    def _evaluate(self, x):
        lams = np.asarray(self.sd.lambdas)
        xis = np.concatenate([[0.0], np.asarray(self.sd.xis)])
        k = self.sd.k
        inv = [_pinv(x + lam) for lam in lams]
        total = np.zeros_like(x)
        # хвостовые произведения Π_{t>j} ξ_t·x/(x+λ_t), от последней стадии к первой
        tail = np.ones_like(x)
        for j in range(k, -1, -1):
            total = total + (1.0 - xis[j]) * tail * inv[j]
            tail = tail * xis[j] * x * inv[j]
        return total

    def poles(self):
        return tuple(-lam for lam in self.sd.lambdas)

    def params(self):
        return self.sd.to_dict()


def sd_recursion(params: SDParams, x) -> np.ndarray:
    """Stage recursion f_t = pinv(x+λ_t)·[(1−ξ_t) + ξ_t·x·f_{t−1}], f₀ = pinv(x+λ₀)."""
    x = np.asarray(x, dtype=float)
    f = _pinv(x + params.lambdas[0])
    for lam, xi in zip(params.lambdas[1:], params.xis):
        f = _pinv(x + lam) * ((1.0 - xi) + xi * x * f)
    return f


@dataclass(frozen=True)
class GDPoly(ShrinkageFn):
    """T steps of gradient descent from zero: f_T(x) = ηΣ_{k<T}(1−ηx)^k"""
    kind: ClassVar[str] = "gd"
    eta: float
    steps: int

    def __post_init__(self):
        if self.eta <= 0 or self.steps < 1:
            raise DomainError(f"GD needs eta > 0 and steps >= 1, got eta={self.eta}, steps={self.steps}")

    def _evaluate(self, x):
        q = 1.0 - self.eta * x
        safe = np.where(x == 0.0, 1.0, x)
        out = np.where(x == 0.0, self.eta * self.steps, (1.0 - q ** self.steps) / safe)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"GD rule overflows (eta={self.eta}, steps={self.steps})")
        return out

    def params(self):
        return {"eta": self.eta, "steps": self.steps}


@dataclass(frozen=True)
class _RampInverse(ShrinkageFn):
    """ramp(x)/x: 0 below the ramp, 1/x above it, C¹ smoothstep over [start, start + width]."""
    threshold: float
    ramp_width: float

    def __post_init__(self):
        if self.ramp_width <= 0:
            raise DomainError(f"ramp_width must be positive, got {self.ramp_width}")

    @property
    def ramp_start(self) -> float:
        return self.threshold - 0.5 * self.ramp_width

    @property
    def ramp_end(self) -> float:
        return self.threshold + 0.5 * self.ramp_width

    def _evaluate(self, x):
        ramp = smoothstep((x - self.ramp_start) / self.ramp_width)
        safe = np.where(x > 0.0, x, 1.0)
        return np.where(x > 0.0, ramp / safe, 0.0)

    def breakpoints(self, model):
        a, b = spectra.mp_support(model)
        return tuple(p for p in (self.ramp_start, self.ramp_end) if a < p < b)

    def params(self):
        return {"threshold": self.threshold, "ramp_width": self.ramp_width}


@dataclass(frozen=True)
class PCRSurrogate(_RampInverse):
    """Deterministic-threshold PCR limit: keep spectrum above the threshold, invert it."""
    kind: ClassVar[str] = "pcr"


@dataclass(frozen=True)
class MinNormSurrogate(_RampInverse):
    """Min-norm interpolator limit: 0 near the zero atom, 1/x on the bulk and outliers."""
    kind: ClassVar[str] = "min_norm"

    @property
    def cut(self) -> float:
        return self.threshold


@dataclass(frozen=True)
class Tabulated(ShrinkageFn):
    """Values given on a fixed set of points (a spectral grid); other points are rejected."""
    kind: ClassVar[str] = "tabulated"
    points: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if pts.shape != vals.shape:
            raise DomainError("points and values must have the same shape")
        order = np.argsort(pts)
        object.__setattr__(self, "points", pts[order])
        object.__setattr__(self, "values", vals[order])

    def __hash__(self):
        return hash((self.points.tobytes(), self.values.tobytes()))

    def __eq__(self, other):
        return (isinstance(other, Tabulated) and np.array_equal(self.points, other.points)
                and np.array_equal(self.values, other.values))

    def _evaluate(self, x):
        idx = np.clip(np.searchsorted(self.points, x), 0, self.points.size - 1)
        left = np.clip(idx - 1, 0, self.points.size - 1)
        pick = np.where(np.abs(self.points[left] - x) < np.abs(self.points[idx] - x), left, idx)
        hit = np.abs(self.points[pick] - x) <= 1e-14 * np.maximum(1.0, np.abs(x))
        if not np.all(hit):
            raise DomainError("tabulated rule evaluated off its table")
        return self.values[pick]

    def params(self):
        return {"n_points": int(self.points.size)}


def zero_rule() -> Rational:
    return Rational((0.0,), (1.0,))


def eval_shrinkage(f: ShrinkageFn, x) -> np.ndarray:
    """f(x) for x ≥ 0"""
    if np.any(np.asarray(x) < 0):
        raise DomainError("shrinkage rules are evaluated on x >= 0 only")
    return f(x)


def check_admissible(model: SpikedModel, f: ShrinkageFn) -> None:
    """No pole of f may sit on S_c⁺ (bulk, zero atom, outliers)."""
    for pole in f.poles():
        if in_support(model, pole):
            raise DomainError(f"{f.kind} rule has a pole at {pole:.6g} inside the limiting support")


def sd_chain_fn(params: SDParams, model: SpikedModel | None = None) -> SDChain:
    f = SDChain(params)
    if model is not None:
        check_admissible(model, f)
    return f


def make_ridge(lam: float, model: SpikedModel | None = None) -> Ridge:
    f = Ridge(float(lam))
    if model is not None:
        check_admissible(model, f)
    return f


def make_rational(num, den, model: SpikedModel | None = None) -> Rational:
    f = Rational(tuple(num), tuple(den))
    if model is not None:
        check_admissible(model, f)
    return f
