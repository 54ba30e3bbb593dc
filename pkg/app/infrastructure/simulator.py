# infrastructure/simulator.py
"""Finite-sample spiked-covariance data, the estimators fitted on it and the replicate harness."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Literal, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.errors import ArgumentError, NumericalError
from app.core.settings import settings
from app.domain.model import SDParams, SpikedModel
from app.domain.shrinkage import ShrinkageFn

logger = logging.getLogger(__name__)

EntryDist = Literal["gaussian", "rademacher", "student_t"]


class Role(IntEnum):
    """Ключ независимого потока случайных чисел внутри реплики"""
    DIRECTIONS = 0
    BETA = 1
    DESIGN = 2
    NOISE = 3
    TEST = 4


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    model: SpikedModel
    n: int = Field(gt=0)
    p: int = Field(gt=0)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    entry_dist: EntryDist = "gaussian"
    df: float = Field(default=10.0, gt=8.0)     # только для student_t
    n_replicates: int = Field(default=1, gt=0)
    spike_directions: tuple[tuple[float, ...], ...] | None = None   # p строк по s столбцов

    @model_validator(mode="after")
    def _check_sizes(self) -> "SimConfig":
        if self.p <= self.model.s:
            raise ValueError(f"p={self.p} must exceed the number of spikes {self.model.s}")
        if abs(self.p / self.n - self.model.c) > 0.01:
            logger.warning("p/n = %.4g differs from model c = %.4g", self.p / self.n, self.model.c)
        if self.spike_directions is not None:
            V = np.asarray(self.spike_directions, dtype=float)
            if V.shape != (self.p, self.model.s):
                raise ValueError(f"spike_directions must be {self.p}x{self.model.s}, got {V.shape}")
            if not np.allclose(V.T @ V, np.eye(self.model.s), atol=1e-10):
                raise ValueError("spike_directions must have orthonormal columns")
        return self


@dataclass(frozen=True)
class Problem:
    """Общие для всех клиентов реплики β₀ и направления спайков V (p×s)."""
    beta0: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SimData:
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    beta0: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class FittedEstimator:
    coefficients: np.ndarray = field(repr=False)
    tag: str
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.coefficients)):
            raise NumericalError(f"{self.tag} estimator has non-finite coefficients")


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------

def stream(seed: int, replicate: int, role: Role, client: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, replicate, role, client)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(replicate, int(role), client))
    return np.random.Generator(np.random.Philox(ss))


def _entries(cfg: SimConfig, rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    match cfg.entry_dist:
        case "gaussian":
            return rng.standard_normal(shape)
        case "rademacher":
            return 2.0 * rng.integers(0, 2, size=shape) - 1.0
        case "student_t":
            return rng.standard_t(cfg.df, size=shape) * np.sqrt((cfg.df - 2.0) / cfg.df)
    raise ArgumentError(f"unknown entry distribution {cfg.entry_dist!r}")


def gen_problem(cfg: SimConfig, replicate: int = 0) -> Problem:
    """β₀ with ‖β₀‖ = r and V_jᵀβ₀ = α_j; the residual direction is uniform on the orthocomplement."""
    model = cfg.model
    s, p = model.s, cfg.p
    if cfg.spike_directions is not None:
        V = np.asarray(cfg.spike_directions, dtype=float)
    elif s:
        G = stream(cfg.seed, replicate, Role.DIRECTIONS).standard_normal((p, s))
        V, _ = np.linalg.qr(G)
    else:
        V = np.zeros((p, 0))
    u = stream(cfg.seed, replicate, Role.BETA).standard_normal(p)
    u -= V @ (V.T @ u)
    u /= np.linalg.norm(u)
    rest = np.sqrt(model.r ** 2 - float(np.sum(model.alphas ** 2)))
    beta0 = V @ model.alphas + rest * u
    return Problem(beta0=beta0, V=V)


def gen_data(cfg: SimConfig, replicate: int = 0, client: int = 0, problem: Problem | None = None) -> SimData:
    """X = ZΣ^{1/2} with Σ^{1/2} = σ₀I + Σ_j(√(δ_j+σ₀²) − σ₀)v_jv_jᵀ, y = Xβ₀ + ε."""
    model = cfg.model
    problem = problem or gen_problem(cfg, replicate)
    V = problem.V
    Z = _entries(cfg, stream(cfg.seed, replicate, Role.DESIGN, client), (cfg.n, cfg.p))
    s0 = np.sqrt(model.sigma0_sq)
    lift = np.sqrt(model.deltas + model.sigma0_sq) - s0
    X = s0 * Z + ((Z @ V) * lift) @ V.T
    eps = np.sqrt(model.sigma_eps_sq) * stream(cfg.seed, replicate, Role.NOISE, client).standard_normal(cfg.n)
    y = X @ problem.beta0 + eps
    return SimData(X=X, y=y, beta0=problem.beta0, V=V)


# ---------------------------------------------------------------------------
# Spectrum and estimators
# ---------------------------------------------------------------------------

def sample_spectrum(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs (d, W) of Σ̂ = XᵀX/n; for p > n only the nonzero part, lifted from the n×n Gram."""
    n, p = X.shape
    try:
        if p <= n:
            d, W = np.linalg.eigh(X.T @ X / n)
            return np.clip(d, 0.0, None), W
        d, U = np.linalg.eigh(X @ X.T / n)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"eigendecomposition of the sample covariance failed: {e}") from e
    keep = d > settings.PINV_RTOL * max(d.max(), 0.0)
    d, U = d[keep], U[:, keep]
    W = X.T @ U / np.sqrt(n * d)
    return d, W


def _coords(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d, W = sample_spectrum(X)
    z = W.T @ (X.T @ y) / X.shape[0]
    return d, W, z


def fit_shrinkage(X: np.ndarray, y: np.ndarray, f: ShrinkageFn) -> FittedEstimator:
    """β̂_f = W f(D) Wᵀ Xᵀy/n"""
    d, W, z = _coords(X, y)
    fd = f(d)
    if not np.all(np.isfinite(fd)):
        raise NumericalError(f"{f.kind} rule is not finite at the sample eigenvalues")
    return FittedEstimator(W @ (fd * z), f.kind, f.params())


def _pinv_band(v: np.ndarray, scale: float) -> np.ndarray:
    tiny = np.abs(v) < settings.PINV_RTOL * scale
    return np.where(tiny, 0.0, 1.0 / np.where(tiny, 1.0, v))


def fit_sd(X: np.ndarray, y: np.ndarray, params: SDParams) -> FittedEstimator:
    """β̂⁽ᵗ⁾ = (Σ̂ + λ_tI)†[(1−ξ_t)Xᵀy/n + ξ_tΣ̂β̂⁽ᵗ⁻¹⁾], run in the eigenbasis of Σ̂."""
    d, W, z = _coords(X, y)
    scale = float(d.max()) if d.size else 1.0
    b = _pinv_band(d + params.lambdas[0], scale) * z
    for lam, xi in zip(params.lambdas[1:], params.xis):
        b = _pinv_band(d + lam, scale) * ((1.0 - xi) * z + xi * d * b)
    return FittedEstimator(W @ b, "sd", params.to_dict())


def fit_pcr(X: np.ndarray, y: np.ndarray, m: int) -> FittedEstimator:
    """β̂ = W_m S_m⁻¹ U_mᵀ y over the top m singular triplets."""
    n, p = X.shape
    if not 1 <= m <= min(n, p):
        raise ArgumentError(f"PCR needs 1 <= m <= min(n, p) = {min(n, p)}, got {m}")
    U, S, Vt = np.linalg.svd(X, full_matrices=False)
    coef = Vt[:m].T @ ((U[:, :m].T @ y) / S[:m])
    return FittedEstimator(coef, "pcr", {"m": m})


def fit_minnorm(X: np.ndarray, y: np.ndarray) -> FittedEstimator:
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return FittedEstimator(coef, "min_norm")


def fit_gd(X: np.ndarray, y: np.ndarray, eta: float, steps: int) -> FittedEstimator:
    """T gradient steps on ‖y − Xβ‖²/(2n) from β = 0."""
    if eta <= 0 or steps < 1:
        raise ArgumentError(f"GD needs eta > 0 and steps >= 1, got eta={eta}, steps={steps}")
    d, W, z = _coords(X, y)
    b = np.zeros_like(z)
    for _ in range(steps):
        b = b + eta * (z - d * b)
    return FittedEstimator(W @ b, "gd", {"eta": eta, "steps": steps})


def fit_aggregated(clients: Sequence[SimData], rules: Sequence[ShrinkageFn], rhos: Sequence[float]) -> FittedEstimator:
    """Σ_ℓ ρ_ℓ β̂_{f_ℓ} over the clients' own samples."""
    if not len(clients) == len(rules) == len(rhos):
        raise ArgumentError(f"got {len(clients)} clients, {len(rules)} rules and {len(rhos)} weights")
    p = clients[0].p
    if any(c.p != p for c in clients):
        raise ArgumentError("all clients must share the dimension p")
    coef = np.zeros(p)
    for data, f, rho in zip(clients, rules, rhos):
        if rho:
            coef += rho * fit_shrinkage(data.X, data.y, f).coefficients
    return FittedEstimator(coef, "aggregated", {"K": len(clients), "rhos": [float(r) for r in rhos]})


def sigma_risk(beta_hat: np.ndarray, beta0: np.ndarray, model: SpikedModel, V: np.ndarray) -> float:
    """‖β̂ − β₀‖²_Σ = σ₀²‖d‖² + Σδ_j(v_jᵀd)²"""
    if beta_hat.shape != beta0.shape or V.shape[0] != beta0.size:
        raise ArgumentError("beta_hat, beta0 and V dimensions disagree")
    diff = beta_hat - beta0
    proj = V.T @ diff
    return float(model.sigma0_sq * diff @ diff + np.sum(model.deltas * proj ** 2))


def fresh_sample_risk(cfg: SimConfig, data: SimData, beta_hat: np.ndarray, n_test: int,
                      replicate: int = 0) -> float:
    """Mean of (x_newᵀ(β₀ − β̂))² over n_test fresh rows; estimates the Σ-risk."""
    model = cfg.model
    Z = _entries(cfg, stream(cfg.seed, replicate, Role.TEST), (n_test, cfg.p))
    s0 = np.sqrt(model.sigma0_sq)
    X = s0 * Z + ((Z @ data.V) * (np.sqrt(model.deltas + model.sigma0_sq) - s0)) @ data.V.T
    return float(np.mean((X @ (data.beta0 - beta_hat)) ** 2))


def apply_spectral(X: np.ndarray, f: ShrinkageFn, v: np.ndarray) -> np.ndarray:
    """f(Σ̂)v; the null space of Σ̂ is scaled by f(0)."""
    d, W = sample_spectrum(X)
    f0 = float(f(np.array([0.0]))[0])
    return W @ ((f(d) - f0) * (W.T @ v)) + f0 * v


def product_form_empirical(cfg_l: SimConfig, cfg_k: SimConfig, phi: ShrinkageFn, psi: ShrinkageFn,
                           replicate: int = 0) -> float:
    """β₀ᵀφ(Σ̂_ℓ)ψ(Σ̂_k)β₀/‖β₀‖² for two independent samples sharing β₀ and V."""
    if cfg_l.p != cfg_k.p:
        raise ArgumentError(f"both samples must share p, got {cfg_l.p} and {cfg_k.p}")
    problem = gen_problem(cfg_l, replicate)
    X_l = gen_data(cfg_l, replicate, client=0, problem=problem).X
    X_k = gen_data(cfg_k.model_copy(update={"seed": cfg_l.seed}), replicate, client=1, problem=problem).X
    b = problem.beta0
    return float(apply_spectral(X_l, phi, b) @ apply_spectral(X_k, psi, b) / (b @ b))


# ---------------------------------------------------------------------------
# Replicate harness
# ---------------------------------------------------------------------------

Estimator = Callable[[SimData], np.ndarray]


@dataclass(frozen=True)
class HarnessReport:
    estimator: str
    mean: float
    stderr: float
    target: float
    n_replicates: int
    risks: np.ndarray = field(repr=False)

    @property
    def rel_gap(self) -> float:
        return abs(self.mean - self.target) / abs(self.target) if self.target else float("nan")

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "empirical_mean": self.mean,
            "stderr": self.stderr,
            "limiting": self.target,
            "rel_gap": self.rel_gap,
            "n_replicates": self.n_replicates,
        }


def run_replicates(cfg: SimConfig, estimators: Mapping[str, Estimator], threads: int | None = None) -> dict[str, np.ndarray]:
    """Σ-risk of every estimator on each replicate; one dataset per replicate shared by all estimators."""
    def one(replicate: int) -> list[float]:
        data = gen_data(cfg, replicate)
        return [sigma_risk(fit(data), data.beta0, cfg.model, data.V) for fit in estimators.values()]

    workers = threads or settings.THREADS
    logger.info("running %d replicates of n=%d p=%d on %d thread(s)", cfg.n_replicates, cfg.n, cfg.p, workers)
    if workers == 1:
        rows = [one(i) for i in range(cfg.n_replicates)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # map сохраняет порядок реплик
            rows = list(pool.map(one, range(cfg.n_replicates)))
    table = np.array(rows, dtype=float).reshape(cfg.n_replicates, len(estimators))
    return {name: table[:, i] for i, name in enumerate(estimators)}


def summarize(name: str, risks: np.ndarray, target: float) -> HarnessReport:
    k = risks.size
    stderr = float(np.std(risks, ddof=1) / np.sqrt(k)) if k > 1 else float("nan")
    return HarnessReport(name, float(np.mean(risks)), stderr, float(target), k, risks)


def converge_harness(cfg: SimConfig, estimators: Mapping[str, Estimator], targets: Mapping[str, float],
                     threads: int | None = None) -> list[HarnessReport]:
    """Replicate-averaged Σ-risks against their limiting values."""
    missing = set(estimators) - set(targets)
    if missing:
        raise ArgumentError(f"no limiting target for {sorted(missing)}")
    risks = run_replicates(cfg, estimators, threads)
    reports = [summarize(name, risks[name], targets[name]) for name in estimators]
    for r in reports:
        logger.info("%s: empirical %.6g ± %.2g vs limiting %.6g (gap %.2f%%)",
                    r.estimator, r.mean, r.stderr, r.target, 100 * r.rel_gap)
    return reports
