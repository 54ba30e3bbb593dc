from __future__ import annotations

import numpy as np
import pytest

from app.domain.model import Spike, SpikedModel


def make_model(c: float = 2.0, spikes: tuple[tuple[float, float], ...] = (), r: float = 2.0,
               sigma_eps_sq: float = 1.0, sigma0_sq: float = 1.0) -> SpikedModel:
    return SpikedModel(sigma0_sq=sigma0_sq, c=c, r=r, sigma_eps_sq=sigma_eps_sq,
                       spikes=tuple(Spike(delta=d, alpha=a) for d, a in spikes))


def random_model(rng: np.random.Generator, s: int) -> SpikedModel:
    """Spikes spaced by a factor >= 1.6, clear of the BBP threshold and of coinciding outliers; c away from 1."""
    c = float(rng.uniform(0.3, 0.8) if rng.random() < 0.5 else rng.uniform(1.5, 3.0))
    sigma0_sq = float(rng.uniform(0.5, 2.0))
    threshold = sigma0_sq * np.sqrt(c)
    while True:
        deltas = rng.uniform(0.3, 1.5) * np.cumprod(rng.uniform(1.6, 3.0, s))
        # δ_iδ_j = cσ₀⁴ (i = j included) merges outlier locations
        products = np.outer(deltas, deltas) / threshold ** 2
        if np.all(np.abs(products - 1.0) > 0.4):
            break
    r = float(rng.uniform(1.0, 5.0))
    shares = rng.dirichlet(np.ones(s)) * rng.uniform(0.4, 0.9)
    alphas = r * np.sqrt(shares) * rng.choice([-1.0, 1.0], s)
    return make_model(c=c, spikes=tuple(zip(deltas[::-1].tolist(), alphas.tolist())), r=r,
                      sigma_eps_sq=float(rng.uniform(0.25, 4.0)), sigma0_sq=sigma0_sq)


@pytest.fixture
def isotropic() -> SpikedModel:
    return make_model(c=2.0, r=2.0, sigma_eps_sq=1.0)


@pytest.fixture
def one_spike() -> SpikedModel:
    """‖β₀‖ = 2, β₀ᵀv = 1.7, δ = 7, σ_ε = 2, σ₀ = 1, c = 2"""
    return make_model(c=2.0, spikes=((7.0, 1.7),), r=2.0, sigma_eps_sq=4.0)


@pytest.fixture
def two_spikes() -> SpikedModel:
    """r = 5, α = (3, 2.5): ω₀ = 0.39"""
    return make_model(c=2.0, spikes=((6.0, 3.0), (2.5, 2.5)), r=5.0, sigma_eps_sq=1.0)


@pytest.fixture
def three_spikes() -> SpikedModel:
    return make_model(c=0.5, spikes=((8.0, 1.0), (3.0, 0.8), (0.3, 0.5)), r=2.0, sigma_eps_sq=0.5)
