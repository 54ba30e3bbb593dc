# domain/model.py
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, field_validator, model_validator

# относительный допуск для проверок "≠" в условиях на спайки
_DEGENERACY_RTOL = 1e-9


class Spike(BaseModel):
    """Одна спайковая компонента: сила delta и проекция alpha = β₀ᵀv."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    delta: PositiveFloat
    alpha: float

    @field_validator("alpha")
    @classmethod
    def _alpha_nonzero(cls, v: float) -> float:
        if v == 0.0 or not np.isfinite(v):
            raise ValueError("alpha must be finite and nonzero (beta0 must have a component along every spike)")
        return v


class SpikedModel(BaseModel):
    """Problem instance: Σ = σ₀²I + Σ δ_j v_j v_jᵀ, p/n → c, ‖β₀‖ → r, β₀ᵀv_j → α_j, noise σ_ε²."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma0_sq: PositiveFloat = 1.0
    c: PositiveFloat
    spikes: tuple[Spike, ...] = ()
    r: PositiveFloat
    sigma_eps_sq: NonNegativeFloat

    @model_validator(mode="after")
    def _check_spikes(self) -> "SpikedModel":
        deltas = [sp.delta for sp in self.spikes]
        if len(set(deltas)) != len(deltas):
            raise ValueError("spike strengths delta_j must be pairwise distinct")
        crit = self.c * self.sigma0_sq ** 2
        for i, di in enumerate(deltas):
            for dj in deltas[i:]:
                if abs(di * dj - crit) <= _DEGENERACY_RTOL * crit:
                    raise ValueError(
                        f"delta_i*delta_j = c*sigma0^4 is excluded (delta={di:g}, {dj:g}, c*sigma0^4={crit:g})"
                    )
        alpha_sq = sum(sp.alpha ** 2 for sp in self.spikes)
        if alpha_sq >= self.r ** 2:
            raise ValueError(f"sum of alpha_j^2 ({alpha_sq:g}) must be strictly below r^2 ({self.r ** 2:g})")
        return self

    @property
    def s(self) -> int:
        return len(self.spikes)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([sp.delta for sp in self.spikes], dtype=float)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([sp.alpha for sp in self.spikes], dtype=float)

    @property
    def signal_power(self) -> float:
        """σ₀²r² + Σδ_jα_j²: риск нулевого правила"""
        return float(self.sigma0_sq * self.r ** 2 + np.sum(self.deltas * self.alphas ** 2))

    def replace(self, **changes: Any) -> "SpikedModel":
        """Копия с изменениями, с повторной валидацией"""
        data = self.model_dump()
        data.update(changes)
        return SpikedModel.model_validate(data)

    def with_delta(self, index: int, delta: float) -> "SpikedModel":
        spikes = [sp.model_dump() for sp in self.spikes]
        spikes[index]["delta"] = delta
        return self.replace(spikes=spikes)

    def to_dict(self) -> dict:
        return self.model_dump()


@dataclass(frozen=True)
class MixtureWeights:
    omega0: float
    omegas: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.array((self.omega0, *self.omegas))


@dataclass(frozen=True)
class SDParams:
    """k-step self-distillation: penalties λ₀..λ_k, weights ξ₁..ξ_k."""
    lambdas: tuple[float, ...]
    xis: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "xis", tuple(float(v) for v in self.xis))
        if not self.lambdas:
            raise ValueError("SDParams needs at least lambda_0")
        if len(self.xis) != len(self.lambdas) - 1:
            raise ValueError(f"expected {len(self.lambdas) - 1} xi values, got {len(self.xis)}")

    @property
    def k(self) -> int:
        return len(self.xis)

    def to_dict(self) -> dict:
        return {"k": self.k, "lambdas": list(self.lambdas), "xis": list(self.xis)}


@dataclass
class RiskBreakdown:
    """Предельный риск: смещение (балк + спайки) и дисперсия"""
    bias_bulk: float
    bias_spikes: tuple[float, ...]
    variance: float
    total: float = field(init=False)

    def __post_init__(self):
        """total всегда согласован с компонентами"""
        self.bias_spikes = tuple(float(v) for v in self.bias_spikes)
        self.total = self.bias_bulk + sum(self.bias_spikes) + self.variance

    def to_dict(self) -> dict:
        return {
            "bias_bulk": self.bias_bulk,
            "bias_spikes": list(self.bias_spikes),
            "variance": self.variance,
            "total": self.total,
        }
