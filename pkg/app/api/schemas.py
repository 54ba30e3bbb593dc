# api/schemas.py
"""JSON run configs: the model block plus one optional block per command."""
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from app.domain.model import SpikedModel


class _Block(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class GridSpec(_Block):
    """Одномерная сетка значений: явный список либо lo/hi/size"""
    values: tuple[float, ...] | None = None
    lo: float | None = None
    hi: float | None = None
    size: PositiveInt = 50
    scale: Literal["log", "linear"] = "log"

    @model_validator(mode="after")
    def _check(self) -> "GridSpec":
        if self.values is None and (self.lo is None or self.hi is None):
            raise ValueError("grid needs either values or both lo and hi")
        if self.values is None and self.scale == "log" and (self.lo <= 0 or self.hi <= 0):
            raise ValueError("log grid needs positive lo and hi")
        return self

    def points(self) -> np.ndarray:
        if self.values is not None:
            return np.asarray(self.values, dtype=float)
        if self.scale == "log":
            return np.logspace(np.log10(self.lo), np.log10(self.hi), self.size)
        return np.linspace(self.lo, self.hi, self.size)


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

class RidgeSpec(_Block):
    kind: Literal["ridge"] = "ridge"
    lam: float | None = None
    grid: GridSpec | None = None

    @model_validator(mode="after")
    def _one_of(self) -> "RidgeSpec":
        if (self.lam is None) == (self.grid is None):
            raise ValueError("ridge needs exactly one of lam or grid")
        return self


class _SDStages(_Block):
    lambdas: tuple[float, ...] = Field(min_length=1)
    xis: tuple[float, ...] = ()

    @model_validator(mode="after")
    def _stages(self) -> "_SDStages":
        if len(self.xis) != len(self.lambdas) - 1:
            raise ValueError(f"k-step SD needs k+1 lambdas and k xis, got {len(self.lambdas)} and {len(self.xis)}")
        return self


class SDSpec(_SDStages):
    kind: Literal["sd"] = "sd"


class GDSpec(_Block):
    kind: Literal["gd"] = "gd"
    eta: PositiveFloat
    steps: PositiveInt


class PCRSpec(_Block):
    """PCR limit by retained bulk fraction tau, or by retained outlier count m"""
    kind: Literal["pcr"] = "pcr"
    tau: float | None = None
    m: int | None = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _one_of(self) -> "PCRSpec":
        if (self.tau is None) == (self.m is None):
            raise ValueError("pcr needs exactly one of tau or m")
        return self


class MinNormSpec(_Block):
    kind: Literal["min_norm"] = "min_norm"


class RationalSpec(_Block):
    kind: Literal["rational"] = "rational"
    num: tuple[float, ...] = Field(min_length=1)
    den: tuple[float, ...] = Field(min_length=1)


class OptimalSpec(_Block):
    kind: Literal["optimal_pred", "optimal_est"]


RuleSpec = Annotated[
    Union[RidgeSpec, SDSpec, GDSpec, PCRSpec, MinNormSpec, RationalSpec, OptimalSpec],
    Field(discriminator="kind"),
]


# ---------------------------------------------------------------------------
# Estimators fitted on simulated data
# ---------------------------------------------------------------------------

class SimRidge(_Block):
    kind: Literal["ridge"] = "ridge"
    lam: PositiveFloat


class SimTunedRidge(_Block):
    """Ridge at the λ minimising the limiting prediction risk"""
    kind: Literal["tuned_ridge"] = "tuned_ridge"


class SimOptimalSD(_Block):
    kind: Literal["optimal_sd"] = "optimal_sd"
    ordering: Literal["outlier_first", "max_residual"] = "outlier_first"


class SimSD(_SDStages):
    kind: Literal["sd"] = "sd"


class SimPCR(_Block):
    """m retained components, or m = ⌊τp⌋"""
    kind: Literal["pcr"] = "pcr"
    m: PositiveInt | None = None
    tau: float | None = Field(default=None, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _one_of(self) -> "SimPCR":
        if (self.tau is None) == (self.m is None):
            raise ValueError("pcr needs exactly one of tau or m")
        return self


class SimMinNorm(_Block):
    kind: Literal["min_norm"] = "min_norm"


class SimGD(_Block):
    kind: Literal["gd"] = "gd"
    eta: PositiveFloat
    steps: PositiveInt


EstimatorSpec = Annotated[
    Union[SimRidge, SimTunedRidge, SimOptimalSD, SimSD, SimPCR, SimMinNorm, SimGD],
    Field(discriminator="kind"),
]


# ---------------------------------------------------------------------------
# Command blocks
# ---------------------------------------------------------------------------

class MeasureBlock(_Block):
    grid_size: PositiveInt = 200


class RiskBlock(_Block):
    rules: tuple[RuleSpec, ...] = Field(min_length=1)


class OptimalBlock(_Block):
    ordering: Literal["outlier_first", "max_residual"] = "outlier_first"


class FederatedBlock(_Block):
    K: PositiveInt = 1
    ordering: Literal["outlier_first", "max_residual"] = "outlier_first"


class SimulateBlock(_Block):
    n: PositiveInt
    p: PositiveInt
    n_replicates: PositiveInt = 20
    entry_dist: Literal["gaussian", "rademacher", "student_t"] = "gaussian"
    df: float = Field(default=10.0, gt=8.0)
    estimators: tuple[EstimatorSpec, ...] = Field(min_length=1)


class SweepBlock(_Block):
    kind: Literal["risk", "sd_params", "b0"] = "risk"
    axis: Literal["delta", "sigma_eps_sq"] = "delta"
    spike: PositiveInt = 1          # нумерация спайков с 1
    grid: GridSpec
    K: PositiveInt = 1
    empirical: bool = False         # для kind=risk: добавить столбцы Монте-Карло (нужен блок simulate)


class RunConfig(_Block):
    model: SpikedModel
    measure: MeasureBlock = MeasureBlock()
    risk: RiskBlock | None = None
    optimal: OptimalBlock = OptimalBlock()
    federated: FederatedBlock | None = None
    simulate: SimulateBlock | None = None
    sweep: SweepBlock | None = None
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    threads: PositiveInt | None = None

    @model_validator(mode="after")
    def _check_refs(self) -> "RunConfig":
        if self.sweep is not None:
            if self.sweep.axis == "delta" and self.sweep.spike > self.model.s:
                raise ValueError(f"sweep.spike={self.sweep.spike} but the model has {self.model.s} spike(s)")
            if self.sweep.empirical and self.simulate is None:
                raise ValueError("sweep.empirical needs a simulate block")
        return self
