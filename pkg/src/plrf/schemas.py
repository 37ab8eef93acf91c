"""Request and response models shared by the HTTP service and the CLI."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator


class ScheduleModel(BaseModel):
    kind: Literal["geometric", "linear"] = "geometric"
    first: int = Field(1, ge=1)
    step: float = 1.1


class SweepConfig(BaseModel):
    """One sweep over model sizes at fixed (alpha, beta)."""

    alpha: float = Field(gt=0)
    beta: float
    d_list: list[int]
    v_multiple: Optional[float] = 4.0
    v_fixed: Optional[int] = None
    seed: int = Field(0, ge=0, lt=2**64)
    seeds: int = Field(8, ge=1)
    gamma: Union[Literal["auto"], float] = "auto"
    safety: float = Field(0.5, gt=0)
    batch: int = Field(1, ge=1)
    horizon: Optional[int] = Field(None, ge=1)
    flops_budget: Optional[float] = Field(None, gt=0)
    schedule: ScheduleModel = ScheduleModel()
    window: tuple[float, float] = (1e6, 1e8)
    slices: int = Field(15, ge=1)
    out_dir: str = "out"

    @field_validator("d_list")
    @classmethod
    def _increasing(cls, v):
        if not v or any(b <= a for a, b in zip(v, v[1:])) or v[0] < 1:
            raise ValueError("d_list must be strictly increasing positive integers")
        return v

    @model_validator(mode="after")
    def _budget(self):
        if self.horizon is None and self.flops_budget is None:
            raise ValueError("set horizon or flops_budget")
        if isinstance(self.gamma, float) and not self.gamma > 0:
            raise ValueError("fixed gamma must be positive")
        return self

    def v_for(self, d: int) -> int:
        if self.v_fixed is not None:
            return self.v_fixed
        return int(round(self.v_multiple * d))

    def horizon_for(self, d: int) -> int:
        if self.horizon is not None:
            return self.horizon
        return max(1, int(-(-self.flops_budget // (self.batch * d))))


class CurveModel(BaseModel):
    source: str
    d: int
    seed: int
    iters: list[int]
    flops: list[float]
    risk: list[float]
    diverged: bool = False


class RunInfo(BaseModel):
    d: int
    v: int
    gamma: float
    lambda_max: float
    kernel_norm: float


class CurvesResponse(BaseModel):
    curves: list[CurveModel]
    runs: list[RunInfo]
    manifest_hash: str


class VolterraRequest(BaseModel):
    config: SweepConfig
    naive: bool = False


class SimulateRequest(BaseModel):
    config: SweepConfig


class PhaseRequest(BaseModel):
    alpha: float = Field(gt=0)
    beta: float


class PhaseResponse(BaseModel):
    alpha: float
    beta: float
    phase: str
    eta: Optional[float] = None
    xi: Optional[float] = None
    tradeoff: Optional[str] = None


class TheoryRequest(BaseModel):
    alpha: float = Field(gt=0)
    beta: float
    d: int = Field(ge=1)
    v: Optional[int] = None
    gamma: float = Field(ge=0)
    batch: int = Field(1, ge=1)
    r: list[float]
    mode: Literal["hybrid", "quadrature"] = "hybrid"


class TheoryRow(BaseModel):
    r: float
    F0: float
    Fpp: float
    Fac: float
    Kpp: float
    surrogate: float
    argmax: str


class TheoryResponse(BaseModel):
    rows: list[TheoryRow]


class SpectrumRequest(BaseModel):
    alpha: float = Field(gt=0)
    beta: float
    d: int = Field(ge=1)
    v: Optional[int] = None
    u_max: float = Field(1.5, gt=0)
    stride: int = Field(1, ge=1)
    remove_point_mass: bool = False


class SpectrumRow(BaseModel):
    u: float
    eta: float
    trace_density: float
    target_density: float


class SpectrumResponse(BaseModel):
    rows: list[SpectrumRow]


class FrontierRequest(BaseModel):
    curves: list[CurveModel]
    window: tuple[float, float] = (1e6, 1e8)
    slices: int = Field(15, ge=1)
    approach: Literal["0", "1", "2", "all"] = "all"


class FitModel(BaseModel):
    a: float
    b: float
    residual: float
    window: tuple[float, float]
    n_slices: int
    flags: list[str] = []


class SliceModel(BaseModel):
    flops: float
    min_d: int
    min_risk: float
    losses: list[tuple[int, float]]


class FrontierResponse(BaseModel):
    config: dict
    eta: Optional[FitModel] = None
    xi: dict
    slices: list[SliceModel]


class ErrorResponse(BaseModel):
    kind: Literal["config", "numerical"]
    detail: str
