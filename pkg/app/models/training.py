from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .arrays import WeightArray
from .initialization import SparsityMask
from .network import MixtureState, ModelConfig, NetworkParams


class TrainConfig(BaseModel):
    """
    Projected gradient descent settings; the step size is fixed to 1/t_n.
    """
    t_n: int = Field(..., ge=0)
    c6: float = Field(default=0.5, gt=0)
    mode: Literal["full", "outer_only"] = "full"
    n: int = Field(default=1, ge=1)

    @property
    def step_size(self) -> float:
        return 1.0 / self.t_n if self.t_n >= 1 else 0.0

    @property
    def lambda_(self) -> float:
        return self.step_size


class LabeledDataset(BaseModel):
    """Inputs (n, d, l) with labels in {-1, +1}, optionally declared to lie in [-A, A]."""
    inputs: WeightArray
    labels: WeightArray
    A: Optional[float] = Field(default=None, gt=0)

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def check_consistency(self):
        if self.inputs.ndim != 3:
            raise ValueError("inputs must have shape (n, d, l)")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("inputs and labels must have equal lengths")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if self.A is not None and np.any(np.abs(self.inputs) > self.A):
            raise ValueError(f"inputs must lie in [-{self.A}, {self.A}]")
        return self

    @property
    def n(self) -> int:
        return int(self.inputs.shape[0])

    def __len__(self) -> int:
        return self.n


class TrainedModel(BaseModel):
    """
    Selected iterate of a training run with everything needed to re-evaluate it.
    """
    config: ModelConfig
    w_hat: MixtureState
    thetas_hat: List[NetworkParams]
    t_hat: int = Field(..., ge=0)
    loss_trace: List[float]
    thetas_init: List[NetworkParams] = Field(default_factory=list)
    masks: List[SparsityMask] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_selected_step(self):
        if self.t_hat >= len(self.loss_trace):
            raise ValueError("t_hat must index loss_trace")
        if self.loss_trace[self.t_hat] != min(self.loss_trace):
            raise ValueError("loss_trace[t_hat] must be the minimum of the trace")
        if len(self.thetas_hat) != self.w_hat.K:
            raise ValueError("one network per outer weight is required")
        return self


class ConvexToyProblem(BaseModel):
    """
    F(u, v) = (u - a - v)^T Q (u - a - v) over a ball or the sub-simplex, with a drift sequence v_t.
    """
    q: WeightArray
    a: WeightArray
    drift: WeightArray
    u0: WeightArray
    u_star: WeightArray
    domain: Literal["ball", "simplex"] = "ball"
    radius: float = Field(default=1.0, gt=0)
    t_n: int = Field(..., ge=1)
    step_size: Optional[float] = Field(default=None, gt=0)
    gradient_bound: Optional[float] = Field(default=None, gt=0)

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @field_validator("drift")
    def drift_is_matrix(cls, v):
        if v.ndim != 2:
            raise ValueError("drift must hold one v_t per row")
        return v

    @model_validator(mode="after")
    def check_dimensions(self):
        dim = self.a.shape[0]
        if self.q.shape != (dim, dim):
            raise ValueError("Q must be square and match a")
        if self.u0.shape != (dim,) or self.u_star.shape != (dim,) or self.drift.shape[1] != dim:
            raise ValueError("u0, u_star and drift must match the dimension of a")
        if self.drift.shape[0] != self.t_n + 1:
            raise ValueError(f"drift must have t_n+1 = {self.t_n + 1} rows")
        return self


class BoundCheckReport(BaseModel):
    lhs: float
    rhs: float
    slack: float
    holds: bool
    details: dict = Field(default_factory=dict)
