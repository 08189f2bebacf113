from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .network import ModelConfig, NetworkParams
from ..core.exceptions import InitializationError, ShapeMismatchError


class InitConfig(BaseModel):
    """
    Pruned uniform initialization on [-c4 n^c5, c4 n^c5] with tau kept entries per row.

    w2_zero_axis="output" (default) zeroes the W2 rows that write the encoding components
    0..d+l; "hidden" is the literal reading that zeroes the first d+l+1 hidden
    columns of W2 instead.
    """
    tau: int = Field(..., ge=1)
    c4: float = Field(default=0.5, gt=0)
    c5: float = Field(default=0.1, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    n: int = Field(default=1, ge=1)
    w2_zero_axis: Literal["output", "hidden"] = "output"
    enforce_tau_range: bool = True

    @property
    def init_range(self) -> float:
        return self.c4 * float(self.n) ** self.c5

    def check_against(self, cfg: ModelConfig) -> None:
        if self.enforce_tau_range and not (cfg.l + 1 <= self.tau <= cfg.l + cfg.d + 1):
            raise InitializationError(
                f"tau must lie in {{l+1, ..., l+d+1}} = {{{cfg.l + 1}, ..., {cfg.l + cfg.d + 1}}}, got {self.tau}"
            )


class SparsityMask(BaseModel):
    """Boolean pattern mirroring NetworkParams; true marks entries that may be nonzero."""
    pattern: NetworkParams

    @model_validator(mode="after")
    def must_be_boolean(self):
        for a in self.pattern.arrays():
            if a.dtype != np.bool_:
                raise ValueError("Sparsity patterns must be boolean arrays")
        return self

    def flatten(self) -> np.ndarray:
        return self.pattern.flatten()

    def check_matches(self, params: NetworkParams) -> None:
        shapes = [a.shape for a in params.arrays()]
        mask_shapes = [a.shape for a in self.pattern.arrays()]
        if shapes != mask_shapes:
            raise ShapeMismatchError("Sparsity mask does not mirror the parameter shapes")

    @classmethod
    def full(cls, params: NetworkParams) -> "SparsityMask":
        return cls(pattern=params.map_arrays(lambda a: np.ones(a.shape, dtype=np.bool_)))

    @classmethod
    def empty(cls, params: NetworkParams) -> "SparsityMask":
        return cls(pattern=params.map_arrays(lambda a: np.zeros(a.shape, dtype=np.bool_)))

    @classmethod
    def nonzero_pattern(cls, params: NetworkParams) -> "SparsityMask":
        return cls(pattern=params.map_arrays(lambda a: a != 0))
