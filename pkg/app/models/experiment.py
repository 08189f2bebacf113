from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from .hierarchical import HierarchicalModelSpec
from .initialization import InitConfig
from .network import ModelConfig
from .training import TrainConfig
from ..config import settings


class GridSpec(BaseModel):
    """Tensor validation grid: counts[i] points between lower[i] and upper[i]."""
    counts: List[int]
    lower: List[float]
    upper: List[float]

    @model_validator(mode="after")
    def check_grid(self):
        if not (len(self.counts) == len(self.lower) == len(self.upper)) or not self.counts:
            raise ValueError("counts, lower and upper must have the same positive length")
        if any(c < 2 for c in self.counts):
            raise ValueError("Every dimension needs at least 2 grid points")
        if not all(np.isfinite(self.lower)) or not all(np.isfinite(self.upper)):
            raise ValueError("Grid bounds must be finite")
        return self

    @classmethod
    def cube(cls, dim: int, count: int, bound: float) -> "GridSpec":
        return cls(counts=[count] * dim, lower=[-bound] * dim, upper=[bound] * dim)

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, c) for c, lo, hi in zip(self.counts, self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


class UniformSampler(BaseModel):
    """X uniform on [-A, A]^(d*l), returned as (n, d, l)."""
    d: int = Field(..., ge=1)
    l: int = Field(..., ge=1)
    A: float = Field(default=1.0, gt=0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-self.A, self.A, size=(n, self.d, self.l))


class ExperimentConfig(BaseModel):
    target: HierarchicalModelSpec
    model: ModelConfig
    init: Optional[InitConfig] = None
    train: TrainConfig = Field(default_factory=lambda: TrainConfig(t_n=settings.DEFAULT_T_N, c6=settings.DEFAULT_C6))
    n_grid: List[int] = Field(default_factory=lambda: [200, 800, 3200])
    n_mc: int = Field(default=settings.DEFAULT_N_MC, ge=1)
    repetitions: int = Field(default=3, ge=1)
    output_dir: str = settings.OUTPUT_DIR
    master_seed: int = Field(default=settings.MASTER_SEED, ge=0, lt=2**64)
    regime: Literal["smooth", "margin"] = "smooth"
    margin: float = Field(default=3.0, gt=0)
    beta_constant: Optional[float] = Field(default=None, gt=0)
    record_timing: bool = True
    bootstrap_samples: int = Field(default=settings.DEFAULT_BOOTSTRAP_SAMPLES, ge=0)
    threads: int = Field(default=settings.DEFAULT_THREADS, ge=1)

    @model_validator(mode="before")
    @classmethod
    def fill_model_defaults(cls, data: Any):
        """Architecture entries missing from the model block fall back to the desk-scale settings."""
        if isinstance(data, dict) and isinstance(data.get("model"), dict):
            defaults = {
                "h": settings.DEFAULT_H, "N": settings.DEFAULT_N, "J": settings.DEFAULT_J,
                "K": settings.DEFAULT_K, "beta": settings.DEFAULT_BETA, "d_key": settings.DEFAULT_D_KEY,
            }
            data = {**data, "model": {**defaults, **data["model"]}}
        return data

    @field_validator("n_grid")
    def sorted_ascending(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("n_grid must hold positive sample sizes")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("n_grid must be sorted ascending without duplicates")
        return v

    @model_validator(mode="after")
    def check_target(self):
        self.target.check_inputs(self.model.n_inputs)
        return self

    @property
    def A(self) -> float:
        return self.target.A

    def init_for(self, n: int, seed: int) -> InitConfig:
        base = self.init or InitConfig(
            tau=self.model.l + settings.DEFAULT_TAU_OFFSET, c4=settings.DEFAULT_C4, c5=settings.DEFAULT_C5,
        )
        return base.model_copy(update={"n": n, "seed": seed})

    def model_for(self, n: int) -> ModelConfig:
        if self.beta_constant is None:
            return self.model
        return self.model.model_copy(update={"beta": self.beta_constant * float(np.log(n))})


class RateReportRow(BaseModel):
    n: int
    repetition: int
    excess_misclassification: Optional[float] = None
    std_err: Optional[float] = None
    surrogate_excess: Optional[float] = None
    train_seconds: Optional[float] = None
    surrogate_std_err: Optional[float] = None
    error: Optional[str] = None


class RateStudySummary(BaseModel):
    slope: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    theoretical_exponent: Optional[float] = None
    n_grid: List[int] = Field(default_factory=list)
    mean_excess: List[Optional[float]] = Field(default_factory=list)
    failures: int = 0


class PerturbationRow(BaseModel):
    eps: float
    max_deviation: float
    ratio: Optional[float] = None
    within_envelope: Optional[bool] = None


class RademacherReport(BaseModel):
    estimate: float
    n: int
    n_signs: int
    n_thetas: int
    radius: float
    kind: str = "sampling lower bound of the supremum"


class CheckResult(BaseModel):
    suite: str
    name: str
    passed: bool
    details: Dict[str, Any] = Field(default_factory=dict)


class VerificationReport(BaseModel):
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]
