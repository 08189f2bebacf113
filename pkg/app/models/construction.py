from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class SplineBasisSpec(BaseModel):
    """
    Truncated power basis of degree M on [-A, A]: x^0..x^M followed by (x - u_r)_+^M for the interior knots.
    """
    degree: int = Field(..., ge=0)
    knots: List[float] = Field(default_factory=list)
    A: float = Field(default=1.0, gt=0)

    @field_validator("knots")
    def strictly_increasing(cls, v):
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("Knots must be strictly increasing")
        return v

    @model_validator(mode="after")
    def knots_inside_domain(self):
        if any(abs(u) > self.A for u in self.knots):
            raise ValueError(f"Knots must lie in [-{self.A}, {self.A}]")
        return self

    @property
    def K(self) -> int:
        return len(self.knots) + 1

    @property
    def size(self) -> int:
        """Number of basis functions M + K."""
        return self.degree + self.K


class ProductTermSpec(BaseModel):
    """Coefficients alpha_s and exponent indices j_{s,k} of sum_s alpha_s prod_k B_{j_{s,k}}(x^(k))."""
    alphas: List[float]
    exponents: List[List[int]]

    @model_validator(mode="after")
    def check_lengths(self):
        if len(self.alphas) != len(self.exponents):
            raise ValueError("One exponent row is required per coefficient")
        widths = {len(row) for row in self.exponents}
        if len(widths) > 1:
            raise ValueError("Exponent rows must have equal length")
        if any(j < 0 for row in self.exponents for j in row):
            raise ValueError("Exponent indices must be nonnegative")
        return self

    @property
    def n_terms(self) -> int:
        return len(self.alphas)

    def check_basis(self, basis: SplineBasisSpec, n_inputs: int) -> None:
        for row in self.exponents:
            if len(row) != n_inputs:
                raise ValueError(f"Exponent rows must have d*l = {n_inputs} entries")
            if any(j >= basis.size for j in row):
                raise ValueError(f"Exponent indices must lie in 0..{basis.size - 1}")


class SelectionCertificate(BaseModel):
    B: float
    beta: float
    threshold: float
    admissible_eps: float
    input_bound: float
    delta_bound: float = 0.0
    tau: int
    d_key: int
    l: int

    def predicted_error(self, eps: float, delta: float) -> float:
        """Bound on the deviation of the attention value under weight noise eps and input noise delta."""
        z = self.input_bound
        scale = (abs(self.beta) + 1.0)
        return (
            136.0 * self.d_key * self.tau ** 3 * self.l * scale * z ** 3 * self.B * max(delta ** 3, 1.0) * eps
            + 25.0 * self.tau * scale * z * max(delta, 1.0) * delta
        )


class SplineEncoderCertificate(BaseModel):
    admissible_eps: float
    measured_sup_error: Optional[float] = None
    component_map: Dict[str, int] = Field(default_factory=dict)
    B_schedule: List[float] = Field(default_factory=list)
    error_growth: List[float] = Field(default_factory=list)
    n_layers: int = 0


class NodeCertificate(BaseModel):
    path: str
    function: str
    component: int
    degree: int
    basis_size: int
    n_terms: int
    fit_error: float
    network_error: float
    lipschitz: float
    bound: float


class HierarchicalCertificate(BaseModel):
    admissible_eps: float
    measured_sup_error: float
    bound: float
    component_map: Dict[str, int] = Field(default_factory=dict)
    B_schedule: List[float] = Field(default_factory=list)
    nodes: List[NodeCertificate] = Field(default_factory=list)
    n_layers: int = 0
