"""
Registry of closed-form functions used as nodes of hierarchical composition models
Each entry declares its arity, smoothness p and a Lipschitz constant on [-b, b]^arity
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmoothFunction:
    name: str
    arity: int
    p: float
    fn: Callable[[np.ndarray], np.ndarray]
    # Euclidean Lipschitz constant on the box [-b, b]^arity
    lipschitz_on: Callable[[float], float]

    def __call__(self, values: np.ndarray) -> np.ndarray:
        """Evaluate on an (n, arity) array."""
        values = np.asarray(values, dtype=np.float64)
        return self.fn(values)

    def lipschitz(self, bound: float) -> float:
        return float(self.lipschitz_on(bound))


# Smoothness orders are nominal: polynomials and analytic maps are (p, C)-smooth for every p
REGISTRY: Dict[str, SmoothFunction] = {
    fn.name: fn for fn in (
        SmoothFunction("identity", 1, 4.0, lambda v: v[:, 0], lambda b: 1.0),
        SmoothFunction("sum", 2, 4.0, lambda v: v[:, 0] + v[:, 1], lambda b: math.sqrt(2.0)),
        SmoothFunction("product", 2, 4.0, lambda v: v[:, 0] * v[:, 1], lambda b: math.sqrt(2.0) * b),
        SmoothFunction("square", 1, 4.0, lambda v: v[:, 0] ** 2, lambda b: 2.0 * b),
        SmoothFunction(
            "square_plus", 2, 4.0, lambda v: v[:, 0] ** 2 + v[:, 1], lambda b: math.sqrt(4.0 * b * b + 1.0)
        ),
        SmoothFunction("affine_half", 1, 4.0, lambda v: (v[:, 0] + 1.0) / 2.0, lambda b: 0.5),
        SmoothFunction("constant_half", 1, 4.0, lambda v: np.full(v.shape[0], 0.5), lambda b: 0.0),
        SmoothFunction("complement", 1, 4.0, lambda v: 1.0 - v[:, 0], lambda b: 1.0),
        SmoothFunction("sigmoid", 1, 4.0, lambda v: expit(4.0 * v[:, 0]), lambda b: 1.0),
        SmoothFunction("sine", 1, 4.0, lambda v: np.sin(v[:, 0]), lambda b: 1.0),
        # Data generation only: not continuous, so no approximation guarantee applies
        SmoothFunction("threshold", 1, 0.0, lambda v: (v[:, 0] >= 0).astype(np.float64), lambda b: math.inf),
    )
}


def get_function(name: str) -> SmoothFunction:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ValueError(f"Unknown function '{name}', expected one of {sorted(REGISTRY)}") from None
