"""
Brute-force reference evaluators: spline bases, hierarchical models,
finite differences, projection QPs and Monte-Carlo risks
"""
import itertools
import logging
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import entr

from ..core.exceptions import OracleError
from ..core.rng import RandomStreams, StreamRole
from ..models.construction import ProductTermSpec, SplineBasisSpec
from ..models.experiment import UniformSampler
from ..models.function_registry import get_function
from ..models.hierarchical import HierarchicalModelSpec, Leaf, flatten_inputs
from ..models.network import ModelConfig, NetworkParams
from ..models.training import TrainedModel
from .optimizer_service import logistic_loss
from .transformer_service import classify, mixture_forward_batch, network_forward_batch

logger = logging.getLogger(__name__)

MAX_ENUMERATION_DIM = 6


def truncated_power_basis(x, spec: SplineBasisSpec, j: int):
    """
    B_j(x) = x^j for j <= M and (x - u_{j-M})_+^M beyond
    """
    if not 0 <= j < spec.size:
        raise OracleError(f"Basis index {j} outside 0..{spec.size - 1}")
    x = np.asarray(x, dtype=np.float64)
    if j <= spec.degree:
        value = x ** j
    else:
        shifted = x - spec.knots[j - spec.degree - 1]
        value = np.where(shifted > 0, np.maximum(shifted, 0.0) ** spec.degree, 0.0)
    return float(value) if value.ndim == 0 else value


def eval_product_terms(x_flat: np.ndarray, basis: SplineBasisSpec, terms: ProductTermSpec) -> np.ndarray:
    """sum_s alpha_s prod_k B_{j_{s,k}}(x^(k)) for a batch of flattened inputs (n, d*l)."""
    x_flat = np.atleast_2d(np.asarray(x_flat, dtype=np.float64))
    total = np.zeros(x_flat.shape[0])
    for alpha, row in zip(terms.alphas, terms.exponents):
        product = np.ones(x_flat.shape[0])
        for k, j in enumerate(row):
            product = product * truncated_power_basis(x_flat[:, k], basis, j)
        total = total + alpha * product
    return total


def _eval_node(node, x_flat: np.ndarray) -> np.ndarray:
    if isinstance(node, Leaf):
        if node.coordinate >= x_flat.shape[1]:
            raise OracleError(f"Leaf coordinate {node.coordinate} outside 0..{x_flat.shape[1] - 1}")
        return x_flat[:, node.coordinate]
    fn = get_function(node.function)
    if fn.arity != len(node.children):
        raise OracleError(f"{node.function} takes {fn.arity} arguments, got {len(node.children)}")
    values = np.stack([_eval_node(child, x_flat) for child in node.children], axis=1)
    return fn(values)


def eval_hierarchical(spec: HierarchicalModelSpec, x) -> Union[float, np.ndarray]:
    """
    Recursive evaluation of the composition model at x (d*l,) or a batch (n, d*l)
    """
    x = np.asarray(x, dtype=np.float64)
    values = _eval_node(spec.root, np.atleast_2d(x))
    return float(values[0]) if x.ndim == 1 else values


def finite_diff_grad(loss: Callable[[np.ndarray], float], params, step: float = 1e-6) -> np.ndarray:
    """
    Central differences (F(p + h e_i) - F(p - h e_i)) / 2h per coordinate
    """
    if step <= 0:
        raise OracleError("Finite-difference step must be positive")
    params = np.asarray(params, dtype=np.float64)
    gradient = np.zeros_like(params)
    for i in range(params.size):
        forward = params.copy()
        backward = params.copy()
        forward.flat[i] += step
        backward.flat[i] -= step
        gradient.flat[i] = (loss(forward) - loss(backward)) / (2.0 * step)
    return gradient


def qp_projection_oracle(
    point, constraint: str = "sub_simplex", center=None, radius: float = 1.0
) -> np.ndarray:
    """
    Exact Euclidean projection by active-set enumeration (sub_simplex) or the radial formula (ball)
    """
    point = np.asarray(point, dtype=np.float64)
    if constraint == "ball":
        center = np.zeros_like(point) if center is None else np.asarray(center, dtype=np.float64)
        delta = point - center
        norm = np.linalg.norm(delta)
        return point.copy() if norm <= radius else center + radius * delta / norm
    if constraint != "sub_simplex":
        raise OracleError(f"Unknown constraint set '{constraint}'")
    dim = point.size
    if dim > MAX_ENUMERATION_DIM:
        raise OracleError(f"Active-set enumeration supports dimension <= {MAX_ENUMERATION_DIM}, got {dim}")

    best, best_distance = None, np.inf
    for zeros in itertools.product((False, True), repeat=dim):
        free = ~np.array(zeros)
        for sum_active in (False, True):
            candidate = np.zeros(dim)
            if sum_active:
                if not free.any():
                    continue
                shift = (point[free].sum() - 1.0) / free.sum()
                candidate[free] = point[free] - shift
            else:
                candidate[free] = point[free]
            if np.any(candidate < -1e-12) or candidate.sum() > 1.0 + 1e-12:
                continue
            distance = np.sum((candidate - point) ** 2)
            if distance < best_distance:
                best, best_distance = np.maximum(candidate, 0.0), distance
    return best


AposterioriFn = Union[HierarchicalModelSpec, Callable[[np.ndarray], np.ndarray]]


def aposteriori_values(m: AposterioriFn, inputs: np.ndarray) -> np.ndarray:
    """m(X) for a batch (n, d, l), clipped to [0, 1]."""
    if isinstance(m, HierarchicalModelSpec):
        values = eval_hierarchical(m, flatten_inputs(inputs))
    else:
        values = np.asarray(m(inputs), dtype=np.float64)
    return np.clip(values, 0.0, 1.0)


def decision_function(model, cfg: Optional[ModelConfig] = None) -> Callable[[np.ndarray], np.ndarray]:
    """Map a trained mixture, a single network or a callable to f(X) on batches (n, d, l)."""
    if isinstance(model, TrainedModel):
        return lambda inputs: mixture_forward_batch(inputs, model.w_hat, model.thetas_hat, model.config)
    if isinstance(model, NetworkParams):
        if cfg is None:
            raise OracleError("A ModelConfig is required to evaluate a single network")
        return lambda inputs: network_forward_batch(inputs, model, cfg)
    if callable(model):
        return lambda inputs: np.asarray(model(inputs), dtype=np.float64)
    raise OracleError(f"Cannot evaluate a model of type {type(model).__name__}")


def _mc_inputs(sampler: UniformSampler, n_mc: int, seed: int) -> np.ndarray:
    if n_mc < 1:
        raise OracleError("n_mc must be at least 1")
    return sampler.sample(n_mc, RandomStreams(seed).generator(StreamRole.MONTE_CARLO))


def _mean_and_std_err(values: np.ndarray) -> Tuple[float, float]:
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def bayes_risk_mc(m: AposterioriFn, sampler: UniformSampler, n_mc: int, seed: int) -> Tuple[float, float]:
    """
    Monte-Carlo estimate of E[min(m(X), 1 - m(X))] with its standard error
    """
    inputs = _mc_inputs(sampler, n_mc, seed)
    mx = aposteriori_values(m, inputs)
    return _mean_and_std_err(np.minimum(mx, 1.0 - mx))


def excess_misclassification(
    model, m: AposterioriFn, sampler: UniformSampler, n_mc: int, seed: int,
    cfg: Optional[ModelConfig] = None,
) -> Tuple[float, float]:
    """
    White-box estimate of P{eta_n(X) != Y} - P{eta*(X) != Y} = E[|2m(X) - 1| 1{eta_n(X) != eta*(X)}]
    """
    inputs = _mc_inputs(sampler, n_mc, seed)
    mx = aposteriori_values(m, inputs)
    predicted = classify(decision_function(model, cfg)(inputs))
    bayes = np.where(mx >= 0.5, 1, -1)
    return _mean_and_std_err(np.abs(2.0 * mx - 1.0) * (predicted != bayes))


def surrogate_excess(
    model, m: AposterioriFn, sampler: UniformSampler, n_mc: int, seed: int,
    cfg: Optional[ModelConfig] = None,
) -> Tuple[float, float]:
    """
    E[m phi(f) + (1 - m) phi(-f)] minus the logistic risk of the logit E[H(m)], H in nats
    """
    inputs = _mc_inputs(sampler, n_mc, seed)
    mx = aposteriori_values(m, inputs)
    f = decision_function(model, cfg)(inputs)
    risk = mx * logistic_loss(f) + (1.0 - mx) * logistic_loss(-f)
    entropy = entr(mx) + entr(1.0 - mx)
    return _mean_and_std_err(risk - entropy)


def minimal_logistic_risk(m: AposterioriFn, sampler: UniformSampler, n_mc: int, seed: int) -> Tuple[float, float]:
    """E[phi(Y f_phi*(X))] = E[H(m(X))]."""
    inputs = _mc_inputs(sampler, n_mc, seed)
    mx = aposteriori_values(m, inputs)
    return _mean_and_std_err(entr(mx) + entr(1.0 - mx))


def surrogate_diagnostics(
    excess: float, surrogate: float, risk_star: float, tolerance: float = 0.0
) -> Dict[str, float]:
    """
    Both forms of the surrogate-to-misclassification bound:
    excess <= sqrt(surrogate / 2) and excess <= 2 surrogate + 4 risk_star.

    ``bound_calibration`` is sqrt(2 surrogate), the bound implied by the
    logistic calibration function psi(t) >= t^2 / 2 in nats. The first form
    is tighter by a factor 2 and can fail for classifiers that are wrong
    with small confidence, so it is reported next to the calibration bound.
    """
    surrogate = max(surrogate, 0.0)
    bound_a = float(np.sqrt(surrogate / 2.0))
    bound_b = float(2.0 * surrogate + 4.0 * risk_star)
    bound_calibration = float(np.sqrt(2.0 * surrogate))
    return {
        "excess": float(excess),
        "bound_a": bound_a,
        "bound_b": bound_b,
        "bound_calibration": bound_calibration,
        "holds_a": bool(excess <= bound_a + tolerance),
        "holds_b": bool(excess <= bound_b + tolerance),
        "holds_calibration": bool(excess <= bound_calibration + tolerance),
    }
