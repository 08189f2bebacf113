"""
Logistic loss, gradients, projections and the projected gradient descent loop
"""
import logging
from typing import List, Optional, Sequence

import numpy as np

from ..core.exceptions import PreconditionError, ShapeMismatchError
from ..core.rng import RandomStreams
from ..models.initialization import InitConfig, SparsityMask
from ..models.network import MixtureState, ModelConfig, NetworkParams
from ..models.training import (
    BoundCheckReport, ConvexToyProblem, LabeledDataset, TrainConfig, TrainedModel,
)
from .gradient_service import network_gradient
from .initialization_service import apply_mask, init_mixture
from .transformer_service import network_forward_batch, truncate, truncated_outputs

logger = logging.getLogger(__name__)


def logistic_loss(z):
    """
    phi(z) = log(1 + exp(-z)), evaluated without overflow
    """
    z = np.asarray(z, dtype=np.float64)
    value = np.where(z >= 0, np.log1p(np.exp(-np.abs(z))), -z + np.log1p(np.exp(-np.abs(z))))
    return float(value) if value.ndim == 0 else value


def logistic_loss_derivative(z):
    """phi'(z) = -1 / (1 + exp(z))."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    value = np.where(z >= 0, -e / (1.0 + e), -1.0 / (1.0 + e))
    return float(value) if value.ndim == 0 else value


def _check_data(data: LabeledDataset, cfg: ModelConfig) -> None:
    if data.n == 0:
        raise PreconditionError("Dataset is empty")
    if data.inputs.shape[1:] != (cfg.d, cfg.l):
        raise ShapeMismatchError(f"Inputs must have shape (n, {cfg.d}, {cfg.l}), got {data.inputs.shape}")


def network_outputs(thetas: Sequence[NetworkParams], inputs: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """K x n matrix of truncated network outputs."""
    return truncated_outputs(inputs, thetas, cfg)


def empirical_loss(
    w: MixtureState, thetas: Sequence[NetworkParams], data: LabeledDataset, cfg: ModelConfig,
    outputs: Optional[np.ndarray] = None,
) -> float:
    """
    (1/n) sum_i phi(Y_i f_w(X_i))
    """
    _check_data(data, cfg)
    if outputs is None:
        outputs = network_outputs(thetas, data.inputs, cfg)
    margins = data.labels * np.matmul(w.w, outputs)
    return float(np.mean(logistic_loss(margins)))


def grad_outer(
    w: MixtureState, thetas: Sequence[NetworkParams], data: LabeledDataset, cfg: ModelConfig,
    outputs: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Exact gradient of the empirical loss in the outer weights
    """
    _check_data(data, cfg)
    if outputs is None:
        outputs = network_outputs(thetas, data.inputs, cfg)
    margins = data.labels * np.matmul(w.w, outputs)
    coefficients = logistic_loss_derivative(margins) * data.labels
    return np.matmul(outputs, coefficients) / data.n


def grad_inner(
    w: MixtureState, thetas: Sequence[NetworkParams], data: LabeledDataset, cfg: ModelConfig,
    masks: Sequence[SparsityMask],
) -> List[NetworkParams]:
    """
    Masked gradient of the empirical loss in every network's weights (frozen-argmax convention)
    """
    _check_data(data, cfg)
    if len(masks) != len(thetas) or len(thetas) != w.K:
        raise ShapeMismatchError("One mask and one outer weight are required per network")
    raw = np.stack([network_forward_batch(data.inputs, theta, cfg) for theta in thetas])
    outputs = truncate(raw, cfg.beta)
    margins = data.labels * np.matmul(w.w, outputs)
    coefficients = logistic_loss_derivative(margins) * data.labels / data.n
    inside = np.abs(raw) < cfg.beta

    gradients = []
    for k, (theta, mask) in enumerate(zip(thetas, masks)):
        d_outputs = coefficients * w.w[k] * inside[k]
        if not np.any(d_outputs):
            gradients.append(theta.map_arrays(np.zeros_like))
            continue
        gradients.append(apply_mask(network_gradient(data.inputs, theta, cfg, d_outputs), mask))
    return gradients


def project_outer(w_raw) -> MixtureState:
    """
    Euclidean projection onto {w >= 0, sum(w) <= 1}: clip, then sort-and-threshold onto the simplex if needed
    """
    w_raw = np.asarray(w_raw, dtype=np.float64)
    clipped = np.maximum(w_raw, 0.0)
    if clipped.sum() <= 1.0:
        return MixtureState(w=clipped)
    ordered = np.sort(w_raw)[::-1]
    cumulative = np.cumsum(ordered) - 1.0
    ranks = np.arange(1, w_raw.size + 1)
    rho = np.nonzero(ordered - cumulative / ranks > 0)[0][-1]
    threshold = cumulative[rho] / (rho + 1.0)
    projected = np.maximum(w_raw - threshold, 0.0)
    total = projected.sum()
    if total > 1.0:
        projected = projected / total
    return MixtureState(w=projected)


def project_ball(point: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of ``point`` onto the closed ball around ``center``."""
    delta = np.asarray(point, dtype=np.float64) - center
    norm = np.linalg.norm(delta)
    if norm <= radius:
        return np.asarray(point, dtype=np.float64)
    return center + (radius / norm) * delta


def project_inner(
    thetas: Sequence[NetworkParams], thetas0: Sequence[NetworkParams],
    masks: Sequence[SparsityMask], c6: float,
) -> List[NetworkParams]:
    """
    Project the masked displacement of all K networks, taken as one flat vector, onto the c6-ball around thetas0
    """
    if not (len(thetas) == len(thetas0) == len(masks)):
        raise ShapeMismatchError("thetas, thetas0 and masks must have the same length")
    for theta, theta0, mask in zip(thetas, thetas0, masks):
        mask.check_matches(theta)
        mask.check_matches(theta0)
    selected = [mask.flatten() for mask in masks]
    delta = np.concatenate([
        (theta.flatten() - theta0.flatten())[keep] for theta, theta0, keep in zip(thetas, thetas0, selected)
    ])
    norm = np.linalg.norm(delta)
    if norm <= c6:
        return [apply_mask(theta, mask) for theta, mask in zip(thetas, masks)]
    scale = c6 / norm
    projected = []
    for theta, theta0, keep in zip(thetas, thetas0, selected):
        base = theta0.flatten()
        flat = np.where(keep, base + scale * (theta.flatten() - base), base)
        projected.append(theta0.with_flat(flat))
    return projected


def _gradient_step(theta: NetworkParams, gradient: NetworkParams, step: float) -> NetworkParams:
    return theta.rebuild(a - step * g for a, g in zip(theta.arrays(), gradient.arrays()))


def train(
    data: LabeledDataset, cfg: ModelConfig, icfg: InitConfig, tcfg: TrainConfig,
    seed: Optional[int] = None,
) -> TrainedModel:
    """
    Projected gradient descent from the pruned random initialization; returns the iterate with minimal empirical loss
    """
    _check_data(data, cfg)
    master_seed = icfg.seed if seed is None else seed
    streams = RandomStreams(master_seed)
    thetas0, masks = init_mixture(cfg, icfg, streams)
    step = tcfg.step_size
    logger.info(
        f"Training K={cfg.K} networks on n={data.n} samples (t_n={tcfg.t_n}, mode={tcfg.mode}, seed={master_seed})"
    )

    w = MixtureState(w=np.zeros(cfg.K))
    thetas = list(thetas0)
    outputs = network_outputs(thetas, data.inputs, cfg)

    trace = [empirical_loss(w, thetas, data, cfg, outputs=outputs)]
    best = (trace[0], w, thetas)
    for t in range(tcfg.t_n):
        g_outer = grad_outer(w, thetas, data, cfg, outputs=outputs)
        if tcfg.mode == "full":
            g_inner = grad_inner(w, thetas, data, cfg, masks)
            stepped = [_gradient_step(theta, g, step) for theta, g in zip(thetas, g_inner)]
            thetas = project_inner(stepped, thetas0, masks, tcfg.c6)
        w = project_outer(w.w - step * g_outer)
        if tcfg.mode == "full":
            outputs = network_outputs(thetas, data.inputs, cfg)

        loss = empirical_loss(w, thetas, data, cfg, outputs=outputs)
        trace.append(loss)
        if loss < best[0]:
            best = (loss, w, thetas)
        if (t + 1) % 50 == 0:
            logger.debug(f"step {t + 1}/{tcfg.t_n}: empirical loss {loss:.6f}")

    t_hat = int(np.argmin(trace))
    _, w_hat, thetas_hat = best
    logger.info(f"Selected step t_hat={t_hat} with empirical loss {trace[t_hat]:.6f}")
    return TrainedModel(
        config=cfg, w_hat=w_hat, thetas_hat=thetas_hat, t_hat=t_hat, loss_trace=trace,
        thetas_init=thetas0, masks=masks,
    )


def _project_toy(u: np.ndarray, problem: ConvexToyProblem) -> np.ndarray:
    if problem.domain == "ball":
        return project_ball(u, np.zeros_like(u), problem.radius)
    return project_outer(u).w


def _toy_value(problem: ConvexToyProblem, u: np.ndarray, v: np.ndarray) -> float:
    r = u - problem.a - v
    return float(r @ problem.q @ r)


def _toy_gradient(problem: ConvexToyProblem, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    r = u - problem.a - v
    return (problem.q + problem.q.T) @ r


def gd_convex_bound_check(problem: ConvexToyProblem) -> BoundCheckReport:
    """
    Run projected gradient descent on a convex toy with drifting second argument and compare
    min_t F(u_t, v_t) with F(u*, v_0) + average drift + |u* - u_0|^2 / 2 + D^2 / (2 t_n)
    """
    q = problem.q
    if not np.allclose(q, q.T):
        raise PreconditionError("Q must be symmetric")
    if np.min(np.linalg.eigvalsh(q)) < -1e-12:
        raise PreconditionError("Q must be positive semidefinite for F to be convex")
    feasible = _project_toy(problem.u_star, problem)
    if np.linalg.norm(feasible - problem.u_star) > 1e-9:
        raise PreconditionError("u_star must lie in the domain")

    sup_u = problem.radius if problem.domain == "ball" else 1.0
    bound = problem.gradient_bound
    if bound is None:
        bound = 2.0 * np.linalg.norm(q, 2) * (
            sup_u + np.linalg.norm(problem.a) + np.max(np.linalg.norm(problem.drift, axis=1))
        )
    t_n = problem.t_n
    step = problem.step_size if problem.step_size is not None else 1.0 / t_n

    if np.linalg.norm(_project_toy(problem.u0, problem) - problem.u0) > 1e-9:
        raise PreconditionError("u0 must lie in the domain")
    u = problem.u0
    values = []
    for t in range(t_n):
        v = problem.drift[t]
        values.append(_toy_value(problem, u, v))
        gradient = _toy_gradient(problem, u, v)
        if np.linalg.norm(gradient) > bound + 1e-9:
            raise PreconditionError(f"Gradient norm {np.linalg.norm(gradient):.4g} exceeds D={bound:.4g}")
        u = _project_toy(u - step * gradient, problem)
    values.append(_toy_value(problem, u, problem.drift[t_n]))

    base = _toy_value(problem, problem.u_star, problem.drift[0])
    drift = np.mean([
        abs(_toy_value(problem, problem.u_star, problem.drift[t]) - base) for t in range(1, t_n + 1)
    ])
    distance = float(np.sum((problem.u_star - problem.u0) ** 2))
    lhs = float(min(values))
    rhs = float(
        base
        + drift
        + distance / (2.0 * step * t_n)
        + step * bound ** 2 / 2.0
    )
    slack = rhs - lhs
    return BoundCheckReport(
        lhs=lhs, rhs=rhs, slack=slack, holds=bool(slack >= -1e-12),
        details={"gradient_bound": float(bound), "step_size": float(step), "average_drift": float(drift)},
    )


def outer_gradient_bound_check(
    states: Sequence[MixtureState], thetas: Sequence[NetworkParams], data: LabeledDataset, cfg: ModelConfig
) -> BoundCheckReport:
    """
    Largest outer-gradient norm over the given states against sqrt(K) * beta
    """
    outputs = network_outputs(thetas, data.inputs, cfg)
    norms = [float(np.linalg.norm(grad_outer(w, thetas, data, cfg, outputs=outputs))) for w in states]
    largest = max(norms) if norms else 0.0
    limit = float(np.sqrt(cfg.K) * cfg.beta)
    return BoundCheckReport(
        lhs=largest, rhs=limit, slack=limit - largest, holds=largest <= limit,
        details={"states": len(norms)},
    )
