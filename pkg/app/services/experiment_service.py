"""
Synthetic data generation and the desk-scale studies: excess-risk rates,
weight-perturbation sensitivity and the empirical Rademacher diagnostic
"""
import logging
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from ..core.exceptions import PreconditionError
from ..core.rng import RandomStreams, StreamRole
from ..models.experiment import (
    ExperimentConfig, PerturbationRow, RademacherReport, RateReportRow, RateStudySummary, UniformSampler,
)
from ..models.function_registry import get_function
from ..models.hierarchical import HierarchicalModelSpec, Leaf, flatten_inputs
from ..models.initialization import SparsityMask
from ..models.network import ModelConfig, NetworkParams
from ..models.training import LabeledDataset
from .optimizer_service import train
from .oracle_service import eval_hierarchical, excess_misclassification, surrogate_excess
from .transformer_service import network_forward_batch, truncate

logger = logging.getLogger(__name__)

# Lower floor for the log of a zero excess with zero standard error
EXCESS_FLOOR = 1e-12


def regime_aposteriori(
    spec: HierarchicalModelSpec, regime: str = "smooth", margin: float = 3.0
) -> Callable[[np.ndarray], np.ndarray]:
    """
    A-posteriori probability of the data regime as a function of a batch (n, d, l).

    ``smooth`` uses m itself (clamped to [0, 1]); ``margin`` pushes it to
    expit(margin * sgn(2m - 1)) so that |logit| equals the margin almost surely.
    """
    if regime not in ("smooth", "margin"):
        raise PreconditionError(f"Unknown data regime '{regime}'")

    def m(inputs: np.ndarray) -> np.ndarray:
        values = eval_hierarchical(spec, flatten_inputs(inputs))
        outside = (values < 0.0) | (values > 1.0)
        if np.any(outside):
            logger.warning(f"Clamping {int(outside.sum())} a-posteriori values outside [0, 1]")
            values = np.clip(values, 0.0, 1.0)
        if regime == "margin":
            values = expit(margin * np.sign(2.0 * values - 1.0))
        return values

    return m


def generate_dataset(
    spec: HierarchicalModelSpec, n: int, A: float, seed: int, d: int, l: int,
    regime: str = "smooth", margin: float = 3.0,
) -> LabeledDataset:
    """
    X_i uniform on [-A, A]^(d*l), Y_i = +1 with probability m(X_i)
    """
    rng = RandomStreams(seed).generator(StreamRole.DATA)
    inputs = UniformSampler(d=d, l=l, A=A).sample(n, rng)
    m = regime_aposteriori(spec, regime, margin)(inputs)
    labels = np.where(rng.uniform(size=n) < m, 1.0, -1.0)
    return LabeledDataset(inputs=inputs, labels=labels, A=A)


def theoretical_rate_exponent(spec: HierarchicalModelSpec) -> float:
    """min over nodes of min{p / (2 (2p + K)), 1/6} with K the node arity."""
    nodes = list(spec.nodes())
    if isinstance(spec.root, Leaf):
        nodes_meta = [(get_function("identity").p, 1)]
    else:
        nodes_meta = [(get_function(node.function).p, node.arity) for node in nodes]
    return float(min(min(p / (2.0 * (2.0 * p + k)), 1.0 / 6.0) for p, k in nodes_meta))


def _run_cell(config: ExperimentConfig, n: int, repetition: int) -> RateReportRow:
    streams = RandomStreams(config.master_seed)
    cfg = config.model_for(n)
    data = generate_dataset(
        config.target, n, config.A, streams.derive_seed(StreamRole.DATA, n, repetition),
        cfg.d, cfg.l, config.regime, config.margin,
    )
    train_seed = streams.derive_seed(StreamRole.TRAINING, n, repetition)
    icfg = config.init_for(n, train_seed)
    tcfg = config.train.model_copy(update={"n": n})

    started = time.perf_counter()
    model = train(data, cfg, icfg, tcfg, seed=train_seed)
    elapsed = time.perf_counter() - started

    m = regime_aposteriori(config.target, config.regime, config.margin)
    sampler = UniformSampler(d=cfg.d, l=cfg.l, A=config.A)
    mc_seed = streams.derive_seed(StreamRole.MONTE_CARLO, n, repetition)
    excess, std_err = excess_misclassification(model, m, sampler, config.n_mc, mc_seed)
    surrogate, surrogate_std = surrogate_excess(model, m, sampler, config.n_mc, mc_seed)
    return RateReportRow(
        n=n, repetition=repetition, excess_misclassification=excess, std_err=std_err,
        surrogate_excess=surrogate, train_seconds=elapsed if config.record_timing else 0.0,
        surrogate_std_err=surrogate_std,
    )


def _safe_cell(config: ExperimentConfig, n: int, repetition: int) -> RateReportRow:
    try:
        return _run_cell(config, n, repetition)
    except Exception as e:
        logger.error(f"Rate-study cell n={n} repetition={repetition} failed: {e}")
        logger.error(traceback.format_exc())
        return RateReportRow(n=n, repetition=repetition, error=f"{type(e).__name__}: {e}")


def run_rate_study(config: ExperimentConfig) -> Tuple[List[RateReportRow], RateStudySummary]:
    """
    Train and evaluate one model per (n, repetition) cell, then fit the log-log rate slope
    """
    cells = [(n, rep) for n in config.n_grid for rep in range(config.repetitions)]
    logger.info(f"Running rate study over {len(cells)} cells with {config.threads} thread(s)")
    with ThreadPoolExecutor(max_workers=config.threads) as executor:
        rows = list(executor.map(lambda cell: _safe_cell(config, *cell), cells))
    rows.sort(key=lambda row: (row.n, row.repetition))

    slope, ci_low, ci_high, means = fit_rate_slope(
        rows, config.bootstrap_samples, RandomStreams(config.master_seed).derive_seed(StreamRole.BOOTSTRAP),
    )
    summary = RateStudySummary(
        slope=slope, ci_low=ci_low, ci_high=ci_high,
        theoretical_exponent=theoretical_rate_exponent(config.target),
        n_grid=list(config.n_grid), mean_excess=means,
        failures=sum(1 for row in rows if row.error is not None),
    )
    logger.info(f"Fitted slope {slope} (theoretical exponent -{summary.theoretical_exponent:.4f})")
    return rows, summary


def _floored_excess(frame: pd.DataFrame) -> pd.Series:
    floor = frame["std_err"].clip(lower=EXCESS_FLOOR)
    return frame["excess_misclassification"].where(frame["excess_misclassification"] > 0, floor)


def _slope(frame: pd.DataFrame) -> Optional[float]:
    means = frame.groupby("n")["floored"].mean()
    if len(means) < 2:
        return None
    slope, _ = np.polyfit(np.log(means.index.to_numpy(dtype=np.float64)), np.log(means.to_numpy()), 1)
    return float(slope)


def fit_rate_slope(
    rows: Sequence[RateReportRow], bootstrap_samples: int = 0, seed: int = 0,
) -> Tuple[Optional[float], Optional[float], Optional[float], List[Optional[float]]]:
    """
    Least-squares slope of log(mean excess) on log n with a percentile bootstrap interval.

    Non-positive excesses are floored at their standard error. Returns
    (slope, ci_low, ci_high, per-n mean excess); the slope is None with
    fewer than two distinct sample sizes.
    """
    frame = pd.DataFrame([row.model_dump() for row in rows if row.error is None])
    if frame.empty:
        return None, None, None, []
    frame["floored"] = _floored_excess(frame)
    means = [float(v) for v in frame.groupby("n")["excess_misclassification"].mean()]
    slope = _slope(frame)
    if slope is None or bootstrap_samples < 1:
        return slope, None, None, means

    rng = RandomStreams(seed).generator(StreamRole.BOOTSTRAP)
    groups = [group for _, group in frame.groupby("n")]
    estimates = []
    for _ in range(bootstrap_samples):
        resampled = pd.concat([
            group.iloc[rng.integers(0, len(group), size=len(group))] for group in groups
        ])
        estimates.append(_slope(resampled))
    low, high = np.percentile(estimates, [2.5, 97.5])
    return slope, float(low), float(high), means


def run_perturbation_study(
    theta: NetworkParams, mask: SparsityMask, cfg: ModelConfig, eps_grid: Sequence[float],
    n_inputs: int, seed: int, A: float = 1.0,
) -> List[PerturbationRow]:
    """
    Perturb every mask-allowed weight by eps * U with one common direction U ~ uniform[-1, 1]
    and record the largest output deviation over n_inputs random inputs
    """
    eps_grid = [float(e) for e in eps_grid]
    if any(e < 0 for e in eps_grid) or any(b > a for a, b in zip(eps_grid, eps_grid[1:])):
        raise PreconditionError("eps_grid must be nonnegative and descending")
    mask.check_matches(theta)
    streams = RandomStreams(seed)
    inputs = UniformSampler(d=cfg.d, l=cfg.l, A=A).sample(n_inputs, streams.generator(StreamRole.DATA))
    base = network_forward_batch(inputs, theta, cfg)
    allowed = mask.flatten()
    direction = streams.generator(StreamRole.PERTURBATION).uniform(-1.0, 1.0, size=allowed.size) * allowed
    flat = theta.flatten()

    rows: List[PerturbationRow] = []
    reference: Optional[Tuple[float, float]] = None
    for eps in eps_grid:
        perturbed = theta.with_flat(flat + eps * direction)
        deviation = float(np.max(np.abs(network_forward_batch(inputs, perturbed, cfg) - base)))
        if eps == 0.0:
            rows.append(PerturbationRow(eps=eps, max_deviation=deviation, within_envelope=deviation == 0.0))
            continue
        ratio = deviation / eps
        if reference is None:
            reference = (eps, ratio)
            within = True
        else:
            within = deviation <= 2.0 * reference[1] * eps
        rows.append(PerturbationRow(eps=eps, max_deviation=deviation, ratio=ratio, within_envelope=within))
    return rows


class ThetaSampler(Protocol):
    def sample(self, rng: np.random.Generator) -> NetworkParams:
        ...


class BallThetaSampler:
    """Uniform draws from the ball of radius ``radius`` around theta0 over the mask-allowed coordinates."""

    def __init__(self, theta0: NetworkParams, mask: SparsityMask, radius: float):
        mask.check_matches(theta0)
        self.theta0 = theta0
        self.allowed = mask.flatten()
        self.radius = radius

    def sample(self, rng: np.random.Generator) -> NetworkParams:
        dim = int(self.allowed.sum())
        direction = np.zeros(self.allowed.size)
        if dim:
            gaussian = rng.standard_normal(dim)
            scale = self.radius * rng.uniform() ** (1.0 / dim) / np.linalg.norm(gaussian)
            direction[self.allowed] = gaussian * scale
        return self.theta0.with_flat(self.theta0.flatten() + direction)


def estimate_rademacher(
    inputs: np.ndarray, sampler: ThetaSampler, n_signs: int, n_thetas: int, seed: int, cfg: ModelConfig,
    radius: float = 0.0,
) -> RademacherReport:
    """
    Sampling lower bound of E sup_theta |(1/n) sum_i eps_i T_beta(f_theta(X_i))|:
    the sup is replaced by a max over n_thetas sampled networks
    """
    if n_signs < 1 or n_thetas < 1:
        raise PreconditionError("n_signs and n_thetas must be at least 1")
    inputs = np.asarray(inputs, dtype=np.float64)
    n = inputs.shape[0]
    streams = RandomStreams(seed)
    outputs = np.stack([
        truncate(network_forward_batch(inputs, sampler.sample(streams.generator(StreamRole.THETAS, t)), cfg), cfg.beta)
        for t in range(n_thetas)
    ])
    signs = streams.generator(StreamRole.SIGNS).choice((-1.0, 1.0), size=(n_signs, n))
    correlations = np.abs(np.matmul(signs, outputs.T)) / n
    estimate = float(np.mean(np.max(correlations, axis=1)))
    return RademacherReport(estimate=estimate, n=n, n_signs=n_signs, n_thetas=n_thetas, radius=radius)
