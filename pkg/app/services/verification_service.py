"""
Certificate checks for the constructive builders and the optimization diagnostics
"""
import logging
import traceback
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..core.exceptions import PreconditionError
from ..core.rng import RandomStreams, StreamRole
from ..models.construction import SelectionCertificate, ProductTermSpec, SplineBasisSpec
from ..models.experiment import CheckResult, UniformSampler, VerificationReport
from ..models.hierarchical import HierarchicalModelSpec, Leaf, Node, flatten_inputs
from ..models.initialization import InitConfig
from ..models.network import AttentionHead, ModelConfig, zero_head
from ..models.training import ConvexToyProblem, LabeledDataset
from .approximator_service import build_hierarchical_approximator, fitted_composition
from .construction_service import (
    build_ffn_gadget, build_selection_head, build_logit_head, build_spline_product_encoder,
    selection_threshold, logit_coefficients, measure_encoder_error, perturb_head, validation_grid,
)
from .initialization_service import init_mixture, init_pattern_violations
from .optimizer_service import gd_convex_bound_check, outer_gradient_bound_check, project_outer
from .oracle_service import (
    excess_misclassification, minimal_logistic_risk, surrogate_diagnostics, surrogate_excess,
)
from .transformer_service import attention_batch, encode_batch, ffn_batch, final_net_batch, run_layers

logger = logging.getLogger(__name__)

VERIFY_SEED = 7
SELECTION_CONFIG = ModelConfig(d=2, l=3, h=2, I=10, d_ff=4, N=1, J=2, beta=1.0)
SPLINE_CONFIG = ModelConfig(d=1, l=2, h=4, I=8, d_ff=6, N=5, J=2, beta=1.0)
HIERARCHICAL_CONFIG = ModelConfig(d=1, l=1, h=8, I=8, d_ff=14, N=7, J=2, beta=1.0)
LOGIT_GRIDS = (6, 16, 64)
ROBUSTNESS_FRACTIONS = (0.0, 0.5, 1.0)


def _check(suite: str, name: str, passed: bool, **details) -> CheckResult:
    return CheckResult(suite=suite, name=name, passed=bool(passed), details=details)


def _selection_pattern(
    head: AttentionHead, cfg: ModelConfig, z: np.ndarray, s0: int, j: int, k: Optional[int],
) -> bool:
    heads = [zero_head(cfg) for _ in range(cfg.h)]
    heads[s0] = head
    _, selected = attention_batch(z, heads)
    ok = bool(np.all(selected[:, s0, 0] == j))
    if cfg.l > 1:
        ok = ok and bool(np.all(selected[:, s0, 1:] == k))
    return ok


def _default_other_token(cfg: ModelConfig, j: int, k: Optional[int]) -> Optional[int]:
    if k is None and cfg.l > 1:
        return 0 if j != 0 else 1
    return k


def perturb_inputs(z: np.ndarray, delta: float, cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Add uniform[-delta, delta] noise to every component outside the input encoding;
    the x, ones and position rows stay exact
    """
    noisy = z.copy()
    tail = noisy[..., cfg.encoding_width:]
    tail += rng.uniform(-delta, delta, size=tail.shape)
    return noisy


def check_selection_head(
    head: AttentionHead, reference: AttentionHead, certificate: SelectionCertificate, cfg: ModelConfig,
    inputs: np.ndarray, s0: int, j: int, k: Optional[int] = None,
) -> CheckResult:
    """
    Argmax pattern of a deployed selection head, accepted only while the head stays within
    the certified weight noise of its reference (same zero pattern, entries within admissible_eps)
    """
    k = _default_other_token(cfg, j, k)
    deviation = max(
        float(np.max(np.abs(getattr(head, name) - getattr(reference, name))))
        for name in ("w_query", "w_key", "w_value")
    )
    same_pattern = all(
        np.array_equal(getattr(head, name) != 0, getattr(reference, name) != 0)
        for name in ("w_query", "w_key", "w_value")
    )
    compliant = same_pattern and deviation <= certificate.admissible_eps
    pattern = _selection_pattern(head, cfg, encode_batch(inputs, cfg), s0, j, k)
    return _check(
        "selection_head", "argmax_pattern", compliant and pattern,
        argmax_pattern=pattern, within_certificate=compliant, max_weight_deviation=deviation,
        admissible_eps=certificate.admissible_eps,
    )


def check_selection_robustness(
    head: AttentionHead, certificate: SelectionCertificate, cfg: ModelConfig, z0: np.ndarray,
    s0: int, j: int, rng: np.random.Generator, k: Optional[int] = None, draws: int = 3,
) -> CheckResult:
    """
    Argmax pattern of a selection head on encoded states z0 (n, l, d_model) under weight
    noise eps and input noise delta, each swept over 0, 1/2 and 1 times its certified bound
    """
    bound = float(np.max(np.abs(z0)))
    if bound > certificate.input_bound:
        raise PreconditionError(f"States reach {bound:.4g}, above the certified input bound {certificate.input_bound:.4g}")
    k = _default_other_token(cfg, j, k)
    failures = []
    for eps_fraction in ROBUSTNESS_FRACTIONS:
        for delta_fraction in ROBUSTNESS_FRACTIONS:
            eps = eps_fraction * certificate.admissible_eps
            delta = delta_fraction * certificate.delta_bound
            for _ in range(draws):
                noisy_head = perturb_head(head, eps, rng)
                noisy_states = perturb_inputs(z0, delta, cfg, rng)
                if not _selection_pattern(noisy_head, cfg, noisy_states, s0, j, k):
                    failures.append({"eps": eps, "delta": delta})
    return _check(
        "selection_head", "argmax_under_admissible_noise", not failures,
        admissible_eps=certificate.admissible_eps, delta_bound=certificate.delta_bound,
        inputs=int(z0.shape[0]), failures=failures[:5],
    )


def _selection_head_suite(seed: int) -> List[CheckResult]:
    cfg = SELECTION_CONFIG
    s0, s1, s2, j, beta = 1, 0, 1, 2, 0.5
    s3 = cfg.accumulator_index(s0)
    streams = RandomStreams(seed)
    validation = streams.generator(StreamRole.VALIDATION)
    inputs = UniformSampler(d=cfg.d, l=cfg.l).sample(100, validation)
    threshold_head, certificate = build_selection_head(
        cfg, s0=s0, s1=s1, s2=s2, j=j, s3=s3, beta=beta, B=selection_threshold(cfg, beta, input_bound=1.0),
    )
    checks = [check_selection_head(threshold_head, threshold_head, certificate, cfg, inputs, s0, j)]

    heads = [zero_head(cfg) for _ in range(cfg.h)]
    heads[s0] = threshold_head
    z = encode_batch(inputs, cfg)
    y, _ = attention_batch(z, heads)
    expected = z[:, 0, s1] * (beta + z[:, j, s2])
    value_error = float(np.max(np.abs(y[:, 0, s3] - z[:, 0, s3] - expected)))
    others = float(np.max(np.abs(y[:, 1:, :] - z[:, 1:, :]))) if cfg.l > 1 else 0.0
    checks.append(_check(
        "selection_head", "attention_value", value_error <= 1e-12 and others == 0.0,
        value_error=value_error, other_tokens_change=others,
    ))

    # Key reads a stored component, which carries the input noise
    delta = 2.0
    robust_head, robust_certificate = build_selection_head(
        cfg, s0=s0, s1=s1, s2=cfg.stored_index(0), j=j, s3=s3, beta=beta,
        B=selection_threshold(cfg, beta, input_bound=1.0, delta=delta), delta=delta,
    )
    z0 = z.copy()
    z0[..., cfg.encoding_width:] = validation.uniform(-1.0, 1.0, size=z0[..., cfg.encoding_width:].shape)
    checks.append(check_selection_robustness(
        robust_head, robust_certificate, cfg, z0, s0, j, streams.generator(StreamRole.PERTURBATION),
    ))
    return checks


def _ffn_gadget_suite(seed: int) -> List[CheckResult]:
    cfg = SELECTION_CONFIG
    j1, j2, alpha = cfg.encoding_width, cfg.encoding_width + 2, 1.7
    y = RandomStreams(seed).generator(StreamRole.VALIDATION).uniform(-2.0, 2.0, size=(50, cfg.l, cfg.d_model))
    checks = []
    for variant in ("relu", "identity"):
        out = ffn_batch(y, build_ffn_gadget(cfg, j1, j2, alpha, variant=variant))
        source = y[..., j2] if variant == "identity" else np.maximum(y[..., j2], 0.0)
        untouched = np.delete(np.arange(cfg.d_model), [j1, j2])
        error = max(
            float(np.max(np.abs(out[..., j1] - alpha * source))),
            float(np.max(np.abs(out[..., j2]))),
            float(np.max(np.abs(out[..., untouched] - y[..., untouched]))),
        )
        checks.append(_check("ffn_gadget", f"{variant}_gadget", error <= 1e-12, max_error=error))
    return checks


def _spline_suite(seed: int) -> List[CheckResult]:
    cfg = SPLINE_CONFIG
    basis = SplineBasisSpec(degree=2, knots=[0.0], A=1.0)
    terms = ProductTermSpec(alphas=[0.5, -1.25, 2.0], exponents=[[1, 2], [3, 1], [0, 0]])
    target = cfg.stored_index(0)
    layers, certificate = build_spline_product_encoder(cfg, basis, terms, target)
    inputs = UniformSampler(d=cfg.d, l=cfg.l).sample(100, RandomStreams(seed).generator(StreamRole.VALIDATION))
    error = measure_encoder_error(cfg, layers, basis, terms, target, inputs)
    expected_layers = basis.degree * cfg.n_inputs + 1
    violations = init_pattern_violations(layers, cfg)
    return [
        _check("spline", "matches_basis_products", error <= 1e-6, max_error=error),
        _check(
            "spline", "layer_count", len(layers) == expected_layers == certificate.n_layers,
            layers=len(layers), expected=expected_layers,
        ),
        _check("spline", "fits_init_pattern", not violations, violations=violations[:5]),
    ]


def _hierarchical_suite(seed: int) -> List[CheckResult]:
    cfg = HIERARCHICAL_CONFIG
    spec = HierarchicalModelSpec(root=Node(function="square", children=[Node(function="sine", children=[Leaf(coordinate=0)])]))
    params, certificate = build_hierarchical_approximator(spec, cfg.h, cfg)
    inputs = validation_grid(cfg, spec.A)
    readout = run_layers(inputs, params.layers, cfg)[:, 0, cfg.readout_index]
    composed = fitted_composition(spec, cfg.h)(flatten_inputs(inputs))
    realization = float(np.max(np.abs(readout - composed)))

    inner, outer = certificate.nodes
    propagated = outer.lipschitz * inner.network_error + outer.fit_error
    violations = init_pattern_violations(params.layers, cfg)
    return [
        _check("hierarchical", "realizes_fitted_splines", realization <= 1e-6, max_error=realization),
        _check(
            "hierarchical", "error_propagation", certificate.measured_sup_error <= propagated + 1e-9,
            measured=certificate.measured_sup_error, propagated=propagated,
        ),
        _check(
            "hierarchical", "bound_covers_values", float(np.max(np.abs(readout))) <= certificate.bound + 1.0,
            bound=certificate.bound,
        ),
        _check("hierarchical", "fits_init_pattern", not violations, violations=violations[:5]),
    ]


def _logit_head_suite(seed: int) -> List[CheckResult]:
    checks = []
    for K in LOGIT_GRIDS:
        final = build_logit_head(K)
        grid = np.arange(K + 1) / K
        expected = logit_coefficients(K)[1:K + 2]
        interpolation = float(np.max(np.abs(final_net_batch(grid, final) - expected)))
        outside = np.concatenate([np.linspace(-1.0, -2.0 / K, 200), np.linspace(1.0 + 2.0 / K, 2.0, 200)])
        leakage = float(np.max(np.abs(final_net_batch(outside, final))))
        sweep = float(np.max(np.abs(final_net_batch(np.linspace(-1.0, 2.0, 10_000), final))))
        weight_bound = max(float(np.max(np.abs(a))) for a in (final.v1, final.v0_slope, final.v0_bias))
        checks.extend([
            _check("logit_head", f"interpolation_K{K}", interpolation <= 1e-9, max_error=interpolation),
            _check("logit_head", f"zero_outside_K{K}", leakage <= 1e-8, max_value=leakage),
            _check("logit_head", f"sup_bound_K{K}", sweep <= np.log(K) + 1e-9, sup=sweep, bound=float(np.log(K))),
            _check(
                "logit_head", f"structure_K{K}", final.v1.shape[0] == 3 * K + 9 and weight_bound <= K,
                neurons=int(final.v1.shape[0]), max_weight=weight_bound,
            ),
        ])
    return checks


def _random_toy(rng: np.random.Generator, domain: str, dim: int = 3, t_n: int = 100) -> ConvexToyProblem:
    g = rng.standard_normal((dim, dim))
    a = rng.normal(0.0, 0.3, size=dim)
    drift = np.cumsum(rng.normal(0.0, 0.01, size=(t_n + 1, dim)), axis=0)
    if domain == "ball":
        start, star = rng.uniform(-1.0, 1.0, size=(2, dim)) / np.sqrt(dim)
    else:
        start, star = (project_outer(rng.uniform(-0.5, 1.0, size=dim)).w for _ in range(2))
    return ConvexToyProblem(
        q=g @ g.T / dim, a=a, drift=drift, u0=start, u_star=star, domain=domain, radius=1.0, t_n=t_n,
    )


def _gd_bound_suite(seed: int) -> List[CheckResult]:
    rng = RandomStreams(seed).generator(StreamRole.VALIDATION)
    slacks = []
    for trial in range(20):
        report = gd_convex_bound_check(_random_toy(rng, "ball" if trial % 2 == 0 else "simplex"))
        slacks.append(report.slack)
    return [_check("gd_bound", "convex_toys", min(slacks) >= -1e-12, min_slack=float(min(slacks)), toys=len(slacks))]


def _outer_gradient_suite(seed: int) -> List[CheckResult]:
    cfg = ModelConfig(d=1, l=2, h=2, I=7, d_ff=4, N=1, J=2, beta=2.0, K=3)
    streams = RandomStreams(seed)
    rng = streams.generator(StreamRole.VALIDATION)
    thetas, _ = init_mixture(cfg, InitConfig(tau=cfg.l + 1, c4=0.5, c5=0.1, n=20), streams.child(StreamRole.THETAS))
    data = LabeledDataset(
        inputs=rng.uniform(-1.0, 1.0, size=(20, cfg.d, cfg.l)), labels=rng.choice((-1.0, 1.0), size=20),
    )
    states = [project_outer(rng.uniform(-0.5, 1.0, size=cfg.K)) for _ in range(200)]
    report = outer_gradient_bound_check(states, thetas, data, cfg)
    return [_check("outer_gradient", "norm_bound", report.holds, largest=report.lhs, limit=report.rhs)]


def _surrogate_suite(seed: int) -> List[CheckResult]:
    spec = HierarchicalModelSpec(root=Node(function="sigmoid", children=[Leaf(coordinate=0)]))
    sampler = UniformSampler(d=1, l=1)
    flipped = lambda inputs: -4.0 * inputs[:, 0, 0]  # noqa: E731
    n_mc = 20_000
    excess, excess_se = excess_misclassification(flipped, spec, sampler, n_mc, seed)
    surrogate, surrogate_se = surrogate_excess(flipped, spec, sampler, n_mc, seed)
    risk_star, _ = minimal_logistic_risk(spec, sampler, n_mc, seed)
    diagnostics = surrogate_diagnostics(excess, surrogate, risk_star, tolerance=3.0 * (excess_se + surrogate_se))
    return [
        _check("surrogate", "square_root_form", diagnostics["holds_a"] and diagnostics["holds_calibration"], **diagnostics),
        _check("surrogate", "linear_form", diagnostics["holds_b"], **diagnostics),
    ]


SUITES: Dict[str, Callable[[int], List[CheckResult]]] = {
    "selection_head": _selection_head_suite,
    "ffn_gadget": _ffn_gadget_suite,
    "spline": _spline_suite,
    "hierarchical": _hierarchical_suite,
    "logit_head": _logit_head_suite,
    "gd_bound": _gd_bound_suite,
    "outer_gradient": _outer_gradient_suite,
    "surrogate": _surrogate_suite,
}


def verify_constructions(suites: Optional[Sequence[str]] = None, seed: int = VERIFY_SEED) -> VerificationReport:
    """
    Run the selected check suites (all when ``suites`` is None); a failing suite is recorded, not raised
    """
    selected = list(SUITES) if suites is None else list(suites)
    unknown = [name for name in selected if name not in SUITES]
    if unknown:
        raise PreconditionError(f"Unknown verification suites {unknown}, expected a subset of {list(SUITES)}")

    report = VerificationReport()
    for name in selected:
        try:
            report.checks.extend(SUITES[name](seed))
        except Exception as e:
            logger.error(f"Verification suite {name} raised: {e}")
            logger.error(traceback.format_exc())
            report.checks.append(_check(name, "suite_error", False, error=f"{type(e).__name__}: {e}"))
    logger.info(f"Verification: {len(report.checks) - len(report.failures())}/{len(report.checks)} checks passed")
    return report
