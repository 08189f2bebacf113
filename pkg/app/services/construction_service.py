"""
Explicit weight builders: hard-max selection heads, FFN gadgets,
spline-product encoders and the logit output head
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logit

from ..core.exceptions import ConstructionError, PreconditionError, ThresholdError
from ..models.construction import (
    SelectionCertificate, ProductTermSpec, SplineBasisSpec, SplineEncoderCertificate,
)
from ..models.experiment import GridSpec
from ..models.hierarchical import flatten_inputs, unflatten_inputs
from ..models.network import (
    AttentionHead, FfnWeights, FinalNetWeights, LayerWeights, ModelConfig, zero_ffn, zero_head,
)
from .oracle_service import eval_product_terms
from .transformer_service import apply_layer, encode_batch

logger = logging.getLogger(__name__)

# Safety factor applied to the measured argmax threshold when scheduling B
B_SAFETY_FACTOR = 4.0
MAX_VALIDATION_POINTS = 2000


def selection_tau(cfg: ModelConfig) -> int:
    return cfg.l + cfg.d + 1


def selection_threshold(cfg: ModelConfig, beta: float, input_bound: float, delta: float = 0.0) -> float:
    """Smallest admissible B for inputs with sup-norm input_bound and input noise delta."""
    tau = selection_tau(cfg)
    return (
        168.0 * cfg.d_key * tau ** 2 * cfg.l * (abs(beta) + 1.0)
        * input_bound ** 2 * max(delta ** 2, 1.0)
    )


def selection_admissible_eps(cfg: ModelConfig, input_bound: float) -> float:
    return min(1.0, 1.0 / (36.0 * selection_tau(cfg) * input_bound ** 2))


def build_selection_head(
    cfg: ModelConfig, s0: int, s1: int, s2: int, j: int, s3: int, beta: float, B: float,
    k: Optional[int] = None, input_bound: float = 1.0, delta: float = 0.0,
) -> Tuple[AttentionHead, SelectionCertificate]:
    """
    Head s0 whose token 0 selects token j and writes z^(s1)_0 * (beta + z^(s2)_j)
    into component s3; every other token selects k and receives nothing
    """
    if not 1 <= s0 < cfg.h:
        raise ConstructionError(f"Head index must lie in 1..{cfg.h - 1} (head 0 has no query/key weights), got {s0}")
    for name, component in (("s1", s1), ("s2", s2)):
        if not 0 <= component < cfg.d_model:
            raise ConstructionError(f"{name}={component} outside 0..{cfg.d_model - 1}")
    if not s0 * cfg.I <= s3 < (s0 + 1) * cfg.I:
        raise ConstructionError(f"s3={s3} is not in the value slab of head {s0}")
    if not 0 <= j < cfg.l:
        raise ConstructionError(f"Token index j={j} outside 0..{cfg.l - 1}")
    if k is None and cfg.l > 1:
        k = 0 if j != 0 else 1
    if cfg.l > 1 and (k == j or not 0 <= k < cfg.l):
        raise ConstructionError(f"Token index k={k} must differ from j={j} and lie in 0..{cfg.l - 1}")
    if input_bound < 1.0:
        raise PreconditionError("The encoded input always contains a ones row, so input_bound must be >= 1")

    threshold = selection_threshold(cfg, beta, input_bound, delta)
    if B < threshold:
        raise ThresholdError(f"B={B:.6g} is below the argmax threshold {threshold:.6g}", threshold=threshold)

    dk = cfg.d_key
    wq = np.zeros((dk, cfg.d_model))
    wk = np.zeros((dk, cfg.d_model))
    wv = np.zeros((cfg.d_v, cfg.d_model))

    wq[0, s1] = 1.0
    wq[dk - 2, cfg.ones_index] = -B
    wk[0, cfg.ones_index] = beta
    wk[0, s2] += 1.0
    for t in range(cfg.l):
        if t != 0:
            wq[dk - 1, cfg.position_index(t)] = 1.0
        if t != j:
            wk[dk - 2, cfg.position_index(t)] = 1.0
    if cfg.l > 1:
        wk[dk - 1, cfg.position_index(k)] = 2.0 * B
    wv[s3 - s0 * cfg.I, cfg.position_index(j)] = 1.0

    certificate = SelectionCertificate(
        B=B, beta=beta, threshold=threshold,
        admissible_eps=selection_admissible_eps(cfg, input_bound),
        input_bound=input_bound, delta_bound=delta,
        tau=selection_tau(cfg), d_key=dk, l=cfg.l,
    )
    return AttentionHead(w_query=wq, w_key=wk, w_value=wv), certificate


def perturb_head(head: AttentionHead, eps: float, rng: np.random.Generator) -> AttentionHead:
    """
    Add uniform[-eps, eps] noise to the nonzero entries only, keeping the row sparsity
    """
    def noisy(matrix: np.ndarray) -> np.ndarray:
        noise = rng.uniform(-eps, eps, size=matrix.shape)
        return np.where(matrix != 0, matrix + noise, 0.0)

    return AttentionHead(w_query=noisy(head.w_query), w_key=noisy(head.w_key), w_value=noisy(head.w_value))


def build_ffn_gadget(
    cfg: ModelConfig, j1: int, j2: int, alpha: float, variant: str = "relu", first_neuron: int = 0,
) -> FfnWeights:
    """
    FFN setting component j1 to alpha * relu(y^(j2)) (or alpha * y^(j2) for the identity
    variant) and component j2 to zero, leaving every other component unchanged
    """
    if variant not in ("relu", "identity"):
        raise ConstructionError(f"Unknown FFN gadget variant '{variant}'")
    if j1 == j2:
        raise ConstructionError("j1 and j2 must be distinct")
    if cfg.d_ff < first_neuron + 4:
        raise ConstructionError(f"The gadget needs 4 hidden neurons, d_ff={cfg.d_ff}")
    for name, component in (("j1", j1), ("j2", j2)):
        if not cfg.encoding_width <= component < cfg.d_model:
            raise ConstructionError(
                f"{name}={component} must lie in {cfg.encoding_width}..{cfg.d_model - 1} (encoding rows are protected)"
            )

    ffn = zero_ffn(cfg)
    w1, w2 = ffn.w1, ffn.w2
    n = first_neuron
    w1[n, j1] = 1.0
    w1[n + 1, j1] = -1.0
    w1[n + 2, j2] = 1.0
    w1[n + 3, j2] = -1.0
    w2[j1, n] = -1.0
    w2[j1, n + 1] = 1.0
    w2[j1, n + 2] = alpha
    if variant == "identity":
        w2[j1, n + 3] = -alpha
    w2[j2, n + 2] = -1.0
    w2[j2, n + 3] = 1.0
    return ffn


def default_sources(cfg: ModelConfig) -> List[Tuple[int, int]]:
    return [cfg.coordinate_source(c) for c in range(cfg.n_inputs)]


def validation_grid(cfg: ModelConfig, bound: float) -> np.ndarray:
    """Tensor grid over [-bound, bound]^(d*l) as a batch (n, d, l)."""
    dim = cfg.n_inputs
    count = int(min(41, max(2, np.floor(MAX_VALIDATION_POINTS ** (1.0 / dim)))))
    return unflatten_inputs(GridSpec.cube(dim, count, bound).points(), cfg.d, cfg.l)


def _term_factors(exponents: Sequence[int], basis: SplineBasisSpec, sources) -> List[Tuple[Tuple[int, int], float, bool]]:
    """Factors (source, shift, needs_relu) of one product term; truncated-power factors come first."""
    relu_factors, linear_factors = [], []
    M = basis.degree
    for variable, j in enumerate(exponents):
        if j == 0:
            continue
        if j <= M:
            linear_factors.extend([(sources[variable], 0.0, False)] * j)
        else:
            knot = basis.knots[j - M - 1]
            relu_factors.extend([(sources[variable], -knot, True)] * M)
    return relu_factors + linear_factors


def build_spline_product_encoder(
    cfg: ModelConfig, basis: SplineBasisSpec, terms: ProductTermSpec, target: int,
    sources: Optional[Sequence[Tuple[int, int]]] = None,
    validation_states: Optional[np.ndarray] = None,
) -> Tuple[List[LayerWeights], SplineEncoderCertificate]:
    """
    Layer pairs computing sum_s alpha_s prod_k B_{j_{s,k}}(x^(k)) into component ``target`` of token 0.

    Head s (1..T) accumulates term s-1 factor by factor in its accumulator
    component; the last pair adds the alpha-weighted accumulators into
    ``target`` and resets them. ``sources`` maps each variable to the
    (token, component) carrying it, by default the d*l input coordinates.
    B is scheduled per layer from the sup-norm of ``validation_states``.
    """
    sources = list(sources) if sources is not None else default_sources(cfg)
    M = basis.degree
    if M < 1:
        raise ConstructionError("The encoder needs spline degree M >= 1")
    try:
        terms.check_basis(basis, len(sources))
    except ValueError as e:
        raise ConstructionError(str(e))
    if terms.n_terms > cfg.h - 1:
        raise ConstructionError(f"{terms.n_terms} terms need {terms.n_terms + 1} heads, h={cfg.h}")
    if cfg.d_ff < max(2 * terms.n_terms, 1):
        raise ConstructionError(f"The summation layer needs d_ff >= {2 * terms.n_terms}, got {cfg.d_ff}")
    if not cfg.stored_index(0) <= target < cfg.I:
        raise ConstructionError(f"Target component must lie in {cfg.stored_index(0)}..{cfg.I - 1}, got {target}")

    if validation_states is None:
        validation_states = encode_batch(validation_grid(cfg, basis.A), cfg)
    states = validation_states

    n_factor_layers = M * len(sources)
    factors = [_term_factors(row, basis, sources) for row in terms.exponents]
    layers: List[LayerWeights] = []
    B_schedule: List[float] = []
    error_growth: List[float] = []
    admissible = 1.0
    component_map = {f"term_{t}": cfg.accumulator_index(t + 1) for t in range(terms.n_terms)}

    for r in range(n_factor_layers):
        input_bound = max(1.0, float(np.max(np.abs(states))))
        heads = [zero_head(cfg) for _ in range(cfg.h)]
        ffn = zero_ffn(cfg)
        B = 0.0
        for t, term_factors in enumerate(factors):
            s = t + 1
            acc = cfg.accumulator_index(s)
            if r >= len(term_factors) and not (r == 0 and not term_factors):
                continue
            if not term_factors:
                s1, s2, token, beta, needs_relu = cfg.ones_index, cfg.scratch_index(s), 0, 1.0, False
            else:
                (token, component), shift, needs_relu = term_factors[r]
                s2 = component
                if r == 0:
                    s1, beta = cfg.ones_index, shift
                else:
                    s1, beta = acc, shift - 1.0
            head_B = B_SAFETY_FACTOR * selection_threshold(cfg, beta, input_bound)
            B = max(B, head_B)
            heads[s], certificate = build_selection_head(
                cfg, s0=s, s1=s1, s2=s2, j=token, s3=acc, beta=beta, B=head_B, input_bound=input_bound,
            )
            admissible = min(admissible, certificate.admissible_eps)
            error_growth.append(certificate.predicted_error(certificate.admissible_eps, 0.0))
            if needs_relu:
                # acc + relu(-acc) = relu(acc)
                ffn.w1[t, acc] = -1.0
                ffn.w2[acc, t] = 1.0
        layer = LayerWeights(heads=heads, ffn=ffn)
        layers.append(layer)
        B_schedule.append(B)
        states = apply_layer(states, layer)

    ffn = zero_ffn(cfg)
    for t, alpha in enumerate(terms.alphas):
        acc = cfg.accumulator_index(t + 1)
        a, b = 2 * t, 2 * t + 1
        ffn.w1[a, acc] = 1.0
        ffn.w1[b, acc] = -1.0
        ffn.w2[target, a] = alpha
        ffn.w2[target, b] = -alpha
        ffn.w2[acc, a] = -1.0
        ffn.w2[acc, b] = 1.0
    layers.append(LayerWeights(heads=[zero_head(cfg) for _ in range(cfg.h)], ffn=ffn))
    B_schedule.append(0.0)
    component_map["target"] = target

    logger.info(f"Built spline encoder: {len(layers)} layers, {terms.n_terms} terms, B up to {max(B_schedule):.4g}")
    return layers, SplineEncoderCertificate(
        admissible_eps=admissible, component_map=component_map,
        B_schedule=B_schedule, error_growth=error_growth, n_layers=len(layers),
    )


def measure_encoder_error(
    cfg: ModelConfig, layers: Sequence[LayerWeights], basis: SplineBasisSpec, terms: ProductTermSpec,
    target: int, inputs: np.ndarray,
) -> float:
    """Sup deviation of the encoder's target component from the basis-product oracle on inputs (n, d, l)."""
    z = encode_batch(inputs, cfg)
    for layer in layers:
        z = apply_layer(z, layer)
    expected = eval_product_terms(flatten_inputs(inputs), basis, terms)
    return float(np.max(np.abs(z[:, 0, target] - expected)))


def logit_coefficients(Kgrid: int) -> np.ndarray:
    """a_{-1}..a_{K+1}: logit(k/K) inside, clamped to logit(1/K) and logit(1 - 1/K) at the ends."""
    k = np.arange(-1, Kgrid + 2)
    inner = np.clip(k, 1, Kgrid - 1) / Kgrid
    return logit(inner)


def build_logit_head(Kgrid: int) -> FinalNetWeights:
    """
    One-hidden-layer net with 3K+9 neurons interpolating the logit at k/K by hat functions.

    Each hat sigma(K(z-(k-1)/K)) - 2 sigma(K(z-k/K)) + sigma(K(z-(k+1)/K)) uses
    three neurons scaled by K/(K+2), which keeps every weight within K.
    """
    if Kgrid < 6:
        raise ConstructionError(f"Kgrid must be at least 6, got {Kgrid}")
    K = float(Kgrid)
    coefficients = logit_coefficients(Kgrid)
    v1, slope, bias = [], [], []
    for a, k in zip(coefficients, range(-1, Kgrid + 2)):
        for offset, sign in ((-1, 1.0), (0, -2.0), (1, 1.0)):
            shifted = k + offset
            slope.append(K * K / (K + 2.0))
            bias.append(-shifted * K / (K + 2.0))
            v1.append(a * sign * (K + 2.0) / K)
    return FinalNetWeights(v1=np.array(v1), v0_slope=np.array(slope), v0_bias=np.array(bias))


def pad_final(final: FinalNetWeights, J: int) -> FinalNetWeights:
    """Widen a final net to J neurons with zero weights."""
    width = final.v1.shape[0]
    if width > J:
        raise ConstructionError(f"The output head needs J >= {width}, got {J}")
    pad = J - width
    return FinalNetWeights(
        v1=np.pad(final.v1, (0, pad)), v0_slope=np.pad(final.v0_slope, (0, pad)), v0_bias=np.pad(final.v0_bias, (0, pad)),
    )


def identity_final(J: int) -> FinalNetWeights:
    """Final net computing sigma(u) - sigma(-u) = u."""
    return pad_final(
        FinalNetWeights(v1=np.array([1.0, -1.0]), v0_slope=np.array([1.0, -1.0]), v0_bias=np.zeros(2)), J
    )
