import numpy as np
import pytest
from scipy.special import logit

from app.core.exceptions import ConstructionError, ThresholdError
from app.core.rng import RandomStreams, StreamRole
from app.models.construction import ProductTermSpec, SplineBasisSpec
from app.models.experiment import UniformSampler
from app.models.hierarchical import HierarchicalModelSpec, Leaf, Node
from app.models.network import LayerWeights, ModelConfig, zero_ffn, zero_head, zero_layer
from app.services.approximator_service import build_hierarchical_approximator
from app.services.construction_service import (
    build_ffn_gadget, build_logit_head, build_selection_head, build_spline_product_encoder,
    identity_final, logit_coefficients, measure_encoder_error, pad_final, selection_admissible_eps,
    selection_threshold,
)
from app.services.initialization_service import init_network, init_pattern_violations
from app.services.transformer_service import attention_batch, encode_batch, ffn_batch, final_net_batch

selection_config = ModelConfig(d=2, l=3, h=2, I=10, d_ff=4, N=1, J=2, beta=1.0)
encoder_config = ModelConfig(d=1, l=3, h=4, I=9, d_ff=6, N=4, J=2, beta=1.0)

# Three terms over (x0, x1, x2): (x0 + 0.5)_+ * x1 * (x2 - 0.5)_+, x0 and a constant
sample_basis = SplineBasisSpec(degree=1, knots=[-0.5, 0.5], A=1.0)
sample_terms = ProductTermSpec(alphas=[0.7, -1.1, 0.4], exponents=[[2, 1, 3], [1, 0, 0], [0, 0, 0]])


def selection_inputs(n: int = 200) -> np.ndarray:
    rng = RandomStreams(31).generator(StreamRole.VALIDATION)
    return UniformSampler(d=selection_config.d, l=selection_config.l).sample(n, rng)


def run_head(head, cfg, inputs, s0):
    heads = [zero_head(cfg) for _ in range(cfg.h)]
    heads[s0] = head
    z = encode_batch(inputs, cfg)
    y, selected = attention_batch(z, heads)
    return z, y, selected


def test_selection_threshold_value():
    """Test the argmax threshold and the admissible weight noise for d=2, l=3, d_key=4"""
    assert selection_threshold(selection_config, 0.5, input_bound=1.0) == 108864.0
    assert selection_admissible_eps(selection_config, 1.0) == pytest.approx(1.0 / 216.0)


@pytest.mark.parametrize("j,s2,beta", [(2, 1, 0.5), (0, 0, -1.0), (1, 2, 2.0)])
def test_selection_head_selects_and_writes(j, s2, beta):
    """Test the argmax pattern and the written value of a selection head"""
    cfg = selection_config
    s0, s1 = 1, 0
    s3 = cfg.accumulator_index(s0)
    B = selection_threshold(cfg, beta, input_bound=1.0)
    head, certificate = build_selection_head(cfg, s0=s0, s1=s1, s2=s2, j=j, s3=s3, beta=beta, B=B)
    assert certificate.threshold == B
    assert certificate.tau == cfg.l + cfg.d + 1

    z, y, selected = run_head(head, cfg, selection_inputs(), s0)
    k = 0 if j != 0 else 1
    assert np.all(selected[:, s0, 0] == j)
    assert np.all(selected[:, s0, 1:] == k)
    expected = z[:, 0, s1] * (beta + z[:, j, s2])
    assert np.max(np.abs(y[:, 0, s3] - expected)) <= 1e-12
    assert np.array_equal(y[:, 1:, :], z[:, 1:, :])
    untouched = np.delete(np.arange(cfg.d_model), s3)
    assert np.array_equal(y[:, 0, untouched], z[:, 0, untouched])


def test_selection_head_below_threshold():
    """Test that a separation constant below the threshold is rejected"""
    cfg = selection_config
    threshold = selection_threshold(cfg, 0.5, input_bound=1.0)
    with pytest.raises(ThresholdError) as error:
        build_selection_head(cfg, s0=1, s1=0, s2=1, j=2, s3=cfg.accumulator_index(1), beta=0.5, B=0.5 * threshold)
    assert error.value.threshold == threshold


def test_selection_head_index_checks():
    """Test that head 0, foreign value slabs and equal tokens are rejected"""
    cfg = selection_config
    B = selection_threshold(cfg, 1.0, input_bound=1.0)
    with pytest.raises(ConstructionError):
        build_selection_head(cfg, s0=0, s1=0, s2=1, j=1, s3=cfg.accumulator_index(0), beta=1.0, B=B)
    with pytest.raises(ConstructionError):
        build_selection_head(cfg, s0=1, s1=0, s2=1, j=1, s3=cfg.accumulator_index(0), beta=1.0, B=B)
    with pytest.raises(ConstructionError):
        build_selection_head(cfg, s0=1, s1=0, s2=1, j=1, s3=cfg.accumulator_index(1), beta=1.0, B=B, k=1)


@pytest.mark.parametrize("variant", ["relu", "identity"])
def test_ffn_gadget(variant, rng):
    """Test that the gadget moves alpha * sigma(y_j2) into j1 and clears j2"""
    cfg = selection_config
    j1, j2, alpha = cfg.encoding_width + 1, cfg.encoding_width + 3, -0.6
    y = rng.uniform(-2.0, 2.0, size=(30, cfg.l, cfg.d_model))
    out = ffn_batch(y, build_ffn_gadget(cfg, j1, j2, alpha, variant=variant))
    source = y[..., j2] if variant == "identity" else np.maximum(y[..., j2], 0.0)
    assert np.max(np.abs(out[..., j1] - alpha * source)) <= 1e-12
    assert np.max(np.abs(out[..., j2])) <= 1e-12
    untouched = np.delete(np.arange(cfg.d_model), [j1, j2])
    assert np.array_equal(out[..., untouched], y[..., untouched])


def test_ffn_gadget_rejects_bad_components():
    """Test that protected components, equal components and narrow FFNs are rejected"""
    cfg = selection_config
    with pytest.raises(ConstructionError):
        build_ffn_gadget(cfg, 0, cfg.encoding_width, 1.0)
    with pytest.raises(ConstructionError):
        build_ffn_gadget(cfg, cfg.encoding_width, cfg.encoding_width, 1.0)
    with pytest.raises(ConstructionError):
        build_ffn_gadget(cfg, cfg.encoding_width, cfg.encoding_width + 1, 1.0, variant="tanh")
    narrow = cfg.model_copy(update={"d_ff": 3})
    with pytest.raises(ConstructionError):
        build_ffn_gadget(narrow, cfg.encoding_width, cfg.encoding_width + 1, 1.0)


def test_spline_encoder_matches_oracle(rng):
    """Test that the encoder reproduces the basis-product sum on random inputs"""
    cfg = encoder_config
    target = cfg.stored_index(0)
    layers, certificate = build_spline_product_encoder(cfg, sample_basis, sample_terms, target)
    assert len(layers) == sample_basis.degree * cfg.n_inputs + 1 == certificate.n_layers
    assert certificate.component_map["target"] == target
    assert certificate.admissible_eps > 0
    inputs = rng.uniform(-1.0, 1.0, size=(200, cfg.d, cfg.l))
    assert measure_encoder_error(cfg, layers, sample_basis, sample_terms, target, inputs) <= 1e-6


def test_spline_encoder_rejects_oversized_requests():
    """Test the head, width, target and degree preconditions of the encoder"""
    cfg = encoder_config
    target = cfg.stored_index(0)
    four_terms = ProductTermSpec(alphas=[1.0] * 4, exponents=[[0, 0, 0]] * 4)
    with pytest.raises(ConstructionError):
        build_spline_product_encoder(cfg, sample_basis, four_terms, target)
    with pytest.raises(ConstructionError):
        build_spline_product_encoder(cfg.model_copy(update={"d_ff": 5}), sample_basis, sample_terms, target)
    with pytest.raises(ConstructionError):
        build_spline_product_encoder(cfg, sample_basis, sample_terms, cfg.readout_index)
    with pytest.raises(ConstructionError):
        build_spline_product_encoder(cfg, SplineBasisSpec(degree=0), sample_terms, target)


def test_built_weights_fit_init_mask():
    """Test that every builder only uses entries the pruned initialization can reach"""
    cfg = selection_config
    heads = [zero_head(cfg) for _ in range(cfg.h)]
    heads[1], _ = build_selection_head(
        cfg, s0=1, s1=0, s2=cfg.stored_index(0), j=2, s3=cfg.accumulator_index(1), beta=0.5,
        B=selection_threshold(cfg, 0.5, input_bound=1.0),
    )
    built = {
        "selection": (cfg, [LayerWeights(heads=heads, ffn=zero_ffn(cfg))]),
        "gadgets": (cfg, [
            LayerWeights(
                heads=[zero_head(cfg) for _ in range(cfg.h)],
                ffn=build_ffn_gadget(cfg, cfg.readout_index, cfg.stored_index(1), 1.5, variant=variant),
            )
            for variant in ("relu", "identity")
        ]),
        "encoder": (encoder_config, build_spline_product_encoder(
            encoder_config, sample_basis, sample_terms, encoder_config.stored_index(0),
        )[0]),
    }
    hierarchical_config = ModelConfig(d=1, l=1, h=8, I=8, d_ff=14, N=7, J=2, beta=1.0)
    nested = HierarchicalModelSpec(
        root=Node(function="square", children=[Node(function="sine", children=[Leaf(coordinate=0)])])
    )
    params, _ = build_hierarchical_approximator(nested, hierarchical_config.h, hierarchical_config)
    built["hierarchical"] = (hierarchical_config, params.layers)

    for name, (model_config, layers) in built.items():
        for tau in (model_config.l + 1, model_config.l + model_config.d + 1):
            assert init_pattern_violations(layers, model_config, tau=tau) == [], name


def test_init_mask_checker_flags_violations(small_config, init_config):
    """Test that the checker accepts a fresh initialization and flags weights outside its support"""
    cfg = small_config
    params, _ = init_network(cfg, init_config, RandomStreams(17))
    assert init_pattern_violations(params.layers, cfg, tau=init_config.tau) == []

    layer = zero_layer(cfg)
    layer.heads[0].w_query[0, 0] = 1.0
    layer.heads[1].w_key[-1, cfg.encoding_width] = 1.0
    layer.ffn.w1[0, : cfg.l + 2] = 1.0
    layer.ffn.w2[0, 0] = 1.0
    violations = init_pattern_violations([layer], cfg, tau=cfg.l + 1)
    assert len(violations) == 4
    assert any("head 0 w_query is nonzero" in v for v in violations)
    assert any("last two rows" in v for v in violations)
    assert any("w1 row 0" in v for v in violations)
    assert any("protected output axis" in v for v in violations)


@pytest.mark.parametrize("Kgrid", [6, 16, 64])
def test_logit_head(Kgrid):
    """Test interpolation, support, sup bound and size of the logit head"""
    final = build_logit_head(Kgrid)
    grid = np.arange(1, Kgrid) / Kgrid
    assert np.max(np.abs(final_net_batch(grid, final) - logit(grid))) <= 1e-9
    assert abs(final_net_batch(np.array([0.0]), final)[0] - logit(1.0 / Kgrid)) <= 1e-9

    outside = np.concatenate([np.linspace(-1.0, -2.0 / Kgrid, 100), np.linspace(1.0 + 2.0 / Kgrid, 2.0, 100)])
    assert np.max(np.abs(final_net_batch(outside, final))) <= 1e-8
    sweep = final_net_batch(np.linspace(-1.0, 2.0, 10_000), final)
    assert np.max(np.abs(sweep)) <= np.log(Kgrid) + 1e-9

    assert final.v1.shape == (3 * Kgrid + 9,)
    assert max(np.max(np.abs(a)) for a in (final.v1, final.v0_slope, final.v0_bias)) <= Kgrid


def test_logit_head_limits():
    """Test the grid-size and width preconditions of the output head"""
    with pytest.raises(ConstructionError):
        build_logit_head(5)
    with pytest.raises(ConstructionError):
        pad_final(build_logit_head(6), 20)
    assert pad_final(build_logit_head(6), 30).v1.shape == (30,)
    coefficients = logit_coefficients(6)
    assert coefficients[0] == coefficients[1] == coefficients[2] == logit(1.0 / 6.0)
    assert coefficients[-1] == coefficients[-2] == logit(5.0 / 6.0)
    assert identity_final(2).v1.shape == (2,)
