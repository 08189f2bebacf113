import numpy as np
import pytest

from app.core.exceptions import ShapeMismatchError
from app.models.network import (
    FinalNetWeights, MixtureState, ModelConfig, NetworkParams, zero_ffn, zero_head, zero_layer,
)
from app.services.construction_service import identity_final
from app.services.transformer_service import (
    apply_layer, classify, encode_batch, encode_input, final_net, hardmax_attention_layer,
    mixture_forward, network_forward, network_forward_batch, pointwise_ffn_layer, truncate, truncate_network,
)

# Dyadic values keep every step of the ReLU truncation exact
dyadic_values = np.arange(-4096, 4097) / 1024.0


def constant_network(cfg: ModelConfig, value: float) -> NetworkParams:
    """Network whose final net outputs ``value`` for every input."""
    params = NetworkParams.zeros(cfg)
    final = FinalNetWeights(
        v1=np.array([value] + [0.0] * (cfg.J - 1)),
        v0_slope=np.zeros(cfg.J),
        v0_bias=np.array([1.0] + [0.0] * (cfg.J - 1)),
    )
    return NetworkParams(layers=params.layers, final=final)


def test_encoding_layout(encoding_config):
    """Test the encoding of a 2 x 4 input into a 20 x 4 sequence"""
    x = np.arange(8, dtype=np.float64).reshape(2, 4) / 8.0
    z = encode_input(x, encoding_config).z

    expected = np.zeros((20, 4))
    expected[0:2, :] = x
    expected[2, :] = 1.0
    expected[3:7, :] = np.eye(4)
    assert z.shape == (20, 4)
    assert np.array_equal(z, expected)


def test_encoding_rejects_wrong_shape(encoding_config):
    """Test that inputs of the wrong shape are rejected"""
    with pytest.raises(ShapeMismatchError):
        encode_input(np.zeros((4, 2)), encoding_config)
    with pytest.raises(ShapeMismatchError):
        encode_batch(np.zeros((3, 2, 5)), encoding_config)


def test_zero_layer_is_identity(small_config, rng):
    """Test that a layer with all-zero weights leaves the sequence unchanged"""
    z = encode_batch(rng.uniform(-1.0, 1.0, size=(5, small_config.d, small_config.l)), small_config)
    assert np.array_equal(apply_layer(z, zero_layer(small_config)), z)


def test_ties_select_smallest_index(small_config):
    """Test that equal scores select the first key token"""
    z = encode_input(np.array([[0.3, -0.7]]), small_config)
    heads = [zero_head(small_config) for _ in range(small_config.h)]
    y, selected = hardmax_attention_layer(z, heads)
    assert selected.shape == (small_config.h, small_config.l)
    assert np.all(selected == 0)
    assert np.array_equal(y.z, z.z)


def test_ffn_layer_acts_per_token(small_config):
    """Test the residual ReLU FFN on every token, and its width check"""
    cfg = small_config
    z = encode_input(np.array([[0.3, -0.7]]), cfg)
    ffn = zero_ffn(cfg)
    ffn.w1[0, cfg.ones_index] = 1.0
    ffn.b1[0] = -0.5
    ffn.w2[cfg.readout_index, 0] = 2.0
    ffn.b2[cfg.readout_index] = 0.25
    y = pointwise_ffn_layer(z, ffn)
    assert np.array_equal(y.z[cfg.readout_index], z.z[cfg.readout_index] + 1.25)
    untouched = np.delete(np.arange(cfg.d_model), cfg.readout_index)
    assert np.array_equal(y.z[untouched], z.z[untouched])

    narrow = ffn.model_copy(update={"w1": ffn.w1[:, :-1]})
    with pytest.raises(ShapeMismatchError):
        pointwise_ffn_layer(z, narrow)


def test_truncation_matches_relu_form():
    """Test that the two-layer ReLU truncation equals clamping on dyadic inputs"""
    for beta in (0.5, 2.0, 3.0):
        assert np.array_equal(truncate_network(dyadic_values, beta), truncate(dyadic_values, beta))
    assert truncate(5.0, 2.0) == 2.0
    assert truncate(-5.0, 2.0) == -2.0


def test_identity_final_net():
    """Test that the identity final net returns its input"""
    final = identity_final(4)
    assert final.v1.shape == (4,)
    for u in (-3.5, -0.25, 0.0, 0.75, 12.0):
        assert final_net(u, final) == u


def test_single_and_batch_forward_agree(small_config, rng):
    """Test that the single-input forward pass matches the batched one"""
    inputs = rng.uniform(-1.0, 1.0, size=(4, small_config.d, small_config.l))
    theta = constant_network(small_config, 0.75)
    batch = network_forward_batch(inputs, theta, small_config)
    singles = [network_forward(x, theta, small_config) for x in inputs]
    assert np.array_equal(batch, np.array(singles))
    assert np.all(batch == 0.75)


def test_mixture_truncates_each_network(small_config):
    """Test that every network output is clamped to beta before mixing"""
    thetas = [constant_network(small_config, 3.0), constant_network(small_config, -1.0)]
    w = MixtureState(w=np.array([0.5, 0.25]))
    x = np.zeros((small_config.d, small_config.l))
    assert mixture_forward(x, w, thetas, small_config) == 0.5 * 2.0 + 0.25 * -1.0


def test_mixture_with_zero_weights(small_config):
    """Test that the mixture vanishes when all outer weights are zero"""
    thetas = [constant_network(small_config, 1.5), constant_network(small_config, -0.5)]
    x = np.ones((small_config.d, small_config.l)) * 0.5
    assert mixture_forward(x, MixtureState(w=np.zeros(2)), thetas, small_config) == 0.0


def test_mixture_requires_one_network_per_weight(small_config):
    """Test that the number of networks must match the outer weights"""
    x = np.zeros((small_config.d, small_config.l))
    with pytest.raises(ShapeMismatchError):
        mixture_forward(x, MixtureState(w=np.array([0.5])), [], small_config)


def test_classify_maps_zero_to_plus_one():
    """Test the sign rule on scalars and arrays"""
    assert classify(0.0) == 1
    assert classify(-0.5) == -1
    assert classify(2.0) == 1
    assert np.array_equal(classify(np.array([-1.0, 0.0, 1e-9])), np.array([-1, 1, 1]))
