"""
Forward pass of the hard-max transformer network and of the truncated mixture.

Batched functions work on token-major arrays of shape (n, l, d_model); the
single-input operations wrap them with n = 1. All functions are pure.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import ShapeMismatchError
from ..models.network import (
    AttentionHead, EncodedSequence, FfnWeights, FinalNetWeights, LayerWeights,
    MixtureState, ModelConfig, NetworkParams,
)

logger = logging.getLogger(__name__)


def relu(v):
    return np.maximum(v, 0.0)


def encode_batch(inputs: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """
    Encode a batch of inputs (n, d, l) into token-major z_0 of shape (n, l, d_model)
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[1:] != (cfg.d, cfg.l):
        raise ShapeMismatchError(f"Inputs must have shape (n, {cfg.d}, {cfg.l}), got {inputs.shape}")
    n = inputs.shape[0]
    z = np.zeros((n, cfg.l, cfg.d_model))
    z[:, :, :cfg.d] = np.swapaxes(inputs, 1, 2)
    z[:, :, cfg.ones_index] = 1.0
    z[:, :, cfg.d + 1:cfg.d + 1 + cfg.l] = np.eye(cfg.l)
    return z


def encode_input(x: np.ndarray, cfg: ModelConfig) -> EncodedSequence:
    """
    Build z_0: x rows, a ones row, the positional identity block, zeros elsewhere
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.d, cfg.l):
        raise ShapeMismatchError(f"Input must have shape ({cfg.d}, {cfg.l}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeMismatchError("Input must be finite")
    return EncodedSequence(z=encode_batch(x[None], cfg)[0].T)


def stack_heads(heads: Sequence[AttentionHead]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    wq = np.stack([head.w_query for head in heads])
    wk = np.stack([head.w_key for head in heads])
    wv = np.stack([head.w_value for head in heads])
    return wq, wk, wv


def attention_scores(z: np.ndarray, wq: np.ndarray, wk: np.ndarray):
    """Queries, keys and the score tensor <q_i, k_j> of shape (n, h, l, l)."""
    queries = np.matmul(z[:, None], np.swapaxes(wq, -1, -2)[None])
    keys = np.matmul(z[:, None], np.swapaxes(wk, -1, -2)[None])
    scores = np.matmul(queries, np.swapaxes(keys, -1, -2))
    return queries, keys, scores


def attention_batch(z: np.ndarray, heads: Sequence[AttentionHead]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Apply one hard-max multi-head attention layer with residual connection.

    Returns the new token-major state and the selected indices (n, h, l);
    argmax ties go to the smallest key index.
    """
    n, l, d_model = z.shape
    wq, wk, wv = stack_heads(heads)
    h, _, width = wq.shape
    if width != d_model or wv.shape[2] != d_model or h * wv.shape[1] != d_model:
        raise ShapeMismatchError("Attention head shapes do not match the sequence width")
    _, _, scores = attention_scores(z, wq, wk)
    values = np.matmul(z[:, None], np.swapaxes(wv, -1, -2)[None])
    selected = np.argmax(scores, axis=-1)
    selected_scores = np.take_along_axis(scores, selected[..., None], axis=-1)[..., 0]
    index = np.broadcast_to(selected[..., None], values.shape)
    selected_values = np.take_along_axis(values, index, axis=2)
    head_out = selected_values * selected_scores[..., None]
    concatenated = np.swapaxes(head_out, 1, 2).reshape(n, l, h * wv.shape[1])
    return z + concatenated, selected


def hardmax_attention_layer(
    z_prev: EncodedSequence, heads: Sequence[AttentionHead]
) -> Tuple[EncodedSequence, np.ndarray]:
    """
    Hard-max attention on one sequence; returns (y, selected index matrix of shape (h, l))
    """
    y, selected = attention_batch(z_prev.tokens[None], heads)
    return EncodedSequence(z=y[0].T), selected[0]


def ffn_batch(y: np.ndarray, ffn: FfnWeights) -> np.ndarray:
    if ffn.w1.shape[1] != y.shape[-1] or ffn.w2.shape[0] != y.shape[-1]:
        raise ShapeMismatchError("FFN weights do not match the sequence width")
    hidden = relu(np.matmul(y, ffn.w1.T) + ffn.b1)
    return y + np.matmul(hidden, ffn.w2.T) + ffn.b2


def pointwise_ffn_layer(y: EncodedSequence, ffn: FfnWeights) -> EncodedSequence:
    """
    Token-wise residual ReLU feedforward layer
    """
    return EncodedSequence(z=ffn_batch(y.tokens[None], ffn)[0].T)


def apply_layer(z: np.ndarray, layer: LayerWeights) -> np.ndarray:
    y, _ = attention_batch(z, layer.heads)
    return ffn_batch(y, layer.ffn)


def run_layers(inputs: np.ndarray, layers: Sequence[LayerWeights], cfg: ModelConfig) -> np.ndarray:
    """Encode a batch and push it through the given layer pairs; returns z_N (n, l, d_model)."""
    z = encode_batch(inputs, cfg)
    for layer in layers:
        z = apply_layer(z, layer)
    return z


def truncate(v, beta: float):
    """Clamp to [-beta, beta]."""
    return np.clip(v, -beta, beta)


def truncate_network(v, beta: float):
    """Truncation written as a two-layer ReLU network."""
    return relu(2.0 * beta - relu(-v + beta)) - beta


def final_net_batch(u: np.ndarray, final: FinalNetWeights) -> np.ndarray:
    hidden = relu(np.multiply.outer(u, final.v0_slope) + final.v0_bias)
    return np.matmul(hidden, final.v1)


def final_net(u: float, v: FinalNetWeights) -> float:
    return float(final_net_batch(np.array([u], dtype=np.float64), v)[0])


def network_forward_batch(inputs: np.ndarray, theta: NetworkParams, cfg: ModelConfig) -> np.ndarray:
    """Untruncated network outputs f_theta(X_i) for a batch (n, d, l)."""
    if len(theta.layers) != cfg.N:
        raise ShapeMismatchError(f"Expected {cfg.N} layers, got {len(theta.layers)}")
    z = run_layers(inputs, theta.layers, cfg)
    return final_net_batch(z[:, 0, cfg.readout_index], theta.final)


def network_forward(x: np.ndarray, theta: NetworkParams, cfg: ModelConfig) -> float:
    """
    Untruncated output f_{W,V}(x): encode, N layer pairs, read component d+l+2 of token 1, final net
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.d, cfg.l):
        raise ShapeMismatchError(f"Input must have shape ({cfg.d}, {cfg.l}), got {x.shape}")
    return float(network_forward_batch(x[None], theta, cfg)[0])


def truncated_outputs(inputs: np.ndarray, thetas: Sequence[NetworkParams], cfg: ModelConfig) -> np.ndarray:
    """K x n matrix of T_beta(f_{theta_k}(X_i))."""
    return np.stack([truncate(network_forward_batch(inputs, theta, cfg), cfg.beta) for theta in thetas])


def mixture_forward_batch(
    inputs: np.ndarray, w: MixtureState, thetas: Sequence[NetworkParams], cfg: ModelConfig,
    outputs: Optional[np.ndarray] = None,
) -> np.ndarray:
    if len(thetas) != w.K:
        raise ShapeMismatchError(f"Mixture has {w.K} outer weights but {len(thetas)} networks")
    if outputs is None:
        outputs = truncated_outputs(inputs, thetas, cfg)
    return np.matmul(w.w, outputs)


def mixture_forward(x: np.ndarray, w: MixtureState, thetas: Sequence[NetworkParams], cfg: ModelConfig) -> float:
    """
    Sum_k w_k * T_beta(f_{theta_k}(x))
    """
    x = np.asarray(x, dtype=np.float64)
    return float(mixture_forward_batch(x[None], w, thetas, cfg)[0])


def classify(fval):
    """Sign rule with 0 mapped to +1."""
    return np.where(np.asarray(fval) >= 0, 1, -1) if np.ndim(fval) else (1 if fval >= 0 else -1)
