"""
Reverse-mode gradients of the network output with the argmax selections,
ReLU activation patterns and the truncation clamp frozen at their forward values.

Subgradients at kinks are taken as 0 (sigma'(0) = 0, clamp boundaries excluded).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from ..models.network import AttentionHead, FfnWeights, FinalNetWeights, LayerWeights, ModelConfig, NetworkParams
from .transformer_service import encode_batch, relu, stack_heads

logger = logging.getLogger(__name__)


@dataclass
class LayerCache:
    z_in: np.ndarray
    queries: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    scores: np.ndarray
    selected: np.ndarray
    y: np.ndarray
    pre: np.ndarray


@dataclass
class ForwardCache:
    layers: List[LayerCache] = field(default_factory=list)
    readout: np.ndarray = None
    final_pre: np.ndarray = None
    outputs: np.ndarray = None


def _gather_tokens(tensor: np.ndarray, selected: np.ndarray) -> np.ndarray:
    index = np.broadcast_to(selected[..., None], selected.shape + tensor.shape[-1:])
    return np.take_along_axis(tensor, index, axis=2)


def forward_with_cache(inputs: np.ndarray, theta: NetworkParams, cfg: ModelConfig) -> ForwardCache:
    """Forward pass over a batch (n, d, l) keeping every intermediate needed by ``backward``."""
    cache = ForwardCache()
    z = encode_batch(inputs, cfg)
    n, l, _ = z.shape
    for layer in theta.layers:
        wq, wk, wv = stack_heads(layer.heads)
        queries = np.matmul(z[:, None], np.swapaxes(wq, -1, -2)[None])
        keys = np.matmul(z[:, None], np.swapaxes(wk, -1, -2)[None])
        values = np.matmul(z[:, None], np.swapaxes(wv, -1, -2)[None])
        scores = np.matmul(queries, np.swapaxes(keys, -1, -2))
        selected = np.argmax(scores, axis=-1)
        chosen = np.take_along_axis(scores, selected[..., None], axis=-1)
        head_out = _gather_tokens(values, selected) * chosen
        y = z + np.swapaxes(head_out, 1, 2).reshape(n, l, -1)
        pre = np.matmul(y, layer.ffn.w1.T) + layer.ffn.b1
        cache.layers.append(LayerCache(z, queries, keys, values, scores, selected, y, pre))
        z = y + np.matmul(relu(pre), layer.ffn.w2.T) + layer.ffn.b2
    cache.readout = z[:, 0, cfg.readout_index]
    cache.final_pre = np.multiply.outer(cache.readout, theta.final.v0_slope) + theta.final.v0_bias
    cache.outputs = np.matmul(relu(cache.final_pre), theta.final.v1)
    return cache


def backward(cache: ForwardCache, theta: NetworkParams, cfg: ModelConfig, d_outputs: np.ndarray) -> NetworkParams:
    """
    Pull d_outputs (n,) = dL/df(X_i) back to every weight; returns gradients shaped like theta
    """
    final = theta.final
    active = cache.final_pre > 0
    d_pre = d_outputs[:, None] * final.v1 * active
    grad_final = FinalNetWeights(
        v1=np.matmul(d_outputs, relu(cache.final_pre)),
        v0_slope=np.matmul(cache.readout, d_pre),
        v0_bias=d_pre.sum(axis=0),
    )
    d_readout = np.matmul(d_pre, final.v0_slope)

    n = d_outputs.shape[0]
    l = cfg.l
    dz = np.zeros((n, l, cfg.d_model))
    dz[:, 0, cfg.readout_index] = d_readout

    grad_layers: List[LayerWeights] = []
    for layer, lc in zip(reversed(theta.layers), reversed(cache.layers)):
        ffn = layer.ffn
        hidden = relu(lc.pre)
        d_hidden = np.matmul(dz, ffn.w2) * (lc.pre > 0)
        grad_ffn = FfnWeights(
            w1=np.einsum("nlf,nlm->fm", d_hidden, lc.y),
            b1=d_hidden.sum(axis=(0, 1)),
            w2=np.einsum("nlm,nlf->mf", dz, hidden),
            b2=dz.sum(axis=(0, 1)),
        )
        dy = dz + np.matmul(d_hidden, ffn.w1)

        wq, wk, wv = stack_heads(layer.heads)
        h, d_v = wv.shape[0], wv.shape[1]
        grad_heads = np.swapaxes(dy.reshape(n, l, h, d_v), 1, 2)
        chosen = np.take_along_axis(lc.scores, lc.selected[..., None], axis=-1)[..., 0]
        one_hot = (lc.selected[..., None] == np.arange(l)).astype(np.float64)

        d_chosen = np.sum(grad_heads * _gather_tokens(lc.values, lc.selected), axis=-1)
        d_values = np.einsum("nhij,nhic->nhjc", one_hot, grad_heads * chosen[..., None])
        d_queries = d_chosen[..., None] * _gather_tokens(lc.keys, lc.selected)
        d_keys = np.einsum("nhij,nhik->nhjk", one_hot, d_chosen[..., None] * lc.queries)

        gq = np.einsum("nhlk,nlm->hkm", d_queries, lc.z_in)
        gk = np.einsum("nhlk,nlm->hkm", d_keys, lc.z_in)
        gv = np.einsum("nhlc,nlm->hcm", d_values, lc.z_in)
        grad_layers.append(LayerWeights(
            heads=[AttentionHead(w_query=gq[s], w_key=gk[s], w_value=gv[s]) for s in range(h)],
            ffn=grad_ffn,
        ))
        dz = (
            dy
            + np.einsum("nhlk,hkm->nlm", d_queries, wq)
            + np.einsum("nhlk,hkm->nlm", d_keys, wk)
            + np.einsum("nhlc,hcm->nlm", d_values, wv)
        )
    grad_layers.reverse()
    return NetworkParams(layers=grad_layers, final=grad_final)


def network_gradient(
    inputs: np.ndarray, theta: NetworkParams, cfg: ModelConfig, d_outputs: np.ndarray
) -> NetworkParams:
    return backward(forward_with_cache(inputs, theta, cfg), theta, cfg, np.asarray(d_outputs, dtype=np.float64))


def gradient_margins(inputs: np.ndarray, theta: NetworkParams, cfg: ModelConfig) -> Dict[str, float]:
    """
    Distances of a state from the kinks frozen by ``backward``.

    ``argmax_gap`` is the smallest gap between the best and second-best score
    (heads whose query or key matrix is identically zero are skipped, their
    selection cannot move); ``relu_margin`` the smallest |pre-activation|;
    ``clamp_margin`` the smallest distance of an output to +-beta.
    """
    cache = forward_with_cache(inputs, theta, cfg)
    gaps = [np.inf]
    pre_margins = [np.min(np.abs(cache.final_pre))]
    for layer, lc in zip(theta.layers, cache.layers):
        live = [
            s for s, head in enumerate(layer.heads)
            if np.any(head.w_query != 0) and np.any(head.w_key != 0)
        ]
        if live and cfg.l > 1:
            ordered = np.sort(lc.scores[:, live], axis=-1)
            gaps.append(np.min(ordered[..., -1] - ordered[..., -2]))
        pre_margins.append(np.min(np.abs(lc.pre)))
    return {
        "argmax_gap": float(np.min(gaps)),
        "relu_margin": float(np.min(pre_margins)),
        "clamp_margin": float(np.min(np.abs(np.abs(cache.outputs) - cfg.beta))),
    }
