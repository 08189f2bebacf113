"""
Random initialization with pruning and structural zeroing
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import InitializationError
from ..core.rng import RandomStreams, StreamRole
from ..models.initialization import InitConfig, SparsityMask
from ..models.network import (
    AttentionHead, FfnWeights, FinalNetWeights, LayerWeights, ModelConfig, NetworkParams,
)

logger = logging.getLogger(__name__)


def _pruned_rows(
    streams: RandomStreams, shape: Tuple[int, int], tau: int, bound: float, *key: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform draws where each row keeps tau entries chosen without replacement."""
    rows, cols = shape
    if tau > cols:
        raise InitializationError(f"tau={tau} exceeds the row length {cols}")
    values = np.zeros(shape)
    keep = np.zeros(shape, dtype=np.bool_)
    for row in range(rows):
        rng = streams.generator(*key, row)
        draws = rng.uniform(-bound, bound, size=cols)
        chosen = rng.choice(cols, size=tau, replace=False)
        keep[row, chosen] = True
        values[row] = np.where(keep[row], draws, 0.0)
    return values, keep


def _dense(streams: RandomStreams, size: int, bound: float, *key: int) -> np.ndarray:
    return streams.generator(*key).uniform(-bound, bound, size=size)


def init_network(
    cfg: ModelConfig, icfg: InitConfig, rng_stream: RandomStreams
) -> Tuple[NetworkParams, SparsityMask]:
    """
    Draw one network uniformly on [-c4 n^c5, c4 n^c5], prune to tau entries per row
    (attention matrices, W1) and per column (W2), then apply the structural zeros
    """
    icfg.check_against(cfg)
    bound = icfg.init_range
    tau = icfg.tau
    protected = cfg.encoding_width

    layers: List[LayerWeights] = []
    layer_masks: List[LayerWeights] = []
    for r in range(cfg.N):
        heads, head_masks = [], []
        for s in range(cfg.h):
            wq, mq = _pruned_rows(rng_stream, (cfg.d_key, cfg.d_model), tau, bound, r, StreamRole.QUERY, s)
            wk, mk = _pruned_rows(rng_stream, (cfg.d_key, cfg.d_model), tau, bound, r, StreamRole.KEY, s)
            wv, mv = _pruned_rows(rng_stream, (cfg.d_v, cfg.d_model), tau, bound, r, StreamRole.VALUE, s)
            if s == 0:
                mq[:] = False
                mk[:] = False
            mq[-2:, protected:] = False
            mk[-2:, protected:] = False
            heads.append(AttentionHead(w_query=wq * mq, w_key=wk * mk, w_value=wv))
            head_masks.append(AttentionHead(w_query=mq, w_key=mk, w_value=mv))

        w1, m1 = _pruned_rows(rng_stream, (cfg.d_ff, cfg.d_model), tau, bound, r, StreamRole.W1)
        # W2 is pruned per column, i.e. per row of its transpose
        w2t, m2t = _pruned_rows(rng_stream, (cfg.d_ff, cfg.d_model), tau, bound, r, StreamRole.W2)
        w2, m2 = w2t.T.copy(), m2t.T.copy()
        if icfg.w2_zero_axis == "output":
            m2[:protected, :] = False
        else:
            m2[:, :protected] = False
        b1 = _dense(rng_stream, cfg.d_ff, bound, r, StreamRole.B1)
        b2 = _dense(rng_stream, cfg.d_model, bound, r, StreamRole.B2)

        layers.append(LayerWeights(heads=heads, ffn=FfnWeights(w1=w1, b1=b1, w2=w2 * m2, b2=b2)))
        layer_masks.append(LayerWeights(
            heads=head_masks,
            ffn=FfnWeights(
                w1=m1, b1=np.ones(cfg.d_ff, dtype=np.bool_),
                w2=m2, b2=np.ones(cfg.d_model, dtype=np.bool_),
            ),
        ))

    final_rng = rng_stream.generator(cfg.N, StreamRole.FINAL)
    final = FinalNetWeights(
        v1=final_rng.uniform(-bound, bound, size=cfg.J),
        v0_slope=final_rng.uniform(-bound, bound, size=cfg.J),
        v0_bias=final_rng.uniform(-bound, bound, size=cfg.J),
    )
    full = np.ones(cfg.J, dtype=np.bool_)
    final_mask = FinalNetWeights(v1=full, v0_slope=full.copy(), v0_bias=full.copy())

    params = NetworkParams(layers=layers, final=final)
    mask = SparsityMask(pattern=NetworkParams(layers=layer_masks, final=final_mask))
    return params, mask


def init_mixture(
    cfg: ModelConfig, icfg: InitConfig, streams: RandomStreams
) -> Tuple[List[NetworkParams], List[SparsityMask]]:
    """
    Initialize the K parallel networks; network k draws from sub-stream k
    """
    thetas, masks = [], []
    for k in range(cfg.K):
        params, mask = init_network(cfg, icfg, streams.child(k))
        thetas.append(params)
        masks.append(mask)
    logger.info(f"Initialized {cfg.K} networks (range={icfg.init_range:.4g}, tau={icfg.tau})")
    return thetas, masks


def apply_mask(params: NetworkParams, mask: SparsityMask) -> NetworkParams:
    """
    Zero every entry outside the mask
    """
    mask.check_matches(params)
    return params.rebuild(
        np.where(m, a, 0.0) for a, m in zip(params.arrays(), mask.pattern.arrays())
    )


def init_pattern_violations(
    layers: Sequence[LayerWeights], cfg: ModelConfig, tau: Optional[int] = None, w2_zero_axis: str = "output",
) -> List[str]:
    """
    Places where ``layers`` leave the support init_network can produce.

    Attention rows, W1 rows and W2 columns hold at most tau nonzeros, head 0 has no
    query/key weights, the last two query/key rows only read the input encoding and
    W2 is zero on the protected axis. An empty list means the weights fit the mask.
    """
    tau = cfg.l + cfg.d + 1 if tau is None else tau
    protected = cfg.encoding_width
    violations: List[str] = []

    def crowded(name: str, matrix: np.ndarray) -> None:
        counts = np.count_nonzero(matrix, axis=1)
        for row in np.flatnonzero(counts > tau):
            violations.append(f"{name} {row} has {counts[row]} nonzeros (tau={tau})")

    for r, layer in enumerate(layers):
        for s, head in enumerate(layer.heads):
            prefix = f"layer {r} head {s}"
            for name in ("w_query", "w_key", "w_value"):
                crowded(f"{prefix} {name} row", getattr(head, name))
            for name in ("w_query", "w_key"):
                matrix = getattr(head, name)
                if s == 0 and np.any(matrix != 0):
                    violations.append(f"{prefix} {name} is nonzero")
                if np.any(matrix[-2:, protected:] != 0):
                    violations.append(f"{prefix} {name} reads components >= {protected} in its last two rows")
        crowded(f"layer {r} w1 row", layer.ffn.w1)
        crowded(f"layer {r} w2 column", layer.ffn.w2.T)
        zeroed = layer.ffn.w2[:protected, :] if w2_zero_axis == "output" else layer.ffn.w2[:, :protected]
        if np.any(zeroed != 0):
            violations.append(f"layer {r} w2 is nonzero on the protected {w2_zero_axis} axis")
    return violations
