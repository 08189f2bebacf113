from typing import Callable, Iterator, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .arrays import WeightArray
from ..core.exceptions import ShapeMismatchError


class ModelConfig(BaseModel):
    """
    Architecture dimensions of one transformer network and of the mixture.

    Components, tokens and heads are zero-based in every API of the package:
    the encoding occupies components 0..d+l, the classifier reads component
    ``readout_index`` (= d+l+1) of token 0.
    """
    d: int = Field(..., ge=1)
    l: int = Field(..., ge=1)
    h: int = Field(..., ge=1)
    I: int = Field(..., ge=1)
    d_model: Optional[int] = None
    d_key: int = Field(default=4, ge=3)
    d_v: Optional[int] = None
    d_ff: int = Field(..., ge=1)
    N: int = Field(..., ge=1)
    J: int = Field(..., ge=1)
    beta: float = Field(..., gt=0)
    K: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_coupling(self):
        if self.d_model is None:
            self.d_model = self.h * self.I
        if self.d_v is None:
            self.d_v = self.I
        if self.d_model != self.h * self.I:
            raise ValueError(f"d_model must equal h*I = {self.h * self.I}, got {self.d_model}")
        if self.d_v != self.I:
            raise ValueError(f"d_v must equal d_model/h = {self.I}, got {self.d_v}")
        if self.I < self.d + self.l + 4:
            raise ValueError(f"I must be at least d+l+4 = {self.d + self.l + 4}, got {self.I}")
        return self

    @property
    def ones_index(self) -> int:
        return self.d

    @property
    def encoding_width(self) -> int:
        """Number of protected encoding components (x rows, ones row, positions)."""
        return self.d + self.l + 1

    @property
    def readout_index(self) -> int:
        return self.d + self.l + 1

    @property
    def n_inputs(self) -> int:
        return self.d * self.l

    def position_index(self, token: int) -> int:
        return self.d + 1 + token

    def accumulator_index(self, head: int) -> int:
        return head * self.I + self.d + self.l + 2

    def scratch_index(self, head: int) -> int:
        return head * self.I + self.d + self.l + 1

    def stored_index(self, slot: int) -> int:
        """Component holding the ``slot``-th stored intermediate value (slab 0)."""
        return self.d + self.l + 4 + slot

    def coordinate_source(self, coordinate: int) -> tuple:
        """(token, component) carrying input coordinate ``coordinate`` of x flattened token by token."""
        if not 0 <= coordinate < self.n_inputs:
            raise ShapeMismatchError(f"Coordinate {coordinate} outside 0..{self.n_inputs - 1}")
        return coordinate // self.d, coordinate % self.d


class EncodedSequence(BaseModel):
    """Token representations z (d_model x l), stored column-major so each token is contiguous."""
    z: WeightArray

    model_config = {"arbitrary_types_allowed": True}

    @field_validator("z")
    def store_column_major(cls, v):
        if v.ndim != 2:
            raise ValueError("z must be a d_model x l matrix")
        return np.asfortranarray(v)

    @property
    def tokens(self) -> np.ndarray:
        """Token-major view (l x d_model)."""
        return self.z.T


class AttentionHead(BaseModel):
    w_query: WeightArray = Field(..., alias="wq")
    w_key: WeightArray = Field(..., alias="wk")
    w_value: WeightArray = Field(..., alias="wv")

    model_config = ConfigDict(populate_by_name=True, arbitrary_types_allowed=True)


class FfnWeights(BaseModel):
    w1: WeightArray
    b1: WeightArray
    w2: WeightArray
    b2: WeightArray

    model_config = {"arbitrary_types_allowed": True}


class FinalNetWeights(BaseModel):
    v1: WeightArray
    v0_slope: WeightArray
    v0_bias: WeightArray

    model_config = {"arbitrary_types_allowed": True}

    @model_validator(mode="after")
    def check_widths(self):
        if not (self.v1.shape == self.v0_slope.shape == self.v0_bias.shape) or self.v1.ndim != 1:
            raise ValueError("v1, v0_slope and v0_bias must be vectors of equal length J")
        return self


class LayerWeights(BaseModel):
    heads: List[AttentionHead]
    ffn: FfnWeights


class NetworkParams(BaseModel):
    """
    Weights of one transformer network: N (attention, FFN) layer pairs plus the final shallow net.

    The same tree with boolean arrays is used as a sparsity pattern.
    """
    layers: List[LayerWeights]
    final: FinalNetWeights

    def arrays(self) -> Iterator[np.ndarray]:
        """Iterate over all weight arrays in canonical order."""
        for layer in self.layers:
            for head in layer.heads:
                yield head.w_query
                yield head.w_key
                yield head.w_value
            yield layer.ffn.w1
            yield layer.ffn.b1
            yield layer.ffn.w2
            yield layer.ffn.b2
        yield self.final.v1
        yield self.final.v0_slope
        yield self.final.v0_bias

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def map_arrays(self, fn: Callable[[np.ndarray], np.ndarray]) -> "NetworkParams":
        """Rebuild the tree with ``fn`` applied to every array, keeping the layout."""
        return self.rebuild(fn(a) for a in self.arrays())

    def with_flat(self, vector: np.ndarray) -> "NetworkParams":
        """Rebuild the tree from a flat vector laid out like ``flatten()``."""
        vector = np.asarray(vector)
        if vector.size != self.size:
            raise ShapeMismatchError(f"Flat vector has {vector.size} entries, expected {self.size}")
        pieces = []
        offset = 0
        for a in self.arrays():
            pieces.append(vector[offset:offset + a.size].reshape(a.shape).copy())
            offset += a.size
        return self.rebuild(pieces)

    def rebuild(self, pieces) -> "NetworkParams":
        it = iter(pieces)
        layers = []
        for layer in self.layers:
            heads = [
                AttentionHead(w_query=next(it), w_key=next(it), w_value=next(it))
                for _ in layer.heads
            ]
            ffn = FfnWeights(w1=next(it), b1=next(it), w2=next(it), b2=next(it))
            layers.append(LayerWeights(heads=heads, ffn=ffn))
        final = FinalNetWeights(v1=next(it), v0_slope=next(it), v0_bias=next(it))
        return NetworkParams(layers=layers, final=final)

    def check_shapes(self, cfg: ModelConfig) -> None:
        if len(self.layers) != cfg.N:
            raise ShapeMismatchError(f"Expected {cfg.N} layers, got {len(self.layers)}")
        for r, layer in enumerate(self.layers):
            if len(layer.heads) != cfg.h:
                raise ShapeMismatchError(f"Layer {r}: expected {cfg.h} heads, got {len(layer.heads)}")
            check_layer_shapes(layer, cfg, r)
        if self.final.v1.shape != (cfg.J,):
            raise ShapeMismatchError(f"Final net must have J={cfg.J} neurons, got {self.final.v1.shape}")

    @classmethod
    def zeros(cls, cfg: ModelConfig, n_layers: Optional[int] = None) -> "NetworkParams":
        return cls(
            layers=[zero_layer(cfg) for _ in range(cfg.N if n_layers is None else n_layers)],
            final=FinalNetWeights(
                v1=np.zeros(cfg.J), v0_slope=np.zeros(cfg.J), v0_bias=np.zeros(cfg.J)
            ),
        )


class MixtureState(BaseModel):
    """Outer weights w over the K parallel networks: w >= 0 and sum(w) <= 1."""
    w: WeightArray

    model_config = {"arbitrary_types_allowed": True}

    @field_validator("w")
    def must_be_sub_simplex(cls, v):
        if v.ndim != 1:
            raise ValueError("w must be a vector")
        if np.any(v < 0):
            raise ValueError("Outer weights must be nonnegative")
        if v.sum() > 1.0 + 1e-12:
            raise ValueError(f"Outer weights must sum to at most 1, got {v.sum()}")
        return v

    @property
    def K(self) -> int:
        return int(self.w.shape[0])


def zero_head(cfg: ModelConfig) -> AttentionHead:
    return AttentionHead(
        w_query=np.zeros((cfg.d_key, cfg.d_model)),
        w_key=np.zeros((cfg.d_key, cfg.d_model)),
        w_value=np.zeros((cfg.d_v, cfg.d_model)),
    )


def zero_ffn(cfg: ModelConfig) -> FfnWeights:
    return FfnWeights(
        w1=np.zeros((cfg.d_ff, cfg.d_model)),
        b1=np.zeros(cfg.d_ff),
        w2=np.zeros((cfg.d_model, cfg.d_ff)),
        b2=np.zeros(cfg.d_model),
    )


def zero_layer(cfg: ModelConfig) -> LayerWeights:
    return LayerWeights(heads=[zero_head(cfg) for _ in range(cfg.h)], ffn=zero_ffn(cfg))


def check_layer_shapes(layer: LayerWeights, cfg: ModelConfig, index: int = 0) -> None:
    for s, head in enumerate(layer.heads):
        expected = {
            "w_query": (cfg.d_key, cfg.d_model),
            "w_key": (cfg.d_key, cfg.d_model),
            "w_value": (cfg.d_v, cfg.d_model),
        }
        for name, shape in expected.items():
            if getattr(head, name).shape != shape:
                raise ShapeMismatchError(
                    f"Layer {index} head {s}: {name} has shape {getattr(head, name).shape}, expected {shape}"
                )
    ffn_shapes = {
        "w1": (cfg.d_ff, cfg.d_model),
        "b1": (cfg.d_ff,),
        "w2": (cfg.d_model, cfg.d_ff),
        "b2": (cfg.d_model,),
    }
    for name, shape in ffn_shapes.items():
        if getattr(layer.ffn, name).shape != shape:
            raise ShapeMismatchError(
                f"Layer {index} FFN: {name} has shape {getattr(layer.ffn, name).shape}, expected {shape}"
            )
