from typing import List, Optional

from pydantic import BaseModel, Field

from .arrays import WeightArray
from .initialization import SparsityMask
from .network import FinalNetWeights, LayerWeights, MixtureState, ModelConfig, NetworkParams
from .training import TrainedModel


class NetworkDocument(BaseModel):
    """On-disk form of one network: {config, layers, final, mask?}."""
    config: ModelConfig
    layers: List[LayerWeights]
    final: FinalNetWeights
    mask: Optional[NetworkParams] = None

    @classmethod
    def from_params(
        cls, cfg: ModelConfig, params: NetworkParams, mask: Optional[SparsityMask] = None
    ) -> "NetworkDocument":
        return cls(
            config=cfg, layers=params.layers, final=params.final,
            mask=mask.pattern if mask is not None else None,
        )

    @property
    def params(self) -> NetworkParams:
        return NetworkParams(layers=self.layers, final=self.final)

    @property
    def sparsity_mask(self) -> Optional[SparsityMask]:
        return SparsityMask(pattern=self.mask) if self.mask is not None else None


class TrainedModelDocument(BaseModel):
    """On-disk form of a trained mixture: {config, networks, masks, w, t_hat, loss_trace}."""
    config: ModelConfig
    networks: List[NetworkParams]
    masks: List[NetworkParams] = Field(default_factory=list)
    w: WeightArray
    t_hat: int
    loss_trace: List[float]

    model_config = {"arbitrary_types_allowed": True}

    @classmethod
    def from_model(cls, model: TrainedModel) -> "TrainedModelDocument":
        return cls(
            config=model.config, networks=model.thetas_hat, masks=[m.pattern for m in model.masks],
            w=model.w_hat.w, t_hat=model.t_hat, loss_trace=model.loss_trace,
        )

    def to_model(self) -> TrainedModel:
        return TrainedModel(
            config=self.config, w_hat=MixtureState(w=self.w), thetas_hat=self.networks,
            t_hat=self.t_hat, loss_trace=self.loss_trace,
            masks=[SparsityMask(pattern=m) for m in self.masks],
        )
