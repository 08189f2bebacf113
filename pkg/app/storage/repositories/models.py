import json
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

from ...models.documents import NetworkDocument, TrainedModelDocument
from ...models.initialization import SparsityMask
from ...models.network import ModelConfig, NetworkParams
from ...models.training import TrainedModel

logger = logging.getLogger(__name__)


class ModelRepository:
    def __init__(self, base_dir: Union[str, Path]):
        self.base_dir = Path(base_dir)

    def _path(self, name: str) -> Path:
        return self.base_dir / name

    def _write(self, name: str, document) -> Path:
        self.base_dir.mkdir(parents=True, exist_ok=True)
        path = self._path(name)
        payload = document.model_dump(mode="json", by_alias=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        logger.info(f"Wrote {path}")
        return path

    def save_network(
        self, cfg: ModelConfig, params: NetworkParams, mask: Optional[SparsityMask] = None,
        name: str = "network.json",
    ) -> Path:
        """
        Save a single network with its config and, optionally, its sparsity mask
        """
        params.check_shapes(cfg)
        return self._write(name, NetworkDocument.from_params(cfg, params, mask))

    def load_network(self, name: str = "network.json") -> Tuple[ModelConfig, NetworkParams, Optional[SparsityMask]]:
        """
        Load a network saved by save_network
        """
        document = NetworkDocument.model_validate_json(self._path(name).read_text())
        params = document.params
        params.check_shapes(document.config)
        return document.config, params, document.sparsity_mask

    def save_trained(self, model: TrainedModel, name: str = "model.json") -> Path:
        return self._write(name, TrainedModelDocument.from_model(model))

    def load_trained(self, name: str = "model.json") -> TrainedModel:
        document = TrainedModelDocument.model_validate_json(self._path(name).read_text())
        return document.to_model()

    def load_single(self, name: str) -> Tuple[ModelConfig, NetworkParams, SparsityMask]:
        """
        One network with its mask from either file kind: the heaviest network of a trained
        mixture, or a saved network (its nonzero pattern when no mask was stored)
        """
        payload = json.loads(self._path(name).read_text())
        if "networks" in payload:
            model = self.load_trained(name)
            k = int(model.w_hat.w.argmax())
            mask = model.masks[k] if model.masks else SparsityMask.nonzero_pattern(model.thetas_hat[k])
            return model.config, model.thetas_hat[k], mask
        cfg, params, mask = self.load_network(name)
        return cfg, params, mask if mask is not None else SparsityMask.nonzero_pattern(params)

    def exists(self, name: str) -> bool:
        return self._path(name).is_file()
