import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Type, Union

import pandas as pd
from pydantic import BaseModel

from ...models.arrays import NumpyJsonEncoder

logger = logging.getLogger(__name__)


class ReportRepository:
    def __init__(self, base_dir: Union[str, Path]):
        self.base_dir = Path(base_dir)

    def _prepare(self, name: str) -> Path:
        self.base_dir.mkdir(parents=True, exist_ok=True)
        return self.base_dir / name

    def write_rows(
        self, name: str, rows: Sequence[BaseModel], row_type: Optional[Type[BaseModel]] = None,
    ) -> Path:
        """
        Write pydantic rows as CSV, columns in field declaration order
        """
        row_type = row_type or (type(rows[0]) if rows else None)
        columns = list(row_type.model_fields) if row_type is not None else None
        frame = pd.DataFrame([row.model_dump() for row in rows], columns=columns)
        return self.write_frame(name, frame)

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._prepare(name)
        frame.to_csv(path, index=False)
        logger.info(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_json(self, name: str, payload: Union[BaseModel, Dict[str, Any], List[Any]]) -> Path:
        """
        Write a report as pretty-printed JSON with sorted keys
        """
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json", by_alias=True)
        path = self._prepare(name)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, cls=NumpyJsonEncoder) + "\n")
        logger.info(f"Wrote {path}")
        return path

    def read_frame(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.base_dir / name)

    def read_json(self, name: str) -> Any:
        return json.loads((self.base_dir / name).read_text())
