import base64
import json
from typing import Any

import numpy as np


# For Pydantic v2 - handling numpy weight arrays
class WeightArray:
    """
    Pydantic field type for numpy arrays.

    Float arrays validate to finite float64 and serialize to nested lists of
    shortest round-trip floats. Boolean arrays (sparsity patterns) serialize
    bit-packed as {"shape", "bits"} with base64 payload.
    """

    @classmethod
    def __get_pydantic_core_schema__(cls, _source_type, _handler):
        from pydantic_core import core_schema
        return core_schema.no_info_plain_validator_function(
            cls.validate,
            serialization=core_schema.plain_serializer_function_ser_schema(
                cls.serialize, when_used="json"
            ),
        )

    @classmethod
    def validate(cls, value: Any) -> np.ndarray:
        if isinstance(value, dict):
            return unpack_bits(value)
        if isinstance(value, np.ndarray) and value.dtype == np.bool_:
            return value
        array = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise ValueError("Weight arrays must have finite entries")
        return array

    @staticmethod
    def serialize(value: np.ndarray) -> Any:
        if value.dtype == np.bool_:
            return pack_bits(value)
        return value.tolist()


def pack_bits(pattern: np.ndarray) -> dict:
    packed = np.packbits(pattern.astype(np.bool_).ravel())
    return {
        "shape": list(pattern.shape),
        "bits": base64.b64encode(packed.tobytes()).decode("ascii"),
    }


def unpack_bits(payload: dict) -> np.ndarray:
    shape = tuple(int(s) for s in payload["shape"])
    size = int(np.prod(shape)) if shape else 1
    raw = np.frombuffer(base64.b64decode(payload["bits"]), dtype=np.uint8)
    return np.unpackbits(raw, count=size).astype(np.bool_).reshape(shape)


# Custom JSON encoder for numpy scalars and arrays in reports
class NumpyJsonEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.bool_):
            return bool(obj)
        return super().default(obj)
