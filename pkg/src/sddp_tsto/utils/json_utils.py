import dataclasses
import enum
import json
import math
from datetime import timedelta
from pathlib import Path
from typing import Any, Union

import fsspec
import numpy as np

from sddp_tsto.errors import InvalidParameter
from sddp_tsto.utils.datetime_utils import encode_timedelta


PathLike = Union[str, Path]


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        raise InvalidParameter(f"Cannot write non-finite float {x} to JSON")
    out = format(x, ".17g")
    # keep floats recognizably floats so a reader doesn't turn 3.0 into the int 3
    if all(ch not in out for ch in ".eE"):
        out += ".0"
    return out


def to_jsonable(obj: Any) -> Any:
    """Lowers numpy values, enums, timedeltas, paths and dataclasses to plain json types."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, str) or obj is None:
        return obj
    if isinstance(obj, enum.Enum):
        return to_jsonable(obj.value)
    if isinstance(obj, timedelta):
        return encode_timedelta(obj)
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    raise TypeError(f"Don't know how to write {type(obj)} to JSON")


def dumps_canonical(obj: Any) -> str:
    """
    JSON with sorted keys and every float printed with 17 significant digits, so that reruns with the same seeds
    produce byte-identical files.
    """
    return _encode(to_jsonable(obj))


def _encode(obj: Any) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = (f"{json.dumps(k)}: {_encode(obj[k])}" for k in sorted(obj))
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, list):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"Unexpected {type(obj)}")


def write_json(path: PathLike, obj: Any) -> None:
    fs, _, (plain_path,) = fsspec.get_fs_token_paths(str(path))
    parent = plain_path.rsplit("/", 1)[0] if "/" in plain_path else ""
    if parent:
        fs.makedirs(parent, exist_ok=True)
    with fsspec.open(str(path), "w") as f:
        f.write(dumps_canonical(obj))
        f.write("\n")


def read_json(path: PathLike) -> Any:
    with fsspec.open(str(path), "r") as f:
        return json.load(f)
