import dataclasses
from typing import Any, Dict, Optional

from sddp_tsto.utils.json_utils import to_jsonable


def hparams_to_dict(hparams, **extra_hparams) -> Dict[str, Any]:
    if hparams is None:
        hparams_to_save = {}
    elif dataclasses.is_dataclass(hparams):
        hparams_to_save = to_jsonable(hparams)
    else:
        hparams_to_save = dict(hparams)
    if extra_hparams:
        hparams_to_save.update(extra_hparams)
    return hparams_to_save


def prefixed(metrics: Dict[str, Any], prefix: Optional[str]) -> Dict[str, Any]:
    if not prefix:
        return dict(metrics)
    return {f"{prefix}/{k}": v for k, v in metrics.items()}


def scalar_metrics(metrics: Dict[str, Any]) -> Dict[str, Any]:
    """Drops entries that are None, e.g. an upper bound before the first full window."""
    return {k: to_jsonable(v) for k, v in metrics.items() if v is not None}
