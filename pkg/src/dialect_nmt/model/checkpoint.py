"""Checkpoint container: a numpy ``.npz`` archive.

Layout (all arrays, no pickled objects):

* ``meta`` -- UTF-8 JSON encoded as a uint8 array with keys ``format``
  (``"dialect-nmt-checkpoint/1"``), ``config`` (ModelConfig fields),
  ``param_names`` (declared order), ``adam_step``, ``epoch`` (last completed
  epoch), ``rng`` (``{"seed", "next_epoch"}``: every random stream of the
  run is keyed by seed and epoch, so this pair is the full RNG state),
  ``vocab`` (corpus tokens, ids from 4 upward) and a free-form ``extra``
  mapping (model tag, region, loss history, ...).
* ``param/<name>``, ``adam_m/<name>``, ``adam_v/<name>`` -- one array per
  parameter tensor in declared order.

Float arrays are stored bit-exactly, so save/load round trips are lossless.
Archive members carry a fixed timestamp, so identical checkpoints are
byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .._util import atomic_write_bytes
from .config import ModelConfig
from .optim import AdamState
from .transformer import param_shapes

FORMAT = "dialect-nmt-checkpoint/1"
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    optimizer: AdamState | None = None
    epoch: int = 0
    seed: int = 0
    vocab_tokens: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    names = list(param_shapes(ckpt.config))
    if list(ckpt.params) != names:
        raise CheckpointError("parameter names do not match the config's declared order")
    meta = {
        "format": FORMAT,
        "config": asdict(ckpt.config),
        "param_names": names,
        "adam_step": ckpt.optimizer.step if ckpt.optimizer else None,
        "epoch": ckpt.epoch,
        "rng": {"seed": ckpt.seed, "next_epoch": ckpt.epoch + 1},
        "vocab": list(ckpt.vocab_tokens),
        "extra": ckpt.extra,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, ensure_ascii=False).encode("utf-8"), dtype=np.uint8)}
    for name in names:
        arrays[f"param/{name}"] = ckpt.params[name]
        if ckpt.optimizer is not None:
            arrays[f"adam_m/{name}"] = ckpt.optimizer.m[name]
            arrays[f"adam_v/{name}"] = ckpt.optimizer.v[name]
    return atomic_write_bytes(path, _npz_bytes(arrays))


def _npz_bytes(arrays: dict) -> bytes:
    # np.savez stamps members with the wall clock; pin the date instead
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for key, arr in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{key}.npy", date_time=_ZIP_EPOCH), member.getvalue())
    return buf.getvalue()


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            if meta.get("format") != FORMAT:
                raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
            config = ModelConfig(**meta["config"])
            names = meta["param_names"]
            params = OrderedDict((n, data[f"param/{n}"].copy()) for n in names)
            optimizer = None
            if meta["adam_step"] is not None:
                optimizer = AdamState(
                    meta["adam_step"],
                    OrderedDict((n, data[f"adam_m/{n}"].copy()) for n in names),
                    OrderedDict((n, data[f"adam_v/{n}"].copy()) for n in names),
                )
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    expected = param_shapes(config)
    for name, arr in params.items():
        if expected.get(name) != arr.shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {arr.shape}, expected {expected.get(name)}")
    return Checkpoint(
        config=config,
        params=params,
        optimizer=optimizer,
        epoch=meta["epoch"],
        seed=meta["rng"]["seed"],
        vocab_tokens=tuple(meta["vocab"]),
        extra=meta["extra"],
    )
