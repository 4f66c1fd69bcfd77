"""Single-file checkpoints with flat slash-named tensors.

A checkpoint is one torch.save archive holding: the iteration counter,
every live model's parameters and buffers under ``<model>/<submodule>/...``
keys (state-dict dots become slashes, so ``generator/trunk/0/conv1/weight``),
optimizer state dicts, rng states, and an echo of the run config. Writes
go to a temp file in the target directory followed by an atomic rename,
so a crash never leaves a truncated checkpoint behind. Serialization is
deterministic: saving, loading, and saving again yields identical bytes.
"""

import os
import tempfile
from pathlib import Path
from typing import Mapping

import torch
from torch import nn

from .errors import CheckpointError

FORMAT_VERSION = 1


def pack_models(models: Mapping[str, nn.Module]) -> dict:
    """Flatten the models' state dicts into one slash-keyed tensor dict."""
    tensors = {}
    for name, model in models.items():
        if model is None:
            continue
        for key, value in model.state_dict().items():
            tensors[f"{name}/{key.replace('.', '/')}"] = value.detach().clone()
    return tensors


def unpack_models(tensors: Mapping[str, torch.Tensor],
                  models: Mapping[str, nn.Module]) -> None:
    """Load slash-keyed tensors back into the given models, strictly.

    Every model must find all of its entries with matching shapes; unknown
    entries under a requested model name are rejected too. Tensors for
    models not mentioned are ignored, so a partial load (say, generator
    only) works off a full training checkpoint.
    """
    for name, model in models.items():
        if model is None:
            continue
        prefix = f"{name}/"
        available = {k[len(prefix):].replace("/", "."): v
                     for k, v in tensors.items() if k.startswith(prefix)}
        state = model.state_dict()
        missing = sorted(set(state) - set(available))
        if missing:
            raise CheckpointError(
                f"checkpoint lacks {prefix}{missing[0].replace('.', '/')}"
                + (f" and {len(missing) - 1} more" if len(missing) > 1 else "")
            )
        unexpected = sorted(set(available) - set(state))
        if unexpected:
            raise CheckpointError(
                f"checkpoint entry {prefix}{unexpected[0].replace('.', '/')} "
                f"does not exist in the model"
            )
        for key, value in available.items():
            if tuple(value.shape) != tuple(state[key].shape):
                raise CheckpointError(
                    f"shape mismatch for {prefix}{key.replace('.', '/')}: "
                    f"checkpoint {tuple(value.shape)} vs model {tuple(state[key].shape)}"
                )
        model.load_state_dict(available)


def save_checkpoint(state: dict, path: Path) -> None:
    """Atomically serialize a checkpoint state dict."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(state)
    payload.setdefault("format_version", FORMAT_VERSION)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            torch.save(payload, handle)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint file not found: {path}")
    try:
        state = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(state, dict) or "tensors" not in state:
        raise CheckpointError(f"{path} is not a recognized checkpoint archive")
    return state
