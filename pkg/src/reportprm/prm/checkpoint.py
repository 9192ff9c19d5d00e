"""Verifier checkpoints on top of the shared binary container.

Loading a saved model reproduces forward outputs bit-exactly because
parameters are stored at their native float32 width.
"""
from __future__ import annotations

import torch

from ..container import read_container, write_container
from ..errors import CheckpointShapeError, DataError
from .model import ModelArch, SentenceVerifier


def save_checkpoint(model: SentenceVerifier, path) -> None:
    state = model.state_dict()
    for name, tensor in state.items():
        if not torch.isfinite(tensor).all():
            raise DataError(f"non-finite parameter tensor {name!r}")
    header = {"kind": "prm", "arch": model.arch.to_dict(), "seed": model.seed}
    tensors = {name: tensor.detach().to(torch.float32).numpy() for name, tensor in state.items()}
    write_container(path, header, tensors)


def load_checkpoint(path) -> SentenceVerifier:
    header, tensors = read_container(path)
    if header.get("kind") != "prm":
        raise CheckpointShapeError(f"container holds {header.get('kind')!r}, not a verifier")
    arch = ModelArch(**header["arch"])
    model = SentenceVerifier(arch, seed=int(header.get("seed", 0)))
    state = model.state_dict()
    if set(state) != set(tensors):
        missing = set(state) ^ set(tensors)
        raise CheckpointShapeError(f"tensor names disagree with architecture: {sorted(missing)}")
    for name, array in tensors.items():
        if tuple(state[name].shape) != array.shape:
            raise CheckpointShapeError(
                f"tensor {name!r} has shape {array.shape}, expected {tuple(state[name].shape)}"
            )
    model.load_state_dict({n: torch.from_numpy(a.copy()) for n, a in tensors.items()})
    model.eval()
    return model
