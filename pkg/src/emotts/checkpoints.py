"""Checkpoint directories: named float32 arrays + JSON metadata.

Every trained component persists as a directory:

    <ckpt>/
      metadata.json          # {"arrays": {name: {"file", "shape"}}, "meta": {...}}
      arrays/NNNN.mel        # one binary matrix container per named array

Tensors are stored float32 (the container's dtype), reshaped to 2-D with the
true shape recorded in metadata. Round-trips are bit-exact for float32 state.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

from .errors import ConfigurationError


def _to_2d(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    return arr.reshape(arr.shape[0], -1)


def save_arrays(
    ckpt_dir: str | Path,
    arrays: Mapping[str, np.ndarray | torch.Tensor],
    meta: dict[str, Any],
) -> Path:
    from .data_model import serialize_matrix

    ckpt = Path(ckpt_dir)
    (ckpt / "arrays").mkdir(parents=True, exist_ok=True)
    index: dict[str, dict[str, Any]] = {}
    for i, name in enumerate(sorted(arrays)):
        value = arrays[name]
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        value = np.asarray(value, dtype=np.float32)
        fname = f"{i:04d}.mel"
        (ckpt / "arrays" / fname).write_bytes(serialize_matrix(_to_2d(value)))
        index[name] = {"file": fname, "shape": list(value.shape)}
    (ckpt / "metadata.json").write_text(
        json.dumps({"arrays": index, "meta": meta}, indent=2, sort_keys=True)
    )
    return ckpt


def load_arrays(ckpt_dir: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    from .data_model import parse_matrix

    ckpt = Path(ckpt_dir)
    meta_path = ckpt / "metadata.json"
    if not meta_path.is_file():
        raise ConfigurationError(f"no checkpoint metadata at {meta_path}")
    payload = json.loads(meta_path.read_text())
    arrays: dict[str, np.ndarray] = {}
    for name, entry in payload["arrays"].items():
        mat = parse_matrix((ckpt / "arrays" / entry["file"]).read_bytes())
        arrays[name] = mat.reshape(entry["shape"])
    return arrays, payload["meta"]


def state_dict_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten a module state dict into named float32 numpy arrays."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[prefix + name] = tensor.detach().cpu().numpy().astype(np.float32)
    return out


def load_state_dict_arrays(
    module: torch.nn.Module, arrays: Mapping[str, np.ndarray], prefix: str = ""
) -> None:
    state = {}
    for name, tensor in module.state_dict().items():
        key = prefix + name
        if key not in arrays:
            raise ConfigurationError(f"checkpoint missing array {key!r}")
        state[name] = torch.from_numpy(
            np.array(arrays[key], dtype=np.float32, copy=True)
        ).to(tensor.dtype).reshape(tensor.shape)
    module.load_state_dict(state)


def module_hash(module: torch.nn.Module) -> str:
    """SHA-256 over the module's parameter and buffer bytes, name-ordered."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().astype(np.float32).tobytes())
    return h.hexdigest()


def file_tree_hash(root: str | Path) -> str:
    """SHA-256 over a directory's file names and contents (or a single file)."""
    root = Path(root)
    h = hashlib.sha256()
    if root.is_file():
        h.update(root.name.encode())
        h.update(root.read_bytes())
        return h.hexdigest()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def config_hash(config_dict: dict[str, Any]) -> str:
    return hashlib.sha256(
        json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
