"""Checkpoint container: named arrays plus a JSON manifest in one .npz.

Parameters are stored under their module-qualified names, optimizer moments
under ``opt.<kind>.<name>``, so readers look fields up by name rather than
position. Reloading reproduces forward outputs bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Optional

import numpy as np
import torch

from .model import ExpressionCloner, ModelConfig, build_model

FORMAT_VERSION = 1


def _state_arrays(model: ExpressionCloner) -> dict[str, np.ndarray]:
    out = {}
    for name, tensor in model.state_dict().items():
        out[f"param.{name}"] = tensor.detach().cpu().numpy()
    return out


def _optimizer_arrays(model: ExpressionCloner, optimizer: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    id_to_name = {id(p): n for n, p in model.named_parameters()}
    out: dict[str, np.ndarray] = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p)
            if not state:
                continue
            name = id_to_name[id(p)]
            out[f"opt.step.{name}"] = np.asarray(float(state["step"]))
            out[f"opt.exp_avg.{name}"] = state["exp_avg"].detach().cpu().numpy()
            out[f"opt.exp_avg_sq.{name}"] = state["exp_avg_sq"].detach().cpu().numpy()
    return out


def checkpoint_digest(arrays: dict[str, np.ndarray], manifest: dict) -> str:
    # descriptive metadata (paths, names) stays out of the digest: two runs
    # with the same seed and config must produce the same digest anywhere
    core = {k: manifest[k] for k in ("format_version", "model_config", "step",
                                     "config_digest", "rng_state") if k in manifest}
    h = hashlib.sha256()
    h.update(json.dumps(core, sort_keys=True).encode())
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | Path,
    model: ExpressionCloner,
    optimizer: Optional[torch.optim.Optimizer] = None,
    step: int = 0,
    config_digest: str = "",
    rng_state: Optional[dict] = None,
    metadata: Optional[dict[str, Any]] = None,
) -> str:
    """Write the checkpoint; returns its content digest."""
    arrays = _state_arrays(model)
    if optimizer is not None:
        arrays.update(_optimizer_arrays(model, optimizer))
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "step": int(step),
        "config_digest": config_digest,
        "rng_state": rng_state,
        "metadata": metadata or {},
    }
    digest = checkpoint_digest(arrays, manifest)
    manifest["digest"] = digest
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, __manifest__=np.array(json.dumps(manifest, sort_keys=True)), **arrays)
    return digest


def load_checkpoint(path: str | Path) -> tuple[ExpressionCloner, dict]:
    """Rebuild the model from a checkpoint; returns (model, manifest).

    The manifest gains an ``arrays`` entry holding optimizer moments and any
    other non-parameter arrays for the trainer to restore.
    """
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        manifest = json.loads(str(z["__manifest__"]))
        arrays = {name: z[name] for name in z.files if name != "__manifest__"}
    config = ModelConfig.from_dict(manifest["model_config"])
    model = build_model(config, seed=0)
    dtype = config.torch_dtype()
    state = {}
    for name, tensor in model.state_dict().items():
        key = f"param.{name}"
        if key not in arrays:
            raise KeyError(f"checkpoint {path} is missing parameter {name}")
        loaded = torch.from_numpy(arrays[key])
        state[name] = loaded.to(dtype) if loaded.is_floating_point() else loaded
    model.load_state_dict(state)
    model.eval()
    manifest["arrays"] = {k: v for k, v in arrays.items() if not k.startswith("param.")}
    return model, manifest


def restore_optimizer(
    model: ExpressionCloner,
    optimizer: torch.optim.Optimizer,
    arrays: dict[str, np.ndarray],
) -> None:
    """Load Adam moments saved by ``save_checkpoint`` into a fresh optimizer."""
    name_to_param = dict(model.named_parameters())
    for name, param in name_to_param.items():
        key = f"opt.exp_avg.{name}"
        if key not in arrays:
            continue
        state = optimizer.state[param]
        state["step"] = torch.tensor(float(arrays[f"opt.step.{name}"]))
        state["exp_avg"] = torch.from_numpy(arrays[key]).to(param.dtype)
        state["exp_avg_sq"] = torch.from_numpy(arrays[f"opt.exp_avg_sq.{name}"]).to(param.dtype)
