"""Versioned parameter checkpoints: one file per parameter set plus a manifest.

Layout of a checkpoint directory:
    manifest.json           version, per-set layer names and shapes
    <set>.npz               flat arrays keyed by layer name (exact dtype preserved)
    optimizer_<set>.npz     adaptive-moment state (step, exp_avg, exp_avg_sq per param)
    state.json              iteration/epoch counters, rng states, bookkeeping scalars
"""

from __future__ import annotations

import base64
import json
import os
import tempfile

import numpy as np
import torch

FORMAT_VERSION = 1


def _atomic_write(path: str, write_fn) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d)
    try:
        with os.fdopen(fd, "wb") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_param_set(directory: str, name: str, module: torch.nn.Module) -> dict:
    """Write one parameter set (params + buffers) as an npz; returns its manifest entry."""
    arrays = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    path = os.path.join(directory, f"{name}.npz")
    _atomic_write(path, lambda fh: np.savez(fh, **arrays))
    return {k: list(v.shape) for k, v in arrays.items()}


def load_param_set(directory: str, name: str, module: torch.nn.Module) -> None:
    path = os.path.join(directory, f"{name}.npz")
    if not os.path.exists(path):
        raise CheckpointError(f"missing parameter set {name!r} in {directory!r}")
    with np.load(path) as npz:
        state = {k: torch.from_numpy(npz[k].copy()) for k in npz.files}
    current = module.state_dict()
    if set(state) != set(current):
        raise CheckpointError(f"parameter set {name!r} does not match the model layout")
    for k in state:
        if tuple(state[k].shape) != tuple(current[k].shape):
            raise CheckpointError(
                f"shape mismatch for {name}/{k}: "
                f"{tuple(state[k].shape)} vs {tuple(current[k].shape)}")
    module.load_state_dict(state)


class CheckpointError(RuntimeError):
    pass


def save_optimizer(directory: str, name: str, opt: torch.optim.Optimizer) -> None:
    arrays, meta = {}, {"param_groups": []}
    sd = opt.state_dict()
    for g in sd["param_groups"]:
        meta["param_groups"].append({k: v for k, v in g.items()})
    for pid, st in sd["state"].items():
        for key, val in st.items():
            if torch.is_tensor(val):
                arrays[f"{pid}.{key}"] = val.cpu().numpy()
            else:
                arrays[f"{pid}.{key}"] = np.asarray(val)
    path = os.path.join(directory, f"optimizer_{name}.npz")
    _atomic_write(path, lambda fh: np.savez(fh, **arrays))
    with open(os.path.join(directory, f"optimizer_{name}.json"), "w") as fh:
        json.dump(meta, fh)


def load_optimizer(directory: str, name: str, opt: torch.optim.Optimizer) -> None:
    path = os.path.join(directory, f"optimizer_{name}.npz")
    if not os.path.exists(path):
        raise CheckpointError(f"missing optimizer state {name!r} in {directory!r}")
    with open(os.path.join(directory, f"optimizer_{name}.json")) as fh:
        meta = json.load(fh)
    state: dict = {}
    with np.load(path) as npz:
        for key in npz.files:
            pid_s, field = key.split(".", 1)
            arr = npz[key]
            entry = state.setdefault(int(pid_s), {})
            if field == "step":
                entry[field] = torch.tensor(arr.copy())
            else:
                entry[field] = torch.from_numpy(arr.copy())
    sd = opt.state_dict()
    if len(meta["param_groups"]) != len(sd["param_groups"]):
        raise CheckpointError("optimizer layout mismatch")
    for g_new, g_old in zip(meta["param_groups"], sd["param_groups"]):
        g_new["params"] = g_old["params"]
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def rng_state_to_json() -> dict:
    return {
        "torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode("ascii"),
    }


def restore_rng_state(blob: dict) -> None:
    raw = base64.b64decode(blob["torch"])
    torch.set_rng_state(torch.frombuffer(bytearray(raw), dtype=torch.uint8).clone())


def write_manifest(directory: str, sets: dict, extra: dict | None = None) -> None:
    manifest = {"version": FORMAT_VERSION, "sets": sets}
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)


def read_manifest(directory: str) -> dict:
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise CheckpointError(f"no manifest in {directory!r}")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')}")
    return manifest
