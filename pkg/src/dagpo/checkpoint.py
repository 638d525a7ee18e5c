"""Checkpoint container: a ``.npz`` archive of float64 arrays plus a JSON header.

Round trips are bit-exact: every tensor is stored as little-endian float64 and
the header carries dims, freeze flags, optimizer counters, RNG states and any
caller metadata.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .denoiser import AdamW, DenoiserDims, DenoiserParams

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, params: DenoiserParams, optimizer: AdamW | None = None,
                    epoch: int = 0, rng_state: dict | None = None, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{i}"] = w.astype("<f8")
        arrays[f"b{i}"] = b.astype("<f8")
    opt_header = None
    if optimizer is not None:
        opt_header = {k: getattr(optimizer, k) for k in
                      ("lr", "beta1", "beta2", "eps", "weight_decay", "step_count")}
        for i, (mpair, vpair) in enumerate(zip(optimizer.m, optimizer.v)):
            arrays[f"m_w{i}"], arrays[f"m_b{i}"] = (a.astype("<f8") for a in mpair)
            arrays[f"v_w{i}"], arrays[f"v_b{i}"] = (a.astype("<f8") for a in vpair)
    header = {
        "format_version": FORMAT_VERSION,
        "dims": asdict(params.dims),
        "frozen": list(params.frozen),
        "optimizer": opt_header,
        "epoch": int(epoch),
        "rng_state": rng_state or {},
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Returns ``(params, optimizer_or_None, header)``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(bytes(z["header"]).decode())
            if header.get("format_version") != FORMAT_VERSION:
                raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
            dims = DenoiserDims(**header["dims"])
            L = dims.layers + 1
            params = DenoiserParams(dims, [z[f"w{i}"].astype(np.float64) for i in range(L)],
                                    [z[f"b{i}"].astype(np.float64) for i in range(L)],
                                    list(header["frozen"]))
            optimizer = None
            if header["optimizer"] is not None:
                optimizer = AdamW(**header["optimizer"])
                if "m_w0" in z.files:
                    optimizer.m = [[z[f"m_w{i}"].copy(), z[f"m_b{i}"].copy()] for i in range(L)]
                    optimizer.v = [[z[f"v_w{i}"].copy(), z[f"v_b{i}"].copy()] for i in range(L)]
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    return params, optimizer, header
