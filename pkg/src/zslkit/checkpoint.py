"""Model checkpoint file: one JSON header line, then raw weight blobs.

Layout:
    {"arch": ..., "hyper": ..., "seed": ..., "step": ...}\n
    then per weight, in the frozen declaration order:
    rows (int64 LE) | cols (int64 LE) | rows*cols float64 LE, row-major

Only weights are persisted; Adam moments are not, so a loaded state is for
inference. Writing is byte-deterministic for a given (arch, weights, seed).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import InputError
from .net import ArchSpec, Hyper, ModelState

_DIMS = struct.Struct("<qq")


def save_checkpoint(path, arch: ArchSpec, state: ModelState, seed: int) -> None:
    header = {
        "arch": arch.to_dict(),
        "hyper": state.hyper.to_dict(),
        "seed": int(seed),
        "step": int(state.step),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for w in state.weights:
            fh.write(_DIMS.pack(w.shape[0], w.shape[1]))
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (arch, state, seed); moments come back zeroed."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        if not header_line.endswith(b"\n"):
            raise InputError(f"{path}: missing checkpoint header line")
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InputError(f"{path}: bad checkpoint header: {exc}") from exc
        for key in ("arch", "hyper", "seed", "step"):
            if key not in header:
                raise InputError(f"{path}: checkpoint header lacks {key!r}")
        arch = ArchSpec.from_dict(header["arch"])
        weights = []
        for pos, (rows, cols) in enumerate(arch.weight_shapes()):
            raw = fh.read(_DIMS.size)
            if len(raw) != _DIMS.size:
                raise InputError(f"{path}: truncated at weight {pos} size prefix")
            got_rows, got_cols = _DIMS.unpack(raw)
            if (got_rows, got_cols) != (rows, cols):
                raise InputError(
                    f"{path}: weight {pos} is {got_rows}x{got_cols}, "
                    f"arch expects {rows}x{cols}"
                )
            blob = fh.read(rows * cols * 8)
            if len(blob) != rows * cols * 8:
                raise InputError(f"{path}: truncated weight {pos} payload")
            weights.append(
                np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(rows, cols)
            )
        if fh.read(1):
            raise InputError(f"{path}: trailing bytes after last weight")
    state = ModelState(
        weights=weights,
        adam_m=[np.zeros_like(w) for w in weights],
        adam_v=[np.zeros_like(w) for w in weights],
        step=int(header["step"]),
        hyper=Hyper.from_dict(header["hyper"]),
    )
    return arch, state, int(header["seed"])
