"""Checkpoint serialization: model tensors plus a training-state sidecar.

A checkpoint is a directory:

* ``params.json``  — manifest: format version, detector config echo, and one
  entry per tensor (name, shape, byte offset into the blob);
* ``params.bin``   — all tensors, little-endian float32, back to back;
* ``state.json``   — training sidecar: step count, method, seed, alpha,
  optimizer-moment manifest, and the rng bit-generator state (optional);
* ``moments.bin``  — optimizer first/second moments, little-endian float64
  (present only when the sidecar carries an optimizer).

Reloading a checkpoint and saving it again reproduces the files byte for
byte; tensor values themselves round through float32.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .adapt import AdamState
from .errors import UsageError
from .model import DetectorConfig

_FORMAT_VERSION = 1
_PARAMS_DTYPE = "<f4"
_MOMENTS_DTYPE = "<f8"


@dataclass
class TrainingState:
    """Sidecar payload accompanying saved model tensors."""
    step: int = 0
    method: str = "collapaul"
    seed: int = 0
    alpha: float = 0.99
    optimizer: AdamState | None = None
    rng_state: dict | None = None


def rng_state_of(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bit_generator = getattr(np.random, state["bit_generator"])()
    bit_generator.state = state
    return np.random.Generator(bit_generator)


def _write_tensors(path: Path, tensors: dict[str, np.ndarray], dtype: str,
                   ) -> list[dict]:
    manifest = []
    offset = 0
    with open(path, "wb") as blob:
        for name, tensor in tensors.items():
            raw = np.ascontiguousarray(tensor, dtype=dtype).tobytes()
            blob.write(raw)
            manifest.append({"name": name,
                             "shape": list(tensor.shape),
                             "offset": offset})
            offset += len(raw)
    return manifest


def _read_tensors(path: Path, manifest: list[dict], dtype: str,
                  ) -> dict[str, np.ndarray]:
    blob = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    out: dict[str, np.ndarray] = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + count * itemsize > len(blob):
            raise UsageError(f"checkpoint blob {path} is truncated")
        flat = np.frombuffer(blob, dtype=dtype, count=count, offset=start)
        out[entry["name"]] = flat.astype(np.float64).reshape(shape)
    return out


def save_checkpoint(directory, params: dict[str, np.ndarray],
                    config: DetectorConfig,
                    state: TrainingState | None = None) -> None:
    """Write params + manifest (+ sidecar when given) under ``directory``."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "version": _FORMAT_VERSION,
            "detector": asdict(config),
            "tensors": _write_tensors(out / "params.bin", params,
                                      _PARAMS_DTYPE),
        }
        with open(out / "params.json", "w") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
        if state is None:
            (out / "state.json").unlink(missing_ok=True)
            (out / "moments.bin").unlink(missing_ok=True)
            return
        sidecar = {
            "step": state.step,
            "method": state.method,
            "seed": state.seed,
            "alpha": state.alpha,
            "rng_state": state.rng_state,
            "moments": None,
        }
        if state.optimizer is None:
            (out / "moments.bin").unlink(missing_ok=True)
        else:
            opt = state.optimizer
            stacked = {}
            for name in opt.m:
                stacked[f"m.{name}"] = opt.m[name]
            for name in opt.v:
                stacked[f"v.{name}"] = opt.v[name]
            sidecar["moments"] = {
                "step": opt.step,
                "beta1": opt.beta1,
                "beta2": opt.beta2,
                "eps": opt.eps,
                "tensors": _write_tensors(out / "moments.bin", stacked,
                                          _MOMENTS_DTYPE),
            }
        with open(out / "state.json", "w") as fh:
            json.dump(sidecar, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise UsageError(f"cannot write checkpoint under {out}: {exc}") from exc


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray],
                                        DetectorConfig, TrainingState | None]:
    """Read (params, detector config, sidecar-or-None) from a directory."""
    root = Path(directory)
    manifest_path = root / "params.json"
    if not manifest_path.exists():
        raise UsageError(
            f"no checkpoint at {root} (params.json missing); "
            "run pretrain or adapt first")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    config = DetectorConfig(**manifest["detector"])
    params = _read_tensors(root / "params.bin", manifest["tensors"],
                           _PARAMS_DTYPE)

    state_path = root / "state.json"
    if not state_path.exists():
        return params, config, None
    with open(state_path) as fh:
        sidecar = json.load(fh)
    optimizer = None
    if sidecar.get("moments") is not None:
        meta = sidecar["moments"]
        stacked = _read_tensors(root / "moments.bin", meta["tensors"],
                                _MOMENTS_DTYPE)
        optimizer = AdamState(
            m={k[2:]: v for k, v in stacked.items() if k.startswith("m.")},
            v={k[2:]: v for k, v in stacked.items() if k.startswith("v.")},
            step=meta["step"], beta1=meta["beta1"], beta2=meta["beta2"],
            eps=meta["eps"],
        )
    state = TrainingState(
        step=sidecar["step"],
        method=sidecar["method"],
        seed=sidecar["seed"],
        alpha=sidecar["alpha"],
        optimizer=optimizer,
        rng_state=sidecar["rng_state"],
    )
    return params, config, state
