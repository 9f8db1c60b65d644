"""COFT1 checkpoint files.

Layout::

    COFT1\\n
    <name>\\t<dtype>\\t<space-separated shape>\\t<byte offset>\\n   (one per tensor)
    \\n
    <raw little-endian payload, tensors in manifest order>

Offsets are relative to the start of the payload. The model config lives in
a JSON sidecar ``<path>.json`` so the manifest stays one line per tensor.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .model import ModelConfig, Parameters, ParamId, param_ids

MAGIC = b"COFT1\n"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_NAMES = {np.dtype("float32"): "f32", np.dtype("float64"): "f64"}


def save_checkpoint(params: Parameters, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines, chunks, offset = [], [], 0
    for pid in param_ids(params.config):
        arr = params[pid]
        name = _NAMES[arr.dtype]
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[name]).tobytes()
        shape = " ".join(str(s) for s in arr.shape)
        lines.append(f"{pid}\t{name}\t{shape}\t{offset}\n")
        chunks.append(raw)
        offset += len(raw)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write("".join(lines).encode("ascii"))
        fh.write(b"\n")
        for raw in chunks:
            fh.write(raw)
    Path(str(path) + ".json").write_text(json.dumps(params.config.to_dict(), indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path, config: ModelConfig | None = None) -> Parameters:
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a COFT1 checkpoint")
    header_end = data.index(b"\n\n", len(MAGIC) - 1)
    manifest = data[len(MAGIC) : header_end + 1].decode("ascii").splitlines()
    payload = memoryview(data)[header_end + 2 :]
    if config is None:
        config = ModelConfig.from_dict(json.loads(Path(str(path) + ".json").read_text()))
    tensors = {}
    for line in manifest:
        name, dtype, shape_s, off = line.split("\t")
        shape = tuple(int(s) for s in shape_s.split()) if shape_s else ()
        dt = _DTYPES[dtype]
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=int(off)).reshape(shape)
        tensors[ParamId.parse(name)] = arr.astype(dt.newbyteorder("="), copy=True)
    params = Parameters(config, tensors)
    params.validate()
    if [str(p) for p in param_ids(config)] != [ln.split("\t")[0] for ln in manifest]:
        raise ShapeMismatch(f"{path}: manifest order differs from the model layout")
    return params
