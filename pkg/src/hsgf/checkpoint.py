"""Binary checkpoint serialization.

Layout (all integers little-endian u32 unless noted):

    bytes 0..3   magic "HSGF"
    u32          format version (currently 1)
    u32          config blob length, then that many bytes of UTF-8 JSON
    u32          tensor count
    per tensor:  u32 name length, name bytes (UTF-8),
                 u32 rank, rank x u32 extents,
                 prod(extents) x f32 little-endian values (row-major)

The config blob holds the model configuration plus whatever provenance the
writer supplies (split spec, training flags). Band-reduction state rides along
as tensors named pca.mean / pca.components / pca.eigenvalues.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, init_params
from .pca import PCAModel

MAGIC = b"HSGF"
VERSION = 1


def _pack_tensor(out, name, values):
    encoded = name.encode("utf-8")
    arr = np.ascontiguousarray(values, dtype="<f4")
    out.append(struct.pack("<I", len(encoded)))
    out.append(encoded)
    out.append(struct.pack("<I", arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.append(arr.tobytes())


def save_checkpoint(path, params, pca_model=None, extra_config=None):
    """Write params (and optional PCA state) with their config to `path`."""
    config = dict(params.config.to_dict())
    if extra_config:
        config.update(extra_config)
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(blob)), blob]
    named = list(params.named_tensors())
    pca_tensors = []
    if pca_model is not None:
        pca_tensors = [("pca.mean", pca_model.mean),
                       ("pca.components", pca_model.components),
                       ("pca.eigenvalues", pca_model.eigenvalues)]
    chunks.append(struct.pack("<I", len(named) + len(pca_tensors)))
    for name, tensor in named:
        _pack_tensor(chunks, name, tensor.data)
    for name, values in pca_tensors:
        _pack_tensor(chunks, name, values)
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ValueError("checkpoint truncated")
        piece = self.buf[self.pos:self.pos + n]
        self.pos += n
        return piece

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, dtype=np.float32):
    """Read (params, pca_model_or_None, config_dict) back from `path`.

    Tensor names must exactly cover what the stored configuration requires;
    extras or gaps are load errors, not silent defaults.
    """
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version} (expected {VERSION})")
    config_dict = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        extents = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        count = int(np.prod(extents)) if extents else 1
        values = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(extents)
        if name in tensors:
            raise ValueError(f"duplicate tensor {name!r} in checkpoint")
        tensors[name] = values
    if r.pos != len(r.buf):
        raise ValueError("trailing bytes after the last tensor")

    model_keys = {f.name for f in ModelConfig.__dataclass_fields__.values()}
    model_config = ModelConfig.from_dict({k: v for k, v in config_dict.items()
                                          if k in model_keys})
    params = _params_from_tensors(model_config, tensors, dtype)
    pca_model = None
    if "pca.mean" in tensors:
        pca_model = PCAModel(mean=tensors.pop("pca.mean").astype(np.float64),
                             components=tensors.pop("pca.components").astype(np.float64),
                             eigenvalues=tensors.pop("pca.eigenvalues").astype(np.float64))
    leftover = [k for k in tensors if k.startswith("pca.")]
    if leftover:
        raise ValueError(f"incomplete band-reduction state: {sorted(leftover)}")
    return params, pca_model, config_dict


def _params_from_tensors(config, tensors, dtype):
    params = init_params(config, seed=0, dtype=dtype)
    expected = dict(params.named_tensors())
    stored = {k: v for k, v in tensors.items() if not k.startswith("pca.")}
    missing = sorted(set(expected) - set(stored))
    unknown = sorted(set(stored) - set(expected))
    if missing or unknown:
        raise ValueError(
            f"checkpoint tensors do not match the stored configuration: "
            f"missing {missing}, unknown {unknown}")
    for name, tensor in expected.items():
        values = stored[name]
        if values.shape != tensor.shape:
            raise ValueError(
                f"tensor {name!r} has shape {values.shape}, expected {tensor.shape}")
        tensor.data = np.ascontiguousarray(values.astype(dtype))
        tensor.grad = None
    return params
