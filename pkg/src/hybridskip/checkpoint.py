"""Binary checkpoint serialization.

Layout (all integers little-endian):

    magic   4 bytes  "HSKP"
    version uint32   currently 1
    count   uint32   number of tensors
    per tensor:
        name_len uint16, name UTF-8 bytes
        rank     uint8
        dims     uint32 * rank
        data     float64 * prod(dims), little-endian

A model checkpoint stores the architecture under "meta." names (numeric
encodings, see _META below), learnable tensors under their model names,
optimizer moments under "opt." and training counters under "train.", so a
file alone is enough to rebuild the model and resume.
"""
import struct
from collections import OrderedDict

import numpy as np

from . import skips as S
from . import unet as U
from .errors import FormatError

MAGIC = b"HSKP"
VERSION = 1


def save_tensors(path, named):
    """Write an ordered {name: ndarray} mapping; byte-exact for equal inputs."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(named)))
        for name, arr in named.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"checkpoint truncated while reading {what}")
        piece = blob[pos:pos + n]
        pos += n
        return piece

    pos = 0
    if take(4, "magic") != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<I", take(4, "count"))
    out = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims")) if rank else ()
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * size, f"data of {name}"), dtype="<f8")
        out[name] = data.reshape(dims).astype(np.float64)
    if pos != len(blob):
        raise FormatError("trailing bytes after last tensor")
    return out


# --------------------------------------------------------------------------
# model <-> tensor-dict packing

_SKIP_TAGS = list(S.SKIP_KINDS)
_ACTIVATIONS = list(U.ACTIVATION_CHOICES)
_TRANSFORMS = list(U.OUTPUT_TRANSFORMS)
_HIGHPASS = list("log residual".split())


def _meta_tensors(cfg):
    fixed = S.parse_blend_mode(cfg.blend_mode)
    blend = np.array([0.0]) if fixed is None else np.array([1.0, *fixed])
    meta = OrderedDict()
    meta["meta.channel_plan"] = np.array(cfg.channel_plan, dtype=float)
    meta["meta.input_channels"] = np.array([cfg.input_channels], dtype=float)
    meta["meta.skip_kind"] = np.array([_SKIP_TAGS.index(cfg.skip)], dtype=float)
    meta["meta.activation"] = np.array([_ACTIVATIONS.index(cfg.activation)], dtype=float)
    meta["meta.output_transform"] = np.array(
        [_TRANSFORMS.index(cfg.output_transform)], dtype=float)
    meta["meta.filter_size"] = np.array([cfg.filter_size], dtype=float)
    meta["meta.highpass"] = np.array([_HIGHPASS.index(cfg.highpass)], dtype=float)
    meta["meta.conv_k"] = np.array([cfg.conv_k], dtype=float)
    meta["meta.residual_units"] = np.array(
        [-1.0 if cfg.residual_units is None else cfg.residual_units])
    meta["meta.sqex_ratio"] = np.array([cfg.sqex_ratio], dtype=float)
    meta["meta.blend_mode"] = blend
    return meta


def _config_from_meta(t):
    try:
        blend = t["meta.blend_mode"]
        if blend[0] == 0.0:
            blend_mode = "learnable"
        else:
            blend_mode = f"fixed:{blend[1]},{blend[2]}"
        residual = t["meta.residual_units"][0]
        return U.UNetConfig(
            channel_plan=tuple(int(v) for v in t["meta.channel_plan"]),
            input_channels=int(t["meta.input_channels"][0]),
            skip=_SKIP_TAGS[int(t["meta.skip_kind"][0])],
            activation=_ACTIVATIONS[int(t["meta.activation"][0])],
            output_transform=_TRANSFORMS[int(t["meta.output_transform"][0])],
            filter_size=int(t["meta.filter_size"][0]),
            highpass=_HIGHPASS[int(t["meta.highpass"][0])],
            conv_k=int(t["meta.conv_k"][0]),
            residual_units=None if residual < 0 else int(residual),
            sqex_ratio=int(t["meta.sqex_ratio"][0]),
            blend_mode=blend_mode)
    except (KeyError, IndexError) as exc:
        raise FormatError(f"checkpoint misses model metadata: {exc}") from None


def save_model(path, model, extra=None):
    """Write metadata, model parameters, and any extra named arrays."""
    named = _meta_tensors(model.cfg)
    for name, tensor in model.named_parameters():
        named[name] = tensor.data
    for name, arr in (extra or {}).items():
        named[name] = np.asarray(arr, dtype=float)
    save_tensors(path, named)


def load_model(path):
    """Rebuild (model, extra) from a file written by save_model."""
    stored = load_tensors(path)
    cfg = _config_from_meta(stored)
    model = U.build_unet(cfg, seed=0)
    consumed = set(k for k in stored if k.startswith("meta."))
    for name, tensor in model.named_parameters():
        if name not in stored:
            raise FormatError(f"checkpoint misses parameter {name}")
        arr = stored[name]
        if arr.shape != tensor.data.shape:
            raise FormatError(
                f"parameter {name} has shape {arr.shape}, "
                f"model expects {tensor.data.shape}")
        tensor.data = np.ascontiguousarray(arr)
        consumed.add(name)
    extra = OrderedDict(
        (k, v) for k, v in stored.items() if k not in consumed)
    return model, extra
