"""Binary checkpoints for extractors and mergers, and the JSON bank manifest.

File layout (all integers unsigned 32-bit little-endian):

    b"AFSC" | version | manifest length | manifest (UTF-8 JSON)
    then one blob per parameter listed in the manifest:
    name length | name (UTF-8) | rank | extents... | values (float32 LE, row-major)

The manifest records the kind ("extractor" or "merger"), dimensions,
budget, seed, metrics and the parameter names in blob order.
"""
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import DataError
from .files import atomic_write
from .models import ExtractorNet, LinearHead
from .stacking import BankEntry, BankManifest, Merger
from .tensor import Tensor

MAGIC = b"AFSC"
VERSION = 1
BANK_FILE = "bank.json"


class CheckpointError(DataError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


@dataclass
class MergerCheckpoint:
    merger: Merger
    mask: Optional[str] = None  # bank mask the merger was trained on
    metrics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)


def _as_f32(a):
    return np.asarray(a, dtype="<f4")


def _pack_blob(name, array):
    raw_name = name.encode("utf-8")
    arr = _as_f32(array)
    head = struct.pack(f"<II{arr.ndim}I", len(raw_name), arr.ndim, *arr.shape)
    # the name sits between its length and the rank
    return head[:4] + raw_name + head[4:] + arr.tobytes(order="C")


def encode(manifest, params):
    """Serialize a manifest dict and an ordered list of (name, array) pairs."""
    manifest = dict(manifest, params=[name for name, _ in params])
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(text)), text]
    parts += [_pack_blob(name, arr) for name, arr in params]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError(
                f"corrupt checkpoint: {what} needs {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def decode(buf):
    """Inverse of ``encode``: returns (manifest, {name: float64 array})."""
    r = _Reader(buf)
    if len(buf) < 4 or r.take(4, "magic") != MAGIC:
        raise CorruptCheckpointError("not a checkpoint: bad magic (expected AFSC)")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (this build reads version {VERSION})")
    text = r.take(r.u32("manifest length"), "manifest")
    try:
        manifest = json.loads(text.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"corrupt checkpoint manifest: {exc}") from None
    params = {}
    for expected in manifest.get("params", []):
        name = r.take(r.u32("blob name length"), "blob name").decode("utf-8", errors="replace")
        if name != expected:
            raise CorruptCheckpointError(f"corrupt checkpoint: blob {name!r} where {expected!r} was expected")
        rank = r.u32(f"rank of {name}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"extents of {name}"))
        count = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(r.take(4 * count, f"values of {name}"), dtype="<f4")
        params[name] = values.reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CorruptCheckpointError(f"corrupt checkpoint: {len(buf) - r.pos} trailing bytes")
    return manifest, params


def _extractor_params(ckpt):
    named = list(ckpt.net.named_parameters()) + [("head." + n, p) for n, p in ckpt.head.named_parameters()]
    return [(n, p.data) for n, p in named]


def save_checkpoint(obj, path):
    """Write an ExtractorCheckpoint or MergerCheckpoint atomically."""
    if isinstance(obj, MergerCheckpoint):
        m = obj.merger
        manifest = {"kind": "merger", "dims": {"in_dim": m.in_dim, "num_classes": m.num_classes},
                    "mask": obj.mask, "metrics": obj.metrics, "config": obj.config}
        params = [(n, p.data) for n, p in m.named_parameters()]
    elif hasattr(obj, "net") and hasattr(obj, "head"):
        net = obj.net
        manifest = {"kind": "extractor",
                    "dims": {"input_dim": net.input_dim, "hidden": net.hidden, "feature_dim": net.feature_dim,
                             "num_classes": obj.head.num_classes},
                    "budget": obj.budget, "seed": obj.seed, "metrics": obj.metrics, "config": obj.config}
        params = _extractor_params(obj)
    else:
        raise TypeError(f"save_checkpoint: cannot serialize {type(obj).__name__}")
    atomic_write(path, encode(manifest, params))


def load_checkpoint(path):
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    manifest, params = decode(buf)
    kind = manifest.get("kind")
    if kind == "merger":
        merger = Merger(Tensor(params["weight"], requires_grad=True), Tensor(params["bias"], requires_grad=True))
        return MergerCheckpoint(merger, manifest.get("mask"), manifest.get("metrics", {}), manifest.get("config", {}))
    if kind == "extractor":
        from .training import ExtractorCheckpoint

        depth = len(manifest["dims"]["hidden"]) + 1
        try:
            net = ExtractorNet([params[f"layer{i}.weight"] for i in range(depth)],
                               [params[f"layer{i}.bias"] for i in range(depth)])
            head = LinearHead(params["head.weight"], params["head.bias"])
        except KeyError as exc:
            raise CorruptCheckpointError(f"corrupt checkpoint: missing parameter {exc.args[0]}") from None
        return ExtractorCheckpoint(net, head, manifest["budget"], manifest["seed"],
                                   manifest.get("metrics", {}), manifest.get("config", {}))
    raise CorruptCheckpointError(f"corrupt checkpoint: unknown kind {kind!r}")


# bank manifest --------------------------------------------------------------

def save_bank(bank, directory):
    """Write each member as extractor_<i>.afsc plus bank.json (budgets, seeds, metrics, mask)."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, e in enumerate(bank.entries):
        name = f"extractor_{i}.afsc"
        if e.checkpoint is not None:
            save_checkpoint(e.checkpoint, os.path.join(directory, name))
        elif e.path is None:
            raise ValueError(f"save_bank: entry {i} has neither a checkpoint nor a path")
        else:
            name = os.path.relpath(e.path, directory)
        entries.append({"budget": e.budget, "path": name, "seed": e.seed, "metrics": e.metrics})
    doc = {"entries": entries, "mask": bank.mask_string}
    atomic_write(os.path.join(directory, BANK_FILE), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return os.path.join(directory, BANK_FILE)


def bank_path(path):
    return os.path.join(path, BANK_FILE) if os.path.isdir(path) else path


def load_bank(path, load_checkpoints=True):
    """Read bank.json (or a directory holding it); member checkpoints resolve relative to it."""
    path = bank_path(path)
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as exc:
        raise CheckpointError(f"cannot read bank manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"bank manifest {path} is not valid JSON: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    for e in doc["entries"]:
        member = os.path.join(base, e["path"])
        ckpt = load_checkpoint(member) if load_checkpoints else None
        entries.append(BankEntry(e["budget"], ckpt, member, e.get("seed"), e.get("metrics", {})))
    mask = doc.get("mask")
    return BankManifest(entries, None if mask is None else [c == "1" for c in mask])


def update_bank_mask(path, mask):
    """Rewrite only the mask field of an existing bank.json."""
    path = bank_path(path)
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if len(mask) != len(doc["entries"]):
        raise ValueError(f"mask {mask!r} has {len(mask)} digits for {len(doc['entries'])} extractors")
    doc["mask"] = mask
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
