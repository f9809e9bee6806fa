"""Checkpoints and dataset exports: JSON manifest + little-endian f32 blob.

The blob is a sequence of sections, each starting on a 64-byte boundary and
zero-padded to the next one. The manifest lists every section (name, shape,
byte offset) and carries the blob's size and CRC32, so a reader needs
nothing but the two files.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .data import Dataset
from .errors import CorruptCheckpointError, SchemaError
from .models import ModelBundle, ModelConfig, build_model
from .prototypes import PrototypeStore

FORMAT = "lsf-f32-blob"
VERSION = 1
ALIGN = 64
DTYPE = "<f4"


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def _pack(arrays: list[tuple[str, np.ndarray]]) -> tuple[bytes, list[dict]]:
    buf = bytearray()
    sections = []
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        sections.append({"name": name, "shape": list(np.shape(arr)), "offset": len(buf), "nbytes": len(raw)})
        buf += raw
        buf += b"\0" * (-len(buf) % ALIGN)
    return bytes(buf), sections


def _write(path, kind: str, arrays: list[tuple[str, np.ndarray]], meta: dict) -> tuple[Path, Path]:
    mpath, bpath = _paths(path)
    blob, sections = _pack(arrays)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "dtype": "float32-le",
        "alignment": ALIGN,
        "blob": {"file": bpath.name, "size": len(blob), "crc32": zlib.crc32(blob)},
        "sections": sections,
        **meta,
    }
    mpath.parent.mkdir(parents=True, exist_ok=True)
    bpath.write_bytes(blob)
    mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return mpath, bpath


def read_blob(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Verify a manifest/blob pair and return (manifest, name -> float64 array)."""
    mpath, _ = _paths(path)
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError(f"cannot read manifest {mpath}: {e}") from e
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise SchemaError(f"{mpath}: not a version-{VERSION} {FORMAT} manifest")
    if kind is not None and manifest.get("kind") != kind:
        raise SchemaError(f"{mpath}: expected a {kind!r} file, found {manifest.get('kind')!r}")
    bpath = mpath.with_name(manifest["blob"]["file"])
    try:
        blob = bpath.read_bytes()
    except OSError as e:
        raise CorruptCheckpointError(f"cannot read blob {bpath}: {e}") from e
    if len(blob) != manifest["blob"]["size"]:
        raise CorruptCheckpointError(f"{bpath}: {len(blob)} bytes, manifest says {manifest['blob']['size']}")
    if zlib.crc32(blob) != manifest["blob"]["crc32"]:
        raise CorruptCheckpointError(f"{bpath}: CRC32 mismatch")
    arrays = {}
    for s in manifest["sections"]:
        n = int(np.prod(s["shape"], dtype=np.int64))
        if s["offset"] % ALIGN or s["nbytes"] != 4 * n or s["offset"] + s["nbytes"] > len(blob):
            raise CorruptCheckpointError(f"section {s['name']!r} has inconsistent offset or size")
        a = np.frombuffer(blob, dtype=DTYPE, count=n, offset=s["offset"]).reshape(s["shape"])
        arrays[s["name"]] = a.astype(np.float64)
    return manifest, arrays


def save_checkpoint(path, model: ModelBundle, store: PrototypeStore, step: int | None = None) -> tuple[Path, Path]:
    """Write model parameters and prototypes; returns (manifest path, blob path)."""
    arrays = [(f"param/{n}", model.params[n].data) for n in sorted(model.params)]
    protos = []
    for c in store.classes():
        arrays.append((f"proto/{c}", store.global_[c]))
        protos.append({"class": c, "count": store.step_count.get(c, 0), "frozen": c in store.frozen})
    cfg = asdict(model.config)
    cfg["hidden"] = list(cfg["hidden"])
    meta = {
        "step": step,
        "model": {"config": cfg, "head_sizes": list(model.head_sizes)},
        "prototypes": {"dim": store.dim, "classes": protos},
    }
    return _write(path, "checkpoint", arrays, meta)


def load_checkpoint(path) -> tuple[ModelBundle, PrototypeStore, dict]:
    manifest, arrays = read_blob(path, "checkpoint")
    try:
        cfg = dict(manifest["model"]["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        config = ModelConfig(**cfg)
        heads = [int(h) for h in manifest["model"]["head_sizes"]]
        pmeta = manifest["prototypes"]
    except (KeyError, TypeError) as e:
        raise SchemaError(f"manifest is missing model or prototype fields: {e}") from e
    model = build_model(config, seed=0)
    expected = set(model.params) | {f"head{g}.{s}" for g in range(len(heads)) for s in "wb"}
    present = {k[len("param/"):] for k in arrays if k.startswith("param/")}
    missing = sorted(expected - present)
    if missing:
        raise SchemaError(f"checkpoint lacks parameters {missing}")
    extra = sorted(present - expected)
    if extra:
        raise SchemaError(f"checkpoint has unexpected parameters {extra}")
    model.params = {n: Tensor(arrays[f"param/{n}"], requires_grad=True) for n in sorted(expected)}
    model.head_sizes = heads
    store = PrototypeStore(dim=int(pmeta["dim"]))
    for entry in pmeta["classes"]:
        c = int(entry["class"])
        key = f"proto/{c}"
        if key not in arrays:
            raise SchemaError(f"prototype section for class {c} is missing")
        store.global_[c] = arrays[key].copy()
        store.step_count[c] = int(entry["count"])
        if entry["frozen"]:
            store.frozen.add(c)
    return model, store, manifest


def export_dataset(ds: Dataset, path) -> tuple[Path, Path]:
    """Dump every split's inputs and labels (labels as f32, exact for small ints)."""
    arrays = []
    for split in ("train", "val", "test"):
        s = getattr(ds, split)
        arrays.append((f"{split}/x", s.x))
        arrays.append((f"{split}/y", s.y.astype(np.float64)))
    meta = {"dataset": {"mode": ds.mode, "classes": list(ds.classes), "background": ds.background}}
    return _write(path, "dataset", arrays, meta)
