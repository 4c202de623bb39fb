"""On-disk checkpoints: a JSON manifest plus one little-endian float32 blob per matrix.

Layout of a checkpoint directory::

    manifest.json
    layer0.u.bin  layer0.v.bin  layer0.s.bin  layer0.bias.bin  ...

Sparse matrices store only their live columns (ascending column id), so a
pruned layer's file size reflects the weights that actually remain.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decomposition import DenseLayer, FactorizedLayer
from .errors import CheckpointFormatError, StorageError

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
KINDS = ("dense", "factor_u", "factor_v", "sparse_columns", "bias")
_SUFFIX = {"dense": "w", "factor_u": "u", "factor_v": "v", "sparse_columns": "s", "bias": "bias"}
_DTYPE = np.dtype("<f4")


@dataclass
class MatrixEntry:
    """One named matrix. ``data`` is the full float64 matrix (dead sparse columns zero).

    Biases are stored as 1 x n matrices.
    """

    name: str
    kind: str
    data: np.ndarray
    live_column_ids: np.ndarray | None = None

    @property
    def base(self) -> str:
        suffix = "." + _SUFFIX[self.kind]
        return self.name[: -len(suffix)] if self.name.endswith(suffix) else self.name

    def stored(self) -> np.ndarray:
        if self.kind == "sparse_columns":
            return self.data[:, self.live_column_ids]
        return self.data

    def manifest_record(self) -> dict:
        rows, cols = self.data.shape
        rec = {
            "name": self.name,
            "kind": self.kind,
            "rows": rows,
            "cols": cols,
            "blob_file": f"{self.name}.bin",
            "dtype": "float32",
            "layout": "row-major",
            "endianness": "little",
        }
        if self.kind == "factor_u":
            rec["rank"] = cols
        elif self.kind == "factor_v":
            rec["rank"] = rows
        elif self.kind == "sparse_columns":
            rec["live_column_ids"] = [int(i) for i in self.live_column_ids]
        return rec


def model_entries(model) -> list[MatrixEntry]:
    entries = []
    for i, (layer, bias) in enumerate(zip(model.layers, model.biases)):
        base = f"layer{i}"
        if isinstance(layer, FactorizedLayer):
            entries += [
                MatrixEntry(f"{base}.u", "factor_u", layer.U),
                MatrixEntry(f"{base}.v", "factor_v", layer.V),
                MatrixEntry(f"{base}.s", "sparse_columns", layer.S, np.flatnonzero(layer.live_columns)),
            ]
        else:
            entries.append(MatrixEntry(f"{base}.w", "dense", layer.W))
        entries.append(MatrixEntry(f"{base}.bias", "bias", np.asarray(bias).reshape(1, -1)))
    return entries


def entries_to_model(entries):
    """Rebuild a ``ToyModel`` from ``layer{i}.*`` entries."""
    from .harness import ToyModel

    groups = {}
    for e in entries:
        groups.setdefault(e.base, {})[e.kind] = e
    layers, biases = [], []
    i = 0
    while f"layer{i}" in groups:
        g = groups[f"layer{i}"]
        if "dense" in g:
            layers.append(DenseLayer(g["dense"].data))
        elif {"factor_u", "factor_v", "sparse_columns"} <= g.keys():
            s = g["sparse_columns"]
            live = np.zeros(s.data.shape[1], dtype=bool)
            live[s.live_column_ids] = True
            layers.append(FactorizedLayer(g["factor_u"].data, g["factor_v"].data, s.data, live))
        else:
            raise CheckpointFormatError(f"layer{i}: needs a dense matrix or a u/v/s triple, found {sorted(g)}")
        if "bias" not in g:
            raise CheckpointFormatError(f"layer{i}: missing bias")
        biases.append(g["bias"].data.ravel().copy())
        i += 1
    if not layers:
        raise CheckpointFormatError("checkpoint holds no layer0.* matrices")
    return ToyModel(layers, biases)


def _manifest_bytes(entries) -> bytes:
    doc = {"format_version": FORMAT_VERSION, "matrices": [e.manifest_record() for e in entries]}
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()


def save_entries(entries, path) -> dict:
    """Write ``entries`` as a checkpoint directory, replacing ``path`` atomically."""
    path = Path(path)
    names = [e.name for e in entries]
    if len(set(names)) != len(names):
        raise CheckpointFormatError(f"duplicate matrix names in {names}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
        for e in entries:
            (tmp / f"{e.name}.bin").write_bytes(np.ascontiguousarray(e.stored(), dtype=_DTYPE).tobytes())
        manifest = _manifest_bytes(entries)
        (tmp / MANIFEST).write_bytes(manifest)
        tmp.chmod(0o755)
        if path.exists():
            old = path.with_name(f".{path.name}.old")
            shutil.rmtree(old, ignore_errors=True)
            os.replace(path, old)
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc
    return json.loads(manifest)


def save_checkpoint(model, path) -> dict:
    return save_entries(model_entries(model), path)


def _require(rec, key, kinds, where):
    if key not in rec:
        raise CheckpointFormatError(f"{where}: missing field {key!r}")
    value = rec[key]
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise CheckpointFormatError(f"{where}: field {key!r} has invalid value {value!r}")
    return value


def load_entries(path) -> list[MatrixEntry]:
    path = Path(path)
    try:
        raw = (path / MANIFEST).read_text()
    except OSError as exc:
        raise StorageError(f"cannot read manifest in {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path / MANIFEST}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise CheckpointFormatError(f"{path / MANIFEST}: top level must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointFormatError(f"format_version: expected {FORMAT_VERSION}, got {doc.get('format_version')!r}")
    records = doc.get("matrices")
    if not isinstance(records, list):
        raise CheckpointFormatError("matrices: expected a list")

    entries = []
    for n, rec in enumerate(records):
        where = f"matrices[{n}]"
        if not isinstance(rec, dict):
            raise CheckpointFormatError(f"{where}: expected an object")
        name = _require(rec, "name", str, where)
        where = f"matrices[{n}] ({name})"
        kind = _require(rec, "kind", str, where)
        if kind not in KINDS:
            raise CheckpointFormatError(f"{where}: field 'kind' has invalid value {kind!r}")
        rows = _require(rec, "rows", int, where)
        cols = _require(rec, "cols", int, where)
        if rows < 1 or cols < 1:
            raise CheckpointFormatError(f"{where}: rows and cols must be positive")
        for key, expected in (("dtype", "float32"), ("layout", "row-major"), ("endianness", "little")):
            if rec.get(key) != expected:
                raise CheckpointFormatError(f"{where}: field {key!r} must be {expected!r}, got {rec.get(key)!r}")
        blob = _require(rec, "blob_file", str, where)
        if Path(blob).is_absolute() or ".." in Path(blob).parts:
            raise CheckpointFormatError(f"{where}: field 'blob_file' must be a relative path inside the checkpoint")
        if kind in ("factor_u", "factor_v"):
            rank = _require(rec, "rank", int, where)
            if rank != (cols if kind == "factor_u" else rows):
                raise CheckpointFormatError(f"{where}: field 'rank' = {rank} disagrees with the matrix shape")

        live = None
        stored_cols = cols
        if kind == "sparse_columns":
            ids = _require(rec, "live_column_ids", list, where)
            live = np.asarray(ids, dtype=np.int64)
            if live.size and (np.any(np.diff(live) <= 0) or live[0] < 0 or live[-1] >= cols):
                raise CheckpointFormatError(f"{where}: field 'live_column_ids' must be strictly ascending ids below {cols}")
            stored_cols = live.size

        try:
            buf = (path / blob).read_bytes()
        except OSError as exc:
            raise StorageError(f"cannot read blob {path / blob}: {exc}") from exc
        expected = rows * stored_cols * _DTYPE.itemsize
        if len(buf) != expected:
            raise CheckpointFormatError(f"{where}: blob {blob} has {len(buf)} bytes, expected {expected}")
        stored = np.frombuffer(buf, dtype=_DTYPE).astype(np.float64).reshape(rows, stored_cols)
        if kind == "sparse_columns":
            data = np.zeros((rows, cols))
            data[:, live] = stored
        else:
            data = stored
        entries.append(MatrixEntry(name, kind, data, live))
    return entries


def load_checkpoint(path):
    return entries_to_model(load_entries(path))


def checkpoint_bytes(path) -> int:
    """Total size of every file in a checkpoint directory."""
    return sum(p.stat().st_size for p in Path(path).iterdir() if p.is_file())


def stored_parameter_count(entries) -> int:
    """Stored weight-matrix entries (biases excluded)."""
    return sum(e.stored().size for e in entries if e.kind != "bias")
