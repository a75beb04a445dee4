"""AEMB tensor files, task manifests and results tables.

AEMB layout (all integers little-endian)::

    offset  size        field
    0       4           magic  b"AEMB"
    4       4  uint32   version (1)
    8       4  uint32   dtype   (0 = float32 little-endian)
    12      4  uint32   ndim
    16      8*ndim      dims, uint64 each
    16+8n   4*prod(dims) payload, C order
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import FormatError, IoError, ManifestError

MAGIC = b"AEMB"
VERSION = 1
DTYPE_F32 = 0
_PREFIX = struct.Struct("<4sIII")
# refuse headers that would describe absurd payloads before touching memory
MAX_NDIM = 32

RESULT_FIELDS = ("sample_index", "predicted_class", "true_class", "top_score", "weight_entropy_bits", "alpha")


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def encode_tensor(tensor) -> bytes:
    arr = np.asarray(tensor)
    if not np.all(np.isfinite(arr)):
        raise FormatError("tensor contains NaN or Inf")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = _PREFIX.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + dims + arr.tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _PREFIX.size:
        raise FormatError("file shorter than the fixed header", offset=len(buf))
    magic, version, dtype, ndim = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}", offset=8)
    if ndim > MAX_NDIM:
        raise FormatError(f"ndim {ndim} exceeds the limit of {MAX_NDIM}", offset=12)
    dims_end = _PREFIX.size + 8 * ndim
    if len(buf) < dims_end:
        raise FormatError("truncated dimension list", offset=len(buf))
    dims = struct.unpack_from(f"<{ndim}Q", buf, _PREFIX.size)
    # exact integer arithmetic, so overflow cannot wrap around
    count = math.prod(dims)
    expected = dims_end + 4 * count
    if len(buf) != expected:
        kind = "truncated" if len(buf) < expected else "trailing bytes after"
        raise FormatError(
            f"{kind} payload: header describes {4 * count} bytes, file holds {len(buf) - dims_end}",
            offset=min(len(buf), expected),
        )
    return np.frombuffer(buf, dtype="<f4", count=count, offset=dims_end).reshape(dims).copy()


def write_tensor(path, tensor) -> None:
    """Store ``tensor`` as float32 AEMB, replacing ``path`` atomically."""
    _atomic_write(path, encode_tensor(tensor))


def read_tensor(path) -> np.ndarray:
    """Load an AEMB file. The returned array keeps the stored float32 dtype."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return decode_tensor(buf)


def read_header(path) -> tuple:
    """Return the dims recorded in an AEMB header without loading the payload."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(_PREFIX.size)
            if len(head) == _PREFIX.size:
                ndim = _PREFIX.unpack(head)[3]
                head += fh.read(8 * min(ndim, MAX_NDIM + 1))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(head) < _PREFIX.size:
        raise FormatError("file shorter than the fixed header", offset=len(head))
    magic, version, dtype, ndim = _PREFIX.unpack_from(head, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if ndim > MAX_NDIM or len(head) < _PREFIX.size + 8 * ndim:
        raise FormatError("bad dimension list", offset=12)
    return struct.unpack_from(f"<{ndim}Q", head, _PREFIX.size)


@dataclass
class TaskManifest:
    classes: list
    templates: list
    descriptor_file: Path
    image_file: Path
    labels: Optional[list] = None
    temperature: Optional[float] = None
    mode: str = "zero-shot"
    descriptors: Optional[np.ndarray] = field(default=None, repr=False)
    images: Optional[np.ndarray] = field(default=None, repr=False)

    def to_json(self) -> dict:
        out = {
            "classes": list(self.classes),
            "templates": list(self.templates),
            "descriptor_file": str(self.descriptor_file),
            "image_file": str(self.image_file),
            "mode": self.mode,
        }
        if self.labels is not None:
            out["labels"] = [int(x) for x in self.labels]
        if self.temperature is not None:
            out["temperature"] = float(self.temperature)
        return out


def load_manifest(path) -> TaskManifest:
    """Parse a manifest and load both tensors, checking every dimension.

    Relative tensor paths resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError("manifest must be a JSON object")
    for key in ("classes", "templates", "descriptor_file", "image_file"):
        if key not in raw:
            raise ManifestError(f"manifest is missing required field {key!r}")
    unknown = set(raw) - {"classes", "templates", "descriptor_file", "image_file", "labels", "temperature", "mode"}
    if unknown:
        raise ManifestError(f"manifest has unknown fields: {sorted(unknown)}")
    classes, templates = raw["classes"], raw["templates"]
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise ManifestError("classes must be a list of strings")
    if not isinstance(templates, list) or not all(isinstance(t, str) for t in templates):
        raise ManifestError("templates must be a list of strings")
    mode = raw.get("mode", "zero-shot")
    if mode not in ("zero-shot", "few-shot"):
        raise ManifestError(f"mode must be 'zero-shot' or 'few-shot', got {mode!r}")
    temperature = raw.get("temperature")
    if temperature is not None and not (isinstance(temperature, (int, float)) and temperature > 0):
        raise ManifestError(f"temperature must be a positive number, got {temperature!r}")

    base = path.parent
    desc_path = base / raw["descriptor_file"]
    img_path = base / raw["image_file"]
    desc = read_tensor(desc_path)
    imgs = read_tensor(img_path)
    if desc.ndim != 3:
        raise ManifestError(f"descriptor tensor must be K x C x d, got shape {desc.shape}")
    if imgs.ndim != 2:
        raise ManifestError(f"image tensor must be N x d, got shape {imgs.shape}")
    K, C, d = desc.shape
    N = imgs.shape[0]
    if len(classes) != C:
        raise ManifestError(f"classes={len(classes)}, tensor C={C}")
    if len(templates) != K:
        raise ManifestError(f"templates={len(templates)}, tensor K={K}")
    if imgs.shape[1] != d:
        raise ManifestError(f"image d={imgs.shape[1]}, descriptor d={d}")
    labels = raw.get("labels")
    if labels is not None:
        if not isinstance(labels, list) or len(labels) != N:
            got = len(labels) if isinstance(labels, list) else type(labels).__name__
            raise ManifestError(f"labels={got}, tensor N={N}")
        if not all(isinstance(y, int) and 0 <= y < C for y in labels):
            raise ManifestError(f"labels must be class indices in [0, {C})")
    return TaskManifest(
        classes=classes,
        templates=templates,
        descriptor_file=desc_path,
        image_file=img_path,
        labels=labels,
        temperature=None if temperature is None else float(temperature),
        mode=mode,
        descriptors=desc,
        images=imgs,
    )


def save_manifest(path, manifest: TaskManifest) -> None:
    _atomic_write(path, (json.dumps(manifest.to_json(), indent=2) + "\n").encode())


@dataclass
class ResultsRow:
    sample_index: int
    predicted_class: str
    true_class: Optional[str] = None
    top_score: float = 0.0
    weight_entropy_bits: Optional[float] = None
    alpha: Optional[float] = None


def write_results(rows: Sequence[ResultsRow], path, format: str = "csv") -> None:
    """Write one line per sample, sorted by ``sample_index``.

    Missing optional values become empty CSV cells or JSON ``null``.
    """
    if not rows:
        raise ValueError("no result rows to write")
    rows = sorted(rows, key=lambda r: r.sample_index)
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RESULT_FIELDS)
        for r in rows:
            writer.writerow(["" if getattr(r, f) is None else _fmt(getattr(r, f)) for f in RESULT_FIELDS])
        data = buf.getvalue()
    elif format == "json":
        data = json.dumps([asdict(r) for r in rows], indent=1) + "\n"
    else:
        raise ValueError(f"unknown results format {format!r}")
    _atomic_write(path, data.encode())


def _fmt(value):
    # repr round-trips floats exactly
    if isinstance(value, float):
        return repr(value)
    return value


def read_results(path, format: str = "csv") -> list:
    """Parse a results file back into :class:`ResultsRow` objects."""
    text = Path(path).read_text()
    if format == "json":
        return [ResultsRow(**r) for r in json.loads(text)]
    out = []
    for rec in csv.DictReader(text.splitlines()):
        out.append(
            ResultsRow(
                sample_index=int(rec["sample_index"]),
                predicted_class=rec["predicted_class"],
                true_class=rec["true_class"] or None,
                top_score=float(rec["top_score"]),
                weight_entropy_bits=float(rec["weight_entropy_bits"]) if rec["weight_entropy_bits"] else None,
                alpha=float(rec["alpha"]) if rec["alpha"] else None,
            )
        )
    return out


def write_table(rows: Sequence[dict], path, columns: Sequence[str]) -> None:
    """Write experiment tables (grid results, ablation sweeps) as CSV or JSON by suffix."""
    if str(path).endswith(".json"):
        data = json.dumps([{c: r[c] for c in columns} for r in rows], indent=1) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in columns])
        data = buf.getvalue()
    _atomic_write(path, data.encode())
