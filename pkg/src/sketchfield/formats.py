"""Readers for Quick-Draw NDJSON, Vector-MNIST stroke lists and stroke-3 CSV."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .sketch import NormalizationRecord, SketchError, VectorSketch, normalize

log = logging.getLogger(__name__)

FORMATS = ("quickdraw-ndjson", "vector-mnist", "stroke3-csv")
SUFFIXES = {"quickdraw-ndjson": (".ndjson",), "vector-mnist": (".json", ".ndjson"),
            "stroke3-csv": (".csv",)}


class SketchFormatError(SketchError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


@dataclass
class ManifestEntry:
    sketch_id: int
    source: str
    n_points: int
    n_strokes: int
    normalization: dict | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def add(self, sk: VectorSketch, source: str, rec: NormalizationRecord | None):
        if any(e.sketch_id == sk.sketch_id for e in self.entries):
            raise SketchError(f"duplicate sketch id {sk.sketch_id}")
        self.entries.append(ManifestEntry(int(sk.sketch_id), str(source), sk.n_points,
                                          sk.n_strokes, asdict(rec) if rec else None))

    def check(self, sketches):
        ids = [e.sketch_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise SketchError("manifest ids are not unique")
        by_id = {e.sketch_id: e for e in self.entries}
        for sk in sketches:
            e = by_id[sk.sketch_id]
            if (e.n_points, e.n_strokes) != (sk.n_points, sk.n_strokes):
                raise SketchError(f"manifest mismatch for sketch {sk.sketch_id}")

    def to_json(self) -> str:
        return json.dumps({"entries": [asdict(e) for e in self.entries]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        raw = json.loads(text)
        return cls([ManifestEntry(**e) for e in raw["entries"]])


def _finish(sk: VectorSketch, unit_square: bool):
    if sk.n_points < 2:
        raise SketchError(f"sketch too short (id={sk.sketch_id})")
    if unit_square:
        if sk.points.min() < 0 or sk.points.max() > 1:
            raise SketchError(f"sketch {sk.sketch_id} is flagged unit-square but leaves [0,1]")
        return sk, None
    return normalize(sk)


def _parse_ndjson_record(obj, index):
    sid = obj.get("key_id", obj.get("id", index))
    sid = int(sid)
    label = obj.get("word", obj.get("label"))
    label = None if label is None else str(label)
    if "drawing" in obj:
        strokes = []
        for st in obj["drawing"]:
            xs, ys = np.asarray(st[0], float), np.asarray(st[1], float)
            if xs.shape != ys.shape:
                raise ValueError("x and y arrays differ in length")
            strokes.append(np.column_stack([xs, ys]))
        if not strokes:
            raise SketchError(f"sketch too short (id={sid})")
        return VectorSketch.from_strokes(strokes, sid, label)
    if "strokes" in obj:
        # stroke-3 deltas (dx, dy, pen) accumulated from the origin
        arr = np.asarray(obj["strokes"], dtype=float).reshape(-1, 3)
        if len(arr) == 0:
            raise SketchError(f"sketch too short (id={sid})")
        xy = np.cumsum(arr[:, :2], axis=0)
        return VectorSketch.from_stroke3(np.column_stack([xy, arr[:, 2]]), sid, label)
    raise ValueError("record has neither 'drawing' nor 'strokes'")


def _read_quickdraw(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield lineno, _parse_ndjson_record(obj, lineno - 1)
            except SketchError as exc:
                yield lineno, exc
            except (ValueError, TypeError, KeyError, IndexError) as exc:
                yield lineno, SketchFormatError(path, lineno, f"malformed record: {exc}")


def _vmnist_sketch(obj, index):
    sid = int(obj.get("id", index))
    label = obj.get("label")
    strokes = [np.asarray(s, dtype=float).reshape(-1, 2) for s in obj["strokes"]]
    if not strokes:
        raise SketchError(f"sketch too short (id={sid})")
    return VectorSketch.from_strokes(strokes, sid, None if label is None else str(label))


def _read_vector_mnist(path):
    text = Path(path).read_text()
    if text.lstrip().startswith("["):
        try:
            items = json.loads(text)
        except ValueError as exc:
            raise SketchFormatError(path, exc.lineno, f"malformed JSON: {exc.msg}") from None
        for i, obj in enumerate(items):
            try:
                yield i + 1, _vmnist_sketch(obj, i)
            except SketchError as exc:
                yield i + 1, exc
            except (ValueError, TypeError, KeyError) as exc:
                yield i + 1, SketchFormatError(path, i + 1, f"malformed record: {exc}")
        return
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            yield lineno, _vmnist_sketch(json.loads(line), lineno - 1)
        except SketchError as exc:
            yield lineno, exc
        except (ValueError, TypeError, KeyError) as exc:
            yield lineno, SketchFormatError(path, lineno, f"malformed record: {exc}")


def _read_csv(path):
    rows: dict[int, list] = {}
    order: list[int] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"dx", "dy", "pen"} - set(reader.fieldnames or ())
        if missing:
            raise SketchFormatError(path, 1, f"missing columns {sorted(missing)}")
        for row in reader:
            lineno = reader.line_num
            try:
                sid = int(row.get("sketch_id") or 0)
                triple = (float(row["dx"]), float(row["dy"]), int(float(row["pen"])))
            except (TypeError, ValueError) as exc:
                yield lineno, SketchFormatError(path, lineno, f"malformed record: {exc}")
                continue
            if sid not in rows:
                rows[sid] = []
                order.append(sid)
            rows[sid].append(triple)
    for sid in order:
        arr = np.asarray(rows[sid], dtype=float)
        xy = np.cumsum(arr[:, :2], axis=0)
        try:
            yield 0, VectorSketch.from_stroke3(np.column_stack([xy, arr[:, 2]]), sid)
        except SketchError as exc:
            yield 0, exc


_READERS = {"quickdraw-ndjson": _read_quickdraw, "vector-mnist": _read_vector_mnist,
            "stroke3-csv": _read_csv}


def load_stroke3(path, format: str, *, unit_square: bool = False, strict: bool = True,
                 records: list | None = None) -> list[VectorSketch]:
    """Load every sketch in ``path`` and normalize it into the unit square.

    With ``unit_square=True`` coordinates are taken as already normalized and
    passed through.  Bad records raise unless ``strict`` is false, in which
    case they are logged and skipped.  ``records`` (if given) receives the
    normalization record of each returned sketch.
    """
    if format not in _READERS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    out = []
    for lineno, item in _READERS[format](path):
        if not isinstance(item, Exception):
            try:
                item, rec = _finish(item, unit_square)
            except SketchError as exc:
                item = exc
        if isinstance(item, Exception):
            if not isinstance(item, SketchFormatError) and lineno:
                item = SketchFormatError(path, lineno, str(item))
            if strict:
                raise item
            log.warning("skipping record: %s", item)
            continue
        out.append(item)
        if records is not None:
            records.append(rec)
    return out


def load_dataset(directory, format: str, *, unit_square: bool = False, strict: bool = True):
    """All files of ``format`` under ``directory`` -> (sketches, manifest)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such data directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix in SUFFIXES[format])
    if not files:
        raise FileNotFoundError(f"no {format} files in {directory}")
    sketches, manifest = [], DatasetManifest()
    for f in files:
        recs: list = []
        for sk, rec in zip(load_stroke3(f, format, unit_square=unit_square, strict=strict,
                                        records=recs), recs):
            manifest.add(sk, f.name, rec)
            sketches.append(sk)
    return sketches, manifest


def write_quickdraw(path, sketches, scale: float = 255.0):
    """Write sketches as Quick-Draw style NDJSON with integer canvas coordinates."""
    with open(path, "w") as fh:
        for sk in sketches:
            drawing = [[np.rint(s[:, 0] * scale).astype(int).tolist(),
                        np.rint(s[:, 1] * scale).astype(int).tolist()] for s in sk.strokes]
            rec = {"key_id": str(sk.sketch_id), "word": sk.label or "", "drawing": drawing}
            fh.write(json.dumps(rec) + "\n")


def write_vector_mnist(path, sketches):
    with open(path, "w") as fh:
        for sk in sketches:
            rec = {"id": sk.sketch_id, "label": sk.label,
                   "strokes": [np.round(s, 5).tolist() for s in sk.strokes]}
            fh.write(json.dumps(rec) + "\n")
