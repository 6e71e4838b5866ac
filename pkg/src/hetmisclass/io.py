"""Reading paired count data and writing report tables.

Input is long-format CSV (UTF-8)::

    # causes: pneumonia,sepsis,malaria
    country,gold_cause,predicted_cause,count
    Kenya,pneumonia,pneumonia,12
    ...

The optional ``# causes:`` line fixes the cause order and the set of
allowed labels; without it causes are ordered by first appearance (gold
column before predicted column, row by row).  Absent triples are zero.

Tables are written as CSV with LF line endings and minimal RFC-4180
quoting; floats use 17 significant digits so that values round-trip
exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .matrix import CauseSet, CountMatrix

HEADER = ("country", "gold_cause", "predicted_cause", "count")
CAUSES_PREFIX = "# causes:"


class DataParseError(ValueError):
    """Malformed input file; the message names the offending line."""


@dataclass(frozen=True)
class Dataset:
    causes: CauseSet
    countries: tuple[str, ...]
    counts: tuple[CountMatrix, ...]

    def by_country(self) -> dict[str, CountMatrix]:
        return dict(zip(self.countries, self.counts))


def _parse_count(text: str, lineno: int) -> int:
    t = text.strip()
    try:
        value = int(t)
    except ValueError:
        try:
            f = float(t)
        except ValueError:
            raise DataParseError(f"line {lineno}: count {text!r} is not an integer") from None
        if not math.isfinite(f) or f != round(f):
            raise DataParseError(f"line {lineno}: count {text!r} is not an integer") from None
        value = int(f)
    if value < 0:
        raise DataParseError(f"line {lineno}: negative count {value}")
    return value


def parse_dataset(text: str, source: str = "<input>") -> Dataset:
    """Parse the long-format CSV text of a dataset."""
    if text.startswith("﻿"):
        text = text[1:]
    lines = text.splitlines()
    declared: list[str] | None = None
    start = 0
    while start < len(lines) and (not lines[start].strip() or lines[start].lstrip().startswith("#")):
        line = lines[start].strip()
        if line.lower().startswith(CAUSES_PREFIX):
            if declared is not None:
                raise DataParseError(f"line {start + 1}: causes declared twice")
            declared = [c.strip() for c in next(csv.reader([line[len(CAUSES_PREFIX):]]))]
            if any(not c for c in declared):
                raise DataParseError(f"line {start + 1}: empty cause label in causes line")
            if len(set(declared)) != len(declared):
                raise DataParseError(f"line {start + 1}: duplicate cause label in causes line")
        start += 1
    if start >= len(lines):
        raise DataParseError(f"{source}: missing header line")
    reader = csv.reader(lines[start:])
    header = [h.strip() for h in next(reader)]
    if tuple(header) != HEADER:
        raise DataParseError(f"line {start + 1}: header must be {','.join(HEADER)}, got {','.join(header)}")
    order: list[str] = list(declared) if declared is not None else []
    seen_causes = set(order)
    countries: list[str] = []
    records: dict[tuple[str, str, str], int] = {}
    for offset, row in enumerate(reader):
        lineno = start + 2 + offset
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(HEADER):
            raise DataParseError(f"line {lineno}: expected {len(HEADER)} fields, found {len(row)}")
        country, gold, pred = (row[0].strip(), row[1].strip(), row[2].strip())
        if not country or not gold or not pred:
            raise DataParseError(f"line {lineno}: empty country or cause label")
        count = _parse_count(row[3], lineno)
        for label in (gold, pred):
            if label not in seen_causes:
                if declared is not None:
                    raise DataParseError(f"line {lineno}: cause {label!r} is not in the declared cause list")
                order.append(label)
                seen_causes.add(label)
        key = (country, gold, pred)
        if key in records:
            raise DataParseError(f"line {lineno}: duplicate entry for {country},{gold},{pred}")
        records[key] = count
        if country not in countries:
            countries.append(country)
    if not countries:
        raise DataParseError(f"{source}: no data rows")
    if len(order) < 2:
        raise DataParseError(f"{source}: at least two causes are required")
    causes = CauseSet(tuple(order))
    idx = {c: i for i, c in enumerate(order)}
    mats = {c: np.zeros((len(order), len(order)), dtype=np.int64) for c in countries}
    for (country, gold, pred), count in records.items():
        mats[country][idx[gold], idx[pred]] = count
    return Dataset(causes, tuple(countries), tuple(CountMatrix(mats[c], causes) for c in countries))


def ingest(path) -> Dataset:
    """Read a dataset file; see :func:`parse_dataset`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataParseError(f"{path}: not valid UTF-8 ({exc})") from None
    return parse_dataset(text, str(path))


def format_dataset(counts: Sequence[CountMatrix], countries: Sequence[str]) -> str:
    """Long-format CSV text for per-country counts, every cell included."""
    if len(counts) != len(countries):
        raise ValueError("one country name per count matrix")
    causes = counts[0].causes
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    buf.write(CAUSES_PREFIX + " " + _csv_line(causes.labels))
    w.writerow(HEADER)
    for country, cm in zip(countries, counts):
        if cm.causes != causes:
            raise ValueError("all count matrices must share one cause set")
        for i, gi in enumerate(causes.labels):
            for j, pj in enumerate(causes.labels):
                w.writerow((country, gi, pj, int(cm.counts[i, j])))
    return buf.getvalue()


def write_dataset(path, counts: Sequence[CountMatrix], countries: Sequence[str]) -> None:
    _write_text(Path(path), format_dataset(counts, countries))


# -------------------------------------------------------------------- tables

def format_value(x) -> str:
    """Full-precision text for a table cell."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return "%.17g" % x
    return str(x)


def _csv_line(fields: Iterable) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(list(fields))
    return buf.getvalue()


def format_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Write a CSV table and return its SHA-256."""
    text = format_table(header, rows)
    _write_text(Path(path), text)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DataParseError(f"{path}: empty table")
    return rows[0], rows[1:]


def parse_float(text: str) -> float:
    return float(text)


def write_json(path, obj) -> str:
    """Write deterministic JSON (sorted keys, LF) and return its SHA-256."""
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True, default=_json_default) + "\n"
    _write_text(Path(path), text)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
