"""Dataset ingestion, min-max normalization and window sampling."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, EmptySeries, ParseError, WindowTooLong

DEFAULT_WINDOW_LENGTH = 16
DEFAULT_WINDOWS_PER_DATASET = 10


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Normalization:
    min: float
    max: float

    def apply(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if self.max > self.min:
            return (raw - self.min) / (self.max - self.min)
        return np.zeros_like(raw)

    def invert(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.max > self.min:
            return values * (self.max - self.min) + self.min
        return np.full_like(values, self.min)


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    id: str
    name: str
    values: np.ndarray
    raw_values: np.ndarray
    normalization: Normalization

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class Window:
    """A contiguous slice ``[start, start + length)`` of a dataset's values.

    ``values`` is a private copy, so mutating it never touches the dataset.
    """

    dataset_id: str
    start: int
    length: int
    values: np.ndarray = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, Window):
            return NotImplemented
        return (
            self.dataset_id == other.dataset_id
            and self.start == other.start
            and self.length == other.length
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def normalize(raw) -> tuple[np.ndarray, Normalization]:
    raw = np.asarray(raw, dtype=np.float64)
    norm = Normalization(float(raw.min()), float(raw.max()))
    return norm.apply(raw), norm


def denormalize(values, normalization: Normalization) -> np.ndarray:
    return normalization.invert(values)


def make_dataset(id: str, raw_values, name: str | None = None) -> TimeSeriesDataset:
    raw = np.asarray(raw_values, dtype=np.float64)
    if raw.size == 0:
        raise EmptySeries(f"dataset {id!r} has no values")
    if not np.all(np.isfinite(raw)):
        raise DataError(f"dataset {id!r} contains non-finite values")
    values, norm = normalize(raw)
    return TimeSeriesDataset(id, name or id, _frozen(values), _frozen(raw), norm)


def _parse_float(text: str) -> float | None:
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_dataset(path, id: str | None = None) -> TimeSeriesDataset:
    """Read a one- or two-column (timestamp, value) text file.

    Comma and tab delimiters are accepted. A first line whose value field is
    not numeric is treated as a header.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    raw = []
    with path.open(encoding="utf-8") as fh:
        first = True
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            sep = "\t" if "\t" in line else ","
            fields = [f.strip() for f in line.split(sep)]
            if len(fields) > 2:
                raise ParseError(f"expected 1 or 2 columns, got {len(fields)}", lineno)
            value = _parse_float(fields[-1])
            if value is None:
                if first:
                    first = False
                    continue
                raise ParseError(f"non-numeric value {fields[-1]!r}", lineno)
            first = False
            raw.append(value)
    if not raw:
        raise EmptySeries(f"{path} contains no values")
    return make_dataset(id or path.stem, raw, name=path.stem)


def load_manifest(path) -> list[tuple[str, Path]]:
    """Read ``id,path`` pairs; relative paths resolve against the manifest directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    pairs = []
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise ParseError("manifest rows must be 'id,path'", lineno)
            ds_id, ds_path = row[0].strip(), row[1].strip()
            if lineno == 1 and (ds_id, ds_path) == ("id", "path"):
                continue
            p = Path(ds_path)
            pairs.append((ds_id, p if p.is_absolute() else path.parent / p))
    ids = [i for i, _ in pairs]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate dataset ids in manifest {path}")
    return pairs


def load_corpus(manifest_path) -> list[TimeSeriesDataset]:
    return [load_dataset(p, ds_id) for ds_id, p in load_manifest(manifest_path)]


def window_at(d: TimeSeriesDataset, start: int, length: int) -> Window:
    if start < 0 or start + length > len(d.values):
        raise WindowTooLong(
            f"window [{start}, {start + length}) exceeds dataset {d.id!r} of length {len(d.values)}"
        )
    return Window(d.id, int(start), int(length), np.array(d.values[start:start + length]))


def sample_windows(d: TimeSeriesDataset, count: int, length: int = DEFAULT_WINDOW_LENGTH,
                   seed: int = 0) -> list[Window]:
    """Draw ``count`` window starts uniformly, with replacement, from ``[0, n - length]``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if length < 1:
        raise ValueError("length must be >= 1")
    n = len(d.values)
    if length > n:
        raise WindowTooLong(f"window length {length} exceeds dataset {d.id!r} of length {n}")
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, n - length + 1, size=count)
    return [window_at(d, int(s), length) for s in starts]


def dataset_seed(base_seed: int, dataset_id: str) -> int:
    """Per-dataset seed that does not depend on corpus ordering."""
    return (int(base_seed) * 1_000_003 + zlib.crc32(dataset_id.encode("utf-8"))) % (2**32)
