"""Performance tensor P[window, dataset, model] of one-step-ahead squared errors.

Missing entries are NaN. Per-entry fit times are kept alongside for the naive
(evaluate-everything) runtime baseline.
"""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Window
from .errors import AllMissing, DimensionError, FormatError, SpaceMismatch, UnknownDataset
from .forecasters import DEFAULT_ALPHA, NATIVE_ALGORITHMS, forecast_spec
from .space import ModelSpace

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_MAGIC = "# tsselect-matrix"
_COLUMNS = "window_index,dataset_id,model_id,mse,fit_seconds"


@dataclass(frozen=True)
class WindowRef:
    dataset_id: str
    index: int
    start: int
    length: int


def manifest_hash(manifest) -> str:
    text = "\n".join(f"{w.dataset_id},{w.index},{w.start},{w.length}" for w in manifest)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(eq=False)
class PerformanceTensor:
    entries: np.ndarray          # (T, n, m), NaN = missing
    fit_seconds: np.ndarray      # (T, n, m), NaN = missing
    dataset_ids: tuple
    space_checksum: str
    window_manifest: tuple = ()
    alpha: float = DEFAULT_ALPHA
    reasons: dict = field(default_factory=dict)  # (t, dataset_id, model_id) -> why missing

    def __post_init__(self):
        if self.entries.shape != self.fit_seconds.shape or self.entries.ndim != 3:
            raise DimensionError("entries and fit_seconds must share a (T, n, m) shape")
        if self.entries.shape[1] != len(self.dataset_ids):
            raise DimensionError("dataset_ids length does not match n")
        present = self.entries[~np.isnan(self.entries)]
        if np.any(present < 0):
            raise FormatError("performance entries must be >= 0")
        self._pos = {d: i for i, d in enumerate(self.dataset_ids)}
        self.entries.setflags(write=False)
        self.fit_seconds.setflags(write=False)

    @property
    def dims(self) -> tuple:
        return self.entries.shape

    def dataset_index(self, dataset_id: str) -> int:
        try:
            return self._pos[dataset_id]
        except KeyError:
            raise UnknownDataset(f"dataset {dataset_id!r} not in tensor") from None

    def aggregates(self) -> np.ndarray:
        """(n, m) per-model mean MSE over windows; NaN where every window is missing."""
        ok = ~np.isnan(self.entries)
        counts = ok.sum(axis=0)
        sums = np.where(ok, self.entries, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    def subset(self, dataset_ids) -> PerformanceTensor:
        """Tensor restricted to ``dataset_ids`` (used to hide test datasets from selectors)."""
        idx = [self.dataset_index(d) for d in dataset_ids]
        keep = set(dataset_ids)
        return PerformanceTensor(
            self.entries[:, idx, :].copy(), self.fit_seconds[:, idx, :].copy(), tuple(dataset_ids),
            self.space_checksum, tuple(w for w in self.window_manifest if w.dataset_id in keep),
            self.alpha,
        )


@dataclass(frozen=True)
class RankedModels:
    dataset_id: str
    ordering: np.ndarray
    aggregate: np.ndarray

    def top(self, k: int) -> np.ndarray:
        return self.ordering[:k]


def _orderings(agg: np.ndarray) -> np.ndarray:
    keyed = np.where(np.isnan(agg), np.inf, agg)
    return np.argsort(keyed, axis=-1, kind="stable")


def rank(P: PerformanceTensor, dataset_id: str) -> RankedModels:
    """Models sorted by mean MSE ascending; ties by id; all-missing models last."""
    i = P.dataset_index(dataset_id)
    agg = P.aggregates()[i]
    if np.all(np.isnan(agg)):
        raise AllMissing(f"every model is missing for dataset {dataset_id!r}")
    return RankedModels(dataset_id, _orderings(agg), agg)


def rank_all(P: PerformanceTensor) -> np.ndarray:
    """(n, m) orderings for every dataset at once."""
    return _orderings(P.aggregates())


def naive_select(P: PerformanceTensor, dataset_id: str) -> tuple[int, float]:
    """Best model by exhaustive evaluation, plus the summed fit time that costs."""
    ranked = rank(P, dataset_id)
    i = P.dataset_index(dataset_id)
    return int(ranked.ordering[0]), float(np.nansum(P.fit_seconds[:, i, :]))


def _entry_seed(seed: int, dataset_id: str, t: int, model_id: int) -> int:
    h = hashlib.blake2b(f"{seed}|{dataset_id}|{t}|{model_id}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def _build_window(args):
    t, ds_id, values, specs, alpha, seed, synthetic = args
    history, target = values[:-1], values[-1]
    out = []
    for j, spec in specs:
        if spec.algorithm not in NATIVE_ALGORITHMS and not synthetic:
            out.append((j, np.nan, np.nan, "no native forecaster"))
            continue
        t0 = time.perf_counter()
        try:
            res = forecast_spec(spec, history, alpha, _entry_seed(seed, ds_id, t, j), synthetic, j)
        except Exception as exc:  # recorded as a missing entry, never fatal
            out.append((j, np.nan, np.nan, f"{type(exc).__name__}: {exc}"))
            continue
        err = (res.prediction - target) ** 2
        out.append((j, float(err), time.perf_counter() - t0, None))
    return t, ds_id, out


def build(windows: dict, space: ModelSpace, alpha: float = DEFAULT_ALPHA, seed: int = 0,
          synthetic_non_native: bool = False, workers: int = 1) -> PerformanceTensor:
    """Fill P by holding out each window's last value and forecasting it.

    ``windows`` maps dataset id -> list of :class:`Window` (same count T for
    every dataset); dataset order is the mapping's order. Entries for
    algorithms without a native forecaster are missing unless
    ``synthetic_non_native`` is set.
    """
    dataset_ids = tuple(windows)
    counts = {len(ws) for ws in windows.values()}
    if len(counts) != 1:
        raise DimensionError("every dataset needs the same number of windows")
    T = counts.pop()
    n, m = len(dataset_ids), len(space)
    entries = np.full((T, n, m), np.nan)
    fits = np.full((T, n, m), np.nan)
    manifest = []
    jobs = []
    specs = list(enumerate(space.specs))
    for i, ds in enumerate(dataset_ids):
        for t, w in enumerate(windows[ds]):
            if w.length < 2:
                raise DimensionError("windows must hold at least 2 values")
            manifest.append(WindowRef(ds, t, w.start, w.length))
            jobs.append((t, ds, np.asarray(w.values, dtype=np.float64), specs, alpha, seed,
                         synthetic_non_native))
    reasons = {}
    pos = {d: i for i, d in enumerate(dataset_ids)}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_build_window, jobs))
    else:
        results = map(_build_window, jobs)
    for t, ds, out in results:
        for j, err, fit, why in out:
            entries[t, pos[ds], j] = err
            fits[t, pos[ds], j] = fit
            if why is not None:
                reasons[(t, ds, j)] = why
    failed = sum(1 for r in reasons.values() if r != "no native forecaster")
    if failed:
        log.warning("%d entries failed and are marked missing", failed)
    return PerformanceTensor(entries, fits, dataset_ids, space.checksum(), tuple(manifest),
                             alpha, reasons)


def export_matrix(P: PerformanceTensor, path) -> Path:
    """Write the tensor as a header block plus one CSV record per present entry."""
    path = Path(path)
    T, n, m = P.dims
    lines = [
        f"{_MAGIC} v{FORMAT_VERSION}",
        f"# T={T}",
        f"# n={n}",
        f"# m={m}",
        f"# space_checksum={P.space_checksum}",
        f"# window_manifest_hash={manifest_hash(P.window_manifest)}",
        f"# alpha={P.alpha!r}",
        "# datasets=" + ",".join(P.dataset_ids),
    ]
    lines += [f"# window={w.dataset_id},{w.index},{w.start},{w.length}" for w in P.window_manifest]
    lines.append(_COLUMNS)
    ts, ns, ms = np.nonzero(~np.isnan(P.entries))
    for t, i, j in zip(ts.tolist(), ns.tolist(), ms.tolist()):
        fit = P.fit_seconds[t, i, j]
        lines.append(f"{t},{P.dataset_ids[i]},{j},{float(P.entries[t, i, j])!r},{float(fit)!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def import_matrix(path, space: ModelSpace | None = None) -> PerformanceTensor:
    """Read a matrix file; ``space`` (when given) must match the recorded checksum."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    header = {}
    manifest = []
    T = n = m = None
    entries = fits = None
    pos = {}
    with path.open(encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith(_MAGIC):
            raise FormatError(f"{path}: missing '{_MAGIC}' header")
        if first != f"{_MAGIC} v{FORMAT_VERSION}":
            raise FormatError(f"{path}: unsupported format version {first[len(_MAGIC):].strip()!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key == "window":
                    parts = value.split(",")
                    if len(parts) != 4:
                        raise FormatError(f"line {lineno}: bad window record")
                    try:
                        manifest.append(WindowRef(parts[0], int(parts[1]), int(parts[2]), int(parts[3])))
                    except ValueError:
                        raise FormatError(f"line {lineno}: bad window record") from None
                else:
                    header[key] = value
                continue
            if line == _COLUMNS:
                try:
                    T, n, m = int(header["T"]), int(header["n"]), int(header["m"])
                except (KeyError, ValueError):
                    raise FormatError(f"{path}: header needs integer T, n and m") from None
                ids = header.get("datasets", "")
                ids = tuple(ids.split(",")) if ids else ()
                if len(ids) != n:
                    raise DimensionError(f"{path}: header lists {len(ids)} datasets but n={n}")
                if space is not None and len(space) != m:
                    raise SpaceMismatch(f"{path}: m={m} but the active space has {len(space)} models")
                if space is not None and header.get("space_checksum") != space.checksum():
                    raise SpaceMismatch(
                        f"{path}: space checksum {header.get('space_checksum')} != {space.checksum()}")
                pos = {d: i for i, d in enumerate(ids)}
                entries = np.full((T, n, m), np.nan)
                fits = np.full((T, n, m), np.nan)
                continue
            if entries is None:
                raise FormatError(f"line {lineno}: record before column header")
            parts = line.split(",")
            if len(parts) != 5:
                raise FormatError(f"line {lineno}: expected 5 fields, got {len(parts)}")
            try:
                t, j = int(parts[0]), int(parts[2])
                mse, fit = float(parts[3]), float(parts[4])
            except ValueError:
                raise FormatError(f"line {lineno}: malformed record") from None
            if parts[1] not in pos:
                raise DimensionError(f"line {lineno}: unknown dataset {parts[1]!r}")
            if not (0 <= t < T) or not (0 <= j < m):
                raise DimensionError(f"line {lineno}: index (window={t}, model={j}) out of range")
            if not np.isnan(entries[t, pos[parts[1]], j]):
                raise FormatError(f"line {lineno}: duplicate entry")
            if not (mse >= 0):
                raise FormatError(f"line {lineno}: mse must be >= 0")
            entries[t, pos[parts[1]], j] = mse
            fits[t, pos[parts[1]], j] = fit
    if entries is None:
        raise FormatError(f"{path}: missing column header line")
    if manifest and header.get("window_manifest_hash") not in (None, manifest_hash(manifest)):
        raise FormatError(f"{path}: window manifest hash mismatch")
    try:
        alpha = float(header.get("alpha", DEFAULT_ALPHA))
    except ValueError:
        raise FormatError(f"{path}: bad alpha") from None
    return PerformanceTensor(entries, fits, tuple(pos), header.get("space_checksum", ""),
                             tuple(manifest), alpha)
