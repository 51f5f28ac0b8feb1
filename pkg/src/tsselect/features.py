"""Window meta-features in five categories.

The default catalog has 32 features: 6 simple, 10 statistical, 4
information-theoretic, 6 spectral and 6 landmarkers. Non-finite values
(skewness of a constant window, spectral ratios of a zero spectrum, ...) are
imputed to 0 and flagged in :attr:`MetaFeatureVector.imputed`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import forecasters
from .data import Window
from .errors import CatalogMismatch, EmptyInput, UsageError, WindowTooShort

CATEGORIES = ("Simple", "Statistical", "InfoTheoretic", "Spectral", "Landmarker")
MIN_WINDOW = 4

_ENTRIES = (
    ("length", "Simple"),
    ("min", "Simple"),
    ("max", "Simple"),
    ("range", "Simple"),
    ("last_value", "Simple"),
    ("mean_abs_diff", "Simple"),
    ("mean", "Statistical"),
    ("std", "Statistical"),
    ("skewness", "Statistical"),
    ("kurtosis", "Statistical"),
    ("median", "Statistical"),
    ("iqr", "Statistical"),
    ("acf_lag1", "Statistical"),
    ("acf_lag2", "Statistical"),
    ("trend_slope", "Statistical"),
    ("turning_point_fraction", "Statistical"),
    ("histogram_entropy", "InfoTheoretic"),
    ("permutation_entropy", "InfoTheoretic"),
    ("unique_ratio", "InfoTheoretic"),
    ("lag1_mutual_information", "InfoTheoretic"),
    ("dominant_bin", "Spectral"),
    ("dominant_power_fraction", "Spectral"),
    ("spectral_entropy", "Spectral"),
    ("low_quartile_power_ratio", "Spectral"),
    ("spectral_centroid", "Spectral"),
    ("high_quartile_power_ratio", "Spectral"),
    ("snaive1_mse", "Landmarker"),
    ("snaive5_mse", "Landmarker"),
    ("ar1_coefficient", "Landmarker"),
    ("ar1_residual_variance", "Landmarker"),
    ("mean_forecast_mse", "Landmarker"),
    ("drift_forecast_mse", "Landmarker"),
)

# Features that are mathematically unchanged when a constant is added to the
# window and stay so numerically (no binning, ranking or equality tests).
SHIFT_INVARIANT = (
    "length", "range", "mean_abs_diff", "std", "skewness", "kurtosis", "iqr",
    "acf_lag1", "acf_lag2", "trend_slope", "dominant_bin", "dominant_power_fraction",
    "spectral_entropy", "low_quartile_power_ratio", "spectral_centroid",
    "high_quartile_power_ratio", "snaive1_mse", "snaive5_mse", "ar1_coefficient",
    "ar1_residual_variance", "mean_forecast_mse", "drift_forecast_mse",
)


@dataclass(frozen=True)
class MetaFeatureCatalog:
    entries: tuple = _ENTRIES

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise UsageError("duplicate meta-feature name")
        unknown = set(names) - {n for n, _ in _ENTRIES}
        if unknown:
            raise UsageError(f"unknown meta-features: {sorted(unknown)}")

    @property
    def names(self) -> tuple:
        return tuple(n for n, _ in self.entries)

    @property
    def d(self) -> int:
        return len(self.entries)

    @property
    def catalog_id(self) -> str:
        return hashlib.sha256(",".join(self.names).encode()).hexdigest()[:12]

    def subset(self, names) -> MetaFeatureCatalog:
        cat = dict(_ENTRIES)
        unknown = [n for n in names if n not in cat]
        if unknown:
            raise UsageError(f"unknown meta-features: {unknown}")
        return MetaFeatureCatalog(tuple((n, cat[n]) for n in names))

    def to_dict(self) -> dict:
        return {"catalog_id": self.catalog_id,
                "entries": [{"name": n, "category": c} for n, c in self.entries]}


DEFAULT_CATALOG = MetaFeatureCatalog()


@dataclass(frozen=True, eq=False)
class MetaFeatureVector:
    values: np.ndarray
    catalog_id: str
    imputed: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.values)


def _acf(x, mean, denom, lag):
    if denom == 0.0 or len(x) <= lag:
        return math.nan
    return float(np.sum((x[:-lag] - mean) * (x[lag:] - mean)) / denom)


def _entropy_bits(counts) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum()) + 0.0


def _bin_index(x, lo, hi, bins):
    if hi <= lo:
        return np.zeros(len(x), dtype=int)
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(int)
    return np.clip(idx, 0, bins - 1)


def _permutation_entropy(x, order=3):
    n = len(x) - order + 1
    if n < 1:
        return math.nan
    counts = {}
    for i in range(n):
        pattern = tuple(np.argsort(x[i:i + order], kind="stable"))
        counts[pattern] = counts.get(pattern, 0) + 1
    return _entropy_bits(np.array(list(counts.values()), dtype=float)) / math.log2(math.factorial(order))


def _mutual_information(x, bins=4):
    lo, hi = float(x.min()), float(x.max())
    b = _bin_index(x, lo, hi, bins)
    joint = np.zeros((bins, bins))
    np.add.at(joint, (b[:-1], b[1:]), 1.0)
    total = joint.sum()
    if total == 0:
        return 0.0
    pxy = joint / total
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float((pxy[nz] * np.log2(pxy[nz] / (px @ py)[nz])).sum()) + 0.0


def power_spectrum(x) -> np.ndarray:
    """|DFT|^2 over bins 0..n//2 of a window, DFT length = window length."""
    return np.abs(np.fft.rfft(np.asarray(x, dtype=np.float64))) ** 2


def _spectral(x):
    power = power_spectrum(x)[1:]  # bin 0 (DC) excluded
    bins = np.arange(1, len(power) + 1)
    total = power.sum()
    K = len(power)
    if K == 0 or total <= 0.0:
        return [math.nan] * 6
    p = power / total
    dom = int(np.argmax(power))
    q = max(1, math.ceil(K / 4))
    ent = _entropy_bits(p) / math.log2(K) if K > 1 else 0.0
    return [
        float(bins[dom]),
        float(power[dom] / total),
        ent,
        float(power[:q].sum() / total),
        float((bins * p).sum()),
        float(power[-q:].sum() / total),
    ]


def _rolling_mse(x, predict):
    n = len(x)
    errs = [(x[t] - predict(x[:t])) ** 2 for t in range(n // 2, n)]
    return float(np.mean(errs))


def landmarkers(x) -> list:
    """Landmarker features, computed by calling the forecasters directly.

    The rolling MSEs forecast each point of the second half of the window
    from all values before it.
    """
    out = [
        _rolling_mse(x, lambda h: forecasters.seasonal_naive(h, 1).prediction),
        _rolling_mse(x, lambda h: forecasters.seasonal_naive(h, 5).prediction),
    ]
    coef, resid, _ = forecasters.ar_fit(x, 1, "c")
    out += [float(coef[0]), float(np.mean(resid ** 2))]
    out += [
        _rolling_mse(x, lambda h: forecasters.mean_drift_forecast(h, "mean").prediction),
        _rolling_mse(x, lambda h: forecasters.mean_drift_forecast(h, "drift").prediction),
    ]
    return out


def _all_features(x: np.ndarray) -> dict:
    n = len(x)
    mean = float(x.mean())
    centered = x - mean
    var = float(np.mean(centered ** 2))
    std = math.sqrt(var)
    denom = float(np.sum(centered ** 2))
    diffs = np.diff(x)
    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    q75, q25 = np.percentile(x, [75, 25])
    turning = np.sum(diffs[:-1] * diffs[1:] < 0) / (n - 2)
    lo, hi = float(x.min()), float(x.max())
    hist = np.bincount(_bin_index(x, lo, hi, 8), minlength=8).astype(float)
    with np.errstate(all="ignore"):
        # guard the powers: a tiny positive std can still underflow when cubed
        skew = float(np.mean(centered ** 3)) / std ** 3 if std ** 3 > 0 else math.nan
        kurt = float(np.mean(centered ** 4)) / var ** 2 - 3.0 if var ** 2 > 0 else math.nan
    values = [
        float(n), lo, hi, hi - lo, float(x[-1]), float(np.mean(np.abs(diffs))),
        mean, std, skew, kurt, float(np.median(x)), float(q75 - q25),
        _acf(x, mean, denom, 1), _acf(x, mean, denom, 2),
        float(np.sum(tc * x) / np.sum(tc * tc)), float(turning),
        _entropy_bits(hist), _permutation_entropy(x), len(np.unique(x)) / n,
        _mutual_information(x),
    ]
    values += _spectral(x)
    values += landmarkers(x)
    return dict(zip((name for name, _ in _ENTRIES), values))


def extract(w, catalog: MetaFeatureCatalog = DEFAULT_CATALOG) -> MetaFeatureVector:
    x = np.asarray(w.values if isinstance(w, Window) else w, dtype=np.float64)
    if len(x) < MIN_WINDOW:
        raise WindowTooShort(f"meta-features need windows of length >= {MIN_WINDOW}, got {len(x)}")
    feats = _all_features(x)
    vals = np.array([feats[name] for name in catalog.names], dtype=np.float64)
    mask = ~np.isfinite(vals)
    vals[mask] = 0.0
    vals.setflags(write=False)
    return MetaFeatureVector(vals, catalog.catalog_id, mask)


def dataset_profile(vectors) -> MetaFeatureVector:
    """Element-wise mean of a dataset's window vectors."""
    vectors = list(vectors)
    if not vectors:
        raise EmptyInput("dataset_profile needs at least one vector")
    cid = vectors[0].catalog_id
    if any(v.catalog_id != cid or len(v) != len(vectors[0]) for v in vectors):
        raise CatalogMismatch("vectors come from different catalogs")
    stacked = np.vstack([v.values for v in vectors])
    mask = np.vstack([v.imputed if v.imputed is not None else np.zeros(len(v), bool)
                      for v in vectors]).any(axis=0)
    return MetaFeatureVector(stacked.mean(axis=0), cid, mask)


def export_features(path, rows, catalog: MetaFeatureCatalog = DEFAULT_CATALOG):
    """Write ``(dataset_id, window_index, vector)`` rows as CSV plus a catalog JSON sidecar."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset_id", "window_index", *catalog.names])
        for ds, k, vec in rows:
            if vec.catalog_id != catalog.catalog_id:
                raise CatalogMismatch(f"row for {ds} uses catalog {vec.catalog_id}")
            writer.writerow([ds, k, *(repr(float(v)) for v in vec.values)])
    sidecar = path.with_suffix(".catalog.json")
    sidecar.write_text(json.dumps(catalog.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path, sidecar
