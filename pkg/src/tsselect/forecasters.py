"""Native one-step-ahead forecasters and data representations.

These back the locally built performance matrix and the landmarker
meta-features. DeepAR, DeepFactor, Prophet and GaussianProcess have no native
implementation; :func:`synthetic_forecast` stands in for them when building
fixture matrices.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import Window
from .errors import TooShort, UsageError
from .space import ModelSpec, canonical_value

DEFAULT_ALPHA = 0.3
RF_LAGS = 3
VAR_ORDER = 1
NATIVE_ALGORITHMS = ("SeasonalNaive", "VAR", "RandomForest")
TRENDS = ("n", "c", "t", "ct")


@dataclass(frozen=True)
class RepresentationTransform:
    kind: str = "Raw"
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.kind not in ("Raw", "ExpSmoothing"):
            raise UsageError(f"unknown representation {self.kind!r}")
        if self.kind == "ExpSmoothing" and not (0.0 < self.alpha <= 1.0):
            raise UsageError(f"alpha must lie in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class ForecastResult:
    prediction: float
    fit_time: float = 0.0
    model_id: int = -1


def _values(w) -> np.ndarray:
    return np.asarray(w.values if isinstance(w, Window) else w, dtype=np.float64)


def _timed(fn):
    t0 = time.perf_counter()
    pred = float(fn())
    return ForecastResult(pred, time.perf_counter() - t0)


def apply_representation(w, t: RepresentationTransform):
    """Raw copies the values; ExpSmoothing runs s_0 = x_0, s_t = a*x_t + (1-a)*s_{t-1}.

    Returns a :class:`Window` when given one, otherwise an array.
    """
    x = _values(w)
    if t.kind == "Raw":
        out = x.copy()
    else:
        out = np.asarray(kernels.exp_smooth(x, float(t.alpha)), dtype=np.float64)
    if isinstance(w, Window):
        return Window(w.dataset_id, w.start, w.length, out)
    return out


def seasonal_naive(w, season_length: int) -> ForecastResult:
    x = _values(w)
    if len(x) < 1:
        raise TooShort("seasonal_naive needs at least one value")
    if season_length < 1:
        raise UsageError("season_length must be >= 1")

    def run():
        if season_length <= len(x):
            return x[len(x) - season_length]
        return x[0]

    return _timed(run)


def _design(x: np.ndarray, order: int, trend: str):
    n = len(x)
    rows = []
    for t in range(order, n + 1):
        row = [x[t - j] for j in range(1, order + 1)]
        if "c" in trend:
            row.append(1.0)
        if "t" in trend:
            row.append(float(t))
        rows.append(row)
    design = np.array(rows, dtype=np.float64).reshape(len(rows), -1)
    return design[:-1], x[order:], design[-1]


def ar_fit(w, order: int = 1, trend: str = "c"):
    """Least-squares AR fit of x_t on its ``order`` lags plus trend terms.

    Returns ``(coefficients, residuals, next_row)``: the lag coefficients come
    first, then the constant and time-trend terms present in ``trend``.
    Rank-deficient designs get the minimum-norm solution.
    """
    if trend not in TRENDS:
        raise UsageError(f"trend must be one of {TRENDS}, got {trend!r}")
    x = _values(w)
    if len(x) < order + 2:
        raise TooShort(f"need at least {order + 2} values for an order-{order} fit")
    X, y, nxt = _design(x, order, trend)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef, y - X @ coef, nxt


def ar_ols(w, order: int = 1, trend: str = "c") -> ForecastResult:
    x = _values(w)
    if order < 1:
        raise UsageError("order must be >= 1")
    if len(x) < order + 4:
        raise TooShort(f"ar_ols(order={order}) needs at least {order + 4} values, got {len(x)}")

    def run():
        coef, _, nxt = ar_fit(x, order, trend)
        return float(nxt @ coef)

    return _timed(run)


def mean_drift_forecast(w, kind: str = "mean") -> ForecastResult:
    x = _values(w)
    if len(x) < 2:
        raise TooShort("mean/drift forecasts need at least 2 values")
    if kind == "mean":
        return _timed(lambda: x.mean())
    if kind == "drift":
        return _timed(lambda: x[-1] + (x[-1] - x[0]) / (len(x) - 1))
    raise UsageError(f"kind must be 'mean' or 'drift', got {kind!r}")


def random_forest_lite(w, n_estimators: int = 100, max_depth=None, seed: int = 0) -> ForecastResult:
    """Bagged variance-reduction regression trees on a 3-lag embedding.

    ``max_depth`` of ``None`` (or the grid string ``"None"``) means unlimited.
    """
    x = _values(w)
    if len(x) < 6:
        raise TooShort("random_forest_lite needs at least 6 values")
    if n_estimators < 1:
        raise UsageError("n_estimators must be >= 1")
    depth = _depth(max_depth)
    return _timed(lambda: kernels.forest_predict(x, RF_LAGS, int(n_estimators), depth, int(seed)))


def _depth(max_depth) -> int:
    if max_depth is None or canonical_value(max_depth) == "None":
        return -1
    d = int(max_depth)
    if d < 1:
        raise UsageError("max_depth must be >= 1 or None")
    return d


def _unit_hash(*parts) -> float:
    h = zlib.crc32("|".join(str(p) for p in parts).encode("utf-8"))
    return h / 2**32


# algorithm -> (baseline forecaster, noise scale range)
_SYNTHETIC_BASE = {
    "DeepAR": ("ar_c", 0.02, 0.10),
    "DeepFactor": ("mean", 0.03, 0.12),
    "Prophet": ("ar_ct", 0.02, 0.10),
    "GaussianProcess": ("naive", 0.05, 0.25),
}


def synthetic_forecast(spec: ModelSpec, history, seed: int = 0) -> float:
    """Stand-in forecast for algorithms without a native implementation.

    Recipe: a cheap baseline forecast (AR(1) with constant for DeepAR, series
    mean for DeepFactor, AR(1) with constant and trend for Prophet, last value
    for GaussianProcess) plus Gaussian noise. The noise scale is drawn per
    spec from the algorithm's range by hashing the spec label; the noise
    itself is seeded by ``seed``. Only used to populate fixture matrices.
    """
    if spec.algorithm not in _SYNTHETIC_BASE:
        raise UsageError(f"{spec.algorithm} has a native forecaster")
    base, lo, hi = _SYNTHETIC_BASE[spec.algorithm]
    x = _values(history)
    if base == "mean":
        pred = float(x.mean())
    elif base == "naive":
        pred = float(x[-1])
    else:
        trend = "c" if base == "ar_c" else "ct"
        coef, _, nxt = ar_fit(x, 1, trend)
        pred = float(nxt @ coef)
    scale = lo + (hi - lo) * _unit_hash(spec.label())
    rng = np.random.default_rng([int(seed) % 2**32, zlib.crc32(spec.label().encode("utf-8"))])
    return pred + scale * float(rng.standard_normal())


def forecast_spec(spec: ModelSpec, history, alpha: float = DEFAULT_ALPHA, seed: int = 0,
                  synthetic: bool = False, model_id: int = -1) -> ForecastResult:
    """One-step-ahead forecast of the value after ``history`` under ``spec``.

    The spec's representation is applied to the history first. Raises
    ``NotImplementedError`` for non-native algorithms unless ``synthetic``.
    """
    t0 = time.perf_counter()
    rep = RepresentationTransform(spec.representation, alpha)
    h = apply_representation(_values(history), rep)
    p = spec.params
    if spec.algorithm == "SeasonalNaive":
        pred = seasonal_naive(h, int(p["season_length"])).prediction
    elif spec.algorithm == "VAR":
        # cov_type changes inference statistics only, never the point forecast
        pred = ar_ols(h, VAR_ORDER, str(p["trend"])).prediction
    elif spec.algorithm == "RandomForest":
        pred = random_forest_lite(h, int(p["n_estimators"]), p["max_depth"], seed).prediction
    elif synthetic:
        pred = synthetic_forecast(spec, h, seed)
    else:
        raise NotImplementedError(f"no native forecaster for {spec.algorithm}")
    return ForecastResult(float(pred), time.perf_counter() - t0, model_id)
