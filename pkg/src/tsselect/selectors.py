"""Selection strategies: dataset information in, one model id out.

Meta-learners (ISAC and the MLP) and the SOTA-variant baseline are fitted on
a training-only performance tensor; none of them is ever handed the test
dataset's entries.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (AllMissingForFamily, EmptySpace, FormatError, NotInSpace, ProviderError,
                     ShapeMismatch, SpaceMismatch, TooFewDatasets, UsageError)
from .matrix import PerformanceTensor
from .prompting import InvalidReason, PromptVariant, build_prompt, parse_response
from .space import ModelSpace

log = logging.getLogger(__name__)

KINDS = ("Random", "Popular", "SotaVariant", "Isac", "MlpMeta", "Llm")
MODEL_FILE_VERSION = 1


@dataclass(frozen=True)
class SelectionResult:
    dataset_id: str
    model_id: int | None
    reason: str | None = None
    latency_seconds: float = 0.0
    input_tokens: int = 0
    output_tokens: int = 0
    strategy_kind: str = ""
    attempts: int = 1
    detail: str = ""

    @property
    def valid(self) -> bool:
        return self.model_id is not None


@dataclass(frozen=True)
class SelectionStrategy:
    """A named, validated strategy configuration (see :func:`make_strategy`)."""

    kind: str
    name: str
    parameters: dict = field(default_factory=dict)


_PARAMS = {
    "Random": {"seed"},
    "Popular": {"algorithm", "hyperparameters", "representation"},
    "SotaVariant": {"family"},
    "Isac": {"k", "seed"},
    "MlpMeta": {"hidden", "step", "epochs", "batch", "seed"},
    "Llm": {"profile", "variant", "policy", "retries"},
}


def make_strategy(kind: str, name: str | None = None, **parameters) -> SelectionStrategy:
    if kind not in KINDS:
        raise UsageError(f"unknown strategy kind {kind!r}; expected one of {KINDS}")
    unknown = set(parameters) - _PARAMS[kind]
    if unknown:
        raise UsageError(f"{kind}: unknown parameters {sorted(unknown)}")
    if kind == "SotaVariant" and "family" not in parameters:
        raise UsageError("SotaVariant needs a family")
    if kind == "Isac" and int(parameters.get("k", 5)) < 1:
        raise UsageError("Isac k must be >= 1")
    if kind == "Llm":
        if "profile" not in parameters:
            raise UsageError("Llm strategy needs a provider profile")
        PromptVariant.parse(parameters.get("variant", "data"))
        if parameters.get("policy", "strict") not in ("strict", "snap"):
            raise UsageError("Llm policy must be strict or snap")
        if int(parameters.get("retries", 2)) < 0:
            raise UsageError("Llm retries must be >= 0")
    return SelectionStrategy(kind, name or kind.lower(), dict(parameters))


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------- baselines

def select_random(space: ModelSpace, seed, dataset_id: str = "") -> SelectionResult:
    """Uniform draw over the space. ``seed`` is an int or a numpy Generator."""
    if len(space) == 0:
        raise EmptySpace("cannot select from an empty model space")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mid, dt = _timed(lambda: int(rng.integers(0, len(space))))
    return SelectionResult(dataset_id, mid, latency_seconds=dt, strategy_kind="Random")


@dataclass(frozen=True)
class PopularConfig:
    algorithm: str = "Prophet"
    hyperparameters: tuple = (("changepoint_prior_scale", 0.1), ("seasonality_prior_scale", 10.0))
    representation: str = "Raw"


def select_popular(space: ModelSpace, config: PopularConfig = PopularConfig(),
                   dataset_id: str = "") -> SelectionResult:
    mid, dt = _timed(lambda: space.lookup(config.algorithm, config.hyperparameters, config.representation))
    if mid is None:
        raise NotInSpace(f"popular model {config} is not in the model space")
    return SelectionResult(dataset_id, mid, latency_seconds=dt, strategy_kind="Popular")


def select_sota_variant(P_train: PerformanceTensor, space: ModelSpace, family: str) -> int:
    """Family variant with the lowest mean MSE over every training entry; ties -> lowest id.

    Only complete columns (no missing entries) are eligible.
    """
    ids = space.ids_for(family)
    best = None
    for j in ids:
        col = P_train.entries[:, :, j]
        if col.size == 0 or np.isnan(col).any():
            continue
        mean = float(col.mean())
        if best is None or mean < best[0]:
            best = (mean, j)
    if best is None:
        raise AllMissingForFamily(f"no complete {family} column in the training tensor")
    return best[1]


# ---------------------------------------------------------------- standardization

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray  # 0 marks a zero-variance feature

    @classmethod
    def fit(cls, X) -> Standardizer:
        X = np.asarray(X, dtype=np.float64)
        return cls(X.mean(axis=0), X.std(axis=0))

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        safe = np.where(self.scale > 0, self.scale, 1.0)
        return np.where(self.scale > 0, (X - self.mean) / safe, 0.0)


def _profiles_array(profiles) -> np.ndarray:
    rows = [np.asarray(getattr(p, "values", p), dtype=np.float64) for p in profiles]
    if not rows:
        return np.zeros((0, 0))
    return np.vstack(rows)


def dataset_targets(P_train: PerformanceTensor) -> np.ndarray:
    """(n, m) per-dataset mean MSE over windows (NaN where every window is missing)."""
    return P_train.aggregates()


# ---------------------------------------------------------------- ISAC

@dataclass(frozen=True, eq=False)
class IsacModel:
    centroids: np.ndarray
    cluster_best: np.ndarray
    standardizer: Standardizer
    assignments: np.ndarray
    space_checksum: str = ""

    @property
    def k(self) -> int:
        return len(self.centroids)


def _sq_dist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeans(X, k: int, rng: np.random.Generator, max_iter: int = 100):
    """Lloyd iterations from k-means++ seeding until the assignment stops changing.

    Ties in assignment go to the lowest cluster index. A cluster that loses
    all members is reseeded at the point farthest from its current centroid.
    """
    n = len(X)
    first = int(rng.integers(n))
    C = [X[first]]
    for _ in range(1, k):
        d2 = _sq_dist(X, np.array(C)).min(axis=1)
        total = d2.sum()
        if total <= 0:
            C.append(X[int(rng.integers(n))])
            continue
        C.append(X[int(rng.choice(n, p=d2 / total))])
    C = np.array(C, dtype=np.float64)
    assign = None
    for _ in range(max_iter):
        new = np.argmin(_sq_dist(X, C), axis=1)
        for c in range(k):
            if not np.any(new == c):
                far = int(np.argmax(((X - C[c]) ** 2).sum(axis=1)))
                C[c] = X[far]
                new = np.argmin(_sq_dist(X, C), axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            members = X[assign == c]
            if len(members):
                C[c] = members.mean(axis=0)
    return C, assign


def _nan_argmin(v) -> int:
    keyed = np.where(np.isnan(v), np.inf, v)
    return int(np.argmin(keyed))


def isac_fit(profiles, P_train: PerformanceTensor, k: int = 5, seed: int = 0,
             space_checksum: str = "") -> IsacModel:
    """Cluster standardized training profiles; remember each cluster's best model.

    ``profiles`` are raw (unstandardized) per-dataset vectors aligned with
    ``P_train.dataset_ids``; standardization statistics are stored on the model.
    """
    X = _profiles_array(profiles)
    if len(X) != len(P_train.dataset_ids):
        raise ShapeMismatch("one profile per training dataset is required")
    if k < 1:
        raise UsageError("k must be >= 1")
    if len(X) < k:
        raise TooFewDatasets(f"k={k} clusters need at least {k} datasets, got {len(X)}")
    std = Standardizer.fit(X)
    Z = std.transform(X)
    C, assign = kmeans(Z, k, np.random.default_rng(seed))
    agg = dataset_targets(P_train)
    best = np.empty(k, dtype=int)
    for c in range(k):
        members = agg[assign == c]
        with np.errstate(invalid="ignore"):
            ok = ~np.isnan(members)
            means = np.where(ok.any(axis=0), np.where(ok, members, 0).sum(axis=0) / np.maximum(ok.sum(axis=0), 1), np.nan)
        best[c] = _nan_argmin(means)
    return IsacModel(C, best, std, assign, space_checksum or P_train.space_checksum)


def isac_select(model: IsacModel, profile, dataset_id: str = "") -> SelectionResult:
    def run():
        z = model.standardizer.transform(np.asarray(getattr(profile, "values", profile), dtype=np.float64))
        d = ((model.centroids - z) ** 2).sum(axis=1)
        return int(model.cluster_best[int(np.argmin(d))])

    mid, dt = _timed(run)
    return SelectionResult(dataset_id, mid, latency_seconds=dt, strategy_kind="Isac")


# ---------------------------------------------------------------- MLP

@dataclass(frozen=True)
class MlpHyper:
    hidden: tuple = (64, 32)
    step: float = 1e-3
    epochs: int = 200
    batch: int = 16
    seed: int = 0


@dataclass(eq=False)
class MlpMetaModel:
    weights: list
    biases: list
    standardizer: Standardizer | None = None
    loss_history: list = field(default_factory=list)
    space_checksum: str = ""

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def forward(self, X, cache: bool = False):
        """Rectifier hidden layers, identity output."""
        a = np.atleast_2d(np.asarray(X, dtype=np.float64))
        acts = [a]
        pre = []
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            pre.append(z)
            a = z if i == last else np.maximum(z, 0.0)
            acts.append(a)
        return (a, acts, pre) if cache else a


def init_mlp(sizes, seed: int = 0) -> MlpMetaModel:
    """Gaussian weights scaled by 1/sqrt(fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        Ws.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
        bs.append(np.zeros(fan_out))
    return MlpMetaModel(Ws, bs)


def mlp_loss(model: MlpMetaModel, X, Y, mask=None) -> float:
    """Mean squared error over the observed (unmasked) targets."""
    out = model.forward(X)
    mask = np.ones_like(Y, dtype=bool) if mask is None else mask
    diff = np.where(mask, out - np.nan_to_num(Y), 0.0)
    return float((diff ** 2).sum() / max(mask.sum(), 1))


def mlp_gradients(model: MlpMetaModel, X, Y, mask=None):
    """Analytic gradients of :func:`mlp_loss`, as (weight grads, bias grads)."""
    out, acts, pre = model.forward(X, cache=True)
    mask = np.ones_like(Y, dtype=bool) if mask is None else mask
    count = max(mask.sum(), 1)
    delta = np.where(mask, 2.0 * (out - np.nan_to_num(Y)) / count, 0.0)
    gW = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    return gW, gb


def mlp_fit(profiles, P_train: PerformanceTensor, hyper: MlpHyper = MlpHyper()) -> MlpMetaModel:
    """Regress per-dataset mean-MSE vectors on standardized profiles with mini-batch SGD."""
    X = _profiles_array(profiles)
    Y = dataset_targets(P_train)
    if len(X) != len(Y):
        raise ShapeMismatch(f"{len(X)} profiles but {len(Y)} training datasets")
    if len(X) == 0:
        raise TooFewDatasets("mlp_fit needs at least one training dataset")
    std = Standardizer.fit(X)
    Z = std.transform(X)
    mask = ~np.isnan(Y)
    model = init_mlp([Z.shape[1], *hyper.hidden, Y.shape[1]], hyper.seed)
    model.standardizer = std
    model.space_checksum = P_train.space_checksum
    rng = np.random.default_rng(hyper.seed + 1)
    n = len(Z)
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for s in range(0, n, hyper.batch):
            idx = order[s:s + hyper.batch]
            gW, gb = mlp_gradients(model, Z[idx], Y[idx], mask[idx])
            for i in range(len(model.weights)):
                model.weights[i] -= hyper.step * gW[i]
                model.biases[i] -= hyper.step * gb[i]
        model.loss_history.append(mlp_loss(model, Z, Y, mask))
    return model


def mlp_select(model: MlpMetaModel, profile, dataset_id: str = "") -> SelectionResult:
    def run():
        x = np.asarray(getattr(profile, "values", profile), dtype=np.float64)
        if model.standardizer is not None:
            x = model.standardizer.transform(x)
        return int(np.argmin(model.forward(x)[0]))

    mid, dt = _timed(run)
    return SelectionResult(dataset_id, mid, latency_seconds=dt, strategy_kind="MlpMeta")


# ---------------------------------------------------------------- LLM

def llm_select(w, f, variant: PromptVariant, space: ModelSpace, client, profile: str,
               policy: str = "strict", retries: int = 2, templates=None,
               dataset_id: str | None = None) -> SelectionResult:
    """Prompt, query and parse; re-ask with the same prompt on parse/missing-field failures.

    Latency and token counts are summed over all attempts. Transport and
    provider failures become ``Invalid(Transport)`` results.
    """
    ds = dataset_id if dataset_id is not None else w.dataset_id
    prompt = build_prompt(w, f if variant.include_meta_features else None, space, variant, templates)
    req = client.request(prompt.text, profile)
    latency = 0.0
    tin = tout = 0
    parsed = None
    attempts = 0
    for _ in range(retries + 1):
        attempts += 1
        try:
            res = client.complete(req)
        except ProviderError as exc:
            return SelectionResult(ds, None, InvalidReason.TRANSPORT.value, latency, tin, tout,
                                   "Llm", attempts, f"{type(exc).__name__}: {exc}")
        latency += res.latency_seconds
        tin += res.input_tokens
        tout += res.output_tokens
        parsed = parse_response(res.text, space, policy)
        if parsed.valid or parsed.reason not in (InvalidReason.PARSE_ERROR, InvalidReason.MISSING_FIELD):
            break
    reason = None if parsed.valid else parsed.reason.value
    return SelectionResult(ds, parsed.model_id, reason, latency, tin, tout, "Llm", attempts,
                           "snapped" if parsed.snapped else parsed.detail)


# ---------------------------------------------------------------- persistence

def _std_to_dict(std):
    return None if std is None else {"mean": std.mean.tolist(), "scale": std.scale.tolist()}


def _std_from_dict(doc):
    return None if doc is None else Standardizer(np.array(doc["mean"]), np.array(doc["scale"]))


def save_model(model, path) -> Path:
    """Write a fitted ISAC or MLP model as versioned JSON."""
    if isinstance(model, IsacModel):
        doc = {"format": "tsselect-isac", "version": MODEL_FILE_VERSION,
               "space_checksum": model.space_checksum,
               "centroids": model.centroids.tolist(),
               "cluster_best": model.cluster_best.tolist(),
               "assignments": model.assignments.tolist(),
               "standardizer": _std_to_dict(model.standardizer)}
    elif isinstance(model, MlpMetaModel):
        doc = {"format": "tsselect-mlp", "version": MODEL_FILE_VERSION,
               "space_checksum": model.space_checksum,
               "layer_sizes": model.layer_sizes,
               "weights": [w.tolist() for w in model.weights],
               "biases": [b.tolist() for b in model.biases],
               "loss_history": list(model.loss_history),
               "standardizer": _std_to_dict(model.standardizer)}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    path = Path(path)
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
    return path


def load_model(path, space: ModelSpace | None = None):
    doc = json.loads(Path(path).read_text("utf-8"))
    if doc.get("version") != MODEL_FILE_VERSION:
        raise FormatError(f"{path}: unsupported model file version {doc.get('version')}")
    if space is not None and doc.get("space_checksum") != space.checksum():
        raise SpaceMismatch(f"{path}: fitted against a different model space")
    std = _std_from_dict(doc.get("standardizer"))
    if doc.get("format") == "tsselect-isac":
        return IsacModel(np.array(doc["centroids"], dtype=np.float64),
                         np.array(doc["cluster_best"], dtype=int), std,
                         np.array(doc["assignments"], dtype=int), doc["space_checksum"])
    if doc.get("format") == "tsselect-mlp":
        m = MlpMetaModel([np.array(w, dtype=np.float64) for w in doc["weights"]],
                         [np.array(b, dtype=np.float64) for b in doc["biases"]], std,
                         list(doc.get("loss_history", [])), doc["space_checksum"])
        if m.layer_sizes != doc["layer_sizes"]:
            raise FormatError(f"{path}: layer sizes do not chain")
        return m
    raise FormatError(f"{path}: unknown model format {doc.get('format')!r}")
