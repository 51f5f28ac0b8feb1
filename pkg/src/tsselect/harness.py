"""Experiment runner, hit@k / MSE metrics, runtime and token accounting, reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import data as data_mod
from . import matrix as matrix_mod
from .errors import (DataError, KExceedsSpace, MissingEntry, TsSelectError, Unwritable, UsageError)
from .features import DEFAULT_CATALOG, dataset_profile, extract
from .forecasters import DEFAULT_ALPHA
from .llm import FixtureStore, LlmClient, load_profiles
from .matrix import PerformanceTensor, RankedModels
from .prompting import PromptVariant, TemplateSet
from .selectors import (MlpHyper, PopularConfig, SelectionResult, isac_fit, isac_select, make_strategy,
                        mlp_fit, mlp_select, select_popular, select_random, select_sota_variant,
                        llm_select)
from .space import ALGORITHMS, ModelSpace, load_space

log = logging.getLogger(__name__)

REPORT_FORMAT = "tsselect-report"
REPORT_VERSION = 1
DEFAULT_K = (1, 5, 10, 50)


# ---------------------------------------------------------------- metrics

def _selected_ids(selections) -> list:
    out = []
    for s in selections:
        if isinstance(s, SelectionResult):
            out.append(s.model_id)
        elif s is None:
            out.append(None)
        else:
            out.append(int(s))
    return out


def _ordering_matrix(rankings) -> np.ndarray:
    if isinstance(rankings, np.ndarray):
        return rankings
    return np.vstack([r.ordering if isinstance(r, RankedModels) else np.asarray(r) for r in rankings])


def rank_positions(selections, rankings) -> np.ndarray:
    """0-based position of each selected id in its dataset's ordering; -1 for invalid selections."""
    orderings = _ordering_matrix(rankings)
    ids = _selected_ids(selections)
    if len(ids) != len(orderings):
        raise UsageError(f"{len(ids)} selections but {len(orderings)} rankings")
    n, m = orderings.shape
    inverse = np.empty_like(orderings)
    rows = np.arange(n)[:, None]
    inverse[rows, orderings] = np.arange(m)[None, :]
    sel = np.array([-1 if i is None else i for i in ids], dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    ok = sel >= 0
    pos[ok] = inverse[np.nonzero(ok)[0], sel[ok]]
    return pos


def hit_at_k(selections, rankings, k: int) -> float:
    """Percentage of datasets whose valid selection lies in the top-k of its ranking.

    ``selections`` holds :class:`SelectionResult` objects or ids (``None`` for
    invalid); ``rankings`` holds :class:`RankedModels` or is an (n, m) array of
    orderings. Invalid selections count as misses.
    """
    orderings = _ordering_matrix(rankings)
    if k < 1:
        raise UsageError("k must be >= 1")
    if k > orderings.shape[1]:
        raise KExceedsSpace(f"k={k} exceeds the model-space size {orderings.shape[1]}")
    pos = rank_positions(selections, orderings)
    if len(pos) == 0:
        return 0.0
    hits = int(((pos >= 0) & (pos < k)).sum())
    return 100.0 * hits / len(pos)


def mean_std(values) -> tuple:
    """Mean and population standard deviation; (None, None) when empty."""
    values = [float(v) for v in values]
    if not values:
        return None, None
    return statistics.fmean(values), statistics.pstdev(values)


def mse_of_selections(selections, P: PerformanceTensor, dataset_ids=None) -> tuple:
    """(mean, std, coverage) of the selected models' per-dataset mean MSE.

    Invalid selections are excluded from the mean and reduce ``coverage``.
    """
    ids = _selected_ids(selections)
    dataset_ids = list(dataset_ids if dataset_ids is not None else P.dataset_ids)
    agg = P.aggregates()
    scores = []
    for ds, mid in zip(dataset_ids, ids):
        if mid is None:
            continue
        v = agg[P.dataset_index(ds), mid]
        if np.isnan(v):
            raise MissingEntry(f"no entries for model {mid} on dataset {ds!r}")
        scores.append(float(v))
    mean, std = mean_std(scores)
    coverage = len(scores) / len(ids) if ids else 0.0
    return mean, std, coverage


def speedup_stats(naive_seconds, latencies) -> dict:
    """Naive-vs-strategy speedups: median of per-dataset ratios and ratio of means."""
    pairs = [(float(a), float(b)) for a, b in zip(naive_seconds, latencies)]
    ratios = [a / b for a, b in pairs if b > 0]
    lat = [b for _, b in pairs]
    mean_lat = statistics.fmean(lat) if lat else 0.0
    return {
        "median": statistics.median(ratios) if ratios else None,
        "ratio_of_means": (statistics.fmean([a for a, _ in pairs]) / mean_lat) if mean_lat > 0 else None,
    }


# ---------------------------------------------------------------- config

@dataclass
class StrategyEntry:
    name: str
    kind: str
    params: dict = field(default_factory=dict)


_KIND_ALIASES = {
    "random": "Random", "popular": "Popular", "sota": "SotaVariant", "sotavariant": "SotaVariant",
    "isac": "Isac", "mlp": "MlpMeta", "mlpmeta": "MlpMeta", "llm": "Llm",
}


@dataclass
class ExperimentConfig:
    manifest: Path | None = None
    window_length: int = data_mod.DEFAULT_WINDOW_LENGTH
    windows_per_dataset: int = data_mod.DEFAULT_WINDOWS_PER_DATASET
    corpus_seed: int = 0
    matrix_source: str = "build"
    matrix_path: Path | None = None
    alpha: float = DEFAULT_ALPHA
    synthetic_non_native: bool = False
    build_seed: int = 0
    space_path: Path | None = None
    strategies: list = field(default_factory=list)
    variants: list = field(default_factory=lambda: ["data"])
    policy: str = "strict"
    k: list = field(default_factory=lambda: list(DEFAULT_K))
    seed: int = 0
    folds: int = 0
    timing: str = "measured"
    window_policy: str = "last"
    out: Path = Path("out")
    llm_mode: str = "replay"
    profiles_path: Path | None = None
    fixtures_dir: Path | None = None
    templates_dir: Path | None = None
    workers: int = 1

    def validate(self, m: int | None = None):
        if not self.strategies:
            raise UsageError("no strategies configured")
        if any(int(k) < 1 for k in self.k):
            raise UsageError("k values must be positive")
        if m is not None and any(int(k) > m for k in self.k):
            raise KExceedsSpace(f"k values {self.k} exceed the model-space size {m}")
        if self.matrix_source not in ("build", "import"):
            raise UsageError("matrix source must be 'build' or 'import'")
        if self.timing not in ("measured", "off"):
            raise UsageError("timing must be 'measured' or 'off'")
        if self.window_policy not in ("last", "vote"):
            raise UsageError("window_policy must be 'last' or 'vote'")
        if self.policy not in ("strict", "snap"):
            raise UsageError("policy must be 'strict' or 'snap'")
        for v in self.variants:
            PromptVariant.parse(v)


def _resolve(base: Path, value):
    if value is None or value == "":
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read an experiment TOML file; keyword overrides win over file values."""
    doc = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
        base = path.parent
    corpus = doc.get("corpus", {})
    mat = doc.get("matrix", {})
    ev = doc.get("evaluation", {})
    llm = doc.get("llm", {})
    cfg = ExperimentConfig(
        manifest=_resolve(base, corpus.get("manifest")),
        window_length=int(corpus.get("window_length", data_mod.DEFAULT_WINDOW_LENGTH)),
        windows_per_dataset=int(corpus.get("windows_per_dataset", data_mod.DEFAULT_WINDOWS_PER_DATASET)),
        corpus_seed=int(corpus.get("seed", 0)),
        matrix_source=mat.get("source", "build"),
        matrix_path=_resolve(base, mat.get("path")),
        alpha=float(mat.get("alpha", DEFAULT_ALPHA)),
        synthetic_non_native=bool(mat.get("synthetic_non_native", False)),
        build_seed=int(mat.get("seed", 0)),
        space_path=_resolve(base, doc.get("space", {}).get("path")),
        variants=list(ev.get("variants", ["data"])),
        policy=ev.get("policy", "strict"),
        k=[int(k) for k in ev.get("k", DEFAULT_K)],
        seed=int(ev.get("seed", 0)),
        folds=int(ev.get("folds", 0)),
        timing=ev.get("timing", "measured"),
        window_policy=ev.get("window_policy", "last"),
        out=_resolve(base, ev.get("out", "out")),
        llm_mode=llm.get("mode", "replay"),
        profiles_path=_resolve(base, llm.get("profiles")),
        fixtures_dir=_resolve(base, llm.get("fixtures")),
        templates_dir=_resolve(base, llm.get("templates")),
        workers=int(ev.get("workers", 1)),
    )
    cfg.strategies = [_strategy_entry(s) for s in doc.get("strategy", [])]
    for key, value in overrides.items():
        if value is None:
            continue
        if not hasattr(cfg, key):
            raise UsageError(f"unknown config override {key!r}")
        setattr(cfg, key, value)
    return cfg


def _strategy_entry(table: dict) -> StrategyEntry:
    table = dict(table)
    written = str(table.pop("kind", "")).lower()
    kind = _KIND_ALIASES.get(written)
    if kind is None:
        raise UsageError(f"strategy needs a kind among {sorted(_KIND_ALIASES)}")
    name = table.pop("name", written)
    return StrategyEntry(name, kind, table)


def expand_strategies(cfg: ExperimentConfig) -> list:
    """Concrete strategies: SOTA entries fan out per family, LLM entries per prompt variant."""
    out = []
    for e in cfg.strategies:
        if e.kind == "SotaVariant":
            if "families" in e.params:
                families = list(e.params["families"])
            elif "family" in e.params:
                families = [e.params["family"]]
            else:
                families = list(ALGORITHMS)
            for fam in families:
                out.append(StrategyEntry(f"{e.name}:{fam}", e.kind, {"family": fam}))
        elif e.kind == "Llm":
            variants = e.params.get("variants") or cfg.variants
            for v in variants:
                params = {k: val for k, val in e.params.items() if k != "variants"}
                params["variant"] = v
                params.setdefault("policy", cfg.policy)
                out.append(StrategyEntry(f"{e.name}:{PromptVariant.parse(v).name}", e.kind, params))
        else:
            out.append(e)
    for e in out:
        make_strategy(e.kind, e.name, **{k: v for k, v in e.params.items()
                                          if k not in ("families",)})
    names = [e.name for e in out]
    if len(set(names)) != len(names):
        raise UsageError(f"duplicate strategy names: {names}")
    return out


# ---------------------------------------------------------------- report

@dataclass
class EvaluationReport:
    metadata: dict
    strategies: list
    naive: dict
    records: list
    failures: list

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "version": REPORT_VERSION,
                **{f.name: getattr(self, f.name) for f in fields(self)}}

    @classmethod
    def from_dict(cls, doc: dict) -> EvaluationReport:
        if doc.get("format") != REPORT_FORMAT or doc.get("version") != REPORT_VERSION:
            raise DataError("not a tsselect report (format/version mismatch)")
        return cls(**{f.name: doc[f.name] for f in fields(cls)})

    def strategy(self, name: str) -> dict:
        for s in self.strategies:
            if s["name"] == name:
                return s
        raise KeyError(name)


def report_json(report: EvaluationReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=False, allow_nan=False) + "\n"


def load_report(path) -> EvaluationReport:
    return EvaluationReport.from_dict(json.loads(Path(path).read_text("utf-8")))


def _fmt(v, spec=".4f"):
    return "-" if v is None else format(v, spec)


def summary_table(report: EvaluationReport) -> str:
    """Strategies x hit@k, delimited."""
    ks = report.metadata["k"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", *(f"hit@{k}" for k in ks)])
    for s in report.strategies:
        w.writerow([s["name"], *(format(s["hit_at_k"][str(k)], ".2f") for k in ks)])
    return buf.getvalue()


def render_text(report: EvaluationReport) -> str:
    md = report.metadata
    ks = md["k"]
    lines = [
        f"datasets: {md['n_datasets']}  models: {md['m_models']}  windows/dataset: {md['windows_per_dataset']}",
        f"std convention: {md['std_convention']}  timing: {md['timing']}  window policy: {md['window_policy']}",
        "",
        "hit@k accuracy (%)",
    ]
    width = max([len(s["name"]) for s in report.strategies] + [8])
    lines.append("  ".join(["strategy".ljust(width), *(f"hit@{k}".rjust(8) for k in ks)]))
    for s in report.strategies:
        lines.append("  ".join([s["name"].ljust(width),
                                *(format(s["hit_at_k"][str(k)], ".2f").rjust(8) for k in ks)]))
    lines += ["", "one-step-ahead MSE (mean +- std over scored datasets)"]
    for s in report.strategies:
        m = s["mse"]
        lines.append(f"{s['name'].ljust(width)}  {_fmt(m['mean'])} +- {_fmt(m['std'])}  "
                     f"coverage {m['coverage']:.2f}")
    lines += ["", "selection latency (s), training (s), speedup over naive (median)"]
    for s in report.strategies:
        lat = s["latency"]
        lines.append(f"{s['name'].ljust(width)}  {_fmt(lat['mean'])} +- {_fmt(lat['std'])}  "
                     f"train {_fmt(s['training_seconds'])}  speedup {_fmt(s['speedup']['median'], '.1f')}")
    llm = [s for s in report.strategies if s["kind"] == "Llm"]
    if llm:
        lines += ["", "tokens per dataset (mean +- std)       invalid outputs"]
        for s in llm:
            t = s["tokens"]
            inv = ", ".join(f"{k}={v}" for k, v in s["invalid"].items()) or "none"
            lines.append(f"{s['name'].ljust(width)}  in {_fmt(t['input_mean'], '.1f')} +- "
                         f"{_fmt(t['input_std'], '.1f')}  out {_fmt(t['output_mean'], '.1f')} +- "
                         f"{_fmt(t['output_std'], '.1f')}  {inv}")
    nv = report.naive
    lines += ["", f"naive approach: {_fmt(nv['mean_seconds'])} +- {_fmt(nv['std_seconds'])} s per dataset"]
    if report.failures:
        lines += ["", f"failures: {len(report.failures)}"]
        lines += [f"  {f['strategy']} {f['dataset_id']}: {f['error']}" for f in report.failures]
    return "\n".join(lines) + "\n"


def emit_report(report: EvaluationReport, out_dir, formats=("json", "csv", "txt")) -> list:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        if "json" in formats:
            p = out_dir / "report.json"
            p.write_text(report_json(report), encoding="utf-8")
            written.append(p)
        if "csv" in formats:
            p = out_dir / "summary.csv"
            p.write_text(summary_table(report), encoding="utf-8")
            written.append(p)
            p = out_dir / "records.csv"
            p.write_text(_records_csv(report.records), encoding="utf-8")
            written.append(p)
        if "txt" in formats:
            p = out_dir / "report.txt"
            p.write_text(render_text(report), encoding="utf-8")
            written.append(p)
    except OSError as exc:
        raise Unwritable(f"cannot write report to {out_dir}: {exc}") from exc
    return written


def _records_csv(records) -> str:
    cols = ["strategy", "dataset_id", "model_id", "reason", "rank_position", "mse",
            "latency_seconds", "input_tokens", "output_tokens", "attempts", "naive_seconds"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        w.writerow(["" if r.get(c) is None else r.get(c) for c in cols])
    return buf.getvalue()


# ---------------------------------------------------------------- running

@dataclass
class Workspace:
    """Everything a run needs, prepared once: space, tensor, windows, features."""

    space: ModelSpace
    P: PerformanceTensor
    windows: dict            # dataset id -> list[Window], aligned with P's window index
    window_features: dict    # dataset id -> list[MetaFeatureVector]
    profiles: dict           # dataset id -> MetaFeatureVector

    @property
    def dataset_ids(self) -> list:
        return sorted(self.P.dataset_ids)


def corpus_windows(cfg: ExperimentConfig, datasets) -> dict:
    return {d.id: data_mod.sample_windows(d, cfg.windows_per_dataset, cfg.window_length,
                                          data_mod.dataset_seed(cfg.corpus_seed, d.id))
            for d in datasets}


def load_datasets(cfg: ExperimentConfig) -> list:
    if cfg.manifest is None:
        raise UsageError("config has no corpus manifest")
    return data_mod.load_corpus(cfg.manifest)


def build_matrix(cfg: ExperimentConfig, space: ModelSpace, datasets=None) -> PerformanceTensor:
    datasets = datasets if datasets is not None else load_datasets(cfg)
    windows = corpus_windows(cfg, datasets)
    return matrix_mod.build(windows, space, cfg.alpha, cfg.build_seed, cfg.synthetic_non_native,
                            workers=cfg.workers)


def prepare(cfg: ExperimentConfig) -> Workspace:
    space = load_space(cfg.space_path)
    datasets = {d.id: d for d in load_datasets(cfg)}
    if cfg.matrix_source == "import":
        if cfg.matrix_path is None:
            raise UsageError("matrix source 'import' needs a matrix path")
        P = matrix_mod.import_matrix(cfg.matrix_path, space)
        windows = {}
        for ref in sorted(P.window_manifest, key=lambda r: (r.dataset_id, r.index)):
            if ref.dataset_id not in datasets:
                raise DataError(f"matrix references dataset {ref.dataset_id!r} missing from the corpus")
            windows.setdefault(ref.dataset_id, []).append(
                data_mod.window_at(datasets[ref.dataset_id], ref.start, ref.length))
        missing = set(P.dataset_ids) - set(windows)
        if missing:
            raise DataError(f"matrix has no window manifest for {sorted(missing)}")
    else:
        P = build_matrix(cfg, space, list(datasets.values()))
        if cfg.timing == "off":
            # fit times measured in this run are wall-clock noise; recorded ones are kept
            fits = np.where(np.isnan(P.entries), np.nan, 0.0)
            P = PerformanceTensor(P.entries.copy(), fits, P.dataset_ids, P.space_checksum,
                                  P.window_manifest, P.alpha, P.reasons)
        windows = corpus_windows(cfg, list(datasets.values()))
    feats = {ds: [extract(w, DEFAULT_CATALOG) for w in ws] for ds, ws in windows.items()}
    profiles = {ds: dataset_profile(v) for ds, v in feats.items()}
    return Workspace(space, P, windows, feats, profiles)


def _folds(ids: list, folds: int) -> list:
    """(train ids, test ids) pairs; ``folds`` <= 0 or >= n means leave-one-out."""
    n = len(ids)
    if folds <= 0 or folds >= n:
        return [([d for d in ids if d != t], [t]) for t in ids]
    out = []
    for f in range(folds):
        test = [d for i, d in enumerate(ids) if i % folds == f]
        out.append(([d for d in ids if d not in test], test))
    return out


def make_client(cfg: ExperimentConfig) -> LlmClient:
    profiles = load_profiles(cfg.profiles_path) if cfg.profiles_path else {}
    store = FixtureStore(cfg.fixtures_dir) if cfg.fixtures_dir else None
    return LlmClient(profiles, mode=cfg.llm_mode, store=store)


def _vote(results: list, dataset_id: str) -> SelectionResult:
    valid = [r.model_id for r in results if r.valid]
    lat = sum(r.latency_seconds for r in results)
    tin = sum(r.input_tokens for r in results)
    tout = sum(r.output_tokens for r in results)
    att = sum(r.attempts for r in results)
    if valid:
        counts = Counter(valid)
        top = max(counts.values())
        mid = min(i for i, c in counts.items() if c == top)
        return SelectionResult(dataset_id, mid, None, lat, tin, tout, "Llm", att, "vote")
    reasons = Counter(r.reason for r in results)
    top = max(reasons.values())
    reason = min(r for r, c in reasons.items() if c == top)
    return SelectionResult(dataset_id, None, reason, lat, tin, tout, "Llm", att, "vote")


def run_selections(cfg: ExperimentConfig, ws: Workspace, client: LlmClient | None = None):
    """Run every strategy on every dataset.

    Returns ``(selections, training_seconds, failures)`` where ``selections``
    maps strategy name -> list of SelectionResult sorted by dataset id.
    """
    strategies = expand_strategies(cfg)
    ids = ws.dataset_ids
    selections = {}
    training = {}
    failures = []
    templates = TemplateSet.load(cfg.templates_dir) if cfg.templates_dir else None
    needs_client = any(s.kind == "Llm" for s in strategies)
    if needs_client and client is None:
        client = make_client(cfg)

    def guarded(name, ds, fn):
        try:
            return fn()
        except TsSelectError as exc:
            failures.append({"strategy": name, "dataset_id": ds, "error": f"{type(exc).__name__}: {exc}"})
            return SelectionResult(ds, None, "Error", strategy_kind=name, detail=str(exc))

    for strat in strategies:
        p = strat.params
        results = {}
        train_time = 0.0
        if strat.kind == "Random":
            rng = np.random.default_rng(int(p.get("seed", cfg.seed)))
            for ds in ids:
                results[ds] = guarded(strat.name, ds, lambda ds=ds: select_random(ws.space, rng, ds))
        elif strat.kind == "Popular":
            pc = PopularConfig(p.get("algorithm", "Prophet"),
                               tuple(p.get("hyperparameters", PopularConfig.hyperparameters).items())
                               if isinstance(p.get("hyperparameters"), dict)
                               else PopularConfig.hyperparameters,
                               p.get("representation", "Raw"))
            for ds in ids:
                results[ds] = guarded(strat.name, ds, lambda ds=ds: select_popular(ws.space, pc, ds))
        elif strat.kind in ("SotaVariant", "Isac", "MlpMeta"):
            for train, test in _folds(ids, cfg.folds):
                P_train = ws.P.subset(train)
                t0 = time.perf_counter()
                try:
                    if strat.kind == "SotaVariant":
                        fitted = select_sota_variant(P_train, ws.space, p["family"])
                    elif strat.kind == "Isac":
                        fitted = isac_fit([ws.profiles[d] for d in train], P_train,
                                          int(p.get("k", 5)), int(p.get("seed", cfg.seed)))
                    else:
                        hyper = MlpHyper(tuple(p.get("hidden", (64, 32))), float(p.get("step", 1e-3)),
                                         int(p.get("epochs", 200)), int(p.get("batch", 16)),
                                         int(p.get("seed", cfg.seed)))
                        fitted = mlp_fit([ws.profiles[d] for d in train], P_train, hyper)
                except TsSelectError as exc:
                    for ds in test:
                        failures.append({"strategy": strat.name, "dataset_id": ds,
                                         "error": f"{type(exc).__name__}: {exc}"})
                        results[ds] = SelectionResult(ds, None, "Error", strategy_kind=strat.kind,
                                                      detail=str(exc))
                    continue
                train_time += time.perf_counter() - t0
                for ds in test:
                    if strat.kind == "SotaVariant":
                        results[ds] = SelectionResult(ds, fitted, strategy_kind="SotaVariant")
                    elif strat.kind == "Isac":
                        results[ds] = isac_select(fitted, ws.profiles[ds], ds)
                    else:
                        results[ds] = mlp_select(fitted, ws.profiles[ds], ds)
        elif strat.kind == "Llm":
            variant = PromptVariant.parse(p.get("variant", "data"))

            def one(ds, variant=variant, p=p, name=strat.name):
                wins = ws.windows[ds]
                picks = range(len(wins)) if cfg.window_policy == "vote" else [len(wins) - 1]
                out = [guarded(name, ds, lambda i=i: llm_select(
                    wins[i], ws.window_features[ds][i], variant, ws.space, client, p["profile"],
                    p.get("policy", cfg.policy), int(p.get("retries", 2)), templates, ds)) for i in picks]
                return out[0] if len(out) == 1 else _vote(out, ds)

            if cfg.workers > 1:
                with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                    for ds, res in zip(ids, pool.map(one, ids)):
                        results[ds] = res
            else:
                for ds in ids:
                    results[ds] = one(ds)
        ordered = [results[ds] for ds in ids]
        if cfg.timing == "off" and strat.kind != "Llm":
            ordered = [_zero_latency(r) for r in ordered]
            train_time = 0.0
        selections[strat.name] = (strat, ordered)
        training[strat.name] = train_time
    failures.sort(key=lambda f: (f["strategy"], f["dataset_id"]))
    return selections, training, failures


def _zero_latency(r: SelectionResult) -> SelectionResult:
    return SelectionResult(r.dataset_id, r.model_id, r.reason, 0.0, r.input_tokens, r.output_tokens,
                           r.strategy_kind, r.attempts, r.detail)


def evaluate_selections(cfg: ExperimentConfig, ws: Workspace, selections, training, failures
                        ) -> EvaluationReport:
    ids = ws.dataset_ids
    P = ws.P
    orderings = matrix_mod.rank_all(P)
    row = [P.dataset_index(ds) for ds in ids]
    orderings = orderings[row]
    agg = P.aggregates()[row]
    naive = [float(np.nansum(P.fit_seconds[:, P.dataset_index(ds), :])) for ds in ids]
    failures = list(failures)
    strategies = []
    records = []
    for name, (strat, results) in selections.items():
        positions = rank_positions(results, orderings)
        hits = {str(k): hit_at_k(results, orderings, int(k)) for k in cfg.k}
        scores = []
        for i, r in enumerate(results):
            mse = None
            if r.valid:
                v = agg[i, r.model_id]
                if np.isnan(v):
                    failures.append({"strategy": name, "dataset_id": r.dataset_id,
                                     "error": f"MissingEntry: no entries for model {r.model_id}"})
                else:
                    mse = float(v)
                    scores.append(mse)
            records.append({
                "strategy": name, "dataset_id": r.dataset_id, "model_id": r.model_id,
                "reason": r.reason, "rank_position": int(positions[i]) if positions[i] >= 0 else None,
                "mse": mse, "latency_seconds": r.latency_seconds, "input_tokens": r.input_tokens,
                "output_tokens": r.output_tokens, "attempts": r.attempts, "naive_seconds": naive[i],
            })
        mse_mean, mse_std = mean_std(scores)
        lat_mean, lat_std = mean_std([r.latency_seconds for r in results])
        tin_mean, tin_std = mean_std([r.input_tokens for r in results])
        tout_mean, tout_std = mean_std([r.output_tokens for r in results])
        invalid = Counter(r.reason for r in results if not r.valid)
        strategies.append({
            "name": name,
            "kind": strat.kind,
            "parameters": {k: v for k, v in strat.params.items()},
            "hit_at_k": hits,
            "mse": {"mean": mse_mean, "std": mse_std, "scored": len(scores),
                    "coverage": len(scores) / len(results) if results else 0.0},
            "latency": {"mean": lat_mean, "std": lat_std,
                        "total": sum(r.latency_seconds for r in results)},
            "training_seconds": training.get(name, 0.0),
            "tokens": {"input_total": sum(r.input_tokens for r in results),
                       "output_total": sum(r.output_tokens for r in results),
                       "input_mean": tin_mean, "input_std": tin_std,
                       "output_mean": tout_mean, "output_std": tout_std},
            "valid_count": sum(1 for r in results if r.valid),
            "invalid_count": sum(1 for r in results if not r.valid),
            "invalid": dict(sorted(invalid.items())),
            "speedup": speedup_stats(naive, [r.latency_seconds for r in results]),
        })
    naive_mean, naive_std = mean_std(naive)
    metadata = {
        "n_datasets": len(ids),
        "m_models": len(ws.space),
        "windows_per_dataset": int(P.dims[0]),
        "space_checksum": ws.space.checksum(),
        "k": [int(k) for k in cfg.k],
        "std_convention": "population",
        "invalid_policy": "miss for hit@k; excluded from MSE (see coverage)",
        "timing": cfg.timing,
        "window_policy": cfg.window_policy,
        "prompt_policy": cfg.policy,
        "folds": "leave-one-out" if cfg.folds <= 0 or cfg.folds >= len(ids) else cfg.folds,
        "alpha": P.alpha,
    }
    naive_block = {"mean_seconds": naive_mean, "std_seconds": naive_std, "total_seconds": sum(naive)}
    failures.sort(key=lambda f: (f["strategy"], f["dataset_id"], f["error"]))
    return EvaluationReport(metadata, strategies, naive_block, records, failures)


def run_experiment(cfg: ExperimentConfig, client: LlmClient | None = None,
                   workspace: Workspace | None = None) -> EvaluationReport:
    ws = workspace or prepare(cfg)
    cfg.validate(len(ws.space))
    selections, training, failures = run_selections(cfg, ws, client)
    return evaluate_selections(cfg, ws, selections, training, failures)
