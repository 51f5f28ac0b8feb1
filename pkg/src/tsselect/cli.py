"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 provider error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import harness
from . import matrix as matrix_mod
from .errors import TsSelectError, UsageError
from .features import DEFAULT_CATALOG, export_features
from .prompting import PromptVariant
from .space import format_value, load_space

log = logging.getLogger("tsselect")

VARIANT_CHOICES = ("data", "data+cot", "data+meta", "data+meta+cot")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _k_list(text: str) -> list:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k expects comma-separated integers, got {text!r}") from None
    if not ks:
        raise argparse.ArgumentTypeError("--k needs at least one value")
    return ks


def _common(p):
    p.add_argument("--config", type=Path, help="experiment TOML file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)


def _config(args) -> harness.ExperimentConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    if getattr(args, "k", None):
        overrides["k"] = args.k
    if getattr(args, "policy", None):
        overrides["policy"] = args.policy
    if getattr(args, "variant", None):
        overrides["variants"] = list(args.variant)
    if getattr(args, "replay", None) is not None:
        overrides["llm_mode"] = "replay"
        overrides["fixtures_dir"] = args.replay
    if getattr(args, "timing", None):
        overrides["timing"] = args.timing
    cfg = harness.load_config(args.config, **overrides)
    if getattr(args, "variant", None):
        for e in cfg.strategies:
            e.params.pop("variants", None)
    if getattr(args, "strategy", None):
        wanted = {s for item in args.strategy for s in item.split(",") if s}
        picked = [e for e in cfg.strategies if e.name in wanted]
        unknown = wanted - {e.name for e in picked}
        if unknown:
            raise UsageError(f"unknown strategies {sorted(unknown)}; configured: "
                             f"{[e.name for e in cfg.strategies]}")
        cfg.strategies = picked
    return cfg


def cmd_space_enumerate(args):
    t0 = time.perf_counter()
    space = load_space(args.space)
    elapsed = time.perf_counter() - t0
    counts = space.counts()
    if args.format == "json":
        print(json.dumps({"total": len(space), "counts": counts, "checksum": space.checksum(),
                          "seconds": elapsed}))
    else:
        for algo, n in counts.items():
            print(f"{algo:<16} {n:>4}")
        print(f"{'total':<16} {len(space):>4}")
        print(f"checksum {space.checksum()}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model_id", "algorithm", "hyperparameters", "representation"])
            for i, s in enumerate(space):
                w.writerow([i, s.algorithm, ";".join(f"{n}={format_value(v)}" for n, v in s.hyperparameters),
                            s.representation])
    return 0


def cmd_data_windows(args):
    cfg = _config(args)
    datasets = harness.load_datasets(cfg)
    windows = harness.corpus_windows(cfg, datasets)
    out = args.out or cfg.out / "windows.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset_id", "window_index", "start", "length"])
        for ds, wins in windows.items():
            for k, win in enumerate(wins):
                w.writerow([ds, k, win.start, win.length])
    print(out)
    return 0


def cmd_features_extract(args):
    cfg = _config(args)
    ws = harness.prepare(cfg)
    rows = [(ds, k, v) for ds in ws.dataset_ids for k, v in enumerate(ws.window_features[ds])]
    out = args.out or cfg.out / "features.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    for p in export_features(out, rows, DEFAULT_CATALOG):
        print(p)
    return 0


def cmd_matrix_build(args):
    cfg = _config(args)
    if args.synthetic:
        cfg.synthetic_non_native = True
    if args.workers:
        cfg.workers = args.workers
    space = load_space(cfg.space_path)
    P = harness.build_matrix(cfg, space)
    out = args.out or cfg.out / "matrix.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    matrix_mod.export_matrix(P, out)
    T, n, m = P.dims
    print(f"{out}: T={T} n={n} m={m}")
    return 0


def cmd_matrix_import(args):
    space = load_space(args.space)
    P = matrix_mod.import_matrix(args.path, space)
    T, n, m = P.dims
    import numpy as np

    present = int((~np.isnan(P.entries)).sum())
    print(json.dumps({"T": T, "n": n, "m": m, "present_entries": present,
                      "space_checksum": P.space_checksum, "datasets": list(P.dataset_ids)}))
    return 0


def cmd_matrix_export(args):
    space = load_space(args.space)
    P = matrix_mod.import_matrix(args.path, space)
    matrix_mod.export_matrix(P, args.out)
    print(args.out)
    return 0


def cmd_select(args):
    cfg = _config(args)
    ws = harness.prepare(cfg)
    cfg.validate(len(ws.space))
    selections, _, failures = harness.run_selections(cfg, ws)
    for name, (_, results) in selections.items():
        for r in results:
            spec = ws.space[r.model_id].label() if r.valid else None
            print(json.dumps({"strategy": name, "dataset_id": r.dataset_id, "model_id": r.model_id,
                              "model": spec, "reason": r.reason, "input_tokens": r.input_tokens,
                              "output_tokens": r.output_tokens}))
    for f in failures:
        log.warning("%s %s: %s", f["strategy"], f["dataset_id"], f["error"])
    return 0


def cmd_evaluate(args):
    cfg = _config(args)
    report = harness.run_experiment(cfg)
    for p in harness.emit_report(report, cfg.out):
        print(p)
    return 0


def cmd_report(args):
    report = harness.load_report(args.input)
    if args.out:
        for p in harness.emit_report(report, args.out):
            print(p)
    else:
        sys.stdout.write(harness.render_text(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tsselect", description="Forecasting model selection benchmark")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    sp = sub.add_parser("space", help="model-space operations")
    ssub = sp.add_subparsers(dest="action", parser_class=_Parser)
    e = ssub.add_parser("enumerate", help="enumerate the model space")
    e.add_argument("--space", type=Path, help="model-space config (default: canonical)")
    e.add_argument("--format", choices=("table", "json"), default="table")
    e.add_argument("--out", type=Path, help="also write every spec to this CSV")
    e.set_defaults(func=cmd_space_enumerate)

    dp = sub.add_parser("data", help="corpus operations")
    dsub = dp.add_subparsers(dest="action", parser_class=_Parser)
    w = dsub.add_parser("windows", help="sample windows and write their manifest")
    _common(w)
    w.set_defaults(func=cmd_data_windows)

    fp = sub.add_parser("features", help="meta-feature operations")
    fsub = fp.add_subparsers(dest="action", parser_class=_Parser)
    x = fsub.add_parser("extract", help="extract meta-features for every window")
    _common(x)
    x.set_defaults(func=cmd_features_extract)

    mp = sub.add_parser("matrix", help="performance-matrix operations")
    msub = mp.add_subparsers(dest="action", parser_class=_Parser)
    b = msub.add_parser("build", help="build the matrix from the corpus")
    _common(b)
    b.add_argument("--synthetic", action="store_true", help="fill non-native columns synthetically")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_matrix_build)
    i = msub.add_parser("import", help="validate a matrix file against the model space")
    i.add_argument("path", type=Path)
    i.add_argument("--space", type=Path)
    i.set_defaults(func=cmd_matrix_import)
    x = msub.add_parser("export", help="re-serialize a matrix file")
    x.add_argument("path", type=Path)
    x.add_argument("--out", type=Path, required=True)
    x.add_argument("--space", type=Path)
    x.set_defaults(func=cmd_matrix_export)

    for name, func, helptext in (("select", cmd_select, "run selection strategies"),
                                 ("evaluate", cmd_evaluate, "run strategies and write reports")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--strategy", action="append", help="strategy name(s) from the config")
        p.add_argument("--variant", action="append", choices=VARIANT_CHOICES)
        p.add_argument("--policy", choices=("strict", "snap"))
        p.add_argument("--replay", type=Path, metavar="DIR", help="replay recorded LLM responses from DIR")
        p.add_argument("--k", type=_k_list, help="comma-separated k values, e.g. 1,5,10,50")
        p.add_argument("--timing", choices=("measured", "off"))
        p.set_defaults(func=func)

    r = sub.add_parser("report", help="render a saved report.json")
    r.add_argument("--in", dest="input", type=Path, required=True)
    r.add_argument("--out", type=Path)
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if not hasattr(args, "func"):
            parser.print_help(sys.stderr)
            return 1
        return args.func(args)
    except TsSelectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
