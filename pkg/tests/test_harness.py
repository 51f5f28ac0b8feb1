import json
import socket

import numpy as np
import pytest

from conftest import DESK, make_tensor
from helpers import brute_hit_at_k, random_small_tensor
from tsselect import harness
from tsselect.errors import KExceedsSpace, UsageError
from tsselect.harness import (
    EvaluationReport, emit_report, expand_strategies, hit_at_k, load_config, load_report, mean_std,
    mse_of_selections, rank_positions, speedup_stats, summary_table,
)
from tsselect.matrix import naive_select, rank_all
from tsselect.selectors import SelectionResult


def test_hit_at_k_examples():
    P = make_tensor(np.random.default_rng(0).random((6, 9)))
    orders = rank_all(P)
    top = [int(o[0]) for o in orders]
    assert hit_at_k(top, orders, 1) == 100.0
    assert all(hit_at_k([None] * 6, orders, k) == 0.0 for k in (1, 5, 9))
    with pytest.raises(KExceedsSpace):
        hit_at_k(top, orders, 10)
    with pytest.raises(UsageError):
        hit_at_k(top, orders, 0)


def test_hit_at_k_accepts_selection_results():
    orders = np.array([[2, 0, 1], [0, 1, 2]])
    sel = [SelectionResult("a", 0), SelectionResult("b", None, "ParseError")]
    assert hit_at_k(sel, orders, 1) == 0.0
    assert hit_at_k(sel, orders, 2) == 50.0
    assert rank_positions(sel, orders).tolist() == [1, -1]


def test_hit_at_k_oracle_random_tensors():
    rng = np.random.default_rng(99)
    for _ in range(200):
        P, sel = random_small_tensor(rng)
        orders = rank_all(P)
        m = P.dims[2]
        for k in range(1, m + 1):
            assert hit_at_k(sel, orders, k) == brute_hit_at_k(sel, P.entries, k)


def test_monotone_and_full_k_is_coverage():
    rng = np.random.default_rng(5)
    for _ in range(50):
        P, sel = random_small_tensor(rng)
        orders = rank_all(P)
        m = P.dims[2]
        hits = [hit_at_k(sel, orders, k) for k in range(1, m + 1)]
        assert hits == sorted(hits)
        coverage = sum(s is not None for s in sel) / len(sel)
        assert hits[-1] == pytest.approx(100 * coverage)


def test_mse_of_selections():
    P = make_tensor([[0.01, 0.5], [0.7, 0.03]], dataset_ids=("a", "b"))
    mean, std, cov = mse_of_selections([0, 1], P)
    assert mean == pytest.approx(0.02) and std == pytest.approx(0.01) and cov == 1.0
    mean, std, cov = mse_of_selections([0, None], P)
    assert (mean, std, cov) == (0.01, 0.0, 0.5)
    assert mean_std([]) == (None, None)


def test_top1_mse_is_mean_of_minimums():
    e = np.random.default_rng(4).random((3, 5, 7))
    P = make_tensor(e)
    top = [int(o[0]) for o in rank_all(P)]
    mean, _, _ = mse_of_selections(top, P)
    assert mean == pytest.approx(e.mean(axis=0).min(axis=1).mean())


def test_speedup_closed_form():
    P = make_tensor(np.ones((1, 322)), fit_seconds=np.full((1, 322), 0.1))
    _, naive = naive_select(P, "d0")
    s = speedup_stats([naive], [0.5])
    assert abs(s["median"] - 64.4) <= 1e-9
    assert abs(s["ratio_of_means"] - 64.4) <= 1e-9
    s = speedup_stats([1.0, 2.0, 9.0], [1.0, 1.0, 1.0])
    assert s["median"] == 2.0 and s["ratio_of_means"] == 4.0


def _tiny_report(ks=(1, 5)):
    strategies = [{"name": n, "kind": "Random", "hit_at_k": {str(k): 10.0 * k for k in ks}}
                  for n in ("a", "b")]
    md = {"k": list(ks)}
    return EvaluationReport(md, strategies, {}, [], [])


def test_summary_shape():
    rows = summary_table(_tiny_report()).strip().splitlines()
    assert rows == ["strategy,hit@1,hit@5", "a,10.00,50.00", "b,10.00,50.00"]


# ---------------------------------------------------------------- end to end on a tiny corpus

@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(1)
    rows = []
    for i in range(5):
        x = np.cumsum(rng.normal(size=40)) + np.sin(np.arange(40) * (i + 1) / 3)
        (root / f"s{i}.csv").write_text("\n".join(repr(float(v)) for v in x) + "\n")
        rows.append(f"s{i},s{i}.csv")
    (root / "manifest.csv").write_text("id,path\n" + "\n".join(rows) + "\n")
    (root / "exp.toml").write_text(
        '[corpus]\nmanifest = "manifest.csv"\nwindows_per_dataset = 2\nseed = 4\n'
        '[matrix]\nsource = "build"\nsynthetic_non_native = true\n'
        '[evaluation]\nk = [1, 5]\nseed = 2\ntiming = "off"\n'
        '[[strategy]]\nkind = "random"\n'
        '[[strategy]]\nkind = "sota"\nfamilies = ["VAR", "SeasonalNaive"]\n'
        '[[strategy]]\nkind = "isac"\nk = 2\n')
    return root


def test_random_run_byte_identical(tiny_corpus, tmp_path):
    cfg = load_config(tiny_corpus / "exp.toml")
    a = emit_report(harness.run_experiment(cfg), tmp_path / "a")
    b = emit_report(harness.run_experiment(load_config(tiny_corpus / "exp.toml")), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_report_round_trip_and_reemit(tiny_corpus, tmp_path):
    report = harness.run_experiment(load_config(tiny_corpus / "exp.toml"))
    assert [s["name"] for s in report.strategies] == ["random", "sota:VAR", "sota:SeasonalNaive", "isac"]
    paths = emit_report(report, tmp_path / "r")
    loaded = load_report(tmp_path / "r" / "report.json")
    assert loaded.to_dict() == json.loads(json.dumps(report.to_dict()))
    again = emit_report(loaded, tmp_path / "r2")
    for p, q in zip(paths, again):
        assert p.read_bytes() == q.read_bytes()


def test_report_naive_and_records(tiny_corpus):
    cfg = load_config(tiny_corpus / "exp.toml")
    ws = harness.prepare(cfg)
    report = harness.run_experiment(cfg, workspace=ws)
    assert report.metadata["std_convention"] == "population"
    by_ds = {r["dataset_id"]: r["naive_seconds"] for r in report.records if r["strategy"] == "random"}
    for ds, secs in by_ds.items():
        assert secs == float(np.nansum(ws.P.fit_seconds[:, ws.P.dataset_index(ds), :]))
    assert len(report.records) == 4 * 5


def test_config_errors(tiny_corpus):
    cfg = load_config(tiny_corpus / "exp.toml", k=[400])
    with pytest.raises(KExceedsSpace):
        cfg.validate(322)
    with pytest.raises(UsageError):
        load_config(tiny_corpus / "exp.toml", bogus=1)
    cfg = load_config(tiny_corpus / "exp.toml")
    cfg.strategies.append(cfg.strategies[0])
    with pytest.raises(UsageError):
        expand_strategies(cfg)


def test_folds():
    ids = ["a", "b", "c", "d"]
    loo = harness._folds(ids, 0)
    assert [t for _, t in loo] == [["a"], ["b"], ["c"], ["d"]]
    two = harness._folds(ids, 2)
    assert two == [(["b", "d"], ["a", "c"]), (["a", "c"], ["b", "d"])]


def test_vote():
    rs = [SelectionResult("x", 3, latency_seconds=1.0), SelectionResult("x", 1, latency_seconds=1.0),
          SelectionResult("x", None, "ParseError", 1.0), SelectionResult("x", 1, latency_seconds=1.0)]
    v = harness._vote(rs, "x")
    assert v.model_id == 1 and v.latency_seconds == 4.0
    assert harness._vote([SelectionResult("x", 3), SelectionResult("x", 2)], "x").model_id == 2


# ---------------------------------------------------------------- replay on the shipped pack

def test_desk_replay_no_network_and_token_totals(monkeypatch):
    def refuse(*a, **k):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    cfg = load_config(DESK / "experiment.toml")
    cfg.strategies = [s for s in cfg.strategies if s.kind == "Llm"]
    client = harness.make_client(cfg)
    report = harness.run_experiment(cfg, client=client)
    assert not report.failures
    assert len(report.strategies) == 4
    assert sum(s["tokens"]["input_total"] for s in report.strategies) == sum(c.input_tokens for c in client.calls)
    assert sum(s["tokens"]["output_total"] for s in report.strategies) == sum(c.output_tokens for c in client.calls)
    assert all(c.source == "replay" for c in client.calls)
