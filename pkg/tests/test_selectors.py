import numpy as np
import pytest

from conftest import make_tensor
from helpers import brute_blob_best, fd_gradient_error, planted_blobs
from tsselect.data import make_dataset, window_at
from tsselect.errors import (
    AllMissingForFamily, EmptySpace, NotInSpace, ShapeMismatch, SpaceMismatch, TooFewDatasets, UsageError,
)
from tsselect.features import extract
from tsselect.llm import CompletionRequest, CompletionResult, FixtureStore, LlmClient, ProviderProfile, record_fixture
from tsselect.prompting import PromptVariant, build_prompt
from tsselect.selectors import (
    IsacModel, MlpHyper, PopularConfig, Standardizer, init_mlp, isac_fit, isac_select, kmeans, llm_select,
    load_model, make_strategy, mlp_fit, mlp_select, save_model, select_popular,
    select_random, select_sota_variant,
)
from tsselect.space import enumerate_space


# ---------------------------------------------------------------- random / popular

def test_random_single_model():
    s = enumerate_space({"algorithm": [{"name": "SeasonalNaive", "representations": ["Raw"],
                                        "hyperparameters": {"season_length": [1]}}]})
    assert {select_random(s, seed).model_id for seed in range(20)} == {0}
    with pytest.raises(EmptySpace):
        select_random(enumerate_space({}), 0)


def test_random_deterministic(space):
    assert select_random(space, 5).model_id == select_random(space, 5).model_id


def test_random_binomial_bound(space):
    rng = np.random.default_rng(12)
    N, m = 100_000, len(space)
    counts = np.bincount([select_random(space, rng).model_id for _ in range(N)], minlength=m)
    p = 1 / m
    sigma = np.sqrt(N * p * (1 - p))
    assert np.all(np.abs(counts - N * p) <= 5 * sigma)


def test_popular(space):
    r = select_popular(space)
    assert space[r.model_id].algorithm == "Prophet"
    assert space[r.model_id].params == {"changepoint_prior_scale": 0.1, "seasonality_prior_scale": 10.0}
    assert select_popular(space).model_id == r.model_id
    bad = PopularConfig(hyperparameters=(("changepoint_prior_scale", 0.05), ("seasonality_prior_scale", 10.0)))
    with pytest.raises(NotInSpace):
        select_popular(space, bad)


# ---------------------------------------------------------------- sota

def test_sota_brute_force(space):
    rng = np.random.default_rng(3)
    e = rng.random((2, 4, len(space)))
    P = make_tensor(e, checksum=space.checksum())
    for family in space.algorithms:
        ids = space.ids_for(family)
        oracle = min(ids, key=lambda j: (e[:, :, j].mean(), j))
        assert select_sota_variant(P, space, family) == oracle


def test_sota_ties_and_missing(space):
    e = np.ones((1, 2, len(space)))
    ids = space.ids_for("VAR")
    e[0, :, ids[3]] = e[0, :, ids[5]] = 0.1
    assert select_sota_variant(make_tensor(e), space, "VAR") == ids[3]
    e[0, 0, ids[3]] = np.nan  # incomplete column no longer eligible
    assert select_sota_variant(make_tensor(e), space, "VAR") == ids[5]
    e[:, :, ids] = np.nan
    with pytest.raises(AllMissingForFamily):
        select_sota_variant(make_tensor(e), space, "VAR")


def test_sota_single_variant():
    s = enumerate_space({"algorithm": [{"name": "SeasonalNaive", "representations": ["Raw"],
                                        "hyperparameters": {"season_length": [1]}}]})
    assert select_sota_variant(make_tensor([[0.3]]), s, "SeasonalNaive") == 0


# ---------------------------------------------------------------- ISAC

def test_standardizer_zero_variance():
    std = Standardizer.fit([[1.0, 5.0], [3.0, 5.0]])
    assert std.transform([[2.0, 7.0]]).tolist() == [[0.0, 0.0]]
    assert std.scale.tolist() == [1.0, 0.0]


def test_isac_k1_is_global_best():
    rng = np.random.default_rng(0)
    e = rng.random((6, 5))
    m = isac_fit(rng.normal(size=(6, 3)), make_tensor(e), k=1)
    assert m.cluster_best.tolist() == [int(np.argmin(e.mean(axis=0)))]


@pytest.mark.parametrize("seed", range(10))
def test_isac_planted_blobs(seed):
    X, P, blob, tests = planted_blobs(seed)
    model = isac_fit(X, P, k=2, seed=seed)
    oracle = brute_blob_best(P, blob)
    assert oracle[0] != oracle[1]
    assert sorted(model.cluster_best.tolist()) == sorted(oracle)
    for x, b in tests:
        assert isac_select(model, x).model_id == oracle[b]


def test_isac_deterministic_and_rescale_invariant():
    X, P, _, tests = planted_blobs(1)
    a, b = isac_fit(X, P, k=2, seed=4), isac_fit(X, P, k=2, seed=4)
    assert np.array_equal(a.centroids, b.centroids) and np.array_equal(a.assignments, b.assignments)
    scale = np.array([1e-3, 1, 10, 1e3, 5, 0.5])
    c = isac_fit(X * scale, P, k=2, seed=4)
    for x, _ in tests:
        assert isac_select(c, x * scale).model_id == isac_select(a, x).model_id


def test_isac_select_tie_and_centroid():
    m = IsacModel(np.array([[-1.0], [1.0]]), np.array([7, 3]), Standardizer(np.zeros(1), np.ones(1)),
                  np.array([0, 1]))
    assert isac_select(m, [0.0]).model_id == 7
    assert isac_select(m, [1.0]).model_id == 3
    rng = np.random.default_rng(2)
    C = rng.normal(size=(4, 3))
    m = IsacModel(C, np.arange(4) * 10, Standardizer(np.zeros(3), np.ones(3)), np.arange(4))
    for _ in range(50):
        x = rng.normal(size=3)
        brute = min(range(4), key=lambda c: (sum((x - C[c]) ** 2), c))
        assert isac_select(m, x).model_id == brute * 10


def test_isac_errors():
    P = make_tensor(np.ones((2, 3)))
    with pytest.raises(TooFewDatasets):
        isac_fit(np.zeros((2, 2)), P, k=3)
    with pytest.raises(ShapeMismatch):
        isac_fit(np.zeros((3, 2)), P, k=1)


def test_kmeans_reseeds_empty_clusters():
    X = np.array([[0.0], [0.0], [0.0], [10.0]])
    C, assign = kmeans(X, 2, np.random.default_rng(0))
    assert sorted(set(assign.tolist())) == [0, 1]


# ---------------------------------------------------------------- MLP

def test_zero_network_outputs_bias():
    m = init_mlp([4, 3, 2], seed=0)
    for W, b in zip(m.weights, m.biases):
        W[:] = 0.0
        b[:] = 0.0
    m.biases[-1][:] = [0.25, -1.5]
    out = m.forward(np.random.default_rng(0).normal(size=(5, 4)))
    assert out.tolist() == [[0.25, -1.5]] * 5


def test_gradient_check_small_net():
    assert max(fd_gradient_error([4, 3, 2], s) for s in range(10)) <= 1e-4


def test_mlp_fit_reduces_loss_and_selects():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 4))
    Y = np.abs(X @ rng.normal(size=(4, 6))) + 0.1
    Y[0, 2] = np.nan
    model = mlp_fit(X, make_tensor(Y), MlpHyper(hidden=(8,), step=1e-2, epochs=60, batch=4))
    h = model.loss_history
    assert len(h) == 60 and h[-1] < 0.5 * h[0]
    assert model.layer_sizes == [4, 8, 6]
    r = mlp_select(model, X[3])
    assert r.model_id == int(np.argmin(model.forward(model.standardizer.transform(X[3]))[0]))


def test_mlp_select_tie_lowest():
    m = init_mlp([2, 3], 0)
    m.weights[0][:] = 0.0
    m.biases[0][:] = [0.5, 0.1, 0.1]
    assert mlp_select(m, [1.0, 2.0]).model_id == 1


def test_save_load_round_trip(tmp_path, space):
    X, P, _, tests = planted_blobs(2, m=len(space))
    P = make_tensor(P.entries[0], dataset_ids=P.dataset_ids, checksum=space.checksum())
    isac = isac_fit(X, P, k=2)
    loaded = load_model(save_model(isac, tmp_path / "isac.json"), space)
    for x, _ in tests:
        assert isac_select(loaded, x).model_id == isac_select(isac, x).model_id
    mlp = mlp_fit(X, P, MlpHyper(hidden=(4,), epochs=2))
    loaded = load_model(save_model(mlp, tmp_path / "mlp.json"), space)
    assert np.array_equal(loaded.forward(X), mlp.forward(X))
    other = enumerate_space({"algorithm": [{"name": "VAR", "hyperparameters": {"trend": ["c"]}}]})
    with pytest.raises(SpaceMismatch):
        load_model(tmp_path / "mlp.json", other)


# ---------------------------------------------------------------- strategies / LLM

def test_make_strategy_validation():
    assert make_strategy("Isac", k=3).name == "isac"
    with pytest.raises(UsageError):
        make_strategy("Oracle")
    with pytest.raises(UsageError):
        make_strategy("Random", k=2)
    with pytest.raises(UsageError):
        make_strategy("Llm")
    with pytest.raises(ValueError):
        make_strategy("Llm", profile="p", variant="meta")


PROFILE = ProviderProfile("p", endpoint="https://llm.invalid")


@pytest.fixture
def llm_setup(tmp_path, space):
    d = make_dataset("ds", np.sin(np.arange(30) / 2.0))
    w = window_at(d, 4, 16)
    f = extract(w)
    store = FixtureStore(tmp_path)
    client = LlmClient({"p": PROFILE}, mode="replay", store=store)

    def record(variant, text, tokens=(100, 20)):
        prompt = build_prompt(w, f if variant.include_meta_features else None, space, variant)
        record_fixture(CompletionRequest(prompt.text, "p"), CompletionResult(text, *tokens, 0.75), store)

    return w, f, client, record


DEEPAR = ('{"result": {"forecasting algorithm": "DeepAR", "hyperparameters": [{"name": "num_cells", '
          '"value": 30}, {"name": "num_rnn_layers", "value": 2}], "data representation": "Raw"}}')


def test_llm_select_valid(llm_setup, space):
    w, f, client, record = llm_setup
    v = PromptVariant(True, True)
    record(v, DEEPAR)
    r = llm_select(w, f, v, space, client, "p")
    assert r.valid and r.model_id == space.lookup("DeepAR", {"num_cells": 30, "num_rnn_layers": 2}, "Raw")
    assert (r.attempts, r.input_tokens, r.output_tokens, r.latency_seconds) == (1, 100, 20, 0.75)


def test_llm_select_prose_retries(llm_setup, space):
    w, f, client, record = llm_setup
    v = PromptVariant()
    record(v, "Prophet looks best to me.")
    r = llm_select(w, None, v, space, client, "p", retries=2)
    assert not r.valid and r.reason == "ParseError"
    assert (r.attempts, r.input_tokens, r.output_tokens) == (3, 300, 60)
    assert r.latency_seconds == pytest.approx(2.25)


def test_llm_select_unknown_algorithm_not_retried(llm_setup, space):
    w, f, client, record = llm_setup
    v = PromptVariant(False, True)
    record(v, DEEPAR.replace("DeepAR", "ARIMA"))
    r = llm_select(w, None, v, space, client, "p")
    assert r.reason == "UnknownAlgorithm" and r.attempts == 1


def test_llm_select_transport_failure(llm_setup, space):
    w, f, client, _ = llm_setup
    r = llm_select(w, None, PromptVariant(), space, client, "p")
    assert r.reason == "Transport" and "FixtureMiss" in r.detail
