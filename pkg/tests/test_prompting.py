import json
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA
from tsselect.data import make_dataset, window_at
from tsselect.errors import MetaFeaturesRequired, TemplateMissing
from tsselect.features import extract
from tsselect.prompting import (
    REQUIRED_SECTIONS, TEMPLATE_FILES, VARIANTS, InvalidReason, PromptVariant, TemplateSet,
    build_prompt, parse_response, snap_value,
)
from tsselect.space import format_value

HEADER = re.compile(r"^\[[A-Za-z ]+\]$", re.M)


@pytest.fixture(scope="module")
def window():
    d = make_dataset("x", np.sin(np.arange(40) / 3.0) + np.arange(40) / 20)
    return window_at(d, 10, 16)


def _prompt(window, space, variant):
    f = extract(window) if variant.include_meta_features else None
    return build_prompt(window, f, space, variant)


@pytest.mark.parametrize("variant", VARIANTS, ids=lambda v: v.name)
def test_section_set(window, space, variant):
    p = _prompt(window, space, variant)
    expected = list(REQUIRED_SECTIONS)
    if variant.include_cot:
        expected.insert(2, "[CoT Reasoning]")
    assert HEADER.findall(p.text) == expected
    assert list(p.sections) == expected
    assert ("Meta Features:" in p.text) == variant.include_meta_features


def test_prompt_deterministic(window, space):
    v = PromptVariant(True, True)
    assert _prompt(window, space, v).text == _prompt(window, space, v).text


def test_meta_prompt_is_larger(window, space):
    for cot in (False, True):
        plain = _prompt(window, space, PromptVariant(False, cot))
        meta = _prompt(window, space, PromptVariant(True, cot))
        assert meta.approx_input_tokens > plain.approx_input_tokens


def test_model_space_block_lists_every_grid_value(window, space):
    text = _prompt(window, space, PromptVariant()).text
    block = text.split("[Model Space]")[1].split("[Input]")[0]
    for algorithm, grids, reps in space.blocks:
        assert f"- {algorithm}" in block
        for name, values in grids.items():
            line = next(l for l in block.splitlines() if l.strip().startswith(f"{name} ="))
            for v in values:
                assert (f'"{v}"' if isinstance(v, str) else format_value(v)) in line


def test_values_rendered_six_significant_digits(space):
    d = make_dataset("x", [0.0, 1.0 / 3.0, 1.0, 0.123456789, 0.5])
    p = build_prompt(window_at(d, 0, 5), None, space, PromptVariant())
    assert "[0, 0.333333, 1, 0.123457, 0.5]" in p.text
    assert p.approx_input_tokens == -(-len(p.text) // 4)


def test_meta_consistency_checks(window, space):
    with pytest.raises(MetaFeaturesRequired):
        build_prompt(window, None, space, PromptVariant(True, False))
    with pytest.raises(MetaFeaturesRequired):
        build_prompt(window, extract(window), space, PromptVariant(False, False))


def test_variant_names():
    assert [v.name for v in VARIANTS] == ["data", "data+cot", "data+meta", "data+meta+cot"]
    for v in VARIANTS:
        assert PromptVariant.parse(v.name) == v
    with pytest.raises(ValueError):
        PromptVariant.parse("meta")


def test_custom_template_dir(tmp_path, window, space):
    for f in TEMPLATE_FILES:
        (tmp_path / f).write_text(f"{f} body $values\n" if f == "input.txt" else f"{f} body\n")
    p = build_prompt(window, None, space, PromptVariant(), TemplateSet.load(tmp_path))
    assert "role.txt body" in p.text
    (tmp_path / "rules.txt").unlink()
    with pytest.raises(TemplateMissing):
        TemplateSet.load(tmp_path)


# ---------------------------------------------------------------- parsing

def _resp(algorithm, hps, rep="Raw"):
    return json.dumps({"reasoning": "r", "result": {
        "forecasting algorithm": algorithm,
        "hyperparameters": [{"name": n, "value": v} for n, v in hps],
        "data representation": rep}})


def test_valid_deepar(space):
    r = parse_response(_resp("DeepAR", [("num_cells", 10), ("num_rnn_layers", 1)]), space)
    scan = [k for k, s in enumerate(space) if s.algorithm == "DeepAR" and s.params == {
        "num_cells": 10, "num_rnn_layers": 1} and s.representation == "Raw"]
    assert r.valid and [r.model_id] == scan and r.reasoning_text == "r"


def test_prose_only(space):
    r = parse_response("I think Prophet is best.", space)
    assert r.reason is InvalidReason.PARSE_ERROR and r.model_id is None


def test_off_grid_strict_and_snap(space):
    raw = _resp("DeepAR", [("num_cells", 15), ("num_rnn_layers", 1)])
    assert parse_response(raw, space, "strict").reason is InvalidReason.OUT_OF_SPACE
    snapped = parse_response(raw, space, "snap")
    assert snapped.valid and snapped.snapped
    assert snapped.spec.params == {"num_cells": 10, "num_rnn_layers": 1}


def test_snap_value_rules():
    assert snap_value(15, [10, 20, 30]) == 10
    assert snap_value(16, [10, 20, 30]) == 20
    assert snap_value("0.04", [0.001, 0.01, 0.1]) == 0.01
    assert snap_value(60, [2, 5, 50, "None"]) == 50
    assert snap_value("deep", [2, 5]) is None
    assert snap_value(3, ["a", "b"]) is None


def test_reason_mapping(space):
    assert parse_response(_resp("ARIMA", []), space).reason is InvalidReason.UNKNOWN_ALGORITHM
    raw = _resp("SeasonalNaive", [("season_length", 7)], "Log")
    assert parse_response(raw, space).reason is InvalidReason.UNKNOWN_REPRESENTATION
    raw = _resp("SeasonalNaive", [("season_length", 7), ("alpha", 1)])
    assert parse_response(raw, space).reason is InvalidReason.OUT_OF_SPACE
    raw = _resp("DeepAR", [("num_cells", 10)])
    assert parse_response(raw, space).reason is InvalidReason.MISSING_FIELD
    assert parse_response('{"reasoning": "only"}', space).reason is InvalidReason.MISSING_FIELD


def test_fenced_and_aliases(space):
    raw = "```json\n" + _resp("random forest", [("n_estimators", "100"), ("max_depth", None)],
                             "Exponential Smoothing") + "\n```"
    r = parse_response(raw, space)
    assert r.valid
    assert r.spec.label() == "RandomForest(n_estimators=100,max_depth=None)[ExpSmoothing]"


def test_first_response_object_wins(space):
    a = _resp("SeasonalNaive", [("season_length", 7)])
    b = _resp("SeasonalNaive", [("season_length", 5)])
    assert parse_response(f"{a}\n{b}", space).spec.params == {"season_length": 7}


def test_bad_policy(space):
    with pytest.raises(ValueError):
        parse_response("{}", space, "loose")


CORPUS = json.loads((DATA / "parser_corpus.json").read_text())


@pytest.mark.parametrize("case", CORPUS, ids=lambda c: f"{c['id']}-{c['category']}")
def test_corpus(case, space):
    for policy in ("strict", "snap"):
        r = parse_response(case["raw"], space, policy)
        exp = case[policy]
        assert r.valid == exp["valid"]
        if exp["valid"]:
            assert r.spec.label() == exp["model"]
        else:
            assert r.reason.value == exp["reason"]


def test_snap_converts_exactly_off_grid_numeric(space):
    converted = {c["id"] for c in CORPUS if not c["strict"]["valid"] and c["snap"]["valid"]}
    assert converted == {c["id"] for c in CORPUS if c["category"] == "off_grid_numeric"}


@settings(max_examples=300)
@given(st.text())
def test_fuzz_never_raises(text):
    for policy in ("strict", "snap"):
        r = parse_response(text, space_cache(), policy)
        assert r.valid == (r.model_id is not None)


@settings(max_examples=200)
@given(st.integers(0, 321), st.sampled_from(["strict", "snap"]))
def test_every_spec_round_trips(k, policy):
    s = space_cache()
    spec = s[k]
    r = parse_response(_resp(spec.algorithm, spec.hyperparameters, spec.representation), s, policy)
    assert r.model_id == k and not r.snapped


@settings(max_examples=200)
@given(st.integers(0, 321), st.floats(-2, 2000, allow_nan=False))
def test_snap_is_idempotent(k, value):
    s = space_cache()
    spec = s[k]
    name, _ = spec.hyperparameters[0]
    hps = [(name, value)] + list(spec.hyperparameters[1:])
    first = parse_response(_resp(spec.algorithm, hps, spec.representation), s, "snap")
    if not first.valid:
        return
    again = parse_response(_resp(first.spec.algorithm, first.spec.hyperparameters,
                                 first.spec.representation), s, "snap")
    assert again.model_id == first.model_id and not again.snapped


_SPACE = []


def space_cache():
    if not _SPACE:
        from tsselect.space import canonical_space

        _SPACE.append(canonical_space())
    return _SPACE[0]
