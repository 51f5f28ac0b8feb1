"""Generate the desk-scale fixture pack.

The pack holds 12 synthetic series, a matrix built from them (non-native
columns filled by the synthetic recipe), recorded responses for all four
prompt variants, and the golden report those inputs produce. The recorded
responses come from :class:`ScriptedResponder`, a deterministic rule-based
stand-in for a hosted model, so the pack can be regenerated offline:

    python -m tsselect.deskpack fixtures/desk
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import re
import shutil
from pathlib import Path

import numpy as np

from . import harness
from .llm import CompletionResult, FixtureStore, LlmClient, approx_tokens, record_fixture
from .matrix import export_matrix

RECORDED_AT = "2026-01-01T00:00:00+00:00"

EXPERIMENT_TOML = """\
# Desk-scale experiment over the shipped fixture pack.
[corpus]
manifest = "manifest.csv"
window_length = 16
windows_per_dataset = 10
seed = 11

[matrix]
source = "import"
path = "matrix.csv"
alpha = 0.3
synthetic_non_native = true
seed = 5

[evaluation]
k = [1, 5, 10, 50]
seed = 3
folds = 0
timing = "off"
window_policy = "last"
policy = "strict"
variants = ["data", "data+cot", "data+meta", "data+meta+cot"]
out = "out"

[llm]
mode = "replay"
profiles = "providers.toml"
fixtures = "llm"

[[strategy]]
kind = "random"
name = "random"

[[strategy]]
kind = "popular"
name = "popular"

[[strategy]]
kind = "sota"
name = "sota"

[[strategy]]
kind = "isac"
name = "isac"
k = 3

[[strategy]]
kind = "mlp"
name = "mlp"
epochs = 200

[[strategy]]
kind = "llm"
name = "scripted"
profile = "scripted"
retries = 2
"""

PROVIDERS_TOML = """\
# The scripted profile only exists as recorded fixtures; replay never contacts it.
[profiles.scripted]
endpoint = "http://127.0.0.1:9/v1/chat/completions"
model = "scripted-responder"
credential_env = "TSSELECT_SCRIPTED_KEY"

[profiles.openai]
endpoint = "https://api.openai.com/v1/chat/completions"
model = "gpt-4o"
credential_env = "OPENAI_API_KEY"

[profiles.local]
endpoint = "http://127.0.0.1:11434/v1/chat/completions"
model = "llama3.2:3b-instruct"
"""


def synthetic_series(seed: int = 2024) -> dict:
    """Twelve series of differing character (seasonal, trending, noisy, regime-switching)."""
    rng = np.random.default_rng(seed)
    t = np.arange(240, dtype=float)
    out = {
        "ds01_randomwalk": np.cumsum(rng.normal(0, 1, 200)) + 50,
        "ds02_season7": 10 + 3 * np.sin(2 * np.pi * t[:210] / 7) + rng.normal(0, 0.4, 210),
        "ds03_season5": 5 + 2 * np.sin(2 * np.pi * t[:180] / 5) + rng.normal(0, 0.3, 180),
        "ds04_trend": 0.05 * t + rng.normal(0, 0.5, 240),
        "ds05_ar1": np.zeros(220),
        "ds06_noise": rng.normal(100, 5, 160),
        "ds07_season10_trend": 0.02 * t + np.sin(2 * np.pi * t / 10) + rng.normal(0, 0.2, 240),
        "ds08_spiky": rng.exponential(1.0, 190) * (rng.random(190) < 0.2),
        "ds09_steps": np.repeat(rng.normal(0, 3, 12), 17)[:200] + rng.normal(0, 0.2, 200),
        "ds10_logistic": 30 / (1 + np.exp(-(t[:200] - 100) / 20)) + rng.normal(0, 0.3, 200),
        "ds11_ar2": np.zeros(230),
        "ds12_sawtooth": (t[:180] % 12) + rng.normal(0, 0.5, 180),
    }
    x = out["ds05_ar1"]
    for i in range(1, len(x)):
        x[i] = 0.8 * x[i - 1] + rng.normal()
    x = out["ds11_ar2"]
    for i in range(2, len(x)):
        x[i] = 0.5 * x[i - 1] - 0.3 * x[i - 2] + rng.normal()
    return out


_VALUES = re.compile(r"Dataset Values[^\n]*\n\[([^\]]*)\]")
_FEATURE = re.compile(r"^- ([a-z0-9_]+): (\S+)$", re.M)


class ScriptedResponder:
    """Deterministic rule-based responder producing chat-model style output.

    It reads the series values (and meta-features when the prompt has them),
    picks an algorithm from simple statistics, fills hyperparameters from a
    hash of the prompt, and now and then answers with malformed, off-grid or
    out-of-space output so invalid-output accounting is exercised.
    """

    def respond(self, prompt: str) -> str:
        h = int(hashlib.sha256(prompt.encode("utf-8")).hexdigest(), 16)
        cot = "[CoT Reasoning]" in prompt
        m = _VALUES.search(prompt)
        x = np.array([float(v) for v in m.group(1).split(",")]) if m else np.zeros(16)
        feats = {k: float(v) for k, v in _FEATURE.findall(prompt)}
        mode = h % 23
        if mode == 0:
            return "Based on the data, Prophet looks like the most suitable choice for this series."
        if mode == 1:
            return self._wrap("The series resembles classical ARIMA data.", "ARIMA",
                              [("p", 1), ("d", 1), ("q", 0)], "Raw", cot, fenced=False)
        if mode == 2:
            return self._wrap("Moderate depth recurrent network.", "DeepAR",
                              [("num_cells", 35), ("num_rnn_layers", 2)], "Raw", cot, fenced=True)
        algorithm, hps, reason = self._choose(x, feats, h)
        rep = "Exp_smoothing" if (h >> 8) % 3 == 0 else "Raw"
        return self._wrap(reason, algorithm, hps, rep, cot, fenced=(h >> 12) % 2 == 0)

    def _choose(self, x, feats, h):
        d = np.diff(x)
        xc = x - x.mean()
        denom = float((xc ** 2).sum()) or 1.0
        acf1 = float((xc[:-1] * xc[1:]).sum() / denom)
        slope = feats.get("trend_slope", float(np.polyfit(np.arange(len(x)), x, 1)[0]))
        dom = feats.get("dominant_bin")
        pick = lambda grid, shift: grid[(h >> shift) % len(grid)]
        if dom is not None and dom >= 2 and feats.get("dominant_power_fraction", 0) > 0.4:
            period = len(x) / dom
            season = min([1, 5, 7, 10, 30], key=lambda s: abs(s - period))
            return "SeasonalNaive", [("season_length", season)], "A dominant periodic component."
        if abs(slope) > 0.03:
            return "VAR", [("cov_type", pick(["HC0", "HC1", "nonrobust"], 16)),
                           ("trend", pick(["ct", "t"], 20))], "The series trends steadily."
        if acf1 > 0.6:
            return "DeepAR", [("num_cells", pick([20, 30, 40], 24)),
                              ("num_rnn_layers", pick([1, 2, 3], 28))], "Strong persistence."
        if np.mean(np.abs(d)) > 0.25:
            return "RandomForest", [("n_estimators", pick([50, 100, 250], 32)),
                                    ("max_depth", pick([5, 10, "None"], 36))], "Irregular, nonlinear moves."
        return "Prophet", [("changepoint_prior_scale", pick([0.01, 0.1, 0.5], 40)),
                           ("seasonality_prior_scale", pick([1.0, 10.0], 44))], "Smooth level shifts."

    @staticmethod
    def _wrap(reason, algorithm, hps, rep, cot, fenced):
        if cot:
            reason = ("Step 1: the series was inspected for level, trend and seasonality. "
                      f"Step 2: {reason} Step 3: hyperparameters follow from the series length "
                      "and noise level. Step 4: the representation balances noise and lag.")
        obj = {"reasoning": reason,
               "result": {"forecasting algorithm": algorithm,
                          "hyperparameters": [{"name": n, "value": v} for n, v in hps],
                          "data representation": rep}}
        text = json.dumps(obj)
        return f"```json\n{text}\n```" if fenced else text


class ScriptedClient(LlmClient):
    """Record-mode client whose 'live' calls are answered by :class:`ScriptedResponder`."""

    def __init__(self, profiles, store):
        super().__init__(profiles, mode="record", store=store)
        self.responder = ScriptedResponder()

    def _live(self, req):
        text = self.responder.respond(req.prompt_text)
        tin, tout = approx_tokens(req.prompt_text), approx_tokens(text)
        latency = round(0.6 + 0.0004 * tin + 0.012 * tout, 6)
        return CompletionResult(text, tin, tout, latency, 1, "live", True)

    def complete(self, req):
        result = self._live(req)
        key = req.key
        if not self.store.path_for(key).exists():
            record_fixture(req, result, self.store, recorded_at=RECORDED_AT)
        self.calls.append(result)
        return result


def generate(out_dir, build_workers: int = 1) -> Path:
    out = Path(out_dir)
    if out.exists():
        shutil.rmtree(out)
    (out / "datasets").mkdir(parents=True)
    rows = ["id,path"]
    for ds_id, values in synthetic_series().items():
        p = out / "datasets" / f"{ds_id}.csv"
        p.write_text("timestamp,value\n" + "".join(
            f"{i},{v!r}\n" for i, v in enumerate(float(v) for v in values)), encoding="utf-8")
        rows.append(f"{ds_id},datasets/{ds_id}.csv")
    (out / "manifest.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    (out / "experiment.toml").write_text(EXPERIMENT_TOML, encoding="utf-8")
    (out / "providers.toml").write_text(PROVIDERS_TOML, encoding="utf-8")

    cfg = harness.load_config(out / "experiment.toml")
    from .space import load_space

    space = load_space(cfg.space_path)
    cfg.workers = build_workers
    P = harness.build_matrix(cfg, space)
    cfg.workers = 1
    export_matrix(P, out / "matrix.csv")

    ws = harness.prepare(cfg)
    client = ScriptedClient(harness.load_profiles(cfg.profiles_path), FixtureStore(cfg.fixtures_dir))
    harness.run_selections(cfg, ws, client)

    report = harness.run_experiment(cfg, workspace=ws)
    harness.emit_report(report, out / "golden")
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m tsselect.deskpack", description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="fixtures/desk")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    print(generate(args.out, args.workers))


if __name__ == "__main__":
    main()
