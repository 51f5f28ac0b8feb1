"""Prompt rendering and response parsing.

A prompt is assembled from one template file per section. Templates are
plain text with ``$name`` placeholders (:class:`string.Template`); the
default set lives in ``tsselect/templates`` and any directory holding the
same file names can replace it.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from pathlib import Path
from string import Template

from importlib import resources

from .data import Window
from .errors import MetaFeaturesRequired, TemplateMissing
from .features import DEFAULT_CATALOG, MetaFeatureCatalog, MetaFeatureVector
from .space import ModelSpace, ModelSpec, canonical_value, format_value

SECTION_FILES = (
    ("[Role and Objective]", "role.txt"),
    ("[Model Space]", "model_space.txt"),
    ("[CoT Reasoning]", "cot.txt"),
    ("[Input]", "input.txt"),
    ("[Output Format]", "output_format.txt"),
    ("[Rules]", "rules.txt"),
)
REQUIRED_SECTIONS = tuple(s for s, _ in SECTION_FILES if s != "[CoT Reasoning]")
TEMPLATE_FILES = tuple(f for _, f in SECTION_FILES) + ("meta.txt",)


@dataclass(frozen=True)
class PromptVariant:
    include_meta_features: bool = False
    include_cot: bool = False

    @property
    def name(self) -> str:
        return "data" + ("+meta" if self.include_meta_features else "") + (
            "+cot" if self.include_cot else "")

    @classmethod
    def parse(cls, name: str) -> PromptVariant:
        parts = name.strip().lower().split("+")
        if not parts or parts[0] != "data" or not set(parts[1:]) <= {"meta", "cot"} or len(
                set(parts[1:])) != len(parts[1:]):
            raise ValueError(f"unknown prompt variant {name!r}; use data, data+cot, data+meta or data+meta+cot")
        return cls("meta" in parts, "cot" in parts)


VARIANTS = tuple(PromptVariant(m, c) for m in (False, True) for c in (False, True))


@dataclass(frozen=True)
class Prompt:
    text: str
    variant: PromptVariant
    sections: tuple
    approx_input_tokens: int


def approx_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


class TemplateSet:
    def __init__(self, texts: dict):
        missing = [f for f in TEMPLATE_FILES if f not in texts]
        if missing:
            raise TemplateMissing(f"template set lacks {', '.join(missing)}")
        self.texts = {k: Template(v.rstrip("\n")) for k, v in texts.items()}

    @classmethod
    def load(cls, directory=None) -> TemplateSet:
        if directory is None:
            root = resources.files("tsselect").joinpath("templates")
            return cls({f: root.joinpath(f).read_text("utf-8")
                        for f in TEMPLATE_FILES if root.joinpath(f).is_file()})
        directory = Path(directory)
        return cls({f: (directory / f).read_text("utf-8")
                    for f in TEMPLATE_FILES if (directory / f).is_file()})

    def render(self, name: str, **values) -> str:
        try:
            return self.texts[name].substitute(**values)
        except KeyError as exc:
            raise TemplateMissing(f"{name}: unknown placeholder {exc}") from None


def _render_grid(values) -> str:
    return "[" + ", ".join(f'"{v}"' if isinstance(v, str) else format_value(v) for v in values) + "]"


def render_model_space(space: ModelSpace) -> str:
    lines = []
    for algorithm, grids, reps in space.blocks:
        lines.append(f"- {algorithm}")
        for name, values in grids.items():
            lines.append(f"    {name} = {_render_grid(values)}")
        lines.append(f"    data representation = {_render_grid(reps)}")
    return "\n".join(lines)


def fmt6(v) -> str:
    return format(float(v), ".6g")


def build_prompt(w: Window, f: MetaFeatureVector | None, space: ModelSpace, variant: PromptVariant,
                 templates: TemplateSet | None = None,
                 catalog: MetaFeatureCatalog = DEFAULT_CATALOG) -> Prompt:
    if variant.include_meta_features and f is None:
        raise MetaFeaturesRequired("this prompt variant needs a meta-feature vector")
    if not variant.include_meta_features and f is not None:
        raise MetaFeaturesRequired("meta-features given for a data-only prompt variant")
    templates = templates or default_templates()
    meta_block = ""
    if f is not None:
        if f.catalog_id != catalog.catalog_id:
            raise MetaFeaturesRequired("meta-feature vector does not match the catalog")
        listing = "\n".join(f"- {n}: {fmt6(v)}" for n, v in zip(catalog.names, f.values))
        meta_block = "\n" + templates.render("meta.txt", meta_features=listing)
    fill = {
        "model_space": render_model_space(space),
        "values": "[" + ", ".join(fmt6(v) for v in w.values) + "]",
        "window_length": str(len(w.values)),
        "meta_block": meta_block,
    }
    parts = []
    sections = []
    for header, fname in SECTION_FILES:
        if header == "[CoT Reasoning]" and not variant.include_cot:
            continue
        parts.append(f"{header}\n{templates.render(fname, **fill)}")
        sections.append(header)
    text = "\n\n".join(parts) + "\n"
    return Prompt(text, variant, tuple(sections), approx_tokens(text))


_DEFAULT_TEMPLATES = None


def default_templates() -> TemplateSet:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = TemplateSet.load()
    return _DEFAULT_TEMPLATES


class InvalidReason(str, Enum):
    PARSE_ERROR = "ParseError"
    MISSING_FIELD = "MissingField"
    UNKNOWN_ALGORITHM = "UnknownAlgorithm"
    OUT_OF_SPACE = "OutOfSpace"
    UNKNOWN_REPRESENTATION = "UnknownRepresentation"
    TRANSPORT = "Transport"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ParsedSelection:
    model_id: int | None
    spec: ModelSpec | None
    reason: InvalidReason | None = None
    reasoning_text: str = ""
    snapped: bool = False
    detail: str = ""

    @property
    def valid(self) -> bool:
        return self.model_id is not None


def _norm_name(text) -> str:
    return re.sub(r"[^a-z0-9]", "", str(text).lower())


_ALGORITHM_ALIASES = {
    "deepar": "DeepAR",
    "deepfactor": "DeepFactor",
    "deepfactors": "DeepFactor",
    "prophet": "Prophet",
    "seasonalnaive": "SeasonalNaive",
    "snaive": "SeasonalNaive",
    "gaussianprocess": "GaussianProcess",
    "gp": "GaussianProcess",
    "var": "VAR",
    "vectorautoregression": "VAR",
    "randomforest": "RandomForest",
    "randomforestregressor": "RandomForest",
}
_REPRESENTATION_ALIASES = {
    "raw": "Raw",
    "expsmoothing": "ExpSmoothing",
    "exponentialsmoothing": "ExpSmoothing",
}


_RESPONSE_KEYS = ("result", "reasoning", "forecasting algorithm")


def _first_object(raw: str):
    # first decodable object that looks like a response; nested hyperparameter
    # items of a truncated response do not count
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", raw):
        try:
            obj, _ = decoder.raw_decode(raw, m.start())
        except ValueError:
            continue
        if isinstance(obj, dict) and any(k in obj for k in _RESPONSE_KEYS):
            return obj
    return None


def _invalid(reason, reasoning="", detail=""):
    return ParsedSelection(None, None, reason, reasoning, False, detail)


def snap_value(value, grid):
    """Nearest numeric grid value to a numeric ``value``; ties go to the smaller value.

    Returns ``None`` when ``value`` is not numeric or the grid has no numeric entries.
    """
    target = canonical_value(value)
    if not isinstance(target, Decimal):
        return None
    best = None
    for g in grid:
        key = canonical_value(g)
        if not isinstance(key, Decimal):
            continue
        dist = abs(key - target)
        if best is None or dist < best[0] or (dist == best[0] and key < best[1]):
            best = (dist, key, g)
    return None if best is None else best[2]


def parse_response(raw: str, space: ModelSpace, policy: str = "strict") -> ParsedSelection:
    """Map raw model output onto a member of ``space``.

    The first JSON object in ``raw`` is used; surrounding prose and code fences
    are ignored. Under ``strict`` an off-grid value is ``OutOfSpace``; under
    ``snap`` off-grid numbers move to the nearest grid value first.
    """
    if policy not in ("strict", "snap"):
        raise ValueError(f"policy must be 'strict' or 'snap', got {policy!r}")
    obj = _first_object(raw if isinstance(raw, str) else "")
    if obj is None:
        return _invalid(InvalidReason.PARSE_ERROR, detail="no JSON object found")
    reasoning = obj.get("reasoning")
    reasoning = reasoning if isinstance(reasoning, str) else ""
    result = obj.get("result")
    if not isinstance(result, dict):
        return _invalid(InvalidReason.MISSING_FIELD, reasoning, "result")
    for key in ("forecasting algorithm", "hyperparameters", "data representation"):
        if key not in result:
            return _invalid(InvalidReason.MISSING_FIELD, reasoning, key)

    algorithm = _ALGORITHM_ALIASES.get(_norm_name(result["forecasting algorithm"]))
    if algorithm is None or algorithm not in space.schemas:
        return _invalid(InvalidReason.UNKNOWN_ALGORITHM, reasoning, str(result["forecasting algorithm"]))
    rep = _REPRESENTATION_ALIASES.get(_norm_name(result["data representation"]))
    if rep is None:
        return _invalid(InvalidReason.UNKNOWN_REPRESENTATION, reasoning, str(result["data representation"]))
    if rep not in space.representations[algorithm]:
        return _invalid(InvalidReason.OUT_OF_SPACE, reasoning, f"{algorithm} does not allow {rep}")

    hps = result["hyperparameters"]
    if isinstance(hps, dict):
        hps = [{"name": k, "value": v} for k, v in hps.items()]
    if not isinstance(hps, list):
        return _invalid(InvalidReason.MISSING_FIELD, reasoning, "hyperparameters")
    given = {}
    for item in hps:
        if not isinstance(item, dict) or "name" not in item or "value" not in item:
            return _invalid(InvalidReason.MISSING_FIELD, reasoning, "hyperparameter name/value")
        name = str(item["name"]).strip()
        if name in given:
            return _invalid(InvalidReason.OUT_OF_SPACE, reasoning, f"{name} given twice")
        given[name] = item["value"]
    schema = space.schemas[algorithm]
    extra = set(given) - set(schema)
    if extra:
        return _invalid(InvalidReason.OUT_OF_SPACE, reasoning, f"unknown hyperparameters {sorted(extra)}")
    missing = [n for n in schema if n not in given]
    if missing:
        return _invalid(InvalidReason.MISSING_FIELD, reasoning, f"missing hyperparameters {missing}")

    chosen = {}
    snapped = False
    grids = space.grids[algorithm]
    for name in schema:
        value = given[name]
        on_grid = {canonical_value(g): g for g in grids[name]}
        key = canonical_value(value)
        if key in on_grid:
            chosen[name] = on_grid[key]
            continue
        if policy == "snap":
            target = snap_value(value, grids[name])
            if target is not None:
                chosen[name] = target
                snapped = True
                continue
        return _invalid(InvalidReason.OUT_OF_SPACE, reasoning, f"{name}={value!r} not on grid")
    model_id = space.lookup(algorithm, chosen, rep)
    if model_id is None:
        return _invalid(InvalidReason.OUT_OF_SPACE, reasoning, "combination not in space")
    return ParsedSelection(model_id, space[model_id], None, reasoning, snapped)
