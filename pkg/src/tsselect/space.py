"""The candidate model space: (algorithm, hyperparameters, representation) tuples."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import DuplicateValue, EmptyGrid, UsageError

ALGORITHMS = (
    "DeepAR",
    "DeepFactor",
    "Prophet",
    "SeasonalNaive",
    "GaussianProcess",
    "VAR",
    "RandomForest",
)
REPRESENTATIONS = ("ExpSmoothing", "Raw")


def canonical_value(value):
    """Comparison key for a hyperparameter value.

    Numbers (and numeric strings such as ``"10"``) become exact decimals, so
    ``10``, ``10.0`` and ``"10"`` compare equal. Other strings are kept as-is
    and compared case-sensitively. JSON ``null`` maps to the string ``"None"``.
    """
    if value is None:
        return "None"
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return Decimal(value)
    if isinstance(value, float):
        return Decimal(repr(value)) if value == value and abs(value) != float("inf") else repr(value)
    if isinstance(value, Decimal):
        return value if value.is_finite() else str(value)
    text = str(value).strip()
    try:
        dec = Decimal(text)
    except InvalidOperation:
        return text
    return dec if dec.is_finite() else text


def is_numeric(value) -> bool:
    return isinstance(canonical_value(value), Decimal)


def format_value(value) -> str:
    if isinstance(value, str):
        return value
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class ModelSpec:
    algorithm: str
    hyperparameters: tuple  # ((name, value), ...) in schema order
    representation: str

    @property
    def params(self) -> dict:
        return dict(self.hyperparameters)

    def key(self):
        return (
            self.algorithm,
            tuple((n, canonical_value(v)) for n, v in self.hyperparameters),
            self.representation,
        )

    def label(self) -> str:
        hp = ",".join(f"{n}={format_value(v)}" for n, v in self.hyperparameters)
        return f"{self.algorithm}({hp})[{self.representation}]"

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "hyperparameters": [{"name": n, "value": v} for n, v in self.hyperparameters],
            "representation": self.representation,
        }


class ModelSpace:
    """Immutable ordered list of specs with a bijective spec -> id index."""

    def __init__(self, blocks):
        # blocks: [(algorithm, {name: (values...)}, (representations...))]
        self.blocks = tuple((a, dict(g), tuple(r)) for a, g, r in blocks)
        specs = []
        for algorithm, grids, reps in self.blocks:
            names = tuple(grids)
            for combo in itertools.product(*(grids[n] for n in names), reps):
                specs.append(ModelSpec(algorithm, tuple(zip(names, combo[:-1])), combo[-1]))
        self.specs = tuple(specs)
        self._index = {}
        for i, spec in enumerate(self.specs):
            k = spec.key()
            if k in self._index:
                raise DuplicateValue(f"duplicate spec {spec.label()}")
            self._index[k] = i
        self.schemas = {a: tuple(g) for a, g, _ in self.blocks}
        self.grids = {a: g for a, g, _ in self.blocks}
        self.representations = {a: r for a, _, r in self.blocks}

    def __len__(self):
        return len(self.specs)

    def __getitem__(self, i) -> ModelSpec:
        return self.specs[i]

    def __iter__(self):
        return iter(self.specs)

    @property
    def algorithms(self) -> tuple:
        return tuple(a for a, _, _ in self.blocks)

    def ids_for(self, algorithm: str) -> list[int]:
        return [i for i, s in enumerate(self.specs) if s.algorithm == algorithm]

    def counts(self) -> dict:
        out = {}
        for s in self.specs:
            out[s.algorithm] = out.get(s.algorithm, 0) + 1
        return out

    def index(self, spec: ModelSpec) -> int | None:
        return self._index.get(spec.key())

    def lookup(self, algorithm: str, hyperparameters, representation: str) -> int | None:
        """Exact-tuple lookup. ``hyperparameters`` is a mapping or (name, value) pairs.

        Returns ``None`` when the tuple is not in the space.
        """
        if algorithm not in self.schemas:
            return None
        pairs = dict(hyperparameters.items() if hasattr(hyperparameters, "items") else hyperparameters)
        names = self.schemas[algorithm]
        if set(pairs) != set(names):
            return None
        key = (algorithm, tuple((n, canonical_value(pairs[n])) for n in names), representation)
        return self._index.get(key)

    def checksum(self) -> str:
        payload = json.dumps(
            [[s.algorithm, [[n, str(canonical_value(v))] for n, v in s.hyperparameters],
              s.representation] for s in self.specs],
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def enumerate_space(config: dict | None) -> ModelSpace:
    """Expand a model-space configuration into a :class:`ModelSpace`.

    ``config`` has the shape of the ``canonical.conf`` file: a list under
    ``"algorithm"`` whose entries carry ``name``, ``representations`` and a
    ``hyperparameters`` table of value grids.
    """
    blocks = []
    for entry in (config or {}).get("algorithm", []):
        name = entry.get("name")
        if name not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
        reps = tuple(entry.get("representations", REPRESENTATIONS))
        if not reps:
            raise EmptyGrid(f"{name}: no representations")
        for r in reps:
            if r not in REPRESENTATIONS:
                raise UsageError(f"{name}: unknown representation {r!r}")
        if len(set(reps)) != len(reps):
            raise DuplicateValue(f"{name}: duplicate representation")
        grids = {}
        for hp, values in entry.get("hyperparameters", {}).items():
            if not isinstance(values, list) or not values:
                raise EmptyGrid(f"{name}.{hp}: empty grid")
            keys = [canonical_value(v) for v in values]
            if len(set(keys)) != len(keys):
                raise DuplicateValue(f"{name}.{hp}: duplicate grid value")
            grids[hp] = tuple(values)
        blocks.append((name, grids, reps))
    if len({b[0] for b in blocks}) != len(blocks):
        raise DuplicateValue("algorithm listed twice")
    return ModelSpace(blocks)


def load_space_config(path=None) -> dict:
    if path is None:
        text = resources.files("tsselect").joinpath("modelspace/canonical.conf").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return tomllib.loads(text)


def canonical_space() -> ModelSpace:
    return enumerate_space(load_space_config())


def load_space(path=None) -> ModelSpace:
    return enumerate_space(load_space_config(path))
