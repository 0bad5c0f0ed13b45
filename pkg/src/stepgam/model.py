"""Portable step-function models: extraction, prediction, JSON documents and SQL."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import BinMap, Dataset
from .optimizer import BlockState

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """A model document is malformed or has an unsupported version."""


class SchemaError(ValueError):
    """Input rows do not provide the features a model needs."""


@dataclass(frozen=True)
class ShapeFunction:
    """Step function: ``levels[i]`` applies on ``[thresholds[i-1], thresholds[i])``.

    Values below the first threshold take ``levels[0]``; values at or above
    the last threshold take ``levels[-1]``.
    """

    feature: str
    thresholds: tuple
    levels: tuple

    def __post_init__(self):
        thresholds = tuple(float(t) for t in self.thresholds)
        levels = tuple(float(v) for v in self.levels)
        if len(levels) < 1 or len(thresholds) != len(levels) - 1:
            raise ModelFormatError(f"{self.feature}: need len(levels) == len(thresholds) + 1 >= 1")
        if not all(map(math.isfinite, thresholds + levels)):
            raise ModelFormatError(f"{self.feature}: thresholds and levels must be finite")
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ModelFormatError(f"{self.feature}: thresholds must be strictly increasing")
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "levels", levels)

    def __call__(self, x):
        idx = np.searchsorted(np.asarray(self.thresholds), x, side="right")
        return np.asarray(self.levels)[idx]


@dataclass(frozen=True)
class PCAModel:
    intercept: float
    shapes: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.intercept):
            raise ModelFormatError("intercept must be finite")
        names = [s.feature for s in self.shapes]
        if len(set(names)) != len(names):
            raise ModelFormatError("shape feature names must be unique")
        object.__setattr__(self, "shapes", tuple(self.shapes))

    @property
    def features(self) -> list:
        return [s.feature for s in self.shapes]


def _midpoint(a: float, b: float) -> float:
    t = a + (b - a) / 2.0
    # guarantee a < t <= b so both neighbouring training values land correctly
    return t if a < t <= b else b


def extract_model(state: BlockState, bin_map: BinMap, dataset: Dataset, **metadata) -> PCAModel:
    """Turn a fitted state into a model of centered, maximally merged step functions.

    Each block is shifted by its count-weighted mean, which moves into the
    intercept; blocks that collapse to a single level vanish entirely.
    """
    intercept = state.target_mean
    shapes = []
    for j, beta in enumerate(state.beta):
        fb = bin_map[j]
        starts = np.flatnonzero(np.r_[True, beta[1:] != beta[:-1]])
        if starts.size == 1:
            intercept += float(beta[0])
            continue
        shift = float(np.dot(fb.counts, beta) / fb.counts.sum())
        intercept += shift
        levels = beta[starts] - shift
        thresholds = [_midpoint(fb.upper[s - 1], fb.lower[s]) for s in starts[1:]]
        shapes.append(ShapeFunction(dataset.feature_names[j], thresholds, levels))
    meta = {
        "lambda_f": state.lambda_f,
        "max_bins": bin_map.max_bins,
        "n_train": dataset.n,
        "p_train": dataset.p,
        "target": dataset.target_name,
    }
    meta.update(metadata)
    return PCAModel(float(intercept), tuple(shapes), meta)


def predict(model: PCAModel, row: dict) -> float:
    """Prediction for one row given as ``{feature: value}``."""
    total = model.intercept
    for shape in model.shapes:
        if shape.feature not in row:
            raise SchemaError(f"row is missing feature {shape.feature!r}")
        value = float(row[shape.feature])
        if not math.isfinite(value):
            raise SchemaError(f"non-finite value for feature {shape.feature!r}")
        total += float(shape(value))
    return total


def predict_batch(model: PCAModel, data) -> np.ndarray:
    """Vectorized prediction for a :class:`Dataset` or a mapping of column arrays."""
    if isinstance(data, Dataset):
        columns = dict(zip(data.feature_names, data.columns))
        n = data.n
    else:
        columns = {k: np.asarray(v, dtype=np.float64) for k, v in data.items()}
        n = len(next(iter(columns.values()))) if columns else 0
    missing = [f for f in model.features if f not in columns]
    if missing:
        raise SchemaError(f"data is missing model feature(s) {missing}")
    out = np.full(n, model.intercept)
    for shape in model.shapes:
        x = columns[shape.feature]
        if not np.all(np.isfinite(x)):
            raise SchemaError(f"non-finite value for feature {shape.feature!r}")
        out += shape(x)
    return out


def to_document(model: PCAModel) -> dict:
    doc = {"format_version": FORMAT_VERSION, "intercept": model.intercept}
    doc.update({k: v for k, v in model.metadata.items() if k not in doc})
    doc["shapes"] = [
        {"feature": s.feature, "thresholds": list(s.thresholds), "levels": list(s.levels)}
        for s in model.shapes
    ]
    return doc


def from_document(doc) -> PCAModel:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    for key in ("intercept", "shapes"):
        if key not in doc:
            raise ModelFormatError(f"model document is missing {key!r}")
    if not isinstance(doc["intercept"], (int, float)) or isinstance(doc["intercept"], bool):
        raise ModelFormatError("intercept must be a number")
    if not isinstance(doc["shapes"], list):
        raise ModelFormatError("shapes must be a list")
    shapes = []
    for entry in doc["shapes"]:
        try:
            shapes.append(ShapeFunction(str(entry["feature"]), entry["thresholds"], entry["levels"]))
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed shape entry {entry!r}") from exc
    metadata = {k: v for k, v in doc.items() if k not in ("format_version", "intercept", "shapes")}
    return PCAModel(float(doc["intercept"]), tuple(shapes), metadata)


def serialize(model: PCAModel) -> str:
    return json.dumps(to_document(model), indent=2)


def deserialize(text: str) -> PCAModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model document is not valid JSON: {exc}") from exc
    return from_document(doc)


def save(model: PCAModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(model) + "\n")


def load(path) -> PCAModel:
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh.read())


def _quote(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def _num(x: float) -> str:
    return repr(float(x))


def export_sql(model: PCAModel, input_table: str, input_columns: dict | None = None) -> str:
    """Single ``SELECT`` computing the prediction with one ``CASE`` chain per shape.

    ``input_columns`` maps feature names to column names (identity by default).
    """
    input_columns = dict(input_columns or {})
    terms = [_num(model.intercept)]
    for shape in model.shapes:
        column = input_columns.get(shape.feature, shape.feature if not input_columns else None)
        if column is None:
            raise SchemaError(f"no column mapped for feature {shape.feature!r}")
        col = _quote(column)
        whens = " ".join(f"WHEN {col} < {_num(t)} THEN {_num(v)}"
                         for t, v in zip(shape.thresholds, shape.levels))
        terms.append(f"(CASE {whens} ELSE {_num(shape.levels[-1])} END)")
    if len(terms) == 1:
        return f"SELECT {terms[0]} AS prediction FROM {_quote(input_table)}"
    body = "\n  + ".join(terms)
    return f"SELECT\n  {body}\n  AS prediction\nFROM {_quote(input_table)}"
