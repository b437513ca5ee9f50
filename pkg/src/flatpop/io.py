"""JSON schemas, loaders and writers for models, measures and test functions.

Schema violations are reported with JSON-pointer paths.  Floats go to CSV
with 17 significant digits and to JSON with Python's shortest round-trip
representation, so every double is stored losslessly.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema

from .bl_functions import PiecewiseLinearFn
from .measures import AtomicMeasure
from .model_config import ModelIngredients

_NUMBER = {"type": "number"}

PLF_SCHEMA: dict = {
    "type": "object",
    "required": ["breakpoints", "values"],
    "properties": {
        "breakpoints": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "values": {"type": "array", "items": _NUMBER, "minItems": 1},
        "extension": {
            "oneOf": [
                {"const": "constant"},
                {
                    "type": "object",
                    "required": ["linear"],
                    "properties": {"linear": _NUMBER},
                    "additionalProperties": False,
                },
            ]
        },
    },
    "additionalProperties": False,
}

MEASURE_SCHEMA: dict = {
    "type": "object",
    "required": ["atoms"],
    "properties": {
        "atoms": {
            "type": "array",
            "items": {
                "type": "array",
                "prefixItems": [{"type": "number", "minimum": 0}, _NUMBER],
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "t": _NUMBER,
    },
    "additionalProperties": False,
}

MODEL_SCHEMA: dict = {
    "type": "object",
    "required": ["b", "c"],
    "properties": {
        "b": {"$ref": "#/$defs/plf"},
        "c": {"$ref": "#/$defs/plf"},
        "eta": {
            "type": "object",
            "required": ["channels"],
            "properties": {
                "channels": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["location", "weight"],
                        "properties": {"location": {"$ref": "#/$defs/plf"}, "weight": {"$ref": "#/$defs/plf"}},
                        "additionalProperties": False,
                    },
                }
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
    "$defs": {"plf": PLF_SCHEMA},
}


class SchemaError(ValueError):
    """Input document does not match its schema."""

    def __init__(self, source: str, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__(f"{source}: " + "; ".join(self.problems))


def _pointer(path: Iterable[Any]) -> str:
    parts = [str(p).replace("~", "~0").replace("/", "~1") for p in path]
    return "/" + "/".join(parts) if parts else "/"


def check_schema(doc: Any, schema: dict, source: str = "<input>") -> None:
    """Raise :class:`SchemaError` listing every violation as ``pointer: message``."""
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise SchemaError(source, [f"{_pointer(e.absolute_path)}: {e.message}" for e in errors])


def _read_json(path: str | Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _semantic(source: str, build):
    try:
        return build()
    except (ValueError, KeyError) as exc:
        raise SchemaError(source, [f"/: {exc}"]) from exc


def load_model(path: str | Path) -> ModelIngredients:
    doc = _read_json(path)
    check_schema(doc, MODEL_SCHEMA, str(path))
    return _semantic(str(path), lambda: ModelIngredients.from_dict(doc))


def load_measure(path: str | Path) -> AtomicMeasure:
    doc = _read_json(path)
    check_schema(doc, MEASURE_SCHEMA, str(path))
    return _semantic(str(path), lambda: AtomicMeasure.from_dict(doc))


def load_function(path: str | Path) -> PiecewiseLinearFn:
    doc = _read_json(path)
    check_schema(doc, PLF_SCHEMA, str(path))
    return _semantic(str(path), lambda: PiecewiseLinearFn.from_dict(doc))


def dumps(doc: Any) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: str | Path, doc: Any) -> Path:
    path = Path(path)
    path.write_text(dumps(doc), encoding="utf-8")
    return path


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, float) else v for v in row])
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return header, rows


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
