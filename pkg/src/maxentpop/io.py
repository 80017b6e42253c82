"""Text file formats: constraint sets, lambda vectors, pools, weighted samples, traces.

Constraint-set document (JSON)::

    {
      "format": "maxentpop-constraints",
      "version": 1,
      "attributes": [{"name": "sex", "domain_size": 2, "categories": ["F", "M"]}, ...],
      "tables": {"B1": 1.0, ...},            # optional: group -> expected target mass
      "constraints": [
        {"pattern": [["age", "0-24"], ["marital", "NeverMarried"]],
         "target": "2.1120000000000005e-01", "group": "B1"},
        ...
      ]
    }

Targets and lambda values are written with 17 significant digits so every
double round-trips exactly. CSV outputs put a ``# ``-prefixed preamble above
the header row.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, SchemaMismatchError
from .model import AtomicConstraint, AttributeSchema, ConstraintSet

CONSTRAINTS_FORMAT = "maxentpop-constraints"


def fmt(x: float) -> str:
    return f"{float(x):.16e}"


def schema_to_dict(schema: AttributeSchema) -> list[dict]:
    return [
        {"name": n, "domain_size": d, "categories": list(c)}
        for n, d, c in zip(schema.names, schema.domain_sizes, schema.categories)
    ]


def schema_from_dict(attrs: list[dict]) -> AttributeSchema:
    if not isinstance(attrs, list) or not attrs:
        raise InvalidInputError("attributes: expected a non-empty list")
    names, sizes, cats = [], [], []
    for i, a in enumerate(attrs):
        try:
            names.append(str(a["name"]))
            categories = [str(c) for c in a["categories"]]
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"attributes[{i}]: missing field {exc}") from None
        size = int(a.get("domain_size", len(categories)))
        if size != len(categories):
            raise InvalidInputError(f"attributes[{i}].domain_size: {size} != {len(categories)} categories")
        sizes.append(size)
        cats.append(tuple(categories))
    return AttributeSchema(tuple(names), tuple(sizes), tuple(cats))


def constraint_set_to_dict(cs: ConstraintSet) -> dict:
    schema = cs.schema
    records = []
    for c in cs.constraints:
        rec = {
            "pattern": [[schema.names[a], schema.categories[a][v]] for a, v in zip(c.attrs, c.values)],
            "target": fmt(c.target),
        }
        if c.group is not None:
            rec["group"] = c.group
        records.append(rec)
    doc = {"format": CONSTRAINTS_FORMAT, "version": 1, "attributes": schema_to_dict(schema)}
    if cs.table_mass:
        doc["tables"] = {k: fmt(v) for k, v in cs.table_mass.items()}
    doc["constraints"] = records
    return doc


def constraint_set_from_dict(doc: dict) -> ConstraintSet:
    if not isinstance(doc, dict) or doc.get("format") != CONSTRAINTS_FORMAT:
        raise InvalidInputError(f"format: expected {CONSTRAINTS_FORMAT!r}")
    schema = schema_from_dict(doc.get("attributes"))
    atoms = []
    for i, rec in enumerate(doc.get("constraints", [])):
        where = f"constraints[{i}]"
        try:
            pairs = rec["pattern"]
            target = float(rec["target"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"{where}: {exc}") from None
        try:
            resolved = sorted((schema.index_of(n), schema.category_index(schema.index_of(n), v)) for n, v in pairs)
            atoms.append(
                AtomicConstraint(tuple(a for a, _ in resolved), tuple(v for _, v in resolved), target, rec.get("group"))
            )
        except (InvalidInputError, ValueError, TypeError) as exc:
            raise InvalidInputError(f"{where}: {exc}") from None
    tables = {str(k): float(v) for k, v in doc.get("tables", {}).items()}
    return ConstraintSet(schema, tuple(atoms), tables)


def load_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def write_constraint_set(cs: ConstraintSet, path) -> Path:
    path = Path(path)
    with open(path, "x") as f:
        json.dump(constraint_set_to_dict(cs), f, indent=1)
    return path


def read_constraint_set(path) -> ConstraintSet:
    return constraint_set_from_dict(load_json(path))


def _open_csv(path, preamble: dict | None):
    f = open(Path(path), "x", newline="")
    if preamble:
        for key, value in preamble.items():
            f.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    return f


def read_preamble(path) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].partition(": ")
            out[key] = json.loads(value)
    return out


def _data_lines(path) -> list[str]:
    with open(path) as f:
        return [line for line in f if not line.startswith("#")]


def write_rows(path, columns: Sequence[str], rows: Iterable[dict], preamble: dict | None = None) -> Path:
    with _open_csv(path, preamble) as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
    return Path(path)


def read_rows(path) -> list[dict]:
    return list(csv.DictReader(_data_lines(path)))


def write_lambda(cs: ConstraintSet, lam, path, preamble: dict | None = None) -> Path:
    lam = np.asarray(lam, dtype=np.float64)
    rows = [
        {"index": j, "constraint": cs.describe(j), "group": cs.constraints[j].group or "", "value": float(lam[j])}
        for j in range(cs.m)
    ]
    return write_rows(path, ("index", "constraint", "group", "value"), rows, preamble)


def read_lambda(cs: ConstraintSet, path) -> np.ndarray:
    rows = read_rows(path)
    if len(rows) != cs.m:
        raise InvalidInputError(f"{path}: {len(rows)} values for {cs.m} constraints")
    lam = np.empty(cs.m)
    for i, row in enumerate(rows):
        j = int(row["index"])
        if row["constraint"] != cs.describe(j):
            raise SchemaMismatchError(f"{path}: row {i} describes {row['constraint']!r}, expected {cs.describe(j)!r}")
        lam[j] = float(row["value"])
    return lam


def write_population(schema: AttributeSchema, states: np.ndarray, path, weights=None, preamble: dict | None = None) -> Path:
    """One row per individual with category labels; optional weight column."""
    pre = {"schema": schema_to_dict(schema)}
    pre.update(preamble or {})
    with _open_csv(path, pre) as f:
        writer = csv.writer(f)
        writer.writerow(list(schema.names) + (["weight"] if weights is not None else []))
        labels = schema.categories
        for i, row in enumerate(np.asarray(states)):
            out = [labels[k][v] for k, v in enumerate(row)]
            if weights is not None:
                out.append(fmt(weights[i]))
            writer.writerow(out)
    return Path(path)


def read_population(path, schema: AttributeSchema | None = None) -> tuple[AttributeSchema, np.ndarray, np.ndarray | None]:
    pre = read_preamble(path)
    file_schema = schema_from_dict(pre["schema"]) if "schema" in pre else schema
    if file_schema is None:
        raise InvalidInputError(f"{path}: no schema preamble and none supplied")
    if schema is not None and schema != file_schema:
        raise SchemaMismatchError(f"{path}: schema differs from the expected one")
    reader = csv.reader(_data_lines(path))
    header = next(reader)
    K = file_schema.K
    if tuple(header[:K]) != file_schema.names:
        raise InvalidInputError(f"{path}: header does not match the schema")
    weighted = len(header) == K + 1 and header[K] == "weight"
    index = [{c: i for i, c in enumerate(cats)} for cats in file_schema.categories]
    states, weights = [], []
    for line, row in enumerate(reader, start=2):
        try:
            states.append([index[k][row[k]] for k in range(K)])
        except (KeyError, IndexError):
            raise InvalidInputError(f"{path}: data row {line}: unknown category or short row") from None
        if weighted:
            weights.append(float(row[K]))
    arr = np.array(states, dtype=np.int64).reshape(-1, K)
    return file_schema, arr, (np.array(weights) if weighted else None)
