"""CSV dataset loading and writing.

Contract: one row per unit with columns ``group_id, unit_id, weight,
<item columns>, <covariate columns>``; missing item responses are empty
cells. A JSON schema file declares item level counts and covariate types:

    {"items": {"saving_water": 2, ...},
     "covariates": {"sector": {"type": "categorical",
                               "categories": ["manufacturing", ...]},
                    "x": {"type": "continuous"}}}

Categorical categories may be omitted, in which case the sorted observed
values are used (the reference for effect coding defaults to the last
declared category).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .data import Covariate, ItemSchema, TwoLevelDataset
from .errors import InputError


def load_schema(path: str | Path) -> tuple[ItemSchema, dict]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"schema file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InputError(f"schema file {path} is not valid JSON: {exc}")
    items = raw.get("items")
    if not isinstance(items, dict) or not items:
        raise InputError(f"schema file {path} must declare a non-empty 'items' mapping")
    try:
        schema = ItemSchema.from_levels({str(k): int(v) for k, v in items.items()})
    except (TypeError, ValueError):
        raise InputError(f"schema file {path}: item level counts must be integers")
    covs = raw.get("covariates", {})
    if not isinstance(covs, dict):
        raise InputError(f"schema file {path}: 'covariates' must be a mapping")
    decl: dict[str, dict] = {}
    for name, entry in covs.items():
        if isinstance(entry, str):
            entry = {"type": entry}
        if not isinstance(entry, dict) or entry.get("type") not in ("categorical", "continuous"):
            raise InputError(
                f"schema file {path}: covariate {name!r} needs type categorical or continuous"
            )
        decl[str(name)] = {
            "type": entry["type"],
            "categories": [str(c) for c in entry.get("categories", [])],
        }
    return schema, decl


def save_schema(path: str | Path, schema: ItemSchema, covariates: dict | None = None) -> None:
    doc = {
        "items": {it.name: it.levels for it in schema.items},
        "covariates": covariates or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_csv(path: str | Path, schema_path: str | Path) -> TwoLevelDataset:
    """Parse the dataset CSV against its schema; reject malformed rows by line.

    Returns a validated dataset; row/column counts and per-item missingness
    are available on the result (``missing_counts``).
    """
    schema, cov_decl = load_schema(schema_path)
    path = Path(path)
    try:
        handle = path.open(newline="")
    except FileNotFoundError:
        raise InputError(f"input file not found: {path}")

    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, no data")
        header = [h.strip() for h in header]
        required = ["group_id", "unit_id", "weight"]
        missing_cols = [c for c in required + list(schema.item_names) + list(cov_decl) if c not in header]
        if missing_cols:
            raise InputError(f"{path}: missing columns {missing_cols}")
        col_of = {name: header.index(name) for name in header}

        groups: list[str] = []
        unit_ids: list[str] = []
        weights: list[float] = []
        resp_rows: list[list[int]] = []
        cov_rows: dict[str, list] = {name: [] for name in cov_decl}

        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise InputError(f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}")
            groups.append(row[col_of["group_id"]].strip())
            unit_ids.append(row[col_of["unit_id"]].strip())
            wtxt = row[col_of["weight"]].strip()
            try:
                w = float(wtxt)
            except ValueError:
                raise InputError(f"{path}: line {line_no}: weight {wtxt!r} is not a number")
            weights.append(w)
            resp: list[int] = []
            for item in schema.items:
                cell = row[col_of[item.name]].strip()
                if cell == "":
                    resp.append(0)
                    continue
                try:
                    v = int(cell)
                except ValueError:
                    raise InputError(
                        f"{path}: line {line_no}: item {item.name!r} value {cell!r} is not an integer"
                    )
                if not 1 <= v <= item.levels:
                    raise InputError(
                        f"{path}: line {line_no}: item {item.name!r} value {v} outside 1..{item.levels}"
                    )
                resp.append(v)
            resp_rows.append(resp)
            for name, entry in cov_decl.items():
                cell = row[col_of[name]].strip()
                if cell == "":
                    raise InputError(f"{path}: line {line_no}: covariate {name!r} is empty")
                if entry["type"] == "continuous":
                    try:
                        cov_rows[name].append(float(cell))
                    except ValueError:
                        raise InputError(
                            f"{path}: line {line_no}: covariate {name!r} value {cell!r} is not a number"
                        )
                else:
                    cov_rows[name].append(cell)

    if not resp_rows:
        raise InputError(f"{path}: no data rows")

    covariates = []
    for name, entry in cov_decl.items():
        if entry["type"] == "continuous":
            covariates.append(Covariate(name, "continuous", np.asarray(cov_rows[name], dtype=float)))
        else:
            cats = tuple(entry["categories"]) or tuple(sorted(set(cov_rows[name])))
            covariates.append(Covariate(name, "categorical", np.asarray(cov_rows[name], dtype=object), cats))

    return TwoLevelDataset.from_arrays(
        schema,
        groups,
        np.asarray(resp_rows, dtype=np.int64),
        np.asarray(weights),
        covariates,
        unit_ids=unit_ids,
    )


def write_csv(path: str | Path, data: TwoLevelDataset) -> None:
    """Write a dataset in the load_csv contract (missing items as empty cells)."""
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        header = ["group_id", "unit_id", "weight"] + list(data.schema.item_names) + [
            c.name for c in data.covariates
        ]
        writer.writerow(header)
        for i in range(data.n_units):
            row = [
                data.group_ids[data.group_index[i]],
                data.unit_ids[i],
                repr(float(data.weights[i])),
            ]
            for k in range(data.schema.n_items):
                v = data.responses[i, k]
                row.append("" if v == 0 else str(int(v)))
            for cov in data.covariates:
                v = cov.values[i]
                row.append(repr(float(v)) if cov.kind == "continuous" else str(v))
            writer.writerow(row)


def covariate_declaration(data: TwoLevelDataset) -> dict:
    decl = {}
    for cov in data.covariates:
        if cov.kind == "continuous":
            decl[cov.name] = {"type": "continuous"}
        else:
            decl[cov.name] = {"type": "categorical", "categories": list(cov.categories)}
    return decl


__all__ = ["covariate_declaration", "load_csv", "load_schema", "save_schema", "write_csv"]
