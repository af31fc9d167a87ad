"""Two-level categorical dataset, covariate coding, and survey-weight handling.

Level-1 units (e.g. firms) are nested in level-2 groups (e.g. countries).
Each unit carries categorical item responses (1-based levels, 0 = missing),
named covariates, and a positive survey weight. Datasets are immutable after
validation and can be read concurrently by any number of fitting jobs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError

MISSING = 0  # sentinel in the response matrix; real levels are 1..S_k


@dataclass(frozen=True)
class Item:
    name: str
    levels: int  # number of categories S_k, >= 2


@dataclass(frozen=True)
class ItemSchema:
    """Declares the K categorical items and their level counts."""

    items: tuple[Item, ...]

    def __post_init__(self):
        if len(self.items) < 1:
            raise InputError("schema must declare at least one item")
        names = [it.name for it in self.items]
        if len(set(names)) != len(names):
            raise InputError("item names must be unique")
        for it in self.items:
            if it.levels < 2:
                raise InputError(f"item {it.name!r} needs >= 2 levels, got {it.levels}")

    @classmethod
    def from_levels(cls, levels: Mapping[str, int] | Sequence[int]) -> "ItemSchema":
        if isinstance(levels, Mapping):
            return cls(tuple(Item(str(n), int(s)) for n, s in levels.items()))
        return cls(tuple(Item(f"item{k + 1}", int(s)) for k, s in enumerate(levels)))

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def level_counts(self) -> tuple[int, ...]:
        return tuple(it.levels for it in self.items)

    @property
    def item_names(self) -> tuple[str, ...]:
        return tuple(it.name for it in self.items)

    def item_index(self, name: str) -> int:
        for k, it in enumerate(self.items):
            if it.name == name:
                return k
        raise InputError(f"unknown item {name!r}")


@dataclass(frozen=True)
class Covariate:
    """A named per-unit covariate, categorical (string codes) or continuous."""

    name: str
    kind: str  # "categorical" | "continuous"
    values: np.ndarray  # (N,) object/str for categorical, float for continuous
    categories: tuple[str, ...] = ()  # declared order; reference defaults to last

    def __post_init__(self):
        if self.kind not in ("categorical", "continuous"):
            raise InputError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and len(self.categories) == 0:
            seen = list(dict.fromkeys(str(v) for v in self.values))
            object.__setattr__(self, "categories", tuple(sorted(seen)))


@dataclass(frozen=True)
class TwoLevelDataset:
    """J groups of level-1 units with item responses, covariates, weights.

    Units are stored flat in group-contiguous order; ``group_index`` maps each
    unit to its group and ``group_starts`` gives reduceat offsets.
    """

    schema: ItemSchema
    group_ids: tuple[str, ...]
    group_index: np.ndarray  # (N,) int
    unit_ids: tuple[str, ...]
    responses: np.ndarray  # (N, K) int, 1..S_k or MISSING
    weights: np.ndarray  # (N,) float > 0
    covariates: tuple[Covariate, ...] = ()
    validated: bool = False
    missing_counts: tuple[int, ...] = ()  # per item, filled by validation

    @property
    def n_units(self) -> int:
        return self.responses.shape[0]

    @property
    def n_groups(self) -> int:
        return len(self.group_ids)

    @property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.group_index, minlength=self.n_groups)

    @property
    def group_starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.group_sizes)[:-1]))

    def covariate(self, name: str) -> Covariate:
        for cov in self.covariates:
            if cov.name == name:
                return cov
        raise InputError(f"unknown covariate {name!r}")

    @classmethod
    def from_arrays(
        cls,
        schema: ItemSchema,
        group_of_unit: Sequence[str],
        responses: np.ndarray,
        weights: np.ndarray | None = None,
        covariates: Sequence[Covariate] = (),
        unit_ids: Sequence[str] | None = None,
    ) -> "TwoLevelDataset":
        """Assemble and validate a dataset from flat per-unit arrays.

        Groups are ordered by first appearance; units are stably regrouped so
        each group's rows are contiguous.
        """
        responses = np.asarray(responses, dtype=np.int64)
        if responses.ndim != 2:
            raise InputError("responses must be a 2-d (units x items) array")
        n = responses.shape[0]
        group_of_unit = [str(g) for g in group_of_unit]
        if len(group_of_unit) != n:
            raise InputError("group_of_unit length does not match responses")
        if weights is None:
            weights = np.ones(n)
        weights = np.asarray(weights, dtype=float)
        if unit_ids is None:
            unit_ids = [str(i) for i in range(n)]
        unit_ids = [str(u) for u in unit_ids]

        group_order = list(dict.fromkeys(group_of_unit))
        gmap = {g: j for j, g in enumerate(group_order)}
        gidx = np.array([gmap[g] for g in group_of_unit], dtype=np.int64)
        order = np.argsort(gidx, kind="stable")

        data = cls(
            schema=schema,
            group_ids=tuple(group_order),
            group_index=gidx[order],
            unit_ids=tuple(unit_ids[i] for i in order),
            responses=responses[order],
            weights=weights[order],
            covariates=tuple(
                Covariate(c.name, c.kind, np.asarray(c.values)[order], c.categories)
                for c in covariates
            ),
        )
        return validate_dataset(data, schema)


def validate_dataset(raw: TwoLevelDataset, schema: ItemSchema) -> TwoLevelDataset:
    """Check every dataset invariant; reject on the first violation found.

    Returns an immutable, validated copy with per-item missingness tallied.
    """
    if raw.n_groups < 1:
        raise InputError("dataset has no groups")
    if tuple(schema.level_counts) != tuple(raw.schema.level_counts) or (
        schema.item_names != raw.schema.item_names
    ):
        raise InputError("dataset schema does not match the supplied schema")
    if raw.responses.shape[1] != schema.n_items:
        raise InputError(
            f"responses have {raw.responses.shape[1]} columns, schema declares {schema.n_items} items"
        )
    if raw.responses.shape[0] != len(raw.unit_ids) or raw.responses.shape[0] != raw.weights.shape[0]:
        raise InputError("responses, unit_ids and weights disagree on unit count")

    sizes = raw.group_sizes
    for j, gid in enumerate(raw.group_ids):
        if sizes[j] < 1:
            raise InputError(f"group {gid!r} is empty")

    for i in range(raw.n_units):
        w = raw.weights[i]
        if not np.isfinite(w) or w <= 0:
            raise InputError(
                f"nonpositive weight {w} on unit {raw.unit_ids[i]!r} "
                f"in group {raw.group_ids[raw.group_index[i]]!r}"
            )

    resp = raw.responses
    for k, item in enumerate(schema.items):
        col = resp[:, k]
        bad = np.flatnonzero((col != MISSING) & ((col < 1) | (col > item.levels)))
        if bad.size:
            i = int(bad[0])
            raise InputError(
                f"response {col[i]} out of range 1..{item.levels} for item {item.name!r} "
                f"on unit {raw.unit_ids[i]!r} in group {raw.group_ids[raw.group_index[i]]!r}"
            )

    for cov in raw.covariates:
        if cov.values.shape[0] != raw.n_units:
            raise InputError(f"covariate {cov.name!r} length does not match unit count")
        if cov.kind == "categorical":
            known = set(cov.categories)
            for i, v in enumerate(cov.values):
                if str(v) not in known:
                    raise InputError(
                        f"covariate {cov.name!r} has undeclared category {v!r} "
                        f"on unit {raw.unit_ids[i]!r}"
                    )
        else:
            vals = np.asarray(cov.values, dtype=float)
            if not np.all(np.isfinite(vals)):
                i = int(np.flatnonzero(~np.isfinite(vals))[0])
                raise InputError(
                    f"covariate {cov.name!r} is non-finite on unit {raw.unit_ids[i]!r}"
                )

    missing = tuple(int((resp[:, k] == MISSING).sum()) for k in range(schema.n_items))
    resp = resp.copy()
    resp.setflags(write=False)
    weights = raw.weights.astype(float).copy()
    weights.setflags(write=False)
    gidx = raw.group_index.copy()
    gidx.setflags(write=False)
    return TwoLevelDataset(
        schema=schema,
        group_ids=raw.group_ids,
        group_index=gidx,
        unit_ids=raw.unit_ids,
        responses=resp,
        weights=weights,
        covariates=raw.covariates,
        validated=True,
        missing_counts=missing,
    )


def normalize_weights(data: TwoLevelDataset, mode: str = "per_group") -> TwoLevelDataset:
    """Rescale survey weights; relative weights inside the rescaled scope are kept.

    per_group: each group's weights sum to its unit count n_j.
    global: total weight equals the total unit count.
    none: identity.
    """
    if mode not in ("none", "per_group", "global"):
        raise InputError(f"unknown weight mode {mode!r}")
    if mode == "none":
        return data
    w = data.weights.astype(float).copy()
    if mode == "global":
        w *= data.n_units / w.sum()
    else:
        sizes = data.group_sizes
        gsum = np.bincount(data.group_index, weights=w, minlength=data.n_groups)
        w *= (sizes / gsum)[data.group_index]
    w.setflags(write=False)
    return TwoLevelDataset(
        schema=data.schema,
        group_ids=data.group_ids,
        group_index=data.group_index,
        unit_ids=data.unit_ids,
        responses=data.responses,
        weights=w,
        covariates=data.covariates,
        validated=data.validated,
        missing_counts=data.missing_counts,
    )


@dataclass(frozen=True)
class DesignColumn:
    covariate: str
    category: str | None  # None for a continuous pass-through column


@dataclass(frozen=True)
class CodedDesign:
    """Per-unit matrix of real-valued coded covariate columns.

    Effect coding: a C-category covariate yields C-1 columns; category r gets
    1 in its own column and 0 elsewhere, the reference category gets -1 in
    every column, so category effects (with the implied reference effect)
    sum to zero.
    """

    matrix: np.ndarray  # (N, P) float
    columns: tuple[DesignColumn, ...]
    references: Mapping[str, str] = field(default_factory=dict)

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    def columns_for(self, covariate: str) -> list[int]:
        return [p for p, c in enumerate(self.columns) if c.covariate == covariate]


def effect_code(
    values: Sequence[str],
    categories: Sequence[str],
    reference: str | None = None,
) -> tuple[np.ndarray, list[str], str]:
    """Effect-code one categorical column; returns (matrix, column categories, reference)."""
    categories = [str(c) for c in categories]
    if len(categories) < 2:
        raise InputError("effect coding needs a covariate with >= 2 categories")
    if reference is None:
        reference = categories[-1]
    if reference not in categories:
        raise InputError(f"reference {reference!r} is not a declared category")
    kept = [c for c in categories if c != reference]
    index = {c: p for p, c in enumerate(kept)}
    mat = np.zeros((len(values), len(kept)))
    for i, v in enumerate(values):
        v = str(v)
        if v == reference:
            mat[i, :] = -1.0
        else:
            mat[i, index[v]] = 1.0
    return mat, kept, reference


def build_design(
    data: TwoLevelDataset,
    covariate_names: Sequence[str],
    references: Mapping[str, str] | None = None,
) -> CodedDesign:
    """Assemble the coded design for the named covariates, in the given order."""
    references = dict(references or {})
    blocks: list[np.ndarray] = []
    columns: list[DesignColumn] = []
    used_refs: dict[str, str] = {}
    for name in covariate_names:
        cov = data.covariate(name)
        if cov.kind == "continuous":
            blocks.append(np.asarray(cov.values, dtype=float).reshape(-1, 1))
            columns.append(DesignColumn(name, None))
        else:
            observed = set(str(v) for v in cov.values)
            if len(observed) < 2:
                raise InputError(f"covariate {name!r} has fewer than 2 observed categories")
            mat, kept, ref = effect_code(cov.values, cov.categories, references.get(name))
            blocks.append(mat)
            columns.extend(DesignColumn(name, c) for c in kept)
            used_refs[name] = ref
    if not blocks:
        matrix = np.zeros((data.n_units, 0))
    else:
        matrix = np.column_stack(blocks)
    matrix.setflags(write=False)
    return CodedDesign(matrix=matrix, columns=tuple(columns), references=used_refs)


def effects_with_reference(design: CodedDesign, covariate: str, coefs: np.ndarray) -> dict[str, float]:
    """Full per-category effect map, adding the implied reference effect.

    The implied reference coefficient is minus the sum of the estimated ones,
    so all effects for the covariate sum to zero.
    """
    cols = design.columns_for(covariate)
    out = {design.columns[p].category: float(coefs[p]) for p in cols}
    ref = design.references.get(covariate)
    if ref is not None:
        out[ref] = -float(np.sum([coefs[p] for p in cols]))
    return out
