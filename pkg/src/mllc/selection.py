"""BIC-based model selection over (clusters, classes) grids with multi-starts.

Start seeds derive deterministically from (seed, start index) via SeedSequence,
so any (data, L, H, starts, seed) tuple reproduces bit-identical results.
Grid cells are independent; MLLC_THREADS caps optional worker parallelism.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import TwoLevelDataset
from .errors import InputError, MllcError
from .lc import EmConfig, FitResult, bic
from .multilevel import mllc_em_fit

DEFAULT_STARTS = 16  # hierarchical mixtures are prone to local maxima


@dataclass
class GridSpec:
    """Search ranges and per-cell start count for the (L, H) grid."""

    L_range: tuple[int, int] = (1, 8)
    H_range: tuple[int, int] = (1, 6)
    starts: int = DEFAULT_STARTS
    seed: int = 0
    bic_n: str = "level1_units"  # or "level2_groups"
    covariates: tuple[str, ...] = ()
    max_iter: int = 500
    rel_tol: float = 1e-8

    def __post_init__(self):
        lo, hi = self.L_range
        if lo > hi or lo < 1:
            raise InputError(f"empty or invalid cluster range {self.L_range}")
        lo, hi = self.H_range
        if lo > hi or lo < 1:
            raise InputError(f"empty or invalid class range {self.H_range}")
        if self.starts < 1:
            raise InputError(f"starts must be >= 1, got {self.starts}")
        if self.bic_n not in ("level1_units", "level2_groups"):
            raise InputError(f"unknown bic_n {self.bic_n!r}")


def derive_seed(seed: int, start_index: int) -> int:
    """Deterministic per-start seed from (seed, start index)."""
    return int(np.random.SeedSequence([seed, start_index]).generate_state(1)[0])


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("MLLC_THREADS", "1")))
    except ValueError:
        return 1


def multi_start_fit(
    data: TwoLevelDataset,
    L: int,
    H: int,
    starts: int = DEFAULT_STARTS,
    seed: int = 0,
    covariates: Sequence[str] | None = None,
    max_iter: int = 500,
    rel_tol: float = 1e-8,
) -> FitResult:
    """Best-of-``starts`` EM fit; ties break toward the lowest start index."""
    if starts < 1:
        raise InputError(f"starts must be >= 1, got {starts}")

    def one(start: int) -> FitResult:
        config = EmConfig(seed=derive_seed(seed, start), max_iter=max_iter, rel_tol=rel_tol)
        return mllc_em_fit(data, L, H, covariates=covariates, config=config)

    workers = min(worker_count(), starts)
    results: list[FitResult | Exception] = [None] * starts  # type: ignore[list-item]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(one, s) for s in range(starts)]
            for s, fut in enumerate(futures):
                try:
                    results[s] = fut.result()
                except MllcError as exc:
                    results[s] = exc
    else:
        for s in range(starts):
            try:
                results[s] = one(s)
            except MllcError as exc:
                results[s] = exc

    fits = [(s, r) for s, r in enumerate(results) if isinstance(r, FitResult)]
    if not fits:
        first = next(r for r in results if isinstance(r, Exception))
        raise first
    best_idx, best = max(fits, key=lambda sr: (sr[1].loglik, -sr[0]))
    best.start_logliks = tuple(
        r.loglik if isinstance(r, FitResult) else float("nan") for r in results
    )
    best.start_converged = tuple(
        r.converged if isinstance(r, FitResult) else False for r in results
    )
    return best


@dataclass
class GridCell:
    L: int
    H: int
    loglik: float
    n_params: int
    bic: float
    converged_share: float
    failed: bool = False
    error: str = ""
    fit: FitResult | None = None


@dataclass
class GridResult:
    cells: tuple[GridCell, ...]
    selected: GridCell
    bic_n: str
    sample_size: int

    def table_rows(self) -> list[dict]:
        rows = []
        for c in sorted(self.cells, key=lambda c: (c.L, c.H)):
            rows.append(
                {
                    "L": c.L,
                    "H": c.H,
                    "loglik": c.loglik,
                    "n_params": c.n_params,
                    "bic": c.bic,
                    "converged_share": c.converged_share,
                    "failed": c.failed,
                    "selected": (c.L, c.H) == (self.selected.L, self.selected.H),
                }
            )
        return rows


def grid_search(data: TwoLevelDataset, grid: GridSpec) -> GridResult:
    """Fit every (L, H) cell via multi_start_fit and select the minimum BIC.

    Cell failures are recorded and skipped in the selection; if every cell
    fails the search aborts with the first error.
    """
    n = data.n_units if grid.bic_n == "level1_units" else data.n_groups
    cells: list[GridCell] = []
    first_error: Exception | None = None
    for L in range(grid.L_range[0], grid.L_range[1] + 1):
        for H in range(grid.H_range[0], grid.H_range[1] + 1):
            cell_seed = derive_seed(grid.seed, 10_000 + 100 * L + H)
            try:
                fit = multi_start_fit(
                    data, L, H,
                    starts=grid.starts,
                    seed=cell_seed,
                    covariates=grid.covariates or None,
                    max_iter=grid.max_iter,
                    rel_tol=grid.rel_tol,
                )
            except MllcError as exc:
                if first_error is None:
                    first_error = exc
                cells.append(GridCell(L, H, float("nan"), 0, float("inf"), 0.0, True, str(exc)))
                continue
            n_starts = max(1, len(fit.start_converged))
            share = sum(fit.start_converged) / n_starts
            cells.append(
                GridCell(
                    L=L,
                    H=H,
                    loglik=fit.loglik,
                    n_params=fit.n_params,
                    bic=bic(fit.loglik, fit.n_params, n),
                    converged_share=float(share),
                    fit=fit,
                )
            )
    ok = [c for c in cells if not c.failed]
    if not ok:
        raise first_error if first_error is not None else InputError("empty grid")
    selected = min(ok, key=lambda c: (c.bic, c.L, c.H))
    return GridResult(cells=tuple(cells), selected=selected, bic_n=grid.bic_n, sample_size=n)


__all__ = [
    "DEFAULT_STARTS",
    "GridCell",
    "GridResult",
    "GridSpec",
    "bic",
    "derive_seed",
    "grid_search",
    "multi_start_fit",
    "worker_count",
]
