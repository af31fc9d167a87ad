"""Single-level latent class model: likelihood, EM fit, posterior classification.

The observed-data likelihood of a unit is a weighted average of class-specific
response probabilities, with items independent given the latent cluster.
Survey weights enter every log-likelihood multiplicatively per unit
(pseudo-maximum likelihood). All mixture sums run in log space.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .data import MISSING, ItemSchema, TwoLevelDataset
from .errors import InputError, NumericalError

PROB_CLAMP = 1e-6  # keeps estimated probabilities away from 0/1


@dataclass
class EmConfig:
    seed: int = 0
    max_iter: int = 500
    rel_tol: float = 1e-8


@dataclass(frozen=True)
class LcParams:
    """Cluster weights P(Z=l) and item response probabilities P(Y_k=s | Z=l)."""

    cluster_weights: np.ndarray  # (L,)
    item_probs: tuple[np.ndarray, ...]  # per item k: (L, S_k)

    @property
    def n_clusters(self) -> int:
        return int(self.cluster_weights.shape[0])

    def check(self, schema: ItemSchema) -> None:
        L = self.n_clusters
        if len(self.item_probs) != schema.n_items:
            raise InputError("params and schema disagree on the number of items")
        if abs(self.cluster_weights.sum() - 1.0) > 1e-8:
            raise InputError("cluster weights do not sum to 1")
        for k, (p, s_k) in enumerate(zip(self.item_probs, schema.level_counts)):
            if p.shape != (L, s_k):
                raise InputError(
                    f"item {schema.items[k].name!r}: probability table shape {p.shape} "
                    f"does not match ({L}, {s_k})"
                )

    def permuted(self, order: Sequence[int]) -> "LcParams":
        order = list(order)
        return LcParams(
            cluster_weights=self.cluster_weights[order],
            item_probs=tuple(p[order] for p in self.item_probs),
        )


@dataclass
class FitResult:
    """Converged parameters plus the fitting trace and model diagnostics."""

    params: object  # LcParams or MllcParams
    loglik: float
    loglik_trace: np.ndarray
    n_iter: int
    converged: bool
    bic: float
    posteriors: object  # (N, L) array for LC; MllcPosteriors for MLLC
    n_params: int = 0
    flags: tuple[str, ...] = ()
    start_logliks: tuple[float, ...] = field(default_factory=tuple)
    start_converged: tuple[bool, ...] = field(default_factory=tuple)


def clamp_simplex(p: np.ndarray, eps: float = PROB_CLAMP) -> np.ndarray:
    """Clip rows into [eps, 1-eps] and renormalize; rows stay simplex vectors."""
    q = np.clip(p, eps, 1.0 - eps)
    q = q / q.sum(axis=-1, keepdims=True)
    return np.clip(q, eps, 1.0 - eps)


def log_unit_densities(data: TwoLevelDataset, item_probs: Sequence[np.ndarray]) -> np.ndarray:
    """(N, L) matrix of per-unit log response densities given each cluster.

    Products run over observed items only; missing responses drop out of the
    likelihood product.
    """
    n, k_items = data.responses.shape
    L = item_probs[0].shape[0]
    logb = np.zeros((n, L))
    for k in range(k_items):
        col = data.responses[:, k]
        observed = col != MISSING
        with np.errstate(divide="ignore"):  # structural zeros map to -inf
            logp = np.log(item_probs[k])  # (L, S_k)
        idx = np.where(observed, col - 1, 0)
        contrib = logp[:, idx].T  # (N, L)
        logb += np.where(observed[:, None], contrib, 0.0)
    return logb


def _check_schema(data: TwoLevelDataset, params: LcParams) -> None:
    params.check(data.schema)


def lc_loglik(data: TwoLevelDataset, params: LcParams) -> float:
    """Weighted log-likelihood sum_ij w_ij * log sum_l P(Z=l) prod_k P(y|Z=l)."""
    _check_schema(data, params)
    logb = log_unit_densities(data, params.item_probs)
    lse = logsumexp(np.log(params.cluster_weights)[None, :] + logb, axis=1)
    return float(np.dot(data.weights, lse))


def lc_posteriors(data: TwoLevelDataset, params: LcParams) -> np.ndarray:
    """Per-unit posterior P(Z=l | y) via Bayes rule, rows normalized to 1."""
    _check_schema(data, params)
    logb = log_unit_densities(data, params.item_probs)
    logpost = np.log(params.cluster_weights)[None, :] + logb
    logpost -= logsumexp(logpost, axis=1, keepdims=True)
    return np.exp(logpost)


def lc_n_params(schema: ItemSchema, L: int) -> int:
    """Free parameters: L-1 cluster weights plus sum_k L*(S_k - 1) item terms."""
    return (L - 1) + sum(L * (s - 1) for s in schema.level_counts)


def weighted_item_probs(
    data: TwoLevelDataset, resp_weights: np.ndarray, eps: float = PROB_CLAMP
) -> tuple[np.ndarray, ...]:
    """M-step item tables: weight-scaled responsibility-weighted level proportions."""
    out = []
    for k, s_k in enumerate(data.schema.level_counts):
        col = data.responses[:, k]
        table = np.zeros((resp_weights.shape[1], s_k))
        for s in range(1, s_k + 1):
            sel = col == s
            if np.any(sel):
                table[:, s - 1] = resp_weights[sel].sum(axis=0)
        total = table.sum(axis=1, keepdims=True)
        table = np.where(total > 0, table / np.where(total > 0, total, 1.0), 1.0 / s_k)
        out.append(clamp_simplex(table, eps))
    return tuple(out)


def _closed_form_l1(data: TwoLevelDataset) -> LcParams:
    w = data.weights[:, None]
    return LcParams(
        cluster_weights=np.ones(1),
        item_probs=weighted_item_probs(data, w),
    )


def random_responsibilities(rng: np.random.Generator, n: int, L: int) -> np.ndarray:
    """Per-unit symmetric Dirichlet(1) responsibilities used to seed EM."""
    draws = rng.dirichlet(np.ones(L), size=n)
    return draws


def lc_em_fit(data: TwoLevelDataset, L: int, config: EmConfig | None = None) -> FitResult:
    """Fit an L-cluster latent class model by EM.

    Initialization draws per-unit responsibilities from Dirichlet(1) under the
    config seed and applies one M-step. Iteration stops when the relative
    log-likelihood change drops below rel_tol or max_iter is reached.
    """
    config = config or EmConfig()
    if L < 1:
        raise InputError(f"cluster count must be >= 1, got {L}")
    if L > data.n_units:
        raise InputError(f"cluster count {L} exceeds unit count {data.n_units}")

    if L == 1:
        params = _closed_form_l1(data)
        ll = lc_loglik(data, params)
        return FitResult(
            params=params,
            loglik=ll,
            loglik_trace=np.array([ll]),
            n_iter=1,
            converged=True,
            bic=bic(ll, lc_n_params(data.schema, 1), data.n_units),
            posteriors=np.ones((data.n_units, 1)),
            n_params=lc_n_params(data.schema, 1),
        )

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    w = data.weights
    resp = random_responsibilities(rng, data.n_units, L)
    params = _m_step(data, w[:, None] * resp)

    trace: list[float] = []
    prev = None
    converged = False
    post = None
    for _ in range(config.max_iter):
        logb = log_unit_densities(data, params.item_probs)
        logpost = np.log(params.cluster_weights)[None, :] + logb
        lse = logsumexp(logpost, axis=1)
        ll = float(np.dot(w, lse))
        if not np.isfinite(ll):
            raise NumericalError(f"non-finite log-likelihood at iteration {len(trace) + 1}")
        trace.append(ll)
        post = np.exp(logpost - lse[:, None])
        if prev is not None and abs(ll - prev) <= config.rel_tol * max(abs(ll), 1e-10):
            converged = True
            break
        prev = ll
        params = _m_step(data, w[:, None] * post)
    else:
        # one final E-step so loglik/posteriors match the last M-step
        logb = log_unit_densities(data, params.item_probs)
        logpost = np.log(params.cluster_weights)[None, :] + logb
        lse = logsumexp(logpost, axis=1)
        ll = float(np.dot(w, lse))
        trace.append(ll)
        post = np.exp(logpost - lse[:, None])

    n_par = lc_n_params(data.schema, L)
    return FitResult(
        params=params,
        loglik=trace[-1],
        loglik_trace=np.array(trace),
        n_iter=len(trace),
        converged=converged,
        bic=bic(trace[-1], n_par, data.n_units),
        posteriors=post,
        n_params=n_par,
    )


def _m_step(data: TwoLevelDataset, weighted_resp: np.ndarray) -> LcParams:
    weights = clamp_simplex(weighted_resp.sum(axis=0) / data.weights.sum())
    return LcParams(
        cluster_weights=weights,
        item_probs=weighted_item_probs(data, weighted_resp),
    )


def bic(loglik: float, n_params: int, n: int) -> float:
    """Bayesian information criterion -2*logL + p*ln(N); lower is better."""
    if n < 1:
        raise InputError(f"BIC sample size must be >= 1, got {n}")
    if n_params < 0:
        raise InputError(f"parameter count must be >= 0, got {n_params}")
    return -2.0 * loglik + n_params * float(np.log(n))


__all__ = [
    "EmConfig",
    "LcParams",
    "FitResult",
    "PROB_CLAMP",
    "bic",
    "clamp_simplex",
    "lc_em_fit",
    "lc_loglik",
    "lc_n_params",
    "lc_posteriors",
    "log_unit_densities",
    "random_responsibilities",
    "weighted_item_probs",
]
