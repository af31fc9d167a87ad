"""Two-level (hierarchical) latent class model with optional concomitant covariates.

A discrete group-level latent class W (H categories) governs the mixing of a
unit-level latent cluster Z (L categories); item responses are independent
given the cluster, and units are independent given the group's class. With
covariates, cluster membership follows a multinomial logit with class-specific
intercepts and shared covariate slopes (last cluster is the zero baseline).

Per-group products over hundreds of units underflow, so every group-level
accumulation runs in log space with max-shifted sums.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .data import CodedDesign, DesignColumn, TwoLevelDataset, build_design
from .errors import InputError, NumericalError
from .lc import (
    EmConfig,
    FitResult,
    LcParams,
    bic,
    clamp_simplex,
    log_unit_densities,
    weighted_item_probs,
)


@dataclass(frozen=True)
class ConcomitantCoefs:
    """Multinomial-logit coefficients for P(Z=l | W=h, x).

    One row per non-baseline cluster: class-specific intercepts plus slopes on
    the coded covariate columns. Coefficients of the last cluster are fixed at
    zero for identification.
    """

    intercepts: np.ndarray  # (L-1, H)
    slopes: np.ndarray  # (L-1, P)
    columns: tuple[DesignColumn, ...] = ()
    references: Mapping[str, str] | None = None

    @property
    def n_clusters(self) -> int:
        return self.intercepts.shape[0] + 1

    @property
    def n_classes(self) -> int:
        return self.intercepts.shape[1]

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(c.covariate for c in self.columns))

    def design_matrix(self, data: TwoLevelDataset) -> np.ndarray:
        design = build_design(data, self.covariate_names, self.references)
        if design.n_columns != self.slopes.shape[1]:
            raise InputError(
                f"coded design has {design.n_columns} columns, coefficients expect "
                f"{self.slopes.shape[1]}"
            )
        return design.matrix

    def log_probs(self, x: np.ndarray) -> np.ndarray:
        """(N, H, L) log P(Z=l | W=h, x_i) at coded covariate rows x."""
        n = x.shape[0]
        L, H = self.n_clusters, self.n_classes
        eta = np.zeros((n, H, L))
        if L > 1:
            eta[:, :, : L - 1] = self.intercepts.T[None, :, :] + (x @ self.slopes.T)[:, None, :]
        return eta - logsumexp(eta, axis=2, keepdims=True)


@dataclass(frozen=True)
class MllcParams:
    """Class weights P(W=h), cluster membership model, and item tables.

    Cluster membership is either a fixed H x L probability table or, with
    concomitant covariates, a multinomial logit (``gamma``). Exactly one of
    ``cluster_table`` / ``gamma`` is set.
    """

    class_weights: np.ndarray  # (H,)
    item_probs: tuple[np.ndarray, ...]
    cluster_table: np.ndarray | None = None  # (H, L)
    gamma: ConcomitantCoefs | None = None

    def __post_init__(self):
        if (self.cluster_table is None) == (self.gamma is None):
            raise InputError("exactly one of cluster_table or gamma must be given")

    @property
    def n_classes(self) -> int:
        return int(self.class_weights.shape[0])

    @property
    def n_clusters(self) -> int:
        if self.cluster_table is not None:
            return int(self.cluster_table.shape[1])
        return self.gamma.n_clusters

    def log_cluster_probs(self, data: TwoLevelDataset) -> np.ndarray:
        """(H, L) log table, or (N, H, L) per-unit log probabilities with covariates."""
        if self.cluster_table is not None:
            with np.errstate(divide="ignore"):  # structural zeros map to -inf
                return np.log(self.cluster_table)
        return self.gamma.log_probs(self.gamma.design_matrix(data))

    def permuted(self, cluster_order: Sequence[int], class_order: Sequence[int]) -> "MllcParams":
        cl = list(cluster_order)
        cs = list(class_order)
        table = None
        gamma = None
        if self.cluster_table is not None:
            table = self.cluster_table[np.ix_(cs, cl)]
        else:
            L = self.gamma.n_clusters
            full_int = np.vstack([self.gamma.intercepts, np.zeros((1, self.gamma.n_classes))])
            full_slo = np.vstack([self.gamma.slopes, np.zeros((1, self.gamma.slopes.shape[1]))])
            new_int = full_int[cl] - full_int[cl[-1]]
            new_slo = full_slo[cl] - full_slo[cl[-1]]
            gamma = ConcomitantCoefs(
                intercepts=new_int[: L - 1][:, cs],
                slopes=new_slo[: L - 1],
                columns=self.gamma.columns,
                references=self.gamma.references,
            )
        return MllcParams(
            class_weights=self.class_weights[cs],
            item_probs=tuple(p[cl] for p in self.item_probs),
            cluster_table=table,
            gamma=gamma,
        )


@dataclass(frozen=True)
class MllcPosteriors:
    """E-step posteriors: group classes, class-conditional and marginal clusters."""

    group_ids: tuple[str, ...]
    group_class: np.ndarray  # (J, H)
    unit_cluster_given_class: np.ndarray  # (N, H, L)
    unit_cluster: np.ndarray  # (N, L), = sum_h group_class[j(i),h] * conditional

    def permuted(self, cluster_order: Sequence[int], class_order: Sequence[int]) -> "MllcPosteriors":
        cl, cs = list(cluster_order), list(class_order)
        return MllcPosteriors(
            group_ids=self.group_ids,
            group_class=self.group_class[:, cs],
            unit_cluster_given_class=self.unit_cluster_given_class[np.ix_(range(self.unit_cluster.shape[0]), cs, cl)],
            unit_cluster=self.unit_cluster[:, cl],
        )


def mllc_n_params(level_counts: Sequence[int], L: int, H: int, n_coded_columns: int | None = None) -> int:
    """Free parameter count: class weights + item tables + cluster membership terms."""
    item_terms = sum(L * (s - 1) for s in level_counts)
    if n_coded_columns is None:
        cluster_terms = H * (L - 1)
    else:
        cluster_terms = (L - 1) * (H + n_coded_columns)
    return (H - 1) + item_terms + cluster_terms


def _check(data: TwoLevelDataset, params: MllcParams) -> None:
    if len(params.item_probs) != data.schema.n_items:
        raise InputError("params and dataset disagree on the number of items")
    L = params.n_clusters
    for k, (p, s_k) in enumerate(zip(params.item_probs, data.schema.level_counts)):
        if p.shape != (L, s_k):
            raise InputError(
                f"item {data.schema.items[k].name!r}: table shape {p.shape} != ({L}, {s_k})"
            )


def _group_scores(
    data: TwoLevelDataset, params: MllcParams, logb: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-unit log mixtures and per-group class scores.

    Returns (log_a, logc, scores): log_a is (H,L) or (N,H,L); logc is (N,H)
    with logc[i,h] = log sum_l a*b; scores is (J,H) with
    log pi_h + sum_{i in j} w_i * logc[i,h].
    """
    log_a = params.log_cluster_probs(data)
    if log_a.ndim == 2:
        mix = log_a[None, :, :] + logb[:, None, :]
    else:
        mix = log_a + logb[:, None, :]
    logc = logsumexp(mix, axis=2)  # (N, H)
    gsum = np.add.reduceat(data.weights[:, None] * logc, data.group_starts, axis=0)
    scores = np.log(params.class_weights)[None, :] + gsum
    return log_a, logc, scores


def mllc_loglik(data: TwoLevelDataset, params: MllcParams) -> float:
    """Marginal weighted log-likelihood of the two-level mixture.

    Per group: log sum_h P(W=h) prod_i [sum_l P(Z=l|W=h,x) prod_k P(y|Z=l)]^w_i,
    accumulated in log space; unit weights exponentiate the per-unit factor.
    """
    _check(data, params)
    logb = log_unit_densities(data, params.item_probs)
    _, _, scores = _group_scores(data, params, logb)
    return float(np.sum(logsumexp(scores, axis=1)))


def mllc_posteriors(data: TwoLevelDataset, params: MllcParams) -> tuple[MllcPosteriors, float]:
    """E-step posteriors and the log-likelihood of the current parameters."""
    _check(data, params)
    logb = log_unit_densities(data, params.item_probs)
    log_a, logc, scores = _group_scores(data, params, logb)
    lse = logsumexp(scores, axis=1)
    ll = float(np.sum(lse))
    q = np.exp(scores - lse[:, None])  # (J, H)
    if log_a.ndim == 2:
        log_u = log_a[None, :, :] + logb[:, None, :] - logc[:, :, None]
    else:
        log_u = log_a + logb[:, None, :] - logc[:, :, None]
    u = np.exp(log_u)  # (N, H, L)
    m = np.einsum("nh,nhl->nl", q[data.group_index], u)
    post = MllcPosteriors(
        group_ids=data.group_ids,
        group_class=q,
        unit_cluster_given_class=u,
        unit_cluster=m,
    )
    return post, ll


def concomitant_mstep(
    posterior_weights: np.ndarray,
    design: CodedDesign | np.ndarray,
    gamma: ConcomitantCoefs,
    max_newton: int = 10,
    grad_tol: float = 1e-8,
) -> tuple[ConcomitantCoefs, tuple[str, ...]]:
    """Weighted multinomial-logit M-step by safeguarded Newton iterations.

    ``posterior_weights`` are joint unit posteriors already scaled by the
    survey weights, shape (N, H, L). The expected complete-data log-likelihood
    never decreases: Newton steps are halved until ascent holds, and a
    singular system falls back to a gradient step with halving line search.
    """
    x = design.matrix if isinstance(design, CodedDesign) else np.asarray(design, dtype=float)
    rho = posterior_weights
    n, H, L = rho.shape
    if x.shape[0] != n:
        raise InputError("design rows do not align with posterior units")
    P = x.shape[1]
    warnings: list[str] = []
    if L == 1:
        return gamma, ()
    mass = rho.sum(axis=2)  # (N, H)

    def objective_and_grad(g: ConcomitantCoefs):
        log_a = g.log_probs(x)  # (N, H, L)
        obj = float(np.sum(rho * log_a))
        a = np.exp(log_a)
        resid = rho - mass[:, :, None] * a  # (N, H, L)
        g_int = resid.sum(axis=0).T[: L - 1]  # (L-1, H)
        g_slo = np.einsum("nhl,np->lp", resid, x)[: L - 1]  # (L-1, P)
        return obj, g_int, g_slo, a

    def hessian(a: np.ndarray) -> np.ndarray:
        d0 = H + P
        hess = np.zeros(((L - 1) * d0, (L - 1) * d0))
        for l in range(L - 1):
            for m in range(l, L - 1):
                delta = 1.0 if l == m else 0.0
                c = mass * a[:, :, l] * (delta - a[:, :, m])  # (N, H)
                block = np.zeros((d0, d0))
                block[:H, :H] = np.diag(c.sum(axis=0))
                cx = c.T @ x  # (H, P)
                block[:H, H:] = cx
                block[H:, :H] = cx.T
                block[H:, H:] = x.T @ (c.sum(axis=1)[:, None] * x)
                hess[l * d0 : (l + 1) * d0, m * d0 : (m + 1) * d0] = -block
                if m != l:
                    hess[m * d0 : (m + 1) * d0, l * d0 : (l + 1) * d0] = -block.T
        return hess

    def pack(g_int, g_slo):
        return np.concatenate([np.concatenate([g_int[l], g_slo[l]]) for l in range(L - 1)])

    def unpack(theta):
        d0 = H + P
        ints = np.empty((L - 1, H))
        slos = np.empty((L - 1, P))
        for l in range(L - 1):
            chunk = theta[l * d0 : (l + 1) * d0]
            ints[l] = chunk[:H]
            slos[l] = chunk[H:]
        return ConcomitantCoefs(ints, slos, gamma.columns, gamma.references)

    theta = pack(gamma.intercepts, gamma.slopes)
    obj, g_int, g_slo, a = objective_and_grad(gamma)
    for _ in range(max_newton):
        grad = pack(g_int, g_slo)
        if np.abs(grad).max() <= grad_tol * (1.0 + abs(obj)):
            break
        step = None
        hess = hessian(a)
        try:
            step = np.linalg.solve(-hess, grad)
            if not np.all(np.isfinite(step)):
                step = None
        except np.linalg.LinAlgError:
            step = None
        if step is None:
            if "ILL_CONDITIONED_CONCOMITANT" not in warnings:
                warnings.append("ILL_CONDITIONED_CONCOMITANT")
            step = grad / (1.0 + np.abs(grad).max())
        # halving line search guarantees a non-decreased objective
        improved = False
        for _ in range(40):
            cand = unpack(theta + step)
            cand_obj, c_int, c_slo, c_a = objective_and_grad(cand)
            if np.isfinite(cand_obj) and cand_obj >= obj:
                theta = theta + step
                obj, g_int, g_slo, a = cand_obj, c_int, c_slo, c_a
                improved = True
                break
            step = step / 2.0
        if not improved:
            break
    return unpack(theta), tuple(warnings)


def mllc_em_fit(
    data: TwoLevelDataset,
    L: int,
    H: int,
    covariates: Sequence[str] | CodedDesign | None = None,
    config: EmConfig | None = None,
) -> FitResult:
    """Fit the two-level latent class model by EM.

    The E-step forms per-unit cluster densities, class-conditional mixtures,
    and group-class posteriors (log-space); the M-step re-estimates class
    weights, item tables, and the cluster membership model (closed-form
    proportions, or the concomitant Newton step when covariates are given).
    """
    config = config or EmConfig()
    if L < 1 or H < 1:
        raise InputError(f"cluster/class counts must be >= 1, got L={L}, H={H}")
    if L > data.n_units:
        raise InputError(f"cluster count {L} exceeds unit count {data.n_units}")
    if H > data.n_groups:
        raise InputError(f"class count {H} exceeds group count {data.n_groups}")

    if isinstance(covariates, CodedDesign):
        design = covariates
    elif covariates:
        design = build_design(data, list(covariates))
    else:
        design = None
    n_coded = design.n_columns if design is not None else None
    n_par = mllc_n_params(data.schema.level_counts, L, H, n_coded)

    w = data.weights
    if L == 1:
        item = weighted_item_probs(data, w[:, None])
        if design is None:
            params = MllcParams(
                class_weights=np.full(H, 1.0 / H),
                item_probs=item,
                cluster_table=np.ones((H, 1)),
            )
        else:
            params = MllcParams(
                class_weights=np.full(H, 1.0 / H),
                item_probs=item,
                gamma=ConcomitantCoefs(
                    np.zeros((0, H)), np.zeros((0, design.n_columns)),
                    design.columns, dict(design.references),
                ),
            )
        post, ll = mllc_posteriors(data, params)
        return FitResult(
            params=params,
            loglik=ll,
            loglik_trace=np.array([ll]),
            n_iter=1,
            converged=True,
            bic=bic(ll, n_par, data.n_units),
            posteriors=post,
            n_params=n_par,
            flags=("DEGENERATE_L1",) if H > 1 else (),
        )

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    q0 = rng.dirichlet(np.ones(H), size=data.n_groups)  # group-class responsibilities
    r0 = rng.dirichlet(np.ones(L), size=data.n_units)  # unit-cluster responsibilities
    rho0 = q0[data.group_index][:, :, None] * r0[:, None, :]
    gamma0 = None
    if design is not None:
        gamma0 = ConcomitantCoefs(
            np.zeros((L - 1, H)), np.zeros((L - 1, design.n_columns)),
            design.columns, dict(design.references),
        )
    params, warn = _mllc_m_step(data, q0, rho0, r0, design, gamma0)

    trace: list[float] = []
    flags: list[str] = list(warn)
    prev = None
    converged = False
    post = None
    for _ in range(config.max_iter):
        post, ll = mllc_posteriors(data, params)
        if not np.isfinite(ll):
            raise NumericalError(f"non-finite log-likelihood at iteration {len(trace) + 1}")
        trace.append(ll)
        if prev is not None and abs(ll - prev) <= config.rel_tol * max(abs(ll), 1e-10):
            converged = True
            break
        prev = ll
        params, warn = _mllc_m_step(
            data, post.group_class, post.unit_cluster_given_class * post.group_class[data.group_index][:, :, None],
            post.unit_cluster, design, params.gamma,
        )
        for f in warn:
            if f not in flags:
                flags.append(f)
    else:
        post, ll = mllc_posteriors(data, params)
        trace.append(ll)

    return FitResult(
        params=params,
        loglik=trace[-1],
        loglik_trace=np.array(trace),
        n_iter=len(trace),
        converged=converged,
        bic=bic(trace[-1], n_par, data.n_units),
        posteriors=post,
        n_params=n_par,
        flags=tuple(flags),
    )


def _mllc_m_step(
    data: TwoLevelDataset,
    q: np.ndarray,
    rho: np.ndarray,
    m: np.ndarray,
    design: CodedDesign | None,
    gamma: ConcomitantCoefs | None,
) -> tuple[MllcParams, tuple[str, ...]]:
    w = data.weights
    class_weights = clamp_simplex(q.mean(axis=0))
    item = weighted_item_probs(data, w[:, None] * m)
    warnings: tuple[str, ...] = ()
    if design is None:
        num = np.einsum("n,nhl->hl", w, rho)
        table = clamp_simplex(num / num.sum(axis=1, keepdims=True))
        params = MllcParams(class_weights=class_weights, item_probs=item, cluster_table=table)
    else:
        gamma, warnings = concomitant_mstep(w[:, None, None] * rho, design, gamma)
        params = MllcParams(class_weights=class_weights, item_probs=item, gamma=gamma)
    return params, warnings


def _cluster_activity_order(params: LcParams | MllcParams, posteriors) -> list[int]:
    """Descending expected count of positive indicators; posterior size fallback."""
    probs = params.item_probs
    binary = all(p.shape[1] == 2 for p in probs)
    if binary:
        score = np.sum([p[:, 1] for p in probs], axis=0)
    else:
        if isinstance(posteriors, MllcPosteriors):
            score = posteriors.unit_cluster.mean(axis=0)
        else:
            score = np.asarray(posteriors).mean(axis=0)
    return list(np.argsort(-score, kind="stable"))


def canonicalize_labels(fit: FitResult) -> FitResult:
    """Reorder clusters by activity (descending) and classes by weight (descending).

    All parameter tables and posterior matrices are permuted consistently; the
    log-likelihood is unchanged. Idempotent.
    """
    params = fit.params
    if isinstance(params, LcParams):
        order = _cluster_activity_order(params, fit.posteriors)
        return replace(
            fit,
            params=params.permuted(order),
            posteriors=np.asarray(fit.posteriors)[:, order],
        )
    cluster_order = _cluster_activity_order(params, fit.posteriors)
    class_order = list(np.argsort(-params.class_weights, kind="stable"))
    return replace(
        fit,
        params=params.permuted(cluster_order, class_order),
        posteriors=fit.posteriors.permuted(cluster_order, class_order),
    )


@dataclass(frozen=True)
class GroupAssignment:
    group_id: str
    class_index: int  # 1-based
    confidence: float  # posterior probability of the modal class


def classify_groups(fit: FitResult) -> tuple[GroupAssignment, ...]:
    """Modal class per group; ties break toward the lower class index."""
    post = fit.posteriors
    if not isinstance(post, MllcPosteriors):
        raise InputError("classify_groups needs a multilevel fit")
    modal = np.argmax(post.group_class, axis=1)  # argmax returns the first maximum
    return tuple(
        GroupAssignment(gid, int(h) + 1, float(post.group_class[j, h]))
        for j, (gid, h) in enumerate(zip(post.group_ids, modal))
    )


__all__ = [
    "ConcomitantCoefs",
    "GroupAssignment",
    "MllcParams",
    "MllcPosteriors",
    "canonicalize_labels",
    "classify_groups",
    "concomitant_mstep",
    "mllc_em_fit",
    "mllc_loglik",
    "mllc_n_params",
    "mllc_posteriors",
]
