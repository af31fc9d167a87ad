"""Random-intercept binary logit and cumulative-logit ordinal regression.

The group-level random intercept u_j ~ Normal(0, var_u) is integrated out by
non-adaptive Gauss-Hermite quadrature; survey weights exponentiate each unit's
likelihood factor. The latent-response residual is logistic with scale fixed
at 1, so the intra-class correlation is var_u / (var_u + 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, ndtr

from .data import CodedDesign, TwoLevelDataset, build_design
from .errors import InputError, NumericalError

SEPARATION_BOUND = 15.0  # |beta| beyond this flags quasi-complete separation


@dataclass
class RegressionSpec:
    """Outcome item, covariates (effect-coded by default), and quadrature size."""

    outcome: str
    covariates: tuple[str, ...] = ()
    references: Mapping[str, str] | None = None
    quadrature_nodes: int = 20
    max_iter: int = 200

    def __post_init__(self):
        if self.quadrature_nodes < 5:
            raise InputError(f"quadrature_nodes must be >= 5, got {self.quadrature_nodes}")
        self.covariates = tuple(self.covariates)


@dataclass(frozen=True)
class RegressionData:
    """Design and outcome arrays prepared for one regression model.

    Units with a missing outcome are excluded (their count is recorded);
    groups left empty by exclusion are dropped. For a binary outcome ``y`` is
    0/1 (level 2 counts as the positive response) and ``x`` starts with an
    intercept column; for an ordinal outcome ``y`` is the 1..M level and ``x``
    holds only the coded covariates.
    """

    y: np.ndarray  # (N,)
    x: np.ndarray  # (N, P)
    weights: np.ndarray  # (N,)
    group_index: np.ndarray  # (N,)
    group_ids: tuple[str, ...]
    design: CodedDesign
    n_levels: int
    n_excluded: int

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_groups(self) -> int:
        return len(self.group_ids)

    @property
    def group_starts(self) -> np.ndarray:
        sizes = np.bincount(self.group_index, minlength=self.n_groups)
        return np.concatenate(([0], np.cumsum(sizes)[:-1]))


def build_regression_data(
    data: TwoLevelDataset, spec: RegressionSpec, binary: bool
) -> RegressionData:
    k = data.schema.item_index(spec.outcome)
    levels = data.schema.level_counts[k]
    col = data.responses[:, k]
    keep = col != 0
    n_excluded = int((~keep).sum())
    design = build_design(data, spec.covariates, spec.references)

    if binary:
        if levels != 2:
            raise InputError(f"outcome {spec.outcome!r} has {levels} levels; binary logit needs 2")
        y = (col[keep] == 2).astype(float)
    else:
        y = col[keep].astype(np.int64)
        if np.unique(y).size < 2:
            raise InputError(f"outcome {spec.outcome!r} is degenerate: all units share one level")

    gidx_old = data.group_index[keep]
    kept_groups = np.unique(gidx_old)
    remap = -np.ones(data.n_groups, dtype=np.int64)
    remap[kept_groups] = np.arange(kept_groups.size)
    x_cov = design.matrix[keep]
    x = np.column_stack([np.ones(y.shape[0]), x_cov]) if binary else x_cov
    return RegressionData(
        y=y,
        x=x,
        weights=data.weights[keep],
        group_index=remap[gidx_old],
        group_ids=tuple(data.group_ids[j] for j in kept_groups),
        design=design,
        n_levels=levels,
        n_excluded=n_excluded,
    )


@dataclass(frozen=True)
class Coefficient:
    name: str
    estimate: float
    se: float
    p_value: float
    significant: bool  # p < 0.05
    covariate: str | None = None
    category: str | None = None
    implied_reference: bool = False


@dataclass
class RegressionFit:
    """Fixed effects with Wald inference, thresholds, variance and ICC."""

    outcome: str
    model: str  # "ri_logit" | "ri_ordinal"
    coefficients: tuple[Coefficient, ...]
    thresholds: np.ndarray  # ordinal cut points, strictly increasing; empty for binary
    threshold_se: np.ndarray
    var_u: float
    var_u_se: float
    icc: float
    loglik: float
    converged: bool
    n_iter: int
    gradient_norm: float
    n_units: int
    n_groups: int
    n_excluded: int
    quadrature_nodes: int
    flags: tuple[str, ...] = ()
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_se: np.ndarray = field(default_factory=lambda: np.zeros(0))


def compute_icc(var_u: float, logistic_residual: bool = False) -> float:
    """Share of total dispersion at the group level.

    Default scale convention fixes the residual at 1, giving
    var_u / (var_u + 1); ``logistic_residual`` switches to the latent-logistic
    convention var_u / (var_u + pi^2 / 3).
    """
    if var_u < 0:
        raise InputError(f"variance must be >= 0, got {var_u}")
    resid = math.pi**2 / 3.0 if logistic_residual else 1.0
    return var_u / (var_u + resid)


def _gh(q: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.hermite.hermgauss(q)
    return nodes, np.log(weights) - 0.5 * math.log(math.pi)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _binary_terms(rd: RegressionData, beta: np.ndarray, sigma: float, q_nodes: int):
    """Per-group quadrature scores S (J,Q) and per-obs residuals for gradients."""
    t, logw = _gh(q_nodes)
    u = math.sqrt(2.0) * sigma * t  # (Q,)
    eta = (rd.x @ beta)[:, None] + u[None, :]  # (N, Q)
    ll = rd.y[:, None] * (-_softplus(-eta)) + (1.0 - rd.y)[:, None] * (-_softplus(eta))
    s = np.add.reduceat(rd.weights[:, None] * ll, rd.group_starts, axis=0)
    return t, logw, eta, s


def ri_logit_loglik(rd: RegressionData, beta: np.ndarray, var_u: float, q_nodes: int) -> float:
    """Marginal weighted log-likelihood of the random-intercept logit model."""
    if var_u < 0:
        raise InputError(f"var_u must be >= 0, got {var_u}")
    beta = np.asarray(beta, dtype=float)
    _, logw, _, s = _binary_terms(rd, beta, math.sqrt(var_u), q_nodes)
    group_log = _logsumexp_rows(logw[None, :] + s)
    return float(group_log.sum())


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def ri_logit_score(rd: RegressionData, beta: np.ndarray, var_u: float, q_nodes: int) -> np.ndarray:
    """Analytic gradient of ri_logit_loglik in (beta, var_u); needs var_u > 0."""
    if var_u <= 0:
        raise InputError(f"score needs var_u > 0, got {var_u}")
    beta = np.asarray(beta, dtype=float)
    sigma = math.sqrt(var_u)
    t, logw, eta, s = _binary_terms(rd, beta, sigma, q_nodes)
    scores = logw[None, :] + s
    alpha = np.exp(scores - _logsumexp_rows(scores)[:, None])  # (J, Q)
    a_unit = alpha[rd.group_index]  # (N, Q)
    resid = rd.weights[:, None] * (rd.y[:, None] - expit(eta))  # (N, Q)
    weighted = a_unit * resid
    grad_beta = rd.x.T @ weighted.sum(axis=1)
    grad_sigma = float(np.sum(weighted * (math.sqrt(2.0) * t)[None, :]))
    grad_var = grad_sigma / (2.0 * sigma)
    return np.concatenate([grad_beta, [grad_var]])


def _log1mexp(z: np.ndarray) -> np.ndarray:
    """log(1 - exp(z)) for z < 0, stable near both ends."""
    out = np.empty_like(z)
    small = z < -math.log(2.0)
    out[small] = np.log1p(-np.exp(z[small]))
    out[~small] = np.log(-np.expm1(z[~small]))
    return out


def _ordinal_obs(y: np.ndarray, kappa: np.ndarray, eta: np.ndarray):
    """Stable log P(y|eta), d/d eta, and d/d kappa for the cumulative logit.

    y is (N,) in 1..M; eta is (N, Q); returns arrays shaped (N, Q) plus a
    (N, Q, M-1) threshold-derivative tensor.
    """
    n, q = eta.shape
    m_levels = kappa.shape[0] + 1
    logp = np.empty((n, q))
    dlogp_deta = np.empty((n, q))
    dlogp_dkappa = np.zeros((n, q, m_levels - 1))

    for m in range(1, m_levels + 1):
        sel = y == m
        if not np.any(sel):
            continue
        e = eta[sel]
        if m == 1:
            b = kappa[0] - e
            lp = -_softplus(-b)
            fb = expit(b) * expit(-b)
            p = np.exp(lp)
            dde = -fb / p
            logp[sel] = lp
            dlogp_deta[sel] = dde
            dlogp_dkappa[sel, :, 0] = fb / p
        elif m == m_levels:
            a = kappa[m - 2] - e
            lp = -_softplus(a)
            fa = expit(a) * expit(-a)
            p = np.exp(lp)
            logp[sel] = lp
            dlogp_deta[sel] = fa / p
            dlogp_dkappa[sel, :, m - 2] = -fa / p
        else:
            a = kappa[m - 2] - e
            b = kappa[m - 1] - e
            lp = b + _log1mexp(a - b) - _softplus(a) - _softplus(b)
            p = np.exp(lp)
            fa = expit(a) * expit(-a)
            fb = expit(b) * expit(-b)
            logp[sel] = lp
            dlogp_deta[sel] = (fa - fb) / p
            dlogp_dkappa[sel, :, m - 1] = fb / p
            dlogp_dkappa[sel, :, m - 2] = -fa / p
    return logp, dlogp_deta, dlogp_dkappa


def _check_thresholds(kappa: np.ndarray) -> None:
    if np.any(np.diff(kappa) <= 0):
        raise InputError("thresholds must be strictly increasing")


def ri_ordinal_loglik(
    rd: RegressionData, thresholds: np.ndarray, beta: np.ndarray, var_u: float, q_nodes: int
) -> float:
    """Marginal weighted log-likelihood of the random-intercept cumulative logit."""
    if var_u < 0:
        raise InputError(f"var_u must be >= 0, got {var_u}")
    kappa = np.asarray(thresholds, dtype=float)
    _check_thresholds(kappa)
    beta = np.asarray(beta, dtype=float)
    t, logw = _gh(q_nodes)
    u = math.sqrt(2.0 * var_u) * t
    eta = (rd.x @ beta)[:, None] + u[None, :]
    logp, _, _ = _ordinal_obs(rd.y, kappa, eta)
    s = np.add.reduceat(rd.weights[:, None] * logp, rd.group_starts, axis=0)
    return float(_logsumexp_rows(logw[None, :] + s).sum())


def ri_ordinal_score(
    rd: RegressionData, thresholds: np.ndarray, beta: np.ndarray, var_u: float, q_nodes: int
) -> np.ndarray:
    """Analytic gradient in (thresholds, beta, var_u); needs var_u > 0."""
    if var_u <= 0:
        raise InputError(f"score needs var_u > 0, got {var_u}")
    kappa = np.asarray(thresholds, dtype=float)
    _check_thresholds(kappa)
    beta = np.asarray(beta, dtype=float)
    sigma = math.sqrt(var_u)
    t, logw = _gh(q_nodes)
    u = math.sqrt(2.0) * sigma * t
    eta = (rd.x @ beta)[:, None] + u[None, :]
    logp, dde, ddk = _ordinal_obs(rd.y, kappa, eta)
    s = np.add.reduceat(rd.weights[:, None] * logp, rd.group_starts, axis=0)
    scores = logw[None, :] + s
    alpha = np.exp(scores - _logsumexp_rows(scores)[:, None])
    a_unit = alpha[rd.group_index]  # (N, Q)
    w_eta = rd.weights[:, None] * a_unit * dde  # (N, Q)
    grad_beta = rd.x.T @ w_eta.sum(axis=1)
    grad_sigma = float(np.sum(w_eta * (math.sqrt(2.0) * t)[None, :]))
    grad_kappa = np.einsum("nq,nqm->m", rd.weights[:, None] * a_unit, ddk)
    return np.concatenate([grad_kappa, grad_beta, [grad_sigma / (2.0 * sigma)]])


def _kappa_from_raw(raw: np.ndarray) -> np.ndarray:
    """Monotone reparameterization: first cut free, later gaps on the log scale."""
    kappa = np.empty_like(raw)
    kappa[0] = raw[0]
    if raw.shape[0] > 1:
        kappa[1:] = raw[0] + np.cumsum(np.exp(raw[1:]))
    return kappa


def _raw_from_kappa(kappa: np.ndarray) -> np.ndarray:
    raw = np.empty_like(kappa)
    raw[0] = kappa[0]
    if kappa.shape[0] > 1:
        raw[1:] = np.log(np.diff(kappa))
    return raw


_LOG_SIGMA_BOUNDS = (-10.0, 5.0)


def _fit_marginal(rd: RegressionData, spec: RegressionSpec, ordinal: bool):
    """Shared quasi-Newton driver; returns presentation parameters and traces."""
    q_nodes = spec.quadrature_nodes
    n_cuts = rd.n_levels - 1 if ordinal else 0
    wsum = rd.weights.sum()

    if ordinal:
        # start thresholds at weighted cumulative log-odds, slopes at zero
        cum = np.array(
            [np.sum(rd.weights[rd.y <= m]) / wsum for m in range(1, rd.n_levels)]
        )
        cum = np.clip(cum, 1e-4, 1 - 1e-4)
        kappa0 = np.log(cum / (1 - cum))
        for m in range(1, n_cuts):  # enforce strict increase for the log-gap map
            kappa0[m] = max(kappa0[m], kappa0[m - 1] + 1e-4)
        theta0 = np.concatenate([_raw_from_kappa(kappa0), np.zeros(rd.x.shape[1]), [math.log(0.5)]])
    else:
        p_bar = float(np.clip((rd.weights @ rd.y) / wsum, 1e-4, 1 - 1e-4))
        beta0 = np.zeros(rd.x.shape[1])
        beta0[0] = math.log(p_bar / (1 - p_bar))
        theta0 = np.concatenate([beta0, [math.log(0.5)]])

    def split(theta):
        if ordinal:
            raw = theta[:n_cuts]
            beta = theta[n_cuts:-1]
            return _kappa_from_raw(raw), beta, theta[-1]
        return None, theta[:-1], theta[-1]

    def negloglik_and_grad(theta):
        kappa, beta, log_sigma = split(theta)
        sigma = math.exp(log_sigma)
        var = sigma * sigma
        if ordinal:
            score = ri_ordinal_score(rd, kappa, beta, var, q_nodes)
            ll = ri_ordinal_loglik(rd, kappa, beta, var, q_nodes)
            g_kappa = score[:n_cuts]
            g_beta = score[n_cuts:-1]
            g_var = score[-1]
            # chain rule through the monotone threshold map
            raw = theta[:n_cuts]
            g_raw = np.empty(n_cuts)
            csum = np.cumsum(g_kappa[::-1])[::-1]  # sum_{m>=r} g_kappa[m]
            g_raw[0] = csum[0]
            if n_cuts > 1:
                g_raw[1:] = np.exp(raw[1:]) * csum[1:]
            grad = np.concatenate([g_raw, g_beta, [g_var * 2.0 * var]])
        else:
            score = ri_logit_score(rd, beta, var, q_nodes)
            ll = ri_logit_loglik(rd, beta, var, q_nodes)
            grad = np.concatenate([score[:-1], [score[-1] * 2.0 * var]])
        if not np.isfinite(ll):
            raise NumericalError("non-finite log-likelihood during optimization")
        return -ll, -grad

    bounds = [(None, None)] * (theta0.size - 1) + [_LOG_SIGMA_BOUNDS]
    result = minimize(
        negloglik_and_grad,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": spec.max_iter, "ftol": 1e-13, "gtol": 1e-9, "maxcor": 25},
    )
    kappa, beta, log_sigma = split(result.x)
    var = math.exp(2.0 * log_sigma)
    ll = -result.fun
    grad_norm = float(np.abs(result.jac).max()) / max(1.0, abs(ll))
    converged = bool(grad_norm < 1e-5)
    return kappa, beta, var, ll, converged, int(result.nit), grad_norm


def _observed_information(score_fn, psi: np.ndarray) -> np.ndarray:
    """Negative Jacobian of the analytic score by central differences."""
    d = psi.size
    info = np.zeros((d, d))
    for p in range(d):
        h = 1e-5 * max(1.0, abs(psi[p]))
        up, dn = psi.copy(), psi.copy()
        up[p] += h
        dn[p] -= h
        info[:, p] = -(score_fn(up) - score_fn(dn)) / (2.0 * h)
    return 0.5 * (info + info.T)


def _wald(est: float, se: float) -> tuple[float, bool]:
    if se <= 0 or not np.isfinite(se):
        return float("nan"), False
    p = 2.0 * (1.0 - float(ndtr(abs(est / se))))
    return p, p < 0.05


def _coefficient_rows(
    rd: RegressionData, names: list[str], beta: np.ndarray, beta_se: np.ndarray,
    cov_beta: np.ndarray,
) -> tuple[Coefficient, ...]:
    rows = []
    offset = len(names) - len(rd.design.columns)  # 1 when an intercept column leads
    for idx, name in enumerate(names):
        col = rd.design.columns[idx - offset] if idx >= offset else None
        p, sig = _wald(beta[idx], beta_se[idx])
        rows.append(
            Coefficient(
                name=name,
                estimate=float(beta[idx]),
                se=float(beta_se[idx]),
                p_value=p,
                significant=sig,
                covariate=col.covariate if col else None,
                category=col.category if col else None,
            )
        )
    # implied reference effects: minus the sum of a covariate's estimated effects
    for cov_name, ref in rd.design.references.items():
        cols = [offset + p for p in rd.design.columns_for(cov_name)]
        est = -float(np.sum(beta[cols]))
        var = float(np.ones(len(cols)) @ cov_beta[np.ix_(cols, cols)] @ np.ones(len(cols)))
        se = math.sqrt(max(var, 0.0))
        p, sig = _wald(est, se)
        rows.append(
            Coefficient(
                name=f"{cov_name}[{ref}]",
                estimate=est,
                se=se,
                p_value=p,
                significant=sig,
                covariate=cov_name,
                category=ref,
                implied_reference=True,
            )
        )
    return tuple(rows)


def _column_names(rd: RegressionData, intercept: bool) -> list[str]:
    names = ["Intercept"] if intercept else []
    for col in rd.design.columns:
        names.append(col.covariate if col.category is None else f"{col.covariate}[{col.category}]")
    return names


def fit_ri_logit(data: TwoLevelDataset, spec: RegressionSpec) -> RegressionFit:
    """Maximum-likelihood fit of the random-intercept binary logit model.

    Optimizes (beta, log sigma_u) by L-BFGS-B with analytic gradients;
    standard errors come from the inverse observed information in the
    (beta, var_u) parameterization, p-values from two-sided normal Wald tests.
    """
    rd = build_regression_data(data, spec, binary=True)
    kappa, beta, var, ll, converged, n_iter, grad_norm = _fit_marginal(rd, spec, ordinal=False)
    q_nodes = spec.quadrature_nodes

    psi = np.concatenate([beta, [max(var, 1e-8)]])

    def score_psi(p):
        return ri_logit_score(rd, p[:-1], p[-1], q_nodes)

    info = _observed_information(score_psi, psi)
    cov, se, flags = _invert_information(info)
    beta_se = se[:-1]
    var_se = se[-1]
    if np.any(np.abs(beta) > SEPARATION_BOUND):
        flags = flags + ("SEPARATION",)

    names = _column_names(rd, intercept=True)
    coefs = _coefficient_rows(rd, names, beta, beta_se, cov[:-1, :-1])
    return RegressionFit(
        outcome=spec.outcome,
        model="ri_logit",
        coefficients=coefs,
        thresholds=np.zeros(0),
        threshold_se=np.zeros(0),
        var_u=float(var),
        var_u_se=float(var_se),
        icc=compute_icc(var),
        loglik=ll,
        converged=converged,
        n_iter=n_iter,
        gradient_norm=grad_norm,
        n_units=rd.n_units,
        n_groups=rd.n_groups,
        n_excluded=rd.n_excluded,
        quadrature_nodes=q_nodes,
        flags=flags,
        beta=beta,
        beta_se=beta_se,
    )


def fit_ri_ordinal(data: TwoLevelDataset, spec: RegressionSpec) -> RegressionFit:
    """Maximum-likelihood fit of the random-intercept cumulative-logit model.

    Proportional odds with M-1 strictly increasing thresholds (kept monotone
    by optimizing log gaps); otherwise identical machinery to fit_ri_logit.
    """
    rd = build_regression_data(data, spec, binary=False)
    kappa, beta, var, ll, converged, n_iter, grad_norm = _fit_marginal(rd, spec, ordinal=True)
    q_nodes = spec.quadrature_nodes
    n_cuts = kappa.shape[0]

    psi = np.concatenate([kappa, beta, [max(var, 1e-8)]])

    def score_psi(p):
        return ri_ordinal_score(rd, p[:n_cuts], p[n_cuts:-1], p[-1], q_nodes)

    info = _observed_information(score_psi, psi)
    cov, se, flags = _invert_information(info)
    kappa_se = se[:n_cuts]
    beta_se = se[n_cuts:-1]
    var_se = se[-1]
    if beta.size and np.any(np.abs(beta) > SEPARATION_BOUND):
        flags = flags + ("SEPARATION",)

    names = _column_names(rd, intercept=False)
    cov_beta = cov[n_cuts:-1, n_cuts:-1]
    coefs = _coefficient_rows(rd, names, beta, beta_se, cov_beta)
    return RegressionFit(
        outcome=spec.outcome,
        model="ri_ordinal",
        coefficients=coefs,
        thresholds=kappa,
        threshold_se=kappa_se,
        var_u=float(var),
        var_u_se=float(var_se),
        icc=compute_icc(var),
        loglik=ll,
        converged=converged,
        n_iter=n_iter,
        gradient_norm=grad_norm,
        n_units=rd.n_units,
        n_groups=rd.n_groups,
        n_excluded=rd.n_excluded,
        quadrature_nodes=q_nodes,
        flags=flags,
        beta=beta,
        beta_se=beta_se,
    )


def _invert_information(info: np.ndarray) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    flags: tuple[str, ...] = ()
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
        flags = ("SINGULAR_INFORMATION",)
    diag = np.diag(cov).copy()
    bad = ~np.isfinite(diag) | (diag < 0)
    if np.any(bad):
        diag[bad] = np.nan
        if "SINGULAR_INFORMATION" not in flags:
            flags = flags + ("SINGULAR_INFORMATION",)
    return cov, np.sqrt(diag), flags


__all__ = [
    "Coefficient",
    "RegressionData",
    "RegressionFit",
    "RegressionSpec",
    "build_regression_data",
    "compute_icc",
    "fit_ri_logit",
    "fit_ri_ordinal",
    "ri_logit_loglik",
    "ri_logit_score",
    "ri_ordinal_loglik",
    "ri_ordinal_score",
]
