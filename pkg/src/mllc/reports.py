"""Profile and regression summaries shaped like the published analysis tables.

Percent displays round to 2 decimals; the JSON documents carry full precision
(every probability row there is an exact simplex up to 1e-10).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import TwoLevelDataset
from .errors import InputError
from .lc import FitResult, LcParams
from .multilevel import MllcParams, MllcPosteriors, classify_groups
from .regression import RegressionFit


@dataclass
class ProfileReport:
    """Cluster sizes, class-conditional cluster mix, item and covariate profiles."""

    cluster_sizes: np.ndarray  # (L,), sums to 1
    class_weights: np.ndarray  # (H,), sums to 1
    class_cluster: np.ndarray  # (H, L), rows sum to 1
    item_levels: Mapping[str, np.ndarray]  # item -> (L, S_k) simplex rows
    covariate_profiles: Mapping[str, tuple[tuple[str, ...], np.ndarray]]
    # covariate -> (categories, (L, C) matrix whose rows sum to 1)
    group_assignments: tuple = ()

    @property
    def n_clusters(self) -> int:
        return self.cluster_sizes.shape[0]

    @property
    def n_classes(self) -> int:
        return self.class_weights.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "cluster_sizes": self.cluster_sizes.tolist(),
            "class_weights": self.class_weights.tolist(),
            "class_cluster": self.class_cluster.tolist(),
            "items": {k: v.tolist() for k, v in self.item_levels.items()},
            "covariates": {
                name: {"categories": list(cats), "profiles": mat.tolist()}
                for name, (cats, mat) in self.covariate_profiles.items()
            },
            "group_assignments": [
                {"group": a.group_id, "class": a.class_index, "confidence": a.confidence}
                for a in self.group_assignments
            ],
        }

    def to_text(self) -> str:
        L = self.n_clusters
        head = [""] + [f"Cluster {l + 1}" for l in range(L)]
        widths = [28] + [10] * L

        def row(label: str, values) -> str:
            cells = [label.ljust(widths[0])]
            for v, w in zip(values, widths[1:]):
                cells.append(f"{100.0 * v:.2f}".rjust(w))
            return "".join(cells)

        lines = ["".join(h.rjust(w) if i else h.ljust(w) for i, (h, w) in enumerate(zip(head, widths)))]
        lines.append(row("Size", self.cluster_sizes))
        lines.append("Class-conditional cluster distributions (%)")
        for h in range(self.n_classes):
            lines.append(row(f"Class {h + 1} (weight {100 * self.class_weights[h]:.2f})", self.class_cluster[h]))
        lines.append("Indicators (%)")
        for name, table in self.item_levels.items():
            if table.shape[1] == 2:
                lines.append(row(name, table[:, 1]))
            else:
                for s in range(table.shape[1]):
                    lines.append(row(f"{name}={s + 1}", table[:, s]))
        if self.covariate_profiles:
            lines.append("Covariates (%)")
            for name, (cats, mat) in self.covariate_profiles.items():
                lines.append(name)
                for c, cat in enumerate(cats):
                    lines.append(row(f"  {cat}", mat[:, c]))
        if self.group_assignments:
            lines.append("Group classification (modal class, posterior)")
            for a in self.group_assignments:
                lines.append(f"  {a.group_id.ljust(26)}Class {a.class_index}   {a.confidence:.4f}")
        return "\n".join(lines) + "\n"


def profile_report(fit: FitResult, data: TwoLevelDataset, hard_assignment: bool = False) -> ProfileReport:
    """Summarize a converged fit in the published cluster-profile layout.

    Cluster sizes are weight-scaled posterior means. Covariate profiles use
    proportional (posterior-weighted) assignment to reduce classification-error
    bias; ``hard_assignment`` switches to modal assignment.
    """
    params = fit.params
    w = data.weights
    if isinstance(params, MllcParams):
        post: MllcPosteriors = fit.posteriors
        m = post.unit_cluster  # (N, L)
        class_weights = params.class_weights
        if params.cluster_table is not None:
            class_cluster = params.cluster_table
        else:
            rho = post.unit_cluster_given_class * post.group_class[data.group_index][:, :, None]
            num = np.einsum("n,nhl->hl", w, rho)
            class_cluster = num / num.sum(axis=1, keepdims=True)
        assignments = classify_groups(fit)
    elif isinstance(params, LcParams):
        m = np.asarray(fit.posteriors)
        class_weights = np.ones(1)
        class_cluster = params.cluster_weights[None, :]
        assignments = ()
    else:
        raise InputError("profile_report needs a latent class fit")

    L = m.shape[1]
    wm = w[:, None] * m
    sizes = wm.sum(axis=0) / w.sum()

    if hard_assignment:
        modal = np.argmax(m, axis=1)
        wm = np.zeros_like(m)
        wm[np.arange(m.shape[0]), modal] = w

    item_levels = {
        name: params.item_probs[k].copy()
        for k, name in enumerate(data.schema.item_names)
    }

    cov_profiles: dict[str, tuple[tuple[str, ...], np.ndarray]] = {}
    for cov in data.covariates:
        if cov.kind != "categorical":
            continue
        cats = cov.categories
        mat = np.zeros((L, len(cats)))
        values = np.asarray([str(v) for v in cov.values])
        for c, cat in enumerate(cats):
            sel = values == cat
            if np.any(sel):
                mat[:, c] = wm[sel].sum(axis=0)
        totals = mat.sum(axis=1, keepdims=True)
        mat = np.where(totals > 0, mat / np.where(totals > 0, totals, 1.0), 0.0)
        cov_profiles[cov.name] = (cats, mat)

    return ProfileReport(
        cluster_sizes=sizes,
        class_weights=np.asarray(class_weights),
        class_cluster=np.asarray(class_cluster),
        item_levels=item_levels,
        covariate_profiles=cov_profiles,
        group_assignments=assignments,
    )


def regression_report_json(fit: RegressionFit) -> dict:
    rows = []
    for c in fit.coefficients:
        rows.append(
            {
                "name": c.name,
                "covariate": c.covariate,
                "category": c.category,
                "estimate": c.estimate,
                "se": c.se,
                "p_value": c.p_value,
                "significant": c.significant,
                "implied_reference": c.implied_reference,
            }
        )
    centered = []
    if fit.thresholds.size:
        mean_k = float(np.mean(fit.thresholds))
        centered = [float(k - mean_k) for k in fit.thresholds]
    return {
        "outcome": fit.outcome,
        "model": fit.model,
        "coefficients": rows,
        "thresholds": fit.thresholds.tolist(),
        "threshold_se": fit.threshold_se.tolist(),
        "thresholds_centered": centered,
        "mean_threshold": float(np.mean(fit.thresholds)) if fit.thresholds.size else None,
        "var_u": fit.var_u,
        "var_u_se": fit.var_u_se,
        "icc": fit.icc,
        "loglik": fit.loglik,
        "converged": fit.converged,
        "gradient_norm": fit.gradient_norm,
        "n_units": fit.n_units,
        "n_groups": fit.n_groups,
        "n_excluded": fit.n_excluded,
        "quadrature_nodes": fit.quadrature_nodes,
        "flags": list(fit.flags),
    }


def regression_report_text(fit: RegressionFit) -> str:
    """Coefficient table with significance stars at p < 0.05, Var(u) and ICC rows."""
    lines = [f"Random-intercept {'ordinal (cumulative logit)' if fit.model == 'ri_ordinal' else 'logit'} model"]
    lines.append(f"Outcome: {fit.outcome}    units: {fit.n_units}  groups: {fit.n_groups}"
                 + (f"  excluded (missing outcome): {fit.n_excluded}" if fit.n_excluded else ""))
    header = f"{'term':32s}{'estimate':>10s}{'se':>10s}{'p':>8s}"
    lines.append(header)

    def fmt(name, est, se=None, p=None, star=False, note=""):
        se_s = f"{se:10.3f}" if se is not None and np.isfinite(se) else " " * 10
        p_s = f"{p:8.3f}" if p is not None and np.isfinite(p) else " " * 8
        return f"{name:32s}{est:10.3f}{se_s}{p_s}{' *' if star else ''}{note}"

    if fit.thresholds.size:
        mean_k = float(np.mean(fit.thresholds))
        lines.append(fmt("Intercept (mean threshold)", mean_k))
        for m, (k, se) in enumerate(zip(fit.thresholds, fit.threshold_se)):
            p, star = _p_from(k, se)
            lines.append(fmt(f"threshold[{m + 1}]  (centered {k - mean_k:+.3f})", k, se, p, star))
    for c in fit.coefficients:
        note = "  (implied reference)" if c.implied_reference else ""
        lines.append(fmt(c.name, c.estimate, c.se, c.p_value, c.significant, note))
    p, star = _p_from(fit.var_u, fit.var_u_se)
    lines.append(fmt("Var(u)", fit.var_u, fit.var_u_se, p, star))
    lines.append(fmt("ICC", fit.icc))
    lines.append(f"{'log-likelihood':32s}{fit.loglik:14.4f}")
    lines.append(f"{'converged':32s}{str(fit.converged):>10s}   scaled gradient norm {fit.gradient_norm:.2e}")
    if fit.flags:
        lines.append("flags: " + ", ".join(fit.flags))
    lines.append("* statistically significant effect p-value<0.05")
    return "\n".join(lines) + "\n"


def _p_from(est: float, se: float) -> tuple[float, bool]:
    if se <= 0 or not np.isfinite(se):
        return float("nan"), False
    from scipy.special import ndtr

    p = 2.0 * (1.0 - float(ndtr(abs(est / se))))
    return p, p < 0.05


def grid_report_text(result) -> str:
    lines = [f"BIC model comparison (N = {result.sample_size}, scale: {result.bic_n})"]
    lines.append(f"{'L':>3s}{'H':>3s}{'loglik':>16s}{'n_params':>10s}{'BIC':>16s}{'conv':>7s}  sel")
    for row in result.table_rows():
        sel = "  <--" if row["selected"] else ""
        if row["failed"]:
            lines.append(f"{row['L']:3d}{row['H']:3d}{'failed':>16s}")
            continue
        lines.append(
            f"{row['L']:3d}{row['H']:3d}{row['loglik']:16.4f}{row['n_params']:10d}"
            f"{row['bic']:16.4f}{row['converged_share']:7.2f}{sel}"
        )
    return "\n".join(lines) + "\n"


__all__ = [
    "ProfileReport",
    "grid_report_text",
    "profile_report",
    "regression_report_json",
    "regression_report_text",
]
