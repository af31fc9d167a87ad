"""Command-line front end: dataset loading, pipeline execution, report emission.

Commands: fit-lc, fit-mllc, fit-relogit, fit-reordinal, grid, simulate,
oracle-check, reproduce-profiles. Exit codes: 0 success, 2 input error,
3 numerical failure, 4 non-convergence (artifacts still written). All file
writes are atomic (temp-then-rename); identical configs and seeds produce
byte-identical JSON artifacts. MLLC_THREADS caps worker parallelism.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .csvio import covariate_declaration, load_csv, save_schema, write_csv
from .data import normalize_weights
from .errors import InputError, MllcError, NumericalError
from .lc import EmConfig, FitResult, lc_em_fit
from .multilevel import MllcParams, canonicalize_labels, mllc_loglik
from .regression import RegressionSpec, fit_ri_logit, fit_ri_ordinal
from .reports import (
    grid_report_text,
    profile_report,
    regression_report_json,
    regression_report_text,
)
from .selection import GridSpec, derive_seed, grid_search, multi_start_fit
from .synth import (
    ScenarioSpec,
    brute_force_loglik,
    reference_item_names,
    reference_profile_params,
    simulate_mllc,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_NONCONVERGENCE = 4


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    schema: str | None = None
    clusters: tuple[int, int] | None = None
    classes: tuple[int, int] | None = None
    covariates: tuple[str, ...] = ()
    outcome: str | None = None
    starts: int = 16
    seed: int = 0
    quadrature: int = 20
    weights: str = "none"
    tol: float = 1e-8
    max_iter: int = 500
    out: str = "mllc_out"
    format: str = "both"
    groups: int = 28
    units: int = 450
    hard_profiles: bool = False

    def echo(self) -> dict:
        d = dict(self.__dict__)
        d["clusters"] = list(self.clusters) if self.clusters else None
        d["classes"] = list(self.classes) if self.classes else None
        d["covariates"] = list(self.covariates)
        return d


def _parse_range(text: str, flag: str) -> tuple[int, int]:
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            rng = (int(lo), int(hi))
        else:
            rng = (int(text), int(text))
    except ValueError:
        raise InputError(f"{flag} expects an integer or A..B range, got {text!r}")
    if rng[0] < 1 or rng[1] < rng[0]:
        raise InputError(f"{flag} range {text!r} is empty or invalid")
    return rng


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(content)
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(out: Path, config: RunConfig, started: float, extra: dict | None = None) -> None:
    import scipy

    lines = [
        f"command: {config.command}",
        f"seed: {config.seed}",
        f"mllc: {__version__}",
        f"python: {sys.version.split()[0]}",
        f"numpy: {np.__version__}",
        f"scipy: {scipy.__version__}",
        f"config: {json.dumps(config.echo(), sort_keys=True)}",
        f"wall_time_s: {time.time() - started:.3f}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    _atomic_write(out / "manifest.txt", "\n".join(lines) + "\n")


def _fit_json(fit: FitResult) -> dict:
    params = fit.params
    if isinstance(params, MllcParams):
        if params.cluster_table is not None:
            membership = {"cluster_table": params.cluster_table.tolist()}
        else:
            membership = {
                "gamma_intercepts": params.gamma.intercepts.tolist(),
                "gamma_slopes": params.gamma.slopes.tolist(),
                "gamma_columns": [
                    {"covariate": c.covariate, "category": c.category} for c in params.gamma.columns
                ],
                "gamma_references": dict(params.gamma.references or {}),
            }
        pdoc = {
            "class_weights": params.class_weights.tolist(),
            "item_probs": [p.tolist() for p in params.item_probs],
            **membership,
        }
    else:
        pdoc = {
            "cluster_weights": params.cluster_weights.tolist(),
            "item_probs": [p.tolist() for p in params.item_probs],
        }
    return {
        "params": pdoc,
        "loglik": fit.loglik,
        "loglik_trace": np.asarray(fit.loglik_trace).tolist(),
        "n_iter": fit.n_iter,
        "converged": fit.converged,
        "bic": fit.bic,
        "n_params": fit.n_params,
        "flags": list(fit.flags),
        "start_logliks": list(fit.start_logliks),
    }


def _load(config: RunConfig):
    if not config.input or not config.schema:
        raise InputError(f"{config.command} requires --input and --schema")
    data = load_csv(config.input, config.schema)
    return normalize_weights(data, config.weights)


def _emit_fit_reports(out: Path, config: RunConfig, fit: FitResult, data) -> None:
    report = profile_report(fit, data, hard_assignment=config.hard_profiles)
    if config.format in ("json", "both"):
        _write_json(out / "fit.json", _fit_json(fit))
        _write_json(out / "profile_report.json", report.to_json_dict())
    if config.format in ("text", "both"):
        _atomic_write(out / "profile_report.txt", report.to_text())


def _single(rng_pair: tuple[int, int] | None, flag: str, default: int | None = None) -> int:
    if rng_pair is None:
        if default is None:
            raise InputError(f"missing required {flag}")
        return default
    if rng_pair[0] != rng_pair[1]:
        raise InputError(f"{flag} must be a single value for this command")
    return rng_pair[0]


def run_pipeline(config: RunConfig) -> int:
    """Execute the requested command and write its artifacts under --out."""
    started = time.time()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK

    if config.command == "fit-lc":
        data = _load(config)
        L = _single(config.clusters, "--clusters")
        fit = multi_start_fit(
            data, L, 1, starts=config.starts, seed=config.seed,
            max_iter=config.max_iter, rel_tol=config.tol,
        )
        fit = canonicalize_labels(fit)
        _emit_fit_reports(out, config, fit, data)
        print(f"fit-lc: L={L} loglik={fit.loglik:.6f} BIC={fit.bic:.4f} converged={fit.converged}")
        if not fit.converged:
            status = EXIT_NONCONVERGENCE

    elif config.command == "fit-mllc":
        data = _load(config)
        L = _single(config.clusters, "--clusters")
        H = _single(config.classes, "--classes")
        fit = multi_start_fit(
            data, L, H, starts=config.starts, seed=config.seed,
            covariates=config.covariates or None,
            max_iter=config.max_iter, rel_tol=config.tol,
        )
        fit = canonicalize_labels(fit)
        _emit_fit_reports(out, config, fit, data)
        print(f"fit-mllc: L={L} H={H} loglik={fit.loglik:.6f} BIC={fit.bic:.4f} converged={fit.converged}")
        if not fit.converged:
            status = EXIT_NONCONVERGENCE

    elif config.command in ("fit-relogit", "fit-reordinal"):
        data = _load(config)
        if not config.outcome:
            raise InputError(f"{config.command} requires --outcome")
        spec = RegressionSpec(
            outcome=config.outcome,
            covariates=config.covariates,
            quadrature_nodes=config.quadrature,
            max_iter=config.max_iter,
        )
        fit = fit_ri_logit(data, spec) if config.command == "fit-relogit" else fit_ri_ordinal(data, spec)
        if config.format in ("json", "both"):
            _write_json(out / "regression.json", regression_report_json(fit))
        if config.format in ("text", "both"):
            _atomic_write(out / "regression.txt", regression_report_text(fit))
        print(
            f"{config.command}: outcome={config.outcome} loglik={fit.loglik:.6f} "
            f"var_u={fit.var_u:.4f} ICC={fit.icc:.4f} converged={fit.converged}"
        )
        if not fit.converged:
            status = EXIT_NONCONVERGENCE

    elif config.command == "grid":
        data = _load(config)
        if config.clusters is None or config.classes is None:
            raise InputError("grid requires --clusters A..B and --classes A..B")
        grid = GridSpec(
            L_range=config.clusters,
            H_range=config.classes,
            starts=config.starts,
            seed=config.seed,
            covariates=config.covariates,
            max_iter=config.max_iter,
            rel_tol=config.tol,
        )
        result = grid_search(data, grid)
        doc = {
            "bic_n": result.bic_n,
            "sample_size": result.sample_size,
            "cells": result.table_rows(),
            "selected": {"L": result.selected.L, "H": result.selected.H, "bic": result.selected.bic},
        }
        if config.format in ("json", "both"):
            _write_json(out / "grid.json", doc)
        if config.format in ("text", "both"):
            _atomic_write(out / "grid.txt", grid_report_text(result))
        print(f"grid: selected L={result.selected.L} H={result.selected.H} BIC={result.selected.bic:.4f}")

    elif config.command == "simulate":
        params = reference_profile_params()
        scenario = ScenarioSpec(
            params=params,
            n_groups=config.groups,
            group_sizes=config.units,
            seed=config.seed,
            item_names=reference_item_names(),
        )
        data, truth = simulate_mllc(scenario)
        write_csv(out / "data.csv", data)
        save_schema(out / "schema.json", data.schema, covariate_declaration(data))
        _write_json(
            out / "truth.json",
            {
                "group_class": truth.group_class.tolist(),
                "unit_cluster": truth.unit_cluster.tolist(),
            },
        )
        print(f"simulate: wrote {data.n_units} units in {data.n_groups} groups to {out}")

    elif config.command == "oracle-check":
        agree, total, worst = _oracle_sweep(config.seed)
        _write_json(
            out / "oracle_check.json",
            {"agreements": agree, "instances": total, "max_abs_diff": worst, "tolerance": 1e-10},
        )
        print(f"oracle-check: {agree}/{total} tiny-instance agreements (max |diff| = {worst:.2e})")
        if agree != total:
            status = EXIT_NUMERICAL

    elif config.command == "reproduce-profiles":
        status = _reproduce_profiles(out, config)

    else:
        raise InputError(f"unknown command {config.command!r}")

    _manifest(out, config, started)
    return status


def _oracle_sweep(seed: int, n_instances: int = 100) -> tuple[int, int, float]:
    """Randomized tiny instances: enumeration oracle vs estimator likelihood."""
    from .tiny import random_tiny_instance

    agree = 0
    worst = 0.0
    for r in range(n_instances):
        data, params = random_tiny_instance(derive_seed(seed, r))
        diff = abs(mllc_loglik(data, params) - brute_force_loglik(data, params))
        worst = max(worst, diff)
        if diff < 1e-10:
            agree += 1
    return agree, n_instances, worst


def _reproduce_profiles(out: Path, config: RunConfig) -> int:
    """Simulate from the benchmark profile, refit (6, 4), report deviations."""
    params = reference_profile_params()
    scenario = ScenarioSpec(
        params=params,
        n_groups=config.groups,
        group_sizes=config.units,
        seed=config.seed,
        item_names=reference_item_names(),
    )
    data, truth = simulate_mllc(scenario)
    fit = multi_start_fit(
        data, params.n_clusters, params.n_classes,
        starts=config.starts, seed=config.seed,
        max_iter=config.max_iter, rel_tol=config.tol,
    )
    fit = canonicalize_labels(fit)
    _emit_fit_reports(out, config, fit, data)

    from .align import align_clusters

    perm = align_clusters(fit.params.item_probs, params.item_probs)
    max_dev = 0.0
    for k in range(len(params.item_probs)):
        est = np.asarray(fit.params.item_probs[k])[perm]
        max_dev = max(max_dev, float(np.abs(est - params.item_probs[k]).max()))
    report = profile_report(fit, data)
    w = data.weights
    true_sizes = np.array(
        [np.sum(w[truth.unit_cluster == l]) for l in range(params.n_clusters)]
    ) / w.sum()
    size_dev = float(np.abs(report.cluster_sizes[perm] - true_sizes).max())
    _write_json(
        out / "recovery_summary.json",
        {
            "max_abs_item_prob_deviation": max_dev,
            "max_abs_cluster_size_deviation": size_dev,
            "loglik": fit.loglik,
            "converged": fit.converged,
        },
    )
    print(
        f"reproduce-profiles: max |item prob - truth| = {max_dev:.4f}, "
        f"max |cluster size - realized truth| = {size_dev:.4f}"
    )
    return EXIT_OK if fit.converged else EXIT_NONCONVERGENCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mllc",
        description="Latent class, multilevel latent class, and random-intercept "
        "regression models for two-level categorical survey data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data=False, mixture=False, regression=False, sim=False):
        if data:
            p.add_argument("--input", help="dataset CSV path")
            p.add_argument("--schema", help="schema JSON path")
            p.add_argument("--weights", choices=["none", "per_group", "global"], default="none",
                           help="survey weight normalization")
        if mixture:
            p.add_argument("--clusters", help="cluster count L, or range A..B for grid")
            p.add_argument("--classes", help="class count H, or range A..B for grid")
            p.add_argument("--covariates", help="comma-separated concomitant covariate names")
            p.add_argument("--starts", type=int, default=16, help="EM restarts per fit")
            p.add_argument("--tol", type=float, default=1e-8, help="relative log-likelihood tolerance")
        if regression:
            p.add_argument("--outcome", help="outcome item name")
            p.add_argument("--covariates", help="comma-separated covariate names")
            p.add_argument("--quadrature", type=int, default=20, help="Gauss-Hermite nodes")
        if sim:
            p.add_argument("--groups", type=int, default=28, help="number of level-2 groups")
            p.add_argument("--units", type=int, default=450, help="units per group")
            p.add_argument("--starts", type=int, default=16)
            p.add_argument("--tol", type=float, default=1e-8)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-iter", type=int, default=500)
        p.add_argument("--out", default="mllc_out", help="output directory")
        p.add_argument("--format", choices=["text", "json", "both"], default="both")

    common(sub.add_parser("fit-lc", help="fit a single-level latent class model"),
           data=True, mixture=True)
    common(sub.add_parser("fit-mllc", help="fit the multilevel latent class model"),
           data=True, mixture=True)
    common(sub.add_parser("fit-relogit", help="fit a random-intercept binary logit"),
           data=True, regression=True)
    common(sub.add_parser("fit-reordinal", help="fit a random-intercept cumulative logit"),
           data=True, regression=True)
    common(sub.add_parser("grid", help="BIC grid search over (clusters, classes)"),
           data=True, mixture=True)
    common(sub.add_parser("simulate", help="simulate from the benchmark profile parameters"),
           sim=True)
    common(sub.add_parser("oracle-check", help="enumeration oracle vs estimator on tiny instances"))
    p = sub.add_parser("reproduce-profiles",
                       help="simulate from the benchmark profiles, refit, report recovery")
    common(p, sim=True)
    p.add_argument("--hard-profiles", action="store_true",
                   help="modal instead of proportional covariate profiles")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    covs: tuple[str, ...] = ()
    if getattr(args, "covariates", None):
        covs = tuple(s.strip() for s in args.covariates.split(",") if s.strip())
    clusters = _parse_range(args.clusters, "--clusters") if getattr(args, "clusters", None) else None
    classes = _parse_range(args.classes, "--classes") if getattr(args, "classes", None) else None
    return RunConfig(
        command=args.command,
        input=getattr(args, "input", None),
        schema=getattr(args, "schema", None),
        clusters=clusters,
        classes=classes,
        covariates=covs,
        outcome=getattr(args, "outcome", None),
        starts=getattr(args, "starts", 16),
        seed=args.seed,
        quadrature=getattr(args, "quadrature", 20),
        weights=getattr(args, "weights", "none"),
        tol=getattr(args, "tol", 1e-8),
        max_iter=args.max_iter,
        out=args.out,
        format=args.format,
        groups=getattr(args, "groups", 28),
        units=getattr(args, "units", 450),
        hard_profiles=getattr(args, "hard_profiles", False),
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        return run_pipeline(config)
    except InputError as exc:
        print(json.dumps({"error": str(exc), "type": "input"}), file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(json.dumps({"error": str(exc), "type": "numerical"}), file=sys.stderr)
        return EXIT_NUMERICAL
    except MllcError as exc:
        print(json.dumps({"error": str(exc), "type": "error"}), file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
