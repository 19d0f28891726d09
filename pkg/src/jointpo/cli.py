"""Command-line interface.

Subcommands: ``estimate`` (transition matrix, per-trial joint tables and
derived quantities), ``test`` (overidentification test of transition
transportability), ``psace`` (principal stratification effects),
``target`` (transport to a control-only target population) and
``simulate`` (Monte Carlo studies).

Reports are canonical JSON (sorted keys) written to stdout or
``--output``; identical inputs, statistical flags and seed produce
byte-identical reports regardless of ``--workers``. Exit codes: 0
success, 2 validation, 3 identification, 4 inference failure. Errors
are mirrored as a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .data import ColumnSchema, parse_dataset, summarize
from .errors import (
    IdentificationError,
    InferenceError,
    JointpoError,
    JointpoWarning,
    ValidationError,
)
from .inference import (
    BootstrapConfig,
    bootstrap,
    overid_test,
    transition_residuals,
)
from .principal import (
    STRATA,
    method1_estimate,
    method4_estimate,
    monotone_variant_estimate,
    principal_scores,
)
from .report import (
    canonical_json,
    file_digest,
    format_study_table,
    replicates_to_csv,
    study_to_dict,
    text_digest,
)
from .simulate import DgpSpec, run_study
from .transition import (
    binary_transition_params,
    build_system,
    check_rank,
    derived_estimands,
    joint_from_transitions,
    solve_transitions,
)

_EXIT_FOR = (
    (ValidationError, 2),
    (IdentificationError, 3),
    (InferenceError, 4),
)


def _exit_code(exc: JointpoError) -> int:
    for cls, code in _EXIT_FOR:
        if isinstance(exc, cls):
            return code
    return 2


def _parse_columns(text: str | None) -> ColumnSchema:
    if not text:
        return ColumnSchema()
    mapping = {}
    for part in text.split(","):
        if "=" not in part:
            raise ValidationError(f"bad --columns entry {part!r}; use name=column")
        key, value = part.split("=", 1)
        mapping[key.strip()] = value.strip()
    allowed = {"trial", "arm", "s", "y", "count", "target"}
    unknown = set(mapping) - allowed
    if unknown:
        raise ValidationError(f"unknown --columns keys: {', '.join(sorted(unknown))}")
    return ColumnSchema(
        trial=mapping.get("trial", "trial"),
        arm=mapping.get("arm", "arm"),
        surrogate=mapping.get("s", "s"),
        outcome=mapping.get("y", "y"),
        count=mapping.get("count", "count"),
        target_label=mapping.get("target", "0"),
    )


def _require_seed(args) -> None:
    if args.seed is None:
        raise ValidationError(
            "--seed is required for stochastic commands (no silent entropy)"
        )


def _load(args):
    schema = _parse_columns(getattr(args, "columns", None))
    path = Path(args.input)
    if not path.exists():
        raise ValidationError(f"input file not found: {path}")
    dataset = parse_dataset(path, schema)
    info = {"path": str(path), "sha256": file_digest(path)}
    return dataset, info


def _rank_dict(diag) -> dict:
    out = {
        "singular_values": list(diag.singular_values),
        "condition_ratio": diag.condition_ratio,
        "satisfied": diag.satisfied,
        "feasible": diag.feasible,
        "reason": diag.reason,
        "tol_ratio": diag.tol_ratio,
    }
    if diag.columns is not None:
        out["columns"] = [
            {
                "target": c.target,
                "sources": list(c.sources),
                "singular_values": list(c.singular_values),
                "condition_ratio": c.condition_ratio,
                "satisfied": c.satisfied,
                "mode": c.mode,
                "reason": c.reason,
            }
            for c in diag.columns
        ]
    else:
        out["columns"] = None
    return out


def _params_dict(names, point, variance, ci_level) -> dict:
    out = {
        "names": list(names),
        "point": np.asarray(point, dtype=float),
        "ci_level": ci_level,
    }
    if variance is None:
        out.update(se=None, ci_lower=None, ci_upper=None, n_failed=None)
    else:
        out.update(
            se=variance.se,
            ci_lower=variance.ci_lower,
            ci_upper=variance.ci_upper,
            n_failed=variance.n_failed,
        )
    return out


def _estimands_dict(est) -> dict:
    return {
        "thr": est.treatment_harm_rate,
        "tbr": est.treatment_benefit_rate,
        "persuasion_rate": est.persuasion_rate,
        "ps": est.prob_sufficient_causation,
        "pn": est.prob_necessary_causation,
    }


def _control_marginal(summary, space):
    if space == "outcome":
        return summary.control_outcome
    if space == "surrogate":
        return summary.control_surrogate
    return summary.control_composite


def _treated_marginal(summary, space):
    if space == "outcome":
        return summary.treated_outcome
    if space == "surrogate":
        return summary.treated_surrogate
    return summary.treated_composite


def _estimand_vector(est) -> list[float]:
    return [
        est.treatment_harm_rate,
        est.treatment_benefit_rate,
        np.nan if est.persuasion_rate is None else est.persuasion_rate,
        np.nan if est.prob_necessary_causation is None else est.prob_necessary_causation,
    ]


def _transition_dict(trans) -> dict:
    return {
        "state_labels": list(trans.state_labels),
        "probs": trans.probs,
        "support_mask": trans.support_mask,
        "determined": trans.determined,
        "projected": trans.projected,
        "out_of_range": trans.out_of_range,
        "forced": trans.forced,
    }


def cmd_estimate(args) -> dict:
    dataset, info = _load(args)
    summaries = summarize(dataset)
    system = build_system(
        summaries, args.space, mono_s=args.mono_s, mono_y=args.mono_y
    )
    diag = check_rank(system)
    trans = solve_transitions(
        system, project_simplex=args.project, force=args.force
    )
    two_state = len(trans.state_labels) == 2

    per_trial = []
    for summary in summaries.trials:
        marginal = _control_marginal(summary, args.space)
        joint = joint_from_transitions(trans, marginal, summary.trial_id)
        entry = {
            "trial": summary.trial_id,
            "control_marginal": marginal,
            "treated_marginal": _treated_marginal(summary, args.space),
            "joint": joint.table,
            "negative_mass": joint.negative_mass,
            "estimands": _estimands_dict(derived_estimands(joint)) if two_state else None,
        }
        per_trial.append(entry)

    names = list(trans.parameter_labels())
    point = list(trans.parameter_values())
    if two_state:
        for summary in summaries.trials:
            for label in ("THR", "TBR", "persuasion", "PN"):
                names.append(f"{label}[{summary.trial_id}]")
        for entry in per_trial:
            est = derived_estimands(np.asarray(entry["joint"]))
            point.extend(_estimand_vector(est))

    variance = None
    if args.boot > 0:
        _require_seed(args)
        config = BootstrapConfig(
            replicates=args.boot,
            seed=args.seed,
            ci_level=args.ci,
            ci_method=args.ci_method,
        )

        def estimator(ds):
            s = summarize(ds)
            sys_b = build_system(s, args.space, mono_s=args.mono_s, mono_y=args.mono_y)
            t = solve_transitions(sys_b, project_simplex=args.project, force=True)
            values = list(t.parameter_values())
            if two_state:
                for summary in s.trials:
                    joint = joint_from_transitions(
                        t, _control_marginal(summary, args.space), summary.trial_id
                    )
                    values.extend(_estimand_vector(derived_estimands(joint)))
            return np.array(values)

        variance = bootstrap(
            dataset, estimator, config, names=names, workers=args.workers
        )

    return {
        "command": "estimate",
        "input": info,
        "seed": args.seed,
        "flags": {
            "space": args.space,
            "mono_s": args.mono_s,
            "mono_y": args.mono_y,
            "project": args.project,
            "force": args.force,
            "boot": args.boot,
            "ci": args.ci,
            "ci_method": args.ci_method,
        },
        "diagnostics": {"rank": _rank_dict(diag)},
        "results": {
            "space": args.space,
            "transition": _transition_dict(trans),
            "parameters": _params_dict(names, point, variance, args.ci),
            "per_trial": per_trial,
        },
    }


def cmd_test(args) -> dict:
    dataset, info = _load(args)
    summaries = summarize(dataset)
    system = build_system(summaries, args.space)
    if system.k != 2:
        raise ValidationError("the overidentification test needs a two-state space")
    if summaries.m == system.k:
        raise IdentificationError(
            f"just-identified system (m = k = {system.k}); the "
            "overidentification test has no degrees of freedom"
        )
    diag = check_rank(system)
    trans = solve_transitions(system)
    theta = binary_transition_params(trans)

    _require_seed(args)
    config = BootstrapConfig(replicates=args.boot, seed=args.seed, ci_level=args.ci)

    def estimator(ds):
        # Deviations are taken against the point fit: they estimate the raw
        # per-trial noise scale that the chi-square reference normalizes by.
        s = summarize(ds)
        sys_b = build_system(s, args.space)
        t = solve_transitions(sys_b, force=True)
        th = binary_transition_params(t)
        return np.concatenate([th, transition_residuals(s, theta, space=args.space)])

    names = ["theta[0]", "theta[1]"] + [f"residual[{tid}]" for tid in summaries.trial_ids]
    variance = bootstrap(dataset, estimator, config, names=names, workers=args.workers)
    sigma = variance.se[2:]
    result = overid_test(summaries, theta, sigma, space=args.space)

    if args.plot_data:
        _write_test_plot_data(Path(args.plot_data), summaries, theta, args.space)

    theta_names = list(trans.parameter_labels())
    theta_var_point = trans.parameter_values()
    return {
        "command": "test",
        "input": info,
        "seed": args.seed,
        "flags": {"space": args.space, "boot": args.boot, "ci": args.ci},
        "diagnostics": {"rank": _rank_dict(diag)},
        "results": {
            "space": args.space,
            "m": summaries.m,
            "k": system.k,
            "j_statistic": result.statistic,
            "df": result.df,
            "p_value": result.p_value,
            "per_trial": [
                {"trial": tid, "residual": r, "sigma": s}
                for tid, r, s in result.per_trial_residuals
            ],
            "theta": {
                "names": ["P(state1=1|state0=0)", "P(state1=1|state0=1)"],
                "point": theta,
                "se": variance.se[:2],
                "ci_lower": variance.ci_lower[:2],
                "ci_upper": variance.ci_upper[:2],
                "ci_level": args.ci,
            },
            "transition": _transition_dict(trans),
            "full_parameter_labels": theta_names,
            "full_parameter_values": theta_var_point,
        },
    }


def _psace_names(trial_ids) -> list[str]:
    return [f"PSACE[{s}]@{tid}" for tid in trial_ids for s in STRATA]


def cmd_psace(args) -> dict:
    dataset, info = _load(args)
    summaries = summarize(dataset)
    if not summaries.has_surrogate:
        raise ValidationError("principal stratification needs surrogate data")

    method = args.method
    scores = None
    stratum_probs = None
    fourway = None
    if method == 1:
        params, table = method1_estimate(summaries, clip_scores=args.clip_scores)
        scores = principal_scores(summaries, clip_negative=args.clip_scores)
        stratum_probs = params
    elif method == 2:
        fourway, table = monotone_variant_estimate(
            summaries, "method2", force=args.force, project=args.project
        )
        scores = principal_scores(summaries, clip_negative=args.clip_scores)
    elif method == 3:
        fourway, table = monotone_variant_estimate(
            summaries, "method3", force=args.force, project=args.project
        )
    else:
        fourway, table = method4_estimate(
            summaries, "none", force=args.force, project=args.project
        )

    point = table.estimates.reshape(-1)
    names = _psace_names(summaries.trial_ids)

    variance = None
    if args.boot > 0:
        _require_seed(args)
        config = BootstrapConfig(
            replicates=args.boot,
            seed=args.seed,
            ci_level=args.ci,
            ci_method=args.ci_method,
        )

        def estimator(ds):
            s = summarize(ds)
            if method == 1:
                _, t = method1_estimate(s, clip_scores=args.clip_scores)
            elif method == 2:
                _, t = monotone_variant_estimate(
                    s, "method2", force=True, project=args.project
                )
            elif method == 3:
                _, t = monotone_variant_estimate(
                    s, "method3", force=True, project=args.project
                )
            else:
                _, t = method4_estimate(s, "none", force=True, project=args.project)
            return t.estimates.reshape(-1)

        variance = bootstrap(
            dataset, estimator, config, names=names, workers=args.workers
        )

    if args.plot_data:
        _write_psace_plot_data(
            Path(args.plot_data), args, dataset, summaries, table, variance
        )

    results = {
        "method": method,
        "strata": list(STRATA),
        "trials": list(summaries.trial_ids),
        "mask_used": list(table.mask_used),
        "psace": {
            "estimates": table.estimates,
            "defined": table.defined,
            "se": None if variance is None else variance.se.reshape(table.estimates.shape),
            "ci_lower": None
            if variance is None
            else variance.ci_lower.reshape(table.estimates.shape),
            "ci_upper": None
            if variance is None
            else variance.ci_upper.reshape(table.estimates.shape),
            "ci_level": args.ci,
        },
        "principal_scores": None
        if scores is None
        else {
            "trials": list(scores.trial_ids),
            "strata": list(STRATA),
            "table": scores.table,
            "clipped": scores.clipped,
            "violations": list(scores.violations),
        },
        "stratum_outcome_probs": None
        if stratum_probs is None
        else {
            "treated": stratum_probs.treated_prob,
            "control": stratum_probs.control_prob,
            "out_of_range": stratum_probs.out_of_range,
        },
        "fourway": None
        if fourway is None
        else {
            "probs": fourway.probs,
            "cell_status": fourway.cell_status.tolist(),
            "negative_mass": fourway.negative_mass,
        },
    }
    return {
        "command": "psace",
        "input": info,
        "seed": args.seed,
        "flags": {
            "method": method,
            "clip_scores": args.clip_scores,
            "project": args.project,
            "force": args.force,
            "boot": args.boot,
            "ci": args.ci,
            "ci_method": args.ci_method,
        },
        "diagnostics": {},
        "results": results,
    }


def cmd_target(args) -> dict:
    dataset, info = _load(args)
    if dataset.target is None:
        raise ValidationError(
            "no control-only target trial in the dataset (label it with "
            "the target trial id, default '0')"
        )
    summaries = summarize(dataset)
    system = build_system(summaries, args.space)
    diag = check_rank(system)
    trans = solve_transitions(system, project_simplex=args.project, force=args.force)
    marginal = _control_marginal(summaries.target, args.space)
    joint = joint_from_transitions(trans, marginal, summaries.target.trial_id)
    two_state = len(trans.state_labels) == 2
    est = derived_estimands(joint) if two_state else None

    names = list(trans.parameter_labels()) + [
        f"target_joint[{a},{b}]"
        for a in range(trans.k)
        for b in range(trans.k)
    ]
    point = list(trans.parameter_values()) + list(joint.table.reshape(-1))
    if two_state:
        names += ["target_THR", "target_TBR", "target_persuasion", "target_PN"]
        point += _estimand_vector(est)

    variance = None
    if args.boot > 0:
        _require_seed(args)
        config = BootstrapConfig(
            replicates=args.boot,
            seed=args.seed,
            ci_level=args.ci,
            ci_method=args.ci_method,
        )

        def estimator(ds):
            s = summarize(ds)
            sys_b = build_system(s, args.space)
            t = solve_transitions(sys_b, project_simplex=args.project, force=True)
            j = joint_from_transitions(
                t, _control_marginal(s.target, args.space), s.target.trial_id
            )
            values = list(t.parameter_values()) + list(j.table.reshape(-1))
            if two_state:
                values.extend(_estimand_vector(derived_estimands(j)))
            return np.array(values)

        variance = bootstrap(
            dataset, estimator, config, names=names, workers=args.workers
        )

    return {
        "command": "target",
        "input": info,
        "seed": args.seed,
        "flags": {
            "space": args.space,
            "project": args.project,
            "force": args.force,
            "boot": args.boot,
            "ci": args.ci,
            "ci_method": args.ci_method,
        },
        "diagnostics": {"rank": _rank_dict(diag)},
        "results": {
            "space": args.space,
            "target_trial": dataset.target.trial_id,
            "transition": _transition_dict(trans),
            "target_marginal": marginal,
            "joint": joint.table,
            "negative_mass": joint.negative_mass,
            "estimands": None if est is None else _estimands_dict(est),
            "parameters": _params_dict(names, point, variance, args.ci),
        },
    }


def cmd_simulate(args) -> dict:
    config_values = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config_values = json.load(fh)
        if not isinstance(config_values, dict):
            raise ValidationError("--config must contain a JSON object")

    def pick(flag, key, default=None):
        if flag is not None:
            return flag
        return config_values.get(key, default)

    case = pick(args.case, "case")
    if case is None:
        raise ValidationError("--case (or a config file with 'case') is required")
    n_g = pick(args.ng, "n_g")
    if n_g is None:
        raise ValidationError("--ng (or config 'n_g') is required")
    reps = pick(args.reps, "replicates")
    if reps is None:
        raise ValidationError("--reps (or config 'replicates') is required")
    boot = pick(args.boot, "bootstrap_replicates", 100)
    seed = pick(args.seed, "seed")
    if seed is None:
        raise ValidationError(
            "--seed is required for stochastic commands (no silent entropy)"
        )
    m = pick(args.m, "m", 10)

    spec = DgpSpec(case=str(case).lower(), n_g=int(n_g), m=int(m))
    result = run_study(
        spec, int(reps), int(boot), int(seed), workers=args.workers
    )
    if args.table:
        sys.stderr.write(format_study_table(result))
    if args.replicates_csv:
        Path(args.replicates_csv).write_text(
            replicates_to_csv(result), encoding="utf-8"
        )
    payload = study_to_dict(result)
    flags = {
        "case": spec.case,
        "n_g": spec.n_g,
        "m": spec.m,
        "replicates": int(reps),
        "bootstrap_replicates": int(boot),
    }
    digest_source = json.dumps(flags, sort_keys=True) + f"|seed={seed}"
    return {
        "command": "simulate",
        "input": {"path": None, "sha256": text_digest(digest_source)},
        "seed": int(seed),
        "flags": flags,
        "diagnostics": {},
        "results": payload,
    }


def _write_tsv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _write_test_plot_data(directory: Path, summaries, theta, space) -> None:
    rows = []
    ate_rows = []
    for summary in summaries.trials:
        control = _control_marginal(summary, space)
        treated = _treated_marginal(summary, space)
        fitted = float(control @ theta)
        rows.append(
            [
                summary.trial_id,
                repr(float(control[0])),
                repr(float(control[1])),
                repr(float(treated[1])),
                repr(fitted),
                repr(float(treated[1]) - fitted),
            ]
        )
        ate_rows.append(
            [summary.trial_id, repr(float(treated[1]) - float(control[1]))]
        )
    _write_tsv(
        directory / "linearity.tsv",
        [
            "trial",
            "control_state0",
            "control_state1",
            "treated_state1",
            "fitted_treated_state1",
            "residual",
        ],
        rows,
    )
    _write_tsv(directory / "ate.tsv", ["trial", "ate"], ate_rows)


def _write_psace_plot_data(
    directory: Path, args, dataset, summaries, table, variance
) -> None:
    rows = []
    se = None if variance is None else variance.se.reshape(table.estimates.shape)
    lo = None if variance is None else variance.ci_lower.reshape(table.estimates.shape)
    hi = None if variance is None else variance.ci_upper.reshape(table.estimates.shape)
    for i, tid in enumerate(table.trial_ids):
        for j, stratum in enumerate(STRATA):
            defined = bool(table.defined[i, j])
            rows.append(
                [
                    table.method,
                    stratum,
                    tid,
                    repr(float(table.estimates[i, j])) if defined else "",
                    repr(float(lo[i, j])) if defined and lo is not None else "",
                    repr(float(hi[i, j])) if defined and hi is not None else "",
                    int(defined),
                ]
            )
    _write_tsv(
        directory / "psace_intervals.tsv",
        ["method", "stratum", "trial", "estimate", "lower", "upper", "defined"],
        rows,
    )

    # Per-trial joint harm cells P(state0=1, state1=0) for the surrogate
    # and the outcome, with bootstrap intervals when a seed is available.
    cell_rows = []
    for space in ("surrogate", "outcome"):
        system = build_system(summaries, space)
        trans = solve_transitions(system, force=True)
        cells = np.array(
            [
                joint_from_transitions(
                    trans, _control_marginal(s, space), s.trial_id
                ).table[1, 0]
                for s in summaries.trials
            ]
        )
        lo_cells = hi_cells = None
        if args.boot > 0 and args.seed is not None:
            config = BootstrapConfig(
                replicates=args.boot, seed=args.seed, ci_level=args.ci
            )

            def estimator(ds, space=space):
                s = summarize(ds)
                sy = build_system(s, space)
                t = solve_transitions(sy, force=True)
                return np.array(
                    [
                        joint_from_transitions(
                            t, _control_marginal(ts, space), ts.trial_id
                        ).table[1, 0]
                        for ts in s.trials
                    ]
                )

            var = bootstrap(dataset, estimator, config, workers=args.workers)
            lo_cells, hi_cells = var.ci_lower, var.ci_upper
        for i, s in enumerate(summaries.trials):
            cell_rows.append(
                [
                    space,
                    "10",
                    s.trial_id,
                    repr(float(cells[i])),
                    "" if lo_cells is None else repr(float(lo_cells[i])),
                    "" if hi_cells is None else repr(float(hi_cells[i])),
                ]
            )
    _write_tsv(
        directory / "joint_cells.tsv",
        ["space", "cell", "trial", "estimate", "lower", "upper"],
        cell_rows,
    )


def _add_common(parser, *, needs_input=True):
    if needs_input:
        parser.add_argument("--input", required=True, help="cell-count CSV")
        parser.add_argument(
            "--columns",
            default=None,
            help="column remapping, e.g. trial=trial,arm=A,s=S,y=Y,count=N",
        )
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--boot", type=int, default=500, help="bootstrap replicates")
    parser.add_argument("--ci", type=float, default=0.95)
    parser.add_argument(
        "--ci-method", choices=("normal", "percentile"), default="normal"
    )
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--output", default=None, help="report path (default stdout)")
    parser.add_argument(
        "--timing", action="store_true", help="include wall time in the report"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jointpo",
        description="Joint distributions of potential outcomes from multiple trials",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="transition matrix and joint tables")
    _add_common(p)
    p.add_argument("--space", choices=("outcome", "surrogate", "composite"), default="outcome")
    p.add_argument("--mono-s", dest="mono_s", action="store_true")
    p.add_argument("--mono-y", dest="mono_y", action="store_true")
    p.add_argument("--project", action="store_true", help="project rows onto the simplex")
    p.add_argument("--force", action="store_true", help="solve despite rank failure")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test", help="overidentification test of transportability")
    _add_common(p)
    p.add_argument("--space", choices=("outcome", "surrogate"), default="outcome")
    p.add_argument("--plot-data", dest="plot_data", default=None, help="TSV output dir")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("psace", help="principal stratification effects")
    _add_common(p)
    p.add_argument("--method", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--clip-scores", dest="clip_scores", action="store_true")
    p.add_argument("--project", action="store_true")
    p.add_argument("--force", action="store_true")
    p.add_argument("--plot-data", dest="plot_data", default=None)
    p.set_defaults(func=cmd_psace)

    p = sub.add_parser("target", help="transport to a control-only population")
    _add_common(p)
    p.add_argument("--space", choices=("outcome", "surrogate"), default="outcome")
    p.add_argument("--project", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_target)

    p = sub.add_parser("simulate", help="Monte Carlo study")
    _add_common(p, needs_input=False)
    p.add_argument("--case", choices=("c1", "c2", "c3", "c4"), default=None)
    p.add_argument("--ng", type=int, default=None, help="per-trial sample size")
    p.add_argument("--m", type=int, default=None, help="number of trials")
    p.add_argument("--reps", type=int, default=None, help="study replicates")
    p.add_argument("--config", default=None, help="JSON key-value study config")
    p.add_argument("--replicates-csv", dest="replicates_csv", default=None)
    p.add_argument("--table", action="store_true", help="print a metrics table to stderr")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", JointpoWarning)
            report = args.func(args)
        collected = [
            {"category": type(w.message).__name__, "message": str(w.message)}
            for w in caught
            if isinstance(w.message, JointpoWarning)
        ]
        report.setdefault("diagnostics", {})
        report["diagnostics"].setdefault("rank", None)
        report["diagnostics"]["warnings"] = collected
        report["schema_version"] = "1"
        report["tool"] = {"name": "jointpo", "version": __version__}
        if args.timing:
            report["timing_seconds"] = time.perf_counter() - started
        text = canonical_json(report)
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return 0
    except JointpoError as exc:
        code = _exit_code(exc)
        sys.stderr.write(
            json.dumps(
                {
                    "error": {
                        "type": type(exc).__name__,
                        "message": str(exc),
                        "exit_code": code,
                    }
                },
                sort_keys=True,
            )
            + "\n"
        )
        return code


if __name__ == "__main__":
    raise SystemExit(main())
