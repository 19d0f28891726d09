"""Principal stratification: scores and stratum-level causal effects.

Strata are defined by the joint potential values (S0, S1) of the binary
post-treatment variable. Two estimation families are provided:

* a four-step estimator assuming stratum membership is monotone
  (S1 >= S0) and stratum-level outcome probabilities are trial
  invariant; transitions of the outcome are not needed (``method 1``);
* composite-state transition estimators that recover the full 16-cell
  joint law of (S0, S1, Y0, Y1) per trial, unconstrained (``method 4``,
  at least four trials) or with monotone structural zeros (``method 2``
  for both orderings, ``method 3`` for the outcome ordering only, where
  only part of the joint law is identified).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import COMPOSITE_STATES, Summaries
from .errors import (
    EstimationError,
    IdentificationError,
    MonotonicityWarning,
    OutOfRangeWarning,
    SchemaError,
    ValidationError,
)
from .transition import TransitionMatrix, build_system, solve_transitions

STRATA = ("00", "01", "10", "11")

#: Cell provenance markers used by partially identified solves.
CELL_IDENTIFIED = "identified"
CELL_STRUCTURAL_ZERO = "structural_zero"
CELL_UNAVAILABLE = "unavailable"


@dataclass(frozen=True)
class PrincipalScores:
    """Stratum membership probabilities per trial.

    Columns follow :data:`STRATA`; under the monotone ordering the
    ``10`` column is identically zero. A negative ``01`` entry signals
    an empirical violation of monotonicity; it is clipped to zero (with
    renormalization of the ``00``/``11`` entries) only on request.
    """

    trial_ids: tuple[str, ...]
    table: np.ndarray
    clipped: bool
    violations: tuple[str, ...]

    def column(self, stratum: str) -> np.ndarray:
        return self.table[:, STRATA.index(stratum)].copy()


def principal_scores(
    summaries: Summaries, *, clip_negative: bool = False
) -> PrincipalScores:
    """Estimate stratum membership probabilities under S1 >= S0.

    Identities: P(11) equals the control-arm surrogate rate, P(01) the
    treated-control difference in surrogate rates, P(10) is zero and
    P(00) the complement.
    """
    if not summaries.has_surrogate:
        raise SchemaError("principal scores require surrogate data")
    rows = []
    violations = []
    for t in summaries.trials:
        s_control = float(t.control_surrogate[1])
        s_treated = float(t.treated_surrogate[1])
        d11 = s_control
        d01 = s_treated - d11
        d00 = 1.0 - s_treated
        if d01 < 0:
            violations.append(t.trial_id)
        rows.append([d00, d01, 0.0, d11])
    table = np.array(rows)
    clipped = False
    if violations:
        warnings.warn(
            "treated surrogate rate below control rate in trial(s) "
            f"{', '.join(violations)}; the monotone ordering looks violated",
            MonotonicityWarning,
            stacklevel=2,
        )
        if clip_negative:
            clipped = True
            for i in range(table.shape[0]):
                if table[i, 1] < 0:
                    keep = table[i, 0] + table[i, 3]
                    table[i, 0] /= keep
                    table[i, 3] /= keep
                    table[i, 1] = 0.0
    table.flags.writeable = False
    return PrincipalScores(
        trial_ids=summaries.trial_ids,
        table=table,
        clipped=clipped,
        violations=tuple(violations),
    )


@dataclass(frozen=True)
class StratumOutcomeParams:
    """Trial-invariant outcome probabilities per principal stratum.

    ``treated_prob[s]`` is P(Y1 = 1 | stratum s) and ``control_prob[s]``
    is P(Y0 = 1 | stratum s) for s in {"00", "01", "11"}; the "10"
    stratum is empty under the monotone ordering.
    """

    treated_prob: dict[str, float]
    control_prob: dict[str, float]
    out_of_range: bool


@dataclass(frozen=True)
class PsaceTable:
    """Average causal effects per (trial, stratum).

    ``estimates`` is (m, 4) over :data:`STRATA` with NaN where
    ``defined`` is False. ``mask_used`` records monotonicity
    assumptions baked into the estimate.
    """

    method: int
    trial_ids: tuple[str, ...]
    estimates: np.ndarray
    defined: np.ndarray
    mask_used: tuple[str, ...]

    def stratum(self, stratum: str) -> np.ndarray:
        return self.estimates[:, STRATA.index(stratum)].copy()


@dataclass(frozen=True)
class FourWayJoint:
    """Per-trial joint law of (S0, S1, Y0, Y1).

    ``probs[g, a, b, c, d]`` estimates P(S0=a, S1=b, Y0=c, Y1=d | trial g).
    ``cell_status`` marks each of the 16 cells as identified, forced to
    zero by a monotone ordering, or unavailable under partial
    identification.
    """

    trial_ids: tuple[str, ...]
    probs: np.ndarray
    cell_status: np.ndarray
    mask_used: tuple[str, ...]
    negative_mass: bool

    def marginal_scores(self) -> np.ndarray:
        """Stratum masses per trial, columns ordered like :data:`STRATA`."""
        mass = np.nansum(self.probs, axis=(3, 4))
        out = np.empty((self.probs.shape[0], 4))
        for j, s in enumerate(STRATA):
            a, b = int(s[0]), int(s[1])
            undetermined = np.isnan(self.probs[:, a, b]).any(axis=(1, 2))
            out[:, j] = np.where(undetermined, np.nan, mass[:, a, b])
        return out


def _pooled_cell_rate(
    summaries: Summaries, arm: int, s_value: int
) -> float:
    """P(Y=1 | S=s, arm) pooled over trials with arm-size weights."""
    num = 0.0
    den = 0.0
    for t in summaries.trials:
        comp = t.control_composite if arm == 0 else t.treated_composite
        size = t.arm_sizes[arm]
        num += size * comp[2 * s_value + 1]
        den += size * (comp[2 * s_value] + comp[2 * s_value + 1])
    if den <= 0:
        raise EstimationError(
            f"no units with surrogate={s_value} in arm {arm}; a pooled "
            "outcome rate is undefined"
        )
    return num / den


def _check_binary_outcome(summaries: Summaries):
    if not summaries.has_surrogate:
        raise SchemaError("this estimator requires surrogate data")
    if summaries.outcome_cardinality != 2:
        raise ValidationError("this estimator requires a binary outcome")


def _design_rank_ok(design: np.ndarray, tol: float = 1e-8) -> bool:
    sv = np.linalg.svd(design, compute_uv=False)
    return design.shape[0] >= design.shape[1] and sv[-1] > sv[0] * tol


def method1_estimate(
    summaries: Summaries, *, clip_scores: bool = False
) -> tuple[StratumOutcomeParams, PsaceTable]:
    """Four-step estimator of stratum outcome probabilities and effects.

    Step 1 estimates principal scores and arm-wise outcome rates per
    trial. Step 2 reads the two strata pinned down by the monotone
    ordering from pooled frequencies: P(Y1=1 | "00") from treated units
    with S=0 and P(Y0=1 | "11") from control units with S=1. Step 3
    recovers the remaining stratum probabilities by regressing the
    score-adjusted outcome rates on the scores across trials. Step 4
    differences treated and control probabilities per stratum.
    """
    _check_binary_outcome(summaries)
    scores = principal_scores(summaries, clip_negative=clip_scores)
    d00 = scores.column("00")
    d01 = scores.column("01")
    d11 = scores.column("11")
    y1 = np.array([t.treated_outcome[1] for t in summaries.trials])
    y0 = np.array([t.control_outcome[1] for t in summaries.trials])

    treated_00 = _pooled_cell_rate(summaries, arm=1, s_value=0)
    control_11 = _pooled_cell_rate(summaries, arm=0, s_value=1)

    design_treated = np.column_stack([d01, d11])
    if not _design_rank_ok(design_treated):
        raise IdentificationError(
            "rank condition failed for the treated-outcome step: the "
            "principal-score design [P(01), P(11)] is not full column rank"
        )
    coef_t, *_ = np.linalg.lstsq(design_treated, y1 - treated_00 * d00, rcond=None)
    treated_01, treated_11 = (float(v) for v in coef_t)

    design_control = np.column_stack([d00, d01])
    if not _design_rank_ok(design_control):
        raise IdentificationError(
            "rank condition failed for the control-outcome step: the "
            "principal-score design [P(00), P(01)] is not full column rank"
        )
    coef_c, *_ = np.linalg.lstsq(design_control, y0 - control_11 * d11, rcond=None)
    control_00, control_01 = (float(v) for v in coef_c)

    treated = {"00": treated_00, "01": treated_01, "11": treated_11}
    control = {"00": control_00, "01": control_01, "11": control_11}
    out_of_range = any(
        not (-1e-12 <= v <= 1 + 1e-12)
        for v in list(treated.values()) + list(control.values())
    )
    if out_of_range:
        warnings.warn(
            "stratum outcome probabilities fall outside [0, 1]; "
            "values reported raw",
            OutOfRangeWarning,
            stacklevel=2,
        )
    params = StratumOutcomeParams(
        treated_prob=treated, control_prob=control, out_of_range=out_of_range
    )

    m = summaries.m
    effects = np.full((m, 4), np.nan)
    defined = np.zeros((m, 4), dtype=bool)
    for j, s in enumerate(STRATA):
        if s == "10":
            continue  # empty stratum under the monotone ordering
        effects[:, j] = treated[s] - control[s]
        defined[:, j] = True
    table = PsaceTable(
        method=1,
        trial_ids=summaries.trial_ids,
        estimates=effects,
        defined=defined,
        mask_used=("mono_s",),
    )
    return params, table


def _fourway_from_transitions(
    trans: TransitionMatrix, summaries: Summaries, mask_used: tuple[str, ...]
) -> FourWayJoint:
    control = np.stack([t.control_composite for t in summaries.trials])
    m = control.shape[0]
    probs = np.empty((m, 2, 2, 2, 2))
    status = np.empty((2, 2, 2, 2), dtype=object)
    for i, (a, c) in enumerate(COMPOSITE_STATES):
        for j, (b, d) in enumerate(COMPOSITE_STATES):
            cell = trans.probs[i, j] * control[:, i]
            probs[:, a, b, c, d] = cell
            if not trans.support_mask[i, j]:
                status[a, b, c, d] = CELL_STRUCTURAL_ZERO
            elif not trans.determined[i, j]:
                status[a, b, c, d] = CELL_UNAVAILABLE
            else:
                status[a, b, c, d] = CELL_IDENTIFIED
    negative = bool(np.nanmin(probs) < -1e-12)
    if negative:
        warnings.warn(
            "joint stratum-outcome law has negative cells; values reported raw",
            OutOfRangeWarning,
            stacklevel=3,
        )
    return FourWayJoint(
        trial_ids=summaries.trial_ids,
        probs=probs,
        cell_status=status,
        mask_used=mask_used,
        negative_mass=negative,
    )


_MASS_TOL = 1e-12


def _psace_from_fourway(
    joint: FourWayJoint, method: int, mono_s: bool
) -> PsaceTable:
    m = joint.probs.shape[0]
    effects = np.full((m, 4), np.nan)
    defined = np.zeros((m, 4), dtype=bool)
    negative_mass_warned = False
    for j, s in enumerate(STRATA):
        a, b = int(s[0]), int(s[1])
        if mono_s and s == "10":
            continue
        cells = joint.probs[:, a, b]  # (m, 2, 2) over (c, d)
        if np.isnan(cells).any():
            continue  # stratum touches unavailable cells
        mass = cells.sum(axis=(1, 2))
        contrast = cells[:, 0, 1] - cells[:, 1, 0]  # (d - c) weighting
        ok = mass > _MASS_TOL
        if (mass < -_MASS_TOL).any() and not negative_mass_warned:
            warnings.warn(
                f"nonpositive estimated mass for stratum {s}; effect marked undefined",
                OutOfRangeWarning,
                stacklevel=3,
            )
            negative_mass_warned = True
        effects[ok, j] = contrast[ok] / mass[ok]
        defined[:, j] = ok
    return PsaceTable(
        method=method,
        trial_ids=joint.trial_ids,
        estimates=effects,
        defined=defined,
        mask_used=joint.mask_used,
    )


_MONOTONICITY_CHOICES = ("none", "mono_y", "mono_s", "both")


def _composite_estimate(
    summaries: Summaries,
    mono_s: bool,
    mono_y: bool,
    *,
    method: int,
    allow_partial: bool,
    force: bool,
    project: bool,
) -> tuple[FourWayJoint, PsaceTable]:
    _check_binary_outcome(summaries)
    if not (mono_s and mono_y) and summaries.m < 4 and not allow_partial:
        need = "m >= 4" if not (mono_s or mono_y) else "m >= 4 (single ordering)"
        raise IdentificationError(
            f"composite estimation with this monotonicity setting requires "
            f"{need} trials, got m={summaries.m}"
        )
    system = build_system(summaries, "composite", mono_s=mono_s, mono_y=mono_y)
    trans = solve_transitions(
        system, force=force, allow_partial=allow_partial, project_simplex=project
    )
    mask_used = tuple(
        name for name, flag in (("mono_s", mono_s), ("mono_y", mono_y)) if flag
    )
    joint = _fourway_from_transitions(trans, summaries, mask_used)
    table = _psace_from_fourway(joint, method, mono_s)
    return joint, table


def method4_estimate(
    summaries: Summaries,
    monotonicity: str = "none",
    *,
    force: bool = False,
    project: bool = False,
) -> tuple[FourWayJoint, PsaceTable]:
    """Estimate the 16-cell joint law and stratum effects per trial.

    Without monotonicity the composite design needs at least four trials
    of full column rank; with both orderings two suffice. The result is
    fully identified or the call raises.
    """
    if monotonicity not in _MONOTONICITY_CHOICES:
        raise ValidationError(f"unknown monotonicity setting {monotonicity!r}")
    mono_s = monotonicity in ("mono_s", "both")
    mono_y = monotonicity in ("mono_y", "both")
    return _composite_estimate(
        summaries,
        mono_s,
        mono_y,
        method=4,
        allow_partial=False,
        force=force,
        project=project,
    )


def monotone_variant_estimate(
    summaries: Summaries,
    which: str = "method2",
    *,
    force: bool = False,
    project: bool = False,
) -> tuple[FourWayJoint, PsaceTable]:
    """Monotonicity-constrained composite estimators.

    ``method2`` assumes both orderings (S1 >= S0 and Y1 >= Y0) and fully
    identifies the joint law from two or more trials. ``method3``
    assumes only Y1 >= Y0; with fewer than four trials only the cells
    derivable from the masked system are produced and the rest are
    marked unavailable.
    """
    if which == "method2":
        return _composite_estimate(
            summaries,
            mono_s=True,
            mono_y=True,
            method=2,
            allow_partial=False,
            force=force,
            project=project,
        )
    if which == "method3":
        return _composite_estimate(
            summaries,
            mono_s=False,
            mono_y=True,
            method=3,
            allow_partial=True,
            force=force,
            project=project,
        )
    raise ValidationError(f"unknown variant {which!r}; use 'method2' or 'method3'")
