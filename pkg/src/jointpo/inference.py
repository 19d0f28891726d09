"""Uncertainty quantification and the overidentification test.

Bootstrap resampling is stratified: within every trial the cell counts
are redrawn as a multinomial over that trial's cells with the original
trial total, which is equivalent to resampling units within the trial.
Each replicate derives its own generator from the master seed and the
replicate index, so results do not depend on worker count or execution
order.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import MultiTrialDataset, Summaries
from .errors import (
    IdentificationError,
    InferenceError,
    JointpoError,
    JointpoWarning,
    ValidationError,
)
from .special import chi2_sf, normal_quantile

_MAX_REDRAWS = 100
_MAX_FAILURE_FRACTION = 0.10
#: Residuals below this magnitude count as an exact fit (a just-identified
#: solve is exact up to rounding, so its test statistic must vanish).
_EXACT_FIT_TOL = 1e-12


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for one replicate, derived from the master seed and the
    replicate index via a splittable seed sequence."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


@dataclass(frozen=True)
class BootstrapConfig:
    """Settings for stratified multinomial bootstrap inference."""

    replicates: int = 500
    seed: int = 0
    ci_level: float = 0.95
    ci_method: str = "normal"

    def __post_init__(self):
        if self.replicates < 2:
            raise ValidationError("bootstrap needs at least 2 replicates")
        if not 0.0 < self.ci_level < 1.0:
            raise ValidationError("ci_level must lie in (0, 1)")
        if self.ci_method not in ("normal", "percentile"):
            raise ValidationError("ci_method must be 'normal' or 'percentile'")


@dataclass(frozen=True)
class VarianceEstimate:
    """Point estimates with standard errors and confidence intervals."""

    point: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    source: str
    names: tuple[str, ...] | None = None
    replicates: np.ndarray | None = None
    n_failed: int = 0


def resample_dataset(
    dataset: MultiTrialDataset, rng: np.random.Generator
) -> MultiTrialDataset:
    """One stratified resample: per-trial multinomial redraw of all cells."""
    tensor = dataset.counts_tensor()
    out = np.empty_like(tensor)
    for i, row in enumerate(tensor):
        total = int(row.sum())
        if total == 0:
            out[i] = 0
            continue
        out[i] = rng.multinomial(total, row / total)
    return dataset.with_counts(out)


def _normal_ci(
    point: np.ndarray, se: np.ndarray, level: float
) -> tuple[np.ndarray, np.ndarray]:
    z = normal_quantile(0.5 + level / 2.0)
    return point - z * se, point + z * se


def bootstrap(
    dataset: MultiTrialDataset,
    estimator: Callable[[MultiTrialDataset], np.ndarray],
    config: BootstrapConfig,
    *,
    names: Sequence[str] | None = None,
    workers: int = 1,
) -> VarianceEstimate:
    """Stratified bootstrap of an arbitrary dataset-to-vector estimator.

    A replicate whose resample breaks the estimator (an empty arm, a
    rank failure) is redrawn up to 100 times from its own generator and
    counted as failed afterwards; more than 10% failed replicates abort
    with :class:`InferenceError`. Fixed ``(seed, replicates)`` give
    bit-identical results for any ``workers`` setting.
    """
    point = np.asarray(estimator(dataset), dtype=float)
    width = point.size

    def one(index: int) -> tuple[np.ndarray, bool]:
        # NaN coordinates are legitimate results (undefined quantities);
        # only estimator exceptions count as a failed resample.
        rng = replicate_rng(config.seed, index)
        for _ in range(_MAX_REDRAWS):
            resampled = resample_dataset(dataset, rng)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", JointpoWarning)
                    value = np.asarray(estimator(resampled), dtype=float)
            except (JointpoError, np.linalg.LinAlgError):
                continue
            if value.shape == point.shape:
                return value, True
        return np.full(width, np.nan), False

    draws = np.empty((config.replicates, width))
    success = np.zeros(config.replicates, dtype=bool)
    if workers <= 1:
        for i in range(config.replicates):
            draws[i], success[i] = one(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, (value, ok) in enumerate(pool.map(one, range(config.replicates))):
                draws[i], success[i] = value, ok

    n_failed = int((~success).sum())
    if n_failed > _MAX_FAILURE_FRACTION * config.replicates:
        raise InferenceError(
            f"{n_failed} of {config.replicates} bootstrap replicates failed; "
            "the dataset is too fragile for resampling inference"
        )
    kept = draws[success]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        se = np.sqrt(np.nanvar(kept, axis=0, ddof=1))
    if config.ci_method == "normal":
        lower, upper = _normal_ci(point, se, config.ci_level)
    else:
        alpha = (1.0 - config.ci_level) / 2.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lower = np.nanpercentile(kept, 100 * alpha, axis=0)
            upper = np.nanpercentile(kept, 100 * (1 - alpha), axis=0)
    return VarianceEstimate(
        point=point,
        se=se,
        ci_lower=lower,
        ci_upper=upper,
        source="bootstrap",
        names=None if names is None else tuple(names),
        replicates=kept,
        n_failed=n_failed,
    )


def _binary_margins(
    summaries: Summaries, space: str
) -> tuple[np.ndarray, np.ndarray]:
    if space == "outcome":
        if summaries.outcome_cardinality != 2:
            raise ValidationError(
                "this operation is defined for two-state systems only"
            )
        M = np.stack([t.control_outcome for t in summaries.trials])
        y = np.array([t.treated_outcome[1] for t in summaries.trials])
    elif space == "surrogate":
        if not summaries.has_surrogate:
            raise ValidationError("no surrogate data present")
        M = np.stack([t.control_surrogate for t in summaries.trials])
        y = np.array([t.treated_surrogate[1] for t in summaries.trials])
    else:
        raise ValidationError(f"unsupported space {space!r} for this operation")
    return M, y


def plugin_variance(
    summaries: Summaries,
    theta: np.ndarray,
    n: int | None = None,
    *,
    space: str = "outcome",
    ci_level: float = 0.95,
) -> VarianceEstimate:
    """Closed-form asymptotic standard errors for the two-state
    transition estimator.

    The asymptotic variance has sandwich form ``C^-1 V C^-1`` with
    ``C`` the average outer product of the control frequency vectors.
    ``V`` aggregates, per trial, the sampling variance of the treated
    frequency and of the theta-weighted control frequencies; both pieces
    expand in closed form from the multinomial cell probabilities, with
    trial weights taken as ``n_g / n``.
    """
    theta = np.asarray(theta, dtype=float)
    M, y = _binary_margins(summaries, space)
    m = M.shape[0]
    sizes = summaries.arm_sizes().astype(float)
    if n is None:
        n = int(sizes.sum())
    p_arm = sizes / float(n)  # (m, 2) empirical P(G=g, A=a)
    if (p_arm <= 0).any():
        raise ValidationError("every trial needs units in both arms")

    C = (M[:, :, None] * M[:, None, :]).mean(axis=0)
    # Per-trial variance of the linearized residual:
    #   treated-frequency noise plus control-side noise of theta(Y).
    var_treated = y * (1.0 - y) / p_arm[:, 1]
    theta_mean = M @ theta
    theta_sq = M @ (theta**2)
    var_control = (theta_sq - theta_mean**2) / p_arm[:, 0]
    v = var_treated + var_control
    V = (M[:, :, None] * M[:, None, :] * v[:, None, None]).sum(axis=0) / m**2

    if (V == 0).all():
        # Fully deterministic cells: no sampling noise regardless of the
        # design's conditioning.
        se = np.zeros_like(theta)
    else:
        sv = np.linalg.svd(C, compute_uv=False)
        if sv[-1] <= sv[0] * 1e-12:
            raise IdentificationError(
                "plug-in variance is undefined: singular design"
            )
        Cinv_V = np.linalg.solve(C, V)
        sigma2 = np.linalg.solve(C, Cinv_V.T).T
        se = np.sqrt(np.clip(np.diag(sigma2), 0.0, None) / n)
    lower, upper = _normal_ci(theta, se, ci_level)
    return VarianceEstimate(
        point=theta,
        se=se,
        ci_lower=lower,
        ci_upper=upper,
        source="plugin",
    )


@dataclass(frozen=True)
class OveridTestResult:
    """Result of the overidentification test of transportability.

    ``statistic`` is the sigma-normalized sum of squared per-trial
    residuals; under the null it is asymptotically chi-square with
    ``m - k`` degrees of freedom. ``p_value`` is None when the system is
    just identified (df = 0).
    """

    statistic: float
    df: int
    p_value: float | None
    per_trial_residuals: tuple[tuple[str, float, float], ...]

    def recompute_statistic(self) -> float:
        return float(
            sum((r / s) ** 2 for _, r, s in self.per_trial_residuals)
        )


def transition_residuals(
    summaries: Summaries, theta: np.ndarray, *, space: str = "outcome"
) -> np.ndarray:
    """Per-trial residuals of the treated frequency against its fitted
    mixture of control frequencies."""
    M, y = _binary_margins(summaries, space)
    return y - M @ np.asarray(theta, dtype=float)


def overid_test(
    summaries: Summaries,
    theta: np.ndarray,
    sigma_g: np.ndarray,
    *,
    space: str = "outcome",
) -> OveridTestResult:
    """Chi-square test of the trial-invariance of transition probabilities.

    ``sigma_g`` are per-trial standard errors of the residual noise,
    normally the standard deviations, across the same bootstrap
    replicates that produced ``theta``, of the replicate frequencies'
    deviation from the point fit (the raw noise scale; the reference
    distribution's m - k degrees of freedom already account for the
    fitted parameters). Requires more trials than states for a p-value;
    with m == k the statistic is reported (it vanishes up to rounding)
    and the p-value is marked inapplicable.
    """
    residuals = transition_residuals(summaries, theta, space=space)
    m = residuals.size
    k = 2
    sigma = np.asarray(sigma_g, dtype=float)
    if sigma.shape != residuals.shape:
        raise ValidationError("sigma_g must provide one value per trial")
    ids = summaries.trial_ids

    if m == k:
        # Just identified: the fit is exact by construction, so no residual
        # scale exists. Record unit sigmas to keep the statistic reproducible
        # from the residual list.
        sigma = np.ones_like(residuals)
        stat = float(np.sum(residuals**2))
        per_trial = tuple(
            (tid, float(r), float(s)) for tid, r, s in zip(ids, residuals, sigma)
        )
        return OveridTestResult(
            statistic=stat, df=0, p_value=None, per_trial_residuals=per_trial
        )
    if m < k:
        raise IdentificationError(
            f"the test needs at least as many trials as states (m={m}, k={k})"
        )
    if (sigma == 0).any():
        bad = [tid for tid, s in zip(ids, sigma) if s == 0]
        raise InferenceError(
            f"zero residual standard error for trial(s) {', '.join(bad)}; "
            "the test statistic is undefined"
        )
    effective = np.where(np.abs(residuals) < _EXACT_FIT_TOL, 0.0, residuals)
    stat = float(np.sum((effective / sigma) ** 2))
    per_trial = tuple(
        (tid, float(r), float(s)) for tid, r, s in zip(ids, effective, sigma)
    )
    df = m - k
    return OveridTestResult(
        statistic=stat,
        df=df,
        p_value=chi2_sf(stat, df),
        per_trial_residuals=per_trial,
    )
