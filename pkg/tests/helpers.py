"""Shared fixtures and independent oracle implementations.

Oracles deliberately use code paths unrelated to the package internals
(normal equations via LU solves, Poisson sums, dense grid refinement)
so agreement is evidence, not tautology.
"""

from __future__ import annotations

import math

import numpy as np

from jointpo.data import MultiTrialDataset, Summaries, TrialCellCounts, TrialSummary


def poisson_sum_chi2_sf(x: float, df: int) -> float:
    """Upper chi-square tail for even df via the Poisson-sum identity."""
    assert df % 2 == 0 and df > 0
    lam = x / 2.0
    return math.fsum(
        math.exp(-lam) * lam**i / math.factorial(i) for i in range(df // 2)
    )


def normal_equations_solve(design: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Least squares through the normal equations and an LU solve."""
    gram = design.T @ design
    return np.linalg.solve(gram, design.T @ response)


def grid_refine_solve(design: np.ndarray, response: np.ndarray, rounds: int = 40):
    """Brute-force 2-parameter least squares by iterated dense grid search."""
    assert design.shape[1] == 2
    lo = np.array([-2.0, -2.0])
    hi = np.array([3.0, 3.0])
    best = None
    for _ in range(rounds):
        g0 = np.linspace(lo[0], hi[0], 21)
        g1 = np.linspace(lo[1], hi[1], 21)
        a, b = np.meshgrid(g0, g1, indexing="ij")
        fitted = design[:, 0][:, None, None] * a + design[:, 1][:, None, None] * b
        loss = ((fitted - response[:, None, None]) ** 2).sum(axis=0)
        i, j = np.unravel_index(np.argmin(loss), loss.shape)
        best = np.array([g0[i], g1[j]])
        span = (hi - lo) / 10.0
        lo = best - span
        hi = best + span
    return best


def kron_direct_solve(design: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Square-system solve of response = design @ coef via one Kronecker
    LU factorization of all unknowns jointly."""
    m, k = design.shape
    assert m == k
    big = np.kron(np.eye(k), design)
    vec = np.linalg.solve(big, response.flatten(order="F"))
    return vec.reshape((k, k), order="F")


def binary_trial(trial_id: str, c0: int, c1: int, t0: int, t1: int) -> TrialCellCounts:
    """A binary-outcome trial from (control y=0, control y=1, treated y=0,
    treated y=1) counts."""
    return TrialCellCounts(trial_id=trial_id, counts=np.array([[c0, c1], [t0, t1]]))


def binary_dataset(rows: list[tuple[int, int, int, int]]) -> MultiTrialDataset:
    return MultiTrialDataset(
        trials=tuple(
            binary_trial(str(i + 1), *row) for i, row in enumerate(rows)
        )
    )


def binary_summaries(
    control: np.ndarray,
    treated: np.ndarray,
    arm_sizes=(1, 1),
) -> Summaries:
    """Population-style summaries straight from probability tables.

    ``arm_sizes`` is one (n0, n1) pair for every trial or an (m, 2) array.
    """
    sizes = np.asarray(arm_sizes)
    if sizes.ndim == 1:
        sizes = np.tile(sizes, (len(control), 1))
    trials = tuple(
        TrialSummary(
            trial_id=str(g + 1),
            is_target=False,
            arm_sizes=(int(sizes[g, 0]), int(sizes[g, 1])),
            control_outcome=np.asarray(control[g], dtype=float),
            treated_outcome=np.asarray(treated[g], dtype=float),
        )
        for g in range(len(control))
    )
    return Summaries(
        trials=trials,
        target=None,
        outcome_cardinality=control.shape[1],
        has_surrogate=False,
    )


def composite_summaries(
    control_comp: np.ndarray,
    treated_comp: np.ndarray,
    arm_sizes: tuple[int, int] = (1, 1),
) -> Summaries:
    """Population-style surrogate summaries from composite (s, y) tables."""
    control_comp = np.asarray(control_comp, dtype=float)
    treated_comp = np.asarray(treated_comp, dtype=float)
    trials = []
    for g in range(control_comp.shape[0]):
        cc = control_comp[g].reshape(2, 2)
        tc = treated_comp[g].reshape(2, 2)
        trials.append(
            TrialSummary(
                trial_id=str(g + 1),
                is_target=False,
                arm_sizes=arm_sizes,
                control_outcome=cc.sum(axis=0),
                treated_outcome=tc.sum(axis=0),
                control_surrogate=cc.sum(axis=1),
                treated_surrogate=tc.sum(axis=1),
                control_composite=control_comp[g],
                treated_composite=treated_comp[g],
            )
        )
    return Summaries(
        trials=tuple(trials), target=None, outcome_cardinality=2, has_surrogate=True
    )


def random_stochastic_rows(rng: np.random.Generator, m: int, k: int) -> np.ndarray:
    raw = rng.dirichlet(np.ones(k), size=m)
    return raw


def well_conditioned_system(
    rng: np.random.Generator, m: int, k: int, min_ratio: float = 1e-3
):
    """A random row-stochastic design with decent conditioning plus a
    random row-stochastic transition and its exact response."""
    for _ in range(200):
        design = random_stochastic_rows(rng, m, k)
        sv = np.linalg.svd(design, compute_uv=False)
        if sv[-1] > sv[0] * min_ratio:
            transition = random_stochastic_rows(rng, k, k)
            return design, transition, design @ transition
    raise AssertionError("failed to draw a well-conditioned system")
