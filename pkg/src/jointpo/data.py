"""Contingency-table data model for multi-trial randomized experiments.

The canonical on-disk format is a CSV of cell counts with the header

    trial,arm,s,y,count

where ``arm`` is 0 (control) or 1 (treated), ``s`` is a binary
post-treatment variable or the literal ``NA`` when no such variable was
recorded (uniformly across the file), ``y`` is the outcome category
``0..k-1`` and ``count`` a nonnegative base-10 integer. Duplicate cell
rows are summed. Trials keep their order of first appearance.

A trial labeled ``0`` (configurable) designates a control-only target
population: it may contain control rows only and is kept separate from
the experimental trials.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TextIO

import numpy as np

from .errors import (
    EstimationError,
    ParseError,
    SchemaError,
    ValidationError,
)

#: Fixed ordering of the composite (S, Y) state space used everywhere a
#: 4-state system appears: index = 2 * s + y.
COMPOSITE_STATES: tuple[tuple[int, int], ...] = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class ColumnSchema:
    """Column naming configuration for tabular inputs."""

    trial: str = "trial"
    arm: str = "arm"
    surrogate: str = "s"
    outcome: str = "y"
    count: str = "count"
    na_token: str = "NA"
    target_label: str = "0"

    def header(self, with_count: bool = True) -> list[str]:
        cols = [self.trial, self.arm, self.surrogate, self.outcome]
        if with_count:
            cols.append(self.count)
        return cols


DEFAULT_SCHEMA = ColumnSchema()


@dataclass(frozen=True)
class TrialCellCounts:
    """Cell counts of one trial.

    ``counts`` has shape ``(2, k)`` without a surrogate or ``(2, 2, k)``
    with one; the leading axis is the treatment arm and, when present,
    the middle axis is the surrogate value.
    """

    trial_id: str
    counts: np.ndarray
    is_target: bool = False

    def __post_init__(self):
        arr = np.asarray(self.counts)
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.floor(arr)):
                raise ValidationError(
                    f"trial {self.trial_id!r}: cell counts must be integers"
                )
            arr = arr.astype(np.int64)
        else:
            arr = arr.astype(np.int64, copy=True)
        if arr.ndim not in (2, 3) or arr.shape[0] != 2:
            raise ValidationError(
                f"trial {self.trial_id!r}: counts must have shape (2, k) or (2, 2, k)"
            )
        if arr.ndim == 3 and arr.shape[1] != 2:
            raise ValidationError(
                f"trial {self.trial_id!r}: the surrogate axis must be binary"
            )
        if (arr < 0).any():
            raise ValidationError(f"trial {self.trial_id!r}: negative cell count")
        if self.is_target and arr[1].sum() > 0:
            raise ValidationError(
                f"target trial {self.trial_id!r} must contain control rows only"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "counts", arr)

    @property
    def has_surrogate(self) -> bool:
        return self.counts.ndim == 3

    @property
    def outcome_cardinality(self) -> int:
        return self.counts.shape[-1]

    @property
    def arm_totals(self) -> tuple[int, int]:
        flat = self.counts.reshape(2, -1)
        return int(flat[0].sum()), int(flat[1].sum())

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MultiTrialDataset:
    """An ordered collection of experimental trials plus an optional
    control-only target trial."""

    trials: tuple[TrialCellCounts, ...]
    target: TrialCellCounts | None = None

    def __post_init__(self):
        if not self.trials:
            raise ValidationError("a dataset needs at least one experimental trial")
        labels = [t.trial_id for t in self.trials]
        if self.target is not None:
            labels.append(self.target.trial_id)
        if len(set(labels)) != len(labels):
            raise ValidationError("trial labels must be unique")
        everything = list(self.trials) + ([self.target] if self.target else [])
        k = everything[0].outcome_cardinality
        surr = everything[0].has_surrogate
        for t in everything:
            if t.outcome_cardinality != k:
                raise ValidationError(
                    "outcome cardinality must be identical across trials"
                )
            if t.has_surrogate != surr:
                raise SchemaError(
                    "surrogate presence must be uniform across the dataset"
                )
        if self.target is not None and not self.target.is_target:
            raise ValidationError("the target trial must be flagged as such")

    @property
    def m(self) -> int:
        return len(self.trials)

    @property
    def outcome_cardinality(self) -> int:
        return self.trials[0].outcome_cardinality

    @property
    def has_surrogate(self) -> bool:
        return self.trials[0].has_surrogate

    @property
    def all_trials(self) -> tuple[TrialCellCounts, ...]:
        if self.target is None:
            return self.trials
        return self.trials + (self.target,)

    def counts_tensor(self) -> np.ndarray:
        """All trials' cells as an ``(n_trials, cells)`` integer matrix.

        The target trial, when present, is the last row. Cell order is
        row-major over ``(arm[, surrogate], outcome)``.
        """
        return np.stack([t.counts.reshape(-1) for t in self.all_trials])

    def with_counts(self, tensor: np.ndarray) -> "MultiTrialDataset":
        """Rebuild the dataset with replacement counts from :meth:`counts_tensor` layout."""
        shape = self.trials[0].counts.shape
        new = [
            replace(t, counts=row.reshape(shape))
            for t, row in zip(self.all_trials, np.asarray(tensor))
        ]
        if self.target is not None:
            return MultiTrialDataset(trials=tuple(new[:-1]), target=new[-1])
        return MultiTrialDataset(trials=tuple(new))


@dataclass(frozen=True)
class TrialSummary:
    """Per-trial conditional frequency vectors.

    Each vector is the exact ratio ``cell count / arm total``. The
    treated-side vectors are ``None`` for the control-only target trial.
    Composite vectors follow :data:`COMPOSITE_STATES` ordering.
    """

    trial_id: str
    is_target: bool
    arm_sizes: tuple[int, int]
    control_outcome: np.ndarray
    treated_outcome: np.ndarray | None
    control_surrogate: np.ndarray | None = None
    treated_surrogate: np.ndarray | None = None
    control_composite: np.ndarray | None = None
    treated_composite: np.ndarray | None = None


@dataclass(frozen=True)
class Summaries:
    """Sufficient statistics of a dataset: one :class:`TrialSummary` per
    experimental trial, plus the target trial's control-side summary."""

    trials: tuple[TrialSummary, ...]
    target: TrialSummary | None
    outcome_cardinality: int
    has_surrogate: bool

    @property
    def m(self) -> int:
        return len(self.trials)

    @property
    def trial_ids(self) -> tuple[str, ...]:
        return tuple(t.trial_id for t in self.trials)

    def arm_sizes(self) -> np.ndarray:
        return np.array([t.arm_sizes for t in self.trials], dtype=np.int64)


def _open_source(source) -> tuple[TextIO, bool]:
    if hasattr(source, "read"):
        return source, False
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline=""), True
    raise TypeError("source must be a text stream or a path")


def _parse_int(text: str, what: str, line: int) -> int:
    text = text.strip()
    try:
        return int(text, 10)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not a base-10 integer", line) from None


def _rows_to_dataset(
    cells: dict[str, dict[tuple[int, int | None, int], int]],
    order: list[str],
    has_surrogate: bool,
    max_y: int,
    schema: ColumnSchema,
) -> MultiTrialDataset:
    k = max_y + 1
    if k < 2:
        raise ValidationError("the outcome must have at least two categories")
    trials: list[TrialCellCounts] = []
    target: TrialCellCounts | None = None
    for trial_id in order:
        shape = (2, 2, k) if has_surrogate else (2, k)
        arr = np.zeros(shape, dtype=np.int64)
        for (arm, s, y), c in cells[trial_id].items():
            if has_surrogate:
                arr[arm, s, y] += c
            else:
                arr[arm, y] += c
        cell = TrialCellCounts(
            trial_id=trial_id, counts=arr, is_target=(trial_id == schema.target_label)
        )
        if cell.is_target:
            target = cell
        else:
            trials.append(cell)
    if not trials:
        raise ValidationError("no experimental trials found in input")
    return MultiTrialDataset(trials=tuple(trials), target=target)


def _parse_rows(
    source, schema: ColumnSchema, with_count: bool
) -> MultiTrialDataset:
    stream, owned = _open_source(source)
    try:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("input is empty", 1) from None
        expected = schema.header(with_count)
        if [h.strip() for h in header] != expected:
            raise SchemaError(
                f"expected header {','.join(expected)!r}, got {','.join(header)!r}"
            )
        cells: dict[str, dict[tuple[int, int | None, int], int]] = {}
        order: list[str] = []
        surrogate_seen: bool | None = None
        max_y = -1
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(expected):
                raise ParseError(
                    f"expected {len(expected)} fields, got {len(row)}", line
                )
            trial = row[0].strip()
            if not trial:
                raise ParseError("empty trial label", line)
            arm = _parse_int(row[1], "arm", line)
            if arm not in (0, 1):
                raise ParseError(f"arm must be 0 or 1, got {arm}", line)
            s_text = row[2].strip()
            if s_text == schema.na_token:
                s: int | None = None
            else:
                s = _parse_int(row[2], "surrogate", line)
                if s not in (0, 1):
                    raise ParseError(f"surrogate must be 0, 1 or NA, got {s}", line)
            has_s = s is not None
            if surrogate_seen is None:
                surrogate_seen = has_s
            elif surrogate_seen != has_s:
                raise SchemaError(
                    f"line {line}: surrogate column mixes values and "
                    f"{schema.na_token!r}; presence must be uniform"
                )
            y = _parse_int(row[3], "outcome", line)
            if y < 0:
                raise ParseError(f"outcome must be nonnegative, got {y}", line)
            count = _parse_int(row[4], "count", line) if with_count else 1
            if count < 0:
                raise ValidationError(
                    f"line {line}: negative count {count} for trial {trial!r}"
                )
            max_y = max(max_y, y)
            if trial not in cells:
                cells[trial] = {}
                order.append(trial)
            key = (arm, s, y)
            cells[trial][key] = cells[trial].get(key, 0) + count
        if not order:
            raise ParseError("no data rows in input", reader.line_num)
        return _rows_to_dataset(cells, order, bool(surrogate_seen), max_y, schema)
    finally:
        if owned:
            stream.close()


def parse_dataset(source, schema: ColumnSchema = DEFAULT_SCHEMA) -> MultiTrialDataset:
    """Parse a cell-count CSV into a :class:`MultiTrialDataset`.

    ``source`` may be an open text stream or a filesystem path.
    """
    return _parse_rows(source, schema, with_count=True)


def parse_unit_rows(source, schema: ColumnSchema = DEFAULT_SCHEMA) -> MultiTrialDataset:
    """Parse long-format unit rows (one row per individual, no count column)
    and aggregate them into cell counts."""
    return _parse_rows(source, schema, with_count=False)


def serialize_dataset(
    dataset: MultiTrialDataset, schema: ColumnSchema = DEFAULT_SCHEMA
) -> str:
    """Render a dataset back to its canonical CSV representation.

    Every cell is written, including zero counts, so the outcome
    cardinality and surrogate presence survive a round trip.
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(schema.header())
    k = dataset.outcome_cardinality
    for trial in dataset.all_trials:
        arms = (0,) if trial.is_target else (0, 1)
        for arm in arms:
            if dataset.has_surrogate:
                for s in (0, 1):
                    for y in range(k):
                        writer.writerow(
                            [trial.trial_id, arm, s, y, int(trial.counts[arm, s, y])]
                        )
            else:
                for y in range(k):
                    writer.writerow(
                        [trial.trial_id, arm, schema.na_token, y, int(trial.counts[arm, y])]
                    )
    return out.getvalue()


def _freq(counts: np.ndarray, total: int) -> np.ndarray:
    # Exact per-cell ratio; bit-stable under a common scaling of all counts.
    return counts / float(total)


def _summarize_trial(trial: TrialCellCounts) -> TrialSummary:
    n0, n1 = trial.arm_totals
    if n0 <= 0:
        raise EstimationError(
            f"trial {trial.trial_id!r} has no units in arm 0; "
            "frequencies are undefined"
        )
    if n1 <= 0 and not trial.is_target:
        raise EstimationError(
            f"trial {trial.trial_id!r} has no units in arm 1; "
            "frequencies are undefined"
        )
    if trial.has_surrogate:
        c0 = trial.counts[0]
        control = dict(
            control_outcome=_freq(c0.sum(axis=0), n0),
            control_surrogate=_freq(c0.sum(axis=1), n0),
            control_composite=_freq(c0.reshape(-1), n0),
        )
        if trial.is_target:
            treated = dict(
                treated_outcome=None, treated_surrogate=None, treated_composite=None
            )
        else:
            c1 = trial.counts[1]
            treated = dict(
                treated_outcome=_freq(c1.sum(axis=0), n1),
                treated_surrogate=_freq(c1.sum(axis=1), n1),
                treated_composite=_freq(c1.reshape(-1), n1),
            )
    else:
        control = dict(control_outcome=_freq(trial.counts[0], n0))
        treated = dict(
            treated_outcome=None if trial.is_target else _freq(trial.counts[1], n1)
        )
    return TrialSummary(
        trial_id=trial.trial_id,
        is_target=trial.is_target,
        arm_sizes=(n0, n1),
        **control,
        **treated,
    )


def summarize(dataset: MultiTrialDataset) -> Summaries:
    """Compute per-trial conditional frequencies.

    Raises :class:`EstimationError` when a non-target trial has an empty
    arm. For the target trial only control-side vectors are produced.
    """
    return Summaries(
        trials=tuple(_summarize_trial(t) for t in dataset.trials),
        target=None if dataset.target is None else _summarize_trial(dataset.target),
        outcome_cardinality=dataset.outcome_cardinality,
        has_surrogate=dataset.has_surrogate,
    )
