"""Experimental data: loading, validation and score ordering."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised when input data violate the randomized-experiment contract."""


@dataclass(frozen=True)
class UnitRecord:
    id: str
    outcome: float
    treatment: int
    score: float
    covariates: tuple[float, ...] = ()


@dataclass(frozen=True)
class ColumnMap:
    """Names of the CSV columns holding each field."""

    outcome: str = "outcome"
    treatment: str = "treatment"
    score: str = "score"
    covariates: tuple[str, ...] = ()
    id: str | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "ColumnMap":
        covs = mapping.get("covariates", ())
        if isinstance(covs, str):
            covs = tuple(c.strip() for c in covs.split(",") if c.strip())
        return cls(
            outcome=str(mapping.get("outcome", "outcome")),
            treatment=str(mapping.get("treatment", "treatment")),
            score=str(mapping.get("score", "score")),
            covariates=tuple(covs),
            id=mapping.get("id"),  # type: ignore[arg-type]
        )


@dataclass(frozen=True, eq=False)
class EvaluationDataset:
    """Column-oriented store of n experimental units.

    ``covariates`` has shape (n, d); d may be 0.
    """

    ids: tuple[str, ...]
    outcome: np.ndarray
    treatment: np.ndarray
    score: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()
    tie_seed: int = 0

    def __post_init__(self) -> None:
        n = len(self.ids)
        outcome = np.asarray(self.outcome, dtype=float)
        treatment = np.asarray(self.treatment)
        score = np.asarray(self.score, dtype=float)
        covariates = np.asarray(self.covariates, dtype=float)
        if covariates.ndim == 1 and covariates.size == 0:
            covariates = covariates.reshape(n, 0)
        if outcome.shape != (n,) or treatment.shape != (n,) or score.shape != (n,):
            raise DatasetError("outcome, treatment and score must all have length n")
        if covariates.ndim != 2 or covariates.shape[0] != n:
            raise DatasetError(f"covariates must have shape (n, d), got {covariates.shape}")
        if not np.all(np.isin(treatment, (0, 1))):
            raise DatasetError("treatment must be binary (0/1)")
        if not np.all(np.isfinite(outcome)):
            raise DatasetError("outcome contains non-finite values")
        if not np.all(np.isfinite(score)):
            raise DatasetError("score contains non-finite values")
        if not np.all(np.isfinite(covariates)):
            raise DatasetError("covariates contain non-finite values")
        if len(set(self.ids)) != n:
            raise DatasetError("unit ids must be unique")
        treatment = treatment.astype(np.int8)
        n1 = int(treatment.sum())
        if n1 < 2 or n - n1 < 2:
            raise DatasetError(
                f"need at least 2 treated and 2 control units, got n1={n1}, n0={n - n1}"
            )
        names = self.covariate_names or tuple(f"x{j}" for j in range(covariates.shape[1]))
        if len(names) != covariates.shape[1]:
            raise DatasetError("covariate_names length does not match covariate columns")
        for name, value in (
            ("outcome", outcome),
            ("treatment", treatment),
            ("score", score),
            ("covariates", covariates),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "covariate_names", tuple(names))

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n1(self) -> int:
        return int(self.treatment.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def units(self) -> Iterator[UnitRecord]:
        for i in range(self.n):
            yield UnitRecord(
                id=self.ids[i],
                outcome=float(self.outcome[i]),
                treatment=int(self.treatment[i]),
                score=float(self.score[i]),
                covariates=tuple(float(x) for x in self.covariates[i]),
            )

    @classmethod
    def from_records(
        cls, records: Sequence[UnitRecord], tie_seed: int = 0, covariate_names: Sequence[str] = ()
    ) -> "EvaluationDataset":
        d = len(records[0].covariates) if records else 0
        if any(len(r.covariates) != d for r in records):
            raise DatasetError("all covariate vectors must share the same length")
        return cls(
            ids=tuple(r.id for r in records),
            outcome=np.array([r.outcome for r in records], dtype=float),
            treatment=np.array([r.treatment for r in records]),
            score=np.array([r.score for r in records], dtype=float),
            covariates=np.array([r.covariates for r in records], dtype=float).reshape(len(records), d),
            covariate_names=tuple(covariate_names),
            tie_seed=tie_seed,
        )

    def to_csv(self, path: str) -> ColumnMap:
        """Write a CSV that :func:`load_csv` reads back to an equal dataset."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "outcome", "treatment", "score", *self.covariate_names])
            for i in range(self.n):
                writer.writerow(
                    [
                        self.ids[i],
                        repr(float(self.outcome[i])),
                        int(self.treatment[i]),
                        repr(float(self.score[i])),
                        *(repr(float(x)) for x in self.covariates[i]),
                    ]
                )
        return ColumnMap(covariates=self.covariate_names, id="id")

    def equals(self, other: "EvaluationDataset") -> bool:
        return (
            self.ids == other.ids
            and self.tie_seed == other.tie_seed
            and self.covariate_names == other.covariate_names
            and np.array_equal(self.outcome, other.outcome)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.score, other.score)
            and np.array_equal(self.covariates, other.covariates)
        )


def _parse_float(raw: str, column: str, line: int, path: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise DatasetError(f"{path}:{line}: column {column!r}: cannot parse {raw!r} as a number")
    if not math.isfinite(value):
        raise DatasetError(f"{path}:{line}: column {column!r}: non-finite value {raw!r}")
    return value


def _parse_treatment(raw: str, column: str, line: int, path: str) -> int:
    text = raw.strip()
    try:
        value = float(text)
    except ValueError:
        value = math.nan
    if value not in (0.0, 1.0):
        raise DatasetError(f"{path}:{line}: column {column!r}: non-binary treatment {raw!r}")
    return int(value)


def load_csv(
    path: str, columns: ColumnMap | Mapping[str, object] | None = None, tie_seed: int = 0
) -> EvaluationDataset:
    """Read and validate a randomized-experiment CSV.

    Rows with a missing required field raise; nothing is dropped silently.
    Without an id column, units are numbered by data row starting at 1.
    """
    if columns is None:
        columns = ColumnMap()
    elif not isinstance(columns, ColumnMap):
        columns = ColumnMap.from_mapping(columns)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file, header row required")
        required = [columns.outcome, columns.treatment, columns.score, *columns.covariates]
        if columns.id is not None:
            required.append(columns.id)
        for name in required:
            if name not in header:
                raise DatasetError(f"{path}:1: missing column {name!r}")
        pos = {name: header.index(name) for name in required}
        ids, outcome, treatment, score, covs = [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}:{line}: expected {len(header)} fields, found {len(row)}"
                )
            for name in required:
                if not row[pos[name]].strip():
                    raise DatasetError(f"{path}:{line}: missing value in column {name!r}")
            ids.append(row[pos[columns.id]].strip() if columns.id else str(len(ids) + 1))
            outcome.append(_parse_float(row[pos[columns.outcome]], columns.outcome, line, path))
            treatment.append(_parse_treatment(row[pos[columns.treatment]], columns.treatment, line, path))
            score.append(_parse_float(row[pos[columns.score]], columns.score, line, path))
            covs.append([_parse_float(row[pos[c]], c, line, path) for c in columns.covariates])
    try:
        return EvaluationDataset(
            ids=tuple(ids),
            outcome=np.array(outcome, dtype=float),
            treatment=np.array(treatment, dtype=np.int8),
            score=np.array(score, dtype=float),
            covariates=np.array(covs, dtype=float).reshape(len(ids), len(columns.covariates)),
            covariate_names=columns.covariates,
            tie_seed=tie_seed,
        )
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from None


@dataclass(frozen=True, eq=False)
class SortedDataset:
    """A dataset with its units ordered by non-increasing score.

    ``order[i]`` is the index (into ``base``) of the unit with rank i+1.
    ``effective_score`` holds the post-jitter scores in that order.
    """

    base: EvaluationDataset
    order: np.ndarray
    effective_score: np.ndarray
    jitter_applied: bool
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def n1(self) -> int:
        return self.base.n1

    @property
    def n0(self) -> int:
        return self.base.n0

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self.base.ids[i] for i in self.order)

    @property
    def outcome(self) -> np.ndarray:
        return self.base.outcome[self.order]

    @property
    def treatment(self) -> np.ndarray:
        return self.base.treatment[self.order]

    @property
    def covariates(self) -> np.ndarray:
        return self.base.covariates[self.order]

    def top_ids(self, count: int) -> tuple[str, ...]:
        return tuple(self.base.ids[i] for i in self.order[:count])


def tie_jitter_scale(score: np.ndarray) -> float:
    return 1e-9 * (float(score.max() - score.min()) + 1.0)


def sort_by_score(d: EvaluationDataset) -> SortedDataset:
    """Order units by descending score, breaking exact ties with seeded jitter.

    Only units whose score is shared with another unit are jittered.  The
    jitter uniform draws double as a secondary sort key, so the order stays
    strict even when the jitter is below the float resolution of the score.
    """
    score = d.score
    _, inverse, counts = np.unique(score, return_inverse=True, return_counts=True)
    tied = counts[inverse] > 1
    effective = score.copy()
    key = np.zeros(d.n)
    jitter_applied = bool(tied.any())
    if jitter_applied:
        u = np.random.default_rng(d.tie_seed).random(d.n)
        key = np.where(tied, u, 0.0)
        effective = score + np.where(tied, tie_jitter_scale(score) * u, 0.0)
    order = np.lexsort((np.arange(d.n), -key, -effective))
    effective = effective[order]
    order.setflags(write=False)
    effective.setflags(write=False)
    return SortedDataset(base=d, order=order, effective_score=effective, jitter_applied=jitter_applied)
