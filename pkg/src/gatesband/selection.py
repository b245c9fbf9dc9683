"""Subgroup selection with a uniform guarantee, and covariate characterization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .calibration import BandCoefficients, UniformBand, band_lower_bound
from .dataset import SortedDataset
from .estimator import GatesCurve, StatisticFamily, gates_curve

Rule = Literal["argmax_lower", "threshold", "argmax_point"]


@dataclass(frozen=True)
class SubgroupReport:
    rule: Rule
    alpha: float
    p_selected: float
    estimate: float
    guaranteed_lower: float
    selected_ids: tuple[str, ...]
    threshold: float | None = None

    @property
    def n_selected(self) -> int:
        return len(self.selected_ids)

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "alpha": self.alpha,
            "threshold": self.threshold,
            "p_selected": self.p_selected,
            "estimate": self.estimate,
            "guaranteed_lower": self.guaranteed_lower,
            "n_selected": self.n_selected,
            "selected_ids": list(self.selected_ids),
        }


def _check_aligned(curve: GatesCurve, band: UniformBand) -> None:
    if band.lower.shape != curve.values.shape or not np.array_equal(band.grid, curve.grid):
        raise ValueError("band is not aligned to the curve grid")


def default_constraint(curve: GatesCurve, p_min: float = 0.0) -> np.ndarray:
    """Grid mask p >= max(p_min, 5/n)."""
    floor = max(p_min, 5.0 / curve.n)
    return curve.grid >= floor - 1e-12


def _report(curve: GatesCurve, band: UniformBand, i: int, rule: Rule,
            threshold: float | None = None) -> SubgroupReport:
    return SubgroupReport(
        rule=rule,
        alpha=band.alpha,
        p_selected=float(curve.grid[i]),
        estimate=float(curve.values[i]),
        guaranteed_lower=float(band.lower[i]),
        selected_ids=tuple(curve.ids[: i + 1]),
        threshold=threshold,
    )


def _last_argmax(x: np.ndarray, mask: np.ndarray) -> int:
    if not mask.any():
        raise ValueError("selection constraint is empty")
    masked = np.where(mask, x, -np.inf)
    best = masked.max()
    return int(np.flatnonzero(masked == best)[-1])


def select_argmax_lower(
    curve: GatesCurve, band: UniformBand, constraint: np.ndarray | None = None
) -> SubgroupReport:
    """Grid point maximizing the uniform lower bound; ties go to the larger p."""
    _check_aligned(curve, band)
    mask = default_constraint(curve) if constraint is None else np.asarray(constraint, bool)
    return _report(curve, band, _last_argmax(band.lower, mask), "argmax_lower")


def select_argmax_point(
    curve: GatesCurve, band: UniformBand, constraint: np.ndarray | None = None
) -> SubgroupReport:
    """Naive choice maximizing the point estimate, reported with its uniform bound."""
    _check_aligned(curve, band)
    mask = default_constraint(curve) if constraint is None else np.asarray(constraint, bool)
    return _report(curve, band, _last_argmax(curve.values, mask), "argmax_point")


def select_threshold(curve: GatesCurve, band: UniformBand, c: float) -> SubgroupReport | None:
    """Largest grid p whose uniform lower bound is at least c, or None."""
    _check_aligned(curve, band)
    ok = np.flatnonzero(band.lower >= c)
    if ok.size == 0:
        return None
    return _report(curve, band, int(ok[-1]), "threshold", threshold=float(c))


def joint_level(alpha: float, n_covariates: int) -> float:
    """Bonferroni level of the main band plus ``n_covariates`` covariate bands."""
    return 1.0 - (n_covariates + 1) * alpha


@dataclass(frozen=True, eq=False)
class CovariateBounds:
    j: int
    name: str
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    population_mean: float


@dataclass(frozen=True, eq=False)
class Characterization:
    """Uniform bounds on covariate means of the top-p group, beside the main band.

    Each covariate contributes one one-sided statement per use (lower or
    upper); ``joint_level`` counts one statement per covariate plus the main
    band.
    """

    alpha: float
    joint_level: float
    grid: np.ndarray
    main_estimate: np.ndarray
    main_lower: np.ndarray
    covariates: list[CovariateBounds] = field(default_factory=list)

    def table_at(self, p: float) -> list[dict]:
        n = self.grid.size
        i = min(int(math.floor(p * n + 1e-9 * n)), n) - 1
        rows = []
        for cov in self.covariates:
            rows.append({
                "j": cov.j,
                "name": cov.name,
                "p": float(self.grid[i]),
                "estimate": float(cov.estimate[i]),
                "lower": float(cov.lower[i]),
                "upper": float(cov.upper[i]),
                "population_mean": cov.population_mean,
                "difference": float(cov.estimate[i]) - cov.population_mean,
            })
        return rows


def covariate_band(
    sorted_ds: SortedDataset, j: int, coeffs: BandCoefficients
) -> tuple[GatesCurve, UniformBand, UniformBand]:
    """Covariate curve with its uniform lower band and the band on -X_j."""
    if not 0 <= j < sorted_ds.base.d:
        raise IndexError(f"covariate index {j} out of range for d={sorted_ds.base.d}")
    curve = gates_curve(sorted_ds, StatisticFamily.covariate(j))
    neg = gates_curve(sorted_ds, StatisticFamily.covariate(j, negate=True))
    return curve, band_lower_bound(curve, coeffs), band_lower_bound(neg, coeffs)


def characterize(
    sorted_ds: SortedDataset,
    js: Sequence[int],
    coeffs: BandCoefficients,
    main_curve: GatesCurve,
    main_band: UniformBand,
) -> Characterization:
    """Bound E(X_j | top-p group) for each requested covariate.

    Covariate bands reuse the main band's coefficients (each at level
    ``coeffs.alpha``); upper bounds come from the lower band of -X_j.
    """
    if coeffs.family == "bridge":
        raise ValueError("covariate curves are not mean-adjusted; use min_area or k_family coefficients")
    _check_aligned(main_curve, main_band)
    out = []
    for j in js:
        curve, lower, neg_lower = covariate_band(sorted_ds, j, coeffs)
        out.append(CovariateBounds(
            j=j,
            name=sorted_ds.base.covariate_names[j],
            estimate=curve.values,
            lower=lower.lower,
            upper=-neg_lower.lower,
            population_mean=float(curve.values[-1]),
        ))
    return Characterization(
        alpha=coeffs.alpha,
        joint_level=joint_level(coeffs.alpha, len(out)),
        grid=main_curve.grid,
        main_estimate=main_curve.values,
        main_lower=main_band.lower,
        covariates=out,
    )


def format_report_table(reports: Sequence[SubgroupReport | None], labels: Sequence[str],
                        alpha: float) -> str:
    """Plain-text table: proportion selected, GATES estimate, uniform lower bound."""
    level = f"{100 * (1 - alpha):g}% uniform"
    head = f"{'rule':<16}{'proportion selected':>22}{'estimated GATES':>18}{level + ' band':>26}"
    lines = [head, "-" * len(head)]
    for label, rep in zip(labels, reports):
        if rep is None:
            lines.append(f"{label:<16}{'none':>22}{'-':>18}{'-':>26}")
            continue
        band = f"({rep.guaranteed_lower:.3g}, inf)"
        lines.append(
            f"{label:<16}{100 * rep.p_selected:>21.1f}%{rep.estimate:>18.4g}{band:>26}"
        )
    return "\n".join(lines)


def dumps(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
