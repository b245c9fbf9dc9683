"""Sorted group average treatment effect (GATES) curves and plug-in variances.

All curves live on the grid p_i = i/n, i = 1..n, so the top-p group is
exactly the first i units in score order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.stats import norm

from .dataset import SortedDataset

CostFn = Callable[[np.ndarray, float], "np.ndarray | float"]


@dataclass(frozen=True)
class StatisticFamily:
    """Which unit-level statistic is averaged over the top-p group.

    ``cost_fn(covariates, p)`` receives the (n, d) covariate matrix in score
    order and returns the per-unit cost at fraction p.  ``negate`` flips the
    sign of a covariate curve (used to build upper bounds).
    """

    kind: Literal["plain", "cost_adjusted", "mean_adjusted", "covariate"] = "plain"
    j: int | None = None
    cost_fn: CostFn | None = field(default=None, compare=False)
    negate: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("plain", "cost_adjusted", "mean_adjusted", "covariate"):
            raise ValueError(f"unknown statistic family {self.kind!r}")
        if (self.cost_fn is not None) != (self.kind == "cost_adjusted"):
            raise ValueError("cost_fn must be given iff kind == 'cost_adjusted'")
        if self.kind == "covariate" and (self.j is None or self.j < 0):
            raise ValueError("covariate family needs a non-negative index j")

    @classmethod
    def plain(cls) -> "StatisticFamily":
        return cls("plain")

    @classmethod
    def mean_adjusted(cls) -> "StatisticFamily":
        return cls("mean_adjusted")

    @classmethod
    def cost_adjusted(cls, cost_fn: CostFn) -> "StatisticFamily":
        return cls("cost_adjusted", cost_fn=cost_fn)

    @classmethod
    def covariate(cls, j: int, negate: bool = False) -> "StatisticFamily":
        return cls("covariate", j=j, negate=negate)

    @property
    def label(self) -> str:
        if self.kind == "covariate":
            return f"{'neg_' if self.negate else ''}covariate({self.j})"
        return self.kind


@dataclass(frozen=True, eq=False)
class GatesCurve:
    """Point estimates and plug-in variances on the grid i/n.

    ``ref_variance`` is the variance of the plain (or own, for covariate and
    cost-adjusted curves) estimate at p = 1; it normalizes the uniform bands.
    ``ids`` lists unit ids in score order.
    """

    grid: np.ndarray
    values: np.ndarray
    variances: np.ndarray
    family: StatisticFamily
    n: int
    n1: int
    n0: int
    ref_variance: float
    ids: tuple[str, ...] = ()

    def index_at(self, p: float) -> int:
        """Index of the largest grid point <= p."""
        if not 0 < p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {p}")
        i = int(math.floor(p * self.n + 1e-9 * self.n))
        if i < 1:
            raise ValueError(f"p={p} is below the first grid point 1/{self.n}")
        return min(i, self.n) - 1

    def at(self, p: float) -> tuple[float, float]:
        i = self.index_at(p)
        return float(self.values[i]), float(self.variances[i])


def ite_estimates(s: SortedDataset) -> np.ndarray:
    """Per-unit IPW effect proxies in score order."""
    n, n1, n0 = s.n, s.n1, s.n0
    t = s.treatment.astype(float)
    y = s.outcome
    return t * y / (n1 / n) - (1.0 - t) * y / (n0 / n)


def _variance_floor(adjusted: np.ndarray) -> float:
    scale = float(np.max(np.abs(adjusted))) if adjusted.size else 0.0
    return 1e-12 * scale * scale


def _prefix_arm_variance(adjusted: np.ndarray, in_arm: np.ndarray, n_arm: int) -> np.ndarray:
    """Within-arm sample variance of 1{rank <= i}*adjusted, for every i."""
    x = np.where(in_arm, adjusted, 0.0)
    total = np.cumsum(x)
    sq = np.cumsum(x * x)
    return np.maximum(sq - total * total / n_arm, 0.0) / (n_arm - 1)


def _neyman_variance(
    adjusted: np.ndarray, treatment: np.ndarray, n1: int, n0: int, values: np.ndarray
) -> np.ndarray:
    n = adjusted.size
    p = np.arange(1, n + 1) / n
    s1 = _prefix_arm_variance(adjusted, treatment == 1, n1)
    s0 = _prefix_arm_variance(adjusted, treatment == 0, n0)
    v = (s1 / n1 + s0 / n0 - p * (1.0 - p) / (n - 1) * values**2) / p**2
    return np.where(v < 0.0, _variance_floor(adjusted), v)


def _pooled_variance(x: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Plug-in variance of a top-p mean of an outcome observed on every unit.

    Same shape as the arm-wise formula with a single pooled arm: the sample
    variance of 1{rank <= i}*x over all n units, less the share explained by
    the fixed group size.  A constant x gives exactly zero.
    """
    n = x.size
    p = np.arange(1, n + 1) / n
    s = _prefix_arm_variance(x, np.ones(n, dtype=bool), n)
    v = (s / n - p * (1.0 - p) / (n - 1) * values**2) / p**2
    return np.where(v < 0.0, _variance_floor(x), v)


def _covariate_outcomes(s: SortedDataset, j: int, negate: bool) -> np.ndarray:
    if j >= s.base.d:
        raise IndexError(f"covariate index {j} out of range for d={s.base.d}")
    x = s.covariates[:, j]
    return -x if negate else x


def _cost_adjusted(s: SortedDataset, cost_fn: CostFn) -> tuple[np.ndarray, np.ndarray]:
    n, n1, n0 = s.n, s.n1, s.n0
    t = s.treatment
    y = s.outcome
    psi = ite_estimates(s)
    x = s.covariates
    prefix = np.cumsum(psi)
    values = np.empty(n)
    variances = np.empty(n)
    for i in range(n):
        p = (i + 1) / n
        cost = np.broadcast_to(np.asarray(cost_fn(x, p), dtype=float), (n,))
        if not np.all(np.isfinite(cost)):
            raise ValueError(f"cost_fn returned a non-finite value at p={p}")
        k = i + 1
        values[i] = (prefix[i] - np.cumsum(cost)[i]) / k
        # outcomes shifted so that the IPW contrast reproduces psi - cost
        adjusted = np.where(t == 1, y - cost * (n1 / n), y + cost * (n0 / n))
        s1 = _prefix_arm_variance(adjusted, t == 1, n1)[i]
        s0 = _prefix_arm_variance(adjusted, t == 0, n0)[i]
        v = (s1 / n1 + s0 / n0 - p * (1.0 - p) / (n - 1) * values[i] ** 2) / p**2
        variances[i] = _variance_floor(adjusted) if v < 0.0 else v
    return values, variances


def _plain_parts(s: SortedDataset) -> tuple[np.ndarray, np.ndarray]:
    cached = s._cache.get("plain")
    if cached is None:
        psi = ite_estimates(s)
        values = np.cumsum(psi) / np.arange(1, s.n + 1)
        variances = _neyman_variance(s.outcome, s.treatment, s.n1, s.n0, values)
        cached = (values, variances)
        s._cache["plain"] = cached
    return cached


def gates_variance(s: SortedDataset, family: StatisticFamily | None = None) -> np.ndarray:
    """Plug-in variance of the curve estimate at every grid point."""
    return gates_curve(s, family).variances


def gates_curve(s: SortedDataset, family: StatisticFamily | None = None) -> GatesCurve:
    """Prefix-average curve for the chosen statistic, with plug-in variances.

    ``mean_adjusted`` subtracts (i/n) times the p=1 estimate.  Its variance
    is the plain variance times (1 - t(p)), with t(p) = p^2 V(p) / V(1) the
    Wiener-time of the plain curve, i.e. the bridge variance t(1 - t) mapped
    back to the curve scale.
    """
    family = family or StatisticFamily.plain()
    n, n1, n0 = s.n, s.n1, s.n0
    grid = np.arange(1, n + 1) / n
    if family.kind == "plain":
        values, variances = _plain_parts(s)
        ref = float(variances[-1])
    elif family.kind == "mean_adjusted":
        plain_values, plain_var = _plain_parts(s)
        values = plain_values - grid * plain_values[-1]
        ref = float(plain_var[-1])
        if ref > 0.0:
            shrink = np.clip(1.0 - grid**2 * plain_var / ref, 0.0, 1.0)
        else:
            shrink = np.zeros(n)
        variances = plain_var * shrink
    elif family.kind == "covariate":
        x = _covariate_outcomes(s, family.j, family.negate)  # type: ignore[arg-type]
        values = np.cumsum(x) / np.arange(1, n + 1)
        variances = _pooled_variance(x, values)
        ref = float(variances[-1])
    else:
        values, variances = _cost_adjusted(s, family.cost_fn)  # type: ignore[arg-type]
        ref = float(variances[-1])
    values = np.array(values, dtype=float)
    variances = np.array(variances, dtype=float)
    for arr in (grid, values, variances):
        arr.setflags(write=False)
    return GatesCurve(
        grid=grid,
        values=values,
        variances=variances,
        family=family,
        n=n,
        n1=n1,
        n0=n0,
        ref_variance=ref,
        ids=s.ids,
    )


def pointwise_band(curve: GatesCurve, alpha: float) -> np.ndarray:
    """One-sided pointwise lower bounds at level 1 - alpha."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return curve.values - norm.ppf(1.0 - alpha) * np.sqrt(curve.variances)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_curve_csv(curve: GatesCurve, path: str, alpha: float) -> None:
    lower = pointwise_band(curve, alpha)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["p", "estimate", "variance", "pointwise_lower"])
        for row in zip(curve.grid, curve.values, curve.variances, lower):
            writer.writerow([_fmt(v) for v in row])


def curve_to_dict(curve: GatesCurve, alpha: float) -> dict:
    return {
        "family": curve.family.label,
        "n": curve.n,
        "n1": curve.n1,
        "n0": curve.n0,
        "alpha": alpha,
        "ref_variance": curve.ref_variance,
        "p": curve.grid.tolist(),
        "estimate": curve.values.tolist(),
        "variance": curve.variances.tolist(),
        "pointwise_lower": pointwise_band(curve, alpha).tolist(),
    }


def write_curve_json(curve: GatesCurve, path: str, alpha: float) -> None:
    with open(path, "w") as fh:
        json.dump(curve_to_dict(curve, alpha), fh, indent=2, sort_keys=True)
        fh.write("\n")
