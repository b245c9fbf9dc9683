"""Calibration of uniform band coefficients and evaluation of uniform bands.

Every search runs on one frozen path batch, so feasibility is monotone in
each coefficient and the bisections are exact on that sample.  Returned
coefficients should be re-checked on an independent seed with
:func:`validate`.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np

from .estimator import GatesCurve
from .process import Boundary, EngineConfig, PathBatch, binomial_se, simulate_paths

Family = Literal["min_area", "k_family", "bridge"]

MAX_CORNER = 10.0
DEFAULT_STEP = 0.005
LIL_MESSAGE = (
    "k must satisfy 0 <= k < 1/2: by the law of the iterated logarithm, "
    "W(t) crosses gamma*t^k near t=0 almost surely for every gamma when k >= 1/2, "
    "so no finite gamma exists"
)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BandCoefficients:
    """Calibrated band constants plus the provenance needed to reproduce them.

    ``coeffs`` is (beta0, beta1) for min_area, (gamma,) for k_family and
    (delta0, delta1) for bridge.  ``corner`` is the smallest level c with
    P(max process <= c) >= 1 - alpha on the calibration batch.
    """

    family: Family
    alpha: float
    coeffs: tuple[float, ...]
    trials: int
    grid_points: int
    seed: int
    achieved_prob: float
    achieved_se: float
    corner: float
    k: float | None = None
    p_l: float = 0.0
    step: float = DEFAULT_STEP

    @property
    def area(self) -> float:
        if self.family == "min_area":
            return min_area_objective(*self.coeffs, p_l=self.p_l)
        if self.family == "bridge":
            return bridge_objective(*self.coeffs)
        return float("nan")

    def boundary(self) -> Boundary:
        if self.family == "min_area":
            return Boundary.affine_sqrt(*self.coeffs)
        if self.family == "bridge":
            return Boundary.bridge_affine(*self.coeffs)
        return Boundary.power(self.coeffs[0], self.k or 0.0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["coeffs"] = list(self.coeffs)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BandCoefficients":
        fields = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        fields["coeffs"] = tuple(float(c) for c in fields["coeffs"])
        return cls(**fields)


def min_area_objective(beta0: float, beta1: float, p_l: float = 0.0) -> float:
    """Integral of beta0 + beta1*sqrt(t) over [p_l, 1]."""
    return (1.0 - p_l) * beta0 + (2.0 / 3.0) * (1.0 - p_l**1.5) * beta1


def bridge_objective(delta0: float, delta1: float) -> float:
    """Integral of delta0 + delta1*sqrt(t(1-t)) over [0, 1]."""
    return delta0 + (math.pi / 8.0) * delta1


def _required(alpha: float, trials: int) -> int:
    need = math.ceil((1.0 - alpha) * trials - 1e-9)
    if need > trials:
        raise CalibrationError(f"alpha={alpha} is too small for {trials} trials")
    return max(need, 1)


def corner_level(batch: PathBatch, alpha: float) -> float:
    """Smallest constant c with at least (1 - alpha) of paths never above c.

    This is the exact end point of a line search over constant boundaries on
    the frozen batch: the ceil((1 - alpha) * trials)-th smallest path maximum.
    """
    need = _required(alpha, batch.trials)
    level = float(np.partition(batch.maxima, need - 1)[need - 1])
    level = max(level, 0.0)
    if level > MAX_CORNER:
        raise CalibrationError(
            f"corner level {level:.3f} exceeds cap {MAX_CORNER}; alpha={alpha} too small"
        )
    return level


def _check_common(alpha: float, step: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not step > 0:
        raise ValueError(f"step must be > 0, got {step}")


def _sweep(
    batch: PathBatch,
    alpha: float,
    step: float,
    make: Callable[[float, float], Boundary],
    objective: Callable[[float, float], float],
    trace: list | None,
) -> tuple[float, float, float]:
    """Outer sweep over the constant term, inner bisection on the shape term.

    The inner upper end carries over between sweep steps: a shape coefficient
    feasible for one constant stays feasible for every larger constant.
    The returned shape coefficient is the feasible end of the final bracket.
    """
    need = _required(alpha, batch.trials)
    corner = corner_level(batch, alpha)

    def feasible(c0: float, c1: float) -> bool:
        return batch.noncrossing_count(make(c0, c1)) >= need

    best = (corner, 0.0, objective(corner, 0.0))
    if trace is not None:
        trace.append({"c0": corner, "c1": 0.0, "area": best[2], "corner": True})
    upper = 0.75 * corner
    n_steps = int(math.floor(corner / step + 1e-9))
    for idx in range(n_steps + 1):
        c0 = idx * step
        if not feasible(c0, upper):
            continue
        lo = 0.0
        while upper - lo > step:
            mid = 0.5 * (lo + upper)
            if feasible(c0, mid):
                upper = mid
            else:
                lo = mid
        area = objective(c0, upper)
        if trace is not None:
            trace.append({"c0": c0, "c1": upper, "area": area, "corner": False})
        if area < best[2]:
            best = (c0, upper, area)
    return best


def _finish(
    family: Family,
    alpha: float,
    coeffs: tuple[float, ...],
    batch: PathBatch,
    boundary: Boundary,
    corner: float,
    **extra,
) -> BandCoefficients:
    prob, se = batch.noncrossing_probability(boundary)
    cfg = batch.config
    return BandCoefficients(
        family=family,
        alpha=alpha,
        coeffs=tuple(float(c) for c in coeffs),
        trials=cfg.trials,
        grid_points=cfg.grid_points,
        seed=cfg.seed,
        achieved_prob=prob,
        achieved_se=se,
        corner=corner,
        **extra,
    )


def calibrate_min_area(
    alpha: float,
    p_l: float = 0.0,
    cfg: EngineConfig | None = None,
    step: float = DEFAULT_STEP,
    batch: PathBatch | None = None,
    trace: list | None = None,
) -> BandCoefficients:
    """Minimum-area (beta0, beta1) for the boundary beta0 + beta1*sqrt(t).

    The area is taken over [p_l, 1].
    """
    _check_common(alpha, step)
    if not 0 <= p_l < 1:
        raise ValueError(f"p_l must lie in [0, 1), got {p_l}")
    batch = batch or simulate_paths(cfg or EngineConfig(), "wiener")
    b0, b1, _ = _sweep(
        batch,
        alpha,
        step,
        Boundary.affine_sqrt,
        lambda a, b: min_area_objective(a, b, p_l),
        trace,
    )
    return _finish(
        "min_area", alpha, (b0, b1), batch, Boundary.affine_sqrt(b0, b1),
        corner_level(batch, alpha), p_l=p_l, step=step,
    )


def calibrate_bridge(
    alpha: float,
    cfg: EngineConfig | None = None,
    step: float = DEFAULT_STEP,
    batch: PathBatch | None = None,
    trace: list | None = None,
) -> BandCoefficients:
    """Minimum-area (delta0, delta1) for a Brownian bridge under delta0 + delta1*sqrt(t(1-t))."""
    _check_common(alpha, step)
    batch = batch or simulate_paths(cfg or EngineConfig(), "bridge")
    if batch.process != "bridge":
        raise ValueError("calibrate_bridge needs a bridge path batch")
    d0, d1, _ = _sweep(batch, alpha, step, Boundary.bridge_affine, bridge_objective, trace)
    return _finish(
        "bridge", alpha, (d0, d1), batch, Boundary.bridge_affine(d0, d1),
        corner_level(batch, alpha), step=step,
    )


def calibrate_k_family(
    alpha: float,
    k: float,
    cfg: EngineConfig | None = None,
    step: float = 1e-3,
    batch: PathBatch | None = None,
) -> BandCoefficients:
    """Smallest gamma (to within ``step``) with P(W(t) <= gamma*t^k on [0,1]) >= 1 - alpha."""
    if not 0 <= k < 0.5:
        raise ValueError(LIL_MESSAGE + f" (got k={k})")
    _check_common(alpha, step)
    batch = batch or simulate_paths(cfg or EngineConfig(), "wiener")
    need = _required(alpha, batch.trials)
    corner = corner_level(batch, alpha)

    def feasible(gamma: float) -> bool:
        return batch.noncrossing_count(Boundary.power(gamma, k)) >= need

    # t^k <= 1 on [0, 1], so gamma is at least the corner level
    lo, hi = corner, max(2.0 * corner, 1.0)
    while not feasible(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise CalibrationError(f"no feasible gamma found for k={k}, alpha={alpha}")
    while hi - lo > step:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return _finish(
        "k_family", alpha, (hi,), batch, Boundary.power(hi, k), corner, k=k, step=step,
    )


def validate(coeffs: BandCoefficients, seed: int, workers: int = 1) -> tuple[float, float]:
    """Non-crossing probability of the calibrated boundary on fresh paths."""
    cfg = EngineConfig(coeffs.trials, coeffs.grid_points, seed, workers)
    boundary = coeffs.boundary()
    batch = simulate_paths(cfg, boundary.process)
    return batch.noncrossing_probability(boundary)


def independent_seed(seed: int) -> int:
    """A validation seed that never coincides with the calibration seed."""
    return int(np.random.SeedSequence([seed, 0x5EED]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class UniformBand:
    """Uniform lower-bound curve aligned to a GatesCurve grid."""

    grid: np.ndarray
    lower: np.ndarray
    alpha: float
    family: Family
    coeffs: tuple[float, ...]

    def at(self, p: float, n: int) -> float:
        i = min(int(math.floor(p * n + 1e-9 * n)), n) - 1
        return float(self.lower[i])


def band_lower_bound(curve: GatesCurve, coeffs: BandCoefficients) -> UniformBand:
    """Uniform lower bound for a curve under calibrated coefficients.

    min_area: est - (b0/p) sqrt(V1) - b1 sqrt(V(p));
    k_family: est - gamma V(p)^k V1^(1/2-k) p^(2k-1);
    bridge:   est - (d0/p) sqrt(V1) - d1 sqrt(V(p) (1 - p^2 V(p)/V1)),
    where V1 is the curve's reference variance and, for the bridge, V(p) is
    the plain-curve variance.  The mean-adjusted curve already stores
    V(p)(1 - p^2 V(p)/V1) with the factor clamped to [0, 1].
    """
    mean_adjusted = curve.family.kind == "mean_adjusted"
    if (coeffs.family == "bridge") != mean_adjusted:
        raise ValueError(
            f"{coeffs.family} coefficients do not match a {curve.family.kind} curve "
            "(bridge coefficients go with mean_adjusted curves only)"
        )
    p = curve.grid
    v = curve.variances
    ref = max(curve.ref_variance, 0.0)
    if coeffs.family == "min_area":
        b0, b1 = coeffs.coeffs
        width = b0 / p * math.sqrt(ref) + b1 * np.sqrt(v)
    elif coeffs.family == "k_family":
        (gamma,) = coeffs.coeffs
        k = coeffs.k or 0.0
        width = gamma * np.power(v, k) * ref ** (0.5 - k) * np.power(p, 2 * k - 1)
    else:
        d0, d1 = coeffs.coeffs
        width = d0 / p * math.sqrt(ref) + d1 * np.sqrt(v)
    lower = curve.values - width
    lower.setflags(write=False)
    return UniformBand(grid=curve.grid, lower=lower, alpha=coeffs.alpha,
                       family=coeffs.family, coeffs=coeffs.coeffs)


# ---------------------------------------------------------------- cache


@dataclass
class CalibrationCache:
    """Append-only JSON-lines store of calibration records."""

    path: str
    _records: list = field(default_factory=list, init=False, repr=False)
    _loaded: bool = field(default=False, init=False, repr=False)

    @staticmethod
    def default_path() -> str:
        root = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
        return os.path.join(root, "gatesband", "calibrations.jsonl")

    @staticmethod
    def key(family: str, alpha: float, k: float | None, p_l: float, trials: int,
            grid_points: int, seed: int, step: float) -> tuple:
        return (family, float(alpha), None if k is None else float(k), float(p_l),
                int(trials), int(grid_points), int(seed), float(step))

    @staticmethod
    def key_of(c: BandCoefficients) -> tuple:
        return CalibrationCache.key(c.family, c.alpha, c.k, c.p_l, c.trials,
                                    c.grid_points, c.seed, c.step)

    def _load(self) -> None:
        if self._loaded:
            return
        self._loaded = True
        if not os.path.exists(self.path):
            return
        with open(self.path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    self._records.append(BandCoefficients.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError):
                    continue

    def get(self, key: tuple) -> BandCoefficients | None:
        self._load()
        for rec in reversed(self._records):
            if self.key_of(rec) == key:
                return rec
        return None

    def put(self, coeffs: BandCoefficients) -> None:
        self._load()
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(json.dumps(coeffs.to_dict(), sort_keys=True) + "\n")
        self._records.append(coeffs)


def calibrate(
    family: Family,
    alpha: float,
    cfg: EngineConfig,
    k: float | None = None,
    p_l: float = 0.0,
    step: float | None = None,
    cache: CalibrationCache | None = None,
    trace: list | None = None,
) -> BandCoefficients:
    """Dispatch to the family's calibration, consulting ``cache`` first."""
    if family == "k_family":
        if k is None:
            raise ValueError("k_family calibration needs k")
        if not 0 <= k < 0.5:
            raise ValueError(LIL_MESSAGE + f" (got k={k})")
        step = 1e-3 if step is None else step
    else:
        step = DEFAULT_STEP if step is None else step
        k = None
    if family != "min_area":
        p_l = 0.0
    key = CalibrationCache.key(family, alpha, k, p_l, cfg.trials, cfg.grid_points, cfg.seed, step)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    if family == "min_area":
        out = calibrate_min_area(alpha, p_l, cfg, step, trace=trace)
    elif family == "bridge":
        out = calibrate_bridge(alpha, cfg, step, trace=trace)
    elif family == "k_family":
        out = calibrate_k_family(alpha, k, cfg, step)  # type: ignore[arg-type]
    else:
        raise ValueError(f"unknown band family {family!r}")
    if cache is not None:
        cache.put(out)
    return out
