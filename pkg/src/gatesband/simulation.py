"""Synthetic experiments, population oracles and coverage studies.

Two data-generating processes are provided:

``acic28``
    The 28th outcome model of the 2016 ACIC competition, with the eight
    covariates it references drawn as independent standard normals (the
    competition's covariate table is not available), standard normal outcome
    noise and balanced complete randomization.
``correlation``
    X ~ N(0, 1), Y(t) = X(1 + t) so the unit effect equals X, and the score
    S = rX + sqrt(1 - r^2) Z with independent Z ~ N(0, 1).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.stats import norm

from .calibration import BandCoefficients, band_lower_bound
from .dataset import EvaluationDataset, sort_by_score
from .estimator import StatisticFamily, gates_curve, ite_estimates, pointwise_band
from .selection import default_constraint, select_argmax_lower, select_threshold

ACIC_COVARIATES = ("x4", "x17", "x27", "x29", "x30", "x37", "x42", "x54")


@dataclass(frozen=True)
class DgpSpec:
    kind: Literal["acic28", "correlation"] = "correlation"
    n: int = 100
    r: float = 0.5
    oracle_population: int = 2_000_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("acic28", "correlation"):
            raise ValueError(f"unknown DGP kind {self.kind!r}")
        if self.n < 20:
            raise ValueError(f"n must be >= 20, got {self.n}")
        if self.n % 2:
            raise ValueError(f"n must be even for balanced assignment, got {self.n}")
        if abs(self.r) > 1:
            raise ValueError(f"|r| must be <= 1, got {self.r}")


def _ind(cond: np.ndarray) -> np.ndarray:
    return cond.astype(float)


def acic28_mean(x: np.ndarray, t: int) -> np.ndarray:
    """E(Y(t) | X) for the ACIC 2016 model 28; columns of x follow ACIC_COVARIATES."""
    x4, x17, x27, x29, x30, x37, x42, x54 = (x[:, k] for k in range(8))
    t1 = float(t == 1)
    t0 = float(t == 0)
    return (
        1.60
        + 0.53 * x29
        - 3.80 * x29 * (x29 - 0.98) * (x29 + 0.86)
        - 0.32 * _ind(x17 > 0)
        + 0.21 * _ind(x42 > 0)
        - 0.63 * x27
        + 4.68 * _ind(x27 < -0.61)
        - 0.39 * (x27 + 0.91) * _ind(x27 < -0.91)
        + 0.75 * _ind(x30 <= 0)
        - 1.22 * _ind(x54 <= 0)
        + 0.11 * x37 * _ind(x4 <= 0)
        - 0.71 * _ind(x17 <= 0) * t0
        - 1.82 * _ind(x42 <= 0) * t1
        + 0.28 * _ind(x30 <= 0) * t0
        + (0.58 * x29 - 9.42 * x29 * (x29 - 0.67) * (x29 + 0.34)) * t1
        + (0.44 * x27 - 4.87 * _ind(x27 < -0.80)) * t0
        - 2.54 * _ind(x54 <= 0) * t0
    )


# ------------------------------------------------------------ score rules


@dataclass(frozen=True)
class CorrelatedScore:
    """S = r * effect + sqrt(1 - r^2) * Z; correlation r when the effect is standard normal."""

    r: float

    def __call__(self, covariates: np.ndarray, effect: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(effect.size)
        return self.r * effect + math.sqrt(max(1.0 - self.r**2, 0.0)) * z


@dataclass(frozen=True)
class NoisyOracle:
    """True conditional effect plus Gaussian noise of standard deviation ``noise_sd``."""

    noise_sd: float = 1.0

    def __call__(self, covariates: np.ndarray, effect: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return effect + self.noise_sd * rng.standard_normal(effect.size)


@dataclass(frozen=True)
class LinearScore:
    """Linear function of the covariates, typically fitted on a held-out draw."""

    intercept: float
    coef: tuple[float, ...]

    def __call__(self, covariates: np.ndarray, effect: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.intercept + covariates @ np.asarray(self.coef)


ScoreRule = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]


def default_score_rule(spec: DgpSpec) -> ScoreRule:
    if spec.kind == "correlation":
        return CorrelatedScore(spec.r)
    return NoisyOracle(2.0)


# ------------------------------------------------------------ generation


@dataclass(frozen=True, eq=False)
class SimulatedData:
    dataset: EvaluationDataset
    effect: np.ndarray
    """Noiseless unit effects E(Y(1) - Y(0) | X), aligned with dataset rows."""


def _draw_units(kind: str, size: int, rng: np.random.Generator):
    if kind == "correlation":
        x = rng.standard_normal((size, 1))
        mu0 = x[:, 0].copy()
        mu1 = 2.0 * x[:, 0]
        return x, mu0, mu1, np.zeros(size)
    x = rng.standard_normal((size, len(ACIC_COVARIATES)))
    mu0 = acic28_mean(x, 0)
    mu1 = acic28_mean(x, 1)
    return x, mu0, mu1, rng.standard_normal(size)


def generate(spec: DgpSpec, score_rule: ScoreRule | None = None) -> SimulatedData:
    """Draw one balanced randomized experiment of size ``spec.n``."""
    rng = np.random.default_rng(spec.seed)
    rule = score_rule or default_score_rule(spec)
    n = spec.n
    x, mu0, mu1, noise = _draw_units(spec.kind, n, rng)
    effect = mu1 - mu0
    score = np.asarray(rule(x, effect, rng), dtype=float)
    treatment = np.zeros(n, dtype=np.int8)
    treatment[rng.permutation(n)[: n // 2]] = 1
    outcome = np.where(treatment == 1, mu1, mu0) + noise
    names = ("x",) if spec.kind == "correlation" else ACIC_COVARIATES
    ds = EvaluationDataset(
        ids=tuple(str(i + 1) for i in range(n)),
        outcome=outcome,
        treatment=treatment,
        score=score,
        covariates=x,
        covariate_names=names,
        tie_seed=spec.seed,
    )
    return SimulatedData(dataset=ds, effect=effect)


def fit_linear_score(spec: DgpSpec, n_train: int = 2000, seed: int = 1) -> LinearScore:
    """Least-squares fit of the IPW effect proxies on covariates, on a held-out draw."""
    train = generate(replace(spec, n=n_train, seed=seed), score_rule=NoisyOracle(0.0))
    s = sort_by_score(train.dataset)
    psi = ite_estimates(s)
    design = np.column_stack([np.ones(s.n), s.covariates])
    beta, *_ = np.linalg.lstsq(design, psi, rcond=None)
    return LinearScore(float(beta[0]), tuple(float(b) for b in beta[1:]))


# ------------------------------------------------------------ oracle


@dataclass(frozen=True, eq=False)
class TrueGates:
    """Population GATES curve from prefix means over a large oracle draw."""

    prefix_means: np.ndarray

    @property
    def size(self) -> int:
        return self.prefix_means.size

    @property
    def ate(self) -> float:
        return float(self.prefix_means[-1])

    def __call__(self, p: np.ndarray | float) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        idx = np.clip(np.ceil(p * self.size - 1e-9).astype(np.int64), 1, self.size) - 1
        return self.prefix_means[idx]

    def mean_adjusted(self, p: np.ndarray | float) -> np.ndarray:
        return self(p) - np.asarray(p, dtype=float) * self.ate


def true_gates_oracle(
    spec: DgpSpec, score_rule: ScoreRule | None = None, seed: int | None = None
) -> TrueGates:
    """Sort a large population by score and average the exact unit effects."""
    rule = score_rule or default_score_rule(spec)
    rng = np.random.default_rng([spec.seed if seed is None else seed, 0x0AC1E])
    x, mu0, mu1, _ = _draw_units(spec.kind, spec.oracle_population, rng)
    effect = mu1 - mu0
    score = np.asarray(rule(x, effect, rng), dtype=float)
    order = np.argsort(-score, kind="stable")
    prefix = np.cumsum(effect[order]) / np.arange(1, effect.size + 1)
    return TrueGates(prefix)


def correlation_gates(r: float, p: np.ndarray | float) -> np.ndarray:
    """Closed-form GATES of the correlation DGP: r * phi(z_{1-p}) / p."""
    p = np.asarray(p, dtype=float)
    return r * norm.pdf(norm.ppf(1.0 - p)) / p


# ------------------------------------------------------------ coverage


@dataclass
class CoverageResult:
    replications: int
    n: int
    alpha: float
    coverage: dict[str, float]
    width_ratio: dict[str, float]
    selection: dict[str, float]
    threshold_none: int
    records: list[dict] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "replications": self.replications,
            "n": self.n,
            "alpha": self.alpha,
            "coverage": self.coverage,
            "width_ratio": self.width_ratio,
            "selection": self.selection,
            "threshold_none": self.threshold_none,
        }


def _band_label(c: BandCoefficients) -> str:
    if c.family == "k_family":
        return f"k_family(k={c.k:g})"
    if c.family == "min_area" and c.p_l > 0:
        return f"min_area(p_l={c.p_l:g})"
    return c.family


def _replicate(args) -> dict:
    spec, rule, truth, bands, alpha, threshold, width_from, eval_from = args
    data = generate(spec, rule)
    s = sort_by_score(data.dataset)
    z = norm.ppf(1.0 - alpha)
    rec: dict = {"seed": spec.seed}
    n = spec.n
    ev = np.arange(1, n + 1) / n >= (eval_from or 0.0) - 1e-12
    for idx, coeffs in enumerate(bands):
        family = StatisticFamily.mean_adjusted() if coeffs.family == "bridge" else StatisticFamily.plain()
        curve = gates_curve(s, family)
        target = truth.mean_adjusted(curve.grid) if coeffs.family == "bridge" else truth(curve.grid)
        band = band_lower_bound(curve, coeffs)
        label = _band_label(coeffs)
        covered = band.lower <= target
        rec[f"uniform:{label}"] = bool(np.all(covered[ev]))
        rec[f"uniform_full_grid:{label}"] = bool(np.all(covered))
        pw = pointwise_band(curve, alpha)
        mask = curve.grid >= width_from
        pw_width = float(np.mean((curve.values - pw)[mask]))
        u_width = float(np.mean((curve.values - band.lower)[mask]))
        rec[f"width:{label}"] = u_width / pw_width if pw_width > 0 else math.nan
        rec[f"uniform_le_pointwise:{label}"] = bool(np.all(band.lower <= pw))
        if idx == 0:
            rec["pointwise"] = bool(np.all((pw <= target)[ev]))
            inflated = curve.values - 1.5 * z * np.sqrt(curve.variances)
            rec["pointwise_x1.5"] = bool(np.all((inflated <= target)[ev]))
            sel = select_argmax_lower(curve, band, default_constraint(curve))
            p_idx = int(round(sel.p_selected * curve.n)) - 1
            rec["argmax_lower"] = bool(target[p_idx] >= sel.guaranteed_lower)
            rec["argmax_lower_p"] = sel.p_selected
            thr = select_threshold(curve, band, threshold)
            if thr is None:
                rec["threshold"] = True
                rec["threshold_none"] = True
            else:
                t_idx = int(round(thr.p_selected * curve.n)) - 1
                rec["threshold"] = bool(target[t_idx] >= thr.guaranteed_lower)
                rec["threshold_none"] = False
    return rec


def replication_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


def coverage_study(
    spec: DgpSpec,
    bands: BandCoefficients | Sequence[BandCoefficients],
    alpha: float | None = None,
    replications: int = 500,
    score_rule: ScoreRule | None = None,
    truth: TrueGates | None = None,
    threshold: float = 0.0,
    width_from: float = 0.05,
    eval_from: float | None = None,
    workers: int = 1,
) -> CoverageResult:
    """Whole-curve coverage of uniform and pointwise bands over replications.

    A band covers when it lies below the true curve at every grid point
    p >= ``eval_from`` (default: the whole grid).  At p = 1/n the plug-in
    variance is identically zero, so pointwise bands of any inflation fail
    there whenever the top unit's proxy overshoots; pass ``eval_from`` to
    score coverage on a trimmed range.  Uniform coverage over the full grid
    is always reported as ``uniform_full_grid``.  Width ratios are mean
    uniform width over mean pointwise width on p >= ``width_from``.

    Replication r uses seed ``replication_seed(spec.seed, r)``, so results do
    not depend on ``workers``.  The first entry of ``bands`` drives the
    pointwise comparison and the selection-guarantee checks.
    """
    bands = [bands] if isinstance(bands, BandCoefficients) else list(bands)
    if not bands:
        raise ValueError("coverage_study needs at least one calibrated band")
    alpha = bands[0].alpha if alpha is None else alpha
    if replications < 100:
        warnings.warn(
            f"{replications} replications: Monte Carlo standard error of a coverage "
            f"fraction can reach +/-{0.5 / math.sqrt(replications):.3f}",
            stacklevel=2,
        )
    rule = score_rule or default_score_rule(spec)
    truth = truth or true_gates_oracle(spec, rule)
    tasks = [
        (replace(spec, seed=replication_seed(spec.seed, r)), rule, truth, bands, alpha,
         threshold, width_from, eval_from)
        for r in range(replications)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_replicate, tasks, chunksize=max(1, replications // (4 * workers))))
    else:
        records = [_replicate(t) for t in tasks]
    coverage = {"pointwise": float(np.mean([r["pointwise"] for r in records])),
                "pointwise_x1.5": float(np.mean([r["pointwise_x1.5"] for r in records]))}
    width = {}
    for c in bands:
        label = _band_label(c)
        coverage[f"uniform:{label}"] = float(np.mean([r[f"uniform:{label}"] for r in records]))
        coverage[f"uniform_full_grid:{label}"] = float(
            np.mean([r[f"uniform_full_grid:{label}"] for r in records])
        )
        width[label] = float(np.nanmean([r[f"width:{label}"] for r in records]))
    coverage["uniform"] = coverage[f"uniform:{_band_label(bands[0])}"]
    selection = {
        "argmax_lower": float(np.mean([r["argmax_lower"] for r in records])),
        "threshold": float(np.mean([r["threshold"] for r in records])),
    }
    return CoverageResult(
        replications=replications,
        n=spec.n,
        alpha=alpha,
        coverage=coverage,
        width_ratio=width,
        selection=selection,
        threshold_none=int(sum(r["threshold_none"] for r in records)),
        records=records,
    )


# ------------------------------------------------------------ correlation demo


@dataclass(frozen=True)
class CorrelationRow:
    r: float
    mean_cov: float
    se: float
    score_effect_corr: float


def correlation_demo(
    r_grid: Sequence[float],
    n: int = 100,
    trials: int = 10_000,
    seed: int = 0,
    assignment: Literal["bernoulli", "complete"] = "bernoulli",
    proxy: Literal["ipw", "effect"] = "ipw",
) -> list[CorrelationRow]:
    """Mean covariance of adjacent score-sorted effect proxies, per r.

    For each r, Cov(psi_[i], psi_[i+1]) is estimated across trials for each
    position i and averaged over i.  The standard error treats the per-trial
    average of centred products as i.i.d. across trials.

    With ``assignment="bernoulli"`` each unit is treated independently with
    probability 1/2 and the IPW proxies use that known probability, so the
    proxies are i.i.d. given the scores and the sorted covariances are
    non-negative.  ``"complete"`` fixes n/2 treated units; the induced
    negative dependence between assignments, about -9 X_i X_j / (n - 1) per
    pair, can outweigh the ordering effect when |r| is large.

    ``proxy="effect"`` replaces psi-hat by E(psi-hat | X, S) = X.  Under
    Bernoulli assignment the covariance is unchanged and the Monte Carlo
    noise from the assignment drops out.
    """
    if trials < 1000:
        raise ValueError(f"trials must be >= 1000, got {trials}")
    if n < 2 or n % 2:
        raise ValueError(f"n must be even and >= 2, got {n}")
    if assignment not in ("bernoulli", "complete"):
        raise ValueError(f"unknown assignment {assignment!r}")
    if proxy not in ("ipw", "effect"):
        raise ValueError(f"unknown proxy {proxy!r}")
    rows = []
    for k, r in enumerate(r_grid):
        if abs(r) > 1:
            raise ValueError(f"|r| must be <= 1, got {r}")
        rng = np.random.default_rng([seed, k])
        x = rng.standard_normal((trials, n))
        z = rng.standard_normal((trials, n))
        s = r * x + math.sqrt(max(1.0 - r * r, 0.0)) * z
        if assignment == "bernoulli":
            t = (rng.random((trials, n)) < 0.5).astype(float)
        else:
            t = (rng.random((trials, n)).argsort(axis=1) < n // 2).astype(float)
        if proxy == "effect":
            psi = x
        else:
            y = x * (1.0 + t)
            psi = t * y / 0.5 - (1.0 - t) * y / 0.5
        order = np.argsort(-s, axis=1)
        sorted_psi = np.take_along_axis(psi, order, axis=1)
        centred = sorted_psi - sorted_psi.mean(axis=0)
        per_trial = np.mean(centred[:, :-1] * centred[:, 1:], axis=1)
        mean_cov = float(per_trial.mean() * trials / (trials - 1))
        se = float(per_trial.std(ddof=1) / math.sqrt(trials))
        corr = float(np.corrcoef(s.ravel(), x.ravel())[0, 1])
        rows.append(CorrelationRow(float(r), mean_cov, se, corr))
    return rows
