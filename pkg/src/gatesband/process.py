"""Monte Carlo engine for Wiener and Brownian-bridge boundary crossings.

Paths live on the grid t_k = k/m, k = 1..m.  Path i is generated from the
counter-based seed ``(seed, i)``, so a batch is identical no matter how many
workers build it or in which order the chunks finish.

A full batch (10^4 paths x 10^4 grid points) does not fit comfortably in
memory, and the calibration search evaluates hundreds of boundaries on the
same batch.  Each path is therefore reduced once to its *record points*:

* Wiener paths keep the running-maximum records.  If ``s <= t`` and
  ``W(s) >= W(t)`` then ``W(s) - b(s) >= W(t) - b(t)`` for every
  non-decreasing boundary ``b``, so a non-decreasing boundary is crossed
  somewhere on the grid iff it is crossed at a record point.
* Bridge paths keep running-maximum records of the left half (scanning
  forward from t=0) and of the right half (scanning backward from t=1).
  The bridge boundary ``d0 + d1*sqrt(t(1-t))`` increases on [0, 1/2] and
  decreases on [1/2, 1], so the same domination argument applies per half.

The reduction is exact: evaluating a boundary on the records gives the same
crossing indicator as evaluating it on every grid point.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Literal, Sequence

import numpy as np

Process = Literal["wiener", "bridge"]

_CHUNK_BYTES = 64 * 2**20


@dataclass(frozen=True)
class EngineConfig:
    """Monte Carlo settings shared by every calibration."""

    trials: int = 10_000
    grid_points: int = 10_000
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.trials < 100:
            raise ValueError(f"trials must be >= 100, got {self.trials}")
        if self.grid_points < 100:
            raise ValueError(f"grid_points must be >= 100, got {self.grid_points}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def with_seed(self, seed: int) -> "EngineConfig":
        return EngineConfig(self.trials, self.grid_points, seed, self.workers)


@dataclass(frozen=True)
class Boundary:
    """One-sided upper boundary on [0, 1].

    ``affine_sqrt``: b0 + b1*sqrt(t); ``power``: gamma*t**k;
    ``bridge_affine``: d0 + d1*sqrt(t(1-t)).
    """

    shape: Literal["affine_sqrt", "power", "bridge_affine"]
    coeffs: tuple[float, float]

    def __post_init__(self) -> None:
        a, b = self.coeffs
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ValueError(f"boundary coefficients must be finite: {self.coeffs}")
        if self.shape == "power":
            gamma, k = a, b
            if k >= 0.5:
                raise ValueError(
                    f"power boundary needs k < 1/2 (got k={k}): by the law of the "
                    "iterated logarithm W(t) exceeds gamma*t^k arbitrarily close to "
                    "t=0 with probability one for every k >= 1/2"
                )
            if k < 0 or gamma < 0:
                raise ValueError(f"power boundary needs gamma >= 0 and k >= 0: {self.coeffs}")
        elif self.shape in ("affine_sqrt", "bridge_affine"):
            if a < 0 or b < 0:
                raise ValueError(f"{self.shape} coefficients must be >= 0: {self.coeffs}")
        else:
            raise ValueError(f"unknown boundary shape {self.shape!r}")

    @classmethod
    def affine_sqrt(cls, beta0: float, beta1: float) -> "Boundary":
        return cls("affine_sqrt", (float(beta0), float(beta1)))

    @classmethod
    def power(cls, gamma: float, k: float) -> "Boundary":
        return cls("power", (float(gamma), float(k)))

    @classmethod
    def bridge_affine(cls, delta0: float, delta1: float) -> "Boundary":
        return cls("bridge_affine", (float(delta0), float(delta1)))

    @property
    def process(self) -> Process:
        return "bridge" if self.shape == "bridge_affine" else "wiener"

    def __call__(self, t: np.ndarray) -> np.ndarray:
        a, b = self.coeffs
        if self.shape == "affine_sqrt":
            return a + b * np.sqrt(t)
        if self.shape == "power":
            return a * np.power(t, b)
        return a + b * np.sqrt(t * (1.0 - t))


def _path_increments(seed: int, trial: int, m: int) -> np.ndarray:
    return np.random.default_rng([seed, trial]).standard_normal(m)


def _wiener_block(seed: int, trials: Sequence[int], m: int) -> np.ndarray:
    z = np.empty((len(trials), m))
    for row, trial in enumerate(trials):
        z[row] = _path_increments(seed, trial, m)
    w = np.cumsum(z, axis=1)
    w *= 1.0 / math.sqrt(m)
    return w


def _bridge_from_wiener(w: np.ndarray, t: np.ndarray) -> np.ndarray:
    b = w - t * w[:, -1:]
    b[:, -1] = 0.0
    return b


def _prefix_records(x: np.ndarray) -> np.ndarray:
    return x >= np.maximum.accumulate(x, axis=1)


def _suffix_records(x: np.ndarray) -> np.ndarray:
    rev = x[:, ::-1]
    return (rev >= np.maximum.accumulate(rev, axis=1))[:, ::-1]


@dataclass
class PathBatch:
    """A frozen set of simulated paths, stored as per-path record points.

    ``times``/``values`` are flat arrays grouped by path; path ``i`` owns
    ``values[offsets[i]:offsets[i+1]]``.
    """

    config: EngineConfig
    process: Process
    times: np.ndarray
    values: np.ndarray
    offsets: np.ndarray
    terminal: np.ndarray
    maxima: np.ndarray
    _boundary_cache: dict = field(default_factory=dict, repr=False)

    @property
    def trials(self) -> int:
        return self.config.trials

    def path_maxima(self, boundary: Boundary) -> np.ndarray:
        """Per-path max over the grid of process(t) - boundary(t)."""
        if boundary.process != self.process:
            raise ValueError(
                f"{boundary.shape} boundary needs {boundary.process} paths, batch holds {self.process}"
            )
        excess = self.values - boundary(self.times)
        return np.maximum.reduceat(excess, self.offsets[:-1])

    def noncrossing_count(self, boundary: Boundary) -> int:
        return int(np.count_nonzero(self.path_maxima(boundary) <= 0.0))

    def noncrossing_probability(self, boundary: Boundary) -> tuple[float, float]:
        """Fraction of paths staying below the boundary, with binomial SE."""
        prob = self.noncrossing_count(boundary) / self.trials
        return prob, binomial_se(prob, self.trials)

    def full_paths(self, trials: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Regenerate complete paths for the given trial indices."""
        return regenerate_paths(self.config, self.process, trials)

    def dump_paths(self, path: str, count: int = 20) -> None:
        write_sample_paths(self.config, self.process, path, count)


def regenerate_paths(
    cfg: EngineConfig, process: Process, trials: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Full grid paths for the given trial indices, identical to those a batch reduces."""
    m = cfg.grid_points
    t = np.arange(1, m + 1) / m
    w = _wiener_block(cfg.seed, list(trials), m)
    if process == "bridge":
        w = _bridge_from_wiener(w, t)
    return t, w


def write_sample_paths(cfg: EngineConfig, process: Process, path: str, count: int = 20) -> None:
    """Write the first ``count`` paths as CSV columns (t, path_0, ...)."""
    count = min(count, cfg.trials)
    t, w = regenerate_paths(cfg, process, range(count))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"path_{i}" for i in range(count)])
        writer.writerow([0.0] + [0.0] * count)
        for k in range(t.size):
            writer.writerow([repr(float(t[k]))] + [repr(float(v)) for v in w[:, k]])


def binomial_se(prob: float, trials: int) -> float:
    return math.sqrt(max(prob * (1.0 - prob), 0.0) / trials)


def _chunks(trials: int, m: int) -> Iterator[range]:
    size = max(1, min(trials, _CHUNK_BYTES // (8 * m)))
    for start in range(0, trials, size):
        yield range(start, min(trials, start + size))


def _reduce_chunk(cfg: EngineConfig, process: Process, trials: range):
    m = cfg.grid_points
    t = np.arange(1, m + 1) / m
    w = _wiener_block(cfg.seed, trials, m)
    terminal = w[:, -1].copy()
    if process == "wiener":
        keep = _prefix_records(w)
        x = w
    else:
        x = _bridge_from_wiener(w, t)
        half = m // 2
        keep = np.zeros(x.shape, dtype=bool)
        keep[:, : half + 1] = _prefix_records(x[:, : half + 1])
        keep[:, half:] |= _suffix_records(x[:, half:])
    rows, cols = np.nonzero(keep)
    counts = np.bincount(rows, minlength=len(trials))
    return t[cols], x[rows, cols], counts, terminal, x.max(axis=1)


def simulate_paths(cfg: EngineConfig, process: Process = "wiener") -> PathBatch:
    """Simulate ``cfg.trials`` paths and reduce them to record points."""
    if process not in ("wiener", "bridge"):
        raise ValueError(f"process must be 'wiener' or 'bridge', got {process!r}")
    chunks = list(_chunks(cfg.trials, cfg.grid_points))
    try:
        if cfg.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                parts = list(pool.map(lambda c: _reduce_chunk(cfg, process, c), chunks))
        else:
            parts = [_reduce_chunk(cfg, process, c) for c in chunks]
    except MemoryError as exc:
        raise MemoryError(
            f"out of memory simulating {cfg.trials} paths x {cfg.grid_points} grid points"
        ) from exc
    times = np.concatenate([p[0] for p in parts])
    values = np.concatenate([p[1] for p in parts])
    counts = np.concatenate([p[2] for p in parts])
    offsets = np.zeros(cfg.trials + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return PathBatch(
        config=cfg,
        process=process,
        times=times,
        values=values,
        offsets=offsets,
        terminal=np.concatenate([p[3] for p in parts]),
        maxima=np.concatenate([p[4] for p in parts]),
    )


def noncrossing_probability(
    boundary: Boundary, cfg: EngineConfig | None = None, batch: PathBatch | None = None
) -> tuple[float, float]:
    """Estimate P(process(t) <= boundary(t) on the grid) and its standard error.

    Pass ``batch`` to reuse frozen paths; otherwise a fresh batch is drawn
    from ``cfg``.
    """
    if batch is None:
        batch = simulate_paths(cfg or EngineConfig(), boundary.process)
    return batch.noncrossing_probability(boundary)
