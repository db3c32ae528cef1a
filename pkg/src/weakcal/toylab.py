"""One-dimensional toy world with a known predictor and known ``P(Y=1|x)``.

``X ~ Uniform[0, 1]``, ``f(x) = clip(0.12 + 0.76 x)`` and
``r(x) = clip(f(x) + 0.11 sin(2 pi x), 0.02, 0.98)``.  Population quantities
are computed on a midpoint grid; class-conditional and mixture draws resample
grid cells with the appropriate density weights and jitter uniformly inside
the chosen cell.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .decon import WeakBags, corrected_residual, spec_pconf, spec_pn, spec_pu, spec_uu
from .metrics import mc
from .rng import child_rng
from .witness import CalibrationMap, Records, ResidualTable, WitnessFamily

GRID_POINTS = 400_000
DEFAULT_SIZES = tuple(128 * 2**k for k in range(10))


def toy_f(x):
    return np.clip(0.12 + 0.76 * np.asarray(x, dtype=float), 1e-6, 1 - 1e-6)


def toy_r(x):
    x = np.asarray(x, dtype=float)
    return np.clip(toy_f(x) + 0.11 * np.sin(2 * np.pi * x), 0.02, 0.98)


@dataclass(frozen=True)
class ToyWorld:
    f: Callable = toy_f
    r: Callable = toy_r
    n_groups: int = 8
    K: int = 10
    grid_points: int = GRID_POINTS

    @property
    def family(self) -> WitnessFamily:
        return WitnessFamily(self.n_groups, self.K)

    def groups(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.minimum((x * self.n_groups).astype(int), self.n_groups - 1)
        return idx[:, None] == np.arange(self.n_groups)[None, :]

    @cached_property
    def grid(self) -> np.ndarray:
        return (np.arange(self.grid_points) + 0.5) / self.grid_points

    @cached_property
    def _grid_r(self) -> np.ndarray:
        return np.asarray(self.r(self.grid), dtype=float)

    @cached_property
    def pi_plus(self) -> float:
        """``E[r(X)]`` on the grid."""
        return float(self._grid_r.mean())

    @cached_property
    def _cdf_cache(self) -> dict:
        return {}

    def _cdf(self, theta: float) -> np.ndarray:
        """Grid CDF of ``theta P+ + (1 - theta) P-``."""
        key = float(theta)
        cache = self._cdf_cache
        if key not in cache:
            r, p = self._grid_r, self.pi_plus
            w = theta * r / p + (1.0 - theta) * (1.0 - r) / (1.0 - p)
            c = np.cumsum(w)
            cache[key] = c / c[-1]
        return cache[key]

    def draw_x(self, n: int, rng: np.random.Generator, theta: float | None = None) -> np.ndarray:
        """``n`` covariates from the marginal (``theta=None``) or the ``theta``-mixture of P+ and P-."""
        if theta is None:
            return rng.random(n)
        cell = np.searchsorted(self._cdf(theta), rng.random(n), side="right")
        cell = np.minimum(cell, self.grid_points - 1)
        return (cell + rng.random(n)) / self.grid_points

    def records(self, x, label=None, conf=None) -> Records:
        x = np.asarray(x, dtype=float)
        return Records(self.f(x), self.groups(x), label=label, conf=conf)


SAMPLE_REGIMES = ("pn", "pu", "uu", "pconf", "pc", "su", "du", "sd", "pcomp", "sconf")


def sample_world(world: ToyWorld, regime: str, n: int, rng: np.random.Generator,
                 gamma1: float = 0.2, gamma2: float = 0.2) -> WeakBags:
    """Draw ``n`` records per source of ``regime`` from ``world``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = world.pi_plus
    q = 1.0 - p
    rec = world.records

    def mix(theta):
        return rec(world.draw_x(n, rng, theta))

    if regime == "pn":
        x = world.draw_x(n, rng)
        y = (rng.random(n) < world.r(x)).astype(np.int8)
        sources = {"lab": rec(x, label=y)}
    elif regime == "pu":
        sources = {"pos": mix(1.0), "unl": mix(None)}
    elif regime == "uu":
        sources = {"u1": mix(1.0 - gamma1), "u2": mix(gamma2)}
    elif regime == "pconf":
        x = world.draw_x(n, rng, 1.0)
        sources = {"pconf": rec(x, conf=world.r(x))}
    elif regime == "pc":
        x = world.draw_x(n, rng)
        sources = {"unl": rec(x, conf=world.r(x))}
    elif regime in ("su", "du", "sd"):
        sim = p * p / (p * p + q * q)
        parts = {"su": (("sim", sim), ("unl", None)), "du": (("dis", 0.5), ("unl", None)),
                 "sd": (("sim", sim), ("dis", 0.5))}[regime]
        sources = {tag: mix(theta) for tag, theta in parts}
    elif regime == "pcomp":
        z = 1.0 - p * q
        sources = {"sup": mix(p / z), "inf": mix(p * p / z)}
    elif regime == "sconf":
        xa, xb = world.draw_x(n, rng), world.draw_x(n, rng)
        ra, rb = world.r(xa), world.r(xb)
        s = ra * rb + (1.0 - ra) * (1.0 - rb)
        sources = {"pair-a": rec(xa, conf=s), "pair-b": rec(xb, conf=s)}
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return WeakBags(sources, pi_hat=p, meta={"regime": regime})


def population_table(world: ToyWorld, grid_points: int | None = None,
                     cmap: CalibrationMap | None = None) -> ResidualTable:
    """Grid cell moments ``E[a_gb(X) (r(X) - f(X))]`` of ``f`` (optionally after ``cmap``)."""
    if grid_points is None or grid_points == world.grid_points:
        x, r = world.grid, world._grid_r
    else:
        x = (np.arange(grid_points) + 0.5) / grid_points
        r = np.asarray(world.r(x), dtype=float)
    fam = world.family
    groups = world.groups(x)
    f = np.asarray(world.f(x), dtype=float)
    if cmap is not None:
        f = cmap.apply(f, groups)
    n = x.shape[0]
    return ResidualTable(fam.cell_sums(f, groups, r - f) / n, fam.cell_sums(f, groups, 1.0) / n, "population")


def population_mc(world: ToyWorld, grid_points: int = GRID_POINTS, cmap: CalibrationMap | None = None) -> float:
    """Largest unnormalised subgroup x bin moment (``g >= 1`` cells only)."""
    return mc(population_table(world, grid_points, cmap), include_population=False)[0]


def potential(world: ToyWorld, cmap: CalibrationMap | None = None) -> float:
    """``E[(f(X) - r(X))^2]`` on the grid."""
    f = np.asarray(world.f(world.grid), dtype=float)
    if cmap is not None:
        f = cmap.apply(f, world.groups(world.grid))
    return float(np.mean((f - world._grid_r) ** 2))


# ---------------------------------------------------------------------------
# Convergence harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRun:
    sizes: tuple[int, ...] = DEFAULT_SIZES
    reps: int = 10
    regimes: tuple[str, ...] = ("pn", "pconf", "pu", "uu")
    rho1: float = 0.8
    rho2: float = 0.2

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])) or not self.sizes:
            raise ValueError("sizes must be non-empty and strictly increasing")
        if self.reps < 2:
            raise ValueError("reps must be >= 2")


@dataclass
class ConvergenceResult:
    rows: list[tuple[str, int, float, float]] = field(default_factory=list)
    slopes: dict[str, float] = field(default_factory=dict)
    population_mc: float = 0.0

    def table(self, regime: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        sel = [r for r in self.rows if r[0] == regime]
        return (np.array([r[1] for r in sel]), np.array([r[2] for r in sel]), np.array([r[3] for r in sel]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["regime", "n", "mean_abs_err", "std_abs_err"])
        for regime, n, mean, std in self.rows:
            w.writerow([regime, n, repr(mean), repr(std)])
        return buf.getvalue()


def loglog_slope(sizes, errors) -> float:
    """Least-squares slope of ``log10(error)`` against ``log10(n)``."""
    return float(np.polyfit(np.log10(np.asarray(sizes, float)), np.log10(np.asarray(errors, float)), 1)[0])


def _convergence_spec(world: ToyWorld, regime: str, run: ConvergenceRun):
    p = world.pi_plus
    if regime == "pn":
        return spec_pn(), {}
    if regime == "pu":
        return spec_pu(p), {}
    if regime == "pconf":
        return spec_pconf(p), {}
    if regime == "uu":
        g1, g2 = 1.0 - run.rho1, run.rho2
        return spec_uu(p, g1, g2), {"gamma1": g1, "gamma2": g2}
    raise ValueError(f"convergence harness does not support regime {regime!r}")


def mc_estimate(world: ToyWorld, regime: str, n: int, rng: np.random.Generator,
                run: ConvergenceRun = ConvergenceRun()) -> float:
    spec, kw = _convergence_spec(world, regime, run)
    bags = sample_world(world, regime, n, rng, **kw)
    return mc(corrected_residual(spec, bags, world.family), include_population=False)[0]


def convergence_experiment(world: ToyWorld, run: ConvergenceRun, seed: int = 0) -> ConvergenceResult:
    """Mean absolute MC-estimation error per (regime, n) and per-regime log-log slopes.

    Each repetition draws from the child stream ``(seed, "convergence", regime, n, rep)``.
    """
    target = population_mc(world, world.grid_points)
    out = ConvergenceResult(population_mc=target)
    for regime in run.regimes:
        means = []
        for n in run.sizes:
            errs = np.array([
                abs(mc_estimate(world, regime, n, child_rng(seed, "convergence", regime, n, rep), run) - target)
                for rep in range(run.reps)
            ])
            means.append(float(errs.mean()))
            out.rows.append((regime, int(n), float(errs.mean()), float(errs.std())))
        out.slopes[regime] = loglog_slope(run.sizes, means)
    return out
