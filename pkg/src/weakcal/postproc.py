"""Post-hoc correction of a frozen predictor from weak labels.

* :func:`wlmc_fit` -- weak-label multicalibration boosting over the finite
  group x bin family, driven by corrected residual audits.
* :func:`weak_nll` -- corrected negative log-likelihood objectives.
* :func:`fit_temperature` / :func:`fit_platt` -- bounded derivative-free fits
  of the temperature and affine-logit maps under those objectives.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .decon import DecontaminationSpec, WeakBags, corrected_residual, spec_pconf
from .errors import DataError, NumericError
from .witness import AffineLogit, CalibrationMap, CellAdd, Temperature, WitnessFamily, logit

# ---------------------------------------------------------------------------
# WLMC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WlmcConfig:
    eta: float = 0.05
    T: int = 50
    alpha: float = 0.005
    min_active_mass: float = 0.01
    r_min: float | None = 1e-3
    K: int = 10
    fresh_batch: bool = False
    batch_sizes: dict | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 <= self.min_active_mass < 1.0:
            raise ValueError("min_active_mass must lie in [0, 1)")


@dataclass(frozen=True)
class TraceRow:
    round: int
    group: int
    bin_lo: float
    bin_hi: float
    signed_violation: float
    step_applied: float


TRACE_COLUMNS = ("round", "group", "bin_lo", "bin_hi", "signed_violation", "step_applied")


@dataclass
class WlmcResult:
    map: CalibrationMap
    trace: list[TraceRow] = field(default_factory=list)
    rounds: int = 0
    stopped_by: str = "threshold"

    @property
    def final_violation(self) -> float:
        return abs(self.trace[-1].signed_violation) if self.trace else 0.0

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.trace:
            w.writerow([row.round, row.group, repr(row.bin_lo), repr(row.bin_hi),
                        repr(row.signed_violation), repr(row.step_applied)])
        return buf.getvalue()


def _audit_spec(spec: DecontaminationSpec, cfg: WlmcConfig) -> DecontaminationSpec:
    if spec.regime == "pconf" and spec.tau is None and cfg.r_min is not None:
        return spec_pconf(spec.pi_plus, cfg.r_min)
    return spec


def select_cell(table, min_active_mass: float):
    """``(g, b, signed moment)`` of the largest gated violation, or ``None``.

    Cells below ``min_active_mass`` are ignored; ties go to the smallest ``(g, b)``.
    """
    score = np.where(table.active_mass >= min_active_mass, np.abs(table.moments), -np.inf)
    flat = int(np.argmax(score))
    g, b = divmod(flat, table.K)
    if not np.isfinite(score[g, b]):
        return None
    return g, b + 1, float(table.moments[g, b])


def _draw(sampler: Callable[[int], WeakBags], t: int) -> WeakBags:
    try:
        bags = sampler(t)
    except StopIteration as exc:
        raise DataError(f"fresh-batch sampler exhausted at round {t}") from exc
    if bags is None:
        raise DataError(f"fresh-batch sampler exhausted at round {t}")
    return bags


def wlmc_fit(bags: WeakBags | None, spec: DecontaminationSpec, family: WitnessFamily, cfg: WlmcConfig,
             sampler: Callable[[int], WeakBags] | None = None) -> WlmcResult:
    """Boost the base scores in ``bags`` until no gated cell exceeds ``cfg.alpha``.

    Fixed-split mode (default) re-audits the same correction batch every
    round.  With ``cfg.fresh_batch`` the callable ``sampler(t)`` must return a
    new batch of *base* scores for round ``t``; the current map is applied to
    it before auditing.
    """
    spec = _audit_spec(spec, cfg)
    if cfg.fresh_batch:
        if sampler is None:
            raise ValueError("fresh-batch mode needs a sampler")
        work = _draw(sampler, 0)
    else:
        if bags is None:
            raise ValueError("fixed-split mode needs bags")
        work = bags
    work.require(spec.source_tags)

    cmap = CalibrationMap()
    result = WlmcResult(cmap)
    for t in range(cfg.T + 1):
        table = corrected_residual(spec, work, family)
        pick = select_cell(table, cfg.min_active_mass)
        if pick is None:
            result.stopped_by = "no-active-cell"
            break
        g, b, v = pick
        lo, hi = family.interval(b)
        if abs(v) <= cfg.alpha or t == cfg.T:
            result.trace.append(TraceRow(t, g, lo, hi, v, 0.0))
            result.stopped_by = "threshold" if abs(v) <= cfg.alpha else "max-rounds"
            break
        step = CellAdd(g, lo, hi, cfg.eta * float(np.sign(v)))
        cmap.append(step)
        result.trace.append(TraceRow(t, g, lo, hi, v, step.delta))
        result.rounds = t + 1
        if cfg.fresh_batch:
            work = _draw(sampler, t + 1).mapped(cmap)
        else:
            work = WeakBags({k: r.with_scores(step.apply(r.score, r.groups)) for k, r in work.sources.items()},
                            work.pi_hat, work.meta)
    return result


# ---------------------------------------------------------------------------
# Corrected NLL objectives
# ---------------------------------------------------------------------------

NLL_REGIMES = ("pn", "pu", "nnpu", "uu", "pconf")
_NLL_SOURCES = {"pn": ("lab",), "pu": ("pos", "unl"), "nnpu": ("pos", "unl"), "uu": ("u1", "u2"), "pconf": ("pconf",)}


@dataclass(frozen=True)
class WeakNllObjective:
    regime: str
    pi_plus: float | None = None
    gamma1: float | None = None
    gamma2: float | None = None
    tau: float | None = None

    def __post_init__(self):
        if self.regime not in NLL_REGIMES:
            raise ValueError(f"no weak NLL objective for regime {self.regime!r}")
        if self.regime != "pn" and not (self.pi_plus is not None and 0.0 < self.pi_plus < 1.0):
            raise ValueError(f"regime {self.regime!r} needs pi_plus in (0, 1)")
        if self.regime == "uu":
            if self.gamma1 is None or self.gamma2 is None:
                raise ValueError("uu objective needs gamma1 and gamma2")
            if 1.0 - self.gamma1 - self.gamma2 == 0.0:
                raise NumericError("1 - gamma1 - gamma2 = 0")

    @property
    def sources(self) -> tuple[str, ...]:
        return _NLL_SOURCES[self.regime]


def _transform_logits(z: np.ndarray, transform) -> np.ndarray:
    if transform is None:
        return z
    if isinstance(transform, Temperature):
        return z / transform.beta
    if isinstance(transform, AffineLogit):
        return transform.a * z + transform.b
    raise TypeError(f"unsupported transform {transform!r}")


class _NllData:
    """Base logits and side information, computed once per fit."""

    def __init__(self, objective: WeakNllObjective, bags: WeakBags):
        bags.require(objective.sources)
        self.objective = objective
        self.z = {t: logit(bags[t].score) for t in objective.sources}
        self.label = None
        self.weight = None
        if objective.regime == "pn":
            if bags["lab"].label is None:
                raise DataError("pn objective needs labels")
            self.label = bags["lab"].label.astype(float)
        if objective.regime == "pconf":
            r = bags["pconf"].conf
            if r is None:
                raise DataError("pconf objective needs confidences")
            if objective.tau is not None:
                r = np.maximum(r, objective.tau)
            elif np.any(r <= 0.0):
                raise NumericError("pconf confidence <= 0 without clipping")
            self.weight = (1.0 - r) / r

    def losses(self, tag, transform):
        s = _transform_logits(self.z[tag], transform)
        return np.logaddexp(0.0, -s), np.logaddexp(0.0, s)

    def pu_components(self, transform) -> tuple[float, float]:
        p = self.objective.pi_plus
        lp_pos, lm_pos = self.losses("pos", transform)
        _, lm_unl = self.losses("unl", transform)
        return p * lp_pos.mean(), lm_unl.mean() - p * lm_pos.mean()

    def value(self, transform=None) -> float:
        obj = self.objective
        reg = obj.regime
        if reg == "pn":
            lp, lm = self.losses("lab", transform)
            y = self.label
            return float(np.mean(y * lp + (1.0 - y) * lm))
        if reg == "pu":
            r_pos, r_neg = self.pu_components(transform)
            return float(r_pos + r_neg)
        if reg == "nnpu":
            r_pos, r_neg = self.pu_components(transform)
            return float(r_pos + max(0.0, r_neg))
        if reg == "uu":
            p, q = obj.pi_plus, 1.0 - obj.pi_plus
            g1, g2 = obj.gamma1, obj.gamma2
            d = 1.0 - g1 - g2
            lp1, lm1 = self.losses("u1", transform)
            lp2, lm2 = self.losses("u2", transform)
            return float(np.mean((1.0 - g2) * p * lp1 - g2 * q * lm1) / d
                         + np.mean(-g1 * p * lp2 + (1.0 - g1) * q * lm2) / d)
        lp, lm = self.losses("pconf", transform)
        return float(obj.pi_plus * np.mean(lp + self.weight * lm))


def weak_nll(objective: WeakNllObjective, bags: WeakBags, transform=None) -> float:
    """Corrected empirical NLL of the scores in ``bags`` after ``transform``.

    ``transform`` is ``None`` (identity), a :class:`Temperature` or an
    :class:`AffineLogit`.  Scores are logit-clipped into ``[1e-6, 1 - 1e-6]``.
    """
    return _NllData(objective, bags).value(transform)


def pu_risk_components(objective: WeakNllObjective, bags: WeakBags, transform=None) -> tuple[float, float]:
    """``(R_plus, R_minus)`` of the PU decomposition; nnPU clips ``R_minus`` at 0."""
    if objective.regime not in ("pu", "nnpu"):
        raise ValueError("PU components need a pu or nnpu objective")
    return _NllData(objective, bags).pu_components(transform)


# ---------------------------------------------------------------------------
# Temperature and Platt fits
# ---------------------------------------------------------------------------

TEMPERATURE_BOUNDS = (1e-2, 1e2)
PLATT_BOUNDS = ((-50.0, 50.0), (-50.0, 50.0))


@dataclass
class ScalingFit:
    kind: str  # "temperature" | "platt"
    params: tuple[float, ...]
    value: float
    n_iter: int
    converged: bool
    at_bound: bool = False

    @property
    def step(self):
        return Temperature(self.params[0]) if self.kind == "temperature" else AffineLogit(*self.params)

    @property
    def beta(self) -> float:
        if self.kind != "temperature":
            raise AttributeError("beta is only defined for temperature fits")
        return self.params[0]


def fit_temperature(objective: WeakNllObjective, bags: WeakBags, max_iters: int = 200,
                    bounds: tuple[float, float] = TEMPERATURE_BOUNDS) -> ScalingFit:
    """Minimise the weak NLL of ``sigmoid(logit(f) / beta)`` over ``beta`` in ``bounds``.

    The search runs on ``log beta`` with bounded Brent/golden-section steps.
    A flat objective returns the geometric bracket midpoint (``beta = 1`` for
    the default bracket).
    """
    data = _NllData(objective, bags)
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    f = lambda u: data.value(Temperature(float(np.exp(u))))  # noqa: E731

    probe = np.array([f(u) for u in np.linspace(lo, hi, 9)])
    if not np.any(np.isfinite(probe)):
        raise NumericError("temperature objective is non-finite on the whole bracket")
    mid = 0.5 * (lo + hi)
    if np.ptp(probe) == 0.0:
        return ScalingFit("temperature", (float(np.exp(mid)),), float(probe[0]), 0, True, False)

    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                   options={"maxiter": max_iters, "xatol": 1e-8})
    u = float(res.x)
    at_bound = bool(min(u - lo, hi - u) < 1e-4)
    return ScalingFit("temperature", (float(np.exp(u)),), float(res.fun), int(res.nfev),
                      bool(res.success), at_bound)


def fit_platt(objective: WeakNllObjective, bags: WeakBags, max_iters: int = 250,
              bounds=PLATT_BOUNDS) -> ScalingFit:
    """Minimise the weak NLL of ``sigmoid(a logit(f) + b)`` with a bounded simplex from ``(1, 0)``."""
    data = _NllData(objective, bags)
    f = lambda x: data.value(AffineLogit(float(x[0]), float(x[1])))  # noqa: E731
    if not np.isfinite(f(np.array([1.0, 0.0]))):
        raise NumericError("Platt objective is non-finite at the identity")
    res = optimize.minimize(f, x0=np.array([1.0, 0.0]), method="Nelder-Mead", bounds=bounds,
                            options={"maxiter": max_iters, "xatol": 1e-7, "fatol": 1e-12})
    a, b = (float(v) for v in res.x)
    at_bound = any(bool(min(x - lo, hi - x) < 1e-3) for x, (lo, hi) in zip((a, b), bounds))
    return ScalingFit("platt", (a, b), float(res.fun), int(res.nit), bool(res.success) and not at_bound, at_bound)
