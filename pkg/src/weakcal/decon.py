"""Corrected witness moments from weakly supervised samples.

Every observation model is described by a :class:`DecontaminationSpec`: a list
of observable sources, each with a coefficient ``alpha_s(v, r)`` such that

    E[a_gb(X) (Y - f(X))] = sum_s E_{X ~ P_s}[alpha_s(f(X), r(X)) a_gb(X)]

where ``a_gb`` is the group x bin indicator.  :func:`corrected_residual` plugs
source-wise empirical averages into the right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DataError, NumericError, SingularPriorError
from .witness import CalibrationMap, Records, ResidualTable, WitnessFamily

Coefficient = Callable[[np.ndarray, "np.ndarray | None"], np.ndarray]


@dataclass(frozen=True)
class SourceTerm:
    """One observable source and its per-record coefficient.

    ``aux`` names the per-record side information fed to the coefficient as
    its second argument: ``"conf"`` (a confidence), ``"label"`` or ``None``.
    A term with several ``tags`` pools them into one average; this is how the
    two members of a confidence pair share a single ``1/(2n)`` weight.
    """

    tags: tuple[str, ...]
    coef: Coefficient
    aux: str | None = None

    @property
    def pair_averaged(self) -> bool:
        return len(self.tags) > 1

    def __call__(self, v, r=None):
        v = np.asarray(v, dtype=float)
        return np.broadcast_to(self.coef(v, None if r is None else np.asarray(r, dtype=float)), v.shape)


@dataclass(frozen=True)
class DecontaminationSpec:
    regime: str
    terms: tuple[SourceTerm, ...]
    pi_plus: float | None = None
    gamma1: float | None = None
    gamma2: float | None = None
    tau: float | None = None

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a decontamination spec needs at least one source")

    @property
    def source_tags(self) -> tuple[str, ...]:
        return tuple(t for term in self.terms for t in term.tags)

    def term(self, tag: str) -> SourceTerm:
        for term in self.terms:
            if tag in term.tags:
                return term
        raise KeyError(tag)


@dataclass
class WeakBags:
    """Per-source record collections plus recorded observation parameters."""

    sources: dict[str, Records]
    pi_hat: float | None = None
    meta: dict = field(default_factory=dict)

    def __getitem__(self, tag: str) -> Records:
        return self.sources[tag]

    def __contains__(self, tag: str) -> bool:
        return tag in self.sources

    @property
    def m(self) -> int:
        return next(iter(self.sources.values())).m

    def require(self, tags) -> None:
        for tag in tags:
            if tag not in self.sources:
                raise DataError(f"missing required source {tag!r}")
            if len(self.sources[tag]) == 0:
                raise DataError(f"required source {tag!r} is empty")

    def mapped(self, cmap: CalibrationMap) -> "WeakBags":
        """Same bags with every score passed through ``cmap``."""
        return WeakBags({k: cmap.apply_records(v) for k, v in self.sources.items()}, self.pi_hat, dict(self.meta))

    def pooled(self) -> Records:
        return Records.concat(self.sources.values())


# ---------------------------------------------------------------------------
# Observation models
# ---------------------------------------------------------------------------


def _check_prior(pi_plus: float) -> float:
    pi_plus = float(pi_plus)
    if not 0.0 < pi_plus < 1.0:
        raise ValueError(f"class prior {pi_plus!r} must lie in (0, 1)")
    return pi_plus


def _prior_gap(pi_plus: float) -> float:
    gap = 2.0 * pi_plus - 1.0
    if gap == 0.0:
        raise SingularPriorError("pi_plus = 1/2 makes the rewrite singular (division by pi_+ - pi_-)")
    return gap


def spec_pn() -> DecontaminationSpec:
    """Fully labeled data; the 'correction' is the identity ``y - v``."""
    return DecontaminationSpec("pn", (SourceTerm(("lab",), lambda v, y: y - v, "label"),))


def spec_pu(pi_plus: float) -> DecontaminationSpec:
    p = _check_prior(pi_plus)
    return DecontaminationSpec(
        "pu",
        (SourceTerm(("pos",), lambda v, r: np.full_like(v, p)), SourceTerm(("unl",), lambda v, r: -v)),
        pi_plus=p,
    )


def spec_uu(pi_plus: float, gamma1: float, gamma2: float) -> DecontaminationSpec:
    """Two mixtures ``U1 = (1-g1) P+ + g1 P-`` and ``U2 = g2 P+ + (1-g2) P-``."""
    p = _check_prior(pi_plus)
    q = 1.0 - p
    g1, g2 = float(gamma1), float(gamma2)
    delta = 1.0 - g1 - g2
    if delta == 0.0:
        raise SingularPriorError("1 - gamma1 - gamma2 = 0: the two mixtures are indistinguishable")
    a1 = lambda v, r: ((1.0 - g2) * p * (1.0 - v) + g2 * q * v) / delta  # noqa: E731
    a2 = lambda v, r: (-g1 * p * (1.0 - v) - (1.0 - g1) * q * v) / delta  # noqa: E731
    return DecontaminationSpec(
        "uu", (SourceTerm(("u1",), a1), SourceTerm(("u2",), a2)), pi_plus=p, gamma1=g1, gamma2=g2
    )


def spec_pconf(pi_plus: float, tau: float | None = None) -> DecontaminationSpec:
    """Positive examples with confidence ``r``; ``tau`` lower-clips ``r``."""
    p = _check_prior(pi_plus)
    if tau is not None and not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")

    def coef(v, r):
        if r is None:
            raise DataError("pconf records need a confidence")
        if tau is None:
            if np.any(r <= 0.0):
                raise NumericError("pconf confidence <= 0 without clipping")
            return p * (1.0 - v / r)
        return p * (1.0 - v / np.maximum(r, tau))

    return DecontaminationSpec("pconf", (SourceTerm(("pconf",), coef, "conf"),), pi_plus=p, tau=tau)


def spec_posterior_conf() -> DecontaminationSpec:
    """Marginal sample carrying ``r(x) = P(Y=1|x)``: ``alpha = r - v``."""

    def coef(v, r):
        if r is None:
            raise DataError("posterior-confidence records need a confidence")
        return r - v

    return DecontaminationSpec("pc", (SourceTerm(("unl",), coef, "conf"),))


def spec_su(pi_plus: float) -> DecontaminationSpec:
    p = _check_prior(pi_plus)
    q = 1.0 - p
    gap = _prior_gap(p)
    c_sim = (p * p + q * q) / gap
    return DecontaminationSpec(
        "su",
        (SourceTerm(("sim",), lambda v, r: np.full_like(v, c_sim)),
         SourceTerm(("unl",), lambda v, r: -(q / gap + v))),
        pi_plus=p,
    )


def spec_du(pi_plus: float) -> DecontaminationSpec:
    p = _check_prior(pi_plus)
    q = 1.0 - p
    gap = _prior_gap(p)
    c_dis = -2.0 * p * q / gap
    return DecontaminationSpec(
        "du",
        (SourceTerm(("dis",), lambda v, r: np.full_like(v, c_dis)),
         SourceTerm(("unl",), lambda v, r: p / gap - v)),
        pi_plus=p,
    )


def spec_sd(pi_plus: float) -> DecontaminationSpec:
    p = _check_prior(pi_plus)
    q = 1.0 - p
    gap = _prior_gap(p)
    s2 = p * p + q * q
    return DecontaminationSpec(
        "sd",
        (SourceTerm(("sim",), lambda v, r: s2 * (p / gap - v)),
         SourceTerm(("dis",), lambda v, r: -2.0 * p * q * (q / gap + v))),
        pi_plus=p,
    )


def spec_pcomp(pi_plus: float) -> DecontaminationSpec:
    """Pairwise comparisons observed through their superior / inferior marginals."""
    p = _check_prior(pi_plus)
    q = 1.0 - p
    return DecontaminationSpec(
        "pcomp",
        (SourceTerm(("sup",), lambda v, r: 1.0 - q * v), SourceTerm(("inf",), lambda v, r: -(q + p * v))),
        pi_plus=p,
    )


def sconf_weights(pi_plus: float, r):
    """Weights on the positive and negative residual halves of a confidence pair."""
    p = _check_prior(pi_plus)
    gap = _prior_gap(p)
    r = np.asarray(r, dtype=float)
    return (r - (1.0 - p)) / gap, (p - r) / gap


def spec_sconf(pi_plus: float) -> DecontaminationSpec:
    """Unlabeled pairs with similarity confidence ``r = P(y = y' | x, x')``.

    Pair members are stored as two aligned sources ``pair-a`` / ``pair-b``
    (row ``i`` of each forms pair ``i``) and both carry the pair's confidence.
    """
    p = _check_prior(pi_plus)
    _prior_gap(p)

    def coef(v, r):
        if r is None:
            raise DataError("sconf records need a pair confidence")
        w1, w0 = sconf_weights(p, r)
        return w1 * (1.0 - v) - w0 * v

    return DecontaminationSpec("sconf", (SourceTerm(("pair-a", "pair-b"), coef, "conf"),), pi_plus=p)


REGIMES = ("pn", "pu", "uu", "pconf", "pc", "su", "du", "sd", "pcomp", "sconf")


def make_spec(regime: str, pi_plus: float | None = None, gamma1: float | None = None,
              gamma2: float | None = None, tau: float | None = None) -> DecontaminationSpec:
    """Build the decontamination spec for ``regime`` from flat parameters (CLI helper)."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {', '.join(REGIMES)}")
    if regime == "pn":
        return spec_pn()
    if regime == "pc":
        return spec_posterior_conf()
    if pi_plus is None:
        raise DataError(f"regime {regime!r} needs the class prior pi_plus")
    if regime == "uu":
        if gamma1 is None or gamma2 is None:
            raise DataError("regime 'uu' needs gamma1 and gamma2")
        return spec_uu(pi_plus, gamma1, gamma2)
    if regime == "pconf":
        return spec_pconf(pi_plus, tau)
    return {"pu": spec_pu, "su": spec_su, "du": spec_du, "sd": spec_sd,
            "pcomp": spec_pcomp, "sconf": spec_sconf}[regime](pi_plus)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def _aux(records: Records, kind: str | None, tag: str):
    if kind is None:
        return None
    val = records.conf if kind == "conf" else records.label
    if val is None:
        raise DataError(f"source {tag!r} is missing its {kind} column")
    return np.asarray(val, dtype=float)


def _term_records(term: SourceTerm, bags: WeakBags) -> Records:
    parts = [bags[t] for t in term.tags]
    if term.pair_averaged:
        n0 = len(parts[0])
        if any(len(p) != n0 for p in parts):
            raise DataError(f"pair sources {term.tags} must have equal length")
        if term.aux == "conf" and all(p.conf is not None for p in parts):
            if any(not np.array_equal(p.conf, parts[0].conf) for p in parts):
                raise DataError("the members of a pair must share one confidence")
    return parts[0] if len(parts) == 1 else Records.concat(parts)


def corrected_residual(spec: DecontaminationSpec, bags: WeakBags, family: WitnessFamily) -> ResidualTable:
    """Corrected cell moments ``sum_s (1/n_s) sum_i alpha_s(f_i, r_i) a_gb(x_i)``.

    Active mass is the pooled fraction of all observed records of the regime
    falling in each cell.
    """
    bags.require(spec.source_tags)
    moments = np.zeros(family.shape)
    mass = np.zeros(family.shape)
    total = 0
    for term in spec.terms:
        recs = _term_records(term, bags)
        coef = term(recs.score, _aux(recs, term.aux, term.tags[0]))
        moments += family.cell_sums(recs.score, recs.groups, coef) / len(recs)
        mass += family.cell_sums(recs.score, recs.groups, 1.0)
        total += len(recs)
    return ResidualTable(moments, mass / total, spec.regime)


MASS_SOURCES = ("eval-pool", "pu-unl", "pconf", "uu")


def group_mass(source: str, data: "Records | WeakBags", pi_plus: float | None = None,
               gamma1: float | None = None, gamma2: float | None = None,
               tau: float | None = None) -> np.ndarray:
    """Per-group mass estimate ``mu_g`` for ``g = 1..m`` (length-m vector).

    ``eval-pool`` takes a feature-only :class:`Records`; the other sources take
    the regime's :class:`WeakBags`.
    """
    if source == "eval-pool":
        recs = data.pooled() if isinstance(data, WeakBags) else data
        if len(recs) == 0:
            raise DataError("empty evaluation pool")
        return recs.groups.mean(axis=0)
    if not isinstance(data, WeakBags):
        raise DataError(f"group mass source {source!r} needs weak bags")
    if source == "pu-unl":
        data.require(["unl"])
        return data["unl"].groups.mean(axis=0)
    if source == "pconf":
        data.require(["pconf"])
        recs = data["pconf"]
        p = _check_prior(pi_plus)
        r = _aux(recs, "conf", "pconf")
        if tau is not None:
            r = np.maximum(r, tau)
        elif np.any(r <= 0.0):
            raise NumericError("pconf confidence <= 0 without clipping")
        return p * (recs.groups / r[:, None]).mean(axis=0)
    if source == "uu":
        data.require(["u1", "u2"])
        p = _check_prior(pi_plus)
        delta = 1.0 - gamma1 - gamma2
        if delta == 0.0:
            raise SingularPriorError("1 - gamma1 - gamma2 = 0")
        q1 = data["u1"].groups.mean(axis=0)
        q2 = data["u2"].groups.mean(axis=0)
        return ((p - gamma2) / delta) * q1 + ((1.0 - p - gamma1) / delta) * q2
    raise ValueError(f"unknown group-mass source {source!r}")


def default_mass_source(regime: str) -> str | None:
    """Label-free denominator used when no evaluation pool is supplied."""
    return {"pn": "eval-pool", "pc": "eval-pool", "pu": "pu-unl", "pconf": "pconf", "uu": "uu"}.get(regime)
