"""Scored samples, the group x score-bin witness family, residual tables and
replayable calibration maps.

Group index conventions: a table row ``g = 0`` is the whole population and
rows ``1..m`` are the subgroups, so ``groups[:, g - 1]`` holds the membership
flags of table row ``g``.  Bins are numbered ``1..K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DataError

LOGIT_EPS = 1e-6


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def logit(p, eps: float = LOGIT_EPS):
    """Logit of ``p`` after clipping into ``[eps, 1 - eps]``."""
    p = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoredRecord:
    """One evaluation unit: a base score plus precomputed group flags."""

    score: float
    groups: tuple[bool, ...] = ()
    label: int | None = None
    confidence: float | None = None
    source: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"score {self.score!r} outside [0, 1]")
        if self.confidence is not None and not 0.0 < self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence!r} outside (0, 1]")
        if self.label is not None and self.label not in (0, 1):
            raise DataError(f"label {self.label!r} is not binary")
        object.__setattr__(self, "groups", tuple(bool(g) for g in self.groups))


@dataclass
class Records:
    """Column-oriented batch of :class:`ScoredRecord` (all arrays length n)."""

    score: np.ndarray
    groups: np.ndarray
    label: np.ndarray | None = None
    conf: np.ndarray | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.score = np.asarray(self.score, dtype=float).reshape(-1)
        n = self.score.shape[0]
        groups = np.asarray(self.groups, dtype=bool)
        if groups.ndim == 1 and groups.size == 0:
            groups = np.zeros((n, 0), dtype=bool)
        if groups.ndim != 2 or groups.shape[0] != n:
            raise DataError(f"groups must have shape (n, m) with n={n}, got {groups.shape}")
        self.groups = groups
        if n and (np.any(~np.isfinite(self.score)) or self.score.min() < 0.0 or self.score.max() > 1.0):
            raise DataError("scores must lie in [0, 1]")
        for name in ("label", "conf", "ids"):
            val = getattr(self, name)
            if val is not None:
                arr = np.asarray(val).reshape(-1)
                if arr.shape[0] != n:
                    raise DataError(f"{name} has length {arr.shape[0]}, expected {n}")
                setattr(self, name, arr)
        if self.label is not None:
            lab = self.label.astype(float)
            if np.any((lab != 0.0) & (lab != 1.0)):
                raise DataError("labels must be 0 or 1")
            self.label = lab.astype(np.int8)
        if self.conf is not None:
            self.conf = self.conf.astype(float)

    def __len__(self) -> int:
        return self.score.shape[0]

    @property
    def m(self) -> int:
        return self.groups.shape[1]

    def take(self, idx) -> "Records":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Records(self.score[idx], self.groups[idx], pick(self.label), pick(self.conf), pick(self.ids))

    def with_scores(self, scores) -> "Records":
        return Records(scores, self.groups, self.label, self.conf, self.ids)

    @classmethod
    def from_records(cls, records: Sequence[ScoredRecord]) -> "Records":
        if not records:
            raise DataError("no records")
        m = len(records[0].groups)
        if any(len(r.groups) != m for r in records):
            raise DataError("records disagree on the number of groups")
        labels = [r.label for r in records]
        confs = [r.confidence for r in records]
        return cls(
            score=[r.score for r in records],
            groups=np.array([r.groups for r in records], dtype=bool).reshape(len(records), m),
            label=None if any(v is None for v in labels) else labels,
            conf=None if any(v is None for v in confs) else confs,
        )

    @staticmethod
    def concat(parts: Iterable["Records"]) -> "Records":
        parts = list(parts)
        if not parts:
            raise DataError("nothing to concatenate")

        def cat(name):
            vals = [getattr(p, name) for p in parts]
            return None if any(v is None for v in vals) else np.concatenate(vals)

        return Records(
            np.concatenate([p.score for p in parts]),
            np.concatenate([p.groups for p in parts]),
            cat("label"),
            cat("conf"),
            cat("ids"),
        )


# ---------------------------------------------------------------------------
# Witness family
# ---------------------------------------------------------------------------


def _interior_edges(K: int) -> np.ndarray:
    return np.arange(1, K, dtype=float) / K


def bin_index(score: float, K: int) -> int:
    """Bin id in ``1..K`` with ``I_j = [(j-1)/K, j/K)`` and the last bin closed."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score {score!r} outside [0, 1]")
    return int(np.searchsorted(_interior_edges(K), score, side="right")) + 1


@dataclass(frozen=True)
class WitnessFamily:
    """``m`` subgroup indicators crossed with ``K`` uniform score bins."""

    m: int
    K: int = 10

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.m < 0:
            raise ValueError("m must be >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m + 1, self.K)

    def bins(self, scores) -> np.ndarray:
        """Zero-based bin positions (``bin id - 1``) for an array of scores."""
        return np.searchsorted(_interior_edges(self.K), np.asarray(scores, dtype=float), side="right")

    def interval(self, b: int) -> tuple[float, float]:
        """``[lo, hi)`` of bin ``b`` (1-based); the last bin also contains 1."""
        if not 1 <= b <= self.K:
            raise ValueError(f"bin {b} outside 1..{self.K}")
        return ((b - 1) / self.K, b / self.K)

    def cell_sums(self, scores, groups, weights) -> np.ndarray:
        """``out[g, b] = sum_i weights_i * 1{i in G_g} * 1{score_i in I_b}``.

        Sums run in a fixed sequential order so results do not depend on any
        threading in the linear-algebra backend.
        """
        scores = np.asarray(scores, dtype=float)
        weights = np.broadcast_to(np.asarray(weights, dtype=float), scores.shape)
        groups = np.asarray(groups, dtype=bool)
        if groups.shape[1] != self.m:
            raise DataError(f"records carry {groups.shape[1]} groups, family expects {self.m}")
        b = self.bins(scores)
        out = np.empty(self.shape)
        out[0] = np.bincount(b, weights=weights, minlength=self.K)
        for g in range(self.m):
            mask = groups[:, g]
            out[g + 1] = np.bincount(b[mask], weights=weights[mask], minlength=self.K)
        return out


@dataclass
class ResidualTable:
    """Signed cell moments plus the active mass of every cell."""

    moments: np.ndarray
    active_mass: np.ndarray
    regime: str = "pn"

    def __post_init__(self):
        self.moments = np.asarray(self.moments, dtype=float)
        self.active_mass = np.asarray(self.active_mass, dtype=float)
        if self.moments.ndim != 2 or self.moments.shape != self.active_mass.shape:
            raise ValueError("moments and active_mass must be equal-shape matrices")

    @property
    def m(self) -> int:
        return self.moments.shape[0] - 1

    @property
    def K(self) -> int:
        return self.moments.shape[1]

    def rows(self):
        """``(group, bin, bin_lo, bin_hi, moment, active_mass)`` tuples, row-major."""
        for g in range(self.m + 1):
            for b in range(1, self.K + 1):
                yield (g, b, (b - 1) / self.K, b / self.K,
                       float(self.moments[g, b - 1]), float(self.active_mass[g, b - 1]))


def residual_pn(records: Records, family: WitnessFamily) -> ResidualTable:
    """Clean-label cell moments ``(1/n) sum_i a_gb(x_i) (y_i - f(x_i))``."""
    n = len(records)
    if n == 0:
        raise DataError("residual_pn needs at least one record")
    if records.label is None:
        raise DataError("residual_pn needs a label on every record")
    resid = records.label - records.score
    moments = family.cell_sums(records.score, records.groups, resid) / n
    mass = family.cell_sums(records.score, records.groups, 1.0) / n
    return ResidualTable(moments, mass, "pn")


# ---------------------------------------------------------------------------
# Calibration maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellAdd:
    """Add ``delta`` to scores of group ``group`` whose current score is in ``[lo, hi)``.

    An interval with ``hi >= 1`` is closed on the right, like the last bin.
    """

    group: int
    lo: float
    hi: float
    delta: float

    def mask(self, scores, groups) -> np.ndarray:
        scores = np.asarray(scores, dtype=float)
        inside = (scores >= self.lo) & ((scores < self.hi) | ((self.hi >= 1.0) & (scores <= 1.0)))
        if self.group == 0:
            return inside
        return inside & np.asarray(groups, dtype=bool)[:, self.group - 1]

    def apply(self, scores, groups) -> np.ndarray:
        scores = np.asarray(scores, dtype=float)
        return np.where(self.mask(scores, groups), np.clip(scores + self.delta, 0.0, 1.0), scores)


@dataclass(frozen=True)
class Temperature:
    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("temperature must be positive")

    def apply(self, scores, groups=None) -> np.ndarray:
        return sigmoid(logit(scores) / self.beta)


@dataclass(frozen=True)
class AffineLogit:
    a: float
    b: float

    def apply(self, scores, groups=None) -> np.ndarray:
        return sigmoid(self.a * logit(scores) + self.b)


Step = Union[CellAdd, Temperature, AffineLogit]
_STEP_TYPES = {"cell_add": CellAdd, "temperature": Temperature, "affine_logit": AffineLogit}


@dataclass
class CalibrationMap:
    """Ordered corrections replayed against the evolving score."""

    steps: list[Step] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def append(self, step: Step) -> None:
        self.steps.append(step)

    def apply(self, scores, groups=None) -> np.ndarray:
        out = np.array(scores, dtype=float, copy=True)
        if groups is None:
            groups = np.zeros((out.shape[0], 0), dtype=bool)
        for step in self.steps:
            out = step.apply(out, groups)
        return out

    def apply_records(self, records: Records) -> Records:
        return records.with_scores(self.apply(records.score, records.groups))

    def to_dict(self) -> dict:
        steps = []
        for s in self.steps:
            kind = next(k for k, t in _STEP_TYPES.items() if isinstance(s, t))
            steps.append({"kind": kind, **s.__dict__})
        return {"steps": steps}

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationMap":
        steps = []
        for item in data.get("steps", []):
            item = dict(item)
            kind = item.pop("kind")
            if kind not in _STEP_TYPES:
                raise DataError(f"unknown calibration step {kind!r}")
            steps.append(_STEP_TYPES[kind](**item))
        return cls(steps)


def apply_map(cmap: CalibrationMap, record: ScoredRecord) -> float:
    """Corrected score of a single record."""
    for s in cmap.steps:
        if isinstance(s, CellAdd) and s.group > len(record.groups):
            raise DataError(f"map refers to group {s.group} but record has {len(record.groups)}")
    groups = np.array([record.groups], dtype=bool).reshape(1, len(record.groups))
    return float(cmap.apply([record.score], groups)[0])
