"""ECE, maxECE and MC aggregated from a residual table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .witness import ResidualTable


@dataclass
class MetricReport:
    regime: str
    ece: float
    max_ece: float | None
    max_ece_group: int | None
    mc: float
    mc_group: int
    mc_bin: int
    mu_min: float
    denominator: str | None = None

    def to_dict(self) -> dict:
        out = {
            "regime": self.regime,
            "ece": self.ece,
            "max_ece": self.max_ece,
            "max_ece_group": self.max_ece_group,
            "mc": self.mc,
            "mc_group": self.mc_group,
            "mc_bin": self.mc_bin,
            "mu_min": self.mu_min,
        }
        if self.denominator is not None:
            out["denominator"] = self.denominator
        return out


def ece(table: ResidualTable) -> float:
    """Binned ECE: absolute sum of the whole-population row."""
    return float(np.abs(table.moments[0]).sum())


def max_ece(table: ResidualTable, masses, mu_min: float = 0.0) -> tuple[float, int]:
    """Worst mass-normalised binned error over groups ``g >= 1``.

    Groups with ``mass <= mu_min`` (and always those with zero mass) are skipped;
    ties go to the smallest group id.
    """
    masses = np.asarray(masses, dtype=float).reshape(-1)
    if masses.shape[0] != table.m:
        raise DataError(f"expected {table.m} group masses, got {masses.shape[0]}")
    eligible = (masses > mu_min) & (masses > 0.0)
    if not eligible.any():
        raise DataError(f"no group has mass above mu_min={mu_min}")
    sums = np.abs(table.moments[1:]).sum(axis=1)
    vals = np.full(table.m, -np.inf)
    vals[eligible] = sums[eligible] / masses[eligible]
    g = int(np.argmax(vals))
    return float(vals[g]), g + 1


def mc(table: ResidualTable, include_population: bool = True) -> tuple[float, tuple[int, int]]:
    """Largest absolute cell moment and its ``(group, bin)``.

    Ties resolve to the lexicographically smallest cell.  With
    ``include_population=False`` the ``g = 0`` row is left out.
    """
    mom = np.abs(table.moments)
    start = 0 if include_population else 1
    if mom.shape[0] <= start:
        raise DataError("table has no subgroup rows")
    flat = int(np.argmax(mom[start:]))
    g, b = divmod(flat, table.K)
    g += start
    return float(mom[g, b]), (g, b + 1)


def report(table: ResidualTable, masses=None, mu_min: float = 0.0, denominator: str | None = None) -> MetricReport:
    """All three metrics; ``max_ece`` is ``None`` when no masses are given or no group qualifies."""
    mx, mg = None, None
    if masses is not None and table.m > 0:
        try:
            mx, mg = max_ece(table, masses, mu_min)
        except DataError:
            pass
    val, (g, b) = mc(table)
    return MetricReport(table.regime, ece(table), mx, mg, val, g, b, float(mu_min), denominator)
