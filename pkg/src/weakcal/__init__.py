"""Multicalibration auditing and post-hoc correction from weakly labeled data."""

from .decon import (
    REGIMES,
    DecontaminationSpec,
    SourceTerm,
    WeakBags,
    corrected_residual,
    group_mass,
    make_spec,
)
from .errors import DataError, NumericError, SingularPriorError, WeakcalError
from .metrics import MetricReport, ece, max_ece, mc, report
from .postproc import (
    WeakNllObjective,
    WlmcConfig,
    WlmcResult,
    fit_platt,
    fit_temperature,
    weak_nll,
    wlmc_fit,
)
from .witness import (
    AffineLogit,
    CalibrationMap,
    CellAdd,
    Records,
    ResidualTable,
    ScoredRecord,
    Temperature,
    WitnessFamily,
    apply_map,
    residual_pn,
)

__version__ = "0.1.0"

__all__ = [
    "REGIMES", "DecontaminationSpec", "SourceTerm", "WeakBags", "corrected_residual", "group_mass", "make_spec",
    "DataError", "NumericError", "SingularPriorError", "WeakcalError",
    "MetricReport", "ece", "max_ece", "mc", "report",
    "WeakNllObjective", "WlmcConfig", "WlmcResult", "fit_platt", "fit_temperature", "weak_nll", "wlmc_fit",
    "AffineLogit", "CalibrationMap", "CellAdd", "Records", "ResidualTable", "ScoredRecord", "Temperature",
    "WitnessFamily", "apply_map", "residual_pn",
]
