"""Uniform confidence bands for sorted group average treatment effects."""

from .calibration import (
    BandCoefficients,
    CalibrationCache,
    CalibrationError,
    UniformBand,
    band_lower_bound,
    calibrate,
    calibrate_bridge,
    calibrate_k_family,
    calibrate_min_area,
    validate,
)
from .dataset import (
    ColumnMap,
    DatasetError,
    EvaluationDataset,
    SortedDataset,
    UnitRecord,
    load_csv,
    sort_by_score,
)
from .estimator import GatesCurve, StatisticFamily, gates_curve, gates_variance, pointwise_band
from .process import Boundary, EngineConfig, PathBatch, noncrossing_probability, simulate_paths
from .selection import (
    Characterization,
    SubgroupReport,
    characterize,
    select_argmax_lower,
    select_argmax_point,
    select_threshold,
)
from .simulation import (
    CoverageResult,
    DgpSpec,
    TrueGates,
    correlation_demo,
    coverage_study,
    generate,
    true_gates_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "BandCoefficients", "Boundary", "CalibrationCache", "CalibrationError", "Characterization",
    "ColumnMap", "CoverageResult", "DatasetError", "DgpSpec", "EngineConfig", "EvaluationDataset",
    "GatesCurve", "PathBatch", "SortedDataset", "StatisticFamily", "SubgroupReport", "TrueGates",
    "UniformBand", "UnitRecord", "band_lower_bound", "calibrate", "calibrate_bridge",
    "calibrate_k_family", "calibrate_min_area", "characterize", "correlation_demo",
    "coverage_study", "gates_curve", "gates_variance", "generate", "load_csv",
    "noncrossing_probability", "pointwise_band", "select_argmax_lower", "select_argmax_point",
    "select_threshold", "simulate_paths", "sort_by_score", "true_gates_oracle", "validate",
]
