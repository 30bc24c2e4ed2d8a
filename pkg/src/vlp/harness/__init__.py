"""Experiment runner and error statistics."""

from vlp.harness.experiment import DYNAMIC_PRESETS, ExperimentResult, ExperimentSpec, grid_points, run_experiment
from vlp.harness.stats import (ErrorSample, ErrorStats, LineFit, cdf, dispersion_radius, error_distribution,
                               fit_line, percentile_nearest_rank, pmf)

__all__ = ["DYNAMIC_PRESETS", "ExperimentResult", "ExperimentSpec", "grid_points", "run_experiment", "ErrorSample",
           "ErrorStats", "LineFit", "cdf", "dispersion_radius", "error_distribution", "fit_line",
           "percentile_nearest_rank", "pmf"]
