"""Seeded Monte Carlo engine and the experiments built on it."""

from isomech.simulation.engine import ExperimentReport, ReportRow, RunningStats, UtilityEstimate, monte_carlo
from isomech.simulation.experiments import (
    candidate_rankings,
    consistency_experiment,
    counterexample_nonconvex,
    counterexample_pairwise,
    estimate_expected_utility,
    line_mechanism_experiment,
    make_truth,
    nested_cone_experiment,
    random_consistency_case,
    risk_curve,
    truthfulness_scan,
)
from isomech.simulation.noise import BLOCK, NoiseModel, sample_noise

__all__ = [
    "BLOCK",
    "ExperimentReport",
    "NoiseModel",
    "ReportRow",
    "RunningStats",
    "UtilityEstimate",
    "candidate_rankings",
    "consistency_experiment",
    "counterexample_nonconvex",
    "counterexample_pairwise",
    "estimate_expected_utility",
    "line_mechanism_experiment",
    "make_truth",
    "monte_carlo",
    "nested_cone_experiment",
    "random_consistency_case",
    "risk_curve",
    "sample_noise",
    "truthfulness_scan",
]
