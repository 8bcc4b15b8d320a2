"""Cluster hospital spells, calibrate a multi-class M/M/c queue to observed
length of stay, and run what-if scenarios on the calibrated queue."""

__version__ = "0.1.0"

from .clustering import (
    ClusteringResult,
    FeatureConfig,
    FeatureMatrix,
    build_features,
    dissimilarity,
    knee_point,
    kprototypes,
    profile_clusters,
    select_k,
)
from .data import SpellRecord, SyntheticConfig, engineer_features, generate_synthetic, load_spells, write_spells
from .des import ClusterModel, CustomerRecord, QueueSpec, SimulationRun, build_spec, estimate_rates, simulate, utilization
from .metrics import EmpiricalDistribution, summary_stats, wasserstein
from .recovery import SweepGrid, SweepResult, evaluate_point, run_sweep, select_best
from .scenarios import BaseCase, ScenarioSpec, run_scenario, scale_arrivals, scale_servers, transfer_arrivals
