"""Differentially private communication patterns for decentralized execution plans."""

from .accountant import (
    AmplificationParams,
    PrivacyBudget,
    compose_plan,
    delta_bound_bennett,
    delta_bound_empirical,
    delta_bound_hoeffding,
    epsilon_for_delta,
    epsilon_local,
    epsilon_local_total_budget,
    epsilon_scrambler_capped,
    generic_randomizer_delta,
    sample_amplification_variable,
)
from .mechanisms import MechanismConfig, local_randomize, run_cluster_mechanism, scramble
from .model import (
    Cluster,
    CommunicationGraph,
    ExecutionPlan,
    NodeId,
    Role,
    SourceNode,
    neighboring_graph,
    validate_cluster_decomposition,
)
from .oracle import (
    EnumerationCapExceeded,
    OutputDistribution,
    coverage_estimate,
    empirical_output_histogram,
    exact_output_distribution,
    hockey_stick_divergence,
    worst_case_ratio,
)
from .rng import RngSeed
from .scenarios import ScenarioConfig, build_aggregate_plan, build_kmeans_plan, rand_index, run_scenario, sweep

__version__ = "0.1.0"
