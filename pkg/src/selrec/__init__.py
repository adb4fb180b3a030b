"""Deterministic selection and recombination dynamics on binary sequences.

Forward solvers (ODE grid, level recursion, closed semigroup form), the
genealogical dual processes that represent the solution stochastically,
and a finite-population Moran simulator that converges to the flow.
"""

__version__ = "0.1.0"

from .sites import SiteConfig
from .measure import (
    Measure,
    ProbabilityMeasure,
    boxtimes,
    cond_fit,
    cond_unfit,
    delta,
    fit_fraction,
    fitness_projection,
    l1_distance,
    partition_recombinator,
    product_measure,
    recombinator,
    tensor,
    uniform,
)
from .partitions import IntervalPartition, WeightedPartition, decode, encode
from .rng import spawn_stream
from .solvers import (
    GridTooCoarseError,
    SolverError,
    SolverSettings,
    Trajectory,
    TruncatedFamily,
    asymptotic_limit,
    equilibration_time,
    integrate_ode,
    ld_decay_residual,
    linkage_disequilibrium,
    logistic_fit_fraction,
    marginal_sre_solve,
    recursive_solve,
    selection_flow,
    semigroup_solve,
    sre_rhs,
    stationary_count_pgf,
    yule_pgf,
)
from .duals import (
    DELTA,
    DualityReport,
    InitiationState,
    IntDistribution,
    MCEstimate,
    ancestor_mixture,
    duality_check,
    duality_counts,
    duality_partition,
    duality_runtimes,
    initiation_simulate,
    mc_solution_estimate,
    runtime_for_count,
    runtimes_from_counts,
    wpp_simulate,
    ypir_pgf,
    ypir_semigroup,
    ypir_simulate,
    ypir_stationary,
    ypir_vector_simulate,
)
from .moran import (
    LLNReport,
    MoranState,
    empirical_measure,
    lln_convergence,
    moran_simulate,
    sample_population,
)
from .config import ConfigError, ExperimentConfig

__all__ = [
    "__version__",
    "SiteConfig",
    "Measure",
    "ProbabilityMeasure",
    "boxtimes",
    "cond_fit",
    "cond_unfit",
    "delta",
    "fit_fraction",
    "fitness_projection",
    "l1_distance",
    "partition_recombinator",
    "product_measure",
    "recombinator",
    "tensor",
    "uniform",
    "IntervalPartition",
    "WeightedPartition",
    "decode",
    "encode",
    "spawn_stream",
    "GridTooCoarseError",
    "SolverError",
    "SolverSettings",
    "Trajectory",
    "TruncatedFamily",
    "asymptotic_limit",
    "equilibration_time",
    "integrate_ode",
    "ld_decay_residual",
    "linkage_disequilibrium",
    "logistic_fit_fraction",
    "marginal_sre_solve",
    "recursive_solve",
    "selection_flow",
    "semigroup_solve",
    "sre_rhs",
    "stationary_count_pgf",
    "yule_pgf",
    "DELTA",
    "DualityReport",
    "InitiationState",
    "IntDistribution",
    "MCEstimate",
    "ancestor_mixture",
    "duality_check",
    "duality_counts",
    "duality_partition",
    "duality_runtimes",
    "initiation_simulate",
    "mc_solution_estimate",
    "runtime_for_count",
    "runtimes_from_counts",
    "wpp_simulate",
    "ypir_pgf",
    "ypir_semigroup",
    "ypir_simulate",
    "ypir_stationary",
    "ypir_vector_simulate",
    "LLNReport",
    "MoranState",
    "empirical_measure",
    "lln_convergence",
    "moran_simulate",
    "sample_population",
    "ConfigError",
    "ExperimentConfig",
]
