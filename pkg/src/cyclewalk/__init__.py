"""Numerical laboratory for non-reversible cycle random walks on potential
landscapes.

The package builds a continuous-time Markov chain whose generator is a sum of
rotations around translated lattice cycles, stationary with respect to a Gibbs
measure.  It computes exact finite-size potential-theoretic quantities
(equilibrium potentials, capacities, hitting times, trace and collapsed
chains, flows) by sparse linear solves and verifies sharp transition-rate
formulas of Eyring-Kramers type at desk scale.
"""

from cyclewalk.landscape import (
    PotentialField,
    CriticalPoint,
    LandscapeStructure,
    find_critical_points,
    build_landscape,
    well_weights,
    depth_partition,
    double_well_1d,
    triple_well_1d,
    double_well_2d,
    polynomial_field,
)
from cyclewalk.lattice import (
    Cycle,
    LatticeDomain,
    validate_cycle,
    discretize,
    nearest_lattice_point,
    metastable_sets,
)
from cyclewalk.chain import (
    FiniteChain,
    Generator,
    build_generator,
    stationary_weights,
    drift,
    dirichlet_form,
    sector_ratio,
)
from cyclewalk.ptheory import (
    HarmonicData,
    equilibrium_potential,
    capacity,
    mean_hitting_time,
    expected_reward,
    trace_generator,
    mean_jump_rates,
    collapse,
    collapsed_hit_prob,
    stable_capacity,
    stable_hitting_time,
)
from cyclewalk.flows import (
    EdgeSpace,
    Flow,
    GoodPath,
    edge_space,
    field_flows,
    cycle_flow,
    path_flow,
    transfer_divergence,
    saddle_test_flow,
    dirichlet_value,
    thomson_value,
    dirichlet_optimizers,
    thomson_optimizers,
    collapse_flow,
)
from cyclewalk.saddle import (
    SaddleAnalysis,
    MesoBoxes,
    cycle_matrix_A,
    analyze_saddle,
    drift_jacobian_fd,
    mesoscopic_sets,
    local_dirichlet,
)
from cyclewalk.reduced import (
    ReducedChain,
    build_reduced,
    cap_Y,
    c_m,
    PredictionSet,
    predictions,
    two_well_time_log,
)
from cyclewalk.simulate import (
    TrajectoryStats,
    sample_hitting_time,
    estimate_mean_hitting,
    well_visit_sequence,
    occupation_times,
)

__version__ = "0.1.0"
