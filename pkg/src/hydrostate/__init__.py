"""Nodal hydraulic head estimation and leak localization for water networks."""

from .hydraulics import (
    Conductivity,
    MeasurementContext,
    SolverError,
    conductivity,
    demands_from_flows,
    flows_from_heads,
    measurement_g,
    signed_flows,
    solve_steady_state,
)
from .interpolation import (
    AwgsiResult,
    GsiProblem,
    GsiSolution,
    QpError,
    WeightPair,
    aw_weights,
    awgsi_estimate,
    awgsi_heads,
    gsi_estimate,
    gsi_weights,
)
from .localization import LeakScore, lcsm_score, over_ranked_count
from .network import (
    GraphMatrices,
    Network,
    NetworkError,
    Node,
    ParseError,
    Pipe,
    SensorConfig,
    build_approx_incidence,
    build_gsi_adjacency,
    build_incidence,
    build_selection,
    load_network,
    parse_network,
    serialize_network,
    structural_incidence,
)
from .scenario import (
    ScenarioSpec,
    TimeSeriesData,
    Uncertainty,
    every_two_hours,
    generate,
    generate_pair,
    rmse,
    summarize,
)
from .ukf import (
    FilterError,
    SigmaParams,
    UkfConfig,
    UkfRun,
    UkfState,
    predict_f,
    run_ukf_awgsi,
    run_ukf_gsi,
    sigma_points,
    ukf_step,
    update_weights,
)

__version__ = "0.1.0"
