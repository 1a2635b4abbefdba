"""Multi-cell over-the-air computation with movable dual-polarized arrays.

Library layout:

- :mod:`aircomp.numerics`: dense complex linear-algebra helpers
- :mod:`aircomp.scene`: configuration, seeding and random drops
- :mod:`aircomp.channel`: field-response and polarized channel assembly
- :mod:`aircomp.objective`: sum-MSE closed form, Monte-Carlo oracle, gradient
- :mod:`aircomp.subsolvers`: the five per-block update rules
- :mod:`aircomp.orchestrator`: alternating and two-time-scale optimization
- :mod:`aircomp.baselines`: fixed-array, single-polarized and single-cell schemes
- :mod:`aircomp.experiments`: sweep runner, demo and CSV output
"""

from .baselines import single_cell_scenario, solve_fpa, solve_ma
from .channel import (
    ChannelSet,
    LinkGeometry,
    PolarizationState,
    build_channel_set,
    effective_channels,
    field_response_bs,
    field_response_rx_user,
    polarization_matrices,
    refresh_effective,
    unpolarized_channels,
)
from .errors import (
    AircompError,
    AssemblyError,
    ConfigError,
    DivergenceError,
    EigenError,
    MonotonicityError,
    NearSingularError,
    NumericsError,
    SolverError,
)
from .experiments import (
    DemoProblem,
    DemoResult,
    ExperimentSpec,
    desk_config,
    distributed_demo,
    emit_csv,
    full_scale_config,
    make_quadratic_demo,
    run_experiment,
)
from .numerics import hermitian_eig, kron, max_eig_general, solve_hpd, unvec, vec
from .objective import (
    DecisionVars,
    initial_vars,
    mse_closed_form,
    mse_grad_positions,
    mse_monte_carlo,
    validate_vars,
)
from .orchestrator import AOOptions, SolveReport, alternating_optimize, two_timescale_optimize
from .scene import (
    Drop,
    SystemConfig,
    check_layout_feasible,
    dbm_to_watt,
    initial_layout,
    sample_drop,
    substream,
)
from .subsolvers import (
    build_varpi_data,
    gaussian_randomize,
    sca_update_m,
    solve_p44,
    update_a,
    update_positions,
    update_varpi,
    update_W,
)

__version__ = "0.1.0"
