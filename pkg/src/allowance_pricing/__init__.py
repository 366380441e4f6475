"""Numerical pricing of emission allowances under a penalty-backed cap.

The allowance spot price is a bounded martingale pinned to a digital payoff
at the compliance date; it is a deterministic non-decreasing functional of a
shortage state. This package builds those functionals backward by three
routes (grid fixed point, least-squares projection, degenerate parabolic
PDE), simulates the resulting price paths, and values European calls on the
allowance price.
"""

__version__ = "0.1.0"

from .config import RunConfig, load_config, parse_config_text, serialize_config
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DomainError,
    ModelError,
    SolverError,
)
from .fixedpoint import (
    SolverSettings,
    backward_recursion,
    bisect_alpha,
    exact_tree_oracle,
    expectation_of_shifted,
    tree_call_value,
)
from .lsmc import (
    ApmcmResult,
    ApmcmStep,
    DesignMatrix,
    HutBasis,
    LsmcSettings,
    ProjectionSample,
    apmcm_step,
    build_sample,
    pav_non_decreasing,
    postprocess_coefficients,
    project,
    run_apmcm,
)
from .model import (
    AbatementFunction,
    CostFunction,
    DigitalFunctional,
    NoiseModel,
    PriceFunctional,
    PricingConfig,
    derive_abatement_volume,
    digital_terminal,
)
from .pde import (
    DiffusionSpec,
    PdeGrid,
    PdeSurface,
    convergence_table,
    simulate_sde,
    solve_pde,
    stability_bound,
)
from .pricing import (
    CallSpec,
    MartingaleReport,
    SimulatedPaths,
    invert_alpha,
    martingale_diagnostic,
    mc_call_estimate,
    price_european_call,
    reference_call_curves,
    replicate_call_prices,
    simulate_paths,
)
