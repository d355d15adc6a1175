"""Worst-case pricing under non-linear generalized affine models.

One-dimensional diffusions with affine drift and power-affine volatility
whose parameters are only known to lie in a box.  The package prices
path-dependent claims against the whole box at once: a monotone
finite-difference solver for the worst-case Kolmogorov equation (plain and
Asian-augmented), the linear square-root-case shortcut, seeded Monte-Carlo
corner bounds, and a deep-BSDE solver for payoffs, like barriers, that do
not reduce to a finite-dimensional PDE.
"""

from .model import (
    ImproperParameterBox,
    ModelPoint,
    ParameterBox,
    PropernessCase,
    StateSpace,
    StateSpec,
    classify_properness,
    corner_models,
    diffusion_interval,
    drift_interval,
    eval_G,
    eval_G_gradient,
    eval_G_separable,
    eval_generator,
    instantiate_model,
)
from .paths import (
    DiscretePath,
    PathFunctional,
    horizontal_extend,
    numeric_horizontal_derivative,
    numeric_vertical_derivative,
    running_integral,
    running_max,
    vertical_perturb,
)
from .payoffs import (
    AsianPutCapped,
    BlackCoxPut,
    CappedCall,
    ContagionPut,
    CreditSpec,
    MertonBond,
    MertonEquity,
    UpAndInDigital,
    climate_stressed_threshold,
    contagion_adjusted_terminal,
)
from .fd import (
    CflError,
    Grid1D,
    Grid2D,
    GridSolution,
    pde_residual_check,
    solve_asian_2d,
    solve_linear_cir,
    solve_nonlinear_1d,
)
from .mc import (
    McPrice,
    PathBatch,
    SimulationPlan,
    comparison_diagnostic,
    counter_normals,
    moment_scaling_diagnostic,
    price_mc,
    robust_lower_bound,
    simulate_paths,
    simulate_paths_2d,
    worst_case_cir_price,
)
from .bsde import (
    BsdePricer,
    Mlp,
    TrainConfig,
    TrainReport,
    load_checkpoint,
    price_from_checkpoint,
    reference_model,
    save_checkpoint,
)
from .config import ConfigError, RunConfig, load_config

__version__ = "0.1.0"
