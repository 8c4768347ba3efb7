"""Nested-grid nonlinear shallow-water simulator with block-level load
balancing: leap-frog mass/momentum kernels on 3:1 nested block grids, halo
exchange over a 1D block decomposition, and an empirical per-block cost
model driving a two-phase hill-climbing decomposition optimizer."""

from .balance import (
    CostModel,
    DecompositionPlan,
    GPU_REFERENCE_MODEL,
    equal_cell_plan,
    fit_cost_model,
    optimize_plan,
    predict_rank_cost,
)
from .config import load_config, save_config, save_kochi_config
from .grid import (
    Block,
    BoundaryConditions,
    GridLevel,
    InitialCondition,
    NestedGridSystem,
    SimulationConfig,
    build_kochi_scaled_config,
    validate_system,
)
from .kernels import BlockState, OutputAccumulators
from .runner import Simulation, run_simulation

__version__ = "0.1.0"

__all__ = [
    "Block",
    "BlockState",
    "BoundaryConditions",
    "CostModel",
    "DecompositionPlan",
    "GPU_REFERENCE_MODEL",
    "GridLevel",
    "InitialCondition",
    "NestedGridSystem",
    "OutputAccumulators",
    "Simulation",
    "SimulationConfig",
    "build_kochi_scaled_config",
    "equal_cell_plan",
    "fit_cost_model",
    "load_config",
    "optimize_plan",
    "predict_rank_cost",
    "run_simulation",
    "save_config",
    "save_kochi_config",
    "validate_system",
    "__version__",
]
