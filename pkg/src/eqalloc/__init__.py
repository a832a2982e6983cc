"""Permutation-equivariant weight-sharing networks for predictive resource
allocation, with an exact LP oracle, an EDF baseline, and a benchmark CLI."""

from .nn import (
    AdamState,
    DenseLayer,
    Mlp,
    adam_step,
    backprop,
    dense_forward,
    finite_diff_check,
    init_adam,
    init_dense,
    mlp_forward,
    softplus,
)
from .equivariant import (
    EquivariantLayer,
    InvariantFunctionFixture,
    eq_backward,
    eq_forward,
    expand_to_dense,
    init_equivariant,
    perm_invariant_reference,
    permute_blocks,
)
from .wireless import (
    NetworkConfig,
    Scenario,
    avg_rate,
    derive_noise_power,
    gen_scenario,
    pathloss_gain,
    read_scenarios,
    slot_rate,
    write_scenarios,
)
from .lp import (
    LpProblem,
    PlanSolution,
    SolverError,
    StructurallyInfeasibleError,
    build_lp,
    simplex_solve,
    solve_lp,
    solve_scenario,
    verify_plan,
)
from .training import (
    Sample,
    TrainConfig,
    TrainState,
    build_input,
    empirical_lagrangian,
    evaluate_gap,
    normalize_plan,
    sample_complexity_sweep,
    train,
)
from .baseline import SimOutcome, edf_schedule, execute_plan
from .serialize import load_model, save_model

__version__ = "0.1.0"
