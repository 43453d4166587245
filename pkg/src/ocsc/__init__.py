"""Scalar optimal control with the state floor enforced at finitely many
times: forward and adjoint sweeps, maximum-condition checks, constraint
repair, penalised functionals and a closed-form LQ benchmark."""

from .adjoint import (
    AdjointPath,
    Multipliers,
    PMPReport,
    check_pmp,
    fit_multipliers,
    hamiltonian,
    integrate_adjoint,
    integrate_adjoint_averaged,
    integrate_adjoint_multitime,
)
from .errors import (
    AssumptionWarning,
    AuditError,
    BracketError,
    ContractError,
    ControllabilityError,
    InfeasibleProblem,
    IntegrationDiverged,
    SurgeryFailed,
)
from .integrate import (
    PiecewiseConstantControl,
    Trajectory,
    VariationalPath,
    check_expansion,
    evaluate_cost,
    integrate_forward,
    integrate_variational,
    simulate,
    spike_variation,
)
from .lq import lq_continuous_optimum, lq_discrete_optimum, lq_problem, lq_reference_adjoint, lq_switch_time
from .problem import (
    ConstraintGrid,
    ControlProblem,
    affine_problem,
    audit_boundary_controllability,
    audit_control_monotonicity,
    audit_lipschitz,
    load_config,
)
from .relax import (
    FeasibilityVerdict,
    PairDistance,
    SolverOptions,
    classify_feasibility,
    control_surgery,
    ekeland_sequence,
    penalized_cost_n,
    penalized_cost_theta,
    reach_target,
    solve_discrete_constrained,
)

__version__ = "0.1.0"
