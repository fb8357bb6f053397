"""Multirate GARK Rosenbrock(-W) time integrators for partitioned stiff ODEs."""

from .convergence import ConvergenceTable, convergence_study, fitted_order, pairwise_orders, reference_solution
from .integrator import (
    AdditiveProblem,
    ComponentProblem,
    SingularStageError,
    StepError,
    StepResult,
    Trajectory,
    UnsupportedStructureError,
    integrate,
    step_additive,
    step_base,
    step_component,
    step_monolithic,
    step_spc,
)
from .methods import (
    REGISTRY,
    build_method,
    classical_rk4,
    compound_first_step,
    first_stage_only_coupling,
    fully_decoupled_coupling,
    imex_coupling,
    imex_order23,
    imim_base,
    imim_order23,
    rodas,
    ros34pw2,
    single_rate,
    spc_telescopic,
)
from .mri import (
    MriCoupling,
    SpcMriCoupling,
    check_mri_order3,
    check_spc_mri,
    mri_as_imex,
    mri_linear_coupling,
    mri_step,
    rodas_spc_mri,
    ros34pw2_spc_mri,
    spc_mri_as_spc,
    spc_mri_step,
)
from .order_conditions import (
    ConditionEntry,
    ConditionReport,
    check_base_ros,
    check_generic_gark,
    check_internal_consistency,
    check_mr_order,
    check_spc,
    check_stiff_accuracy,
)
from .problems import PROBLEMS, build_problem, coupled_linear_2x2, dahlquist, pendulum_oscillator, prothero_robinson
from .stability import (
    ScanSlice,
    StabilitySingularityError,
    base_stability_values,
    stability_function,
    stability_matrix_2x2,
    stability_scan,
    stiff_limit,
)
from .tableau import (
    AssembledTableau,
    BaseMethod,
    MultirateMethod,
    TableauError,
    assemble_gark,
    load_tableau,
    save_tableau,
)

__version__ = "0.1.0"
