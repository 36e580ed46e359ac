"""Higher-order localized multiscale finite elements on Cartesian grids.

The package builds coarse problem-adapted approximation spaces for
rough-coefficient elliptic operators by solving localized fine-scale
correction problems subject to polynomial moment (DG) or nodal (CG)
constraints, and applies them to source problems, Helmholtz scattering,
and Gross-Pitaevskii ground-state computation.

Typical flow::

    ref    = refine(build_mesh(16), 8)            # coarse 16^2, fine 128^2
    fe     = FeSpace(ref, q=1)
    coeff  = coefficient_a1(32)
    bundle = build_bundle(fe, coeff)
    space  = build_space("dg", p=2, refinement=ref)
    interp = build_interpolator(space, fe)
    basis  = assemble_basis(bundle, space, interp, ell=2)
    sol    = solve_lod(bundle, basis, source("f1"))
"""

from .constraints import (
    ConstraintSpace,
    assemble_b,
    assemble_gram,
    build_space,
    qoi,
    span_residual,
)
from .corrector import (
    LodBasis,
    OperatorBundle,
    assemble_basis,
    build_bundle,
    c_t,
    load_basis,
    save_basis,
)
from .fem import (
    AlignmentError,
    CoefficientField,
    FeFunction,
    FeSpace,
    assemble_mass,
    assemble_stiffness,
    interpolate,
    norms,
    solve_reference,
)
from .gpe import (
    GpeProblem,
    GroundState,
    cubic_terms,
    gpe_bundle,
    gpe_errors,
    ground_state,
    reference_ground_state,
)
from .grid import Domain, build_mesh, fine_dofs_in_patch, patch, refine
from .harness import (
    ExperimentConfig,
    build_coefficient,
    decay_factor,
    fit_eoc,
    run_convergence,
    run_decay,
    run_gpe,
    run_helmholtz,
    write_csv,
)
from .helmholtz import (
    HelmholtzProblem,
    assemble_helmholtz,
    coercivity_diagnostic,
    helmholtz_bundle,
    solve_helmholtz_lod,
)
from .interp import QuasiInterpolator, build_interpolator
from .linalg import (
    ConstraintRankError,
    KktSystem,
    NumericalBreakdown,
    assemble,
    solve_kkt,
    solve_spd,
)
from .lodsolve import global_basis, relative_errors, solve_lod
from .problems import (
    coefficient_a1,
    coefficient_a2,
    gpe_potential,
    load_grid,
    save_grid,
    source,
)

__all__ = [
    "AlignmentError",
    "CoefficientField",
    "ConstraintRankError",
    "ConstraintSpace",
    "Domain",
    "ExperimentConfig",
    "FeFunction",
    "FeSpace",
    "GpeProblem",
    "GroundState",
    "HelmholtzProblem",
    "KktSystem",
    "LodBasis",
    "NumericalBreakdown",
    "OperatorBundle",
    "QuasiInterpolator",
    "assemble",
    "assemble_b",
    "assemble_basis",
    "assemble_gram",
    "assemble_helmholtz",
    "assemble_mass",
    "assemble_stiffness",
    "build_bundle",
    "build_coefficient",
    "build_interpolator",
    "build_mesh",
    "build_space",
    "c_t",
    "coefficient_a1",
    "coefficient_a2",
    "coercivity_diagnostic",
    "cubic_terms",
    "decay_factor",
    "fine_dofs_in_patch",
    "fit_eoc",
    "global_basis",
    "gpe_bundle",
    "gpe_errors",
    "gpe_potential",
    "ground_state",
    "helmholtz_bundle",
    "interpolate",
    "load_basis",
    "load_grid",
    "norms",
    "patch",
    "qoi",
    "reference_ground_state",
    "refine",
    "relative_errors",
    "run_convergence",
    "run_decay",
    "run_gpe",
    "run_helmholtz",
    "save_basis",
    "save_grid",
    "solve_helmholtz_lod",
    "solve_kkt",
    "solve_lod",
    "solve_reference",
    "solve_spd",
    "source",
    "span_residual",
    "write_csv",
]

__version__ = "0.1.0"
