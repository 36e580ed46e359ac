"""Complex-valued multiscale solver for heterogeneous Helmholtz problems.

The sesquilinear form

    a(u, v) = (A grad u, grad v~) - kappa^2 (V^2 u, v~) - i kappa <sigma u, v~>_boundary

is assembled as K - kappa^2 M - i kappa N with each piece real symmetric
(K, M, N PSD; N supported on boundary dofs), making the matrix complex
symmetric.  The coarse problem is Petrov-Galerkin with the conjugated
trial space as tests, which collapses to the plain congruence
Phi^T S Phi — no conjugation — so the coarse matrix is complex symmetric
too.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .constraints import ConstraintSpace, assemble_b
from .corrector import LodBasis, OperatorBundle, assemble_basis, build_bundle
from .fem import (
    CoefficientField,
    FeFunction,
    FeSpace,
    assemble_boundary_mass,
    assemble_mass,
    assemble_stiffness,
    interpolate,
)
from .grid import build_mesh, refine
from .interp import build_interpolator
from .linalg import NumericalBreakdown, solve_general
from .lodsolve import LodSolution, assemble_coarse, coarse_load

__all__ = [
    "HelmholtzProblem",
    "SesquilinearSystem",
    "assemble_helmholtz",
    "helmholtz_bundle",
    "solve_fine",
    "kappa_norm_matrix",
    "coercivity_diagnostic",
    "solve_helmholtz_lod",
    "HelmholtzResult",
]

_KERNEL_LIMIT = 4000


@dataclass(eq=False)
class HelmholtzProblem:
    """Coefficients and data of the Robin-boundary Helmholtz equation."""

    a: CoefficientField
    v: CoefficientField
    sigma: float
    kappa: float
    f: object  # callable source (may return complex values)

    def __post_init__(self) -> None:
        if self.kappa <= 0:
            raise ValueError(f"wavenumber must be positive, got {self.kappa}")
        if self.sigma <= 0:
            raise ValueError(f"boundary coefficient must be positive, got {self.sigma}")
        if self.a.bounds[0] <= 0:
            raise ValueError("diffusion coefficient must be uniformly positive")
        if self.v.bounds[0] <= 0:
            raise ValueError("squared-refraction coefficient must be uniformly positive")


@dataclass(eq=False)
class SesquilinearSystem:
    """Assembled operator with its Garding-type split."""

    fe: FeSpace
    matrix: sp.csr_matrix  # K - kappa^2 M - i kappa N
    stiffness: sp.csr_matrix  # K: A-weighted
    mass_v2: sp.csr_matrix  # M: V^2-weighted
    boundary: sp.csr_matrix  # N: sigma-weighted boundary mass
    kappa: float


def _v_squared_weights(fe: FeSpace, prob: HelmholtzProblem) -> np.ndarray:
    return prob.v.per_element(fe) ** 2


def assemble_helmholtz(fe: FeSpace, prob: HelmholtzProblem) -> SesquilinearSystem:
    if fe.bc == "dirichlet-zero":
        raise ValueError("Helmholtz needs the full space; no Dirichlet elimination")
    k = assemble_stiffness(fe, prob.a)
    v2 = _v_squared_weights(fe, prob)
    from .fem import _scatter

    mass_loc, _ = fe.local_matrices()
    m = _scatter(fe, mass_loc, v2)
    n = assemble_boundary_mass(fe, prob.sigma)
    matrix = (k - prob.kappa**2 * m - 1j * prob.kappa * n).tocsr()
    return SesquilinearSystem(fe, matrix, k, m, n, prob.kappa)


def helmholtz_bundle(fe: FeSpace, prob: HelmholtzProblem) -> OperatorBundle:
    """Operator bundle for corrector problems: same form, element-local parts.

    Patch spaces keep domain-boundary dofs (zero trace only on the patch
    boundary inside the domain) and the Robin term acts on the kept part
    of the boundary, mirroring the global form.
    """
    return build_bundle(
        fe,
        prob.a,
        mass_weight=-prob.kappa**2 * _v_squared_weights(fe, prob),
        robin_factor=-1j * prob.kappa,
        sigma=prob.sigma,
        include_domain_boundary=True,
    )


def solve_fine(system: SesquilinearSystem, prob: HelmholtzProblem) -> np.ndarray:
    """Fine Galerkin reference solution of S u = M f."""
    fe = system.fe
    f_vals = interpolate(fe, prob.f).values.astype(np.complex128)
    load = assemble_mass(fe) @ f_vals
    return solve_general(system.matrix, load)


def kappa_norm_matrix(system: SesquilinearSystem) -> sp.csr_matrix:
    """Quadratic form of the kappa-norm: A-gradient plus kappa^2 V^2 mass."""
    return (system.stiffness + system.kappa**2 * system.mass_v2).tocsr()


def coercivity_diagnostic(
    fe: FeSpace, prob: HelmholtzProblem, space: ConstraintSpace
) -> float:
    """min over the discrete kernel W of Re a(w, w) / |grad w|^2.

    A positive value certifies coercivity of the real part on W; the
    kernel basis is built densely, so only small instances are allowed.
    """
    system = assemble_helmholtz(fe, prob)
    b = assemble_b(space, fe)
    kernel_dim = fe.n_dofs - space.J
    if kernel_dim > _KERNEL_LIMIT:
        raise ValueError(
            f"kernel dimension {kernel_dim} exceeds the diagnostic limit "
            f"{_KERNEL_LIMIT}; use a smaller instance"
        )
    z = scipy.linalg.null_space(b.toarray())
    real_part = system.stiffness - prob.kappa**2 * system.mass_v2
    grad = assemble_stiffness(fe, 1.0)
    a_red = z.T @ (real_part @ z)
    g_red = z.T @ (grad @ z)
    vals = scipy.linalg.eigh(a_red, g_red, eigvals_only=True)
    return float(vals[0])


@dataclass(eq=False)
class HelmholtzResult:
    solution: LodSolution
    reference: np.ndarray
    errors: dict[str, float]
    basis: LodBasis
    system: SesquilinearSystem


def solve_helmholtz_lod(
    prob: HelmholtzProblem,
    n: int,
    r: int,
    p: int,
    mode: str,
    ell: int,
    q: int = 1,
    workers: int = 1,
    drop_tol: float | None = None,
) -> HelmholtzResult:
    """End-to-end desk run: basis, coarse Petrov-Galerkin solve, errors."""
    ref = refine(build_mesh(n, prob.a.domain), r)
    fe = FeSpace(ref, q=q, bc="robin")
    space = ConstraintSpace(mode, p, ref)
    ih = build_interpolator(space, fe)
    bundle = helmholtz_bundle(fe, prob)
    basis = assemble_basis(bundle, space, ih, ell=ell, workers=workers, drop_tol=drop_tol)
    system = assemble_helmholtz(fe, prob)

    f_vals = interpolate(fe, prob.f).values.astype(np.complex128)
    load = assemble_mass(fe) @ f_vals
    coarse = assemble_coarse(basis, system.matrix)
    rhs = coarse_load(basis, load)
    try:
        coeffs = solve_general(coarse, rhs)
    except NumericalBreakdown as err:
        cond = None
        if coarse.shape[0] <= 6000:
            dense = coarse.toarray() if sp.issparse(coarse) else coarse
            cond = float(np.linalg.cond(dense))
        raise RuntimeError(
            f"coarse Helmholtz matrix is numerically singular "
            f"(condition estimate {cond!r}); increase ell or the resolution"
        ) from err
    values = np.asarray(basis.phi @ coeffs).ravel()
    u_ref = solve_fine(system, prob)

    knorm = kappa_norm_matrix(system)
    diff = values - u_ref
    denom = np.sqrt(np.real(np.vdot(u_ref, knorm @ u_ref)))
    err = np.sqrt(max(np.real(np.vdot(diff, knorm @ diff)), 0.0)) / denom
    sol = LodSolution(coeffs, FeFunction(fe, values))
    return HelmholtzResult(sol, u_ref, {"kappa": float(err)}, basis, system)
