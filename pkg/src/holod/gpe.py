"""Ground states of Gross-Pitaevskii energies on multiscale coarse spaces.

The energy

    E(u) = 1/2 (grad u, grad u) + 1/2 (V u, u) + kappa_g/4 (u^2, u^2)

is minimized over the L2 unit sphere of the span of a basis (a localized
multiscale basis or the full fine space) by a Sobolev gradient flow: the
descent direction preconditions the Euler-Lagrange residual with the
quadratic part a(u, v) = (grad u, grad v) + (V u, v), and every step is
renormalized exactly.  The flow is deterministic: fixed initial value,
backtracking line search with doubling recovery, energy-decrease stopping
rule.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .constraints import assemble_b
from .corrector import LodBasis, OperatorBundle, build_bundle
from .fem import (
    CoefficientField,
    FeFunction,
    FeSpace,
    assemble_mass,
    assemble_stiffness,
    gauss_rule,
    interpolate,
    lagrange_values,
)
from .linalg import SpdFactorization

__all__ = [
    "GpeProblem",
    "GroundState",
    "gpe_bundle",
    "cubic_terms",
    "energy",
    "fine_basis",
    "ground_state",
    "reference_ground_state",
    "gpe_errors",
]

_DENSE_METRIC_LIMIT = 20000


@dataclass(eq=False)
class GpeProblem:
    """Trapping potential and repulsion strength of the stationary equation."""

    potential: CoefficientField
    kappa_g: float

    def __post_init__(self) -> None:
        if isinstance(self.potential, (int, float)):
            self.potential = CoefficientField.constant(float(self.potential))
        if self.kappa_g < 0:
            raise ValueError(
                f"repulsion parameter must be non-negative, got {self.kappa_g}"
            )


def gpe_bundle(fe: FeSpace, prob: GpeProblem) -> OperatorBundle:
    """Quadratic part of the energy: unit stiffness plus potential mass."""
    if fe.bc != "dirichlet-zero":
        raise ValueError("ground-state computations use a Dirichlet fine space")
    return build_bundle(fe, 1.0, mass_weight=prob.potential)


def _quad_tables(fe: FeSpace, npts: int) -> tuple[np.ndarray, np.ndarray]:
    g, w = gauss_rule(npts)
    v = lagrange_values(fe.q, g)
    table = np.kron(v, v)  # (npts^2, (q+1)^2), both tensor y-major
    w2d = (np.outer(w, w)).ravel() * fe.h**2
    return table, w2d


def cubic_terms(
    fe: FeSpace, u: np.ndarray, npts: int | None = None
) -> tuple[float, np.ndarray]:
    """Integral of u^4 and the load vector (u^3, phi_i), by Gauss quadrature.

    The default rule (2q+1 points per direction) integrates u^4 exactly
    for piecewise Q^q arguments.
    """
    if npts is None:
        npts = 2 * fe.q + 1
    table, w2d = _quad_tables(fe, npts)
    dofs = fe.element_dofs
    u_loc = u[dofs]  # (n_elements, (q+1)^2)
    u_q = u_loc @ table.T  # values at quadrature points
    quartic = float(np.einsum("ep,p->", u_q**4, w2d))
    load_loc = (u_q**3 * w2d[None, :]) @ table
    load = np.bincount(dofs.ravel(), weights=load_loc.ravel(), minlength=fe.n_dofs)
    return quartic, load


def energy(
    fe: FeSpace,
    prob: GpeProblem,
    u: np.ndarray,
    bundle: OperatorBundle | None = None,
    npts: int | None = None,
) -> float:
    """Total energy of a fine-space function (not necessarily normalized)."""
    if bundle is None:
        bundle = gpe_bundle(fe, prob)
    quartic, _ = cubic_terms(fe, u, npts=npts)
    return float(0.5 * (u @ (bundle.matrix @ u)) + 0.25 * prob.kappa_g * quartic)


@dataclass(eq=False)
class GroundState:
    """Converged (or stalled) output of the gradient flow."""

    coeffs: np.ndarray
    function: FeFunction
    energy: float
    eigenvalue: float
    energies: np.ndarray  # energy after every accepted step, non-increasing
    iterations: int
    converged: bool


def fine_basis(fe: FeSpace) -> LodBasis:
    """Identity embedding of the free fine dofs, for reference flows."""
    free = fe.free_dofs
    phi = sp.csc_matrix(
        (np.ones(len(free)), (free, np.arange(len(free)))),
        shape=(fe.n_dofs, len(free)),
    )
    return LodBasis(mode="fine", p=fe.q, ell=None, phi=phi, fe=fe, space=None)


def _metric_solver(basis: LodBasis, matrix: sp.spmatrix):
    """Factor Phi^T A Phi once; returns a solve closure.

    The global basis has dense columns, so the congruence is formed in
    dense column blocks; localized bases keep everything sparse, where
    the reduced matrix inherits the coarse stencil.
    """
    phi = basis.phi
    j = phi.shape[1]
    if basis.ell is None and j <= _DENSE_METRIC_LIMIT and basis.space is not None:
        dense = np.empty((j, j))
        chunk = 256
        for lo in range(0, j, chunk):
            hi = min(lo + chunk, j)
            block = np.asarray(phi[:, lo:hi].todense())
            dense[:, lo:hi] = phi.T @ (matrix @ block)
        cho = scipy.linalg.cho_factor(dense, lower=True, overwrite_a=True)
        return lambda r: scipy.linalg.cho_solve(cho, r)
    # Column-chunked congruence: A @ phi in full would transiently double
    # the footprint of a large localized basis.
    step = max(1, -(-j // 8))
    parts = []
    for lo in range(0, j, step):
        hi = min(lo + step, j)
        parts.append(phi.T @ (matrix @ phi[:, lo:hi]))
    reduced = sp.hstack(parts, format="csc") if len(parts) > 1 else parts[0].tocsc()
    fact = SpdFactorization(reduced)
    return fact.solve


def _initial_coeffs(basis: LodBasis, values: np.ndarray) -> np.ndarray:
    """Coefficients of the basis member sharing the constraint functionals."""
    if basis.space is None:
        return values[basis.fe.free_dofs]
    return assemble_b(basis.space, basis.fe) @ values


def _default_initial(fe: FeSpace) -> np.ndarray:
    dom = fe.refinement.fine.domain
    cx = dom.x0 + dom.side / 2.0
    cy = dom.y0 + dom.side / 2.0
    vals = interpolate(
        fe, lambda x, y: np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / 2.0)
    ).values
    return np.where(fe.boundary_dof_mask(), 0.0, vals)


def ground_state(
    bundle: OperatorBundle,
    basis: LodBasis,
    prob: GpeProblem,
    tol: float = 1e-12,
    max_iter: int = 2000,
    initial: np.ndarray | None = None,
    npts: int | None = None,
) -> GroundState:
    """Normalized Sobolev gradient flow on the span of the basis.

    initial, when given, is a fine-space coefficient vector; it is mapped
    into the basis span through the constraint functionals, which lets a
    previously computed state on another mesh serve as a warm start.
    """
    fe = bundle.fe
    kg = prob.kappa_g
    a = bundle.matrix
    mass = assemble_mass(fe)
    phi = basis.phi
    solve_metric = _metric_solver(basis, a)

    if initial is None:
        initial = _default_initial(fe)
    c = np.asarray(_initial_coeffs(basis, np.asarray(initial, dtype=float)))

    def expand_normalized(cvec):
        uvec = np.asarray(phi @ cvec).ravel()
        nrm = np.sqrt(uvec @ (mass @ uvec))
        if nrm == 0.0:
            raise ValueError("initial value vanishes on the coarse space")
        return cvec / nrm, uvec / nrm

    c, u = expand_normalized(c)
    quartic, load = cubic_terms(fe, u, npts=npts)
    au = a @ u
    e_cur = 0.5 * (u @ au) + 0.25 * kg * quartic
    energies = [e_cur]
    tau = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # Riemannian gradient on the L2 sphere in the a-metric: precondition
        # the Euler-Lagrange residual, then remove the component along the
        # a-representer of the norm constraint (not along u itself).
        mu = phi.T @ (mass @ u)
        grad = phi.T @ (au + kg * load)
        raw = solve_metric(grad)
        rep = solve_metric(mu)
        direction = raw - ((mu @ raw) / (mu @ rep)) * rep
        accepted = False
        while tau >= 1e-13:
            try:
                c_try, u_try = expand_normalized(c - tau * direction)
            except ValueError:
                tau *= 0.5
                continue
            q_try, l_try = cubic_terms(fe, u_try, npts=npts)
            au_try = a @ u_try
            e_try = 0.5 * (u_try @ au_try) + 0.25 * kg * q_try
            if e_try <= e_cur:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            converged = True  # no descent left at the smallest step
            break
        delta = e_cur - e_try
        c, u, au, quartic, load, e_cur = c_try, u_try, au_try, q_try, l_try, e_try
        energies.append(e_cur)
        tau = min(1.0, 2.0 * tau)
        if delta <= tol:
            converged = True
            break
    if not converged:
        last = energies[-2] - energies[-1] if len(energies) > 1 else float("nan")
        warnings.warn(
            f"gradient flow hit max_iter={max_iter} with last energy "
            f"decrease {last:.3e}",
            RuntimeWarning,
        )

    sign = u @ (mass @ np.ones(fe.n_dofs))
    if sign < 0:
        c, u, au = -c, -u, -au
    lam = float(u @ au + kg * quartic)
    return GroundState(
        coeffs=c,
        function=FeFunction(fe, u),
        energy=float(e_cur),
        eigenvalue=lam,
        energies=np.asarray(energies),
        iterations=it,
        converged=converged,
    )


def reference_ground_state(
    fe: FeSpace,
    prob: GpeProblem,
    tol: float = 1e-13,
    max_iter: int = 4000,
    initial: np.ndarray | None = None,
) -> GroundState:
    """Flow on the full fine space; the benchmark for coarse states."""
    bundle = gpe_bundle(fe, prob)
    return ground_state(
        bundle, fine_basis(fe), prob, tol=tol, max_iter=max_iter, initial=initial
    )


def gpe_errors(state: GroundState, reference: GroundState) -> dict[str, float]:
    """Gradient, L2, energy, and eigenvalue distances between two states."""
    fe = state.function.space
    if reference.function.space.n_dofs != fe.n_dofs:
        raise ValueError("states live on different fine spaces")
    u = state.function.values
    v = reference.function.values
    mass = assemble_mass(fe)
    if float(u @ (mass @ v)) < 0:
        u = -u
    d = u - v
    stiff = assemble_stiffness(fe, 1.0)
    return {
        "err_h1": float(np.sqrt(d @ (stiff @ d))),
        "err_l2": float(np.sqrt(d @ (mass @ d))),
        "err_E": abs(state.energy - reference.energy),
        "err_lambda": abs(state.eigenvalue - reference.eigenvalue),
    }
