"""Coarse solves on the multiscale basis.

The unlocalized basis solves one saddle problem per constraint with a
shared factorization (right-hand sides are the identity columns on the
constraint block); the localized basis comes from the corrector module.
Either way the coarse operator is the congruence Phi^T A Phi — complex
problems use the plain transpose because their test space is the
conjugate of the trial space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constraints import ConstraintSpace, assemble_b
from .corrector import LodBasis, OperatorBundle
from .fem import FeFunction, FeSpace, assemble_mass, interpolate
from .linalg import KktFactorization, SpdFactorization

__all__ = [
    "global_basis",
    "assemble_coarse",
    "coarse_load",
    "LodSolution",
    "solve_lod",
    "relative_errors",
]

_CHUNK = 256


def global_basis(
    bundle: OperatorBundle, space: ConstraintSpace
) -> LodBasis:
    """Prototypical basis from the one global saddle problem per j.

    All J right-hand sides ride on a single factorization; the solution
    block is dense on the free dofs, so the basis is returned dense-ish
    (csc with full columns).
    """
    fe = bundle.fe
    free = (
        np.arange(fe.n_dofs) if bundle.include_domain_boundary else fe.free_dofs
    )
    a = bundle.matrix[free][:, free].tocsc()
    b = assemble_b(space, fe)[:, free].tocsr()
    fact = KktFactorization(a, b)
    J = space.J
    phi_free = np.empty((len(free), J), dtype=bundle.dtype)
    lam = np.empty((J, J), dtype=bundle.dtype)
    for lo in range(0, J, _CHUNK):
        hi = min(lo + _CHUNK, J)
        g = np.zeros((J, hi - lo), dtype=bundle.dtype)
        g[np.arange(lo, hi), np.arange(hi - lo)] = 1.0
        f = np.zeros((len(free), hi - lo), dtype=bundle.dtype)
        x, l = fact.solve(f, g)
        phi_free[:, lo:hi] = x
        lam[:, lo:hi] = l
    full = np.zeros((fe.n_dofs, J), dtype=bundle.dtype)
    full[free] = phi_free
    return LodBasis(
        space.mode, space.p, None, sp.csc_matrix(full), fe, space, multipliers=lam
    )


def assemble_coarse(basis: LodBasis, matrix: sp.spmatrix):
    """Phi^T A Phi: dense for the global basis, sparse for localized."""
    phi = basis.phi
    if basis.ell is None:
        J = phi.shape[1]
        out = np.empty((J, J), dtype=np.result_type(matrix.dtype, phi.dtype))
        for lo in range(0, J, _CHUNK):
            hi = min(lo + _CHUNK, J)
            block = np.asarray(phi[:, lo:hi].todense())
            out[:, lo:hi] = phi.T @ (matrix @ block)
        return out
    tmp = (matrix @ phi).tocsc()
    coarse = (phi.T @ tmp).tocsr()
    coarse.sum_duplicates()
    return coarse


def coarse_load(basis: LodBasis, load: np.ndarray) -> np.ndarray:
    """Phi^T applied to a fine load vector."""
    return basis.phi.T @ np.asarray(load)


@dataclass(eq=False)
class LodSolution:
    """Coarse coefficients plus the fine-grid representation."""

    coeffs: np.ndarray
    function: FeFunction


def _solve_coarse(coarse, rhs):
    if isinstance(coarse, np.ndarray):
        if np.iscomplexobj(coarse):
            return scipy.linalg.solve(coarse, rhs)
        return scipy.linalg.solve(coarse, rhs, assume_a="sym")
    csc = coarse.tocsc()
    if np.iscomplexobj(coarse):
        return spla.splu(csc).solve(rhs)
    try:
        return SpdFactorization(csc).solve(rhs)
    except Exception:
        return spla.splu(csc).solve(rhs)


def solve_lod(
    bundle: OperatorBundle,
    basis: LodBasis,
    f,
    load: np.ndarray | None = None,
) -> LodSolution:
    """Galerkin solve of the coarse problem with right-hand side f.

    f may be a callable (interpolated onto the fine space and paired
    with the mass matrix) or skipped entirely by passing an assembled
    fine load vector.
    """
    fe = bundle.fe
    if load is None:
        f_fine = interpolate(fe, f).values
        load = assemble_mass(fe) @ f_fine
        if not bundle.include_domain_boundary:
            mask = fe.boundary_dof_mask()
            load = np.where(mask, 0.0, load)
    coarse = assemble_coarse(basis, bundle.matrix)
    rhs = coarse_load(basis, load)
    coeffs = _solve_coarse(coarse, rhs)
    values = basis.phi @ coeffs
    return LodSolution(coeffs, FeFunction(fe, np.asarray(values).ravel()))


def relative_errors(
    u: np.ndarray, reference: np.ndarray, mats: dict[str, sp.spmatrix]
) -> dict[str, float]:
    """Relative errors in the norms given as quadratic-form matrices.

    mats maps a name to a (real-symmetric or Hermitian PSD) matrix; the
    reference must be nonzero in each requested norm.
    """
    u = np.asarray(u)
    reference = np.asarray(reference)
    diff = u - reference
    out = {}
    for name, mat in mats.items():
        denom = np.sqrt(np.real(np.vdot(reference, mat @ reference)))
        if denom == 0.0:
            raise ValueError(f"reference has zero {name}-norm")
        num = np.sqrt(max(np.real(np.vdot(diff, mat @ diff)), 0.0))
        out[name] = float(num / denom)
    return out
