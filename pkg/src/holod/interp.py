"""Quasi-interpolation onto the bilinear coarse space, driven purely by QOIs.

The operator is a composition of three sparse maps,

    I_H v = P (G (B v)),

where B collects the quantities of interest q_j(v), G turns them into
values at interior coarse vertices (the kappa table), and P is bilinear
prolongation of vertex values to the fine grid.  Vertex values on the
domain boundary are zero, so the image is conforming with homogeneous
Dirichlet data.

Vertex rules:

* cg: the value at vertex z is q_{j(z)}(v) divided by the integral of
  the hat of z (H^2 for interior vertices on a uniform mesh).
* dg: the value at z averages the element constant modes around z,
  sum_{T in omega_z} |T|^{1/2} q_{(T,0)}(v) / |omega_z|, giving the mean
  of the elementwise averages of v (weight 1/(4H) per element for an
  interior vertex of a uniform mesh).

Because I_H factors through B, it vanishes on the constrained kernel
W = {w : q_j(w) = 0 for all j} to solver precision by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .constraints import ConstraintSpace, assemble_b
from .fem import FeSpace

__all__ = ["QuasiInterpolator", "build_interpolator"]


@dataclass(eq=False)
class QuasiInterpolator:
    """Sparse factors of the quasi-interpolation operator."""

    space: ConstraintSpace
    fe: FeSpace
    bmatrix: sp.csr_matrix  # (J, n_dofs) quantities of interest
    kappa: sp.csr_matrix  # (n_coarse_nodes, J), zero rows on the boundary
    prolong: sp.csr_matrix  # (n_dofs, n_coarse_nodes) bilinear hats

    def node_values(self, v: np.ndarray) -> np.ndarray:
        """Coarse vertex values of I_H v (boundary vertices are zero)."""
        return self.kappa @ (self.bmatrix @ np.asarray(v))

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Fine coefficient vector of I_H v."""
        return self.prolong @ self.node_values(v)

    def apply_to_qoi(self, q: np.ndarray) -> np.ndarray:
        """Fine representation from an already-computed QOI vector."""
        return self.prolong @ (self.kappa @ np.asarray(q))


def _kappa_table(space: ConstraintSpace) -> sp.csr_matrix:
    mesh = space.refinement.coarse
    n, H = mesh.n, mesh.h
    rows, cols, vals = [], [], []
    for zy in range(1, n):
        for zx in range(1, n):
            z = zy * (n + 1) + zx
            if space.mode == "cg":
                rows.append(z)
                cols.append(space.vertex_functional(zx, zy))
                vals.append(1.0 / H**2)
            else:
                elems = [
                    mesh.element_id(ex, ey)
                    for ey in (zy - 1, zy)
                    for ex in (zx - 1, zx)
                ]
                area = len(elems) * H**2
                for e in elems:
                    rows.append(z)
                    cols.append(space.constant_mode(e))
                    vals.append(H / area)  # |T|^{1/2} / |omega_z|
    return sp.csr_matrix(
        (vals, (rows, cols)), shape=(mesh.n_nodes, space.J)
    )


def _prolongation_1d(n_coarse: int, n1d_fine: int) -> sp.csr_matrix:
    """Hat-function values of the coarse 1D grid at the fine dof grid."""
    x = np.linspace(0.0, n_coarse, n1d_fine)  # in units of H
    cell = np.clip(np.floor(x).astype(int), 0, n_coarse - 1)
    t = x - cell
    rows = np.concatenate([np.arange(n1d_fine)] * 2)
    cols = np.concatenate([cell, cell + 1])
    vals = np.concatenate([1.0 - t, t])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n1d_fine, n_coarse + 1))
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def build_interpolator(
    space: ConstraintSpace,
    fe: FeSpace,
    bmatrix: sp.csr_matrix | None = None,
) -> QuasiInterpolator:
    if bmatrix is None:
        bmatrix = assemble_b(space, fe)
    p1 = _prolongation_1d(space.n, fe.n1d)
    prolong = sp.kron(p1, p1, format="csr")
    return QuasiInterpolator(space, fe, bmatrix, _kappa_table(space), prolong)
