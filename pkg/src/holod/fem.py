"""Q^q tensor-product Lagrange finite elements on uniform Cartesian meshes.

The fine space lives on the fine mesh of a Refinement.  Dofs are the
tensor Lagrange nodes, flat y-major: dof = b * (q*n + 1) + a for node
(a, b).  All element matrices come from 1D mass/stiffness factors, which
makes assembly exact for elementwise-constant coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import Domain, Refinement
from .linalg import SpdFactorization, assemble

__all__ = [
    "CoefficientField",
    "FeSpace",
    "FeFunction",
    "AlignmentError",
    "gauss_rule",
    "lagrange_values",
    "lagrange_derivatives",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_boundary_mass",
    "interpolate",
    "solve_reference",
    "norms",
]


class AlignmentError(ValueError):
    """Fine mesh does not resolve the coefficient grid."""


@dataclass(eq=False)
class CoefficientField:
    """Piecewise constant scalar field on an m x m grid over the domain.

    ``values[iy, ix]`` is the value on cell (ix, iy).  Values must be
    finite and non-negative (potentials may vanish); consumers that need
    ellipticity check ``bounds[0] > 0`` themselves.
    """

    domain: Domain
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError("coefficient values must form a square grid")
        if not np.all(np.isfinite(self.values)) or self.values.min() < 0:
            raise ValueError("coefficient values must be finite and non-negative")

    @classmethod
    def constant(cls, value: float, domain: Domain | None = None) -> "CoefficientField":
        return cls(domain or Domain(), np.full((1, 1), float(value)))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.values.min()), float(self.values.max())

    def per_element(self, space: "FeSpace") -> np.ndarray:
        """Value on every fine element of the space, flat y-major."""
        dom = space.refinement.fine.domain
        if (
            abs(dom.x0 - self.domain.x0) > 1e-12 * max(1.0, abs(dom.x0))
            or abs(dom.y0 - self.domain.y0) > 1e-12 * max(1.0, abs(dom.y0))
            or abs(dom.side - self.domain.side) > 1e-12 * dom.side
        ):
            raise ValueError("coefficient domain does not match the mesh domain")
        nf = space.refinement.fine.n
        if nf % self.m != 0:
            raise AlignmentError(
                f"fine mesh with {nf} cells per side does not resolve the "
                f"coefficient grid with m={self.m}"
            )
        k = nf // self.m
        e = np.arange(nf * nf)
        ix, iy = e % nf, e // nf
        return self.values[iy // k, ix // k]


def gauss_rule(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    t, w = np.polynomial.legendre.leggauss(npts)
    return (t + 1.0) / 2.0, w / 2.0


def _nodes_1d(q: int) -> np.ndarray:
    return np.arange(q + 1) / q


def lagrange_values(q: int, x: np.ndarray) -> np.ndarray:
    """Values of the q+1 equispaced Lagrange polynomials on [0,1] at x.

    Returns an array of shape (len(x), q+1).
    """
    x = np.asarray(x, dtype=float)
    nodes = _nodes_1d(q)
    out = np.ones((len(x), q + 1))
    for m in range(q + 1):
        for k in range(q + 1):
            if k != m:
                out[:, m] *= (x - nodes[k]) / (nodes[m] - nodes[k])
    return out


def lagrange_derivatives(q: int, x: np.ndarray) -> np.ndarray:
    """First derivatives of the equispaced Lagrange basis on [0,1] at x."""
    x = np.asarray(x, dtype=float)
    nodes = _nodes_1d(q)
    out = np.zeros((len(x), q + 1))
    for m in range(q + 1):
        for j in range(q + 1):
            if j == m:
                continue
            term = np.full(len(x), 1.0 / (nodes[m] - nodes[j]))
            for k in range(q + 1):
                if k != m and k != j:
                    term *= (x - nodes[k]) / (nodes[m] - nodes[k])
            out[:, m] += term
    return out


def _mass_stiffness_1d(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact 1D mass and stiffness factors on the reference interval [0,1]."""
    pts, wts = gauss_rule(q + 1)
    vals = lagrange_values(q, pts)
    ders = lagrange_derivatives(q, pts)
    mass = np.einsum("g,gi,gj->ij", wts, vals, vals)
    stiff = np.einsum("g,gi,gj->ij", wts, ders, ders)
    return mass, stiff


@dataclass(eq=False)
class FeSpace:
    """Continuous Q^q space on the fine mesh of a refinement.

    bc selects how solvers treat the domain boundary: "dirichlet-zero"
    removes boundary dofs from the unknowns, "none" and "robin" keep them
    (the Robin terms themselves are assembled separately).
    """

    refinement: Refinement
    q: int = 1
    bc: str = "dirichlet-zero"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.q <= 0:
            raise ValueError(f"polynomial degree must be positive, got q={self.q}")
        if self.bc not in ("dirichlet-zero", "none", "robin"):
            raise ValueError(f"unknown boundary tag {self.bc!r}")

    @property
    def n1d(self) -> int:
        return self.q * self.refinement.fine.n + 1

    @property
    def n_dofs(self) -> int:
        return self.n1d**2

    @property
    def h(self) -> float:
        return self.refinement.fine.h

    def dof_coords(self) -> np.ndarray:
        dom = self.refinement.fine.domain
        t = np.linspace(0.0, dom.side, self.n1d)
        x = dom.x0 + t
        y = dom.y0 + t
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def boundary_dof_mask(self) -> np.ndarray:
        edge = np.zeros(self.n1d, dtype=bool)
        edge[0] = edge[-1] = True
        BX, BY = np.meshgrid(edge, edge)
        return (BX | BY).ravel()

    @property
    def free_dofs(self) -> np.ndarray:
        key = "free"
        if key not in self._cache:
            if self.bc == "dirichlet-zero":
                self._cache[key] = np.flatnonzero(~self.boundary_dof_mask())
            else:
                self._cache[key] = np.arange(self.n_dofs)
        return self._cache[key]

    @property
    def element_dofs(self) -> np.ndarray:
        """(n_elements, (q+1)^2) dof ids per fine element, local y-major."""
        key = "edofs"
        if key not in self._cache:
            nf = self.refinement.fine.n
            q = self.q
            e = np.arange(nf * nf)
            ex, ey = e % nf, e // nf
            loc = np.arange((q + 1) ** 2)
            la, lb = loc % (q + 1), loc // (q + 1)
            self._cache[key] = (
                (q * ey[:, None] + lb[None, :]) * self.n1d
                + q * ex[:, None]
                + la[None, :]
            )
        return self._cache[key]

    def coarse_element_dofs(self, element: int) -> np.ndarray:
        """Dof ids covering one coarse element, (q r + 1)^2 flat y-major."""
        q, r = self.q, self.refinement.r
        n = self.refinement.coarse.n
        ex, ey = element % n, element // n
        ax = q * r * ex + np.arange(q * r + 1)
        ay = q * r * ey + np.arange(q * r + 1)
        return (ay[:, None] * self.n1d + ax[None, :]).ravel()

    def local_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Element mass and stiffness for one fine square of size h."""
        key = "locmats"
        if key not in self._cache:
            m1, k1 = _mass_stiffness_1d(self.q)
            h = self.h
            mass = (h * h) * np.kron(m1, m1)
            stiff = np.kron(m1, k1) + np.kron(k1, m1)
            self._cache[key] = (mass, stiff)
        return self._cache[key]


@dataclass
class FeFunction:
    """Coefficient vector over all dofs of a space."""

    space: FeSpace
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.shape != (self.space.n_dofs,):
            raise ValueError(
                f"expected {self.space.n_dofs} coefficients, got {self.values.shape}"
            )


def _scatter(space: FeSpace, local: np.ndarray, weights: np.ndarray) -> sp.csr_matrix:
    """Assemble sum_e weights[e] * local over the element dof maps."""
    dofs = space.element_dofs
    nloc = local.shape[0]
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    vals = (weights[:, None] * local.ravel()[None, :]).ravel()
    return assemble((rows, cols, vals), shape=(space.n_dofs, space.n_dofs))


def assemble_stiffness(
    space: FeSpace, coeff: CoefficientField | float = 1.0
) -> sp.csr_matrix:
    """Stiffness matrix for the scalar diffusion coefficient, all dofs."""
    _, stiff = space.local_matrices()
    if isinstance(coeff, CoefficientField):
        w = coeff.per_element(space)
    else:
        w = np.full(space.refinement.fine.n_elements, float(coeff))
    return _scatter(space, stiff, w)


def assemble_mass(space: FeSpace, weight: CoefficientField | float = 1.0) -> sp.csr_matrix:
    """Mass matrix, optionally weighted by a piecewise constant field."""
    mass, _ = space.local_matrices()
    if isinstance(weight, CoefficientField):
        w = weight.per_element(space)
    else:
        w = np.full(space.refinement.fine.n_elements, float(weight))
    return _scatter(space, mass, w)


def boundary_edges(space: FeSpace) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fine boundary edges as (element id, side, edge midpoint coords).

    Sides are numbered 0:y=y0, 1:x=x0+side, 2:y=y0+side, 3:x=x0.
    """
    nf = space.refinement.fine.n
    dom = space.refinement.fine.domain
    h = space.h
    i = np.arange(nf)
    mid = dom.x0 + (i + 0.5) * h
    elems, sides, coords = [], [], []
    elems.append(i)  # bottom row
    sides.append(np.full(nf, 0))
    coords.append(np.column_stack([mid, np.full(nf, dom.y0)]))
    elems.append(i * nf + (nf - 1))  # right column
    sides.append(np.full(nf, 1))
    coords.append(np.column_stack([np.full(nf, dom.x0 + dom.side), dom.y0 + (i + 0.5) * h]))
    elems.append((nf - 1) * nf + i)  # top row
    sides.append(np.full(nf, 2))
    coords.append(np.column_stack([mid, np.full(nf, dom.y0 + dom.side)]))
    elems.append(i * nf)  # left column
    sides.append(np.full(nf, 3))
    coords.append(np.column_stack([np.full(nf, dom.x0), dom.y0 + (i + 0.5) * h]))
    return np.concatenate(elems), np.concatenate(sides), np.vstack(coords)


def _edge_local_dofs(q: int, side: int) -> np.ndarray:
    a = np.arange(q + 1)
    if side == 0:
        return a  # b = 0
    if side == 1:
        return a * (q + 1) + q  # a = q
    if side == 2:
        return q * (q + 1) + a  # b = q
    return a * (q + 1)  # a = 0


def assemble_boundary_mass(space: FeSpace, sigma=1.0) -> sp.csr_matrix:
    """Boundary mass matrix sum over fine edges of the domain boundary.

    sigma is a constant or a callable evaluated at edge midpoints
    (piecewise constant per fine edge).
    """
    m1, _ = _mass_stiffness_1d(space.q)
    h = space.h
    elems, sides, mids = boundary_edges(space)
    if callable(sigma):
        svals = np.asarray([sigma(x, y) for x, y in mids], dtype=float)
    else:
        svals = np.full(len(elems), float(sigma))
    edofs = space.element_dofs
    rows, cols, vals = [], [], []
    nloc = space.q + 1
    for side in range(4):
        sel = sides == side
        if not np.any(sel):
            continue
        loc = _edge_local_dofs(space.q, side)
        dofs = edofs[elems[sel]][:, loc]
        block = h * m1
        rows.append(np.repeat(dofs, nloc, axis=1).ravel())
        cols.append(np.tile(dofs, (1, nloc)).ravel())
        vals.append((svals[sel][:, None] * block.ravel()[None, :]).ravel())
    return assemble(
        (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)),
        shape=(space.n_dofs, space.n_dofs),
    )


def interpolate(space: FeSpace, f) -> FeFunction:
    """Nodal interpolant of a callable f(x, y) onto the space.

    No boundary conditions are applied: loads built from the interpolant
    must see f as given, and essential conditions act on the trial side
    through the free-dof restriction.
    """
    xy = space.dof_coords()
    vals = np.asarray(f(xy[:, 0], xy[:, 1]))
    vals = np.broadcast_to(vals, (space.n_dofs,)).copy()
    return FeFunction(space, vals)


def solve_reference(space: FeSpace, coeff: CoefficientField, f) -> FeFunction:
    """Direct fine-scale Galerkin solve with load M @ interpolant(f)."""
    if coeff.bounds[0] <= 0:
        raise ValueError("diffusion coefficient must be uniformly positive")
    stiff = assemble_stiffness(space, coeff)
    mass = assemble_mass(space)
    fv = interpolate(space, f) if callable(f) else f
    load = mass @ fv.values
    free = space.free_dofs
    x = SpdFactorization(stiff[free][:, free].tocsc()).solve(load[free])
    out = np.zeros(space.n_dofs, dtype=x.dtype)
    out[free] = x
    return FeFunction(space, out)


def norms(
    u: FeFunction,
    coeff: CoefficientField | None = None,
    mats: tuple | None = None,
) -> tuple[float, float, float]:
    """(L2 norm, energy norm, full H1 norm) of a fine function.

    The energy norm uses the supplied diffusion coefficient (unit if
    None); the H1 norm always uses the unweighted gradient.  Prebuilt
    (mass, unit stiffness, coeff stiffness) can be passed via mats.
    """
    space = u.space
    if mats is None:
        mass = assemble_mass(space)
        stiff1 = assemble_stiffness(space, CoefficientField.constant(1.0, space.refinement.fine.domain))
        stiffa = (
            stiff1
            if coeff is None
            else assemble_stiffness(space, coeff)
        )
    else:
        mass, stiff1, stiffa = mats
    v = u.values
    l2 = float(np.sqrt(np.real(np.vdot(v, mass @ v))))
    energy = float(np.sqrt(np.real(np.vdot(v, stiffa @ v))))
    h1 = float(np.sqrt(l2**2 + np.real(np.vdot(v, stiff1 @ v))))
    return l2, energy, h1
