"""Polynomial constraint spaces M_H on the coarse mesh.

Two flavours share one interface:

* ``dg``: elementwise L2-orthonormal tensor Legendre modes of coordinate
  degree <= p, J = n^2 (p+1)^2.  Mode j = e*(p+1)^2 + b*(p+1) + a carries
  x-degree a and y-degree b on coarse element e; the constant mode of an
  element is its first.
* ``cg``: continuous tensor Lagrange space of degree p on equispaced
  nodes, J = (p n + 1)^2, with the basis function of every mesh vertex
  replaced by the piecewise bilinear hat of that vertex.  This is an
  invertible change of basis, so the span is still Q^p cap H^1; no
  boundary conditions are imposed.

Everything couples to the fine Q^q space through 1D integral tables,
which keeps assembly exact (Gauss with p+q+1 points per direction).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import FeSpace, gauss_rule, lagrange_values
from .grid import Patch, Refinement
from .linalg import assemble

__all__ = [
    "ConstraintSpace",
    "build_space",
    "assemble_b",
    "qoi",
    "restrict_to_patch",
    "project_coords",
    "span_residual",
    "expand",
    "assemble_gram",
]

_LAG = 0  # catalogue kinds for the 1D factors of a basis function
_HAT_AT_LEFT = 1
_HAT_AT_RIGHT = 2
_LEG = 3


@dataclass(eq=False)
class ConstraintSpace:
    """Constraint space M_H over the coarse mesh of a refinement."""

    mode: str
    p: int
    refinement: Refinement
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.mode not in ("cg", "dg"):
            raise ValueError(f"mode must be 'cg' or 'dg', got {self.mode!r}")
        if self.p < 1:
            raise ValueError(f"constraint degree must be >= 1, got p={self.p}")

    @property
    def n(self) -> int:
        return self.refinement.coarse.n

    @property
    def coarse_h(self) -> float:
        return self.refinement.coarse.h

    @property
    def modes_per_axis(self) -> int:
        return self.p + 1

    @property
    def J(self) -> int:
        if self.mode == "dg":
            return self.n**2 * (self.p + 1) ** 2
        return (self.p * self.n + 1) ** 2

    # ----- indexing ---------------------------------------------------

    def constraints_on_element(self, element: int) -> np.ndarray:
        """Sorted constraint ids j with T subset of the closure of omega_j."""
        if self.mode == "dg":
            k = (self.p + 1) ** 2
            return element * k + np.arange(k)
        n, p = self.n, self.p
        ex, ey = element % n, element // n
        na = p * ex + np.arange(p + 1)
        nb = p * ey + np.arange(p + 1)
        NA, NB = np.meshgrid(na, nb)
        return (NB * (p * n + 1) + NA).ravel()

    def constant_mode(self, element: int) -> int:
        if self.mode != "dg":
            raise ValueError("constant modes are a DG notion")
        return element * (self.p + 1) ** 2

    def is_vertex_functional(self, j) -> np.ndarray:
        """CG: does constraint j sit on a mesh vertex (hat functional)?"""
        if self.mode != "cg":
            raise ValueError("vertex functionals are a CG notion")
        j = np.asarray(j)
        n1 = self.p * self.n + 1
        na, nb = j % n1, j // n1
        return (na % self.p == 0) & (nb % self.p == 0)

    def vertex_functional(self, zx: int, zy: int) -> int:
        """CG constraint id of the hat at coarse vertex (zx, zy)."""
        n1 = self.p * self.n + 1
        return (self.p * zy) * n1 + self.p * zx

    @property
    def support_size(self) -> np.ndarray:
        """Number of coarse elements in omega_j, per constraint."""
        key = "suppsize"
        if key not in self._cache:
            if self.mode == "dg":
                out = np.ones(self.J, dtype=np.int64)
            else:
                n, p = self.n, self.p
                n1 = p * n + 1
                cnt = np.where((np.arange(n1) % p == 0), 2, 1)
                cnt[0] = cnt[-1] = 1
                out = (cnt[None, :] * cnt[:, None]).ravel()
            self._cache[key] = out
        return self._cache[key]

    def support_elements(self, j: int) -> np.ndarray:
        """Coarse element ids of omega_j."""
        if self.mode == "dg":
            return np.array([j // (self.p + 1) ** 2])
        n, p = self.n, self.p
        n1 = p * n + 1
        na, nb = j % n1, j // n1

        def cells(c):
            if c % p == 0:
                lo = c // p - 1
                return [e for e in (lo, lo + 1) if 0 <= e < n]
            return [c // p]

        return np.array(
            sorted(ey * n + ex for ey in cells(nb) for ex in cells(na)),
            dtype=np.int64,
        )

    # ----- per-element 1D factor catalogue ------------------------------

    def _local_factors(self, element: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(j ids, x-factor kinds, y-factor kinds) on one coarse element.

        A factor kind is a pair (kind, index): Lagrange index m, Legendre
        degree k, or a hat with its vertex at the left/right element edge.
        """
        p = self.p
        js = self.constraints_on_element(element)
        if self.mode == "dg":
            k = np.arange((p + 1) ** 2)
            fx = np.stack([np.full((p + 1) ** 2, _LEG), k % (p + 1)], axis=1)
            fy = np.stack([np.full((p + 1) ** 2, _LEG), k // (p + 1)], axis=1)
            return js, fx, fy
        n = self.n
        n1 = p * n + 1
        na, nb = js % n1, js // n1
        ex, ey = element % n, element // n
        mx, my = na - p * ex, nb - p * ey
        vertex = (na % p == 0) & (nb % p == 0)
        fx = np.stack([np.full(len(js), _LAG), mx], axis=1)
        fy = np.stack([np.full(len(js), _LAG), my], axis=1)
        fx[vertex & (mx == 0)] = (_HAT_AT_LEFT, 0)
        fx[vertex & (mx == p)] = (_HAT_AT_RIGHT, 0)
        fy[vertex & (my == 0)] = (_HAT_AT_LEFT, 0)
        fy[vertex & (my == p)] = (_HAT_AT_RIGHT, 0)
        return js, fx, fy

    def _factor_values(self, kind: int, index: int, x: np.ndarray) -> np.ndarray:
        """Evaluate one 1D factor on element-reference coordinates in [0,1]."""
        p = self.p
        if kind == _LAG:
            return lagrange_values(p, x)[:, index]
        if kind == _HAT_AT_LEFT:
            return 1.0 - x
        if kind == _HAT_AT_RIGHT:
            return np.asarray(x, dtype=float).copy()
        coeffs = np.zeros(index + 1)
        coeffs[index] = 1.0
        scale = np.sqrt((2 * index + 1) / self.coarse_h)
        return scale * np.polynomial.legendre.legval(2.0 * np.asarray(x) - 1.0, coeffs)

    def evaluate(self, coords: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Pointwise values of sum_j coords[j] Lambda_j inside elements.

        Points on element interfaces take the value of the element that
        contains them as left/bottom-closed cells; intended for plotting
        and tests, not assembly.
        """
        n = self.n
        dom = self.refinement.coarse.domain
        H = self.coarse_h
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ex = np.clip(((x - dom.x0) // H).astype(int), 0, n - 1)
        ey = np.clip(((y - dom.y0) // H).astype(int), 0, n - 1)
        out = np.zeros_like(x, dtype=complex if np.iscomplexobj(coords) else float)
        for e in np.unique(ey * n + ex):
            sel = (ey * n + ex) == e
            xr = (x[sel] - dom.x0) / H - (e % n)
            yr = (y[sel] - dom.y0) / H - (e // n)
            js, fx, fy = self._local_factors(int(e))
            acc = np.zeros(sel.sum(), dtype=out.dtype)
            for jj, kx, ky in zip(js, fx, fy):
                acc += (
                    coords[jj]
                    * self._factor_values(*kx, xr)
                    * self._factor_values(*ky, yr)
                )
            out[sel] = acc
        return out


def build_space(mode: str, p: int, refinement: Refinement) -> ConstraintSpace:
    return ConstraintSpace(mode, p, refinement)


class ElementCoupling:
    """Cached 1D tables coupling constraints to fine Q^q dofs on one element.

    table[kind][index] is the length q*r+1 vector of integrals of the
    factor against every fine 1D shape function along one coarse element.
    All coarse elements share the tables (uniform mesh).
    """

    def __init__(self, space: ConstraintSpace, fe: FeSpace):
        if fe.refinement is not space.refinement:
            raise ValueError("constraint space and fine space use different refinements")
        self.space = space
        self.fe = fe
        q, p, r = fe.q, space.p, space.refinement.r
        h = fe.h
        npts = p + q + 1
        pts, wts = gauss_rule(npts)
        shape = lagrange_values(q, pts)  # (npts, q+1)
        n1loc = q * r + 1
        kinds = [(_LAG, m) for m in range(p + 1)]
        kinds += [(_HAT_AT_LEFT, 0), (_HAT_AT_RIGHT, 0)]
        if space.mode == "dg":
            kinds += [(_LEG, k) for k in range(p + 1)]
        self.table: dict[tuple[int, int], np.ndarray] = {}
        for kind, index in kinds:
            row = np.zeros(n1loc)
            for s in range(r):
                xs = (s + pts) / r  # element-reference coordinates
                fvals = space._factor_values(kind, index, xs)
                contrib = h * np.einsum("g,g,gi->i", wts, fvals, shape)
                row[q * s : q * s + q + 1] += contrib
            self.table[(kind, index)] = row
        # nodal evaluation table for expanding coords on the fine dof grid
        tloc = np.arange(n1loc) / (q * r)
        self.nodal = {
            (kind, index): space._factor_values(kind, index, tloc)
            for kind, index in kinds
        }

    def element_dof_grid(self, element: int) -> np.ndarray:
        """Fine dof ids of one coarse element, (q r + 1)^2 flat y-major."""
        return self.fe.coarse_element_dofs(element)

    def element_block(self, element: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(constraint ids, fine dof ids, dense block of integrals) on T."""
        js, fx, fy = self.space._local_factors(element)
        dofs = self.element_dof_grid(element)
        tx = np.stack([self.table[tuple(k)] for k in fx])
        ty = np.stack([self.table[tuple(k)] for k in fy])
        block = np.einsum("ji,jk->jki", tx, ty).reshape(len(js), -1)
        return js, dofs, block


def _coupling(space: ConstraintSpace, fe: FeSpace) -> ElementCoupling:
    key = ("coupling", id(fe), fe.q)
    if key not in space._cache:
        space._cache[key] = ElementCoupling(space, fe)
    return space._cache[key]


def assemble_b(space: ConstraintSpace, fe: FeSpace) -> sp.csr_matrix:
    """Constraint matrix B with B[j, i] = integral of Lambda_j phi_i."""
    key = ("bmatrix", id(fe), fe.q)
    if key in space._cache:
        return space._cache[key]
    coup = _coupling(space, fe)
    rows, cols, vals = [], [], []
    for e in range(space.refinement.coarse.n_elements):
        js, dofs, block = coup.element_block(e)
        rows.append(np.repeat(js, len(dofs)))
        cols.append(np.tile(dofs, len(js)))
        vals.append(block.ravel())
    mat = assemble(
        (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)),
        shape=(space.J, fe.n_dofs),
    )
    space._cache[key] = mat
    return mat


def qoi(space: ConstraintSpace, fe: FeSpace, v: np.ndarray) -> np.ndarray:
    """Quantity-of-interest vector q_j(v) for a fine coefficient vector."""
    return assemble_b(space, fe) @ np.asarray(v)


def assemble_gram(space: ConstraintSpace) -> sp.csr_matrix:
    """Gram matrix of the constraint basis in L2(Omega)."""
    key = "gram"
    if key in space._cache:
        return space._cache[key]
    p = space.p
    npts = 2 * p + 2
    pts, wts = gauss_rule(npts)
    H = space.coarse_h
    rows, cols, vals = [], [], []
    fact_cache: dict[tuple[int, int], np.ndarray] = {}

    def fvals(kind, index):
        if (kind, index) not in fact_cache:
            fact_cache[(kind, index)] = space._factor_values(kind, index, pts)
        return fact_cache[(kind, index)]

    for e in range(space.refinement.coarse.n_elements):
        js, fx, fy = space._local_factors(e)
        vx = np.stack([fvals(*k) for k in fx])  # (nj, npts)
        vy = np.stack([fvals(*k) for k in fy])
        gx = H * np.einsum("g,ig,jg->ij", wts, vx, vx)
        gy = H * np.einsum("g,ig,jg->ij", wts, vy, vy)
        block = gx * gy
        rows.append(np.repeat(js, len(js)))
        cols.append(np.tile(js, len(js)))
        vals.append(block.ravel())
    mat = assemble(
        (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)),
        shape=(space.J, space.J),
    )
    space._cache[key] = mat
    return mat


def project_coords(space: ConstraintSpace, fe: FeSpace, v: np.ndarray) -> np.ndarray:
    """Coordinates of the L2 projection of a fine function onto M_H."""
    from .linalg import solve_spd

    gram = assemble_gram(space)
    rhs = qoi(space, fe, v)
    return solve_spd(gram.tocsc(), rhs)


def span_residual(space: ConstraintSpace, fe: FeSpace, v: np.ndarray) -> float:
    """L2 distance from a fine function to span(M_H).

    For a continuous space with fe.q >= p the projection is re-expanded
    on the fine grid and the distance measured exactly; otherwise the
    quadratic-form evaluation is used, whose accuracy floor is about
    sqrt(machine eps) times the L2 size of v.
    """
    from .fem import assemble_mass

    v = np.asarray(v)
    mu = project_coords(space, fe, v)
    mass = assemble_mass(fe)
    if space.mode == "cg" and fe.q >= space.p:
        res = v - expand(space, fe, mu)
        return float(np.sqrt(np.real(np.vdot(res, mass @ res))))
    gram = assemble_gram(space)
    sq = np.real(np.vdot(v, mass @ v) - 2 * np.vdot(mu, qoi(space, fe, v)) + np.vdot(mu, gram @ mu))
    return float(np.sqrt(max(sq, 0.0)))


def expand(space: ConstraintSpace, fe: FeSpace, coords: np.ndarray) -> np.ndarray:
    """Fine nodal interpolant of sum_j coords[j] Lambda_j.

    Exact only when the function is continuous (cg mode) and fe.q >= p.
    """
    if space.mode != "cg":
        raise ValueError("nodal expansion needs a continuous constraint space")
    coup = _coupling(space, fe)
    out = np.zeros(fe.n_dofs, dtype=np.asarray(coords).dtype)
    for e in range(space.refinement.coarse.n_elements):
        js, fx, fy = space._local_factors(e)
        dofs = coup.element_dof_grid(e)
        nx = np.stack([coup.nodal[tuple(k)] for k in fx])
        ny = np.stack([coup.nodal[tuple(k)] for k in fy])
        vals = np.einsum("j,jk,ji->ki", np.asarray(coords)[js], ny, nx).ravel()
        out[dofs] = vals
    return out


def restrict_to_patch(space: ConstraintSpace, patch_: Patch) -> np.ndarray:
    """Constraint ids whose restriction spans M restricted to the patch.

    DG keeps the modes of patch elements; CG keeps every node in the
    closed patch (their basis functions truncated outside the patch,
    which costs nothing here because local problems only ever pair them
    with functions supported inside the patch).
    """
    if space.mode == "dg":
        k = (space.p + 1) ** 2
        return (patch_.elements[:, None] * k + np.arange(k)[None, :]).ravel()
    p, n = space.p, space.n
    n1 = p * n + 1
    node_mask = np.zeros((n1, n1), dtype=bool)
    ey, ex = np.nonzero(patch_.mask)
    for dy in range(p + 1):
        for dx in range(p + 1):
            node_mask[p * ey + dy, p * ex + dx] = True
    return np.flatnonzero(node_mask.ravel())
