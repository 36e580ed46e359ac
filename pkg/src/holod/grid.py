"""Cartesian meshes, nested refinements and element patches on square domains.

Everything downstream works on uniform n-by-n subdivisions of a square.
Elements and nodes are addressed by flat row-major indices (y-major), so
element ``e = iy * n + ix`` and node ``v = iy * (n + 1) + ix``.  Patches are
Chebyshev balls of elements around a seed set, clipped at the domain
boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Domain",
    "CartesianMesh",
    "Refinement",
    "Patch",
    "build_mesh",
    "refine",
    "patch",
    "fine_dofs_in_patch",
]


@dataclass(frozen=True)
class Domain:
    """Axis-aligned square (x0, x0+side) x (y0, y0+side)."""

    x0: float = 0.0
    y0: float = 0.0
    side: float = 1.0

    def __post_init__(self) -> None:
        if not self.side > 0:
            raise ValueError(f"domain side must be positive, got {self.side}")


@dataclass(eq=False)
class CartesianMesh:
    """Uniform n x n element grid on a square domain."""

    domain: Domain
    n: int

    @property
    def h(self) -> float:
        return self.domain.side / self.n

    @property
    def n_elements(self) -> int:
        return self.n * self.n

    @property
    def n_nodes(self) -> int:
        return (self.n + 1) ** 2

    def element_id(self, ix: int, iy: int) -> int:
        if not (0 <= ix < self.n and 0 <= iy < self.n):
            raise ValueError(f"element ({ix}, {iy}) outside mesh with n={self.n}")
        return iy * self.n + ix

    def element_xy(self, e) :
        e = np.asarray(e)
        return e % self.n, e // self.n

    def node_coords(self) -> np.ndarray:
        """(n+1)^2 x 2 array of node coordinates, y-major flat order."""
        t = np.linspace(0.0, self.domain.side, self.n + 1)
        x = self.domain.x0 + t
        y = self.domain.y0 + t
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def interior_node_mask(self) -> np.ndarray:
        """Boolean mask over nodes, True away from the domain boundary."""
        m = np.zeros((self.n + 1, self.n + 1), dtype=bool)
        m[1:-1, 1:-1] = True
        return m.ravel()


@dataclass(eq=False)
class Refinement:
    """Pairing of a coarse mesh with its r-fold uniform refinement."""

    coarse: CartesianMesh
    fine: CartesianMesh
    r: int

    def parent_of(self, fine_elements) -> np.ndarray:
        """Coarse element id containing each fine element."""
        fx, fy = self.fine.element_xy(np.asarray(fine_elements))
        return (fy // self.r) * self.coarse.n + fx // self.r

    def children_of(self, coarse_element: int) -> np.ndarray:
        """Fine element ids inside one coarse element, sorted."""
        cx, cy = self.coarse.element_xy(coarse_element)
        fx = np.arange(cx * self.r, (cx + 1) * self.r)
        fy = np.arange(cy * self.r, (cy + 1) * self.r)
        FX, FY = np.meshgrid(fx, fy)
        return np.sort((FY * self.fine.n + FX).ravel())


@dataclass(eq=False)
class Patch:
    """Element patch N^ell(S): everything within Chebyshev distance ell of S."""

    mesh: CartesianMesh
    seeds: np.ndarray
    ell: int
    elements: np.ndarray  # sorted flat element ids
    mask: np.ndarray  # boolean (n, n) array, [iy, ix]

    @property
    def is_global(self) -> bool:
        return len(self.elements) == self.mesh.n_elements

    def bounding_box(self):
        """Inclusive element-index ranges (ix0, ix1, iy0, iy1)."""
        iy, ix = np.nonzero(self.mask)
        return int(ix.min()), int(ix.max()), int(iy.min()), int(iy.max())

    def nodes_in_closure(self) -> np.ndarray:
        """Coarse node ids lying on the closure of the patch region."""
        n = self.mesh.n
        m = np.zeros((n + 1, n + 1), dtype=bool)
        iy, ix = np.nonzero(self.mask)
        for dy in (0, 1):
            for dx in (0, 1):
                m[iy + dy, ix + dx] = True
        return np.flatnonzero(m.ravel())

    def interior_nodes(self) -> np.ndarray:
        """Coarse node ids strictly inside the patch region.

        A node counts as interior when all four surrounding elements exist
        and belong to the patch; nodes on the domain boundary are never
        interior.
        """
        n = self.mesh.n
        padded = np.zeros((n + 2, n + 2), dtype=bool)
        padded[1:-1, 1:-1] = self.mask
        inner = (
            padded[:-1, :-1] & padded[:-1, 1:] & padded[1:, :-1] & padded[1:, 1:]
        )
        return np.flatnonzero(inner.ravel())

    def boundary_nodes(self) -> np.ndarray:
        """Closure nodes that are not interior (patch or domain boundary)."""
        closure = self.nodes_in_closure()
        interior = self.interior_nodes()
        return np.setdiff1d(closure, interior)


def build_mesh(n: int, domain: Domain | None = None) -> CartesianMesh:
    """Uniform n x n mesh on a square domain (unit square by default)."""
    if n <= 0:
        raise ValueError(f"mesh needs at least one element per side, got n={n}")
    return CartesianMesh(domain if domain is not None else Domain(), int(n))


def refine(mesh: CartesianMesh, r: int) -> Refinement:
    """Split every element into r x r children; r=1 is the identity pairing."""
    if r <= 0:
        raise ValueError(f"refinement ratio must be positive, got r={r}")
    fine = CartesianMesh(mesh.domain, mesh.n * int(r))
    return Refinement(mesh, fine, int(r))


def _normalize_seeds(mesh: CartesianMesh, seeds) -> np.ndarray:
    if isinstance(seeds, (int, np.integer)):
        seeds = [seeds]
    elif isinstance(seeds, tuple) and len(seeds) == 2 and all(
        isinstance(c, (int, np.integer)) for c in seeds
    ):
        seeds = [seeds]
    out = []
    for s in seeds:
        if isinstance(s, tuple):
            out.append(mesh.element_id(*s))
        else:
            out.append(int(s))
    ids = np.unique(np.asarray(out, dtype=np.int64))
    if len(ids) == 0:
        raise ValueError("patch seed set is empty")
    if ids.min() < 0 or ids.max() >= mesh.n_elements:
        raise ValueError(f"seed element out of range for n={mesh.n}")
    return ids


def patch(mesh: CartesianMesh, seeds, ell: int) -> Patch:
    """ell-fold node-neighbourhood N^ell(S), clipped at the domain boundary.

    One expansion step adds every element sharing at least a node with the
    current set; on a Cartesian grid this is exactly Chebyshev dilation, so
    the result is the set of elements within Chebyshev distance ell of S.
    """
    if ell < 0:
        raise ValueError(f"patch radius must be nonnegative, got ell={ell}")
    ids = _normalize_seeds(mesh, seeds)
    n = mesh.n
    mask = np.zeros((n, n), dtype=bool)
    ix, iy = mesh.element_xy(ids)
    mask[iy, ix] = True
    for _ in range(min(int(ell), n)):
        grown = mask.copy()
        grown[1:, :] |= mask[:-1, :]
        grown[:-1, :] |= mask[1:, :]
        grown[:, 1:] |= mask[:, :-1]
        grown[:, :-1] |= mask[:, 1:]
        grown[1:, 1:] |= mask[:-1, :-1]
        grown[1:, :-1] |= mask[:-1, 1:]
        grown[:-1, 1:] |= mask[1:, :-1]
        grown[:-1, :-1] |= mask[1:, 1:]
        mask = grown
    elements = np.flatnonzero(mask.ravel())
    return Patch(mesh, ids, int(ell), elements, mask)


def fine_dofs_in_patch(
    refinement: Refinement,
    patch_: Patch,
    q: int,
    include_domain_boundary: bool = False,
) -> np.ndarray:
    """Fine Q^q Lagrange dofs usable as unknowns of a patch-local problem.

    A dof is kept when every fine element of its support star lies inside
    the patch; that excludes exactly the dofs on the patch boundary that is
    interior to the domain.  With ``include_domain_boundary`` dofs on the
    domain boundary survive (trace condition only on the interior part of
    the patch boundary), otherwise they are dropped as well.
    """
    if q <= 0:
        raise ValueError(f"polynomial degree must be positive, got q={q}")
    nf = refinement.fine.n
    r = refinement.r
    nc = refinement.coarse.n

    cell_mask = np.zeros((nf, nf), dtype=bool)
    cy, cx = np.nonzero(patch_.mask)
    for e_iy, e_ix in zip(cy, cx):
        cell_mask[e_iy * r : (e_iy + 1) * r, e_ix * r : (e_ix + 1) * r] = True
    assert nc * r == nf

    coords = np.arange(q * nf + 1)
    on_iface = coords % q == 0
    lo = np.where(on_iface, coords // q - 1, coords // q)
    hi = coords // q
    hi = np.where(on_iface & (coords // q == nf), nf - 1, hi)
    lo_c = np.clip(lo, 0, nf - 1)
    hi_c = np.clip(hi, 0, nf - 1)

    LOX, LOY = np.meshgrid(lo_c, lo_c)
    HIX, HIY = np.meshgrid(hi_c, hi_c)
    keep = (
        cell_mask[LOY, LOX]
        & cell_mask[LOY, HIX]
        & cell_mask[HIY, LOX]
        & cell_mask[HIY, HIX]
    )
    if not include_domain_boundary:
        on_bdry = (coords == 0) | (coords == q * nf)
        BX, BY = np.meshgrid(on_bdry, on_bdry)
        keep &= ~(BX | BY)
    return np.flatnonzero(keep.ravel())
