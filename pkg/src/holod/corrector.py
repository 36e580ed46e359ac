"""Localized element correctors and the multiscale basis.

For every constraint j the prototypical basis function is

    phi_j = v_j - sum_T psi_{j,T},

where v_j = sum_z kappa_{zj} hat_z is the bilinear carrier of the
kappa table and each psi_{j,T} solves, on the patch N^ell(T), the
saddle problem

    a(psi, w)  + b(w, lam)  = a_T(v_j, w)          for patch test w,
    b(psi, mu)              = -w_{T,j} mu_j + (mu, v_j)_T,

with w_{T,j} = 1/#omega_j when T lies in omega_j and 0 otherwise.
Summing the constraint rows over all T shows b(phi_j, mu) = e_j exactly
when the patches span the domain, and up to localization error else.

The per-element problems are independent; assembly merges them in a
fixed element order so serial and parallel schedules produce bitwise
identical bases.
"""
from __future__ import annotations

import struct
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constraints import ConstraintSpace, _coupling, restrict_to_patch
from .fem import (
    CoefficientField,
    FeSpace,
    assemble_boundary_mass,
    assemble_mass,
    assemble_stiffness,
    boundary_edges,
    _edge_local_dofs,
    _mass_stiffness_1d,
)
from .grid import fine_dofs_in_patch, patch
from .interp import QuasiInterpolator
from .linalg import KktFactorization

__all__ = [
    "OperatorBundle",
    "build_bundle",
    "LocalProblem",
    "build_local_problem",
    "solve_element_correctors",
    "LodBasis",
    "assemble_basis",
    "c_t",
    "save_basis",
    "load_basis",
]


def _per_element_weights(fe: FeSpace, w) -> np.ndarray:
    if isinstance(w, CoefficientField):
        return w.per_element(fe)
    arr = np.asarray(w, dtype=float)
    if arr.ndim == 0:
        return np.full(fe.refinement.fine.n_elements, float(arr))
    if arr.shape != (fe.refinement.fine.n_elements,):
        raise ValueError(
            f"weight array has shape {arr.shape}, expected "
            f"({fe.refinement.fine.n_elements},)"
        )
    return arr


@dataclass(eq=False)
class OperatorBundle:
    """A bilinear form a(.,.) split into global matrix and element parts.

    The element part a_T integrates only over coarse element T (plus its
    share of the Robin boundary), which the corrector right-hand sides
    need; the global matrix serves patch restriction and coarse solves.
    """

    fe: FeSpace
    stiff_w: np.ndarray  # per fine element diffusion weight
    mass_w: np.ndarray | None  # per fine element mass weight (signed)
    robin_factor: complex | None  # scalar on the sigma-weighted boundary mass
    sigma: float
    include_domain_boundary: bool
    matrix: sp.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dtype(self) -> np.dtype:
        return self.matrix.dtype

    def _element_pattern(self):
        """Translation-invariant scatter pattern of fine cells in a coarse cell."""
        key = "pattern"
        if key not in self._cache:
            fe = self.fe
            q, r = fe.q, fe.refinement.r
            n1loc = q * r + 1
            loc = np.arange((q + 1) ** 2)
            la, lb = loc % (q + 1), loc // (q + 1)
            cells = np.arange(r * r)
            sx, sy = cells % r, cells // r
            grid = (q * sy[:, None] + lb[None, :]) * n1loc + q * sx[:, None] + la[None, :]
            nloc = (q + 1) ** 2
            rows = np.repeat(grid, nloc, axis=1).ravel()
            cols = np.tile(grid, (1, nloc)).ravel()
            self._cache[key] = (rows, cols, sx, sy, n1loc)
        return self._cache[key]

    def _boundary_edges_by_coarse(self):
        key = "bedges"
        if key not in self._cache:
            out: dict[int, list[tuple[int, int]]] = {}
            if self.robin_factor is not None:
                elems, sides, _ = boundary_edges(self.fe)
                parents = self.fe.refinement.parent_of(elems)
                for e, s, par in zip(elems, sides, parents):
                    out.setdefault(int(par), []).append((int(e), int(s)))
            self._cache[key] = out
        return self._cache[key]

    def element_operator(self, element: int) -> sp.csr_matrix:
        """a_T as a sparse matrix on the (q r + 1)^2 dof grid of T."""
        fe = self.fe
        q, r = fe.q, fe.refinement.r
        n = fe.refinement.coarse.n
        nf = fe.refinement.fine.n
        rows, cols, sx, sy, n1loc = self._element_pattern()
        tx, ty = element % n, element // n
        fine_ids = (r * ty + sy) * nf + (r * tx + sx)
        mass_loc, stiff_loc = fe.local_matrices()
        vals = np.einsum("c,ij->cij", self.stiff_w[fine_ids], stiff_loc)
        if self.mass_w is not None:
            vals = vals + np.einsum("c,ij->cij", self.mass_w[fine_ids], mass_loc)
        vals = vals.ravel().astype(self.dtype, copy=False)
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(n1loc**2, n1loc**2))
        if self.robin_factor is not None:
            edges = self._boundary_edges_by_coarse().get(element, [])
            if edges:
                m1, _ = _mass_stiffness_1d(q)
                block = self.robin_factor * self.sigma * fe.h * m1
                er, ec, ev = [], [], []
                for fine_e, side in edges:
                    fx, fy = fine_e % nf, fine_e // nf
                    base = (q * (fy - r * ty)) * n1loc + q * (fx - r * tx)
                    ld = _edge_local_dofs(q, side)
                    grid = base + (ld // (q + 1)) * n1loc + (ld % (q + 1))
                    er.append(np.repeat(grid, q + 1))
                    ec.append(np.tile(grid, q + 1))
                    ev.append(block.ravel())
                mat = mat + sp.csr_matrix(
                    (np.concatenate(ev), (np.concatenate(er), np.concatenate(ec))),
                    shape=mat.shape,
                )
        mat.sum_duplicates()
        return mat


def build_bundle(
    fe: FeSpace,
    coeff,
    mass_weight=None,
    robin_factor: complex | None = None,
    sigma: float = 1.0,
    include_domain_boundary: bool | None = None,
) -> OperatorBundle:
    """Assemble the operator for correctors and solves.

    coeff weights the stiffness; mass_weight (scalar, field, or per-fine-
    element array) adds a signed mass term; robin_factor adds that scalar
    times the sigma-weighted boundary mass (making the operator complex).
    Patch spaces keep domain-boundary dofs exactly when a Robin term is
    present, unless overridden.
    """
    stiff_w = _per_element_weights(fe, coeff)
    mw = None if mass_weight is None else _per_element_weights(fe, mass_weight)
    matrix = assemble_stiffness(fe, coeff)
    if mw is not None:
        mass_loc, _ = fe.local_matrices()
        from .fem import _scatter

        matrix = matrix + _scatter(fe, mass_loc, mw)
    if robin_factor is not None:
        matrix = matrix.astype(np.complex128) + robin_factor * assemble_boundary_mass(
            fe, sigma
        )
    if include_domain_boundary is None:
        include_domain_boundary = robin_factor is not None
    matrix = matrix.tocsr()
    matrix.sum_duplicates()
    return OperatorBundle(
        fe, stiff_w, mw, robin_factor, sigma, include_domain_boundary, matrix
    )


@dataclass(eq=False)
class LocalProblem:
    """One patch's saddle-point problem, factored once for all j."""

    element: int
    ell: int
    patch: "Patch"
    dofs: np.ndarray  # fine dofs of the patch space
    constraints: np.ndarray  # global constraint ids restricted to the patch
    factorization: KktFactorization


def build_local_problem(
    bundle: OperatorBundle,
    space: ConstraintSpace,
    element: int,
    ell: int,
) -> LocalProblem:
    ref = space.refinement
    pt = patch(ref.coarse, [element], ell)
    dofs = fine_dofs_in_patch(
        ref, pt, bundle.fe.q, include_domain_boundary=bundle.include_domain_boundary
    )
    jsel = restrict_to_patch(space, pt)
    a_loc = bundle.matrix[dofs][:, dofs].tocsr()
    from .constraints import assemble_b

    b_loc = assemble_b(space, bundle.fe)[jsel][:, dofs].tocsr()
    fact = KktFactorization(a_loc, b_loc)
    return LocalProblem(element, ell, pt, dofs, jsel, fact)


def corrector_index_set(space: ConstraintSpace, element: int) -> np.ndarray:
    """Constraints j whose corrector psi_{j,T} can be nonzero on T.

    cg: every functional whose support touches T.  dg: the constant
    modes of all neighbours of T plus the non-constant modes of T.
    """
    if space.mode == "cg":
        return space.constraints_on_element(element)
    neighbours = patch(space.refinement.coarse, [element], 1).elements
    consts = np.array([space.constant_mode(e) for e in neighbours])
    own = space.constraints_on_element(element)
    higher = own[own % (space.p + 1) ** 2 != 0]
    return np.sort(np.concatenate([consts, higher]))


def solve_element_correctors(
    bundle: OperatorBundle,
    space: ConstraintSpace,
    interp: QuasiInterpolator,
    lp: LocalProblem,
    j_set: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched corrector solve on one patch.

    Returns (j ids, psi block of shape (len(dofs), nj), multiplier block
    of shape (len(constraints), nj)).
    """
    T = lp.element
    if j_set is None:
        j_set = corrector_index_set(space, T)
    j_set = np.asarray(j_set)
    fe = bundle.fe
    tdofs = fe.coarse_element_dofs(T)
    # carriers v_j restricted to the dof grid of T
    v_t = np.asarray((interp.prolong[tdofs] @ interp.kappa[:, j_set]).todense())
    k_t = bundle.element_operator(T)
    f_t = k_t @ v_t  # a_T(v_j, .) against every local shape function
    # rows of T's grid that live in the patch space
    pos = np.searchsorted(lp.dofs, tdofs)
    pos = np.clip(pos, 0, len(lp.dofs) - 1)
    keep = lp.dofs[pos] == tdofs
    f = np.zeros((len(lp.dofs), len(j_set)), dtype=bundle.dtype)
    f[pos[keep]] = f_t[keep]

    coup = _coupling(space, fe)
    js_elem, _, b_t = coup.element_block(T)
    g = np.zeros((len(lp.constraints), len(j_set)), dtype=bundle.dtype)
    rows = np.searchsorted(lp.constraints, js_elem)
    g[rows] = b_t @ v_t
    w = 1.0 / space.support_size
    for c, j in enumerate(j_set):
        own = np.searchsorted(js_elem, j)
        if own < len(js_elem) and js_elem[own] == j:
            g[rows[own], c] -= w[j]
    psi, lam = lp.factorization.solve(f, g)
    return j_set, psi, lam


@dataclass(eq=False)
class LodBasis:
    """Multiscale basis: one fine-dof column per constraint."""

    mode: str
    p: int
    ell: int | None  # None marks a basis from the unlocalized global solve
    phi: sp.csc_matrix  # (n_dofs, J)
    fe: FeSpace
    space: ConstraintSpace
    multipliers: np.ndarray | sp.spmatrix | None = None

    @property
    def J(self) -> int:
        return self.phi.shape[1]

    def column(self, j: int) -> np.ndarray:
        return np.asarray(self.phi[:, j].todense()).ravel()


def _drop_small(phi: sp.csc_matrix, drop_tol: float) -> sp.csc_matrix:
    phi = phi.tocsc(copy=True)
    for c in range(phi.shape[1]):
        lo, hi = phi.indptr[c], phi.indptr[c + 1]
        col = phi.data[lo:hi]
        if len(col):
            cut = drop_tol * np.max(np.abs(col))
            col[np.abs(col) < cut] = 0.0
    phi.eliminate_zeros()
    return phi


def assemble_basis(
    bundle: OperatorBundle,
    space: ConstraintSpace,
    interp: QuasiInterpolator,
    ell: int,
    workers: int = 1,
    drop_tol: float | None = None,
) -> LodBasis:
    """Assemble every localized basis function phi_j^ell.

    Element problems run in a fixed element order (optionally split into
    contiguous chunks across worker processes); the merge reproduces the
    serial accumulation order, so the result is schedule-independent.
    """
    if ell < 1:
        raise ValueError(f"localization order must be >= 1, got {ell}")
    fe = bundle.fe
    r, p = fe.refinement.r, space.p
    if r < 2 * (p + 1):
        warnings.warn(
            f"refinement ratio r={r} is below 2(p+1)={2 * (p + 1)}; local "
            "constraint rank may fail",
            stacklevel=2,
        )
    n_elements = space.refinement.coarse.n_elements
    elements = np.arange(n_elements)
    if workers > 1:
        chunks = np.array_split(elements, workers)
        jobs = [(bundle, space, interp, chunk, ell) for chunk in chunks if len(chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
        results = [item for part in parts for item in part]
    else:
        results = _run_chunk((bundle, space, interp, elements, ell))

    carrier = sp.csc_matrix(interp.prolong @ interp.kappa, dtype=bundle.dtype)
    phi = (carrier - _merge_correctors(results, fe.n_dofs, space.J)).tocsc()
    phi.sum_duplicates()
    phi.eliminate_zeros()
    if drop_tol is not None:
        phi = _drop_small(phi, drop_tol)
    return LodBasis(space.mode, space.p, ell, phi, fe, space)


def _merge_correctors(results, n_dofs: int, n_cols: int) -> sp.csc_matrix:
    """Sum per-element corrector blocks into one (n_dofs, J) CSC matrix.

    Column j collects contributions from every patch whose index set hit
    j; most columns have exactly one contributor and are copied straight
    into the output, the overlapping ones (shared modes, nodal spaces)
    go through a dense accumulator.  Output arrays are allocated once at
    the duplicate-count upper bound and sliced down, and each element
    block is released as soon as the column sweep has consumed it, so
    peak memory stays near the size of the result.
    """
    contrib = [[] for _ in range(n_cols)]
    bound = 0
    for i, (T, j_set, dofs, psi) in enumerate(results):
        bound += len(j_set) * len(dofs)
        for c, j in enumerate(j_set):
            contrib[j].append((i, c))
    dtype = np.result_type(*(np.asarray(r[3]).dtype for r in results)) if results else float
    idx = np.int32 if max(bound, n_dofs) < np.iinfo(np.int32).max else np.int64
    indptr = np.zeros(n_cols + 1, dtype=idx)
    indices = np.empty(bound, dtype=idx)
    data = np.empty(bound, dtype=dtype)
    left = np.array([len(r[1]) for r in results], dtype=np.int64)
    acc = np.zeros(n_dofs, dtype=dtype)
    pos = 0
    for j in range(n_cols):
        entries = contrib[j]
        if len(entries) == 1:
            i, c = entries[0]
            T, j_set, dofs, psi = results[i]
            m = len(dofs)
            indices[pos : pos + m] = dofs
            data[pos : pos + m] = np.asarray(psi)[:, c]
            pos += m
        elif entries:
            support = np.unique(
                np.concatenate([results[i][2] for i, _ in entries])
            )
            for i, c in entries:
                _, _, dofs, psi = results[i]
                acc[dofs] += np.asarray(psi)[:, c]
            m = len(support)
            indices[pos : pos + m] = support
            data[pos : pos + m] = acc[support]
            acc[support] = 0.0
            pos += m
        indptr[j + 1] = pos
        for i, _ in entries:
            left[i] -= 1
            if left[i] == 0:
                results[i] = None
    return sp.csc_matrix(
        (data[:pos], indices[:pos], indptr), shape=(n_dofs, n_cols)
    )


def _run_chunk(args):
    bundle, space, interp, elements, ell = args
    out = []
    last_key = None
    last_lp = None
    for T in elements:
        pt = patch(space.refinement.coarse, [int(T)], ell)
        key = pt.mask.tobytes()
        if key == last_key:
            lp = LocalProblem(
                int(T), ell, pt, last_lp.dofs, last_lp.constraints, last_lp.factorization
            )
        else:
            lp = build_local_problem(bundle, space, int(T), ell)
            last_key, last_lp = key, lp
        j_set, psi, _ = solve_element_correctors(bundle, space, interp, lp)
        out.append((int(T), j_set, lp.dofs, psi))
    return out


def c_t(
    space: ConstraintSpace,
    interp: QuasiInterpolator,
    element: int,
    v: np.ndarray,
    mu: np.ndarray,
):
    """Element form c_T(v, mu) = sum_j w_Tj mu_j q_j(v) - (mu, I_H v)_T."""
    v = np.asarray(v)
    mu = np.asarray(mu)
    js = space.constraints_on_element(element)
    qv = interp.bmatrix @ v
    term1 = np.sum(mu[js] * qv[js] / space.support_size[js])
    ihv = interp.apply(v)
    coup = _coupling(space, interp.fe)
    _, tdofs, b_t = coup.element_block(element)
    term2 = mu[js] @ (b_t @ ihv[tdofs])
    return term1 - term2


# ----- disk cache ------------------------------------------------------

_MAGIC = b"LODB"
_VERSION = 1
_GLOBAL_ELL = 0xFFFFFFFF


def save_basis(path, basis: LodBasis) -> None:
    """Write a basis to the flat binary container (little-endian).

    Layout: magic "LODB"; version u32; mode u8 (0 cg, 1 dg); p u32;
    ell u32 (0xFFFFFFFF for a global basis); coarse n u32; fine n u32;
    fine degree q u32; J u64; dtype u8 (0 float64, 1 complex128); then
    per column j: count u64, indices i64[count], values (f64 or
    re/im-interleaved f64 pairs).
    """
    phi = basis.phi.tocsc()
    complex_vals = np.iscomplexobj(phi.data)
    ell = _GLOBAL_ELL if basis.ell is None else int(basis.ell)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<IBIIIIIQB",
                _VERSION,
                0 if basis.mode == "cg" else 1,
                basis.p,
                ell,
                basis.space.refinement.coarse.n,
                basis.space.refinement.fine.n,
                basis.fe.q,
                basis.J,
                1 if complex_vals else 0,
            )
        )
        for j in range(basis.J):
            lo, hi = phi.indptr[j], phi.indptr[j + 1]
            idx = phi.indices[lo:hi].astype("<i8")
            val = phi.data[lo:hi]
            fh.write(struct.pack("<Q", len(idx)))
            fh.write(idx.tobytes())
            if complex_vals:
                buf = np.empty(2 * len(val))
                buf[0::2], buf[1::2] = val.real, val.imag
                fh.write(buf.astype("<f8").tobytes())
            else:
                fh.write(val.astype("<f8").tobytes())


def load_basis(path, fe: FeSpace, space: ConstraintSpace) -> LodBasis:
    """Read a basis container and bind it to compatible spaces."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a basis container (bad magic)")
        header = struct.unpack("<IBIIIIIQB", fh.read(struct.calcsize("<IBIIIIIQB")))
        version, mode_tag, p, ell, nc, nf, q, J, dtype_tag = header
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        mode = "cg" if mode_tag == 0 else "dg"
        expect = (
            space.mode,
            space.p,
            space.refinement.coarse.n,
            space.refinement.fine.n,
            fe.q,
            space.J,
        )
        got = (mode, p, nc, nf, q, J)
        if expect != got:
            raise ValueError(f"{path}: container {got} does not match spaces {expect}")
        indptr = [0]
        indices, data = [], []
        for _ in range(J):
            (count,) = struct.unpack("<Q", fh.read(8))
            indices.append(np.frombuffer(fh.read(8 * count), dtype="<i8"))
            if dtype_tag == 1:
                raw = np.frombuffer(fh.read(16 * count), dtype="<f8")
                data.append(raw[0::2] + 1j * raw[1::2])
            else:
                data.append(np.frombuffer(fh.read(8 * count), dtype="<f8"))
            indptr.append(indptr[-1] + count)
        phi = sp.csc_matrix(
            (
                np.concatenate(data) if data else np.empty(0),
                np.concatenate(indices) if indices else np.empty(0, dtype=np.int64),
                np.asarray(indptr),
            ),
            shape=(fe.n_dofs, J),
        )
    return LodBasis(mode, p, None if ell == _GLOBAL_ELL else ell, phi, fe, space)
