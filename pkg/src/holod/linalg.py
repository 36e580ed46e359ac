"""Sparse assembly and direct solvers for SPD and saddle-point systems.

All linear algebra is delegated to scipy's SuperLU wrappers; this module
pins the conventions the rest of the package relies on: triplet assembly
with summed duplicates, residual-checked solves, and bordered
factorizations [[A, B^T], [B, 0]] that can be reused across many right
hand sides.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "NumericalBreakdown",
    "ConstraintRankError",
    "KktSystem",
    "SpdFactorization",
    "KktFactorization",
    "assemble",
    "solve_spd",
    "solve_kkt",
    "solve_general",
]

SPD_TOL = 1e-10
KKT_TOL = 1e-9
RANK_REL_TOL = 1e-10


class NumericalBreakdown(RuntimeError):
    """Factorization hit a nonpositive or vanishing pivot."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class ConstraintRankError(RuntimeError):
    """Constraint block B does not have full row rank."""

    def __init__(self, message: str, deficient_rows: int | None = None):
        super().__init__(message)
        self.deficient_rows = deficient_rows


def assemble(triplets, shape=None) -> sp.csr_matrix:
    """Sum (row, col, value) triplets into a CSR matrix.

    Duplicate entries accumulate.  The result is canonicalized, so the
    stored entry order does not depend on the order of the input triplets.
    """
    if isinstance(triplets, tuple) and len(triplets) == 3:
        rows, cols, vals = (np.asarray(a) for a in triplets)
    else:
        items = list(triplets)
        if items:
            rows, cols, vals = (np.asarray(a) for a in zip(*items))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
    if shape is None:
        if len(rows) == 0:
            raise ValueError("cannot infer the shape of an empty matrix")
        shape = (int(rows.max()) + 1, int(cols.max()) + 1)
    if len(rows) and (
        rows.min() < 0 or cols.min() < 0 or rows.max() >= shape[0] or cols.max() >= shape[1]
    ):
        raise ValueError("triplet index outside the requested shape")
    mat = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _as_csc(matrix) -> sp.csc_matrix:
    mat = sp.csc_matrix(matrix)
    mat.sort_indices()
    return mat


def _residual_scale(rhs_norm: float, mat_scale: float, sol_norm: float) -> float:
    return max(rhs_norm, mat_scale * sol_norm, np.finfo(float).tiny)


class SpdFactorization:
    """Cholesky-like factorization of a symmetric positive definite matrix.

    SuperLU with diagonal pivoting; a nonpositive pivot surfaces as a
    NumericalBreakdown naming its index.
    """

    def __init__(self, matrix, tol: float = SPD_TOL):
        self.matrix = _as_csc(matrix)
        self.tol = tol
        self._scale = abs(self.matrix).max() if self.matrix.nnz else 0.0
        try:
            self._lu = spla.splu(
                self.matrix,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as err:  # SuperLU reports exact singularity
            raise NumericalBreakdown(f"factorization broke down: {err}") from err
        diag = self._lu.U.diagonal()
        bad = np.flatnonzero(np.real(diag) <= 0)
        if len(bad):
            raise NumericalBreakdown(
                f"nonpositive pivot {diag[bad[0]]:.3e} at elimination index {bad[0]}",
                pivot=int(bad[0]),
            )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(np.asarray(rhs))
        res = self.matrix @ x - rhs
        denom = _residual_scale(
            np.linalg.norm(rhs), self._scale, np.linalg.norm(x)
        )
        rel = np.linalg.norm(res) / denom
        if rel > self.tol:
            raise NumericalBreakdown(
                f"SPD solve residual {rel:.3e} exceeds {self.tol:.1e}"
            )
        return x


def solve_spd(matrix, rhs, tol: float = SPD_TOL) -> np.ndarray:
    return SpdFactorization(matrix, tol=tol).solve(rhs)


def solve_general(matrix, rhs, tol: float = KKT_TOL) -> np.ndarray:
    """Residual-checked direct solve without symmetry assumptions.

    Accepts sparse or dense, real or complex matrices; a large relative
    residual (singular or badly conditioned system) raises
    NumericalBreakdown instead of returning garbage.
    """
    rhs = np.asarray(rhs)
    try:
        if sp.issparse(matrix):
            mat = _as_csc(matrix)
            x = spla.splu(mat).solve(rhs)
            scale = abs(mat).max() if mat.nnz else 0.0
        else:
            mat = np.asarray(matrix)
            x = scipy.linalg.solve(mat, rhs)
            scale = np.abs(mat).max() if mat.size else 0.0
    except (RuntimeError, scipy.linalg.LinAlgError) as err:
        raise NumericalBreakdown(f"general solve broke down: {err}") from err
    res = mat @ x - rhs
    denom = _residual_scale(np.linalg.norm(rhs), scale, np.linalg.norm(x))
    rel = np.linalg.norm(res) / denom
    if rel > tol:
        raise NumericalBreakdown(
            f"general solve residual {rel:.3e} exceeds {tol:.1e}"
        )
    return x


@dataclass
class KktSystem:
    """Saddle-point data: minimize 1/2 x'Ax - f'x subject to Bx = g."""

    a: sp.spmatrix
    b: sp.spmatrix
    f: np.ndarray
    g: np.ndarray


def _analyze_rank(b: sp.csr_matrix) -> int | None:
    """Row-rank deficiency of B via its Gram matrix, None if too large."""
    m = b.shape[0]
    if m > 4000:
        return None
    gram = (b @ b.T).toarray()
    eigs = np.linalg.eigvalsh(gram)
    cutoff = (RANK_REL_TOL**2) * max(eigs.max(), np.finfo(float).tiny)
    rank = int(np.count_nonzero(eigs > cutoff))
    return m - rank


class KktFactorization:
    """Direct factorization of the bordered matrix [[A, B^T], [B, 0]].

    The factorization is computed once and reused across right hand
    sides; ``solve`` accepts stacked columns.  Rank deficiency of B is
    reported with the deficient row count when the block is small enough
    to analyze.
    """

    def __init__(self, a, b, tol: float = KKT_TOL):
        self.a = _as_csc(a)
        self.b = sp.csr_matrix(b)
        self.tol = tol
        n = self.a.shape[0]
        m = self.b.shape[0]
        if self.b.shape[1] != n:
            raise ValueError(f"B has {self.b.shape[1]} columns, expected {n}")
        if m > n:
            raise ConstraintRankError(
                f"{m} constraints on {n} unknowns cannot be independent",
                deficient_rows=m - n,
            )
        self.n = n
        self.m = m
        kkt = sp.bmat(
            [[self.a, self.b.T], [self.b, None]], format="csc"
        )
        kkt.sort_indices()
        self._kkt = kkt
        self._scale = abs(kkt).max() if kkt.nnz else 0.0
        self._refine = False
        self._row_scale = None
        if not np.iscomplexobj(kkt.data):
            # With an SPD (1,1) block, shifting the zero block to -eps*I
            # makes the matrix quasi-definite, so a static (diagonal)
            # pivot order is safe and fill stays near the symmetric
            # minimum.  Iterative refinement against the unregularized
            # matrix removes the O(eps) perturbation.  Equilibrating the
            # constraint rows first keeps the Schur complement well away
            # from the shift, which keeps the refinement fast.
            d = np.sqrt(np.asarray(self.b.multiply(self.b).sum(axis=1)).ravel())
            d[d == 0] = 1.0
            b_eq = sp.diags(1.0 / d) @ self.b
            kkt_eq = sp.bmat([[self.a, b_eq.T], [b_eq, None]], format="csc")
            eps = 1e-10 * (abs(kkt_eq).max() if kkt_eq.nnz else 0.0)
            shifted = sp.bmat(
                [[self.a, b_eq.T], [b_eq, -eps * sp.eye(m)]], format="csc"
            )
            try:
                self._lu = spla.splu(
                    shifted,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                )
                self._refine = True
                self._row_scale = d
                self._kkt = kkt_eq
            except RuntimeError:
                self._refine = False
                self._kkt = kkt
        if not self._refine:
            try:
                self._lu = spla.splu(kkt, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as err:
                deficient = _analyze_rank(self.b)
                if deficient:
                    raise ConstraintRankError(
                        f"constraint block is rank deficient by {deficient} rows",
                        deficient_rows=deficient,
                    ) from err
                raise NumericalBreakdown(
                    f"saddle-point factorization broke down: {err}"
                ) from err

    def solve(self, f, g):
        """Solve for (x, lambda); f and g may carry a trailing batch axis."""
        f = np.asarray(f)
        g = np.asarray(g)
        if self._row_scale is not None:
            g = (np.asarray(g).T / self._row_scale).T
        rhs = np.concatenate([f, g], axis=0)
        sol = self._lu.solve(rhs)
        if self._refine:
            rhs_norm = max(np.linalg.norm(rhs), np.finfo(float).tiny)
            res_norm, prev = np.inf, np.inf
            for _ in range(25):
                res = rhs - self._kkt @ sol
                res_norm = np.linalg.norm(res)
                if res_norm <= 1e-13 * rhs_norm or res_norm > 0.5 * prev:
                    break
                sol = sol + self._lu.solve(res)
                prev = res_norm
            if res_norm > 1e-13 * rhs_norm:
                res_norm = np.linalg.norm(rhs - self._kkt @ sol)
            # Refinement converges for any solvable system; a residual
            # stuck above tolerance means the unregularized matrix is
            # singular (the shifted factorization hides that), which for
            # an SPD (1,1) block always traces back to the constraints.
            if res_norm > self.tol * rhs_norm:
                deficient = _analyze_rank(self.b)
                if deficient:
                    raise ConstraintRankError(
                        "constraint block is rank deficient "
                        f"by {deficient} rows",
                        deficient_rows=deficient,
                    )
                raise NumericalBreakdown(
                    "saddle solve stalled at relative residual "
                    f"{res_norm / rhs_norm:.3e}"
                )
        x = sol[: self.n]
        lam = sol[self.n :]
        if self._row_scale is not None:
            lam = (lam.T / self._row_scale).T
            g = (np.asarray(g).T * self._row_scale).T
        res_a = self.a @ x + self.b.T @ lam - f
        res_b = self.b @ x - g
        denom = _residual_scale(
            max(np.linalg.norm(f), np.linalg.norm(g)),
            self._scale,
            np.linalg.norm(sol),
        )
        rel = max(np.linalg.norm(res_a), np.linalg.norm(res_b)) / denom
        if rel > self.tol:
            deficient = _analyze_rank(self.b)
            if deficient:
                raise ConstraintRankError(
                    f"constraint block is rank deficient by {deficient} rows",
                    deficient_rows=deficient,
                )
            raise NumericalBreakdown(
                f"KKT solve residual {rel:.3e} exceeds {self.tol:.1e}"
            )
        return x, lam


def solve_kkt(system: KktSystem, tol: float = KKT_TOL):
    """One-shot bordered solve of a KktSystem."""
    return KktFactorization(system.a, system.b, tol=tol).solve(system.f, system.g)
