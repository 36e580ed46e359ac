"""Quasi-interpolation invariants: reproduction, kernel, kappa values, stability."""
import numpy as np
import pytest
import scipy.sparse.linalg as spla

from holod.constraints import build_space, qoi
from holod.fem import FeSpace, assemble_mass, assemble_stiffness, interpolate
from holod.grid import build_mesh, refine
from holod.interp import build_interpolator


def _setup(mode, p, n=8, r=4, q=1):
    ref = refine(build_mesh(n), r)
    fe = FeSpace(ref, q=q, bc="none")
    space = build_space(mode, p, ref)
    return ref, fe, space, build_interpolator(space, fe)


@pytest.mark.parametrize("mode,p", [("dg", 1), ("dg", 2), ("cg", 1), ("cg", 2)])
def test_constant_reproduction_at_interior_vertices(mode, p):
    ref, fe, space, ih = _setup(mode, p)
    vals = ih.node_values(np.ones(fe.n_dofs))
    interior = ref.coarse.interior_node_mask()
    assert np.max(np.abs(vals[interior] - 1.0)) < 1e-13
    assert np.max(np.abs(vals[~interior])) == 0.0


@pytest.mark.parametrize("mode,p", [("dg", 1), ("cg", 2)])
def test_kernel_property(mode, p):
    # vectors with vanishing QOIs are mapped (numerically) to zero
    ref, fe, space, ih = _setup(mode, p, n=4, r=4)
    B = ih.bmatrix
    rng = np.random.default_rng(11)
    gram = (B @ B.T).tocsc()
    lu = spla.splu(gram)
    for _ in range(5):
        v = rng.standard_normal(fe.n_dofs)
        w = v - B.T @ lu.solve(B @ v)
        assert np.max(np.abs(B @ w)) < 1e-10
        assert np.max(np.abs(ih.apply(w))) < 1e-10


def test_kappa_values_cg():
    # interior vertex weight is the reciprocal of its hat integral (H^2)
    ref, fe, space, ih = _setup("cg", 2)
    hat_integrals = qoi(space, fe, np.ones(fe.n_dofs))
    n = ref.coarse.n
    kap = ih.kappa.toarray()
    for zx, zy in [(1, 1), (3, 5), (7, 7)]:
        z = zy * (n + 1) + zx
        j = space.vertex_functional(zx, zy)
        row = kap[z]
        assert row[j] == pytest.approx(1.0 / hat_integrals[j], rel=1e-13)
        assert np.count_nonzero(row) == 1


def test_kappa_values_dg():
    # interior vertex averages the four surrounding element means:
    # weight |T|^{1/2} / |omega_z| = 1/(4H) against each constant mode
    ref, fe, space, ih = _setup("dg", 1)
    n, H = ref.coarse.n, ref.coarse.h
    kap = ih.kappa.toarray()
    z = 3 * (n + 1) + 4
    row = kap[z]
    nz = np.flatnonzero(row)
    assert len(nz) == 4
    assert np.allclose(row[nz], 1.0 / (4.0 * H), rtol=1e-13)
    modes = {space.constant_mode(ref.coarse.element_id(ex, ey))
             for ex in (3, 4) for ey in (2, 3)}
    assert set(nz) == modes


@pytest.mark.parametrize("mode,p", [("dg", 1), ("dg", 2), ("cg", 1), ("cg", 2)])
def test_l2_stability_and_approximation(mode, p):
    ref, fe, space, ih = _setup(mode, p, n=16, r=4)
    mass = assemble_mass(fe)
    stiff = assemble_stiffness(fe)

    def l2(v):
        return np.sqrt(v @ (mass @ v))

    rng = np.random.default_rng(5)
    for _ in range(3):
        v = rng.standard_normal(fe.n_dofs)
        assert l2(ih.apply(v)) <= 10.0 * l2(v)

    # first-order approximation with a modest constant on a smooth function
    u = interpolate(fe, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)).values
    err = u - ih.apply(u)
    H = ref.coarse.h
    assert l2(err) <= 10.0 * H * np.sqrt(u @ (stiff @ u))


def test_idempotent_on_qoi_path():
    # apply through a precomputed QOI vector matches the direct path
    ref, fe, space, ih = _setup("dg", 2, n=4)
    rng = np.random.default_rng(2)
    v = rng.standard_normal(fe.n_dofs)
    q = ih.bmatrix @ v
    assert np.array_equal(ih.apply(v), ih.apply_to_qoi(q))
