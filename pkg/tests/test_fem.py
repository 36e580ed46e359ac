"""Fine-scale finite element assembly and solve checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holod.fem import (
    AlignmentError,
    CoefficientField,
    FeFunction,
    FeSpace,
    assemble_mass,
    assemble_stiffness,
    interpolate,
    norms,
    solve_reference,
)
from holod.grid import Domain, build_mesh, refine


def _space(n, q=1, r=1, bc="dirichlet-zero", domain=None):
    return FeSpace(refine(build_mesh(n, domain), r), q=q, bc=bc)


def _unit_coeff(value=1.0, domain=None):
    return CoefficientField.constant(value, domain)


class TestStiffness:
    def test_single_bilinear_element(self):
        space = _space(1)
        mat = assemble_stiffness(space, _unit_coeff()).toarray()
        # Q1 stencil on the unit square: corners couple with -1/3 across
        # the diagonal and -1/6 along the edges.
        expected = np.array(
            [
                [2 / 3, -1 / 6, -1 / 6, -1 / 3],
                [-1 / 6, 2 / 3, -1 / 3, -1 / 6],
                [-1 / 6, -1 / 3, 2 / 3, -1 / 6],
                [-1 / 3, -1 / 6, -1 / 6, 2 / 3],
            ]
        )
        np.testing.assert_allclose(mat, expected, atol=1e-14)

    def test_linear_in_coefficient(self):
        space = _space(4)
        k1 = assemble_stiffness(space, _unit_coeff(1.0)).toarray()
        k2 = assemble_stiffness(space, _unit_coeff(2.0)).toarray()
        np.testing.assert_allclose(k2, 2.0 * k1, atol=1e-14)

    def test_constants_in_kernel(self):
        space = _space(5, q=2)
        mat = assemble_stiffness(space, _unit_coeff())
        ones = np.ones(space.n_dofs)
        assert np.abs(mat @ ones).max() <= 1e-12 * np.abs(mat.data).max()

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        field = CoefficientField(Domain(), rng.uniform(0.1, 1.0, (4, 4)))
        space = _space(4, q=2)
        mat = assemble_stiffness(space, field)
        gap = np.abs((mat - mat.T).data)
        assert (gap.max() if gap.size else 0.0) <= 1e-14 * np.abs(mat.data).max()

    def test_mesh_size_invariance(self):
        # grad-grad energy of the same bilinear shape is scale free, so
        # the local stencil survives refinement on the diagonal.
        space = _space(1, r=8)
        mat = assemble_stiffness(space, _unit_coeff())
        assert mat[0, 0] == pytest.approx(2 / 3)


class TestMass:
    def test_entries_sum_to_area(self):
        space = _space(3, q=2)
        assert assemble_mass(space).sum() == pytest.approx(1.0)

    def test_entries_sum_to_area_offset_domain(self):
        dom = Domain(-6.0, -6.0, 12.0)
        space = _space(4, domain=dom)
        assert assemble_mass(space).sum() == pytest.approx(144.0)

    def test_single_bilinear_element(self):
        mat = assemble_mass(_space(1)).toarray()
        expected = np.array(
            [
                [1 / 9, 1 / 18, 1 / 18, 1 / 36],
                [1 / 18, 1 / 9, 1 / 36, 1 / 18],
                [1 / 18, 1 / 36, 1 / 9, 1 / 18],
                [1 / 36, 1 / 18, 1 / 18, 1 / 9],
            ]
        )
        np.testing.assert_allclose(mat, expected, atol=1e-15)

    def test_weight_scales_linearly(self):
        space = _space(2)
        m1 = assemble_mass(space).toarray()
        m2 = assemble_mass(space, weight=2.0).toarray()
        np.testing.assert_allclose(m2, 2.0 * m1, atol=1e-15)


class TestNorms:
    def test_zero_function(self):
        space = _space(2)
        assert norms(FeFunction(space, np.zeros(space.n_dofs))) == (0, 0, 0)

    def test_scaling(self):
        space = _space(4, q=2)
        rng = np.random.default_rng(1)
        u = FeFunction(space, rng.standard_normal(space.n_dofs))
        cu = FeFunction(space, 3.0 * u.values)
        for a, b in zip(norms(cu), norms(u)):
            assert a == pytest.approx(3.0 * b, rel=1e-12)

    def test_sine_product_energy(self):
        # |grad(sin(pi x) sin(pi y))|^2 integrates to pi^2 / 2 and the
        # squared L2 norm to 1/4; the interpolant converges to both.
        space = _space(64, q=1)
        u = interpolate(space, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        l2, energy, h1 = norms(u)
        assert l2**2 == pytest.approx(0.25, rel=2e-3)
        assert energy**2 == pytest.approx(np.pi**2 / 2, rel=2e-3)
        assert h1**2 == pytest.approx(0.25 + np.pi**2 / 2, rel=2e-3)

    def test_energy_uses_coefficient(self):
        space = _space(8)
        rng = np.random.default_rng(2)
        u = FeFunction(space, rng.standard_normal(space.n_dofs))
        _, e1, _ = norms(u)
        _, e4, _ = norms(u, coeff=_unit_coeff(4.0))
        assert e4 == pytest.approx(2.0 * e1, rel=1e-12)


class TestSolveReference:
    def test_poisson_nodal_accuracy(self):
        space = _space(64)
        f = lambda x, y: 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
        u = solve_reference(space, _unit_coeff(), f)
        exact = interpolate(space, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        assert np.abs(u.values - exact.values).max() <= 5e-3

    def test_zero_source_gives_zero(self):
        space = _space(8)
        u = solve_reference(space, _unit_coeff(), lambda x, y: 0.0 * x)
        assert np.all(u.values == 0.0)

    def test_energy_error_halves_with_h(self):
        f = lambda x, y: 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
        errors = []
        fine = _space(128)
        stiff = assemble_stiffness(fine, _unit_coeff())
        u_fine = solve_reference(fine, _unit_coeff(), f)
        for n in (8, 16, 32):
            coarse = _space(n)
            u = solve_reference(coarse, _unit_coeff(), f)
            lift = interpolate(
                fine,
                lambda x, y: _bilinear_eval(coarse, u.values, x, y),
            )
            d = lift.values - u_fine.values
            errors.append(float(np.sqrt(d @ (stiff @ d))))
        ratios = np.array(errors[:-1]) / np.array(errors[1:])
        assert np.all(ratios > 1.8)
        assert np.all(ratios < 2.2)

    def test_galerkin_residual_vanishes_on_free_dofs(self):
        rng = np.random.default_rng(3)
        space = _space(6, q=2)
        field = CoefficientField(Domain(), rng.uniform(0.5, 2.0, (3, 3)))
        fv = FeFunction(space, rng.standard_normal(space.n_dofs))
        u = solve_reference(space, field, fv)
        residual = assemble_stiffness(space, field) @ u.values - assemble_mass(
            space
        ) @ fv.values
        scale = np.abs(fv.values).max()
        assert np.abs(residual[space.free_dofs]).max() <= 1e-10 * scale

    def test_requires_elliptic_coefficient(self):
        space = _space(4)
        with pytest.raises(ValueError):
            solve_reference(space, _unit_coeff(0.0), lambda x, y: 1.0 + 0 * x)


def _bilinear_eval(space, values, x, y):
    """Evaluate a q=1 function at points, assuming nodes line up."""
    n1d = space.n1d
    grid = values.reshape(n1d, n1d)
    dom = space.refinement.fine.domain
    gx = np.clip((x - dom.x0) / dom.side * (n1d - 1), 0, n1d - 1)
    gy = np.clip((y - dom.y0) / dom.side * (n1d - 1), 0, n1d - 1)
    ix = np.minimum(gx.astype(int), n1d - 2)
    iy = np.minimum(gy.astype(int), n1d - 2)
    tx, ty = gx - ix, gy - iy
    return (
        grid[iy, ix] * (1 - tx) * (1 - ty)
        + grid[iy, ix + 1] * tx * (1 - ty)
        + grid[iy + 1, ix] * (1 - tx) * ty
        + grid[iy + 1, ix + 1] * tx * ty
    )


class TestCoefficientAlignment:
    def test_misaligned_grid_rejected(self):
        field = CoefficientField(Domain(), np.full((3, 3), 1.0))
        space = _space(4)
        with pytest.raises(AlignmentError):
            assemble_stiffness(space, field)

    def test_domain_mismatch_rejected(self):
        field = CoefficientField(Domain(-6.0, -6.0, 12.0), np.full((2, 2), 1.0))
        space = _space(4)
        with pytest.raises(ValueError):
            assemble_stiffness(space, field)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_coefficient_bounds_pinch_energy(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.choice([1, 2, 4]))
    field = CoefficientField(Domain(), rng.uniform(0.1, 3.0, (m, m)))
    space = _space(4, q=int(rng.integers(1, 3)))
    k_a = assemble_stiffness(space, field)
    k_1 = assemble_stiffness(space, _unit_coeff())
    v = rng.standard_normal(space.n_dofs)
    grad_sq = v @ (k_1 @ v)
    energy_sq = v @ (k_a @ v)
    alpha, beta = field.bounds
    assert alpha * grad_sq <= energy_sq * (1 + 1e-12) + 1e-12
    assert energy_sq <= beta * grad_sq * (1 + 1e-12) + 1e-12
