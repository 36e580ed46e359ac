import numpy as np
import pytest as _pytest
import scipy.sparse as sp

from holod.constraints import ConstraintSpace
from holod.fem import CoefficientField, FeSpace, assemble_mass, interpolate
from holod.grid import build_mesh, refine
from holod.helmholtz import (
    HelmholtzProblem,
    assemble_helmholtz,
    coercivity_diagnostic,
    helmholtz_bundle,
    kappa_norm_matrix,
    solve_fine,
    solve_helmholtz_lod,
)
from holod.problems import source

pytestmark = _pytest.mark.filterwarnings("ignore:refinement ratio")


def _unit_problem(kappa, sigma=1.0, f=None):
    one = CoefficientField.constant(1.0)
    return HelmholtzProblem(one, one, sigma, kappa, f or source("f1"))


def _space(n, r, q=1):
    return FeSpace(refine(build_mesh(n), r), q=q, bc="robin")


def test_validation():
    one = CoefficientField.constant(1.0)
    zero = CoefficientField.constant(0.0)
    with _pytest.raises(ValueError, match="wavenumber"):
        HelmholtzProblem(one, one, 1.0, 0.0, source("f1"))
    with _pytest.raises(ValueError, match="boundary"):
        HelmholtzProblem(one, one, -1.0, 4.0, source("f1"))
    with _pytest.raises(ValueError, match="diffusion"):
        HelmholtzProblem(zero, one, 1.0, 4.0, source("f1"))
    with _pytest.raises(ValueError, match="refraction"):
        HelmholtzProblem(one, zero, 1.0, 4.0, source("f1"))


def test_matrix_is_complex_symmetric_not_hermitian():
    fe = _space(2, 4, q=2)
    system = assemble_helmholtz(fe, _unit_problem(kappa=3.0))
    s = system.matrix
    asym = abs(s - s.T).max()
    aherm = abs(s - s.conj().T).max()
    assert asym < 1e-12
    assert aherm > 1e-3  # the Robin part is genuinely imaginary


def test_constant_vector_identities():
    # a(1, 1) = -kappa^2 |Omega| - i kappa sigma |boundary|
    kappa, sigma = 2.5, 3.0
    fe = _space(3, 3)
    system = assemble_helmholtz(fe, _unit_problem(kappa, sigma=sigma))
    ones = np.ones(fe.n_dofs)
    val = ones @ (system.matrix @ ones)
    assert np.real(val) == _pytest.approx(-(kappa**2), rel=1e-12)
    assert np.imag(val) == _pytest.approx(-kappa * 4.0 * sigma, rel=1e-12)


def test_bundle_matches_global_assembly():
    fe = _space(2, 4)
    prob = _unit_problem(kappa=4.0, sigma=2.0)
    bundle = helmholtz_bundle(fe, prob)
    system = assemble_helmholtz(fe, prob)
    assert abs(bundle.matrix - system.matrix).max() < 1e-12
    # summed element operators reproduce the global matrix, Robin included
    total = sp.csr_matrix((fe.n_dofs, fe.n_dofs), dtype=np.complex128)
    for t in range(fe.refinement.coarse.n ** 2):
        dofs = fe.coarse_element_dofs(t)
        loc = bundle.element_operator(t).tocoo()
        total = total + sp.csr_matrix(
            (loc.data, (dofs[loc.row], dofs[loc.col])),
            shape=(fe.n_dofs, fe.n_dofs),
        )
    assert abs(total - system.matrix).max() < 1e-12


def test_fine_solve_residual():
    fe = _space(4, 4)
    prob = _unit_problem(kappa=6.0)
    system = assemble_helmholtz(fe, prob)
    u = solve_fine(system, prob)
    load = assemble_mass(fe) @ interpolate(fe, prob.f).values.astype(complex)
    res = np.linalg.norm(system.matrix @ u - load) / np.linalg.norm(load)
    assert res < 1e-9
    assert np.abs(np.imag(u)).max() > 1e-6  # Robin coupling makes it complex


def test_zero_source_gives_zero():
    fe = _space(2, 4)
    prob = _unit_problem(kappa=2.0, f=lambda x, y: np.zeros_like(x))
    system = assemble_helmholtz(fe, prob)
    u = solve_fine(system, prob)
    assert np.abs(u).max() == 0.0


def test_lod_sanity_moderate_wavenumber():
    # kappa = 1: pollution-free regime, localized coarse solve lands close
    prob = _unit_problem(kappa=1.0)
    res = solve_helmholtz_lod(prob, n=8, r=8, p=1, mode="dg", ell=3)
    assert res.errors["kappa"] <= 5e-2


def test_lod_error_drops_with_patch_radius():
    prob = _unit_problem(kappa=1.0)
    errs = [
        solve_helmholtz_lod(prob, n=8, r=4, p=1, mode="dg", ell=ell).errors["kappa"]
        for ell in (2, 4)
    ]
    assert errs[1] < 0.5 * errs[0]


def test_kappa_norm_matrix_is_spd_form():
    fe = _space(2, 4)
    prob = _unit_problem(kappa=5.0)
    system = assemble_helmholtz(fe, prob)
    knorm = kappa_norm_matrix(system)
    rng = np.random.default_rng(7)
    z = rng.standard_normal(fe.n_dofs) + 1j * rng.standard_normal(fe.n_dofs)
    val = np.vdot(z, knorm @ z)
    assert np.real(val) > 0
    assert abs(np.imag(val)) < 1e-10 * np.real(val)


def test_coercivity_diagnostic_signs():
    # resolved coarse mesh: positive; kappa far above the resolution: negative
    fine = refine(build_mesh(8), 4)
    fe = FeSpace(fine, q=1, bc="robin")
    space = ConstraintSpace("dg", 1, fine)
    good = coercivity_diagnostic(fe, _unit_problem(kappa=4.0), space)
    assert good > 0

    fine2 = refine(build_mesh(2), 16)
    fe2 = FeSpace(fine2, q=1, bc="robin")
    space2 = ConstraintSpace("dg", 1, fine2)
    bad = coercivity_diagnostic(fe2, _unit_problem(kappa=64.0), space2)
    assert bad < 0


def test_coercivity_diagnostic_refuses_large_kernel():
    fine = refine(build_mesh(8), 10)
    fe = FeSpace(fine, q=1, bc="robin")
    space = ConstraintSpace("dg", 1, fine)
    with _pytest.raises(ValueError, match="kernel dimension"):
        coercivity_diagnostic(fe, _unit_problem(kappa=4.0), space)
