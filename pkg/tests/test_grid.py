"""Mesh, refinement, and patch geometry checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holod.grid import (
    Domain,
    build_mesh,
    fine_dofs_in_patch,
    patch,
    refine,
)


class TestBuildMesh:
    def test_unit_square_counts(self):
        mesh = build_mesh(2)
        assert mesh.n_elements == 4
        assert mesh.n_nodes == 9
        interior = mesh.interior_node_mask()
        assert interior.sum() == 1
        assert (~interior).sum() == 8

    def test_single_element_all_nodes_on_boundary(self):
        mesh = build_mesh(1)
        assert mesh.n_nodes == 4
        assert not mesh.interior_node_mask().any()

    def test_offset_domain_mesh_size(self):
        mesh = build_mesh(8, Domain(-6.0, -6.0, 12.0))
        assert mesh.h == pytest.approx(1.5)
        coords = mesh.node_coords()
        assert coords[0] == pytest.approx([-6.0, -6.0])
        assert coords[-1] == pytest.approx([6.0, 6.0])

    def test_node_coords_y_major(self):
        mesh = build_mesh(2)
        coords = mesh.node_coords()
        # second node advances in x first
        np.testing.assert_allclose(coords[1], [0.5, 0.0])
        np.testing.assert_allclose(coords[3], [0.0, 0.5])

    def test_element_id_bounds(self):
        mesh = build_mesh(3)
        assert mesh.element_id(2, 1) == 5
        with pytest.raises(ValueError):
            mesh.element_id(3, 0)

    def test_degenerate_domain_rejected(self):
        with pytest.raises(ValueError):
            Domain(0.0, 0.0, 0.0)


class TestRefine:
    def test_parent_of_single_fine_element(self):
        ref = refine(build_mesh(2), 4)
        fine_id = ref.fine.element_id(5, 3)
        assert ref.parent_of(fine_id) == ref.coarse.element_id(1, 0)

    def test_identity_refinement(self):
        ref = refine(build_mesh(1), 1)
        assert ref.fine.n == 1
        assert ref.parent_of(0) == 0
        np.testing.assert_array_equal(ref.children_of(0), [0])

    def test_fine_element_count(self):
        ref = refine(build_mesh(4), 32)
        assert ref.fine.n_elements == 16384

    def test_children_partition_fine_mesh(self):
        ref = refine(build_mesh(3), 2)
        seen = np.concatenate([ref.children_of(e) for e in range(9)])
        assert np.array_equal(np.sort(seen), np.arange(36))

    def test_parent_inverts_children(self):
        ref = refine(build_mesh(3), 4)
        for e in (0, 4, 8):
            assert (ref.parent_of(ref.children_of(e)) == e).all()


class TestPatch:
    def test_interior_one_ring(self):
        mesh = build_mesh(8)
        pt = patch(mesh, mesh.element_id(4, 4), 1)
        assert len(pt.elements) == 9

    def test_corner_one_ring_clips(self):
        mesh = build_mesh(8)
        pt = patch(mesh, mesh.element_id(0, 0), 1)
        assert len(pt.elements) == 4

    def test_corner_two_ring(self):
        mesh = build_mesh(8)
        pt = patch(mesh, mesh.element_id(0, 0), 2)
        assert len(pt.elements) == 9

    def test_ell_two_interior(self):
        mesh = build_mesh(8)
        pt = patch(mesh, mesh.element_id(4, 4), 2)
        assert len(pt.elements) == 25

    def test_zero_ring_is_seed_set(self):
        mesh = build_mesh(8)
        seed = mesh.element_id(2, 5)
        pt = patch(mesh, seed, 0)
        np.testing.assert_array_equal(pt.elements, [seed])

    def test_mask_matches_elements(self):
        mesh = build_mesh(5)
        pt = patch(mesh, mesh.element_id(1, 3), 1)
        assert np.array_equal(np.flatnonzero(pt.mask.ravel()), pt.elements)

    def test_global_flag(self):
        mesh = build_mesh(4)
        assert patch(mesh, 0, 8).is_global
        assert not patch(mesh, 0, 1).is_global


class TestFineDofsInPatch:
    def test_whole_mesh_keeps_interior_dofs(self):
        ref = refine(build_mesh(2), 2)
        pt = patch(ref.coarse, [0, 1, 2, 3], 0)
        dofs = fine_dofs_in_patch(ref, pt, 1, include_domain_boundary=True)
        # 5x5 fine nodes, all supported inside the (global) patch
        assert len(dofs) == 9 + 16  # interior + domain boundary
        dofs_no_bdy = fine_dofs_in_patch(ref, pt, 1)
        assert len(dofs_no_bdy) == 9

    def test_single_element_patch(self):
        ref = refine(build_mesh(2), 2)
        pt = patch(ref.coarse, 0, 0)
        dofs = fine_dofs_in_patch(ref, pt, 1)
        assert len(dofs) == 1

    def test_single_element_finer(self):
        ref = refine(build_mesh(2), 4)
        pt = patch(ref.coarse, 0, 0)
        dofs = fine_dofs_in_patch(ref, pt, 1)
        assert len(dofs) == 9

    def test_rejects_degree_zero(self):
        ref = refine(build_mesh(2), 2)
        pt = patch(ref.coarse, 0, 1)
        with pytest.raises(ValueError):
            fine_dofs_in_patch(ref, pt, 0)

    def test_quadratic_dofs_on_single_element(self):
        ref = refine(build_mesh(2), 2)
        pt = patch(ref.coarse, 0, 0)
        dofs = fine_dofs_in_patch(ref, pt, 2)
        # q=2 on a 2x2 fine block: 5x5 grid, 3x3 interior
        assert len(dofs) == 9


coarse_n = st.integers(min_value=1, max_value=9)


@st.composite
def mesh_and_seed(draw):
    n = draw(coarse_n)
    mesh = build_mesh(n)
    seed = draw(st.integers(min_value=0, max_value=mesh.n_elements - 1))
    return mesh, seed


@given(mesh_and_seed(), st.integers(min_value=1, max_value=4))
@settings(max_examples=60, deadline=None)
def test_patch_growth_is_iterated_one_ring(case, ell):
    mesh, seed = case
    grown = patch(mesh, seed, ell)
    step = patch(mesh, seed, 0)
    for _ in range(ell):
        step = patch(mesh, step.elements, 1)
    np.testing.assert_array_equal(grown.elements, step.elements)


@given(mesh_and_seed(), st.integers(min_value=0, max_value=3))
@settings(max_examples=60, deadline=None)
def test_patches_are_nested_and_contained(case, ell):
    mesh, seed = case
    inner = patch(mesh, seed, ell)
    outer = patch(mesh, seed, ell + 1)
    assert np.isin(inner.elements, outer.elements).all()
    assert seed in inner.elements
    assert inner.elements.min() >= 0
    assert inner.elements.max() < mesh.n_elements


@given(mesh_and_seed(), st.integers(min_value=0, max_value=2))
@settings(max_examples=40, deadline=None)
def test_patch_monotone_in_seed_set(case, ell):
    mesh, seed = case
    small = patch(mesh, seed, ell)
    extra = (seed + 1) % mesh.n_elements
    large = patch(mesh, sorted({seed, extra}), ell)
    assert np.isin(small.elements, large.elements).all()


@given(
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=1, max_value=6),
    st.data(),
)
@settings(max_examples=60, deadline=None)
def test_parent_map_is_index_division(n, r, data):
    ref = refine(build_mesh(n), r)
    fine_e = data.draw(
        st.integers(min_value=0, max_value=ref.fine.n_elements - 1)
    )
    fx, fy = ref.fine.element_xy(fine_e)
    expected = (fy // r) * n + fx // r
    assert ref.parent_of(fine_e) == expected
