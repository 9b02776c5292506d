import dataclasses

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from delam2d.assembly import (
    assemble_interface,
    assemble_loads,
    assemble_stiffness,
    assemble_viscosity,
    constraint_matrix,
    dirichlet_map,
    dump_matrix,
    make_dofmap,
    node_dofs,
    segment_jump_rows,
    triangle_operators,
)
from delam2d.constitutive import AdhesiveLaw, IsotropicElasticity, elasticity_tensor
from delam2d.mesh import (
    _boundary_edges,
    build_benchmark_mesh,
    build_two_body_mesh,
    refine_uniform,
)

UNIT_MATERIAL = elasticity_tensor(IsotropicElasticity(E=1.0, nu=0.3))
GLUE = AdhesiveLaw(kappa_n=150e9, kappa_t=75e9, mode1_toughness=187.5, mode_sensitivity=0.333)


def generator_meshes():
    rigid = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
    two_body = build_two_body_mesh(0.25, 0.025, 9, 0.9)
    return [
        ("rigid", rigid),
        ("rigid_right", build_benchmark_mesh(0.25, 0.025, 9, 0.9, glued_from="right")),
        ("rigid_refined", refine_uniform(rigid)),
        ("two_body", two_body),
        ("two_body_refined", refine_uniform(two_body)),
        ("fully_glued", build_benchmark_mesh(0.3, 0.1, 6, 1.0)),
    ]


def linear_field(mesh, gradient, offset):
    """Nodal dof vector of u(x) = offset + gradient @ x."""
    u = mesh.nodes @ np.asarray(gradient).T + np.asarray(offset)
    return u.ravel()


def boundary_node_set(mesh):
    out = set()
    for a, b in _boundary_edges(mesh.triangles):
        out.add(a)
        out.add(b)
    return out


class TestPatchTest:
    @pytest.mark.parametrize("name,mesh", generator_meshes(), ids=lambda v: v if isinstance(v, str) else "")
    def test_linear_field_reproduced(self, name, mesh):
        gradient = np.array([[0.31, -0.12], [0.07, 0.23]])
        offset = np.array([0.05, -0.4])
        exact = linear_field(mesh, gradient, offset)
        K = assemble_stiffness(mesh, UNIT_MATERIAL)
        dofmap = make_dofmap(mesh, boundary_node_set(mesh), lambda t: 0.0 * np.zeros(2))
        free, presc = dofmap.free, dofmap.prescribed
        rhs = -K[free][:, presc] @ exact[presc]
        u = np.zeros(mesh.n_dofs)
        u[presc] = exact[presc]
        u[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
        err = np.abs(u - exact).max()
        assert err <= 1e-10 * max(1.0, np.abs(exact).max()), f"{name}: {err:.3e}"

    def test_two_body_patch_with_glue(self):
        # A continuous linear field has zero jump across the seam, so the
        # glue term must not disturb the patch solution.
        mesh = build_two_body_mesh(0.25, 0.025, 9, 0.9)
        gradient = np.array([[0.2, 0.1], [-0.05, 0.3]])
        offset = np.array([0.0, 0.1])
        exact = linear_field(mesh, gradient, offset)
        K = assemble_stiffness(mesh, UNIT_MATERIAL)
        A = assemble_interface(mesh, GLUE, np.ones(len(mesh.interface_segments)))
        KA = (K + A).tocsr()
        dofmap = make_dofmap(mesh, boundary_node_set(mesh), lambda t: np.zeros(2))
        free, presc = dofmap.free, dofmap.prescribed
        u = np.zeros(mesh.n_dofs)
        u[presc] = exact[presc]
        u[free] = spla.spsolve(
            KA[free][:, free].tocsc(), -KA[free][:, presc] @ exact[presc]
        )
        assert np.abs(u - exact).max() <= 1e-10


class TestStiffness:
    def test_symmetry(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        K = assemble_stiffness(mesh, UNIT_MATERIAL)
        assert abs(K - K.T).max() <= 1e-14

    def test_rigid_modes_in_nullspace(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        K = assemble_stiffness(mesh, UNIT_MATERIAL)
        scale = abs(K).max()
        tx = np.tile([1.0, 0.0], mesh.n_nodes)
        ty = np.tile([0.0, 1.0], mesh.n_nodes)
        rot = np.column_stack([-mesh.nodes[:, 1], mesh.nodes[:, 0]]).ravel()
        for mode in (tx, ty, rot):
            assert np.abs(K @ mode).max() <= 1e-12 * scale * max(1.0, np.abs(mode).max())

    def test_uniform_strain_energy(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        K = assemble_stiffness(mesh, UNIT_MATERIAL)
        e = np.array([0.3, -0.1, 0.25])  # (e11, e22, 2 e12)
        gradient = np.array([[e[0], 0.5 * e[2]], [0.5 * e[2], e[1]]])
        u = linear_field(mesh, gradient, np.zeros(2))
        area = 0.25 * 0.025
        expected = 0.5 * float(e @ UNIT_MATERIAL @ e) * area
        assert 0.5 * float(u @ (K @ u)) == pytest.approx(expected, rel=1e-12)

    def test_positive_semidefinite_sample(self):
        mesh = build_benchmark_mesh(0.2, 0.1, 4, 1.0)
        K = assemble_stiffness(mesh, UNIT_MATERIAL)
        rng = np.random.default_rng(7)
        for _ in range(20):
            v = rng.normal(size=mesh.n_dofs)
            assert float(v @ (K @ v)) >= -1e-12 * float(v @ v)


class TestViscosity:
    def test_exact_multiple_of_stiffness(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        K = assemble_stiffness(mesh, UNIT_MATERIAL)
        V = assemble_viscosity(K, 1e-3)
        assert abs(V - 1e-3 * K).max() == 0.0

    def test_rejects_negative(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 4, 1.0)
        K = assemble_stiffness(mesh, UNIT_MATERIAL)
        with pytest.raises(ValueError):
            assemble_viscosity(K, -1.0)


class TestJumpRows:
    def test_rigid_jump_is_negated_body_trace(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        rng = np.random.default_rng(3)
        u = rng.normal(size=mesh.n_dofs)
        seg = mesh.interface_segments[2]
        for s in (0.0, 0.5, 0.8):
            dofs, coeffs = segment_jump_rows(mesh, 2, s)
            jump = coeffs @ u[dofs]
            ua = u[node_dofs(np.array([seg.node_plus[0]]))].ravel()
            ub = u[node_dofs(np.array([seg.node_plus[1]]))].ravel()
            expected = -((1.0 - s) * ua + s * ub)
            assert np.allclose(jump, expected, atol=1e-14)

    def test_two_body_jump_is_minus_minus_plus(self):
        mesh = build_two_body_mesh(0.25, 0.025, 9, 0.9)
        rng = np.random.default_rng(4)
        u = rng.normal(size=mesh.n_dofs)
        seg = mesh.interface_segments[1]
        s = 0.3
        dofs, coeffs = segment_jump_rows(mesh, 1, s)
        jump = coeffs @ u[dofs]
        up = (1 - s) * u[node_dofs(np.array([seg.node_plus[0]]))].ravel() + s * u[
            node_dofs(np.array([seg.node_plus[1]]))
        ].ravel()
        um = (1 - s) * u[node_dofs(np.array([seg.node_minus[0]]))].ravel() + s * u[
            node_dofs(np.array([seg.node_minus[1]]))
        ].ravel()
        assert np.allclose(jump, um - up, atol=1e-14)


class TestInterfaceAssembly:
    @pytest.mark.parametrize("builder", [build_benchmark_mesh, build_two_body_mesh])
    def test_quadratic_form_matches_direct_quadrature(self, builder):
        mesh = builder(0.25, 0.025, 9, 0.9)
        rng = np.random.default_rng(11)
        u = 1e-4 * rng.normal(size=mesh.n_dofs)
        z = rng.uniform(0.0, 1.0, size=len(mesh.interface_segments))
        z[3] = 0.0
        A = assemble_interface(mesh, GLUE, z)
        total = 0.0
        from delam2d.assembly import GAUSS_2PT

        for e, seg in enumerate(mesh.interface_segments):
            n = np.array(seg.normal)
            t = np.array([-n[1], n[0]])
            for s in GAUSS_2PT:
                dofs, coeffs = segment_jump_rows(mesh, e, s)
                jump = coeffs @ u[dofs]
                density = 0.5 * (
                    GLUE.kappa_n * float(jump @ n) ** 2
                    + GLUE.kappa_t * float(jump @ t) ** 2
                )
                total += 0.5 * seg.length * z[e] * density
        assert 0.5 * float(u @ (A @ u)) == pytest.approx(total, rel=1e-12)

    def test_debonded_segments_absent(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        A = assemble_interface(mesh, GLUE, np.zeros(9))
        assert A.nnz == 0

    def test_positive_semidefinite(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        A = assemble_interface(mesh, GLUE, np.ones(9))
        rng = np.random.default_rng(2)
        for _ in range(10):
            v = rng.normal(size=mesh.n_dofs)
            assert float(v @ (A @ v)) >= -1e-9

    def test_wrong_bond_length_rejected(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        with pytest.raises(ValueError):
            assemble_interface(mesh, GLUE, np.ones(5))


class TestLoads:
    def test_constant_body_force_total(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        f = assemble_loads(mesh, 0.0, body_force=lambda p, t: np.tile([0.0, -9.81], (len(p), 1)))
        area = 0.25 * 0.025
        assert f[0::2].sum() == pytest.approx(0.0, abs=1e-12)
        assert f[1::2].sum() == pytest.approx(-9.81 * area, rel=1e-12)

    def test_constant_traction_total(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        tr = np.array([2.0, 1.0])
        f = assemble_loads(mesh, 0.0, boundary_traction=lambda p, t: np.tile(tr, (len(p), 1)))
        edges = np.array(sorted(mesh.neumann_edges))
        lengths = np.hypot(
            *(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]]).T
        )
        total_len = lengths.sum()
        assert f[0::2].sum() == pytest.approx(tr[0] * total_len, rel=1e-12)
        assert f[1::2].sum() == pytest.approx(tr[1] * total_len, rel=1e-12)

    def test_zero_by_default(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        assert np.all(assemble_loads(mesh, 1.0) == 0.0)


class TestDofMap:
    def test_expand_roundtrip(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        dofmap = dirichlet_map(mesh, lambda t: np.array([0.1 * t, -0.2 * t]))
        u = dofmap.expand(np.arange(dofmap.n_free, dtype=float), 2.0)
        assert np.allclose(u[dofmap.free], np.arange(dofmap.n_free))
        assert np.allclose(u[dofmap.prescribed][0::2], 0.2)
        assert np.allclose(u[dofmap.prescribed][1::2], -0.4)

    def test_per_node_values(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        nodes = sorted(mesh.dirichlet_nodes)
        vals = np.arange(2 * len(nodes), dtype=float).reshape(-1, 2)
        dofmap = dirichlet_map(mesh, lambda t: vals)
        assert np.allclose(dofmap.prescribed_values(0.0), vals.ravel())

    def test_wrong_shape_rejected(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        dofmap = dirichlet_map(mesh, lambda t: np.zeros(3))
        with pytest.raises(ValueError):
            dofmap.prescribed_values(0.0)

    def test_no_dirichlet_nodes_rejected(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 4, 1.0)
        bare = dataclasses.replace(mesh, dirichlet_nodes=frozenset())
        with pytest.raises(ValueError):
            dirichlet_map(bare, lambda t: np.zeros(2))


class TestConstraintMatrix:
    def test_rigid_gap_is_vertical_displacement(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        dofmap = dirichlet_map(mesh, lambda t: np.zeros(2))
        con = constraint_matrix(mesh, dofmap)
        rng = np.random.default_rng(5)
        u = rng.normal(size=mesh.n_dofs)
        gaps = con.gaps(u)
        expected = np.array([u[2 * plus + 1] for plus, _ in con.node_pairs])
        assert np.allclose(gaps, expected, atol=1e-14)

    def test_two_body_gap_is_relative_normal_jump(self):
        mesh = build_two_body_mesh(0.25, 0.025, 9, 0.9)
        dofmap = dirichlet_map(mesh, lambda t: np.zeros(2))
        con = constraint_matrix(mesh, dofmap)
        rng = np.random.default_rng(6)
        u = rng.normal(size=mesh.n_dofs)
        gaps = con.gaps(u)
        # normal (0,-1): jump.n = (u_minus - u_plus).(0,-1) = u_plus_y - u_minus_y
        expected = np.array(
            [u[2 * p + 1] - u[2 * m + 1] for p, m in con.node_pairs]
        )
        assert np.allclose(gaps, expected, atol=1e-14)

    def test_offset_consistent_with_gaps(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        dofmap = dirichlet_map(mesh, lambda t: np.array([1e-4 * t, 2e-4 * t]))
        con = constraint_matrix(mesh, dofmap)
        u_free = np.random.default_rng(8).normal(size=dofmap.n_free)
        t = 3.0
        full = dofmap.expand(u_free, t)
        assert np.allclose(con.gaps(full), con.rows @ u_free + con.offset(t), atol=1e-12)

    def test_row_count_matches_interface_nodes(self):
        mesh = build_benchmark_mesh(0.25, 0.025, 9, 0.9)
        dofmap = dirichlet_map(mesh, lambda t: np.zeros(2))
        con = constraint_matrix(mesh, dofmap)
        assert con.n_rows == len(mesh.interface_nodes())


class TestDump:
    def test_deterministic_text(self, tmp_path):
        mesh = build_benchmark_mesh(0.25, 0.025, 4, 1.0)
        K = assemble_stiffness(mesh, UNIT_MATERIAL)
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        dump_matrix(K, p1)
        dump_matrix(K, p2)
        assert p1.read_bytes() == p2.read_bytes()
        first = p1.read_text().splitlines()[0]
        assert first.startswith("# shape")
