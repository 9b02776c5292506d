import warnings

import numpy as np
import pytest

from delam2d.constitutive import AdhesiveLaw, IsotropicElasticity, ViscosityLaw
from delam2d.harness import build_simulation
from delam2d.mesh import build_benchmark_mesh
from delam2d.qp import QpNonconvergenceError
from delam2d.stepper import (
    InvariantViolation,
    State,
    build_operators,
    delamination_step,
    displacement_step,
    init_state,
    interpolant_eval,
    run,
    segment_energies,
)

from conftest import make_doc

from delam2d import parse_config


@pytest.fixture(scope="module")
def small_ops():
    config = parse_config(make_doc())
    return build_simulation(config)[1]


@pytest.fixture(scope="module")
def small_traj(small_ops):
    return run(small_ops, tau=0.02, t_end=1.2)


def toy_adhesive(**overrides):
    params = dict(
        kappa_n=2.0,
        kappa_t=1.0,
        mode1_toughness=1.0,
        mode_sensitivity=0.5,
        mixity_regularization=0.0,
    )
    params.update(overrides)
    return AdhesiveLaw(**params)


@pytest.fixture(scope="module")
def toy_ops():
    """Unit-ish moduli so delamination thresholds have closed forms."""
    mesh = build_benchmark_mesh(L=1.0, H=0.25, n_interface=4, glued_fraction=0.8)
    return build_operators(
        mesh,
        IsotropicElasticity(E=1.0, nu=0.3),
        ViscosityLaw(chi=1e-3),
        toy_adhesive(),
        lambda t: np.zeros(2),
    )


def opening_field(ops, j):
    """Uniform normal opening of size j of every interface plus node."""
    u = np.zeros(ops.mesh.n_dofs)
    for seg in ops.mesh.interface_segments:
        for node in seg.node_plus:
            u[2 * node + 1] = j
    return u


class TestInitState:
    def test_default_rest_intact(self, small_ops):
        state = init_state(small_ops)
        assert state.t == 0.0
        assert not state.u.any()
        assert np.all(state.z == 1.0)
        assert len(state.z) == small_ops.n_segments

    def test_scalar_partial_bond(self, small_ops):
        state = init_state(small_ops, z0=0.5)
        assert np.all(state.z == 0.5)

    def test_wrong_displacement_shape(self, small_ops):
        with pytest.raises(ValueError, match="shape"):
            init_state(small_ops, u0=np.zeros(3))

    def test_wrong_bond_shape(self, small_ops):
        with pytest.raises(ValueError, match="shape"):
            init_state(small_ops, z0=np.ones(small_ops.n_segments + 1))

    def test_bond_out_of_range(self, small_ops):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            init_state(small_ops, z0=1.5)

    def test_penetrating_start_rejected(self, small_ops):
        u = np.zeros(small_ops.mesh.n_dofs)
        node = small_ops.mesh.interface_segments[0].node_plus[0]
        u[2 * node + 1] = -1e-3
        with pytest.raises(ValueError, match="penetrat"):
            init_state(small_ops, u0=u)

    def test_boundary_mismatch_rejected(self, small_ops):
        u = np.zeros(small_ops.mesh.n_dofs)
        u[small_ops.dofmap.prescribed[0]] = 0.1
        with pytest.raises(ValueError, match="boundary"):
            init_state(small_ops, u0=u)


class TestDisplacementStep:
    def test_zero_drive_stays_at_rest(self, toy_ops):
        state = init_state(toy_ops)
        u, sol = displacement_step(toy_ops, state, tau=0.1, t_next=0.1)
        assert not u.any()
        assert sol.kkt.worst() <= 1e-10

    def test_nonpositive_tau_rejected(self, small_ops):
        state = init_state(small_ops)
        with pytest.raises(ValueError, match="positive"):
            displacement_step(small_ops, state, tau=0.0, t_next=0.1)

    def test_first_step_feasible_with_certificate(self, small_ops):
        state = init_state(small_ops)
        u, sol = displacement_step(small_ops, state, tau=0.02, t_next=0.02)
        assert sol.kkt.worst() <= 1e-8
        gaps = small_ops.constraint.gaps(u)
        assert float(gaps.min()) >= -1e-10
        presc = small_ops.dofmap.prescribed
        assert np.allclose(u[presc], small_ops.dofmap.prescribed_values(0.02))

    def test_large_tau_approaches_elastic_equilibrium(self):
        config = parse_config(make_doc())
        ops_visc = build_simulation(config)[1]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ops_elast = build_simulation(config, chi=0.0)[1]
        t_next = 0.4
        state_v = init_state(ops_visc)
        state_e = init_state(ops_elast)
        u_e, _ = displacement_step(ops_elast, state_e, tau=1.0, t_next=t_next)
        scale = float(np.abs(u_e).max())
        errs = []
        for tau in (1e2, 1e6, 1e10):
            u_v, _ = displacement_step(ops_visc, state_v, tau=tau, t_next=t_next)
            errs.append(float(np.abs(u_v - u_e).max()) / scale)
        assert errs[2] <= 1e-8
        assert errs[0] >= errs[1] >= errs[2]

    def test_prescribed_penetration_detected(self):
        # fully glued bar: the bottom-right corner is both driven and an
        # interface node, so compressive drive penetrates the foundation
        mesh = build_benchmark_mesh(L=1.0, H=0.25, n_interface=4, glued_fraction=1.0)
        ops = build_operators(
            mesh,
            IsotropicElasticity(E=1.0, nu=0.3),
            ViscosityLaw(chi=1e-3),
            toy_adhesive(),
            lambda t: t * np.array([0.0, -1.0]),
        )
        state = init_state(ops)
        with pytest.raises(InvariantViolation, match="penetrate"):
            displacement_step(ops, state, tau=0.1, t_next=0.1)


class TestDelaminationStep:
    def test_rest_keeps_bond(self, toy_ops):
        z = np.ones(toy_ops.n_segments)
        z_next, drive, threshold, psi = delamination_step(
            toy_ops, np.zeros(toy_ops.mesh.n_dofs), z
        )
        assert np.all(z_next == z)
        assert not drive.any()
        assert np.all(threshold > 0.0)
        assert not psi.any()

    def test_uniform_opening_releases_above_threshold(self, toy_ops):
        # glue energy density (1/2) kappa_n j^2 = 2 a_I beats a(0) = a_I
        j = np.sqrt(4.0 * 1.0 / 2.0)
        z = np.ones(toy_ops.n_segments)
        z_next, drive, threshold, psi = delamination_step(
            toy_ops, opening_field(toy_ops, j), z
        )
        assert np.all(z_next == 0.0)
        assert np.all(drive > threshold)
        assert np.allclose(psi, 0.0)
        assert np.allclose(drive, 2.0 * toy_ops.seg_length, rtol=1e-12)

    def test_exact_tie_keeps_bond(self, toy_ops):
        # j = 1 makes the density (1/2)*2*1 exactly the toughness a_I = 1
        z = np.ones(toy_ops.n_segments)
        z_next, drive, threshold, _ = delamination_step(
            toy_ops, opening_field(toy_ops, 1.0), z
        )
        assert np.all(drive == threshold)
        assert np.all(z_next == 1.0)

    def test_below_threshold_keeps_bond(self, toy_ops):
        z = np.ones(toy_ops.n_segments)
        z_next, drive, threshold, _ = delamination_step(
            toy_ops, opening_field(toy_ops, 0.5), z
        )
        assert np.all(drive < threshold)
        assert np.all(z_next == 1.0)

    def test_sliding_pays_mode2_price(self, toy_ops):
        # pure sliding: psi = pi/2, threshold doubles at sensitivity 1/2
        u = np.zeros(toy_ops.mesh.n_dofs)
        for seg in toy_ops.mesh.interface_segments:
            for node in seg.node_plus:
                u[2 * node] = 1.9
        z = np.ones(toy_ops.n_segments)
        z_next, drive, threshold, psi = delamination_step(toy_ops, u, z)
        assert np.allclose(psi, np.pi / 2)
        assert np.allclose(threshold, 2.0 * toy_ops.seg_length, rtol=1e-12)
        # density (1/2) kappa_t 1.9^2 = 1.805 < 2: survives where the same
        # energy in opening mode (threshold 1) would have released
        assert np.all(z_next == 1.0)
        assert np.all(drive > toy_ops.seg_length)

    def test_broken_segments_stay_broken(self, toy_ops):
        z = np.ones(toy_ops.n_segments)
        z[0] = 0.0
        z_next, *_ = delamination_step(toy_ops, opening_field(toy_ops, 10.0), z)
        assert z_next[0] == 0.0
        assert np.all(z_next <= z)


class TestRun:
    def test_zero_horizon_is_initial_state_only(self, small_ops):
        traj = run(small_ops, tau=0.02, t_end=0.0)
        assert traj.n_steps == 0
        assert traj.times == [0.0]
        assert traj.reports == [None]
        assert traj.t_full_debond is None

    def test_times_and_grid(self, small_traj):
        times = np.array(small_traj.times)
        assert np.all(np.diff(times) > 0)
        assert np.allclose(times, 0.02 * np.arange(len(times)))
        assert small_traj.times[-1] == pytest.approx(1.2)

    def test_bond_monotone_and_binary(self, small_traj):
        for prev, state in zip(small_traj.states, small_traj.states[1:]):
            assert np.all(state.z <= prev.z)
            assert np.all((state.z == 0.0) | (state.z == 1.0))

    def test_full_debond_reached_and_flagged(self, small_traj):
        t_star = small_traj.t_full_debond
        assert t_star is not None
        k = small_traj.times.index(t_star)
        assert np.all(small_traj.states[k].z == 0.0)
        assert small_traj.states[k - 1].z.max() == 1.0

    def test_feasibility_throughout(self, small_traj):
        for report in small_traj.reports[1:]:
            assert report.min_gap >= -1e-10

    def test_reports_recompute(self, small_ops, small_traj):
        k = len(small_traj.states) // 2
        report = small_traj.reports[k]
        drive, psi = segment_energies(small_ops, small_traj.states[k].u)
        assert np.allclose(report.drive, drive, rtol=1e-12, atol=0)
        assert np.allclose(report.mixity, psi, rtol=1e-12, atol=1e-15)

    def test_early_stop_at_full_debond(self, small_ops):
        traj = run(small_ops, tau=0.02, t_end=1.2, stop_after_full_debond=0.0)
        assert traj.t_full_debond is not None
        assert traj.times[-1] == traj.t_full_debond

    def test_early_stop_with_margin(self, small_ops):
        margin = 2 * 0.02
        traj = run(small_ops, tau=0.02, t_end=1.2, stop_after_full_debond=margin)
        assert traj.times[-1] == pytest.approx(traj.t_full_debond + margin)

    def test_deterministic_rerun(self, small_ops, small_traj):
        other = run(small_ops, tau=0.02, t_end=1.2)
        assert other.times == small_traj.times
        assert other.t_full_debond == small_traj.t_full_debond
        for a, b in zip(other.states, small_traj.states):
            assert np.array_equal(a.u, b.u)
            assert np.array_equal(a.z, b.z)
        for a, b in zip(other.reports[1:], small_traj.reports[1:]):
            assert np.array_equal(a.drive, b.drive)
            assert np.array_equal(a.reaction, b.reaction)

    def test_partial_start_debonds_earlier(self, small_ops, small_traj):
        traj = run(small_ops, tau=0.02, t_end=1.2, z0=0.5)
        assert traj.t_full_debond <= small_traj.t_full_debond

    def test_invalid_grid_rejected(self, small_ops):
        with pytest.raises(ValueError, match="positive"):
            run(small_ops, tau=-0.1, t_end=1.0)
        with pytest.raises(ValueError, match="nonnegative"):
            run(small_ops, tau=0.1, t_end=-1.0)

    def test_qp_budget_failure_names_the_step(self):
        # compression drives the contact solve into an actual active-set
        # iteration, which a zero budget cannot finish
        config = parse_config(make_doc(loading={"direction": [-1.0, -0.6]}))
        ops = build_simulation(config)[1]
        with pytest.raises(QpNonconvergenceError, match=r"step 1 \(t="):
            run(ops, tau=0.02, t_end=0.2, qp_max_iter=0)


class TestInterpolantEval:
    def test_grid_point_semantics(self, small_traj):
        k = 7
        t_k = small_traj.times[k]
        assert interpolant_eval(small_traj, t_k, "left") is small_traj.states[k]
        assert interpolant_eval(small_traj, t_k, "linear") is small_traj.states[k]
        assert interpolant_eval(small_traj, t_k, "right") is small_traj.states[k - 1]
        assert interpolant_eval(small_traj, 0.0, "right") is small_traj.states[0]

    def test_open_interval_constant_kinds(self, small_traj):
        rng = np.random.default_rng(5)
        for _ in range(20):
            k = int(rng.integers(1, len(small_traj.times)))
            lo, hi = small_traj.times[k - 1], small_traj.times[k]
            t = lo + (hi - lo) * rng.uniform(0.05, 0.95)
            left = interpolant_eval(small_traj, t, "left")
            right = interpolant_eval(small_traj, t, "right")
            assert np.array_equal(left.u, small_traj.states[k].u)
            assert np.array_equal(right.u, small_traj.states[k - 1].u)
            assert np.array_equal(left.z, small_traj.states[k].z)
            assert np.array_equal(right.z, small_traj.states[k - 1].z)

    def test_midpoint_linear_is_mean(self, small_traj):
        k = 11
        t = 0.5 * (small_traj.times[k - 1] + small_traj.times[k])
        state = interpolant_eval(small_traj, t, "linear")
        mean = 0.5 * (small_traj.states[k - 1].u + small_traj.states[k].u)
        assert np.allclose(state.u, mean, rtol=0, atol=1e-18)
        # the bond field is BV in time: linear pairs with the left kind
        assert np.array_equal(state.z, small_traj.states[k].z)

    def test_out_of_range_rejected(self, small_traj):
        with pytest.raises(ValueError, match="outside"):
            interpolant_eval(small_traj, -0.5, "left")
        with pytest.raises(ValueError, match="outside"):
            interpolant_eval(small_traj, small_traj.times[-1] + 1.0, "left")

    def test_unknown_kind_rejected(self, small_traj):
        with pytest.raises(ValueError, match="kind"):
            interpolant_eval(small_traj, 0.03, "cubic")


def test_state_records_are_consistent(small_traj):
    for t, state in zip(small_traj.times, small_traj.states):
        assert state.t == t
        assert isinstance(state, State)
