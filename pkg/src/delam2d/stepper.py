"""Semi-implicit quasistatic evolution of the bonded bar.

Each time step decouples into two convex problems.  First the
displacement solves a strictly convex QP: elastic plus glue energy (the
glue weighted by the PREVIOUS bond field) plus the viscous penalty on
the increment, under the nodal non-penetration constraints and the
driven boundary values at the new time.  Then every interface segment
compares its stored glue energy against the mode-dependent dissipation
threshold and debonds, irreversibly, when the energy wins.

Conventions: dofs interleave as (2*node, 2*node + 1); time grid t_k =
k*tau; energies are per unit out-of-plane thickness.  Per-step records
carry enough to audit the scheme's inequalities without re-solving.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import assembly, qp
from .assembly import ConstraintMatrix, DofMap
from .constitutive import (
    AdhesiveLaw,
    IsotropicElasticity,
    ViscosityLaw,
    elasticity_tensor,
)
from .mesh import Mesh2D

__all__ = [
    "State",
    "StepEnergy",
    "StepReport",
    "Trajectory",
    "Operators",
    "InvariantViolation",
    "build_operators",
    "init_state",
    "displacement_step",
    "delamination_step",
    "segment_energies",
    "run",
    "interpolant_eval",
]

FEASIBILITY_TOL = 1e-10  # meters of admissible interpenetration
ENERGY_TOL_FACTOR = 1e-8  # of the running energy scale, per step


class InvariantViolation(RuntimeError):
    """A structural inequality of the scheme failed beyond tolerance.

    Carries the partial trajectory computed so far for post-mortem work.
    """

    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class State:
    """Solution snapshot: time, full displacement vector, per-segment bond."""

    t: float
    u: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class StepEnergy:
    """Energy bookkeeping of one step, all per unit thickness (J/m).

    inequality_residual is external work minus stored increment minus
    dissipation; the scheme guarantees it nonnegative up to solver
    tolerance, and its running sum is the work-energy gap.
    """

    stored_bulk: float
    stored_interface: float
    viscous_increment: float
    debond_increment: float
    device_work_increment: float
    load_work_increment: float
    inequality_residual: float


@dataclass(frozen=True)
class StepReport:
    t: float
    qp_iterations: int
    active_constraints: tuple[int, ...]
    kkt: qp.KktResiduals
    debonded: tuple[int, ...]
    drive: np.ndarray  # per-segment glue energy integral (J/m)
    threshold: np.ndarray  # per-segment dissipation bound (J/m)
    mixity: np.ndarray  # per-segment midpoint mixity angle (rad)
    reaction: np.ndarray  # device force resultant (N/m)
    min_gap: float
    energy: StepEnergy


@dataclass
class Trajectory:
    times: list[float]
    states: list[State]
    reports: list[StepReport | None]  # index 0 is None
    t_full_debond: float | None = None

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class Operators:
    """Assembled time-independent operators of one problem instance."""

    mesh: Mesh2D
    elasticity: IsotropicElasticity
    viscosity: ViscosityLaw
    adhesive: AdhesiveLaw
    C: np.ndarray
    K: sp.csr_matrix
    V: sp.csr_matrix
    dofmap: DofMap
    constraint: ConstraintMatrix
    loads: Callable[[float], np.ndarray]
    seg_plus: np.ndarray = field(repr=False, default=None)
    seg_minus: np.ndarray = field(repr=False, default=None)
    seg_normal: np.ndarray = field(repr=False, default=None)
    seg_length: np.ndarray = field(repr=False, default=None)

    @property
    def n_segments(self) -> int:
        return len(self.mesh.interface_segments)


def _zero_loads(n_dofs: int) -> Callable[[float], np.ndarray]:
    zeros = np.zeros(n_dofs)
    return lambda t: zeros


def build_operators(
    mesh: Mesh2D,
    elasticity: IsotropicElasticity,
    viscosity: ViscosityLaw,
    adhesive: AdhesiveLaw,
    dirichlet_values: Callable[[float], np.ndarray],
    body_force=None,
    boundary_traction=None,
) -> Operators:
    """Assemble everything that does not change during the evolution."""
    C = elasticity_tensor(elasticity)
    K = assembly.assemble_stiffness(mesh, C)
    V = assembly.assemble_viscosity(K, viscosity.chi)
    dofmap = assembly.dirichlet_map(mesh, dirichlet_values)
    constraint = assembly.constraint_matrix(mesh, dofmap)
    if body_force is None and boundary_traction is None:
        loads = _zero_loads(mesh.n_dofs)
    else:
        loads = lambda t: assembly.assemble_loads(mesh, t, body_force, boundary_traction)

    segs = mesh.interface_segments
    return Operators(
        mesh=mesh,
        elasticity=elasticity,
        viscosity=viscosity,
        adhesive=adhesive,
        C=C,
        K=K,
        V=V,
        dofmap=dofmap,
        constraint=constraint,
        loads=loads,
        seg_plus=np.array([s.node_plus for s in segs], dtype=np.int64).reshape(-1, 2),
        seg_minus=np.array([s.node_minus for s in segs], dtype=np.int64).reshape(-1, 2),
        seg_normal=np.array([s.normal for s in segs], dtype=float).reshape(-1, 2),
        seg_length=np.array([s.length for s in segs], dtype=float),
    )


def _segment_jumps(ops: Operators, u: np.ndarray, s: float) -> np.ndarray:
    """(n_segments, 2) jump vectors at barycentric position s along each segment."""
    if ops.n_segments == 0:
        return np.zeros((0, 2))
    up_a = np.column_stack([u[2 * ops.seg_plus[:, 0]], u[2 * ops.seg_plus[:, 0] + 1]])
    up_b = np.column_stack([u[2 * ops.seg_plus[:, 1]], u[2 * ops.seg_plus[:, 1] + 1]])
    plus = (1.0 - s) * up_a + s * up_b
    if ops.mesh.foundation == "rigid":
        return -plus
    um_a = np.column_stack(
        [u[2 * ops.seg_minus[:, 0]], u[2 * ops.seg_minus[:, 0] + 1]]
    )
    um_b = np.column_stack(
        [u[2 * ops.seg_minus[:, 1]], u[2 * ops.seg_minus[:, 1] + 1]]
    )
    minus = (1.0 - s) * um_a + s * um_b
    return minus - plus


def segment_energies(ops: Operators, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Glue energy integral per segment and midpoint mixity angle.

    drive[e] integrates (1/2)(kappa_n j_n^2 + kappa_t |j_t|^2) exactly
    over segment e (two-point Gauss on the quadratic integrand) for a
    fully intact bond; the stored interface energy is z[e] * drive[e].
    """
    law = ops.adhesive
    m = ops.n_segments
    drive = np.zeros(m)
    if m == 0:
        return drive, np.zeros(0)
    for s in assembly.GAUSS_2PT:
        j = _segment_jumps(ops, u, s)
        jn = np.einsum("ec,ec->e", j, ops.seg_normal)
        jt = j - jn[:, None] * ops.seg_normal
        jt2 = np.einsum("ec,ec->e", jt, jt)
        drive += 0.25 * (law.kappa_n * jn * jn + law.kappa_t * jt2)
    drive *= ops.seg_length

    j_mid = _segment_jumps(ops, u, 0.5)
    jn = np.einsum("ec,ec->e", j_mid, ops.seg_normal)
    jt = j_mid - jn[:, None] * ops.seg_normal
    num = law.kappa_t * np.einsum("ec,ec->e", jt, jt)
    den = law.kappa_n * jn * jn + law.mixity_regularization
    psi = np.zeros(m)
    pos = den > 0.0
    psi[pos] = np.arctan(np.sqrt(num[pos] / den[pos]))
    psi[~pos & (num > 0.0)] = 0.5 * math.pi
    return drive, psi


def _thresholds(law: AdhesiveLaw, psi: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Per-segment dissipation bound: a(psi at midpoint) times the length."""
    arg = (1.0 - law.mode_sensitivity) * psi
    a = np.full_like(psi, np.inf)
    ok = arg < 0.5 * math.pi
    t = np.tan(arg[ok])
    a[ok] = law.mode1_toughness * (1.0 + t * t)
    return a * lengths


class _StepOperator:
    """Cached per-bond-field pieces: QP Hessian factorization and slices."""

    def __init__(self, ops: Operators, z: np.ndarray, tau: float):
        self.ops = ops
        self.z = z.copy()
        self.tau = tau
        A = assembly.assemble_interface(ops.mesh, ops.adhesive, z)
        self.C_hat = (ops.K + A).tocsr()
        free = ops.dofmap.free
        H_full = (self.C_hat + ops.V / tau).tocsr()
        self.H = H_full[free][:, free].tocsc()
        self.factor = qp.factorize(self.H)

    def gradient(self, u_prev: np.ndarray, t_next: float, loads: np.ndarray) -> np.ndarray:
        ops = self.ops
        u_ext = ops.dofmap.prescribed_full(t_next)
        g_full = self.C_hat @ u_ext + ops.V @ ((u_ext - u_prev) / self.tau) - loads
        return g_full[ops.dofmap.free]


def init_state(ops: Operators, u0: np.ndarray | None = None, z0=None) -> State:
    """Validated initial state; defaults to rest and a fully intact bond."""
    n = ops.mesh.n_dofs
    u = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float).copy()
    if u.shape != (n,):
        raise ValueError(f"initial displacement must have shape ({n},), got {u.shape}")
    m = ops.n_segments
    if z0 is None:
        z = np.ones(m)
    elif np.isscalar(z0):
        z = np.full(m, float(z0))
    else:
        z = np.asarray(z0, dtype=float).copy()
    if z.shape != (m,):
        raise ValueError(f"bond field must have shape ({m},), got {z.shape}")
    if z.size and (z.min() < 0.0 or z.max() > 1.0):
        raise ValueError("bond fractions must lie in [0, 1]")
    gaps = ops.constraint.gaps(u)
    if gaps.size and float(gaps.min()) < -FEASIBILITY_TOL:
        raise ValueError(
            f"initial displacement penetrates the foundation by {-gaps.min():.3e}"
        )
    expected = ops.dofmap.prescribed_values(0.0)
    if np.abs(u[ops.dofmap.prescribed] - expected).max(initial=0.0) > 1e-12:
        raise ValueError("initial displacement disagrees with the boundary drive at t=0")
    return State(t=0.0, u=u, z=z)


def displacement_step(
    ops: Operators,
    state: State,
    tau: float,
    t_next: float,
    qp_tol: float = 1e-10,
    qp_max_iter: int | None = None,
    warm_start: tuple[int, ...] | None = None,
    step_op: _StepOperator | None = None,
) -> tuple[np.ndarray, qp.QpSolution]:
    """Solve the convex displacement program of one step.

    Minimizes stored energy (glue weighted by state.z) plus the viscous
    increment penalty at the driven boundary values of t_next, subject
    to non-penetration.  Returns the full displacement vector and the QP
    solution record.
    """
    if tau <= 0:
        raise ValueError(f"time step must be positive, got {tau}")
    if step_op is None or not np.array_equal(step_op.z, state.z) or step_op.tau != tau:
        step_op = _StepOperator(ops, state.z, tau)
    loads = ops.loads(t_next)
    g = step_op.gradient(state.u, t_next, loads)
    problem = qp.QpProblem(
        H=step_op.H, g=g, B=ops.constraint.rows, c=ops.constraint.offset(t_next)
    )
    fixed = ops.constraint.fixed_offsets(t_next)
    if fixed.size and float(fixed.min()) < -FEASIBILITY_TOL:
        raise InvariantViolation(
            "driven boundary values penetrate the foundation at a fully prescribed "
            f"interface node (worst gap {fixed.min():.3e})"
        )
    sol = qp.solve_qp(
        problem, tol=qp_tol, max_iter=qp_max_iter, warm_start=warm_start,
        factor=step_op.factor,
    )
    u_full = np.zeros(ops.mesh.n_dofs)
    u_full[ops.dofmap.free] = sol.x
    u_full[ops.dofmap.prescribed] = ops.dofmap.prescribed_values(t_next)
    return u_full, sol


def delamination_step(
    ops: Operators, u_next: np.ndarray, z_prev: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-segment bond update after the displacement solve.

    A segment debonds (z drops to zero) exactly when its glue energy
    integral exceeds the mixity-dependent threshold; an exact tie keeps
    the bond.  Returns (z_next, drive, threshold, mixity).
    """
    drive, psi = segment_energies(ops, u_next)
    threshold = _thresholds(ops.adhesive, psi, ops.seg_length)
    release = (z_prev > 0.0) & (drive > threshold)
    z_next = np.where(release, 0.0, z_prev)
    return z_next, drive, threshold, psi


def _stored_split(ops: Operators, u: np.ndarray, z: np.ndarray, drive: np.ndarray | None = None) -> tuple[float, float]:
    bulk = 0.5 * float(u @ (ops.K @ u))
    if drive is None:
        drive, _ = segment_energies(ops, u)
    interface = float(z @ drive) if len(drive) else 0.0
    return bulk, interface


def run(
    ops: Operators,
    tau: float,
    t_end: float,
    qp_tol: float = 1e-10,
    qp_max_iter: int | None = None,
    u0: np.ndarray | None = None,
    z0=None,
    stop_after_full_debond: float | None = None,
    check_invariants: bool = True,
    energy_tol_factor: float = ENERGY_TOL_FACTOR,
    on_step: Callable[[State, StepReport], None] | None = None,
) -> Trajectory:
    """March the coupled evolution from 0 to t_end in steps of tau.

    Runtime invariants (feasibility, bond monotonicity, the per-step
    energy inequality, semistability) are asserted each step when
    check_invariants is on; a violation aborts with the partial
    trajectory attached to the raised error.  stop_after_full_debond,
    when set, ends the run that many seconds after the bond field hits
    zero everywhere.
    """
    if t_end < 0:
        raise ValueError(f"final time must be nonnegative, got {t_end}")
    if tau <= 0:
        raise ValueError(f"time step must be positive, got {tau}")
    state = init_state(ops, u0, z0)
    traj = Trajectory(times=[0.0], states=[state], reports=[None])
    if len(state.z) and state.z.max() == 0.0:
        traj.t_full_debond = 0.0

    n_steps = max(0, round(t_end / tau))
    if n_steps * tau < t_end - 1e-9 * max(tau, t_end):
        n_steps += 1

    drive_prev, _ = segment_energies(ops, state.u)
    bulk_prev, interface_prev = _stored_split(ops, state.u, state.z, drive_prev)
    step_op = _StepOperator(ops, state.z, tau)
    warm: tuple[int, ...] = ()
    dissipated_total = 0.0
    work_total = 0.0

    for k in range(1, n_steps + 1):
        t_k = k * tau
        try:
            u_next, sol = displacement_step(
                ops, state, tau, t_k, qp_tol, qp_max_iter, warm, step_op
            )
        except qp.QpNonconvergenceError as err:
            err.args = (f"step {k} (t={t_k:.6g}): {err.args[0]}",)
            err.trajectory = traj  # completed steps, for post-mortem output
            raise
        z_next, drive, threshold, psi = delamination_step(ops, u_next, state.z)
        debonded = tuple(int(e) for e in np.nonzero(z_next < state.z)[0])

        loads = ops.loads(t_k)
        du = u_next - state.u
        viscous_inc = float(du @ (ops.V @ du)) / tau
        debond_inc = float(
            ((state.z - z_next) * threshold)[list(debonded)].sum()
        ) if debonded else 0.0
        residual_full = step_op.C_hat @ u_next + ops.V @ (du / tau) - loads
        r_presc = residual_full[ops.dofmap.prescribed]
        reaction = np.array([r_presc[0::2].sum(), r_presc[1::2].sum()])
        device_inc = float(r_presc @ du[ops.dofmap.prescribed])
        load_inc = float(loads @ du)

        bulk, interface = _stored_split(ops, u_next, z_next, drive)
        stored_inc = (bulk + interface) - (bulk_prev + interface_prev)
        residual = device_inc + load_inc - stored_inc - debond_inc - viscous_inc

        gaps = ops.constraint.gaps(u_next)
        min_gap = float(gaps.min()) if gaps.size else 0.0

        energy = StepEnergy(
            stored_bulk=bulk,
            stored_interface=interface,
            viscous_increment=viscous_inc,
            debond_increment=debond_inc,
            device_work_increment=device_inc,
            load_work_increment=load_inc,
            inequality_residual=residual,
        )
        report = StepReport(
            t=t_k,
            qp_iterations=sol.iterations,
            active_constraints=sol.active_set,
            kkt=sol.kkt,
            debonded=debonded,
            drive=drive,
            threshold=threshold,
            mixity=psi,
            reaction=reaction,
            min_gap=min_gap,
            energy=energy,
        )
        new_state = State(t=t_k, u=u_next, z=z_next)
        traj.times.append(t_k)
        traj.states.append(new_state)
        traj.reports.append(report)

        dissipated_total += viscous_inc + debond_inc
        work_total += device_inc + load_inc
        if check_invariants:
            # Tolerance is relative to the energies the run has moved so
            # far, not to the current increments, which vanish once the
            # evolution settles while roundoff in the residual does not.
            energy_scale = max(
                bulk + interface, dissipated_total, abs(work_total), 1e-30
            )
            _check_step(ops, traj, state, new_state, report, energy_tol_factor, energy_scale)

        if on_step is not None:
            on_step(new_state, report)

        if traj.t_full_debond is None and len(z_next) and z_next.max() == 0.0:
            traj.t_full_debond = t_k
        if (
            stop_after_full_debond is not None
            and traj.t_full_debond is not None
            and t_k >= traj.t_full_debond + stop_after_full_debond - 1e-12
        ):
            break

        if not np.array_equal(z_next, state.z):
            step_op = _StepOperator(ops, z_next, tau)
        state = new_state
        bulk_prev, interface_prev = bulk, interface
        warm = sol.active_set

    return traj


def _check_step(
    ops: Operators,
    traj: Trajectory,
    old: State,
    new: State,
    report: StepReport,
    energy_tol_factor: float,
    energy_scale: float,
) -> None:
    t = report.t
    if report.min_gap < -FEASIBILITY_TOL:
        raise InvariantViolation(
            f"t={t:.6g}: interface penetration {-report.min_gap:.3e} m", traj
        )
    if len(new.z) and float((new.z - old.z).max(initial=0.0)) > 0.0:
        raise InvariantViolation(f"t={t:.6g}: bond fraction increased somewhere", traj)
    if len(new.z) and (new.z.min() < 0.0 or new.z.max() > 1.0):
        raise InvariantViolation(f"t={t:.6g}: bond fraction left [0, 1]", traj)

    e = report.energy
    if e.inequality_residual < -energy_tol_factor * energy_scale:
        raise InvariantViolation(
            f"t={t:.6g}: per-step energy inequality violated by "
            f"{-e.inequality_residual:.3e} (scale {energy_scale:.3e})",
            traj,
        )

    # semistability, disintegrated per segment: z * (2 * drive) <= 2 * threshold
    if len(new.z):
        lhs = new.z * 2.0 * report.drive
        rhs = 2.0 * report.threshold
        bad = (new.z > 0.0) & (lhs > rhs + 1e-9 * np.maximum(rhs, 1e-30))
        if bad.any():
            raise InvariantViolation(
                f"t={t:.6g}: semistability violated on segments {np.nonzero(bad)[0].tolist()}",
                traj,
            )


def interpolant_eval(traj: Trajectory, t: float, kind: str) -> State:
    """Evaluate the trajectory between grid points.

    kind 'left' gives the piecewise-constant interpolant taking the
    value of the interval's right endpoint (continuous from the left),
    'right' the one taking the left endpoint's value, and 'linear' the
    piecewise-affine displacement.  The bond field is BV in time, so the
    linear kind pairs the affine displacement with the left-kind bond.
    """
    times = traj.times
    if not times:
        raise ValueError("empty trajectory")
    t_end = times[-1]
    if t < -1e-12 or t > t_end * (1.0 + 1e-12) + 1e-300:
        raise ValueError(f"time {t} outside [0, {t_end}]")
    t = min(max(t, 0.0), t_end)
    k = bisect.bisect_left(times, t)
    if k < len(times) and times[k] == t:
        if kind == "left" or kind == "linear":
            return traj.states[k]
        if kind == "right":
            return traj.states[max(k - 1, 0)]
        raise ValueError(f"unknown interpolant kind {kind!r}")
    lo, hi = traj.states[k - 1], traj.states[k]
    if kind == "left":
        return State(t=t, u=hi.u, z=hi.z)
    if kind == "right":
        return State(t=t, u=lo.u, z=lo.z)
    if kind == "linear":
        w = (t - lo.t) / (hi.t - lo.t)
        return State(t=t, u=(1.0 - w) * lo.u + w * hi.u, z=hi.z)
    raise ValueError(f"unknown interpolant kind {kind!r}")
