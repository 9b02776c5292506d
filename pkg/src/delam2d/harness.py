"""Configured simulation runs and their on-disk outputs.

run_single executes one configuration and writes a self-describing
result directory: energies.csv and forces.csv on the time grid,
mixity.csv per interface segment, displacement snapshots, and a
meta.json echoing the canonical configuration.  Every CSV carries a
``# config_hash=`` header line; a directory holding output from a
different configuration is refused rather than silently mixed.

run_convergence repeats the run over a ladder of interface resolutions
at fixed time-step-to-cell-size ratio and reports pairwise distances
between the energy curves plus a table of trajectory norms.
run_chi_sweep repeats the run over a list of viscosity scales.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from .config import ConfigError, SimulationConfig, config_hash, parse_config
from .constitutive import AdhesiveLaw, IsotropicElasticity, ViscosityLaw
from .energetics import (
    EnergyLedger,
    build_ledger,
    mixity_histogram,
    trajectory_norms,
)
from .mesh import Mesh2D, _bottom_cell_counts, build_benchmark_mesh, build_two_body_mesh
from .qp import QpNonconvergenceError
from .stepper import InvariantViolation, Operators, Trajectory, build_operators, run

__all__ = [
    "HarnessError",
    "RunResult",
    "ConvergenceReport",
    "build_mesh",
    "build_simulation",
    "run_single",
    "run_convergence",
    "run_chi_sweep",
    "SNAPSHOT_FRACTIONS",
    "CURVE_SET",
]

# Default snapshot instants as fractions of the final time, clustered
# toward the end where the debonding front moves fastest.
SNAPSHOT_FRACTIONS = (0.4, 0.6, 0.75, 0.85, 0.92, 0.96, 0.98, 1.0)

# Ledger series compared across refinement levels.
CURVE_SET = (
    "bulk_elastic",
    "interface_elastic",
    "viscous_dissipated",
    "interface_dissipated",
    "external_work",
)


class HarnessError(RuntimeError):
    """Run-level failure: unusable output directory or bad run request."""


@dataclass(frozen=True)
class RunResult:
    config: SimulationConfig
    ops: Operators
    trajectory: Trajectory
    ledger: EnergyLedger
    norms: dict[str, float]
    out_dir: Path


@dataclass(frozen=True)
class ConvergenceReport:
    levels: tuple[int, ...]
    distances: dict[str, list[float]]  # curve -> consecutive-pair distances
    aggregate: list[float]
    norms: dict[int, dict[str, float]]
    norm_ratios: dict[str, float]
    out_dir: Path


def _fmt(x) -> str:
    return repr(float(x))


def build_mesh(config: SimulationConfig) -> Mesh2D:
    geo = config.geometry
    builder = build_benchmark_mesh if geo.foundation == "rigid" else build_two_body_mesh
    return builder(geo.L, geo.H, geo.n_interface, geo.glued_fraction, geo.glued_from)


def _dirichlet_motion(mesh: Mesh2D, velocity: np.ndarray):
    """Boundary motion t -> velocity * t on the driven nodes.

    On a rigid foundation every Dirichlet node is driven.  In the
    two-body variant only the upper body's edge moves; the lower body's
    clamped nodes stay at zero.
    """
    if mesh.foundation == "rigid":
        return lambda t: velocity * t
    nodes = np.array(sorted(mesh.dirichlet_nodes), dtype=np.int64)
    driven = (mesh.node_body[nodes] == 0).astype(float)[:, None]
    return lambda t: driven * (velocity * t)


def build_simulation(
    config: SimulationConfig, chi: float | None = None
) -> tuple[Mesh2D, Operators]:
    """Mesh and assembled operators for one configuration.

    chi overrides the configured viscosity scale (used by the sweep
    driver); everything else comes from the configuration.
    """
    mesh = build_mesh(config)
    velocity = config.loading.speed * np.array(config.loading.unit_direction())
    ops = build_operators(
        mesh,
        IsotropicElasticity(E=config.material.E, nu=config.material.nu),
        ViscosityLaw(chi=config.material.chi if chi is None else chi),
        AdhesiveLaw(
            kappa_n=config.adhesive.kappa_n,
            kappa_t=config.adhesive.kappa_t,
            mode1_toughness=config.adhesive.a_I,
            mode_sensitivity=config.adhesive.mode_sensitivity,
            mixity_regularization=config.adhesive.eps_reg,
        ),
        _dirichlet_motion(mesh, velocity),
    )
    return mesh, ops


def _check_provenance(out: Path, digest: str) -> None:
    """Refuse to write into a directory produced by a different config."""
    meta = out / "meta.json"
    if meta.exists():
        try:
            previous = json.loads(meta.read_text(encoding="utf-8")).get("config_hash")
        except (OSError, json.JSONDecodeError) as err:
            raise HarnessError(f"{meta}: unreadable metadata ({err})") from err
        if previous != digest:
            raise HarnessError(
                f"{out}: holds output for config {previous}, refusing to mix "
                f"with {digest}; use a fresh directory"
            )
        return
    for path in sorted(out.glob("*.csv")):
        with open(path, encoding="utf-8") as f:
            first = f.readline().strip()
        if first.startswith("# config_hash=") and first.split("=", 1)[1] != digest:
            raise HarnessError(
                f"{path}: written by a different configuration, refusing to mix"
            )


def _write_csv(path: Path, digest: str, columns: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        out.write(f"# config_hash={digest}\n")
        out.write(",".join(columns) + "\n")
        for row in rows:
            out.write(",".join(row) + "\n")


def _write_snapshot(path: Path, digest: str, mesh: Mesh2D, state) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        out.write(f"# config_hash={digest}\n")
        out.write(f"# t={_fmt(state.t)}\n")
        out.write("nodes\nid,x,y,ux,uy\n")
        for i, (x, y) in enumerate(mesh.nodes):
            out.write(
                f"{i},{_fmt(x)},{_fmt(y)},{_fmt(state.u[2 * i])},{_fmt(state.u[2 * i + 1])}\n"
            )
        out.write("interface\nid,x_mid,z\n")
        for e, seg in enumerate(mesh.interface_segments):
            xm = 0.5 * (mesh.nodes[seg.node_plus[0]][0] + mesh.nodes[seg.node_plus[1]][0])
            out.write(f"{e},{_fmt(xm)},{_fmt(state.z[e])}\n")


def _snapshot_instants(config: SimulationConfig):
    if config.outputs.snapshot_times is not None:
        return config.outputs.snapshot_times
    return tuple(f * config.time.T for f in SNAPSHOT_FRACTIONS)


def _planned_snapshot_steps(config: SimulationConfig, tau: float) -> set[int]:
    """Step indices to snapshot as the run passes them (unclamped)."""
    return {max(0, round(t / tau)) for t in _snapshot_instants(config)}


def _snapshot_indices(config: SimulationConfig, traj: Trajectory, tau: float) -> list[int]:
    last = len(traj.states) - 1
    picked = sorted(
        {min(last, max(0, round(t / tau))) for t in _snapshot_instants(config)}
    )
    return picked


def run_single(
    config: SimulationConfig,
    out_dir,
    chi: float | None = None,
    write_outputs: bool = True,
) -> RunResult:
    """Run one configuration and write its result directory.

    Snapshots are written as their instants pass, so a long run can be
    inspected mid-flight; the remaining files land at the end.  When the
    stepper aborts, the outputs for the completed steps are still
    written before the error propagates.
    """
    mesh, ops = build_simulation(config, chi)
    digest = config_hash(config)
    tau = config.time.tau
    started = time.perf_counter()

    on_step = None
    if write_outputs:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _check_provenance(out, digest)
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        planned = _planned_snapshot_steps(config, tau)

        def on_step(state, report):
            k = round(state.t / tau)
            if k in planned:
                _write_snapshot(snap_dir / f"snapshot_{k:05d}.csv", digest, mesh, state)

    def emit(traj) -> RunResult:
        ledger = build_ledger(ops, traj)
        norms = trajectory_norms(ops, traj)
        out = Path(out_dir)
        if write_outputs:
            runtime = time.perf_counter() - started
            _write_run_outputs(config, ops, traj, ledger, norms, out, digest, chi, runtime)
        return RunResult(
            config=config, ops=ops, trajectory=traj, ledger=ledger, norms=norms, out_dir=out
        )

    try:
        traj = run(
            ops,
            tau=tau,
            t_end=config.time.T,
            qp_tol=config.solver.qp_tol,
            qp_max_iter=config.solver.qp_max_iter,
            stop_after_full_debond=config.time.stop_after_full_debond,
            energy_tol_factor=config.solver.energy_tol_factor,
            on_step=on_step,
        )
    except (QpNonconvergenceError, InvariantViolation) as err:
        partial = getattr(err, "trajectory", None)
        if partial is not None and partial.states and write_outputs:
            try:
                emit(partial)
            except Exception:
                pass  # partial outputs are best-effort; the solver error wins
        raise
    return emit(traj)


def _write_run_outputs(
    config: SimulationConfig,
    ops: Operators,
    traj: Trajectory,
    ledger: EnergyLedger,
    norms: dict[str, float],
    out: Path,
    digest: str,
    chi: float | None,
    runtime: float,
) -> None:
    total = ledger.total_energy()
    _write_csv(
        out / "energies.csv",
        digest,
        ["t", *CURVE_SET[:-1], "total", "external_work", "gap"],
        (
            [
                _fmt(ledger.t[k]),
                *(_fmt(getattr(ledger, name)[k]) for name in CURVE_SET[:-1]),
                _fmt(total[k]),
                _fmt(ledger.external_work[k]),
                _fmt(ledger.gap[k]),
            ]
            for k in range(len(ledger.t))
        ),
    )

    lengths = ops.seg_length
    _write_csv(
        out / "forces.csv",
        digest,
        ["t", "reaction_x", "reaction_y", "bonded_length", "min_gap"],
        (
            [
                _fmt(rep.t),
                _fmt(rep.reaction[0]),
                _fmt(rep.reaction[1]),
                _fmt(float(traj.states[k].z @ lengths)) if lengths.size else _fmt(0.0),
                _fmt(rep.min_gap),
            ]
            for k, rep in enumerate(traj.reports)
            if rep is not None
        ),
    )

    mix = mixity_histogram(ops, traj)
    _write_csv(
        out / "mixity.csv",
        digest,
        [
            "segment",
            "x_mid",
            "debonded",
            "debond_time",
            "mixity_angle",
            "dissipated_density",
            "ratio",
        ],
        (
            [
                str(int(mix.segment[e])),
                _fmt(mix.x_mid[e]),
                str(int(mix.debonded[e])),
                _fmt(mix.debond_time[e]),
                _fmt(mix.mixity_angle[e]),
                _fmt(mix.dissipated_density[e]),
                _fmt(mix.ratio[e]),
            ]
            for e in range(len(mix.segment))
        ),
    )

    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for k in _snapshot_indices(config, traj, config.time.tau):
        _write_snapshot(snap_dir / f"snapshot_{k:05d}.csv", digest, ops.mesh, traj.states[k])

    from . import __version__

    final = traj.states[-1]
    meta = {
        "package": "delam2d",
        "versions": {
            "delam2d": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "config_hash": digest,
        "config": config.canonical,
        "defaults_applied": list(config.defaults_applied),
        "chi_effective": config.material.chi if chi is None else chi,
        "runtime_s": round(runtime, 3),
        "n_steps": traj.n_steps,
        "t_end": float(traj.times[-1]),
        "t_full_debond": traj.t_full_debond,
        "bonded_length_final": float(final.z @ lengths) if lengths.size else 0.0,
        "external_work_final": float(ledger.external_work[-1]),
        "energy_gap_final": float(ledger.gap[-1]),
        "norms": {k: float(v) for k, v in norms.items()},
    }
    with open(out / "meta.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def _level_config(config: SimulationConfig, n_interface: int) -> SimulationConfig:
    """Configuration for one refinement level.

    The time step scales with the cell size so the ratio tau/h stays
    fixed across the ladder; n_interface is the only other change.
    """
    geo = config.geometry
    nx_ref, _ = _bottom_cell_counts(geo.n_interface, geo.glued_fraction)
    nx_new, _ = _bottom_cell_counts(n_interface, geo.glued_fraction)
    doc = json.loads(json.dumps(config.canonical))
    doc["geometry"]["n_interface"] = n_interface
    doc["material"]["chi"] = config.material.chi
    doc["time"]["tau"] = config.time.tau * (nx_ref / nx_new)
    return parse_config(doc)


def _level_payload(result: RunResult) -> dict:
    ledger = result.ledger
    geo = result.config.geometry
    nx, _ = _bottom_cell_counts(geo.n_interface, geo.glued_fraction)
    return {
        "n_interface": geo.n_interface,
        "n_total": nx,
        "h": result.ops.mesh.h,
        "tau": result.config.time.tau,
        "n_steps": result.trajectory.n_steps,
        "t_full_debond": result.trajectory.t_full_debond,
        "t": ledger.t.tolist(),
        "curves": {name: getattr(ledger, name).tolist() for name in CURVE_SET},
        "norms": {k: float(v) for k, v in result.norms.items()},
    }


def _convergence_worker(payload: tuple[str, str]) -> dict:
    doc_json, out_dir = payload
    config = parse_config(json.loads(doc_json))
    return _level_payload(run_single(config, out_dir))


def _curve_distance(t_eval, t_a, f_a, t_b, f_b) -> float:
    """Discrete L2 distance of two time curves on an evaluation grid."""
    t_eval = np.asarray(t_eval, dtype=float)
    fa = np.interp(t_eval, np.asarray(t_a), np.asarray(f_a))
    fb = np.interp(t_eval, np.asarray(t_b), np.asarray(f_b))
    diff = fa - fb
    if len(t_eval) < 2:
        return float(np.abs(diff).max(initial=0.0))
    w = np.empty_like(t_eval)
    w[1:-1] = 0.5 * (t_eval[2:] - t_eval[:-2])
    w[0] = 0.5 * (t_eval[1] - t_eval[0])
    w[-1] = 0.5 * (t_eval[-1] - t_eval[-2])
    return float(np.sqrt((w * diff**2).sum()))


def run_convergence(
    config: SimulationConfig,
    out_dir,
    levels: tuple[int, ...] = (27, 54, 81),
    threads: int = 1,
) -> ConvergenceReport:
    """Refinement study over interface resolutions at fixed tau/h.

    Each level runs in its own subdirectory level_NNN.  Consecutive
    levels are compared by the discrete L2 distance of each energy
    curve evaluated on the coarsest level's time grid, and the
    trajectory norms are tabulated so boundedness under refinement can
    be checked.
    """
    if len(levels) < 2:
        raise HarnessError("a convergence study needs at least two levels")
    if sorted(levels) != list(levels):
        raise HarnessError(f"levels must increase, got {levels}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    configs = [_level_config(config, n) for n in levels]
    jobs = [
        (json.dumps(cfg.canonical), str(out / f"level_{n:03d}"))
        for cfg, n in zip(configs, levels)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            payloads = list(pool.map(_convergence_worker, jobs))
    else:
        payloads = [_convergence_worker(job) for job in jobs]

    coarse = payloads[0]
    distances: dict[str, list[float]] = {name: [] for name in CURVE_SET}
    aggregate: list[float] = []
    for a, b in zip(payloads[:-1], payloads[1:]):
        total = 0.0
        for name in CURVE_SET:
            d = _curve_distance(
                coarse["t"], a["t"], a["curves"][name], b["t"], b["curves"][name]
            )
            distances[name].append(d)
            total += d * d
        aggregate.append(float(np.sqrt(total)))

    norms = {p["n_interface"]: p["norms"] for p in payloads}
    norm_ratios = {}
    for key in next(iter(norms.values())):
        vals = np.array([norms[n][key] for n in levels])
        lo = float(vals.min())
        norm_ratios[key] = float(vals.max() / lo) if lo > 0 else float("inf")

    digest = config_hash(config)
    pair_names = [f"{a:03d}_{b:03d}" for a, b in zip(levels[:-1], levels[1:])]
    rows = []
    for name in CURVE_SET:
        for pair, d in zip(pair_names, distances[name]):
            rows.append([name, pair, _fmt(d)])
    for pair, d in zip(pair_names, aggregate):
        rows.append(["aggregate", pair, _fmt(d)])
    _write_csv(out / "convergence.csv", digest, ["curve", "pair", "distance_l2"], rows)

    report = {
        "config_hash": digest,
        "levels": [
            {k: p[k] for k in ("n_interface", "n_total", "h", "tau", "n_steps", "t_full_debond")}
            for p in payloads
        ],
        "distances": distances,
        "aggregate": aggregate,
        "distances_decrease": all(x > y for x, y in zip(aggregate[:-1], aggregate[1:])),
        "norms": {str(k): v for k, v in norms.items()},
        "norm_ratios": norm_ratios,
        "norm_ratio_max": max(norm_ratios.values()),
    }
    with open(out / "report.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")

    return ConvergenceReport(
        levels=tuple(levels),
        distances=distances,
        aggregate=aggregate,
        norms=norms,
        norm_ratios=norm_ratios,
        out_dir=out,
    )


def run_chi_sweep(config: SimulationConfig, out_dir) -> list[RunResult]:
    """Run the configuration once per viscosity scale in its chi list."""
    chis = config.chi_sweep if config.chi_sweep is not None else (config.material.chi,)
    out = Path(out_dir)
    results = []
    summary = []
    for chi in chis:
        sub = out / f"chi_{chi:g}"
        result = run_single(config, sub, chi=chi)
        results.append(result)
        summary.append(
            {
                "chi": chi,
                "directory": sub.name,
                "t_full_debond": result.trajectory.t_full_debond,
                "external_work_final": float(result.ledger.external_work[-1]),
                "viscous_dissipated_final": float(result.ledger.viscous_dissipated[-1]),
            }
        )
    if len(chis) > 1:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.json", "w", encoding="utf-8", newline="\n") as f:
            json.dump({"config_hash": config_hash(config), "runs": summary}, f, indent=2, sort_keys=True)
            f.write("\n")
    return results
