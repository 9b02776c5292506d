"""Convex quadratic programs with inequality constraints.

Solves min 0.5 x.Hx + g.x subject to B x + c >= 0 for symmetric positive
definite H by a primal active-set method.  Each outer iteration solves
the equality-constrained subproblem of the current working set through
the Schur complement on the multipliers, reusing a single factorization
of H; columns H^{-1} B_i^T are cached per constraint so warm-started
re-solves touch only the rows that change.

Determinism: ties in the blocking-constraint ratio test and in the
multiplier removal rule are broken by the lowest constraint index, so
identical inputs give identical iterates.  A brute-force oracle
(subset enumeration, usable up to 20 constraints) provides an
independent reference for testing.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

__all__ = [
    "QpProblem",
    "QpSolution",
    "KktResiduals",
    "QpNonconvergenceError",
    "factorize",
    "solve_qp",
    "brute_force_qp",
    "kkt_check",
    "project_feasible",
    "dump_problem",
]


class QpNonconvergenceError(RuntimeError):
    """Active-set iteration exhausted its budget; carries the last iterate."""

    def __init__(self, message: str, x: np.ndarray, iterations: int):
        super().__init__(message)
        self.x = x
        self.iterations = iterations


@dataclass(frozen=True)
class QpProblem:
    """min 0.5 x.Hx + g.x  s.t.  B x + c >= 0.

    H must be symmetric positive definite (sparse or dense); B may have
    zero rows count (unconstrained).  Rows of B are assumed linearly
    independent, which holds for nodal non-penetration rows with
    disjoint supports.
    """

    H: object
    g: np.ndarray
    B: object
    c: np.ndarray

    @property
    def n(self) -> int:
        return len(self.g)

    @property
    def m(self) -> int:
        return len(self.c)

    def objective(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ (self.H @ x)) + float(self.g @ x)

    def slacks(self, x: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return np.zeros(0)
        return self.B @ x + self.c


@dataclass(frozen=True)
class KktResiduals:
    """Scaled optimality certificates; all should sit at solver tolerance."""

    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    active_set: tuple[int, ...]
    multipliers: np.ndarray  # length m, zero off the active set
    kkt: KktResiduals
    iterations: int
    objective: float
    objective_trace: tuple[float, ...] = field(default=(), repr=False)


class _Factor:
    """Uniform solve interface over dense Cholesky and sparse LU."""

    def __init__(self, H):
        self.H = H
        if sp.issparse(H):
            self._lu = spla.splu(sp.csc_matrix(H))
            self._dense = None
        else:
            self._dense = sla.cho_factor(np.asarray(H, dtype=float))
            self._lu = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            y = self._lu.solve(rhs)
            # one step of iterative refinement keeps residuals near machine level
            y += self._lu.solve(rhs - self.H @ y)
            return y
        y = sla.cho_solve(self._dense, rhs)
        y += sla.cho_solve(self._dense, rhs - self.H @ y)
        return y


def factorize(H) -> _Factor:
    """Factor a symmetric positive definite matrix for repeated solves."""
    return _Factor(H)


def _row(B, i: int) -> np.ndarray:
    if sp.issparse(B):
        return np.asarray(B.getrow(i).todense()).ravel()
    return np.asarray(B)[i]


def _scales(problem: QpProblem, x: np.ndarray) -> tuple[float, float]:
    g_scale = 1.0 + float(np.abs(problem.g).max(initial=0.0))
    Hx = problem.H @ x
    g_scale += float(np.abs(Hx).max(initial=0.0))
    c_scale = 1.0 + float(np.abs(problem.c).max(initial=0.0))
    if problem.m:
        c_scale += float(np.abs(problem.B @ x).max(initial=0.0))
    return g_scale, c_scale


def kkt_check(
    problem: QpProblem,
    x: np.ndarray,
    multipliers: np.ndarray,
    active_set: tuple[int, ...] = (),
) -> KktResiduals:
    """Scaled KKT residuals of a candidate point and multiplier vector.

    multipliers has one entry per constraint row (zeros off the active
    set).  Stationarity and dual residuals are scaled by the gradient
    magnitude, primal and complementarity by the constraint magnitude.
    """
    g_scale, c_scale = _scales(problem, x)
    grad = problem.H @ x + problem.g
    if problem.m:
        grad = grad - problem.B.T @ multipliers
        slacks = problem.slacks(x)
        primal = max(0.0, -float(slacks.min())) / c_scale
        dual = max(0.0, -float(multipliers.min())) / g_scale
        compl = float(np.abs(multipliers * slacks).max()) / (g_scale * c_scale)
    else:
        primal = dual = compl = 0.0
    stationarity = float(np.abs(grad).max(initial=0.0)) / g_scale
    return KktResiduals(stationarity, primal, dual, compl)


def _relaxed_sweeps(B, c, x, norms2, exit_tol, budget):
    """Over-relaxed cyclic half-space projections; returns (x, converged)."""
    relaxation = 1.5
    for _ in range(budget):
        slacks = B @ x + c
        if float(slacks.min()) >= -exit_tol:
            return x, True
        for i in np.nonzero(slacks < 0.0)[0]:
            s = float(_row(B, i) @ x + c[i])
            if s < 0.0:
                x = x - relaxation * (s / norms2[i]) * _row(B, i)
    return x, False


def _feasibility_lp(B, c: np.ndarray, norms: np.ndarray):
    """Max-min-slack linear program deciding feasibility of B x + c >= 0.

    Maximizes delta subject to B x + c >= delta * row_norm with delta
    capped at one, so unbounded wedges still give a bounded program.  A
    negative optimal delta certifies an empty intersection; otherwise the
    returned point sits as deep inside the set as the cap allows.
    """
    m, n = B.shape
    if sp.issparse(B):
        A_ub = sp.hstack(
            [-sp.csr_matrix(B), sp.csr_matrix(norms[:, None])], format="csr"
        )
    else:
        A_ub = np.hstack([-np.asarray(B, dtype=float), norms[:, None]])
    cost = np.zeros(n + 1)
    cost[n] = -1.0
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(
        cost,
        A_ub=A_ub,
        b_ub=np.asarray(c, dtype=float),
        bounds=bounds,
        method="highs",
    )
    if res.status == 2:  # proven infeasible
        return None, -np.inf
    if not res.success:
        raise RuntimeError(f"feasibility linear program failed: {res.message}")
    return res.x[:n], float(res.x[n])


def project_feasible(
    B, c: np.ndarray, x0: np.ndarray, max_sweeps: int = 1000
) -> np.ndarray:
    """Find a point of the half-space intersection B x + c >= 0 near x0.

    Over-relaxed cyclic projections settle rows with disjoint supports
    (nodal constraints) in one sweep and converge linearly on generic
    systems.  Thin wedges between nearly parallel rows stall them, so an
    exhausted sweep budget falls back to a max-min-slack linear program
    that either certifies infeasibility or supplies a point as interior
    as the geometry allows; least-squares equality corrections then snap
    any rows the program left a solver tolerance below zero.

    Raises RuntimeError for infeasible constraints and ValueError on a
    zero constraint row.
    """
    x = np.array(x0, dtype=float)
    m = len(c)
    if m == 0:
        return x
    norms2 = (
        np.asarray(B.multiply(B).sum(axis=1)).ravel()
        if sp.issparse(B)
        else (np.asarray(B) ** 2).sum(axis=1)
    )
    if np.any(norms2 == 0.0):
        raise ValueError("constraint row with zero norm cannot be projected onto")
    exit_tol = 1e-12 * (1.0 + float(np.abs(c).max(initial=0.0)))
    x, ok = _relaxed_sweeps(B, c, x, norms2, exit_tol, max_sweeps)
    if ok:
        return x
    x_lp, delta = _feasibility_lp(B, c, np.sqrt(norms2))
    if delta < -exit_tol:
        raise RuntimeError("feasibility projection found no point; constraints are infeasible")
    x = np.asarray(x_lp, dtype=float)
    for _ in range(3):
        slacks = np.asarray(B @ x + c, dtype=float)
        viol = np.nonzero(slacks < -exit_tol)[0]
        if len(viol) == 0:
            return x
        Bv = np.vstack([_row(B, i) for i in viol])
        dx, *_ = np.linalg.lstsq(Bv, -slacks[viol], rcond=None)
        x = x + dx
    x, ok = _relaxed_sweeps(B, c, x, norms2, exit_tol, 50)
    if not ok:
        raise RuntimeError("feasibility projection stalled short of tolerance")
    return x


def _active_from_slacks(problem: QpProblem, x: np.ndarray, tol: float) -> tuple[int, ...]:
    """Constraints holding with equality at x, by a shared scaled tolerance.

    Both solvers derive their reported active set through this rule, so
    degenerate zero-multiplier actives are classified identically.
    """
    if problem.m == 0:
        return ()
    _, c_scale = _scales(problem, x)
    act_tol = max(tol, 1e-9) * c_scale
    slacks = problem.slacks(x)
    return tuple(int(i) for i in np.nonzero(slacks <= act_tol)[0])


def _build_solution(
    problem: QpProblem,
    x: np.ndarray,
    working: list[int],
    mu_w: np.ndarray,
    iterations: int,
    trace: list[float],
    tol: float,
) -> QpSolution:
    mu = np.zeros(problem.m)
    for k, i in enumerate(working):
        mu[i] = mu_w[k] if len(mu_w) else 0.0
    active = _active_from_slacks(problem, x, tol)
    kkt = kkt_check(problem, x, mu, active)
    return QpSolution(
        x=x,
        active_set=active,
        multipliers=mu,
        kkt=kkt,
        iterations=iterations,
        objective=problem.objective(x),
        objective_trace=tuple(trace),
    )


def solve_qp(
    problem: QpProblem,
    tol: float = 1e-10,
    max_iter: int | None = None,
    warm_start: tuple[int, ...] | None = None,
    factor: _Factor | None = None,
) -> QpSolution:
    """Primal active-set solve of a strictly convex inequality QP.

    warm_start seeds the working set (commonly the previous time step's
    active set); an infeasible warm equality solution falls back to a
    cold start from the projected unconstrained minimizer.  The returned
    active set is derived from the final slacks, so degenerate
    constraints that happen to hold with equality are included even if
    they never entered the working set.
    """
    H, g, B, c = problem.H, problem.g, problem.B, problem.c
    n, m = problem.n, problem.m
    if factor is None:
        factor = factorize(H)
    if max_iter is None:
        max_iter = 3 * (m + 1) + 30

    x_unc = factor.solve(-g)
    trace: list[float] = []
    if m == 0:
        return _build_solution(problem, x_unc, [], np.zeros(0), 0, trace, tol)

    g_scale, c_scale = _scales(problem, x_unc)
    feas_tol = tol * c_scale

    cols: dict[int, np.ndarray] = {}  # H^{-1} B_i^T per constraint row

    def col(i: int) -> np.ndarray:
        v = cols.get(i)
        if v is None:
            v = factor.solve(_row(B, i))
            cols[i] = v
        return v

    def eqp(working: list[int]) -> tuple[np.ndarray, np.ndarray]:
        """Minimizer and multipliers with the working constraints as equalities."""
        if not working:
            return x_unc.copy(), np.zeros(0)
        M = np.column_stack([col(i) for i in working])
        Bw = np.vstack([_row(B, i) for i in working])
        S = Bw @ M
        rhs = -(Bw @ x_unc + c[working])
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                mu = sla.solve(S, rhs, assume_a="pos")
            except (sla.LinAlgError, sla.LinAlgWarning):
                # coincident constraint planes make S singular but
                # consistent; least-norm multipliers still give the unique
                # minimizer because null(S) = null(Bw^T) cannot move x
                mu, *_ = np.linalg.lstsq(S, rhs, rcond=None)
        return x_unc + M @ mu, mu

    working: list[int] = []
    x = None
    if warm_start:
        seed = sorted(set(int(i) for i in warm_start if 0 <= int(i) < m))
        try:
            x_try, _ = eqp(seed)
        except sla.LinAlgError:
            x_try = None
        if x_try is not None and float(problem.slacks(x_try).min()) >= -feas_tol:
            working = seed
            x = x_try
    if x is None:
        if float(problem.slacks(x_unc).min()) >= -feas_tol:
            x = x_unc.copy()
        else:
            x = project_feasible(B, c, x_unc)
        working = []

    iterations = 0
    while True:
        if iterations > max_iter:
            raise QpNonconvergenceError(
                f"active-set method exceeded {max_iter} iterations", x, iterations
            )
        iterations += 1
        trace.append(problem.objective(x))

        x_target, mu_w = eqp(working)
        d = x_target - x
        step = float(np.abs(d).max(initial=0.0))
        # x_target is assembled from the unconstrained minimizer, which can
        # dwarf x itself; a step only counts above the roundoff left by that
        # cancellation, else noise directions admit bogus blocking rows
        ref = 1.0 + max(
            float(np.abs(x).max(initial=0.0)),
            float(np.abs(x_unc).max(initial=0.0)),
            float(np.abs(x_target).max(initial=0.0)),
        )

        if step <= 1e-12 * ref:
            if len(working) == 0 or float(mu_w.min()) >= -tol * g_scale:
                return _build_solution(
                    problem, x_target, working, mu_w, iterations, trace, tol
                )
            worst = float(mu_w.min())
            candidates = [working[k] for k in range(len(working)) if mu_w[k] == worst]
            working.remove(min(candidates))
            continue

        slacks = problem.slacks(x)
        Bd = B @ d
        descent_tol = -1e-14 * (1.0 + float(np.abs(Bd).max(initial=0.0)))
        alpha = 1.0
        blocker = -1
        for i in range(m):
            if i in working:
                continue
            if Bd[i] < descent_tol:
                a_i = max(0.0, float(slacks[i])) / float(-Bd[i])
                if a_i < alpha - 1e-15:
                    alpha = a_i
                    blocker = i
                elif blocker >= 0 and a_i <= alpha + 1e-15 and i < blocker:
                    blocker = i
        x = x + alpha * d
        if blocker >= 0 and alpha < 1.0:
            working = sorted(working + [blocker])
        # alpha == 1 with no blocker: x reached the EQP minimizer; the next
        # pass sees a zero step and runs the multiplier test.


def brute_force_qp(problem: QpProblem, tol: float = 1e-10) -> QpSolution:
    """Reference solve by enumerating all active subsets (m <= 20).

    For each subset the equality KKT system is solved; candidates must be
    primal feasible with nonnegative multipliers.  The minimizer is the
    feasible candidate of least objective.  Exponential cost, testing
    use only.
    """
    H = problem.H.toarray() if sp.issparse(problem.H) else np.asarray(problem.H, float)
    B = problem.B.toarray() if sp.issparse(problem.B) else np.asarray(problem.B, float)
    g, c = problem.g, problem.c
    n, m = problem.n, problem.m
    if m > 20:
        raise ValueError(f"brute force supports at most 20 constraints, got {m}")

    cho = sla.cho_factor(H)
    x_unc = sla.cho_solve(cho, -g)
    x_unc += sla.cho_solve(cho, -g - H @ x_unc)
    g_scale = 1.0 + float(np.abs(g).max(initial=0.0)) + float(
        np.abs(H).max() * np.abs(x_unc).max(initial=0.0)
    )
    c_scale = 1.0 + float(np.abs(c).max(initial=0.0))

    best: tuple[float, np.ndarray, np.ndarray] | None = None
    for r in range(m + 1):
        for subset in itertools.combinations(range(m), r):
            S = list(subset)
            if r:
                Bw = B[S]
                M = sla.cho_solve(cho, Bw.T)
                M += sla.cho_solve(cho, Bw.T - H @ M)
                schur = Bw @ M
                sv = sla.svdvals(schur)
                # dependent rows: some independent subset reaches the same
                # minimizer, so degenerate working sets can be skipped
                if sv[-1] <= 1e-12 * sv[0]:
                    continue
                try:
                    mu = sla.solve(schur, -(Bw @ x_unc + c[S]), assume_a="pos")
                except sla.LinAlgError:
                    continue
                x = x_unc + M @ mu
            else:
                x, mu = x_unc.copy(), np.zeros(0)
            if m and float((B @ x + c).min()) < -tol * c_scale:
                continue
            if r and float(mu.min()) < -tol * g_scale:
                continue
            obj = problem.objective(x)
            if best is None or obj < best[0]:
                mu_full = np.zeros(m)
                mu_full[S] = mu
                best = (obj, x, mu_full)
    if best is None:
        raise RuntimeError("no KKT candidate found; constraints look infeasible")
    obj, x, mu = best
    active = _active_from_slacks(problem, x, tol)
    return QpSolution(
        x=x,
        active_set=active,
        multipliers=mu,
        kkt=kkt_check(problem, x, mu, active),
        iterations=0,
        objective=obj,
    )


def dump_problem(problem: QpProblem, path) -> None:
    """Coordinate-format text dump of H, g, B, c for offline inspection."""
    with open(path, "w", encoding="utf-8") as out:
        out.write(f"# qp n={problem.n} m={problem.m}\n")
        H = sp.coo_matrix(problem.H)
        out.write("H\n")
        order = np.lexsort((H.col, H.row))
        for r, cc, v in zip(H.row[order], H.col[order], H.data[order]):
            out.write(f"{r} {cc} {float(v)!r}\n")
        out.write("g\n")
        for i, v in enumerate(problem.g):
            out.write(f"{i} {float(v)!r}\n")
        if problem.m:
            Bc = sp.coo_matrix(problem.B)
            out.write("B\n")
            order = np.lexsort((Bc.col, Bc.row))
            for r, cc, v in zip(Bc.row[order], Bc.col[order], Bc.data[order]):
                out.write(f"{r} {cc} {float(v)!r}\n")
            out.write("c\n")
            for i, v in enumerate(problem.c):
                out.write(f"{i} {float(v)!r}\n")
