"""Linear and convex quadratic program solvers.

LPs are handed to HiGHS through :func:`scipy.optimize.linprog`. QPs are solved
by a dense primal-dual interior point method (Mehrotra predictor-corrector),
which suits the small, heavily constrained programs produced by the tube MPC
(tens of variables, up to a few thousand rows).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 20_000
# Interior point iterations are far more expensive than first-order ones, a
# converging solve needs 10-40 of them.
IPM_MAX_ITER = 200


class SolverInputError(ValueError):
    """Raised for malformed programs (bad shapes, non-finite data, non-PSD Hessian)."""


class SolverNumericalError(RuntimeError):
    """Raised when the backend reports a numerical failure it cannot classify."""


class SolveStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITERATIONS = "max-iterations"


@dataclass(frozen=True)
class LinearProgram:
    """maximize ``objective @ x`` subject to ``A @ x <= b``."""

    objective: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).reshape(-1)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] < 1:
            raise SolverInputError("linear program needs at least one constraint row")
        if A.shape != (b.size, c.size):
            raise SolverInputError(
                f"constraint matrix has shape {A.shape}, expected ({b.size}, {c.size})"
            )
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise SolverInputError("linear program data must be finite")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class QuadraticProgram:
    """minimize ``0.5 z'Pz + q'z`` subject to ``l <= A z <= u``.

    Equality rows are encoded with ``l == u``; one-sided rows use ``-inf``/``inf``.
    """

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.asarray(self.q, dtype=float).reshape(-1)
        n = q.size
        A = np.asarray(self.A, dtype=float).reshape(-1, n) if n else np.zeros((0, 0))
        l = np.asarray(self.l, dtype=float).reshape(-1)
        u = np.asarray(self.u, dtype=float).reshape(-1)
        if P.shape != (n, n):
            raise SolverInputError(f"Hessian has shape {P.shape}, expected ({n}, {n})")
        if l.size != A.shape[0] or u.size != A.shape[0]:
            raise SolverInputError("bounds must have one entry per constraint row")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(q)) and np.all(np.isfinite(A))):
            raise SolverInputError("quadratic program data must be finite")
        if np.any(np.isnan(l)) or np.any(np.isnan(u)):
            raise SolverInputError("bounds must not be NaN")
        if np.any(l > u):
            raise SolverInputError("lower bounds must not exceed upper bounds")
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-9:
            raise SolverInputError("Hessian is not symmetric")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "u", u)

    @property
    def n(self) -> int:
        return self.q.size

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.P @ z + self.q @ z)

    def violation(self, z) -> float:
        """Largest constraint violation at ``z`` (0 when feasible)."""
        Az = self.A @ np.asarray(z, dtype=float)
        viol = np.concatenate([Az - self.u, self.l - Az, [0.0]])
        return float(np.max(viol[np.isfinite(viol)]))


@dataclass
class SolveReport:
    status: SolveStatus
    solution: np.ndarray | None
    objective: float
    iterations: int
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    # infeasible: smallest uniform constraint relaxation that restores feasibility
    certificate: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


_HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def lp_solve(p: LinearProgram, max_iter: int = DEFAULT_MAX_ITER, bounds=None) -> SolveReport:
    """Maximize a linear objective over a polyhedron.

    ``bounds`` optionally passes per-variable box bounds straight to the backend.
    """
    n = p.objective.size
    if bounds is None:
        bounds = [(None, None)] * n
    res = linprog(
        -p.objective,
        A_ub=p.A,
        b_ub=p.b,
        bounds=bounds,
        method="highs",
        options={**_HIGHS_OPTIONS, "maxiter": int(max_iter)},
    )
    iters = int(getattr(res, "nit", 0) or 0)
    if res.status == 0:
        x = np.asarray(res.x, dtype=float)
        return SolveReport(
            SolveStatus.OPTIMAL,
            x,
            float(p.objective @ x),
            iters,
            primal_residual=max(0.0, float(np.max(p.A @ x - p.b))),
        )
    if res.status == 1:
        return SolveReport(SolveStatus.MAX_ITERATIONS, None, float("nan"), iters)
    if res.status == 2:
        return SolveReport(SolveStatus.INFEASIBLE, None, float("nan"), iters)
    if res.status == 3:
        # HiGHS may say "unbounded" for "infeasible or unbounded"; settle it.
        feas = linprog(
            np.zeros(n), A_ub=p.A, b_ub=p.b, bounds=bounds, method="highs", options=_HIGHS_OPTIONS
        )
        if feas.status == 2:
            return SolveReport(SolveStatus.INFEASIBLE, None, float("nan"), iters)
        return SolveReport(SolveStatus.UNBOUNDED, None, float("inf"), iters)
    raise SolverNumericalError(f"LP backend failed: {res.message}")


def _split_rows(qp: QuadraticProgram):
    """Rewrite ``l <= Az <= u`` as ``G z <= h`` plus ``E z = f``."""
    A, l, u = qp.A, qp.l, qp.u
    eq = np.isfinite(l) & np.isfinite(u) & (u - l <= 1e-12 * np.maximum(1.0, np.abs(u)))
    up = np.isfinite(u) & ~eq
    lo = np.isfinite(l) & ~eq
    G = np.vstack([A[up], -A[lo]])
    h = np.concatenate([u[up], -l[lo]])
    return G, h, A[eq], 0.5 * (l[eq] + u[eq])


def _phase_one(G, h, E, f) -> tuple[float, np.ndarray | None]:
    """Smallest t >= 0 with Gz <= h + t feasible (t = 0 means feasible)."""
    n = G.shape[1] if G.size else E.shape[1]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([G, -np.ones((G.shape[0], 1))]) if G.shape[0] else None
    A_eq = np.hstack([E, np.zeros((E.shape[0], 1))]) if E.shape[0] else None
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=h if G.shape[0] else None,
        A_eq=A_eq,
        b_eq=f if E.shape[0] else None,
        bounds=[(None, None)] * n + [(0.0, None)],
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    if res.status == 0:
        return float(res.x[-1]), np.asarray(res.x[:-1])
    if res.status == 2:  # equality rows alone are inconsistent
        return float("inf"), None
    raise SolverNumericalError(f"phase-one LP failed: {res.message}")


def _unbounded_direction(P, q, G, E) -> bool:
    """True if some recession direction of the feasible set strictly decreases the cost."""
    n = q.size
    A_eq = np.vstack([E, P])
    res = linprog(
        q,
        A_ub=G if G.shape[0] else None,
        b_ub=np.zeros(G.shape[0]) if G.shape[0] else None,
        A_eq=A_eq,
        b_eq=np.zeros(A_eq.shape[0]),
        bounds=[(-1.0, 1.0)] * n,
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    return res.status == 0 and res.fun < -1e-9


def qp_solve(
    p: QuadraticProgram,
    warm_start=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = IPM_MAX_ITER,
) -> SolveReport:
    """Solve a convex QP with a primal-dual interior point method.

    The iteration runs until residuals reach ``1e-3 * tol`` (or stall); the
    result is reported optimal only when primal and dual residuals are within
    ``tol``. Infeasibility and unboundedness are certified with auxiliary LPs.
    """
    P, q = p.P, p.q
    n = q.size
    scale = max(1.0, float(np.max(np.abs(P), initial=0.0)))
    if n and np.linalg.eigvalsh(P).min() < -1e-9 * scale:
        raise SolverInputError("Hessian is not positive semi-definite")
    G, h, E, f = _split_rows(p)
    mi, me = G.shape[0], E.shape[0]

    z = np.zeros(n) if warm_start is None else np.array(warm_start, dtype=float).reshape(n)
    y = np.zeros(me)
    if mi:
        s = np.maximum(h - G @ z, 1.0)
        lam = np.ones(mi)
    else:
        s = np.zeros(0)
        lam = np.zeros(0)

    inner_tol = 1e-3 * tol
    reg = 1e-12 * scale
    it = 0
    best_rp = np.inf
    stall = 0
    checked_feasible = False
    rp = rd = np.inf
    for it in range(1, max_iter + 1):
        rd_vec = P @ z + q + G.T @ lam + E.T @ y
        rp_vec = G @ z + s - h
        re_vec = E @ z - f
        mu = float(s @ lam / mi) if mi else 0.0
        rd = float(np.max(np.abs(rd_vec), initial=0.0))
        rp = float(max(np.max(np.abs(rp_vec), initial=0.0), np.max(np.abs(re_vec), initial=0.0)))
        if rd <= inner_tol and rp <= inner_tol and mu <= inner_tol:
            break
        if not np.all(np.isfinite(z)) or np.max(np.abs(z), initial=0.0) > 1e12:
            break

        # stall watch: an infeasible program keeps a primal residual floor
        if rp < 0.5 * best_rp:
            best_rp = rp
            stall = 0
        else:
            stall += 1
        if stall >= 15 and not checked_feasible and rp > tol:
            t_min, _ = _phase_one(G, h, E, f)
            if t_min > tol:
                return SolveReport(
                    SolveStatus.INFEASIBLE, None, float("nan"), it, rp, rd, certificate=t_min
                )
            checked_feasible = True

        W = lam / s if mi else np.zeros(0)
        M = P + (G.T * W) @ G + reg * np.eye(n)
        if me:
            K = np.block([[M, E.T], [E, -reg * np.eye(me)]])
            lu = sla.lu_factor(K, check_finite=False)

            def solve(rhs_z, rhs_e):
                sol = sla.lu_solve(lu, np.concatenate([rhs_z, rhs_e]), check_finite=False)
                return sol[:n], sol[n:]
        else:
            try:
                cf = sla.cho_factor(M, check_finite=False)
            except np.linalg.LinAlgError:
                cf = None
                lu = sla.lu_factor(M, check_finite=False)

            def solve(rhs_z, rhs_e):
                if cf is not None:
                    return sla.cho_solve(cf, rhs_z, check_finite=False), np.zeros(0)
                return sla.lu_solve(lu, rhs_z, check_finite=False), np.zeros(0)

        def direction(rc_target):
            rhs = -rd_vec - G.T @ (W * rp_vec + rc_target / s) if mi else -rd_vec
            dz, dy = solve(rhs, -re_vec)
            if mi:
                dlam = W * (G @ dz + rp_vec) + rc_target / s
                ds = (rc_target - s * dlam) / lam
            else:
                dlam = ds = np.zeros(0)
            return dz, dy, dlam, ds

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        if mi:
            dz, dy, dlam, ds = direction(-s * lam)
            a_aff = min(max_step(s, ds), max_step(lam, dlam))
            mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam) / mi)
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dz, dy, dlam, ds = direction(-s * lam + sigma * mu - ds * dlam)
            a = 0.99 * min(max_step(s, ds), max_step(lam, dlam))
            a = min(a, 1.0)
        else:
            dz, dy, dlam, ds = direction(np.zeros(0))
            a = 1.0
        z = z + a * dz
        y = y + a * dy
        s = s + a * ds
        lam = lam + a * dlam

    primal_viol = max(
        float(np.max(G @ z - h, initial=0.0)), float(np.max(np.abs(E @ z - f), initial=0.0))
    )
    dual_res = float(np.max(np.abs(P @ z + q + G.T @ lam + E.T @ y), initial=0.0))
    if np.all(np.isfinite(z)) and primal_viol <= tol and dual_res <= tol and (
        not mi or float(s @ lam / mi) <= tol
    ):
        return SolveReport(
            SolveStatus.OPTIMAL, z, p.objective(z), it, primal_viol, dual_res,
        )

    t_min, _ = _phase_one(G, h, E, f)
    if t_min > tol:
        return SolveReport(
            SolveStatus.INFEASIBLE, None, float("nan"), it, primal_viol, dual_res, certificate=t_min
        )
    if _unbounded_direction(P, q, G, E):
        return SolveReport(SolveStatus.UNBOUNDED, None, float("-inf"), it, primal_viol, dual_res)
    return SolveReport(SolveStatus.MAX_ITERATIONS, None, float("nan"), it, primal_viol, dual_res)
