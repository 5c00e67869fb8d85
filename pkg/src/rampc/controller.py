"""Per-step robust adaptive tube MPC, assembled as a condensed QP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimation import EstimatorState
from .geometry import Hyperbox, box_vertices
from .model import ParametricSystem, QuadrotorModel, eval_system
from .solvers import QuadraticProgram, SolveReport, qp_solve
from .synthesis import SynthesisArtifacts

MODES = ("adaptive", "robust-baseline")


class ControllerConfigError(ValueError):
    pass


class InfeasibleStepError(RuntimeError):
    def __init__(self, step: int | None, report: SolveReport):
        self.step = step
        self.report = report
        super().__init__(
            f"tube MPC problem {report.status.value} at step {step}"
            + (f" (relaxation needed {report.certificate:.3g})" if report.certificate else "")
        )


@dataclass
class ControllerConfig:
    artifacts: SynthesisArtifacts
    N: int | None = None
    mode: str = "adaptive"
    ss_update: bool = True
    robustify_ss: bool = False
    # (factor, floor, variant) applied to the lower parameter bound after each update
    failure_dilation: tuple | None = None
    theta_assumed: float | None = None

    def __post_init__(self):
        if self.N is None:
            self.N = self.artifacts.N
        if self.N < 1:
            raise ControllerConfigError("horizon must be at least 1")
        if self.mode not in MODES:
            raise ControllerConfigError(f"mode must be one of {MODES}")
        if self.mode == "robust-baseline":
            self.ss_update = False
            self.failure_dilation = None
        if self.robustify_ss:
            if self.artifacts.u_tilde is None:
                raise ControllerConfigError("robustify_ss needs u_tilde in the artifacts")
            self.ss_update = False

    @property
    def adaptive(self) -> bool:
        return self.mode == "adaptive"


@dataclass
class QPLayout:
    N: int
    m: int
    counts: dict
    const: float
    Phi_bar: np.ndarray = field(repr=False)
    Gam_bar: np.ndarray = field(repr=False)
    Phi_hat: np.ndarray = field(repr=False)
    Gam_hat: np.ndarray = field(repr=False)

    @property
    def n_v(self) -> int:
        return self.N * self.m

    @property
    def n_rows(self) -> int:
        return sum(self.counts.values())


@dataclass
class TubeSolution:
    v: np.ndarray  # (N, m)
    alpha: np.ndarray  # (N + 1,), alpha[0] = 0
    x_bar: np.ndarray  # (N + 1, n)
    x_hat: np.ndarray  # (N + 1, n)
    u0: np.ndarray
    cost: float
    z: np.ndarray
    report: SolveReport


def _prediction(Acl, B, N, m):
    """Stacked ``x_l = Phi[l] x0 + Gam[l] v`` for ``x+ = Acl x + B v_l``."""
    n = Acl.shape[0]
    Phi = np.empty((N + 1, n, n))
    Gam = np.zeros((N + 1, n, N * m))
    Phi[0] = np.eye(n)
    for l in range(N):
        Phi[l + 1] = Acl @ Phi[l]
        Gam[l + 1] = Acl @ Gam[l]
        Gam[l + 1][:, l * m:(l + 1) * m] += B
    return Phi, Gam


def constraint_offsets(F, ref_state) -> np.ndarray:
    """Right-hand side of ``F x_dev + G u <= b`` after shifting the state by the reference."""
    b = 1.0 - np.asarray(F) @ np.asarray(ref_state, dtype=float)
    if np.any(b <= 0):
        raise ControllerConfigError("reference lies on or outside the state constraints")
    return b


def build_qp(x_k, est: EstimatorState, cfg: ControllerConfig, sys: ParametricSystem, b=None):
    """Condensed tube MPC program in ``z = (v_0..v_{N-1}, alpha_1..alpha_N)``.

    ``b`` are the constraint right-hand sides (all ones without a reference shift).

    Returns:
        (QuadraticProgram, QPLayout)
    """
    a = cfg.artifacts
    N = cfg.N
    n, m, p = sys.n, sys.m, sys.p
    x_k = np.asarray(x_k, dtype=float).reshape(-1)
    if x_k.size != n:
        raise ControllerConfigError(f"state has length {x_k.size}, model has {n}")
    K = a.K
    if K.shape != (m, n) or a.F.shape[1] != n or a.X0.dim != n:
        raise ControllerConfigError("artifacts do not match the model dimensions")
    F, G, Hx, c = a.F, a.G, a.X0.H, a.c
    b = np.ones(F.shape[0]) if b is None else np.asarray(b, dtype=float)
    nv = N * m
    nz = nv + N

    theta_bar = est.theta_bar
    eta = est.eta
    A_bar, B_bar = eval_system(sys, theta_bar)
    A_hat, B_hat = eval_system(sys, est.theta_hat)
    Phi_b, Gam_b = _prediction(A_bar + B_bar @ K, B_bar, N, m)
    Phi_h, Gam_h = _prediction(A_hat + B_hat @ K, B_hat, N, m)

    def sel(l):
        S = np.zeros((m, nv))
        S[:, l * m:(l + 1) * m] = np.eye(m)
        return S

    def alpha_col(l):
        return nv + l - 1  # alpha_l for l >= 1

    FGK = F + G @ K
    rows, rhs = [], []

    # state/input constraints tightened by the tube size
    for l in range(N):
        blk = np.zeros((F.shape[0], nz))
        blk[:, :nv] = FGK @ Gam_b[l] + G @ sel(l)
        if l >= 1:
            blk[:, alpha_col(l)] = c
        rows.append(blk)
        rhs.append(b - FGK @ Phi_b[l] @ x_k)
    n_state = N * F.shape[0]

    # tube inclusion, one row per (step, face, parameter-cube vertex)
    extra = np.zeros(Hx.shape[0]) if (not cfg.robustify_ss or a.u_tilde is None) else a.u_tilde
    cube = box_vertices(Hyperbox.cube(np.zeros(p), 1.0))
    for l in range(N):
        for e in cube:
            Mj = np.tensordot(e, sys.A[1:], axes=1)
            Nj = np.tensordot(e, sys.B[1:], axes=1)
            T = eta * Hx @ (Mj + Nj @ K)
            blk = np.zeros((Hx.shape[0], nz))
            blk[:, :nv] = T @ Gam_b[l] + eta * Hx @ Nj @ sel(l)
            if l >= 1:
                blk[:, alpha_col(l)] += a.lam
            blk[:, alpha_col(l + 1)] -= 1.0
            rows.append(blk)
            rhs.append(-a.w_bar - extra - T @ Phi_b[l] @ x_k)
    n_tube = N * len(cube) * Hx.shape[0]

    # terminal set
    c_star = float(np.max(c / b))
    blk = np.zeros((Hx.shape[0], nz))
    blk[:, :nv] = c_star * Hx @ Gam_b[N]
    blk[:, alpha_col(N)] = c_star
    rows.append(blk)
    rhs.append(1.0 - c_star * Hx @ Phi_b[N] @ x_k)

    # non-negative dilations
    blk = np.zeros((N, nz))
    blk[:, nv:] = -np.eye(N)
    rows.append(blk)
    rhs.append(np.zeros(N))

    A_ineq = np.vstack(rows)
    u_ineq = np.concatenate(rhs)

    # cost on the point-estimate prediction
    Qb = np.zeros((N + 1, n, n))
    Qb[:N] = a.Q
    Qb[N] = a.P
    Xg = Gam_h  # (N+1, n, nv)
    Xf = Phi_h @ x_k  # (N+1, n)
    Ug = K @ Gam_h[:N] + np.stack([sel(l) for l in range(N)])  # (N, m, nv)
    Uf = (K @ Phi_h[:N] @ x_k)  # (N, m)
    H = 2.0 * (np.einsum("lni,lnk,lkj->ij", Xg, Qb, Xg) + np.einsum("lmi,mk,lkj->ij", Ug, a.R, Ug))
    g = 2.0 * (np.einsum("lni,lnk,lk->i", Xg, Qb, Xf) + np.einsum("lmi,mk,lk->i", Ug, a.R, Uf))
    const = float(np.einsum("ln,lnk,lk->", Xf, Qb, Xf) + np.einsum("lm,mk,lk->", Uf, a.R, Uf))
    P_qp = np.zeros((nz, nz))
    P_qp[:nv, :nv] = 0.5 * (H + H.T)
    q_qp = np.zeros(nz)
    q_qp[:nv] = g

    qp = QuadraticProgram(P_qp, q_qp, A_ineq, np.full(A_ineq.shape[0], -np.inf), u_ineq)
    layout = QPLayout(
        N=N,
        m=m,
        counts={
            "state_input": n_state,
            "tube": n_tube,
            "terminal": Hx.shape[0],
            "alpha_nonneg": N,
        },
        const=const,
        Phi_bar=Phi_b,
        Gam_bar=Gam_b,
        Phi_hat=Phi_h,
        Gam_hat=Gam_h,
    )
    return qp, layout


def solve_step(x_k, est: EstimatorState, cfg: ControllerConfig, sys: ParametricSystem,
               warm=None, b=None, step: int | None = None) -> TubeSolution:
    """Solve one RAMPC problem; the applied input is ``K x_k + v_0``."""
    qp, lay = build_qp(x_k, est, cfg, sys, b)
    rep = qp_solve(qp, warm_start=warm)
    if not rep.optimal:
        raise InfeasibleStepError(step, rep)
    z = rep.solution
    N, m = lay.N, lay.m
    v = z[: N * m].reshape(N, m)
    alpha = np.concatenate([[0.0], z[N * m:]])
    x_k = np.asarray(x_k, dtype=float).reshape(-1)
    x_bar = lay.Phi_bar @ x_k + lay.Gam_bar @ z[: N * m]
    x_hat = lay.Phi_hat @ x_k + lay.Gam_hat @ z[: N * m]
    u0 = cfg.artifacts.K @ x_k + v[0]
    cost = max(rep.objective + lay.const, 0.0)
    return TubeSolution(v=v, alpha=alpha, x_bar=x_bar, x_hat=x_hat, u0=u0, cost=cost, z=z,
                        report=rep)


def shifted_warm_start(sol: TubeSolution, lam: float, w_bar: float) -> np.ndarray:
    """Candidate ``(v_1..v_{N-1}, 0)`` with the dilations shifted one step."""
    N, m = sol.v.shape
    v = np.vstack([sol.v[1:], np.zeros((1, m))])
    alpha = np.concatenate([sol.alpha[2:], [lam * sol.alpha[-1] + w_bar]])
    return np.concatenate([v.reshape(-1), alpha])


def minimal_dilations(x_k, v, est: EstimatorState, cfg: ControllerConfig,
                      sys: ParametricSystem) -> np.ndarray:
    """Smallest ``alpha_1..alpha_N`` meeting the tube rows for a fixed input sequence ``v``."""
    a = cfg.artifacts
    K = a.K
    v = np.asarray(v, dtype=float).reshape(cfg.N, sys.m)
    A_bar, B_bar = eval_system(sys, est.theta_bar)
    extra = a.u_tilde if (cfg.robustify_ss and a.u_tilde is not None) else np.zeros(a.n_x)
    cube = box_vertices(Hyperbox.cube(np.zeros(sys.p), 1.0))
    x = np.asarray(x_k, dtype=float).reshape(-1)
    alpha = 0.0
    out = []
    for l in range(cfg.N):
        u = K @ x + v[l]
        worst = -np.inf * np.ones(a.n_x)
        for e in cube:
            D_e = np.tensordot(e, sys.A[1:], axes=1) @ x + np.tensordot(e, sys.B[1:], axes=1) @ u
            worst = np.maximum(worst, est.eta * a.X0.H @ D_e)
        alpha = a.lam * alpha + float(np.max(a.w_bar + extra + worst))
        out.append(alpha)
        x = A_bar @ x + B_bar @ u
    return np.array(out)


def update_steady_state(cfg: ControllerConfig, est: EstimatorState, model: QuadrotorModel,
                        fixed_input=None) -> np.ndarray:
    """Absolute steady-state input: ``u_ss(theta_bar)`` when updating, else ``fixed_input``."""
    if cfg.ss_update and cfg.adaptive:
        theta_bar = float(est.theta_bar[0])
        if theta_bar <= 0:
            raise ControllerConfigError("non-physical parameter estimate (mass <= 0)")
        return model.hover_input(theta_bar)
    if fixed_input is None:
        raise ControllerConfigError("a fixed steady-state input is required when not updating")
    return np.asarray(fixed_input, dtype=float)


def reference_shift(x_abs, ref) -> np.ndarray:
    return np.asarray(x_abs, dtype=float) - np.asarray(ref, dtype=float)


def reference_unshift(x_dev, ref) -> np.ndarray:
    return np.asarray(x_dev, dtype=float) + np.asarray(ref, dtype=float)
