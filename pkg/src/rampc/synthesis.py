"""Offline design: prestabilizing gain, terminal cost, contractive set and tube constants."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from .geometry import (
    HPolytope,
    Hyperbox,
    box_vertices,
    build_contractive,
    support,
    verify_contractive,
)
from .model import ConstraintSet, ParametricSystem, eval_system

ASSUMPTION_TOL = 1e-9
RHO_GRID = np.round(np.arange(1.0, 100.0 + 1e-9, 0.1), 10)


class SynthesisError(RuntimeError):
    pass


class ArtifactValidationError(RuntimeError):
    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("artifact validation failed: " + ", ".join(report.failed))


@dataclass
class SynthesisArtifacts:
    K: np.ndarray
    P: np.ndarray
    X0: HPolytope
    lam: float
    c: np.ndarray
    w_bar: float
    Q: np.ndarray
    R: np.ndarray
    N: int
    F: np.ndarray
    G: np.ndarray
    theta0: Hyperbox
    u_tilde: np.ndarray | None = None
    rho: float = 1.0
    lambda_bar0: float | None = None
    config_hash: str | None = None

    @property
    def n_x(self) -> int:
        return self.X0.n_rows

    @property
    def c_max(self) -> float:
        return float(np.max(self.c))

    def to_json(self) -> dict:
        return {
            "K": self.K.tolist(),
            "P": self.P.tolist(),
            "X0": self.X0.to_json(),
            "lambda": self.lam,
            "c": self.c.tolist(),
            "w_bar": self.w_bar,
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "N": self.N,
            "F": self.F.tolist(),
            "G": self.G.tolist(),
            "theta0": self.theta0.to_json(),
            "u_tilde": None if self.u_tilde is None else self.u_tilde.tolist(),
            "rho": self.rho,
            "lambda_bar0": self.lambda_bar0,
            "config_hash": self.config_hash,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, d: dict) -> "SynthesisArtifacts":
        arr = lambda v: np.array(v, dtype=float)  # noqa: E731
        return cls(
            K=np.atleast_2d(arr(d["K"])),
            P=np.atleast_2d(arr(d["P"])),
            X0=HPolytope.from_json(d["X0"]),
            lam=float(d["lambda"]),
            c=arr(d["c"]),
            w_bar=float(d["w_bar"]),
            Q=np.atleast_2d(arr(d["Q"])),
            R=np.atleast_2d(arr(d["R"])),
            N=int(d["N"]),
            F=np.atleast_2d(arr(d["F"])),
            G=np.atleast_2d(arr(d["G"])),
            theta0=Hyperbox.from_json(d["theta0"]),
            u_tilde=None if d.get("u_tilde") is None else arr(d["u_tilde"]),
            rho=float(d.get("rho", 1.0)),
            lambda_bar0=d.get("lambda_bar0"),
            config_hash=d.get("config_hash"),
        )


def _decrease_matrix(K, P, sys, theta, Q, R):
    acl = sys.closed_loop(theta, K)
    return P - acl.T @ P @ acl - Q - K.T @ R @ K


def verify_assumption2(K, P, sys: ParametricSystem, theta_vertices, Q, R) -> tuple[bool, float]:
    """Lyapunov decrease ``A_cl' P A_cl + Q + K'RK <= P`` at every parameter vertex.

    Returns the verdict and the smallest eigenvalue of the slack matrix over all
    vertices. The quadratic form is convex in theta, so vertices suffice.
    """
    K = np.atleast_2d(K)
    P = np.atleast_2d(P)
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    worst = np.inf
    for theta in theta_vertices:
        S = _decrease_matrix(K, P, sys, theta, Q, R)
        worst = min(worst, float(np.linalg.eigvalsh(0.5 * (S + S.T)).min()))
    return worst >= -ASSUMPTION_TOL, worst


def design_gain_and_cost(sys: ParametricSystem, theta0: Hyperbox, Q, R):
    """LQR gain at the centre of ``theta0`` and a terminal cost valid on all of ``theta0``.

    The Riccati solution is inflated by the smallest factor on the grid
    1, 1.1, ..., 100 that passes the vertex decrease check.

    Returns:
        (K, P, rho)
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    A, B = eval_system(sys, theta0.center)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            P0 = sla.solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SynthesisError(f"centre system is not stabilizable: {exc}") from exc
    if not np.all(np.isfinite(P0)):
        raise SynthesisError("centre system is not stabilizable")
    K = -np.linalg.solve(R + B.T @ P0 @ B, B.T @ P0 @ A)
    vertices = box_vertices(theta0)
    for theta in vertices:
        if np.max(np.abs(np.linalg.eigvals(sys.closed_loop(theta, K)))) >= 1.0:
            raise SynthesisError(
                "terminal-cost vertex condition unsatisfiable with LQR gain; shrink theta0 or retune Q, R "
                "(closed loop unstable at a parameter vertex)"
            )
    for rho in RHO_GRID:
        ok, _ = verify_assumption2(K, rho * P0, sys, vertices, Q, R)
        if ok:
            return K, rho * P0, float(rho)
    raise SynthesisError("terminal-cost vertex condition unsatisfiable with LQR gain; shrink theta0 or retune Q, R")


def tube_constants(X0: HPolytope, Z: ConstraintSet, K, W: HPolytope):
    """Constraint-tightening factors ``c_i = max_{x in X0} [F + GK]_i x`` and the
    disturbance size ``w_bar = max_i max_{w in W} [H_x]_i w``."""
    FGK = Z.F + Z.G @ np.atleast_2d(K)
    c = np.array([support(X0, row) for row in FGK])
    w_bar = max(support(W, row) for row in X0.H)
    return c, float(w_bar)


def _unit_cube_vertices(p: int) -> list[np.ndarray]:
    return box_vertices(Hyperbox.cube(np.zeros(p), 1.0))


def lambda_bar(X0: HPolytope, sys: ParametricSystem, K, theta_center, eta: float) -> float:
    """Upper bound on the contraction rate of ``X0`` over ``{theta_center} + eta * B_p``."""
    K = np.atleast_2d(K)
    acl = sys.closed_loop(theta_center, K)
    first = max(support(X0, row @ acl) for row in X0.H)
    if eta == 0:
        return float(first)
    second = -np.inf
    for e in _unit_cube_vertices(sys.p):
        Dm = np.tensordot(e, sys.A[1:] + sys.B[1:] @ K, axes=1)
        for row in X0.H:
            second = max(second, support(X0, row @ Dm))
    return float(first + eta * second)


def steady_state_robustification(sys: ParametricSystem, theta0: Hyperbox, X0: HPolytope,
                                 u_ss_fn, theta_applied=None) -> np.ndarray:
    """Worst-case effect of the steady-state input error on each row of ``H_x``.

    ``u_tilde_i = max_{theta in theta0} [H_x]_i B(theta) (u_ss(theta_a) - u_ss(theta))``,
    with ``theta_a`` the parameter the applied steady-state input was computed for
    (default: the centre of ``theta0``). For a scalar parameter the maximum is found
    exactly from the interval endpoints and an interior stationary point; for p > 1
    a three-point grid per axis is used.
    """
    theta_a = theta0.center if theta_applied is None else np.asarray(theta_applied, float).reshape(-1)
    u_a = np.asarray(u_ss_fn(theta_a), dtype=float)

    def effect(theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        _, B = eval_system(sys, theta)
        return X0.H @ (B @ (u_a - np.asarray(u_ss_fn(theta), dtype=float)))

    if theta0.dim == 1:
        lo, hi = float(theta0.lower[0]), float(theta0.upper[0])
        best = np.maximum(effect([lo]), effect([hi]))
        if hi > lo:
            for i in range(X0.n_rows):
                res = minimize_scalar(
                    lambda t: -effect([t])[i], bounds=(lo, hi), method="bounded",
                    options={"xatol": 1e-10 * max(1.0, hi)},
                )
                best[i] = max(best[i], -res.fun)
        return best
    warnings.warn("u_tilde for p > 1 uses a grid search and may underestimate the maximum")
    axes = [np.linspace(lo, hi, 3) for lo, hi in zip(theta0.lower, theta0.upper)]
    grid = np.array(np.meshgrid(*axes)).reshape(theta0.dim, -1).T
    return np.max(np.array([effect(t) for t in grid]), axis=0)


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [k for k, ok in self.checks.items() if not ok]

    @property
    def passed(self) -> bool:
        return not self.failed

    def to_json(self) -> dict:
        return {"passed": self.passed, "checks": self.checks, "details": self.details}


def validate_artifacts(a: SynthesisArtifacts, sys: ParametricSystem, W: HPolytope | None = None,
                       raise_on_failure: bool = True) -> ValidationReport:
    """Check the terminal precondition, the Lyapunov decrease and contractivity of X0."""
    rep = ValidationReport()
    extra = 0.0 if a.u_tilde is None else max(float(np.max(a.u_tilde)), 0.0)
    margin = a.lam + a.c_max * (a.w_bar + extra)
    rep.details["terminal_precondition"] = margin
    rep.checks["terminal_precondition"] = bool(margin <= 1.0)
    if W is not None:
        w_bar = max(support(W, row) for row in a.X0.H)
        rep.details["w_bar_recomputed"] = w_bar
        rep.checks["w_bar_consistent"] = bool(w_bar <= a.w_bar + 1e-9)
    vertices = box_vertices(a.theta0)
    ok, worst = verify_assumption2(a.K, a.P, sys, vertices, a.Q, a.R)
    rep.details["assumption2_min_eig"] = worst
    rep.checks["assumption2"] = ok
    cert = verify_contractive(a.X0, sys, a.K, vertices)
    rep.details["lambda_achieved"] = cert.lambda_achieved
    rep.checks["contractivity"] = cert.holds_for(a.lam)
    if raise_on_failure and not rep.passed:
        raise ArtifactValidationError(rep)
    return rep


def synthesize(sys: ParametricSystem, Z: ConstraintSet, theta0: Hyperbox, W: HPolytope, Q, R,
               N: int = 10, lam: float = 0.9, max_rows: int = 200,
               bounding_box: HPolytope | None = None, u_ss_fn=None,
               theta_applied=None) -> SynthesisArtifacts:
    """Run the offline pipeline; ``u_ss_fn`` enables the steady-state-error robustification."""
    if N < 1:
        raise SynthesisError("horizon must be at least 1")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    K, P, rho = design_gain_and_cost(sys, theta0, Q, R)
    vertices = box_vertices(theta0)
    X0 = build_contractive((Z.F, Z.G), sys, K, vertices, lam, max_rows=max_rows,
                           bounding_box=bounding_box)
    c, w_bar = tube_constants(X0, Z, K, W)
    u_tilde = None
    if u_ss_fn is not None:
        u_tilde = steady_state_robustification(sys, theta0, X0, u_ss_fn, theta_applied)
    lb0 = lambda_bar(X0, sys, K, theta0.center, theta0.side)
    return SynthesisArtifacts(
        K=K, P=P, X0=X0, lam=float(lam), c=c, w_bar=w_bar, Q=Q, R=R, N=int(N),
        F=Z.F.copy(), G=Z.G.copy(), theta0=theta0, u_tilde=u_tilde, rho=rho, lambda_bar0=lb0,
    )
