"""Set-membership identification of the parameter box and the LMS point estimate."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import HPolytope, Hyperbox, box_vertices, support
from .model import ParametricSystem, eval_system
from .solvers import LinearProgram, SolveStatus, lp_solve


class ModelFalsifiedError(RuntimeError):
    """No parameter in the current set explains the measured transition."""


@dataclass(frozen=True)
class EstimatorState:
    theta_set: Hyperbox
    theta_hat: np.ndarray
    mu: float
    theta0: Hyperbox

    @classmethod
    def initial(cls, theta0: Hyperbox, mu: float, theta_hat=None) -> "EstimatorState":
        if mu <= 0:
            raise ValueError("LMS gain must be positive")
        hat = theta0.center if theta_hat is None else theta0.project(theta_hat)
        return cls(theta0, np.asarray(hat, dtype=float), float(mu), theta0)

    @property
    def theta_bar(self) -> np.ndarray:
        return self.theta_set.center

    @property
    def eta(self) -> float:
        return self.theta_set.side


def default_mu(sys: ParametricSystem, x_bound, u_bound, scale: float = 0.5) -> float:
    """``scale / sup ||D||^2`` with the supremum bounded over ``|x| <= x_bound, |u| <= u_bound``."""
    xn = float(np.linalg.norm(np.asarray(x_bound, dtype=float)))
    un = float(np.linalg.norm(np.asarray(u_bound, dtype=float)))
    bound = sum(
        (np.linalg.norm(sys.A[i], 2) * xn + np.linalg.norm(sys.B[i], 2) * un) ** 2
        for i in range(1, sys.p + 1)
    )
    if bound <= 0:
        raise ValueError("regressor is identically zero; the parameter is not identifiable")
    return scale / bound


def nonfalsified_halfspaces(D_prev, d_now, W: HPolytope):
    """``{theta : -H_w D theta <= h_w + H_w d}``."""
    D_prev = np.atleast_2d(np.asarray(D_prev, dtype=float))
    d_now = np.asarray(d_now, dtype=float).reshape(-1)
    if D_prev.shape[0] != W.dim or d_now.size != W.dim:
        raise ValueError("regressor/offset dimension does not match the disturbance set")
    return -W.H @ D_prev, W.h + W.H @ d_now


def _max_linear(P: HPolytope, directions: np.ndarray) -> np.ndarray:
    """Row-wise support values; exact vertex enumeration when ``P`` is a box."""
    box = P.as_box()
    if box is not None:
        verts = np.array(box_vertices(Hyperbox(*box)))
        return np.max(directions @ verts.T, axis=1)
    return np.array([support(P, d) for d in directions])


def nonfalsified_halfspaces_noisy(D_prev, d_now, W: HPolytope, M: HPolytope | None,
                                  theta_prev: Hyperbox, sys: ParametricSystem):
    """Non-falsified set with offsets widened for bounded measurement noise.

    Row i gains ``max_{m in M} [H_w]_i m + max_{theta in Theta_prev, m in M} -[H_w]_i A(theta) m``.
    The second maximum is taken over the vertices of ``Theta_prev``: for fixed m the
    expression is affine in theta.
    """
    H, h = nonfalsified_halfspaces(D_prev, d_now, W)
    if M is None:
        return H, h
    dil = _max_linear(M, W.H)
    coupled = np.full(W.n_rows, -np.inf)
    for theta in box_vertices(theta_prev):
        A, _ = eval_system(sys, theta)
        coupled = np.maximum(coupled, _max_linear(M, -W.H @ A))
    return H, h + dil + coupled


def _interval_bounds(H, h, box: Hyperbox):
    """Exact bounds of ``box ∩ {H theta <= h}`` for a scalar parameter."""
    lo, hi = float(box.lower[0]), float(box.upper[0])
    a = H[:, 0]
    for ai, hi_ in zip(a, h):
        if ai > 0:
            hi = min(hi, hi_ / ai)
        elif ai < 0:
            lo = max(lo, hi_ / ai)
        elif hi_ < -1e-12:
            return None
    if lo > hi:
        return None
    return np.array([lo]), np.array([hi])


def _lp_bounds(H, h, box: Hyperbox):
    p = box.dim
    bounds = list(zip(box.lower.tolist(), box.upper.tolist()))
    lo = np.empty(p)
    hi = np.empty(p)
    for i in range(p):
        e = np.zeros(p)
        e[i] = 1.0
        for sign, out in ((1.0, hi), (-1.0, lo)):
            rep = lp_solve(LinearProgram(sign * e, H, h), bounds=bounds)
            if rep.status is SolveStatus.INFEASIBLE:
                return None
            if rep.status is not SolveStatus.OPTIMAL:
                raise RuntimeError(f"parameter bound LP ended with {rep.status.value}")
            out[i] = sign * rep.objective
    return lo, hi


def tight_bounds(H, h, box: Hyperbox, method: str = "auto"):
    """Bounding box of ``box ∩ {H theta <= h}``, or None when empty.

    ``method="lp"`` solves 2p LPs; ``"auto"`` uses interval arithmetic for p = 1.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    h = np.asarray(h, dtype=float).reshape(-1)
    if method == "auto" and box.dim == 1:
        return _interval_bounds(H, h, box)
    return _lp_bounds(H, h, box)


# absolute slack on the halfspace offsets; keeps a parameter lying exactly on a
# face of the non-falsified set (disturbance at the edge of W) from being cut off
# by rounding
SET_SLACK = 1e-9


def update_theta_set(state: EstimatorState, new_halfspaces, method: str = "auto",
                     slack: float = SET_SLACK) -> EstimatorState:
    """Shrink the parameter hypercube to cover ``Theta_prev ∩ Delta``.

    The new cube is centred on the tight bounding box of the intersection with the
    box's largest side as its side length, so the side never grows.
    """
    H, h = new_halfspaces
    h = np.asarray(h, dtype=float) + slack
    bounds = tight_bounds(H, h, state.theta_set, method=method)
    if bounds is None:
        raise ModelFalsifiedError(
            "model falsified: no parameter in the current set is consistent with the "
            "measured transition and the disturbance bound"
        )
    lo, hi = bounds
    hi = np.maximum(hi, lo)
    box = Hyperbox(lo, hi)
    new_set = Hyperbox.cube(box.center, box.side)
    return replace(state, theta_set=new_set, theta_hat=new_set.project(state.theta_hat))


def update_point_estimate(state: EstimatorState, D_prev, x_prev, u_prev, x_now,
                          sys: ParametricSystem) -> EstimatorState:
    """One LMS step on the prediction error, projected onto the current parameter box."""
    A, B = eval_system(sys, state.theta_hat)
    resid = np.asarray(x_now, float) - (A @ np.asarray(x_prev, float) + B @ np.asarray(u_prev, float))
    theta_tilde = state.theta_hat + state.mu * np.atleast_2d(D_prev).T @ resid
    return replace(state, theta_hat=state.theta_set.project(theta_tilde))


def dilate_lower_bound(state: EstimatorState, factor: float, floor, variant: str = "max") -> EstimatorState:
    """Relax the lower parameter bound to ``max(factor * lower, floor)``.

    ``variant="min"`` evaluates ``min(factor * lower, floor)`` instead, which drops the
    bound straight to the floor.
    """
    if not 0 < factor <= 1:
        raise ValueError("dilation factor must lie in (0, 1]")
    floor = np.broadcast_to(np.asarray(floor, dtype=float), state.theta_set.lower.shape)
    scaled = factor * state.theta_set.lower
    if variant == "max":
        lower = np.maximum(scaled, floor)
    elif variant == "min":
        lower = np.minimum(scaled, floor)
    else:
        raise ValueError(f"unknown dilation variant {variant!r}")
    lower = np.minimum(lower, state.theta_set.upper)
    new_set = Hyperbox(lower, state.theta_set.upper)
    return replace(state, theta_set=new_set, theta_hat=new_set.project(state.theta_hat))
