"""Affinely parametrized linear models and the quadrotor linearizations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import HPolytope

GRAVITY = 9.81
SAMPLE_TIME = 0.1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ParametricSystem:
    """``A(theta) = A[0] + sum_i theta_i A[i]`` and likewise ``B(theta)``.

    ``A`` has shape (p + 1, n, n) and ``B`` shape (p + 1, n, m).
    """

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 3 or B.ndim != 3:
            raise ModelError("A and B must be stacks of shape (p+1, n, ·)")
        if A.shape[0] != B.shape[0] or A.shape[1] != A.shape[2] or B.shape[1] != A.shape[1]:
            raise ModelError(f"inconsistent stacks A {A.shape}, B {B.shape}")
        if A.shape[0] < 2:
            raise ModelError("a parametric system needs at least one parameter")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]

    @property
    def p(self) -> int:
        return self.A.shape[0] - 1

    def _theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.p:
            raise ModelError(f"expected {self.p} parameters, got {theta.size}")
        return theta

    def closed_loop(self, theta, K) -> np.ndarray:
        A, B = eval_system(self, theta)
        return A + B @ np.atleast_2d(K)

    def step(self, theta, x, u) -> np.ndarray:
        A, B = eval_system(self, theta)
        return A @ x + B @ u

    def to_json(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist()}


@dataclass(frozen=True)
class ConstraintSet:
    """State/input constraints ``F x + G u <= 1``."""

    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if F.shape[0] != G.shape[0]:
            raise ModelError("F and G need the same number of rows")
        if np.any(np.all(np.hstack([F, G]) == 0.0, axis=1)):
            raise ModelError("constraint set contains an all-zero row")
        F.setflags(write=False)
        G.setflags(write=False)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)

    @property
    def n_z(self) -> int:
        return self.F.shape[0]

    def margins(self, x, u) -> np.ndarray:
        """``F x + G u - 1`` (non-positive when satisfied)."""
        return self.F @ np.asarray(x, float) + self.G @ np.asarray(u, float) - 1.0

    def to_json(self) -> dict:
        return {"F": self.F.tolist(), "G": self.G.tolist()}


def eval_system(sys: ParametricSystem, theta) -> tuple[np.ndarray, np.ndarray]:
    theta = sys._theta(theta)
    return (
        sys.A[0] + np.tensordot(theta, sys.A[1:], axes=1),
        sys.B[0] + np.tensordot(theta, sys.B[1:], axes=1),
    )


def d_matrix(sys: ParametricSystem, x, u) -> np.ndarray:
    """Regressor ``D = [A_1 x + B_1 u, ..., A_p x + B_p u]`` (n x p)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.size != sys.n or u.size != sys.m:
        raise ModelError("state/input dimension mismatch")
    return (sys.A[1:] @ x + sys.B[1:] @ u).T


def d_offset(sys: ParametricSystem, x_prev, u_prev, x_now) -> np.ndarray:
    """``d = A_0 x_prev + B_0 u_prev - x_now``."""
    x_prev = np.asarray(x_prev, dtype=float).reshape(-1)
    u_prev = np.asarray(u_prev, dtype=float).reshape(-1)
    x_now = np.asarray(x_now, dtype=float).reshape(-1)
    if x_prev.size != sys.n or x_now.size != sys.n or u_prev.size != sys.m:
        raise ModelError("state/input dimension mismatch")
    return sys.A[0] @ x_prev + sys.B[0] @ u_prev - x_now


def discretize_euler(A_c, B_c, Ts: float):
    """Forward Euler. Accepts single matrices or affine stacks (index 0 is the base term)."""
    if Ts < 0:
        raise ModelError("sample time must be non-negative")
    A_c = np.asarray(A_c, dtype=float)
    B_c = np.asarray(B_c, dtype=float)
    A_d = Ts * A_c
    if A_c.ndim == 2:
        A_d = A_d + np.eye(A_c.shape[0])
    else:
        A_d[0] = A_d[0] + np.eye(A_c.shape[1])
    return A_d, Ts * B_c


@dataclass(frozen=True)
class QuadrotorParams:
    """Crazyflie-scale airframe in X configuration.

    Rotor i sits at ``(x_i, y_i)``; ``c_i`` maps its thrust to yaw torque.
    """

    arm: float = 0.0325
    yaw_coeff: float = 0.00596
    inertia: tuple = (1.4e-5, 1.4e-5, 2.2e-5)
    mass: float = 0.028
    g: float = GRAVITY
    thrust_min: float = 0.0
    thrust_max: float = 0.16
    Ts: float = SAMPLE_TIME
    pos_bound: float = 0.7
    angle_bound: float = np.pi / 2
    vel_bound: float = 2.0
    rate_bound: float = 10.0

    @property
    def rotor_x(self) -> np.ndarray:
        return self.arm * np.array([1.0, -1.0, -1.0, 1.0])

    @property
    def rotor_y(self) -> np.ndarray:
        return self.arm * np.array([1.0, 1.0, -1.0, -1.0])

    @property
    def rotor_c(self) -> np.ndarray:
        return self.yaw_coeff * np.array([1.0, -1.0, 1.0, -1.0])

    def geometry_matrix(self) -> np.ndarray:
        return np.vstack([np.ones(4), self.rotor_y, -self.rotor_x, self.rotor_c])


def steady_state_input(q: QuadrotorParams, mass: float) -> np.ndarray:
    """Rotor thrusts balancing gravity with zero net torque."""
    M = q.geometry_matrix()
    if abs(np.linalg.det(M)) < 1e-14:
        raise ModelError("rotor geometry matrix is singular")
    return np.linalg.solve(M, np.array([mass * q.g, 0.0, 0.0, 0.0]))


def _box_rows(n: int, bounds: dict[int, float]) -> np.ndarray:
    rows = []
    for idx, b in bounds.items():
        for sign in (1.0, -1.0):
            r = np.zeros(n)
            r[idx] = sign / b
            rows.append(r)
    return np.array(rows)


def _input_rows(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    m = lower.size
    rows = []
    for j in range(m):
        r = np.zeros(m)
        r[j] = 1.0 / upper[j]
        rows.append(r)
        r = np.zeros(m)
        r[j] = 1.0 / lower[j]
        rows.append(r)
    return np.array(rows)


@dataclass(frozen=True)
class QuadrotorModel:
    """A discretized quadrotor channel plus what the simulator needs around it.

    The model is written in deviation coordinates about hover; the absolute plant
    additionally has the known gravity term ``drift`` (``x+ = A x + B(theta) u_abs + drift``).
    ``total_thrust_rows`` maps the input vector to the collective thrust.
    """

    name: str
    params: QuadrotorParams
    system: ParametricSystem
    constraints: ConstraintSet
    drift: np.ndarray
    position_index: tuple
    state_names: tuple
    input_names: tuple
    input_lower: np.ndarray
    input_upper: np.ndarray
    rotors_per_input: int
    physical_state_bounds: dict = field(default_factory=dict)

    def hover_input(self, theta) -> np.ndarray:
        """Absolute steady-state input for parameter ``theta`` (thrust g/theta in total)."""
        theta = float(np.asarray(theta, dtype=float).reshape(-1)[0])
        if theta <= 0:
            raise ModelError("parameter must be positive (non-physical mass)")
        if self.system.m == 1:
            return np.array([self.params.g / theta])
        return steady_state_input(self.params, 1.0 / theta)

    def reference_state(self, position) -> np.ndarray:
        x = np.zeros(self.system.n)
        x[list(self.position_index)] = np.asarray(position, dtype=float).reshape(-1)
        return x

    def physical_violation(self, x_abs, u_abs) -> float:
        """Largest excess over the physical state boxes and rotor thrust limits (0 if none)."""
        x_abs = np.asarray(x_abs, dtype=float)
        u_abs = np.asarray(u_abs, dtype=float)
        worst = 0.0
        for idx, b in self.physical_state_bounds.items():
            worst = max(worst, abs(x_abs[idx]) - b)
        k = self.rotors_per_input
        worst = max(worst, float(np.max(k * self.params.thrust_min - u_abs)))
        worst = max(worst, float(np.max(u_abs - k * self.params.thrust_max)))
        return max(worst, 0.0)


def _input_box(q: QuadrotorParams, theta_bounds, rotors: int):
    lo_theta, hi_theta = (float(t) for t in theta_bounds)
    if not 0 < lo_theta <= hi_theta:
        raise ModelError("parameter bounds must be positive and ordered")
    # hover thrust g/theta per channel; the box holds for every theta in the range
    hover_min = q.g / hi_theta / (4 // rotors)
    hover_max = q.g / lo_theta / (4 // rotors)
    lower = rotors * q.thrust_min - hover_min
    upper = rotors * q.thrust_max - hover_max
    if not (lower < 0 < upper):
        raise ModelError("hover thrust range leaves no input margin on both sides")
    return lower, upper


def quadrotor_altitude_model(q: QuadrotorParams, theta_bounds) -> QuadrotorModel:
    """Vertical channel: states (p_z, v_z), input collective thrust deviation; theta = 1/m."""
    Ac = np.zeros((2, 2, 2))
    Ac[0] = [[0.0, 1.0], [0.0, 0.0]]
    Bc = np.zeros((2, 2, 1))
    Bc[1, 1, 0] = 1.0
    A, B = discretize_euler(Ac, Bc, q.Ts)
    lower, upper = _input_box(q, theta_bounds, rotors=4)
    F = np.vstack([_box_rows(2, {0: q.pos_bound}), np.zeros((2, 2))])
    G = np.vstack([np.zeros((2, 1)), _input_rows(np.array([lower]), np.array([upper]))])
    return QuadrotorModel(
        name="altitude-2",
        params=q,
        system=ParametricSystem(A, B),
        constraints=ConstraintSet(F, G),
        drift=np.array([0.0, -q.Ts * q.g]),
        position_index=(0,),
        state_names=("pz", "vz"),
        input_names=("f_total",),
        input_lower=np.array([lower]),
        input_upper=np.array([upper]),
        rotors_per_input=4,
        physical_state_bounds={0: q.pos_bound},
    )


def quadrotor_direct_model(q: QuadrotorParams, theta_bounds) -> QuadrotorModel:
    """Full hover linearization with individual rotor thrusts as inputs.

    States: position (3), velocity (3), roll/pitch/yaw (3), body rates (3).
    The parameter theta = 1/m enters only the vertical acceleration.
    """
    g = q.g
    Ac = np.zeros((2, 12, 12))
    Ac[0, 0:3, 3:6] = np.eye(3)
    Ac[0, 3, 7] = g  # x acceleration from pitch
    Ac[0, 4, 6] = -g  # y acceleration from roll
    Ac[0, 6:9, 9:12] = np.eye(3)
    torque = np.vstack([q.rotor_y, -q.rotor_x, q.rotor_c])
    Bc = np.zeros((2, 12, 4))
    Bc[0, 9:12, :] = np.linalg.solve(np.diag(q.inertia), torque)
    Bc[1, 5, :] = 1.0
    A, B = discretize_euler(Ac, Bc, q.Ts)
    lower, upper = _input_box(q, theta_bounds, rotors=1)
    state_bounds = {}
    for i in range(3):
        state_bounds[i] = q.pos_bound
        state_bounds[3 + i] = q.vel_bound
        state_bounds[6 + i] = q.angle_bound
        state_bounds[9 + i] = q.rate_bound
    F_state = _box_rows(12, dict(sorted(state_bounds.items())))
    F = np.vstack([F_state, np.zeros((8, 12))])
    G = np.vstack([np.zeros((len(F_state), 4)), _input_rows(np.full(4, lower), np.full(4, upper))])
    physical = {i: q.pos_bound for i in range(3)}
    physical.update({6 + i: q.angle_bound for i in range(3)})
    return QuadrotorModel(
        name="direct-12",
        params=q,
        system=ParametricSystem(A, B),
        constraints=ConstraintSet(F, G),
        drift=np.eye(12)[5] * (-q.Ts * g),
        position_index=(0, 1, 2),
        state_names=(
            "px", "py", "pz", "vx", "vy", "vz",
            "roll", "pitch", "yaw", "wx", "wy", "wz",
        ),
        input_names=("f1", "f2", "f3", "f4"),
        input_lower=np.full(4, lower),
        input_upper=np.full(4, upper),
        rotors_per_input=1,
        physical_state_bounds=physical,
    )


def build_model(name: str, q: QuadrotorParams, theta_bounds) -> QuadrotorModel:
    if name == "altitude-2":
        return quadrotor_altitude_model(q, theta_bounds)
    if name == "direct-12":
        return quadrotor_direct_model(q, theta_bounds)
    raise ModelError(f"unknown model {name!r}")


def wind_disturbance_box(
    model: QuadrotorModel, wind_speed: float = 2.0, drag: float = 9.57e-4
) -> HPolytope:
    """Per-step disturbance box for a wind of up to ``wind_speed`` acting through linear drag.

    Velocity rows get ``Ts * a`` and position rows ``Ts^2 / 2 * a`` with
    ``a = drag * wind_speed / m``.
    """
    q = model.params
    accel = drag * wind_speed / q.mass
    bound = np.zeros(model.system.n)
    pos = list(model.position_index)
    bound[pos] = 0.5 * q.Ts**2 * accel
    vel = [i + len(pos) for i in pos]
    bound[vel] = q.Ts * accel
    return HPolytope.from_box(-bound, bound)


def noise_box(model: QuadrotorModel, pos: float = 1e-3, vel: float = 1e-2, angle: float = 0.0):
    """Measurement-noise box; ``None`` when every bound is zero."""
    n = model.system.n
    bound = np.zeros(n)
    k = len(model.position_index)
    bound[:k] = pos
    bound[k : 2 * k] = vel
    if n > 2 * k:
        bound[2 * k : 3 * k] = angle
    if not np.any(bound > 0):
        return None
    return HPolytope.from_box(-bound, bound)
