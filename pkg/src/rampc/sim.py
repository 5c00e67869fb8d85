"""Deterministic closed-loop simulation of the quadrotor channels under RAMPC."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controller import (
    ControllerConfig,
    InfeasibleStepError,
    constraint_offsets,
    solve_step,
    update_steady_state,
)
from .estimation import (
    EstimatorState,
    ModelFalsifiedError,
    default_mu,
    dilate_lower_bound,
    nonfalsified_halfspaces,
    nonfalsified_halfspaces_noisy,
    update_point_estimate,
    update_theta_set,
)
from .geometry import HPolytope, Hyperbox
from .model import ParametricSystem, d_matrix, d_offset, eval_system

PROFILES = ("constant-wind", "uniform-random", "off")


@dataclass(frozen=True)
class PlantState:
    x: np.ndarray
    k: int = 0
    gamma: float = 1.0


def plant_step(s: PlantState, u_abs, sys: ParametricSystem, theta_star, w, drift=None,
               gamma: float | None = None) -> PlantState:
    """``x+ = A(theta*) x + B(theta*) gamma u + drift + w``."""
    gamma = s.gamma if gamma is None else gamma
    A, B = eval_system(sys, theta_star)
    x_next = A @ s.x + B @ (gamma * np.asarray(u_abs, dtype=float)) + np.asarray(w, dtype=float)
    if drift is not None:
        x_next = x_next + drift
    return PlantState(x_next, s.k + 1, gamma)


def measure(s: PlantState, m) -> np.ndarray:
    return s.x + np.asarray(m, dtype=float)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _uniform_in(P: HPolytope, rng: np.random.Generator) -> np.ndarray:
    box = P.as_box()
    if box is not None:
        return rng.uniform(box[0], box[1])
    # rejection sampling from the bounding box
    from .geometry import support

    n = P.dim
    lo = np.array([-support(P, -e) for e in np.eye(n)])
    hi = np.array([support(P, e) for e in np.eye(n)])
    for _ in range(10_000):
        x = rng.uniform(lo, hi)
        if P.contains(x):
            return x
    raise RuntimeError("rejection sampling failed; set is too thin")


def _extreme_point(P: HPolytope, direction) -> np.ndarray:
    direction = np.asarray(direction, dtype=float)
    box = P.as_box()
    if box is not None:
        return np.where(direction > 0, box[1], np.where(direction < 0, box[0], 0.0))
    from .solvers import LinearProgram, lp_solve

    return lp_solve(LinearProgram(direction, P.H, P.h)).solution


def disturbance_stream(seed, W: HPolytope, profile: str = "uniform-random",
                       fraction: float = 1.0, direction=None):
    """Endless generator of disturbance vectors inside ``W``."""
    if profile not in PROFILES:
        raise ValueError(f"unknown disturbance profile {profile!r}")
    rng = _rng(seed)
    if profile == "off":
        while True:
            yield np.zeros(W.dim)
    if profile == "constant-wind":
        if not 0 <= fraction <= 1:
            raise ValueError("wind fraction must lie in [0, 1]")
        d = np.ones(W.dim) if direction is None else np.asarray(direction, dtype=float)
        w = fraction * _extreme_point(W, d)
        while True:
            yield w.copy()
    while True:
        yield _uniform_in(W, rng)


def noise_stream(seed, M: HPolytope | None, n: int):
    rng = _rng(seed)
    while True:
        yield np.zeros(n) if M is None else _uniform_in(M, rng)


@dataclass(frozen=True)
class FailureSchedule:
    t_fail: int | None = None
    gamma_after: float = 1.0

    def __call__(self, k: int) -> float:
        if self.t_fail is None or k < self.t_fail:
            return 1.0
        return self.gamma_after

    def profile(self, steps: int) -> np.ndarray:
        return np.array([self(k) for k in range(steps)])


def failure_schedule(t_fail, gamma_after: float, gamma_min: float = 0.7) -> FailureSchedule:
    """Rotor efficiency 1 before ``t_fail`` and ``gamma_after`` from then on."""
    if not gamma_min <= gamma_after <= 1.0:
        raise ValueError(f"efficiency after failure must lie in [{gamma_min}, 1]")
    return FailureSchedule(None if t_fail is None else int(t_fail), float(gamma_after))


@dataclass
class RunLog:
    """Per-step records plus run metadata.

    Timing fields (``*_ms``) are excluded from :meth:`digest` so identical
    configurations and seeds hash identically.
    """

    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    seed: int | None = None
    events: list = field(default_factory=list)

    TIMING = ("solve_ms", "step_ms")

    def digest(self) -> str:
        payload = {
            "records": [{k: v for k, v in r.items() if k not in self.TIMING} for r in self.records],
            "metadata": self.metadata,
            "seed": self.seed,
            "events": self.events,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records], dtype=float)

    def summary(self) -> dict:
        recs = self.records
        if not recs:
            return {"steps": 0}
        solve = np.array([r["solve_ms"] for r in recs if r["feasible"]])
        step = np.array([r["step_ms"] for r in recs])
        last = recs[-1]
        err = np.array(last["x"])[self.metadata["position_index"]] - np.array(last["ref"])
        viol = max(max(r["violation"] for r in recs), self.metadata.get("final_violation", 0.0))
        return {
            "steps": len(recs),
            "max_violation": viol,
            "final_theta_lower": last["theta_lower"],
            "final_theta_upper": last["theta_upper"],
            "theta_true_final": last["theta_true"],
            "containment_ok": all(r["contained"] for r in recs),
            "final_tracking_error": float(np.max(np.abs(err))),
            "mean_solve_ms": float(solve.mean()) if solve.size else float("nan"),
            "max_solve_ms": float(solve.max()) if solve.size else float("nan"),
            "median_step_ms": float(np.median(step)),
            "infeasible_count": sum(1 for r in recs if not r["feasible"]),
            "falsified_count": sum(1 for r in recs if r["falsified"]),
            "aborted": self.metadata.get("aborted", False),
            "digest": self.digest(),
        }

    def csv_columns(self) -> list[str]:
        md = self.metadata
        p, k = md["p"], len(md["position_index"])
        cols = ["k", "t"]
        cols += [f"ref_{i}" for i in range(k)]
        cols += [f"x_{s}" for s in md["state_names"]]
        cols += [f"xm_{s}" for s in md["state_names"]]
        cols += [f"u_{s}" for s in md["input_names"]]
        cols += [f"uss_{s}" for s in md["input_names"]]
        cols += ["cost", "alpha_1", "alpha_N"]
        for name in ("theta_lower", "theta_upper", "theta_bar", "theta_hat"):
            cols += [f"{name}_{i}" for i in range(p)]
        cols += ["eta", "theta_true", "contained", "gamma", "feasible", "falsified",
                 "violation", "solve_ms", "step_ms"]
        return cols

    def _csv_row(self, r: dict) -> list:
        row = [r["k"], r["t"], *r["ref"], *r["x"], *r["x_meas"], *r["u"], *r["u_ss"], r["cost"],
               r["alpha"][1] if len(r["alpha"]) > 1 else "", r["alpha"][-1] if r["alpha"] else ""]
        for name in ("theta_lower", "theta_upper", "theta_bar", "theta_hat"):
            row += list(r[name])
        row += [r["eta"], r["theta_true"], int(r["contained"]), r["gamma"], int(r["feasible"]),
                int(r["falsified"]), r["violation"], r["solve_ms"], r["step_ms"]]
        return row

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(self.csv_columns())
            for r in self.records:
                wr.writerow(self._csv_row(r))

    def to_json(self) -> dict:
        return {
            "metadata": self.metadata,
            "seed": self.seed,
            "events": self.events,
            "records": self.records,
            "summary": self.summary(),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1), encoding="utf-8")

    @classmethod
    def from_json(cls, d: dict) -> "RunLog":
        return cls(records=list(d["records"]), metadata=dict(d["metadata"]), seed=d.get("seed"),
                   events=list(d.get("events", [])))


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).reshape(-1)]


def run_closed_loop(scenario, artifacts=None, model=None) -> RunLog:
    """Simulate ``scenario`` (a :class:`rampc.config.ScenarioConfig`).

    Per step: measure, identify (adaptive mode), re-centre the steady-state input,
    solve the tube MPC, apply the input to the true plant.
    """
    from .config import prepare

    setup = prepare(scenario, artifacts=artifacts, model=model)
    model, artifacts, W, M = setup.model, setup.artifacts, setup.W, setup.M
    sc = scenario
    sys = model.system
    ccfg = ControllerConfig(
        artifacts=artifacts,
        N=sc.horizon,
        mode=sc.mode,
        ss_update=sc.ss_update,
        robustify_ss=sc.robustify_ss,
        failure_dilation=None if sc.failure_dilation is None else tuple(sc.failure_dilation.values()),
        theta_assumed=sc.assumed_theta(),
    )
    theta0 = Hyperbox([sc.theta0[0]], [sc.theta0[1]])
    mu = sc.mu
    if mu is None:
        k = model.rotors_per_input
        u_bound = np.full(sys.m, k * model.params.thrust_max)
        mu = default_mu(sys, np.zeros(sys.n), u_bound)
    hat0 = [sc.assumed_theta()] if ccfg.mode == "robust-baseline" else None
    est = EstimatorState.initial(theta0, mu, theta_hat=hat0)
    fixed_u = model.hover_input(sc.applied_theta())

    seeds = np.random.SeedSequence(sc.seed).spawn(2)
    dist = disturbance_stream(np.random.default_rng(seeds[0]), W, sc.disturbance.profile,
                              sc.disturbance.fraction, sc.disturbance.direction)
    noise = noise_stream(np.random.default_rng(seeds[1]), M if sc.noise.enabled else None, sys.n)
    schedule = failure_schedule(sc.failure.t_fail, sc.failure.gamma_after) if sc.failure else FailureSchedule()
    theta_star = np.array([sc.theta_star])

    log = RunLog(seed=sc.seed)
    log.metadata = {
        "scenario": sc.name,
        "model": model.name,
        "mode": ccfg.mode,
        "n": sys.n,
        "m": sys.m,
        "p": sys.p,
        "n_x": artifacts.n_x,
        "position_index": list(model.position_index),
        "state_names": list(model.state_names),
        "input_names": list(model.input_names),
        "Ts": model.params.Ts,
        "theta_star": float(sc.theta_star),
        "theta0": list(sc.theta0),
        "noise": bool(sc.noise.enabled),
        "noise_dilation": bool(sc.noise.dilation),
        "failure": None if sc.failure is None else {"t_fail": sc.failure.t_fail,
                                                     "gamma_after": sc.failure.gamma_after},
        "config_hash": sc.content_hash(),
    }

    state = PlantState(model.reference_state(sc.initial_position) if sc.initial_position is not None
                       else np.zeros(sys.n), 0, schedule(0))
    prev = None  # (x_meas, u_abs) of the previous step
    prev_sol = None
    noise_set = M if (sc.noise.enabled and sc.noise.dilation) else None
    K = artifacts.K
    aborted = False
    for k in range(sc.steps):
        t_start = time.perf_counter()
        gamma = schedule(k)
        x_meas = measure(state, next(noise))
        falsified = False
        if ccfg.adaptive and prev is not None:
            x_prev, u_prev = prev
            x_id = x_meas - model.drift
            D = d_matrix(sys, x_prev, u_prev)
            d = d_offset(sys, x_prev, u_prev, x_id)
            if noise_set is not None:
                hs = nonfalsified_halfspaces_noisy(D, d, W, noise_set, est.theta_set, sys)
            else:
                hs = nonfalsified_halfspaces(D, d, W)
            try:
                est = update_theta_set(est, hs, method=sc.estimator_method)
            except ModelFalsifiedError as exc:
                falsified = True
                log.events.append({"k": k, "event": "falsified", "detail": str(exc)})
                if sc.on_falsified == "abort":
                    aborted = True
            if not aborted:
                if ccfg.failure_dilation is not None:
                    factor, floor, variant = ccfg.failure_dilation
                    floor = theta0.lower if floor is None else floor
                    est = dilate_lower_bound(est, factor, floor, variant)
                est = update_point_estimate(est, D, x_prev, u_prev, x_id, sys)
        if aborted:
            break

        u_ss = update_steady_state(ccfg, est, model, fixed_input=fixed_u)
        ref_pos = sc.reference_at(k)
        ref_state = model.reference_state(ref_pos)
        x_dev = x_meas - ref_state
        b = constraint_offsets(artifacts.F, ref_state)
        feasible = True
        t_qp = time.perf_counter()
        try:
            sol = solve_step(x_dev, est, ccfg, sys, b=b, step=k)
            solve_ms = (time.perf_counter() - t_qp) * 1e3
            u_dev = sol.u0
            prev_sol = sol
            alpha = _floats(sol.alpha)
            cost = sol.cost
        except InfeasibleStepError as exc:
            solve_ms = (time.perf_counter() - t_qp) * 1e3
            feasible = False
            log.events.append({"k": k, "event": "infeasible", "detail": str(exc)})
            if sc.on_infeasible == "abort":
                aborted = True
                break
            v_fb = np.zeros(sys.m)
            if prev_sol is not None and len(prev_sol.v) > 1:
                v_fb = prev_sol.v[1]
                prev_sol = replace(prev_sol, v=np.vstack([prev_sol.v[1:], np.zeros((1, sys.m))]))
            u_dev = K @ x_dev + v_fb
            alpha = []
            cost = float("nan")
        u_abs = u_ss + u_dev
        if not feasible:
            # the fallback carries no guarantee; at least respect the actuator limits
            r = model.rotors_per_input
            u_abs = np.clip(u_abs, r * model.params.thrust_min, r * model.params.thrust_max)
        step_ms = (time.perf_counter() - t_start) * 1e3

        theta_true = float(sc.theta_star * (schedule(k - 1) if k > 0 else gamma))
        log.records.append({
            "k": k,
            "t": round(k * model.params.Ts, 10),
            "ref": _floats(ref_pos),
            "x": _floats(state.x),
            "x_meas": _floats(x_meas),
            "u": _floats(u_abs),
            "u_ss": _floats(u_ss),
            "cost": float(cost),
            "alpha": alpha,
            "theta_lower": _floats(est.theta_set.lower),
            "theta_upper": _floats(est.theta_set.upper),
            "theta_bar": _floats(est.theta_bar),
            "theta_hat": _floats(est.theta_hat),
            "eta": float(est.eta),
            "theta_true": theta_true,
            "contained": bool(est.theta_set.contains([theta_true], tol=1e-9)),
            "gamma": float(gamma),
            "feasible": feasible,
            "falsified": falsified,
            "violation": float(model.physical_violation(state.x, u_abs)),
            "solve_ms": solve_ms,
            "step_ms": step_ms,
        })
        w = next(dist)
        prev = (x_meas, u_abs)
        state = plant_step(state, u_abs, sys, theta_star, w, drift=model.drift, gamma=gamma)

    log.metadata["aborted"] = aborted
    log.metadata["final_state"] = _floats(state.x)
    log.metadata["final_violation"] = float(
        model.physical_violation(state.x, log.records[-1]["u"] if log.records else np.zeros(sys.m))
    )
    return log
