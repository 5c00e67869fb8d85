"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict; the lines are printed together at the end
of the pytest run (see ``pytest_terminal_summary`` in conftest.py).
"""

import dataclasses
import time

import numpy as np
import pytest

from rampc.config import build_sets, load_bundled, synthesize_for
from rampc.controller import ControllerConfig, InfeasibleStepError, solve_step
from rampc.estimation import (
    EstimatorState,
    default_mu,
    nonfalsified_halfspaces,
    update_point_estimate,
    update_theta_set,
)
from rampc.geometry import Hyperbox, box_vertices, verify_contractive
from rampc.model import d_matrix, d_offset, eval_system
from rampc.sim import run_closed_loop
from rampc.synthesis import lambda_bar, verify_assumption2

VERDICTS: dict[int, str] = {}
ALL_LOGS: list = []


def record(n: int, title: str, ok: bool, detail: str) -> None:
    VERDICTS[n] = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print(VERDICTS[n])


@pytest.fixture(scope="module")
def setups():
    out = {}
    for name in ("altitude_mass", "altitude_failure", "direct_mass", "direct_baseline"):
        cfg = load_bundled(name)
        model, W, M = build_sets(cfg)
        out[name] = (cfg, model, W, synthesize_for(cfg, model, W))
    return out


@pytest.fixture(scope="module")
def runs(setups):
    logs = {name: run_closed_loop(cfg, artifacts=art) for name, (cfg, _, _, art) in setups.items()}
    ALL_LOGS.extend(logs.values())
    return logs


def _run(cfg, art, **changes):
    log = run_closed_loop(dataclasses.replace(cfg, **changes), artifacts=art)
    ALL_LOGS.append(log)
    return log


def _lost_containment(log) -> bool:
    return (not all(r["contained"] for r in log.records)) or any(r["falsified"] for r in log.records)


def test_criterion_01_parameter_containment(setups):
    t0 = time.perf_counter()
    seeds = range(50)
    alt_cfg, _, _, alt_art = setups["altitude_mass"]
    fail_cfg, _, _, fail_art = setups["altitude_failure"]
    dir_cfg, _, _, dir_art = setups["direct_mass"]
    lost = {}
    lost["altitude_mass"] = sum(_lost_containment(_run(alt_cfg, alt_art, seed=s, steps=60)) for s in seeds)
    lost["altitude_failure"] = sum(
        _lost_containment(_run(fail_cfg, fail_art, seed=s, steps=60)) for s in seeds
    )
    # the constant wind is seed-independent; random disturbances make the seeds matter
    dir_dist = dataclasses.replace(dir_cfg.disturbance, profile="uniform-random")
    lost["direct_mass"] = sum(
        _lost_containment(_run(dir_cfg, dir_art, seed=s, steps=8, disturbance=dir_dist)) for s in seeds
    )
    noisy = dataclasses.replace(alt_cfg.noise, enabled=True, dilation=True)
    lost["altitude_noise_dilated"] = sum(
        _lost_containment(_run(alt_cfg, alt_art, seed=s, steps=40, noise=noisy)) for s in seeds
    )
    undilated = dataclasses.replace(noisy, dilation=False)
    lost_undilated = sum(
        _lost_containment(_run(alt_cfg, alt_art, seed=s, steps=40, noise=undilated)) for s in seeds
    )
    elapsed = time.perf_counter() - t0
    ok = all(v == 0 for v in lost.values()) and lost_undilated > 0 and elapsed <= 120.0
    detail = (", ".join(f"{k} lost {v}/50" for k, v in lost.items())
              + f"; noise without dilation lost {lost_undilated}/50 (expected > 0); {elapsed:.0f} s")
    record(1, "parameter containment", ok, detail)
    assert ok, detail


def test_criterion_02_set_convergence(setups):
    cfg, model, _, art = setups["direct_mass"]
    rng = np.random.default_rng(2024)
    widths, contained = [], True
    for seed in range(5):
        direction = rng.choice([-1.0, 1.0], size=model.system.n).tolist()
        dist = dataclasses.replace(cfg.disturbance, profile="constant-wind", fraction=1.0,
                                   direction=direction)
        log = _run(cfg, art, seed=seed, steps=11, disturbance=dist)
        r = log.records[10]
        widths.append(1e3 * (1.0 / r["theta_lower"][0] - 1.0 / r["theta_upper"][0]))
        contained &= all(x["contained"] for x in log.records)
    ok = max(widths) <= 1.5 and contained
    detail = (f"mass interval width after 10 steps {min(widths):.3f}..{max(widths):.3f} g "
              f"(target 1.2 g, tolerance 1.5 g), containment {'kept' if contained else 'LOST'}")
    record(2, "set convergence", ok, detail)
    assert ok, detail


def test_criterion_04_failure_recovery(runs, setups):
    cfg = setups["altitude_failure"][0]
    log = runs["altitude_failure"]
    t_fail = cfg.failure.t_fail
    err = np.array([abs(r["x"][0] - r["ref"][0]) for r in log.records])
    feasible = all(r["feasible"] for r in log.records)
    within = [k for k in range(t_fail, len(err)) if np.all(err[k:] <= 0.05)]
    settle = (within[0] - t_fail) * 0.1 if within else np.inf
    peak = err[t_fail:].max()
    offset = err[-1]
    ok = feasible and settle <= 5.0 and offset > 1e-3
    detail = (f"feasible every step: {feasible}; within 0.05 m {settle:.1f} s after the failure; "
              f"peak error after the failure {peak:.4f} m, persistent offset {offset:.4f} m")
    record(4, "failure recovery", ok, detail)
    assert ok, detail


def test_criterion_05_baseline_contrast(runs):
    def z_error(log):
        r = log.records[-1]
        return abs(r["x"][2] - r["ref"][2])

    adaptive, baseline = z_error(runs["direct_mass"]), z_error(runs["direct_baseline"])
    ratio = baseline / max(adaptive, 1e-12)
    ok = ratio >= 5.0 and adaptive <= 0.02
    detail = f"final altitude error adaptive {adaptive:.4f} m, baseline {baseline:.4f} m (ratio {ratio:.1f})"
    record(5, "baseline contrast", ok, detail)
    assert ok, detail


def test_criterion_06_contractivity_certificate(setups):
    parts, ok = [], True
    for name in ("altitude_mass", "direct_mass"):
        cfg, model, _, art = setups[name]
        verts = box_vertices(art.theta0)
        cert = verify_contractive(art.X0, model.system, art.K, verts)
        terminal = art.lam + art.c_max * art.w_bar
        lb0 = lambda_bar(art.X0, model.system, art.K, art.theta0.center, art.theta0.side)
        lb_nominal = lambda_bar(art.X0, model.system, art.K, art.theta0.center, 0.0)
        ok &= cert.holds_for(0.9, 1e-8) and terminal <= 1.0 and lb_nominal <= art.lam + 1e-8
        parts.append(f"{model.name}: rate {cert.lambda_achieved:.6f}, lambda + c*w_bar = {terminal:.4f}, "
                     f"bound at (centre, 0) {lb_nominal:.4f}, at (centre, eta0) {lb0:.3f}")
    detail = "; ".join(parts)
    record(6, "contractivity certificate", ok, detail)
    assert ok, detail


def _tube_oracle(cfg, model, W, art, x0, rng, steps=10, samples=500):
    sys = model.system
    ccfg = ControllerConfig(art)
    theta0 = Hyperbox([cfg.theta0[0]], [cfg.theta0[1]])
    est = EstimatorState.initial(theta0, default_mu(sys, np.zeros(sys.n), np.full(sys.m, 0.64)))
    lo, hi = W.as_box()
    w_verts = np.array(box_vertices(Hyperbox(lo, hi)))
    x = np.asarray(x0, dtype=float)
    failures = solved = 0
    worst = -np.inf
    for _ in range(steps):
        try:
            sol = solve_step(x, est, ccfg, sys)
        except InfeasibleStepError:
            break
        solved += 1
        verts = box_vertices(est.theta_set)
        for i in range(samples):
            if i < len(verts) * 10:
                theta = verts[i % len(verts)]
            else:
                theta = rng.uniform(est.theta_set.lower, est.theta_set.upper)
            w = w_verts[rng.integers(len(w_verts))]
            A, B = eval_system(sys, theta)
            x_next = A @ x + B @ sol.u0 + w
            excess = np.max(art.X0.H @ (x_next - sol.x_bar[1])) - sol.alpha[1]
            worst = max(worst, excess)
            failures += excess > 1e-7
        # advance the true plant and the estimator
        A, B = eval_system(sys, [cfg.theta_star])
        w = rng.uniform(lo, hi)
        x_next = A @ x + B @ sol.u0 + w
        D, d = d_matrix(sys, x, sol.u0), d_offset(sys, x, sol.u0, x_next)
        est = update_theta_set(est, nonfalsified_halfspaces(D, d, W))
        est = update_point_estimate(est, D, x, sol.u0, x_next, sys)
        x = x_next
    return solved, failures, worst


def test_criterion_07_tube_containment_oracle(setups):
    rng = np.random.default_rng(7)
    parts, ok = [], True
    for name, x0 in (("altitude_mass", [0.4, -0.3]),
                     ("direct_mass", [0.2, -0.2, 0.3, 0.1, 0, -0.2, 0.05, -0.05, 0, 0, 0, 0])):
        cfg, model, W, art = setups[name]
        solved, failures, worst = _tube_oracle(cfg, model, W, art, x0, rng)
        ok &= solved == 10 and failures == 0
        parts.append(f"{model.name}: {solved} steps x 500 samples, {failures} failures "
                     f"(largest excess {worst:.2e})")
    detail = "; ".join(parts)
    record(7, "one-step tube containment", ok, detail)
    assert ok, detail


def test_criterion_08_terminal_cost_vertex_check(setups):
    parts, ok = [], True
    for name in ("altitude_mass", "direct_mass"):
        _, model, _, art = setups[name]
        verts = box_vertices(art.theta0)
        good, eig = verify_assumption2(art.K, art.P, model.system, verts, art.Q, art.R)
        bad, eig_bad = verify_assumption2(art.K, 0.9 * art.P, model.system, verts, art.Q, art.R)
        ok &= good and not bad
        parts.append(f"{model.name}: min eig {eig:.2e} (pass={good}), with 0.9 P {eig_bad:.2e} (pass={bad})")
    detail = "; ".join(parts)
    record(8, "terminal-cost vertex check", ok, detail)
    assert ok, detail


def test_criterion_09_performance(runs):
    alt = np.median([r["solve_ms"] for r in runs["altitude_mass"].records])
    direct = np.median([r["step_ms"] for r in runs["direct_mass"].records])
    ok = alt <= 2 * 5.0 and direct <= 2 * 90.0
    detail = (f"altitude median solve {alt:.2f} ms (target 5 ms), direct median identification+QP "
              f"{direct:.1f} ms (target 90 ms); 2x machine allowance")
    record(9, "performance", ok, detail)
    assert ok, detail


def test_criterion_10_determinism(setups, runs):
    digests = {}
    for name in ("altitude_mass", "direct_mass"):
        cfg, _, _, art = setups[name]
        digests[name] = _run(cfg, art).digest() == runs[name].digest()
    ok = all(digests.values())
    detail = ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'} hashes" for k, v in digests.items())
    record(10, "determinism", ok, detail)
    assert ok, detail


def test_criterion_03_constraint_satisfaction(runs):
    # runs last among the criteria so it sees every run made above
    worst = max(max(r["violation"] for r in log.records) for log in ALL_LOGS)
    worst = max(worst, max(log.metadata["final_violation"] for log in ALL_LOGS))
    steps = sum(len(log.records) for log in ALL_LOGS)
    ok = worst == 0.0
    detail = f"{len(ALL_LOGS)} runs, {steps} steps, largest true-state/thrust violation {worst:.3g}"
    record(3, "constraint satisfaction", ok, detail)
    assert ok, detail
