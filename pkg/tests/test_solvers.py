import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.optimize import lsq_linear

from rampc.solvers import (
    LinearProgram,
    QuadraticProgram,
    SolverInputError,
    SolveStatus,
    lp_solve,
    qp_solve,
)

BOX2 = (np.vstack([np.eye(2), -np.eye(2)]), np.ones(4))


def test_lp_box_single_axis():
    rep = lp_solve(LinearProgram([1.0, 0.0], *BOX2))
    assert rep.status is SolveStatus.OPTIMAL
    assert rep.objective == pytest.approx(1.0, abs=1e-9)
    assert rep.solution[0] == pytest.approx(1.0, abs=1e-9)


def test_lp_box_diagonal():
    rep = lp_solve(LinearProgram([1.0, 1.0], *BOX2))
    assert rep.objective == pytest.approx(2.0, abs=1e-9)
    np.testing.assert_allclose(rep.solution, [1.0, 1.0], atol=1e-9)


def test_lp_unbounded():
    rep = lp_solve(LinearProgram([1.0], [[-1.0]], [0.0]))
    assert rep.status is SolveStatus.UNBOUNDED


def test_lp_infeasible():
    rep = lp_solve(LinearProgram([1.0], [[1.0], [-1.0]], [-1.0, -1.0]))
    assert rep.status is SolveStatus.INFEASIBLE


def test_lp_rejects_bad_shapes():
    with pytest.raises(SolverInputError):
        LinearProgram([1.0, 0.0], [[1.0]], [1.0])
    with pytest.raises(SolverInputError):
        LinearProgram([1.0], [[np.inf]], [1.0])


def test_qp_active_bound():
    rep = qp_solve(QuadraticProgram([[2.0]], [0.0], [[1.0]], [1.0], [np.inf]))
    assert rep.optimal
    assert rep.solution[0] == pytest.approx(1.0, abs=1e-6)
    assert rep.objective == pytest.approx(1.0, abs=1e-6)


def test_qp_interior_optimum():
    rep = qp_solve(QuadraticProgram([[2.0]], [0.0], [[1.0]], [-1.0], [1.0]))
    assert rep.optimal
    assert abs(rep.solution[0]) < 1e-6
    assert abs(rep.objective) < 1e-9


def test_qp_infeasible_with_certificate():
    A = np.array([[1.0], [-1.0]])
    rep = qp_solve(QuadraticProgram([[0.0]], [0.0], A, [-np.inf, -np.inf], [-1.0, -1.0]))
    assert rep.status is SolveStatus.INFEASIBLE
    # a uniform relaxation of 1 on both rows makes z = 0 feasible
    assert rep.certificate == pytest.approx(1.0, abs=1e-6)


def test_qp_unbounded():
    rep = qp_solve(QuadraticProgram([[0.0]], [-1.0], [[-1.0]], [-np.inf], [0.0]))
    assert rep.status is SolveStatus.UNBOUNDED


def test_qp_equality_rows():
    P = 2 * np.eye(2)
    rep = qp_solve(QuadraticProgram(P, np.zeros(2), [[1.0, 1.0]], [1.0], [1.0]))
    assert rep.optimal
    np.testing.assert_allclose(rep.solution, [0.5, 0.5], atol=1e-6)


def test_qp_input_validation():
    with pytest.raises(SolverInputError):
        QuadraticProgram([[1.0, 2.0], [0.0, 1.0]], [0, 0], np.eye(2), [0, 0], [1, 1])
    with pytest.raises(SolverInputError):
        QuadraticProgram([[1.0]], [0.0], [[1.0]], [1.0], [0.0])
    with pytest.raises(SolverInputError):
        qp_solve(QuadraticProgram([[-1.0]], [0.0], [[1.0]], [-1.0], [1.0]))


def test_qp_warm_start_same_optimum(rng):
    M = rng.normal(size=(6, 4))
    P = M.T @ M + 0.1 * np.eye(4)
    q = rng.normal(size=4)
    A = rng.normal(size=(8, 4))
    qp = QuadraticProgram(P, q, A, np.full(8, -np.inf), np.ones(8))
    cold = qp_solve(qp)
    warm = qp_solve(qp, warm_start=cold.solution + 0.01)
    assert cold.optimal and warm.optimal
    np.testing.assert_allclose(warm.solution, cold.solution, atol=1e-6)


def test_qp_deterministic(rng):
    M = rng.normal(size=(5, 3))
    qp = QuadraticProgram(M.T @ M, rng.normal(size=3), rng.normal(size=(4, 3)),
                          np.full(4, -np.inf), np.ones(4))
    a, b = qp_solve(qp), qp_solve(qp)
    assert a.status == b.status
    assert np.array_equal(a.solution, b.solution)


@given(
    M=hnp.arrays(np.float64, (5, 3), elements=st.floats(-2, 2)),
    y=hnp.arrays(np.float64, 5, elements=st.floats(-3, 3)),
    lo=hnp.arrays(np.float64, 3, elements=st.floats(-1, 0)),
    width=hnp.arrays(np.float64, 3, elements=st.floats(0.1, 2)),
)
def test_qp_box_least_squares_matches_oracle(M, y, lo, width):
    # 0.5|Mz - y|^2 over a box; scipy's bounded least squares is the reference
    M = M + np.vstack([np.eye(3), np.zeros((2, 3))])
    hi = lo + width
    qp = QuadraticProgram(M.T @ M, -M.T @ y, np.eye(3), lo, hi)
    rep = qp_solve(qp)
    assert rep.optimal
    assert qp.violation(rep.solution) <= 1e-6
    ref = lsq_linear(M, y, bounds=(lo, hi), tol=1e-12, method="bvls").x
    assert qp.objective(rep.solution) <= qp.objective(ref) + 1e-6


@given(
    seed=st.integers(0, 10_000),
)
def test_qp_beats_random_feasible_points(seed):
    rng = np.random.default_rng(seed)
    n, m = 4, 7
    L = rng.normal(size=(n, n))
    P = L @ L.T
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    u = rng.uniform(0.5, 2.0, size=m)  # z = 0 is strictly feasible
    qp = QuadraticProgram(P, q, A, np.full(m, -np.inf), u)
    rep = qp_solve(qp)
    assert rep.optimal
    assert qp.violation(rep.solution) <= 1e-6
    for _ in range(50):
        z = rng.normal(size=n) * rng.uniform(0, 1)
        if qp.violation(z) <= 0:
            assert rep.objective <= qp.objective(z) + 1e-6
