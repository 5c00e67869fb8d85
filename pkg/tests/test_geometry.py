import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from rampc.geometry import (
    ContractionError,
    EmptySetError,
    GeometryError,
    HPolytope,
    Hyperbox,
    UnboundedSetError,
    box_vertices,
    build_contractive,
    remove_redundant,
    support,
    verify_contractive,
)
from rampc.model import ParametricSystem
from rampc.synthesis import design_gain_and_cost


def scalar_system(a, b=0.0):
    return ParametricSystem(np.array([[[a]], [[0.0]]]), np.array([[[b]], [[0.0]]]))


UNIT_BOX = HPolytope.from_box([-1, -1], [1, 1])


def test_support_box_is_l1_norm():
    assert support(UNIT_BOX, [3, 4]) == pytest.approx(7.0)


def test_support_scalar_interval():
    assert support(HPolytope.from_box([-0.1], [0.1]), [1.0]) == pytest.approx(0.1)


def test_support_zero_direction():
    assert support(UNIT_BOX, [0, 0]) == pytest.approx(0.0)


def test_support_errors():
    with pytest.raises(UnboundedSetError):
        support(HPolytope([[-1.0]], [0.0]), [1.0])
    with pytest.raises(EmptySetError):
        support(HPolytope([[1.0], [-1.0]], [-1.0, -1.0]), [1.0])
    with pytest.raises(GeometryError):
        support(UNIT_BOX, [1.0])


def test_box_vertices_examples():
    v = box_vertices(Hyperbox.cube([0.5], 0.2))
    np.testing.assert_allclose(np.ravel(v), [0.4, 0.6])
    assert len(box_vertices(Hyperbox.cube([3.0], 0.0))) == 1
    v2 = np.array(box_vertices(Hyperbox.cube([0.0, 0.0], 2.0)))
    assert v2.shape == (4, 2)
    assert {tuple(r) for r in v2} == {(-1, -1), (-1, 1), (1, -1), (1, 1)}


def test_hyperbox_json_round_trip():
    b = Hyperbox([1.0, 2.0], [3.0, 2.5])
    back = Hyperbox.from_json(b.to_json())
    np.testing.assert_array_equal(back.lower, b.lower)
    np.testing.assert_array_equal(back.upper, b.upper)
    assert b.side == pytest.approx(2.0)
    np.testing.assert_allclose(b.project([0.0, 3.0]), [1.0, 2.5])


def test_verify_scalar_contraction():
    X = HPolytope.from_box([-1.0], [1.0])
    cert = verify_contractive(X, scalar_system(0.5), np.zeros((1, 1)), [np.zeros(1)])
    assert cert.lambda_achieved == pytest.approx(0.5)
    cert0 = verify_contractive(X, scalar_system(0.0), np.zeros((1, 1)), [np.zeros(1)])
    assert cert0.lambda_achieved == pytest.approx(0.0)


def test_verify_requires_unit_offsets():
    with pytest.raises(GeometryError):
        verify_contractive(HPolytope.from_box([-2.0], [2.0]), scalar_system(0.5), np.zeros((1, 1)),
                           [np.zeros(1)])


def test_build_contractive_keeps_already_contractive_set():
    X = build_contractive((np.array([[1.0], [-1.0]]), np.zeros((2, 1))), scalar_system(0.5),
                          np.zeros((1, 1)), [np.zeros(1)], 0.9)
    assert X.n_rows == 2
    np.testing.assert_allclose(sorted(X.H.ravel()), [-1.0, 1.0])


def test_build_contractive_rejects_rate_below_spectral_radius():
    # |a| > lambda: no bounded set contracts at rate lambda
    Z = (np.array([[1.0], [-1.0]]), np.zeros((2, 1)))
    with pytest.raises(ContractionError):
        build_contractive(Z, scalar_system(0.95), np.zeros((1, 1)), [np.zeros(1)], 0.9)
    with pytest.raises(ContractionError):
        build_contractive(Z, scalar_system(1.2), np.zeros((1, 1)), [np.zeros(1)], 0.9, max_rows=100)


def test_build_contractive_needs_bounded_start():
    Z = (np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros((2, 1)))
    sys = ParametricSystem(np.array([0.5 * np.eye(2), np.zeros((2, 2))]), np.zeros((2, 2, 1)))
    with pytest.raises(UnboundedSetError):
        build_contractive(Z, sys, np.zeros((1, 2)), [np.zeros(1)], 0.9)
    X = build_contractive(Z, sys, np.zeros((1, 2)), [np.zeros(1)], 0.9,
                          bounding_box=HPolytope.from_box([-2, -2], [2, 2]))
    assert verify_contractive(X, sys, np.zeros((1, 2)), [np.zeros(1)]).holds_for(0.9)


def test_altitude_contractive_set(altitude_model, theta0_box):
    m = altitude_model
    K, _, _ = design_gain_and_cost(m.system, theta0_box, np.diag([1.0, 0.01]), [[0.01]])
    verts = box_vertices(theta0_box)
    X = build_contractive((m.constraints.F, m.constraints.G), m.system, K, verts, 0.9)
    cert = verify_contractive(X, m.system, K, verts)
    assert cert.lambda_achieved <= 0.9 + 1e-8


def test_remove_redundant_examples():
    P = remove_redundant(HPolytope([[1.0], [1.0], [-1.0]], [1.0, 2.0, 1.0]))
    assert P.n_rows == 2
    assert support(P, [1.0]) == pytest.approx(1.0)
    assert remove_redundant(UNIT_BOX).n_rows == 4
    H = np.vstack([UNIT_BOX.H, [[0.5, 0.5]]])
    assert remove_redundant(HPolytope(H, np.ones(5))).n_rows == 4


@given(seed=st.integers(0, 10_000))
def test_remove_redundant_preserves_membership(seed):
    rng = np.random.default_rng(seed)
    H = np.vstack([UNIT_BOX.H, rng.normal(size=(6, 2))])
    h = np.concatenate([np.ones(4), rng.uniform(0.3, 3.0, size=6)])
    P = HPolytope(H, h)
    R = remove_redundant(P)
    pts = rng.uniform(-1.5, 1.5, size=(1000, 2))
    before = np.all(pts @ P.H.T <= P.h + 1e-9, axis=1)
    after = np.all(pts @ R.H.T <= R.h + 1e-9, axis=1)
    assert np.array_equal(before, after)


@given(
    lo=hnp.arrays(np.float64, 3, elements=st.floats(-5, 0)),
    width=hnp.arrays(np.float64, 3, elements=st.floats(0, 5)),
    d1=hnp.arrays(np.float64, 3, elements=st.floats(-10, 10)),
    d2=hnp.arrays(np.float64, 3, elements=st.floats(-10, 10)),
)
def test_support_is_sublinear(lo, width, d1, d2):
    P = HPolytope.from_box(lo, lo + width)
    assert support(P, d1 + d2) <= support(P, d1) + support(P, d2) + 1e-8


@given(
    center=hnp.arrays(np.float64, st.integers(1, 4), elements=st.floats(-100, 100)),
    side=st.floats(0, 50),
)
def test_box_vertices_inside_cube(center, side):
    cube = Hyperbox.cube(center, side)
    for v in box_vertices(cube):
        assert np.max(np.abs(v - center)) <= side / 2 + 1e-12


@given(seed=st.integers(0, 1000), lam=st.floats(0.6, 0.95))
def test_build_contractive_certificate_round_trip(seed, lam):
    rng = np.random.default_rng(seed)
    # random stable 2-state parametric system; rescale so the spectral radius stays below lam
    A0 = rng.normal(size=(2, 2))
    A1 = 0.05 * rng.normal(size=(2, 2))
    scale = 0.9 * lam / max(np.max(np.abs(np.linalg.eigvals(A0 + t * A1))) for t in (-1, 1))
    sys = ParametricSystem(np.array([A0 * scale, A1 * scale]), np.zeros((2, 2, 1)))
    verts = [np.array([-1.0]), np.array([1.0])]
    rho = max(np.max(np.abs(np.linalg.eigvals(sys.closed_loop(v, np.zeros((1, 2)))))) for v in verts)
    Z = (np.vstack([np.eye(2), -np.eye(2)]), np.zeros((4, 1)))
    try:
        X = build_contractive(Z, sys, np.zeros((1, 2)), verts, lam, max_rows=60)
    except ContractionError:
        # only acceptable when the vertex closed loops are not jointly contractive at lam
        assert rho > 0.8 * lam
        return
    assert verify_contractive(X, sys, np.zeros((1, 2)), verts).holds_for(lam, 1e-8)
