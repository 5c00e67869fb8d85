"""Polytopes, boxes, support functions and lambda-contractive set construction."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .solvers import LinearProgram, SolveStatus, lp_solve

MAX_BOX_DIM = 20
POSITIVE_TOL = 1e-9
REDUNDANCY_TOL = 1e-9


class GeometryError(ValueError):
    pass


class UnboundedSetError(GeometryError):
    """A set assumed compact is unbounded in some direction."""


class EmptySetError(GeometryError):
    pass


class ContractionError(GeometryError):
    """The requested contraction rate cannot be reached."""


@dataclass(frozen=True)
class HPolytope:
    """The set ``{x : H x <= h}``."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if H.shape[0] < 1 or H.shape[0] != h.size:
            raise GeometryError(f"inconsistent H-representation: H {H.shape}, h {h.shape}")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise GeometryError("H-representation must be finite")
        H.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @classmethod
    def from_box(cls, lower, upper) -> "HPolytope":
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        n = lower.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]))

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_rows(self) -> int:
        return self.H.shape[0]

    def contains(self, x, tol: float = 1e-9) -> bool:
        return bool(np.all(self.H @ np.asarray(x, dtype=float) <= self.h + tol))

    def normalized(self) -> "HPolytope":
        """Rescale rows so that every offset equals one (needs ``h > 0``)."""
        if np.any(self.h <= 0):
            raise GeometryError("normalization needs the origin in the interior (h > 0)")
        return HPolytope(self.H / self.h[:, None], np.ones_like(self.h))

    def as_box(self):
        """``(lower, upper)`` if this is an axis-aligned box with every face present, else None."""
        n = self.dim
        lower = np.full(n, -np.inf)
        upper = np.full(n, np.inf)
        for row, off in zip(self.H, self.h):
            nz = np.flatnonzero(row)
            if nz.size != 1:
                return None
            i = nz[0]
            if row[i] > 0:
                upper[i] = min(upper[i], off / row[i])
            else:
                lower[i] = max(lower[i], off / row[i])
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))) or np.any(lower > upper):
            return None
        return lower, upper

    def to_json(self) -> dict:
        return {"H": self.H.tolist(), "h": self.h.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "HPolytope":
        return cls(np.array(data["H"], dtype=float), np.array(data["h"], dtype=float))


@dataclass(frozen=True)
class Hyperbox:
    """Axis-aligned box ``[lower, upper]``; a hypercube when all widths agree.

    The parameter sets of the estimator are hypercubes ``{center} + side * B_p`` with
    ``B_p`` the infinity-norm ball of radius 1/2; the interval form is kept so that
    one-sided dilations stay exact.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        up = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != up.shape:
            raise GeometryError("box bounds must have equal length")
        if np.any(lo > up):
            raise GeometryError("box lower bound exceeds upper bound")
        lo.setflags(write=False)
        up.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def cube(cls, center, side: float) -> "Hyperbox":
        if side < 0:
            raise GeometryError("hypercube side must be non-negative")
        center = np.asarray(center, dtype=float).reshape(-1)
        return cls(center - 0.5 * side, center + 0.5 * side)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def side(self) -> float:
        return float(np.max(self.widths))

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))

    def project(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float).reshape(-1), self.lower, self.upper)

    def to_polytope(self) -> HPolytope:
        return HPolytope.from_box(self.lower, self.upper)

    def to_json(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Hyperbox":
        return cls(data["lower"], data["upper"])


@dataclass(frozen=True)
class ContractivityCertificate:
    lambda_achieved: float
    values: np.ndarray  # rows of H_x x parameter vertices

    def holds_for(self, lam: float, tol: float = 1e-8) -> bool:
        return self.lambda_achieved <= lam + tol


def support(P: HPolytope, direction) -> float:
    """``max_{x in P} direction @ x``."""
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.size != P.dim:
        raise GeometryError(f"direction has length {d.size}, polytope lives in R^{P.dim}")
    rep = lp_solve(LinearProgram(d, P.H, P.h))
    if rep.status is SolveStatus.OPTIMAL:
        return rep.objective
    if rep.status is SolveStatus.UNBOUNDED:
        raise UnboundedSetError("polytope is unbounded in the requested direction")
    if rep.status is SolveStatus.INFEASIBLE:
        raise EmptySetError("support of an empty polytope")
    raise GeometryError(f"support LP ended with status {rep.status.value}")


def box_vertices(B: Hyperbox) -> list[np.ndarray]:
    """All distinct vertices of a box, in lexicographic (lower-first) order."""
    if B.dim > MAX_BOX_DIM:
        raise GeometryError(f"refusing to enumerate 2^{B.dim} vertices (limit p <= {MAX_BOX_DIM})")
    axes = [
        (lo,) if lo == up else (lo, up) for lo, up in zip(B.lower.tolist(), B.upper.tolist())
    ]
    return [np.array(v) for v in itertools.product(*axes)]


def _closed_loops(system, K, theta_vertices):
    return [system.closed_loop(theta, K) for theta in theta_vertices]


def verify_contractive(X: HPolytope, system, K, theta_vertices) -> ContractivityCertificate:
    """Contraction rate of ``X = {H_x x <= 1}`` under ``A(theta) + B(theta) K``.

    Each entry is ``max_{x in X} [H_x]_i A_cl(theta_j) x``; since the expression is
    affine in theta for fixed x, the vertex maximum bounds the whole convex hull.
    """
    if not np.allclose(X.h, 1.0):
        raise GeometryError("contractivity is defined for sets normalized to H x <= 1")
    if len(theta_vertices) == 0:
        raise GeometryError("need at least one parameter vertex")
    acls = _closed_loops(system, K, theta_vertices)
    values = np.empty((X.n_rows, len(acls)))
    for i, row in enumerate(X.H):
        for j, acl in enumerate(acls):
            values[i, j] = support(X, row @ acl)
    return ContractivityCertificate(float(values.max()), values)


def remove_redundant(P: HPolytope, keep=None) -> HPolytope:
    """Drop rows implied by the others; rows flagged in ``keep`` are never dropped."""
    return P if P.n_rows <= 1 else HPolytope(*_prune(P.H, P.h, keep)[:2])


def _prune(H, h, keep=None):
    keep = np.zeros(len(h), dtype=bool) if keep is None else np.asarray(keep, dtype=bool)
    active = np.ones(len(h), dtype=bool)
    for i in range(len(h) - 1, -1, -1):
        if keep[i]:
            continue
        others = active.copy()
        others[i] = False
        if not others.any():
            continue
        rep = lp_solve(LinearProgram(H[i], H[others], h[others]))
        if rep.status is SolveStatus.OPTIMAL and rep.objective <= h[i] + REDUNDANCY_TOL:
            active[i] = False
        elif rep.status is SolveStatus.INFEASIBLE:
            raise EmptySetError("polytope is empty")
    return H[active], h[active], active


def _unbounded_axes(H) -> list[int]:
    n = H.shape[1]
    bad = []
    for i in range(n):
        for sign in (1.0, -1.0):
            e = np.zeros(n)
            e[i] = sign
            rep = lp_solve(LinearProgram(e, H, np.ones(H.shape[0])))
            if rep.status is SolveStatus.UNBOUNDED:
                bad.append(i)
                break
    return bad


def build_contractive(
    Z_rows,
    system,
    K,
    theta_vertices,
    lam: float,
    max_rows: int = 200,
    bounding_box: HPolytope | None = None,
) -> HPolytope:
    """Grow ``{x : [F; GK] x <= 1}`` into a polytope that is ``lam``-contractive at every vertex.

    Each row ``h`` is checked against every closed loop ``A_cl``; when
    ``max h A_cl x > lam`` over the current set, the row ``h A_cl / lam`` is appended.
    Redundant appended rows are pruned after each sweep over the rows pending at
    its start; the initial rows are always kept.

    Args:
        Z_rows: ``(F, G)`` of the state/input constraints ``F x + G u <= 1``.
        bounding_box: rows added when ``[F; GK]`` alone leaves the set unbounded.
    """
    if not 0.0 < lam < 1.0:
        raise ContractionError("contraction rate must lie in (0, 1)")
    F, G = (np.atleast_2d(np.asarray(a, dtype=float)) for a in Z_rows)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    H = np.vstack([F, G @ K])
    H = H[np.linalg.norm(H, axis=1) > 1e-12]
    if _unbounded_axes(H):
        if bounding_box is None:
            raise UnboundedSetError("initial constraint set is unbounded; supply a bounding box")
        H = np.vstack([H, bounding_box.normalized().H])
        if _unbounded_axes(H):
            raise UnboundedSetError("initial constraint set is unbounded even with the bounding box")

    acls = _closed_loops(system, K, theta_vertices)
    rho = max(np.max(np.abs(np.linalg.eigvals(a))) for a in acls)
    if rho > lam + 1e-12:
        raise ContractionError(
            f"contraction rate lambda={lam} unreachable: closed-loop spectral radius is {rho:.4f}"
        )

    rows = [r for r in H]
    initial = [True] * len(rows)
    processed = [False] * len(rows)
    generated = 0
    while not all(processed):
        pending = [i for i, done in enumerate(processed) if not done]
        for i in pending:
            Hcur = np.array(rows)
            ones = np.ones(len(rows))
            for acl in acls:
                candidate = rows[i] @ acl
                rep = lp_solve(LinearProgram(candidate, Hcur, ones))
                if rep.status is not SolveStatus.OPTIMAL:
                    raise UnboundedSetError("contractivity LP did not reach an optimum")
                if rep.objective - lam > POSITIVE_TOL:
                    rows.append(candidate / lam)
                    initial.append(False)
                    processed.append(False)
                    generated += 1
                    Hcur = np.array(rows)
                    ones = np.ones(len(rows))
            processed[i] = True
        Hcur = np.array(rows)
        _, _, active = _prune(Hcur, np.ones(len(rows)), keep=initial)
        rows = [r for r, a in zip(rows, active) if a]
        initial = [f for f, a in zip(initial, active) if a]
        processed = [f for f, a in zip(processed, active) if a]
        if len(rows) > max_rows or generated > 20 * max_rows:
            raise ContractionError(
                f"contraction rate lambda={lam} unreachable at this complexity budget "
                f"({len(rows)} rows, limit {max_rows})"
            )
    return HPolytope(np.array(rows), np.ones(len(rows)))
