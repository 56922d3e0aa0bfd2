"""Levenberg-Marquardt over products of SO(3).

Minimises ``sum_k |log(R_ij @ R_i @ R_j.T)|^2`` (squared geodesic residuals in
radians) over the non-fixed rotations, with right-multiplicative updates
``R <- R @ exp(delta)``.  For a residual ``E = R_ij R_i R_j^T`` and
``r = log(E)``:

    dr/d(delta_i) =  Jr^-1(r) R_j
    dr/d(delta_j) = -Jr^-1(r) R_j
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import DidNotConverge, NearPiAmbiguity
from .so3 import (
    PI_BAND,
    UnitRotation,
    matrix_to_quat,
    qconj,
    qexp,
    qlog,
    qmul,
    qrotangle,
    quat_to_matrix,
    right_jacobian_inv,
)

log = logging.getLogger(__name__)

DENSE_LIMIT = 600  # free rotations; above this the normal equations go sparse
# Iterates and the acceptance cost are carried in extended precision: near the
# optimum a double-precision cost is flat to roundoff over ~1e-9 rad, which
# would leave the solution wandering inside that band.
XP = np.longdouble


@dataclass(frozen=True)
class ResidualTerm:
    i: int
    j: int
    meas: UnitRotation  # R_ij, with R_j = R_ij R_i


@dataclass
class SolveReport:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    cost_history: list[float] = field(default_factory=list)


@dataclass
class ManifoldProblem:
    """A rotation-graph least-squares problem.

    ``variables`` holds initial values; ids in ``fixed`` keep their value.
    ``constants`` are rotations known from outside the problem (always fixed)
    that terms may reference.  When nothing is fixed the lowest-index variable
    becomes the gauge.
    """

    variables: dict[int, UnitRotation]
    terms: list[ResidualTerm]
    fixed: set[int] = field(default_factory=set)
    constants: dict[int, UnitRotation] = field(default_factory=dict)
    max_iterations: int = 100
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12

    def to_arrays(self) -> "ArrayProblem":
        ids = sorted(set(self.variables) | set(self.constants))
        pos = {v: k for k, v in enumerate(ids)}
        q0 = np.array(
            [(self.variables[v] if v in self.variables else self.constants[v]).q for v in ids]
        ).reshape(-1, 4)
        fixed = np.array([v in self.fixed or v not in self.variables for v in ids], dtype=bool)
        try:
            ti = np.array([pos[t.i] for t in self.terms], dtype=np.int64)
            tj = np.array([pos[t.j] for t in self.terms], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"residual endpoint {exc.args[0]} is neither variable nor constant") from None
        meas = np.array([t.meas.q for t in self.terms]).reshape(-1, 4)
        return ArrayProblem(
            ids=np.asarray(ids, dtype=np.int64),
            q0=q0,
            fixed=fixed,
            ti=ti,
            tj=tj,
            meas=meas,
            max_iterations=self.max_iterations,
            gradient_tol=self.gradient_tol,
            step_tol=self.step_tol,
        )


@dataclass
class ArrayProblem:
    """Index-based form of :class:`ManifoldProblem` used by the hot paths."""

    ids: np.ndarray
    q0: np.ndarray
    fixed: np.ndarray
    ti: np.ndarray
    tj: np.ndarray
    meas: np.ndarray
    max_iterations: int = 100
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12

    def __post_init__(self):
        self.fixed = np.array(self.fixed, dtype=bool)
        if len(self.fixed) and not self.fixed.any():
            self.fixed[int(np.argmin(self.ids))] = True


# ---------------------------------------------------------------------------
# residuals and normal equations

def _residuals(R: np.ndarray, p: ArrayProblem, M: np.ndarray) -> np.ndarray:
    E = M @ R[p.ti] @ np.swapaxes(R[p.tj], 1, 2)
    return qlog(matrix_to_quat(E)) if len(E) else np.zeros((0, 3))


def _cost(r: np.ndarray) -> float:
    return float(np.einsum("ij,ij->", r, r))


def _near_pi(r: np.ndarray) -> bool:
    return bool(len(r)) and float(np.max(np.linalg.norm(r, axis=1))) > math.pi - PI_BAND


def _jacobian_blocks(R: np.ndarray, r: np.ndarray, p: ArrayProblem):
    Jj = right_jacobian_inv(r) @ R[p.tj]
    return Jj, -Jj  # d r / d delta_i, d r / d delta_j


def _gradient(R, r, p: ArrayProblem, n: int) -> np.ndarray:
    """Gradient of the cost (sum |r|^2) per rotation, shape (n, 3)."""
    Ji, Jj = _jacobian_blocks(R, r, p)
    g = np.zeros((n, 3))
    np.add.at(g, p.ti, 2.0 * np.einsum("kab,ka->kb", Ji, r))
    np.add.at(g, p.tj, 2.0 * np.einsum("kab,ka->kb", Jj, r))
    return g


def _normal_equations(R, r, p: ArrayProblem, free_pos: np.ndarray, n_free: int, dense: bool):
    """J^T J and J^T r restricted to free rotations (3 columns each)."""
    Ji, Jj = _jacobian_blocks(R, r, p)
    fi = free_pos[p.ti]
    fj = free_pos[p.tj]
    b = np.zeros((n_free, 3))
    mi = fi >= 0
    mj = fj >= 0
    np.add.at(b, fi[mi], np.einsum("kab,ka->kb", Ji[mi], r[mi]))
    np.add.at(b, fj[mj], np.einsum("kab,ka->kb", Jj[mj], r[mj]))

    JiT_Ji = np.einsum("kab,kac->kbc", Ji, Ji)
    JjT_Jj = np.einsum("kab,kac->kbc", Jj, Jj)
    JiT_Jj = np.einsum("kab,kac->kbc", Ji, Jj)
    both = mi & mj
    rows = [fi[mi], fj[mj], fi[both], fj[both]]
    cols = [fi[mi], fj[mj], fj[both], fi[both]]
    blocks = [JiT_Ji[mi], JjT_Jj[mj], JiT_Jj[both], np.swapaxes(JiT_Jj[both], 1, 2)]
    if dense:
        H = np.zeros((n_free, 3, n_free, 3))
        for rr, cc, bb in zip(rows, cols, blocks):
            np.add.at(H, (rr, slice(None), cc), bb)
        return H.reshape(3 * n_free, 3 * n_free), b.reshape(-1)
    ar = np.arange(3)
    R_idx = []
    C_idx = []
    V = []
    for rr, cc, bb in zip(rows, cols, blocks):
        R_idx.append((3 * rr[:, None, None] + ar[None, :, None]).repeat(3, axis=2).ravel())
        C_idx.append((3 * cc[:, None, None] + ar[None, None, :]).repeat(3, axis=1).ravel())
        V.append(bb.ravel())
    H = scipy.sparse.coo_matrix(
        (np.concatenate(V), (np.concatenate(R_idx), np.concatenate(C_idx))),
        shape=(3 * n_free, 3 * n_free),
    ).tocsc()
    return H, b.reshape(-1)


def _solve_damped(H, b, lam: float, dense: bool) -> np.ndarray:
    n = len(b)
    if dense:
        A = H + lam * np.eye(n)
        try:
            c = scipy.linalg.cho_factor(A, check_finite=False)
            return -scipy.linalg.cho_solve(c, b, check_finite=False)
        except scipy.linalg.LinAlgError:
            return -np.linalg.lstsq(A, b, rcond=None)[0]
    A = (H + lam * scipy.sparse.identity(n, format="csc")).tocsc()
    return -scipy.sparse.linalg.spsolve(A, b)


def _exp_xp(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula in extended precision, w of shape (k, 3)."""
    w = w.astype(XP)
    t2 = np.einsum("ka,ka->k", w, w)
    t = np.sqrt(t2)
    small = t < 1e-4
    ts = np.where(small, 1, t)
    a = np.where(small, 1 - t2 / 6 + t2 * t2 / 120, np.sin(ts) / ts)
    b = np.where(small, 0.5 - t2 / 24 + t2 * t2 / 720, (1 - np.cos(ts)) / (ts * ts))
    K = np.zeros((len(w), 3, 3), dtype=XP)
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -w[:, 2], w[:, 1], -w[:, 0]
    K[:, 1, 0], K[:, 2, 0], K[:, 2, 1] = w[:, 2], -w[:, 1], w[:, 0]
    KK = np.einsum("kab,kbc->kac", K, K)
    return np.eye(3, dtype=XP) + a[:, None, None] * K + b[:, None, None] * KK


def _cost_xp(Rx: np.ndarray, p: ArrayProblem, Mx: np.ndarray) -> XP:
    """Sum of squared residual angles from extended-precision matrices."""
    E = np.einsum("kab,kbc,kdc->kad", Mx, Rx[p.ti], Rx[p.tj])
    v = np.stack([E[:, 2, 1] - E[:, 1, 2], E[:, 0, 2] - E[:, 2, 0], E[:, 1, 0] - E[:, 0, 1]], axis=1)
    s = np.sqrt(np.einsum("ka,ka->k", v, v))
    c = E[:, 0, 0] + E[:, 1, 1] + E[:, 2, 2] - 1
    theta = np.arctan2(s, c)
    return np.sum(theta * theta)


def _apply(Rx: np.ndarray, free_idx: np.ndarray, delta: np.ndarray) -> np.ndarray:
    out = Rx.copy()
    out[free_idx] = np.einsum("kab,kbc->kac", Rx[free_idx], _exp_xp(delta.reshape(-1, 3)))
    return out


# ---------------------------------------------------------------------------
# driver

def solve_arrays(p: ArrayProblem, warn: bool = True) -> tuple[np.ndarray, SolveReport]:
    """Run LM on an :class:`ArrayProblem`; returns quaternions aligned with ``p.ids``."""
    n = len(p.ids)
    M = quat_to_matrix(p.meas) if len(p.meas) else np.zeros((0, 3, 3))
    free_idx = np.flatnonzero(~p.fixed)
    free_pos = np.full(n, -1, dtype=np.int64)
    free_pos[free_idx] = np.arange(len(free_idx))
    n_free = len(free_idx)
    dense = n_free <= DENSE_LIMIT

    Rx = quat_to_matrix(p.q0).astype(XP)
    Mx = M.astype(XP)
    R = Rx.astype(float)
    r = _residuals(R, p, M)
    attempts = 0
    jitter = np.random.default_rng(0)
    while _near_pi(r):
        if attempts == 3 or n_free == 0:
            raise NearPiAmbiguity("residual at pi persists after jittered retries")
        attempts += 1
        kick = jitter.normal(scale=1e-3, size=(n_free, 3))
        Rx = _apply(Rx, free_idx, kick.reshape(-1))
        R = Rx.astype(float)
        r = _residuals(R, p, M)

    cost = _cost_xp(Rx, p, Mx)
    report = SolveReport(initial_cost=float(cost), final_cost=float(cost), iterations=0, converged=False)
    report.cost_history.append(float(cost))
    if n_free == 0 or len(p.ti) == 0:
        report.converged = True
        q = matrix_to_quat(R) if n else p.q0.copy()
        q[p.fixed] = p.q0[p.fixed]
        return q, report

    lam = 1e-4
    q_fixed = p.q0[p.fixed]
    H, b = _normal_equations(R, r, p, free_pos, n_free, dense)
    for it in range(1, p.max_iterations + 1):
        report.iterations = it
        if np.max(np.abs(2.0 * b)) <= p.gradient_tol:
            report.converged = True
            break
        delta = _solve_damped(H, b, lam, dense)
        if np.max(np.abs(delta)) <= p.step_tol:
            report.converged = True
            break
        Rx_new = _apply(Rx, free_idx, delta)
        R_new = Rx_new.astype(float)
        r_new = _residuals(R_new, p, M)
        new_cost = XP(math.inf) if _near_pi(r_new) else _cost_xp(Rx_new, p, Mx)
        if new_cost < cost:
            Rx, R, r, cost = Rx_new, R_new, r_new, new_cost
            report.cost_history.append(float(cost))
            lam = max(lam / 10.0, 1e-12)
            H, b = _normal_equations(R, r, p, free_pos, n_free, dense)
        else:
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left at working precision
                report.converged = True
                break
    report.final_cost = float(cost)
    if not report.converged:
        if warn:
            warnings.warn(
                f"LM stopped after {report.iterations} iterations (cost {float(cost):.3e})",
                DidNotConverge,
                stacklevel=2,
            )
    q = matrix_to_quat(R)
    q[p.fixed] = q_fixed  # fixed rotations are returned bit-identical
    return q, report


def solve(problem: ManifoldProblem, warn: bool = True) -> tuple[dict[int, UnitRotation], SolveReport]:
    ap = problem.to_arrays()
    q, report = solve_arrays(ap, warn=warn)
    out = {}
    for v, qv, fx in zip(ap.ids.tolist(), q, ap.fixed):
        if v in problem.variables:
            out[v] = problem.variables[v] if fx else UnitRotation._trusted(qv)
    return out, report


def problem_cost(problem: ManifoldProblem) -> float:
    ap = problem.to_arrays()
    R = quat_to_matrix(ap.q0)
    return _cost(_residuals(R, ap, quat_to_matrix(ap.meas).reshape(-1, 3, 3)))


def numeric_gradient_check(problem: ManifoldProblem, h: float = 1e-6) -> float:
    """Max over free rotations of |analytic - central difference| / (1 + |analytic|)."""
    if not 1e-8 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-8, 1e-3]")
    ap = problem.to_arrays()
    n = len(ap.ids)
    M = quat_to_matrix(ap.meas).reshape(-1, 3, 3)
    R = quat_to_matrix(ap.q0)
    r = _residuals(R, ap, M)
    g = _gradient(R, r, ap, n)
    worst = 0.0
    for v in np.flatnonzero(~ap.fixed):
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            Rp = R.copy()
            Rm = R.copy()
            Rp[v] = R[v] @ quat_to_matrix(qexp(e))
            Rm[v] = R[v] @ quat_to_matrix(qexp(-e))
            fd = (_cost(_residuals(Rp, ap, M)) - _cost(_residuals(Rm, ap, M))) / (2 * h)
            worst = max(worst, abs(g[v, a] - fd) / (1.0 + abs(g[v, a])))
    return worst


def residual_angles(q: np.ndarray, ti: np.ndarray, tj: np.ndarray, meas: np.ndarray) -> np.ndarray:
    """Angles (radians) of ``R_ij`` against ``R_j R_i^T`` for quaternion arrays."""
    pred = qmul(q[tj], qconj(q[ti]))
    return qrotangle(qmul(qconj(meas), pred))
