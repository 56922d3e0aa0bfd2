"""Rotation algebra on SO(3).

Rotations are stored as unit quaternions ``(w, x, y, z)`` with a non-negative
scalar part.  The module has two layers:

* :class:`UnitRotation`, an immutable value type used at API boundaries;
* vectorised helpers (``qmul``, ``qangle``, ``qlog`` ...) on ``(..., 4)``
  arrays, used by the solver and the incremental engine.

Angles cross the public API in degrees; everything below is radians.
"""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .errors import NearPiAmbiguity

PI_BAND = 1e-6  # log is refused within this many radians of pi
_NORM_SLACK = 1e-12


# ---------------------------------------------------------------------------
# vectorised quaternion helpers

def qcanon(q: np.ndarray) -> np.ndarray:
    """Flip quaternions so that the scalar part is non-negative (returns a copy)."""
    q = np.array(q, dtype=float)
    q[q[..., 0] < 0.0] *= -1.0
    return q


def qnormalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    # leave already-unit quaternions bit-identical so text round trips are exact
    n = np.where(np.abs(n - 1.0) <= _NORM_SLACK, 1.0, n)
    return qcanon(q / n)


def qconj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, broadcasting over leading axes (matrix product a @ b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = aw * bw - ax * bx - ay * by - az * bz
    out[..., 1] = aw * bx + ax * bw + ay * bz - az * by
    out[..., 2] = aw * by - ax * bz + ay * bw + az * bx
    out[..., 3] = aw * bz + ax * by - ay * bx + az * bw
    neg = out[..., 0] < 0.0
    out[neg] *= -1.0
    return out


def qangle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic distance in radians between quaternion arrays ``a`` and ``b``."""
    d = qmul(qconj(a), b)
    return 2.0 * np.arctan2(np.linalg.norm(d[..., 1:], axis=-1), np.abs(d[..., 0]))


def qexp(v: np.ndarray) -> np.ndarray:
    """Rotation vector(s) (radians) to unit quaternion(s)."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    # sin(theta/2)/theta, series for tiny angles
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(half) / safe)
    return qcanon(np.concatenate([np.cos(half), k * v], axis=-1))


def qlog(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) to rotation vector(s) in radians (no pi check)."""
    q = qcanon(q)
    w = q[..., :1]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    theta = 2.0 * np.arctan2(s, w)
    small = s < 1e-12
    k = np.where(small, 2.0 / np.where(w > 0, w, 1.0), theta / np.where(small, 1.0, s))
    return k * v


def qrotangle(q: np.ndarray) -> np.ndarray:
    """Rotation angle in radians of each quaternion."""
    q = np.asarray(q, dtype=float)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method, vectorised; returns canonical unit quaternions."""
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    tr = np.trace(m, axis1=1, axis2=2)
    diag = np.diagonal(m, axis1=1, axis2=2)
    choice = np.argmax(np.concatenate([tr[:, None], diag], axis=1), axis=1)
    q = np.empty((m.shape[0], 4))

    i = choice == 0
    if i.any():
        s = np.sqrt(1.0 + tr[i]) * 2.0
        q[i, 0] = 0.25 * s
        q[i, 1] = (m[i, 2, 1] - m[i, 1, 2]) / s
        q[i, 2] = (m[i, 0, 2] - m[i, 2, 0]) / s
        q[i, 3] = (m[i, 1, 0] - m[i, 0, 1]) / s
    i = choice == 1
    if i.any():
        s = np.sqrt(1.0 + m[i, 0, 0] - m[i, 1, 1] - m[i, 2, 2]) * 2.0
        q[i, 0] = (m[i, 2, 1] - m[i, 1, 2]) / s
        q[i, 1] = 0.25 * s
        q[i, 2] = (m[i, 0, 1] + m[i, 1, 0]) / s
        q[i, 3] = (m[i, 0, 2] + m[i, 2, 0]) / s
    i = choice == 2
    if i.any():
        s = np.sqrt(1.0 + m[i, 1, 1] - m[i, 0, 0] - m[i, 2, 2]) * 2.0
        q[i, 0] = (m[i, 0, 2] - m[i, 2, 0]) / s
        q[i, 1] = (m[i, 0, 1] + m[i, 1, 0]) / s
        q[i, 2] = 0.25 * s
        q[i, 3] = (m[i, 1, 2] + m[i, 2, 1]) / s
    i = choice == 3
    if i.any():
        s = np.sqrt(1.0 + m[i, 2, 2] - m[i, 0, 0] - m[i, 1, 1]) * 2.0
        q[i, 0] = (m[i, 1, 0] - m[i, 0, 1]) / s
        q[i, 1] = (m[i, 0, 2] + m[i, 2, 0]) / s
        q[i, 2] = (m[i, 1, 2] + m[i, 2, 1]) / s
        q[i, 3] = 0.25 * s
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return qcanon(q).reshape(batch + (4,))


def hat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3) for rotation vectors ``phi`` (..., 3)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    coef = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        1.0 / t**2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t)),
    )
    k = hat(phi)
    return np.eye(3) + 0.5 * k + coef * (k @ k)


def random_quats(rng: np.random.Generator, size: int) -> np.ndarray:
    """Haar-uniform unit quaternions (normalised 4-D Gaussians)."""
    q = rng.standard_normal((size, 4))
    return qcanon(q / np.linalg.norm(q, axis=1, keepdims=True))


def perturbation_quats(rng: np.random.Generator, sigma_deg: float, size: int) -> np.ndarray:
    """Random axis, angle ``|N(0, sigma)|``."""
    axis = rng.standard_normal((size, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    angle = np.abs(rng.normal(0.0, math.radians(sigma_deg), size))
    return qexp(axis * angle[:, None])


# ---------------------------------------------------------------------------
# value types

class UnitRotation:
    """Immutable element of SO(3) backed by a canonical unit quaternion."""

    __slots__ = ("_q",)

    def __init__(self, q: Iterable[float]):
        arr = np.array(q, dtype=float).reshape(4)
        norm = float(np.linalg.norm(arr))
        if not np.isfinite(norm) or norm < 1e-12:
            raise ValueError(f"not a rotation quaternion: {arr}")
        arr = qnormalize(arr)
        arr.setflags(write=False)
        self._q = arr

    @classmethod
    def _trusted(cls, q: np.ndarray) -> "UnitRotation":
        obj = cls.__new__(cls)
        arr = np.array(q, dtype=float)
        arr.setflags(write=False)
        obj._q = arr
        return obj

    @classmethod
    def identity(cls) -> "UnitRotation":
        return cls._trusted(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m) -> "UnitRotation":
        return cls._trusted(matrix_to_quat(np.asarray(m, dtype=float)))

    @classmethod
    def from_axis_angle(cls, axis, angle_deg: float) -> "UnitRotation":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return exp_map(axis * math.radians(angle_deg))

    @classmethod
    def about_z(cls, angle_deg: float) -> "UnitRotation":
        return cls.from_axis_angle((0.0, 0.0, 1.0), angle_deg)

    @property
    def q(self) -> np.ndarray:
        return self._q

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self._q)

    @property
    def angle(self) -> float:
        """Rotation angle in degrees."""
        return math.degrees(float(qrotangle(self._q)))

    def inverse(self) -> "UnitRotation":
        return UnitRotation._trusted(qconj(self._q))

    def __matmul__(self, other: "UnitRotation") -> "UnitRotation":
        return UnitRotation._trusted(qmul(self._q, other._q))

    def __eq__(self, other) -> bool:
        if not isinstance(other, UnitRotation):
            return NotImplemented
        return bool(np.array_equal(self._q, other._q))

    def __hash__(self) -> int:
        return hash(self._q.tobytes())

    def __repr__(self) -> str:
        w, x, y, z = self._q
        return f"UnitRotation({w:.6g}, {x:.6g}, {y:.6g}, {z:.6g})"


class AxisAngle:
    """Unit axis plus angle in ``[0, pi]`` radians."""

    __slots__ = ("axis", "angle")

    def __init__(self, axis, angle: float):
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if angle < 0 or angle > math.pi or abs(n - 1.0) > 1e-9:
            raise ValueError("axis must be unit and angle in [0, pi]")
        self.axis = axis
        self.angle = float(angle)

    @classmethod
    def from_vector(cls, v) -> "AxisAngle":
        v = np.asarray(v, dtype=float)
        theta = float(np.linalg.norm(v))
        if theta == 0.0:
            return cls(np.array([1.0, 0.0, 0.0]), 0.0)
        return cls(v / theta, theta)

    def vector(self) -> np.ndarray:
        return self.axis * self.angle


# ---------------------------------------------------------------------------
# scalar operations

def canonical(q) -> np.ndarray:
    return qcanon(np.asarray(q, dtype=float))


def angular_distance(a: UnitRotation, b: UnitRotation) -> float:
    """Geodesic distance in degrees, in [0, 180]."""
    return math.degrees(float(qangle(a.q, b.q)))


def compose(a: UnitRotation, b: UnitRotation) -> UnitRotation:
    return a @ b


def inverse(a: UnitRotation) -> UnitRotation:
    return a.inverse()


def log_map(a: UnitRotation) -> np.ndarray:
    """Rotation vector (radians) of ``a``; refuses angles within 1e-6 of pi."""
    if float(qrotangle(a.q)) > math.pi - PI_BAND:
        raise NearPiAmbiguity("rotation angle too close to pi for a unique logarithm")
    return qlog(a.q)


def exp_map(v) -> UnitRotation:
    return UnitRotation._trusted(qexp(np.asarray(v, dtype=float).reshape(3)))


def sample_uniform(rng: np.random.Generator) -> UnitRotation:
    return UnitRotation._trusted(random_quats(rng, 1)[0])


def sample_perturbation(rng: np.random.Generator, sigma: float) -> UnitRotation:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return UnitRotation._trusted(perturbation_quats(rng, sigma, 1)[0])
