"""Unit-quaternion arithmetic on the 3-sphere.

Quaternions are stored as plain numpy arrays ``[w, x, y, z]``; every
function accepts batches of shape ``(..., 4)``. A rotation has two
antipodal representatives ``q`` and ``-q``. :func:`canonicalize` picks
the representative whose first nonzero component (scanning w, x, y, z)
is positive, so each rotation has exactly one stored form. The rule is
well defined even when ``w == 0``, unlike the common ``w >= 0``
convention.

Rotation distances:

* :func:`geodesic_distance` -- ``2 * arccos(|<q1, q2>|)``, the angle of
  the relative rotation, in ``[0, pi]``.
* :func:`bingham_metric` -- ``<q1, q2>**2 = cos(theta/2)**2``, the
  squared-cosine similarity the Bingham density is built from.
* :func:`quaternion_l1` -- antipodal-aware l1 distance,
  ``min(|q - qhat|_1, |q + qhat|_1)``.

All three are invariant under negating either argument.
"""
from __future__ import annotations

import numpy as np

UNIT_NORM_TOL = 1e-12


class ZeroNormError(ValueError):
    """Raised when a quaternion with (near-)zero norm cannot be normalized."""


def _asq(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise ValueError(f"expected trailing dimension 4, got shape {q.shape}")
    return q


def normalize(q) -> np.ndarray:
    """Scale to unit norm. Raises :class:`ZeroNormError` below 1e-12."""
    q = _asq(q)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n <= UNIT_NORM_TOL):
        raise ZeroNormError("quaternion norm below 1e-12")
    return q / n


def canonicalize(q) -> np.ndarray:
    """Normalize and map to the hemisphere representative.

    The result has unit norm and its first nonzero component (scanning
    w, x, y, z) is positive. Idempotent; ``canonicalize(-q)`` equals
    ``canonicalize(q)``.
    """
    qn = normalize(q)
    sign = np.zeros(qn.shape[:-1])
    for k in range(4):
        sign = np.where(sign == 0.0, np.sign(qn[..., k]), sign)
    return qn * sign[..., None]


def geodesic_distance(q1, q2):
    """Angular error ``2 * arccos(|q1 . q2|)`` in radians, in [0, pi].

    The dot product is clamped to [-1, 1] before ``arccos`` so rounding
    noise on unit inputs cannot produce NaN.
    """
    q1, q2 = _asq(q1), _asq(q2)
    dot = np.abs(np.sum(q1 * q2, axis=-1))
    ang = 2.0 * np.arccos(np.clip(dot, -1.0, 1.0))
    return float(ang) if ang.ndim == 0 else ang


def bingham_metric(q1, q2):
    """Squared dot product ``(q1 . q2)**2 = cos(theta/2)**2`` in [0, 1]."""
    q1, q2 = _asq(q1), _asq(q2)
    d = np.sum(q1 * q2, axis=-1) ** 2
    return float(d) if d.ndim == 0 else d


def quaternion_l1(q1, q2):
    """Antipodal-aware l1 distance ``min(|q1 - q2|_1, |q1 + q2|_1)``.

    A plain l1 norm would penalize the ``-q`` representative of the
    same rotation; the minimum over both signs removes that artifact.
    """
    q1, q2 = _asq(q1), _asq(q2)
    dm = np.sum(np.abs(q1 - q2), axis=-1)
    dp = np.sum(np.abs(q1 + q2), axis=-1)
    d = np.minimum(dm, dp)
    return float(d) if d.ndim == 0 else d


def multiply(q1, q2) -> np.ndarray:
    """Hamilton product, batched over leading dimensions."""
    q1, q2 = _asq(q1), _asq(q2)
    w1, x1, y1, z1 = (q1[..., i] for i in range(4))
    w2, x2, y2, z2 = (q2[..., i] for i in range(4))
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def rot_z(angle: float) -> np.ndarray:
    """Quaternion of a rotation by ``angle`` radians about the z axis."""
    return np.array([np.cos(angle / 2.0), 0.0, 0.0, np.sin(angle / 2.0)])


def rotation_matrix(q) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion, batched ``(..., 3, 3)``."""
    q = _asq(q)
    w, x, y, z = (q[..., i] for i in range(4))
    row0 = np.stack(
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1
    )
    row1 = np.stack(
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1
    )
    row2 = np.stack(
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1
    )
    return np.stack([row0, row1, row2], axis=-2)


def rotation_matrix_vjp(q, grad_matrix) -> np.ndarray:
    """Backpropagate a gradient w.r.t. the rotation matrix onto q.

    ``grad_matrix`` has shape ``(..., 3, 3)``; returns ``(..., 4)``.
    """
    q = _asq(q)
    w, x, y, z = (q[..., i] for i in range(4))
    zero = np.zeros_like(w)

    def m(rows):
        return 2.0 * np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    dw = m([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    dx = m([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = m([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    dz = m([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])
    return np.stack(
        [np.sum(grad_matrix * d, axis=(-2, -1)) for d in (dw, dx, dy, dz)], axis=-1
    )


def rotate(q, points) -> np.ndarray:
    """Apply the rotation of unit quaternion ``q`` to points ``(N, 3)``."""
    pts = np.asarray(points, dtype=float)
    return pts @ rotation_matrix(q).T


def random_uniform(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` canonicalized quaternions uniform on the rotation group."""
    return canonicalize(rng.normal(size=(n, 4)))
