"""Orthogonal orientation frames and concentration values from raw head outputs.

A Bingham distribution needs a 4x4 orthogonal frame whose first column
is the mode, plus three non-positive descending concentrations. Raw,
unconstrained network outputs are mapped onto both:

* frames via one of three strategies -- classical Gram-Schmidt over a
  full 4x4 matrix (16 raw values), the quaternion matrix representation
  of Birdal (4 values, first column equals the normalized quaternion),
  or a Cayley transform of a skew-symmetric matrix (4 values, no
  normalization required);
* concentrations via negated cumulative softplus, which enforces
  ``0 >= l1 >= l2 >= l3`` by construction.

Every forward function has a matching ``*_vjp`` that backpropagates a
gradient w.r.t. the frame onto the raw inputs; all are batched over
leading dimensions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numeric import sigmoid, softplus

GRAM_SCHMIDT_MIN_RESIDUAL = 1e-8


class DegenerateColumnsError(ValueError):
    """Gram-Schmidt input with (numerically) dependent columns."""


class VStrategy(enum.Enum):
    """How the orientation frame is built from raw head values."""

    GRAM_SCHMIDT = "gram_schmidt"
    BIRDAL = "birdal"
    CAYLEY = "cayley"

    @property
    def raw_size(self) -> int:
        return 16 if self is VStrategy.GRAM_SCHMIDT else 4


# ---------------------------------------------------------------------------
# concentrations


def lambda_from_raw(raw) -> np.ndarray:
    """Map three raw values to concentrations via cumulative softplus.

    ``l_i = -(sp(o_1) + ... + sp(o_i))`` with ``sp`` the softplus, so the
    output is non-positive and descending for any finite input.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != 3:
        raise ValueError("expected 3 raw concentration values")
    return -np.cumsum(softplus(raw), axis=-1)


def lambda_from_raw_vjp(raw, grad_lam) -> np.ndarray:
    """Gradient of :func:`lambda_from_raw` w.r.t. the raw values."""
    raw = np.asarray(raw, dtype=float)
    # d l_i / d o_j = -sigmoid(o_j) for j <= i
    tail = np.cumsum(grad_lam[..., ::-1], axis=-1)[..., ::-1]
    return -sigmoid(raw) * tail


# ---------------------------------------------------------------------------
# Gram-Schmidt strategy


def gram_schmidt_V(matrix) -> np.ndarray:
    """Orthonormalize the columns of a 4x4 matrix, left to right.

    Raises :class:`DegenerateColumnsError` when a residual column norm
    falls below ``GRAM_SCHMIDT_MIN_RESIDUAL`` during the sweep.
    """
    V, _ = _gram_schmidt_forward(np.asarray(matrix, dtype=float))
    return V


def _gram_schmidt_forward(m: np.ndarray):
    if m.shape[-2:] != (4, 4):
        raise ValueError("expected a 4x4 matrix")
    cols = []
    dots = []  # dots[i][k] = <v_k, m_i>
    norms = []
    residuals = []
    for i in range(4):
        mi = m[..., :, i]
        di = []
        r = mi
        for vk in cols:
            d = np.sum(vk * mi, axis=-1)
            di.append(d)
            r = r - d[..., None] * vk
        n = np.linalg.norm(r, axis=-1)
        if np.any(n <= GRAM_SCHMIDT_MIN_RESIDUAL):
            raise DegenerateColumnsError(
                f"residual norm {n.min():.2e} <= {GRAM_SCHMIDT_MIN_RESIDUAL:.0e} "
                f"in column {i}"
            )
        cols.append(r / n[..., None])
        dots.append(di)
        norms.append(n)
        residuals.append(r)
    V = np.stack(cols, axis=-1)
    return V, (m, cols, dots, norms, residuals)


def _gram_schmidt_vjp(cache, grad_V: np.ndarray) -> np.ndarray:
    m, cols, dots, norms, _ = cache
    grad_m = np.zeros_like(m)
    grad_cols = [np.array(grad_V[..., :, i]) for i in range(4)]
    for i in range(3, -1, -1):
        vi = cols[i]
        n = norms[i][..., None]
        gv = grad_cols[i]
        # through r / |r|
        gr = (gv - vi * np.sum(vi * gv, axis=-1, keepdims=True)) / n
        # r = m_i - sum_k <v_k, m_i> v_k
        mi = m[..., :, i]
        gm = gr
        for k in range(i):
            vk = cols[k]
            d = dots[i][k][..., None]
            gm = gm - vk * np.sum(vk * gr, axis=-1, keepdims=True)
            grad_cols[k] -= d * gr + mi * np.sum(vk * gr, axis=-1, keepdims=True)
        grad_m[..., :, i] = gm
    return grad_m


# ---------------------------------------------------------------------------
# Birdal strategy (quaternion matrix representation)

# V[row, col] = sign * q[index]; first column is q itself.
_BIRDAL_INDEX = np.array(
    [
        [0, 1, 2, 3],
        [1, 0, 3, 2],
        [2, 3, 0, 1],
        [3, 2, 1, 0],
    ]
)
_BIRDAL_SIGN = np.array(
    [
        [1.0, -1.0, -1.0, 1.0],
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, -1.0],
    ]
)


def birdal_V(q) -> np.ndarray:
    """Orthonormal frame from a unit quaternion; column 0 equals ``q``.

    The map is linear in ``q`` and yields an orthogonal (not special
    orthogonal) matrix for every unit quaternion.
    """
    q = np.asarray(q, dtype=float)
    return _BIRDAL_SIGN * q[..., _BIRDAL_INDEX]


def _birdal_vjp(q, grad_V: np.ndarray) -> np.ndarray:
    g = _BIRDAL_SIGN * grad_V
    out = np.zeros_like(np.asarray(q, dtype=float))
    for k in range(4):
        out[..., k] = np.sum(g, axis=(-2, -1), where=(_BIRDAL_INDEX == k))
    return out


# ---------------------------------------------------------------------------
# Cayley strategy


def _skew(v: np.ndarray) -> np.ndarray:
    a, b, c, d = (v[..., i] for i in range(4))
    zero = np.zeros_like(a)
    return np.stack(
        [
            np.stack([zero, -a, d, -c], axis=-1),
            np.stack([a, zero, c, b], axis=-1),
            np.stack([-d, -c, zero, -a], axis=-1),
            np.stack([c, -b, a, zero], axis=-1),
        ],
        axis=-2,
    )


def _skew_vjp(grad_S: np.ndarray) -> np.ndarray:
    g = grad_S
    return np.stack(
        [
            g[..., 1, 0] - g[..., 0, 1] - g[..., 2, 3] + g[..., 3, 2],
            g[..., 1, 3] - g[..., 3, 1],
            g[..., 1, 2] - g[..., 2, 1] + g[..., 3, 0] - g[..., 0, 3],
            g[..., 0, 2] - g[..., 2, 0],
        ],
        axis=-1,
    )


def cayley_V(v) -> np.ndarray:
    """Special-orthogonal frame ``(I - S)^-1 (I + S)`` from four raw values.

    ``S`` is skew-symmetric, so ``I - S`` is always invertible and the
    input needs no normalization.
    """
    V, _ = _cayley_forward(np.asarray(v, dtype=float))
    return V


def _cayley_forward(v: np.ndarray):
    S = _skew(v)
    eye = np.broadcast_to(np.eye(4), S.shape)
    inv = np.linalg.inv(eye - S)
    V = inv @ (eye + S)
    return V, (v, inv, V)


def _cayley_vjp(cache, grad_V: np.ndarray) -> np.ndarray:
    v, inv, V = cache
    eye = np.broadcast_to(np.eye(4), V.shape)
    # dV = inv dS (V + I)  =>  dL/dS = inv^T dL/dV (V + I)^T
    grad_S = np.swapaxes(inv, -1, -2) @ grad_V @ np.swapaxes(V + eye, -1, -2)
    return _skew_vjp(grad_S)


# ---------------------------------------------------------------------------
# dispatch + head layout


def build_frame(raw, strategy: VStrategy):
    """Raw head values -> (frame, cache) for the given strategy.

    Gram-Schmidt consumes 16 values reshaped column-major (the first
    four raw values form the first column); the other strategies
    consume 4. Birdal normalizes its input first.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != strategy.raw_size:
        raise ValueError(
            f"{strategy.value} expects {strategy.raw_size} raw values, "
            f"got {raw.shape[-1]}"
        )
    if strategy is VStrategy.GRAM_SCHMIDT:
        m = np.swapaxes(raw.reshape(raw.shape[:-1] + (4, 4)), -1, -2)
        V, cache = _gram_schmidt_forward(m)
        return V, (strategy, cache)
    if strategy is VStrategy.BIRDAL:
        norm = np.linalg.norm(raw, axis=-1, keepdims=True)
        q = raw / norm
        return birdal_V(q), (strategy, (q, norm))
    V, cache = _cayley_forward(raw)
    return V, (strategy, cache)


def frame_vjp(cache, grad_V) -> np.ndarray:
    """Backpropagate a frame gradient onto the raw head values."""
    strategy, inner = cache
    if strategy is VStrategy.GRAM_SCHMIDT:
        gm = _gram_schmidt_vjp(inner, grad_V)
        return np.swapaxes(gm, -1, -2).reshape(grad_V.shape[:-2] + (16,))
    if strategy is VStrategy.BIRDAL:
        q, norm = inner
        gq = _birdal_vjp(q, grad_V)
        return (gq - q * np.sum(q * gq, axis=-1, keepdims=True)) / norm
    return _cayley_vjp(inner, grad_V)


@dataclass(frozen=True)
class HeadLayout:
    """Layout of the raw output head of a predictor network.

    Per mixture component the head carries 3 concentration values, the
    frame values of the chosen strategy, one mixture-weight logit and,
    when ``translation`` is set, 3 mean plus 3 variance values for a
    diagonal Gaussian over translations.
    """

    components: int = 1
    strategy: VStrategy = VStrategy.BIRDAL
    translation: bool = False

    def __post_init__(self):
        if self.components < 1:
            raise ValueError("need at least one component")

    @property
    def frame_size(self) -> int:
        return self.strategy.raw_size

    @property
    def block_size(self) -> int:
        return 3 + self.frame_size + 1 + (6 if self.translation else 0)

    @property
    def size(self) -> int:
        return self.components * self.block_size

    def split(self, raw):
        """Split ``(..., size)`` raw values into named per-component parts.

        Returns a dict with ``lam (..., M, 3)``, ``frame (..., M, fs)``,
        ``logit (..., M)`` and, if present, ``t_mean``/``t_var`` of
        shape ``(..., M, 3)``. The returned arrays are views.
        """
        raw = np.asarray(raw, dtype=float)
        if raw.shape[-1] != self.size:
            raise ValueError(f"expected head size {self.size}, got {raw.shape[-1]}")
        blocks = raw.reshape(raw.shape[:-1] + (self.components, self.block_size))
        fs = self.frame_size
        parts = {
            "lam": blocks[..., 0:3],
            "frame": blocks[..., 3 : 3 + fs],
            "logit": blocks[..., 3 + fs],
        }
        if self.translation:
            parts["t_mean"] = blocks[..., 4 + fs : 7 + fs]
            parts["t_var"] = blocks[..., 7 + fs : 10 + fs]
        return parts

    def join(self, **parts) -> np.ndarray:
        """Inverse of :func:`split`: assemble gradients into head shape."""
        lam = parts["lam"]
        blocks = np.zeros(lam.shape[:-2] + (self.components, self.block_size))
        fs = self.frame_size
        blocks[..., 0:3] = lam
        blocks[..., 3 : 3 + fs] = parts["frame"]
        blocks[..., 3 + fs] = parts.get("logit", 0.0)
        if self.translation:
            blocks[..., 4 + fs : 7 + fs] = parts.get("t_mean", 0.0)
            blocks[..., 7 + fs : 10 + fs] = parts.get("t_var", 0.0)
        return blocks.reshape(lam.shape[:-2] + (self.size,))
