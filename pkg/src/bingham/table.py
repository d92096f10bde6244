"""Precomputed lookup table for the Bingham normalization constant.

Training needs ``log F`` and its gradient thousands of times per batch;
the quadrature oracle costs milliseconds per call. The table stores
``log F`` on a rectilinear grid over the concentration cube and answers
queries by trilinear interpolation. The returned gradient is the
analytic gradient of the interpolant itself, so losses and their
gradients are exactly consistent.

Grid nodes are clustered toward zero, where log F curves the most:
for an axis over ``[min, max]`` node ``i`` of ``n`` sits at
``max + (min - max) * (1 - i/(n-1)) ** NODE_POWER``. Values are stored
for the full cube even though queries are descending; log F is
symmetric under permutations of the concentrations, so the build only
evaluates unique sorted triples and mirrors the rest.

Binary format (little endian): magic ``BNGT``, format version u32,
three axis records ``{min f64, max f64, count u32}``, then
``n1*n2*n3`` f64 log F values row-major with the first axis slowest.
The node-placement rule above is part of the format semantics.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .distribution import DEFAULT_QUADRATURE_NODES, log_F_quadrature

MAGIC = b"BNGT"
FORMAT_VERSION = 1
NODE_POWER = 2.0
DEFAULT_RANGE = (-100.0, 0.0)
DEFAULT_COUNTS = (32, 32, 32)


class OutOfRangeError(ValueError):
    """Concentration query outside the table's grid."""


def axis_nodes(amin: float, amax: float, count: int, power: float = NODE_POWER):
    """Node positions for one axis, clustered toward ``amax``."""
    if count < 2:
        raise ValueError("need at least two nodes per axis")
    if not amin < amax:
        raise ValueError("axis range must satisfy min < max")
    t = np.linspace(0.0, 1.0, count)
    nodes = amax + (amin - amax) * (1.0 - t) ** power
    nodes[0], nodes[-1] = amin, amax
    return nodes


@dataclass(frozen=True)
class GridSpec:
    """Per-axis (min, max, count) triples defining the grid."""

    ranges: tuple[tuple[float, float], ...]
    counts: tuple[int, int, int]

    def __post_init__(self):
        if len(self.ranges) != 3 or len(self.counts) != 3:
            raise ValueError("grid spec needs three axes")
        for (lo, hi), n in zip(self.ranges, self.counts):
            if not (lo < hi <= 0.0):
                raise ValueError("axis range must satisfy min < max <= 0")
            if n < 2:
                raise ValueError("need at least two nodes per axis")

    def nodes(self):
        return [
            axis_nodes(lo, hi, n) for (lo, hi), n in zip(self.ranges, self.counts)
        ]


class NormalizationTable:
    """Trilinear-interpolated ``log F`` with its interpolant gradient."""

    def __init__(self, spec: GridSpec, values: np.ndarray):
        if values.shape != tuple(spec.counts):
            raise ValueError("value block does not match grid counts")
        self.spec = spec
        self.nodes = spec.nodes()
        self.values = np.ascontiguousarray(values, dtype=float)

    # -- construction -------------------------------------------------

    @classmethod
    def build(
        cls,
        spec: GridSpec = GridSpec((DEFAULT_RANGE,) * 3, DEFAULT_COUNTS),
        quadrature_nodes: int = DEFAULT_QUADRATURE_NODES,
        threads: int = 1,
    ) -> "NormalizationTable":
        """Evaluate the oracle on every grid node. Deterministic.

        When the three axes are identical, only unique descending
        triples are evaluated and mirrored across permutations.
        """
        axes = spec.nodes()
        same = all(
            len(a) == len(axes[0]) and np.array_equal(a, axes[0]) for a in axes
        )
        i1, i2, i3 = np.meshgrid(
            *(np.arange(n) for n in spec.counts), indexing="ij"
        )
        idx = np.stack([i1, i2, i3], axis=-1).reshape(-1, 3)
        if same:
            key = np.sort(idx, axis=1)
            uniq, inverse = np.unique(key, axis=0, return_inverse=True)
            lams = np.sort(axes[0][uniq], axis=1)[:, ::-1]  # descending
        else:
            inverse = np.arange(idx.shape[0])
            lams = np.stack(
                [axes[k][idx[:, k]] for k in range(3)], axis=-1
            )
        values = _evaluate(lams, quadrature_nodes, threads)[inverse]
        return cls(spec, values.reshape(spec.counts))

    # -- persistence ----------------------------------------------------

    def save(self, path) -> None:
        header = MAGIC + struct.pack("<I", FORMAT_VERSION)
        for (lo, hi), n in zip(self.spec.ranges, self.spec.counts):
            header += struct.pack("<ddI", lo, hi, n)
        try:
            with open(path, "wb") as fh:
                fh.write(header)
                fh.write(self.values.astype("<f8").tobytes(order="C"))
        except OSError as exc:
            raise IOError(f"cannot write table to {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "NormalizationTable":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != MAGIC:
            raise ValueError("not a normalization table file")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported table format version {version}")
        off = 8
        ranges, counts = [], []
        for _ in range(3):
            lo, hi, n = struct.unpack_from("<ddI", blob, off)
            off += 20
            ranges.append((lo, hi))
            counts.append(int(n))
        spec = GridSpec(tuple(ranges), tuple(counts))
        total = counts[0] * counts[1] * counts[2]
        values = np.frombuffer(blob, dtype="<f8", count=total, offset=off)
        return cls(spec, values.reshape(counts).copy())

    # -- queries --------------------------------------------------------

    def bounds(self):
        lo = np.array([r[0] for r in self.spec.ranges])
        hi = np.array([r[1] for r in self.spec.ranges])
        return lo, hi

    def clamp(self, lams):
        """Clamp concentrations into range; returns (clamped, was_clamped)."""
        lams = np.asarray(lams, dtype=float)
        lo, hi = self.bounds()
        clamped = np.clip(lams, lo, hi)
        return clamped, clamped != lams

    def log_norm_and_grad(self, lams):
        """Interpolated ``log F`` and the interpolant's gradient.

        ``lams`` has shape ``(..., 3)``; raises :class:`OutOfRangeError`
        for queries outside the grid (callers clamp explicitly via
        :meth:`clamp` when that policy is wanted).
        """
        lams = np.asarray(lams, dtype=float)
        flat = lams.reshape(-1, 3)
        lo, hi = self.bounds()
        if np.any(flat < lo - 1e-12) or np.any(flat > hi + 1e-12):
            raise OutOfRangeError("concentration outside table range")
        idx, frac, width = [], [], []
        for k in range(3):
            nodes = self.nodes[k]
            i = np.clip(
                np.searchsorted(nodes, flat[:, k], side="right") - 1,
                0,
                len(nodes) - 2,
            )
            idx.append(i)
            width.append(nodes[i + 1] - nodes[i])
            frac.append(np.clip((flat[:, k] - nodes[i]) / width[-1], 0.0, 1.0))
        corners = {}
        for b0 in (0, 1):
            for b1 in (0, 1):
                for b2 in (0, 1):
                    corners[b0, b1, b2] = self.values[
                        idx[0] + b0, idx[1] + b1, idx[2] + b2
                    ]

        def lerp(axis_weights):
            out = 0.0
            for (b0, b1, b2), c in corners.items():
                out = out + axis_weights[0][b0] * axis_weights[1][b1] * axis_weights[2][b2] * c
            return out

        w = [(1.0 - frac[k], frac[k]) for k in range(3)]
        value = lerp(w)
        ones = np.ones_like(flat[:, 0])
        grad = np.empty_like(flat)
        for k in range(3):
            dw = list(w)
            dw[k] = (-ones, ones)
            grad[:, k] = lerp(dw) / width[k]
        return value.reshape(lams.shape[:-1]), grad.reshape(lams.shape)


def _evaluate(lams: np.ndarray, quadrature_nodes: int, threads: int) -> np.ndarray:
    if threads <= 1 or lams.shape[0] < 64:
        return log_F_quadrature(lams, quadrature_nodes)
    pieces = np.array_split(np.arange(lams.shape[0]), threads * 4)
    out = np.empty(lams.shape[0])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            (piece, pool.submit(log_F_quadrature, lams[piece], quadrature_nodes))
            for piece in pieces
            if piece.size
        ]
        for piece, fut in futures:
            out[piece] = fut.result()
    return out
