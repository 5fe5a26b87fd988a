"""Finite state spaces over SO(3) and translations, plus the rotation metric
used for sequence-decoding transitions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import quat_to_matrix

# Quantization grid for deduplicating quaternions that differ only by
# floating-point noise or by sign.
_DEDUP_QUANTUM = 1e-9


@dataclass(eq=False)
class RotationGrid:
    """Deterministic discretization of SO(3) as canonicalized unit quaternions."""

    level: int
    quaternions: np.ndarray  # (S, 4), unit norm, first nonzero component positive

    def __len__(self) -> int:
        return len(self.quaternions)

    def matrices(self) -> np.ndarray:
        return np.stack([quat_to_matrix(q) for q in self.quaternions])

    def pairwise_angles(self) -> np.ndarray:
        """(S, S) geodesic angles, radians; equals the rotation-matrix form within 1e-9."""
        dots = np.clip(np.abs(self.quaternions @ self.quaternions.T), 0.0, 1.0)
        return 2.0 * np.arccos(dots)

    def nearest(self, quaternion) -> int:
        """Index of the grid rotation closest in geodesic angle."""
        q = np.asarray(quaternion, dtype=float)
        return int(np.argmax(np.abs(self.quaternions @ q)))


@dataclass(eq=False)
class TranslationGrid:
    """Uniform lattice of offsets, symmetric about its center."""

    center: np.ndarray
    half_extent: np.ndarray
    counts: tuple[int, int, int]
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.half_extent = np.asarray(self.half_extent, dtype=float).reshape(3)
        if any(c < 1 for c in self.counts):
            raise ValueError("counts must be >= 1 per axis")
        if (self.half_extent < 0).any():
            raise ValueError("half_extent must be >= 0")
        axes = []
        for c, h, n in zip(self.center, self.half_extent, self.counts):
            axes.append(np.array([c]) if n == 1 else np.linspace(c - h, c + h, n))
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        self.offsets = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def __len__(self) -> int:
        return len(self.offsets)


def build_rotation_grid(level: int) -> RotationGrid:
    """Rotation grid from the boundary lattice of the 4-cube [-1, 1]^4.

    Each of the 8 cubic facets carries a regular (2^level + 1)^3 vertex
    lattice; vertices are projected onto the unit 3-sphere, sign-canonicalized
    (antipodal quaternions identified), deduplicated, and sorted.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    ticks = np.linspace(-1.0, 1.0, 2**level + 1)
    gw, gx, gy, gz = np.meshgrid(ticks, ticks, ticks, ticks, indexing="ij")
    pts = np.stack([gw.ravel(), gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    boundary = pts[np.abs(pts).max(axis=1) == 1.0]
    quats = boundary / np.linalg.norm(boundary, axis=1, keepdims=True)
    # canonical sign: flip so the first nonzero component is positive
    nz = np.abs(quats) > 0.5 * _DEDUP_QUANTUM
    first = np.argmax(nz, axis=1)
    signs = np.sign(quats[np.arange(len(quats)), first])
    quats = quats * signs[:, None]
    # dedupe on a quantized key, then sort lexicographically by (w, x, y, z)
    keys = np.round(quats / _DEDUP_QUANTUM).astype(np.int64)
    order = np.lexsort((keys[:, 3], keys[:, 2], keys[:, 1], keys[:, 0]))
    keys = keys[order]
    quats = quats[order]
    keep = np.ones(len(quats), dtype=bool)
    keep[1:] = (keys[1:] != keys[:-1]).any(axis=1)
    return RotationGrid(level=level, quaternions=quats[keep])


def build_translation_grid(center, half_extent, counts) -> TranslationGrid:
    """Lattice of prod(counts) offsets; odd counts place a point at the center.

    Scalar half_extent / counts broadcast to all three axes.
    """
    c = np.atleast_1d(np.asarray(counts, dtype=int))
    if c.size == 1:
        c = c.repeat(3)
    h = np.atleast_1d(np.asarray(half_extent, dtype=float))
    if h.size == 1:
        h = h.repeat(3)
    return TranslationGrid(center=center, half_extent=h, counts=tuple(int(x) for x in c))


def rodrigues_error(r_i, r_j) -> float:
    """Geodesic angle in [0, pi] between two rotation matrices."""
    r_i = np.asarray(r_i, dtype=float)
    r_j = np.asarray(r_j, dtype=float)
    c = (float(np.trace(r_i.T @ r_j)) - 1.0) / 2.0
    return math.acos(max(-1.0, min(1.0, c)))


def covering_radius(grid: RotationGrid, samples: int, seed: int) -> float:
    """Monte-Carlo covering radius: max over random rotations of the geodesic
    distance to the nearest grid entry."""
    from .geometry import random_unit_quaternions

    q = random_unit_quaternions(samples, seed)
    # |<q, g>| maximized over grid entries g, in manageable blocks
    worst = 0.0
    for start in range(0, samples, 65536):
        block = q[start : start + 65536]
        best = np.abs(block @ grid.quaternions.T).max(axis=1)
        worst = max(worst, float(2.0 * np.arccos(np.clip(best, 0.0, 1.0)).max()))
    return worst
