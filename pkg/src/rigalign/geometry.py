"""Mesh and point-cloud primitives.

Quaternion rotations, pinhole ray casting against triangle meshes,
hand-anchored normalization, surface sampling, and similarity transforms.
All coordinates are meters; all types are treated as immutable after
construction and are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCloud, EmptyCloud, EmptyMesh, ZeroArea

LABEL_BACKGROUND = 0
LABEL_HAND = 1
LABEL_OBJECT = 2


# ---------------------------------------------------------------------------
# Quaternions, stored (w, x, y, z) with unit norm.


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Flip sign so the first nonzero component is positive (q and -q are the same rotation)."""
    q = np.asarray(q, dtype=float)
    for c in q:
        if c != 0.0:
            return q if c > 0.0 else -q
    raise ValueError("zero quaternion has no canonical form")


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), stable for all traces."""
    R = np.asarray(R, dtype=float)
    t = R[0, 0] + R[1, 1] + R[2, 2]
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_angle(q1, q2) -> float:
    """Geodesic angle in radians between two rotations given as quaternions."""
    d = abs(float(np.dot(quat_normalize(q1), quat_normalize(q2))))
    return 2.0 * math.acos(min(d, 1.0))


def random_unit_quaternions(n: int, seed: int) -> np.ndarray:
    """n rotations drawn uniformly from SO(3), as (n, 4) unit quaternions."""
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Domain types.


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; pixel (row i, col j) has its center at (j + 0.5, i + 0.5)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")

    def pixel_rays(self) -> np.ndarray:
        """(H, W, 3) unit ray directions through all pixel centers, camera at the origin."""
        jj, ii = np.meshgrid(np.arange(self.width), np.arange(self.height))
        x = (jj + 0.5 - self.cx) / self.fx
        y = (ii + 0.5 - self.cy) / self.fy
        z = np.ones_like(x)
        d = np.stack([x, y, z], axis=-1)
        n = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2)
        return d / n[..., None]


@dataclass(eq=False)
class TriangleMesh:
    """Vertices (N, 3) in meters plus integer faces (M, 3)."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh vertices must be finite")
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValueError("face index out of range")
            same = (self.faces[:, 0] == self.faces[:, 1]) & (self.faces[:, 1] == self.faces[:, 2])
            if same.any():
                raise ValueError("degenerate face with three identical indices")

    def triangles(self) -> np.ndarray:
        """(M, 3, 3) vertex coordinates per face."""
        return self.vertices[self.faces]


@dataclass(eq=False)
class PointCloud:
    """Points (N, 3) with optional per-point color in [0, 1]^3 and label in {0, 1, 2}."""

    points: np.ndarray
    colors: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise ValueError("colors must match point count")
            if self.colors.size and (self.colors.min() < 0 or self.colors.max() > 1):
                raise ValueError("colors must lie in [0, 1]")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.points):
                raise ValueError("labels must match point count")
            if self.labels.size and not np.isin(self.labels, (0, 1, 2)).all():
                raise ValueError("labels must be in {0, 1, 2}")

    def __len__(self) -> int:
        return len(self.points)

    def select(self, index) -> "PointCloud":
        return PointCloud(
            self.points[index],
            None if self.colors is None else self.colors[index],
            None if self.labels is None else self.labels[index],
        )

    def filter_label(self, label: int) -> "PointCloud":
        """Points carrying the given label; clouds without labels pass through unchanged."""
        if self.labels is None:
            return self
        return self.select(self.labels == label)


@dataclass(eq=False)
class HandPointMap:
    """Per-pixel first mesh intersections: (H, W, 3) points and an (H, W) hit mask."""

    points: np.ndarray
    hits: np.ndarray

    @property
    def hit_fraction(self) -> float:
        return float(self.hits.mean()) if self.hits.size else 0.0

    def hit_points(self) -> np.ndarray:
        return self.points[self.hits]


@dataclass(frozen=True)
class NormalizationParams:
    """Anchored frame q = scale * (p - mean) / sigma, invertible exactly."""

    mean: np.ndarray
    sigma: float
    scale: float

    def apply(self, points) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=float) - self.mean) / self.sigma

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) * (self.sigma / self.scale) + self.mean


@dataclass(eq=False)
class SimilarityTransform:
    """p -> scale * R(rotation) * p + translation; scale 1 makes it a rigid pose."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.rotation = quat_normalize(self.rotation)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        self.scale = float(self.scale)
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), 1.0)

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.scale * (p @ self.matrix().T) + self.translation

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """self applied after other: (self o other)(p) = self(other(p))."""
        R = self.matrix()
        return SimilarityTransform(
            matrix_to_quat(R @ other.matrix()),
            self.scale * (R @ other.translation) + self.translation,
            self.scale * other.scale,
        )

    def inverse(self) -> "SimilarityTransform":
        R = self.matrix()
        return SimilarityTransform(
            matrix_to_quat(R.T), -(R.T @ self.translation) / self.scale, 1.0 / self.scale
        )


RigidPose = SimilarityTransform


# ---------------------------------------------------------------------------
# Ray casting.


def ray_triangle_intersect(origin, direction, triangle):
    """First intersection of a ray with a triangle.

    Returns (t, (a1, a2, a3)) with t > 0 the distance along the unit
    direction and a_i the barycentric weights of the three vertices, or
    None for a miss. Edges and vertices count as hits (a_i >= 0).
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    v0, v1, v2 = (np.asarray(v, dtype=float) for v in triangle)
    e1 = v1 - v0
    e2 = v2 - v0
    # p = d x e2, written out so the vectorized caster matches bit-for-bit
    px = d[1] * e2[2] - d[2] * e2[1]
    py = d[2] * e2[0] - d[0] * e2[2]
    pz = d[0] * e2[1] - d[1] * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if det == 0.0:
        return None
    inv = 1.0 / det
    tv = o - v0
    u = (tv[0] * px + tv[1] * py + tv[2] * pz) * inv
    qx = tv[1] * e1[2] - tv[2] * e1[1]
    qy = tv[2] * e1[0] - tv[0] * e1[2]
    qz = tv[0] * e1[1] - tv[1] * e1[0]
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if u < 0.0 or v < 0.0 or u + v > 1.0 or t <= 0.0:
        return None
    return t, (1.0 - u - v, u, v)


def first_hit_map(mesh: TriangleMesh, camera: Camera, chunk: int = 128) -> HandPointMap:
    """Nearest positive-t intersection of every pixel ray with the mesh.

    Front- and back-facing triangles both count; ties in t go to the lowest
    face index. Vectorized over pixels, chunked over faces to bound memory.
    """
    if len(mesh.faces) == 0:
        raise EmptyMesh("mesh has no faces")
    h, w = camera.height, camera.width
    dirs = camera.pixel_rays().reshape(-1, 3)
    npix = dirs.shape[0]
    best_t = np.full(npix, np.inf)
    best_point = np.zeros((npix, 3))
    tris = mesh.triangles()
    dx, dy, dz = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    for start in range(0, len(tris), chunk):
        v0 = tris[start : start + chunk, 0]
        e1 = tris[start : start + chunk, 1] - v0
        e2 = tris[start : start + chunk, 2] - v0
        # (npix, F) broadcasting of the scalar routine above
        px = dy * e2[:, 2] - dz * e2[:, 1]
        py = dz * e2[:, 0] - dx * e2[:, 2]
        pz = dx * e2[:, 1] - dy * e2[:, 0]
        det = e1[:, 0] * px + e1[:, 1] * py + e1[:, 2] * pz
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tv = -v0
            u = (tv[:, 0] * px + tv[:, 1] * py + tv[:, 2] * pz) * inv
            qx = tv[:, 1] * e1[:, 2] - tv[:, 2] * e1[:, 1]
            qy = tv[:, 2] * e1[:, 0] - tv[:, 0] * e1[:, 2]
            qz = tv[:, 0] * e1[:, 1] - tv[:, 1] * e1[:, 0]
            v = (dx * qx + dy * qy + dz * qz) * inv
            t = (e2[:, 0] * qx + e2[:, 1] * qy + e2[:, 2] * qz) * inv
            ok = (det != 0.0) & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 0.0)
        t = np.where(ok, t, np.inf)
        col = np.argmin(t, axis=1)
        rows = np.arange(npix)
        tmin = t[rows, col]
        better = tmin < best_t
        if not better.any():
            continue
        uw = u[rows, col][better]
        vw = v[rows, col][better]
        tri = tris[start + col[better]]
        a1 = 1.0 - uw - vw
        best_point[better] = (
            a1[:, None] * tri[:, 0] + uw[:, None] * tri[:, 1] + vw[:, None] * tri[:, 2]
        )
        best_t[better] = tmin[better]
    hits = np.isfinite(best_t).reshape(h, w)
    return HandPointMap(best_point.reshape(h, w, 3), hits)


def sample_hand_points(hand: TriangleMesh, camera: Camera) -> HandPointMap:
    """Per-pixel hand surface points via pinhole ray casting (misses marked in the mask)."""
    return first_hit_map(hand, camera)


# ---------------------------------------------------------------------------
# Normalization and sampling.


def normalize_points(points, s: float = 0.7):
    """Center points at their mean and divide by the RMS distance to it, times s.

    Returns (normalized points, params); params.invert round-trips exactly.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) < 2:
        raise DegenerateCloud("need at least 2 points to normalize")
    mean = p.mean(axis=0)
    sigma = float(np.sqrt(np.mean(np.sum((p - mean) ** 2, axis=1))))
    if sigma == 0.0:
        raise DegenerateCloud("all points identical")
    params = NormalizationParams(mean, sigma, float(s))
    return params.apply(p), params


def triangle_areas(mesh: TriangleMesh) -> np.ndarray:
    tris = mesh.triangles()
    cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def surface_area(mesh: TriangleMesh) -> float:
    return float(triangle_areas(mesh).sum())


def surface_centroid(mesh: TriangleMesh) -> np.ndarray:
    """Area-weighted centroid of the mesh surface (exact, no sampling)."""
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total == 0.0:
        raise ZeroArea("mesh has zero surface area")
    centers = mesh.triangles().mean(axis=1)
    return (areas[:, None] * centers).sum(axis=0) / total


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """n points uniform over the surface: faces by area, uniform within each face."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(mesh.faces) == 0:
        raise EmptyMesh("mesh has no faces")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total == 0.0:
        raise ZeroArea("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(areas), size=n, p=areas / total)
    tris = mesh.triangles()[idx]
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    pts = (
        tris[:, 0]
        + u[:, None] * (tris[:, 1] - tris[:, 0])
        + v[:, None] * (tris[:, 2] - tris[:, 0])
    )
    return PointCloud(pts)


def resample_point_cloud(pc: PointCloud, n: int, seed: int) -> PointCloud:
    """Exactly n points: uniform subsample without replacement, or all originals
    plus uniform-with-replacement extras when supersampling."""
    if len(pc) == 0:
        raise EmptyCloud("cannot resample an empty cloud")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if n <= len(pc):
        idx = rng.choice(len(pc), size=n, replace=False)
    else:
        extra = rng.choice(len(pc), size=n - len(pc), replace=True)
        idx = np.concatenate([np.arange(len(pc)), extra])
    return pc.select(idx)


def apply_pose(geometry, pose: SimilarityTransform):
    """scale * R * p + T over every point or vertex; attributes carried through."""
    if isinstance(geometry, TriangleMesh):
        return TriangleMesh(pose.apply(geometry.vertices), geometry.faces)
    if isinstance(geometry, PointCloud):
        return PointCloud(pose.apply(geometry.points), geometry.colors, geometry.labels)
    raise TypeError(f"unsupported geometry type: {type(geometry).__name__}")


# ---------------------------------------------------------------------------
# Point-to-surface distance (used by validation and tests).


def point_to_triangle_distance(point, triangle) -> float:
    return float(points_to_triangles_distance(np.asarray(point, float).reshape(1, 3),
                                              np.asarray(triangle, float).reshape(1, 3, 3))[0])


def points_to_triangles_distance(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Min distance from each point to the nearest of the given triangles.

    points (N, 3), tris (M, 3, 3) -> (N,). Closest-point-on-triangle via the
    standard region decomposition, broadcast over all pairs.
    """
    p = points[:, None, :]
    a, b, c = tris[None, :, 0], tris[None, :, 1], tris[None, :, 2]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v_face = np.where(denom != 0, vb / denom, 0.0)
        w_face = np.where(denom != 0, vc / denom, 0.0)
        v_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        v_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        v_bc = np.where((d4 - d3) + (d5 - d6) != 0, (d4 - d3) / ((d4 - d3) + (d5 - d6)), 0.0)
    closest = a + v_face[..., None] * ab + w_face[..., None] * ac
    # edge BC
    on_bc = (d4 - d3 >= 0) & (d5 - d6 >= 0) & (va <= 0)
    closest = np.where(on_bc[..., None], b + np.clip(v_bc, 0, 1)[..., None] * (c - b), closest)
    # edge AC
    on_ac = (d2 >= 0) & (d6 <= 0) & (vb <= 0)
    closest = np.where(on_ac[..., None], a + np.clip(v_ac, 0, 1)[..., None] * ac, closest)
    # edge AB
    on_ab = (d1 >= 0) & (d3 <= 0) & (vc <= 0)
    closest = np.where(on_ab[..., None], a + np.clip(v_ab, 0, 1)[..., None] * ab, closest)
    # vertex regions
    closest = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, closest)
    closest = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, closest)
    closest = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, closest)
    return np.sqrt(np.sum((p - closest) ** 2, axis=-1)).min(axis=1)


def points_to_mesh_distance(points, mesh: TriangleMesh, chunk: int = 64) -> np.ndarray:
    """Distance from each point to the mesh surface, chunked over faces."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    tris = mesh.triangles()
    best = np.full(len(pts), np.inf)
    for start in range(0, len(tris), chunk):
        d = points_to_triangles_distance(pts, tris[start : start + chunk])
        best = np.minimum(best, d)
    return best
