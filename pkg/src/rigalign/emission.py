"""Per-state observation costs.

Scale estimation from second moments, silhouette rasterization, PCA feature
similarity, and the combined chamfer + feature emission cost evaluated over
candidate pose states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateCloud, EmptyOverlap, InsufficientSamples, ParseError
from .geometry import (
    Camera,
    PointCloud,
    SimilarityTransform,
    TriangleMesh,
    sample_mesh_surface,
)
from .metrics import chamfer_distance
from . import meshio


@dataclass(eq=False)
class FeatureMap:
    """Dense (H, W, C) feature grid with a binary silhouette mask."""

    features: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.features.ndim != 3:
            raise ValueError("features must be (H, W, C)")
        if self.mask.shape != self.features.shape[:2]:
            raise ValueError("mask dimensions must match the feature grid")

    @property
    def channels(self) -> int:
        return self.features.shape[2]


@dataclass(eq=False)
class PCABasis:
    """Mean feature vector plus the top-3 principal directions (orthonormal rows)."""

    mean: np.ndarray
    components: np.ndarray

    def project(self, features: np.ndarray) -> np.ndarray:
        """(N, C) feature vectors -> (N, 3) principal coordinates."""
        return (np.asarray(features, dtype=float) - self.mean) @ self.components.T


@dataclass(eq=False)
class FrameObservation:
    """Observed object points plus the input-image feature map for one frame."""

    points: PointCloud
    features: FeatureMap | None = None

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValueError("frame observation needs a non-empty object cloud")

    @property
    def mean(self) -> np.ndarray:
        return self.points.points.mean(axis=0)


def estimate_scale(x, y) -> float:
    """Size ratio sqrt(top eigenvalue of X) / sqrt(top eigenvalue of Y).

    Eigenvalues are of the per-point second-moment matrix of the mean-centered
    cloud, so the estimate is translation-invariant and tolerates unequal
    point counts.
    """

    def top_moment(cloud) -> float:
        p = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
        p = p.reshape(-1, 3)
        if len(p) < 2:
            raise DegenerateCloud("scale estimation needs at least 2 points")
        c = p - p.mean(axis=0)
        return float(np.linalg.eigvalsh((c.T @ c) / len(p))[-1])

    lam_x = top_moment(x)
    lam_y = top_moment(y)
    if lam_y <= 0.0:
        raise DegenerateCloud("model cloud has zero extent")
    return math.sqrt(lam_x) / math.sqrt(lam_y)


# ---------------------------------------------------------------------------
# Silhouette rasterization.


def rasterize_silhouette(mesh: TriangleMesh, pose: SimilarityTransform, camera: Camera) -> np.ndarray:
    """(H, W) bool coverage of the posed mesh under the pinhole camera.

    A pixel is set when its center ray hits any triangle at positive depth,
    matching per-pixel ray casting. Projected bounding boxes keep the inner
    test cheap; triangles crossing the camera plane fall back to a full scan.
    """
    verts = pose.apply(mesh.vertices)
    tris = verts[mesh.faces]
    h, w = camera.height, camera.width
    mask = np.zeros((h, w), dtype=bool)
    u_centers = (np.arange(w) + 0.5 - camera.cx) / camera.fx
    v_centers = (np.arange(h) + 0.5 - camera.cy) / camera.fy
    for tri in tris:
        z = tri[:, 2]
        if (z <= 0.0).all():
            continue
        m = tri.T  # columns are the three vertices
        if np.linalg.det(m) == 0.0:
            continue
        if (z > 0.0).all():
            u = camera.fx * tri[:, 0] / z + camera.cx
            v = camera.fy * tri[:, 1] / z + camera.cy
            j0 = max(0, math.ceil(u.min() - 0.5))
            j1 = min(w - 1, math.floor(u.max() - 0.5))
            i0 = max(0, math.ceil(v.min() - 0.5))
            i1 = min(h - 1, math.floor(v.max() - 0.5))
            if j0 > j1 or i0 > i1:
                continue
        else:
            i0, i1, j0, j1 = 0, h - 1, 0, w - 1
        du = u_centers[j0 : j1 + 1]
        dv = v_centers[i0 : i1 + 1]
        gx, gy = np.meshgrid(du, dv)
        dirs = np.stack([gx.ravel(), gy.ravel(), np.ones(gx.size)])
        bary = np.linalg.solve(m, dirs)
        covered = (bary >= 0.0).all(axis=0).reshape(i1 - i0 + 1, j1 - j0 + 1)
        mask[i0 : i1 + 1, j0 : j1 + 1] |= covered
    return mask


# ---------------------------------------------------------------------------
# PCA feature similarity.


def pca_basis(maps) -> PCABasis:
    """Top-3 principal directions of masked-in feature vectors pooled over maps.

    Sign convention: each direction's largest-magnitude component is positive.
    """
    maps = list(maps)
    if not maps:
        raise InsufficientSamples("no feature maps given")
    pooled = np.concatenate([m.features[m.mask] for m in maps], axis=0)
    if pooled.shape[0] < 3:
        raise InsufficientSamples("need at least 3 masked-in pixels to fit a basis")
    if pooled.shape[1] < 3:
        raise InsufficientSamples("need at least 3 feature channels")
    mean = pooled.mean(axis=0)
    centered = pooled - mean
    cov = (centered.T @ centered) / len(centered)
    _, vecs = np.linalg.eigh(cov)
    comps = vecs[:, ::-1][:, :3].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PCABasis(mean=mean, components=comps)


def dino_similarity(f_j: FeatureMap, f_0: FeatureMap, basis: PCABasis, eps: float = 1e-8) -> float:
    """Feature disagreement in [0, 1]: 0 identical, 1 anti-aligned.

    Projects both maps onto the basis over the intersection of their masks,
    then maps cosine similarity c to 1 - (c + 1) / 2.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if f_j.features.shape[:2] != f_0.features.shape[:2]:
        raise ValueError("feature maps must share spatial dimensions")
    domain = f_j.mask & f_0.mask
    if not domain.any():
        raise EmptyOverlap("masked pixel domains do not intersect")
    a = basis.project(f_j.features[domain]).ravel()
    b = basis.project(f_0.features[domain]).ravel()
    denom = max(float(np.linalg.norm(a)) * float(np.linalg.norm(b)), eps)
    cos = float(a @ b) / denom
    cos = max(-1.0, min(1.0, cos))
    return 1.0 - 0.5 * (cos + 1.0)


# ---------------------------------------------------------------------------
# Candidate feature sources.


class FeatureSource:
    """Supplier of candidate-pose feature evidence.

    Either a precomputed (frames x states) table of feature errors, or
    per-state feature maps rendered/loaded on demand.
    """

    def errors_table(self, phase: str) -> np.ndarray | None:
        return None

    def candidate_features(self, phase: str, frame_index: int, state_index: int,
                           pose: SimilarityTransform) -> FeatureMap:
        raise NotImplementedError


class TableFeatureSource(FeatureSource):
    """Precomputed per-frame, per-state feature errors (NaN marks empty overlap)."""

    def __init__(self, rotation_table: np.ndarray | None, translation_table: np.ndarray | None):
        self._tables = {"rotation": rotation_table, "translation": translation_table}

    def errors_table(self, phase: str) -> np.ndarray | None:
        return self._tables.get(phase)


class DirectoryFeatureSource(FeatureSource):
    """Feature maps from files feat_<phase>_<frame>_<state>.fmap under a root dir."""

    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, phase: str, frame_index: int, state_index: int) -> Path:
        return self.root / f"feat_{phase}_{frame_index:06d}_{state_index:06d}.fmap"

    def candidate_features(self, phase, frame_index, state_index, pose) -> FeatureMap:
        p = self.path_for(phase, frame_index, state_index)
        if not p.is_file():
            raise ParseError(f"missing candidate feature map {p}")
        feats, mask = meshio.load_fmap(p)
        return FeatureMap(feats, mask)


class SyntheticFeatureSource(FeatureSource):
    """Renders a known pose-dependent feature field; used for end-to-end checks."""

    def __init__(self, mesh: TriangleMesh, camera: Camera, field):
        self.mesh = mesh
        self.camera = camera
        self.field = field

    def candidate_features(self, phase, frame_index, state_index, pose) -> FeatureMap:
        from .synthetic import render_feature_map

        return render_feature_map(self.mesh, pose, self.camera, self.field)


# ---------------------------------------------------------------------------
# Combined emission cost.


class EmissionEvaluator:
    """Chamfer + feature cost of candidate poses for one model and sequence.

    The model surface is sampled once (seeded); candidate poses move that
    sample. Chamfer runs against an equal-size resample of the observed
    cloud, in cm^2. The feature term renders the posed mesh silhouette and
    compares basis-projected features against the frame's input map.
    """

    def __init__(self, mesh: TriangleMesh, scale: float, *, camera: Camera | None = None,
                 w_cd: float = 1.0, w_dino: float = 1.0,
                 feature_source: FeatureSource | None = None, basis: PCABasis | None = None,
                 sample_count: int = 1024, seed: int = 0, penalty_factor: float = 10.0):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.mesh = mesh
        self.scale = float(scale)
        self.camera = camera
        self.w_cd = float(w_cd)
        self.w_dino = float(w_dino)
        self.feature_source = feature_source
        self.basis = basis
        self.sample_count = int(sample_count)
        self.seed = int(seed)
        self.penalty_factor = float(penalty_factor)
        self.sample = sample_mesh_surface(mesh, self.sample_count, seed).points

    @property
    def use_features(self) -> bool:
        return self.w_dino != 0.0 and self.feature_source is not None

    def full_pose(self, state: SimilarityTransform) -> SimilarityTransform:
        """Model-to-camera transform: the rigid state with the model scale folded in."""
        return SimilarityTransform(state.rotation, state.translation, self.scale * state.scale)

    def posed_sample(self, state: SimilarityTransform) -> np.ndarray:
        return self.full_pose(state).apply(self.sample)

    def chamfer_term(self, x_resampled: np.ndarray, state: SimilarityTransform) -> float:
        return chamfer_distance(x_resampled, self.posed_sample(state))

    def feature_term(self, phase: str, frame_index: int, state_index: int,
                     state: SimilarityTransform, obs: FrameObservation) -> float:
        """Feature error for one state; raises EmptyOverlap when the rendered
        silhouette misses the observed mask."""
        if obs.features is None:
            raise ValueError("frame has no input feature map")
        if self.camera is None:
            raise ValueError("feature term needs a camera")
        if self.basis is None:
            raise ValueError("feature term needs a PCA basis")
        pose = self.full_pose(state)
        fj = self.feature_source.candidate_features(phase, frame_index, state_index, pose)
        silhouette = rasterize_silhouette(self.mesh, pose, self.camera)
        fj = FeatureMap(fj.features, fj.mask & silhouette)
        return dino_similarity(fj, obs.features, self.basis)

    def cost(self, state: SimilarityTransform, obs: FrameObservation, *,
             phase: str = "rotation", frame_index: int = 0, state_index: int = 0,
             x_resampled: np.ndarray | None = None) -> float:
        """Raw weighted emission cost for a single rigid state (no normalization)."""
        if x_resampled is None:
            x_resampled = _resampled_points(obs, self.sample_count, self.seed)
        total = 0.0
        if self.w_cd != 0.0:
            total += self.w_cd * self.chamfer_term(x_resampled, state)
        if self.use_features:
            table = self.feature_source.errors_table(phase)
            if table is not None:
                value = float(table[frame_index, state_index])
                if not math.isfinite(value):
                    raise EmptyOverlap("precomputed feature error marks empty overlap")
                total += self.w_dino * value
            else:
                total += self.w_dino * self.feature_term(phase, frame_index, state_index, state, obs)
        return total

    def frame_terms(self, phase: str, frame_index: int, obs: FrameObservation,
                    states) -> tuple[np.ndarray, np.ndarray | None]:
        """Raw chamfer and feature term arrays over all states of one frame.

        The feature array uses NaN for empty-overlap states and is None when
        the feature term is disabled.
        """
        x_res = _resampled_points(obs, self.sample_count, self.seed)
        cd = np.array([self.chamfer_term(x_res, state) for state in states])
        if not self.use_features:
            return cd, None
        table = self.feature_source.errors_table(phase)
        if table is not None:
            return cd, np.asarray(table[frame_index], dtype=float).copy()
        dino = np.empty(len(states))
        for j, state in enumerate(states):
            try:
                dino[j] = self.feature_term(phase, frame_index, j, state, obs)
            except EmptyOverlap:
                dino[j] = np.nan
        return cd, dino

    def combine_terms(self, cd: np.ndarray, dino: np.ndarray | None) -> np.ndarray:
        """Per-frame min-max normalization of each term, weighted sum, and
        penalty substitution for empty-overlap states."""
        costs = self.w_cd * _min_max(cd)
        if dino is None:
            return costs
        valid = np.isfinite(dino)
        if not valid.any():
            return costs
        dn = np.zeros_like(dino)
        dn[valid] = _min_max(dino[valid])
        costs = costs + self.w_dino * dn
        if (~valid).any():
            good = costs[valid]
            penalty = max(self.penalty_factor * float(np.median(good)), float(good.max()))
            costs[~valid] = penalty
        return costs


def emission_cost(mesh: TriangleMesh, scale: float, state: SimilarityTransform,
                  obs: FrameObservation, *, w_cd: float = 1.0, w_dino: float = 1.0,
                  feature_source: FeatureSource | None = None, camera: Camera | None = None,
                  basis: PCABasis | None = None, sample_count: int = 1024, seed: int = 0) -> float:
    """Raw emission cost of one candidate pose state (convenience facade)."""
    ev = EmissionEvaluator(mesh, scale, camera=camera, w_cd=w_cd, w_dino=w_dino,
                           feature_source=feature_source, basis=basis,
                           sample_count=sample_count, seed=seed)
    return ev.cost(state, obs)


def _resampled_points(obs: FrameObservation, n: int, seed: int) -> np.ndarray:
    from .geometry import resample_point_cloud

    return resample_point_cloud(obs.points, n, seed).points


def _min_max(values: np.ndarray) -> np.ndarray:
    lo = float(values.min())
    hi = float(values.max())
    if hi <= lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)
