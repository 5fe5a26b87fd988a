"""Point-cloud evaluation metrics: Chamfer distance (cm^2), F-score at a
distance threshold, exact nearest-neighbor queries, and ICP with scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometry, EmptyCloud, EmptyList, SizeMismatch
from .geometry import PointCloud, SimilarityTransform, matrix_to_quat

M2_TO_CM2 = 1e4


class NearestNeighborIndex:
    """Exact nearest-neighbor queries over a fixed point set (kd-tree backed)."""

    def __init__(self, points):
        pts = _as_points(points)
        if len(pts) == 0:
            raise EmptyCloud("cannot index an empty point set")
        self._points = pts
        self._tree = cKDTree(pts)

    def query(self, points):
        """(distances, indices) of the nearest indexed point for each query."""
        d, i = self._tree.query(_as_points(points), k=1)
        return np.asarray(d, dtype=float), np.asarray(i, dtype=np.int64)

    def __len__(self) -> int:
        return len(self._points)


@dataclass(frozen=True)
class MetricReport:
    """Evaluation record; F-scores are harmonic means of the matching P/R pair."""

    chamfer_cm2: float
    f5: float
    f10: float
    precision_5mm: float
    recall_5mm: float
    precision_10mm: float
    recall_10mm: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=float).reshape(-1, 3)


def chamfer_distance(a, b) -> float:
    """Symmetric mean squared nearest-neighbor distance, reported in cm^2.

    Both sets must have the same size; resample first if they differ.
    """
    pa = _as_points(a)
    pb = _as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyCloud("chamfer distance needs non-empty clouds")
    if len(pa) != len(pb):
        raise SizeMismatch(f"point sets must have the same size ({len(pa)} vs {len(pb)})")
    d_ab, _ = cKDTree(pb).query(pa, k=1)
    d_ba, _ = cKDTree(pa).query(pb, k=1)
    return float((np.mean(d_ab**2) + np.mean(d_ba**2)) * M2_TO_CM2)


def f_score(pred, gt, threshold: float):
    """(precision, recall, F) of point coverage at the given distance threshold
    in meters; distances exactly at the threshold count as inliers."""
    pp = _as_points(pred)
    pg = _as_points(gt)
    if len(pp) == 0 or len(pg) == 0:
        raise EmptyCloud("f-score needs non-empty clouds")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    d_pg, _ = cKDTree(pg).query(pp, k=1)
    d_gp, _ = cKDTree(pp).query(pg, k=1)
    precision = float(np.mean(d_pg <= threshold))
    recall = float(np.mean(d_gp <= threshold))
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


@dataclass(eq=False)
class IcpResult:
    transform: SimilarityTransform
    rms_history: list[float]

    @property
    def rms(self) -> float:
        return self.rms_history[-1]


def fit_similarity(source: np.ndarray, target: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity (positive scale) mapping paired source points
    onto target points, closed form."""
    src = np.asarray(source, dtype=float)
    tgt = np.asarray(target, dtype=float)
    if len(src) != len(tgt):
        raise SizeMismatch("paired fits need equal-size point sets")
    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    sc = src - mu_s
    tc = tgt - mu_t
    cov = (tc.T @ sc) / len(src)
    u, d, vt = np.linalg.svd(cov)
    if d[1] <= d[0] * 1e-9:
        raise DegenerateGeometry("correspondence covariance is rank-deficient")
    s_fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2] = -1.0
    rot = u @ np.diag(s_fix) @ vt
    var_s = float(np.mean(np.sum(sc**2, axis=1)))
    scale = float((d * s_fix).sum() / var_s)
    if scale <= 0:
        raise DegenerateGeometry("similarity fit produced a non-positive scale")
    trans = mu_t - scale * (rot @ mu_s)
    return SimilarityTransform(matrix_to_quat(rot), trans, scale)


def _principal_axes(points: np.ndarray) -> np.ndarray:
    """Right-handed eigenbasis of the centered covariance, descending eigenvalues."""
    c = points - points.mean(axis=0)
    w, v = np.linalg.eigh((c.T @ c) / len(c))
    v = v[:, ::-1].copy()
    if np.linalg.det(v) < 0:
        v[:, 2] *= -1.0
    return v


def _initial_candidates(src: np.ndarray, tgt: np.ndarray) -> list[SimilarityTransform]:
    """Identity plus the four proper principal-axes alignments.

    Plain NN-ICP from identity stalls in local minima for large rotations;
    axis-aligned starts make recovery of arbitrary similarity transforms
    reliable while leaving near-aligned inputs on the identity path.
    """
    candidates = [SimilarityTransform.identity()]
    try:
        v_src = _principal_axes(src)
        v_tgt = _principal_axes(tgt)
    except np.linalg.LinAlgError:
        return candidates
    var_s = float(np.mean(np.sum((src - src.mean(axis=0)) ** 2, axis=1)))
    var_t = float(np.mean(np.sum((tgt - tgt.mean(axis=0)) ** 2, axis=1)))
    if var_s <= 0 or var_t <= 0:
        return candidates
    scale = math.sqrt(var_t / var_s)
    for signs in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        rot = v_tgt @ np.diag(signs) @ v_src.T
        trans = tgt.mean(axis=0) - scale * (rot @ src.mean(axis=0))
        candidates.append(SimilarityTransform(matrix_to_quat(rot), trans, scale))
    return candidates


def _icp_loop(src, tgt, index, init, max_iters, tol):
    transform = init
    history: list[float] = []
    for _ in range(max_iters):
        moved = transform.apply(src)
        d, idx = index.query(moved)
        rms = float(np.sqrt(np.mean(d**2)))
        history.append(rms)
        if len(history) >= 2 and history[-2] - rms < tol:
            break
        transform = fit_similarity(src, tgt[idx])
    return IcpResult(transform=transform, rms_history=history)


def icp_with_scaling(source, target, max_iters: int = 100, tol: float = 1e-6) -> IcpResult:
    """Iterative closest point with a global scale.

    Alternates nearest-neighbor correspondences against the target with a
    closed-form similarity refit of the original source onto the matched
    targets; stops when the RMS correspondence distance improves by less
    than tol (meters). Runs from a deterministic set of coarse starts and
    keeps the lowest final RMS. Each refit is the exact least-squares
    optimum, so RMS never increases within a run.
    """
    src = _as_points(source)
    tgt = _as_points(target)
    if len(src) < 3 or len(tgt) < 3:
        raise DegenerateGeometry("ICP needs at least 3 points per cloud")
    index = NearestNeighborIndex(tgt)
    best: IcpResult | None = None
    failure: DegenerateGeometry | None = None
    for init in _initial_candidates(src, tgt):
        try:
            result = _icp_loop(src, tgt, index, init, max_iters, tol)
        except DegenerateGeometry as e:
            failure = e
            continue
        if best is None or result.rms < best.rms:
            best = result
    if best is None:
        raise failure if failure is not None else DegenerateGeometry("no ICP start succeeded")
    return best


def median_metrics(reports) -> MetricReport:
    """Component-wise median; even counts take the lower of the two middle values."""
    reports = list(reports)
    if not reports:
        raise EmptyList("no reports to aggregate")

    def med(values):
        v = sorted(values)
        return v[(len(v) - 1) // 2]

    return MetricReport(
        **{f.name: med([getattr(r, f.name) for r in reports]) for f in fields(MetricReport)}
    )
