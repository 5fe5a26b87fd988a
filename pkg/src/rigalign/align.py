"""Single-frame argmin alignment and multi-frame Viterbi decoding.

Rotation states are evaluated with the model translated to the observed
cloud's mean; decoded rotations are then held fixed while a per-frame voxel
grid of translation offsets is decoded. Transition costs are geodesic
rotation angles and absolute-position Euclidean distances respectively.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .emission import EmissionEvaluator, FrameObservation, estimate_scale
from .errors import ParseError
from .geometry import SimilarityTransform, TriangleMesh, quat_normalize, sample_mesh_surface
from .grids import RotationGrid, TranslationGrid
from .viterbi import EmissionTable, StatePath, viterbi_decode


@dataclass(eq=False)
class PoseTrack:
    """One global scale plus a rigid pose per frame."""

    scale: float
    rotations: np.ndarray  # (T, 4) unit quaternions (w, x, y, z)
    translations: np.ndarray  # (T, 3) meters
    timestamps: np.ndarray  # (T,) integer frame indices

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(-1, 4)
        self.translations = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        if not (len(self.rotations) == len(self.translations) == len(self.timestamps)):
            raise ValueError("per-frame arrays must have equal length")
        self.rotations = np.stack([quat_normalize(q) for q in self.rotations])

    def __len__(self) -> int:
        return len(self.timestamps)

    def rigid(self, k: int) -> SimilarityTransform:
        return SimilarityTransform(self.rotations[k], self.translations[k], 1.0)

    def pose(self, k: int) -> SimilarityTransform:
        """Full model-to-camera transform for frame k, scale included."""
        return SimilarityTransform(self.rotations[k], self.translations[k], self.scale)


def track_to_json(track: PoseTrack) -> str:
    obj = {
        "scale": float(track.scale),
        "frames": [
            {
                "t": int(track.timestamps[k]),
                "rotation_wxyz": [float(v) for v in track.rotations[k]],
                "translation_m": [float(v) for v in track.translations[k]],
            }
            for k in range(len(track))
        ],
    }
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def track_from_json(text: str) -> PoseTrack:
    try:
        obj = json.loads(text)
        frames = obj["frames"]
        return PoseTrack(
            scale=float(obj["scale"]),
            rotations=np.array([f["rotation_wxyz"] for f in frames], dtype=float),
            translations=np.array([f["translation_m"] for f in frames], dtype=float),
            timestamps=np.array([f["t"] for f in frames], dtype=np.int64),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise ParseError(f"invalid pose track JSON: {e}") from e


@dataclass(eq=False)
class AlignResult:
    """Decoded track plus the state paths and emission tables behind it."""

    track: PoseTrack
    rotation_path: StatePath
    translation_path: StatePath
    rotation_table: EmissionTable
    translation_table: EmissionTable


def _build_rows(evaluator, phase, frames, states_for_frame, threads):
    rows = [None] * len(frames)

    def fill(t):
        cd, dino = evaluator.frame_terms(phase, t, frames[t], states_for_frame(t))
        rows[t] = evaluator.combine_terms(cd, dino)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(len(frames))))
    else:
        for t in range(len(frames)):
            fill(t)
    return EmissionTable(np.stack(rows))


def align_sequence(
    mesh: TriangleMesh,
    frames,
    rot_grid: RotationGrid,
    trans_grid: TranslationGrid,
    *,
    camera=None,
    w_cd: float = 1.0,
    w_dino: float = 1.0,
    feature_source=None,
    basis=None,
    lam_rot: float = 1.0,
    lam_trans: float = 1.0,
    sample_count: int = 1024,
    scale_sample_count: int = 16384,
    seed: int = 0,
    penalty_factor: float = 10.0,
    scale: float | None = None,
    timestamps=None,
    threads: int = 1,
) -> AlignResult:
    """Scale estimate, rotation Viterbi, then translation Viterbi.

    The global scale is the median of per-frame estimates unless given; the
    model side of that estimate uses a dense one-off surface sample so its
    sampling error does not bias every frame the same way. Rotation states
    pin the translation to each frame's cloud mean; the translation grid is
    re-centered there per frame, and its transition costs use absolute world
    positions.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    if timestamps is None:
        timestamps = np.arange(len(frames))
    if scale is None:
        scale_sample = sample_mesh_surface(mesh, max(scale_sample_count, sample_count), seed).points
        estimates = sorted(estimate_scale(f.points, scale_sample) for f in frames)
        scale = estimates[(len(estimates) - 1) // 2]
    evaluator = EmissionEvaluator(
        mesh, scale, camera=camera, w_cd=w_cd, w_dino=w_dino, feature_source=feature_source,
        basis=basis, sample_count=sample_count, seed=seed, penalty_factor=penalty_factor,
    )
    mus = [f.mean for f in frames]
    quats = rot_grid.quaternions

    def rotation_states(t):
        return [SimilarityTransform(q, mus[t], 1.0) for q in quats]

    rot_table = _build_rows(evaluator, "rotation", frames, rotation_states, threads)
    rot_path = viterbi_decode(rot_table, rot_grid.pairwise_angles(), lam_rot)
    decoded_quats = quats[rot_path.states]

    offsets = trans_grid.offsets
    positions = np.stack([mu + offsets for mu in mus])  # (T, S, 3)

    def translation_states(t):
        return [SimilarityTransform(decoded_quats[t], p, 1.0) for p in positions[t]]

    trans_table = _build_rows(evaluator, "translation", frames, translation_states, threads)
    if len(frames) > 1:
        diffs = positions[1:, None, :, :] - positions[:-1, :, None, :]
        trans_costs = np.sqrt((diffs**2).sum(axis=-1))  # (T-1, S, S)
    else:
        trans_costs = np.zeros((0, len(offsets), len(offsets)))
    trans_path = viterbi_decode(trans_table, trans_costs, lam_trans)

    track = PoseTrack(
        scale=scale,
        rotations=decoded_quats,
        translations=positions[np.arange(len(frames)), trans_path.states],
        timestamps=timestamps,
    )
    return AlignResult(
        track=track,
        rotation_path=rot_path,
        translation_path=trans_path,
        rotation_table=rot_table,
        translation_table=trans_table,
    )


def align_single_frame(
    mesh: TriangleMesh,
    rot_grid: RotationGrid,
    trans_grid: TranslationGrid,
    obs: FrameObservation,
    **kwargs,
) -> SimilarityTransform:
    """Two-phase argmin over the grids for one frame; equals a length-1
    align_sequence. Returns the full pose (scale folded in)."""
    result = align_sequence(mesh, [obs], rot_grid, trans_grid, **kwargs)
    return result.track.pose(0)
