import math

import numpy as np
import pytest

from rigalign.emission import (
    EmissionEvaluator,
    FeatureMap,
    FrameObservation,
    SyntheticFeatureSource,
    TableFeatureSource,
    dino_similarity,
    emission_cost,
    estimate_scale,
    pca_basis,
    rasterize_silhouette,
)
from rigalign.errors import DegenerateCloud, EmptyOverlap, InsufficientSamples
from rigalign.geometry import (
    Camera,
    PointCloud,
    SimilarityTransform,
    TriangleMesh,
    first_hit_map,
    apply_pose,
    random_unit_quaternions,
    sample_mesh_surface,
)
from rigalign.grids import build_rotation_grid
from rigalign.synthetic import FeatureField, irregular_tetrahedron, render_feature_map

from conftest import random_blob_mesh


class TestEstimateScale:
    def test_same_cloud_unity(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(100, 3))
        assert estimate_scale(pts, pts.copy()) == pytest.approx(1.0, abs=1e-12)

    def test_pointwise_doubling(self):
        rng = np.random.default_rng(1)
        y = rng.normal(size=(50, 3))
        assert estimate_scale(2 * y, y) == pytest.approx(2.0, rel=1e-12)

    def test_two_point_moment_arithmetic(self):
        y = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
        x = np.array([[3.0, 0, 0], [-3.0, 0, 0]])
        assert estimate_scale(x, y) == pytest.approx(3.0, rel=1e-12)

    def test_scaling_linearity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(60, 3))
        y = rng.normal(size=(50, 3))
        base = estimate_scale(x, y)
        for k in (0.1, 1.0, 2.0, 7.3):
            assert estimate_scale(k * x, x) == pytest.approx(k, rel=1e-9)
            assert estimate_scale(k * x, y) == pytest.approx(k * base, rel=1e-9)

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(40, 3))
        y = rng.normal(size=(40, 3))
        assert estimate_scale(x + 100.0, y) == pytest.approx(estimate_scale(x, y), rel=1e-9)

    def test_degenerate_model(self):
        with pytest.raises(DegenerateCloud):
            estimate_scale(np.random.default_rng(4).normal(size=(10, 3)), np.zeros((10, 3)))


class TestRasterizeSilhouette:
    def test_mesh_behind_camera_is_empty(self, camera64):
        mesh = TriangleMesh(
            np.array([[-1.0, -1, -2], [1.0, -1, -2], [0.0, 1, -2]]), np.array([[0, 1, 2]])
        )
        assert not rasterize_silhouette(mesh, SimilarityTransform.identity(), camera64).any()

    def test_full_frustum_quad_all_ones(self, camera64):
        verts = np.array(
            [[-100.0, -100, 2], [100.0, -100, 2], [100.0, 100, 2], [-100.0, 100, 2]]
        )
        mesh = TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))
        assert rasterize_silhouette(mesh, SimilarityTransform.identity(), camera64).all()

    def test_unit_quad_covers_frame(self, camera64, unit_quad_mesh):
        # at fx = 100 the unit quad at z = 1 projects past the 64x64 frame
        sil = rasterize_silhouette(unit_quad_mesh, SimilarityTransform.identity(), camera64)
        oracle = first_hit_map(unit_quad_mesh, camera64).hits
        assert np.array_equal(sil, oracle)
        assert sil.all()

    def test_small_quad_projected_rectangle(self, camera64):
        # sub-pixel offset keeps pixel centers off the quad edges and off the
        # shared diagonal, where float rounding of two exact predicates differs
        half = 0.2
        dx, dy = 0.0007, -0.0011
        verts = np.array(
            [
                [-half + dx, -half + dy, 1.0],
                [half + dx, -half + dy, 1.0],
                [half + dx, half + dy, 1.0],
                [-half + dx, half + dy, 1.0],
            ]
        )
        mesh = TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))
        sil = rasterize_silhouette(mesh, SimilarityTransform.identity(), camera64)
        oracle = first_hit_map(mesh, camera64).hits
        assert np.array_equal(sil, oracle)
        # u = 32 + 100 * x in [12.07, 52.07]; centers j + 0.5 inside -> j in 12..51
        expected = np.zeros((64, 64), dtype=bool)
        expected[12:52, 12:52] = True
        assert np.array_equal(sil, expected)

    def test_random_meshes_match_raycast(self, camera64):
        rng = np.random.default_rng(11)
        for k in range(10):
            mesh = random_blob_mesh(rng, n_faces=int(rng.integers(5, 501)))
            q = random_unit_quaternions(1, seed=200 + k)[0]
            pose = SimilarityTransform(q, np.array([0.0, 0.0, 0.1]), float(rng.uniform(0.5, 1.5)))
            sil = rasterize_silhouette(mesh, pose, camera64)
            oracle = first_hit_map(apply_pose(mesh, pose), camera64).hits
            assert np.array_equal(sil, oracle)

    def test_camera_plane_crossing_triangle(self, camera64):
        # one vertex behind the camera: falls back to the full-image scan;
        # coordinates jittered so no pixel center sits exactly on an edge plane
        mesh = TriangleMesh(
            np.array([[0.0137, 0.0071, -0.5123], [0.3071, 0.0193, 2.0171], [-0.2889, 0.1037, 1.9893]]),
            np.array([[0, 1, 2]]),
        )
        sil = rasterize_silhouette(mesh, SimilarityTransform.identity(), camera64)
        oracle = first_hit_map(mesh, camera64).hits
        assert np.array_equal(sil, oracle)
        assert sil.any()


def map_from(features, mask=None):
    features = np.asarray(features, dtype=float)
    if mask is None:
        mask = np.ones(features.shape[:2], dtype=bool)
    return FeatureMap(features, mask)


class TestPcaBasis:
    def test_recovers_known_subspace(self):
        rng = np.random.default_rng(5)
        c = 16
        directions = np.linalg.qr(rng.normal(size=(c, 3)))[0].T  # (3, C) orthonormal
        coeffs = rng.normal(size=(40, 40, 3)) * np.array([5.0, 2.0, 1.0])
        features = coeffs @ directions
        basis = pca_basis([map_from(features)])
        # projection residual of the recovered basis against the true subspace
        proj = directions.T @ directions
        for row in basis.components:
            residual = np.linalg.norm(row - proj @ row)
            assert residual < 1e-6

    def test_white_noise_explained_variance(self):
        rng = np.random.default_rng(6)
        c = 8
        features = rng.normal(size=(100, 100, c))
        pooled = features.reshape(-1, c)
        cov = np.cov(pooled.T, bias=True)
        eig = np.sort(np.linalg.eigvalsh(cov))[::-1]
        explained = eig[:3].sum() / eig.sum()
        assert abs(explained - 3 / c) < 0.2 * (3 / c)
        basis = pca_basis([map_from(features)])
        assert basis.components.shape == (3, c)

    def test_duplicating_samples_leaves_basis_unchanged(self):
        rng = np.random.default_rng(7)
        features = rng.normal(size=(20, 20, 6))
        one = pca_basis([map_from(features)])
        two = pca_basis([map_from(features), map_from(features)])
        assert np.allclose(one.mean, two.mean, atol=1e-9)
        assert np.allclose(one.components, two.components, atol=1e-9)

    def test_orthonormal_rows(self):
        rng = np.random.default_rng(8)
        basis = pca_basis([map_from(rng.normal(size=(30, 30, 10)))])
        assert np.allclose(basis.components @ basis.components.T, np.eye(3), atol=1e-9)

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientSamples):
            pca_basis([map_from(np.zeros((2, 1, 8)), np.zeros((2, 1), dtype=bool))])
        with pytest.raises(InsufficientSamples):
            pca_basis([map_from(np.zeros((4, 4, 2)))])


class TestDinoSimilarity:
    def setup_method(self):
        rng = np.random.default_rng(9)
        self.basis = pca_basis([map_from(rng.normal(size=(16, 16, 8)))])
        self.f0 = map_from(rng.normal(size=(16, 16, 8)))

    def test_identical_maps_zero(self):
        assert dino_similarity(self.f0, self.f0, self.basis) == pytest.approx(0.0, abs=1e-12)

    def test_negated_projection_is_one(self):
        # features mirrored through the basis mean negate the projections
        neg = map_from(2 * self.basis.mean - self.f0.features, self.f0.mask)
        assert dino_similarity(neg, self.f0, self.basis) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_projection_is_half(self):
        h, w, c = 4, 4, 8
        a = np.zeros((h, w, c))
        b = np.zeros((h, w, c))
        basis = pca_basis([map_from(np.random.default_rng(10).normal(size=(32, 32, c)))])
        # build feature grids whose projections are orthogonal vectors
        a[0, 0] = basis.mean + basis.components[0]
        b[0, 0] = basis.mean + basis.components[1]
        for grid in (a, b):
            grid[0, 1:] = basis.mean
            grid[1:] = basis.mean
        assert dino_similarity(map_from(a), map_from(b), basis) == pytest.approx(0.5, abs=1e-9)

    def test_bounds_on_random_pairs(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            fa = map_from(rng.normal(size=(4, 4, 8)))
            fb = map_from(rng.normal(size=(4, 4, 8)))
            e = dino_similarity(fa, fb, self.basis)
            assert 0.0 <= e <= 1.0

    def test_empty_overlap_raises(self):
        mask_a = np.zeros((16, 16), dtype=bool)
        mask_a[:8] = True
        fa = map_from(self.f0.features, mask_a)
        fb = map_from(self.f0.features, ~mask_a)
        with pytest.raises(EmptyOverlap):
            dino_similarity(fa, fb, self.basis)


class TestEmissionCost:
    def setup_method(self):
        self.mesh = irregular_tetrahedron()
        self.camera = Camera(fx=150.0, fy=150.0, cx=32.0, cy=32.0, width=64, height=64)
        self.field = FeatureField.from_seed(21, channels=8)
        self.grid = build_rotation_grid(1)

    def observation(self, pose):
        cloud = sample_mesh_surface(self.mesh, 600, seed=33)
        f0 = render_feature_map(self.mesh, pose, self.camera, self.field)
        return FrameObservation(points=PointCloud(pose.apply(cloud.points)), features=f0)

    def test_ground_truth_state_is_argmin(self):
        gt_index = 17
        mu = np.array([0.0, 0.0, 0.4])
        gt_pose = SimilarityTransform(self.grid.quaternions[gt_index], mu, 1.0)
        obs = self.observation(gt_pose)
        source = SyntheticFeatureSource(self.mesh, self.camera, self.field)
        basis = pca_basis([obs.features])
        ev = EmissionEvaluator(self.mesh, 1.0, camera=self.camera, feature_source=source,
                               basis=basis, sample_count=512, seed=5)
        states = [SimilarityTransform(q, obs.mean, 1.0) for q in self.grid.quaternions]
        cd, dino = ev.frame_terms("rotation", 0, obs, states)
        costs = ev.combine_terms(cd, dino)
        assert int(np.argmin(costs)) == gt_index

    def test_zero_feature_weight_equals_chamfer_term(self):
        mu = np.array([0.0, 0.0, 0.4])
        pose = SimilarityTransform(self.grid.quaternions[3], mu, 1.0)
        obs = self.observation(pose)
        ev = EmissionEvaluator(self.mesh, 1.0, w_dino=0.0, sample_count=256, seed=6)
        state = SimilarityTransform(self.grid.quaternions[5], obs.mean, 1.0)
        x = np.asarray(obs.points.points)
        from rigalign.geometry import resample_point_cloud

        x_res = resample_point_cloud(obs.points, 256, 6).points
        assert ev.cost(state, obs) == ev.chamfer_term(x_res, state)

    def test_cost_is_pure_function(self):
        mu = np.array([0.0, 0.0, 0.4])
        pose = SimilarityTransform(self.grid.quaternions[2], mu, 1.0)
        obs = self.observation(pose)
        ev = EmissionEvaluator(self.mesh, 1.0, w_dino=0.0, sample_count=256, seed=7)
        states = [SimilarityTransform(q, obs.mean, 1.0) for q in self.grid.quaternions[:6]]
        forward = [ev.cost(s, obs) for s in states]
        backward = [ev.cost(s, obs) for s in reversed(states)]
        assert forward == backward[::-1]

    def test_doubled_weights_keep_argmin(self):
        mu = np.array([0.0, 0.0, 0.4])
        gt_pose = SimilarityTransform(self.grid.quaternions[9], mu, 1.0)
        obs = self.observation(gt_pose)
        source = SyntheticFeatureSource(self.mesh, self.camera, self.field)
        basis = pca_basis([obs.features])
        states = [SimilarityTransform(q, obs.mean, 1.0) for q in self.grid.quaternions]
        argmins = []
        for w in (1.0, 2.0):
            ev = EmissionEvaluator(self.mesh, 1.0, camera=self.camera, feature_source=source,
                                   basis=basis, w_cd=w, w_dino=w, sample_count=512, seed=8)
            cd, dino = ev.frame_terms("rotation", 0, obs, states)
            argmins.append(int(np.argmin(ev.combine_terms(cd, dino))))
        assert argmins[0] == argmins[1]

    def test_empty_overlap_gets_penalty_not_win(self):
        mu = np.array([0.0, 0.0, 0.4])
        gt_pose = SimilarityTransform(self.grid.quaternions[0], mu, 1.0)
        obs = self.observation(gt_pose)
        source = SyntheticFeatureSource(self.mesh, self.camera, self.field)
        basis = pca_basis([obs.features])
        ev = EmissionEvaluator(self.mesh, 1.0, camera=self.camera, feature_source=source,
                               basis=basis, sample_count=256, seed=9)
        states = [SimilarityTransform(q, obs.mean, 1.0) for q in self.grid.quaternions[:8]]
        # push one state far off-screen so its silhouette is empty
        states.append(SimilarityTransform(self.grid.quaternions[8], mu + np.array([10.0, 0, 0]), 1.0))
        cd, dino = ev.frame_terms("rotation", 0, obs, states)
        assert math.isnan(dino[-1])
        costs = ev.combine_terms(cd, dino)
        assert np.isfinite(costs).all()
        assert int(np.argmin(costs)) != len(states) - 1
        assert costs[-1] >= costs[:-1].max()

    def test_precomputed_table_source(self):
        mu = np.array([0.0, 0.0, 0.4])
        pose = SimilarityTransform(self.grid.quaternions[1], mu, 1.0)
        obs = self.observation(pose)
        table = np.linspace(0.0, 1.0, len(self.grid))[None, :]
        source = TableFeatureSource(table, None)
        ev = EmissionEvaluator(self.mesh, 1.0, camera=self.camera, feature_source=source,
                               basis=None, sample_count=256, seed=10)
        states = [SimilarityTransform(q, obs.mean, 1.0) for q in self.grid.quaternions]
        cd, dino = ev.frame_terms("rotation", 0, obs, states)
        assert np.allclose(dino, table[0])

    def test_facade_matches_evaluator(self):
        mu = np.array([0.0, 0.0, 0.4])
        pose = SimilarityTransform(self.grid.quaternions[4], mu, 1.0)
        obs = self.observation(pose)
        got = emission_cost(self.mesh, 1.0, SimilarityTransform(self.grid.quaternions[6], obs.mean, 1.0),
                            obs, w_dino=0.0, sample_count=256, seed=11)
        ev = EmissionEvaluator(self.mesh, 1.0, w_dino=0.0, sample_count=256, seed=11)
        want = ev.cost(SimilarityTransform(self.grid.quaternions[6], obs.mean, 1.0), obs)
        assert got == want
