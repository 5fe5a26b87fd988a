import math

import numpy as np
import pytest

from rigalign.errors import DegenerateCloud, EmptyCloud, EmptyMesh, ZeroArea
from rigalign.geometry import (
    Camera,
    PointCloud,
    SimilarityTransform,
    TriangleMesh,
    apply_pose,
    first_hit_map,
    matrix_to_quat,
    normalize_points,
    points_to_mesh_distance,
    quat_to_matrix,
    random_unit_quaternions,
    ray_triangle_intersect,
    resample_point_cloud,
    sample_hand_points,
    sample_mesh_surface,
)

from conftest import random_blob_mesh


def brute_force_pixel_cast(mesh, camera):
    """Pure-Python per-pixel, per-triangle oracle for the vectorized caster."""
    rays = camera.pixel_rays()
    tris = mesh.triangles()
    hits = np.zeros((camera.height, camera.width), dtype=bool)
    points = np.zeros((camera.height, camera.width, 3))
    origin = np.zeros(3)
    for i in range(camera.height):
        for j in range(camera.width):
            best_t = math.inf
            best_p = None
            for tri in tris:
                res = ray_triangle_intersect(origin, rays[i, j], tri)
                if res is not None and res[0] < best_t:
                    best_t = res[0]
                    a1, a2, a3 = res[1]
                    best_p = a1 * tri[0] + a2 * tri[1] + a3 * tri[2]
            if best_p is not None:
                hits[i, j] = True
                points[i, j] = best_p
    return points, hits


class TestQuaternions:
    def test_matrix_round_trip(self):
        for q in random_unit_quaternions(200, seed=5):
            q2 = matrix_to_quat(quat_to_matrix(q))
            # chord-based geodesic angle stays precise near zero, unlike acos
            chord = min(np.linalg.norm(q - q2), np.linalg.norm(q + q2))
            angle = 4 * math.asin(min(1.0, chord / 2))
            assert angle < 1e-9

    def test_unit_norm_after_construction(self):
        q = SimilarityTransform([2.0, 0.0, 0.0, 0.0], np.zeros(3)).rotation
        assert abs(np.linalg.norm(q) - 1.0) < 1e-9


class TestRayTriangle:
    triangle = [(1.0, 0, 0), (0, 1.0, 0), (-1.0, -1.0, 0)]

    def test_centroid_hit(self):
        t, bary = ray_triangle_intersect((0, 0, -1), (0, 0, 1), self.triangle)
        assert t == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(bary, (1 / 3, 1 / 3, 1 / 3), atol=1e-12)

    def test_outside_support_misses(self):
        assert ray_triangle_intersect((10, 10, -1), (0, 0, 1), self.triangle) is None

    def test_hand_solved_barycentrics(self):
        # ray (0.5, 0.25, -2) +z into {(0,0,0),(1,0,0),(0,1,0)}: hit point
        # (0.5, 0.25, 0) so a2 = 0.5, a3 = 0.25, a1 = 0.25, t = 2
        tri = [(0.0, 0, 0), (1.0, 0, 0), (0.0, 1.0, 0)]
        t, bary = ray_triangle_intersect((0.5, 0.25, -2), (0, 0, 1), tri)
        assert t == pytest.approx(2.0, abs=1e-12)
        assert np.allclose(bary, (0.25, 0.5, 0.25), atol=1e-12)

    def test_hit_point_reconstruction(self):
        rng = np.random.default_rng(8)
        checked = 0
        for _ in range(300):
            tri = rng.normal(size=(3, 3))
            origin = rng.normal(size=3) * 3
            # aim near the centroid so a good share of rays actually hit
            target = tri.mean(axis=0) + rng.normal(scale=0.3, size=3)
            d = target - origin
            d /= np.linalg.norm(d)
            res = ray_triangle_intersect(origin, d, tri)
            if res is None:
                continue
            t, (a1, a2, a3) = res
            assert t > 0
            assert min(a1, a2, a3) >= 0
            assert a1 + a2 + a3 == pytest.approx(1.0, abs=1e-12)
            hit = origin + t * d
            recon = a1 * tri[0] + a2 * tri[1] + a3 * tri[2]
            assert np.allclose(hit, recon, atol=1e-9)
            checked += 1
        assert checked > 50


class TestHandSampling:
    def test_full_cover_triangle(self, camera64):
        big = TriangleMesh(
            np.array([[-100.0, -100, 2], [100.0, -100, 2], [0.0, 200, 2]]), np.array([[0, 1, 2]])
        )
        assert sample_hand_points(big, camera64).hit_fraction == 1.0

    def test_mesh_behind_camera(self, camera64):
        behind = TriangleMesh(
            np.array([[-1.0, -1, -2], [1.0, -1, -2], [0.0, 1, -2]]), np.array([[0, 1, 2]])
        )
        assert sample_hand_points(behind, camera64).hit_fraction == 0.0

    def test_empty_mesh_raises(self, camera64):
        with pytest.raises(EmptyMesh):
            sample_hand_points(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), camera64)

    def test_quad_matches_bruteforce(self, camera64, unit_quad_mesh):
        fast = sample_hand_points(unit_quad_mesh, camera64)
        points, hits = brute_force_pixel_cast(unit_quad_mesh, camera64)
        assert np.array_equal(fast.hits, hits)
        assert np.allclose(fast.points[hits], points[hits], atol=1e-12)
        assert 0 < fast.hit_fraction <= 1.0

    def test_random_meshes_match_bruteforce(self):
        camera = Camera(fx=30.0, fy=30.0, cx=8.0, cy=8.0, width=16, height=16)
        rng = np.random.default_rng(21)
        for _ in range(3):
            mesh = random_blob_mesh(rng, n_faces=int(rng.integers(20, 201)))
            fast = first_hit_map(mesh, camera, chunk=37)
            points, hits = brute_force_pixel_cast(mesh, camera)
            assert np.array_equal(fast.hits, hits)
            assert np.allclose(fast.points[hits], points[hits], atol=1e-12)

    def test_hits_lie_on_surface(self, camera64, unit_quad_mesh):
        hit_map = sample_hand_points(unit_quad_mesh, camera64)
        d = points_to_mesh_distance(hit_map.hit_points(), unit_quad_mesh)
        assert d.max() < 1e-6


class TestNormalizePoints:
    def test_already_normalized_unchanged(self):
        # mean 0 and RMS distance 1 by construction
        pts = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
        out, params = normalize_points(pts, s=1.0)
        assert np.allclose(out, pts, atol=1e-12)
        assert params.sigma == pytest.approx(1.0)

    def test_hand_computed_example(self):
        out, params = normalize_points(np.array([[0.0, 0, 0], [2.0, 0, 0]]), s=1.0)
        assert np.allclose(params.mean, [1, 0, 0])
        assert params.sigma == pytest.approx(1.0)
        assert np.allclose(out, [[-1, 0, 0], [1, 0, 0]])

    def test_linear_in_s(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(40, 3))
        out1, _ = normalize_points(pts, s=1.0)
        out7, _ = normalize_points(pts, s=0.7)
        assert np.allclose(out7, 0.7 * out1, atol=1e-12)

    def test_output_statistics(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(100, 3)) * 5 + 2
        out, _ = normalize_points(pts, s=0.7)
        assert np.allclose(out.mean(axis=0), 0, atol=1e-9)
        rms = math.sqrt(float(np.mean(np.sum(out**2, axis=1))))
        assert rms == pytest.approx(0.7, abs=1e-9)

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(50, 3))
        out, params = normalize_points(pts, s=0.7)
        assert np.allclose(params.invert(out), pts, atol=1e-9)

    def test_degenerate_cloud(self):
        with pytest.raises(DegenerateCloud):
            normalize_points(np.zeros((5, 3)), s=1.0)


class TestSurfaceSampling:
    def test_single_triangle_on_surface(self):
        mesh = TriangleMesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]), np.array([[0, 1, 2]]))
        pc = sample_mesh_surface(mesh, 1, seed=0)
        assert points_to_mesh_distance(pc.points, mesh).max() < 1e-9

    def test_area_proportional_selection(self):
        # areas 3:1 -> expected counts 3:1 within 3% (binomial concentration)
        verts = np.array(
            [[0.0, 0, 0], [3.0, 0, 0], [0.0, 2, 0], [10.0, 0, 0], [11.0, 0, 0], [10.0, 2, 0]]
        )
        mesh = TriangleMesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))
        pc = sample_mesh_surface(mesh, 100000, seed=1)
        frac = np.mean(pc.points[:, 0] < 5.0)
        assert abs(frac - 0.75) < 0.03 * 0.75

    def test_unit_cube_face_balance(self):
        v = np.array(
            [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
            dtype=float,
        )
        f = np.array(
            [
                [0, 2, 1], [0, 3, 2],  # z = 0
                [4, 5, 6], [4, 6, 7],  # z = 1
                [0, 1, 5], [0, 5, 4],  # y = 0
                [3, 6, 2], [3, 7, 6],  # y = 1
                [0, 4, 7], [0, 7, 3],  # x = 0
                [1, 2, 6], [1, 6, 5],  # x = 1
            ]
        )
        cube = TriangleMesh(v, f)
        pc = sample_mesh_surface(cube, 10000, seed=2)
        assert points_to_mesh_distance(pc.points, cube).max() < 1e-9
        for axis, value in [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]:
            on_face = np.isclose(pc.points[:, axis], value).mean()
            assert abs(on_face - 1 / 6) < 0.05 / 6

    def test_determinism(self):
        mesh = TriangleMesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]), np.array([[0, 1, 2]]))
        a = sample_mesh_surface(mesh, 100, seed=9).points
        b = sample_mesh_surface(mesh, 100, seed=9).points
        assert np.array_equal(a, b)

    def test_zero_area(self):
        flat = TriangleMesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]), np.array([[0, 1, 2]]))
        with pytest.raises(ZeroArea):
            sample_mesh_surface(flat, 10, seed=0)


class TestResample:
    def cloud(self, n, seed=0):
        rng = np.random.default_rng(seed)
        return PointCloud(
            rng.normal(size=(n, 3)),
            colors=rng.random((n, 3)),
            labels=rng.integers(0, 3, size=n),
        )

    def test_same_size_is_permutation(self):
        pc = self.cloud(64)
        out = resample_point_cloud(pc, 64, seed=1)
        assert sorted(map(tuple, out.points)) == sorted(map(tuple, pc.points))

    def test_supersample_keeps_originals(self):
        pc = self.cloud(5)
        out = resample_point_cloud(pc, 12, seed=2)
        assert len(out) == 12
        originals = set(map(tuple, pc.points))
        assert set(map(tuple, out.points[:5])) == originals
        assert set(map(tuple, out.points[5:])) <= originals

    def test_subsample_is_distinct_subset(self):
        pc = self.cloud(10000)
        out = resample_point_cloud(pc, 10, seed=3)
        assert len(out) == 10
        rows = set(map(tuple, out.points))
        assert len(rows) == 10
        assert rows <= set(map(tuple, pc.points))

    def test_attributes_follow_points(self):
        pc = self.cloud(20)
        out = resample_point_cloud(pc, 8, seed=4)
        lookup = {tuple(p): (tuple(c), l) for p, c, l in zip(pc.points, pc.colors, pc.labels)}
        for p, c, l in zip(out.points, out.colors, out.labels):
            assert lookup[tuple(p)] == (tuple(c), l)

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloud):
            resample_point_cloud(PointCloud(np.zeros((0, 3))), 5, seed=0)


class TestApplyPose:
    def test_identity(self):
        rng = np.random.default_rng(5)
        pc = PointCloud(rng.normal(size=(30, 3)))
        out = apply_pose(pc, SimilarityTransform.identity())
        assert np.allclose(out.points, pc.points, atol=1e-12)

    def test_pure_translation(self):
        pc = PointCloud(np.array([[0.0, 0, 0]]))
        out = apply_pose(pc, SimilarityTransform([1, 0, 0, 0], [0, 0, 1.0]))
        assert np.allclose(out.points, [[0, 0, 1]])

    def test_rz90_scale2(self):
        # Rz(90 deg), scale 2 on (1, 0, 0) -> (0, 2, 0)
        q = [math.cos(math.pi / 4), 0, 0, math.sin(math.pi / 4)]
        out = apply_pose(PointCloud(np.array([[1.0, 0, 0]])), SimilarityTransform(q, np.zeros(3), 2.0))
        assert np.allclose(out.points, [[0, 2, 0]], atol=1e-12)

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(6)
        for k in range(10):
            q = random_unit_quaternions(1, seed=50 + k)[0]
            pose = SimilarityTransform(q, rng.normal(size=3), float(rng.uniform(0.1, 10)))
            pc = PointCloud(rng.normal(size=(25, 3)))
            back = apply_pose(apply_pose(pc, pose), pose.inverse())
            assert np.allclose(back.points, pc.points, atol=1e-9)

    def test_compose_is_associative(self):
        rng = np.random.default_rng(7)
        qs = random_unit_quaternions(3, seed=70)
        a, b, c = (
            SimilarityTransform(q, rng.normal(size=3), float(rng.uniform(0.5, 2)))
            for q in qs
        )
        pts = rng.normal(size=(10, 3))
        left = a.compose(b).compose(c)
        right = a.compose(b.compose(c))
        assert np.allclose(left.apply(pts), right.apply(pts), atol=1e-9)
        # compose matches sequential application
        assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-9)

    def test_mesh_keeps_faces_and_cloud_keeps_attrs(self):
        mesh = TriangleMesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]), np.array([[0, 1, 2]]))
        out = apply_pose(mesh, SimilarityTransform([1, 0, 0, 0], [1.0, 0, 0]))
        assert np.array_equal(out.faces, mesh.faces)
        pc = PointCloud(np.zeros((2, 3)), colors=np.ones((2, 3)) * 0.5, labels=np.array([1, 2]))
        moved = apply_pose(pc, SimilarityTransform([1, 0, 0, 0], [1.0, 0, 0]))
        assert np.array_equal(moved.labels, pc.labels)
        assert np.array_equal(moved.colors, pc.colors)


class TestMeshValidation:
    def test_bad_face_index(self):
        with pytest.raises(ValueError):
            TriangleMesh(np.zeros((2, 3)), np.array([[0, 1, 2]]))

    def test_degenerate_face(self):
        with pytest.raises(ValueError):
            TriangleMesh(np.zeros((3, 3)), np.array([[1, 1, 1]]))

    def test_label_validation(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((1, 3)), labels=np.array([7]))
