import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from src.core.errors import (DegenerateConfigurationError, DegenerateInputError, InputFormatError,
                             ParallelPlanesError)
from src.core.geom_core import (Intrinsics, Plane, PoseSE3, SemanticClass, backproject, cast_room_rays, fit_plane,
                                junction, pixel_rays, plane_intersection, point_in_room, project, transform_plane,
                                up_basis)


def random_pose(seed, translation_scale=3.0):
    rng = np.random.default_rng(seed)
    rotation = Rotation.random(random_state=seed).as_matrix()
    return PoseSE3(rotation, rng.uniform(-translation_scale, translation_scale, 3))


def random_plane(seed):
    rng = np.random.default_rng(seed)
    normal = rng.normal(size=3)
    return Plane(normal / np.linalg.norm(normal), rng.uniform(-2.0, 2.0))


class TestBackproject:
    def test_principal_point(self):
        K = Intrinsics(3.0, 5.0, 2.0, 1.0)
        depth = np.zeros((3, 4))
        depth[1, 2] = 1.0
        pm = backproject(depth, K)
        np.testing.assert_allclose(pm.points[1, 2], [0.0, 0.0, 1.0])

    def test_zero_depth_is_invalid(self):
        depth = np.full((2, 2), 1.5)
        depth[0, 1] = 0.0
        pm = backproject(depth, Intrinsics(1.0, 1.0, 1.0, 1.0))
        assert not pm.valid[0, 1]
        assert pm.valid.sum() == 3

    def test_hand_table(self):
        pm = backproject(np.full((4, 4), 2.0), Intrinsics(2.0, 2.0, 2.0, 2.0))
        for v in range(4):
            for u in range(4):
                np.testing.assert_allclose(pm.points[v, u], [(u - 2.0), (v - 2.0), 2.0])

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -1.0])
    def test_rejects_bad_depth(self, bad):
        depth = np.ones((3, 3))
        depth[1, 1] = bad
        with pytest.raises(InputFormatError):
            backproject(depth, Intrinsics(1.0, 1.0, 1.0, 1.0))

    def test_project_recovers_pixels(self, rng):
        K = Intrinsics.from_fov(40, 30, 70.0)
        depth = rng.uniform(0.5, 5.0, size=(30, 40))
        pm = backproject(depth, K)
        uv = project(pm.points, K)
        v, u = np.mgrid[0:30, 0:40]
        np.testing.assert_allclose(uv[..., 0], u, atol=1e-6)
        np.testing.assert_allclose(uv[..., 1], v, atol=1e-6)

    def test_pixel_rays_have_unit_depth(self):
        rays = pixel_rays(5, 6, Intrinsics.from_fov(6, 5, 60.0))
        assert rays.shape == (5, 6, 3)
        assert np.all(rays[..., 2] == 1.0)


class TestFitPlane:
    def test_coordinate_plane(self):
        plane, rms = fit_plane([(0, 0, 0), (1, 0, 0), (0, 1, 0)])
        assert abs(abs(plane.normal[2]) - 1.0) < 1e-12
        assert abs(plane.offset) < 1e-12
        assert rms < 1e-12

    def test_collinear_points_carry_rank(self):
        with pytest.raises(DegenerateInputError) as info:
            fit_plane([(0, 0, 0), (1, 1, 1), (2, 2, 2)])
        assert info.value.rank == 1

    def test_too_few_points(self):
        with pytest.raises(DegenerateInputError):
            fit_plane([(0, 0, 0), (1, 0, 0)])

    def test_noisy_samples(self, rng):
        normal = np.array([1.0, 2.0, 2.0]) / 3.0
        basis = np.linalg.svd(normal[None, :])[2][1:]
        coeffs = rng.uniform(-2.0, 2.0, size=(200, 2))
        points = coeffs @ basis + 0.5 * normal + rng.normal(0.0, 0.01, size=(200, 3))
        plane, _ = fit_plane(points)
        if plane.normal @ normal < 0:
            plane = plane.flipped()
        angle = np.degrees(np.arccos(np.clip(plane.normal @ normal, -1.0, 1.0)))
        assert angle < 0.5
        assert abs(plane.offset - (-0.5)) < 0.01

    def test_camera_frame_orientation(self):
        points = [(x, y, 3.0) for x in (-1.0, 0.0, 1.0) for y in (-1.0, 1.0)]
        plane, _ = fit_plane(points, camera_frame=True, semantic_class=SemanticClass.WALL)
        assert plane.offset > 0
        np.testing.assert_allclose(plane.normal, [0.0, 0.0, -1.0], atol=1e-12)

    def test_weights_ignore_outlier(self):
        points = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (0.5, 0.5, 4.0)]
        plane, rms = fit_plane(points, weights=[1, 1, 1, 1, 0])
        assert abs(abs(plane.normal[2]) - 1.0) < 1e-12
        assert rms < 1e-12

    @given(st.integers(0, 10_000))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        points = rng.normal(size=(30, 3)) * [3.0, 2.0, 0.1]
        a, _ = fit_plane(points)
        b, _ = fit_plane(points[rng.permutation(30)])
        np.testing.assert_allclose(a.normal, b.normal, atol=1e-9)
        assert abs(a.offset - b.offset) < 1e-9


class TestIntersections:
    def test_axis_planes(self):
        line = plane_intersection(Plane([0, 0, 1], 0.0), Plane([1, 0, 0], 0.0))
        assert abs(abs(line.direction[1]) - 1.0) < 1e-12
        np.testing.assert_allclose(line.point, 0.0, atol=1e-12)

    def test_offset_planes(self):
        line = plane_intersection(Plane([1, 0, 0], -1.0), Plane([0, 1, 0], -2.0))
        np.testing.assert_allclose(line.point[:2], [1.0, 2.0], atol=1e-12)
        assert abs(abs(line.direction[2]) - 1.0) < 1e-12

    def test_parallel(self):
        with pytest.raises(ParallelPlanesError):
            plane_intersection(Plane([0, 1, 0], 0.0), Plane([0, 1, 0], 0.0))
        with pytest.raises(ParallelPlanesError):
            plane_intersection(Plane([0, 1, 0], 0.0), Plane([0, -1, 0], 2.0))

    @given(st.integers(0, 10_000), st.integers(0, 10_000))
    def test_direction_orthogonal(self, a, b):
        p1, p2 = random_plane(a), random_plane(b + 20_000)
        try:
            line = plane_intersection(p1, p2)
        except ParallelPlanesError:
            return
        assert abs(line.direction @ p1.normal) < 1e-12
        assert abs(line.direction @ p2.normal) < 1e-12
        assert abs(p1.signed_distance(line.point)) < 1e-9
        assert abs(p2.signed_distance(line.point)) < 1e-9

    def test_junction(self):
        origin = junction(Plane([1, 0, 0], 0.0), Plane([0, 1, 0], 0.0), Plane([0, 0, 1], 0.0))
        np.testing.assert_allclose(origin.position, 0.0, atol=1e-12)
        point = junction(Plane([1, 0, 0], -1.0), Plane([0, 1, 0], -2.0), Plane([0, 0, 1], -3.0))
        np.testing.assert_allclose(point.position, [1.0, 2.0, 3.0])

    def test_junction_singular(self):
        with pytest.raises(DegenerateConfigurationError):
            junction(Plane([1, 0, 0], 0.0), Plane([1, 0, 0], -1.0), Plane([0, 0, 1], 0.0))

    @given(st.integers(0, 10_000))
    def test_junction_residual(self, seed):
        planes = [random_plane(seed * 3 + k) for k in range(3)]
        normals = np.stack([p.normal for p in planes])
        if abs(np.linalg.det(normals)) < 1e-3:
            return
        point = junction(*planes)
        for plane in planes:
            assert abs(plane.signed_distance(point.position)) < 1e-9


class TestTransforms:
    def test_identity(self):
        plane = Plane([0, 0, 1], -2.0)
        moved = transform_plane(plane, PoseSE3.identity())
        np.testing.assert_allclose(moved.normal, plane.normal)
        assert moved.offset == plane.offset

    def test_translation(self):
        moved = transform_plane(Plane([0, 0, 1], 0.0), PoseSE3(np.eye(3), [0, 0, 5]))
        np.testing.assert_allclose(moved.normal, [0, 0, 1])
        assert moved.offset == pytest.approx(-5.0)

    @given(st.integers(0, 10_000), st.floats(0.2, 5.0))
    def test_points_stay_on_plane(self, seed, scale):
        plane, pose = random_plane(seed), random_pose(seed)
        rng = np.random.default_rng(seed)
        points = rng.normal(size=(10, 3))
        points -= plane.signed_distance(points)[:, None] * plane.normal
        moved = transform_plane(plane, pose, scale)
        residual = moved.signed_distance(scale * (points @ pose.rotation.T) + pose.translation)
        assert np.max(np.abs(residual)) < 1e-9

    @given(st.integers(0, 10_000))
    def test_inverse_round_trip(self, seed):
        plane, pose = random_plane(seed), random_pose(seed)
        back = transform_plane(transform_plane(plane, pose), pose.inverse())
        np.testing.assert_allclose(back.normal, plane.normal, atol=1e-9)
        assert abs(back.offset - plane.offset) < 1e-9

    def test_pose_compose_inverse(self):
        pose = random_pose(3)
        product = pose @ pose.inverse()
        np.testing.assert_allclose(product.as_matrix(), np.eye(4), atol=1e-12)

    def test_invalid_objects(self):
        with pytest.raises(InputFormatError):
            Plane([0, 0, 2], 0.0)
        with pytest.raises(InputFormatError):
            PoseSE3(np.diag([1.0, 1.0, 2.0]), np.zeros(3))
        with pytest.raises(InputFormatError):
            PoseSE3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
        with pytest.raises(InputFormatError):
            Intrinsics(0.0, 1.0, 0.0, 0.0)

    def test_up_basis_orthonormal(self):
        for up in ([0, 1, 0], [1, 0, 0], [0.3, 0.9, 0.1]):
            u, e1, e2 = up_basis(up)
            frame = np.stack([u, e1, e2])
            np.testing.assert_allclose(frame @ frame.T, np.eye(3), atol=1e-12)


class TestRoomRays:
    def test_closed_room_hits_everywhere(self, box_scene):
        camera = box_scene.cameras[0]
        depth, ids = cast_room_rays(box_scene.planes, box_scene.footprint, camera.pose,
                                    camera.intrinsics, camera.height, camera.width)
        assert np.all(depth > 0)
        assert np.all(ids >= 0)
        assert set(np.unique(ids)) <= set(range(len(box_scene.planes)))

    def test_point_in_room(self, box_scene, l_scene):
        assert point_in_room(box_scene.planes, box_scene.footprint, [2.0, 1.0, 1.5])
        assert not point_in_room(box_scene.planes, box_scene.footprint, [5.0, 1.0, 1.5])
        assert not point_in_room(box_scene.planes, box_scene.footprint, [2.0, 3.0, 1.5])
        # 内角外侧
        assert not point_in_room(l_scene.planes, l_scene.footprint, [4.5, 1.0, 4.5])
        assert point_in_room(l_scene.planes, l_scene.footprint, [1.5, 1.0, 4.5])
