from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from src.core.errors import InputFormatError, MissingCeilingError, MissingFloorError
from src.core.geom_core import Plane, PoseSE3, SemanticClass
from src.core.metrics import plane_precision_recall
from src.core.multi_view_merge import (MergeParams, Orientation, WallSegment2D, average_floor_ceiling,
                                       estimate_scene_rotation, merge_partial_layouts, merge_planes,
                                       merge_planes_exhaustive, project_walls, rotation_cost, snap_axis)
from src.core.scene_synth import SceneSpec, default_pairing, emit_view_bundles, generate_room
from src.core.single_view_layout import LiftedPlane, PartialLayout, build_partial_layout


def vertical(x, z0, z1, image, index=0, side=1.0):
    return WallSegment2D([[x, z0], [x, z1]], image, index, Orientation.VERTICAL, [side, 0.0])


def horizontal(z, x0, x1, image, index=0, side=1.0):
    return WallSegment2D([[x0, z], [x1, z]], image, index, Orientation.HORIZONTAL, [0.0, side])


def partition(clusters):
    return sorted(tuple(c.keys) for c in clusters)


def partials_with_truth(scene, noise=0.0, seed=0):
    bundles = emit_view_bundles(scene, default_pairing(len(scene.cameras)), noise, seed=seed)
    first = {}
    for bundle in bundles:
        first.setdefault(bundle.image_id, bundle)
    partials = [build_partial_layout(first[v]) for v in sorted(first)]
    poses = {k: c.pose for k, c in enumerate(scene.cameras)}
    return partials, poses


def lifted(plane, points, mask_id=0):
    points = np.asarray(points, dtype=float)
    return LiftedPlane(plane, mask_id, len(points), 0.0, points)


def horizontal_partial(image_id, floor_normal=(0.0, 1.0, 0.0), ceiling=True):
    planes = [lifted(Plane(floor_normal, 0.0, SemanticClass.FLOOR), np.zeros((3, 3)))]
    if ceiling:
        planes.append(lifted(Plane((0.0, -1.0, 0.0), 2.5, SemanticClass.CEILING), np.zeros((3, 3)), 1))
    return PartialLayout(image_id, planes, [], [], np.zeros((len(planes), len(planes)), dtype=bool))


class TestFloorCeiling:
    def test_symmetric_average(self):
        tilt = Rotation.from_euler("x", 2.0, degrees=True).as_matrix()
        up = np.array([0.0, 1.0, 0.0])
        partials = [horizontal_partial(0, tilt @ up), horizontal_partial(1, tilt.T @ up)]
        poses = {0: PoseSE3.identity(), 1: PoseSE3.identity()}
        floor, ceiling = average_floor_ceiling(partials, poses)
        np.testing.assert_allclose(floor.normal, up, atol=1e-9)
        assert ceiling.offset == pytest.approx(2.5)

    def test_scaled_pose(self):
        pose = PoseSE3(np.eye(3), [0.0, 0.5, 0.0])
        floor, ceiling = average_floor_ceiling([horizontal_partial(0)], {0: (pose, 2.0)})
        # 天花板 y=2.5 经 2倍缩放并平移后位于 y=5.5
        assert ceiling.signed_distance([0.0, 5.5, 0.0]) == pytest.approx(0.0, abs=1e-12)
        assert floor.signed_distance([0.0, 0.5, 0.0]) == pytest.approx(0.0, abs=1e-12)

    def test_missing_floor(self):
        partial = PartialLayout(0, [lifted(Plane((1.0, 0.0, 0.0), 1.0), np.zeros((3, 3)))], [], [],
                                np.zeros((1, 1), dtype=bool))
        with pytest.raises(MissingFloorError):
            average_floor_ceiling([partial], {0: PoseSE3.identity()})

    def test_missing_pose(self):
        with pytest.raises(InputFormatError):
            average_floor_ceiling([horizontal_partial(3)], {0: PoseSE3.identity()})

    def test_missing_ceiling(self):
        with pytest.raises(MissingCeilingError):
            average_floor_ceiling([horizontal_partial(0, ceiling=False)], {0: PoseSE3.identity()})

    def test_averaged_floor_is_no_worse_than_worst_view(self, l_scene):
        partials, poses = partials_with_truth(l_scene, noise=0.02, seed=4)
        floor, _ = average_floor_ceiling(partials, poses)
        truth = l_scene.planes[0].normal

        def angle(normal):
            return np.degrees(np.arccos(np.clip(normal @ truth, -1.0, 1.0)))

        worst = max(angle(average_floor_ceiling([p], poses)[0].normal) for p in partials)
        assert angle(floor.normal) <= worst


class TestProjection:
    def test_axis_aligned_wall(self):
        zs = np.linspace(0.0, 4.0, 9)
        points = np.array([[3.0, y, z] for z in zs for y in (0.5, 1.5)])
        partial = horizontal_partial(0)
        partial.planes.append(lifted(Plane((-1.0, 0.0, 0.0), 3.0), points, 2))
        segments = project_walls([partial], {0: PoseSE3.identity()}, partial.planes[0].plane)
        assert len(segments) == 1
        np.testing.assert_allclose(sorted(map(tuple, segments[0].endpoints)), [(3.0, 0.0), (3.0, 4.0)], atol=1e-12)

    def test_two_views_give_collinear_segments(self, box_scene):
        partials, poses = partials_with_truth(box_scene)
        floor, _ = average_floor_ceiling(partials, poses)
        segments = project_walls(partials, poses, floor)
        by_image = {p.image_id: p for p in partials}
        by_wall = {}
        for segment in segments:
            mask_id = by_image[segment.image_id].planes[segment.source_plane_index].mask_id
            by_wall.setdefault(mask_id, []).append(segment)
        shared = [group for group in by_wall.values() if len(group) >= 2]
        assert shared
        for group in shared:
            normal = group[0].normal2d
            offsets = [float(normal @ s.midpoint) for s in group]
            assert max(offsets) - min(offsets) < 1e-9


class TestRotation:
    def test_axis_aligned(self):
        segments = [vertical(0.0, 0.0, 2.0, 0), horizontal(1.0, 0.0, 3.0, 1)]
        assert estimate_scene_rotation(segments) == pytest.approx(0.0, abs=1e-12)

    def test_rigid_rotation(self):
        angle = np.radians(17.0)
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        segments = []
        for k, base in enumerate([[[0, 0], [2, 0]], [[2, 0], [2, 3]], [[2, 3], [0, 3]], [[0, 3], [0, 0]]]):
            segments.append(WallSegment2D(np.asarray(base, dtype=float) @ rot.T, k, 0))
        assert estimate_scene_rotation(segments) == pytest.approx(angle, abs=1e-6)

    @given(st.integers(0, 10_000))
    def test_matches_grid_search(self, seed):
        rng = np.random.default_rng(seed)
        base = rng.uniform(0.0, np.pi / 2)
        segments = []
        for k in range(6):
            angle = base + k * np.pi / 2 + rng.normal(0.0, np.radians(3.0))
            length = rng.uniform(0.5, 3.0)
            start = rng.uniform(-3, 3, 2)
            segments.append(WallSegment2D([start, start + length * np.array([np.cos(angle), np.sin(angle)])], k, 0))
        theta = estimate_scene_rotation(segments)
        assert 0.0 <= theta < np.pi / 2
        grid = np.radians(np.arange(0.0, 90.0, 0.01))
        angles = np.array([s.angle for s in segments])
        lengths = np.array([s.length for s in segments])
        wrapped = (4.0 * (angles[None, :] - grid[:, None]) + np.pi) % (2.0 * np.pi) - np.pi
        grid_best = float(np.min(np.abs(wrapped) @ lengths))
        assert rotation_cost(segments, theta) <= grid_best + 1e-9

    def test_snap_classification(self):
        near_vertical = np.radians(89.5)
        diagonal = np.radians(45.0)
        segments = [WallSegment2D([[0, 0], [np.cos(near_vertical), np.sin(near_vertical)]], 0, 0, normal2d=[1, 0]),
                    WallSegment2D([[0, 0], [np.cos(diagonal), np.sin(diagonal)]], 1, 0, normal2d=[1, -1])]
        snapped = snap_axis(segments, 0.0, MergeParams(angle_snap_tol=5.0))
        assert snapped[0].orientation == Orientation.VERTICAL
        assert snapped[0].endpoints[0, 0] == pytest.approx(snapped[0].endpoints[1, 0])
        assert snapped[0].length == pytest.approx(segments[0].length)
        assert snapped[1].orientation == Orientation.UNCLASSIFIED

    @given(theta=st.floats(0.0, 89.9), quarter=st.integers(0, 3), delta=st.floats(-14.5, 14.5),
           length=st.floats(0.3, 4.0))
    def test_snap_within_tolerance(self, theta, quarter, delta, length):
        angle = np.radians(theta + 90.0 * quarter + delta)
        start = np.array([1.0, -2.0])
        segment = WallSegment2D([start, start + length * np.array([np.cos(angle), np.sin(angle)])], 0, 0,
                                normal2d=[-np.sin(angle), np.cos(angle)])
        snapped = snap_axis([segment], np.radians(theta))[0]
        expected = Orientation.HORIZONTAL if quarter % 2 == 0 else Orientation.VERTICAL
        assert snapped.orientation == expected
        assert snapped.length == pytest.approx(length)
        assert abs(snapped.normal2d @ (snapped.endpoints[1] - snapped.endpoints[0])) < 1e-9

    @given(theta=st.floats(0.0, 89.9), quarter=st.integers(0, 3), delta=st.floats(15.5, 44.5),
           sign=st.sampled_from([-1.0, 1.0]))
    def test_snap_beyond_tolerance_unclassified(self, theta, quarter, delta, sign):
        angle = np.radians(theta + 90.0 * quarter + sign * delta)
        segment = WallSegment2D([[0.0, 0.0], [np.cos(angle), np.sin(angle)]], 0, 0,
                                normal2d=[-np.sin(angle), np.cos(angle)])
        assert snap_axis([segment], np.radians(theta))[0].orientation == Orientation.UNCLASSIFIED


class TestMergePlanes:
    def test_singleton(self):
        clusters = merge_planes([vertical(1.0, 0.0, 2.0, 0)], [])
        assert partition(clusters) == [((0, 0),)]

    def test_same_wall_two_images(self):
        clusters = merge_planes([vertical(1.0, 0.0, 2.0, 0), vertical(1.02, 0.5, 2.5, 1)], [],
                                MergeParams(proximity_threshold=0.1))
        assert partition(clusters) == [((0, 0), (1, 0))]

    def test_same_image_never_merges(self):
        clusters = merge_planes([vertical(1.0, 0.0, 2.0, 0, 0), vertical(1.05, 0.0, 2.0, 0, 1)], [],
                                MergeParams(proximity_threshold=0.1))
        assert len(clusters) == 2

    def test_far_apart(self):
        clusters = merge_planes([vertical(0.0, 0.0, 2.0, 0), vertical(1.0, 0.0, 2.0, 1)], [])
        assert len(clusters) == 2

    def test_blocked_by_crossing_wall(self):
        segments = [vertical(0.0, 0.0, 1.0, 0), vertical(0.05, 3.0, 4.0, 1)]
        crossing = [horizontal(2.0, -1.0, 1.0, 2)]
        assert len(merge_planes(segments, crossing)) == 3
        assert partition(merge_planes(segments, [])) == [((0, 0), (1, 0))]

    def test_cluster_ids_vertical_first(self):
        clusters = merge_planes([vertical(0.0, 0.0, 2.0, 0)], [horizontal(1.0, 0.0, 2.0, 0, 1)])
        assert [(c.cluster_id, c.orientation) for c in clusters] == [(0, Orientation.VERTICAL),
                                                                    (1, Orientation.HORIZONTAL)]

    @given(st.integers(0, 10_000))
    def test_greedy_matches_exhaustive(self, seed):
        rng = np.random.default_rng(seed)
        segments_v, segments_h = [], []
        for axis, walls, target, make in ((0, (0.0, 2.0), segments_v, vertical), (1, (0.0, 3.0), segments_h, horizontal)):
            for wall_index, coordinate in enumerate(walls):
                images = rng.choice(6, size=int(rng.integers(1, 4)), replace=False)
                for image in images:
                    start = rng.uniform(0.0, 0.5)
                    target.append(make(coordinate + rng.normal(0.0, 0.02), start, start + rng.uniform(1.0, 1.5),
                                       int(image), 10 * axis + wall_index))
        greedy = merge_planes(segments_v, segments_h)
        exhaustive = merge_planes_exhaustive(segments_v, segments_h)
        assert partition(greedy) == partition(exhaustive)
        for cluster in greedy:
            images = [m.image_id for m in cluster.members]
            assert len(images) == len(set(images))

    def test_exhaustive_limit(self):
        segments = [vertical(float(k), 0.0, 1.0, k) for k in range(13)]
        with pytest.raises(InputFormatError):
            merge_planes_exhaustive(segments, [])

    def test_invalid_params(self):
        with pytest.raises(InputFormatError):
            MergeParams(overlap_threshold=1.5)


def scene_plane_index(scene, plane):
    for index, truth in enumerate(scene.planes):
        if truth.semantic_class == plane.semantic_class and np.allclose(truth.normal, plane.normal, atol=1e-6) \
                and abs(truth.offset - plane.offset) < 1e-6:
            return index
    return None


class TestMergePartialLayouts:
    def test_cuboid(self, box_scene):
        partials, poses = partials_with_truth(box_scene)
        result = merge_partial_layouts(partials, poses)
        layout = result.layout
        assert len(layout.planes) == 6
        assert len(layout.lines) == 12
        assert len(layout.junctions) == 8
        assert layout.unmerged == []
        pr = plane_precision_recall(layout.planes, box_scene.planes)
        assert (pr.precision, pr.recall) == (100.0, 100.0)
        assert layout.footprint is not None
        assert layout.footprint.polygon.area == pytest.approx(12.0, rel=1e-9)

    def test_l_room_adjacency_matches_scene(self, l_scene):
        partials, poses = partials_with_truth(l_scene)
        layout = merge_partial_layouts(partials, poses).layout
        assert len(layout.planes) == 8
        mapping = [scene_plane_index(l_scene, p) for p in layout.planes]
        assert sorted(mapping) == list(range(8))
        np.testing.assert_array_equal(layout.adjacency, l_scene.adjacency[np.ix_(mapping, mapping)])

    def test_single_view_is_identity_merge(self, box_scene):
        partials, poses = partials_with_truth(box_scene)
        partial = partials[0]
        layout = merge_partial_layouts([partial], poses).layout
        assert len(layout.planes) == len(partial.planes)
        membership = {}
        for plane_id, sources in enumerate(layout.provenance):
            for image_id, index in sources:
                membership[index] = plane_id
        for index, source in enumerate(partial.planes):
            expected = scene_plane_index(box_scene, layout.planes[membership[index]])
            assert expected == source.mask_id
        for a in range(len(partial.planes)):
            for b in range(len(partial.planes)):
                assert layout.adjacency[membership[a], membership[b]] == partial.adjacency[a, b]

    def test_deterministic(self, l_scene):
        partials, poses = partials_with_truth(l_scene)
        a = merge_partial_layouts(partials, poses)
        b = merge_partial_layouts(partials, poses)
        assert partition(a.clusters) == partition(b.clusters)
        for x, y in zip(a.layout.planes, b.layout.planes):
            np.testing.assert_array_equal(x.normal, y.normal)
            assert x.offset == y.offset

    def test_every_segment_accounted_for(self, l_scene):
        partials, poses = partials_with_truth(l_scene, noise=0.01, seed=2)
        result = merge_partial_layouts(partials, poses)
        clustered = [k for c in result.clusters for k in c.keys]
        assert len(clustered) == len(set(clustered))
        assert len(result.clusters) <= len(result.segments)
        assert sorted(clustered + result.layout.unmerged) == sorted(s.key for s in result.segments)
        for cluster in result.clusters:
            assert len(cluster.image_ids) == len(cluster.members)

    @pytest.mark.parametrize("scene_name", ["box_scene", "l_scene"])
    def test_image_relabel_keeps_planes(self, request, scene_name):
        scene = request.getfixturevalue(scene_name)
        partials, poses = partials_with_truth(scene)
        ids = sorted(poses)
        relabel = dict(zip(ids, reversed([10 + k for k in ids])))
        renamed = [replace(p, image_id=relabel[p.image_id]) for p in reversed(partials)]
        renamed_poses = {relabel[k]: pose for k, pose in poses.items()}
        original = merge_partial_layouts(partials, poses).layout
        shuffled = merge_partial_layouts(renamed, renamed_poses).layout
        assert len(original.planes) == len(shuffled.planes)
        unmatched = list(shuffled.planes)
        for plane in original.planes:
            match = next(k for k, other in enumerate(unmatched)
                         if other.semantic_class == plane.semantic_class
                         and np.allclose(other.normal, plane.normal, atol=1e-9)
                         and abs(other.offset - plane.offset) < 1e-9)
            unmatched.pop(match)
        assert unmatched == []

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_more_views_recall_no_lower(self, l_scene, seed):
        partials, poses = partials_with_truth(l_scene, noise=0.06, seed=seed)
        recall = {}
        for count in (2, 5):
            layout = merge_partial_layouts(partials[:count], poses).layout
            recall[count] = plane_precision_recall(layout.planes, l_scene.planes).recall
        assert recall[5] >= recall[2]

    def test_single_camera_room_misses_unseen_wall(self):
        scene = generate_room(SceneSpec(wall_count=4, camera_count=1, seed=8))
        partials, poses = partials_with_truth(scene)
        assert [p.image_id for p in partials] == [0, 1]
        observed = {p.mask_id for p in partials[0].planes if p.semantic_class == SemanticClass.WALL}
        assert len(observed) < 4
        layout = merge_partial_layouts(partials, poses).layout
        assert layout.footprint is None
        pr = plane_precision_recall(layout.planes, scene.planes)
        assert pr.precision == 100.0
        assert pr.recall == pytest.approx(100.0 * (len(observed) + 2) / 6)
