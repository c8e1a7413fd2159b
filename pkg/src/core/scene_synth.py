#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
合成场景模块 - 生成直角多边形房间、渲染结构平面深度图并输出视角对数据

该模块替代二维平面检测网络与点图回归网络的输出：
它直接给出真值点图、置信度图和平面掩码（可选加入高斯噪声）。
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from shapely.geometry import LineString, Point, Polygon

try:
    from .errors import InputFormatError, RenderError, SceneSpecError
    from .geom_core import (Intrinsics, Plane, Pointmap, PoseSE3, RoomFootprint,
                            SemanticClass, backproject, cast_room_rays, point_in_room)
    from .utils import setup_logger
except ImportError:
    from errors import InputFormatError, RenderError, SceneSpecError
    from geom_core import (Intrinsics, Plane, Pointmap, PoseSE3, RoomFootprint,
                           SemanticClass, backproject, cast_room_rays, point_in_room)
    from utils import setup_logger

logger = setup_logger(__name__)

# 场景生成默认值
DEFAULT_ROOM_EXTENT = 6.0
DEFAULT_CEILING_HEIGHT = 3.0
DEFAULT_IMAGE_WIDTH = 128
DEFAULT_IMAGE_HEIGHT = 96
DEFAULT_HFOV_DEG = 90.0
DEFAULT_MIN_WALL_SPACING = 0.6

FLOOR_ID = 0
CEILING_ID = 1
WORLD_UP = np.array([0.0, 1.0, 0.0])

# 相机摆放
CAMERA_CLEARANCE = 0.3
MIN_TARGET_DISTANCE = 1.0
VISIBLE_MIN_PIXELS = 30
COVERAGE_MIN_PIXELS = 200
MAX_CAMERA_TRIES = 200
MAX_CAMERA_SETS = 40
MAX_FOOTPRINT_TRIES = 200
# 共用同一条 x 边 / z 边的矩形角点
_X_SIDES = ((0, 3), (1, 2))
_Z_SIDES = ((0, 1), (3, 2))

CONFIDENCE_FLOOR = 0.1


@dataclass
class SceneSpec:
    """合成房间的生成参数"""
    wall_count: int = 4
    room_extent: float = DEFAULT_ROOM_EXTENT
    ceiling_height: float = DEFAULT_CEILING_HEIGHT
    camera_count: int = 3
    noise_sigma: float = 0.0
    seed: int = 0
    image_width: int = DEFAULT_IMAGE_WIDTH
    image_height: int = DEFAULT_IMAGE_HEIGHT
    hfov_deg: float = DEFAULT_HFOV_DEG
    min_wall_spacing: float = DEFAULT_MIN_WALL_SPACING
    rotate: bool = True

    def validate(self):
        """检查参数合法性

        Raises:
            SceneSpecError: 参数不合法
        """
        if self.wall_count < 4 or self.wall_count % 2 != 0:
            raise SceneSpecError(
                f"wall_count={self.wall_count} 不合法：直角多边形房间的墙面数必须是不小于4的偶数")
        if self.wall_count > 12:
            raise SceneSpecError(f"wall_count={self.wall_count} 超出支持范围 [4, 12]")
        if self.room_extent <= 0 or self.ceiling_height <= 0:
            raise SceneSpecError("room_extent 与 ceiling_height 必须为正数")
        if self.camera_count < 1:
            raise SceneSpecError("camera_count 至少为1")
        if self.noise_sigma < 0:
            raise SceneSpecError("noise_sigma 不能为负")
        if not (0 <= self.seed < 2 ** 64):
            raise SceneSpecError("seed 必须是64位无符号整数")
        if self.image_width < 4 or self.image_height < 4:
            raise SceneSpecError("图像尺寸过小")
        if not (10.0 <= self.hfov_deg < 170.0):
            raise SceneSpecError("hfov_deg 必须位于 [10, 170) 度")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class CameraView:
    """一个相机：位姿 + 内参 + 图像尺寸"""
    pose: PoseSE3
    intrinsics: Intrinsics
    width: int
    height: int


@dataclass
class Scene:
    """合成场景真值"""
    planes: List[Plane]
    adjacency: np.ndarray
    cameras: List[CameraView]
    footprint: RoomFootprint
    spec: Optional[SceneSpec] = None

    @property
    def wall_ids(self) -> List[int]:
        return [i for i, p in enumerate(self.planes) if p.semantic_class == SemanticClass.WALL]


@dataclass
class ViewBundle:
    """一对图像 (i, j) 在相机i坐标系下的点图、置信度与平面掩码"""
    image_id: int
    partner_id: int
    pointmap_self: Pointmap
    pointmap_other: Pointmap
    confidence_self: np.ndarray
    confidence_other: np.ndarray
    plane_masks: np.ndarray
    intrinsics: Optional[Intrinsics] = None

    def __post_init__(self):
        self.confidence_self = np.asarray(self.confidence_self, dtype=np.float64)
        self.confidence_other = np.asarray(self.confidence_other, dtype=np.float64)
        self.plane_masks = np.asarray(self.plane_masks, dtype=np.int32)
        shape = self.pointmap_self.valid.shape
        for name, arr in (("pointmap_other", self.pointmap_other.valid),
                          ("confidence_self", self.confidence_self),
                          ("confidence_other", self.confidence_other),
                          ("plane_masks", self.plane_masks)):
            if arr.shape != shape:
                raise InputFormatError(f"视角对 ({self.image_id}, {self.partner_id}) 的 {name} 尺寸 {arr.shape} 与点图 {shape} 不一致")
        for name, conf, pm in (("confidence_self", self.confidence_self, self.pointmap_self),
                               ("confidence_other", self.confidence_other, self.pointmap_other)):
            values = conf[pm.valid]
            if values.size and (not np.all(np.isfinite(values)) or np.any(values <= 0)):
                raise InputFormatError(f"视角对 ({self.image_id}, {self.partner_id}) 的 {name} 含非正值")

    @property
    def key(self) -> Tuple[int, int]:
        return (self.image_id, self.partner_id)


def look_at_pose(eye, target, up=WORLD_UP) -> PoseSE3:
    """构造朝向target的相机位姿（相机y轴朝下）"""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward = forward / np.linalg.norm(forward)
    down = -np.asarray(up, dtype=np.float64)
    down = down - (down @ forward) * forward
    norm = np.linalg.norm(down)
    if norm < 1e-9:
        raise InputFormatError("视线方向与up方向平行，无法构造相机位姿")
    down = down / norm
    right = np.cross(down, forward)
    return PoseSE3(np.column_stack([right, down, forward]), eye)


def scene_from_footprint(vertices, ceiling_height: float, cameras: Sequence[CameraView],
                         spec: Optional[SceneSpec] = None) -> Scene:
    """由水平轮廓构造房间场景

    Args:
        vertices: N×2 轮廓顶点（世界坐标 (x, z)），方向任意
        ceiling_height: 层高（地面位于y=0）
        cameras: 相机列表
        spec: 可选的生成参数（仅做记录）

    Returns:
        Scene: 平面编号 0=地面，1=天花板，2.. 依次为各条边对应的墙面
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    polygon = Polygon(vertices)
    if not polygon.is_valid or polygon.area <= 0:
        raise SceneSpecError("房间轮廓不是简单多边形")
    if not polygon.exterior.is_ccw:
        vertices = vertices[::-1].copy()

    planes = [Plane(WORLD_UP, 0.0, SemanticClass.FLOOR),
              Plane(-WORLD_UP, ceiling_height, SemanticClass.CEILING)]
    count = vertices.shape[0]
    for k in range(count):
        start, end = vertices[k], vertices[(k + 1) % count]
        direction = (end - start) / np.linalg.norm(end - start)
        # 逆时针轮廓的内侧在边的左边
        inward = np.array([-direction[1], direction[0]])
        normal = np.array([inward[0], 0.0, inward[1]])
        planes.append(Plane(normal, -float(inward @ start), SemanticClass.WALL))

    size = len(planes)
    adjacency = np.zeros((size, size), dtype=bool)
    for k in range(count):
        wall, following = 2 + k, 2 + (k + 1) % count
        adjacency[wall, following] = adjacency[following, wall] = True
        for fixed in (FLOOR_ID, CEILING_ID):
            adjacency[wall, fixed] = adjacency[fixed, wall] = True

    footprint = RoomFootprint(vertices, list(range(2, 2 + count)), FLOOR_ID, CEILING_ID, WORLD_UP)
    return Scene(planes, adjacency, list(cameras), footprint, spec)


def _side_spans(rng: np.random.Generator, length: float, count: int, spacing: float) -> Optional[List[float]]:
    """为同一条边上的 count 个缺口抽取深度，两两相差至少 spacing

    深度取值于 [max(0.2·length, spacing), 0.4·length]；区间放不下时返回 None。
    """
    low, high = max(0.2 * length, spacing), 0.4 * length
    if count == 1:
        return [rng.uniform(low, high)] if high >= low else None
    if high - low < spacing:
        return None
    first = rng.uniform(low, high - spacing)
    second = rng.uniform(first + spacing, high)
    return [first, second] if rng.random() < 0.5 else [second, first]


def _rectilinear_footprint(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """在矩形的若干角上切去矩形缺口，得到 wall_count 条边的直角多边形

    同一条边上的两个缺口深度至少相差 min_wall_spacing，缺口墙不会与其它墙共线。
    """
    notch_count = (spec.wall_count - 4) // 2
    for _ in range(MAX_FOOTPRINT_TRIES):
        width = spec.room_extent * rng.uniform(0.7, 1.0)
        depth = spec.room_extent * rng.uniform(0.7, 1.0)
        corners = np.array([[-width / 2, -depth / 2], [width / 2, -depth / 2],
                            [width / 2, depth / 2], [-width / 2, depth / 2]])
        notched = set(int(c) for c in rng.permutation(4)[:notch_count])

        # x_span: 缺口沿 x 的宽度（决定竖直墙的 x 坐标），z_span 同理
        x_span, z_span = {}, {}
        feasible = True
        for sides, length, spans in ((_X_SIDES, width, x_span), (_Z_SIDES, depth, z_span)):
            for side in sides:
                members = [k for k in side if k in notched]
                if not members:
                    continue
                drawn = _side_spans(rng, length, len(members), spec.min_wall_spacing)
                if drawn is None:
                    feasible = False
                    break
                spans.update(zip(members, drawn))
            if not feasible:
                break
        if not feasible:
            continue

        vertices = []
        for k in range(4):
            corner = corners[k]
            if k not in notched:
                vertices.append(corner)
                continue
            d_in = corners[k] - corners[k - 1]
            d_in = d_in / np.linalg.norm(d_in)
            d_out = corners[(k + 1) % 4] - corners[k]
            d_out = d_out / np.linalg.norm(d_out)
            span_in = x_span[k] if abs(d_in[0]) > 0.5 else z_span[k]
            span_out = x_span[k] if abs(d_out[0]) > 0.5 else z_span[k]
            first = corner - span_in * d_in
            vertices.extend([first, first + span_out * d_out, corner + span_out * d_out])
        vertices = np.array(vertices)
        if _walls_well_separated(vertices, spec.min_wall_spacing):
            return vertices
    raise SceneSpecError(
        f"无法在 room_extent={spec.room_extent} 内生成墙间距不小于 {spec.min_wall_spacing} m 的 {spec.wall_count} 面墙房间")


def _walls_well_separated(vertices: np.ndarray, spacing: float) -> bool:
    count = vertices.shape[0]
    for axis in (0, 1):
        coords = []
        for k in range(count):
            start, end = vertices[k], vertices[(k + 1) % count]
            if abs(start[axis] - end[axis]) < 1e-12:
                coords.append(start[axis])
        coords = np.sort(np.array(coords))
        gaps = np.diff(coords)
        # 共线墙面（完全相同的坐标）不允许出现
        if np.any(gaps < spacing):
            return False
    return True


def _rotate_2d(vertices: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return vertices @ np.array([[c, -s], [s, c]]).T


def _visible_counts(scene: Scene, camera: CameraView) -> Dict[int, int]:
    _, ids = cast_room_rays(scene.planes, scene.footprint, camera.pose, camera.intrinsics,
                            camera.height, camera.width)
    labels, counts = np.unique(ids[ids >= 0], return_counts=True)
    return {int(l): int(c) for l, c in zip(labels, counts)}


def _place_camera(rng: np.random.Generator, scene: Scene, spec: SceneSpec,
                  corner: np.ndarray, intrinsics: Intrinsics) -> Optional[Tuple[CameraView, Dict[int, int]]]:
    polygon = scene.footprint.polygon
    min_x, min_z, max_x, max_z = polygon.bounds
    height = spec.ceiling_height
    for _ in range(MAX_CAMERA_TRIES):
        eye2 = np.array([rng.uniform(min_x, max_x), rng.uniform(min_z, max_z)])
        yaw_jitter = np.radians(rng.uniform(-10.0, 10.0))
        eye_height = height * rng.uniform(0.4, 0.6)
        target_height = height * rng.uniform(0.45, 0.55)
        point = Point(eye2)
        if not polygon.contains(point) or polygon.exterior.distance(point) < CAMERA_CLEARANCE:
            continue
        to_corner = corner - eye2
        distance = np.linalg.norm(to_corner)
        if distance < MIN_TARGET_DISTANCE:
            continue
        # 视线必须能看到目标角点
        near_corner = corner - 0.01 * to_corner / distance
        if not polygon.buffer(1e-9).contains(LineString([eye2, near_corner])):
            continue
        target2 = eye2 + _rotate_2d(to_corner[None, :], yaw_jitter)[0]
        pose = look_at_pose([eye2[0], eye_height, eye2[1]], [target2[0], target_height, target2[1]])
        camera = CameraView(pose, intrinsics, spec.image_width, spec.image_height)
        counts = _visible_counts(scene, camera)
        walls_seen = [pid for pid, c in counts.items()
                      if pid not in (FLOOR_ID, CEILING_ID) and c >= VISIBLE_MIN_PIXELS]
        if len(walls_seen) < 2:
            continue
        if counts.get(FLOOR_ID, 0) < VISIBLE_MIN_PIXELS or counts.get(CEILING_ID, 0) < VISIBLE_MIN_PIXELS:
            continue
        return camera, counts
    return None


def generate_room(spec: SceneSpec) -> Scene:
    """按规格生成直角多边形房间与相机

    同一个seed总是生成完全相同的场景。相机对准轮廓角点摆放，
    每个相机至少看到两面墙以及地面和天花板，并尽量让所有墙面都被某个相机看到。
    camera_count=1 时唯一的相机被复制成一对；单个水平视场小于180°的相机
    通常看不全所有墙面，未观测的墙不会出现在合并结果中，也得不到闭合轮廓。

    Raises:
        SceneSpecError: 规格不合法或无法满足约束
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    vertices = _rectilinear_footprint(rng, spec)
    if spec.rotate:
        vertices = _rotate_2d(vertices, rng.uniform(0.0, 2.0 * np.pi))
    room = scene_from_footprint(vertices, spec.ceiling_height, [], spec)

    intrinsics = Intrinsics.from_fov(spec.image_width, spec.image_height, spec.hfov_deg)
    placed_count = spec.camera_count
    corners = room.footprint.vertices
    corner_order = rng.permutation(corners.shape[0])
    walls = set(room.wall_ids)

    best_cameras, best_missing = None, None
    for attempt in range(MAX_CAMERA_SETS):
        cameras, covered = [], set()
        for k in range(placed_count):
            corner = corners[corner_order[(k + attempt) % corners.shape[0]]]
            placed = _place_camera(rng, room, spec, corner, intrinsics)
            if placed is None:
                break
            camera, counts = placed
            cameras.append(camera)
            covered.update(pid for pid, c in counts.items() if c >= COVERAGE_MIN_PIXELS)
        if len(cameras) < placed_count:
            continue
        missing = walls - covered
        if best_missing is None or len(missing) < len(best_missing):
            best_cameras, best_missing = cameras, missing
        if not missing:
            break

    if best_cameras is None:
        raise SceneSpecError(f"seed={spec.seed}: 无法摆放满足可见性约束的相机")
    if best_missing:
        logger.warning(f"seed={spec.seed}: 墙面 {sorted(best_missing)} 未被任何相机充分观测")
    if spec.camera_count == 1:
        # 单张图像的房间复制该图像组成一对
        logger.info("camera_count=1，复制唯一的相机以组成图像对")
        best_cameras = [best_cameras[0], best_cameras[0]]

    room.cameras = best_cameras
    logger.debug(f"生成房间: {spec.wall_count} 面墙, {len(best_cameras)} 个相机, seed={spec.seed}")
    return room


def render_structural_depth(scene: Scene, cam_index: int) -> Tuple[np.ndarray, np.ndarray]:
    """渲染结构平面深度图与平面编号掩码

    Raises:
        RenderError: 相机编号越界或相机位于房间外部
    """
    if not 0 <= cam_index < len(scene.cameras):
        raise RenderError(f"相机编号 {cam_index} 越界（共 {len(scene.cameras)} 个相机）")
    camera = scene.cameras[cam_index]
    if not point_in_room(scene.planes, scene.footprint, camera.pose.center):
        raise RenderError(f"相机 {cam_index} 位于房间外部")
    return cast_room_rays(scene.planes, scene.footprint, camera.pose, camera.intrinsics,
                          camera.height, camera.width)


def default_pairing(view_count: int) -> List[Tuple[int, int]]:
    """默认配对：所有有序图像对"""
    return [(i, j) for i in range(view_count) for j in range(view_count) if i != j]


def _noisy(pointmap: Pointmap, noise_sigma: float, rng: np.random.Generator) -> Tuple[Pointmap, np.ndarray]:
    if noise_sigma == 0:
        return pointmap, np.ones(pointmap.valid.shape)
    noise = rng.normal(0.0, noise_sigma, size=pointmap.points.shape)
    confidence = np.clip(1.0 / (1.0 + np.linalg.norm(noise, axis=-1) / noise_sigma), CONFIDENCE_FLOOR, 1.0)
    points = np.where(pointmap.valid[..., None], pointmap.points + noise, 0.0)
    return Pointmap(points, pointmap.valid.copy()), confidence


def emit_view_bundles(scene: Scene, pairing: Sequence[Tuple[int, int]], noise_sigma: float,
                      seed: Optional[int] = None) -> List[ViewBundle]:
    """输出每个图像对的点图数据

    X_{i,i} 为相机i自身的反投影；X_{j,i} 为相机j的反投影经 T_i⁻¹∘T_j 变换到相机i坐标系。
    噪声由 (seed, i, j) 决定，结果可复现。

    Raises:
        InputFormatError: 配对中出现 i == j 或 噪声为负
    """
    if noise_sigma < 0:
        raise InputFormatError("noise_sigma 不能为负")
    if seed is None:
        seed = scene.spec.seed if scene.spec is not None else 0

    renders: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    def rendered(index):
        if index not in renders:
            renders[index] = render_structural_depth(scene, index)
        return renders[index]

    bundles = []
    for i, j in pairing:
        if i == j:
            raise InputFormatError(f"图像对 ({i}, {j}) 不合法：i 与 j 必须不同")
        depth_i, ids_i = rendered(i)
        depth_j, _ = rendered(j)
        cam_i, cam_j = scene.cameras[i], scene.cameras[j]
        self_map = backproject(depth_i, cam_i.intrinsics)
        relative = cam_i.pose.inverse() @ cam_j.pose
        other_map = backproject(depth_j, cam_j.intrinsics).transformed(relative)

        rng = np.random.default_rng([seed, i, j])
        self_map, conf_self = _noisy(self_map, noise_sigma, rng)
        other_map, conf_other = _noisy(other_map, noise_sigma, rng)
        bundles.append(ViewBundle(i, j, self_map, other_map, conf_self, conf_other,
                                  ids_i.copy(), cam_i.intrinsics))
    return bundles
