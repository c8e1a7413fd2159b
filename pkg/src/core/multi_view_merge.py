#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
多视角合并模块 - 将各视角的局部布局变换到世界坐标系并融合重复平面

流程：
1. 平均所有视角的地面与天花板
2. 墙面投影到水平面得到二维线段
3. 估计场景主方向并将线段吸附到水平/竖直方向
4. 按类别贪心聚类（同一图像的线段不合并，不跨越另一类别的墙面）
5. 每个聚类生成一个墙面平面，补全邻接关系，计算交线与交点
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from shapely.geometry import Polygon

try:
    from .errors import InputFormatError, MissingCeilingError, MissingFloorError
    from .geom_core import (EPS_PARALLEL, Junction3D, Line3D, Plane, PoseSE3, RoomFootprint,
                            SemanticClass, transform_plane, up_basis)
    from .single_view_layout import PartialLayout, layout_primitives
    from .utils import setup_logger
except ImportError:
    from errors import InputFormatError, MissingCeilingError, MissingFloorError
    from geom_core import (EPS_PARALLEL, Junction3D, Line3D, Plane, PoseSE3, RoomFootprint,
                           SemanticClass, transform_plane, up_basis)
    from single_view_layout import PartialLayout, layout_primitives
    from utils import setup_logger

logger = setup_logger(__name__)

FLOOR_ID = 0
CEILING_ID = 1
MAX_EXHAUSTIVE_SEGMENTS = 12
MAX_CYCLE_WALLS_PER_AXIS = 6

PoseLike = Union[PoseSE3, Tuple[PoseSE3, float]]


class Orientation(str, Enum):
    VERTICAL = "vertical"
    HORIZONTAL = "horizontal"
    UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class MergeParams:
    """平面合并参数

    Attributes:
        proximity_threshold: 聚类中心与线段的最大垂直距离（米）
        overlap_threshold: 沿轴向重叠比例阈值
        margin: 判断另一类墙面是否位于两者之间的容差（米）
        angle_snap_tol: 吸附到坐标轴的最大角度偏差（度）
    """
    proximity_threshold: float = 0.2
    overlap_threshold: float = 0.3
    margin: float = 0.1
    angle_snap_tol: float = 15.0

    def __post_init__(self):
        for name in ("proximity_threshold", "overlap_threshold", "margin", "angle_snap_tol"):
            if not getattr(self, name) > 0:
                raise InputFormatError(f"MergeParams.{name} 必须为正数")
        if self.overlap_threshold > 1:
            raise InputFormatError("MergeParams.overlap_threshold 必须位于 (0, 1]")


@dataclass(frozen=True)
class MergeFrame:
    """水平面坐标系：up_basis 给出的 (e1, e2)，以及场景主方向角 theta"""
    up: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    theta: float = 0.0

    @classmethod
    def from_up(cls, up, theta: float = 0.0) -> "MergeFrame":
        up, e1, e2 = up_basis(up)
        return cls(up, e1, e2, theta)

    def to_2d(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return np.stack([points @ self.e1, points @ self.e2], axis=-1)

    def lift(self, points2d) -> np.ndarray:
        points2d = np.asarray(points2d, dtype=np.float64)
        return points2d[..., :1] * self.e1 + points2d[..., 1:2] * self.e2

    def unrotate(self, points2d) -> np.ndarray:
        """吸附坐标系 → 水平面坐标"""
        return _rotate(points2d, self.theta)


@dataclass
class WallSegment2D:
    """一面墙在水平面上的投影线段"""
    endpoints: np.ndarray
    image_id: int
    source_plane_index: int
    orientation: Orientation = Orientation.UNCLASSIFIED
    normal2d: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.endpoints = np.asarray(self.endpoints, dtype=np.float64).reshape(2, 2)
        self.normal2d = np.asarray(self.normal2d, dtype=np.float64).reshape(2)
        if np.linalg.norm(self.endpoints[1] - self.endpoints[0]) <= 0:
            raise InputFormatError(f"视角 {self.image_id} 的墙面 {self.source_plane_index} 线段退化为一个点")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.endpoints[1] - self.endpoints[0]))

    @property
    def midpoint(self) -> np.ndarray:
        return self.endpoints.mean(axis=0)

    @property
    def angle(self) -> float:
        d = self.endpoints[1] - self.endpoints[0]
        return float(np.arctan2(d[1], d[0]))

    @property
    def key(self) -> Tuple[int, int]:
        return (self.image_id, self.source_plane_index)

    @property
    def perp(self) -> float:
        """吸附后垂直于线段方向的坐标（竖直线段为x，水平线段为z）"""
        return float(self.midpoint[0] if self.orientation == Orientation.VERTICAL else self.midpoint[1])

    @property
    def extent(self) -> Tuple[float, float]:
        """吸附后沿线段方向的区间"""
        axis = 1 if self.orientation == Orientation.VERTICAL else 0
        values = self.endpoints[:, axis]
        return float(values.min()), float(values.max())


@dataclass
class WallCluster:
    """同一面墙的线段聚类"""
    cluster_id: int
    orientation: Orientation
    members: List[WallSegment2D]

    @property
    def weight(self) -> float:
        return float(sum(m.length for m in self.members))

    @property
    def coordinate(self) -> float:
        """成员垂直坐标的长度加权平均"""
        return float(sum(m.length * m.perp for m in self.members) / self.weight)

    @property
    def extent(self) -> Tuple[float, float]:
        return (min(m.extent[0] for m in self.members), max(m.extent[1] for m in self.members))

    @property
    def image_ids(self) -> set:
        return {m.image_id for m in self.members}

    @property
    def keys(self) -> List[Tuple[int, int]]:
        return sorted(m.key for m in self.members)


@dataclass
class Layout:
    """合并后的房间布局（世界坐标系）

    平面编号即列表下标：0为地面，1为天花板，其后为墙面。
    """
    planes: List[Plane]
    lines: List[Line3D]
    junctions: List[Junction3D]
    adjacency: np.ndarray
    provenance: List[List[Tuple[int, int]]] = field(default_factory=list)
    footprint: Optional[RoomFootprint] = None
    wall_segments: Dict[int, np.ndarray] = field(default_factory=dict)
    cameras: Dict[int, PoseSE3] = field(default_factory=dict)
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    unmerged: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def floor_id(self) -> int:
        return self._single(SemanticClass.FLOOR)

    @property
    def ceiling_id(self) -> int:
        return self._single(SemanticClass.CEILING)

    @property
    def wall_ids(self) -> List[int]:
        return [i for i, p in enumerate(self.planes) if p.semantic_class == SemanticClass.WALL]

    def _single(self, semantic_class: SemanticClass) -> int:
        ids = [i for i, p in enumerate(self.planes) if p.semantic_class == semantic_class]
        if len(ids) != 1:
            raise InputFormatError(f"布局中 {semantic_class.value} 平面数量为 {len(ids)}，应为1")
        return ids[0]

    def transformed(self, pose: PoseSE3, scale: float = 1.0) -> "Layout":
        """整体施加相似变换 x → scale·R·x + t"""
        planes = [transform_plane(p, pose, scale) for p in self.planes]
        up = pose.rotation @ self.up
        old_frame, new_frame = MergeFrame.from_up(self.up), MergeFrame.from_up(up)

        def move_2d(points2d):
            return new_frame.to_2d(scale * (old_frame.lift(points2d) @ pose.rotation.T) + pose.translation)

        footprint = None
        if self.footprint is not None:
            footprint = RoomFootprint(move_2d(self.footprint.vertices), list(self.footprint.wall_ids),
                                      self.footprint.floor_id, self.footprint.ceiling_id, up)
        cameras = {k: PoseSE3(pose.rotation @ c.rotation, scale * (pose.rotation @ c.translation) + pose.translation)
                   for k, c in self.cameras.items()}
        lines, junctions = layout_primitives(planes, self.adjacency)
        return Layout(planes, lines, junctions, self.adjacency.copy(),
                      [list(p) for p in self.provenance], footprint,
                      {k: move_2d(v) for k, v in self.wall_segments.items()}, cameras, up, list(self.unmerged))

    def line_adjacency(self) -> np.ndarray:
        """交线邻接关系：两条交线共享一个交点即相关"""
        count = len(self.lines)
        result = np.zeros((count, count), dtype=bool)
        for point in self.junctions:
            members = set(point.planes or ())
            on_point = [k for k, line in enumerate(self.lines)
                        if line.planes is not None and set(line.planes) <= members]
            for a, b in itertools.combinations(on_point, 2):
                result[a, b] = result[b, a] = True
        return result


@dataclass
class MergeResult:
    layout: Layout
    segments: List[WallSegment2D]
    clusters: List[WallCluster]
    frame: MergeFrame


def _rotate(points, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.asarray(points, dtype=np.float64) @ np.array([[c, -s], [s, c]]).T


def _similarity(poses: Mapping[int, PoseLike], image_id: int) -> Tuple[PoseSE3, float]:
    if image_id not in poses:
        raise InputFormatError(f"缺少视角 {image_id} 的位姿")
    value = poses[image_id]
    if isinstance(value, PoseSE3):
        return value, 1.0
    pose, scale = value
    return pose, float(scale)


def _world_plane(partial: PartialLayout, index: int, poses) -> Plane:
    pose, scale = _similarity(poses, partial.image_id)
    return transform_plane(partial.planes[index].plane, pose, scale)


def _average_planes(planes: List[Plane], semantic_class: SemanticClass) -> Plane:
    normal = np.mean([p.normal for p in planes], axis=0)
    normal = normal / np.linalg.norm(normal)
    offset = float(np.mean([p.offset for p in planes]))
    return Plane(normal, offset, semantic_class)


def average_floor_ceiling(partials: Sequence[PartialLayout], poses: Mapping[int, PoseLike]) -> Tuple[Plane, Plane]:
    """平均所有视角的地面与天花板参数

    Raises:
        MissingFloorError: 没有任何视角包含地面
        MissingCeilingError: 没有任何视角包含天花板
    """
    floors, ceilings = [], []
    for partial in partials:
        floor_index = partial.index_of(SemanticClass.FLOOR)
        ceiling_index = partial.index_of(SemanticClass.CEILING)
        if floor_index is not None:
            floors.append(_world_plane(partial, floor_index, poses))
        if ceiling_index is not None:
            ceilings.append(_world_plane(partial, ceiling_index, poses))
    if not floors:
        raise MissingFloorError("所有视角都没有检测到地面")
    if not ceilings:
        raise MissingCeilingError("所有视角都没有检测到天花板")
    floor = _average_planes(floors, SemanticClass.FLOOR)
    ceiling = _average_planes(ceilings, SemanticClass.CEILING)
    logger.debug(f"地面由 {len(floors)} 个视角平均，天花板由 {len(ceilings)} 个视角平均")
    return floor, ceiling


def project_walls(partials: Sequence[PartialLayout], poses: Mapping[int, PoseLike],
                  floor: Plane) -> List[WallSegment2D]:
    """将各视角墙面投影到与地面法向正交的水平面

    线段端点为墙面内点沿墙面水平方向的两个极值投影。
    """
    frame = MergeFrame.from_up(floor.normal)
    segments = []
    for partial in partials:
        pose, scale = _similarity(poses, partial.image_id)
        for index in partial.wall_indices:
            lifted = partial.planes[index]
            plane = transform_plane(lifted.plane, pose, scale)
            if abs(float(plane.normal @ frame.up)) >= 1.0 - EPS_PARALLEL:
                logger.warning(f"视角 {partial.image_id} 的墙面 {index} 与地面平行，已跳过")
                continue
            normal2d = frame.to_2d(plane.normal)
            normal2d = normal2d / np.linalg.norm(normal2d)
            direction = np.array([-normal2d[1], normal2d[0]])
            points2d = frame.to_2d(scale * (lifted.points @ pose.rotation.T) + pose.translation)
            center = points2d.mean(axis=0)
            along = (points2d - center) @ direction
            if along.max() - along.min() <= 1e-9:
                logger.warning(f"视角 {partial.image_id} 的墙面 {index} 水平跨度为0，已跳过")
                continue
            endpoints = np.stack([center + along.min() * direction, center + along.max() * direction])
            segments.append(WallSegment2D(endpoints, partial.image_id, index, Orientation.UNCLASSIFIED, normal2d))
    return segments


def _wrap(angle):
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


def rotation_cost(segments: Sequence[WallSegment2D], theta: float) -> float:
    """Σ 长度 · |wrap(4·(α − θ))|"""
    angles = np.array([s.angle for s in segments])
    lengths = np.array([s.length for s in segments])
    return float(np.sum(lengths * np.abs(_wrap(4.0 * (angles - theta)))))


def estimate_scene_rotation(segments: Sequence[WallSegment2D]) -> float:
    """估计场景主方向角 θ ∈ [0, π/2)

    代价关于θ分段线性，极小值必在某个 α_i mod π/2 处取得，因此只需比较这些候选。
    """
    if not segments:
        return 0.0
    quarter = np.pi / 2.0
    candidates = sorted({float(s.angle % quarter) for s in segments})
    candidates = [0.0 if quarter - c < 1e-12 else c for c in candidates]
    best_theta, best_cost = None, None
    for theta in sorted(candidates):
        cost = rotation_cost(segments, theta)
        if best_cost is None or cost < best_cost - 1e-12:
            best_theta, best_cost = theta, cost
    return float(best_theta)


def snap_axis(segments: Sequence[WallSegment2D], theta: float,
              params: MergeParams = MergeParams()) -> List[WallSegment2D]:
    """旋转 −θ 后按方向分类并绕中点吸附到坐标轴

    超出 angle_snap_tol 的线段保持 UNCLASSIFIED（不参与合并）。
    """
    tol = np.radians(params.angle_snap_tol)
    snapped = []
    for segment in segments:
        endpoints = _rotate(segment.endpoints, -theta)
        normal2d = _rotate(segment.normal2d, -theta)
        d = endpoints[1] - endpoints[0]
        beta = float(np.arctan2(d[1], d[0]) % np.pi)
        mid = endpoints.mean(axis=0)
        half = segment.length / 2.0
        if min(beta, np.pi - beta) < tol:
            orientation = Orientation.HORIZONTAL
            endpoints = np.array([[mid[0] - half, mid[1]], [mid[0] + half, mid[1]]])
            normal2d = np.array([0.0, 1.0 if normal2d[1] >= 0 else -1.0])
        elif abs(beta - np.pi / 2.0) < tol:
            orientation = Orientation.VERTICAL
            endpoints = np.array([[mid[0], mid[1] - half], [mid[0], mid[1] + half]])
            normal2d = np.array([1.0 if normal2d[0] >= 0 else -1.0, 0.0])
        else:
            orientation = Orientation.UNCLASSIFIED
            logger.warning(f"视角 {segment.image_id} 的墙面 {segment.source_plane_index} "
                           f"偏离坐标轴超过 {params.angle_snap_tol}°，不参与合并")
        snapped.append(WallSegment2D(endpoints, segment.image_id, segment.source_plane_index,
                                     orientation, normal2d))
    return snapped


def _overlap(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return min(a[1], b[1]) - max(a[0], b[0])


def _blocked(position: float, extent_a, extent_b, opposite: Sequence[WallSegment2D], margin: float) -> bool:
    """两段区间之间是否有另一类别的墙面穿过"""
    if _overlap(extent_a, extent_b) >= 0:
        return False
    gap_lo, gap_hi = min(extent_a[1], extent_b[1]), max(extent_a[0], extent_b[0])
    for other in opposite:
        lo, hi = other.extent
        if gap_lo - margin <= other.perp <= gap_hi + margin and lo - margin <= position <= hi + margin:
            return True
    return False


def _joinable(segment: WallSegment2D, members: Sequence[WallSegment2D], coordinate: float,
              extent, opposite, params: MergeParams) -> bool:
    if any(m.image_id == segment.image_id for m in members):
        return False
    if abs(segment.perp - coordinate) >= params.proximity_threshold:
        return False
    span = min(segment.length, extent[1] - extent[0])
    if span > 0 and _overlap(segment.extent, extent) / span > params.overlap_threshold:
        return True
    return not _blocked(0.5 * (segment.perp + coordinate), segment.extent, extent, opposite, params.margin)


def _sort_key(segment: WallSegment2D):
    return (segment.perp, segment.image_id, segment.source_plane_index)


def _greedy_merge(segments: Sequence[WallSegment2D], opposite: Sequence[WallSegment2D],
                  orientation: Orientation, params: MergeParams) -> List[List[WallSegment2D]]:
    groups: List[WallCluster] = []
    for segment in sorted(segments, key=_sort_key):
        found = False
        for group in groups:
            if _joinable(segment, group.members, group.coordinate, group.extent, opposite, params):
                group.members.append(segment)
                found = True
                break
        if not found:
            groups.append(WallCluster(-1, orientation, [segment]))
    return [g.members for g in groups]


def _number(vertical_groups, horizontal_groups) -> List[WallCluster]:
    clusters = []
    for orientation, groups in ((Orientation.VERTICAL, vertical_groups), (Orientation.HORIZONTAL, horizontal_groups)):
        for members in groups:
            clusters.append(WallCluster(len(clusters), orientation, list(members)))
    return clusters


def merge_planes(vertical: Sequence[WallSegment2D], horizontal: Sequence[WallSegment2D],
                 params: MergeParams = MergeParams()) -> List[WallCluster]:
    """贪心合并同一面墙的线段

    竖直线段按x排序、水平线段按z排序，依次加入第一个满足条件的聚类：
    聚类中没有同一图像的线段；垂直距离小于 proximity_threshold；
    沿轴向重叠比例超过 overlap_threshold，或两者之间没有另一类别的墙面。
    聚类编号先竖直后水平，结果确定。
    """
    vertical_groups = _greedy_merge(vertical, horizontal, Orientation.VERTICAL, params)
    horizontal_groups = _greedy_merge(horizontal, vertical, Orientation.HORIZONTAL, params)
    clusters = _number(vertical_groups, horizontal_groups)
    logger.info(f"线段合并: 竖直 {len(vertical)} → {len(vertical_groups)}，水平 {len(horizontal)} → {len(horizontal_groups)}")
    return clusters


def _partition_cost(blocks: Sequence[Sequence[WallSegment2D]]) -> float:
    total = 0.0
    for block in blocks:
        for a, b in itertools.combinations(block, 2):
            total += float(np.linalg.norm(a.midpoint - b.midpoint))
    return total


def _block_feasible(block: Sequence[WallSegment2D], opposite, params: MergeParams) -> bool:
    if len({m.image_id for m in block}) != len(block):
        return False
    weight = sum(m.length for m in block)
    center = sum(m.length * m.perp for m in block) / weight
    if any(abs(m.perp - center) >= params.proximity_threshold for m in block):
        return False
    for a, b in itertools.combinations(block, 2):
        span = min(a.length, b.length)
        if _overlap(a.extent, b.extent) / span > params.overlap_threshold:
            continue
        if _blocked(0.5 * (a.perp + b.perp), a.extent, b.extent, opposite, params.margin):
            return False
    return True


def _exhaustive_axis(segments: List[WallSegment2D], opposite, params: MergeParams):
    ordered = sorted(segments, key=_sort_key)
    best = {"blocks": None, "score": None}

    def search(index: int, blocks: List[List[WallSegment2D]]):
        if best["score"] is not None and len(blocks) > best["score"][0]:
            return
        if index == len(ordered):
            score = (len(blocks), _partition_cost(blocks))
            if best["score"] is None or score < best["score"]:
                best["blocks"] = [list(b) for b in blocks]
                best["score"] = score
            return
        segment = ordered[index]
        for block in blocks:
            block.append(segment)
            if _block_feasible(block, opposite, params):
                search(index + 1, blocks)
            block.pop()
        blocks.append([segment])
        search(index + 1, blocks)
        blocks.pop()

    search(0, [])
    blocks = best["blocks"] or []
    return sorted(blocks, key=lambda b: min(_sort_key(m) for m in b))


def merge_planes_exhaustive(vertical: Sequence[WallSegment2D], horizontal: Sequence[WallSegment2D],
                            params: MergeParams = MergeParams()) -> List[WallCluster]:
    """穷举集合划分的合并结果（聚类数最少，其次组内中心距离之和最小），用于校验贪心算法

    Raises:
        InputFormatError: 线段总数超过12
    """
    if len(vertical) + len(horizontal) > MAX_EXHAUSTIVE_SEGMENTS:
        raise InputFormatError(f"穷举合并最多支持 {MAX_EXHAUSTIVE_SEGMENTS} 条线段")
    return _number(_exhaustive_axis(list(vertical), horizontal, params),
                   _exhaustive_axis(list(horizontal), vertical, params))


def _cluster_line(cluster: WallCluster) -> Tuple[np.ndarray, np.ndarray]:
    """聚类在吸附坐标系下的 (单位法向, 线上一点)"""
    c = cluster.coordinate
    sign = sum(m.length * (m.normal2d[0] if cluster.orientation == Orientation.VERTICAL else m.normal2d[1])
               for m in cluster.members)
    sign = 1.0 if sign >= 0 else -1.0
    if cluster.orientation == Orientation.VERTICAL:
        return np.array([sign, 0.0]), np.array([c, 0.0])
    return np.array([0.0, sign]), np.array([0.0, c])


def _wall_plane(cluster: WallCluster, frame: MergeFrame) -> Plane:
    normal2d, point2d = _cluster_line(cluster)
    normal = frame.lift(frame.unrotate(normal2d))
    normal = normal / np.linalg.norm(normal)
    point = frame.lift(frame.unrotate(point2d))
    return Plane(normal, -float(normal @ point), SemanticClass.WALL)


def _corner(a: WallCluster, b: WallCluster) -> np.ndarray:
    vertical = a if a.orientation == Orientation.VERTICAL else b
    horizontal = b if vertical is a else a
    return np.array([vertical.coordinate, horizontal.coordinate])


def _edge_penalty(cluster: WallCluster, start: float, end: float) -> float:
    lo, hi = min(start, end), max(start, end)
    if hi - lo <= 1e-9:
        return np.inf
    extent = cluster.extent
    return max(0.0, lo - extent[0]) + max(0.0, extent[1] - hi)


def _footprint_cycle(clusters: Sequence[WallCluster]) -> Optional[List[int]]:
    """寻找交替经过竖直/水平墙面的闭合轮廓，使观测区间落在边之外的长度最小"""
    vertical = [c for c in clusters if c.orientation == Orientation.VERTICAL]
    horizontal = [c for c in clusters if c.orientation == Orientation.HORIZONTAL]
    if len(vertical) != len(horizontal) or len(vertical) < 2 or len(vertical) > MAX_CYCLE_WALLS_PER_AXIS:
        return None

    best = {"order": None, "penalty": np.inf}

    def penalty_of(order: List[WallCluster], closing: bool) -> float:
        # order 交替 V, H, V, H ...；第k面墙的两端由前后两面墙决定
        total = 0.0
        count = len(order)
        stop = count if closing else count - 1
        for k in range(1, stop):
            previous, current, following = order[k - 1], order[k], order[(k + 1) % count]
            axis_value = [previous.coordinate, following.coordinate]
            total += _edge_penalty(current, *axis_value)
        if closing:
            total += _edge_penalty(order[0], order[-1].coordinate, order[1].coordinate)
        return total

    def search(order: List[WallCluster], used_v: set, used_h: set):
        partial = penalty_of(order, False) if len(order) >= 3 else 0.0
        if partial >= best["penalty"]:
            return
        if len(order) == len(clusters):
            total = penalty_of(order, True)
            if total >= best["penalty"]:
                return
            corners = [_corner(order[k - 1], order[k]) for k in range(len(order))]
            polygon = Polygon(corners)
            if polygon.is_valid and polygon.area > 0:
                best["order"], best["penalty"] = [c.cluster_id for c in order], total
            return
        pool, used = (horizontal, used_h) if order[-1].orientation == Orientation.VERTICAL else (vertical, used_v)
        for candidate in pool:
            if candidate.cluster_id in used:
                continue
            used.add(candidate.cluster_id)
            order.append(candidate)
            search(order, used_v, used_h)
            order.pop()
            used.discard(candidate.cluster_id)

    start = vertical[0]
    search([start], {start.cluster_id}, set())
    return best["order"]


def _local_completion(clusters: Sequence[WallCluster], margin: float) -> List[Tuple[int, int]]:
    pairs = []
    for a, b in itertools.combinations(clusters, 2):
        if a.orientation == b.orientation:
            continue
        vertical = a if a.orientation == Orientation.VERTICAL else b
        horizontal = b if vertical is a else a
        near_v = min(abs(horizontal.coordinate - e) for e in vertical.extent) <= margin
        near_h = min(abs(vertical.coordinate - e) for e in horizontal.extent) <= margin
        if near_v and near_h:
            pairs.append((a.cluster_id, b.cluster_id))
    return pairs


def assemble_layout(clusters: Sequence[WallCluster], floor: Plane, ceiling: Plane,
                    partials: Sequence[PartialLayout], poses: Mapping[int, PoseLike],
                    theta: float = 0.0, params: MergeParams = MergeParams()) -> Layout:
    """由聚类结果组装最终布局

    墙面法向为吸附方向（符号取成员多数），偏移为成员坐标的长度加权平均；
    墙面邻接 = 各视角邻接关系经聚类映射后的并集 + 轮廓补全；每面墙与地面、天花板邻接。
    """
    frame = MergeFrame.from_up(floor.normal, theta)
    cameras = {pid: _similarity(poses, pid)[0] for pid in sorted({p.image_id for p in partials})}
    planes = [floor.with_class(SemanticClass.FLOOR), ceiling.with_class(SemanticClass.CEILING)]
    provenance: List[List[Tuple[int, int]]] = [[], []]
    membership: Dict[Tuple[int, int], int] = {}
    for partial in partials:
        for semantic_class, target in ((SemanticClass.FLOOR, FLOOR_ID), (SemanticClass.CEILING, CEILING_ID)):
            index = partial.index_of(semantic_class)
            if index is not None:
                membership[(partial.image_id, index)] = target
                provenance[target].append((partial.image_id, index))

    clusters = sorted(clusters, key=lambda c: c.cluster_id)
    if not clusters:
        logger.warning("没有可用的墙面聚类，布局只包含地面和天花板")
        adjacency = np.zeros((2, 2), dtype=bool)
        return Layout(planes, [], [], adjacency, provenance, None, {}, cameras, frame.up)

    plane_of_cluster: Dict[int, int] = {}
    wall_segments: Dict[int, np.ndarray] = {}
    for cluster in clusters:
        plane_id = len(planes)
        plane_of_cluster[cluster.cluster_id] = plane_id
        planes.append(_wall_plane(cluster, frame))
        provenance.append(cluster.keys)
        for key in cluster.keys:
            membership[key] = plane_id
        lo, hi = cluster.extent
        if cluster.orientation == Orientation.VERTICAL:
            ends = np.array([[cluster.coordinate, lo], [cluster.coordinate, hi]])
        else:
            ends = np.array([[lo, cluster.coordinate], [hi, cluster.coordinate]])
        wall_segments[plane_id] = frame.unrotate(ends)

    size = len(planes)
    adjacency = np.zeros((size, size), dtype=bool)
    orientation_of = {plane_of_cluster[c.cluster_id]: c.orientation for c in clusters}
    for partial in partials:
        for a, b in zip(*np.nonzero(np.triu(partial.adjacency, 1))):
            pa = membership.get((partial.image_id, int(a)))
            pb = membership.get((partial.image_id, int(b)))
            if pa is None or pb is None or pa == pb:
                continue
            if pa in orientation_of and pb in orientation_of and orientation_of[pa] == orientation_of[pb]:
                continue
            if {pa, pb} == {FLOOR_ID, CEILING_ID}:
                continue
            adjacency[pa, pb] = adjacency[pb, pa] = True

    footprint = None
    cycle = _footprint_cycle(clusters)
    if cycle is not None:
        by_id = {c.cluster_id: c for c in clusters}
        ordered = [by_id[i] for i in cycle]
        for k in range(len(ordered)):
            a, b = plane_of_cluster[ordered[k - 1].cluster_id], plane_of_cluster[ordered[k].cluster_id]
            adjacency[a, b] = adjacency[b, a] = True
        corners = np.array([_corner(ordered[k - 1], ordered[k]) for k in range(len(ordered))])
        vertices = frame.unrotate(corners)
        wall_ids = [plane_of_cluster[c.cluster_id] for c in ordered]
        if not Polygon(vertices).exterior.is_ccw:
            # 反向后第k条边对应原来的第 −k−1 条边
            vertices = vertices[::-1].copy()
            vertices = np.roll(vertices, 1, axis=0)
            wall_ids = wall_ids[::-1]
        footprint = RoomFootprint(vertices, wall_ids, FLOOR_ID, CEILING_ID, frame.up)
    else:
        logger.warning(f"{len(clusters)} 面墙无法组成闭合轮廓，邻接关系使用局部补全")
        for a, b in _local_completion(clusters, params.margin):
            pa, pb = plane_of_cluster[a], plane_of_cluster[b]
            adjacency[pa, pb] = adjacency[pb, pa] = True

    for wall in plane_of_cluster.values():
        for fixed in (FLOOR_ID, CEILING_ID):
            adjacency[wall, fixed] = adjacency[fixed, wall] = True

    lines, junctions = layout_primitives(planes, adjacency)
    logger.info(f"布局组装完成: {size} 个平面, {len(lines)} 条交线, {len(junctions)} 个交点")
    return Layout(planes, lines, junctions, adjacency, provenance, footprint, wall_segments, cameras, frame.up)


def merge_partial_layouts(partials: Sequence[PartialLayout], poses: Mapping[int, PoseLike],
                          params: MergeParams = MergeParams()) -> MergeResult:
    """完整的多视角合并流程"""
    partials = sorted(partials, key=lambda p: p.image_id)
    floor, ceiling = average_floor_ceiling(partials, poses)
    segments = project_walls(partials, poses, floor)
    theta = estimate_scene_rotation(segments)
    snapped = snap_axis(segments, theta, params)
    vertical = [s for s in snapped if s.orientation == Orientation.VERTICAL]
    horizontal = [s for s in snapped if s.orientation == Orientation.HORIZONTAL]
    clusters = merge_planes(vertical, horizontal, params)
    layout = assemble_layout(clusters, floor, ceiling, partials, poses, theta, params)
    layout.unmerged = sorted(s.key for s in snapped if s.orientation == Orientation.UNCLASSIFIED)
    return MergeResult(layout, snapped, clusters, MergeFrame.from_up(floor.normal, theta))
