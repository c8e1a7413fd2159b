#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
几何核心模块 - 平面、位姿、点图等基础类型以及精确的几何原语

坐标约定：
- 相机坐标系：x向右，y向下，z向前；深度D即相机系z坐标
- 平面：nᵀx + d = 0，‖n‖ = 1
- 位姿PoseSE3为相机到世界的变换 x_w = R·x_c + t
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import shapely
from shapely.geometry import Polygon

try:
    from .errors import (DegenerateConfigurationError, DegenerateInputError,
                         InputFormatError, ParallelPlanesError)
    from .utils import setup_logger
except ImportError:
    from errors import (DegenerateConfigurationError, DegenerateInputError,
                        InputFormatError, ParallelPlanesError)
    from utils import setup_logger

logger = setup_logger(__name__)

# 默认容差
UNIT_TOLERANCE = 1e-9
EPS_PARALLEL = 1e-6
JUNCTION_DET_MIN = 1e-9
RANK_TOLERANCE = 1e-10
FACE_TOLERANCE = 1e-6


class SemanticClass(str, Enum):
    """结构平面的语义类别"""
    FLOOR = "floor"
    CEILING = "ceiling"
    WALL = "wall"


def _as_vector(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise InputFormatError(f"{name} 必须是三维向量，实际形状为 {np.shape(value)}")
    if not np.all(np.isfinite(arr)):
        raise InputFormatError(f"{name} 包含非有限值")
    return arr


@dataclass(frozen=True)
class Plane:
    """结构平面 nᵀx + d = 0

    Attributes:
        normal: 单位法向量
        offset: 偏移量d（米）
        semantic_class: 语义类别
    """
    normal: np.ndarray
    offset: float
    semantic_class: SemanticClass = SemanticClass.WALL

    def __post_init__(self):
        normal = _as_vector(self.normal, "normal")
        if abs(np.linalg.norm(normal) - 1.0) > UNIT_TOLERANCE:
            raise InputFormatError(f"平面法向量不是单位向量: ‖n‖={np.linalg.norm(normal)}")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "semantic_class", SemanticClass(self.semantic_class))

    def signed_distance(self, points) -> np.ndarray:
        """点到平面的有符号距离"""
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset

    def flipped(self) -> "Plane":
        return Plane(-self.normal, -self.offset, self.semantic_class)

    def with_class(self, semantic_class: SemanticClass) -> "Plane":
        return Plane(self.normal, self.offset, semantic_class)


@dataclass(frozen=True)
class PoseSE3:
    """相机到世界的刚体变换"""
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
            raise InputFormatError("旋转矩阵必须是有限的3×3矩阵")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > UNIT_TOLERANCE:
            raise InputFormatError("旋转矩阵不正交")
        if abs(np.linalg.det(rotation) - 1.0) > UNIT_TOLERANCE:
            raise InputFormatError("旋转矩阵行列式不为+1")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", _as_vector(self.translation, "translation"))

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "PoseSE3":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def inverse(self) -> "PoseSE3":
        rt = self.rotation.T
        return PoseSE3(rt, -rt @ self.translation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other：先应用other，再应用self"""
        return PoseSE3(self.rotation @ other.rotation,
                       self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return self.compose(other)

    def apply(self, points) -> np.ndarray:
        """变换形状为(..., 3)的点集"""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    @property
    def center(self) -> np.ndarray:
        return self.translation


@dataclass(frozen=True)
class Intrinsics:
    """针孔相机内参"""
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputFormatError(f"焦距必须为正: fx={self.fx}, fy={self.fy}")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "Intrinsics":
        """按水平视场角构造内参，主点位于图像中心"""
        focal = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(float(focal), float(focal), width / 2.0, height / 2.0)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass
class Pointmap:
    """逐像素3D点图

    Attributes:
        points: H×W×3 点坐标（米）
        valid: H×W 有效像素掩码；无效像素处的点不得被读取
    """
    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise InputFormatError(f"点图形状必须为H×W×3，实际为 {self.points.shape}")
        if self.valid.shape != self.points.shape[:2]:
            raise InputFormatError(
                f"有效掩码尺寸 {self.valid.shape} 与点图尺寸 {self.points.shape[:2]} 不一致")

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]

    def transformed(self, pose: PoseSE3, scale: float = 1.0) -> "Pointmap":
        """返回 scale·R·x + t 变换后的点图，无效像素置零"""
        points = np.zeros_like(self.points)
        points[self.valid] = scale * (self.points[self.valid] @ pose.rotation.T) + pose.translation
        return Pointmap(points, self.valid.copy())


@dataclass(frozen=True)
class Line3D:
    """3D直线：point + s·direction"""
    point: np.ndarray
    direction: np.ndarray
    planes: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        direction = _as_vector(self.direction, "direction")
        if abs(np.linalg.norm(direction) - 1.0) > UNIT_TOLERANCE:
            raise InputFormatError("直线方向不是单位向量")
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "point", _as_vector(self.point, "point"))

    def distance(self, points) -> np.ndarray:
        """点到直线的距离"""
        diff = np.asarray(points, dtype=np.float64) - self.point
        along = diff @ self.direction
        return np.linalg.norm(diff - along[..., None] * self.direction, axis=-1)


@dataclass(frozen=True)
class Junction3D:
    """三个平面的交点"""
    position: np.ndarray
    planes: Optional[Tuple[int, int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vector(self.position, "position"))


def pixel_rays(height: int, width: int, K: Intrinsics) -> np.ndarray:
    """每个像素的相机系射线方向（z分量为1），形状H×W×3"""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    rays = np.empty((height, width, 3))
    rays[..., 0] = (u - K.cx) / K.fx
    rays[..., 1] = (v - K.cy) / K.fy
    rays[..., 2] = 1.0
    return rays


def backproject(depth, K: Intrinsics) -> Pointmap:
    """将深度图反投影为相机坐标系点图

    Args:
        depth: H×W 深度图（米），0表示无效像素
        K: 相机内参

    Returns:
        Pointmap: 点 ((u−cx)·D/fx, (v−cy)·D/fy, D)

    Raises:
        InputFormatError: 深度图包含非有限值或负值
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise InputFormatError(f"深度图必须是二维数组，实际维度为 {depth.ndim}")
    if not np.all(np.isfinite(depth)):
        bad = np.argwhere(~np.isfinite(depth))[0]
        raise InputFormatError(f"深度图在像素 (v={bad[0]}, u={bad[1]}) 处包含非有限值")
    if np.any(depth < 0):
        raise InputFormatError("深度图包含负值")

    valid = depth > 0
    points = pixel_rays(depth.shape[0], depth.shape[1], K) * depth[..., None]
    points[~valid] = 0.0
    return Pointmap(points, valid)


def project(points, K: Intrinsics) -> np.ndarray:
    """透视投影，返回(..., 2)像素坐标 (u, v)"""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    u = K.fx * points[..., 0] / z + K.cx
    v = K.fy * points[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def _orient_normal(normal: np.ndarray, offset: float, camera_frame: bool) -> Tuple[np.ndarray, float]:
    # 相机系：原点一侧为正；否则首个非零分量为正
    if camera_frame and abs(offset) > 1e-12:
        if offset < 0:
            return -normal, -offset
        return normal, offset
    for component in normal:
        if abs(component) > 1e-12:
            if component < 0:
                return -normal, -offset
            break
    return normal, offset


def fit_plane(points, weights=None, camera_frame: bool = False,
              semantic_class: SemanticClass = SemanticClass.WALL) -> Tuple[Plane, float]:
    """加权总体最小二乘平面拟合

    Args:
        points: N×3 点集
        weights: 可选的N维非负权重
        camera_frame: 点是否来自相机坐标系（决定法向符号约定）
        semantic_class: 结果平面的语义类别

    Returns:
        (Plane, float): 拟合平面与加权残差RMS

    Raises:
        DegenerateInputError: 少于3个点或点共线，附带实际秩
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n_points = points.shape[0]
    if weights is None:
        weights = np.ones(n_points)
    else:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != n_points:
            raise InputFormatError(f"权重数量 {weights.shape[0]} 与点数 {n_points} 不一致")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InputFormatError("权重必须为非负有限值")

    if n_points == 0:
        raise DegenerateInputError("平面拟合没有输入点", rank=0)
    total = weights.sum()
    if total <= 0:
        raise DegenerateInputError("平面拟合的权重之和为0", rank=0)

    centroid = weights @ points / total
    centered = points - centroid
    covariance = (centered * weights[:, None]).T @ centered / total
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)

    largest = eigenvalues[-1]
    rank = 0 if largest <= 0 else int(np.sum(eigenvalues > RANK_TOLERANCE * largest))
    if n_points < 3 or rank < 2:
        raise DegenerateInputError(f"平面拟合需要至少3个不共线的点，当前 {n_points} 个点", rank=rank)

    normal = eigenvectors[:, 0]
    normal = normal / np.linalg.norm(normal)
    offset = -float(normal @ centroid)
    normal, offset = _orient_normal(normal, offset, camera_frame)

    residuals = centered @ normal
    rms = float(np.sqrt(weights @ residuals ** 2 / total))
    return Plane(normal, offset, semantic_class), rms


def plane_intersection(p1: Plane, p2: Plane, eps_parallel: float = EPS_PARALLEL) -> Line3D:
    """两平面交线

    Raises:
        ParallelPlanesError: |n1·n2| ≥ 1 − eps_parallel
    """
    if abs(float(p1.normal @ p2.normal)) >= 1.0 - eps_parallel:
        raise ParallelPlanesError("平面近似平行，交线不存在")
    direction = np.cross(p1.normal, p2.normal)
    direction = direction / np.linalg.norm(direction)
    system = np.stack([p1.normal, p2.normal, direction])
    point = np.linalg.solve(system, np.array([-p1.offset, -p2.offset, 0.0]))
    return Line3D(point, direction)


def junction(p1: Plane, p2: Plane, p3: Plane) -> Junction3D:
    """三平面交点，求解 nᵢᵀx = −dᵢ"""
    normals = np.stack([p1.normal, p2.normal, p3.normal])
    if abs(np.linalg.det(normals)) <= JUNCTION_DET_MIN:
        raise DegenerateConfigurationError("三平面法向矩阵奇异，交点不存在")
    position = np.linalg.solve(normals, -np.array([p1.offset, p2.offset, p3.offset]))
    return Junction3D(position)


def transform_plane(p: Plane, T: PoseSE3, scale: float = 1.0) -> Plane:
    """将平面随点一起变换 x → scale·R·x + t

    scale=1 时即刚体变换：n' = R·n，d' = d − n'ᵀt
    """
    normal = T.rotation @ p.normal
    normal = normal / np.linalg.norm(normal)
    offset = scale * p.offset - float(normal @ T.translation)
    return Plane(normal, offset, p.semantic_class)


def up_basis(up) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """水平面内的确定性正交基

    Returns:
        (up, e1, e2): 归一化的up向量及水平基，二维坐标为 (x·e1, x·e2)
    """
    up = np.asarray(up, dtype=np.float64)
    up = up / np.linalg.norm(up)
    reference = np.array([1.0, 0.0, 0.0])
    if abs(up @ reference) > 0.9:
        reference = np.array([0.0, 0.0, 1.0])
    e1 = reference - (reference @ up) * up
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(e1, up)
    return up, e1, e2


@dataclass
class RoomFootprint:
    """房间平面轮廓（直角多边形）及其与平面编号的对应

    第k条边从 vertices[k] 指向 vertices[k+1]，对应平面 wall_ids[k]。
    二维坐标在 up_basis(up) 给出的水平基下表示。
    """
    vertices: np.ndarray
    wall_ids: Sequence[int]
    floor_id: int
    ceiling_id: int
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        self.wall_ids = [int(i) for i in self.wall_ids]
        self.up = np.asarray(self.up, dtype=np.float64)
        if len(self.wall_ids) != self.vertices.shape[0]:
            raise InputFormatError("轮廓顶点数与墙面数量不一致")

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.vertices)

    def to_2d(self, points) -> np.ndarray:
        _, e1, e2 = up_basis(self.up)
        points = np.asarray(points, dtype=np.float64)
        return np.stack([points @ e1, points @ e2], axis=-1)

    def edges(self):
        """迭代 (墙面编号, 起点, 终点)"""
        count = self.vertices.shape[0]
        for k in range(count):
            yield self.wall_ids[k], self.vertices[k], self.vertices[(k + 1) % count]


def point_in_room(planes: Sequence[Plane], footprint: RoomFootprint, point,
                  tol: float = FACE_TOLERANCE) -> bool:
    """判断点是否严格位于房间体内"""
    point = np.asarray(point, dtype=np.float64)
    if planes[footprint.floor_id].signed_distance(point) <= tol:
        return False
    if planes[footprint.ceiling_id].signed_distance(point) <= tol:
        return False
    xy = footprint.to_2d(point)
    return bool(shapely.contains_xy(footprint.polygon, xy[0], xy[1]))


def cast_room_rays(planes: Sequence[Plane], footprint: RoomFootprint, pose: PoseSE3,
                   K: Intrinsics, height: int, width: int,
                   tol: float = FACE_TOLERANCE) -> Tuple[np.ndarray, np.ndarray]:
    """对房间多面体逐像素求最近的结构面交点

    Args:
        planes: 平面列表（世界坐标系，法向指向房间内部）
        footprint: 房间轮廓，给出每个平面的有效面片
        pose: 相机到世界的位姿
        K: 内参
        height, width: 图像尺寸

    Returns:
        (depth, ids): 深度图（无交点处为0）与平面编号图（无交点处为−1）
    """
    rays = pixel_rays(height, width, K).reshape(-1, 3)
    directions = rays @ pose.rotation.T
    origin = pose.translation
    _, e1, e2 = up_basis(footprint.up)
    floor = planes[footprint.floor_id]
    ceiling = planes[footprint.ceiling_id]
    region = footprint.polygon.buffer(tol)

    candidates = [(footprint.floor_id, None, None), (footprint.ceiling_id, None, None)]
    candidates += list(footprint.edges())

    hits = np.full((len(candidates), rays.shape[0]), np.inf)
    for row, (plane_id, start, end) in enumerate(candidates):
        plane = planes[plane_id]
        denom = directions @ plane.normal
        numer = -(plane.normal @ origin + plane.offset)
        with np.errstate(divide='ignore', invalid='ignore'):
            t = np.where(np.abs(denom) > 1e-12, numer / denom, np.inf)
        forward = np.isfinite(t) & (t > 1e-9)
        if not np.any(forward):
            continue
        idx = np.nonzero(forward)[0]
        points = origin + t[idx, None] * directions[idx]
        x2 = points @ e1
        y2 = points @ e2
        if start is None:
            on_face = shapely.contains_xy(region, x2, y2)
        else:
            edge = end - start
            length = np.linalg.norm(edge)
            along = ((x2 - start[0]) * edge[0] + (y2 - start[1]) * edge[1]) / length
            on_face = ((along >= -tol) & (along <= length + tol)
                       & (floor.signed_distance(points) >= -tol)
                       & (ceiling.signed_distance(points) >= -tol))
        hits[row, idx[on_face]] = t[idx[on_face]]

    nearest = np.argmin(hits, axis=0)
    best = hits[nearest, np.arange(rays.shape[0])]
    found = np.isfinite(best)
    plane_ids = np.array([c[0] for c in candidates])
    ids = np.where(found, plane_ids[nearest], -1).astype(np.int32)
    depth = np.where(found, best, 0.0)
    return depth.reshape(height, width), ids.reshape(height, width)
