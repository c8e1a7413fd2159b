#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
单视角布局提取模块 - 从点图与平面掩码得到相机坐标系下的局部布局

流程：
1. 按掩码拟合平面并根据重力方向分配语义类别
2. 依据交线处的深度一致性推断墙面邻接关系
3. 由邻接平面对计算交线，由两两邻接的平面三元组计算交点
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

try:
    from .errors import DegenerateConfigurationError, DegenerateInputError, InputFormatError, ParallelPlanesError
    from .geom_core import (Junction3D, Line3D, Plane, Pointmap, SemanticClass, fit_plane,
                            junction, plane_intersection)
    from .scene_synth import ViewBundle
    from .utils import setup_logger
except ImportError:
    from errors import DegenerateConfigurationError, DegenerateInputError, InputFormatError, ParallelPlanesError
    from geom_core import (Junction3D, Line3D, Plane, Pointmap, SemanticClass, fit_plane,
                           junction, plane_intersection)
    from scene_synth import ViewBundle
    from utils import setup_logger

logger = setup_logger(__name__)

DEFAULT_EPSILON1 = 0.005
DEFAULT_MIN_PIXELS = 50
CAMERA_UP = (0.0, -1.0, 0.0)
HORIZONTAL_ANGLE_DEG = 30.0

_NEIGHBOR_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


@dataclass(frozen=True)
class G1Params:
    """单视角布局参数

    Attributes:
        epsilon1: 深度一致性容差（相对于场景平均深度）
        min_pixels: 可用掩码的最少有效像素数
        gravity_up: 相机坐标系中的向上方向
        horizontal_angle_deg: 法向与up夹角小于该值时判为地面/天花板
    """
    epsilon1: float = DEFAULT_EPSILON1
    min_pixels: int = DEFAULT_MIN_PIXELS
    gravity_up: Tuple[float, float, float] = CAMERA_UP
    horizontal_angle_deg: float = HORIZONTAL_ANGLE_DEG

    def __post_init__(self):
        if not self.epsilon1 > 0:
            raise InputFormatError("epsilon1 必须为正数")
        if self.min_pixels < 3:
            raise InputFormatError("min_pixels 至少为3")


@dataclass
class LiftedPlane:
    """由一个掩码拟合得到的平面"""
    plane: Plane
    mask_id: int
    pixel_count: int
    residual_rms: float
    points: np.ndarray

    @property
    def semantic_class(self) -> SemanticClass:
        return self.plane.semantic_class


@dataclass
class SkippedMask:
    """被跳过的掩码记录"""
    mask_id: int
    pixel_count: int
    reason: str


@dataclass
class LiftResult:
    planes: List[LiftedPlane]
    skipped: List[SkippedMask] = field(default_factory=list)


@dataclass
class PartialLayout:
    """单视角局部布局（相机坐标系）"""
    image_id: int
    planes: List[LiftedPlane]
    lines: List[Line3D]
    junctions: List[Junction3D]
    adjacency: np.ndarray
    skipped: List[SkippedMask] = field(default_factory=list)

    def index_of(self, semantic_class: SemanticClass) -> Optional[int]:
        for index, lifted in enumerate(self.planes):
            if lifted.semantic_class == semantic_class:
                return index
        return None

    @property
    def wall_indices(self) -> List[int]:
        return [i for i, p in enumerate(self.planes) if p.semantic_class == SemanticClass.WALL]


def _classify(plane: Plane, params: G1Params) -> SemanticClass:
    up = np.asarray(params.gravity_up, dtype=np.float64)
    up = up / np.linalg.norm(up)
    cosine = float(plane.normal @ up)
    if abs(cosine) > np.cos(np.radians(params.horizontal_angle_deg)):
        # 法向指向相机：地面法向朝上，天花板法向朝下
        return SemanticClass.FLOOR if cosine > 0 else SemanticClass.CEILING
    return SemanticClass.WALL


def lift_planes(pm: Pointmap, masks, params: G1Params = G1Params()) -> LiftResult:
    """按掩码拟合平面

    Args:
        pm: 相机坐标系点图
        masks: H×W 平面编号图（−1 表示无）
        params: 参数

    Returns:
        LiftResult: 拟合结果以及被跳过的掩码记录
    """
    masks = np.asarray(masks)
    if masks.shape != pm.valid.shape:
        raise InputFormatError(f"掩码尺寸 {masks.shape} 与点图尺寸 {pm.valid.shape} 不一致")

    lifted, skipped = [], []
    for mask_id in np.unique(masks[masks >= 0]):
        mask_id = int(mask_id)
        selection = (masks == mask_id) & pm.valid
        count = int(selection.sum())
        if count < params.min_pixels:
            logger.warning(f"掩码 {mask_id} 仅有 {count} 个有效像素（少于 {params.min_pixels}），已跳过")
            skipped.append(SkippedMask(mask_id, count, "too_few_pixels"))
            continue
        points = pm.points[selection]
        try:
            plane, rms = fit_plane(points, camera_frame=True)
        except DegenerateInputError as e:
            logger.warning(f"掩码 {mask_id} 平面拟合失败: {e}")
            skipped.append(SkippedMask(mask_id, count, "degenerate"))
            continue
        plane = plane.with_class(_classify(plane, params))
        lifted.append(LiftedPlane(plane, mask_id, count, rms, points))

    # 每张图像至多一个地面和一个天花板，保留像素最多的那个
    for semantic_class in (SemanticClass.FLOOR, SemanticClass.CEILING):
        candidates = [p for p in lifted if p.semantic_class == semantic_class]
        if len(candidates) <= 1:
            continue
        keep = max(candidates, key=lambda p: (p.pixel_count, -p.mask_id))
        for extra in candidates:
            if extra is not keep:
                logger.warning(f"掩码 {extra.mask_id} 与掩码 {keep.mask_id} 同为{semantic_class.value}，已跳过")
                skipped.append(SkippedMask(extra.mask_id, extra.pixel_count, f"duplicate_{semantic_class.value}"))
        lifted = [p for p in lifted if p.semantic_class != semantic_class or p is keep]

    return LiftResult(lifted, skipped)


def _sampling_radius(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """每个像素到同标签8邻域像素的最大3D距离（像素在点图上的覆盖半径）"""
    height, width = labels.shape
    radius = np.zeros((height, width))
    padded_points = np.pad(points, ((1, 1), (1, 1), (0, 0)))
    padded_labels = np.pad(labels, 1, constant_values=-1)
    for dy, dx in _NEIGHBOR_OFFSETS:
        neighbor_points = padded_points[1 + dy:1 + dy + height, 1 + dx:1 + dx + width]
        neighbor_labels = padded_labels[1 + dy:1 + dy + height, 1 + dx:1 + dx + width]
        same = (neighbor_labels == labels) & (labels >= 0)
        distance = np.linalg.norm(neighbor_points - points, axis=-1)
        radius = np.where(same, np.maximum(radius, distance), radius)
    return radius


def infer_adjacency(planes: List[LiftedPlane], masks, pm: Pointmap,
                    params: G1Params = G1Params()) -> np.ndarray:
    """通过深度一致性推断平面邻接关系

    两个平面邻接当且仅当它们的掩码存在8连通的公共边界，
    且边界像素的3D点到两平面交线的距离（扣除像素自身的覆盖半径）
    的中位数除以场景平均深度小于 epsilon1。平行平面从不邻接。
    """
    masks = np.asarray(masks)
    count = len(planes)
    adjacency = np.zeros((count, count), dtype=bool)
    if count < 2:
        return adjacency

    scale = float(np.linalg.norm(pm.valid_points(), axis=-1).mean())
    labels = np.where(pm.valid, masks, -1)
    radius = _sampling_radius(pm.points, labels)
    structure = np.ones((3, 3), dtype=bool)
    regions = [labels == lifted.mask_id for lifted in planes]
    grown = [ndimage.binary_dilation(region, structure=structure) for region in regions]

    for a, b in itertools.combinations(range(count), 2):
        boundary = (regions[a] & grown[b]) | (regions[b] & grown[a])
        if not np.any(boundary):
            continue
        try:
            line = plane_intersection(planes[a].plane, planes[b].plane)
        except ParallelPlanesError:
            continue
        distance = line.distance(pm.points[boundary])
        excess = np.maximum(distance - radius[boundary], 0.0)
        statistic = float(np.median(excess)) / scale
        logger.debug(f"掩码 {planes[a].mask_id}/{planes[b].mask_id}: 深度一致性 {statistic:.6f}")
        if statistic < params.epsilon1:
            adjacency[a, b] = adjacency[b, a] = True
    return adjacency


def layout_primitives(planes: List[Plane], adjacency: np.ndarray) -> Tuple[List[Line3D], List[Junction3D]]:
    """由邻接矩阵计算交线与交点"""
    lines, junctions = [], []
    count = len(planes)
    for i, j in itertools.combinations(range(count), 2):
        if adjacency[i, j]:
            line = plane_intersection(planes[i], planes[j])
            lines.append(replace(line, planes=(i, j)))
    for i, j, k in itertools.combinations(range(count), 3):
        if adjacency[i, j] and adjacency[j, k] and adjacency[i, k]:
            try:
                point = junction(planes[i], planes[j], planes[k])
            except DegenerateConfigurationError:
                logger.debug(f"平面 {i}/{j}/{k} 两两邻接但交点不存在")
                continue
            junctions.append(replace(point, planes=(i, j, k)))
    return lines, junctions


def build_partial_layout(bundle: ViewBundle, params: G1Params = G1Params()) -> PartialLayout:
    """单视角布局：拟合平面 + 邻接推断 + 交线/交点"""
    result = lift_planes(bundle.pointmap_self, bundle.plane_masks, params)
    adjacency = infer_adjacency(result.planes, bundle.plane_masks, bundle.pointmap_self, params)
    lines, junctions = layout_primitives([p.plane for p in result.planes], adjacency)
    logger.debug(f"视角 {bundle.image_id}: {len(result.planes)} 个平面, {len(lines)} 条交线, {len(junctions)} 个交点")
    return PartialLayout(bundle.image_id, result.planes, lines, junctions, adjacency, result.skipped)
