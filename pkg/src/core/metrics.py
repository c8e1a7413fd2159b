#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
评估指标模块

- 二维分割/深度指标：IoU、PE、EE、RMSE（以及布局重投影后的 re-* 版本）
- 相对位姿指标：RRA@τ、RTA@τ、mAA30
- 三维平面精度/召回（角度与偏移阈值下的一对一匹配）
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment
from scipy.spatial.transform import Rotation

try:
    from .errors import FrameMismatchError, MetricError
    from .geom_core import (FACE_TOLERANCE, Intrinsics, Plane, PoseSE3, SemanticClass,
                            cast_room_rays, pixel_rays, point_in_room)
    from .multi_view_merge import Layout
    from .scene_synth import Scene, render_structural_depth
    from .single_view_layout import layout_primitives
    from .utils import setup_logger
except ImportError:
    from errors import FrameMismatchError, MetricError
    from geom_core import (FACE_TOLERANCE, Intrinsics, Plane, PoseSE3, SemanticClass,
                           cast_room_rays, pixel_rays, point_in_room)
    from multi_view_merge import Layout
    from scene_synth import Scene, render_structural_depth
    from single_view_layout import layout_primitives
    from utils import setup_logger

logger = setup_logger(__name__)

POSE_THRESHOLDS = (5.0, 10.0, 15.0, 30.0)
THRESHOLD_LADDER = ((5.0, 0.1), (10.0, 0.15), (15.0, 0.2), (30.0, 0.4))
MAA_LIMIT_DEG = 30.0
MIN_BASELINE = 1e-9


@dataclass(frozen=True)
class MatchThresholds:
    """三维平面匹配阈值"""
    angle_deg: float = 10.0
    offset_m: float = 0.15

    def __post_init__(self):
        if not (self.angle_deg > 0 and self.offset_m > 0):
            raise MetricError("匹配阈值必须为正数")


@dataclass(frozen=True)
class PoseErrorPair:
    """一个有序图像对的相对位姿误差（度）；基线过短时平移误差为None"""
    i: int
    j: int
    rotation_error: float
    translation_angle_error: Optional[float]

    @property
    def max_error(self) -> float:
        if self.translation_angle_error is None:
            return self.rotation_error
        return max(self.rotation_error, self.translation_angle_error)


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    matched: int
    undefined: bool = False

    def to_dict(self) -> Dict:
        return {"precision": self.precision, "recall": self.recall,
                "matched": self.matched, "undefined": self.undefined}


# ---------------------------------------------------------------------------
# 二维分割与深度
# ---------------------------------------------------------------------------

def _edge_map(seg: np.ndarray) -> np.ndarray:
    """4邻域内存在不同标签的像素"""
    edges = np.zeros(seg.shape, dtype=bool)
    vertical = seg[1:, :] != seg[:-1, :]
    horizontal = seg[:, 1:] != seg[:, :-1]
    edges[1:, :] |= vertical
    edges[:-1, :] |= vertical
    edges[:, 1:] |= horizontal
    edges[:, :-1] |= horizontal
    return edges


def _directed_edge_error(source: np.ndarray, target: np.ndarray) -> float:
    diagonal = float(np.hypot(*source.shape))
    if not source.any():
        return 0.0
    if not target.any():
        return diagonal
    distance = ndimage.distance_transform_edt(~target)
    return float(distance[source].mean())


def match_segments(pred_seg, gt_seg) -> Dict[int, int]:
    """按像素重叠数做最大权一对一匹配，返回 {预测标签: 真值标签}（不含零重叠的配对）"""
    pred_labels = np.unique(pred_seg[pred_seg >= 0])
    gt_labels = np.unique(gt_seg[gt_seg >= 0])
    overlap = np.zeros((pred_labels.size, gt_labels.size))
    for a, p in enumerate(pred_labels):
        in_pred = pred_seg == p
        for b, g in enumerate(gt_labels):
            overlap[a, b] = np.count_nonzero(in_pred & (gt_seg == g))
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    return {int(pred_labels[r]): int(gt_labels[c]) for r, c in zip(rows, cols) if overlap[r, c] > 0}


def seg_depth_metrics(pred_seg, gt_seg, pred_depth, gt_depth) -> Dict[str, float]:
    """分割与深度指标

    Returns:
        dict: iou（%，匹配对的平均交并比）、pe（%，标签不一致的像素比例）、
              ee（像素，双向边缘距离的平均）、rmse（米，两者深度均有效的像素）

    Raises:
        MetricError: 尺寸不一致或分割为空
    """
    pred_seg, gt_seg = np.asarray(pred_seg), np.asarray(gt_seg)
    pred_depth, gt_depth = np.asarray(pred_depth, dtype=np.float64), np.asarray(gt_depth, dtype=np.float64)
    if not (pred_seg.shape == gt_seg.shape == pred_depth.shape == gt_depth.shape):
        raise MetricError(f"输入尺寸不一致: {pred_seg.shape}, {gt_seg.shape}, {pred_depth.shape}, {gt_depth.shape}")
    if not np.any(pred_seg >= 0) or not np.any(gt_seg >= 0):
        raise MetricError("分割图为空，无法计算指标")

    matching = match_segments(pred_seg, gt_seg)
    ious = []
    for p, g in sorted(matching.items()):
        in_pred, in_gt = pred_seg == p, gt_seg == g
        ious.append(np.count_nonzero(in_pred & in_gt) / np.count_nonzero(in_pred | in_gt))
    iou = 100.0 * float(np.mean(ious)) if ious else 0.0

    mapped = np.full(pred_seg.shape, -2, dtype=np.int64)
    mapped[pred_seg < 0] = -1
    for p, g in matching.items():
        mapped[pred_seg == p] = g
    pe = 100.0 * float(np.mean(mapped != gt_seg))

    pred_edges, gt_edges = _edge_map(pred_seg), _edge_map(gt_seg)
    ee = 0.5 * (_directed_edge_error(pred_edges, gt_edges) + _directed_edge_error(gt_edges, pred_edges))

    both = (pred_depth > 0) & (gt_depth > 0)
    if not both.any():
        raise MetricError("没有两者深度均有效的像素")
    rmse = float(np.sqrt(np.mean((pred_depth[both] - gt_depth[both]) ** 2)))
    return {"iou": iou, "pe": pe, "ee": ee, "rmse": rmse}


def _cast_convex(planes: Sequence[Plane], pose: PoseSE3, K: Intrinsics,
                 height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    # 没有轮廓时把房间视为所有平面内侧半空间的交
    rays = pixel_rays(height, width, K).reshape(-1, 3) @ pose.rotation.T
    origin = pose.translation
    best = np.full(rays.shape[0], np.inf)
    ids = np.full(rays.shape[0], -1, dtype=np.int32)
    for index, plane in enumerate(planes):
        denom = rays @ plane.normal
        numer = -(plane.normal @ origin + plane.offset)
        with np.errstate(divide='ignore', invalid='ignore'):
            t = np.where(denom < -1e-12, numer / denom, np.inf)
        closer = (t > 1e-9) & (t < best)
        best[closer] = t[closer]
        ids[closer] = index
    found = np.isfinite(best)
    depth = np.where(found, best, 0.0)
    return depth.reshape(height, width), np.where(found, ids, -1).astype(np.int32).reshape(height, width)


def _inside(layout: Layout, point: np.ndarray) -> bool:
    if layout.footprint is not None:
        return point_in_room(layout.planes, layout.footprint, point)
    return all(p.signed_distance(point) > FACE_TOLERANCE for p in layout.planes)


def reproject_layout(layout: Layout, pose: PoseSE3, K: Intrinsics, size: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """将布局重投影为平面编号图与深度图

    Args:
        size: (height, width)

    Returns:
        (ids, depth): 相机位于房间外时全部像素无效（−1 / 0）
    """
    height, width = size
    if not _inside(layout, pose.translation):
        logger.warning("重投影相机位于布局外部，所有像素无效")
        return np.full((height, width), -1, dtype=np.int32), np.zeros((height, width))
    if layout.footprint is not None:
        depth, ids = cast_room_rays(layout.planes, layout.footprint, pose, K, height, width)
    else:
        depth, ids = _cast_convex(layout.planes, pose, K, height, width)
    return ids, depth


# ---------------------------------------------------------------------------
# 相对位姿
# ---------------------------------------------------------------------------

def _relative(a: PoseSE3, b: PoseSE3) -> Tuple[np.ndarray, np.ndarray]:
    return a.rotation.T @ b.rotation, a.rotation.T @ (b.translation - a.translation)


def _angle_between(u: np.ndarray, v: np.ndarray) -> float:
    cosine = float(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))))


def relative_pose_errors(pred: Sequence[PoseSE3], gt: Sequence[PoseSE3]) -> List[PoseErrorPair]:
    """所有有序图像对的相对旋转误差与相对平移方向误差（度）

    Raises:
        MetricError: 数量不一致或少于2个
    """
    if len(pred) != len(gt) or len(gt) < 2:
        raise MetricError(f"位姿数量不合法: 预测 {len(pred)}，真值 {len(gt)}")
    errors = []
    for i in range(len(gt)):
        for j in range(len(gt)):
            if i == j:
                continue
            r_pred, t_pred = _relative(pred[i], pred[j])
            r_gt, t_gt = _relative(gt[i], gt[j])
            rotation_error = float(np.degrees(Rotation.from_matrix(r_pred.T @ r_gt).magnitude()))
            if np.linalg.norm(t_gt) < MIN_BASELINE:
                logger.warning(f"图像对 ({i}, {j}) 真值基线过短，平移误差无定义")
                translation_error = None
            elif np.linalg.norm(t_pred) < MIN_BASELINE:
                translation_error = 90.0
            else:
                translation_error = _angle_between(t_pred, t_gt)
            errors.append(PoseErrorPair(i, j, rotation_error, translation_error))
    return errors


def accuracy_at(errors: Sequence[PoseErrorPair], tau: float) -> Dict[str, Optional[float]]:
    """误差小于τ的图像对百分比；没有可定义平移误差的图像对时 rta 为None"""
    if not errors:
        return {"rra": 0.0, "rta": None}
    rra = 100.0 * float(np.mean([e.rotation_error < tau for e in errors]))
    defined = [e.translation_angle_error for e in errors if e.translation_angle_error is not None]
    rta = 100.0 * float(np.mean([t < tau for t in defined])) if defined else None
    return {"rra": rra, "rta": rta}


def maa30(errors: Sequence[PoseErrorPair]) -> float:
    """[0°, 30°] 上准确率曲线下面积的归一化值，逐对取旋转与平移误差中较大者"""
    if not errors:
        return 0.0
    worst = np.array([e.max_error for e in errors])
    return float(np.mean(np.maximum(0.0, MAA_LIMIT_DEG - worst)) / MAA_LIMIT_DEG)


# ---------------------------------------------------------------------------
# 三维平面
# ---------------------------------------------------------------------------

def _pair_errors(p: Plane, g: Plane) -> Tuple[float, float]:
    normal, offset = p.normal, p.offset
    if normal @ g.normal < 0:
        normal, offset = -normal, -offset
    angle = float(np.degrees(np.arccos(np.clip(normal @ g.normal, -1.0, 1.0))))
    return angle, abs(offset - g.offset)


def plane_precision_recall(pred: Sequence[Plane], gt: Sequence[Plane],
                           thr: MatchThresholds = MatchThresholds()) -> PrecisionRecall:
    """一对一平面匹配（匹配数最大，其次代价 角度+偏移/offset_m 最小）"""
    if not pred or not gt:
        logger.warning("预测或真值平面为空，精度/召回记为0")
        return PrecisionRecall(0.0, 0.0, 0, True)
    size = min(len(pred), len(gt))
    big = (size + 1) * (np.pi + 2.0) + 1.0
    cost = np.full((len(pred), len(gt)), big)
    feasible = np.zeros(cost.shape, dtype=bool)
    for a, p in enumerate(pred):
        for b, g in enumerate(gt):
            angle, offset = _pair_errors(p, g)
            if angle < thr.angle_deg and offset < thr.offset_m:
                feasible[a, b] = True
                cost[a, b] = np.radians(angle) + offset / thr.offset_m
    rows, cols = linear_sum_assignment(cost)
    matched = int(np.count_nonzero(feasible[rows, cols]))
    return PrecisionRecall(100.0 * matched / len(pred), 100.0 * matched / len(gt), matched)


def threshold_sweep(pred: Sequence[Plane], gt: Sequence[Plane],
                    ladder=THRESHOLD_LADDER) -> List[Dict]:
    """按阈值阶梯计算精度/召回"""
    rows = []
    for angle, offset in ladder:
        result = plane_precision_recall(pred, gt, MatchThresholds(angle, offset))
        rows.append({"angle_deg": angle, "offset_m": offset, **result.to_dict()})
    return rows


# ---------------------------------------------------------------------------
# 坐标系对齐与真值布局
# ---------------------------------------------------------------------------

def gauge_fix_poses(pred: Sequence[PoseSE3], gt: Sequence[PoseSE3]) -> Tuple[PoseSE3, float]:
    """求相似变换 G 使 G·pred ≈ gt

    旋转取 Σ R_gt·R_predᵀ 在 SO(3) 上的投影，尺度与平移由相机中心的最小二乘给出
    （相机中心重合时尺度取1）。

    Returns:
        (PoseSE3, float): 相似变换的旋转/平移与尺度，作用方式为 x → s·R·x + t
    """
    if len(pred) != len(gt) or not gt:
        raise FrameMismatchError(f"位姿数量不一致: 预测 {len(pred)}，真值 {len(gt)}")
    accum = sum(g.rotation @ p.rotation.T for p, g in zip(pred, gt))
    u, _, vt = np.linalg.svd(accum)
    rotation = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt)) or 1.0]) @ vt
    rotation = Rotation.from_matrix(rotation).as_matrix()

    p_centers = np.array([p.translation for p in pred])
    g_centers = np.array([g.translation for g in gt])
    p_mean, g_mean = p_centers.mean(axis=0), g_centers.mean(axis=0)
    p_rot = (p_centers - p_mean) @ rotation.T
    spread = float(np.sum(p_rot ** 2))
    scale = float(np.sum(p_rot * (g_centers - g_mean)) / spread) if spread > 1e-18 else 1.0
    if scale <= 0:
        logger.warning(f"坐标系对齐得到非正尺度 {scale:.3e}，改用1")
        scale = 1.0
    translation = g_mean - scale * rotation @ p_mean
    return PoseSE3(rotation, translation), scale


def layout_from_scene(scene: Scene) -> Layout:
    """合成场景真值转为布局"""
    lines, junctions = layout_primitives(scene.planes, scene.adjacency)
    provenance = [[] for _ in scene.planes]
    segments = {wall: np.stack([start, end]) for wall, start, end in scene.footprint.edges()}
    cameras = {k: c.pose for k, c in enumerate(scene.cameras)}
    return Layout(list(scene.planes), lines, junctions, scene.adjacency.copy(), provenance,
                  scene.footprint, segments, cameras, np.asarray(scene.footprint.up, dtype=np.float64))


def align_layout_to_scene(layout: Layout, scene: Scene) -> Layout:
    """用相机位姿把预测布局对齐到真值坐标系

    Raises:
        FrameMismatchError: 预测相机编号与场景相机不对应
    """
    ids = sorted(layout.cameras)
    if not ids or any(i < 0 or i >= len(scene.cameras) for i in ids):
        raise FrameMismatchError(f"布局相机编号 {ids} 与场景的 {len(scene.cameras)} 个相机不对应")
    pose, scale = gauge_fix_poses([layout.cameras[i] for i in ids], [scene.cameras[i].pose for i in ids])
    return layout.transformed(pose, scale)


def reprojection_metrics(layout: Layout, scene: Scene, views: Optional[Sequence[int]] = None) -> Dict:
    """在真值相机处重投影布局，与渲染的真值比较（布局须已在真值坐标系中）"""
    views = list(range(len(scene.cameras))) if views is None else list(views)
    per_view = {}
    for index in views:
        camera = scene.cameras[index]
        gt_depth, gt_ids = render_structural_depth(scene, index)
        ids, depth = reproject_layout(layout, camera.pose, camera.intrinsics, (camera.height, camera.width))
        try:
            per_view[index] = seg_depth_metrics(ids, gt_ids, depth, gt_depth)
        except MetricError as e:
            logger.warning(f"视角 {index} 的重投影指标无法计算: {e}")
    if not per_view:
        raise MetricError("没有可计算重投影指标的视角")
    mean = {key: float(np.mean([m[key] for m in per_view.values()])) for key in ("iou", "pe", "ee", "rmse")}
    return {"per_view": per_view, "mean": mean}


def evaluate_layout(layout: Layout, scene: Scene, thresholds: MatchThresholds = MatchThresholds()) -> Dict:
    """完整评估：re-* 指标、RRA/RTA、mAA30、三维精度/召回及阈值阶梯"""
    aligned = align_layout_to_scene(layout, scene)
    ids = sorted(layout.cameras)
    report = {"views": ids}
    report["reprojection"] = reprojection_metrics(aligned, scene, ids)

    if len(ids) >= 2:
        errors = relative_pose_errors([layout.cameras[i] for i in ids], [scene.cameras[i].pose for i in ids])
        report["pose"] = {
            "pairs": [{"i": ids[e.i], "j": ids[e.j], "rotation_error": e.rotation_error,
                       "translation_angle_error": e.translation_angle_error} for e in errors],
            "accuracy": {str(int(t)): accuracy_at(errors, t) for t in POSE_THRESHOLDS},
            "maa30": maa30(errors),
        }
    report["planes"] = plane_precision_recall(aligned.planes, scene.planes, thresholds).to_dict()
    report["threshold_sweep"] = threshold_sweep(aligned.planes, scene.planes)
    report["plane_counts"] = {"pred": len(aligned.planes), "gt": len(scene.planes),
                              "pred_walls": len([p for p in aligned.planes if p.semantic_class == SemanticClass.WALL])}
    return report
