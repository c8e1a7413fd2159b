#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
全局对齐模块 - 由成对点图恢复世界坐标系下的相机位姿

1. 以每对图像的平均置信度为权重构建视图图，取最大生成树
2. 沿生成树用加权Kabsch对齐初始化位姿
3. 交替优化：位姿（SE(3)切空间，左扰动）与对数尺度做带回溯线搜索的梯度下降，
   世界点图χ每轮取置信度加权平均的闭式解

目标函数：Σ_e Σ_{v∈e} Σ_i C_i^{v,e} ‖χ_i^v − σ_e T_e X_i^{v,e}‖²，
其中边 e=(n,m) 对应图像对 (n,m) 的数据，T_e 取图像n的位姿，约束 ∏σ_e = 1。
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.spatial.transform import Rotation
from tqdm import tqdm

try:
    from .errors import AlignmentError, DomainError
    from .geom_core import Pointmap, PoseSE3
    from .scene_synth import ViewBundle
    from .utils import setup_logger
except ImportError:
    from errors import AlignmentError, DomainError
    from geom_core import Pointmap, PoseSE3
    from scene_synth import ViewBundle
    from utils import setup_logger

logger = setup_logger(__name__)

EdgeKey = Tuple[int, int]


@dataclass(frozen=True)
class AlignOptions:
    """全局对齐的优化参数"""
    max_iters: int = 300
    lr: float = 1.0
    tol: float = 1e-9
    armijo: float = 1e-4
    max_backtracks: int = 40
    show_progress: bool = False


@dataclass
class ViewGraph:
    """视图图：顶点为图像编号，边为无向图像对及其平均置信度"""
    vertices: List[int]
    edges: List[Tuple[int, int, float]]
    mst_edges: List[Tuple[int, int, float]]
    components: List[List[int]] = field(default_factory=list)

    @property
    def connected(self) -> bool:
        return len(self.components) <= 1

    @property
    def mst_pairs(self) -> List[EdgeKey]:
        return [(n, m) for n, m, _ in self.mst_edges]


@dataclass
class AlignmentState:
    """对齐状态：每个视角的位姿、每条边的尺度、每个视角的世界点图"""
    poses: Dict[int, PoseSE3]
    scales: Dict[EdgeKey, float]
    global_pointmaps: Dict[int, Pointmap]
    anchor: int = 0

    def copy(self) -> "AlignmentState":
        return AlignmentState(dict(self.poses), dict(self.scales), dict(self.global_pointmaps), self.anchor)


@dataclass
class AlignReport:
    iterations: int
    objective: float
    grad_norm: float
    converged: bool
    history: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {"iterations": self.iterations, "objective": self.objective,
                "grad_norm": self.grad_norm, "converged": self.converged,
                "history": list(self.history)}


@dataclass
class AlignGradient:
    """目标函数梯度：位姿左扰动切向量、平移、对数尺度、世界点图"""
    rotation: Dict[int, np.ndarray]
    translation: Dict[int, np.ndarray]
    log_scale: Dict[EdgeKey, float]
    pointmaps: Dict[int, np.ndarray]


def bundle_confidence(bundle: ViewBundle) -> float:
    """图像对两张置信度图在有效像素上的平均值"""
    values = np.concatenate([bundle.confidence_self[bundle.pointmap_self.valid],
                             bundle.confidence_other[bundle.pointmap_other.valid]])
    return float(values.mean()) if values.size else 0.0


def view_graph_from_scores(vertices: Sequence[int], scores: Dict[EdgeKey, float]) -> ViewGraph:
    """由无向边得分构建视图图并计算最大生成树（森林）"""
    graph = nx.Graph()
    graph.add_nodes_from(sorted(vertices))
    edges = []
    for (n, m) in sorted(scores):
        edges.append((n, m, float(scores[(n, m)])))
        graph.add_edge(n, m, weight=float(scores[(n, m)]))
    tree = nx.maximum_spanning_tree(graph, weight="weight", algorithm="kruskal")
    mst_edges = sorted((min(n, m), max(n, m), float(data["weight"]))
                       for n, m, data in tree.edges(data=True))
    components = sorted(sorted(c) for c in nx.connected_components(graph))
    if len(components) > 1:
        logger.warning(f"视图图不连通，共 {len(components)} 个连通分量: {components}，将逐分量处理")
    return ViewGraph(sorted(vertices), edges, mst_edges, components)


def build_view_graph(bundles: Sequence[ViewBundle]) -> ViewGraph:
    """由图像对数据构建视图图，边权为双向图像对平均置信度的均值"""
    if not bundles:
        raise AlignmentError("构建视图图至少需要一个图像对")
    per_pair: Dict[EdgeKey, List[float]] = {}
    vertices = set()
    for bundle in bundles:
        n, m = bundle.key
        vertices.update((n, m))
        per_pair.setdefault((min(n, m), max(n, m)), []).append(bundle_confidence(bundle))
    scores = {key: float(np.mean(values)) for key, values in per_pair.items()}
    return view_graph_from_scores(sorted(vertices), scores)


def split_components(bundles: Sequence[ViewBundle]) -> List[List[ViewBundle]]:
    """按视图图的连通分量拆分图像对"""
    graph = build_view_graph(bundles)
    groups = []
    for component in graph.components:
        members = set(component)
        groups.append([b for b in bundles if b.image_id in members])
    return groups


def alignment_edges(bundles: Sequence[ViewBundle], graph: ViewGraph) -> Dict[EdgeKey, ViewBundle]:
    """生成树上每个无向图像对的有向数据，同一有序对只取第一个"""
    tree_pairs = set(graph.mst_pairs)
    edges: Dict[EdgeKey, ViewBundle] = {}
    for bundle in bundles:
        n, m = bundle.key
        if (min(n, m), max(n, m)) in tree_pairs and bundle.key not in edges:
            edges[bundle.key] = bundle
    return dict(sorted(edges.items()))


def _edge_terms(bundle: ViewBundle):
    n, m = bundle.key
    return ((n, bundle.pointmap_self, bundle.confidence_self),
            (m, bundle.pointmap_other, bundle.confidence_other))


def _check_scales(scales: Dict[EdgeKey, float]):
    for key, sigma in scales.items():
        if not sigma > 0:
            raise DomainError(f"边 {key} 的尺度 σ={sigma} 必须为正")


def _edges_for_state(state: AlignmentState, bundles) -> Dict[EdgeKey, ViewBundle]:
    if isinstance(bundles, dict):
        return bundles
    edges = {}
    for bundle in bundles:
        if bundle.key in state.scales and bundle.key not in edges:
            edges[bundle.key] = bundle
    return edges


def align_objective(state: AlignmentState, bundles) -> float:
    """精确计算对齐目标函数

    Args:
        state: 对齐状态
        bundles: 图像对列表（只使用 state.scales 中出现的有序对）或 {有序对: 数据} 字典

    Raises:
        DomainError: 存在 σ_e ≤ 0
    """
    _check_scales(state.scales)
    edges = _edges_for_state(state, bundles)
    total = 0.0
    for key, bundle in edges.items():
        sigma = state.scales[key]
        pose = state.poses[key[0]]
        for view, pointmap, confidence in _edge_terms(bundle):
            chi = state.global_pointmaps[view]
            mask = pointmap.valid & chi.valid
            predicted = sigma * pose.apply(pointmap.points[mask])
            residual = chi.points[mask] - predicted
            total += float(np.sum(confidence[mask] * np.sum(residual ** 2, axis=-1)))
    return total


def objective_and_gradient(state: AlignmentState, bundles) -> Tuple[float, AlignGradient]:
    """目标函数值及其解析梯度

    位姿梯度对应左扰动 R ← exp([δ]×)·R、t ← t + τ；尺度梯度对应 log σ。
    """
    _check_scales(state.scales)
    edges = _edges_for_state(state, bundles)
    rotation = {v: np.zeros(3) for v in state.poses}
    translation = {v: np.zeros(3) for v in state.poses}
    log_scale = {key: 0.0 for key in edges}
    pointmaps = {v: np.zeros_like(chi.points) for v, chi in state.global_pointmaps.items()}

    total = 0.0
    for key, bundle in edges.items():
        sigma = state.scales[key]
        owner = key[0]
        pose = state.poses[owner]
        for view, pointmap, confidence in _edge_terms(bundle):
            chi = state.global_pointmaps[view]
            mask = pointmap.valid & chi.valid
            weight = confidence[mask][:, None]
            rotated = pointmap.points[mask] @ pose.rotation.T
            predicted = sigma * (rotated + pose.translation)
            residual = chi.points[mask] - predicted
            total += float(np.sum(weight * residual ** 2))

            grad_pred = -2.0 * weight * residual
            pointmaps[view][mask] += 2.0 * weight * residual
            translation[owner] += sigma * grad_pred.sum(axis=0)
            rotation[owner] += sigma * np.cross(rotated, grad_pred).sum(axis=0)
            log_scale[key] += float(np.sum(grad_pred * predicted))
    return total, AlignGradient(rotation, translation, log_scale, pointmaps)


def solve_global_pointmaps(poses: Dict[int, PoseSE3], scales: Dict[EdgeKey, float],
                           edges: Dict[EdgeKey, ViewBundle]) -> Dict[int, Pointmap]:
    """χ 的闭式解：各边预测值按置信度加权平均"""
    numer: Dict[int, np.ndarray] = {}
    denom: Dict[int, np.ndarray] = {}
    for key, bundle in edges.items():
        sigma = scales[key]
        pose = poses[key[0]]
        for view, pointmap, confidence in _edge_terms(bundle):
            if view not in numer:
                numer[view] = np.zeros(pointmap.points.shape)
                denom[view] = np.zeros(pointmap.valid.shape)
            elif numer[view].shape != pointmap.points.shape:
                raise AlignmentError(f"视角 {view} 在不同图像对中的点图尺寸不一致")
            weight = np.where(pointmap.valid, confidence, 0.0)
            predicted = sigma * pose.apply(np.where(pointmap.valid[..., None], pointmap.points, 0.0))
            numer[view] += weight[..., None] * predicted
            denom[view] += weight
    result = {}
    for view in sorted(numer):
        valid = denom[view] > 0
        points = np.zeros_like(numer[view])
        points[valid] = numer[view][valid] / denom[view][valid][:, None]
        result[view] = Pointmap(points, valid)
    return result


def weighted_kabsch(source: np.ndarray, target: np.ndarray, weights: np.ndarray) -> PoseSE3:
    """求刚体变换使 target ≈ R·source + t（加权最小二乘）"""
    total = weights.sum()
    if source.shape[0] < 3 or total <= 0:
        raise AlignmentError("Kabsch对齐至少需要3个有效对应点")
    mu_s = weights @ source / total
    mu_t = weights @ target / total
    cov = ((target - mu_t) * weights[:, None]).T @ (source - mu_s) / total
    u, _, vt = np.linalg.svd(cov)
    correction = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt)) or 1.0])
    rotation = u @ correction @ vt
    rotation = Rotation.from_matrix(rotation).as_matrix()
    return PoseSE3(rotation, mu_t - rotation @ mu_s)


def _self_pointmaps(bundles: Sequence[ViewBundle]) -> Dict[int, ViewBundle]:
    owners: Dict[int, ViewBundle] = {}
    for bundle in bundles:
        owners.setdefault(bundle.image_id, bundle)
    return owners


def _relative_pose(points_from, conf_from, pm_from, points_to, conf_to, pm_to) -> PoseSE3:
    mask = pm_from.valid & pm_to.valid
    weights = conf_from[mask] * conf_to[mask]
    return weighted_kabsch(points_from[mask], points_to[mask], weights)


def initialize_from_tree(bundles: Sequence[ViewBundle], graph: ViewGraph, anchor: int) -> Dict[int, PoseSE3]:
    """沿最大生成树链接相对位姿得到初始位姿

    对树边 (n, m)：用 X_{m,n} 与 X_{m,m} 的逐像素对应求相机m在n坐标系下的位姿。
    """
    owners = _self_pointmaps(bundles)
    directed = {}
    for bundle in bundles:
        directed.setdefault(bundle.key, bundle)

    neighbors: Dict[int, List[int]] = {v: [] for v in graph.vertices}
    for n, m in graph.mst_pairs:
        neighbors[n].append(m)
        neighbors[m].append(n)

    poses = {anchor: PoseSE3.identity()}
    queue = deque([anchor])
    while queue:
        current = queue.popleft()
        for other in sorted(neighbors[current]):
            if other in poses:
                continue
            if (current, other) in directed and other in owners:
                pair, own = directed[(current, other)], owners[other]
                # X_{other,current} ≈ T_rel · X_{other,other}
                relative = _relative_pose(own.pointmap_self.points, own.confidence_self, own.pointmap_self,
                                          pair.pointmap_other.points, pair.confidence_other, pair.pointmap_other)
            elif (other, current) in directed and current in owners:
                pair, own = directed[(other, current)], owners[current]
                relative = _relative_pose(own.pointmap_self.points, own.confidence_self, own.pointmap_self,
                                          pair.pointmap_other.points, pair.confidence_other,
                                          pair.pointmap_other).inverse()
            else:
                raise AlignmentError(f"树边 ({current}, {other}) 缺少初始化所需的点图")
            poses[other] = poses[current] @ relative
            queue.append(other)
    return poses


def _retract(state: AlignmentState, step_rotation, step_translation, step_log_scale) -> AlignmentState:
    poses = {}
    for view, pose in state.poses.items():
        delta = Rotation.from_rotvec(step_rotation[view]).as_matrix()
        rotation = Rotation.from_matrix(delta @ pose.rotation).as_matrix()
        poses[view] = PoseSE3(rotation, pose.translation + step_translation[view])
    keys = sorted(state.scales)
    logs = np.array([np.log(state.scales[k]) + step_log_scale[k] for k in keys])
    logs -= logs.mean()
    scales = {k: float(np.exp(v)) for k, v in zip(keys, logs)}
    return AlignmentState(poses, scales, dict(state.global_pointmaps), state.anchor)


def retract(state: AlignmentState, gradient: AlignGradient, step: float) -> AlignmentState:
    """沿 −step·gradient 方向更新位姿与尺度（尺度投影回 ∏σ = 1，χ不变）"""
    return _retract(state,
                    {v: -step * g for v, g in gradient.rotation.items()},
                    {v: -step * g for v, g in gradient.translation.items()},
                    {k: -step * g for k, g in gradient.log_scale.items()})


def _projected(gradient: AlignGradient, anchor: int) -> AlignGradient:
    rotation = {v: (np.zeros(3) if v == anchor else g) for v, g in gradient.rotation.items()}
    translation = {v: (np.zeros(3) if v == anchor else g) for v, g in gradient.translation.items()}
    mean_log = float(np.mean(list(gradient.log_scale.values()))) if gradient.log_scale else 0.0
    log_scale = {k: g - mean_log for k, g in gradient.log_scale.items()}
    return AlignGradient(rotation, translation, log_scale, gradient.pointmaps)


def _norm(gradient: AlignGradient) -> float:
    squares = sum(float(g @ g) for g in gradient.rotation.values())
    squares += sum(float(g @ g) for g in gradient.translation.values())
    squares += sum(g * g for g in gradient.log_scale.values())
    return float(np.sqrt(squares))


def _total_weight(edges: Dict[EdgeKey, ViewBundle]) -> float:
    total = 0.0
    for bundle in edges.values():
        for _, pointmap, confidence in _edge_terms(bundle):
            total += float(confidence[pointmap.valid].sum())
    return total


def align(bundles: Sequence[ViewBundle], opts: AlignOptions = AlignOptions()) -> Tuple[AlignmentState, AlignReport]:
    """全局对齐

    Args:
        bundles: 图像对数据（视图图必须连通）
        opts: 优化参数

    Returns:
        (AlignmentState, AlignReport): 锚点（最小图像编号）位姿为单位阵

    Raises:
        AlignmentError: 视图图不连通或缺少必要点图
    """
    graph = build_view_graph(bundles)
    if not graph.connected:
        raise AlignmentError(f"视图图不连通: {graph.components}，请使用 split_components 逐分量对齐")
    anchor = graph.vertices[0]
    edges = alignment_edges(bundles, graph)
    owners = {key[0] for key in edges}
    missing = [v for v in graph.vertices if v not in owners]
    if missing:
        raise AlignmentError(f"视角 {missing} 在生成树上没有以自身为参考系的点图，位姿无法确定")

    poses = initialize_from_tree(bundles, graph, anchor)
    scales = {key: 1.0 for key in edges}
    state = AlignmentState(poses, scales, solve_global_pointmaps(poses, scales, edges), anchor)

    weight = _total_weight(edges)
    if weight <= 0:
        raise AlignmentError("所有图像对的有效置信度之和为0")

    value, gradient = objective_and_gradient(state, edges)
    gradient = _projected(gradient, anchor)
    grad_norm = _norm(gradient) / weight
    history = [value]
    step = opts.lr
    iterations = 0

    progress = tqdm(total=opts.max_iters, desc="全局对齐", disable=not opts.show_progress)
    while iterations < opts.max_iters and grad_norm >= opts.tol:
        accepted = None
        trial = step
        for _ in range(opts.max_backtracks):
            candidate = retract(state, gradient, trial / weight)
            candidate_value = align_objective(candidate, edges)
            if candidate_value / weight <= value / weight - opts.armijo * trial * grad_norm ** 2:
                accepted = candidate
                break
            trial *= 0.5
        if accepted is None:
            logger.info(f"线搜索在第 {iterations} 次迭代后无法继续下降，提前停止")
            break

        accepted.global_pointmaps = solve_global_pointmaps(accepted.poses, accepted.scales, edges)
        state = accepted
        value, gradient = objective_and_gradient(state, edges)
        gradient = _projected(gradient, anchor)
        grad_norm = _norm(gradient) / weight
        history.append(value)
        iterations += 1
        step = min(trial * 2.0, opts.lr * 1e3)
        progress.update(1)
        progress.set_postfix(objective=f"{value:.3e}")
    progress.close()

    converged = grad_norm < opts.tol
    if not converged:
        logger.warning(f"全局对齐未收敛: 迭代 {iterations} 次, 梯度范数 {grad_norm:.3e}")
    report = AlignReport(iterations, value, grad_norm, converged, history)
    logger.info(f"全局对齐完成: {len(graph.vertices)} 个视角, {len(edges)} 条有向边, 目标值 {value:.6e}")
    return state, report


def view_scales(state: AlignmentState) -> Dict[int, float]:
    """每个视角的尺度：以该视角为参考系的各边 σ 的几何平均"""
    logs: Dict[int, List[float]] = {}
    for (owner, _), sigma in state.scales.items():
        logs.setdefault(owner, []).append(np.log(sigma))
    return {v: float(np.exp(np.mean(logs[v]))) if v in logs else 1.0 for v in state.poses}


def world_poses(state: AlignmentState) -> Dict[int, Tuple[PoseSE3, float]]:
    """每个视角的相似变换 x → s·(R·x + t)，以 (PoseSE3(R, s·t), s) 形式返回"""
    scales = view_scales(state)
    result = {}
    for view, pose in sorted(state.poses.items()):
        s = scales[view]
        result[view] = (PoseSE3(pose.rotation, s * pose.translation), s)
    return result
