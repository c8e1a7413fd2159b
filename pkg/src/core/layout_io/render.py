#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
渲染模块 - 俯视图SVG与线框OBJ

输出文本只依赖输入数据，同样的输入总是得到逐字节相同的结果。
"""

from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

try:
    from ..multi_view_merge import Layout
    from ..utils import setup_logger
except ImportError:
    from multi_view_merge import Layout
    from utils import setup_logger

logger = setup_logger(__name__)

CANVAS_SIZE = 800.0
CANVAS_MARGIN = 20.0
OUTLINE_COLOR = "#333333"
UNCLASSIFIED_COLOR = "#9e9e9e"
PALETTE = (
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4",
    "#f032e6", "#bfef45", "#469990", "#9a6324", "#800000", "#000075",
)


def color_for(key) -> str:
    """按平面编号/聚类编号取颜色，None表示未聚类"""
    if key is None:
        return UNCLASSIFIED_COLOR
    return PALETTE[int(key) % len(PALETTE)]


class _Viewport:
    """水平面坐标 (u, v) → SVG画布坐标，v轴朝上"""

    def __init__(self, points: np.ndarray):
        if points.size == 0:
            points = np.array([[0.0, 0.0], [1.0, 1.0]])
        self.low = points.min(axis=0)
        span = points.max(axis=0) - self.low
        self.scale = (CANVAS_SIZE - 2 * CANVAS_MARGIN) / max(float(span.max()), 1e-9)
        self.width = 2 * CANVAS_MARGIN + float(span[0]) * self.scale
        self.height = 2 * CANVAS_MARGIN + float(span[1]) * self.scale
        self.top = float(points[:, 1].max())

    def points(self, uv: np.ndarray) -> str:
        coords = []
        for u, v in np.asarray(uv, dtype=np.float64).reshape(-1, 2):
            x = CANVAS_MARGIN + (u - self.low[0]) * self.scale
            y = CANVAS_MARGIN + (self.top - v) * self.scale
            coords.append(f"{x:.3f},{y:.3f}")
        return " ".join(coords)

    def open_tag(self) -> str:
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width:.3f}" height="{self.height:.3f}" '
                f'viewBox="0 0 {self.width:.3f} {self.height:.3f}">')


def _layout_birdview(layout: Layout) -> List[str]:
    collected = [v for v in layout.wall_segments.values()]
    if layout.footprint is not None:
        collected.append(layout.footprint.vertices)
    viewport = _Viewport(np.concatenate(collected) if collected else np.zeros((0, 2)))
    body = [viewport.open_tag()]
    if layout.footprint is not None:
        body.append(f'  <polygon class="floor" data-plane-id="{layout.footprint.floor_id}" '
                    f'points="{viewport.points(layout.footprint.vertices)}" '
                    f'fill="none" stroke="{OUTLINE_COLOR}" stroke-width="2"/>')
    for plane_id, endpoints in sorted(layout.wall_segments.items()):
        body.append(f'  <polyline class="wall" data-plane-id="{plane_id}" points="{viewport.points(endpoints)}" '
                    f'fill="none" stroke="{color_for(plane_id)}" stroke-width="4"/>')
    return body


def _segments_birdview(segments: Sequence[Dict[str, Any]]) -> List[str]:
    ordered = sorted(segments, key=lambda s: (s["image_id"], s["source_plane_index"]))
    collected = [np.asarray(s["endpoints"], dtype=np.float64).reshape(2, 2) for s in ordered]
    viewport = _Viewport(np.concatenate(collected) if collected else np.zeros((0, 2)))
    body = [viewport.open_tag()]
    for segment, endpoints in zip(ordered, collected):
        cluster = segment.get("cluster")
        cluster_attr = "" if cluster is None else f' data-cluster-id="{cluster}"'
        body.append(f'  <polyline class="segment" data-image-id="{segment["image_id"]}" '
                    f'data-source-plane="{segment["source_plane_index"]}"{cluster_attr} '
                    f'points="{viewport.points(endpoints)}" fill="none" stroke="{color_for(cluster)}" '
                    f'stroke-width="2"/>')
    return body


def render_birdview(source: Union[Layout, Sequence[Dict[str, Any]]]) -> str:
    """俯视图SVG

    Args:
        source: 合并后的布局（每面墙一条折线 + 地面轮廓），
            或合并前的线段列表（read_segments 的结果，按聚类编号着色）

    Returns:
        str: SVG文档
    """
    if isinstance(source, Layout):
        body = _layout_birdview(source)
    else:
        body = _segments_birdview(source)
    body.append("</svg>")
    return "\n".join(body) + "\n"


def wireframe_edges(layout: Layout) -> List[Tuple[int, int]]:
    """线框的边：每条交线上的交点沿方向排序后相邻相连（交点下标从0开始）"""
    edges = []
    for line in layout.lines:
        members = set(line.planes)
        on_line = [k for k, point in enumerate(layout.junctions) if members <= set(point.planes)]
        if len(on_line) < 2:
            continue
        on_line.sort(key=lambda k: float((layout.junctions[k].position - line.point) @ line.direction))
        edges.extend(zip(on_line[:-1], on_line[1:]))
    return edges


def render_wireframe(layout: Layout) -> str:
    """线框OBJ：交点为顶点，交线段为 l 元素"""
    lines = ["# layoutfuse wireframe", "# units: meters"]
    for point in layout.junctions:
        x, y, z = point.position
        lines.append(f"v {x:.6f} {y:.6f} {z:.6f}")
    edges = wireframe_edges(layout)
    for a, b in edges:
        lines.append(f"l {a + 1} {b + 1}")
    if not edges:
        logger.warning("布局中没有可连接的交点，线框只包含顶点")
    return "\n".join(lines) + "\n"
