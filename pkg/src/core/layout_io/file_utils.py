#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
文件处理工具模块 - 点图容器、场景/布局JSON与输入清单的读写

LFPM 容器（小端序）：
    0   16字节魔数 "LFPM0001"（NUL填充）
    16  u32 高度
    20  u32 宽度
    24  u32 通道数
    28  u32 保留（0）
    32  行主序数据：点图/置信度/深度为float32，掩码为int32

点图中的无效像素写为NaN。所有写操作均为原子写入。
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

try:
    from ..errors import InputError, InputFileError, MalformedFileError
    from ..geom_core import Intrinsics, Plane, Pointmap, PoseSE3, RoomFootprint, SemanticClass
    from ..multi_view_merge import Layout, MergeResult, Orientation
    from ..scene_synth import CameraView, Scene, SceneSpec, ViewBundle
    from ..single_view_layout import PartialLayout, layout_primitives
    from ..utils import atomic_write_bytes, atomic_write_text, ensure_dir, json_offset, setup_logger
    from .config import MANIFEST_FILE_NAME, SCENE_FILE_NAME
except ImportError:
    from errors import InputError, InputFileError, MalformedFileError
    from geom_core import Intrinsics, Plane, Pointmap, PoseSE3, RoomFootprint, SemanticClass
    from multi_view_merge import Layout, MergeResult, Orientation
    from scene_synth import CameraView, Scene, SceneSpec, ViewBundle
    from single_view_layout import PartialLayout, layout_primitives
    from utils import atomic_write_bytes, atomic_write_text, ensure_dir, json_offset, setup_logger
    from config import MANIFEST_FILE_NAME, SCENE_FILE_NAME

# 设置日志记录器
logger = setup_logger(__name__)

PathLike = Union[str, Path]

LFPM_MAGIC = b"LFPM0001".ljust(16, b"\0")
LFPM_HEADER = struct.Struct("<16s4I")
_FIELD_OFFSETS = {"height": 16, "width": 20, "channels": 24, "reserved": 28}

FORMAT_VERSION = 1
UNITS = "meters"
PLANE_CONVENTION = "n·x + d = 0, unit normal pointing into the room interior"
CAMERA_CONVENTION = "camera-to-world pose; camera x right, y down, z forward"

MANIFEST_FORMAT = "layoutfuse-manifest"
SCENE_FORMAT = "layoutfuse-scene"
LAYOUT_FORMAT = "layoutfuse-layout"
PARTIALS_FORMAT = "layoutfuse-partials"
POSES_FORMAT = "layoutfuse-poses"
SEGMENTS_FORMAT = "layoutfuse-segments"

# =========================================================
# LFPM 二进制容器
# =========================================================


def encode_lfpm(array: np.ndarray) -> bytes:
    """编码为LFPM字节串（H×W 或 H×W×C；整数数组按int32，其余按float32）"""
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[..., None]
    if array.ndim != 3:
        raise InputError(f"LFPM只能保存2维或3维数组，实际为 {array.ndim} 维")
    dtype = "<i4" if np.issubdtype(array.dtype, np.integer) else "<f4"
    height, width, channels = array.shape
    header = LFPM_HEADER.pack(LFPM_MAGIC, height, width, channels, 0)
    return header + np.ascontiguousarray(array, dtype=dtype).tobytes()


def decode_lfpm(data: bytes, path: PathLike, dtype: str = "<f4",
                channels: Optional[int] = None) -> np.ndarray:
    """解码LFPM字节串，返回 H×W×C 数组

    Raises:
        MalformedFileError: 魔数、尺寸或数据长度不合法（附带字节偏移）
    """
    if len(data) < LFPM_HEADER.size:
        raise MalformedFileError(path, len(data), f"文件头不完整，需要 {LFPM_HEADER.size} 字节")
    magic, height, width, file_channels, reserved = LFPM_HEADER.unpack_from(data, 0)
    if magic != LFPM_MAGIC:
        raise MalformedFileError(path, 0, f"魔数错误: {magic!r}")
    if height == 0 or width == 0:
        raise MalformedFileError(path, _FIELD_OFFSETS["height"], f"图像尺寸为零: {height}×{width}")
    if file_channels == 0 or (channels is not None and file_channels != channels):
        raise MalformedFileError(path, _FIELD_OFFSETS["channels"],
                                 f"通道数为 {file_channels}，应为 {channels}")
    if reserved != 0:
        raise MalformedFileError(path, _FIELD_OFFSETS["reserved"], f"保留字段必须为0，实际为 {reserved}")

    expected = height * width * file_channels * 4
    body = len(data) - LFPM_HEADER.size
    if body < expected:
        raise MalformedFileError(path, len(data), f"数据被截断：需要 {expected} 字节，实际 {body} 字节")
    if body > expected:
        raise MalformedFileError(path, LFPM_HEADER.size + expected, f"文件末尾有 {body - expected} 字节多余数据")
    array = np.frombuffer(data, dtype=dtype, count=height * width * file_channels, offset=LFPM_HEADER.size)
    return array.reshape(height, width, file_channels)


def write_lfpm(file_path: PathLike, array: np.ndarray) -> Path:
    return atomic_write_bytes(file_path, encode_lfpm(array))


def read_lfpm(file_path: PathLike, dtype: str = "<f4", channels: Optional[int] = None) -> np.ndarray:
    """读取LFPM文件

    Raises:
        InputFileError: 文件不存在
        MalformedFileError: 格式错误
    """
    path = Path(file_path)
    if not path.is_file():
        raise InputFileError(path)
    return decode_lfpm(path.read_bytes(), path, dtype, channels)


def write_pointmap(file_path: PathLike, pointmap: Pointmap) -> Path:
    points = np.where(pointmap.valid[..., None], pointmap.points, np.nan)
    return write_lfpm(file_path, points.astype(np.float32))


def read_pointmap(file_path: PathLike) -> Pointmap:
    raw = read_lfpm(file_path, "<f4", 3).astype(np.float64)
    valid = np.all(np.isfinite(raw), axis=-1)
    return Pointmap(np.where(valid[..., None], raw, 0.0), valid)


def write_mask(file_path: PathLike, mask: np.ndarray) -> Path:
    return write_lfpm(file_path, np.asarray(mask, dtype=np.int32))


def read_mask(file_path: PathLike) -> np.ndarray:
    return read_lfpm(file_path, "<i4", 1)[..., 0].astype(np.int32)


def write_scalar_map(file_path: PathLike, values: np.ndarray) -> Path:
    """置信度图或深度图（单通道float32）"""
    return write_lfpm(file_path, np.asarray(values, dtype=np.float32))


def read_scalar_map(file_path: PathLike) -> np.ndarray:
    return read_lfpm(file_path, "<f4", 1)[..., 0].astype(np.float64)

# =========================================================
# JSON 文档
# =========================================================


def dumps_json(document: Any) -> str:
    """确定性的JSON文本（键顺序保持插入顺序）"""
    return json.dumps(document, ensure_ascii=False, indent=2, allow_nan=False) + "\n"


def write_json(file_path: PathLike, document: Any) -> Path:
    return atomic_write_text(file_path, dumps_json(document))


def read_json(file_path: PathLike, expected_format: Optional[str] = None) -> Dict:
    """读取JSON文档并检查format字段

    Raises:
        InputFileError: 文件不存在
        MalformedFileError: JSON解析失败或format不符
    """
    path = Path(file_path)
    if not path.is_file():
        raise InputFileError(path)
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedFileError(path, e.start, "不是UTF-8文本") from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        # 字符位置换算为字节偏移
        raise MalformedFileError(path, len(text[:e.pos].encode("utf-8")), f"JSON解析失败: {e.msg}") from e
    if not isinstance(document, dict):
        raise MalformedFileError(path, 0, "顶层必须是对象")
    if expected_format is not None and document.get("format") != expected_format:
        raise MalformedFileError(path, json_offset(raw, ["format"]),
                                 f"format 字段为 {document.get('format')!r}，应为 {expected_format!r}")
    return document


def _header(kind: str) -> Dict[str, Any]:
    return {"format": kind, "version": FORMAT_VERSION, "units": UNITS}


def _vector(values) -> List[float]:
    return [float(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)]


def _matrix(values) -> List[List[float]]:
    return [_vector(row) for row in np.asarray(values, dtype=np.float64)]


def _pairs(adjacency: np.ndarray) -> List[List[int]]:
    upper = np.triu(np.asarray(adjacency, dtype=bool), 1)
    return [[int(a), int(b)] for a, b in zip(*np.nonzero(upper))]


def _adjacency_from_pairs(size: int, pairs) -> np.ndarray:
    adjacency = np.zeros((size, size), dtype=bool)
    for a, b in pairs:
        adjacency[a, b] = adjacency[b, a] = True
    return adjacency


def plane_to_dict(plane_id: int, plane: Plane) -> Dict[str, Any]:
    return {"id": plane_id, "class": plane.semantic_class.value,
            "normal": _vector(plane.normal), "offset": float(plane.offset)}


def plane_from_dict(data: Dict[str, Any]) -> Plane:
    return Plane(np.asarray(data["normal"], dtype=np.float64), float(data["offset"]),
                 SemanticClass(data["class"]))


def pose_to_dict(pose: PoseSE3) -> Dict[str, Any]:
    return {"rotation": _matrix(pose.rotation), "translation": _vector(pose.translation)}


def pose_from_dict(data: Dict[str, Any]) -> PoseSE3:
    return PoseSE3(np.asarray(data["rotation"], dtype=np.float64),
                   np.asarray(data["translation"], dtype=np.float64))


def intrinsics_to_dict(K: Intrinsics) -> Dict[str, float]:
    return {"fx": float(K.fx), "fy": float(K.fy), "cx": float(K.cx), "cy": float(K.cy)}


def intrinsics_from_dict(data: Dict[str, Any]) -> Intrinsics:
    return Intrinsics(float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]))


def footprint_to_dict(footprint: Optional[RoomFootprint]) -> Optional[Dict[str, Any]]:
    if footprint is None:
        return None
    return {"vertices": _matrix(footprint.vertices), "wall_ids": list(footprint.wall_ids),
            "floor_id": int(footprint.floor_id), "ceiling_id": int(footprint.ceiling_id),
            "up": _vector(footprint.up)}


def footprint_from_dict(data: Optional[Dict[str, Any]]) -> Optional[RoomFootprint]:
    if data is None:
        return None
    return RoomFootprint(np.asarray(data["vertices"], dtype=np.float64), data["wall_ids"],
                         int(data["floor_id"]), int(data["ceiling_id"]), np.asarray(data["up"], dtype=np.float64))


_MISSING = object()


class _ContentError(ValueError):
    """文档内容不合法，json_path 为出错值在文档中的路径"""

    def __init__(self, json_path: Sequence, message: str):
        super().__init__(message)
        self.json_path = tuple(json_path)


class _JsonCursor:
    """解析时记录当前所在的字段或记录，出错时据此给出字节偏移"""

    def __init__(self):
        self.path: Tuple = ()

    def field(self, document: Dict[str, Any], key: str, default: Any = _MISSING) -> Any:
        self.path = (key,)
        if default is _MISSING:
            return document[key]
        return document.get(key, default)

    def records(self, document: Dict[str, Any], key: str, default: Any = _MISSING):
        items = self.field(document, key, default)
        for index, item in enumerate(items):
            self.path = (key, index)
            yield item
        self.path = (key,)


def _parse(path: PathLike, builder, document):
    """把字段缺失或数值不合法统一转换为格式错误，偏移指向出错的字段或记录

    builder(document, cursor) 通过 cursor 读取字段与记录。
    """
    cursor = _JsonCursor()
    try:
        return builder(document, cursor)
    except MalformedFileError:
        raise
    except _ContentError as e:
        raise MalformedFileError(path, json_offset(Path(path).read_bytes(), e.json_path), str(e)) from e
    except (KeyError, TypeError, ValueError, IndexError, InputError) as e:
        offset = json_offset(Path(path).read_bytes(), cursor.path)
        raise MalformedFileError(path, offset, f"内容不合法: {type(e).__name__}: {e}") from e


def scene_to_dict(scene: Scene) -> Dict[str, Any]:
    document = _header(SCENE_FORMAT)
    document["plane_convention"] = PLANE_CONVENTION
    document["camera_convention"] = CAMERA_CONVENTION
    document["planes"] = [plane_to_dict(k, p) for k, p in enumerate(scene.planes)]
    document["adjacency"] = _pairs(scene.adjacency)
    document["footprint"] = footprint_to_dict(scene.footprint)
    document["cameras"] = [dict(id=k, **pose_to_dict(c.pose), intrinsics=intrinsics_to_dict(c.intrinsics),
                                width=int(c.width), height=int(c.height))
                           for k, c in enumerate(scene.cameras)]
    document["spec"] = scene.spec.to_dict() if scene.spec is not None else None
    return document


def _by_id(entries: List[Tuple[int, Any]]) -> List[Any]:
    return [value for _, value in sorted(entries, key=lambda e: e[0])]


def _scene_from_document(document: Dict[str, Any], cursor: _JsonCursor) -> Scene:
    planes = _by_id([(int(p["id"]), plane_from_dict(p)) for p in cursor.records(document, "planes")])
    cameras = _by_id([(int(c["id"]), CameraView(pose_from_dict(c), intrinsics_from_dict(c["intrinsics"]),
                                                 int(c["width"]), int(c["height"])))
                      for c in cursor.records(document, "cameras")])
    spec_fields = cursor.field(document, "spec", None)
    spec = SceneSpec(**spec_fields) if spec_fields else None
    adjacency = _adjacency_from_pairs(len(planes), cursor.field(document, "adjacency"))
    footprint = footprint_from_dict(cursor.field(document, "footprint"))
    return Scene(planes, adjacency, cameras, footprint, spec)


def write_scene(file_path: PathLike, scene: Scene) -> Path:
    return write_json(file_path, scene_to_dict(scene))


def read_scene(file_path: PathLike) -> Scene:
    document = read_json(file_path, SCENE_FORMAT)
    return _parse(file_path, _scene_from_document, document)


def layout_to_dict(layout: Layout) -> Dict[str, Any]:
    """布局文档：平面（含来源）、邻接、交线、交点、轮廓、墙面线段与相机"""
    document = _header(LAYOUT_FORMAT)
    document["plane_convention"] = PLANE_CONVENTION
    document["camera_convention"] = CAMERA_CONVENTION
    document["up"] = _vector(layout.up)
    planes = []
    for k, plane in enumerate(layout.planes):
        entry = plane_to_dict(k, plane)
        sources = layout.provenance[k] if k < len(layout.provenance) else []
        entry["provenance"] = [[int(i), int(j)] for i, j in sources]
        planes.append(entry)
    document["planes"] = planes
    document["adjacency"] = _pairs(layout.adjacency)
    document["lines"] = [{"planes": list(line.planes), "point": _vector(line.point),
                          "direction": _vector(line.direction)} for line in layout.lines]
    document["junctions"] = [{"planes": list(point.planes), "position": _vector(point.position)}
                             for point in layout.junctions]
    document["footprint"] = footprint_to_dict(layout.footprint)
    document["wall_segments"] = [{"plane_id": int(k), "endpoints": _matrix(v)}
                                 for k, v in sorted(layout.wall_segments.items())]
    document["cameras"] = [dict(id=int(k), **pose_to_dict(v)) for k, v in sorted(layout.cameras.items())]
    document["unmerged"] = [[int(i), int(j)] for i, j in layout.unmerged]
    return document


def _layout_from_document(document: Dict[str, Any], cursor: _JsonCursor) -> Layout:
    entries = _by_id([(int(p["id"]), (plane_from_dict(p), [tuple(s) for s in p.get("provenance", [])]))
                      for p in cursor.records(document, "planes")])
    planes = [plane for plane, _ in entries]
    provenance = [sources for _, sources in entries]
    adjacency = _adjacency_from_pairs(len(planes), cursor.field(document, "adjacency"))
    # 交线与交点由平面与邻接关系重新计算
    lines, junctions = layout_primitives(planes, adjacency)
    segments = {int(s["plane_id"]): np.asarray(s["endpoints"], dtype=np.float64)
                for s in cursor.records(document, "wall_segments", [])}
    cameras = {int(c["id"]): pose_from_dict(c) for c in cursor.records(document, "cameras", [])}
    up = np.asarray(cursor.field(document, "up", [0.0, 1.0, 0.0]), dtype=np.float64)
    unmerged = [tuple(k) for k in cursor.records(document, "unmerged", [])]
    footprint = footprint_from_dict(cursor.field(document, "footprint", None))
    return Layout(planes, lines, junctions, adjacency, provenance, footprint, segments, cameras, up, unmerged)


def write_layout(file_path: PathLike, layout: Layout) -> Path:
    return write_json(file_path, layout_to_dict(layout))


def read_layout(file_path: PathLike) -> Layout:
    document = read_json(file_path, LAYOUT_FORMAT)
    return _parse(file_path, _layout_from_document, document)


def partials_to_dict(partials: Sequence[PartialLayout]) -> Dict[str, Any]:
    """单视角布局（相机坐标系），供 layout 子命令输出"""
    document = _header(PARTIALS_FORMAT)
    document["plane_convention"] = "camera frame; normal pointing toward the camera"
    views = []
    for partial in sorted(partials, key=lambda p: p.image_id):
        views.append({
            "image_id": partial.image_id,
            "planes": [dict(plane_to_dict(k, lifted.plane), mask_id=lifted.mask_id,
                            pixel_count=lifted.pixel_count, residual_rms=float(lifted.residual_rms))
                       for k, lifted in enumerate(partial.planes)],
            "adjacency": _pairs(partial.adjacency),
            "lines": [{"planes": list(line.planes), "point": _vector(line.point),
                       "direction": _vector(line.direction)} for line in partial.lines],
            "junctions": [{"planes": list(point.planes), "position": _vector(point.position)}
                          for point in partial.junctions],
            "skipped": [{"mask_id": s.mask_id, "pixel_count": s.pixel_count, "reason": s.reason}
                        for s in partial.skipped],
        })
    document["views"] = views
    return document


def poses_to_dict(world: Dict[int, Tuple[PoseSE3, float]], scales: Dict[Tuple[int, int], float],
                  report: Dict[str, Any], components: Sequence[Sequence[int]]) -> Dict[str, Any]:
    document = _header(POSES_FORMAT)
    document["camera_convention"] = CAMERA_CONVENTION
    document["views"] = [dict(image_id=int(v), **pose_to_dict(pose), scale=float(s))
                         for v, (pose, s) in sorted(world.items())]
    document["edge_scales"] = [{"i": int(n), "j": int(m), "sigma": float(s)} for (n, m), s in sorted(scales.items())]
    document["components"] = [sorted(int(v) for v in c) for c in components]
    document["report"] = report
    return document


def read_poses(file_path: PathLike) -> Dict[int, Tuple[PoseSE3, float]]:
    """读取 align 子命令输出的世界位姿与尺度"""
    document = read_json(file_path, POSES_FORMAT)
    return _parse(file_path, lambda d, cursor: {int(v["image_id"]): (pose_from_dict(v), float(v["scale"]))
                                                for v in cursor.records(d, "views")}, document)


def segments_to_dict(result: MergeResult) -> Dict[str, Any]:
    """合并前的墙面线段（水平面坐标）及其聚类编号"""
    cluster_of = {}
    for cluster in result.clusters:
        for key in cluster.keys:
            cluster_of[key] = cluster.cluster_id
    document = _header(SEGMENTS_FORMAT)
    document["up"] = _vector(result.frame.up)
    document["theta"] = float(result.frame.theta)
    document["segments"] = [{"image_id": s.image_id, "source_plane_index": s.source_plane_index,
                             "orientation": s.orientation.value, "cluster": cluster_of.get(s.key),
                             "endpoints": _matrix(result.frame.unrotate(s.endpoints))}
                            for s in sorted(result.segments, key=lambda s: s.key)]
    return document


def read_segments(file_path: PathLike) -> List[Dict[str, Any]]:
    document = read_json(file_path, SEGMENTS_FORMAT)

    def build(d, cursor):
        segments = []
        for s in cursor.records(d, "segments"):
            Orientation(s["orientation"])
            endpoints = np.asarray(s["endpoints"], dtype=np.float64).reshape(2, 2)
            segments.append(dict(s, endpoints=endpoints))
        return segments

    return _parse(file_path, build, document)

# =========================================================
# 输入清单
# =========================================================


@dataclass
class ViewEntry:
    image_id: int
    masks: str
    intrinsics: Optional[Intrinsics] = None


@dataclass
class PairEntry:
    i: int
    j: int
    pointmap_self: str
    pointmap_other: str
    confidence_self: str
    confidence_other: str


@dataclass
class Manifest:
    """输入清单：每个视角的掩码与内参，每个有序图像对的点图与置信度文件

    路径相对于清单所在目录。
    """
    path: Path
    views: List[ViewEntry]
    pairs: List[PairEntry]
    scene: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def root(self) -> Path:
        return self.path.parent

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def view_ids(self) -> List[int]:
        return sorted(v.image_id for v in self.views)


def manifest_to_dict(manifest: Manifest) -> Dict[str, Any]:
    document = {"format": MANIFEST_FORMAT, "version": FORMAT_VERSION}
    document["views"] = [{"image_id": v.image_id, "masks": v.masks,
                          "intrinsics": intrinsics_to_dict(v.intrinsics) if v.intrinsics else None}
                         for v in sorted(manifest.views, key=lambda v: v.image_id)]
    document["pairs"] = [{"i": p.i, "j": p.j, "pointmap_self": p.pointmap_self, "pointmap_other": p.pointmap_other,
                          "confidence_self": p.confidence_self, "confidence_other": p.confidence_other}
                         for p in sorted(manifest.pairs, key=lambda p: (p.i, p.j))]
    document["scene"] = manifest.scene
    return document


def _manifest_from_document(path: Path, document: Dict[str, Any], cursor: _JsonCursor) -> Manifest:
    views = [ViewEntry(int(v["image_id"]), str(v["masks"]),
                       intrinsics_from_dict(v["intrinsics"]) if v.get("intrinsics") else None)
             for v in cursor.records(document, "views")]
    pairs = [PairEntry(int(p["i"]), int(p["j"]), str(p["pointmap_self"]), str(p["pointmap_other"]),
                       str(p["confidence_self"]), str(p["confidence_other"]))
             for p in cursor.records(document, "pairs")]
    seen = set()
    for index, view in enumerate(views):
        if view.image_id in seen:
            raise _ContentError(("views", index), f"视角编号 {view.image_id} 重复")
        seen.add(view.image_id)
    for index, pair in enumerate(pairs):
        if pair.i == pair.j or pair.i not in seen or pair.j not in seen:
            raise _ContentError(("pairs", index), f"图像对 ({pair.i}, {pair.j}) 引用了不存在或相同的视角")
    return Manifest(path, views, pairs, cursor.field(document, "scene", None))


def load_manifest(file_path: PathLike) -> Manifest:
    """读取输入清单

    Raises:
        InputFileError: 清单不存在
        MalformedFileError: 清单格式错误
    """
    path = Path(file_path)
    document = read_json(path, MANIFEST_FORMAT)
    return _parse(path, lambda d, cursor: _manifest_from_document(path, d, cursor), document)


def load_bundles(manifest: Manifest, views: Optional[Sequence[int]] = None) -> List[ViewBundle]:
    """按清单读取全部图像对数据

    Args:
        manifest: 输入清单
        views: 只读取两端都在该集合中的图像对，None表示全部

    Returns:
        List[ViewBundle]: 按 (i, j) 排序
    """
    entries = {v.image_id: v for v in manifest.views}
    masks: Dict[int, np.ndarray] = {}
    bundles = []
    for pair in sorted(manifest.pairs, key=lambda p: (p.i, p.j)):
        if views is not None and (pair.i not in views or pair.j not in views):
            continue
        if pair.i not in masks:
            masks[pair.i] = read_mask(manifest.resolve(entries[pair.i].masks))
        pm_self = read_pointmap(manifest.resolve(pair.pointmap_self))
        pm_other = read_pointmap(manifest.resolve(pair.pointmap_other))
        conf_self = read_scalar_map(manifest.resolve(pair.confidence_self))
        conf_other = read_scalar_map(manifest.resolve(pair.confidence_other))
        # 无效像素的置信度不参与计算
        conf_self = np.where(pm_self.valid, conf_self, 0.0)
        conf_other = np.where(pm_other.valid, conf_other, 0.0)
        bundles.append(ViewBundle(pair.i, pair.j, pm_self, pm_other, conf_self, conf_other,
                                  masks[pair.i], entries[pair.i].intrinsics))
    logger.debug(f"从清单 {manifest.path} 读取了 {len(bundles)} 个图像对")
    return bundles


def save_scene_directory(output_dir: PathLike, scene: Scene, bundles: Sequence[ViewBundle]) -> Path:
    """写出合成场景目录：scene.json、各视角掩码、各图像对的点图与置信度，以及清单

    Returns:
        Path: 清单文件路径
    """
    root = ensure_dir(output_dir)
    ensure_dir(root / "views")
    ensure_dir(root / "pairs")
    views: Dict[int, ViewEntry] = {}
    pairs = []
    for bundle in sorted(bundles, key=lambda b: b.key):
        i, j = bundle.key
        if i not in views:
            mask_name = f"views/view_{i}_masks.lfpm"
            write_mask(root / mask_name, bundle.plane_masks)
            views[i] = ViewEntry(i, mask_name, bundle.intrinsics)
        stem = f"pairs/pair_{i}_{j}"
        write_pointmap(root / f"{stem}_pointmap_self.lfpm", bundle.pointmap_self)
        write_pointmap(root / f"{stem}_pointmap_other.lfpm", bundle.pointmap_other)
        write_scalar_map(root / f"{stem}_confidence_self.lfpm", bundle.confidence_self)
        write_scalar_map(root / f"{stem}_confidence_other.lfpm", bundle.confidence_other)
        pairs.append(PairEntry(i, j, f"{stem}_pointmap_self.lfpm", f"{stem}_pointmap_other.lfpm",
                               f"{stem}_confidence_self.lfpm", f"{stem}_confidence_other.lfpm"))
    write_scene(root / SCENE_FILE_NAME, scene)
    manifest = Manifest(root / MANIFEST_FILE_NAME, list(views.values()), pairs, SCENE_FILE_NAME)
    write_json(manifest.path, manifest_to_dict(manifest))
    logger.info(f"场景目录已写出: {root}（{len(views)} 个视角, {len(pairs)} 个图像对）")
    return manifest.path
