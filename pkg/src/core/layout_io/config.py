#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
流水线配置模块
"""

import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

try:
    from ..errors import InputError, InputFileError, MalformedFileError
    from ..global_align import AlignOptions
    from ..metrics import MatchThresholds
    from ..multi_view_merge import MergeParams
    from ..single_view_layout import G1Params
    from ..utils import atomic_write_text, json_offset, setup_logger
except ImportError:
    from errors import InputError, InputFileError, MalformedFileError
    from global_align import AlignOptions
    from metrics import MatchThresholds
    from multi_view_merge import MergeParams
    from single_view_layout import G1Params
    from utils import atomic_write_text, json_offset, setup_logger

# 设置日志记录器
logger = setup_logger(__name__)

# =========================================================
# 全局常量定义
# =========================================================

# 配置文件名
CONFIG_FILE_NAME = "layoutfuse.json"

# 并行线程数上限的环境变量
THREADS_ENV_VAR = "LAYOUTFUSE_THREADS"

# 输出文件名
MANIFEST_FILE_NAME = "manifest.json"
SCENE_FILE_NAME = "scene.json"
LAYOUT_FILE_NAME = "layout.json"
REPORT_FILE_NAME = "report.json"
EVAL_FILE_NAME = "eval.json"
PARTIALS_FILE_NAME = "partials.json"
POSES_FILE_NAME = "poses.json"
SEGMENTS_FILE_NAME = "segments.json"

DEFAULT_OUTPUT_DIR = "layoutfuse_output"
DEFAULT_SEED = 0

# 配置文件中各参数段对应的数据类
SECTIONS = {
    "g1": G1Params,
    "align": AlignOptions,
    "merge": MergeParams,
    "thresholds": MatchThresholds,
}


@dataclass
class PipelineConfig:
    """流水线配置：各阶段参数 + 输入输出路径"""
    manifest: Optional[Path] = None
    g1: G1Params = field(default_factory=G1Params)
    align: AlignOptions = field(default_factory=AlignOptions)
    merge: MergeParams = field(default_factory=MergeParams)
    thresholds: MatchThresholds = field(default_factory=MatchThresholds)
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    seed: int = DEFAULT_SEED
    views: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {name: asdict(getattr(self, name)) for name in SECTIONS}
        data["g1"]["gravity_up"] = list(data["g1"]["gravity_up"])
        data["output_dir"] = str(self.output_dir)
        data["seed"] = self.seed
        return data

    def check_paths(self):
        """检查引用的路径在运行时存在

        Raises:
            InputFileError: 清单文件不存在
        """
        if self.manifest is not None and not Path(self.manifest).is_file():
            raise InputFileError(self.manifest, "清单文件不存在")


def get_possible_config_paths() -> List[str]:
    """获取可能的配置文件路径列表

    按优先级返回：
    1. 当前工作目录
    2. 启动脚本所在目录
    3. 用户主目录

    Returns:
        List[str]: 可能的配置文件路径列表
    """
    possible_paths = [os.path.join(os.getcwd(), CONFIG_FILE_NAME)]

    possible_paths.append(os.path.join(str(script_dir()), CONFIG_FILE_NAME))

    possible_paths.append(os.path.join(os.path.expanduser("~"), CONFIG_FILE_NAME))

    # 去重
    return list(dict.fromkeys(possible_paths))


def _build_section(path: Path, name: str, cls, values: Any, offset: int):
    if not isinstance(values, dict):
        raise MalformedFileError(path, offset, f"配置段 '{name}' 必须是对象")
    known = {f.name for f in fields(cls)}
    for key in sorted(set(values) - known):
        logger.warning(f"配置段 '{name}' 中的未知参数 '{key}' 已忽略")
    kwargs = {k: v for k, v in values.items() if k in known}
    try:
        if "gravity_up" in kwargs:
            kwargs["gravity_up"] = tuple(float(x) for x in kwargs["gravity_up"])
        return replace(cls(), **kwargs)
    except (TypeError, ValueError, InputError) as e:
        raise MalformedFileError(path, offset, f"配置段 '{name}' 不合法: {e}") from e


def _load_from_file(file_path: Path) -> PipelineConfig:
    """从指定文件加载配置

    Raises:
        MalformedFileError: JSON格式或参数不合法
    """
    raw = Path(file_path).read_bytes()
    try:
        text = raw.decode("utf-8")
        data = json.loads(text)
    except UnicodeDecodeError as e:
        raise MalformedFileError(file_path, e.start, "不是UTF-8文本") from e
    except json.JSONDecodeError as e:
        raise MalformedFileError(file_path, len(text[:e.pos].encode("utf-8")), f"JSON解析失败: {e.msg}") from e
    if not isinstance(data, dict):
        raise MalformedFileError(file_path, 0, "配置文件顶层必须是对象")

    config = PipelineConfig()
    for name, cls in SECTIONS.items():
        if name in data:
            setattr(config, name, _build_section(file_path, name, cls, data[name], json_offset(raw, [name])))
    if "output_dir" in data:
        config.output_dir = Path(data["output_dir"])
    if "seed" in data:
        try:
            config.seed = int(data["seed"])
        except (TypeError, ValueError) as e:
            raise MalformedFileError(file_path, json_offset(raw, ["seed"]), f"seed 不合法: {data['seed']!r}") from e
    logger.info(f"成功加载配置文件: {file_path}")
    return config


def load_pipeline_config(config_path: Optional[str] = None) -> PipelineConfig:
    """加载流水线配置

    Args:
        config_path: 自定义配置文件路径，为None时按优先级查找，都不存在则使用默认值

    Returns:
        PipelineConfig: 配置对象

    Raises:
        InputFileError: 指定的配置文件不存在
    """
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise InputFileError(path, "配置文件不存在")
        return _load_from_file(path)

    for candidate in get_possible_config_paths():
        if os.path.exists(candidate):
            return _load_from_file(Path(candidate))

    logger.debug("未找到配置文件，使用默认参数")
    return PipelineConfig()


def create_config_template(config_path: Optional[str] = None) -> Optional[Path]:
    """创建配置文件模板

    Args:
        config_path: 自定义配置文件路径，为None时在当前工作目录创建

    Returns:
        Optional[Path]: 新建文件的路径；文件已存在时返回None
    """
    path = Path(config_path) if config_path else Path(os.getcwd()) / CONFIG_FILE_NAME

    # 检查文件是否已存在，避免覆盖
    if path.exists():
        logger.warning(f"配置文件已存在，跳过创建: {path}")
        return None

    template = PipelineConfig().to_dict()
    atomic_write_text(path, json.dumps(template, ensure_ascii=False, indent=4) + "\n")
    logger.info(f"已创建配置文件模板: {path}")
    return path


def thread_limit() -> int:
    """并行线程数：LAYOUTFUSE_THREADS（正整数）优先，否则为CPU核数"""
    default = os.cpu_count() or 1
    value = os.environ.get(THREADS_ENV_VAR)
    if value is None:
        return default
    try:
        threads = int(value)
    except ValueError:
        logger.warning(f"{THREADS_ENV_VAR}={value!r} 不是整数，已忽略")
        return default
    if threads < 1:
        logger.warning(f"{THREADS_ENV_VAR}={value!r} 必须为正整数，已忽略")
        return default
    return threads


def script_dir() -> Path:
    """可执行文件或启动脚本所在目录"""
    if getattr(sys, 'frozen', False):
        return Path(sys.executable).parent
    return Path(os.path.abspath(sys.argv[0])).parent
