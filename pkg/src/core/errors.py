#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
异常定义 - 布局重建流水线中使用的全部异常类型

命令行会把"输入类"异常映射为退出码2，其余异常映射为退出码1。
"""

from pathlib import Path
from typing import Optional, Union


class LayoutFuseError(Exception):
    """所有项目异常的基类"""

    # 命令行退出码
    exit_code = 1


class InputError(LayoutFuseError):
    """输入数据有问题（用户可修正）"""

    exit_code = 2


class InputFormatError(InputError):
    """输入数组的数值或尺寸不合法，例如深度图中出现非有限值"""


class DegenerateInputError(LayoutFuseError):
    """退化输入，例如点数不足或共线

    Attributes:
        rank: 实际达到的秩
    """

    def __init__(self, message: str, rank: int):
        super().__init__(f"{message} (rank={rank})")
        self.rank = rank


class ParallelPlanesError(LayoutFuseError):
    """两个平面（近似）平行，交线不存在"""


class DegenerateConfigurationError(LayoutFuseError):
    """三个平面的法向矩阵奇异，交点不存在"""


class SceneSpecError(InputError):
    """场景规格不合法"""


class RenderError(LayoutFuseError):
    """渲染失败，例如相机位于房间外部"""


class AlignmentError(LayoutFuseError):
    """全局对齐的前置条件不满足"""


class DomainError(LayoutFuseError):
    """参数超出定义域，例如尺度σ ≤ 0"""


class MissingPlaneError(LayoutFuseError):
    """所有视角中都缺少某类结构平面"""


class MissingFloorError(MissingPlaneError):
    """没有任何视角检测到地面"""


class MissingCeilingError(MissingPlaneError):
    """没有任何视角检测到天花板"""


class MetricError(LayoutFuseError):
    """评估指标无法计算"""


class FrameMismatchError(InputError):
    """预测结果与真值的坐标系不兼容"""


class InputFileError(InputError):
    """输入文件缺失或无法读取"""

    def __init__(self, path: Union[str, Path], message: str = "文件不存在"):
        super().__init__(f"{message}: {path}")
        self.path = Path(path)


class MalformedFileError(InputError):
    """文件格式错误，附带出错的文件与字节偏移"""

    def __init__(self, path: Union[str, Path], offset: Optional[int], message: str):
        location = f"{path}" if offset is None else f"{path} @ byte {offset}"
        super().__init__(f"文件格式错误 [{location}]: {message}")
        self.path = Path(path)
        self.offset = offset
