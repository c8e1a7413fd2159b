#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
统计模块 - 记录和展示流水线运行的统计信息
"""

import time
from typing import Dict, Optional

try:
    from ..utils import format_time, setup_logger
except ImportError:
    from utils import format_time, setup_logger

# 设置日志记录器
logger = setup_logger(__name__)

# 统计数据全局对象
statistics = {
    "start_time": 0,          # 运行开始时间
    "end_time": 0,            # 运行结束时间
    "stage_times": {},        # 各阶段耗时：{阶段名: 秒}
    "views": 0,               # 视角数
    "pairs": 0,               # 图像对数
    "planes_lifted": 0,       # 单视角拟合得到的平面总数
    "masks_skipped": 0,       # 被跳过的掩码数
    "segments": 0,            # 投影得到的墙面线段数
    "unmerged_segments": 0,   # 偏离坐标轴未参与合并的线段数
    "merged_planes": 0,       # 最终布局的平面数
    "align_iterations": 0,    # 全局对齐迭代次数
    "align_objective": None,  # 全局对齐最终目标值
    "components": 1,          # 视角图连通分量数
}


def reset_statistics():
    """重置统计数据"""
    global statistics

    statistics["start_time"] = time.time()
    statistics["end_time"] = 0
    statistics["stage_times"] = {}
    for key in ("views", "pairs", "planes_lifted", "masks_skipped", "segments",
                "unmerged_segments", "merged_planes", "align_iterations"):
        statistics[key] = 0
    statistics["align_objective"] = None
    statistics["components"] = 1


def record_stage(stage: str, seconds: float):
    """累加某个阶段的耗时"""
    statistics["stage_times"][stage] = statistics["stage_times"].get(stage, 0.0) + seconds


def update_counts(**kwargs):
    """更新计数类统计项

    Args:
        **kwargs: 统计项名称与取值，未知名称会被忽略
    """
    for key, value in kwargs.items():
        if key not in statistics:
            logger.debug(f"未知统计项: {key}")
            continue
        statistics[key] = value


def finalize_statistics():
    """完成统计，记录结束时间"""
    statistics["end_time"] = time.time()


def summary_counts() -> Dict:
    """不含耗时的统计项（写入报告，保证重复运行输出一致）"""
    return {key: statistics[key] for key in ("views", "pairs", "planes_lifted", "masks_skipped", "segments",
                                             "unmerged_segments", "merged_planes", "align_iterations",
                                             "align_objective", "components")}


def print_pipeline_summary(output_dir: Optional[str] = None) -> None:
    """打印运行结果摘要"""
    total_runtime = statistics["end_time"] - statistics["start_time"]

    print("\n" + "=" * 50)
    print("运行结果统计")
    print("=" * 50)
    print(f"总运行时间: {format_time(total_runtime)}")
    print(f"视角/图像对: {statistics['views']} / {statistics['pairs']}")

    if statistics["components"] > 1:
        print(f"视角图连通分量: {statistics['components']}（只处理最大的分量）")

    print(f"\n单视角布局:")
    print(f"  - 拟合平面: {statistics['planes_lifted']} 个")
    if statistics["masks_skipped"] > 0:
        print(f"  - 跳过掩码: {statistics['masks_skipped']} 个")

    if statistics["align_objective"] is not None:
        print(f"\n全局对齐:")
        print(f"  - 迭代次数: {statistics['align_iterations']}")
        print(f"  - 最终目标值: {statistics['align_objective']:.6g}")

    print(f"\n多视角合并:")
    print(f"  - 墙面线段: {statistics['segments']} 条")
    if statistics["unmerged_segments"] > 0:
        print(f"  - 未合并线段: {statistics['unmerged_segments']} 条")
    print(f"  - 布局平面: {statistics['merged_planes']} 个")

    if statistics["stage_times"]:
        print(f"\n阶段耗时:")
        for stage, seconds in statistics["stage_times"].items():
            print(f"  - {stage}: {format_time(seconds)}")

    if output_dir:
        print(f"\n输出目录: {output_dir}")
    print("=" * 50)
