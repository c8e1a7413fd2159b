#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
LayoutFuse - 主程序入口

由平面掩码与成对点图重建房间结构布局：
1. 单视角布局：拟合平面、推断邻接、计算交线与交点
2. 全局对齐：在视图图的最大生成树上联合优化位姿、尺度与点图
3. 多视角合并：投影墙面、估计主方向、合并重复墙面并组装布局
"""

import sys
from typing import List, Optional

try:
    from .core.layout_io.main import main as cli_main
except ImportError:
    import import_helper

    import_helper.setup_paths()
    from layout_io.main import main as cli_main


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回命令行退出码"""
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
