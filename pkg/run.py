#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
LayoutFuse 启动脚本
"""

import os
import sys
import traceback


def main():
    """主入口函数"""
    # 添加项目目录到Python路径
    current_dir = os.path.dirname(os.path.abspath(__file__))
    sys.path.insert(0, current_dir)

    # 检测是否在打包环境中运行
    is_frozen = getattr(sys, 'frozen', False)

    try:
        if is_frozen:
            # 打包环境中模块是扁平的
            import import_helper
            import_helper.setup_paths()
            from layout_io.main import main as start_app
        else:
            from src.main import main as start_app
    except ImportError as e:
        print(f"错误: 无法导入核心模块，请检查项目结构。详细错误: {e}", file=sys.stderr)
        traceback.print_exc()
        return 1

    return start_app(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
