#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
LayoutFuse - 版本信息
"""

# 版本号格式：主版本号.次版本号.修订号
VERSION = "0.1.0"
BUILD_TYPE = "beta"  # release, beta, alpha, dev


def get_version_string(program: str = "LayoutFuse") -> str:
    """命令行 --version 显示的完整版本字符串"""
    return f"{program} v{VERSION} ({BUILD_TYPE})"
