#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
布局重建命令行工具包 - 文件格式、流水线编排与渲染

支持合成场景生成、单视角布局、全局对齐、多视角合并、评估，
以及俯视图SVG和线框OBJ的导出。
"""

# 导入主要组件，方便外部直接使用
from .main import main
from .pipeline import PipelineRunner
from .render import render_birdview, render_wireframe
