#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
核心功能模块 - 几何、合成场景、单视角布局、全局对齐、多视角合并与评估
"""
