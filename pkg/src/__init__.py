#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
LayoutFuse - 包定义
"""
