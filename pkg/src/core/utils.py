#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
工具模块 - 提供项目通用的工具函数
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

def setup_logger(name=None, log_level=logging.INFO):
    """配置并返回日志记录器

    Args:
        name: 日志记录器名称，默认为None（使用root logger）
        log_level: 日志级别，默认为INFO

    Returns:
        logging.Logger: 配置好的日志记录器
    """
    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    return logging.getLogger(name)

def format_time(seconds: float) -> str:
    """格式化时间为易读形式

    Args:
        seconds: 时间秒数

    Returns:
        str: 格式化后的时间字符串
    """
    # 不足1秒时以毫秒显示
    if seconds < 1:
        return f"{seconds * 1000:.1f}毫秒"
    if seconds < 60:
        return f"{seconds:.2f}秒"
    if seconds < 3600:
        return f"{seconds / 60:.2f}分钟"
    return f"{seconds / 3600:.2f}小时"

def ensure_dir(directory):
    """确保目录存在，如果不存在则创建

    Args:
        directory: 目录路径

    Returns:
        Path: 目录路径对象
    """
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path

def atomic_write_bytes(file_path: Union[str, Path], data: bytes) -> Path:
    """原子写入二进制文件（先写临时文件，再重命名）

    Args:
        file_path: 目标文件路径
        data: 要写入的字节

    Returns:
        Path: 目标文件路径对象
    """
    path = Path(file_path)
    ensure_dir(path.parent)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    return path

def atomic_write_text(file_path: Union[str, Path], text: str, encoding: str = 'utf-8') -> Path:
    """原子写入文本文件

    Args:
        file_path: 目标文件路径
        text: 文本内容
        encoding: 编码，默认utf-8

    Returns:
        Path: 目标文件路径对象
    """
    return atomic_write_bytes(file_path, text.encode(encoding))

_JSON_WHITESPACE = b" \t\r\n"


def _skip_json_whitespace(raw: bytes, pos: int) -> int:
    while pos < len(raw) and raw[pos] in _JSON_WHITESPACE:
        pos += 1
    return pos


def _scan_json_string(raw: bytes, pos: int) -> Tuple[int, str]:
    end = pos + 1
    while raw[end] != 0x22:
        end += 2 if raw[end] == 0x5C else 1
    return end + 1, json.loads(raw[pos:end + 1].decode("utf-8"))


def _scan_json_value(raw: bytes, pos: int, path: Tuple, offsets: Dict[Tuple, int]) -> int:
    pos = _skip_json_whitespace(raw, pos)
    offsets[path] = pos
    head = raw[pos]
    if head == 0x7B:  # {
        pos = _skip_json_whitespace(raw, pos + 1)
        if raw[pos] == 0x7D:
            return pos + 1
        while True:
            pos, key = _scan_json_string(raw, _skip_json_whitespace(raw, pos))
            pos = _skip_json_whitespace(raw, pos)  # ':'
            pos = _skip_json_whitespace(raw, _scan_json_value(raw, pos + 1, path + (key,), offsets))
            if raw[pos] == 0x7D:
                return pos + 1
            pos += 1  # ','
    if head == 0x5B:  # [
        pos = _skip_json_whitespace(raw, pos + 1)
        if raw[pos] == 0x5D:
            return pos + 1
        index = 0
        while True:
            pos = _skip_json_whitespace(raw, _scan_json_value(raw, pos, path + (index,), offsets))
            if raw[pos] == 0x5D:
                return pos + 1
            pos += 1
            index += 1
    if head == 0x22:
        return _scan_json_string(raw, pos)[0]
    while pos < len(raw) and raw[pos] not in b",]}" and raw[pos] not in _JSON_WHITESPACE:
        pos += 1
    return pos


def json_value_offsets(raw: bytes) -> Dict[Tuple, int]:
    """已通过解析的JSON文本中每个值的起始字节偏移

    键为值的路径，例如 ("planes", 2, "normal")；根对象的路径为 ()。
    """
    offsets: Dict[Tuple, int] = {}
    _scan_json_value(raw, 0, (), offsets)
    return offsets


def json_offset(raw: bytes, path: Sequence) -> int:
    """路径对应值的字节偏移；路径不存在时退回到最近的存在的上级"""
    offsets = json_value_offsets(raw)
    path = tuple(path)
    while path and path not in offsets:
        path = path[:-1]
    return offsets.get(path, 0)
