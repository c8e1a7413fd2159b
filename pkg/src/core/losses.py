#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
损失函数模块 - 点图回归损失与置信度损失的纯函数实现

仅用于验证与对齐目标的构造，不涉及网络训练。
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    from .errors import DegenerateInputError, InputFormatError
    from .geom_core import Pointmap
except ImportError:
    from errors import DegenerateInputError, InputFormatError
    from geom_core import Pointmap

DEFAULT_ALPHA = 0.2


@dataclass(frozen=True)
class LossParams:
    """置信度损失参数

    Attributes:
        alpha: 置信度正则项权重 α
        metric_mode: 真值是否为度量尺度
    """
    alpha: float = DEFAULT_ALPHA
    metric_mode: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise InputFormatError(f"alpha 必须为正数，当前为 {self.alpha}")


def _mean_norm(points: np.ndarray) -> float:
    return float(np.linalg.norm(points, axis=-1).mean())


def regr_loss(pred: Pointmap, gt: Pointmap, metric_mode: bool = False) -> np.ndarray:
    """逐像素回归损失

    非度量模式：ℓ = ‖X/z − X̄/z̄‖²，z、z̄ 为有效点到原点的平均距离；
    度量模式：ℓ = ‖X − X̄‖²/z̄。有效像素集合取自真值掩码，其余像素为0。

    Raises:
        InputFormatError: 尺寸不一致
        DegenerateInputError: 没有有效像素或归一化因子为0
    """
    if pred.points.shape != gt.points.shape:
        raise InputFormatError(f"预测点图尺寸 {pred.points.shape} 与真值 {gt.points.shape} 不一致")
    valid = gt.valid
    count = int(valid.sum())
    if count == 0:
        raise DegenerateInputError("真值点图没有有效像素", rank=0)

    x_pred = pred.points[valid]
    x_gt = gt.points[valid]
    z_gt = _mean_norm(x_gt)
    if z_gt == 0:
        raise DegenerateInputError("真值点到原点的平均距离为0", rank=0)

    if metric_mode:
        values = np.sum((x_pred - x_gt) ** 2, axis=-1) / z_gt
    else:
        z_pred = _mean_norm(x_pred)
        if z_pred == 0:
            raise DegenerateInputError("预测点到原点的平均距离为0", rank=0)
        values = np.sum((x_pred / z_pred - x_gt / z_gt) ** 2, axis=-1)

    loss = np.zeros(valid.shape)
    loss[valid] = values
    return loss


def conf_loss(pred: Pointmap, gt: Pointmap, C, params: LossParams = LossParams()) -> float:
    """单个视角的置信度加权损失 Σ C·ℓ − α·log C

    Raises:
        InputFormatError: 有效像素处置信度非正
    """
    C = np.asarray(C, dtype=np.float64)
    if C.shape != gt.valid.shape:
        raise InputFormatError(f"置信度尺寸 {C.shape} 与点图尺寸 {gt.valid.shape} 不一致")
    confidence = C[gt.valid]
    if np.any(~np.isfinite(confidence)) or np.any(confidence <= 0):
        raise InputFormatError("置信度必须为正")
    loss = regr_loss(pred, gt, params.metric_mode)[gt.valid]
    return float(np.sum(confidence * loss - params.alpha * np.log(confidence)))


def pair_conf_loss(pred_pair, gt_pair, conf_pair, params: LossParams = LossParams()) -> float:
    """图像对的置信度损失：两个视角的 conf_loss 之和

    Args:
        pred_pair: (X_{1,1}, X_{2,1}) 预测点图
        gt_pair: 对应的真值点图
        conf_pair: 对应的置信度图
    """
    return sum(conf_loss(p, g, c, params) for p, g, c in zip(pred_pair, gt_pair, conf_pair))
