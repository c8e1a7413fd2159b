#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
流水线模块 - 单视角布局 → 全局对齐 → 多视角合并

单视角阶段按视角并发执行（线程数受 LAYOUTFUSE_THREADS 限制）。
"""

import concurrent.futures
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

try:
    from ..errors import AlignmentError, InputFormatError
    from ..geom_core import PoseSE3
    from ..global_align import AlignmentState, AlignReport, align, build_view_graph, world_poses
    from ..metrics import evaluate_layout
    from ..multi_view_merge import MergeResult, merge_partial_layouts
    from ..scene_synth import ViewBundle
    from ..single_view_layout import PartialLayout, build_partial_layout
    from ..utils import ensure_dir, setup_logger
    from . import config as cfg
    from .config import PipelineConfig, thread_limit
    from .file_utils import (Manifest, load_bundles, load_manifest, poses_to_dict,
                             read_scene, segments_to_dict, write_json, write_layout)
    from .stats import record_stage, summary_counts, update_counts
except ImportError:
    from errors import AlignmentError, InputFormatError
    from geom_core import PoseSE3
    from global_align import AlignmentState, AlignReport, align, build_view_graph, world_poses
    from metrics import evaluate_layout
    from multi_view_merge import MergeResult, merge_partial_layouts
    from scene_synth import ViewBundle
    from single_view_layout import PartialLayout, build_partial_layout
    from utils import ensure_dir, setup_logger
    import config as cfg
    from config import PipelineConfig, thread_limit
    from file_utils import (Manifest, load_bundles, load_manifest, poses_to_dict,
                            read_scene, segments_to_dict, write_json, write_layout)
    from stats import record_stage, summary_counts, update_counts

logger = setup_logger(__name__)

WorldPoses = Dict[int, Tuple[PoseSE3, float]]


@dataclass
class AlignmentOutcome:
    """全局对齐结果（只含最大连通分量）"""
    state: AlignmentState
    report: AlignReport
    world: WorldPoses
    components: List[List[int]] = field(default_factory=list)


@dataclass
class PipelineResult:
    manifest: Manifest
    views: List[int]
    partials: Dict[int, PartialLayout]
    alignment: AlignmentOutcome
    merge: MergeResult
    evaluation: Optional[Dict] = None


class PipelineRunner:
    """布局重建流水线"""

    def __init__(self, config: PipelineConfig, show_progress: bool = False, workers: Optional[int] = None):
        """初始化流水线

        Args:
            config: 流水线配置
            show_progress: 是否显示进度条
            workers: 单视角阶段的并发线程数，None表示使用 thread_limit()
        """
        self.config = config
        self.show_progress = show_progress
        self.workers = workers if workers is not None else thread_limit()

    # ------------------------------------------------------------------
    # 输入
    # ------------------------------------------------------------------

    def load_inputs(self, manifest_path=None) -> Tuple[Manifest, List[int], List[ViewBundle]]:
        """读取清单与图像对数据，--views K 时只保留编号最小的K个视角"""
        path = manifest_path if manifest_path is not None else self.config.manifest
        if path is None:
            raise InputFormatError("未指定输入清单")
        start = time.time()
        manifest = load_manifest(path)
        views = manifest.view_ids()
        if self.config.views is not None:
            if self.config.views < 1:
                raise InputFormatError(f"--views 必须为正整数，实际为 {self.config.views}")
            if self.config.views > len(views):
                logger.warning(f"请求 {self.config.views} 个视角，但清单中只有 {len(views)} 个")
            views = views[:self.config.views]
        bundles = load_bundles(manifest, views)
        if not bundles:
            raise InputFormatError(f"清单 {manifest.path} 中选定视角 {views} 之间没有图像对")
        record_stage("读取输入", time.time() - start)
        update_counts(views=len(views), pairs=len(bundles))
        logger.info(f"读取清单 {manifest.path}: {len(views)} 个视角, {len(bundles)} 个图像对")
        return manifest, views, bundles

    # ------------------------------------------------------------------
    # 单视角布局
    # ------------------------------------------------------------------

    def run_layouts(self, bundles: Sequence[ViewBundle]) -> Dict[int, PartialLayout]:
        """每个视角用其第一个图像对（按伙伴编号）的自身点图做单视角布局"""
        start = time.time()
        sources: Dict[int, ViewBundle] = {}
        for bundle in sorted(bundles, key=lambda b: b.key):
            sources.setdefault(bundle.image_id, bundle)

        partials: Dict[int, PartialLayout] = {}
        with tqdm(total=len(sources), desc="单视角布局", disable=not self.show_progress) as pbar:
            if self.workers <= 1:
                for view, bundle in sources.items():
                    partials[view] = build_partial_layout(bundle, self.config.g1)
                    pbar.update(1)
            else:
                with concurrent.futures.ThreadPoolExecutor(max_workers=self.workers) as executor:
                    futures = {executor.submit(build_partial_layout, bundle, self.config.g1): view
                               for view, bundle in sources.items()}
                    for future in concurrent.futures.as_completed(futures):
                        partials[futures[future]] = future.result()
                        pbar.update(1)

        partials = dict(sorted(partials.items()))
        record_stage("单视角布局", time.time() - start)
        update_counts(planes_lifted=sum(len(p.planes) for p in partials.values()),
                      masks_skipped=sum(len(p.skipped) for p in partials.values()))
        return partials

    # ------------------------------------------------------------------
    # 全局对齐
    # ------------------------------------------------------------------

    def run_alignment(self, bundles: Sequence[ViewBundle]) -> AlignmentOutcome:
        """全局对齐；视图图不连通时只对齐最大的连通分量

        Raises:
            AlignmentError: 对齐的前置条件不满足
        """
        start = time.time()
        graph = build_view_graph(bundles)
        components = graph.components
        if len(components) > 1:
            largest = max(components, key=lambda c: (len(c), -c[0]))
            dropped = [c for c in components if c is not largest]
            logger.warning(f"视图图有 {len(components)} 个连通分量，只处理最大的分量 {largest}，丢弃 {dropped}")
            members = set(largest)
            bundles = [b for b in bundles if b.image_id in members and b.partner_id in members]

        options = self.config.align
        if options.show_progress != self.show_progress:
            options = replace(options, show_progress=self.show_progress)
        state, report = align(bundles, options)
        record_stage("全局对齐", time.time() - start)
        update_counts(align_iterations=report.iterations, align_objective=report.objective,
                      components=len(components))
        return AlignmentOutcome(state, report, world_poses(state), components)

    # ------------------------------------------------------------------
    # 多视角合并
    # ------------------------------------------------------------------

    def run_merge(self, partials: Dict[int, PartialLayout], world: WorldPoses) -> MergeResult:
        """合并已对齐视角的局部布局"""
        start = time.time()
        aligned = [partials[v] for v in sorted(partials) if v in world]
        skipped = sorted(set(partials) - set(world))
        if skipped:
            logger.warning(f"视角 {skipped} 没有位姿，不参与合并")
        if not aligned:
            raise AlignmentError("没有任何已对齐的视角")
        result = merge_partial_layouts(aligned, world, self.config.merge)
        record_stage("多视角合并", time.time() - start)
        update_counts(segments=len(result.segments), unmerged_segments=len(result.layout.unmerged),
                      merged_planes=len(result.layout.planes))
        return result

    # ------------------------------------------------------------------
    # 完整流程
    # ------------------------------------------------------------------

    def run(self, manifest_path=None, evaluate: bool = False) -> PipelineResult:
        """运行完整流水线

        Args:
            manifest_path: 输入清单，None时使用配置中的路径
            evaluate: 清单引用了真值场景时是否同时计算评估指标
        """
        manifest, views, bundles = self.load_inputs(manifest_path)
        partials = self.run_layouts(bundles)
        alignment = self.run_alignment(bundles)
        merge = self.run_merge(partials, alignment.world)
        result = PipelineResult(manifest, views, partials, alignment, merge)
        if evaluate:
            if manifest.scene is None:
                logger.warning("清单没有引用真值场景，跳过评估")
            else:
                scene = read_scene(manifest.resolve(manifest.scene))
                result.evaluation = evaluate_layout(merge.layout, scene, self.config.thresholds)
        return result

    def write_outputs(self, result: PipelineResult, output_dir=None) -> Path:
        """写出 layout.json、report.json 与 segments.json"""
        root = ensure_dir(output_dir if output_dir is not None else self.config.output_dir)
        write_layout(root / cfg.LAYOUT_FILE_NAME, result.merge.layout)
        write_json(root / cfg.SEGMENTS_FILE_NAME, segments_to_dict(result.merge))
        write_json(root / cfg.REPORT_FILE_NAME, build_report(result))
        logger.info(f"结果已写出: {root}")
        return root


def build_report(result: PipelineResult) -> Dict:
    """运行报告：对齐结果、位姿、各视角跳过的掩码与统计项（不含耗时）"""
    alignment = result.alignment
    report = {
        "format": "layoutfuse-report",
        "version": 1,
        "manifest": result.manifest.path.name,
        "views": result.views,
        "components": alignment.components,
        "alignment": alignment.report.to_dict(),
        "poses": poses_to_dict(alignment.world, alignment.state.scales, {}, alignment.components)["views"],
        "skipped_masks": {str(v): [{"mask_id": s.mask_id, "pixel_count": s.pixel_count, "reason": s.reason}
                                   for s in p.skipped]
                          for v, p in result.partials.items() if p.skipped},
        "unmerged_segments": [list(k) for k in result.merge.layout.unmerged],
        "counts": summary_counts(),
    }
    if result.evaluation is not None:
        report["evaluation"] = result.evaluation
    return report
