#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
布局重建工具主模块 - 提供命令行接口和处理流程控制

退出码：0 成功，1 内部错误，2 输入错误（含参数错误）。
"""

import argparse
import logging
import sys
import time
import traceback
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

try:
    from ..errors import LayoutFuseError
    from ..metrics import evaluate_layout
    from ..scene_synth import DEFAULT_CEILING_HEIGHT, DEFAULT_HFOV_DEG, DEFAULT_IMAGE_HEIGHT, DEFAULT_IMAGE_WIDTH, \
        DEFAULT_ROOM_EXTENT, SceneSpec, default_pairing, emit_view_bundles, generate_room
    from ..utils import atomic_write_text, ensure_dir, setup_logger
    from ...version import get_version_string
    from . import config as cfg
    from .config import PipelineConfig, create_config_template, load_pipeline_config
    from .file_utils import (partials_to_dict, poses_to_dict, read_layout, read_poses, read_scene, read_segments,
                             save_scene_directory, segments_to_dict, write_json, write_layout)
    from .pipeline import PipelineRunner
    from .render import render_birdview, render_wireframe
    from .stats import finalize_statistics, print_pipeline_summary, reset_statistics
except ImportError:
    from errors import LayoutFuseError
    from metrics import evaluate_layout
    from scene_synth import DEFAULT_CEILING_HEIGHT, DEFAULT_HFOV_DEG, DEFAULT_IMAGE_HEIGHT, DEFAULT_IMAGE_WIDTH, \
        DEFAULT_ROOM_EXTENT, SceneSpec, default_pairing, emit_view_bundles, generate_room
    from utils import atomic_write_text, ensure_dir, setup_logger
    from version import get_version_string
    import config as cfg
    from config import PipelineConfig, create_config_template, load_pipeline_config
    from file_utils import (partials_to_dict, poses_to_dict, read_layout, read_poses, read_scene, read_segments,
                            save_scene_directory, segments_to_dict, write_json, write_layout)
    from pipeline import PipelineRunner
    from render import render_birdview, render_wireframe
    from stats import finalize_statistics, print_pipeline_summary, reset_statistics

# 创建日志记录器
logger = setup_logger(__name__)

# 命令行参数 → (配置段, 字段)
FLAG_TARGETS = {
    "epsilon1": ("g1", "epsilon1"),
    "min_pixels": ("g1", "min_pixels"),
    "proximity": ("merge", "proximity_threshold"),
    "overlap": ("merge", "overlap_threshold"),
    "margin": ("merge", "margin"),
    "snap_tol": ("merge", "angle_snap_tol"),
    "max_iters": ("align", "max_iters"),
    "lr": ("align", "lr"),
    "tol": ("align", "tol"),
    "angle_thr": ("thresholds", "angle_deg"),
    "offset_thr": ("thresholds", "offset_m"),
}


# =========================================================
# 参数解析
# =========================================================

def _common_parser() -> argparse.ArgumentParser:
    """各子命令共享的日志与配置参数"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", help="启用调试日志", action="store_true")
    common.add_argument("-q", "--quiet", help="只输出警告和错误", action="store_true")
    common.add_argument("--progress", help="显示进度条", action="store_true")
    common.add_argument("--config", help="配置文件路径（默认按优先级查找 layoutfuse.json）")
    return common


def _add_stage_flags(parser: argparse.ArgumentParser, groups: List[str]):
    """按需添加与 PipelineConfig 对应的参数（默认None表示使用配置文件中的值）"""
    if "g1" in groups:
        parser.add_argument("--epsilon1", type=float, help="单视角邻接的深度一致性容差")
        parser.add_argument("--min-pixels", type=int, help="可用掩码的最少像素数")
    if "align" in groups:
        parser.add_argument("--max-iters", type=int, help="全局对齐最大迭代次数")
        parser.add_argument("--lr", type=float, help="全局对齐初始步长")
        parser.add_argument("--tol", type=float, help="全局对齐收敛阈值（归一化梯度范数）")
    if "merge" in groups:
        parser.add_argument("--proximity", type=float, help="合并的垂直距离阈值（米）")
        parser.add_argument("--overlap", type=float, help="同一图像两墙的最小重叠比例")
        parser.add_argument("--margin", type=float, help="垂直墙阻挡判断的余量（米）")
        parser.add_argument("--snap-tol", type=float, help="轴对齐吸附角度容差（度）")
    if "thresholds" in groups:
        parser.add_argument("--angle-thr", type=float, help="平面匹配角度阈值（度）")
        parser.add_argument("--offset-thr", type=float, help="平面匹配偏移阈值（米）")


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="layoutfuse", description="多视角房间布局重建工具")
    parser.add_argument("--version", action="version", version=get_version_string())
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    synth = commands.add_parser("synth", parents=[common], help="生成合成房间与视角数据")
    synth.add_argument("--walls", type=int, default=4, help="墙面数（不小于4的偶数）")
    synth.add_argument("--cams", type=int, default=3, help="相机数")
    synth.add_argument("--seed", type=int, default=None, help="随机种子（默认取配置文件的 seed）")
    synth.add_argument("--noise", type=float, default=0.0, help="点图高斯噪声标准差（米）")
    synth.add_argument("--extent", type=float, default=DEFAULT_ROOM_EXTENT, help="房间尺寸（米）")
    synth.add_argument("--ceiling", type=float, default=DEFAULT_CEILING_HEIGHT, help="层高（米）")
    synth.add_argument("--width", type=int, default=DEFAULT_IMAGE_WIDTH, help="图像宽度")
    synth.add_argument("--height", type=int, default=DEFAULT_IMAGE_HEIGHT, help="图像高度")
    synth.add_argument("--hfov", type=float, default=DEFAULT_HFOV_DEG, help="水平视场角（度）")
    synth.add_argument("--no-rotate", action="store_true", help="房间轮廓保持轴对齐")
    synth.add_argument("-o", "--output", help="输出目录（默认 scene_seed<seed>）")

    layout = commands.add_parser("layout", parents=[common], help="只运行单视角布局")
    layout.add_argument("manifest", help="输入清单")
    layout.add_argument("-o", "--output", help="输出文件（默认 <输出目录>/partials.json）")
    _add_stage_flags(layout, ["g1"])

    align = commands.add_parser("align", parents=[common], help="只运行全局对齐")
    align.add_argument("manifest", help="输入清单")
    align.add_argument("-o", "--output", help="输出文件（默认 <输出目录>/poses.json）")
    _add_stage_flags(align, ["align"])

    merge = commands.add_parser("merge", parents=[common], help="用已有位姿合并单视角布局")
    merge.add_argument("manifest", help="输入清单")
    merge.add_argument("--poses", required=True, help="align 子命令输出的 poses.json")
    merge.add_argument("-o", "--output", help="输出目录")
    _add_stage_flags(merge, ["g1", "merge"])

    pipeline = commands.add_parser("pipeline", parents=[common], help="运行完整流水线")
    pipeline.add_argument("manifest", help="输入清单")
    pipeline.add_argument("-o", "--output", help="输出目录")
    pipeline.add_argument("--views", type=int, help="只使用编号最小的K个视角")
    pipeline.add_argument("--evaluate", action="store_true", help="清单引用真值场景时同时评估")
    _add_stage_flags(pipeline, ["g1", "align", "merge", "thresholds"])

    evaluate = commands.add_parser("eval", parents=[common], help="与真值场景比较")
    evaluate.add_argument("--layout", required=True, help="预测的 layout.json")
    evaluate.add_argument("--scene", required=True, help="真值 scene.json")
    evaluate.add_argument("-o", "--output", help="输出文件（默认 <输出目录>/eval.json）")
    _add_stage_flags(evaluate, ["thresholds"])

    birdview = commands.add_parser("render-birdview", parents=[common], help="导出俯视图SVG")
    birdview.add_argument("input", help="layout.json，或配合 --segments 使用 segments.json")
    birdview.add_argument("--segments", action="store_true", help="输入为合并前的线段")
    birdview.add_argument("-o", "--output", required=True, help="输出SVG文件")

    wireframe = commands.add_parser("render-wireframe", parents=[common], help="导出线框OBJ")
    wireframe.add_argument("input", help="layout.json")
    wireframe.add_argument("-o", "--output", required=True, help="输出OBJ文件")

    init = commands.add_parser("init-config", parents=[common], help="创建配置文件模板")
    init.add_argument("-o", "--output", help="模板路径（默认当前目录下的 layoutfuse.json）")
    return parser


def _configure_logging(args):
    root = logging.getLogger()
    if args.verbose:
        root.setLevel(logging.DEBUG)
        logger.debug("已启用调试日志")
    elif args.quiet:
        root.setLevel(logging.WARNING)
    else:
        root.setLevel(logging.INFO)


def build_config(args) -> PipelineConfig:
    """配置文件 + 命令行覆盖"""
    config = load_pipeline_config(getattr(args, "config", None))
    overrides = {}
    for flag, (section, name) in FLAG_TARGETS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.setdefault(section, {})[name] = value
    for section, values in overrides.items():
        setattr(config, section, replace(getattr(config, section), **values))
    if getattr(args, "manifest", None):
        config.manifest = Path(args.manifest)
        if config.output_dir == Path(cfg.DEFAULT_OUTPUT_DIR):
            # 未配置输出目录时写到清单旁边
            config.output_dir = Path(args.manifest).parent / cfg.DEFAULT_OUTPUT_DIR
    if getattr(args, "views", None) is not None:
        config.views = args.views
    config.check_paths()
    return config


def _output_dir(args, config: PipelineConfig) -> Path:
    return Path(args.output) if getattr(args, "output", None) else config.output_dir


# =========================================================
# 子命令
# =========================================================

def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else load_pipeline_config(args.config).seed
    spec = SceneSpec(wall_count=args.walls, room_extent=args.extent, ceiling_height=args.ceiling,
                     camera_count=args.cams, noise_sigma=args.noise, seed=seed,
                     image_width=args.width, image_height=args.height, hfov_deg=args.hfov,
                     rotate=not args.no_rotate)
    scene = generate_room(spec)
    bundles = emit_view_bundles(scene, default_pairing(len(scene.cameras)), spec.noise_sigma, spec.seed)
    output = Path(args.output) if args.output else Path(f"scene_seed{spec.seed}")
    manifest = save_scene_directory(output, scene, bundles)
    logger.info(f"清单: {manifest}")
    return 0


def cmd_layout(args) -> int:
    config = build_config(args)
    runner = PipelineRunner(config, show_progress=args.progress)
    _, _, bundles = runner.load_inputs()
    partials = runner.run_layouts(bundles)
    output = Path(args.output) if args.output else ensure_dir(config.output_dir) / cfg.PARTIALS_FILE_NAME
    write_json(output, partials_to_dict(list(partials.values())))
    logger.info(f"单视角布局已写出: {output}")
    return 0


def cmd_align(args) -> int:
    config = build_config(args)
    runner = PipelineRunner(config, show_progress=args.progress)
    _, _, bundles = runner.load_inputs()
    outcome = runner.run_alignment(bundles)
    output = Path(args.output) if args.output else ensure_dir(config.output_dir) / cfg.POSES_FILE_NAME
    write_json(output, poses_to_dict(outcome.world, outcome.state.scales, outcome.report.to_dict(),
                                     outcome.components))
    logger.info(f"位姿已写出: {output}")
    return 0


def cmd_merge(args) -> int:
    config = build_config(args)
    runner = PipelineRunner(config, show_progress=args.progress)
    _, _, bundles = runner.load_inputs()
    partials = runner.run_layouts(bundles)
    result = runner.run_merge(partials, read_poses(args.poses))
    root = ensure_dir(_output_dir(args, config))
    write_layout(root / cfg.LAYOUT_FILE_NAME, result.layout)
    write_json(root / cfg.SEGMENTS_FILE_NAME, segments_to_dict(result))
    logger.info(f"布局已写出: {root / cfg.LAYOUT_FILE_NAME}")
    return 0


def cmd_pipeline(args) -> int:
    config = build_config(args)
    reset_statistics()
    runner = PipelineRunner(config, show_progress=args.progress)
    result = runner.run(evaluate=args.evaluate)
    root = runner.write_outputs(result, _output_dir(args, config))
    finalize_statistics()
    if not args.quiet:
        print_pipeline_summary(str(root))
    return 0


def cmd_eval(args) -> int:
    config = build_config(args)
    layout = read_layout(args.layout)
    scene = read_scene(args.scene)
    report = evaluate_layout(layout, scene, config.thresholds)
    document = {"format": "layoutfuse-eval", "version": 1,
                "thresholds": {"angle_deg": config.thresholds.angle_deg, "offset_m": config.thresholds.offset_m},
                **report}
    output = Path(args.output) if args.output else ensure_dir(config.output_dir) / cfg.EVAL_FILE_NAME
    write_json(output, document)
    mean = report["reprojection"]["mean"]
    logger.info(f"评估完成: re-IoU={mean['iou']:.2f}, 3D精度={report['planes']['precision']:.2f}, "
                f"3D召回={report['planes']['recall']:.2f}")
    return 0


def cmd_render_birdview(args) -> int:
    source = read_segments(args.input) if args.segments else read_layout(args.input)
    atomic_write_text(args.output, render_birdview(source))
    logger.info(f"俯视图已写出: {args.output}")
    return 0


def cmd_render_wireframe(args) -> int:
    layout = read_layout(args.input)
    if not layout.junctions:
        logger.warning("布局没有交点")
    atomic_write_text(args.output, render_wireframe(layout))
    logger.info(f"线框已写出: {args.output}")
    return 0


def cmd_init_config(args) -> int:
    created = create_config_template(args.output)
    if created is not None:
        print(f"已创建配置文件模板: {created}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "layout": cmd_layout,
    "align": cmd_align,
    "merge": cmd_merge,
    "pipeline": cmd_pipeline,
    "eval": cmd_eval,
    "render-birdview": cmd_render_birdview,
    "render-wireframe": cmd_render_wireframe,
    "init-config": cmd_init_config,
}


def main(argv: Optional[List[str]] = None) -> int:
    """主函数

    Args:
        argv: 命令行参数，None表示使用 sys.argv[1:]

    Returns:
        int: 退出码
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse 的用法错误退出码为2，--help 为0
        return int(e.code) if isinstance(e.code, int) else 2

    _configure_logging(args)
    start = time.time()
    try:
        code = COMMANDS[args.command](args)
    except LayoutFuseError as e:
        logger.error(str(e))
        logger.debug(traceback.format_exc())
        return e.exit_code
    except KeyboardInterrupt:
        logger.warning("用户中断处理")
        return 1
    except Exception as e:
        logger.error(f"内部错误: {type(e).__name__}: {e}")
        logger.debug(traceback.format_exc())
        return 1
    logger.debug(f"{args.command} 用时 {time.time() - start:.2f} 秒")
    return code


if __name__ == "__main__":
    sys.exit(main())
