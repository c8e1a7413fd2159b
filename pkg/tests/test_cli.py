import json

import pytest

from conftest import L_CAMERAS, L_FOOTPRINT, make_scene
from src.core.layout_io.file_utils import read_layout, save_scene_directory, write_layout, write_scene
from src.core.layout_io.main import build_config, build_parser, main
from src.core.metrics import layout_from_scene
from src.core.scene_synth import SceneSpec, default_pairing, emit_view_bundles, generate_room
from src.version import VERSION


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    # 避免读取工作目录或主目录中的配置文件
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("HOME", str(tmp_path))
    monkeypatch.setenv("LAYOUTFUSE_THREADS", "2")


@pytest.fixture
def box_manifest(tmp_path, box_scene, box_bundles):
    return save_scene_directory(tmp_path / "box", box_scene, box_bundles)


class TestSynth:
    ARGS = ["synth", "--walls", "4", "--cams", "2", "--seed", "7", "--width", "48", "--height", "36", "-q"]

    def test_writes_scene_directory(self, tmp_path):
        assert main(self.ARGS + ["-o", str(tmp_path / "a")]) == 0
        files = tree_bytes(tmp_path / "a")
        assert {"manifest.json", "scene.json"} <= set(files)
        assert any(name.startswith("views") for name in files)
        manifest = json.loads(files["manifest.json"])
        assert manifest["format"] == "layoutfuse-manifest"
        assert [(p["i"], p["j"]) for p in manifest["pairs"]] == [(0, 1), (1, 0)]

    def test_same_seed_same_bytes(self, tmp_path):
        assert main(self.ARGS + ["-o", str(tmp_path / "a")]) == 0
        assert main(self.ARGS + ["-o", str(tmp_path / "b")]) == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_seed_from_config_file(self, tmp_path):
        (tmp_path / "layoutfuse.json").write_text(json.dumps({"seed": 5}), encoding="utf-8")
        assert main(["synth", "--walls", "4", "--cams", "2", "--width", "48", "--height", "36", "-q"]) == 0
        assert (tmp_path / "scene_seed5" / "manifest.json").is_file()
        explicit = tmp_path / "explicit"
        assert main(self.ARGS[:5] + ["--seed", "5"] + self.ARGS[7:] + ["-o", str(explicit)]) == 0
        assert tree_bytes(tmp_path / "scene_seed5") == tree_bytes(explicit)

    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert f"v{VERSION}" in capsys.readouterr().out

    def test_invalid_wall_count(self, tmp_path):
        assert main(["synth", "--walls", "5", "-o", str(tmp_path / "x")]) == 2

    def test_usage_error(self):
        assert main(["synth", "--walls", "four"]) == 2
        assert main([]) == 2


class TestConfigOverrides:
    def test_flags_override_config_file(self, tmp_path, box_manifest):
        config_path = tmp_path / "custom.json"
        config_path.write_text(json.dumps({"merge": {"proximity_threshold": 0.5, "margin": 0.05}}), encoding="utf-8")
        args = build_parser().parse_args(["pipeline", str(box_manifest), "--config", str(config_path),
                                          "--proximity", "0.3"])
        config = build_config(args)
        assert config.merge.proximity_threshold == 0.3
        assert config.merge.margin == 0.05
        assert config.output_dir == box_manifest.parent / "layoutfuse_output"

    def test_init_config(self, tmp_path):
        assert main(["init-config", "-o", str(tmp_path / "layoutfuse.json")]) == 0
        assert json.loads((tmp_path / "layoutfuse.json").read_text(encoding="utf-8"))["merge"]["margin"] == 0.1


class TestPipeline:
    def test_noiseless_cuboid(self, tmp_path, box_manifest):
        out = tmp_path / "out"
        assert main(["pipeline", str(box_manifest), "-o", str(out), "--evaluate", "-q"]) == 0
        layout = read_layout(out / "layout.json")
        assert len(layout.planes) == 6
        assert len(layout.lines) == 12
        report = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert report["views"] == [0, 1, 2, 3]
        assert report["components"] == [[0, 1, 2, 3]]
        planes = report["evaluation"]["planes"]
        assert planes["precision"] == 100.0 and planes["recall"] == 100.0
        assert (out / "segments.json").is_file()

    def test_repeat_runs_are_identical(self, tmp_path, box_manifest):
        for name in ("a", "b"):
            assert main(["pipeline", str(box_manifest), "-o", str(tmp_path / name), "-q"]) == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_view_subset(self, tmp_path, box_manifest):
        out = tmp_path / "out"
        assert main(["pipeline", str(box_manifest), "-o", str(out), "--views", "2", "-q"]) == 0
        report = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert report["views"] == [0, 1]
        assert sorted(read_layout(out / "layout.json").cameras) == [0, 1]

    def test_missing_mask_file(self, tmp_path, box_manifest, caplog):
        missing = box_manifest.parent / "views" / "view_2_masks.lfpm"
        missing.unlink()
        assert main(["pipeline", str(box_manifest), "-o", str(tmp_path / "out")]) == 2
        assert str(missing) in caplog.text

    def test_missing_manifest(self, tmp_path):
        assert main(["pipeline", str(tmp_path / "absent.json")]) == 2

    def test_stage_commands(self, tmp_path, box_manifest):
        poses = tmp_path / "poses.json"
        assert main(["align", str(box_manifest), "-o", str(poses), "-q"]) == 0
        assert main(["layout", str(box_manifest), "-o", str(tmp_path / "partials.json"), "-q"]) == 0
        assert main(["merge", str(box_manifest), "--poses", str(poses), "-o", str(tmp_path / "merged"), "-q"]) == 0
        assert len(read_layout(tmp_path / "merged" / "layout.json").planes) == 6
        partials = json.loads((tmp_path / "partials.json").read_text(encoding="utf-8"))
        assert [v["image_id"] for v in partials["views"]] == [0, 1, 2, 3]

    def test_render_commands(self, tmp_path, box_manifest):
        out = tmp_path / "out"
        assert main(["pipeline", str(box_manifest), "-o", str(out), "-q"]) == 0
        assert main(["render-birdview", str(out / "layout.json"), "-o", str(tmp_path / "layout.svg"), "-q"]) == 0
        assert main(["render-birdview", str(out / "segments.json"), "--segments",
                     "-o", str(tmp_path / "segments.svg"), "-q"]) == 0
        assert main(["render-wireframe", str(out / "layout.json"), "-o", str(tmp_path / "layout.obj"), "-q"]) == 0
        obj = (tmp_path / "layout.obj").read_text(encoding="utf-8")
        assert sum(line.startswith("l ") for line in obj.splitlines()) == 12
        assert (tmp_path / "layout.svg").read_text(encoding="utf-8").count('class="wall"') == 4


class TestEval:
    def test_ground_truth_is_perfect(self, tmp_path, box_scene):
        write_layout(tmp_path / "layout.json", layout_from_scene(box_scene))
        write_scene(tmp_path / "scene.json", box_scene)
        out = tmp_path / "eval.json"
        assert main(["eval", "--layout", str(tmp_path / "layout.json"), "--scene", str(tmp_path / "scene.json"),
                     "-o", str(out), "-q"]) == 0
        report = json.loads(out.read_text(encoding="utf-8"))
        assert report["planes"]["precision"] == 100.0 and report["planes"]["recall"] == 100.0
        assert report["reprojection"]["mean"]["iou"] == pytest.approx(100.0)
        assert report["thresholds"] == {"angle_deg": 10.0, "offset_m": 0.15}

    def test_missing_scene(self, tmp_path, box_scene):
        write_layout(tmp_path / "layout.json", layout_from_scene(box_scene))
        assert main(["eval", "--layout", str(tmp_path / "layout.json"), "--scene", str(tmp_path / "none.json")]) == 2


@pytest.mark.slow
def test_noisy_l_room_reconstruction(tmp_path):
    scene = make_scene(L_FOOTPRINT, L_CAMERAS)
    bundles = emit_view_bundles(scene, default_pairing(len(scene.cameras)), 0.005, seed=11)
    manifest = save_scene_directory(tmp_path / "l_room", scene, bundles)
    out = tmp_path / "out"
    assert main(["pipeline", str(manifest), "-o", str(out), "--evaluate", "-q"]) == 0
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    planes = report["evaluation"]["planes"]
    assert planes["precision"] >= 90.0
    assert planes["recall"] >= 90.0
    assert report["evaluation"]["pose"]["accuracy"]["5"]["rra"] == 100.0


def run_generated_room(tmp_path, walls, cams, seed, noise_fraction):
    spec = SceneSpec(wall_count=walls, camera_count=cams, seed=seed)
    scene = generate_room(spec)
    bundles = emit_view_bundles(scene, default_pairing(len(scene.cameras)), noise_fraction * spec.room_extent,
                                seed=seed)
    manifest = save_scene_directory(tmp_path / f"room_{walls}_{cams}_{seed}", scene, bundles)
    out = tmp_path / f"out_{walls}_{cams}_{seed}"
    assert main(["pipeline", str(manifest), "-o", str(out), "--evaluate", "-q"]) == 0
    return json.loads((out / "report.json").read_text(encoding="utf-8"))["evaluation"]


@pytest.mark.slow
@pytest.mark.parametrize("walls, cams, seed", [(4, 2, 0), (4, 3, 1), (6, 3, 2), (6, 5, 3), (8, 5, 4)])
def test_noiseless_generated_rooms(tmp_path, walls, cams, seed):
    evaluation = run_generated_room(tmp_path, walls, cams, seed, 0.0)
    assert evaluation["planes"]["precision"] == 100.0
    assert evaluation["planes"]["recall"] == 100.0
    mean = evaluation["reprojection"]["mean"]
    assert mean["iou"] >= 99.5
    assert mean["pe"] <= 0.5
    assert mean["rmse"] <= 1e-3


@pytest.mark.slow
@pytest.mark.parametrize("walls, cams, seed", [(4, 3, 1), (6, 5, 2), (4, 5, 3), (6, 3, 4)])
def test_noisy_generated_rooms(tmp_path, walls, cams, seed):
    # 噪声标准差为房间尺寸的 1%
    evaluation = run_generated_room(tmp_path, walls, cams, seed, 0.01)
    assert evaluation["planes"]["precision"] >= 90.0
    assert evaluation["planes"]["recall"] >= 90.0
    accuracy = evaluation["pose"]["accuracy"]["15"]
    assert accuracy["rra"] == 100.0
    assert accuracy["rta"] == 100.0
    assert evaluation["pose"]["maa30"] >= 0.95
