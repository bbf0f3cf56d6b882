from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from uvclean import bundles, cli, synthscene


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("clibundle")
    scene = synthscene.render(
        synthscene.archetype_scene("tabletop", 2,
                                   synthscene.Corruption(2, True, 80)), seed=11)
    return bundles.save_rendered_scene(scene, root / "scene")


def _files_excluding_timings(run_dir: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(run_dir.iterdir())
            if p.name != "timings.json"}


class TestRun:
    def test_successful_run(self, bundle_dir, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["run", "--scene", str(bundle_dir), "--out", str(out)]) == 0
        stages = json.loads((out / "stages.json").read_text())
        assert stages["status"] == "ok"
        counts = stages["counts"]
        assert counts["buffered"] > 0
        assert counts["waypoints"] == counts["buffered"] - counts["dropped_invalid_normals"]
        waypoints = json.loads((out / "waypoints.json").read_text())
        assert len(waypoints) == counts["waypoints"]
        assert set(waypoints[0]) == {"position", "approach", "surface_point"}

    def test_bit_identical_artifacts_across_runs(self, bundle_dir, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", "--scene", str(bundle_dir), "--out", str(out_a)]) == 0
        assert cli.main(["run", "--scene", str(bundle_dir), "--out", str(out_b)]) == 0
        a, b = _files_excluding_timings(out_a), _files_excluding_timings(out_b)
        assert a.keys() == b.keys()
        for name in a:
            assert a[name] == b[name], f"{name} differs between runs"

    def test_target_not_found_exit_code(self, bundle_dir, tmp_path):
        broken = tmp_path / "notarget"
        shutil.copytree(bundle_dir, broken)
        dets = json.loads((broken / "detections.json").read_text())
        dets["white table"] = []
        (broken / "detections.json").write_text(json.dumps(dets))
        out = tmp_path / "run_notarget"
        assert cli.main(["run", "--scene", str(broken), "--out", str(out)]) == 2
        # Artifacts up to the failing stage still written.
        assert (out / "target_mask_raw.png").is_file()
        assert (out / "target_mask_eroded.png").is_file()
        assert not (out / "cleaning_points.xyz").exists()

    def test_invalid_bundle_exit_code(self, tmp_path):
        assert cli.main(["run", "--scene", str(tmp_path / "missing"),
                         "--out", str(tmp_path / "o")]) == 3

    def test_unreachable_remote_exit_code(self, bundle_dir, tmp_path):
        code = cli.main(["run", "--scene", str(bundle_dir), "--out", str(tmp_path / "o"),
                         "--backend", "remote", "--endpoint", "http://127.0.0.1:1"])
        assert code == 4

    def test_bad_config_exit_code(self, bundle_dir, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"selection": {"v_t_m": -5}}))
        assert cli.main(["run", "--scene", str(bundle_dir), "--config", str(cfg),
                         "--out", str(tmp_path / "o")]) == 3

    def test_safety_assertion_failure_exits_nonzero(self, bundle_dir, tmp_path, monkeypatch):
        # Force the brute-force separation check to report a violation; the
        # run must abort with a nonzero exit instead of writing artifacts.
        from uvclean import pipeline as pl
        monkeypatch.setattr(pl, "min_squared_separation", lambda a, b: 0.0)
        code = cli.main(["run", "--scene", str(bundle_dir), "--out", str(tmp_path / "o")])
        assert code == 1


class TestGen:
    def test_same_seed_identical_bundles(self, tmp_path):
        spec_file = tmp_path / "spec.json"
        spec = synthscene.archetype_scene("railing", 2)
        spec_file.write_text(json.dumps(synthscene.spec_to_json(spec)))
        a, b = tmp_path / "ga", tmp_path / "gb"
        assert cli.main(["gen", "--spec", str(spec_file), "--seed", "4", "--out", str(a)]) == 0
        assert cli.main(["gen", "--spec", str(spec_file), "--seed", "4", "--out", str(b)]) == 0
        fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert fa == fb
        for rel in fa:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_gen_requires_spec_or_suite(self, tmp_path):
        assert cli.main(["gen", "--out", str(tmp_path / "x")]) == 3


class TestScore:
    def test_score_on_perfect_predictions(self, tmp_path):
        # A clean scene: the fixture detections equal ground truth, so the
        # refined masks score perfectly.
        scene = synthscene.render(synthscene.archetype_scene("tabletop", 2), seed=3)
        bdir = bundles.save_rendered_scene(scene, tmp_path / "scene")
        out = tmp_path / "run"
        assert cli.main(["run", "--scene", str(bdir), "--out", str(out)]) == 0
        assert cli.main(["score", "--run", str(out), "--scene", str(bdir)]) == 0
        report = json.loads((out / "score_report.json").read_text())
        assert report["with_ntm"]["T"] == 1.0
        assert all(o["score"] == 1 for o in report["with_ntm"]["nt_per_object"])

    def test_score_without_ground_truth_fails(self, bundle_dir, tmp_path):
        stripped = tmp_path / "nogt"
        shutil.copytree(bundle_dir, stripped)
        shutil.rmtree(stripped / "ground_truth")
        out = tmp_path / "run2"
        assert cli.main(["run", "--scene", str(stripped), "--out", str(out)]) == 0
        assert cli.main(["score", "--run", str(out), "--scene", str(stripped)]) == 3


class TestBench:
    def test_bench_table_on_mini_suite(self, tmp_path, capsys):
        suite = tmp_path / "mini"
        for archetype, count, corrupt in (("tabletop", 0, False), ("tabletop", 2, True),
                                          ("railing", 1, True)):
            corruption = synthscene.Corruption(2, True, 80) if corrupt else synthscene.Corruption()
            name = f"{archetype}_{count}_{int(corrupt)}"
            scene = synthscene.render(
                synthscene.archetype_scene(archetype, count, corruption, name=name), seed=6)
            bundles.save_rendered_scene(scene, suite / name)
        report_path = tmp_path / "bench.json"
        assert cli.main(["bench", "--suite", str(suite), "--out", str(report_path)]) == 0
        printed = capsys.readouterr().out
        assert "tabletop" in printed and "railing" in printed and "overall" in printed
        report = json.loads(report_path.read_text())
        assert len(report["scenes"]) == 3
        summary = {row["name"]: row for row in report["summary"]}
        assert summary["overall"]["objects"] == 3
        # The planted mis-segmentations make the refinement matter.
        assert summary["overall"]["nt_with"] >= summary["overall"]["nt_without"]

    def test_bench_missing_suite(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert cli.main(["bench", "--suite", str(empty)]) == 3
