from __future__ import annotations

import json

import numpy as np
import pytest

from uvclean import bundles, synthscene
from uvclean.bundles import (
    PipelineConfig,
    config_from_dict,
    config_to_dict,
    load_bundle,
    load_config,
    load_xyz,
    save_config,
    save_rendered_scene,
    save_xyz,
    validate_bundle,
)
from uvclean.errors import ValidationError


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    scene = synthscene.render(synthscene.archetype_scene("tabletop", 2), seed=5)
    return save_rendered_scene(scene, root / "scene"), scene


class TestBundleRoundTrip:
    def test_save_load_identity(self, scene_dir):
        path, scene = scene_dir
        bundle = load_bundle(path)
        np.testing.assert_array_equal(bundle.rgb, scene.rgb)
        np.testing.assert_array_equal(bundle.depth, scene.depth)
        assert bundle.intrinsics == scene.intrinsics
        np.testing.assert_array_equal(bundle.extrinsics.rotation, scene.extrinsics.rotation)
        np.testing.assert_array_equal(bundle.extrinsics.translation,
                                      scene.extrinsics.translation)
        assert bundle.meta["target_prompt"] == scene.meta["target_prompt"]

        gt_in, gt_out = scene.ground_truth, bundle.ground_truth
        assert gt_out is not None
        np.testing.assert_array_equal(gt_out.visible_target, gt_in.visible_target)
        assert [r.name for r in gt_out.regions] == [r.name for r in gt_in.regions]
        for a, b in zip(gt_out.regions, gt_in.regions):
            assert a.weight == b.weight
            np.testing.assert_array_equal(a.mask, b.mask)
        assert [o.name for o in gt_out.objects] == [o.name for o in gt_in.objects]
        for a, b in zip(gt_out.objects, gt_in.objects):
            np.testing.assert_array_equal(a.mask, b.mask)

    def test_validate_clean_bundle_no_findings(self, scene_dir):
        path, _ = scene_dir
        assert validate_bundle(path) == []

    def test_missing_depth_reported_by_name(self, scene_dir, tmp_path):
        path, scene = scene_dir
        broken = save_rendered_scene(scene, tmp_path / "broken")
        (broken / "depth.png").unlink()
        findings = validate_bundle(broken)
        assert any("depth.png absent" in f for f in findings)
        with pytest.raises(ValidationError, match="depth.png"):
            load_bundle(broken)

    def test_unregistered_streams_rejected(self, scene_dir, tmp_path):
        import cv2
        path, scene = scene_dir
        broken = save_rendered_scene(scene, tmp_path / "unregistered")
        small = scene.depth[:-10, :]
        cv2.imwrite(str(broken / "depth.png"), small)
        findings = validate_bundle(broken)
        assert any("unregistered" in f for f in findings)

    def test_bad_extrinsics_rejected(self, scene_dir, tmp_path):
        path, scene = scene_dir
        broken = save_rendered_scene(scene, tmp_path / "badext")
        ext = json.loads((broken / "extrinsics.json").read_text())
        ext["rotation"][0][0] = 2.0
        (broken / "extrinsics.json").write_text(json.dumps(ext))
        findings = validate_bundle(broken)
        assert any("extrinsics" in f for f in findings)


class TestConfig:
    def test_empty_file_gives_full_defaults(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        cfg = load_config(path)
        assert cfg == PipelineConfig()
        assert cfg.refinement.target_confidence == 0.35
        assert cfg.refinement.fine_confidence == 0.2
        assert cfg.refinement.target_erosion_kernel == 10
        assert cfg.refinement.inverted_erosion_kernel == 20
        assert cfg.refinement.fine_feature_area_max == 20_000
        assert cfg.selection.v_nt == 0.010
        assert cfg.selection.v_t == 0.070

    def test_negative_v_t_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"selection": {"v_t_m": -1}}))
        with pytest.raises(ValidationError, match="v_t"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "typo.json"
        path.write_text(json.dumps({"selection": {"v_t_mm": 70}}))
        with pytest.raises(ValidationError, match="v_t_mm"):
            load_config(path)
        path.write_text(json.dumps({"target_promt": "x"}))
        with pytest.raises(ValidationError, match="target_promt"):
            load_config(path)

    def test_save_load_identity(self, tmp_path):
        cfg = config_from_dict({
            "target_prompt": "geriatric chair",
            "refinement": {"target_erosion_kernel_px": 8, "fine_confidence": 0.25},
            "selection": {"v_t_m": 0.05, "sor_neighbors": 15},
            "planning": {"ordering": "tsp", "standoff_m": 0.05},
        })
        path = tmp_path / "cfg.json"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_remote_backend_requires_endpoint(self):
        with pytest.raises(ValidationError):
            config_from_dict({"backend": "remote"})
        cfg = config_from_dict({"backend": "remote", "endpoint": "http://localhost:9"})
        assert cfg.endpoint == "http://localhost:9"

    def test_roundtrip_dict(self):
        cfg = PipelineConfig()
        assert config_from_dict(config_to_dict(cfg)) == cfg


def test_xyz_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(50, 3))
    path = tmp_path / "cloud.xyz"
    save_xyz(path, pts)
    again = load_xyz(path)
    np.testing.assert_allclose(again, pts, atol=1e-9)
    assert load_xyz(tmp_path / "cloud.xyz").shape == (50, 3)


def test_xyz_empty(tmp_path):
    path = tmp_path / "empty.xyz"
    save_xyz(path, np.zeros((0, 3)))
    assert load_xyz(path).shape == (0, 3)
