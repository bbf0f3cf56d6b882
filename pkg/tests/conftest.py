from __future__ import annotations

import pytest

from uvclean import bundles, pipeline, synthscene


@pytest.fixture(scope="session")
def suite_dir(tmp_path_factory):
    """Standard synthetic suite written to disk once per session."""
    root = tmp_path_factory.mktemp("suite")
    for spec, seed in synthscene.standard_suite(seed=0):
        scene = synthscene.render(spec, seed)
        bundles.save_rendered_scene(scene, root / spec.name)
    return root


@pytest.fixture(scope="session")
def suite_runs(suite_dir):
    """Pipeline artifacts for every suite scene, keyed by scene name."""
    cfg = bundles.PipelineConfig()
    runs = {}
    for scene_dir in sorted(p for p in suite_dir.iterdir() if p.is_dir()):
        bundle = bundles.load_bundle(scene_dir)
        scene_cfg = bundles.config_from_dict({
            **bundles.config_to_dict(cfg),
            "target_prompt": bundle.meta["target_prompt"],
        })
        runs[scene_dir.name] = (bundle, pipeline.run_pipeline(bundle, scene_cfg))
    return runs
