"""Command-line entry points: run, gen, score, bench.

Exit codes: 0 success, 1 internal error (including a failed safety
assertion), 2 target not found, 3 validation failure, 4 backend transport
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bundles, evaluation, pipeline, synthscene
from .errors import BackendError, StageError, TransportError, ValidationError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_TARGET_NOT_FOUND = 2
EXIT_VALIDATION = 3
EXIT_TRANSPORT = 4


def _cmd_run(args) -> int:
    try:
        cfg = bundles.load_config(args.config) if args.config else bundles.PipelineConfig()
        if args.backend:
            cfg = bundles.config_from_dict({**bundles.config_to_dict(cfg),
                                            "backend": args.backend,
                                            "endpoint": args.endpoint})
        bundle = bundles.load_bundle(args.scene)
    except ValidationError as exc:
        for finding in exc.findings:
            log.error("validation: %s", finding)
        return EXIT_VALIDATION

    try:
        artifacts = pipeline.run_pipeline(bundle, cfg)
    except TransportError as exc:
        log.error("backend transport failure: %s", exc)
        return EXIT_TRANSPORT
    except BackendError as exc:
        log.error("backend failure: %s", exc)
        return EXIT_VALIDATION
    except StageError as exc:
        log.error("pipeline stage failed: %s", exc)
        return EXIT_INTERNAL

    pipeline.write_artifacts(artifacts, args.out)
    if artifacts.status == pipeline.STATUS_TARGET_NOT_FOUND:
        log.error("target not found for prompt %r; partial artifacts in %s",
                  cfg.target_prompt, args.out)
        return EXIT_TARGET_NOT_FOUND
    print(f"run complete: {artifacts.stage_counts.get('buffered', 0)} cleaning points, "
          f"{len(artifacts.waypoints)} waypoints -> {args.out}")
    return EXIT_OK


def _cmd_gen(args) -> int:
    out = Path(args.out)
    try:
        if args.suite:
            paths = []
            for spec, scene_seed in synthscene.standard_suite(args.seed):
                scene = synthscene.render(spec, scene_seed)
                paths.append(bundles.save_rendered_scene(scene, out / spec.name))
            print(f"wrote {len(paths)} bundles under {out}")
            return EXIT_OK
        if not args.spec:
            log.error("gen requires --spec FILE or --suite")
            return EXIT_VALIDATION
        spec = synthscene.load_spec(args.spec)
        scene = synthscene.render(spec, args.seed)
        path = bundles.save_rendered_scene(scene, out)
        print(f"wrote bundle {path}")
        return EXIT_OK
    except ValidationError as exc:
        for finding in exc.findings:
            log.error("validation: %s", finding)
        return EXIT_VALIDATION


def _cmd_score(args) -> int:
    try:
        bundle = bundles.load_bundle(args.scene)
    except ValidationError as exc:
        for finding in exc.findings:
            log.error("validation: %s", finding)
        return EXIT_VALIDATION
    if bundle.ground_truth is None:
        log.error("bundle %s has no ground truth", args.scene)
        return EXIT_VALIDATION
    run_dir = Path(args.run)
    eroded_path = run_dir / "target_mask_eroded.png"
    ntm_path = run_dir / "non_target_mask.png"
    if not eroded_path.is_file() or not ntm_path.is_file():
        log.error("run directory %s is missing mask artifacts", run_dir)
        return EXIT_VALIDATION
    eroded = bundles.read_mask(eroded_path)
    ntm = bundles.read_mask(ntm_path)
    without, with_ = evaluation.compare_variants(eroded, ntm, bundle.ground_truth)
    print(evaluation.reports_to_json({"without_ntm": without, "with_ntm": with_}))
    return EXIT_OK


def _score_scene(bundle, cfg):
    backend = pipeline.make_backend(cfg, bundle)
    prompt = bundle.meta.get("target_prompt", cfg.target_prompt)
    scene_cfg = bundles.config_from_dict({**bundles.config_to_dict(cfg),
                                          "target_prompt": prompt})
    artifacts = pipeline.run_pipeline(bundle, scene_cfg, backend)
    return artifacts


def _cmd_bench(args) -> int:
    try:
        cfg = bundles.load_config(args.config) if args.config else bundles.PipelineConfig()
    except ValidationError as exc:
        for finding in exc.findings:
            log.error("validation: %s", finding)
        return EXIT_VALIDATION

    suite = Path(args.suite)
    scene_dirs = sorted(p for p in suite.iterdir() if p.is_dir())
    if not scene_dirs:
        log.error("no scene directories under %s", suite)
        return EXIT_VALIDATION

    per_archetype: dict[str, dict] = {}
    rows = []
    for scene_dir in scene_dirs:
        bundle = bundles.load_bundle(scene_dir)
        if bundle.ground_truth is None:
            log.error("bundle %s has no ground truth", scene_dir)
            return EXIT_VALIDATION
        artifacts = _score_scene(bundle, cfg)
        if artifacts.reports is None:
            log.error("scoring failed for %s (status %s)", scene_dir, artifacts.status)
            return EXIT_VALIDATION
        without, with_ = artifacts.reports
        archetype = bundle.meta.get("archetype", "unknown")
        agg = per_archetype.setdefault(archetype, {
            "t_sum": 0.0, "scenes": 0, "nt_without": 0, "nt_with": 0, "objects": 0,
        })
        agg["t_sum"] += without.T
        agg["scenes"] += 1
        agg["objects"] += len(without.nt_per_object)
        agg["nt_without"] += sum(s for _, s in without.nt_per_object)
        agg["nt_with"] += sum(s for _, s in with_.nt_per_object)
        rows.append({
            "name": bundle.meta.get("name", scene_dir.name),
            "t": without.T,
            "nt_without": without.NT,
            "nt_with": with_.NT,
            "objects": len(without.nt_per_object),
        })

    summary = []
    totals = {"t_sum": 0.0, "scenes": 0, "nt_without": 0, "nt_with": 0, "objects": 0}
    for archetype in sorted(per_archetype):
        agg = per_archetype[archetype]
        for key in totals:
            totals[key] += agg[key]
        summary.append(_summary_row(archetype, agg))
    summary.append(_summary_row("overall", totals))

    print(evaluation.format_table(rows))
    print()
    print(evaluation.format_table(summary))
    if args.out:
        bundles.write_json_atomic(args.out, {"scenes": rows, "summary": summary})
    return EXIT_OK


def _summary_row(name: str, agg: dict) -> dict:
    objects = agg["objects"]
    return {
        "name": name,
        "t": agg["t_sum"] / agg["scenes"] if agg["scenes"] else None,
        "nt_without": agg["nt_without"] / objects if objects else None,
        "nt_with": agg["nt_with"] / objects if objects else None,
        "objects": objects,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uvclean",
        description="Select UV disinfection cleaning points and waypoints from RGB-D scenes.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full pipeline on a scene bundle")
    p_run.add_argument("--scene", required=True, help="scene bundle directory")
    p_run.add_argument("--config", help="pipeline config JSON (defaults when omitted)")
    p_run.add_argument("--backend", choices=[bundles.BACKEND_FIXTURE, bundles.BACKEND_REMOTE],
                       help="override the config backend")
    p_run.add_argument("--endpoint", help="model server URL for the remote backend")
    p_run.add_argument("--out", required=True, help="artifact output directory")
    p_run.set_defaults(fn=_cmd_run)

    p_gen = sub.add_parser("gen", help="generate synthetic scene bundles")
    p_gen.add_argument("--spec", help="scene spec JSON file")
    p_gen.add_argument("--suite", action="store_true", help="generate the standard suite")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(fn=_cmd_gen)

    p_score = sub.add_parser("score", help="score run artifacts against ground truth")
    p_score.add_argument("--run", required=True, help="run artifact directory")
    p_score.add_argument("--scene", required=True, help="scene bundle with ground truth")
    p_score.set_defaults(fn=_cmd_score)

    p_bench = sub.add_parser("bench", help="score a whole suite, per-archetype table")
    p_bench.add_argument("--suite", required=True, help="directory of scene bundles")
    p_bench.add_argument("--config", help="pipeline config JSON")
    p_bench.add_argument("--out", help="optional JSON report path")
    p_bench.set_defaults(fn=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except ValidationError as exc:
        for finding in exc.findings:
            log.error("validation: %s", finding)
        return EXIT_VALIDATION
    except TransportError as exc:
        log.error("backend transport failure: %s", exc)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
