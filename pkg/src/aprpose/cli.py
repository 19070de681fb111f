"""Command-line entry point.

Exit codes: 0 success, 1 domain/contract/I-O error, 2 usage error.
``APR_LOG`` (DEBUG, INFO, WARNING, ...) sets log verbosity; logs go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import AprError

log = logging.getLogger("aprpose")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--modality", choices=["image", "bev", "points"], help="input modality (overrides config)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--json", action="store_true", help="print a machine-readable JSON summary")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="aprpose", description="Absolute pose regression toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--frames", type=int, help="training frames")
    p.add_argument("--test-frames", type=int, help="test frames (disjoint loop segment)")

    p = sub.add_parser("preprocess", parents=[common], help="cache model inputs for a manifest")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or a predictions file")
    p.add_argument("--manifest", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--predictions", help="manifest-format CSV of predicted poses")

    p = sub.add_parser("infer", parents=[common], help="estimate the pose of one frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="PPM image or binary point cloud")

    p = sub.add_parser("serve", parents=[common], help="run the initial-pose TCP service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int)
    p.add_argument("--host")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--epsilon", type=float, default=1e-5)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("APR_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _overrides(args) -> dict:
    o = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.modality is not None:
        o["modality"] = args.modality
    for flag, key in (("frames", "synth.frames"), ("test_frames", "synth.test_frames"),
                      ("epochs", "train.epochs"), ("port", "service.port"), ("host", "service.host")):
        if getattr(args, flag, None) is not None:
            o[key] = getattr(args, flag)
    return o


def _emit(args, summary: dict, text: str) -> None:
    print(json.dumps(summary, sort_keys=True) if args.json else text)


def _require_out(args) -> str:
    if not args.out:
        raise AprError(f"{args.command} needs --out DIR")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load_estimator(args, cfg):
    from .checkpoint import load_model
    from .pipeline import estimator_for

    model, _, stats, _ = load_model(args.checkpoint)
    if args.modality and args.modality != model.cfg.modality:
        raise AprError(f"--modality {args.modality} does not match the {model.cfg.modality} checkpoint")
    return estimator_for(model, stats, cfg)


def cmd_synth(args, cfg) -> int:
    from .data import write_synthetic_dataset

    out = _require_out(args)
    paths = write_synthetic_dataset(out, cfg.synth_config())
    _emit(args, {"manifests": paths}, "\n".join(f"{k}: {v}" for k, v in paths.items()))
    return 0


def cmd_preprocess(args, cfg) -> int:
    import numpy as np

    from .data import load_manifest
    from .inference import prepare_input, read_payload

    out = _require_out(args)
    manifest = load_manifest(args.manifest)
    written = 0
    for rec in manifest.records:
        path = manifest.payload_path(rec, cfg.modality)
        if path is None:
            log.warning("frame %s has no %s payload", rec.frame, cfg.modality)
            continue
        x = prepare_input(cfg.modality, read_payload(cfg.modality, path), cfg.model.input_size,
                          cfg.seed, cfg.bev_config(), cfg.lidar.crop_radius)
        np.save(os.path.join(out, f"{rec.frame}.{cfg.modality}.npy"), x.numpy())
        written += 1
    _emit(args, {"written": written, "modality": cfg.modality}, f"wrote {written} {cfg.modality} inputs to {out}")
    return 0


def cmd_train(args, cfg) -> int:
    from .data import load_manifest
    from .pipeline import train

    out = _require_out(args)
    manifest = load_manifest(args.manifest)
    _, loss_params, _, logs = train(manifest, cfg, out)
    with open(os.path.join(out, "train_log.jsonl"), "w", encoding="utf-8") as f:
        for e in logs:
            f.write(json.dumps(vars(e)) + "\n")
    last = logs[-1]
    summary = {"checkpoint": os.path.join(out, "checkpoint.bin"), "epochs": len(logs),
               "L_p": last.L_p, "L_o": last.L_o, "L_pose": last.L_pose, "s_x": last.s_x, "s_q": last.s_q}
    _emit(args, summary, f"trained {len(logs)} epochs; final L_pose {last.L_pose:.4f}; "
                         f"checkpoint {summary['checkpoint']}")
    return 0


def cmd_eval(args, cfg) -> int:
    from .data import load_manifest
    from .evaluation import estimator_predictor, evaluate, export_trajectory, table_predictor

    manifest = load_manifest(args.manifest)
    if args.predictions:
        predict = table_predictor(load_manifest(args.predictions, check_paths=False))
    else:
        predict = estimator_predictor(_load_estimator(args, cfg), manifest)
    report = evaluate(predict, manifest)
    summary = report.summary()
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        csv_path, svg_path = export_trajectory(report, os.path.join(args.out, "trajectory"))
        summary.update(csv=csv_path, svg=svg_path)
    for frame, msg in report.failures:
        log.warning("frame %s skipped: %s", frame, msg)
    if not report.results:
        raise AprError("no frame could be evaluated")
    _emit(args, summary,
          f"median position error {summary['median_position_error_m']:.3f} m / "
          f"median orientation error {summary['median_orientation_error_deg']:.3f} deg "
          f"over {summary['frames']} frames ({summary['failed']} failed)")
    return 0


def cmd_infer(args, cfg) -> int:
    est = _load_estimator(args, cfg)
    pose, ms = est.estimate_file(args.input)
    summary = {"position": pose.position.tolist(), "quaternion": pose.orientation.tolist(), "inference_ms": ms}
    p, q = pose.position, pose.orientation
    _emit(args, summary, f"position {p[0]:.4f} {p[1]:.4f} {p[2]:.4f} "
                         f"quaternion {q[0]:.6f} {q[1]:.6f} {q[2]:.6f} {q[3]:.6f}")
    return 0


def cmd_serve(args, cfg) -> int:
    from .service import serve

    serve(_load_estimator(args, cfg), cfg.service.host, cfg.service.port, cfg.service.covariance)
    return 0


def cmd_gradcheck(args, cfg) -> int:
    from .gradcheck import run_gradcheck

    modalities = [args.modality] if args.modality else ["image", "points"]
    reports = [run_gradcheck(m, seed=cfg.seed, epsilon=args.epsilon) for m in modalities]
    worst = max(r.max_relative_error for r in reports)
    summary = {"max_relative_error": worst, "reports": [r.to_dict() for r in reports]}
    lines = [f"{r.modality}: max relative error {r.max_relative_error:.3e} over {r.coordinates} "
             f"coordinates ({r.seconds:.1f}s)" for r in reports]
    lines.append(f"max relative error {worst:.3e}")
    _emit(args, summary, "\n".join(lines))
    return 0 if worst < 1e-3 else 1


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval,
            "infer": cmd_infer, "serve": cmd_serve, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        from .config import dump_config, load_config

        cfg = load_config(args.config, _overrides(args))
        echo = dump_config(cfg)
        log.info("effective config:\n%s", echo)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, "effective_config.json"), "w", encoding="utf-8") as f:
                f.write(echo + "\n")
        return COMMANDS[args.command](args, cfg)
    except (AprError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
