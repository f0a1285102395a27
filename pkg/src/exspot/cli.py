"""Command-line interface.

Commands: synth, train, spot, eval, loso. Exit codes: 0 success, 1 usage,
2 data error, 3 numeric failure. Set EXSPOT_LOG_LEVEL (DEBUG/INFO/...) to
control log verbosity; metric lines always go to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio, training
from .config import build_config
from .errors import ConfigError, DataError, NumericError
from .proposals import decode_video
from .scoring import TABLE_HEADER, score
from .snippets import plan_snippets
from .synthetic import SynthSpec, foreground_share, generate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run-config file")
    p.add_argument("--seed", type=int, help="override the run seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exspot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset", description=(
        "Generate the deterministic synthetic benchmark into --out."))
    p.add_argument("--spec", type=Path, help="JSON file of generator overrides")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, help="override the generator seed")

    p = sub.add_parser("train", help="train a spotting model")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--exclude-subject", help="drop one subject's videos")
    p.add_argument("--threads", type=int, help="parallel batch evaluation")

    p = sub.add_parser("spot", help="decode proposals with a trained model")
    _add_config_flags(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="proposals JSONL path")
    p.add_argument("--theta", type=float, help="decode threshold override")
    p.add_argument("--subject", help="only spot this subject's videos")
    p.add_argument("--probs-out", type=Path, help="also dump raw probabilities")

    p = sub.add_parser("eval", help="score proposals against a dataset")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--proposals", type=Path, required=True)
    p.add_argument("--k-eval", type=float, help="IoU threshold override")
    p.add_argument("--out", type=Path, help="report path prefix")
    p.add_argument(
        "--report", action="store_true",
        help="with --probs, also write a threshold-sweep SVG next to --out",
    )
    p.add_argument("--probs", type=Path, help="probability dump from spot")

    p = sub.add_parser("loso", help="leave-one-subject-out cross-validation")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--theta", type=float, help="decode threshold override")
    p.add_argument("--k-eval", type=float, help="IoU threshold override")
    p.add_argument("--threads", type=int, help="parallel batch evaluation")
    return parser


def _run_config(args, **extra):
    overrides = dict(extra)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "theta", None) is not None:
        overrides["threshold"] = args.theta
    if getattr(args, "k_eval", None) is not None:
        overrides["iou_threshold"] = args.k_eval
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    return build_config(getattr(args, "config", None), overrides)


def cmd_synth(args) -> int:
    spec_dict = {}
    if args.spec is not None:
        try:
            spec_dict = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read synth spec {args.spec}: {exc}") from exc
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    spec = SynthSpec.from_dict(spec_dict)
    videos = generate(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "synth_spec.json").write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    manifest = fileio.write_dataset(videos, args.out)
    n_gts = sum(len(v.gts) for v in videos)
    print(
        f"videos={len(videos)} subjects={spec.subjects} intervals={n_gts} "
        f"fg_share={foreground_share(videos):.4f} manifest={manifest}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    run_cfg = _run_config(args)
    video_ids = None
    if args.exclude_subject is not None:
        records = fileio.load_dataset(args.data)
        video_ids = {
            r.video_id for r in records if r.subject_id != args.exclude_subject
        }
        if not video_ids:
            raise DataError(f"excluding {args.exclude_subject!r} leaves no videos")
    videos = training.prepare_dataset(args.data, run_cfg, video_ids)
    resume = None
    if args.resume is not None:
        resume = fileio.load_checkpoint(args.resume, expect=run_cfg.spotter_config())
    args.out.parent.mkdir(parents=True, exist_ok=True)
    metrics_path = Path(str(args.out) + ".metrics")
    with open(metrics_path, "w") as metrics:
        def emit(line):
            print(line)
            metrics.write(line + "\n")

        result = training.train_spotter(videos, run_cfg, resume=resume, emit=emit)
    fileio.save_checkpoint(
        args.out,
        run_cfg.spotter_config(),
        result.params,
        epoch=result.epochs_run,
        adam=result.adam,
        train_state=result.train_state,
    )
    print(f"checkpoint={args.out} epochs={result.epochs_run} metrics={metrics_path}")
    return EXIT_OK


def cmd_spot(args) -> int:
    ckpt = fileio.load_checkpoint(args.ckpt)
    overrides = {
        name: getattr(ckpt.config, mapped)
        for name, mapped in (
            ("embed_dim", "embed_dim"), ("duration", "duration"),
            ("embed_blocks", "embed_blocks"), ("encoder_blocks", "encoder_blocks"),
            ("pyramid_blocks", "pyramid_blocks"), ("heads", "heads"),
            ("window", "window"), ("embed_kernel", "embed_kernel"),
            ("decoder_kernel", "decoder_kernel"),
            ("full_width_scale", "full_width_scale"),
        )
    }
    overrides["stream_width"] = ckpt.config.input_width // 2
    run_cfg = _run_config(args, **overrides)
    video_ids = None
    if args.subject is not None:
        records = fileio.load_dataset(args.data)
        video_ids = {r.video_id for r in records if r.subject_id == args.subject}
        if not video_ids:
            raise DataError(f"no videos for subject {args.subject!r}")
    videos = training.prepare_dataset(args.data, run_cfg, video_ids)
    proposals, probabilities = training.spot_videos(videos, ckpt.params, run_cfg)
    fileio.write_proposals(args.out, proposals)
    if args.probs_out is not None:
        fileio.write_probabilities(args.probs_out, probabilities)
    for vid in sorted(proposals):
        print(f"video={vid} proposals={len(proposals[vid])}")
    return EXIT_OK


THETA_SWEEP = (0.005, 0.01, 0.02, 0.05, 0.1)


def cmd_eval(args) -> int:
    run_cfg = _run_config(args)
    records = fileio.load_dataset(args.data)
    gts = {r.video_id: r.gts for r in records}
    proposals = fileio.read_proposals(args.proposals)
    counts = training.match_videos(proposals, gts, run_cfg.iou_threshold)
    report = score(counts)
    print(TABLE_HEADER)
    print(report.table_row())
    reports = [report]
    if args.out is not None:
        fileio.write_report(args.out, reports)
    if args.report:
        if args.probs is None:
            raise DataError("--report needs --probs (see spot --probs-out)")
        if args.out is None:
            raise DataError("--report needs --out for the SVG path prefix")
        probabilities = fileio.read_probabilities(args.probs)
        unknown = set(probabilities) - set(gts)
        if unknown:
            raise DataError(f"probabilities for unknown videos: {sorted(unknown)}")
        by_record = {r.video_id: r for r in records}
        sweep_reports, sweep_counts = [], []
        for theta in THETA_SWEEP:
            decoded = {}
            for vid, probs in probabilities.items():
                rec = by_record[vid]
                plan = plan_snippets(rec.frame_count, run_cfg.snippet_len, run_cfg.overlap)
                full = np.zeros(max(plan.count, probs.shape[0]))
                full[: probs.shape[0]] = probs
                mask = np.zeros_like(full)
                mask[: plan.count] = 1.0
                decode_cfg = run_cfg.decode_config()
                decoded[vid] = decode_video(
                    full,
                    mask,
                    plan,
                    rec.fps,
                    type(decode_cfg)(theta, decode_cfg.me_max_seconds),
                )
            c = training.match_videos(decoded, gts, run_cfg.iou_threshold)
            sweep_reports.append(score(c, fold=f"theta={theta:g}"))
            sweep_counts.append(sum(len(v) for v in decoded.values()))
        svg_path = Path(str(args.out) + "_sweep.svg")
        fileio.write_sweep_svg(svg_path, list(THETA_SWEEP), sweep_reports, sweep_counts)
        print(f"sweep={svg_path}")
    return EXIT_OK


def cmd_loso(args) -> int:
    run_cfg = _run_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    outcomes, total = training.run_loso(args.data, run_cfg, args.out, emit=print)
    print(TABLE_HEADER)
    for outcome in outcomes:
        print(outcome.report.table_row())
    print(total.table_row())
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "spot": cmd_spot,
    "eval": cmd_eval,
    "loso": cmd_loso,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("EXSPOT_LOG_LEVEL", "WARNING"))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"exspot: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"exspot: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"exspot: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"exspot: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
