"""Command-line entry points.

Exit codes: 0 on success, 1 on configuration errors (bad flags, bad
weights, contract violations), 2 on I/O and file-format errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .core_io import ContractError, FormatError, FusionWeights
from .diffs import SSIMConfig
from .features import ExtractorConfig
from .pipeline import (
    MaskSource,
    RefineStrategy,
    RunConfig,
    default_sweep_grid,
    run_baseline,
    run_evaluate,
    run_score,
    run_sweep,
)
from .synthgen import SynthConfig, describe, generate


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ContractError(message)


def _parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ContractError(f"expected HxW, e.g. 96x128, got {text!r}")
    try:
        h, w = int(parts[0]), int(parts[1])
    except ValueError:
        raise ContractError(f"expected integer dimensions, got {text!r}") from None
    return h, w


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="umadkit",
                     description="Anomaly scoring from world-model outputs.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic benchmark dataset")
    gen.add_argument("--out", required=True, type=Path)
    gen.add_argument("--seed", type=int, default=42)
    gen.add_argument("--scenarios", type=int, default=8)
    gen.add_argument("--frames", type=int, default=20,
                     help="sampled frames per scenario")
    gen.add_argument("--size", type=_parse_size, default=(96, 128), metavar="HxW")
    gen.add_argument("--anomaly-rate", type=float, default=0.5)
    gen.add_argument("--noise-sigma", type=float, default=0.02)
    gen.add_argument("--drift", type=float, default=0.01)
    gen.add_argument("--history", type=int, default=2)

    def add_scoring_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--manifest", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--ssim-window", type=int, default=11)
        p.add_argument("--history", type=int, default=None,
                       help="use this many past predictions (default: manifest value)")
        p.add_argument("--seed", type=int, default=42,
                       help="feature extractor seed")
        p.add_argument("--features-dir", type=Path, default=None,
                       help="load per-frame UMFS feature dumps instead of extracting")

    score = sub.add_parser("score", help="fuse difference maps into score maps")
    add_scoring_flags(score)
    score.add_argument("--weights", type=FusionWeights.from_string,
                       default=FusionWeights(0.2, 0.2, 0.2, 0.2, 0.2),
                       metavar="a,m,s,p,t")
    score.add_argument("--strategy", choices=[s.value for s in RefineStrategy],
                       default="none")
    score.add_argument("--masks", choices=[m.value for m in MaskSource],
                       default="predicted")

    ev = sub.add_parser("evaluate", help="pooled metrics for written score maps")
    ev.add_argument("--manifest", required=True, type=Path)
    ev.add_argument("--scores", required=True, type=Path)
    ev.add_argument("--out", type=Path, default=None,
                    help="also write the report to this file")

    sweep = sub.add_parser("sweep", help="run the default weight/strategy grid")
    add_scoring_flags(sweep)

    base = sub.add_parser("baseline", help="write raw L2 distance maps")
    base.add_argument("--manifest", required=True, type=Path)
    base.add_argument("--out", required=True, type=Path)

    return parser


def _cmd_generate(args: argparse.Namespace) -> None:
    cfg = SynthConfig(
        seed=args.seed,
        num_scenarios=args.scenarios,
        frames_per_scenario=args.frames,
        image_size=args.size,
        anomaly_rate=args.anomaly_rate,
        recon_noise_sigma=args.noise_sigma,
        prediction_drift=args.drift,
        history_depth=args.history,
    )
    manifest = generate(cfg, args.out)
    print(f"manifest: {Path(args.out) / 'manifest.txt'}")
    print(describe(manifest).to_text(), end="")


def _cmd_score(args: argparse.Namespace) -> None:
    rc = RunConfig(
        manifest_path=args.manifest,
        weights=args.weights,
        out_dir=args.out,
        strategy=RefineStrategy(args.strategy),
        mask_source=MaskSource(args.masks),
        ssim=SSIMConfig(window=args.ssim_window),
        extractor=ExtractorConfig(seed=args.seed),
        features_dir=args.features_dir,
        history=args.history,
    )
    written = run_score(rc)
    print(f"wrote {len(written)} score maps under {args.out}")


def _cmd_evaluate(args: argparse.Namespace) -> None:
    report = run_evaluate(args.scores, args.manifest)
    text = report.to_text()
    if args.out is not None:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")


def _cmd_sweep(args: argparse.Namespace) -> None:
    result = run_sweep(
        args.manifest,
        default_sweep_grid(),
        args.out,
        ssim=SSIMConfig(window=args.ssim_window),
        extractor=ExtractorConfig(seed=args.seed),
        features_dir=args.features_dir,
        history=args.history,
    )
    print(result.to_text(), end="")


def _cmd_baseline(args: argparse.Namespace) -> None:
    written = run_baseline(args.manifest, args.out)
    print(f"wrote {len(written)} baseline maps under {args.out}")


_HANDLERS = {
    "generate": _cmd_generate,
    "score": _cmd_score,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "baseline": _cmd_baseline,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _HANDLERS[args.command](args)
        return 0
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
