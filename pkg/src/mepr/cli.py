"""Command line entry point: ``mepr <command> <config> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .config import PRESETS, ConfigError, load_scenario

log = logging.getLogger("mepr")


def _point(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"point must be x,y,z, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"point must be x,y,z, got {text!r}")
    return vals


def _common(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("config", help=f"scenario YAML file or preset name ({', '.join(PRESETS)})")
    if out:
        p.add_argument("-o", "--out", type=Path, default=None, help="output directory (default: runs/<name>/<cmd>)")
        p.add_argument("-j", "--workers", type=int, default=None, help="worker processes (overrides the config)")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mepr", description="Metasurface-enabled passive radar simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("validate", help="check a scenario file and print a summary"), out=False)
    _common(sub.add_parser("sweep-tl", help="SIR versus coding length for each code family"))
    _common(sub.add_parser("two-target", help="two-target resolvability versus separation and coding length"))
    _common(sub.add_parser("image", help="letter imaging with background subtraction"))
    _common(sub.add_parser("track", help="coarse-to-fine tracking along letter trajectories"))
    p = sub.add_parser("probe", help="single focus point: traces and correlation profile")
    _common(p)
    p.add_argument("--point", type=_point, required=True, help="focus point x,y,z in metres")
    return ap


def _outdir(args, cfg) -> Path:
    return args.out if args.out is not None else Path("runs") / cfg.name / args.command


def run(args) -> int:
    cfg = load_scenario(args.config)
    if args.command == "validate":
        for line in ex.validate(cfg):
            print(line)
        return 0
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    out = _outdir(args, cfg)
    w = args.workers
    if args.command == "sweep-tl":
        res = ex.run_sweep_tl(cfg, out, w)
        for fam in cfg.sweep.families:
            Ms, med = res.curve(fam)
            print(f"{fam:8s}", " ".join(f"M={M}:{v:6.2f} dB" for M, v in zip(Ms, med)))
    elif args.command == "two-target":
        res = ex.run_two_target(cfg, out, w)
        n = cfg.two_target.seeds
        for (u, M), c in sorted(res.counts().items()):
            print(f"separation {u:g} res ({u * res.resolution:.3f} m), M={M}: resolved {c}/{n}")
    elif args.command == "image":
        res = ex.run_imaging(cfg, out, w)
        for M, v in res.medians().items():
            print(f"M={M}: median contrast {v:.3f}")
        print(f"frame time {ex.format_frame_time(res.frame_time)}")
    elif args.command == "track":
        res = ex.run_tracking(cfg, out, w)
        for row in res.summary_rows():
            L, cond, n, mean, *_rest = row
            print(f"{L} {cond:10s} frames={n} mean error {mean:.4f} m lock_lost={bool(row[6])}")
    elif args.command == "probe":
        v = ex.run_probe(cfg, args.point, out)
        print(f"value {v.real:.6g}{v.imag:+.6g}j |value| {abs(v):.6g}")
    print(f"outputs in {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
