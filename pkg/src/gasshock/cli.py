"""Command-line entry point: one subcommand per stage plus ``run``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .pipeline import OUT_DIR_ENV, STAGES, Context, PipelineConfig, run_pipeline, run_stage, StageError

log = logging.getLogger("gasshock")


def _add_stage(sub, name: str) -> None:
    _, params, doc = STAGES[name]
    p = sub.add_parser(name, help=doc, description=doc)
    for prm in params:
        flag = "--" + prm.name.replace("_", "-")
        default_note = "" if prm.default in (None, [], False) else f" (default: {prm.default})"
        if prm.flag:
            p.add_argument(flag, dest=prm.name, action="store_true", default=None, help=prm.help)
        elif prm.repeat:
            p.add_argument(flag, dest=prm.name, action="append", help=prm.help + " (repeatable)")
        else:
            p.add_argument(flag, dest=prm.name, help=prm.help + default_note)
    p.set_defaults(stage=name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gasshock", description="Gas price shock toolkit.")
    parser.add_argument("--seed", dest="master_seed", type=int, default=0, help="master seed (default: 0)")
    parser.add_argument("--out-dir", default=None, help=f"output directory (env {OUT_DIR_ENV}, default: .)")
    parser.add_argument("--threads", type=int, default=1, help="worker-count hint for linear algebra")
    parser.add_argument("--verbose", "-v", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        _add_stage(sub, name)
    run = sub.add_parser("run", help="run a config-driven pipeline")
    run.add_argument("config", help="INI file with a [run] section and one section per stage")
    run.set_defaults(stage=None)
    return parser


def _set_threads(n: int) -> None:
    # only effective before the BLAS pool starts
    if n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(n))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    _set_threads(args.threads)
    if args.command == "run":
        try:
            config = PipelineConfig.read(args.config, out_dir=args.out_dir)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        status, manifest = run_pipeline(config)
        if status:
            marker = (manifest.parent / "FAILED").read_text().strip().replace("\n", "; ")
            print(f"error: {marker}", file=sys.stderr)
        else:
            print(manifest)
        return status

    _, params, _ = STAGES[args.stage]
    values = {p.name: getattr(args, p.name) for p in params if getattr(args, p.name) is not None}
    out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or ".")
    ctx = Context(out_dir, Path("."), args.master_seed)
    try:
        written = run_stage(args.stage, ctx, values)
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        err = StageError(args.stage, exc)
        print(f"error: {err}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
