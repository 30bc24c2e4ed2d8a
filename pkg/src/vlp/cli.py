"""Command-line entry point: ``vlp run``, ``vlp stats`` and ``vlp protodump``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from vlp.errors import VLPError, WireFormatError
from vlp.harness.experiment import ExperimentSpec, read_samples, run_experiment
from vlp.harness.stats import error_distribution
from vlp.mesh.wire import ImageBody, decode

EXIT_OK, EXIT_FAIL, EXIT_DEGRADED = 0, 1, 2


def _cmd_run(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    overrides = {k: v for k, v in (("topology", args.topology), ("preset", args.preset), ("seed", args.seed))
                 if v is not None}
    if overrides:
        spec = replace(spec, **overrides)
    out = Path(args.out) if args.out else Path("runs") / spec.name
    res = run_experiment(spec, out)
    sys.stdout.write(res.files["report"].read_text())
    print(f"wrote {out}")
    if res.stats is None:
        return EXIT_FAIL
    return EXIT_DEGRADED if res.degraded else EXIT_OK


def _cmd_stats(args) -> int:
    samples = read_samples(args.samples)
    if not samples:
        print("no samples", file=sys.stderr)
        return EXIT_FAIL
    print(error_distribution(samples, args.axis).summary())
    return EXIT_OK


def _cmd_protodump(args) -> int:
    data = Path(args.frame).read_bytes()
    try:
        msg = decode(data)
    except WireFormatError as e:
        print(f"malformed message: {e}", file=sys.stderr)
        return EXIT_FAIL
    kind = {1: "topic", 2: "request", 3: "response"}[msg.KIND]
    print(f"kind       {kind}")
    print(f"name       {msg.name}")
    print(f"seq/id     {getattr(msg, 'seq', getattr(msg, 'request_id', None))}")
    print(f"timestamp  {msg.timestamp_ns} ns")
    body = msg.payload if kind == "topic" else msg.body
    print(f"body       {type(body).__name__} ({len(data)} bytes on the wire)")
    if isinstance(body, ImageBody):
        px = body.to_array() if body.encoding == 0 else np.frombuffer(body.pixels, np.uint8)
        print(f"image      {body.width}x{body.height} enc={body.encoding} "
              f"min={px.min() if px.size else 0} max={px.max() if px.size else 0} mean={px.mean() if px.size else 0:.2f}")
    else:
        print(f"fields     {body}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vlp", description="Double-lamp visible light positioning toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run an experiment spec through the pipeline")
    r.add_argument("spec", help="experiment spec JSON")
    r.add_argument("--topology", choices=("local", "split"))
    r.add_argument("--preset", choices=("native", "compressed"))
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (default runs/<name>)")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("stats", help="summarise a samples CSV")
    s.add_argument("samples")
    s.add_argument("--axis", choices=("x", "y"), help="fit a line with this independent axis")
    s.set_defaults(func=_cmd_stats)

    d = sub.add_parser("protodump", help="decode one wire message file")
    d.add_argument("frame")
    d.set_defaults(func=_cmd_protodump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (VLPError, OSError, ValueError, KeyError) as e:
        print(f"vlp: error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
