"""Command-line entry point.

    psotrust aggregate RECOMMENDATIONS.csv [--seed N] [--c1 X] [--c2 X]
                       [--epsilon X] [--max-iterations N] [--trace PATH] [--out DIR]
    psotrust simulate SCENARIO.conf [--seed N] [--out DIR]

Exit status: 0 on success, 1 on I/O failure, 2 on malformed input or an
out-of-domain value.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import cloud_sim, pso_engine
from .errors import ConfigError, FormatError, PsoTrustError
from .pso_engine import PsoConfig
from .weights import Recommendation, fmt_real

logger = logging.getLogger("psotrust")

EXIT_OK = 0
EXIT_IO = 1
EXIT_INPUT = 2

RECOMMENDATION_HEADER = ("recommender_id", "recommender_trust", "reported_value")

SIM_KEYS = (
    "max_population",
    "initial_clients",
    "initial_providers",
    "arrival_probability",
    "departure_probability",
    "malicious_fraction",
    "acquaintances_per_provider",
    "ticks",
    "seed",
    "threshold",
)
PSO_KEYS = ("c1", "c2", "epsilon", "max_iterations")
INT_KEYS = frozenset(
    {"max_population", "initial_clients", "initial_providers", "acquaintances_per_provider", "ticks", "seed", "max_iterations"}
)


def parse_recommendations(text: str) -> list[Recommendation]:
    """Parse a recommendation file.

    The header row is optional; every other non-blank line is
    ``recommender_id,recommender_trust,reported_value``.
    """
    recs = []
    seen: set[str] = set()
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if lineno == 1 and tuple(c.strip() for c in row) == RECOMMENDATION_HEADER:
            continue
        if len(row) != 3:
            raise FormatError(f"expected 3 fields, got {len(row)}", line=lineno)
        rid = row[0].strip()
        if not rid:
            raise FormatError("empty recommender_id", line=lineno)
        if rid in seen:
            raise FormatError(f"duplicate recommender_id {rid!r}", line=lineno)
        values = []
        for name, cell in zip(RECOMMENDATION_HEADER[1:], row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(f"{name} {cell.strip()!r} is not a number", line=lineno) from None
            if not -1.0 <= v <= 1.0:
                raise FormatError(f"{name} {cell.strip()} outside [-1, 1]", line=lineno)
            values.append(v)
        seen.add(rid)
        recs.append(Recommendation(rid, *values))
    return recs


def write_recommendations(recs: Sequence[Recommendation], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(RECOMMENDATION_HEADER)
    for r in recs:
        writer.writerow([r.recommender_id, f"{r.recommender_trust:.17g}", f"{r.reported_value:.17g}"])


def _coerce(key: str, raw: str):
    try:
        return int(raw) if key in INT_KEYS else float(raw)
    except ValueError:
        kind = "an integer" if key in INT_KEYS else "a real"
        raise ConfigError(f"{key}: {raw!r} is not {kind}", key=key) from None


def parse_scenario(text: str) -> dict[str, int | float]:
    """Parse ``key=value`` lines.  ``#`` starts a comment; unknown or
    repeated keys are rejected."""
    values: dict[str, int | float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value", key=key or None)
        if key not in SIM_KEYS and key not in PSO_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", key=key)
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice", key=key)
        values[key] = _coerce(key, raw.strip())
    return values


def build_sim_config(values: dict[str, int | float], seed: int | None = None) -> cloud_sim.SimConfig:
    """Apply defaults, then file values, then flag overrides."""
    values = dict(values)
    if seed is not None:
        values["seed"] = seed
    pso_fields = {k: values.pop(k) for k in PSO_KEYS if k in values}
    try:
        pso = PsoConfig(**pso_fields)
    except PsoTrustError as exc:
        key = next((k for k in pso_fields if k in str(exc)), None)
        raise ConfigError(str(exc), key=key) from None
    return cloud_sim.SimConfig(**values, pso=pso)


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not a 64-bit unsigned integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psotrust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=None)
    common.add_argument("--out", type=Path, default=None, help="output directory")

    agg = sub.add_parser("aggregate", parents=[common], help="aggregate one recommendation file")
    agg.add_argument("input", type=Path)
    defaults = PsoConfig()
    agg.add_argument("--c1", type=float, default=defaults.c1)
    agg.add_argument("--c2", type=float, default=defaults.c2)
    agg.add_argument("--epsilon", type=float, default=defaults.epsilon)
    agg.add_argument("--max-iterations", type=int, default=defaults.max_iterations)
    agg.add_argument("--trace", type=Path, default=None, help="write the per-iteration trace here")

    sim = sub.add_parser("simulate", parents=[common], help="run a scenario")
    sim.add_argument("config", type=Path)
    return parser


def cmd_aggregate(args: argparse.Namespace, stdout) -> int:
    try:
        text = args.input.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"psotrust: cannot read {args.input}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    try:
        recs = parse_recommendations(text)
        if not recs:
            raise FormatError("no recommendations in file")
        config = PsoConfig(
            c1=args.c1,
            c2=args.c2,
            epsilon=args.epsilon,
            max_iterations=args.max_iterations,
            seed=args.seed if args.seed is not None else 0,
        )
        result = pso_engine.aggregate(recs, config)
    except (PsoTrustError, ValueError) as exc:
        print(f"psotrust: {args.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT

    trace_path = args.trace
    if trace_path is None and args.out is not None:
        trace_path = args.out / "trace.csv"
    if trace_path is not None:
        try:
            trace_path.parent.mkdir(parents=True, exist_ok=True)
            with trace_path.open("w", encoding="utf-8", newline="") as fh:
                pso_engine.write_trace(result.trace, fh)
        except OSError as exc:
            print(f"psotrust: cannot write {trace_path}: {exc.strerror or exc}", file=sys.stderr)
            return EXIT_IO
    logger.info("iterations=%d converged=%s", result.iterations_used, result.converged)
    print(fmt_real(result.trust_weight), file=stdout)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, stdout) -> int:
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"psotrust: cannot read {args.config}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    try:
        config = build_sim_config(parse_scenario(text), seed=args.seed)
    except ConfigError as exc:
        print(f"psotrust: {args.config}: {exc}", file=sys.stderr)
        return EXIT_INPUT

    metrics, events = cloud_sim.run(config)
    summary = cloud_sim.metrics_to_text(metrics)
    out = args.out if args.out is not None else Path(".")
    try:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "events.csv").open("w", encoding="utf-8", newline="") as fh:
            cloud_sim.write_events(events, fh)
        (out / "metrics.txt").write_text(summary, encoding="utf-8", newline="")
    except OSError as exc:
        print(f"psotrust: cannot write to {out}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    stdout.write(summary)
    return EXIT_OK


def main(argv: Sequence[str] | None = None, stdout=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "aggregate":
        return cmd_aggregate(args, stdout)
    return cmd_simulate(args, stdout)


if __name__ == "__main__":
    sys.exit(main())
