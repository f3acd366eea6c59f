"""Command line driver for the record-reduce-replay pipeline.

Exit codes: 0 success, 2 parse error, 3 unsupported feature, 4 scenario
or execution error, 5 trace divergence (validate), 1 other errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .codegen import FORMATS, SELF_CONTAINED, read_bundle, write_bundle
from .codegen.bundle import atomic_write
from .errors import (LinkError, MalformedModule, MalformedTrace, ScenarioExhausted,
                     SignatureMismatch, Trap, TrapDuringStart, UnsupportedFeature,
                     WrrError)
from .instrument import InstrumentationConfig, instrument
from .interp import ScenarioError
from .pipeline import build_ir, generate_bundle, record_trace, validate_pipeline
from .reduce import ReduceStats, reduce_trace
from .replay_ir import DEFAULT_SPLIT_THRESHOLD, dump_replay, ir_stats
from .scenario import load_scenario
from .trace import Trace, decode_binary, decode_text, encode_binary, encode_text
from .wasm import DEFAULT_BODY_LIMIT, encode_module, parse_module

EXIT_PARSE = 2
EXIT_UNSUPPORTED = 3
EXIT_SCENARIO = 4
EXIT_DIVERGENCE = 5


def _read(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _load_module(path: str):
    return parse_module(_read(path))


def _load_trace(path: str) -> Trace:
    data = _read(path)
    if path.endswith(".txt"):
        return decode_text(data.decode("utf-8"))
    return decode_binary(data)


def _write_trace(path: str, trace: Trace) -> None:
    if path.endswith(".txt"):
        atomic_write(path, encode_text(trace).encode("utf-8"))
    else:
        atomic_write(path, encode_binary(trace))


def cmd_instrument(args) -> int:
    module = _load_module(args.wasm_in)
    out = instrument(module, InstrumentationConfig())
    atomic_write(args.wasm_out, encode_module(out))
    return 0


def cmd_record(args) -> int:
    module = _load_module(args.wasm)
    scenario = load_scenario(args.scenario)
    trace = record_trace(module, scenario, reduced=not args.raw)
    _write_trace(args.trace_out, trace)
    return 0


def cmd_reduce(args) -> int:
    module = _load_module(args.wasm)
    raw = _load_trace(args.trace_in)
    stats = ReduceStats() if args.stats else None
    reduced = reduce_trace(raw, module, stats=stats)
    _write_trace(args.trace_out, reduced)
    if stats is not None:
        if args.format == "json":
            print(json.dumps(stats.as_dict(), indent=2))
        else:
            d = stats.as_dict()
            print(f"events: {d['total']} total, {d['total_kept']} kept")
            for name, n in d["kept"].items():
                print(f"  kept {name}: {n}")
            for name, n in d["discarded"].items():
                print(f"  discarded {name}: {n}")
    return 0


def cmd_generate(args) -> int:
    module = _load_module(args.wasm)
    reduced = _load_trace(args.trace)
    split = None if args.split_threshold == 0 else args.split_threshold
    bundle = generate_bundle(reduced, module, args.format, merge=not args.no_merge,
                             split_threshold=split, body_limit=args.body_limit)
    write_bundle(bundle, args.out_dir)
    if args.dump_ir:
        replay, aux = build_ir(reduced, module, merge=not args.no_merge,
                               split_threshold=split)
        atomic_write(os.path.join(args.out_dir, "replay.ir.txt"),
                     dump_replay(replay, aux).encode("utf-8"))
    print(f"wrote {args.format} bundle to {args.out_dir}")
    return 0


def cmd_validate(args) -> int:
    module = _load_module(args.wasm)
    scenario = load_scenario(args.scenario)
    split = None if args.split_threshold == 0 else args.split_threshold
    against = _load_trace(args.against) if args.against else None
    result = validate_pipeline(module, scenario, merge=not args.no_merge,
                               split_threshold=split, body_limit=args.body_limit,
                               against=against)
    if result.ok:
        print(f"validate: OK ({len(result.source)} events replayed identically)")
        return 0
    idx, ea, eb = result.first_divergence()
    print(f"validate: DIVERGENCE at event {idx}")
    print(f"  recorded: {ea}")
    print(f"  replayed: {eb}")
    return EXIT_DIVERGENCE


def cmd_stats(args) -> int:
    if os.path.isdir(args.path):
        bundle = read_bundle(args.path)
        info = {
            "format": bundle.manifest["format"],
            "entry": bundle.manifest["entry"],
            "source_trace_sha256": bundle.manifest["source_trace_sha256"],
            "artifacts": {name: len(data) for name, data in bundle.artifacts.items()},
        }
    else:
        trace = _load_trace(args.path)
        counts: dict[str, int] = {}
        for e in trace:
            counts[type(e).__name__] = counts.get(type(e).__name__, 0) + 1
        info = {"events": len(trace), "by_type": dict(sorted(counts.items()))}
        if args.wasm:
            module = _load_module(args.wasm)
            replay, aux = build_ir(trace, module)
            info["ir"] = ir_stats(replay, aux)
    if args.format == "json":
        print(json.dumps(info, indent=2))
    else:
        for key, value in info.items():
            print(f"{key}: {value}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wrr",
                                description="Record, reduce, and replay wasm host interactions.")
    p.add_argument("--version", action="version", version=f"wrr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("instrument", help="rewrite a module to record its trace")
    sp.add_argument("wasm_in")
    sp.add_argument("wasm_out")
    sp.set_defaults(func=cmd_instrument)

    sp = sub.add_parser("record", help="run a scenario against an instrumented copy")
    sp.add_argument("wasm")
    sp.add_argument("scenario")
    sp.add_argument("trace_out")
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--raw", action="store_true", help="write the unreduced trace")
    mode.add_argument("--reduced", action="store_true", help="reduce online (default)")
    sp.set_defaults(func=cmd_record)

    sp = sub.add_parser("reduce", help="reduce a raw trace offline")
    sp.add_argument("trace_in")
    sp.add_argument("wasm")
    sp.add_argument("trace_out")
    sp.add_argument("--stats", action="store_true")
    sp.add_argument("--format", choices=["text", "json"], default="text")
    sp.set_defaults(func=cmd_reduce)

    sp = sub.add_parser("generate", help="compile a reduced trace into a replay bundle")
    sp.add_argument("trace")
    sp.add_argument("wasm")
    sp.add_argument("out_dir")
    sp.add_argument("--format", choices=list(FORMATS), default=SELF_CONTAINED)
    sp.add_argument("--no-merge", action="store_true")
    sp.add_argument("--split-threshold", type=int, default=DEFAULT_SPLIT_THRESHOLD,
                    help="actions per generated function (0 disables splitting)")
    sp.add_argument("--body-limit", type=int, default=DEFAULT_BODY_LIMIT)
    sp.add_argument("--dump-ir", action="store_true")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("validate",
                        help="record, generate, re-record, and compare traces")
    sp.add_argument("wasm")
    sp.add_argument("scenario")
    sp.add_argument("--no-merge", action="store_true")
    sp.add_argument("--split-threshold", type=int, default=DEFAULT_SPLIT_THRESHOLD)
    sp.add_argument("--body-limit", type=int, default=DEFAULT_BODY_LIMIT)
    sp.add_argument("--against", metavar="TRACE",
                    help="replay this stored reduced trace instead of recording")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("stats", help="describe a trace file or a bundle directory")
    sp.add_argument("path")
    sp.add_argument("--wasm", help="module for IR statistics of a trace")
    sp.add_argument("--format", choices=["text", "json"], default="text")
    sp.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MalformedModule, MalformedTrace) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except UnsupportedFeature as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (LinkError, ScenarioExhausted, ScenarioError, Trap, TrapDuringStart,
            SignatureMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except WrrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
