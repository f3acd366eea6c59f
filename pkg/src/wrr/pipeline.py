"""End-to-end stage composition: record, reduce, generate, re-record.

The accuracy check reproduces the recording setup against the generated
replay: the replay module is instrumented with its replay functions
treated as host boundary (spliced replacements) or opaque plumbing
(entry and auxiliaries), run under an empty host, and the re-recorded
reduced trace must equal the source reduced trace event for event.
"""

from __future__ import annotations

from dataclasses import dataclass

from .codegen import (DYNAMIC_LINKING, JS_REPLAY, SELF_CONTAINED, ReplayBundle,
                      gen_dynamic_linking, gen_js_replay, gen_self_contained)
from .errors import WrrError
from .instrument import InstrumentationConfig, instrument
from .interp import RawCollector, run_scenario
from .reduce import OnlineReducer, ReduceStats, reduce_trace
from .replay_ir import (DEFAULT_SPLIT_THRESHOLD, Replay, merge_memory_writes,
                        split_functions, translate)
from .scenario import HostScenario, InvokeExport
from .trace import Trace, encode_binary
from .wasm import DEFAULT_BODY_LIMIT, WasmModule


def record_trace(module: WasmModule, scenario: HostScenario, reduced: bool = True,
                 stats: ReduceStats | None = None) -> Trace:
    """Instrument `module` and run `scenario`, recording raw or online-reduced."""
    mi = instrument(module)
    sink = OnlineReducer(module, stats=stats) if reduced else RawCollector()
    trace, _ = run_scenario(mi, scenario, record=True, sink=sink)
    return trace


def build_ir(reduced: Trace, module: WasmModule, merge: bool = True,
             split_threshold: int | None = DEFAULT_SPLIT_THRESHOLD):
    """Translate and optimize; returns (replay, aux_contexts)."""
    replay = translate(reduced, module)
    if merge:
        replay = merge_memory_writes(replay)
    if split_threshold is not None:
        replay, aux = split_functions(replay, split_threshold)
    else:
        aux = []
    return replay, aux


_GENERATORS = {
    SELF_CONTAINED: gen_self_contained,
    JS_REPLAY: lambda original, replay, aux, body_limit, trace_bytes:
        gen_js_replay(original, replay, aux, trace_bytes=trace_bytes),
    DYNAMIC_LINKING: gen_dynamic_linking,
}


def generate_bundle(reduced: Trace, module: WasmModule, fmt: str = SELF_CONTAINED,
                    merge: bool = True,
                    split_threshold: int | None = DEFAULT_SPLIT_THRESHOLD,
                    body_limit: int = DEFAULT_BODY_LIMIT) -> ReplayBundle:
    replay, aux = build_ir(reduced, module, merge, split_threshold)
    trace_bytes = encode_binary(reduced)
    if fmt == SELF_CONTAINED:
        return gen_self_contained(module, replay, aux, body_limit=body_limit,
                                  trace_bytes=trace_bytes)
    if fmt == JS_REPLAY:
        return gen_js_replay(module, replay, aux, trace_bytes=trace_bytes)
    if fmt == DYNAMIC_LINKING:
        return gen_dynamic_linking(module, replay, aux, body_limit=body_limit,
                                   trace_bytes=trace_bytes)
    raise WrrError(f"unknown output format {fmt!r}")


def rerecord_bundle(bundle: ReplayBundle) -> Trace:
    """Instrument a self-contained replay bundle and re-record its run."""
    from .wasm import parse_module

    module = parse_module(bundle.artifacts[bundle.manifest["artifacts"]["module"]])
    boundary = frozenset(bundle.manifest["boundary_funcs"])
    skip = frozenset(bundle.manifest["replay_funcs"]) - boundary
    cfg = InstrumentationConfig(boundary_funcs=boundary, skip_funcs=skip)
    mi = instrument(module, cfg)
    scenario = HostScenario(steps=(InvokeExport(bundle.manifest["entry"], ()),))
    sink = OnlineReducer(module, boundary_funcs=boundary)
    trace, _ = run_scenario(mi, scenario, record=True, sink=sink,
                            boundary_funcs=boundary)
    return trace


@dataclass
class ValidationResult:
    source: Trace
    replayed: Trace

    @property
    def ok(self) -> bool:
        return self.source.events == self.replayed.events

    def first_divergence(self):
        """(index, source event or None, replayed event or None) or None."""
        a, b = self.source.events, self.replayed.events
        for i in range(max(len(a), len(b))):
            ea = a[i] if i < len(a) else None
            eb = b[i] if i < len(b) else None
            if ea != eb:
                return i, ea, eb
        return None


def validate_pipeline(module: WasmModule, scenario: HostScenario, merge: bool = True,
                      split_threshold: int | None = DEFAULT_SPLIT_THRESHOLD,
                      body_limit: int = DEFAULT_BODY_LIMIT,
                      against: Trace | None = None) -> ValidationResult:
    """record -> reduce -> generate -> re-record; compare reduced traces.

    With `against`, the bundle is generated from that stored trace instead
    of a fresh recording and the re-recording must reproduce it.
    """
    source = against if against is not None else record_trace(module, scenario,
                                                              reduced=True)
    bundle = generate_bundle(source, module, SELF_CONTAINED, merge, split_threshold,
                             body_limit)
    replayed = rerecord_bundle(bundle)
    return ValidationResult(source, replayed)
