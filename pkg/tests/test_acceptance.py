"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one line, `ACCEPTANCE <criterion>: PASS`, after its
assertions hold; a failing criterion fails the test before the line is
printed.  Run with `pytest tests/test_acceptance.py -v -s`.
"""

import json
import random
import shutil
import time

import pytest

from corpus import CORPUS
from test_reduce import _random_playground
from test_trace import random_trace
from wrr.cli import main
from wrr.codegen import SELF_CONTAINED
from wrr.errors import LimitExceeded
from wrr.instrument import instrument
from wrr.interp import RawCollector, instantiate, run_scenario
from wrr.pipeline import build_ir, generate_bundle, record_trace
from wrr.reduce import OnlineReducer, reduce_trace
from wrr.replay_ir import BulkMutateMem
from wrr.scenario import EMPTY_SCENARIO, scenario_to_json
from wrr.trace import (Call, CallReturn, FuncEntry, Load, decode_binary, decode_text,
                       encode_binary, encode_text, i8)
from wrr.wasm import encode_module, parse_module, validate_module

# The twelve interaction shapes the accuracy criterion names, plus extras.
REQUIRED_FIXTURES = [
    "multiply_loop", "recursive_fib", "import_results", "host_mem_mutation",
    "reentrant", "global_mutation", "consecutive_writes", "oversized_context",
    "multi_import", "subword_divergence", "empty_module", "store_heavy",
]


def _passed(name):
    print(f"ACCEPTANCE {name}: PASS")


def test_accuracy_corpus(tmp_path):
    """cmd_validate exits 0 on every corpus scenario, within the time budget."""
    assert set(REQUIRED_FIXTURES) <= set(CORPUS)
    assert len(CORPUS) >= 12
    started = time.monotonic()
    for name, make in CORPUS.items():
        m, s = make()
        wasm = tmp_path / f"{name}.wasm"
        wasm.write_bytes(encode_module(m))
        scen = tmp_path / f"{name}.json"
        scen.write_text(scenario_to_json(s))
        code = main(["validate", str(wasm), str(scen), "--split-threshold", "16"])
        assert code == 0, name
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"accuracy suite took {elapsed:.1f}s"
    _passed(f"accuracy ({len(CORPUS)} scenarios, {elapsed:.2f}s)")


def test_reduction_recursive_single_event():
    m, s = CORPUS["recursive_fib"]()
    raw, _ = run_scenario(instrument(m), s)
    reduced = reduce_trace(raw, m)
    assert len(raw) > 300
    assert len(reduced) == 1 and isinstance(reduced[0], FuncEntry)
    _passed(f"reduction recursive-export ({len(raw)} raw -> 1 event)")


def test_reduction_multiply_retains_all_funcentries():
    m, s = CORPUS["multiply_loop"]()
    raw, _ = run_scenario(instrument(m), s)
    reduced = reduce_trace(raw, m)
    raw_entries = [e for e in raw if isinstance(e, FuncEntry)]
    assert list(reduced) == raw_entries
    assert len(reduced) == len(s.steps)
    _passed("reduction loop-only multiply (100% FuncEntry retained)")


def test_reduction_shadow_mem_figure():
    m, s = CORPUS["shadow_mem_figure"]()
    raw, _ = run_scenario(instrument(m), s)
    reduced = reduce_trace(raw, m)
    memory_events = [e for e in reduced if not isinstance(e, FuncEntry)]
    assert memory_events == [Call(0), CallReturn(0, ()), Load(0, 1003, i8(0xBB))]
    _passed("reduction shadow-memory figure (kept {Call, CallReturn, Load@1003})")


def test_reduction_call_stack_figure():
    from test_reduce import test_call_stack_figure_keeps_4_of_10
    test_call_stack_figure_keeps_4_of_10()
    _passed("reduction call-stack figure (4 of 10 kept)")


def test_reducer_oracle_equivalence_200():
    for seed in range(200):
        m, s = _random_playground(seed)
        mi = instrument(m)
        raw, _ = run_scenario(mi, s, sink=RawCollector())
        online, _ = run_scenario(mi, s, sink=OnlineReducer(m))
        assert online == reduce_trace(raw, m), seed
    _passed("reducer oracle equivalence (200 randomized scenarios)")


def test_merge_optimization():
    m, s = CORPUS["consecutive_writes"]()
    t = record_trace(m, s)
    unmerged_replay, _ = build_ir(t, m, merge=False, split_threshold=None)
    merged_replay, _ = build_ir(t, m, merge=True, split_threshold=None)
    ctx_before = unmerged_replay.functions[0].contexts[0]
    ctx_after = merged_replay.functions[0].contexts[0]
    assert len(ctx_before) == 9
    assert ctx_after == [BulkMutateMem(0, 64, bytes([8, 7, 6, 5, 4, 3, 2, 1, 0]))]
    for name, make in CORPUS.items():
        m, s = make()
        t = record_trace(m, s)
        merged = len(generate_bundle(t, m, merge=True).artifacts["replay.wasm"])
        unmerged = len(generate_bundle(t, m, merge=False).artifacts["replay.wasm"])
        assert merged <= unmerged, name
    _passed("merge optimization (9 -> 1 BulkMutateMem; size never grows)")


def test_split_optimization():
    m, s = CORPUS["oversized_context"]()
    wasm_bytes = encode_module(m)
    t = record_trace(m, s)
    replay, aux = build_ir(t, m, merge=False, split_threshold=16)
    for ctx in replay.entry.contexts + [c for fn in replay.functions.values()
                                        for c in fn.contexts] + aux:
        assert len(ctx) <= 16
    assert aux, "split produced no auxiliary functions"
    import tempfile, os
    with tempfile.TemporaryDirectory() as d:
        wasm = os.path.join(d, "m.wasm")
        open(wasm, "wb").write(wasm_bytes)
        scen = os.path.join(d, "s.json")
        open(scen, "w").write(scenario_to_json(s))
        assert main(["validate", wasm, scen, "--split-threshold", "16"]) == 0
    with pytest.raises(LimitExceeded):
        generate_bundle(t, m, merge=False, split_threshold=None, body_limit=200)
    _passed("split optimization (T=16 respected; LimitExceeded without split)")


def test_validity_self_contained():
    for name, make in CORPUS.items():
        m, s = make()
        t = record_trace(m, s)
        bundle = generate_bundle(t, m, SELF_CONTAINED, split_threshold=16)
        out = parse_module(bundle.artifacts["replay.wasm"])
        assert out.imports == (), name
        assert validate_module(out) == [], name
        inst = instantiate(out, EMPTY_SCENARIO)
        inst.invoke_export("_start", ())  # executes to completion
    _passed("validity (all bundles validate, import-free, run to completion)")


def test_codec_roundtrips_500():
    rng = random.Random(0xACCE97)
    for k in range(500):
        t = random_trace(rng)
        assert decode_binary(encode_binary(t)) == t, k
        assert decode_text(encode_text(t)) == t, k
    _passed("codec round-trips (500 randomized traces, binary and text)")


def test_instrumentation_transparency():
    for name, make in CORPUS.items():
        m, s = make()
        _, plain = run_scenario(m, s, record=False)
        _, traced = run_scenario(instrument(m), s, record=True)
        assert plain == traced, name
    _passed("instrumentation transparency (bitwise FinalState equality)")


# ----------------------------------------------------- secondary component

FRONTEND = shutil.which("node") is not None


@pytest.mark.skipif(not FRONTEND, reason="node not available")
def test_cross_format_equivalence(tmp_path):
    """[SECONDARY] three formats give identical RunReports, via the JS harness.

    Skips (without failing the primary suite) when the frontend has not
    been built.
    """
    from test_cross_format import harness_cli, run_js_bundle
    cli = harness_cli()
    if cli is None:
        pytest.skip("frontend not built (frontend/dist missing; run npm run build)")
    from wrr.codegen import DYNAMIC_LINKING, JS_REPLAY, write_bundle
    from wrr.report import compare_reports, selfcontained_report
    checked = 0
    for name, make in CORPUS.items():
        m, s = make()
        t = record_trace(m, s)
        base = selfcontained_report(generate_bundle(t, m, SELF_CONTAINED,
                                                    split_threshold=16))
        for fmt in (JS_REPLAY, DYNAMIC_LINKING):
            bundle = generate_bundle(t, m, fmt, split_threshold=16)
            out = tmp_path / f"{name}-{fmt}"
            write_bundle(bundle, str(out))
            report = run_js_bundle(cli, str(out))
            diffs = compare_reports(base, report)
            assert diffs == [], f"{name} {fmt}: {diffs}"
            checked += 1
    _passed(f"cross-format equivalence ({checked} bundle comparisons)")
