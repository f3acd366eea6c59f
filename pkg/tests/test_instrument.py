"""Instrumenter tests: recorder signatures, event emission, transparency."""

import pytest

from corpus import CORPUS, ModuleBuilder
from wrr.errors import AlreadyInstrumented
from wrr.instrument import InstrumentationConfig, instrument, recorder_signatures
from wrr.interp import run_scenario
from wrr.scenario import HostScenario, ImportBehavior, InvokeExport
from wrr.trace import Call, CallReturn, FuncEntry, FuncReturn, i32
from wrr.wasm import FuncType, WasmModule, validate_module
from wrr.wasm.model import LOAD_SHAPES, STORE_SHAPES


def test_signature_set_contents():
    sigs = dict(recorder_signatures())
    assert sigs["load_i32"] == FuncType(("i32", "i32", "i32"), ())
    assert sigs["call_pre"] == FuncType(("i32",), ())
    assert sigs["store_f64"] == FuncType(("i32", "i32", "f64"), ())
    assert sigs["load_i64_32"] == FuncType(("i32", "i32", "i64"), ())
    assert sigs["global_get_f32"] == FuncType(("i32", "f32"), ())
    assert sigs["table_get"] == FuncType(("i32", "i32"), ())


def test_signature_count_matches_enumeration():
    # one recorder per (event, width) combination:
    #   4 value pushers + entry/return/call-pre/call-post
    #   + distinct load shapes + distinct store shapes + 4 global kinds + table
    load_shapes = {(t, w) for t, w in LOAD_SHAPES.values()}
    store_shapes = {(t, w) for t, w in STORE_SHAPES.values()}
    expected = 4 + 4 + len(load_shapes) + len(store_shapes) + 4 + 1
    assert len(recorder_signatures()) == expected
    names = [n for n, _ in recorder_signatures()]
    assert len(set(names)) == len(names)


def test_no_functions_only_recorder_imports():
    m = WasmModule()
    mi = instrument(m)
    assert len(mi.functions) == 0
    assert all(im.module == "wrr" for im in mi.imports)
    assert len(mi.imports) == len(recorder_signatures())


def test_add_trace_is_entry_and_return():
    b = ModuleBuilder()
    b.func(("i32", "i32"), ("i32",),
           body=(("local.get", 0), ("local.get", 1), ("i32.add",)), export="add")
    mi = instrument(b.build())
    raw, final = run_scenario(mi, HostScenario(steps=(InvokeExport("add", (i32(2), i32(3))),)))
    assert list(raw) == [FuncEntry(0, (i32(2), i32(3))), FuncReturn(0, (i32(5),))]
    assert final.results_log == ((i32(5),),)


def test_import_call_brackets_host_effects():
    b = ModuleBuilder()
    f = b.import_func("f", (), ("i32",))
    b.func((), ("i32",), body=(("call", f),), export="go")
    scenario = HostScenario(steps=(InvokeExport("go", ()),),
                            imports={"f": (ImportBehavior((), (i32(9),)),)})
    raw, _ = run_scenario(instrument(b.build()), scenario)
    assert list(raw) == [FuncEntry(1, ()), Call(0), CallReturn(0, (i32(9),)),
                         FuncReturn(1, (i32(9),))]


def test_call_indirect_into_import_is_wrapped():
    b = ModuleBuilder()
    f = b.import_func("f", (), ("i32",))
    b.table(2)
    b.elem(0, [f])
    b.func((), ("i32",),
           body=(("i32.const", 0), ("call_indirect", b.type((), ("i32",)), 0)),
           export="go")
    scenario = HostScenario(steps=(InvokeExport("go", ()),),
                            imports={"f": (ImportBehavior((), (i32(4),)),)})
    raw, final = run_scenario(instrument(b.build()), scenario)
    assert Call(0) in list(raw) and CallReturn(0, (i32(4),)) in list(raw)
    assert final.results_log == ((i32(4),),)


def test_already_instrumented_rejected():
    b = ModuleBuilder()
    b.func((), (), body=())
    mi = instrument(b.build())
    with pytest.raises(AlreadyInstrumented):
        instrument(mi)


def test_instrumented_modules_validate():
    for name, make in CORPUS.items():
        m, _ = make()
        assert validate_module(instrument(m)) == [], name


def test_explicit_return_is_recorded():
    b = ModuleBuilder()
    body = (("local.get", 0),
            ("if", None),
            ("i32.const", 11), ("return",),
            ("end",),
            ("i32.const", 22))
    b.func(("i32",), ("i32",), body=body, export="pick")
    mi = instrument(b.build())
    assert validate_module(mi) == []
    raw, final = run_scenario(mi, HostScenario(steps=(
        InvokeExport("pick", (i32(1),)), InvokeExport("pick", (i32(0),)))))
    returns = [e for e in raw if isinstance(e, FuncReturn)]
    assert [r.values for r in returns] == [(i32(11),), (i32(22),)]


def test_branch_to_function_label_is_recorded():
    b = ModuleBuilder()
    body = (("block", None),
            ("local.get", 0), ("br_if", 1),
            ("end",),
            ("i32.const", 5), ("drop",))
    b.func(("i32",), (), body=body, export="maybe")
    mi = instrument(b.build())
    assert validate_module(mi) == []
    raw, _ = run_scenario(mi, HostScenario(steps=(InvokeExport("maybe", (i32(1),)),)))
    assert [type(e).__name__ for e in raw] == ["FuncEntry", "FuncReturn"]


def test_transparency_final_state_equal():
    for name, make in CORPUS.items():
        m, s = make()
        _, plain = run_scenario(m, s, record=False)
        _, traced = run_scenario(instrument(m), s, record=True)
        assert plain == traced, name


def test_config_disables_categories():
    m, s = CORPUS["shadow_mem_figure"]()
    cfg = InstrumentationConfig(record_loads=False, record_stores=False)
    raw, _ = run_scenario(instrument(m, cfg), s)
    kinds = {type(e).__name__ for e in raw}
    assert "Load" not in kinds and "Store" not in kinds
    assert "Call" in kinds and "FuncEntry" in kinds


def test_wrapper_names_in_name_section():
    m, _ = CORPUS["shadow_mem_figure"]()
    mi = instrument(m)
    names = [c for c in mi.customs if c.name == "name"]
    assert len(names) == 1
    assert b"wrr_wrap_0" in names[0].data


def test_existing_name_section_remapped():
    from wrr.wasm import CustomSection
    from wrr.wasm.binary import Reader, enc_u

    def namemap(entries):
        payload = enc_u(len(entries))
        for idx, name in entries:
            raw = name.encode()
            payload += enc_u(idx) + enc_u(len(raw)) + raw
        return b"\x01" + enc_u(len(payload)) + payload

    m, _ = CORPUS["shadow_mem_figure"]()
    named = m.with_(customs=(CustomSection("name", namemap([(0, "poke"), (1, "main")])),))
    mi = instrument(named)
    sections = [c for c in mi.customs if c.name == "name"]
    assert len(sections) == 1
    r = Reader(sections[0].data)
    assert r.u8() == 1
    r.u()  # subsection size
    entries = {}
    for _ in range(r.u()):
        idx = r.u()
        entries[idx] = r.name()
    num_r = len(recorder_signatures())
    assert entries[num_r + 0] == "poke"      # import, shifted by the recorders
    assert entries[num_r + 1] == "main"
    assert any(name == "wrr_wrap_0" for name in entries.values())


@pytest.mark.skipif(__import__("shutil").which("node") is None,
                    reason="node not available")
def test_recording_matches_reference_engine(tmp_path):
    """Running the instrumented module under node's engine with a JS
    recorder runtime yields the identical raw trace, bit for bit."""
    import json
    import os
    import subprocess

    from wrr.trace import (Call, CallReturn, FuncEntry, FuncReturn, GlobalGet, Load,
                           Store)
    from wrr.wasm import encode_module
    from wrr.scenario import scenario_to_json

    def shape(events):
        out = []
        for e in events:
            if isinstance(e, (FuncEntry, FuncReturn, CallReturn)):
                vals = e.params if isinstance(e, FuncEntry) else \
                    e.values if isinstance(e, FuncReturn) else e.results
                out.append([type(e).__name__, e.funcidx,
                            [[v.kind.name, f"{v.bits:0{v.kind.width * 2}x}"]
                             for v in vals]])
            elif isinstance(e, Call):
                out.append(["Call", e.funcidx])
            elif isinstance(e, (Load, Store)):
                v = e.value
                out.append([type(e).__name__, e.memidx, e.address,
                            [v.kind.name, f"{v.bits:0{v.kind.width * 2}x}"]])
            elif isinstance(e, GlobalGet):
                v = e.value
                out.append(["GlobalGet", e.globalidx,
                            [v.kind.name, f"{v.bits:0{v.kind.width * 2}x}"]])
            else:
                raise AssertionError(e)
        return out

    script = os.path.join(os.path.dirname(__file__), "node_recorder.js")
    skip = {"table_ops"}  # funcref identity is not observable from JS
    for name, make in CORPUS.items():
        if name in skip:
            continue
        m, s = make()
        mi = instrument(m)
        wasm = tmp_path / f"{name}.wasm"
        wasm.write_bytes(encode_module(mi))
        scen = tmp_path / f"{name}.json"
        scen.write_text(scenario_to_json(s))
        proc = subprocess.run(["node", script, str(wasm), str(scen)],
                              capture_output=True, text=True)
        assert proc.returncode == 0, (name, proc.stderr)
        reference = json.loads(proc.stdout)["events"]
        raw, _ = run_scenario(mi, s, record=True)
        assert shape(list(raw)) == reference, name
