"""Interpreter and scenario harness tests.

The numeric core is differentially tested against node's wasm engine:
same module, same inputs, bit-identical outputs (NaN results compare by
class, since engines may pick payloads differently).
"""

import json
import random
import shutil
import subprocess

import pytest

from corpus import CORPUS, ModuleBuilder, recursive_fib, shadow_mem_figure
from wrr.errors import LinkError, Trap
from wrr.interp import (DIV_BY_ZERO, OOB_MEMORY, UNREACHABLE, instantiate,
                        run_scenario)
from wrr.instrument import instrument
from wrr.scenario import (EMPTY_SCENARIO, CallExport, HostScenario, ImportBehavior,
                          InvokeExport)
from wrr.trace import Call, CallReturn, FuncEntry, FuncReturn, Load, Store, i32, i64
from wrr.wasm import encode_module

needs_node = pytest.mark.skipif(shutil.which("node") is None,
                                reason="node not available")


def test_data_segment_initialization():
    b = ModuleBuilder()
    b.memory()
    b.data(0, b"hi")
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    assert bytes(inst.memories[0][0:2]) == b"hi"


def test_unbound_import_is_link_error():
    b = ModuleBuilder()
    b.import_func("f")
    b.func((), (), body=())
    with pytest.raises(LinkError) as exc:
        instantiate(b.build(), EMPTY_SCENARIO)
    assert "f" in str(exc.value)


def test_add_scenario():
    b = ModuleBuilder()
    b.func(("i32", "i32"), ("i32",),
           body=(("local.get", 0), ("local.get", 1), ("i32.add",)), export="add")
    t, final = run_scenario(b.build(),
                            HostScenario(steps=(InvokeExport("add", (i32(2), i32(3))),)),
                            record=False)
    assert final.results_log == ((i32(5),),)
    assert len(t) == 0


def test_identity_echo():
    b = ModuleBuilder()
    b.func(("i64",), ("i64",), body=(("local.get", 0),), export="id")
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    assert inst.invoke_export("id", (i64(-1),)) == [i64(-1)]


def test_division_by_zero_traps():
    b = ModuleBuilder()
    b.func(("i32", "i32"), ("i32",),
           body=(("local.get", 0), ("local.get", 1), ("i32.div_s",)), export="div")
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    with pytest.raises(Trap) as exc:
        inst.invoke_export("div", (i32(1), i32(0)))
    assert exc.value.kind == DIV_BY_ZERO


def test_unreachable_trap_carries_location():
    b = ModuleBuilder()
    b.func((), (), body=(("unreachable",),), export="boom")
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    with pytest.raises(Trap) as exc:
        inst.invoke_export("boom", ())
    assert exc.value.kind == UNREACHABLE
    assert exc.value.funcidx == 0 and exc.value.pc == 0


def test_oob_load_traps():
    b = ModuleBuilder()
    b.memory()
    b.func((), ("i32",), body=(("i32.const", 65536), ("i32.load8_u", 0, 0)),
           export="oob")
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    with pytest.raises(Trap) as exc:
        inst.invoke_export("oob", ())
    assert exc.value.kind == OOB_MEMORY


def test_memory_grow_and_size():
    b = ModuleBuilder()
    b.memory(1)
    b.func((), ("i32", "i32", "i32"),
           body=(("memory.size", 0), ("i32.const", 2), ("memory.grow", 0),
                 ("memory.size", 0)),
           export="grow")
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    assert inst.invoke_export("grow", ()) == [i32(1), i32(1), i32(3)]
    assert len(inst.memories[0]) == 3 * 65536


def test_multi_value_returns():
    b = ModuleBuilder()
    b.func(("i32", "i32"), ("i32", "i32"),
           body=(("local.get", 1), ("local.get", 0)), export="swap")
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    assert inst.invoke_export("swap", (i32(1), i32(2))) == [i32(2), i32(1)]


def test_br_table():
    b = ModuleBuilder()
    body = (
        ("block", None), ("block", None), ("block", None),
        ("local.get", 0), ("br_table", (0, 1), 2),
        ("end",), ("i32.const", 10), ("return",),
        ("end",), ("i32.const", 20), ("return",),
        ("end",), ("i32.const", 30),
    )
    b.func(("i32",), ("i32",), body=body, export="pick")
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    assert inst.invoke_export("pick", (i32(0),)) == [i32(10)]
    assert inst.invoke_export("pick", (i32(1),)) == [i32(20)]
    assert inst.invoke_export("pick", (i32(9),)) == [i32(30)]


def test_shadow_mem_figure_raw_prefix():
    """The six-event memory/call sequence of the shadow memory walkthrough."""
    m, s = shadow_mem_figure()
    raw, _ = run_scenario(instrument(m), s, record=True)
    middle = [e for e in raw if not isinstance(e, (FuncEntry, FuncReturn))]
    from wrr.trace import i8
    assert middle == [
        Store(0, 1002, i8(0x01)),
        Call(0),
        CallReturn(0, ()),
        Load(0, 1000, i8(0xAA)),
        Load(0, 1002, i8(0x01)),
        Load(0, 1003, i8(0xBB)),
    ]


def _fib_calls(n: int) -> int:
    memo = {}

    def count(k):
        if k in memo:
            return memo[k]
        memo[k] = 1 if k < 2 else 1 + count(k - 1) + count(k - 2)
        return memo[k]

    return count(n)


def test_fib_raw_event_count():
    m, s = recursive_fib()
    raw, final = run_scenario(instrument(m), s, record=True)
    calls = _fib_calls(10)
    assert len(raw) == 2 * calls
    assert final.results_log == ((i32(55),),)


def test_reentrant_nesting():
    b = ModuleBuilder()
    ask = b.import_func("ask", (), ("i32",))
    b.func((), ("i32",), body=(("i32.const", 5),), export="inner")
    b.func((), ("i32",), body=(("call", ask),), export="outer")
    scenario = HostScenario(
        steps=(InvokeExport("outer", ()),),
        imports={"ask": (ImportBehavior((CallExport("inner", ()),), (i32(77),)),)})
    raw, final = run_scenario(instrument(b.build()), scenario, record=True)
    kinds = [type(e).__name__ for e in raw]
    assert kinds == ["FuncEntry", "Call", "FuncEntry", "FuncReturn", "CallReturn",
                     "FuncReturn"]
    assert final.results_log == ((i32(77),),)


def test_scenario_exhausted():
    from wrr.errors import ScenarioExhausted
    b = ModuleBuilder()
    f = b.import_func("f", (), ("i32",))
    b.func((), ("i32",), body=(("call", f), ("drop",), ("call", f)), export="two")
    scenario = HostScenario(steps=(InvokeExport("two", ()),),
                            imports={"f": (ImportBehavior((), (i32(1),)),)})
    with pytest.raises(ScenarioExhausted):
        run_scenario(b.build(), scenario, record=False)


def test_determinism_bitwise():
    for name in ("host_mem_mutation", "float_values", "table_ops"):
        m, s = CORPUS[name]()
        mi = instrument(m)
        t1, f1 = run_scenario(mi, s, record=True)
        t2, f2 = run_scenario(mi, s, record=True)
        assert t1 == t2, name
        assert f1 == f2, name


def test_start_function_runs():
    b = ModuleBuilder()
    b.memory()
    idx = b.func((), (), body=(("i32.const", 3), ("i32.const", 9), ("i32.store8", 0, 0)))
    b.start = idx
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    assert inst.memories[0][3] == 9


# ------------------------------------------------- differential numerics

I32_SPECIALS = [0, 1, 2, 3, -1, -2, 0x7FFFFFFF, -0x80000000, 0xFF, 31, 32, 33, 64]
I64_SPECIALS = [0, 1, -1, 2 ** 63 - 1, -2 ** 63, 0xFFFFFFFF, 63, 64, 65]
F32_BITS = [0x00000000, 0x80000000, 0x3F800000, 0xBF800000, 0x7F800000, 0xFF800000,
            0x7FC00000, 0x7FA00000, 0x00000001, 0x7F7FFFFF, 0x4EFFFFFF, 0xCF000000,
            0x3EFFFFFF, 0x40490FDB]
F64_BITS = [0x0000000000000000, 0x8000000000000000, 0x3FF0000000000000,
            0xBFF0000000000000, 0x7FF0000000000000, 0xFFF0000000000000,
            0x7FF8000000000000, 0x7FF4000000000000, 0x0000000000000001,
            0x7FEFFFFFFFFFFFFF, 0x41DFFFFFFFC00000, 0xC1E0000000000000,
            0x3FE0000000000000, 0x4197D78400000000]

I32_BINOPS = ["add", "sub", "mul", "div_s", "div_u", "rem_s", "rem_u", "and", "or",
              "xor", "shl", "shr_s", "shr_u", "rotl", "rotr", "eq", "ne", "lt_s",
              "lt_u", "gt_s", "gt_u", "le_s", "le_u", "ge_s", "ge_u"]
I32_UNOPS = ["clz", "ctz", "popcnt", "eqz", "extend8_s", "extend16_s"]
F_BINOPS = ["add", "sub", "mul", "div", "min", "max", "copysign", "eq", "ne", "lt",
            "gt", "le", "ge"]
F_UNOPS = ["abs", "neg", "sqrt", "ceil", "floor", "trunc", "nearest"]
_CMP_OPS = {"eq", "ne", "lt", "gt", "le", "ge", "lt_s", "lt_u", "gt_s", "gt_u",
            "le_s", "le_u", "ge_s", "ge_u", "eqz"}


def _op_suite():
    """(export name, param valtypes, result valtype, float-result width, body)"""
    ops = []

    def ftype(t):
        return {"f32": "i32", "f64": "i64"}[t]

    for t, specials in (("i32", I32_SPECIALS), ("i64", I64_SPECIALS)):
        res_cmp = "i32"
        for op in I32_BINOPS:
            name = f"{t}.{op}"
            res = res_cmp if op in _CMP_OPS else t
            ops.append((name, (t, t), res, None,
                        (("local.get", 0), ("local.get", 1), (name,))))
        unops = I32_UNOPS + (["extend32_s"] if t == "i64" else [])
        for op in unops:
            name = f"{t}.{op}"
            res = "i32" if op == "eqz" else t
            ops.append((name, (t,), res, None, (("local.get", 0), (name,))))

    for t in ("f32", "f64"):
        bits_t = ftype(t)
        unwrap = (f"{t}.reinterpret_{bits_t}",)
        wrap = (f"{bits_t}.reinterpret_{t}",)
        for op in F_BINOPS:
            name = f"{t}.{op}"
            is_cmp = op in _CMP_OPS
            body = (("local.get", 0), unwrap, ("local.get", 1), unwrap, (name,))
            if not is_cmp:
                body += (wrap,)
            ops.append((name, (bits_t, bits_t), "i32" if is_cmp else bits_t,
                        None if is_cmp else int(t[1:]), body))
        for op in F_UNOPS:
            name = f"{t}.{op}"
            ops.append((name, (bits_t,), bits_t, int(t[1:]),
                        (("local.get", 0), unwrap, (name,), wrap)))

    # conversions
    conv = [("i32.wrap_i64", ("i64",), "i32", None),
            ("i64.extend_i32_s", ("i32",), "i64", None),
            ("i64.extend_i32_u", ("i32",), "i64", None),
            ("f32.demote_f64", ("i64",), "i32", 32),
            ("f64.promote_f32", ("i32",), "i64", 64)]
    for dst in ("i32", "i64"):
        for src in ("f32", "f64"):
            for sgn in ("s", "u"):
                conv.append((f"{dst}.trunc_{src}_{sgn}", (ftype(src),), dst, None))
                conv.append((f"{dst}.trunc_sat_{src}_{sgn}", (ftype(src),), dst, None))
    for dst in ("f32", "f64"):
        for src in ("i32", "i64"):
            for sgn in ("s", "u"):
                conv.append((f"{dst}.convert_{src}_{sgn}", (src,), ftype(dst),
                             int(dst[1:])))
    for name, params, res, fwidth in conv:
        body = [("local.get", 0)]
        src_is_floatbits = name.split(".")[1].startswith(("trunc_f", "demote", "promote")) \
            and not name.split(".")[1].startswith("trunc_sat_i")
        src_t = name.split("_")[-2] if "trunc" in name else None
        if "trunc" in name:
            body.append((f"{src_t}.reinterpret_{params[0]}",))
        elif name in ("f32.demote_f64",):
            body.append(("f64.reinterpret_i64",))
        elif name in ("f64.promote_f32",):
            body.append(("f32.reinterpret_i32",))
        body.append((name,))
        if fwidth:
            body.append((f"{res}.reinterpret_f{fwidth}",))
        ops.append((name, params, res, fwidth, tuple(body)))
    return ops


def _inputs_for(params, rng):
    pools = {"i32": I32_SPECIALS + [rng.getrandbits(32) - 2 ** 31 for _ in range(8)],
             "i64": I64_SPECIALS + [rng.getrandbits(64) - 2 ** 63 for _ in range(8)]}
    float_pools = {"i32": F32_BITS, "i64": F64_BITS}
    cases = []
    rng2 = random.Random(42)
    for _ in range(16):
        cases.append(tuple(rng2.choice(pools[p]) for p in params))
    for _ in range(8):
        cases.append(tuple(rng2.choice(float_pools[p]) - (2 ** (31 if p == "i32" else 63)
                     if rng2.random() < 0.5 else 0) for p in params))
    return cases


def _mask(v, t):
    return v & (0xFFFFFFFF if t == "i32" else 0xFFFFFFFFFFFFFFFF)


def _is_nan_bits(bits, width):
    if width == 32:
        return bits & 0x7F800000 == 0x7F800000 and bits & 0x007FFFFF
    return bits & 0x7FF0000000000000 == 0x7FF0000000000000 and bits & 0xFFFFFFFFFFFFF


@needs_node
def test_numeric_ops_match_reference_engine(tmp_path):
    from wrr.interp import VALTYPE_KIND
    from wrr.trace import Value

    ops = _op_suite()
    b = ModuleBuilder()
    for i, (name, params, res, fwidth, body) in enumerate(ops):
        b.func(params, (res,), body=body, export=f"op{i}")
    m = b.build()
    from wrr.wasm import validate_module
    assert validate_module(m) == []
    wasm_path = tmp_path / "ops.wasm"
    wasm_path.write_bytes(encode_module(m))

    rng = random.Random(0xD1FF)
    jobs = []
    for i, (name, params, res, fwidth, body) in enumerate(ops):
        for case in _inputs_for(params, rng):
            jobs.append({"f": f"op{i}", "args": [str(_mask(v, p)) for v, p in
                                                 zip(case, params)],
                         "params": list(params), "res": res, "fwidth": fwidth})

    inst = instantiate(m, EMPTY_SCENARIO)
    mine = []
    for job in jobs:
        args = [Value(VALTYPE_KIND[p], int(a)) for a, p in zip(job["args"], job["params"])]
        try:
            out = inst.invoke_export(job["f"], args)
            mine.append(f"{out[0].bits:x}")
        except Trap:
            mine.append("trap")

    (tmp_path / "jobs.json").write_text(json.dumps(jobs))
    script = r"""
const fs = require("fs");
const [wasmPath, jobsPath] = process.argv.slice(1);
const jobs = JSON.parse(fs.readFileSync(jobsPath, "utf-8"));
(async () => {
  const { instance } = await WebAssembly.instantiate(fs.readFileSync(wasmPath));
  const out = [];
  for (const job of jobs) {
    const args = job.args.map((a, i) =>
      job.params[i] === "i64" ? BigInt.asIntN(64, BigInt(a)) : Number(BigInt.asIntN(32, BigInt(a))));
    try {
      const r = instance.exports[job.f](...args);
      out.push(job.res === "i64" ? BigInt.asUintN(64, r).toString(16)
                                 : (r >>> 0).toString(16));
    } catch (e) {
      out.push("trap");
    }
  }
  fs.writeFileSync(jobsPath + ".out", JSON.stringify(out));
})();
"""
    subprocess.run(["node", "-e", script, str(wasm_path), str(tmp_path / "jobs.json")],
                   check=True)
    theirs = json.loads((tmp_path / "jobs.json.out").read_text())

    assert len(mine) == len(theirs)
    mismatches = []
    for job, a, b_ in zip(jobs, mine, theirs):
        if a == b_:
            continue
        fwidth = job["fwidth"]
        if fwidth and a != "trap" and b_ != "trap" and \
                _is_nan_bits(int(a, 16), fwidth) and _is_nan_bits(int(b_, 16), fwidth):
            continue
        mismatches.append((job["f"], job["args"], a, b_))
    assert not mismatches, mismatches[:10]


@needs_node
def test_initial_memory_matches_reference_engine(tmp_path):
    """Instance initialization agrees with a reference engine's memory image."""
    import hashlib
    jobs = []
    for name, make in CORPUS.items():
        m, _ = make()
        if not m.memories or m.imports:
            continue
        inst = instantiate(m, EMPTY_SCENARIO)
        ours = hashlib.sha256(bytes(inst.memories[0])).hexdigest()
        path = tmp_path / f"{name}.wasm"
        path.write_bytes(encode_module(m))
        jobs.append((name, str(path), ours))
    assert jobs
    script = r"""
const fs = require("fs");
const { createHash } = require("crypto");
(async () => {
  const out = [];
  for (const f of process.argv.slice(1)) {
    const { instance } = await WebAssembly.instantiate(fs.readFileSync(f));
    let mem = null;
    for (const v of Object.values(instance.exports)) {
      if (v instanceof WebAssembly.Memory) mem = v;
    }
    out.push(createHash("sha256").update(new Uint8Array(mem.buffer)).digest("hex"));
  }
  console.log(JSON.stringify(out));
})();
"""
    result = subprocess.run(["node", "-e", script] + [p for _, p, _ in jobs],
                            capture_output=True, text=True, check=True)
    theirs = json.loads(result.stdout)
    for (name, _, ours), ref in zip(jobs, theirs):
        assert ours == ref, name


def test_imported_memory_rejected_by_harness():
    from wrr.wasm import Import, Limits, WasmModule
    m = WasmModule(imports=(Import("env", "mem", "memory", Limits(1)),))
    with pytest.raises(LinkError) as exc:
        instantiate(m, EMPTY_SCENARIO)
    assert "module-defined" in str(exc.value)


def test_call_indirect_traps():
    from wrr.interp import INDIRECT_MISMATCH, OOB_TABLE, UNINIT_ELEMENT
    b = ModuleBuilder()
    b.table(3)
    f = b.func(("i32",), ("i32",), body=(("local.get", 0),), export="id")
    b.elem(1, [f])
    b.func(("i32",), (), body=(("i32.const", 9), ("local.get", 0),
                               ("call_indirect", b.type(("i32",), ("i32",)), 0),
                               ("drop",)),
           export="via")
    # wrong signature: expects () -> ()
    b.func(("i32",), (), body=(("local.get", 0),
                               ("call_indirect", b.type((), ()), 0)),
           export="mistyped")
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    assert inst.invoke_export("via", (i32(1),)) == []
    with pytest.raises(Trap) as exc:
        inst.invoke_export("via", (i32(0),))          # slot never initialized
    assert exc.value.kind == UNINIT_ELEMENT
    with pytest.raises(Trap) as exc:
        inst.invoke_export("via", (i32(99),))         # beyond the table
    assert exc.value.kind == OOB_TABLE
    with pytest.raises(Trap) as exc:
        inst.invoke_export("mistyped", (i32(1),))     # wrong functype
    assert exc.value.kind == INDIRECT_MISMATCH


def test_deep_recursion_traps_cleanly():
    from wrr.interp import STACK_EXHAUSTED
    b = ModuleBuilder()
    b.func((), (), body=(("call", 0),), export="loop")
    inst = instantiate(b.build(), EMPTY_SCENARIO)
    with pytest.raises(Trap) as exc:
        inst.invoke_export("loop", ())
    assert exc.value.kind == STACK_EXHAUSTED
