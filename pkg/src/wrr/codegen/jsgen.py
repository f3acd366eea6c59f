"""JS-replay and dynamic-linking output formats.

Both formats keep the original module binary untouched and generate host
code for a standalone JS runtime with wasm support (node).  The generated
CommonJS entry points expose ``run(opts)`` where ``opts.onExportCall``
receives every replayed call into the original module with
bit-pattern-encoded values; running the file directly executes the
replay.
"""

from __future__ import annotations

import json

from ..errors import UnresolvedExport, UnsupportedFeature, WrrError
from ..replay_ir import (AuxCall, BulkMutateMem, ExportCall, MutateGlobal, MutateMem,
                         MutateTable, Replay)
from ..trace import Value, ValueKind
from ..wasm import (DEFAULT_BODY_LIMIT, DataSegment, ElemSegment, Export, FuncType,
                    FunctionDef, GlobalDef, GlobalType, Import, Limits, TableType,
                    WasmModule, encode_module, intern_functype, validate_module)
from .bundle import DYNAMIC_LINKING, JS_REPLAY, ReplayBundle, base_manifest
from .selfcontained import (MIN_BULK_SEGMENT, check_importable, const_instr,
                            iter_all_contexts)


def _sx(bits: int, width: int) -> int:
    sign = 1 << (width - 1)
    return bits - (1 << width) if bits & sign else bits


def js_value_literal(v: Value) -> str:
    if v.kind is ValueKind.I32:
        return str(_sx(v.bits, 32))
    if v.kind is ValueKind.I64:
        return f"{_sx(v.bits, 64)}n"
    if v.kind is ValueKind.F32:
        return f"f32(0x{v.bits:08x})"
    if v.kind is ValueKind.F64:
        return f"f64(0x{v.bits:016x}n)"
    raise WrrError(f"{v.kind.name} cannot appear as a call argument")


def js_static_value(v: Value) -> str:
    width = v.kind.width * 2
    return json.dumps({"kind": v.kind.name.lower(), "bits": f"{v.bits:0{width}x}"})


_HELPERS = """\
const _dv = new DataView(new ArrayBuffer(8));
function f32(bits) { _dv.setUint32(0, bits, true); return _dv.getFloat32(0, true); }
function f64(bits) { _dv.setBigUint64(0, bits, true); return _dv.getFloat64(0, true); }
function fmtVal(kind, v) {
  if (kind === "i32") return { kind, bits: (v >>> 0).toString(16).padStart(8, "0") };
  if (kind === "i64") return { kind, bits: BigInt.asUintN(64, v).toString(16).padStart(16, "0") };
  if (kind === "f32") { _dv.setFloat32(0, Math.fround(v), true); return { kind, bits: _dv.getUint32(0, true).toString(16).padStart(8, "0") }; }
  _dv.setFloat64(0, v, true);
  return { kind, bits: _dv.getBigUint64(0, true).toString(16).padStart(16, "0") };
}
function fmtResults(r, kinds) {
  if (kinds.length === 0) return [];
  const arr = kinds.length === 1 ? [r] : r;
  return kinds.map((k, i) => fmtVal(k, arr[i]));
}
function fmtArgs(a, kinds) {
  return kinds.map((k, i) => fmtVal(k, a[i]));
}
"""

_MAIN_GUARD = """\
module.exports = { run };
if (require.main === module) {
  run().catch((err) => { console.error(err); process.exit(1); });
}
"""


class _Names:
    """Export-name lookups against the original module."""

    def __init__(self, m: WasmModule):
        self.m = m
        self.func: dict[int, str] = {}
        self.global_: dict[int, str] = {}
        self.table: dict[int, str] = {}
        self.memory: dict[int, str] = {}
        for e in m.exports:
            table = getattr(self, "global_" if e.kind == "global" else e.kind)
            table.setdefault(e.index, e.name)

    def func_name(self, idx: int) -> str:
        if idx not in self.func:
            raise UnresolvedExport(f"function {idx}")
        return self.func[idx]

    def global_name(self, idx: int) -> str:
        if idx not in self.global_:
            raise UnresolvedExport(f"global {idx}")
        return self.global_[idx]

    def table_name(self, idx: int) -> str:
        if idx not in self.table:
            raise UnresolvedExport(f"table {idx}")
        return self.table[idx]

    def memory_name(self) -> str:
        if 0 not in self.memory:
            raise UnresolvedExport("memory")
        return self.memory[0]


def _kinds_json(types) -> str:
    return json.dumps(list(types))


# ------------------------------------------------------------- js-replay

def gen_js_replay(original: WasmModule, replay: Replay, aux=(),
                  trace_bytes: bytes = b"") -> ReplayBundle:
    """Generate replay.js: JS host functions plus setup and entry code."""
    check_importable(original)
    names = _Names(original)

    needs_mem = any(isinstance(a, (MutateMem, BulkMutateMem))
                    for ctx in iter_all_contexts(replay, aux) for a in ctx)

    lines: list[str] = []

    def emit_action(a, indent: str):
        if isinstance(a, MutateMem):
            if a.idx != 0:
                raise UnsupportedFeature("multi-memory", "replay writes to memory 0 only")
            lines.append(f"{indent}mem8()[{a.addr}] = 0x{a.val:02x};")
        elif isinstance(a, BulkMutateMem):
            if a.idx != 0:
                raise UnsupportedFeature("multi-memory", "replay writes to memory 0 only")
            blob = ", ".join(f"0x{b:02x}" for b in a.val)
            lines.append(f"{indent}mem8().set([{blob}], {a.addr});")
        elif isinstance(a, MutateGlobal):
            name = names.global_name(a.idx)
            lines.append(f"{indent}exp[{name!r}].value = {js_value_literal(a.val)};")
        elif isinstance(a, MutateTable):
            tname = names.table_name(a.idx)
            if a.funcidx < original.num_func_imports:
                # a table slot holding a replay (JS) function is not a funcref
                raise UnresolvedExport(
                    f"a funcref for import {a.funcidx}; the js-replay format "
                    "cannot place replay functions into tables, use "
                    "self-contained or dynamic linking")
            fname = names.func_name(a.funcidx)
            lines.append(f"{indent}exp[{tname!r}].set({a.elem}, exp[{fname!r}]);")
        elif isinstance(a, ExportCall):
            name = names.func_name(a.idx)
            args = ", ".join(js_value_literal(v) for v in a.vals)
            static = "[" + ", ".join(js_static_value(v) for v in a.vals) + "]"
            kinds = _kinds_json(original.functype(a.idx).results)
            lines.append(f"{indent}callExport({name!r}, [{args}], {static}, {kinds});")
        elif isinstance(a, AuxCall):
            lines.append(f"{indent}aux{a.target}();")
        else:
            raise WrrError(f"unknown action {a!r}")

    lines.append("// Replay host code generated by wrr; runs the recorded interaction")
    lines.append("// against the unmodified original module.")
    lines.append('"use strict";')
    lines.append('const { readFileSync } = require("node:fs");')
    lines.append('const { join } = require("node:path");')
    lines.append("")
    lines.append(_HELPERS)
    lines.append("async function run(opts = {}) {")
    lines.append("  const log = opts.onExportCall ?? (() => {});")
    lines.append("  const dir = __dirname;")
    lines.append('  const bytes = readFileSync(opts.modulePath ?? join(dir, "original.wasm"));')
    lines.append("  let exp = null;")
    if needs_mem:
        lines.append(f"  const mem8 = () => new Uint8Array(exp[{names.memory_name()!r}].buffer);")
    lines.append("  function callExport(name, args, staticArgs, resultKinds) {")
    lines.append("    const r = exp[name](...args);")
    lines.append("    log({ name, args: staticArgs, results: fmtResults(r, resultKinds) });")
    lines.append("    return r;")
    lines.append("  }")

    for t in range(len(aux)):
        lines.append(f"  function aux{t}() {{")
        for a in aux[t]:
            emit_action(a, "    ")
        lines.append("  }")

    func_imports = original.imported("func")
    import_names: list[tuple[str, str]] = []
    for j, im in enumerate(func_imports):
        import_names.append((im.module, im.name))
        ft = original.types[im.desc]
        fn = replay.functions.get(j)
        params = ", ".join(f"a{i}" for i in range(len(ft.params)))
        lines.append(f"  // replaces import {im.module}.{im.name}")
        if fn is None or not fn.contexts:
            lines.append(f"  function replay_f{j}({params}) {{")
            lines.append(f'    throw new Error("import {j} was never recorded");')
            lines.append("  }")
            continue
        lines.append(f"  let c{j} = 0;")
        lines.append(f"  function replay_f{j}({params}) {{")
        lines.append(f"    const c = c{j}++;")
        lines.append("    switch (c) {")
        for i, ctx in enumerate(fn.contexts):
            lines.append(f"      case {i}: {{")
            for a in ctx:
                emit_action(a, "        ")
            res = fn.results[i]
            if len(res) == 1:
                lines.append(f"        return {js_value_literal(res[0])};")
            elif len(res) > 1:
                vals = ", ".join(js_value_literal(v) for v in res)
                lines.append(f"        return [{vals}];")
            else:
                lines.append("        return;")
            lines.append("      }")
        lines.append("      default:")
        lines.append(f'        throw new Error("replay function {j} invoked past '
                     'the recorded contexts");')
        lines.append("    }")
        lines.append("  }")

    lines.append("  const imports = {};")
    for j, (mod, name) in enumerate(import_names):
        lines.append(f"  (imports[{mod!r}] ??= {{}})[{name!r}] = replay_f{j};")
    lines.append("  const { instance } = await WebAssembly.instantiate(bytes, imports);")
    lines.append("  exp = instance.exports;")
    for a in replay.global_context:
        emit_action(a, "  ")
    lines.append("  return { exports: exp };")
    lines.append("}")
    lines.append("")
    lines.append(_MAIN_GUARD)

    manifest = base_manifest(JS_REPLAY, "run", trace_bytes)
    manifest["artifacts"] = {"module": "original.wasm", "replay": "replay.js"}
    manifest["memory_export"] = names.memory.get(0)
    return ReplayBundle(manifest, {
        "original.wasm": encode_module(original),
        "replay.js": ("\n".join(lines) + "\n").encode("utf-8"),
    })


# -------------------------------------------------------- dynamic linking

def gen_dynamic_linking(original: WasmModule, replay: Replay, aux=(),
                        body_limit: int = DEFAULT_BODY_LIMIT,
                        trace_bytes: bytes = b"") -> ReplayBundle:
    """Generate replay.wasm (imports the original's exports, exports one
    replacement per original import) plus loader.js that cross-wires the
    two instances at instantiation time."""
    check_importable(original)
    names = _Names(original)

    called: set[int] = set()
    mutated_globals: set[int] = set()
    mutated_tables: set[int] = set()
    table_targets: set[int] = set()
    needs_mem = False
    for ctx in iter_all_contexts(replay, aux):
        for a in ctx:
            if isinstance(a, ExportCall):
                called.add(a.idx)
            elif isinstance(a, (MutateMem, BulkMutateMem)):
                if a.idx != 0:
                    raise UnsupportedFeature("multi-memory",
                                             "replay writes to memory 0 only")
                needs_mem = True
            elif isinstance(a, MutateGlobal):
                mutated_globals.add(a.idx)
            elif isinstance(a, MutateTable):
                mutated_tables.add(a.idx)
                table_targets.add(a.funcidx)

    # Called exports are imported through logging wrappers; defined-function
    # table targets are imported directly under a distinct name so ref.func
    # preserves the original function's identity (a wrapper closure in the
    # table would force call_indirect through the host).  Table targets that
    # are original imports resolve to this module's own replacement.
    k = original.num_func_imports
    called_order = sorted(called)
    ref_order = sorted(f for f in table_targets if f >= k)
    func_pos = {f: p for p, f in enumerate(called_order)}
    ref_pos = {f: len(called_order) + p for p, f in enumerate(ref_order)}
    global_pos = {g: p for p, g in enumerate(sorted(mutated_globals))}

    rm = WasmModule()
    imports: list[Import] = []
    for f in called_order:
        rm, ti = intern_functype(rm, original.functype(f))
        imports.append(Import("orig", names.func_name(f), "func", ti))
    for f in ref_order:
        rm, ti = intern_functype(rm, original.functype(f))
        imports.append(Import("orig", names.func_name(f) + "#ref", "func", ti))
    if needs_mem:
        imports.append(Import("orig", names.memory_name(), "memory", Limits(0)))
    for g in sorted(mutated_globals):
        gt = original.global_type(g)
        imports.append(Import("orig", names.global_name(g), "global",
                              GlobalType(gt.valtype, True)))
    for t in sorted(mutated_tables):
        imports.append(Import("orig", names.table_name(t), "table",
                              TableType("funcref", Limits(0))))

    segments: dict[bytes, int] = {}
    for ctx in iter_all_contexts(replay, aux):
        for a in ctx:
            if isinstance(a, BulkMutateMem) and len(a.val) >= MIN_BULK_SEGMENT \
                    and a.val not in segments:
                segments[a.val] = len(segments)

    n_replacements = k
    rm, void_ti = intern_functype(rm, FuncType((), ()))
    n_func_imports = len(called_order) + len(ref_order)
    entry_idx = n_func_imports + n_replacements

    def lower(a) -> list[tuple]:
        if isinstance(a, MutateMem):
            return [("i32.const", a.addr), ("i32.const", a.val), ("i32.store8", 0, 0)]
        if isinstance(a, BulkMutateMem):
            if len(a.val) < MIN_BULK_SEGMENT:
                out = []
                for off, byte in enumerate(a.val):
                    out += [("i32.const", a.addr + off), ("i32.const", byte),
                            ("i32.store8", 0, 0)]
                return out
            return [("i32.const", a.addr), ("i32.const", 0),
                    ("i32.const", len(a.val)), ("memory.init", segments[a.val], 0)]
        if isinstance(a, MutateGlobal):
            return [const_instr(a.val), ("global.set", global_pos[a.idx])]
        if isinstance(a, MutateTable):
            # an original-import target refs this module's own replacement
            target = n_func_imports + a.funcidx if a.funcidx < k else ref_pos[a.funcidx]
            return [("i32.const", a.elem), ("ref.func", target), ("table.set", 0)]
        if isinstance(a, ExportCall):
            ins = [const_instr(v) for v in a.vals]
            ins.append(("call", func_pos[a.idx]))
            ins.extend([("drop",)] * len(original.functype(a.idx).results))
            return ins
        if isinstance(a, AuxCall):
            return [("call", entry_idx + 1 + a.target)]
        raise WrrError(f"unknown action {a!r}")

    def lower_context(ctx) -> tuple:
        out = []
        for a in ctx:
            out.extend(lower(a))
        return tuple(out)

    counter_globals: dict[int, int] = {}
    gdefs: list[GlobalDef] = []
    num_gimports = len(global_pos)
    for j in range(k):
        fn = replay.functions.get(j)
        if fn is not None and fn.contexts:
            counter_globals[j] = num_gimports + len(gdefs)
            gdefs.append(GlobalDef(GlobalType("i32", True), (("i32.const", 0),)))

    functions: list[FunctionDef] = []
    types_mod = rm
    for j in range(k):
        ft = original.functype(j)
        types_mod, typeidx = intern_functype(types_mod, ft)
        fn = replay.functions.get(j)
        if fn is None or not fn.contexts:
            functions.append(FunctionDef(typeidx, (), (("unreachable",),)))
            continue
        body = _dyn_dispatch_body(types_mod, ft, fn, counter_globals[j], lower_context)
        types_mod, body = body
        functions.append(FunctionDef(typeidx, ("i32",), body))
    rm = types_mod

    functions.append(FunctionDef(void_ti, (), lower_context(replay.global_context)))
    for ctx in aux:
        functions.append(FunctionDef(void_ti, (), lower_context(ctx)))

    exports = [Export(f"replay_f{j}", "func", n_func_imports + j)
               for j in range(k)]
    exports.append(Export("_start", "func", entry_idx))

    elems = ()
    if ref_order:
        # import targets resolve to exported replacements, already valid
        # ref.func subjects; only direct imports need declaring
        elems = (ElemSegment("declarative", 0, None,
                             tuple(ref_pos[f] for f in ref_order)),)

    rm = rm.with_(imports=tuple(imports), functions=tuple(functions),
                  globals=tuple(gdefs), exports=tuple(exports), elems=elems,
                  datas=tuple(DataSegment("passive", 0, None, payload)
                              for payload in segments))
    diags = validate_module(rm, body_limit=10 ** 12)
    if diags:
        raise WrrError("generated replay module does not validate: " + "; ".join(diags))
    replay_wasm = encode_module(rm, body_limit=body_limit)

    loader = _gen_loader(original, names, called_order, ref_order, needs_mem,
                         sorted(mutated_globals), sorted(mutated_tables))

    manifest = base_manifest(DYNAMIC_LINKING, "run", trace_bytes)
    manifest["artifacts"] = {"module": "original.wasm", "replay": "replay.wasm",
                             "loader": "loader.js"}
    manifest["memory_export"] = names.memory.get(0)
    return ReplayBundle(manifest, {
        "original.wasm": encode_module(original),
        "replay.wasm": replay_wasm,
        "loader.js": loader.encode("utf-8"),
    })


def _dyn_dispatch_body(m, ft: FuncType, fn, counter: int, lower_context):
    c_local = len(ft.params)
    if not ft.results:
        bt = None
    elif len(ft.results) == 1:
        bt = ft.results[0]
    else:
        m, bt = intern_functype(m, FuncType((), ft.results))

    def chain(i: int) -> list[tuple]:
        if i == len(fn.contexts):
            return [("unreachable",)]
        body = [("local.get", c_local), ("i32.const", i), ("i32.eq",), ("if", bt)]
        body.extend(lower_context(fn.contexts[i]))
        for v in fn.results[i]:
            body.append(const_instr(v))
        body.append(("else",))
        body.extend(chain(i + 1))
        body.append(("end",))
        return body

    body = [("global.get", counter), ("local.set", c_local),
            ("global.get", counter), ("i32.const", 1), ("i32.add",),
            ("global.set", counter)]
    body.extend(chain(0))
    return m, tuple(body)


def _gen_loader(original: WasmModule, names: _Names, called_order, ref_order,
                needs_mem: bool, mutated_globals, mutated_tables) -> str:
    lines: list[str] = []
    lines.append("// Loader generated by wrr: instantiates the original module and")
    lines.append("// the replay module, cross-wiring imports at runtime.")
    lines.append('"use strict";')
    lines.append('const { readFileSync } = require("node:fs");')
    lines.append('const { join } = require("node:path");')
    lines.append("")
    lines.append(_HELPERS)
    lines.append("async function run(opts = {}) {")
    lines.append("  const log = opts.onExportCall ?? (() => {});")
    lines.append("  const dir = __dirname;")
    lines.append('  const origBytes = readFileSync(join(dir, "original.wasm"));')
    lines.append('  const replayBytes = readFileSync(join(dir, "replay.wasm"));')
    lines.append("  let replayExports = null;")
    lines.append("  const origImports = {};")
    for j, im in enumerate(original.imported("func")):
        lines.append(f"  (origImports[{im.module!r}] ??= {{}})[{im.name!r}] = "
                     f"(...a) => replayExports[\"replay_f{j}\"](...a);")
    lines.append("  const orig = await WebAssembly.instantiate(origBytes, origImports);")
    lines.append("  const oe = orig.instance.exports;")
    lines.append('  const replayImports = { orig: {} };')
    for f in called_order:
        name = names.func_name(f)
        ft = original.functype(f)
        pk = _kinds_json(ft.params)
        rk = _kinds_json(ft.results)
        lines.append(f"  replayImports.orig[{name!r}] = (...a) => {{")
        lines.append(f"    const r = oe[{name!r}](...a);")
        lines.append(f"    log({{ name: {name!r}, args: fmtArgs(a, {pk}), "
                     f"results: fmtResults(r, {rk}) }});")
        lines.append("    return r;")
        lines.append("  };")
    for f in ref_order:
        name = names.func_name(f)
        lines.append(f"  replayImports.orig[{name + '#ref'!r}] = oe[{name!r}];")
    if needs_mem:
        mname = names.memory_name()
        lines.append(f"  replayImports.orig[{mname!r}] = oe[{mname!r}];")
    for g in mutated_globals:
        gname = names.global_name(g)
        lines.append(f"  replayImports.orig[{gname!r}] = oe[{gname!r}];")
    for t in mutated_tables:
        tname = names.table_name(t)
        lines.append(f"  replayImports.orig[{tname!r}] = oe[{tname!r}];")
    lines.append("  const replay = await WebAssembly.instantiate(replayBytes, replayImports);")
    lines.append("  replayExports = replay.instance.exports;")
    lines.append('  replayExports["_start"]();')
    lines.append("  return { exports: oe };")
    lines.append("}")
    lines.append("")
    lines.append(_MAIN_GUARD)
    return "\n".join(lines) + "\n"
