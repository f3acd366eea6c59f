"""Self-contained wasm generation: splice replay functions into the module.

Each imported function is replaced by a generated body that dispatches on
a per-function counter global: the counter selects the context recorded
for this invocation, its actions run, and the context's recorded results
are pushed.  The counter is incremented before the actions run so that a
re-entrant call to the same import observes the next context.  The entry
function, exported as ``_start``, replays the global context.  Original
function bodies are byte-identical to the input.
"""

from __future__ import annotations

from ..errors import UnresolvedExport, UnsupportedFeature, WrrError
from ..replay_ir import (AuxCall, BulkMutateMem, ExportCall, MutateGlobal, MutateMem,
                         MutateTable, Replay)
from ..trace import Value, ValueKind
from ..wasm import (DEFAULT_BODY_LIMIT, DataSegment, ElemSegment, Export, FuncType,
                    FunctionDef, GlobalDef, GlobalType, WasmModule, encode_module,
                    intern_functype, splice_import_functions, validate_module)
from .bundle import SELF_CONTAINED, ReplayBundle, base_manifest

ENTRY_EXPORT = "_start"


def const_instr(v: Value) -> tuple:
    if v.kind is ValueKind.I32:
        bits = v.bits
        return ("i32.const", bits - 0x100000000 if bits >= 0x80000000 else bits)
    if v.kind is ValueKind.I64:
        bits = v.bits
        return ("i64.const", bits - (1 << 64) if bits >= 1 << 63 else bits)
    if v.kind is ValueKind.F32:
        return ("f32.const", v.bits)
    if v.kind is ValueKind.F64:
        return ("f64.const", v.bits)
    raise WrrError(f"{v.kind.name} cannot appear as a call argument")


def iter_all_contexts(replay: Replay, aux=()):
    """Deterministic traversal: entry, functions by index, auxiliaries."""
    yield from replay.entry.contexts
    for idx in sorted(replay.functions):
        yield from replay.functions[idx].contexts
    yield from aux


def check_importable(original: WasmModule) -> None:
    for im in original.imports:
        if im.kind != "func":
            raise UnsupportedFeature(f"imported {im.kind}",
                                     f"{im.module}.{im.name} cannot be replayed")


# Bulk writes shorter than this lower as store sequences: a memory.init
# plus its passive segment (and the datacount section) costs more bytes
# than two or three byte stores.
MIN_BULK_SEGMENT = 3


class _Lowering:
    """Shared action -> wasm instruction lowering for one generation run."""

    def __init__(self, original: WasmModule, replay: Replay, aux):
        self.m = original
        self.replay = replay
        self.aux = tuple(aux)
        self.exported_funcs = {e.index for e in original.exports if e.kind == "func"}
        self.segments: dict[bytes, int] = {}  # bulk payload -> data segment index
        self.ref_funcs: set[int] = set()
        self.k = original.num_func_imports
        self.n = len(original.functions)
        self.entry_idx = self.k + self.n
        for ctx in iter_all_contexts(replay, aux):
            for a in ctx:
                if isinstance(a, BulkMutateMem) and len(a.val) >= MIN_BULK_SEGMENT \
                        and a.val not in self.segments:
                    self.segments[a.val] = len(original.datas) + len(self.segments)

    def aux_funcidx(self, target: int) -> int:
        return self.entry_idx + 1 + target

    def lower(self, action) -> list[tuple]:
        if isinstance(action, MutateMem):
            if action.idx != 0:
                raise UnsupportedFeature("multi-memory", "replay writes to memory 0 only")
            return [("i32.const", action.addr), ("i32.const", action.val),
                    ("i32.store8", 0, 0)]
        if isinstance(action, BulkMutateMem):
            if action.idx != 0:
                raise UnsupportedFeature("multi-memory", "replay writes to memory 0 only")
            if len(action.val) < MIN_BULK_SEGMENT:
                out = []
                for k, byte in enumerate(action.val):
                    out += [("i32.const", action.addr + k), ("i32.const", byte),
                            ("i32.store8", 0, 0)]
                return out
            return [("i32.const", action.addr), ("i32.const", 0),
                    ("i32.const", len(action.val)),
                    ("memory.init", self.segments[action.val], 0)]
        if isinstance(action, MutateGlobal):
            return [const_instr(action.val), ("global.set", action.idx)]
        if isinstance(action, MutateTable):
            self.ref_funcs.add(action.funcidx)
            return [("i32.const", action.elem), ("ref.func", action.funcidx),
                    ("table.set", action.idx)]
        if isinstance(action, ExportCall):
            if action.idx not in self.exported_funcs:
                raise UnresolvedExport(f"function {action.idx}")
            ins = [const_instr(v) for v in action.vals]
            ins.append(("call", action.idx))
            ins.extend([("drop",)] * len(self.m.functype(action.idx).results))
            return ins
        if isinstance(action, AuxCall):
            return [("call", self.aux_funcidx(action.target))]
        raise WrrError(f"unknown action {action!r}")

    def lower_context(self, ctx) -> list[tuple]:
        out = []
        for a in ctx:
            out.extend(self.lower(a))
        return out


def gen_self_contained(original: WasmModule, replay: Replay, aux=(),
                       body_limit: int = DEFAULT_BODY_LIMIT,
                       trace_bytes: bytes = b"") -> ReplayBundle:
    """Generate the import-free, statically linked replay module."""
    check_importable(original)
    low = _Lowering(original, replay, aux)
    m = original
    k, n = low.k, low.n

    # counter globals, one per import that recorded at least one context
    counter_global: dict[int, int] = {}
    new_globals = []
    for j in range(k):
        fn = replay.functions.get(j)
        if fn is not None and fn.contexts:
            counter_global[j] = m.num_globals + len(new_globals)
            new_globals.append(GlobalDef(GlobalType("i32", True), (("i32.const", 0),)))

    m, void_ti = intern_functype(m, FuncType((), ()))

    replacements: dict[int, FunctionDef] = {}
    for j in range(k):
        typeidx = m.imported("func")[j].desc
        ft = m.types[typeidx]
        fn = replay.functions.get(j)
        if fn is None or not fn.contexts:
            replacements[j] = FunctionDef(typeidx, (), (("unreachable",),))
            continue
        m, body = _dispatch_body(m, low, ft, fn, counter_global[j])
        replacements[j] = FunctionDef(typeidx, ("i32",), tuple(body))

    entry_def = FunctionDef(void_ti, (), tuple(low.lower_context(replay.global_context)))
    aux_defs = [FunctionDef(void_ti, (), tuple(low.lower_context(ctx))) for ctx in aux]

    exports = []
    notes = []
    for e in m.exports:
        if e.name == ENTRY_EXPORT:
            exports.append(Export("_start_orig", e.kind, e.index))
            notes.append("original export '_start' renamed to '_start_orig'")
        else:
            exports.append(e)
    exports.append(Export(ENTRY_EXPORT, "func", low.entry_idx))

    new_datas = tuple(DataSegment("passive", 0, None, payload)
                      for payload in low.segments)
    elems = m.elems
    if low.ref_funcs:
        elems = elems + (ElemSegment("declarative", 0, None,
                                     tuple(sorted(low.ref_funcs))),)

    m = m.with_(functions=m.functions + (entry_def,) + tuple(aux_defs),
                globals=m.globals + tuple(new_globals),
                exports=tuple(exports),
                datas=m.datas + new_datas,
                elems=elems)
    final = splice_import_functions(m, replacements)

    diags = validate_module(final, body_limit=10 ** 12)  # size checked by encode
    if diags:
        raise WrrError("generated module does not validate: " + "; ".join(diags))
    binary = encode_module(final, body_limit=body_limit)

    manifest = base_manifest(SELF_CONTAINED, ENTRY_EXPORT, trace_bytes)
    manifest["artifacts"] = {"module": "replay.wasm"}
    manifest["boundary_funcs"] = list(range(k))
    manifest["replay_funcs"] = (list(range(k)) + [low.entry_idx]
                                + [low.aux_funcidx(t) for t in range(len(aux))])
    manifest["memory_export"] = _memory_export_name(original)
    manifest["notes"] = notes
    return ReplayBundle(manifest, {"replay.wasm": binary})


def _memory_export_name(m: WasmModule) -> str | None:
    for e in m.exports:
        if e.kind == "memory" and e.index == 0:
            return e.name
    return None


def _dispatch_body(m: WasmModule, low: _Lowering, ft: FuncType, fn, counter: int):
    """Counter read, counter increment, then a nested if-chain on contexts."""
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
        body.extend(low.lower_context(fn.contexts[i]))
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
    return m, body
