"""Binary instrumentation: rewrite a module into a recording drop-in.

The instrumented module imports one recorder function per event shape
from the ``wrr`` namespace and calls them with copies of runtime values,
so the original control flow and results are unchanged.

Layout of the instrumented module's function index space:

    [R recorder imports][K original func imports][N original bodies][W wrappers]

Every original function index x is shifted to x + R; wasm-level call
sites (call, ref.func, element segments) that reference a host-boundary
function are remapped to its wrapper instead, which records Call /
CallReturn around the real call.  Exports and the start function keep
pointing at the real functions: host-side entries must not fabricate
Call events.  Wrappers are deliberately the last W functions so the
layout is recoverable from the module itself plus the boundary set.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AlreadyInstrumented, UnsupportedFeature
from .wasm import (CustomSection, FuncType, FunctionDef, Import, WasmModule,
                   intern_functype)
from .wasm.binary import Reader, enc_u
from .wasm.model import LOAD_SHAPES, NUM_TYPES, STORE_SHAPES


@dataclass(frozen=True)
class InstrumentationConfig:
    record_loads: bool = True
    record_stores: bool = True
    record_calls: bool = True
    record_entries: bool = True
    record_globals: bool = True
    record_tables: bool = True
    recorder_import_module: str = "wrr"
    # Defined functions (original index space) treated as host boundary:
    # wrapped like imports and left uninstrumented.  Used when re-recording
    # generated replay modules.
    boundary_funcs: frozenset[int] = frozenset()
    # Defined functions left uninstrumented without wrapping (replay
    # plumbing such as entry and auxiliary functions).
    skip_funcs: frozenset[int] = frozenset()


_I32 = ("i32",)


def recorder_signatures() -> list[tuple[str, FuncType]]:
    """The fixed recorder import set, one per event/value-shape combination."""
    sigs: list[tuple[str, FuncType]] = []
    for t in NUM_TYPES:
        sigs.append((f"arg_{t}", FuncType((t,), ())))
    for name in ("func_entry", "func_return", "call_pre", "call_post"):
        sigs.append((name, FuncType(_I32, ())))
    for shape, t in (("i32", "i32"), ("i32_8", "i32"), ("i32_16", "i32"),
                     ("i64", "i64"), ("i64_8", "i64"), ("i64_16", "i64"),
                     ("i64_32", "i64"), ("f32", "f32"), ("f64", "f64")):
        sigs.append((f"load_{shape}", FuncType(("i32", "i32", t), ())))
    for shape, t in (("i32", "i32"), ("i32_8", "i32"), ("i32_16", "i32"),
                     ("i64", "i64"), ("i64_8", "i64"), ("i64_16", "i64"),
                     ("i64_32", "i64"), ("f32", "f32"), ("f64", "f64")):
        sigs.append((f"store_{shape}", FuncType(("i32", "i32", t), ())))
    for t in NUM_TYPES:
        sigs.append((f"global_get_{t}", FuncType(("i32", t), ())))
    sigs.append(("table_get", FuncType(("i32", "i32"), ())))
    return sigs


_LOAD_RECORDER = {
    "i32.load": "load_i32", "i32.load8_s": "load_i32_8", "i32.load8_u": "load_i32_8",
    "i32.load16_s": "load_i32_16", "i32.load16_u": "load_i32_16",
    "i64.load": "load_i64", "i64.load8_s": "load_i64_8", "i64.load8_u": "load_i64_8",
    "i64.load16_s": "load_i64_16", "i64.load16_u": "load_i64_16",
    "i64.load32_s": "load_i64_32", "i64.load32_u": "load_i64_32",
    "f32.load": "load_f32", "f64.load": "load_f64",
}
_STORE_RECORDER = {
    "i32.store": "store_i32", "i32.store8": "store_i32_8", "i32.store16": "store_i32_16",
    "i64.store": "store_i64", "i64.store8": "store_i64_8", "i64.store16": "store_i64_16",
    "i64.store32": "store_i64_32", "f32.store": "store_f32", "f64.store": "store_f64",
}


class _Scratch:
    """Per-function scratch local allocator; one injection site in flight."""

    def __init__(self, first_index: int):
        self.first = first_index
        self.types: list[str] = []
        self.free: dict[str, list[int]] = {}
        self.taken: list[tuple[str, int]] = []

    def take(self, t: str) -> int:
        pool = self.free.setdefault(t, [])
        if pool:
            idx = pool.pop()
        else:
            idx = self.first + len(self.types)
            self.types.append(t)
        self.taken.append((t, idx))
        return idx

    def release_site(self):
        for t, idx in self.taken:
            self.free[t].append(idx)
        self.taken.clear()


def instrument(m: WasmModule, cfg: InstrumentationConfig = InstrumentationConfig()) -> WasmModule:
    """Return a recording drop-in replacement for `m`."""
    rec_mod = cfg.recorder_import_module
    if any(im.module == rec_mod for im in m.imports):
        raise AlreadyInstrumented(f"module already imports from {rec_mod!r}")

    sigs = recorder_signatures()
    num_r = len(sigs)
    out = m
    rec_typeidx = []
    for _, ft in sigs:
        out, ti = intern_functype(out, ft)
        rec_typeidx.append(ti)
    rec_index = {name: i for i, (name, _) in enumerate(sigs)}

    k = m.num_func_imports
    if cfg.record_calls:
        wrapped = list(range(k)) + sorted(cfg.boundary_funcs)
    else:
        wrapped = []
    wrapped_set = set(wrapped)
    skip = set(cfg.skip_funcs) | set(cfg.boundary_funcs)
    n = len(m.functions)
    wrapper_base = num_r + k + n
    wrapper_of = {x: wrapper_base + p for p, x in enumerate(wrapped)}

    def remap_call(x: int) -> int:
        return wrapper_of.get(x, x + num_r)

    mutable_observed = _host_visible_mutable_globals(m)
    num_gimports = len(m.imported("global"))

    new_functions = []
    for t, fd in enumerate(m.functions):
        orig_idx = k + t
        ft = m.types[fd.typeidx]
        body = tuple((ins[0], remap_call(ins[1])) if ins[0] in ("call", "ref.func") else ins
                     for ins in fd.body)
        if orig_idx in skip:
            new_functions.append(FunctionDef(fd.typeidx, fd.locals, body))
            continue
        out, new_fd = _instrument_body(out, m, orig_idx, ft, fd.locals, body, cfg,
                                       rec_index, mutable_observed)
        new_functions.append(new_fd)

    wrappers = []
    for x in wrapped:
        out, w = _make_wrapper(out, m.functype(x), x, num_r, rec_index)
        wrappers.append(w)

    new_imports = tuple(Import(rec_mod, name, "func", ti)
                        for (name, _), ti in zip(sigs, rec_typeidx))
    new_imports += m.imports

    exports = tuple(e if e.kind != "func" else e.__class__(e.name, e.kind, e.index + num_r)
                    for e in m.exports)
    elems = tuple(seg.__class__(seg.mode, seg.tableidx, seg.offset,
                                tuple(remap_call(f) for f in seg.funcidxs))
                  for seg in m.elems)
    start = None if m.start is None else m.start + num_r

    customs = _rewrite_name_section(
        m.customs, lambda old: old + num_r,
        [(wrapper_base + p, f"wrr_wrap_{x}") for p, x in enumerate(wrapped)])

    return out.with_(imports=new_imports, functions=tuple(new_functions) + tuple(wrappers),
                     exports=exports, elems=elems, start=start, customs=customs)


def _host_visible_mutable_globals(m: WasmModule) -> set[int]:
    """Globals whose value the host can change: mutable and imported/exported."""
    observed = set()
    num_gimports = len(m.imported("global"))
    for i in range(num_gimports):
        if m.global_type(i).mutable:
            observed.add(i)
    exported = {e.index for e in m.exports if e.kind == "global"}
    for i in exported:
        if m.global_type(i).mutable:
            observed.add(i)
    return observed


def _blocktype_for(out: WasmModule, results: tuple[str, ...]):
    if not results:
        return out, None
    if len(results) == 1:
        return out, results[0]
    return intern_functype(out, FuncType((), results))


def _instrument_body(out, m, orig_idx, ft, locals_, body, cfg, rec, observed_globals):
    """Inject recorder calls into one function body (already call-remapped)."""
    for t in ft.params + ft.results:
        if t == "funcref":
            raise UnsupportedFeature("funcref parameters",
                                     f"function {orig_idx} cannot be traced")
    scratch = _Scratch(len(ft.params) + len(locals_))
    rec_call = lambda name: ("call", rec[name])

    new: list[tuple] = []

    if cfg.record_entries:
        for i, t in enumerate(ft.params):
            new.append(("local.get", i))
            new.append(rec_call(f"arg_{t}"))
        new.append(("i32.const", orig_idx))
        new.append(rec_call("func_entry"))

    out, wrap_bt = _blocktype_for(out, ft.results)
    new.append(("block", wrap_bt))

    depth = 0
    for ins in body:
        name = ins[0]
        if name in ("block", "loop", "if"):
            depth += 1
            new.append(ins)
            continue
        if name == "end":
            depth -= 1
            new.append(ins)
            continue
        if name == "return" and cfg.record_entries:
            new.append(("br", depth))
            continue
        if cfg.record_loads and name in _LOAD_RECORDER:
            _, _, offset = ins[0], ins[1], ins[2]
            base = scratch.take("i32")
            valtype = LOAD_SHAPES[name][0]
            val = scratch.take(valtype)
            new.append(("local.tee", base))
            new.append(ins)
            new.append(("local.tee", val))
            new.append(("i32.const", 0))
            new.append(("local.get", base))
            if offset:
                new.append(("i32.const", offset))
                new.append(("i32.add",))
            new.append(("local.get", val))
            new.append(rec_call(_LOAD_RECORDER[name]))
            scratch.release_site()
            continue
        if cfg.record_stores and name in _STORE_RECORDER:
            offset = ins[2]
            valtype = STORE_SHAPES[name][0]
            val = scratch.take(valtype)
            base = scratch.take("i32")
            new.append(("local.set", val))
            new.append(("local.tee", base))
            new.append(("local.get", val))
            new.append(ins)
            new.append(("i32.const", 0))
            new.append(("local.get", base))
            if offset:
                new.append(("i32.const", offset))
                new.append(("i32.add",))
            new.append(("local.get", val))
            new.append(rec_call(_STORE_RECORDER[name]))
            scratch.release_site()
            continue
        if cfg.record_globals and name == "global.get" and ins[1] in observed_globals:
            gt = m.global_type(ins[1])
            val = scratch.take(gt.valtype)
            new.append(ins)
            new.append(("local.tee", val))
            new.append(("i32.const", ins[1]))
            new.append(("local.get", val))
            new.append(rec_call(f"global_get_{gt.valtype}"))
            scratch.release_site()
            continue
        if cfg.record_tables and name == "table.get":
            elem = scratch.take("i32")
            new.append(("local.tee", elem))
            new.append(ins)
            new.append(("i32.const", ins[1]))
            new.append(("local.get", elem))
            new.append(rec_call("table_get"))
            scratch.release_site()
            continue
        new.append(ins)

    new.append(("end",))  # close the wrap block; results now on the stack

    if cfg.record_entries:
        res_locals = [scratch.take(t) for t in ft.results]
        for idx in reversed(res_locals):
            new.append(("local.set", idx))
        for t, idx in zip(ft.results, res_locals):
            new.append(("local.get", idx))
            new.append(rec_call(f"arg_{t}"))
        new.append(("i32.const", orig_idx))
        new.append(rec_call("func_return"))
        for idx in res_locals:
            new.append(("local.get", idx))
        scratch.release_site()

    typeidx = m.functions[orig_idx - m.num_func_imports].typeidx
    return out, FunctionDef(typeidx, tuple(locals_) + tuple(scratch.types), tuple(new))


def _make_wrapper(out, ft: FuncType, orig_idx: int, num_r: int, rec):
    """Wrapper recording Call / CallReturn around the real function."""
    for t in ft.params + ft.results:
        if t == "funcref":
            raise UnsupportedFeature("funcref parameters",
                                     f"boundary function {orig_idx} cannot be traced")
    out, typeidx = intern_functype(out, ft)
    body: list[tuple] = [("i32.const", orig_idx), ("call", rec["call_pre"])]
    for i in range(len(ft.params)):
        body.append(("local.get", i))
    body.append(("call", orig_idx + num_r))
    res_locals = [len(ft.params) + i for i in range(len(ft.results))]
    for idx in reversed(res_locals):
        body.append(("local.set", idx))
    for t, idx in zip(ft.results, res_locals):
        body.append(("local.get", idx))
        body.append(("call", rec[f"arg_{t}"]))
    body.append(("i32.const", orig_idx))
    body.append(("call", rec["call_post"]))
    for idx in res_locals:
        body.append(("local.get", idx))
    return out, FunctionDef(typeidx, tuple(ft.results), tuple(body))


# ------------------------------------------------------------ name section

def _rewrite_name_section(customs, remap, wrapper_names):
    """Shift function-name entries and add wrapper names.

    The existing "name" custom section is rewritten when parseable
    (module-name and function-name subsections kept, others dropped since
    their indices went stale); otherwise a fresh one is created.
    """
    entries = dict(wrapper_names)
    module_name_blob = b""
    rest = []
    for cs in customs:
        if cs.name != "name":
            rest.append(cs)
            continue
        try:
            r = Reader(cs.data)
            while not r.eof():
                sub_id = r.u8()
                size = r.u()
                payload = r.take(size)
                if sub_id == 0:
                    module_name_blob = payload
                elif sub_id == 1:
                    rr = Reader(payload)
                    for _ in range(rr.u()):
                        idx = rr.u()
                        entries[remap(idx)] = rr.name()
        except Exception:
            rest.append(cs)  # unparseable: preserve verbatim

    if not entries and not module_name_blob:
        return tuple(rest)
    payload = b""
    if module_name_blob:
        payload += b"\x00" + enc_u(len(module_name_blob)) + module_name_blob
    if entries:
        namemap = enc_u(len(entries))
        for idx in sorted(entries):
            name_bytes = entries[idx].encode("utf-8")
            namemap += enc_u(idx) + enc_u(len(name_bytes)) + name_bytes
        payload += b"\x01" + enc_u(len(namemap)) + namemap
    return tuple(rest) + (CustomSection("name", payload),)
