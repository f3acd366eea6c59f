"""Subset validator: index spaces, export uniqueness, body typing, size limits.

Returns a list of diagnostic strings (empty means the module is valid)
and never raises for validation failures.  The body type checker is the
standard abstract-stack algorithm with unreachable polymorphism.
"""

from __future__ import annotations

from .binary import encode_function_body
from .model import (DEFAULT_BODY_LIMIT, LOAD_SHAPES, NUM_TYPES, STORE_SHAPES, FuncType,
                    WasmModule)

_CMP = {"eq", "ne", "lt_s", "lt_u", "gt_s", "gt_u", "le_s", "le_u", "ge_s", "ge_u",
        "lt", "gt", "le", "ge"}
_IBIN = {"add", "sub", "mul", "div_s", "div_u", "rem_s", "rem_u", "and", "or", "xor",
         "shl", "shr_s", "shr_u", "rotl", "rotr"}
_IUN = {"clz", "ctz", "popcnt", "extend8_s", "extend16_s", "extend32_s"}
_FBIN = {"add", "sub", "mul", "div", "min", "max", "copysign"}
_FUN = {"abs", "neg", "ceil", "floor", "trunc", "nearest", "sqrt"}

# conversion ops: name -> (operand type, result type)
_CONVERSIONS = {
    "i32.wrap_i64": ("i64", "i32"),
    "i64.extend_i32_s": ("i32", "i64"), "i64.extend_i32_u": ("i32", "i64"),
    "f32.demote_f64": ("f64", "f32"), "f64.promote_f32": ("f32", "f64"),
    "i32.reinterpret_f32": ("f32", "i32"), "i64.reinterpret_f64": ("f64", "i64"),
    "f32.reinterpret_i32": ("i32", "f32"), "f64.reinterpret_i64": ("i64", "f64"),
}
for _to in ("i32", "i64"):
    for _from in ("f32", "f64"):
        for _s in ("s", "u"):
            _CONVERSIONS[f"{_to}.trunc_{_from}_{_s}"] = (_from, _to)
            _CONVERSIONS[f"{_to}.trunc_sat_{_from}_{_s}"] = (_from, _to)
for _to in ("f32", "f64"):
    for _from in ("i32", "i64"):
        for _s in ("s", "u"):
            _CONVERSIONS[f"{_to}.convert_{_from}_{_s}"] = (_from, _to)


class _Ctrl:
    __slots__ = ("op", "params", "results", "height", "unreachable")

    def __init__(self, op, params, results, height):
        self.op = op
        self.params = params
        self.results = results
        self.height = height
        self.unreachable = False

    @property
    def label_types(self):
        return self.params if self.op == "loop" else self.results


class _BodyError(Exception):
    pass


class _Checker:
    def __init__(self, module: WasmModule, funcidx: int, ft: FuncType, locals_):
        self.m = module
        self.funcidx = funcidx
        self.locals = tuple(ft.params) + tuple(locals_)
        self.stack: list[str] = []
        self.ctrls = [_Ctrl("func", (), tuple(ft.results), 0)]

    def fail(self, pc, msg):
        raise _BodyError(f"function {self.funcidx} at pc {pc}: {msg}")

    def push(self, *types):
        self.stack.extend(types)

    def pop(self, pc, expected=None):
        frame = self.ctrls[-1]
        if len(self.stack) == frame.height:
            if frame.unreachable:
                return expected or "unknown"
            self.fail(pc, "operand stack underflow")
        t = self.stack.pop()
        if expected is not None and t not in (expected, "unknown"):
            self.fail(pc, f"expected {expected}, found {t}")
        return t

    def pop_seq(self, pc, types):
        for t in reversed(types):
            self.pop(pc, t)

    def block_sig(self, pc, bt) -> FuncType:
        if bt is None:
            return FuncType((), ())
        if isinstance(bt, str):
            return FuncType((), (bt,))
        if not 0 <= bt < len(self.m.types):
            self.fail(pc, f"block type index {bt} out of range")
        return self.m.types[bt]

    def set_unreachable(self):
        frame = self.ctrls[-1]
        del self.stack[frame.height:]
        frame.unreachable = True

    def label(self, pc, depth):
        if depth >= len(self.ctrls):
            self.fail(pc, f"branch depth {depth} out of range")
        return self.ctrls[-1 - depth]


def _check_body(m: WasmModule, funcidx: int, ft: FuncType, fd) -> list[str]:
    c = _Checker(m, funcidx, ft, fd.locals)
    num_funcs = m.num_funcs
    num_globals = m.num_globals
    declared = {f for seg in m.elems for f in seg.funcidxs}
    declared.update(e.index for e in m.exports if e.kind == "func")

    def check(pc, ins):
        name = ins[0]
        if name == "nop":
            return
        if name == "unreachable":
            c.set_unreachable()
            return
        if name in ("block", "loop", "if"):
            sig = c.block_sig(pc, ins[1])
            if name == "if":
                c.pop(pc, "i32")
            c.pop_seq(pc, sig.params)
            c.ctrls.append(_Ctrl(name, sig.params, sig.results, len(c.stack)))
            c.push(*sig.params)
            return
        if name == "else":
            frame = c.ctrls[-1]
            if frame.op != "if":
                c.fail(pc, "else without if")
            c.pop_seq(pc, frame.results)
            if len(c.stack) != frame.height:
                c.fail(pc, "then branch leaves extra values on the stack")
            frame.op = "if-else"
            frame.unreachable = False
            c.push(*frame.params)
            return
        if name == "end":
            frame = c.ctrls[-1]
            if frame.op == "func":
                c.fail(pc, "unbalanced end")
            if frame.op == "if" and frame.params != frame.results:
                c.fail(pc, "if without else must have matching params/results")
            c.pop_seq(pc, frame.results)
            if len(c.stack) != frame.height:
                c.fail(pc, "block leaves extra values on the stack")
            c.ctrls.pop()
            c.push(*frame.results)
            return
        if name == "br":
            frame = c.label(pc, ins[1])
            c.pop_seq(pc, frame.label_types)
            c.set_unreachable()
            return
        if name == "br_if":
            c.pop(pc, "i32")
            frame = c.label(pc, ins[1])
            c.pop_seq(pc, frame.label_types)
            c.push(*frame.label_types)
            return
        if name == "br_table":
            c.pop(pc, "i32")
            default = c.label(pc, ins[2])
            arity = default.label_types
            for d in ins[1]:
                if c.label(pc, d).label_types != arity:
                    c.fail(pc, "br_table arity mismatch")
            c.pop_seq(pc, arity)
            c.set_unreachable()
            return
        if name == "return":
            c.pop_seq(pc, c.ctrls[0].results)
            c.set_unreachable()
            return
        if name == "call":
            if ins[1] >= num_funcs:
                c.fail(pc, f"call to unknown function {ins[1]}")
            sig = m.functype(ins[1])
            c.pop_seq(pc, sig.params)
            c.push(*sig.results)
            return
        if name == "call_indirect":
            if ins[2] >= m.num_tables:
                c.fail(pc, "call_indirect without table")
            if ins[1] >= len(m.types):
                c.fail(pc, f"call_indirect type {ins[1]} out of range")
            c.pop(pc, "i32")
            sig = m.types[ins[1]]
            c.pop_seq(pc, sig.params)
            c.push(*sig.results)
            return
        if name == "drop":
            c.pop(pc)
            return
        if name == "select":
            c.pop(pc, "i32")
            a = c.pop(pc)
            b = c.pop(pc)
            if "unknown" not in (a, b) and a != b:
                c.fail(pc, f"select operands differ: {a} vs {b}")
            if a == "funcref" or b == "funcref":
                c.fail(pc, "select requires numeric operands")
            c.push(a if a != "unknown" else b)
            return
        if name in ("local.get", "local.set", "local.tee"):
            if ins[1] >= len(c.locals):
                c.fail(pc, f"local {ins[1]} out of range")
            t = c.locals[ins[1]]
            if name == "local.get":
                c.push(t)
            elif name == "local.set":
                c.pop(pc, t)
            else:
                c.pop(pc, t)
                c.push(t)
            return
        if name in ("global.get", "global.set"):
            if ins[1] >= num_globals:
                c.fail(pc, f"global {ins[1]} out of range")
            gt = m.global_type(ins[1])
            if name == "global.get":
                c.push(gt.valtype)
            else:
                if not gt.mutable:
                    c.fail(pc, f"global {ins[1]} is immutable")
                c.pop(pc, gt.valtype)
            return
        if name in ("table.get", "table.set"):
            if ins[1] >= m.num_tables:
                c.fail(pc, f"table {ins[1]} out of range")
            if name == "table.get":
                c.pop(pc, "i32")
                c.push("funcref")
            else:
                c.pop(pc, "funcref")
                c.pop(pc, "i32")
            return
        if name in LOAD_SHAPES:
            t, width = LOAD_SHAPES[name]
            if m.num_memories == 0:
                c.fail(pc, "load without memory")
            if 1 << ins[1] > width:
                c.fail(pc, f"{name} alignment {ins[1]} exceeds natural alignment")
            c.pop(pc, "i32")
            c.push(t)
            return
        if name in STORE_SHAPES:
            t, width = STORE_SHAPES[name]
            if m.num_memories == 0:
                c.fail(pc, "store without memory")
            if 1 << ins[1] > width:
                c.fail(pc, f"{name} alignment {ins[1]} exceeds natural alignment")
            c.pop(pc, t)
            c.pop(pc, "i32")
            return
        if name in ("memory.size", "memory.grow"):
            if m.num_memories == 0:
                c.fail(pc, f"{name} without memory")
            if name == "memory.grow":
                c.pop(pc, "i32")
            c.push("i32")
            return
        if name == "memory.init":
            if m.num_memories == 0:
                c.fail(pc, "memory.init without memory")
            if ins[1] >= len(m.datas):
                c.fail(pc, f"data segment {ins[1]} out of range")
            c.pop_seq(pc, ("i32", "i32", "i32"))
            return
        if name == "data.drop":
            if ins[1] >= len(m.datas):
                c.fail(pc, f"data segment {ins[1]} out of range")
            return
        if name == "memory.copy" or name == "memory.fill":
            if m.num_memories == 0:
                c.fail(pc, f"{name} without memory")
            c.pop_seq(pc, ("i32", "i32", "i32"))
            return
        if name.endswith(".const"):
            c.push(name.split(".")[0])
            return
        if name == "ref.null":
            c.push("funcref")
            return
        if name == "ref.is_null":
            c.pop(pc, "funcref")
            c.push("i32")
            return
        if name == "ref.func":
            if ins[1] >= num_funcs:
                c.fail(pc, f"ref.func to unknown function {ins[1]}")
            if ins[1] not in declared:
                c.fail(pc, f"ref.func target {ins[1]} not declared in an element "
                           "segment or export")
            c.push("funcref")
            return
        prefix, _, op = name.partition(".")
        if prefix in NUM_TYPES:
            if name == f"{prefix}.eqz":
                c.pop(pc, prefix)
                c.push("i32")
                return
            if op in _CMP:
                c.pop(pc, prefix)
                c.pop(pc, prefix)
                c.push("i32")
                return
            if prefix in ("i32", "i64") and op in _IBIN:
                c.pop(pc, prefix)
                c.pop(pc, prefix)
                c.push(prefix)
                return
            if prefix in ("i32", "i64") and op in _IUN:
                c.pop(pc, prefix)
                c.push(prefix)
                return
            if prefix in ("f32", "f64") and op in _FBIN:
                c.pop(pc, prefix)
                c.pop(pc, prefix)
                c.push(prefix)
                return
            if prefix in ("f32", "f64") and op in _FUN:
                c.pop(pc, prefix)
                c.push(prefix)
                return
            if name in _CONVERSIONS:
                src, dst = _CONVERSIONS[name]
                c.pop(pc, src)
                c.push(dst)
                return
        c.fail(pc, f"unhandled instruction {name}")

    try:
        for pc, ins in enumerate(fd.body):
            check(pc, ins)
        if len(c.ctrls) != 1:
            c.fail(len(fd.body), f"{len(c.ctrls) - 1} unclosed blocks")
        frame = c.ctrls[0]
        c.pop_seq(len(fd.body), frame.results)
        if len(c.stack) != frame.height:
            c.fail(len(fd.body), "body leaves extra values on the stack")
    except _BodyError as exc:
        return [str(exc)]
    return []


def _is_const_expr(expr, valtype, m: WasmModule) -> bool:
    if valtype == "funcref":
        return len(expr) == 1 and expr[0][0] in ("ref.null", "ref.func")
    return len(expr) == 1 and expr[0][0] == f"{valtype}.const"


def validate_module(m: WasmModule, body_limit: int = DEFAULT_BODY_LIMIT) -> list[str]:
    """Check the module; returns a list of diagnostics (empty when valid)."""
    diags: list[str] = []

    for i, im in enumerate(m.imports):
        if im.kind == "func" and im.desc >= len(m.types):
            diags.append(f"import {i}: type index {im.desc} out of range")

    for i, fd in enumerate(m.functions):
        if fd.typeidx >= len(m.types):
            diags.append(f"function {m.num_func_imports + i}: type index "
                         f"{fd.typeidx} out of range")

    if m.num_tables > 1:
        diags.append("at most one table is supported")

    seen = set()
    limits = {"func": m.num_funcs, "table": m.num_tables,
              "memory": m.num_memories, "global": m.num_globals}
    for e in m.exports:
        if e.name in seen:
            diags.append(f"duplicate export name {e.name!r}")
        seen.add(e.name)
        if e.index >= limits[e.kind]:
            diags.append(f"export {e.name!r}: {e.kind} index {e.index} out of range")

    num_gimports = len(m.imported("global"))
    for i, g in enumerate(m.globals):
        if not _is_const_expr(g.init, g.type.valtype, m):
            diags.append(f"global {num_gimports + i}: init must be a "
                         f"{g.type.valtype} constant expression")

    if m.start is not None:
        if m.start >= m.num_funcs:
            diags.append(f"start function {m.start} out of range")
        elif m.functype(m.start) != FuncType((), ()):
            diags.append("start function must have type () -> ()")

    for i, seg in enumerate(m.elems):
        if seg.mode == "active":
            if m.num_tables == 0:
                diags.append(f"element segment {i}: no table")
            if not _is_const_expr(seg.offset, "i32", m):
                diags.append(f"element segment {i}: offset must be an i32 constant")
        for f in seg.funcidxs:
            if f >= m.num_funcs:
                diags.append(f"element segment {i}: function {f} out of range")

    for i, seg in enumerate(m.datas):
        if seg.mode == "active":
            if seg.memidx >= m.num_memories:
                diags.append(f"data segment {i}: memory {seg.memidx} out of range")
            if not _is_const_expr(seg.offset, "i32", m):
                diags.append(f"data segment {i}: offset must be an i32 constant")

    if diags:
        return diags  # body checks assume sane index spaces

    for i, fd in enumerate(m.functions):
        funcidx = m.num_func_imports + i
        diags.extend(_check_body(m, funcidx, m.types[fd.typeidx], fd))
        size = len(encode_function_body(fd))
        if size > body_limit:
            diags.append(f"function {funcidx}: body is {size} bytes, "
                         f"over the {body_limit}-byte limit")
    return diags
