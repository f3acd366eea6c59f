"""Embedded wasm interpreter with a scripted, deterministic host.

Executes original, instrumented, and generated replay modules entirely
in-process.  Recorder imports (module name ``wrr``) are bound to a
recorder runtime that assembles trace events; all other function imports
are bound to scenario behaviors indexed by dynamic invocation count.

Everything is bit-deterministic: the value stack holds raw bit patterns
(unsigned ints) for i32/i64/f32/f64 and ``int | None`` for funcref;
float arithmetic converts to Python floats per-operation and NaN results
are canonicalized, so two runs of the same (module, scenario) pair give
identical traces and final memories.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

from .errors import (LinkError, ScenarioExhausted, SignatureMismatch, Trap,
                     TrapDuringStart, WrrError)
from .scenario import (CallExport, HostScenario, ImportBehavior, WriteGlobal,
                       WriteMemory)
from .trace import (Call, CallReturn, FuncEntry, FuncReturn, GlobalGet, Load, Store,
                    TableGet, Trace, Value, ValueKind)
from .wasm import PAGE_SIZE, FuncType, WasmModule
from .wasm.model import LOAD_SHAPES, STORE_SHAPES

MAX_PAGES = 65536

# Trap kinds
UNREACHABLE = "unreachable"
DIV_BY_ZERO = "integer divide by zero"
INT_OVERFLOW = "integer overflow"
BAD_CONVERSION = "invalid conversion to integer"
OOB_MEMORY = "out of bounds memory access"
OOB_TABLE = "out of bounds table access"
UNINIT_ELEMENT = "uninitialized element"
INDIRECT_MISMATCH = "indirect call type mismatch"
STACK_EXHAUSTED = "call stack exhausted"

_M32 = 0xFFFFFFFF
_M64 = 0xFFFFFFFFFFFFFFFF
_CANON_NAN32 = 0x7FC00000
_CANON_NAN64 = 0x7FF8000000000000

VALTYPE_KIND = {"i32": ValueKind.I32, "i64": ValueKind.I64,
                "f32": ValueKind.F32, "f64": ValueKind.F64}


class ScenarioError(WrrError):
    """A scenario step or host action could not be applied."""


# ------------------------------------------------------------- numerics

def _sx(v: int, bits: int) -> int:
    sign = 1 << (bits - 1)
    return v - (1 << bits) if v & sign else v


def _f32_of(bits: int) -> float:
    return struct.unpack("<f", struct.pack("<I", bits))[0]


def _f32_bits(x: float) -> int:
    if math.isnan(x):
        return _CANON_NAN32
    try:
        return struct.unpack("<I", struct.pack("<f", x))[0]
    except OverflowError:
        return 0x7F800000 if x > 0 else 0xFF800000


def _f64_of(bits: int) -> float:
    return struct.unpack("<d", struct.pack("<Q", bits))[0]


def _f64_bits(x: float) -> int:
    if math.isnan(x):
        return _CANON_NAN64
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def _idiv(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _irem(a: int, b: int) -> int:
    r = abs(a) % abs(b)
    return r if a >= 0 else -r


def _clz(v: int, bits: int) -> int:
    return bits - v.bit_length()


def _ctz(v: int, bits: int) -> int:
    return (v & -v).bit_length() - 1 if v else bits


def _rotl(v: int, n: int, bits: int) -> int:
    n %= bits
    mask = (1 << bits) - 1
    return ((v << n) | (v >> (bits - n))) & mask


def _fmin(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a == 0.0 and b == 0.0:
        return a if math.copysign(1.0, a) < 0 else b
    return min(a, b)


def _fmax(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a == 0.0 and b == 0.0:
        return a if math.copysign(1.0, a) > 0 else b
    return max(a, b)


def _fnearest(x: float) -> float:
    if math.isnan(x) or math.isinf(x) or x == 0.0:
        return x
    r = float(round(x))  # Python round is round-half-to-even
    if r == 0.0:
        return math.copysign(0.0, x)
    return r


def _fsqrt(x: float) -> float:
    if math.isnan(x) or x < 0.0:
        return math.nan
    return math.sqrt(x)


def _fceil(x: float) -> float:
    if math.isnan(x) or math.isinf(x) or x == 0.0:
        return x
    r = float(math.ceil(x))
    return math.copysign(0.0, x) if r == 0.0 else r


def _ffloor(x: float) -> float:
    if math.isnan(x) or math.isinf(x) or x == 0.0:
        return x
    r = float(math.floor(x))
    return math.copysign(0.0, x) if r == 0.0 else r


def _ftrunc(x: float) -> float:
    if math.isnan(x) or math.isinf(x) or x == 0.0:
        return x
    r = float(math.trunc(x))
    return math.copysign(0.0, x) if r == 0.0 else r


def _trunc_to_int(x: float, lo: int, hi: int) -> int:
    if math.isnan(x):
        raise Trap(BAD_CONVERSION)
    if math.isinf(x):
        raise Trap(INT_OVERFLOW)
    t = math.trunc(x)
    if not lo <= t <= hi:
        raise Trap(INT_OVERFLOW)
    return t


def _trunc_sat(x: float, lo: int, hi: int) -> int:
    if math.isnan(x):
        return 0
    if math.isinf(x):
        return hi if x > 0 else lo
    t = math.trunc(x)
    return max(lo, min(hi, t))


def eval_const_expr(expr, globals_cells=None) -> int | None:
    """Evaluate a constant expression (t.const / ref.null / ref.func)."""
    if len(expr) != 1:
        raise WrrError(f"unsupported constant expression: {expr!r}")
    ins = expr[0]
    name = ins[0]
    if name == "i32.const":
        return ins[1] & _M32
    if name == "i64.const":
        return ins[1] & _M64
    if name in ("f32.const", "f64.const"):
        return ins[1]
    if name == "ref.null":
        return None
    if name == "ref.func":
        return ins[1]
    raise WrrError(f"unsupported constant expression instruction: {name}")


# ------------------------------------------------------------ trace sinks

class TraceSink:
    """Receives recorder events during execution."""

    def emit(self, event) -> None:
        raise NotImplementedError

    def on_memory_grow(self, memidx: int, new_byte_len: int) -> None:
        pass

    def finish(self) -> Trace:
        raise NotImplementedError


class RawCollector(TraceSink):
    """Collects every event verbatim (a raw trace)."""

    def __init__(self):
        self.events = []

    def emit(self, event):
        self.events.append(event)

    def finish(self) -> Trace:
        return Trace(tuple(self.events))


class NullSink(TraceSink):
    def emit(self, event):
        pass

    def finish(self) -> Trace:
        return Trace(())


# -------------------------------------------------------- recorder runtime

class RecorderRuntime:
    """Backs the ``wrr`` recorder imports of an instrumented module.

    Pending values pushed by arg_* calls are consumed by the next
    event-committing recorder call.  Table contents are translated back
    to the uninstrumented module's function index space via the
    instrumentation layout (recorders first, wrappers last).
    """

    def __init__(self, sink: TraceSink, num_recorders: int, num_real_imports: int,
                 wrapped: list[int], num_defined: int):
        self.sink = sink
        self.pending: list[Value] = []
        self._r = num_recorders
        self._wrapper_base = num_recorders + num_real_imports + num_defined
        self._wrapped = wrapped

    def to_original_funcidx(self, idx: int | None) -> int | None:
        if idx is None:
            return None
        if idx >= self._wrapper_base:
            return self._wrapped[idx - self._wrapper_base]
        if idx >= self._r:
            return idx - self._r
        raise WrrError(f"recorder function {idx} referenced as a funcref")

    def _take_pending(self) -> tuple[Value, ...]:
        vals = tuple(self.pending)
        self.pending.clear()
        return vals

    def handle(self, name: str, args: list, inst: "Instance") -> list:
        if name.startswith("arg_"):
            kind = VALTYPE_KIND[name[4:]]
            self.pending.append(Value(kind, args[0]))
        elif name == "func_entry":
            self.sink.emit(FuncEntry(args[0], self._take_pending()))
        elif name == "func_return":
            self.sink.emit(FuncReturn(args[0], self._take_pending()))
        elif name == "call_pre":
            self.sink.emit(Call(args[0]))
        elif name == "call_post":
            self.sink.emit(CallReturn(args[0], self._take_pending()))
        elif name.startswith("load_") or name.startswith("store_"):
            op, _, suffix = name.partition("_")
            kind = _ACCESS_KINDS[suffix]
            memidx, addr, raw = args
            mask = (1 << (8 * kind.width)) - 1
            value = Value(kind, raw & mask)
            cls = Load if op == "load" else Store
            self.sink.emit(cls(memidx, addr, value))
        elif name.startswith("global_get_"):
            kind = VALTYPE_KIND[name[len("global_get_"):]]
            self.sink.emit(GlobalGet(args[0], Value(kind, args[1])))
        elif name == "table_get":
            tableidx, elemidx = args
            ref = inst.table[elemidx] if elemidx < len(inst.table) else None
            self.sink.emit(TableGet(tableidx, elemidx, self.to_original_funcidx(ref)))
        else:
            raise LinkError(f"unknown recorder import {name!r}")
        return []


_ACCESS_KINDS = {
    "i32": ValueKind.I32, "i32_8": ValueKind.I8, "i32_16": ValueKind.I16,
    "i64": ValueKind.I64, "i64_8": ValueKind.I8, "i64_16": ValueKind.I16,
    "i64_32": ValueKind.I32, "f32": ValueKind.F32, "f64": ValueKind.F64,
}


# ------------------------------------------------------------- instance

@dataclass(frozen=True)
class FinalState:
    """Observable outcome of a scenario run."""

    memories: tuple[bytes, ...]
    results_log: tuple[tuple[Value, ...], ...]
    globals: tuple[tuple[str, object], ...]


class _ScenarioImport:
    """Host function driven by per-invocation scripted behaviors."""

    def __init__(self, name: str, behaviors: tuple[ImportBehavior, ...], functype: FuncType):
        self.name = name
        self.behaviors = behaviors
        self.functype = functype
        self.calls = 0

    def __call__(self, inst: "Instance", args: list) -> list:
        i = self.calls
        self.calls += 1
        if i >= len(self.behaviors):
            raise ScenarioExhausted(self.name, len(self.behaviors))
        behavior = self.behaviors[i]
        for action in behavior.pre_actions:
            inst.apply_host_action(action)
        if len(behavior.results) != len(self.functype.results):
            raise ScenarioError(
                f"import {self.name!r} behavior {i} returns {len(behavior.results)} "
                f"values, signature wants {len(self.functype.results)}")
        out = []
        for v, t in zip(behavior.results, self.functype.results):
            if v.kind is not VALTYPE_KIND[t]:
                raise ScenarioError(f"import {self.name!r} behavior {i}: "
                                    f"result kind {v.kind.name} does not match {t}")
            out.append(v.bits)
        return out


class Instance:
    """A single-threaded runtime instance of a module."""

    def __init__(self, module: WasmModule):
        self.module = module
        self.memories: list[bytearray] = []
        self.mem_types = list(module.memories)
        self.globals: list = []  # raw bits / funcref per global
        self.table: list = []
        self.table_type = module.tables[0] if module.tables else None
        self.bindings: dict[int, object] = {}  # func import index -> callable
        self.dropped_data: list[bool] = [d.mode == "active" for d in module.datas]
        self._ctrl_maps: dict[int, dict] = {}
        self.grow_listeners: list = []
        self.call_observer = None  # (frozenset[int] callers, callback)

    # -- construction helpers --

    def _ctrl_map(self, funcidx: int) -> dict:
        cached = self._ctrl_maps.get(funcidx)
        if cached is not None:
            return cached
        body = self.module.func_def(funcidx).body
        stack = []
        mapping = {}
        for pc, ins in enumerate(body):
            name = ins[0]
            if name in ("block", "loop", "if"):
                stack.append(pc)
            elif name == "else":
                mapping[("else", stack[-1])] = pc
            elif name == "end":
                start = stack.pop()
                mapping[start] = pc
        self._ctrl_maps[funcidx] = mapping
        return mapping

    def block_sig(self, bt) -> FuncType:
        if bt is None:
            return FuncType((), ())
        if isinstance(bt, str):
            return FuncType((), (bt,))
        return self.module.types[bt]

    # -- host-visible operations --

    def memory(self, memidx: int = 0) -> bytearray:
        return self.memories[memidx]

    def apply_host_action(self, action):
        if isinstance(action, WriteMemory):
            mem = self.memories[action.memidx]
            if action.addr + len(action.data) > len(mem):
                raise ScenarioError(f"host write at {action.addr} out of bounds")
            mem[action.addr:action.addr + len(action.data)] = action.data
        elif isinstance(action, WriteGlobal):
            gt = self.module.global_type(action.globalidx)
            if not gt.mutable:
                raise ScenarioError(f"host write to immutable global {action.globalidx}")
            if action.value.kind is not VALTYPE_KIND[gt.valtype]:
                raise ScenarioError(f"host write kind {action.value.kind.name} "
                                    f"does not match global type {gt.valtype}")
            self.globals[action.globalidx] = action.value.bits
        elif isinstance(action, CallExport):
            self.invoke_export(action.name, action.args)
        else:
            raise ScenarioError(f"unknown host action {action!r}")

    def invoke_export(self, name: str, args) -> list[Value]:
        exp = self.module.export_map().get(name)
        if exp is None or exp.kind != "func":
            raise LinkError(f"no exported function {name!r}")
        ft = self.module.functype(exp.index)
        if len(args) != len(ft.params):
            raise SignatureMismatch(f"{name!r} takes {len(ft.params)} args, got {len(args)}")
        bits = []
        for v, t in zip(args, ft.params):
            if v.kind is not VALTYPE_KIND[t]:
                raise SignatureMismatch(f"{name!r} arg kind {v.kind.name} != {t}")
            bits.append(v.bits)
        out = self.invoke_function(exp.index, bits)
        return [Value(VALTYPE_KIND[t], b) for t, b in zip(ft.results, out)]

    # -- execution --

    def invoke_function(self, funcidx: int, args: list, caller: int | None = None) -> list:
        m = self.module
        n_imports = m.num_func_imports
        if funcidx < n_imports:
            host = self.bindings.get(funcidx)
            if host is None:
                raise LinkError(f"function import {funcidx} is unbound")
            return host(self, args)
        try:
            results = self._exec(funcidx, args)
        except RecursionError:
            raise Trap(STACK_EXHAUSTED, funcidx) from None
        if self.call_observer is not None and caller is not None:
            callers, callback = self.call_observer
            if caller in callers:
                callback(funcidx, list(args), list(results))
        return results

    def _exec(self, funcidx: int, args: list) -> list:
        m = self.module
        fd = m.func_def(funcidx)
        ft = m.types[fd.typeidx]
        locals_ = list(args)
        for t in fd.locals:
            locals_.append(None if t == "funcref" else 0)
        body = fd.body
        ctrl = self._ctrl_map(funcidx)
        stack: list = []
        # labels: (cont_pc, arity, stack_height)
        labels: list[tuple[int, int, int]] = []
        pc = 0
        n_results = len(ft.results)

        def branch(depth: int) -> int:
            cont, arity, height = labels[-1 - depth]
            vals = stack[len(stack) - arity:] if arity else []
            del stack[height:]
            stack.extend(vals)
            del labels[len(labels) - 1 - depth:]
            return cont

        while pc < len(body):
            ins = body[pc]
            name = ins[0]
            try:
                if name == "local.get":
                    stack.append(locals_[ins[1]])
                elif name == "local.set":
                    locals_[ins[1]] = stack.pop()
                elif name == "local.tee":
                    locals_[ins[1]] = stack[-1]
                elif name == "i32.const":
                    stack.append(ins[1] & _M32)
                elif name == "i64.const":
                    stack.append(ins[1] & _M64)
                elif name in ("f32.const", "f64.const"):
                    stack.append(ins[1])
                elif name == "nop":
                    pass
                elif name == "unreachable":
                    raise Trap(UNREACHABLE)
                elif name in ("block", "loop", "if"):
                    sig = self.block_sig(ins[1])
                    end_pc = ctrl[pc]
                    if name == "block":
                        labels.append((end_pc + 1, len(sig.results),
                                       len(stack) - len(sig.params)))
                    elif name == "loop":
                        labels.append((pc, len(sig.params),
                                       len(stack) - len(sig.params)))
                    else:
                        cond = stack.pop()
                        else_pc = ctrl.get(("else", pc))
                        if cond:
                            labels.append((end_pc + 1, len(sig.results),
                                           len(stack) - len(sig.params)))
                        elif else_pc is not None:
                            labels.append((end_pc + 1, len(sig.results),
                                           len(stack) - len(sig.params)))
                            pc = else_pc
                        else:
                            # skip the whole if; params stay as results
                            pc = end_pc
                elif name == "else":
                    # fell out of the then-branch: jump to the matching end
                    depth0_cont = labels[-1][0]
                    pc = depth0_cont - 1  # the 'end' instruction
                    continue
                elif name == "end":
                    labels.pop()
                elif name == "br":
                    pc = branch(ins[1])
                    continue
                elif name == "br_if":
                    if stack.pop():
                        pc = branch(ins[1])
                        continue
                elif name == "br_table":
                    i = stack.pop()
                    targets, default = ins[1], ins[2]
                    depth = targets[i] if i < len(targets) else default
                    pc = branch(depth)
                    continue
                elif name == "return":
                    return stack[len(stack) - n_results:] if n_results else []
                elif name == "call":
                    callee = ins[1]
                    sig = m.functype(callee)
                    nargs = len(sig.params)
                    call_args = stack[len(stack) - nargs:] if nargs else []
                    del stack[len(stack) - nargs:]
                    stack.extend(self.invoke_function(callee, call_args, caller=funcidx))
                elif name == "call_indirect":
                    typeidx, _tableidx = ins[1], ins[2]
                    i = stack.pop()
                    if i >= len(self.table):
                        raise Trap(OOB_TABLE)
                    callee = self.table[i]
                    if callee is None:
                        raise Trap(UNINIT_ELEMENT)
                    if m.functype(callee) != m.types[typeidx]:
                        raise Trap(INDIRECT_MISMATCH)
                    sig = m.types[typeidx]
                    nargs = len(sig.params)
                    call_args = stack[len(stack) - nargs:] if nargs else []
                    del stack[len(stack) - nargs:]
                    stack.extend(self.invoke_function(callee, call_args, caller=funcidx))
                elif name == "drop":
                    stack.pop()
                elif name == "select":
                    c = stack.pop()
                    v2 = stack.pop()
                    v1 = stack.pop()
                    stack.append(v1 if c else v2)
                elif name in ("global.get", "global.set"):
                    if name == "global.get":
                        stack.append(self.globals[ins[1]])
                    else:
                        self.globals[ins[1]] = stack.pop()
                elif name in ("table.get", "table.set"):
                    if name == "table.get":
                        i = stack.pop()
                        if i >= len(self.table):
                            raise Trap(OOB_TABLE)
                        stack.append(self.table[i])
                    else:
                        ref = stack.pop()
                        i = stack.pop()
                        if i >= len(self.table):
                            raise Trap(OOB_TABLE)
                        self.table[i] = ref
                elif name in LOAD_SHAPES:
                    self._load(name, ins, stack)
                elif name in STORE_SHAPES:
                    self._store(name, ins, stack)
                elif name == "memory.size":
                    stack.append(len(self.memories[0]) // PAGE_SIZE)
                elif name == "memory.grow":
                    stack.append(self._grow(0, stack.pop()))
                elif name == "memory.init":
                    self._memory_init(ins[1], stack)
                elif name == "data.drop":
                    self.dropped_data[ins[1]] = True
                elif name == "memory.copy":
                    n = stack.pop()
                    src = stack.pop()
                    dst = stack.pop()
                    mem = self.memories[0]
                    if src + n > len(mem) or dst + n > len(mem):
                        raise Trap(OOB_MEMORY)
                    mem[dst:dst + n] = mem[src:src + n]
                elif name == "memory.fill":
                    n = stack.pop()
                    val = stack.pop() & 0xFF
                    dst = stack.pop()
                    mem = self.memories[0]
                    if dst + n > len(mem):
                        raise Trap(OOB_MEMORY)
                    mem[dst:dst + n] = bytes([val]) * n
                elif name == "ref.null":
                    stack.append(None)
                elif name == "ref.func":
                    stack.append(ins[1])
                elif name == "ref.is_null":
                    stack.append(1 if stack.pop() is None else 0)
                else:
                    self._numeric(name, stack)
            except Trap as trap:
                if trap.funcidx is None:
                    raise Trap(trap.kind, funcidx, pc) from None
                raise
            pc += 1
        return stack[len(stack) - n_results:] if n_results else []

    # -- memory --

    def _grow(self, memidx: int, delta: int) -> int:
        mem = self.memories[memidx]
        cur = len(mem) // PAGE_SIZE
        new = cur + delta
        limit = self.mem_types[memidx].max if self.mem_types[memidx].max is not None else MAX_PAGES
        if new > min(limit, MAX_PAGES):
            return _M32  # -1
        mem.extend(bytes(delta * PAGE_SIZE))
        for listener in self.grow_listeners:
            listener(memidx, len(mem))
        return cur

    def _load(self, name, ins, stack):
        valtype, width = LOAD_SHAPES[name]
        offset = ins[2]
        base = stack.pop()
        ea = base + offset
        mem = self.memories[0]
        if ea + width > len(mem):
            raise Trap(OOB_MEMORY)
        raw = int.from_bytes(mem[ea:ea + width], "little")
        if name.endswith("_s"):
            raw = _sx(raw, width * 8) & (_M32 if valtype == "i32" else _M64)
        stack.append(raw)

    def _store(self, name, ins, stack):
        _, width = STORE_SHAPES[name]
        offset = ins[2]
        val = stack.pop()
        base = stack.pop()
        ea = base + offset
        mem = self.memories[0]
        if ea + width > len(mem):
            raise Trap(OOB_MEMORY)
        mem[ea:ea + width] = (val & ((1 << (8 * width)) - 1)).to_bytes(width, "little")

    def _memory_init(self, dataidx, stack):
        n = stack.pop()
        src = stack.pop()
        dst = stack.pop()
        seg = self.module.datas[dataidx]
        seg_len = 0 if self.dropped_data[dataidx] else len(seg.data)
        mem = self.memories[0]
        if src + n > seg_len or dst + n > len(mem):
            raise Trap(OOB_MEMORY)
        if n:
            mem[dst:dst + n] = seg.data[src:src + n]

    # -- numeric dispatch --

    def _numeric(self, name, stack):
        handler = _NUMERIC.get(name)
        if handler is None:
            raise WrrError(f"interpreter cannot execute {name!r}")
        handler(stack)


_NUMERIC: dict = {}


def _bool(x) -> int:
    return 1 if x else 0


def _build_numeric_table():
    t = _NUMERIC

    def bin32(fn):
        def h(stack):
            b = stack.pop()
            a = stack.pop()
            stack.append(fn(a, b) & _M32)
        return h

    def bin64(fn):
        def h(stack):
            b = stack.pop()
            a = stack.pop()
            stack.append(fn(a, b) & _M64)
        return h

    def cmp(fn, conv=lambda v: v):
        def h(stack):
            b = conv(stack.pop())
            a = conv(stack.pop())
            stack.append(_bool(fn(a, b)))
        return h

    def un(fn, mask):
        def h(stack):
            stack.append(fn(stack.pop()) & mask)
        return h

    s32 = lambda v: _sx(v, 32)
    s64 = lambda v: _sx(v, 64)

    # i32 / i64 comparisons
    for bits, sx in ((32, s32), (64, s64)):
        p = f"i{bits}"
        t[f"{p}.eqz"] = (lambda stack: stack.append(_bool(stack.pop() == 0)))
        t[f"{p}.eq"] = cmp(lambda a, b: a == b)
        t[f"{p}.ne"] = cmp(lambda a, b: a != b)
        t[f"{p}.lt_s"] = cmp(lambda a, b: a < b, sx)
        t[f"{p}.lt_u"] = cmp(lambda a, b: a < b)
        t[f"{p}.gt_s"] = cmp(lambda a, b: a > b, sx)
        t[f"{p}.gt_u"] = cmp(lambda a, b: a > b)
        t[f"{p}.le_s"] = cmp(lambda a, b: a <= b, sx)
        t[f"{p}.le_u"] = cmp(lambda a, b: a <= b)
        t[f"{p}.ge_s"] = cmp(lambda a, b: a >= b, sx)
        t[f"{p}.ge_u"] = cmp(lambda a, b: a >= b)

    def idiv_s(bits, sx):
        lo = -(1 << (bits - 1))
        def fn(a, b):
            sa, sb = sx(a), sx(b)
            if sb == 0:
                raise Trap(DIV_BY_ZERO)
            if sa == lo and sb == -1:
                raise Trap(INT_OVERFLOW)
            return _idiv(sa, sb)
        return fn

    def irem_s(sx):
        def fn(a, b):
            sa, sb = sx(a), sx(b)
            if sb == 0:
                raise Trap(DIV_BY_ZERO)
            return _irem(sa, sb)
        return fn

    def udiv(a, b):
        if b == 0:
            raise Trap(DIV_BY_ZERO)
        return a // b

    def urem(a, b):
        if b == 0:
            raise Trap(DIV_BY_ZERO)
        return a % b

    for bits, binop, sx in ((32, bin32, s32), (64, bin64, s64)):
        p = f"i{bits}"
        t[f"{p}.add"] = binop(lambda a, b: a + b)
        t[f"{p}.sub"] = binop(lambda a, b: a - b)
        t[f"{p}.mul"] = binop(lambda a, b: a * b)
        t[f"{p}.div_s"] = binop(idiv_s(bits, sx))
        t[f"{p}.div_u"] = binop(udiv)
        t[f"{p}.rem_s"] = binop(irem_s(sx))
        t[f"{p}.rem_u"] = binop(urem)
        t[f"{p}.and"] = binop(lambda a, b: a & b)
        t[f"{p}.or"] = binop(lambda a, b: a | b)
        t[f"{p}.xor"] = binop(lambda a, b: a ^ b)
        t[f"{p}.shl"] = binop(lambda a, b, n=bits: a << (b % n))
        t[f"{p}.shr_u"] = binop(lambda a, b, n=bits: a >> (b % n))
        t[f"{p}.shr_s"] = binop(lambda a, b, n=bits, s=sx: s(a) >> (b % n))
        t[f"{p}.rotl"] = binop(lambda a, b, n=bits: _rotl(a, b, n))
        t[f"{p}.rotr"] = binop(lambda a, b, n=bits: _rotl(a, n - (b % n), n))
        mask = _M32 if bits == 32 else _M64
        t[f"{p}.clz"] = un(lambda v, n=bits: _clz(v, n), mask)
        t[f"{p}.ctz"] = un(lambda v, n=bits: _ctz(v, n), mask)
        t[f"{p}.popcnt"] = un(lambda v: bin(v).count("1"), mask)

    t["i32.extend8_s"] = un(lambda v: _sx(v & 0xFF, 8), _M32)
    t["i32.extend16_s"] = un(lambda v: _sx(v & 0xFFFF, 16), _M32)
    t["i64.extend8_s"] = un(lambda v: _sx(v & 0xFF, 8), _M64)
    t["i64.extend16_s"] = un(lambda v: _sx(v & 0xFFFF, 16), _M64)
    t["i64.extend32_s"] = un(lambda v: _sx(v & _M32, 32), _M64)

    # float helpers parameterized by width
    for p, of, to in (("f32", _f32_of, _f32_bits), ("f64", _f64_of, _f64_bits)):
        def fbin(fn, of=of, to=to):
            def h(stack):
                b = of(stack.pop())
                a = of(stack.pop())
                stack.append(to(fn(a, b)))
            return h

        def fun(fn, of=of, to=to):
            def h(stack):
                stack.append(to(fn(of(stack.pop()))))
            return h

        def fcmp(fn, of=of):
            def h(stack):
                b = of(stack.pop())
                a = of(stack.pop())
                if math.isnan(a) or math.isnan(b):
                    stack.append(1 if fn is _ne_marker else 0)
                else:
                    stack.append(_bool(fn(a, b)))
            return h

        t[f"{p}.add"] = fbin(lambda a, b: _nan_guard(a, b, a + b))
        t[f"{p}.sub"] = fbin(lambda a, b: _nan_guard(a, b, a - b))
        t[f"{p}.mul"] = fbin(_fmul)
        t[f"{p}.div"] = fbin(_fdiv)
        t[f"{p}.min"] = fbin(_fmin)
        t[f"{p}.max"] = fbin(_fmax)
        t[f"{p}.sqrt"] = fun(_fsqrt)
        t[f"{p}.ceil"] = fun(_fceil)
        t[f"{p}.floor"] = fun(_ffloor)
        t[f"{p}.trunc"] = fun(_ftrunc)
        t[f"{p}.nearest"] = fun(_fnearest)
        t[f"{p}.eq"] = fcmp(lambda a, b: a == b)
        t[f"{p}.ne"] = fcmp(_ne_marker)
        t[f"{p}.lt"] = fcmp(lambda a, b: a < b)
        t[f"{p}.gt"] = fcmp(lambda a, b: a > b)
        t[f"{p}.le"] = fcmp(lambda a, b: a <= b)
        t[f"{p}.ge"] = fcmp(lambda a, b: a >= b)

    # sign-bit ops are bit-level: no canonicalization
    t["f32.abs"] = un(lambda v: v & 0x7FFFFFFF, _M32)
    t["f32.neg"] = un(lambda v: v ^ 0x80000000, _M32)
    t["f64.abs"] = un(lambda v: v & 0x7FFFFFFFFFFFFFFF, _M64)
    t["f64.neg"] = un(lambda v: v ^ 0x8000000000000000, _M64)

    def copysign32(stack):
        b = stack.pop()
        a = stack.pop()
        stack.append((a & 0x7FFFFFFF) | (b & 0x80000000))

    def copysign64(stack):
        b = stack.pop()
        a = stack.pop()
        stack.append((a & 0x7FFFFFFFFFFFFFFF) | (b & 0x8000000000000000))

    t["f32.copysign"] = copysign32
    t["f64.copysign"] = copysign64

    # conversions
    t["i32.wrap_i64"] = un(lambda v: v, _M32)
    t["i64.extend_i32_s"] = un(lambda v: _sx(v, 32), _M64)
    t["i64.extend_i32_u"] = un(lambda v: v, _M64)

    for dst_bits in (32, 64):
        lo = -(1 << (dst_bits - 1))
        hi = (1 << (dst_bits - 1)) - 1
        uhi = (1 << dst_bits) - 1
        mask = _M32 if dst_bits == 32 else _M64
        for src, of in (("f32", _f32_of), ("f64", _f64_of)):
            t[f"i{dst_bits}.trunc_{src}_s"] = un(
                lambda v, of=of, lo=lo, hi=hi: _trunc_to_int(of(v), lo, hi), mask)
            t[f"i{dst_bits}.trunc_{src}_u"] = un(
                lambda v, of=of, uhi=uhi: _trunc_to_int(of(v), 0, uhi), mask)
            t[f"i{dst_bits}.trunc_sat_{src}_s"] = un(
                lambda v, of=of, lo=lo, hi=hi: _trunc_sat(of(v), lo, hi), mask)
            t[f"i{dst_bits}.trunc_sat_{src}_u"] = un(
                lambda v, of=of, uhi=uhi: _trunc_sat(of(v), 0, uhi), mask)

    for dst, to in (("f32", _f32_bits), ("f64", _f64_bits)):
        for src_bits in (32, 64):
            sxf = s32 if src_bits == 32 else s64
            t[f"{dst}.convert_i{src_bits}_s"] = un(
                lambda v, to=to, sxf=sxf: to(float(sxf(v))), _M64)
            t[f"{dst}.convert_i{src_bits}_u"] = un(
                lambda v, to=to: to(float(v)), _M64)

    t["f32.demote_f64"] = un(lambda v: _f32_bits(_f64_of(v)), _M32)
    t["f64.promote_f32"] = un(lambda v: _f64_bits(_f32_of(v)), _M64)
    t["i32.reinterpret_f32"] = un(lambda v: v, _M32)
    t["i64.reinterpret_f64"] = un(lambda v: v, _M64)
    t["f32.reinterpret_i32"] = un(lambda v: v, _M32)
    t["f64.reinterpret_i64"] = un(lambda v: v, _M64)


def _ne_marker(a, b):
    return a != b


def _nan_guard(a, b, result):
    if math.isnan(a) or math.isnan(b):
        return math.nan
    return result


def _fmul(a, b):
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if (math.isinf(a) and b == 0.0) or (math.isinf(b) and a == 0.0):
        return math.nan
    return a * b


def _fdiv(a, b):
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if b == 0.0:
        if a == 0.0:
            return math.nan
        sign = math.copysign(1.0, a) * math.copysign(1.0, b)
        return math.inf if sign > 0 else -math.inf
    if math.isinf(a) and math.isinf(b):
        return math.nan
    return a / b


_build_numeric_table()


# ---------------------------------------------------------- instantiation

def instantiate(module: WasmModule, scenario: HostScenario,
                recorder: RecorderRuntime | None = None,
                recorder_module: str = "wrr") -> Instance:
    """Build an instance: bind imports, initialize storage, run start.

    Recorder imports are bound to `recorder` (or a silent one); every
    other function import must be scripted by `scenario.imports`.
    """
    inst = Instance(module)

    func_import_idx = 0
    for im in module.imports:
        if im.kind != "func":
            raise LinkError(f"imported {im.kind} {im.module}.{im.name} is not supported "
                            "by the harness (module-defined state only)")
        ft = module.types[im.desc]
        if im.module == recorder_module:
            runtime = recorder if recorder is not None else RecorderRuntime(
                NullSink(), 0, 0, [], 0)
            inst.bindings[func_import_idx] = (
                lambda inst_, args, name=im.name, rt=runtime: rt.handle(name, args, inst_))
        else:
            behaviors = scenario.imports.get(im.name)
            if behaviors is None:
                raise LinkError(f"import {im.name!r} is not scripted by the scenario")
            inst.bindings[func_import_idx] = _ScenarioImport(im.name, behaviors, ft)
        func_import_idx += 1

    for lim in module.memories:
        inst.memories.append(bytearray(lim.min * PAGE_SIZE))

    for g in module.globals:
        inst.globals.append(eval_const_expr(g.init))

    if module.tables:
        inst.table = [None] * module.tables[0].limits.min

    for seg in module.elems:
        if seg.mode != "active":
            continue
        base = eval_const_expr(seg.offset)
        if base + len(seg.funcidxs) > len(inst.table):
            raise Trap(OOB_TABLE)
        for k, f in enumerate(seg.funcidxs):
            inst.table[base + k] = f

    for i, seg in enumerate(module.datas):
        if seg.mode != "active":
            continue
        base = eval_const_expr(seg.offset)
        mem = inst.memories[seg.memidx]
        if base + len(seg.data) > len(mem):
            raise Trap(OOB_MEMORY)
        mem[base:base + len(seg.data)] = seg.data

    if module.start is not None:
        try:
            inst.invoke_function(module.start, [])
        except Trap as trap:
            raise TrapDuringStart(str(trap)) from trap
    return inst


def make_recorder(module: WasmModule, sink: TraceSink,
                  boundary_funcs=frozenset(), recorder_module: str = "wrr") -> RecorderRuntime:
    """Recorder runtime for an instrumented `module`.

    `boundary_funcs` names, in the uninstrumented module's index space,
    defined functions that instrumentation wrapped as host boundary
    (used when re-recording generated replay modules).
    """
    num_recorders = sum(1 for im in module.imports
                        if im.kind == "func" and im.module == recorder_module)
    num_real = module.num_func_imports - num_recorders
    wrapped = list(range(num_real)) + sorted(boundary_funcs)
    num_defined = len(module.functions) - len(wrapped)
    return RecorderRuntime(sink, num_recorders, num_real, wrapped, num_defined)


def run_scenario(module: WasmModule, scenario: HostScenario, record: bool = True,
                 sink: TraceSink | None = None, boundary_funcs=frozenset(),
                 recorder_module: str = "wrr") -> tuple[Trace, FinalState]:
    """Execute the scenario's steps; returns the trace and the final state.

    With `record` the module is expected to be instrumented and its
    recorder imports feed `sink` (a RawCollector by default, so the
    returned trace is raw; pass an online reducer sink to reduce on the
    fly).  Deterministic: identical inputs give identical outputs.
    """
    if sink is None:
        sink = RawCollector() if record else NullSink()
    recorder = make_recorder(module, sink, boundary_funcs, recorder_module)
    inst = instantiate(module, scenario, recorder, recorder_module)
    inst.grow_listeners.append(sink.on_memory_grow)
    results_log = []
    for step in scenario.steps:
        results_log.append(tuple(inst.invoke_export(step.name, step.args)))
    final = FinalState(
        memories=tuple(bytes(mem) for mem in inst.memories),
        results_log=tuple(results_log),
        globals=tuple((module.global_type(i).valtype, g)
                      for i, g in enumerate(inst.globals)),
    )
    return sink.finish(), final
