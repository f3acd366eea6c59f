"""Trace reduction: keep only events that witness host nondeterminism.

Two cooperating filters run in a single pass:

* shadow state - a mirror of linear memory, globals, and the table,
  initialized like the module's own storage and updated by Store events
  (write-through, then discarded).  A Load/GlobalGet/TableGet is kept only
  when the observed value differs from the shadow, i.e. the host must
  have written it; the shadow then adopts the observed value.

* call-kind stack - classifies function events by their calling context.
  The stack starts with a single EXT entry (the outermost host context).
  FuncEntry: keep iff the top is EXT, then push INT.  Call: keep and push
  EXT iff the callee is a host-boundary function, discard otherwise.
  FuncReturn: pop, discard.  CallReturn: pop and keep iff host-boundary,
  discard otherwise.

The same machine runs offline over a complete trace or online as a
TraceSink inside the recorder, producing identical output either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import AddressOutOfShadow, IllFormedTrace, ReplayabilityError
from .interp import TraceSink, eval_const_expr
from .trace import (Call, CallReturn, FuncEntry, FuncReturn, GlobalGet, Load, Store,
                    TableGet, Trace, TraceEvent)
from .wasm import PAGE_SIZE, WasmModule

EXT = "EXT"
INT = "INT"


class ShadowState:
    """Mirror of the module's mutable state, as the module last saw it."""

    def __init__(self, module: WasmModule, strict_bounds: bool = False):
        # strict_bounds: raise AddressOutOfShadow on accesses beyond the
        # tracked length instead of assuming zero-filled growth.  Only the
        # online reducer can be strict, because only the harness reports
        # memory growth; offline traces carry no growth information and
        # freshly grown pages are zero-filled anyway.
        self.strict_bounds = strict_bounds
        self.memories: list[bytearray] = [bytearray(lim.min * PAGE_SIZE)
                                          for lim in module.memories]
        for seg in module.datas:
            if seg.mode == "active":
                base = eval_const_expr(seg.offset)
                self.memories[seg.memidx][base:base + len(seg.data)] = seg.data
        self.globals: list = [eval_const_expr(g.init) for g in module.globals]
        self.table: list = [None] * (module.tables[0].limits.min if module.tables else 0)
        for seg in module.elems:
            if seg.mode == "active":
                base = eval_const_expr(seg.offset)
                for k, f in enumerate(seg.funcidxs):
                    self.table[base + k] = f

    def note_memory_size(self, memidx: int, byte_len: int) -> None:
        mem = self.memories[memidx]
        if byte_len > len(mem):
            mem.extend(bytes(byte_len - len(mem)))

    def _mem_range(self, memidx: int, addr: int, width: int) -> bytearray:
        mem = self.memories[memidx]
        if addr + width > len(mem):
            if self.strict_bounds:
                raise AddressOutOfShadow(
                    f"memory {memidx} access at {addr}+{width} beyond shadow "
                    f"length {len(mem)} (missed growth?)")
            self.note_memory_size(memidx, addr + width)
        return mem

    def step(self, e: TraceEvent) -> bool:
        """Process a state event; returns whether to keep it."""
        if isinstance(e, Store):
            width = e.value.kind.width
            mem = self._mem_range(e.memidx, e.address, width)
            mem[e.address:e.address + width] = e.value.bits.to_bytes(width, "little")
            return False
        if isinstance(e, Load):
            width = e.value.kind.width
            mem = self._mem_range(e.memidx, e.address, width)
            observed = e.value.bits.to_bytes(width, "little")
            if bytes(mem[e.address:e.address + width]) == observed:
                return False
            mem[e.address:e.address + width] = observed
            return True
        if isinstance(e, GlobalGet):
            if self.globals[e.globalidx] == e.value.bits:
                return False
            self.globals[e.globalidx] = e.value.bits
            return True
        if isinstance(e, TableGet):
            if e.elemidx >= len(self.table):
                if self.strict_bounds:
                    raise AddressOutOfShadow(f"table element {e.elemidx} beyond shadow")
                self.table.extend([None] * (e.elemidx + 1 - len(self.table)))
            if self.table[e.elemidx] == e.funcref:
                return False
            if e.funcref is None:
                raise ReplayabilityError(
                    f"table element {e.elemidx} holds a host-injected funcref; "
                    "replay cannot reconstruct it")
            self.table[e.elemidx] = e.funcref
            return True
        raise IllFormedTrace(f"not a state event: {e!r}")


class CallKindStack:
    """INT/EXT classification stack; the bottom entry is always EXT."""

    def __init__(self):
        self.stack = [EXT]

    def _pop(self):
        if len(self.stack) <= 1:
            raise IllFormedTrace("call kind stack underflow")
        return self.stack.pop()

    def step(self, e: TraceEvent, boundary: frozenset[int]) -> bool:
        """Process a function event; returns whether to keep it."""
        if isinstance(e, FuncEntry):
            keep = self.stack[-1] == EXT
            self.stack.append(INT)
            return keep
        if isinstance(e, FuncReturn):
            self._pop()
            return False
        if isinstance(e, Call):
            if e.funcidx in boundary:
                self.stack.append(EXT)
                return True
            return False
        if isinstance(e, CallReturn):
            if e.funcidx in boundary:
                self._pop()
                return True
            return False
        raise IllFormedTrace(f"not a function event: {e!r}")


def shadow_step(state: ShadowState, e: TraceEvent) -> bool:
    return state.step(e)


def callstack_step(stack: CallKindStack, e: TraceEvent, imported) -> bool:
    return stack.step(e, frozenset(imported))


@dataclass
class ReduceStats:
    """Kept/discarded counts per event type."""

    kept: dict[str, int] = field(default_factory=dict)
    discarded: dict[str, int] = field(default_factory=dict)

    def count(self, e: TraceEvent, keep: bool):
        bucket = self.kept if keep else self.discarded
        name = type(e).__name__
        bucket[name] = bucket.get(name, 0) + 1

    @property
    def total_kept(self) -> int:
        return sum(self.kept.values())

    @property
    def total(self) -> int:
        return self.total_kept + sum(self.discarded.values())

    def as_dict(self) -> dict:
        return {"total": self.total, "total_kept": self.total_kept,
                "kept": dict(sorted(self.kept.items())),
                "discarded": dict(sorted(self.discarded.items()))}


class OnlineReducer(TraceSink):
    """Streaming reducer: a recorder sink that keeps only divergent events.

    Feeding raw events one at a time yields exactly the offline reduce()
    output.  `module` is the uninstrumented module whose storage the
    shadow mirrors; `boundary_funcs` extends the import set when reducing
    a replay module's re-recording.
    """

    def __init__(self, module: WasmModule, boundary_funcs=frozenset(),
                 stats: ReduceStats | None = None, strict_bounds: bool = True):
        self.shadow = ShadowState(module, strict_bounds=strict_bounds)
        self.callstack = CallKindStack()
        self.boundary = frozenset(range(module.num_func_imports)) | frozenset(boundary_funcs)
        self.num_funcs = module.num_funcs
        self.stats = stats
        self.kept: list[TraceEvent] = []

    def emit(self, e: TraceEvent) -> None:
        if isinstance(e, (FuncEntry, FuncReturn, Call, CallReturn)):
            if e.funcidx >= self.num_funcs:
                raise IllFormedTrace(f"{type(e).__name__} names unknown function "
                                     f"{e.funcidx}")
            keep = self.callstack.step(e, self.boundary)
        else:
            keep = self.shadow.step(e)
        if self.stats is not None:
            self.stats.count(e, keep)
        if keep:
            self.kept.append(e)

    def on_memory_grow(self, memidx: int, new_byte_len: int) -> None:
        self.shadow.note_memory_size(memidx, new_byte_len)

    def finish(self) -> Trace:
        return Trace(tuple(self.kept))


def make_online_reducer(module: WasmModule, boundary_funcs=frozenset(),
                        stats: ReduceStats | None = None) -> OnlineReducer:
    return OnlineReducer(module, boundary_funcs, stats)


def reduce_trace(raw: Trace, module: WasmModule, boundary_funcs=frozenset(),
                 stats: ReduceStats | None = None) -> Trace:
    """Offline reduction of a complete raw trace of `module`."""
    r = OnlineReducer(module, boundary_funcs, stats, strict_bounds=False)
    for e in raw:
        r.emit(e)
    return r.finish()


reduce = reduce_trace
