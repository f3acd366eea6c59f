"""Replay IR: per-import contexts of host actions, built from reduced traces.

A Replay maps each imported function index to an RFunction whose i-th
Context holds the actions the host performed during the i-th invocation,
plus the values that invocation returned.  A separate entry RFunction
with a single context (the global context) drives the whole run.

translate() follows the event cases exactly: FuncEntry appends an
ExportCall to the context on top of the context stack; Call opens a new
context for the callee and makes it the splice target; CallReturn pops
and re-targets splices at the popped context; kept state observations
become one mutation action per byte/cell, appended to the splice target,
except immediately *before* a trailing ExportCall (the host mutated
state, then called in; the module observed the effect only later).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import IllFormedTrace, SplitInfeasible
from .trace import (Call, CallReturn, FuncEntry, FuncReturn, GlobalGet, Load, Store,
                    TableGet, Trace, Value)
from .wasm import WasmModule


@dataclass(frozen=True)
class ExportCall:
    idx: int  # function index (resolved to an export at codegen)
    vals: tuple[Value, ...]


@dataclass(frozen=True)
class MutateMem:
    idx: int  # memory index
    addr: int
    val: int  # one byte


@dataclass(frozen=True)
class BulkMutateMem:
    idx: int
    addr: int
    val: bytes  # non-empty; produced only by merge_memory_writes


@dataclass(frozen=True)
class MutateGlobal:
    idx: int
    val: Value


@dataclass(frozen=True)
class MutateTable:
    idx: int
    elem: int
    funcidx: int


@dataclass(frozen=True)
class AuxCall:
    """Internal call marker to an auxiliary replay function (function split)."""

    target: int  # index into the auxiliary function list


Action = ExportCall | MutateMem | BulkMutateMem | MutateGlobal | MutateTable | AuxCall
Context = list  # list[Action]


@dataclass
class RFunction:
    contexts: list[Context] = field(default_factory=list)
    results: list[tuple[Value, ...]] = field(default_factory=list)

    def check(self):
        if len(self.results) != len(self.contexts):
            raise IllFormedTrace(
                f"{len(self.contexts)} contexts but {len(self.results)} result sets")


@dataclass
class Replay:
    functions: dict[int, RFunction] = field(default_factory=dict)
    entry: RFunction = field(default_factory=lambda: RFunction([[]], [()]))

    @property
    def global_context(self) -> Context:
        return self.entry.contexts[0]


def translate(reduced: Trace, module: WasmModule) -> Replay:
    """Build the Replay IR from a reduced trace of `module`."""
    global_context: Context = []
    replay = Replay(functions={}, entry=RFunction([global_context], [()]))
    last_context: Context = global_context
    # stack entries: (context, funcidx or None for the global context, position)
    context_stack: list[tuple[Context, int | None, int]] = [(global_context, None, 0)]

    def place(action):
        # Mutations observed after a trailing ExportCall happened before it.
        if last_context and isinstance(last_context[-1], ExportCall):
            last_context.insert(len(last_context) - 1, action)
        else:
            last_context.append(action)

    for e in reduced:
        if isinstance(e, FuncEntry):
            context_stack[-1][0].append(ExportCall(e.funcidx, tuple(e.params)))
        elif isinstance(e, Call):
            fn = replay.functions.setdefault(e.funcidx, RFunction())
            new_context: Context = []
            fn.contexts.append(new_context)
            fn.results.append(None)
            context_stack.append((new_context, e.funcidx, len(fn.contexts) - 1))
            last_context = new_context
        elif isinstance(e, CallReturn):
            if len(context_stack) <= 1:
                raise IllFormedTrace("CallReturn without matching Call")
            ctx, funcidx, pos = context_stack.pop()
            if funcidx != e.funcidx:
                raise IllFormedTrace(
                    f"CallReturn for function {e.funcidx} while function "
                    f"{funcidx}'s context is open")
            replay.functions[funcidx].results[pos] = tuple(e.results)
            last_context = ctx
        elif isinstance(e, Load):
            width = e.value.kind.width
            raw = e.value.bits.to_bytes(width, "little")
            for k in range(width):
                place(MutateMem(e.memidx, e.address + k, raw[k]))
        elif isinstance(e, GlobalGet):
            place(MutateGlobal(e.globalidx, e.value))
        elif isinstance(e, TableGet):
            if e.funcref is None:
                raise IllFormedTrace("kept TableGet with host-injected funcref")
            place(MutateTable(e.tableidx, e.elemidx, e.funcref))
        elif isinstance(e, (Store, FuncReturn)):
            raise IllFormedTrace(f"{type(e).__name__} in a reduced trace")
        else:
            raise IllFormedTrace(f"unknown event {e!r}")

    if len(context_stack) != 1:
        raise IllFormedTrace(f"{len(context_stack) - 1} unreturned import calls")
    for funcidx, fn in replay.functions.items():
        fn.check()
    return replay


# ---------------------------------------------------------- optimizations

def _merge_context(ctx: Context) -> Context:
    """Collapse maximal runs of byte writes at consecutive addresses."""
    out: Context = []
    run: list[MutateMem] = []

    def flush():
        if not run:
            return
        if len(run) == 1:
            out.append(run[0])
        else:
            out.append(BulkMutateMem(run[0].idx, run[0].addr,
                                     bytes(a.val for a in run)))
        run.clear()

    for action in ctx:
        if isinstance(action, MutateMem):
            if run and (action.idx != run[-1].idx or action.addr != run[-1].addr + 1):
                flush()
            run.append(action)
        else:
            flush()
            out.append(action)
    flush()
    return out


def merge_memory_writes(r: Replay) -> Replay:
    """Replace runs of >= 2 consecutive-address MutateMem with BulkMutateMem."""
    out = Replay(functions={}, entry=RFunction([_merge_context(r.global_context)], [()]))
    for idx, fn in r.functions.items():
        out.functions[idx] = RFunction([_merge_context(c) for c in fn.contexts],
                                       list(fn.results))
    return out


DEFAULT_SPLIT_THRESHOLD = 10_000
DEFAULT_MAX_AUX = 100_000


def split_functions(r: Replay, threshold: int = DEFAULT_SPLIT_THRESHOLD,
                    max_aux: int = DEFAULT_MAX_AUX) -> tuple[Replay, list[Context]]:
    """Cap every context at `threshold` actions by outlining the tail.

    An oversized context keeps its first threshold-1 actions plus a call
    marker to an auxiliary function carrying the next chunk; auxiliaries
    chain the same way, so every function stays at or under the
    threshold while the action order is preserved.  Returns the rewritten
    Replay and the auxiliary contexts (indexed by AuxCall.target).
    """
    if threshold < 2:
        raise ValueError("split threshold must be >= 2")
    aux: list[Context] = []

    def split_context(ctx: Context) -> Context:
        if len(ctx) <= threshold:
            return list(ctx)
        if len(ctx) > threshold * max_aux:
            raise SplitInfeasible(
                f"context with {len(ctx)} actions exceeds {threshold} x {max_aux}")
        head, rest = ctx[:threshold - 1], ctx[threshold - 1:]
        head.append(AuxCall(_outline(rest)))
        return head

    def _outline(rest: Context) -> int:
        slot = len(aux)
        aux.append([])  # reserve position so chained targets stay ordered
        if len(rest) <= threshold:
            aux[slot] = list(rest)
        else:
            chunk = rest[:threshold - 1]
            chunk.append(AuxCall(_outline(rest[threshold - 1:])))
            aux[slot] = chunk
        return slot

    out = Replay(functions={}, entry=RFunction([split_context(r.global_context)], [()]))
    for idx, fn in r.functions.items():
        out.functions[idx] = RFunction([split_context(c) for c in fn.contexts],
                                       list(fn.results))
    return out, aux


# ----------------------------------------------------------------- stats

# Rough per-action encoded-size model for reporting (wasm bytes).
_EST = {"ExportCall": 6, "MutateMem": 10, "MutateGlobal": 8, "MutateTable": 9,
        "AuxCall": 3}


def _context_iter(r: Replay, aux=()):
    yield from r.entry.contexts
    for fn in r.functions.values():
        yield from fn.contexts
    yield from aux


def ir_stats(r: Replay, aux=()) -> dict:
    """Counts of functions, contexts, and actions, plus size estimates."""
    actions: dict[str, int] = {}
    max_len = 0
    est = 0
    n_contexts = 0
    for ctx in _context_iter(r, aux):
        n_contexts += 1
        max_len = max(max_len, len(ctx))
        for a in ctx:
            name = type(a).__name__
            actions[name] = actions.get(name, 0) + 1
            if isinstance(a, BulkMutateMem):
                est += 12 + len(a.val)
            elif isinstance(a, ExportCall):
                est += 4 + 3 * len(a.vals)
            else:
                est += _EST[name]
    return {
        "functions": len(r.functions),
        "aux_functions": len(aux),
        "contexts": n_contexts,
        "actions": dict(sorted(actions.items())),
        "total_actions": sum(actions.values()),
        "max_context_len": max_len,
        "estimated_body_bytes": est,
    }


# ------------------------------------------------------------------ dump

def _fmt_action(a: Action) -> str:
    if isinstance(a, ExportCall):
        vals = ", ".join(repr(v) for v in a.vals)
        return f"ExportCall {{idx: {a.idx}, vals: [{vals}]}}"
    if isinstance(a, MutateMem):
        return f"MutateMem {{idx: {a.idx}, addr: {a.addr}, val: \\{a.val:02x}}}"
    if isinstance(a, BulkMutateMem):
        blob = "".join(f"\\{b:02x}" for b in a.val)
        return f'BulkMutateMem {{idx: {a.idx}, addr: {a.addr}, val: "{blob}"}}'
    if isinstance(a, MutateGlobal):
        return f"MutateGlobal {{idx: {a.idx}, val: {a.val!r}}}"
    if isinstance(a, MutateTable):
        return f"MutateTable {{idx: {a.idx}, elem: {a.elem}, funcidx: {a.funcidx}}}"
    return f"AuxCall {{target: {a.target}}}"


def dump_replay(r: Replay, aux=()) -> str:
    """Readable one-action-per-line dump of the IR."""
    lines = ["entry context:"]
    lines += [f"  {_fmt_action(a)}" for a in r.global_context]
    for idx in sorted(r.functions):
        fn = r.functions[idx]
        for i, ctx in enumerate(fn.contexts):
            results = ", ".join(repr(v) for v in fn.results[i])
            lines.append(f"func {idx} context {i} -> [{results}]:")
            lines += [f"  {_fmt_action(a)}" for a in ctx]
    for i, ctx in enumerate(aux):
        lines.append(f"aux {i}:")
        lines += [f"  {_fmt_action(a)}" for a in ctx]
    return "".join(line + "\n" for line in lines)
