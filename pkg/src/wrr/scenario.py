"""Scripted host behavior: the deterministic stand-in for live user input.

A scenario is a sequence of export invocations plus, per imported
function, a list of behaviors indexed by dynamic invocation count.  Each
behavior runs its host actions in order (memory writes, global writes,
re-entrant export calls) and then returns its scripted results.

JSON schema:

    {"steps": [{"invoke": {"name": "run", "args": [VALUE, ...]}}],
     "imports": {"<name>": [{"pre": [ACTION, ...], "results": [VALUE, ...]}]}}

    ACTION = {"writeMem": {"mem": 0, "addr": 1003, "bytes_hex": "bb"}}
           | {"writeGlobal": {"idx": 0, "value": VALUE}}
           | {"callExport": {"name": "tick", "args": [VALUE, ...]}}

Values are `{"kind": "i32", "value": ...}` with i64 carried as a decimal
string and floats as hex bit-pattern strings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import WrrError
from .trace import Value, ValueKind


@dataclass(frozen=True)
class InvokeExport:
    name: str
    args: tuple[Value, ...]


@dataclass(frozen=True)
class WriteMemory:
    memidx: int
    addr: int
    data: bytes


@dataclass(frozen=True)
class WriteGlobal:
    globalidx: int
    value: Value


@dataclass(frozen=True)
class CallExport:
    name: str
    args: tuple[Value, ...]


HostAction = WriteMemory | WriteGlobal | CallExport


@dataclass(frozen=True)
class ImportBehavior:
    pre_actions: tuple[HostAction, ...] = ()
    results: tuple[Value, ...] = ()


@dataclass(frozen=True)
class HostScenario:
    steps: tuple[InvokeExport, ...] = ()
    imports: dict[str, tuple[ImportBehavior, ...]] = field(default_factory=dict)


EMPTY_SCENARIO = HostScenario()


def value_to_json(v: Value) -> dict:
    if v.kind is ValueKind.I64:
        return {"kind": "i64", "value": str(v.bits)}
    if v.kind is ValueKind.F32:
        return {"kind": "f32", "value": f"0x{v.bits:08x}"}
    if v.kind is ValueKind.F64:
        return {"kind": "f64", "value": f"0x{v.bits:016x}"}
    return {"kind": v.kind.name.lower(), "value": v.bits}


def value_from_json(obj) -> Value:
    try:
        kind = ValueKind[obj["kind"].upper()]
        raw = obj["value"]
    except (KeyError, TypeError):
        raise WrrError(f"bad value object: {obj!r}") from None
    bits = int(raw, 0) if isinstance(raw, str) else int(raw)
    return Value(kind, bits & ((1 << (8 * kind.width)) - 1))


def _action_to_json(a: HostAction) -> dict:
    if isinstance(a, WriteMemory):
        return {"writeMem": {"mem": a.memidx, "addr": a.addr, "bytes_hex": a.data.hex()}}
    if isinstance(a, WriteGlobal):
        return {"writeGlobal": {"idx": a.globalidx, "value": value_to_json(a.value)}}
    return {"callExport": {"name": a.name, "args": [value_to_json(v) for v in a.args]}}


def _action_from_json(obj) -> HostAction:
    if "writeMem" in obj:
        w = obj["writeMem"]
        return WriteMemory(w.get("mem", 0), w["addr"], bytes.fromhex(w["bytes_hex"]))
    if "writeGlobal" in obj:
        w = obj["writeGlobal"]
        return WriteGlobal(w["idx"], value_from_json(w["value"]))
    if "callExport" in obj:
        w = obj["callExport"]
        return CallExport(w["name"], tuple(value_from_json(v) for v in w.get("args", [])))
    raise WrrError(f"unknown host action: {obj!r}")


def scenario_to_json(s: HostScenario) -> str:
    doc = {
        "steps": [{"invoke": {"name": st.name,
                              "args": [value_to_json(v) for v in st.args]}}
                  for st in s.steps],
        "imports": {
            name: [{"pre": [_action_to_json(a) for a in b.pre_actions],
                    "results": [value_to_json(v) for v in b.results]}
                   for b in behaviors]
            for name, behaviors in s.imports.items()
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def scenario_from_json(text: str) -> HostScenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WrrError(f"scenario is not valid JSON: {exc}") from None
    steps = []
    for st in doc.get("steps", []):
        inv = st.get("invoke")
        if inv is None:
            raise WrrError(f"unknown scenario step: {st!r}")
        steps.append(InvokeExport(inv["name"],
                                  tuple(value_from_json(v) for v in inv.get("args", []))))
    imports = {}
    for name, behaviors in doc.get("imports", {}).items():
        imports[name] = tuple(
            ImportBehavior(tuple(_action_from_json(a) for a in b.get("pre", [])),
                           tuple(value_from_json(v) for v in b.get("results", [])))
            for b in behaviors)
    return HostScenario(tuple(steps), imports)


def load_scenario(path) -> HostScenario:
    with open(path, "r", encoding="utf-8") as f:
        return scenario_from_json(f.read())
