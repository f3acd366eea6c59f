"""Trace events and their binary / textual codecs.

A trace is a linear sequence of events describing the interaction between
a wasm module and its host: function entries/returns on the export side,
calls/returns on the import side, and observations of mutable state
(memory loads/stores, global and table reads).

Binary format (`.wrrt`): 4-byte magic ``WRR3``, u32 version, then one
record per event.  Every record starts with a tag byte; all integers are
little-endian fixed width, sequences are prefixed with a u32 count, and
values are a kind byte followed by a payload of the kind's width.

Textual format (`.wrrt.txt`): one event per line, e.g.
``Load { memidx: I32(0), address: I32(1000), value: I16(300) }``.
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass

from .errors import MalformedTrace

MAGIC = b"WRR3"
VERSION = 1


class ValueKind(enum.Enum):
    """Width/interpretation tag of a traced value.

    I8 and I16 occur only as Load/Store values (sub-word accesses), never
    as function parameters or results.
    """

    I32 = 0x00
    I64 = 0x01
    F32 = 0x02
    F64 = 0x03
    I8 = 0x04
    I16 = 0x05

    @property
    def width(self) -> int:
        """Payload width in bytes."""
        return _WIDTHS[self]

    @property
    def is_float(self) -> bool:
        return self in (ValueKind.F32, ValueKind.F64)


_WIDTHS = {
    ValueKind.I32: 4,
    ValueKind.I64: 8,
    ValueKind.F32: 4,
    ValueKind.F64: 8,
    ValueKind.I8: 1,
    ValueKind.I16: 2,
}

_KIND_BY_CODE = {k.value: k for k in ValueKind}
_KIND_BY_NAME = {k.name: k for k in ValueKind}


@dataclass(frozen=True)
class Value:
    """A bit pattern of a given kind.

    `bits` is the raw payload, zero-extended to a nonnegative int; floats
    carry their IEEE-754 bit pattern so NaN payloads survive bit-exactly.
    Equality is bitwise.
    """

    kind: ValueKind
    bits: int

    def __post_init__(self):
        lim = 1 << (8 * self.kind.width)
        if not 0 <= self.bits < lim:
            raise ValueError(f"{self.kind.name} payload out of range: {self.bits:#x}")

    def __repr__(self):
        if self.kind.is_float:
            return f"{self.kind.name}(0x{self.bits:0{self.kind.width * 2}x})"
        return f"{self.kind.name}({self.bits})"

    @property
    def float(self) -> float:
        """Numeric value of an F32/F64 bit pattern."""
        if self.kind is ValueKind.F32:
            return struct.unpack("<f", self.bits.to_bytes(4, "little"))[0]
        if self.kind is ValueKind.F64:
            return struct.unpack("<d", self.bits.to_bytes(8, "little"))[0]
        raise TypeError(f"{self.kind.name} is not a float kind")


def i32(v: int) -> Value:
    return Value(ValueKind.I32, v & 0xFFFFFFFF)


def i64(v: int) -> Value:
    return Value(ValueKind.I64, v & 0xFFFFFFFFFFFFFFFF)


def i8(v: int) -> Value:
    return Value(ValueKind.I8, v & 0xFF)


def i16(v: int) -> Value:
    return Value(ValueKind.I16, v & 0xFFFF)


def f32(x: float) -> Value:
    return Value(ValueKind.F32, struct.unpack("<I", struct.pack("<f", x))[0])


def f64(x: float) -> Value:
    return Value(ValueKind.F64, struct.unpack("<Q", struct.pack("<d", x))[0])


@dataclass(frozen=True)
class FuncEntry:
    funcidx: int
    params: tuple[Value, ...]


@dataclass(frozen=True)
class FuncReturn:
    funcidx: int
    values: tuple[Value, ...]


@dataclass(frozen=True)
class Call:
    funcidx: int


@dataclass(frozen=True)
class CallReturn:
    funcidx: int
    results: tuple[Value, ...]


@dataclass(frozen=True)
class Load:
    memidx: int
    address: int
    value: Value


@dataclass(frozen=True)
class Store:
    memidx: int
    address: int
    value: Value


@dataclass(frozen=True)
class GlobalGet:
    globalidx: int
    value: Value


@dataclass(frozen=True)
class TableGet:
    tableidx: int
    elemidx: int
    funcref: int | None  # function index, or None for a host-injected ref


TraceEvent = FuncEntry | FuncReturn | Call | CallReturn | Load | Store | GlobalGet | TableGet

_TAGS = {FuncEntry: 0x00, FuncReturn: 0x01, Call: 0x02, CallReturn: 0x03,
         Load: 0x04, Store: 0x05, GlobalGet: 0x06, TableGet: 0x07}
_EVENT_BY_TAG = {tag: cls for cls, tag in _TAGS.items()}


@dataclass(frozen=True)
class Trace:
    events: tuple[TraceEvent, ...]

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, i):
        return self.events[i]


def trace(events) -> Trace:
    return Trace(tuple(events))


# ---------------------------------------------------------------- binary

def _enc_u32(v: int) -> bytes:
    return struct.pack("<I", v)


def _enc_value(v: Value) -> bytes:
    return bytes([v.kind.value]) + v.bits.to_bytes(v.kind.width, "little")


def _enc_values(vs) -> bytes:
    return _enc_u32(len(vs)) + b"".join(_enc_value(v) for v in vs)


def encode_binary(t: Trace) -> bytes:
    """Encode a trace to its deterministic binary form."""
    out = [MAGIC, _enc_u32(VERSION)]
    for e in t.events:
        tag = _TAGS[type(e)]
        out.append(bytes([tag]))
        if isinstance(e, FuncEntry):
            out.append(_enc_u32(e.funcidx) + _enc_values(e.params))
        elif isinstance(e, FuncReturn):
            out.append(_enc_u32(e.funcidx) + _enc_values(e.values))
        elif isinstance(e, Call):
            out.append(_enc_u32(e.funcidx))
        elif isinstance(e, CallReturn):
            out.append(_enc_u32(e.funcidx) + _enc_values(e.results))
        elif isinstance(e, (Load, Store)):
            out.append(_enc_u32(e.memidx) + _enc_u32(e.address) + _enc_value(e.value))
        elif isinstance(e, GlobalGet):
            out.append(_enc_u32(e.globalidx) + _enc_value(e.value))
        else:  # TableGet
            out.append(_enc_u32(e.tableidx) + _enc_u32(e.elemidx))
            if e.funcref is None:
                out.append(b"\x00")
            else:
                out.append(b"\x01" + _enc_u32(e.funcref))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedTrace("truncated record", self.pos)
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def value(self) -> Value:
        at = self.pos
        code = self.u8()
        kind = _KIND_BY_CODE.get(code)
        if kind is None:
            raise MalformedTrace(f"unknown value kind byte 0x{code:02x}", at)
        return Value(kind, int.from_bytes(self.take(kind.width), "little"))

    def values(self) -> tuple[Value, ...]:
        return tuple(self.value() for _ in range(self.u32()))


def decode_binary(data: bytes) -> Trace:
    """Inverse of encode_binary; raises MalformedTrace with a byte offset."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise MalformedTrace("bad magic", 0)
    version = r.u32()
    if version != VERSION:
        raise MalformedTrace(f"unsupported trace version {version}", 4)
    events = []
    while r.pos < len(data):
        at = r.pos
        tag = r.u8()
        cls = _EVENT_BY_TAG.get(tag)
        if cls is None:
            raise MalformedTrace(f"unknown event tag byte 0x{tag:02x}", at)
        if cls is FuncEntry:
            events.append(FuncEntry(r.u32(), r.values()))
        elif cls is FuncReturn:
            events.append(FuncReturn(r.u32(), r.values()))
        elif cls is Call:
            events.append(Call(r.u32()))
        elif cls is CallReturn:
            events.append(CallReturn(r.u32(), r.values()))
        elif cls in (Load, Store):
            events.append(cls(r.u32(), r.u32(), r.value()))
        elif cls is GlobalGet:
            events.append(GlobalGet(r.u32(), r.value()))
        else:
            tableidx, elemidx = r.u32(), r.u32()
            present = r.u8()
            if present not in (0, 1):
                raise MalformedTrace(f"bad funcref presence byte 0x{present:02x}", r.pos - 1)
            events.append(TableGet(tableidx, elemidx, r.u32() if present else None))
    return Trace(tuple(events))


# ----------------------------------------------------------------- text

def _fmt_value(v: Value) -> str:
    return repr(v)


def _fmt_values(vs) -> str:
    return "[" + ", ".join(_fmt_value(v) for v in vs) + "]"


def encode_text(t: Trace) -> str:
    """One `EventName { field: Kind(value), ... }` line per event."""
    lines = []
    for e in t.events:
        if isinstance(e, FuncEntry):
            lines.append(f"FuncEntry {{ funcidx: I32({e.funcidx}), params: {_fmt_values(e.params)} }}")
        elif isinstance(e, FuncReturn):
            lines.append(f"FuncReturn {{ funcidx: I32({e.funcidx}), values: {_fmt_values(e.values)} }}")
        elif isinstance(e, Call):
            lines.append(f"Call {{ funcidx: I32({e.funcidx}) }}")
        elif isinstance(e, CallReturn):
            lines.append(f"CallReturn {{ funcidx: I32({e.funcidx}), results: {_fmt_values(e.results)} }}")
        elif isinstance(e, Load):
            lines.append(f"Load {{ memidx: I32({e.memidx}), address: I32({e.address}), "
                         f"value: {_fmt_value(e.value)} }}")
        elif isinstance(e, Store):
            lines.append(f"Store {{ memidx: I32({e.memidx}), address: I32({e.address}), "
                         f"value: {_fmt_value(e.value)} }}")
        elif isinstance(e, GlobalGet):
            lines.append(f"GlobalGet {{ globalidx: I32({e.globalidx}), value: {_fmt_value(e.value)} }}")
        else:
            ref = "null" if e.funcref is None else f"I32({e.funcref})"
            lines.append(f"TableGet {{ tableidx: I32({e.tableidx}), elemidx: I32({e.elemidx}), "
                         f"funcref: {ref} }}")
    return "".join(line + "\n" for line in lines)


_VALUE_RE = re.compile(r"(I8|I16|I32|I64|F32|F64)\((0x[0-9a-fA-F]+|\d+)\)")
_LINE_RE = re.compile(r"^(\w+)\s*\{(.*)\}\s*$")


def _parse_value(text: str, lineno: int) -> Value:
    m = _VALUE_RE.fullmatch(text.strip())
    if not m:
        raise MalformedTrace(f"bad value literal {text.strip()!r}", lineno)
    kind = _KIND_BY_NAME[m.group(1)]
    bits = int(m.group(2), 0)
    if bits >= 1 << (8 * kind.width):
        raise MalformedTrace(f"value out of range for {kind.name}: {text.strip()!r}", lineno)
    return Value(kind, bits)


def _split_fields(body: str, lineno: int) -> dict[str, str]:
    fields = {}
    depth = 0
    part = []
    parts = []
    for ch in body:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(part))
            part = []
        else:
            part.append(ch)
    if part and "".join(part).strip():
        parts.append("".join(part))
    for p in parts:
        if ":" not in p:
            raise MalformedTrace(f"bad field {p.strip()!r}", lineno)
        name, _, val = p.partition(":")
        fields[name.strip()] = val.strip()
    return fields


def _parse_scalar(fields, name, lineno) -> int:
    try:
        v = _parse_value(fields[name], lineno)
    except KeyError:
        raise MalformedTrace(f"missing field {name!r}", lineno) from None
    return v.bits


def _parse_values(fields, name, lineno) -> tuple[Value, ...]:
    try:
        text = fields[name]
    except KeyError:
        raise MalformedTrace(f"missing field {name!r}", lineno) from None
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise MalformedTrace(f"field {name!r} is not a list", lineno)
    inner = text[1:-1].strip()
    if not inner:
        return ()
    return tuple(_parse_value(p, lineno) for p in inner.split(","))


def decode_text(text: str) -> Trace:
    """Inverse of encode_text; raises MalformedTrace with a line number."""
    events = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise MalformedTrace(f"unparseable event line {line!r}", lineno)
        name, body = m.group(1), m.group(2)
        fields = _split_fields(body, lineno)
        if name == "FuncEntry":
            events.append(FuncEntry(_parse_scalar(fields, "funcidx", lineno),
                                    _parse_values(fields, "params", lineno)))
        elif name == "FuncReturn":
            events.append(FuncReturn(_parse_scalar(fields, "funcidx", lineno),
                                     _parse_values(fields, "values", lineno)))
        elif name == "Call":
            events.append(Call(_parse_scalar(fields, "funcidx", lineno)))
        elif name == "CallReturn":
            events.append(CallReturn(_parse_scalar(fields, "funcidx", lineno),
                                     _parse_values(fields, "results", lineno)))
        elif name in ("Load", "Store"):
            cls = Load if name == "Load" else Store
            events.append(cls(_parse_scalar(fields, "memidx", lineno),
                              _parse_scalar(fields, "address", lineno),
                              _parse_value(fields.get("value", ""), lineno)))
        elif name == "GlobalGet":
            events.append(GlobalGet(_parse_scalar(fields, "globalidx", lineno),
                                    _parse_value(fields.get("value", ""), lineno)))
        elif name == "TableGet":
            ref_text = fields.get("funcref", "").strip()
            if ref_text == "null":
                ref = None
            else:
                ref = _parse_value(ref_text, lineno).bits
            events.append(TableGet(_parse_scalar(fields, "tableidx", lineno),
                                   _parse_scalar(fields, "elemidx", lineno), ref))
        else:
            raise MalformedTrace(f"unknown event name {name!r}", lineno)
    return Trace(tuple(events))
