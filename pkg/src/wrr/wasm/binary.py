"""Wasm binary format: parse_module and encode_module.

Encoding uses canonical (shortest form) LEB128 so identical modules give
identical bytes.  Custom sections are preserved verbatim and emitted after
all known sections.
"""

from __future__ import annotations

import struct

from ..errors import LimitExceeded, MalformedModule, UnsupportedFeature
from .model import (DEFAULT_BODY_LIMIT, FC_BY_CODE, FC_OPCODES, OP_BY_CODE, OPCODES,
                    UNSUPPORTED_PREFIXES, VALTYPE_BYTES, VALTYPE_CODES, CustomSection,
                    DataSegment, ElemSegment, Export, FuncType, FunctionDef, GlobalDef,
                    GlobalType, Import, Limits, TableType, WasmModule)

WASM_MAGIC = b"\x00asm"
WASM_VERSION = b"\x01\x00\x00\x00"

_SECTION_IDS = {"custom": 0, "type": 1, "import": 2, "function": 3, "table": 4,
                "memory": 5, "global": 6, "export": 7, "start": 8, "elem": 9,
                "code": 10, "data": 11, "datacount": 12}
_EXPORT_KINDS = {0: "func", 1: "table", 2: "memory", 3: "global"}
_EXPORT_KIND_BYTES = {v: k for k, v in _EXPORT_KINDS.items()}


# ----------------------------------------------------------------- LEB128

def enc_u(v: int) -> bytes:
    if v < 0:
        raise ValueError("negative unsigned LEB")
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def enc_s(v: int) -> bytes:
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if (v == 0 and not b & 0x40) or (v == -1 and b & 0x40):
            out.append(b)
            return bytes(out)
        out.append(b | 0x80)


class Reader:
    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base  # offset of data[0] in the whole file, for messages

    @property
    def offset(self) -> int:
        return self.base + self.pos

    def eof(self) -> bool:
        return self.pos >= len(self.data)

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedModule("unexpected end of section", self.offset)
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u8(self) -> int:
        return self.take(1)[0]

    def u(self, bits: int = 32) -> int:
        result = shift = 0
        while True:
            b = self.u8()
            result |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                break
            if shift >= bits + 7:
                raise MalformedModule("overlong LEB", self.offset)
        if result >= 1 << bits:
            raise MalformedModule(f"u{bits} out of range", self.offset)
        return result

    def s(self, bits: int = 32) -> int:
        result = shift = 0
        while True:
            b = self.u8()
            result |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                break
            if shift >= bits + 7:
                raise MalformedModule("overlong LEB", self.offset)
        if b & 0x40:
            result |= -1 << shift
        if not -(1 << (bits - 1)) <= result < 1 << (bits - 1):
            raise MalformedModule(f"s{bits} out of range", self.offset)
        return result

    def name(self) -> str:
        n = self.u()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedModule("invalid UTF-8 name", self.offset) from None

    def valtype(self) -> str:
        at = self.offset
        b = self.u8()
        t = VALTYPE_CODES.get(b)
        if t is None:
            raise MalformedModule(f"unknown value type 0x{b:02x}", at)
        return t

    def limits(self) -> Limits:
        at = self.offset
        flag = self.u8()
        if flag == 0:
            return Limits(self.u())
        if flag == 1:
            return Limits(self.u(), self.u())
        if flag in (2, 3):
            raise UnsupportedFeature("threads", "shared limits")
        if flag in (4, 5):
            raise UnsupportedFeature("memory64", "64-bit limits")
        raise MalformedModule(f"bad limits flag 0x{flag:02x}", at)


# -------------------------------------------------------------- parsing

def _parse_functype(r: Reader) -> FuncType:
    at = r.offset
    if r.u8() != 0x60:
        raise MalformedModule("expected functype 0x60", at)
    params = tuple(r.valtype() for _ in range(r.u()))
    results = tuple(r.valtype() for _ in range(r.u()))
    return FuncType(params, results)


def _parse_blocktype(r: Reader):
    # Peek: single-byte for empty/valtype, otherwise a nonnegative s33 typeidx.
    b = r.data[r.pos] if r.pos < len(r.data) else None
    if b == 0x40:
        r.u8()
        return None
    if b in VALTYPE_CODES:
        r.u8()
        return VALTYPE_CODES[b]
    idx = r.s(33)
    if idx < 0:
        raise MalformedModule("bad block type", r.offset)
    return idx


def _parse_instr(r: Reader):
    at = r.offset
    op = r.u8()
    if op in UNSUPPORTED_PREFIXES:
        raise UnsupportedFeature(UNSUPPORTED_PREFIXES[op], f"opcode prefix 0x{op:02x}")
    if op == 0xFC:
        sub = r.u()
        if sub not in FC_BY_CODE:
            raise UnsupportedFeature("bulk-table-ops" if 12 <= sub <= 17 else f"0xfc:{sub}",
                                     f"subopcode {sub}")
        name, imm = FC_BY_CODE[sub]
        if imm == "datamem":
            return (name, r.u(), r.u8())
        if imm == "data":
            return (name, r.u())
        if imm == "memmem":
            return (name, r.u8(), r.u8())
        if imm == "mem":
            return (name, r.u8())
        return (name,)
    if op not in OP_BY_CODE:
        raise MalformedModule(f"unknown opcode 0x{op:02x}", at)
    name, imm = OP_BY_CODE[op]
    if imm == "":
        return (name,)
    if imm == "block":
        return (name, _parse_blocktype(r))
    if imm in ("label", "func", "local", "global", "table", "data"):
        return (name, r.u())
    if imm == "brtable":
        targets = tuple(r.u() for _ in range(r.u()))
        return (name, targets, r.u())
    if imm == "callind":
        typeidx = r.u()
        tableidx = r.u8()
        return (name, typeidx, tableidx)
    if imm == "memarg":
        return (name, r.u(), r.u())
    if imm == "mem":
        return (name, r.u8())
    if imm == "i32":
        return (name, r.s(32))
    if imm == "i64":
        return (name, r.s(64))
    if imm == "f32":
        return (name, struct.unpack("<I", r.take(4))[0])
    if imm == "f64":
        return (name, struct.unpack("<Q", r.take(8))[0])
    if imm == "reftype":
        at = r.offset
        b = r.u8()
        if b != 0x70:
            raise UnsupportedFeature("externref" if b == 0x6F else f"reftype 0x{b:02x}")
        return (name, "funcref")
    raise AssertionError(imm)


def _parse_expr(r: Reader) -> tuple[tuple, ...]:
    """Parse instructions up to and including the closing `end` of this
    expression; the returned body excludes that final `end`."""
    body = []
    depth = 0
    while True:
        ins = _parse_instr(r)
        name = ins[0]
        if name == "end":
            if depth == 0:
                return tuple(body)
            depth -= 1
        elif name in ("block", "loop", "if"):
            depth += 1
        body.append(ins)


def parse_module(data: bytes) -> WasmModule:
    """Decode a wasm binary into the structural model."""
    if len(data) < 8 or data[:4] != WASM_MAGIC:
        raise MalformedModule("bad wasm magic", 0)
    if data[4:8] != WASM_VERSION:
        raise MalformedModule("unsupported wasm version", 4)

    types: list[FuncType] = []
    imports: list[Import] = []
    func_typeidxs: list[int] = []
    tables: list[TableType] = []
    memories: list[Limits] = []
    globals_: list[GlobalDef] = []
    exports: list[Export] = []
    start = None
    elems: list[ElemSegment] = []
    datas: list[DataSegment] = []
    customs: list[CustomSection] = []
    code_bodies: list[tuple[tuple[str, ...], tuple[tuple, ...]]] = []

    # Binary section order; datacount (12) sits between element and code.
    order = {sid: i for i, sid in enumerate((1, 2, 3, 4, 5, 6, 7, 8, 9, 12, 10, 11))}
    pos = 8
    last_rank = -1
    while pos < len(data):
        sec_id = data[pos]
        hdr = Reader(data[pos + 1:], base=pos + 1)
        size = hdr.u()
        body_start = pos + 1 + hdr.pos
        body_end = body_start + size
        if body_end > len(data):
            raise MalformedModule("section extends past end of file", pos)
        r = Reader(data[body_start:body_end], base=body_start)

        if sec_id == 0:
            customs.append(CustomSection(r.name(), r.data[r.pos:]))
        elif sec_id > 12:
            raise MalformedModule(f"unknown section id {sec_id}", pos)
        else:
            if order[sec_id] <= last_rank:
                raise MalformedModule(f"section id {sec_id} out of order", pos)
            last_rank = order[sec_id]
            if sec_id == 1:
                types = [_parse_functype(r) for _ in range(r.u())]
            elif sec_id == 2:
                for _ in range(r.u()):
                    module, name = r.name(), r.name()
                    kind = r.u8()
                    if kind == 0:
                        imports.append(Import(module, name, "func", r.u()))
                    elif kind == 1:
                        at = r.offset
                        et = r.u8()
                        if et != 0x70:
                            raise MalformedModule("table elemtype must be funcref", at)
                        imports.append(Import(module, name, "table",
                                              TableType("funcref", r.limits())))
                    elif kind == 2:
                        imports.append(Import(module, name, "memory", r.limits()))
                    elif kind == 3:
                        gt = GlobalType(r.valtype(), bool(r.u8()))
                        imports.append(Import(module, name, "global", gt))
                    else:
                        raise MalformedModule(f"bad import kind {kind}", r.offset - 1)
            elif sec_id == 3:
                func_typeidxs = [r.u() for _ in range(r.u())]
            elif sec_id == 4:
                for _ in range(r.u()):
                    at = r.offset
                    if r.u8() != 0x70:
                        raise MalformedModule("table elemtype must be funcref", at)
                    tables.append(TableType("funcref", r.limits()))
            elif sec_id == 5:
                memories = [r.limits() for _ in range(r.u())]
            elif sec_id == 6:
                for _ in range(r.u()):
                    gt = GlobalType(r.valtype(), bool(r.u8()))
                    globals_.append(GlobalDef(gt, _parse_expr(r)))
            elif sec_id == 7:
                for _ in range(r.u()):
                    name = r.name()
                    kind = r.u8()
                    if kind not in _EXPORT_KINDS:
                        raise MalformedModule(f"bad export kind {kind}", r.offset - 1)
                    exports.append(Export(name, _EXPORT_KINDS[kind], r.u()))
            elif sec_id == 8:
                start = r.u()
            elif sec_id == 9:
                for _ in range(r.u()):
                    flag = r.u()
                    if flag == 0:
                        offset = _parse_expr(r)
                        funcidxs = tuple(r.u() for _ in range(r.u()))
                        elems.append(ElemSegment("active", 0, offset, funcidxs))
                    elif flag == 3:
                        at = r.offset
                        if r.u8() != 0x00:
                            raise MalformedModule("expected elemkind 0", at)
                        funcidxs = tuple(r.u() for _ in range(r.u()))
                        elems.append(ElemSegment("declarative", 0, None, funcidxs))
                    else:
                        raise UnsupportedFeature("reference-types",
                                                 f"element segment flag {flag}")
            elif sec_id == 10:
                for _ in range(r.u()):
                    body_size = r.u()
                    end = r.pos + body_size
                    locals_: list[str] = []
                    for _ in range(r.u()):
                        count = r.u()
                        t = r.valtype()
                        locals_.extend([t] * count)
                    body = _parse_expr(r)
                    if r.pos != end:
                        raise MalformedModule("code body size mismatch", r.offset)
                    code_bodies.append((tuple(locals_), body))
            elif sec_id == 11:
                for _ in range(r.u()):
                    flag = r.u()
                    if flag == 0:
                        offset = _parse_expr(r)
                        datas.append(DataSegment("active", 0, offset, r.take(r.u())))
                    elif flag == 1:
                        datas.append(DataSegment("passive", 0, None, r.take(r.u())))
                    elif flag == 2:
                        memidx = r.u()
                        offset = _parse_expr(r)
                        datas.append(DataSegment("active", memidx, offset, r.take(r.u())))
                    else:
                        raise MalformedModule(f"bad data segment flag {flag}", r.offset)
            elif sec_id == 12:
                r.u()  # count is re-derived at encode time

        if not r.eof() and sec_id != 0:
            raise MalformedModule("trailing bytes in section", r.offset)
        pos = body_end

    if len(func_typeidxs) != len(code_bodies):
        raise MalformedModule(
            f"function section ({len(func_typeidxs)}) and code section "
            f"({len(code_bodies)}) disagree", len(data))
    functions = tuple(FunctionDef(ti, locs, body)
                      for ti, (locs, body) in zip(func_typeidxs, code_bodies))
    return WasmModule(types=tuple(types), imports=tuple(imports), functions=functions,
                      tables=tuple(tables), memories=tuple(memories),
                      globals=tuple(globals_), exports=tuple(exports), start=start,
                      elems=tuple(elems), datas=tuple(datas), customs=tuple(customs))


# -------------------------------------------------------------- encoding

def _enc_valtype(t: str) -> bytes:
    return bytes([VALTYPE_BYTES[t]])


def _enc_name(s: str) -> bytes:
    b = s.encode("utf-8")
    return enc_u(len(b)) + b


def _enc_limits(lim: Limits) -> bytes:
    if lim.max is None:
        return b"\x00" + enc_u(lim.min)
    return b"\x01" + enc_u(lim.min) + enc_u(lim.max)


def _enc_blocktype(bt) -> bytes:
    if bt is None:
        return b"\x40"
    if isinstance(bt, str):
        return _enc_valtype(bt)
    return enc_s(bt)  # typeidx as s33


def enc_instr(ins: tuple) -> bytes:
    name = ins[0]
    if name in FC_OPCODES:
        sub, imm = FC_OPCODES[name]
        out = b"\xfc" + enc_u(sub)
        if imm == "datamem":
            return out + enc_u(ins[1]) + bytes([ins[2]])
        if imm == "data":
            return out + enc_u(ins[1])
        if imm == "memmem":
            return out + bytes([ins[1], ins[2]])
        if imm == "mem":
            return out + bytes([ins[1]])
        return out
    code, imm = OPCODES[name]
    out = bytes([code])
    if imm == "":
        return out
    if imm == "block":
        return out + _enc_blocktype(ins[1])
    if imm in ("label", "func", "local", "global", "table", "data"):
        return out + enc_u(ins[1])
    if imm == "brtable":
        targets, default = ins[1], ins[2]
        return out + enc_u(len(targets)) + b"".join(enc_u(t) for t in targets) + enc_u(default)
    if imm == "callind":
        return out + enc_u(ins[1]) + bytes([ins[2]])
    if imm == "memarg":
        return out + enc_u(ins[1]) + enc_u(ins[2])
    if imm == "mem":
        return out + bytes([ins[1]])
    if imm == "i32":
        return out + enc_s(ins[1])
    if imm == "i64":
        return out + enc_s(ins[1])
    if imm == "f32":
        return out + struct.pack("<I", ins[1])
    if imm == "f64":
        return out + struct.pack("<Q", ins[1])
    if imm == "reftype":
        return out + b"\x70"
    raise AssertionError(imm)


def enc_expr(body) -> bytes:
    return b"".join(enc_instr(i) for i in body) + bytes([OPCODES["end"][0]])


def encode_function_body(fd: FunctionDef) -> bytes:
    """Locals (run-length compressed) followed by the body expression."""
    runs: list[tuple[int, str]] = []
    for t in fd.locals:
        if runs and runs[-1][1] == t:
            runs[-1] = (runs[-1][0] + 1, t)
        else:
            runs.append((1, t))
    out = enc_u(len(runs))
    for count, t in runs:
        out += enc_u(count) + _enc_valtype(t)
    return out + enc_expr(fd.body)


def _section(sec_id: int, payload: bytes) -> bytes:
    return bytes([sec_id]) + enc_u(len(payload)) + payload


def _vec(items: list[bytes]) -> bytes:
    return enc_u(len(items)) + b"".join(items)


def _uses_bulk_data_ops(m: WasmModule) -> bool:
    for fd in m.functions:
        for ins in fd.body:
            if ins[0] in ("memory.init", "data.drop"):
                return True
    return False


def encode_module(m: WasmModule, body_limit: int = DEFAULT_BODY_LIMIT) -> bytes:
    """Encode the structural model into a wasm binary.

    Raises LimitExceeded when any encoded function body exceeds
    `body_limit` bytes.
    """
    out = [WASM_MAGIC, WASM_VERSION]

    if m.types:
        out.append(_section(1, _vec([
            b"\x60" + _vec([_enc_valtype(t) for t in ft.params])
            + _vec([_enc_valtype(t) for t in ft.results])
            for ft in m.types])))

    if m.imports:
        items = []
        for im in m.imports:
            b = _enc_name(im.module) + _enc_name(im.name)
            if im.kind == "func":
                b += b"\x00" + enc_u(im.desc)
            elif im.kind == "table":
                b += b"\x01\x70" + _enc_limits(im.desc.limits)
            elif im.kind == "memory":
                b += b"\x02" + _enc_limits(im.desc)
            else:
                b += b"\x03" + _enc_valtype(im.desc.valtype) + bytes([int(im.desc.mutable)])
            items.append(b)
        out.append(_section(2, _vec(items)))

    if m.functions:
        out.append(_section(3, _vec([enc_u(fd.typeidx) for fd in m.functions])))

    if m.tables:
        out.append(_section(4, _vec([b"\x70" + _enc_limits(t.limits) for t in m.tables])))

    if m.memories:
        out.append(_section(5, _vec([_enc_limits(lim) for lim in m.memories])))

    if m.globals:
        out.append(_section(6, _vec([
            _enc_valtype(g.type.valtype) + bytes([int(g.type.mutable)]) + enc_expr(g.init)
            for g in m.globals])))

    if m.exports:
        out.append(_section(7, _vec([
            _enc_name(e.name) + bytes([_EXPORT_KIND_BYTES[e.kind]]) + enc_u(e.index)
            for e in m.exports])))

    if m.start is not None:
        out.append(_section(8, enc_u(m.start)))

    if m.elems:
        items = []
        for seg in m.elems:
            if seg.mode == "active":
                items.append(b"\x00" + enc_expr(seg.offset)
                             + _vec([enc_u(f) for f in seg.funcidxs]))
            else:
                items.append(b"\x03\x00" + _vec([enc_u(f) for f in seg.funcidxs]))
        out.append(_section(9, _vec(items)))

    if any(d.mode == "passive" for d in m.datas) or _uses_bulk_data_ops(m):
        out.append(_section(12, enc_u(len(m.datas))))

    if m.functions:
        bodies = []
        num_imports = m.num_func_imports
        for i, fd in enumerate(m.functions):
            b = encode_function_body(fd)
            if len(b) > body_limit:
                raise LimitExceeded(num_imports + i, len(b), body_limit)
            bodies.append(enc_u(len(b)) + b)
        out.append(_section(10, _vec(bodies)))

    if m.datas:
        items = []
        for seg in m.datas:
            if seg.mode == "passive":
                items.append(b"\x01" + enc_u(len(seg.data)) + seg.data)
            elif seg.memidx == 0:
                items.append(b"\x00" + enc_expr(seg.offset) + enc_u(len(seg.data)) + seg.data)
            else:
                items.append(b"\x02" + enc_u(seg.memidx) + enc_expr(seg.offset)
                             + enc_u(len(seg.data)) + seg.data)
        out.append(_section(11, _vec(items)))

    for cs in m.customs:
        out.append(_section(0, _enc_name(cs.name) + cs.data))

    return b"".join(out)
