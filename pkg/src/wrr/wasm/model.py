"""Structural model of a core wasm module and the supported opcode tables.

Instructions are plain tuples: ``(opname, *immediates)``.  Branch targets
are relative label depths, so inserting straight-line instructions never
invalidates surrounding control flow.  Function bodies exclude the
terminating ``end`` opcode (the encoder appends it).

Supported feature set: core MVP numeric/control/memory instructions,
sign-extension ops, saturating truncations, bulk memory (memory.init,
data.drop, memory.copy, memory.fill, passive data segments), mutable
globals, a single funcref table with table.get/table.set, ref.null /
ref.func / ref.is_null, and multi-value block types.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

PAGE_SIZE = 65536

# Default per-function body size limit, mirroring production-engine caps.
# Configurable everywhere it is enforced.
DEFAULT_BODY_LIMIT = 7_654_321

VALTYPE_CODES = {0x7F: "i32", 0x7E: "i64", 0x7D: "f32", 0x7C: "f64", 0x70: "funcref"}
VALTYPE_BYTES = {v: k for k, v in VALTYPE_CODES.items()}
NUM_TYPES = ("i32", "i64", "f32", "f64")


@dataclass(frozen=True)
class FuncType:
    params: tuple[str, ...]
    results: tuple[str, ...]


@dataclass(frozen=True)
class Limits:
    min: int
    max: int | None = None


@dataclass(frozen=True)
class Import:
    module: str
    name: str
    kind: str  # "func" | "table" | "memory" | "global"
    desc: object  # typeidx | TableType | Limits | GlobalType


@dataclass(frozen=True)
class TableType:
    elemtype: str
    limits: Limits


@dataclass(frozen=True)
class GlobalType:
    valtype: str
    mutable: bool


@dataclass(frozen=True)
class FunctionDef:
    typeidx: int
    locals: tuple[str, ...]  # expanded, excludes params
    body: tuple[tuple, ...]  # instruction tuples, no trailing 'end'


@dataclass(frozen=True)
class GlobalDef:
    type: GlobalType
    init: tuple[tuple, ...]  # const expression, no trailing 'end'


@dataclass(frozen=True)
class Export:
    name: str
    kind: str
    index: int


@dataclass(frozen=True)
class ElemSegment:
    # mode "active": offset expr + funcidxs into table `tableidx`
    # mode "declarative": funcidxs only (validates ref.func targets)
    mode: str
    tableidx: int
    offset: tuple[tuple, ...] | None
    funcidxs: tuple[int, ...]


@dataclass(frozen=True)
class DataSegment:
    # mode "active": offset expr into memory `memidx`; mode "passive": bytes only
    mode: str
    memidx: int
    offset: tuple[tuple, ...] | None
    data: bytes


@dataclass(frozen=True)
class CustomSection:
    name: str
    data: bytes


@dataclass(frozen=True)
class WasmModule:
    types: tuple[FuncType, ...] = ()
    imports: tuple[Import, ...] = ()
    functions: tuple[FunctionDef, ...] = ()
    tables: tuple[TableType, ...] = ()
    memories: tuple[Limits, ...] = ()
    globals: tuple[GlobalDef, ...] = ()
    exports: tuple[Export, ...] = ()
    start: int | None = None
    elems: tuple[ElemSegment, ...] = ()
    datas: tuple[DataSegment, ...] = ()
    customs: tuple[CustomSection, ...] = ()

    # -- index-space helpers (imports precede definitions) --

    def imported(self, kind: str) -> list[Import]:
        return [im for im in self.imports if im.kind == kind]

    @property
    def num_func_imports(self) -> int:
        return sum(1 for im in self.imports if im.kind == "func")

    @property
    def num_funcs(self) -> int:
        return self.num_func_imports + len(self.functions)

    def functype(self, funcidx: int) -> FuncType:
        """Type of a function by index, covering imports and definitions."""
        fimports = self.imported("func")
        if funcidx < len(fimports):
            return self.types[fimports[funcidx].desc]
        return self.types[self.functions[funcidx - len(fimports)].typeidx]

    def func_def(self, funcidx: int) -> FunctionDef:
        n = self.num_func_imports
        if funcidx < n:
            raise IndexError(f"function {funcidx} is imported")
        return self.functions[funcidx - n]

    @property
    def num_globals(self) -> int:
        return len(self.imported("global")) + len(self.globals)

    def global_type(self, globalidx: int) -> GlobalType:
        gimports = self.imported("global")
        if globalidx < len(gimports):
            return gimports[globalidx].desc
        return self.globals[globalidx - len(gimports)].type

    @property
    def num_tables(self) -> int:
        return len(self.imported("table")) + len(self.tables)

    @property
    def num_memories(self) -> int:
        return len(self.imported("memory")) + len(self.memories)

    def export_map(self) -> dict[str, Export]:
        return {e.name: e for e in self.exports}

    def with_(self, **kw) -> "WasmModule":
        return replace(self, **kw)


def intern_functype(module: WasmModule, ft: FuncType) -> tuple[WasmModule, int]:
    """Return (module, index) with `ft` present in the type section."""
    for i, t in enumerate(module.types):
        if t == ft:
            return module, i
    return module.with_(types=module.types + (ft,)), len(module.types)


# --------------------------------------------------------------- opcodes

# Immediate encodings:
#   ""          no immediates
#   "block"     blocktype (None | valtype | typeidx int)
#   "label"     label depth (u32)
#   "brtable"   (tuple of depths, default depth)
#   "func"      function index (u32)
#   "callind"   (typeidx, tableidx)
#   "local"     local index
#   "global"    global index
#   "table"     table index
#   "memarg"    (align, offset)
#   "mem"       memory index byte
#   "i32"/"i64" signed LEB constant
#   "f32"/"f64" raw 4/8-byte bit pattern
#   "datamem"   (dataidx, memidx)      memory.init
#   "data"      dataidx                data.drop
#   "memmem"    (dst memidx, src memidx)  memory.copy
#   "reftype"   heap type byte

OPCODES: dict[str, tuple[int, str]] = {
    "unreachable": (0x00, ""),
    "nop": (0x01, ""),
    "block": (0x02, "block"),
    "loop": (0x03, "block"),
    "if": (0x04, "block"),
    "else": (0x05, ""),
    "end": (0x0B, ""),
    "br": (0x0C, "label"),
    "br_if": (0x0D, "label"),
    "br_table": (0x0E, "brtable"),
    "return": (0x0F, ""),
    "call": (0x10, "func"),
    "call_indirect": (0x11, "callind"),
    "drop": (0x1A, ""),
    "select": (0x1B, ""),
    "local.get": (0x20, "local"),
    "local.set": (0x21, "local"),
    "local.tee": (0x22, "local"),
    "global.get": (0x23, "global"),
    "global.set": (0x24, "global"),
    "table.get": (0x25, "table"),
    "table.set": (0x26, "table"),
    "i32.load": (0x28, "memarg"),
    "i64.load": (0x29, "memarg"),
    "f32.load": (0x2A, "memarg"),
    "f64.load": (0x2B, "memarg"),
    "i32.load8_s": (0x2C, "memarg"),
    "i32.load8_u": (0x2D, "memarg"),
    "i32.load16_s": (0x2E, "memarg"),
    "i32.load16_u": (0x2F, "memarg"),
    "i64.load8_s": (0x30, "memarg"),
    "i64.load8_u": (0x31, "memarg"),
    "i64.load16_s": (0x32, "memarg"),
    "i64.load16_u": (0x33, "memarg"),
    "i64.load32_s": (0x34, "memarg"),
    "i64.load32_u": (0x35, "memarg"),
    "i32.store": (0x36, "memarg"),
    "i64.store": (0x37, "memarg"),
    "f32.store": (0x38, "memarg"),
    "f64.store": (0x39, "memarg"),
    "i32.store8": (0x3A, "memarg"),
    "i32.store16": (0x3B, "memarg"),
    "i64.store8": (0x3C, "memarg"),
    "i64.store16": (0x3D, "memarg"),
    "i64.store32": (0x3E, "memarg"),
    "memory.size": (0x3F, "mem"),
    "memory.grow": (0x40, "mem"),
    "i32.const": (0x41, "i32"),
    "i64.const": (0x42, "i64"),
    "f32.const": (0x43, "f32"),
    "f64.const": (0x44, "f64"),
    "i32.eqz": (0x45, ""),
    "i32.eq": (0x46, ""),
    "i32.ne": (0x47, ""),
    "i32.lt_s": (0x48, ""),
    "i32.lt_u": (0x49, ""),
    "i32.gt_s": (0x4A, ""),
    "i32.gt_u": (0x4B, ""),
    "i32.le_s": (0x4C, ""),
    "i32.le_u": (0x4D, ""),
    "i32.ge_s": (0x4E, ""),
    "i32.ge_u": (0x4F, ""),
    "i64.eqz": (0x50, ""),
    "i64.eq": (0x51, ""),
    "i64.ne": (0x52, ""),
    "i64.lt_s": (0x53, ""),
    "i64.lt_u": (0x54, ""),
    "i64.gt_s": (0x55, ""),
    "i64.gt_u": (0x56, ""),
    "i64.le_s": (0x57, ""),
    "i64.le_u": (0x58, ""),
    "i64.ge_s": (0x59, ""),
    "i64.ge_u": (0x5A, ""),
    "f32.eq": (0x5B, ""),
    "f32.ne": (0x5C, ""),
    "f32.lt": (0x5D, ""),
    "f32.gt": (0x5E, ""),
    "f32.le": (0x5F, ""),
    "f32.ge": (0x60, ""),
    "f64.eq": (0x61, ""),
    "f64.ne": (0x62, ""),
    "f64.lt": (0x63, ""),
    "f64.gt": (0x64, ""),
    "f64.le": (0x65, ""),
    "f64.ge": (0x66, ""),
    "i32.clz": (0x67, ""),
    "i32.ctz": (0x68, ""),
    "i32.popcnt": (0x69, ""),
    "i32.add": (0x6A, ""),
    "i32.sub": (0x6B, ""),
    "i32.mul": (0x6C, ""),
    "i32.div_s": (0x6D, ""),
    "i32.div_u": (0x6E, ""),
    "i32.rem_s": (0x6F, ""),
    "i32.rem_u": (0x70, ""),
    "i32.and": (0x71, ""),
    "i32.or": (0x72, ""),
    "i32.xor": (0x73, ""),
    "i32.shl": (0x74, ""),
    "i32.shr_s": (0x75, ""),
    "i32.shr_u": (0x76, ""),
    "i32.rotl": (0x77, ""),
    "i32.rotr": (0x78, ""),
    "i64.clz": (0x79, ""),
    "i64.ctz": (0x7A, ""),
    "i64.popcnt": (0x7B, ""),
    "i64.add": (0x7C, ""),
    "i64.sub": (0x7D, ""),
    "i64.mul": (0x7E, ""),
    "i64.div_s": (0x7F, ""),
    "i64.div_u": (0x80, ""),
    "i64.rem_s": (0x81, ""),
    "i64.rem_u": (0x82, ""),
    "i64.and": (0x83, ""),
    "i64.or": (0x84, ""),
    "i64.xor": (0x85, ""),
    "i64.shl": (0x86, ""),
    "i64.shr_s": (0x87, ""),
    "i64.shr_u": (0x88, ""),
    "i64.rotl": (0x89, ""),
    "i64.rotr": (0x8A, ""),
    "f32.abs": (0x8B, ""),
    "f32.neg": (0x8C, ""),
    "f32.ceil": (0x8D, ""),
    "f32.floor": (0x8E, ""),
    "f32.trunc": (0x8F, ""),
    "f32.nearest": (0x90, ""),
    "f32.sqrt": (0x91, ""),
    "f32.add": (0x92, ""),
    "f32.sub": (0x93, ""),
    "f32.mul": (0x94, ""),
    "f32.div": (0x95, ""),
    "f32.min": (0x96, ""),
    "f32.max": (0x97, ""),
    "f32.copysign": (0x98, ""),
    "f64.abs": (0x99, ""),
    "f64.neg": (0x9A, ""),
    "f64.ceil": (0x9B, ""),
    "f64.floor": (0x9C, ""),
    "f64.trunc": (0x9D, ""),
    "f64.nearest": (0x9E, ""),
    "f64.sqrt": (0x9F, ""),
    "f64.add": (0xA0, ""),
    "f64.sub": (0xA1, ""),
    "f64.mul": (0xA2, ""),
    "f64.div": (0xA3, ""),
    "f64.min": (0xA4, ""),
    "f64.max": (0xA5, ""),
    "f64.copysign": (0xA6, ""),
    "i32.wrap_i64": (0xA7, ""),
    "i32.trunc_f32_s": (0xA8, ""),
    "i32.trunc_f32_u": (0xA9, ""),
    "i32.trunc_f64_s": (0xAA, ""),
    "i32.trunc_f64_u": (0xAB, ""),
    "i64.extend_i32_s": (0xAC, ""),
    "i64.extend_i32_u": (0xAD, ""),
    "i64.trunc_f32_s": (0xAE, ""),
    "i64.trunc_f32_u": (0xAF, ""),
    "i64.trunc_f64_s": (0xB0, ""),
    "i64.trunc_f64_u": (0xB1, ""),
    "f32.convert_i32_s": (0xB2, ""),
    "f32.convert_i32_u": (0xB3, ""),
    "f32.convert_i64_s": (0xB4, ""),
    "f32.convert_i64_u": (0xB5, ""),
    "f32.demote_f64": (0xB6, ""),
    "f64.convert_i32_s": (0xB7, ""),
    "f64.convert_i32_u": (0xB8, ""),
    "f64.convert_i64_s": (0xB9, ""),
    "f64.convert_i64_u": (0xBA, ""),
    "f64.promote_f32": (0xBB, ""),
    "i32.reinterpret_f32": (0xBC, ""),
    "i64.reinterpret_f64": (0xBD, ""),
    "f32.reinterpret_i32": (0xBE, ""),
    "f64.reinterpret_i64": (0xBF, ""),
    "i32.extend8_s": (0xC0, ""),
    "i32.extend16_s": (0xC1, ""),
    "i64.extend8_s": (0xC2, ""),
    "i64.extend16_s": (0xC3, ""),
    "i64.extend32_s": (0xC4, ""),
    "ref.null": (0xD0, "reftype"),
    "ref.is_null": (0xD1, ""),
    "ref.func": (0xD2, "func"),
}

# 0xFC-prefixed opcodes: name -> (subopcode, immediate kind)
FC_OPCODES: dict[str, tuple[int, str]] = {
    "i32.trunc_sat_f32_s": (0, ""),
    "i32.trunc_sat_f32_u": (1, ""),
    "i32.trunc_sat_f64_s": (2, ""),
    "i32.trunc_sat_f64_u": (3, ""),
    "i64.trunc_sat_f32_s": (4, ""),
    "i64.trunc_sat_f32_u": (5, ""),
    "i64.trunc_sat_f64_s": (6, ""),
    "i64.trunc_sat_f64_u": (7, ""),
    "memory.init": (8, "datamem"),
    "data.drop": (9, "data"),
    "memory.copy": (10, "memmem"),
    "memory.fill": (11, "mem"),
}

OP_BY_CODE = {code: (name, imm) for name, (code, imm) in OPCODES.items()}
FC_BY_CODE = {code: (name, imm) for name, (code, imm) in FC_OPCODES.items()}

# Proposal names for opcode prefixes we reject outright.
UNSUPPORTED_PREFIXES = {0xFD: "simd", 0xFE: "threads", 0xFB: "gc"}

# (result type, accessed width in bytes) per memory access opcode.
LOAD_SHAPES = {
    "i32.load": ("i32", 4), "i64.load": ("i64", 8),
    "f32.load": ("f32", 4), "f64.load": ("f64", 8),
    "i32.load8_s": ("i32", 1), "i32.load8_u": ("i32", 1),
    "i32.load16_s": ("i32", 2), "i32.load16_u": ("i32", 2),
    "i64.load8_s": ("i64", 1), "i64.load8_u": ("i64", 1),
    "i64.load16_s": ("i64", 2), "i64.load16_u": ("i64", 2),
    "i64.load32_s": ("i64", 4), "i64.load32_u": ("i64", 4),
}
STORE_SHAPES = {
    "i32.store": ("i32", 4), "i64.store": ("i64", 8),
    "f32.store": ("f32", 4), "f64.store": ("f64", 8),
    "i32.store8": ("i32", 1), "i32.store16": ("i32", 2),
    "i64.store8": ("i64", 1), "i64.store16": ("i64", 2), "i64.store32": ("i64", 4),
}
