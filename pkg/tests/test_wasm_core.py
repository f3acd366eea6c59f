"""Wasm binary model: parse, encode, validate, splice."""

import shutil
import subprocess

import pytest

from corpus import CORPUS, ModuleBuilder
from wrr.errors import LimitExceeded, MalformedModule, MissingReplayFunction, UnsupportedFeature
from wrr.instrument import instrument
from wrr.wasm import (FuncType, FunctionDef, WasmModule, encode_module,
                      parse_module, splice_import_functions, validate_module)

MINIMAL = b"\x00asm\x01\x00\x00\x00"


def test_minimal_module():
    m = parse_module(MINIMAL)
    assert m == WasmModule()
    assert encode_module(WasmModule()) == MINIMAL


def test_bad_magic_offset():
    with pytest.raises(MalformedModule) as exc:
        parse_module(b"\x00asX\x01\x00\x00\x00")
    assert exc.value.offset == 0


def _add_module() -> WasmModule:
    b = ModuleBuilder()
    b.func(("i32", "i32"), ("i32",),
           body=(("local.get", 0), ("local.get", 1), ("i32.add",)), export="add")
    return b.build()


def test_parse_encode_fixpoint_simple():
    m = _add_module()
    data = encode_module(m)
    assert parse_module(data) == m
    assert encode_module(parse_module(data)) == data


def test_parse_encode_fixpoint_corpus():
    for name, make in CORPUS.items():
        m, _ = make()
        data = encode_module(m)
        m2 = parse_module(data)
        assert m2 == m, name
        assert encode_module(m2) == data, name


def test_simd_rejected():
    m = _add_module()
    data = bytearray(encode_module(m))
    # body is "local.get 0 / local.get 1 / i32.add / end"; patch i32.add -> SIMD prefix
    idx = data.rindex(b"\x20\x00\x20\x01\x6a\x0b")
    data[idx + 4] = 0xFD
    with pytest.raises(UnsupportedFeature) as exc:
        parse_module(bytes(data))
    assert exc.value.proposal == "simd"


def test_threads_prefix_rejected():
    m = _add_module()
    data = bytearray(encode_module(m))
    idx = data.rindex(b"\x20\x00\x20\x01\x6a\x0b")
    data[idx + 4] = 0xFE
    with pytest.raises(UnsupportedFeature) as exc:
        parse_module(bytes(data))
    assert exc.value.proposal == "threads"


def test_truncated_section():
    data = encode_module(_add_module())
    with pytest.raises(MalformedModule):
        parse_module(data[:-3])


def test_body_size_limit():
    body = (("nop",),) * 4096 + (("i32.const", 1),)
    m = WasmModule(types=(FuncType((), ("i32",)),),
                   functions=(FunctionDef(0, (), body),))
    with pytest.raises(LimitExceeded) as exc:
        encode_module(m, body_limit=1000)
    assert exc.value.funcidx == 0
    assert exc.value.size > 1000
    encode_module(m)  # default limit is fine


def test_validate_ok_corpus():
    for name, make in CORPUS.items():
        m, _ = make()
        assert validate_module(m) == [], name


def test_validate_extra_stack_value():
    m = WasmModule(types=(FuncType((), ()),),
                   functions=(FunctionDef(0, (), (("i32.const", 1),)),))
    diags = validate_module(m)
    assert len(diags) == 1
    assert "function 0" in diags[0]


def test_validate_type_mismatch():
    m = WasmModule(types=(FuncType((), ("i32",)),),
                   functions=(FunctionDef(0, (), (("i64.const", 1),)),))
    assert validate_module(m) != []


def test_validate_duplicate_export():
    b = ModuleBuilder()
    b.func((), (), body=(), export="f")
    b.func((), (), body=(), export="f")
    assert any("duplicate export" in d for d in validate_module(b.build()))


def test_validate_bad_alignment():
    b = ModuleBuilder()
    b.memory()
    b.func((), ("i32",), body=(("i32.const", 0), ("i32.load8_u", 1, 0)), export="f")
    assert any("alignment" in d for d in validate_module(b.build()))


def test_validate_body_limit_diagnostic():
    body = (("nop",),) * 4096
    m = WasmModule(types=(FuncType((), ()),), functions=(FunctionDef(0, (), body),))
    assert any("over the" in d for d in validate_module(m, body_limit=100))


# ------------------------------------------------------------------ splice

def _two_import_module():
    b = ModuleBuilder()
    f0 = b.import_func("f0", (), ("i32",))
    f1 = b.import_func("f1", ("i32",), ("i32",))
    b.func((), ("i32",), body=(("call", f0), ("call", f1)), export="main")
    return b.build()


def test_splice_empty_on_import_free():
    m = _add_module()
    assert splice_import_functions(m, {}) == m


def test_splice_replaces_all_imports():
    m = _two_import_module()
    defs = {0: FunctionDef(m.imports[0].desc, (), (("i32.const", 7),)),
            1: FunctionDef(m.imports[1].desc, (), (("local.get", 0),))}
    out = splice_import_functions(m, defs)
    assert out.num_func_imports == 0
    assert validate_module(out) == []
    # the original defined function is unchanged and at the same index
    assert out.functions[2] == m.functions[0]
    assert out.export_map()["main"].index == 2


def test_splice_missing_def():
    m = _two_import_module()
    with pytest.raises(MissingReplayFunction) as exc:
        splice_import_functions(m, {0: FunctionDef(m.imports[0].desc, (), (("i32.const", 7),))})
    assert exc.value.import_index == 1


def test_non_ascending_sections_rejected():
    # type section after function section
    bad = MINIMAL + bytes([3, 2, 1, 0]) + bytes([1, 4, 1, 0x60, 0, 0])
    with pytest.raises(MalformedModule):
        parse_module(bad)


def test_custom_sections_preserved():
    from wrr.wasm import CustomSection
    m = _add_module().with_(customs=(CustomSection("meta", b"\x01\x02"),))
    m2 = parse_module(encode_module(m))
    assert m2.customs == m.customs


# -------------------------------------------------- external cross-check

needs_node = pytest.mark.skipif(shutil.which("node") is None,
                                reason="node not available")


@needs_node
def test_encodings_accepted_by_reference_engine(tmp_path):
    """Every module we emit (originals and instrumented) passes V8 validation."""
    paths = []
    for name, make in CORPUS.items():
        m, _ = make()
        p = tmp_path / f"{name}.wasm"
        p.write_bytes(encode_module(m))
        paths.append(p)
        mi = instrument(m)
        p2 = tmp_path / f"{name}.instr.wasm"
        p2.write_bytes(encode_module(mi))
        paths.append(p2)
    script = ("const fs=require('fs');let bad=[];"
              "for(const f of process.argv.slice(1)){"
              "if(!WebAssembly.validate(fs.readFileSync(f)))bad.push(f);}"
              "if(bad.length){console.error(bad.join('\\n'));process.exit(1);}")
    subprocess.run(["node", "-e", script] + [str(p) for p in paths], check=True)
