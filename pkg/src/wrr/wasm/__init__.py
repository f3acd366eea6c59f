"""Core wasm binary toolkit: model, codec, validator, and module surgery."""

from .binary import encode_module, parse_module
from .edit import remap_function_indices, splice_import_functions
from .model import (DEFAULT_BODY_LIMIT, PAGE_SIZE, CustomSection, DataSegment,
                    ElemSegment, Export, FuncType, FunctionDef, GlobalDef, GlobalType,
                    Import, Limits, TableType, WasmModule, intern_functype)
from .validate import validate_module

__all__ = [
    "DEFAULT_BODY_LIMIT", "PAGE_SIZE", "CustomSection", "DataSegment", "ElemSegment",
    "Export", "FuncType", "FunctionDef", "GlobalDef", "GlobalType", "Import", "Limits",
    "TableType", "WasmModule", "intern_functype", "parse_module", "encode_module",
    "validate_module", "splice_import_functions", "remap_function_indices",
]
