"""Module surgery: replacing function imports with definitions.

Function imports occupy the first slots of the function index space, so
replacing every import with a definition at the same position keeps every
pre-existing function index stable: no body rewriting is needed and the
original code is preserved byte-for-byte.
"""

from __future__ import annotations

from ..errors import MissingReplayFunction
from .model import FunctionDef, WasmModule


def splice_import_functions(m: WasmModule,
                            new_defs: dict[int, FunctionDef]) -> WasmModule:
    """Replace every function import with the given definition.

    `new_defs` maps function-import index (0-based position in the
    function index space) to its replacement body.  The result has zero
    function imports; non-function imports are kept.  Raises
    MissingReplayFunction if an import has no replacement.
    """
    num = m.num_func_imports
    for j in range(num):
        if j not in new_defs:
            raise MissingReplayFunction(j)
    replacements = tuple(new_defs[j] for j in range(num))
    kept_imports = tuple(im for im in m.imports if im.kind != "func")
    return m.with_(imports=kept_imports, functions=replacements + m.functions)


def remap_function_indices(m: WasmModule, remap) -> WasmModule:
    """Apply `remap: old funcidx -> new funcidx` to every function-index
    reference: call and ref.func immediates, exports, element segments,
    and the start function.  Bodies are otherwise untouched."""

    def fix_body(body):
        out = []
        for ins in body:
            if ins[0] in ("call", "ref.func"):
                out.append((ins[0], remap(ins[1])))
            else:
                out.append(ins)
        return tuple(out)

    functions = tuple(FunctionDef(fd.typeidx, fd.locals, fix_body(fd.body))
                      for fd in m.functions)
    exports = tuple(e if e.kind != "func" else e.__class__(e.name, e.kind, remap(e.index))
                    for e in m.exports)
    elems = tuple(seg.__class__(seg.mode, seg.tableidx, seg.offset,
                                tuple(remap(f) for f in seg.funcidxs))
                  for seg in m.elems)
    start = None if m.start is None else remap(m.start)
    return m.with_(functions=functions, exports=exports, elems=elems, start=start)
