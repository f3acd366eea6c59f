"""Run reports for cross-format equivalence.

A RunReport captures the observable behavior of a replay bundle run: the
ordered log of calls into the original module's exports (values as hex
bit patterns), a hash of the exported memory, and trap information.  The
same JSON shape is produced by the JS harness for the js-replay and
dynamic-linking formats, so reports compare bitwise across formats.
"""

from __future__ import annotations

import hashlib

from .codegen import SELF_CONTAINED, ReplayBundle
from .errors import Trap, WrrError
from .interp import VALTYPE_KIND, instantiate
from .scenario import EMPTY_SCENARIO
from .wasm import parse_module


def format_bits(kind_name: str, bits: int, width: int) -> dict:
    return {"kind": kind_name, "bits": f"{bits:0{width * 2}x}"}


def selfcontained_report(bundle: ReplayBundle) -> dict:
    """Execute a self-contained bundle in the embedded interpreter and
    report export calls made by the replay functions, the exported-memory
    hash, and any trap."""
    if bundle.format != SELF_CONTAINED:
        raise WrrError(f"expected a {SELF_CONTAINED} bundle, got {bundle.format}")
    module = parse_module(bundle.artifacts[bundle.manifest["artifacts"]["module"]])
    replay_funcs = frozenset(bundle.manifest["replay_funcs"])
    export_name = {}
    for e in module.exports:
        if e.kind == "func":
            export_name.setdefault(e.index, e.name)

    calls = []

    def observe(callee: int, args: list, results: list):
        name = export_name.get(callee)
        if name is None or name == bundle.manifest["entry"]:
            return
        ft = module.functype(callee)
        calls.append({
            "name": name,
            "args": [format_bits(t, b, VALTYPE_KIND[t].width)
                     for t, b in zip(ft.params, args)],
            "results": [format_bits(t, b, VALTYPE_KIND[t].width)
                        for t, b in zip(ft.results, results)],
        })

    trap = None
    inst = instantiate(module, EMPTY_SCENARIO)
    inst.call_observer = (replay_funcs, observe)
    try:
        inst.invoke_export(bundle.manifest["entry"], ())
    except Trap as exc:
        trap = str(exc)

    memory_hash = None
    if trap is None and bundle.manifest.get("memory_export") is not None and inst.memories:
        memory_hash = hashlib.sha256(bytes(inst.memories[0])).hexdigest()
    return {"calls": calls, "memoryHash": memory_hash, "trap": trap}


def compare_reports(a: dict, b: dict) -> list[str]:
    """Empty iff the reports describe identical observable behavior.

    Trap presence is compared, not trap text: engines word their trap
    messages differently.
    """
    diffs = []
    if (a.get("trap") is None) != (b.get("trap") is None):
        diffs.append(f"trap: {a.get('trap')!r} != {b.get('trap')!r}")
    if a.get("memoryHash") != b.get("memoryHash"):
        diffs.append(f"memoryHash: {a.get('memoryHash')} != {b.get('memoryHash')}")
    ca, cb = a.get("calls", []), b.get("calls", [])
    if len(ca) != len(cb):
        diffs.append(f"call count: {len(ca)} != {len(cb)}")
    for i, (x, y) in enumerate(zip(ca, cb)):
        if x != y:
            diffs.append(f"call {i}: {x} != {y}")
            break
    return diffs
