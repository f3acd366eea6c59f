"""wrr: record, reduce, and replay WebAssembly host interactions.

Instrument a module to record its host boundary, reduce the trace to the
nondeterministic core via shadow state and call-kind analysis, translate
it into a replay IR, and compile standalone replay benchmarks in three
output formats.
"""

from . import codegen, errors, instrument, interp, reduce, replay_ir, scenario, trace, wasm

__version__ = "0.1.0"
