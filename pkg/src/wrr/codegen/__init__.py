"""Replay code generation: three output formats from one Replay IR."""

from .bundle import (DYNAMIC_LINKING, FORMATS, JS_REPLAY, SELF_CONTAINED, ReplayBundle,
                     read_bundle, write_bundle)
from .jsgen import gen_dynamic_linking, gen_js_replay
from .selfcontained import ENTRY_EXPORT, gen_self_contained

__all__ = [
    "DYNAMIC_LINKING", "FORMATS", "JS_REPLAY", "SELF_CONTAINED", "ENTRY_EXPORT",
    "ReplayBundle", "read_bundle", "write_bundle", "gen_self_contained",
    "gen_js_replay", "gen_dynamic_linking",
]
