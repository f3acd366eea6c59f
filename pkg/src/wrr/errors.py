"""Exception hierarchy shared by all pipeline stages."""


class WrrError(Exception):
    """Base class for all toolchain errors."""


class MalformedTrace(WrrError):
    """A trace file or text does not follow the trace format.

    `where` is a byte offset for binary traces and a 1-based line
    number for textual traces.
    """

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} (at {where})")
        self.where = where


class MalformedModule(WrrError):
    """A wasm binary violates the binary format."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at offset {offset})")
        self.offset = offset


class UnsupportedFeature(WrrError):
    """The module uses a wasm proposal outside the supported subset."""

    def __init__(self, proposal, detail=""):
        super().__init__(f"unsupported feature: {proposal}" + (f" ({detail})" if detail else ""))
        self.proposal = proposal


class LimitExceeded(WrrError):
    """An encoded function body exceeds the configured engine size limit."""

    def __init__(self, funcidx, size, limit):
        super().__init__(f"function {funcidx} body is {size} bytes, limit is {limit}")
        self.funcidx = funcidx
        self.size = size
        self.limit = limit


class MissingReplayFunction(WrrError):
    """splice_import_functions was not given a body for an imported function."""

    def __init__(self, import_index):
        super().__init__(f"no replacement body for function import {import_index}")
        self.import_index = import_index


class AlreadyInstrumented(WrrError):
    """The module already imports from the recorder module namespace."""


class LinkError(WrrError):
    """An import could not be bound at instantiation."""


class TrapDuringStart(WrrError):
    """The start function trapped during instantiation."""


class Trap(WrrError):
    """Wasm execution trapped."""

    def __init__(self, kind, funcidx=None, pc=None):
        where = "" if funcidx is None else f" in function {funcidx} at pc {pc}"
        super().__init__(f"trap: {kind}{where}")
        self.kind = kind
        self.funcidx = funcidx
        self.pc = pc


class SignatureMismatch(WrrError):
    """invoke_export arguments do not match the export's type."""


class ScenarioExhausted(WrrError):
    """An import was invoked more times than the scenario scripts."""

    def __init__(self, import_name, call_count):
        super().__init__(f"import {import_name!r} invoked {call_count + 1} times, "
                         f"scenario scripts only {call_count}")
        self.import_name = import_name
        self.call_count = call_count


class IllFormedTrace(WrrError):
    """A trace violates the structural assumptions of reduction or translation."""


class AddressOutOfShadow(WrrError):
    """A trace event addressed memory beyond the tracked shadow length."""


class ReplayabilityError(WrrError):
    """The trace depends on state that replay code cannot reconstruct."""


class SplitInfeasible(WrrError):
    """A context is too large to split within the auxiliary function budget."""


class UnresolvedExport(WrrError):
    """Replay code needs an export the original module does not provide."""

    def __init__(self, what):
        super().__init__(f"replay requires an export for {what}")
        self.what = what
