"""Cross-format equivalence via the JS harness (secondary component).

These tests exercise the frontend through its CLI, exactly as an
external consumer would; they skip when node or the built harness is
absent so the primary suite stands alone.
"""

import json
import os
import shutil
import subprocess

import pytest

from corpus import CORPUS
from wrr.codegen import DYNAMIC_LINKING, JS_REPLAY, SELF_CONTAINED, write_bundle
from wrr.pipeline import generate_bundle, record_trace
from wrr.report import compare_reports, selfcontained_report

_FRONTEND = os.path.join(os.path.dirname(__file__), "..", "frontend")


def harness_cli() -> str | None:
    """Path to the built harness CLI, or None when unavailable."""
    if shutil.which("node") is None:
        return None
    cli = os.path.join(_FRONTEND, "dist", "cli.js")
    return cli if os.path.exists(cli) else None


def run_js_bundle(cli: str, bundle_dir: str) -> dict:
    out = subprocess.run(["node", cli, "run-bundle", bundle_dir],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    return json.loads(out.stdout)


needs_harness = pytest.mark.skipif(harness_cli() is None,
                                   reason="node or built frontend missing")


@needs_harness
@pytest.mark.parametrize("name", sorted(CORPUS))
def test_formats_agree(name, tmp_path):
    cli = harness_cli()
    m, s = CORPUS[name]()
    t = record_trace(m, s)
    base = selfcontained_report(generate_bundle(t, m, SELF_CONTAINED,
                                                split_threshold=16))
    assert base["trap"] is None
    for fmt in (JS_REPLAY, DYNAMIC_LINKING):
        bundle_dir = tmp_path / fmt
        write_bundle(generate_bundle(t, m, fmt, split_threshold=16), str(bundle_dir))
        report = run_js_bundle(cli, str(bundle_dir))
        assert compare_reports(base, report) == [], fmt


@needs_harness
def test_import_in_table_self_contained_matches_dynamic(tmp_path):
    """The js-replay format cannot express this case (replay functions are
    not funcrefs); the other two formats must still agree."""
    from corpus import import_in_table
    cli = harness_cli()
    m, s = import_in_table()
    t = record_trace(m, s)
    base = selfcontained_report(generate_bundle(t, m, SELF_CONTAINED,
                                                split_threshold=16))
    bundle_dir = tmp_path / "dyn"
    write_bundle(generate_bundle(t, m, DYNAMIC_LINKING, split_threshold=16),
                 str(bundle_dir))
    report = run_js_bundle(cli, str(bundle_dir))
    assert compare_reports(base, report) == []


@needs_harness
def test_harness_rejects_self_contained(tmp_path):
    cli = harness_cli()
    m, s = CORPUS["empty_module"]()
    t = record_trace(m, s)
    write_bundle(generate_bundle(t, m, SELF_CONTAINED), str(tmp_path / "b"))
    out = subprocess.run(["node", cli, "run-bundle", str(tmp_path / "b")],
                         capture_output=True, text=True)
    assert out.returncode == 1
    assert "not runnable" in out.stderr


@needs_harness
def test_harness_compare_command(tmp_path):
    cli = harness_cli()
    m, s = CORPUS["reentrant"]()
    t = record_trace(m, s)
    write_bundle(generate_bundle(t, m, JS_REPLAY), str(tmp_path / "b"))
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    for path in (a, b):
        out = subprocess.run(["node", cli, "run-bundle", str(tmp_path / "b"),
                              "--report", str(path)], capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
    same = subprocess.run(["node", cli, "compare", str(a), str(b)],
                          capture_output=True, text=True)
    assert same.returncode == 0
    doc = json.loads(a.read_text())
    doc["memoryHash"] = "0" * 64
    a.write_text(json.dumps(doc))
    diff = subprocess.run(["node", cli, "compare", str(a), str(b)],
                          capture_output=True, text=True)
    assert diff.returncode == 2
    assert "memoryHash" in diff.stderr
