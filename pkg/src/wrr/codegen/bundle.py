"""Replay bundle container: manifest plus named artifacts on disk."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from ..errors import WrrError

SELF_CONTAINED = "self-contained-wasm"
JS_REPLAY = "js-replay"
DYNAMIC_LINKING = "dynamic-linking"
FORMATS = (SELF_CONTAINED, JS_REPLAY, DYNAMIC_LINKING)

TOOLCHAIN_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"


@dataclass
class ReplayBundle:
    manifest: dict
    artifacts: dict[str, bytes] = field(default_factory=dict)

    @property
    def format(self) -> str:
        return self.manifest["format"]


def base_manifest(fmt: str, entry: str, trace_bytes: bytes) -> dict:
    return {
        "format": fmt,
        "entry": entry,
        "source_trace_sha256": hashlib.sha256(trace_bytes).hexdigest(),
        "toolchain_version": TOOLCHAIN_VERSION,
        "notes": [],
    }


def atomic_write(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def write_bundle(bundle: ReplayBundle, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    manifest = json.dumps(bundle.manifest, indent=2, sort_keys=True) + "\n"
    atomic_write(os.path.join(out_dir, MANIFEST_NAME), manifest.encode("utf-8"))
    for name, data in bundle.artifacts.items():
        atomic_write(os.path.join(out_dir, name), data)


def read_bundle(bundle_dir: str) -> ReplayBundle:
    manifest_path = os.path.join(bundle_dir, MANIFEST_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise WrrError(f"cannot load bundle manifest: {exc}") from None
    if manifest.get("format") not in FORMATS:
        raise WrrError(f"unknown bundle format {manifest.get('format')!r}")
    artifacts = {}
    for name in manifest.get("artifacts", {}).values():
        with open(os.path.join(bundle_dir, name), "rb") as f:
            artifacts[name] = f.read()
    return ReplayBundle(manifest, artifacts)
