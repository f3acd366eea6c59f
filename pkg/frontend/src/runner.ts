/**
 * Bundle runner: loads a js-replay or dynamic-linking bundle, executes
 * its entry under node's wasm engine, and captures a RunReport.
 */

import { createHash } from "node:crypto";
import { readFileSync, existsSync } from "node:fs";
import { join, resolve } from "node:path";
import { pathToFileURL } from "node:url";

import type { ExportCallRecord, RunReport } from "./report.js";

export class LoadError extends Error {}

interface Manifest {
  format: string;
  entry: string;
  artifacts: Record<string, string>;
  memory_export: string | null;
}

const RUNNABLE_FORMATS = new Set(["js-replay", "dynamic-linking"]);

function loadManifest(dir: string): Manifest {
  const path = join(dir, "manifest.json");
  if (!existsSync(path)) {
    throw new LoadError(`no manifest.json in ${dir}`);
  }
  let manifest: Manifest;
  try {
    manifest = JSON.parse(readFileSync(path, "utf-8"));
  } catch (err) {
    throw new LoadError(`unreadable manifest: ${String(err)}`);
  }
  if (!RUNNABLE_FORMATS.has(manifest.format)) {
    throw new LoadError(
      `bundle format ${JSON.stringify(manifest.format)} is not runnable here; ` +
        `expected one of: ${[...RUNNABLE_FORMATS].join(", ")}`,
    );
  }
  return manifest;
}

function entryArtifact(manifest: Manifest): string {
  const name =
    manifest.format === "js-replay"
      ? manifest.artifacts["replay"]
      : manifest.artifacts["loader"];
  if (!name) {
    throw new LoadError("manifest names no runnable entry artifact");
  }
  return name;
}

/** Execute the bundle's entry and report calls, memory hash, and traps. */
export async function runBundle(bundleDir: string): Promise<RunReport> {
  const dir = resolve(bundleDir);
  const manifest = loadManifest(dir);
  const entryPath = join(dir, entryArtifact(manifest));
  if (!existsSync(entryPath)) {
    throw new LoadError(`entry artifact missing: ${entryPath}`);
  }
  for (const artifact of Object.values(manifest.artifacts)) {
    if (!existsSync(join(dir, artifact))) {
      throw new LoadError(`artifact missing: ${artifact}`);
    }
  }

  const mod = await import(pathToFileURL(entryPath).href);
  const run = mod.run ?? mod.default?.run ?? mod.default;
  if (typeof run !== "function") {
    throw new LoadError(`${entryPath} does not export run()`);
  }

  const calls: ExportCallRecord[] = [];
  let trap: string | null = null;
  let exportsObj: WebAssembly.Exports | null = null;
  try {
    const outcome = await run({
      onExportCall: (record: ExportCallRecord) => calls.push(record),
    });
    exportsObj = outcome?.exports ?? null;
  } catch (err) {
    trap = err instanceof Error ? `${err.name}: ${err.message}` : String(err);
  }

  let memoryHash: string | null = null;
  if (trap === null && manifest.memory_export && exportsObj) {
    const memory = exportsObj[manifest.memory_export] as WebAssembly.Memory;
    memoryHash = createHash("sha256")
      .update(new Uint8Array(memory.buffer))
      .digest("hex");
  }
  return { calls, memoryHash, trap };
}
