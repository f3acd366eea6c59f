#!/usr/bin/env node
/**
 * CLI: `run-bundle <dir> [--report out.json]` executes a bundle and
 * emits its RunReport; `compare <a.json> <b.json>` diffs two reports.
 * Exit codes: 0 success / identical, 1 load or execution failure,
 * 2 reports differ.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { compareReports, type RunReport } from "./report.js";
import { LoadError, runBundle } from "./runner.js";

function usage(): never {
  console.error(
    "usage: wrr-js-harness run-bundle <bundle-dir> [--report out.json]\n" +
      "       wrr-js-harness compare <a.json> <b.json>",
  );
  process.exit(1);
}

async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  if (command === "run-bundle") {
    const dir = rest.find((a) => !a.startsWith("--"));
    if (!dir) usage();
    const reportIdx = rest.indexOf("--report");
    const report = await runBundle(dir);
    const text = JSON.stringify(report, null, 2) + "\n";
    if (reportIdx >= 0) {
      const out = rest[reportIdx + 1];
      if (!out) usage();
      writeFileSync(out, text);
    } else {
      process.stdout.write(text);
    }
    return 0;
  }
  if (command === "compare") {
    const [aPath, bPath] = rest;
    if (!aPath || !bPath) usage();
    const a = JSON.parse(readFileSync(aPath, "utf-8")) as RunReport;
    const b = JSON.parse(readFileSync(bPath, "utf-8")) as RunReport;
    const diffs = compareReports(a, b);
    for (const diff of diffs) {
      console.error(diff);
    }
    return diffs.length === 0 ? 0 : 2;
  }
  usage();
}

main(process.argv.slice(2))
  .then((code) => process.exit(code))
  .catch((err) => {
    if (err instanceof LoadError) {
      console.error(`load error: ${err.message}`);
    } else {
      console.error(err);
    }
    process.exit(1);
  });
