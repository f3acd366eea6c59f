/**
 * RunReport: the observable behavior of a replay bundle run.
 *
 * Calls into the original module's exports are logged in completion
 * order with every value as a hex bit pattern, so reports produced by
 * different output formats (and by the embedded-interpreter runner on
 * the self-contained format) compare bitwise.
 */

export interface ReportValue {
  kind: "i32" | "i64" | "f32" | "f64";
  bits: string;
}

export interface ExportCallRecord {
  name: string;
  args: ReportValue[];
  results: ReportValue[];
}

export interface RunReport {
  calls: ExportCallRecord[];
  memoryHash: string | null;
  trap: string | null;
}

function valueEq(a: ReportValue, b: ReportValue): boolean {
  return a.kind === b.kind && a.bits === b.bits;
}

function callEq(a: ExportCallRecord, b: ExportCallRecord): boolean {
  return (
    a.name === b.name &&
    a.args.length === b.args.length &&
    a.results.length === b.results.length &&
    a.args.every((v, i) => valueEq(v, b.args[i])) &&
    a.results.every((v, i) => valueEq(v, b.results[i]))
  );
}

/** Empty iff the reports describe identical observable behavior. */
export function compareReports(a: RunReport, b: RunReport): string[] {
  const diffs: string[] = [];
  if ((a.trap === null) !== (b.trap === null)) {
    diffs.push(`trap: ${a.trap} != ${b.trap}`);
  }
  if (a.memoryHash !== b.memoryHash) {
    diffs.push(`memoryHash: ${a.memoryHash} != ${b.memoryHash}`);
  }
  if (a.calls.length !== b.calls.length) {
    diffs.push(`call count: ${a.calls.length} != ${b.calls.length}`);
  }
  const n = Math.min(a.calls.length, b.calls.length);
  for (let i = 0; i < n; i++) {
    if (!callEq(a.calls[i], b.calls[i])) {
      diffs.push(
        `call ${i}: ${JSON.stringify(a.calls[i])} != ${JSON.stringify(b.calls[i])}`,
      );
      break;
    }
  }
  return diffs;
}
