/**
 * annotate-adapter convert --format corenlp --input docs.jsonl --out corpus.jsonl
 *                          [--report report.json]
 *
 * Input: one JSON record per line, each {"instance": {...}, "document": {...}}
 * where instance carries the engine's tokenized fields and document is the
 * pipeline's native output. Output: corpus JSON lines accepted by the
 * engine's validator, plus a conversion report.
 *
 * Exit codes: 0 success, 1 usage, 2 invalid input.
 */

import * as fs from "node:fs";

import { convertBatch } from "./convert.js";
import { READERS, ReaderError } from "./readers/corenlp.js";
import type { PipelineDocument, SourceInstance } from "./types.js";

interface Args {
  format: string;
  input: string;
  out: string;
  report?: string;
}

function parseArgs(argv: string[]): Args {
  if (argv[0] !== "convert") {
    throw new UsageError("expected subcommand: convert");
  }
  const args: Partial<Args> = { format: "corenlp" };
  for (let i = 1; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (value === undefined) throw new UsageError(`missing value for ${key}`);
    if (key === "--format") args.format = value;
    else if (key === "--input") args.input = value;
    else if (key === "--out") args.out = value;
    else if (key === "--report") args.report = value;
    else throw new UsageError(`unknown flag ${key}`);
  }
  if (!args.input || !args.out) {
    throw new UsageError("--input and --out are required");
  }
  return args as Args;
}

class UsageError extends Error {}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (e) {
    if (e instanceof UsageError) {
      console.error(`usage error: ${e.message}`);
      console.error(
        "usage: annotate-adapter convert --input docs.jsonl --out corpus.jsonl" +
          " [--format corenlp] [--report report.json]",
      );
      return 1;
    }
    throw e;
  }
  const reader = READERS[args.format];
  if (reader === undefined) {
    console.error(
      `usage error: unknown format ${args.format}; supported: ${Object.keys(READERS).join(", ")}`,
    );
    return 1;
  }
  let records: { document: PipelineDocument; instance: SourceInstance }[];
  try {
    const text = fs.readFileSync(args.input, "utf-8");
    records = text
      .split("\n")
      .filter((line) => line.trim() !== "")
      .map((line, i) => {
        const obj = JSON.parse(line) as { instance?: unknown; document?: unknown };
        if (!obj.instance || !obj.document) {
          throw new ReaderError(`line ${i + 1}: expected {instance, document}`);
        }
        return {
          instance: obj.instance as SourceInstance,
          document: reader(obj.document),
        };
      });
  } catch (e) {
    console.error(`input error: ${(e as Error).message}`);
    return 2;
  }
  const { lines, report } = convertBatch(records);
  fs.writeFileSync(
    args.out,
    lines.map((l) => JSON.stringify(l)).join("\n") + (lines.length ? "\n" : ""),
  );
  if (args.report) {
    fs.writeFileSync(args.report, JSON.stringify(report, null, 2) + "\n");
  }
  console.log(
    `converted ${report.converted}, skipped ${report.skipped},` +
      ` mentions dropped ${report.mentionsDropped}`,
  );
  for (const [id, reason] of Object.entries(report.skipReasons)) {
    console.error(`skipped ${id}: ${reason}`);
  }
  return 0;
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
