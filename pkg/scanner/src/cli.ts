#!/usr/bin/env node
/**
 * Usage:
 *   caption-neg-scanner --input corpus.jsonl [corpus2.tsv ...]
 *                       [--workers N] [--shards N]
 *                       [--format auto|jsonl|tsv]
 *                       [--lexicon no,not,without]
 *                       [--output report.json]
 *
 * Prints the stats report JSON (same schema as the reference scanner) to
 * stdout and optionally writes it to --output.
 */

import * as fs from "node:fs";
import { performance } from "node:perf_hooks";

import { fastScan } from "./parallel.js";
import { Format } from "./records.js";
import { parseLexicon, toReport } from "./stats.js";

interface Args {
  inputs: string[];
  workers?: number;
  shards?: number;
  format: Format | "auto";
  lexicon?: string;
  output?: string;
  timing: boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { inputs: [], format: "auto", timing: false };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      if (i + 1 >= argv.length) throw new Error(`missing value for ${flag}`);
      return argv[++i];
    };
    switch (flag) {
      case "--input":
        args.inputs.push(next());
        while (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
          args.inputs.push(argv[++i]);
        }
        break;
      case "--workers":
        args.workers = Number(next());
        break;
      case "--shards":
        args.shards = Number(next());
        break;
      case "--format":
        args.format = next() as Format | "auto";
        break;
      case "--lexicon":
        args.lexicon = next();
        break;
      case "--output":
        args.output = next();
        break;
      case "--timing":
        args.timing = true;
        break;
      default:
        throw new Error(`unknown flag: ${flag}`);
    }
  }
  if (args.inputs.length === 0) throw new Error("--input is required");
  if (!["auto", "jsonl", "tsv"].includes(args.format)) {
    throw new Error(`bad --format: ${args.format}`);
  }
  return args;
}

async function main(): Promise<number> {
  let args: Args;
  try {
    args = parseArgs(process.argv.slice(2));
  } catch (err) {
    console.error(`usage: ${(err as Error).message}`);
    return 2;
  }
  for (const path of args.inputs) {
    if (!fs.existsSync(path)) {
      console.error(`input-not-found: ${path}`);
      return 1;
    }
  }
  const lexicon = parseLexicon(args.lexicon);
  const started = performance.now();
  const result = await fastScan(args.inputs, {
    workers: args.workers,
    shards: args.shards,
    format: args.format,
    lexicon: [...lexicon],
  });
  const elapsed = (performance.now() - started) / 1000;
  const report = toReport(result, lexicon);
  const doc = JSON.stringify(report, null, 2);
  console.log(doc);
  if (args.timing) console.error(`scan_seconds: ${elapsed.toFixed(3)}`);
  if (args.output) fs.writeFileSync(args.output, doc + "\n", "utf8");
  return 0;
}

main().then((code) => {
  process.exitCode = code;
});
