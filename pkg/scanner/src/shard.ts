/** Shard planning: raw byte ranges per file; the scanner snaps them to
 * record boundaries at read time, so ranges only need to cover the file. */

import * as fs from "node:fs";

import { Format, detectFormat } from "./records.js";

export interface ShardTask {
  path: string;
  format: Format;
  start: number;
  end: number;
  gzip: boolean;
}

export function planShards(files: string[], shardsPerFile: number,
                           format: Format | "auto" = "auto"): ShardTask[] {
  if (shardsPerFile < 1) throw new Error("shard count must be >= 1");
  const tasks: ShardTask[] = [];
  for (const path of files) {
    const fmt = format === "auto" ? detectFormat(path) : format;
    if (path.endsWith(".gz")) {
      // gzip streams cannot be byte-sharded
      tasks.push({ path, format: fmt, start: 0, end: -1, gzip: true });
      continue;
    }
    const size = fs.statSync(path).size;
    if (size === 0) continue;
    const n = Math.min(shardsPerFile, size);
    const step = Math.ceil(size / n);
    for (let start = 0; start < size; start += step) {
      tasks.push({ path, format: fmt, start, end: Math.min(size, start + step), gzip: false });
    }
  }
  return tasks;
}
