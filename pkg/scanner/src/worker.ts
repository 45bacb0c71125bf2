/** Worker-thread entry: scans assigned shards, posts partial counters. */

import { parentPort } from "node:worker_threads";

import { ShardTask } from "./shard.js";
import { scanGzip, scanRange } from "./scan.js";
import { ScanResult } from "./stats.js";

if (!parentPort) throw new Error("must run as a worker thread");

parentPort.on("message", (msg: { task: ShardTask; lexicon: string[] } | "done") => {
  if (msg === "done") {
    process.exit(0);
  }
  const { task, lexicon } = msg;
  const terms = new Set(lexicon);
  const partial: ScanResult = task.gzip
    ? scanGzip(task.path, task.format, terms)
    : scanRange(task.path, task.start, task.end, task.format, terms);
  parentPort!.postMessage(partial);
});
