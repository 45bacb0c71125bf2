/**
 * fast_scan: sharded parallel scanning with a single merge stage.
 *
 * Shard workers share nothing; each partial result flows back over the
 * worker channel and merges associatively, so the output is identical for
 * any shard count or worker width.
 */

import * as os from "node:os";
import { Worker } from "node:worker_threads";

import { Format } from "./records.js";
import { scanGzip, scanRange } from "./scan.js";
import { ShardTask, planShards } from "./shard.js";
import { DEFAULT_LEXICON, ScanResult, emptyStats, merge } from "./stats.js";

export interface FastScanOptions {
  shards?: number;
  workers?: number;
  format?: Format | "auto";
  lexicon?: string[];
}

function runTaskInline(task: ShardTask, terms: Set<string>): ScanResult {
  return task.gzip
    ? scanGzip(task.path, task.format, terms)
    : scanRange(task.path, task.start, task.end, task.format, terms);
}

export async function fastScan(files: string[],
                               options: FastScanOptions = {}): Promise<ScanResult> {
  const lexicon = options.lexicon ?? DEFAULT_LEXICON;
  const workers = Math.max(1, options.workers ?? Math.min(8, os.cpus().length));
  const shards = Math.max(1, options.shards ?? workers);
  const tasks = planShards(files, shards, options.format ?? "auto");

  if (tasks.length === 0) return emptyStats();
  if (workers === 1 || tasks.length === 1) {
    const terms = new Set(lexicon);
    return tasks.map((t) => runTaskInline(t, terms)).reduce(merge, emptyStats());
  }

  const workerUrl = new URL("./worker.js", import.meta.url);
  const pool = Array.from({ length: Math.min(workers, tasks.length) },
                          () => new Worker(workerUrl));
  let next = 0;
  let total = emptyStats();

  await Promise.all(pool.map((worker) => new Promise<void>((resolve, reject) => {
    const feed = () => {
      if (next >= tasks.length) {
        worker.postMessage("done");
        resolve();
        return;
      }
      worker.postMessage({ task: tasks[next++], lexicon });
    };
    worker.on("message", (partial: ScanResult) => {
      total = merge(total, partial);
      feed();
    });
    worker.on("error", reject);
    feed();
  }))).finally(() => {
    for (const worker of pool) void worker.terminate();
  });

  return total;
}
