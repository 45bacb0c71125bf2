/**
 * Byte-range scanning. A shard owns every record whose line START falls
 * inside [start, end): shards beginning past 0 skip forward over the
 * partial first line, and every shard runs past its end to finish the
 * record it started. Together the shards of a file count each record
 * exactly once, so partials merge into the same totals a single pass
 * produces.
 *
 * Lines are processed at the byte level where that is provably safe:
 * UTF-8 never embeds ASCII byte values inside multibyte sequences, so
 * structural bytes (quotes, braces, tabs, CR) can be located before
 * decoding, and only the caption text span is decoded. Anything outside
 * the fast shapes falls back to a full decode + JSON parse with the same
 * verdicts as the reference.
 */

import * as fs from "node:fs";
import * as zlib from "node:zlib";

import { Format, parseJsonlText } from "./records.js";
import { CompiledLexicon, ScanResult, compileLexicon, countCaption,
         countCaptionAsciiBytes, emptyStats } from "./stats.js";

const CHUNK = 1 << 20;

const BRACE_OPEN = 0x7b;
const BRACE_CLOSE = 0x7d;
const QUOTE = 0x22;
const BACKSLASH = 0x5c;
const TAB = 0x09;
const CR = 0x0d;

// '{"id":"' and ',"text":"'
const ID_PREFIX = [0x7b, 0x22, 0x69, 0x64, 0x22, 0x3a, 0x22];
const TEXT_MARKER = [0x2c, 0x22, 0x74, 0x65, 0x78, 0x74, 0x22, 0x3a, 0x22];

function isAsciiBlankByte(b: number): boolean {
  return b === 0x20 || (b >= 0x09 && b <= 0x0d);
}

// span of the last successful fastExtractBytes call (scratch, no allocation)
const span = { start: 0, end: 0, ascii: true };

/** Fast lane over bytes for {"id":"...","text":"..."} without escapes.
 * On success fills `span` with the text byte range and whether it is pure
 * ASCII; returns false to fall back to a full parse. */
function fastExtractBytes(data: Buffer, off: number, end: number): boolean {
  if (end - off < ID_PREFIX.length + TEXT_MARKER.length + 2) return false;
  for (let k = 0; k < ID_PREFIX.length; k++) {
    if (data[off + k] !== ID_PREFIX[k]) return false;
  }
  let i = off + ID_PREFIX.length;
  while (i < end) {
    const b = data[i];
    if (b === QUOTE) break;
    if (b === BACKSLASH || b < 0x20) return false;
    i++;
  }
  i++; // past the id's closing quote
  if (i + TEXT_MARKER.length >= end) return false;
  for (let k = 0; k < TEXT_MARKER.length; k++) {
    if (data[i + k] !== TEXT_MARKER[k]) return false;
  }
  const textStart = i + TEXT_MARKER.length;
  let j = textStart;
  let ascii = true;
  while (j < end) {
    const b = data[j];
    if (b === QUOTE) break;
    if (b === BACKSLASH || b < 0x20) return false;
    if (b >= 0x80) ascii = false;
    j++;
  }
  // the first quote must close the text, then only "}" may follow
  if (j !== end - 2 || data[end - 1] !== BRACE_CLOSE) return false;
  span.start = textStart;
  span.end = j;
  span.ascii = ascii;
  return true;
}

function scanLineBytes(data: Buffer, off: number, lineEnd: number, fmt: Format,
                       lexicon: CompiledLexicon, into: ScanResult): void {
  let end = lineEnd;
  while (end > off && data[end - 1] === CR) end--; // mirror the reference rstrip

  let blank = true;
  for (let k = off; k < end; k++) {
    if (!isAsciiBlankByte(data[k])) {
      blank = false;
      break;
    }
  }
  if (blank) return;

  if (fmt === "jsonl" && fastExtractBytes(data, off, end)) {
    if (span.ascii) {
      countCaptionAsciiBytes(data, span.start, span.end, lexicon, into);
    } else {
      countCaption(data.toString("utf8", span.start, span.end), lexicon, into);
    }
    return;
  }

  let text: string | null;
  if (fmt === "jsonl") {
    text = parseJsonlText(data.toString("utf8", off, end));
  } else {
    let tab = off;
    while (tab < end && data[tab] !== TAB) tab++;
    if (tab < end) {
      let ascii = true;
      for (let k = tab + 1; k < end; k++) {
        if (data[k] >= 0x80) {
          ascii = false;
          break;
        }
      }
      if (ascii) {
        countCaptionAsciiBytes(data, tab + 1, end, lexicon, into);
        return;
      }
      text = data.toString("utf8", tab + 1, end);
    } else {
      text = null;
    }
  }
  if (text === null) {
    into.skipped += 1;
    return;
  }
  countCaption(text, lexicon, into);
}

/** Scan a whole in-memory buffer (used for gzip streams and tests). */
export function scanBuffer(buf: Buffer, fmt: Format, lexicon: Set<string>): ScanResult {
  const compiled = compileLexicon(lexicon);
  const result = emptyStats();
  let pos = 0;
  while (pos < buf.length) {
    let nl = buf.indexOf(0x0a, pos);
    if (nl < 0) nl = buf.length;
    scanLineBytes(buf, pos, nl, fmt, compiled, result);
    pos = nl + 1;
  }
  return result;
}

/** Scan one byte-range shard of a plain (non-gzip) file. */
export function scanRange(path: string, start: number, end: number, fmt: Format,
                          lexicon: Set<string>): ScanResult {
  const compiled = compileLexicon(lexicon);
  const result = emptyStats();
  const fd = fs.openSync(path, "r");
  try {
    const size = fs.fstatSync(fd).size;
    let pos = start;

    if (start > 0) {
      const before = Buffer.alloc(1);
      fs.readSync(fd, before, 0, 1, start - 1);
      if (before[0] !== 0x0a) {
        // mid-record: the partial first line belongs to the previous shard
        pos = findNewline(fd, start, size);
        if (pos < 0) return result; // no newline until EOF: nothing starts here
        pos += 1;
      }
    }
    if (pos >= end) return result; // entire range sat inside one record

    const chunk = Buffer.alloc(CHUNK);
    let carry = Buffer.alloc(0);
    let filePos = pos;
    let done = false;
    while (!done && filePos < size) {
      const n = fs.readSync(fd, chunk, 0, CHUNK, filePos);
      if (n <= 0) break;
      const data = carry.length
        ? Buffer.concat([carry, chunk.subarray(0, n)])
        : chunk.subarray(0, n);
      const lineStartFile = filePos - carry.length;
      let off = 0;
      while (true) {
        const nl = data.indexOf(0x0a, off);
        if (nl < 0) break;
        scanLineBytes(data, off, nl, fmt, compiled, result);
        off = nl + 1;
        if (lineStartFile + off >= end) {
          done = true; // next record starts at/after the shard end
          break;
        }
      }
      carry = done ? Buffer.alloc(0) : Buffer.from(data.subarray(off));
      filePos += n;
    }
    if (!done && carry.length) {
      // final record without a trailing newline
      scanLineBytes(carry, 0, carry.length, fmt, compiled, result);
    }
    return result;
  } finally {
    fs.closeSync(fd);
  }
}

function findNewline(fd: number, from: number, size: number): number {
  const probe = Buffer.alloc(1 << 16);
  let pos = from;
  while (pos < size) {
    const n = fs.readSync(fd, probe, 0, probe.length, pos);
    if (n <= 0) return -1;
    const nl = probe.subarray(0, n).indexOf(0x0a);
    if (nl >= 0) return pos + nl;
    pos += n;
  }
  return -1;
}

/** Scan a gzip file as one stream (byte ranges are meaningless there). */
export function scanGzip(path: string, fmt: Format, lexicon: Set<string>): ScanResult {
  const inflated = zlib.gunzipSync(fs.readFileSync(path));
  return scanBuffer(inflated, fmt, lexicon);
}
