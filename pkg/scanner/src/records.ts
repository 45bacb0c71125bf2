/**
 * Record parsing with skip semantics identical to the reference scanner:
 * blank lines (ASCII whitespace only) are ignored entirely; structurally
 * bad lines count as skipped; valid records contribute their text.
 */

const BLANK_RE = /^[ \t\r\n\f\v]*$/;

export type Format = "jsonl" | "tsv";

export function detectFormat(path: string): Format {
  let name = path;
  if (name.endsWith(".gz")) name = name.slice(0, -3);
  return name.endsWith(".tsv") ? "tsv" : "jsonl";
}

export function isBlank(line: string): boolean {
  return BLANK_RE.test(line);
}

const TEXT_MARKER = ',"text":"';

/** Fast lane for the exact shape {"id":"...","text":"..."} with no escape
 * sequences. Only accepts lines it can prove a full JSON parse would accept
 * with the same text; everything else returns undefined and falls back.
 */
function fastExtract(line: string): string | undefined {
  if (!line.startsWith('{"id":"')) return undefined;
  const n = line.length;
  let i = 7;
  while (i < n) {
    const u = line.charCodeAt(i);
    if (u === 0x22) break; // closing quote of the id
    if (u === 0x5c || u < 0x20) return undefined; // escapes: full parse
    i++;
  }
  if (i >= n) return undefined;
  i++;
  if (!line.startsWith(TEXT_MARKER, i)) return undefined;
  let j = i + TEXT_MARKER.length;
  while (j < n) {
    const u = line.charCodeAt(j);
    if (u === 0x22) break;
    if (u === 0x5c || u < 0x20) return undefined;
    j++;
  }
  // the first unescaped quote must close the text, followed only by "}"
  if (j !== n - 2 || line.charCodeAt(n - 1) !== 0x7d) return undefined;
  return line.slice(i + TEXT_MARKER.length, j);
}

/** null = malformed (counted as skipped). */
export function parseJsonlText(line: string): string | null {
  const fast = fastExtract(line);
  if (fast !== undefined) return fast;
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) return null;
  const rec = obj as Record<string, unknown>;
  const id = rec["id"];
  if (!(typeof id === "string" || typeof id === "number")) return null;
  const text = rec["text"];
  if (typeof text !== "string") return null;
  return text;
}

export function parseTsvText(line: string): string | null {
  const tab = line.indexOf("\t");
  if (tab < 0) return null;
  return line.slice(tab + 1);
}

/** Strip the line terminator remnants the same way the reference does. */
export function stripLineEnd(line: string): string {
  let end = line.length;
  while (end > 0 && line.charCodeAt(end - 1) === 0x0a) end--;
  while (end > 0 && line.charCodeAt(end - 1) === 0x0d) end--;
  return end === line.length ? line : line.slice(0, end);
}
