/** Counters, shard merge, and the shared report schema. */

import { CompiledLexicon, compileLexicon, countTokens, countTokensAsciiBytes,
         counted } from "./tokenize.js";

export { CompiledLexicon, compileLexicon } from "./tokenize.js";

export const DEFAULT_LEXICON = ["no", "not", "without"];

export interface NegationStats {
  caption_total: number;
  caption_neg: number;
  word_total: number;
  word_neg: number;
}

export interface ScanResult extends NegationStats {
  skipped: number;
}

export function emptyStats(): ScanResult {
  return { caption_total: 0, caption_neg: 0, word_total: 0, word_neg: 0, skipped: 0 };
}

/** Associative merge; the full-corpus result never depends on sharding. */
export function merge(a: ScanResult, b: ScanResult): ScanResult {
  return {
    caption_total: a.caption_total + b.caption_total,
    caption_neg: a.caption_neg + b.caption_neg,
    word_total: a.word_total + b.word_total,
    word_neg: a.word_neg + b.word_neg,
    skipped: a.skipped + b.skipped,
  };
}

export function parseLexicon(spec?: string): Set<string> {
  if (!spec) return new Set(DEFAULT_LEXICON);
  const terms = spec
    .split(",")
    .map((t) => t.trim().toLowerCase())
    .filter((t) => t.length > 0);
  if (terms.length === 0) throw new Error("lexicon must not be empty");
  for (const term of terms) {
    if (/\s/.test(term)) throw new Error(`lexicon term must not contain whitespace: ${term}`);
  }
  return new Set(terms);
}

export function countCaption(text: string, lexicon: Set<string> | CompiledLexicon,
                             into: ScanResult): void {
  const compiled = lexicon instanceof Set ? compileLexicon(lexicon) : lexicon;
  countTokens(text, compiled);
  into.caption_total += 1;
  into.word_total += counted.words;
  into.word_neg += counted.matched;
  if (counted.matched > 0) into.caption_neg += 1;
}

/** Byte-lane counterpart for pure-ASCII caption spans. */
export function countCaptionAsciiBytes(data: Uint8Array, from: number, to: number,
                                       lexicon: CompiledLexicon, into: ScanResult): void {
  countTokensAsciiBytes(data, from, to, lexicon);
  into.caption_total += 1;
  into.word_total += counted.words;
  into.word_neg += counted.matched;
  if (counted.matched > 0) into.caption_neg += 1;
}

/** Six stats fields plus skip count and lexicon echo, matching the
 * reference report JSON field-for-field. */
export function toReport(result: ScanResult, lexicon: Set<string>) {
  return {
    caption_total: result.caption_total,
    caption_neg: result.caption_neg,
    word_total: result.word_total,
    word_neg: result.word_neg,
    caption_ratio: result.caption_total ? result.caption_neg / result.caption_total : 0.0,
    word_ratio: result.word_total ? result.word_neg / result.word_total : 0.0,
    skipped: result.skipped,
    lexicon: [...lexicon],
  };
}
