/**
 * Tokenization rules shared with the reference scanner. Any change here
 * breaks the equivalence contract, so the rules are spelled out:
 *
 *   1. split on the whitespace set below (the exact set CPython's
 *      str.split() treats as whitespace),
 *   2. strip leading/trailing code points of Unicode category P* from each
 *      token (interior punctuation stays),
 *   3. drop tokens that became empty,
 *   4. lowercase with the Unicode default lowercase mapping.
 *
 * Two implementations: tokenize() materializes the tokens (API and tests);
 * countTokens() is the allocation-free hot path used by the scanner, with
 * an ASCII fast lane and a slow lane that defers to the same rules.
 */

// Whitespace code points recognized by the reference tokenizer.
const WHITESPACE_LIST = [
  0x09, 0x0a, 0x0b, 0x0c, 0x0d, 0x1c, 0x1d, 0x1e, 0x1f, 0x20,
  0x85, 0xa0, 0x1680,
  0x2000, 0x2001, 0x2002, 0x2003, 0x2004, 0x2005, 0x2006, 0x2007,
  0x2008, 0x2009, 0x200a, 0x2028, 0x2029, 0x202f, 0x205f, 0x3000,
];

const WS_ASCII = new Uint8Array(128);
for (const cp of WHITESPACE_LIST) {
  if (cp < 128) WS_ASCII[cp] = 1;
}

function isSpace(cp: number): boolean {
  if (cp < 128) return WS_ASCII[cp] === 1;
  if (cp < 0x1680) return cp === 0x85 || cp === 0xa0;
  if (cp <= 0x200a) return cp >= 0x2000 || cp === 0x1680;
  return (cp === 0x2028 || cp === 0x2029 || cp === 0x202f ||
          cp === 0x205f || cp === 0x3000);
}

const PUNCT_RE = /\p{P}/u;
const PUNCT_ASCII = new Uint8Array(128);
for (let cp = 0; cp < 128; cp++) {
  PUNCT_ASCII[cp] = PUNCT_RE.test(String.fromCharCode(cp)) ? 1 : 0;
}
const punctCache = new Map<number, boolean>();

function isPunct(cp: number): boolean {
  if (cp < 128) return PUNCT_ASCII[cp] === 1;
  let hit = punctCache.get(cp);
  if (hit === undefined) {
    hit = PUNCT_RE.test(String.fromCodePoint(cp));
    punctCache.set(cp, hit);
  }
  return hit;
}

/** Bounds of the next token: skips whitespace from `from`, then strips edge
 * punctuation by code point. Returns [start, end, nextScanPos] with
 * start === end for a token that stripped to nothing. */
function nextToken(text: string, from: number): [number, number, number] {
  const n = text.length;
  let i = from;
  while (i < n && isSpace(text.charCodeAt(i))) i++;
  if (i >= n) return [n, n, n];
  let j = i;
  while (j < n && !isSpace(text.charCodeAt(j))) j++;

  let start = i;
  let end = j;
  while (start < end) {
    const cp = text.codePointAt(start)!;
    if (!isPunct(cp)) break;
    start += cp > 0xffff ? 2 : 1;
  }
  while (end > start) {
    // locate the code point ending at `end` (step over a surrogate pair)
    let back = end - 1;
    const unit = text.charCodeAt(back);
    if (unit >= 0xdc00 && unit <= 0xdfff && back > start) {
      const prev = text.charCodeAt(back - 1);
      if (prev >= 0xd800 && prev <= 0xdbff) back -= 1;
    }
    const cp = text.codePointAt(back)!;
    if (!isPunct(cp)) break;
    end = back;
  }
  return [start, end, j];
}

export function tokenize(text: string): string[] {
  const tokens: string[] = [];
  let pos = 0;
  const n = text.length;
  while (pos < n) {
    const [start, end, next] = nextToken(text, pos);
    if (end > start) tokens.push(text.slice(start, end).toLowerCase());
    pos = next;
  }
  return tokens;
}

/** Lexicon compiled for the counting fast path. */
export interface CompiledLexicon {
  terms: Set<string>;
  byLength: (number[][] | undefined)[]; // ascii char codes per term, indexed by length
  maxLen: number;
}

export function compileLexicon(terms: Set<string>): CompiledLexicon {
  let maxLen = 0;
  for (const term of terms) maxLen = Math.max(maxLen, term.length);
  const byLength: (number[][] | undefined)[] = new Array(maxLen + 1).fill(undefined);
  for (const term of terms) {
    const bucket = byLength[term.length] ?? (byLength[term.length] = []);
    bucket.push([...term].map((ch) => ch.codePointAt(0)!));
  }
  return { terms, byLength, maxLen };
}

/** Result cells for countTokens; avoids allocating a tuple per caption. */
export const counted = { words: 0, matched: 0 };

/** Token and match counts, no token materialization (fills `counted`).
 *
 * ASCII tokens compare against the lexicon with inline case lowering;
 * everything else falls back to slice + toLowerCase. Lowercasing never
 * shortens a string, so tokens longer than the longest term cannot match
 * and skip the comparison entirely.
 */
export function countTokens(text: string, lexicon: CompiledLexicon): void {
  let words = 0;
  let matched = 0;
  let pos = 0;
  const n = text.length;
  while (pos < n) {
    // the body of nextToken, inlined for the hot path
    while (pos < n) {
      const u = text.charCodeAt(pos);
      if (u < 128 ? WS_ASCII[u] === 0 : !isSpace(u)) break;
      pos++;
    }
    if (pos >= n) break;
    let j = pos;
    let ascii = true;
    while (j < n) {
      const u = text.charCodeAt(j);
      if (u < 128) {
        if (WS_ASCII[u] === 1) break;
      } else {
        if (isSpace(u)) break;
        ascii = false;
      }
      j++;
    }
    let start = pos;
    let end = j;
    pos = j;
    while (start < end) {
      let cp = text.charCodeAt(start);
      let width = 1;
      if (cp >= 0xd800 && cp <= 0xdbff && start + 1 < end) {
        const low = text.charCodeAt(start + 1);
        if (low >= 0xdc00 && low <= 0xdfff) {
          cp = 0x10000 + ((cp - 0xd800) << 10) + (low - 0xdc00);
          width = 2;
        }
      }
      if (cp < 128 ? PUNCT_ASCII[cp] === 0 : !isPunct(cp)) break;
      start += width;
    }
    while (end > start) {
      let back = end - 1;
      let cp = text.charCodeAt(back);
      if (cp >= 0xdc00 && cp <= 0xdfff && back > start) {
        const high = text.charCodeAt(back - 1);
        if (high >= 0xd800 && high <= 0xdbff) {
          cp = 0x10000 + ((high - 0xd800) << 10) + (cp - 0xdc00);
          back -= 1;
        }
      }
      if (cp < 128 ? PUNCT_ASCII[cp] === 0 : !isPunct(cp)) break;
      end = back;
    }

    if (end <= start) continue;
    words++;
    const len = end - start;
    if (len > lexicon.maxLen) continue;

    // `ascii` was tracked over the pre-strip span; tokens that were only
    // non-ascii in their (now stripped) edges re-qualify here
    if (!ascii) {
      ascii = true;
      for (let k = start; k < end; k++) {
        if (text.charCodeAt(k) >= 128) {
          ascii = false;
          break;
        }
      }
    }
    if (ascii) {
      const bucket = lexicon.byLength[len];
      if (!bucket) continue;
      outer: for (const codes of bucket) {
        for (let k = 0; k < len; k++) {
          let c = text.charCodeAt(start + k);
          if (c >= 65 && c <= 90) c += 32;
          if (c !== codes[k]) continue outer;
        }
        matched++;
        break;
      }
    } else if (lexicon.terms.has(text.slice(start, end).toLowerCase())) {
      matched++;
    }
  }
  counted.words = words;
  counted.matched = matched;
}

/** Byte-lane twin of countTokens for spans known to be pure ASCII: same
 * rules, no string materialization at all. */
export function countTokensAsciiBytes(data: Uint8Array, from: number, to: number,
                                      lexicon: CompiledLexicon): void {
  let words = 0;
  let matched = 0;
  let pos = from;
  while (pos < to) {
    while (pos < to && WS_ASCII[data[pos]] === 1) pos++;
    if (pos >= to) break;
    let j = pos;
    while (j < to && WS_ASCII[data[j]] === 0) j++;
    let start = pos;
    let end = j;
    pos = j;
    while (start < end && PUNCT_ASCII[data[start]] === 1) start++;
    while (end > start && PUNCT_ASCII[data[end - 1]] === 1) end--;
    if (end <= start) continue;
    words++;
    const len = end - start;
    if (len > lexicon.maxLen) continue;
    const bucket = lexicon.byLength[len];
    if (!bucket) continue;
    outer: for (const codes of bucket) {
      for (let k = 0; k < len; k++) {
        let c = data[start + k];
        if (c >= 65 && c <= 90) c += 32;
        if (c !== codes[k]) continue outer;
      }
      matched++;
      break;
    }
  }
  counted.words = words;
  counted.matched = matched;
}
