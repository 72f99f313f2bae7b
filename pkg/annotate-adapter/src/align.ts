/**
 * Token alignment between a pipeline's tokenization and the corpus tokens.
 *
 * Policy: exact match first; otherwise character-offset alignment over the
 * whitespace-free concatenation of both streams. A pipeline token aligns to
 * the single corpus token that fully contains its character range; tokens
 * straddling a corpus boundary stay unaligned (null) and whatever references
 * them is dropped by the converter.
 */

export class AlignmentError extends Error {}

export interface Alignment {
  /** pipeline token index -> corpus token index, or null for straddlers */
  map: (number | null)[];
  exact: boolean;
}

export function alignTokens(pipeline: string[], corpus: string[]): Alignment {
  if (
    pipeline.length === corpus.length &&
    pipeline.every((t, i) => t === corpus[i])
  ) {
    return { map: pipeline.map((_t, i) => i), exact: true };
  }
  const pipeChars = pipeline.join("");
  const corpusChars = corpus.join("");
  if (pipeChars !== corpusChars) {
    throw new AlignmentError(
      `character streams differ: pipeline ${JSON.stringify(
        pipeChars.slice(0, 40),
      )}... vs corpus ${JSON.stringify(corpusChars.slice(0, 40))}...`,
    );
  }
  // character start of every corpus token
  const corpusStarts: number[] = [];
  let pos = 0;
  for (const tok of corpus) {
    corpusStarts.push(pos);
    pos += tok.length;
  }
  const within = (charPos: number): number => {
    // index of the corpus token containing charPos
    let lo = 0;
    let hi = corpus.length - 1;
    while (lo < hi) {
      const mid = (lo + hi + 1) >> 1;
      if (corpusStarts[mid] <= charPos) lo = mid;
      else hi = mid - 1;
    }
    return lo;
  };
  const map: (number | null)[] = [];
  let cursor = 0;
  for (const tok of pipeline) {
    const startTok = within(cursor);
    const endTok = within(cursor + tok.length - 1);
    map.push(startTok === endTok ? startTok : null);
    cursor += tok.length;
  }
  return { map, exact: false };
}
