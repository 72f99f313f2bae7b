/**
 * PipelineDocument + SourceInstance -> corpus line.
 *
 * Sentence boundaries must land exactly on corpus token boundaries or the
 * instance is skipped. Mentions whose endpoints fall on unaligned pipeline
 * tokens, or that end up crossing a sentence after alignment, are dropped
 * and counted. Dependency heads and POS tags come from the first pipeline
 * token aligned to each corpus token; head arcs that stay inside a merged
 * corpus token are followed transitively until they escape it.
 */

import { AlignmentError, alignTokens } from "./align.js";
import type {
  ConvertReport,
  CorpusAnnotation,
  CorpusLine,
  CorpusMention,
  PipelineDocument,
  SourceInstance,
} from "./types.js";

export class SkipInstance extends Error {}

interface FlatToken {
  word: string;
  pos: string;
  ner: string | null;
  sentence: number;
  /** flat index of the dependency head; -1 for the sentence root */
  head: number;
  dep: string;
}

function flatten(doc: PipelineDocument): FlatToken[] {
  const flat: FlatToken[] = [];
  const offsets: number[] = [];
  let base = 0;
  for (const sentence of doc.sentences) {
    offsets.push(base);
    const heads = new Map<number, { governor: number; dep: string }>();
    for (const d of sentence.dependencies) {
      heads.set(d.dependent, { governor: d.governor, dep: d.dep });
    }
    for (const tok of sentence.tokens) {
      const arc = heads.get(tok.index);
      if (arc === undefined) {
        throw new SkipInstance(`token ${tok.word} has no dependency arc`);
      }
      flat.push({
        word: tok.word,
        pos: tok.pos,
        ner: tok.ner && tok.ner !== "O" ? tok.ner : null,
        sentence: doc.sentences.indexOf(sentence),
        head: arc.governor === 0 ? -1 : base + arc.governor - 1,
        dep: arc.dep,
      });
    }
    base += sentence.tokens.length;
  }
  return flat;
}

export function convertInstance(
  doc: PipelineDocument,
  instance: SourceInstance,
): { line: CorpusLine; mentionsDropped: number } {
  const flat = flatten(doc);
  let alignment;
  try {
    alignment = alignTokens(
      flat.map((t) => t.word),
      instance.context_tokens,
    );
  } catch (e) {
    if (e instanceof AlignmentError) throw new SkipInstance(e.message);
    throw e;
  }
  const map = alignment.map;
  const n = instance.context_tokens.length;

  // sentence spans over corpus indices; boundaries must be clean
  const spans: [number, number][] = [];
  let flatPos = 0;
  let expectedStart = 0;
  for (const sentence of doc.sentences) {
    const first = map[flatPos];
    const last = map[flatPos + sentence.tokens.length - 1];
    if (first === null || last === null || first !== expectedStart) {
      throw new SkipInstance("unalignable sentence boundaries");
    }
    spans.push([first, last + 1]);
    expectedStart = last + 1;
    flatPos += sentence.tokens.length;
  }
  if (expectedStart !== n) {
    throw new SkipInstance("sentence spans do not cover the context");
  }

  // first pipeline token aligned to each corpus token
  const firstPipe: number[] = new Array(n).fill(-1);
  for (let p = 0; p < map.length; p++) {
    const c = map[p];
    if (c !== null && firstPipe[c] === -1) firstPipe[c] = p;
  }
  if (firstPipe.includes(-1)) {
    // every corpus token contains at least one aligned pipeline token unless
    // a straddler swallowed it together with a neighbour
    throw new SkipInstance("a corpus token has no aligned pipeline token");
  }

  const depHead: number[] = new Array(n).fill(0);
  const depRel: string[] = new Array(n).fill("dep");
  const pos: string[] = new Array(n).fill("X");
  const entity: (string | null)[] = new Array(n).fill(null);
  for (let c = 0; c < n; c++) {
    let p = firstPipe[c];
    pos[c] = flat[p].pos;
    depRel[c] = flat[p].dep;
    entity[c] = flat[p].ner;
    // follow arcs that stay inside this corpus token
    let head = flat[p].head;
    const seen = new Set<number>([p]);
    while (head !== -1 && map[head] === c && !seen.has(head)) {
      seen.add(head);
      head = flat[head].head;
    }
    if (head === -1) {
      depHead[c] = c; // sentence root points at itself
    } else {
      const target = map[head];
      depHead[c] = target === null ? c : target;
    }
  }

  // mentions
  let dropped = 0;
  const chains: CorpusMention[][] = [];
  const sentenceBounds = doc.sentences.map((s, i) => {
    const start = doc.sentences.slice(0, i).reduce((a, x) => a + x.tokens.length, 0);
    return { start, end: start + s.tokens.length };
  });
  for (const chain of doc.chains) {
    const converted: CorpusMention[] = [];
    for (const mention of chain) {
      const bounds = sentenceBounds[mention.sentence - 1];
      if (bounds === undefined) {
        dropped++;
        continue;
      }
      const flatStart = bounds.start + mention.start - 1;
      const flatLast = bounds.start + mention.end - 2;
      const cStart = map[flatStart];
      const cLast = map[flatLast];
      if (cStart === null || cStart === undefined || cLast === null || cLast === undefined) {
        dropped++;
        continue;
      }
      const spanSentence = spans.findIndex(([lo, hi]) => cStart >= lo && cLast < hi);
      if (spanSentence === -1) {
        dropped++;
        continue;
      }
      const out: CorpusMention = { start: cStart, end: cLast + 1 };
      if (mention.head !== undefined) {
        const h = map[bounds.start + mention.head - 1];
        if (h !== null && h !== undefined && h >= cStart && h <= cLast) out.head = h;
      }
      converted.push(out);
    }
    if (converted.length > 0) chains.push(converted);
  }

  const annotation: CorpusAnnotation = {
    sentence_spans: spans,
    dep_head: depHead,
    dep_rel: depRel,
    pos,
    chains,
  };
  if (entity.some((e) => e !== null)) annotation.entity = entity;
  return {
    line: {
      id: instance.id,
      context_tokens: instance.context_tokens,
      query_tokens: instance.query_tokens,
      answer: instance.answer,
      annotation,
    },
    mentionsDropped: dropped,
  };
}

export function convertBatch(
  records: { document: PipelineDocument; instance: SourceInstance }[],
): { lines: CorpusLine[]; report: ConvertReport } {
  const lines: CorpusLine[] = [];
  const report: ConvertReport = {
    converted: 0,
    skipped: 0,
    mentionsDropped: 0,
    skipReasons: {},
  };
  for (const { document, instance } of records) {
    try {
      const { line, mentionsDropped } = convertInstance(document, instance);
      lines.push(line);
      report.converted++;
      report.mentionsDropped += mentionsDropped;
    } catch (e) {
      if (e instanceof SkipInstance) {
        report.skipped++;
        report.skipReasons[instance.id] = e.message;
      } else {
        throw e;
      }
    }
  }
  return { lines, report };
}
