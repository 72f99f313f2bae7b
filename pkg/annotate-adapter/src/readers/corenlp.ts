/**
 * Reader for CoreNLP-style JSON output.
 *
 * Expected shape: { sentences: [{ tokens: [{index, word, pos, ner?}],
 * basicDependencies: [{governor, dependent, dep}] }], corefs: { chainId:
 * [{sentNum, startIndex, endIndex, headIndex?}] } }. Indices are 1-based;
 * endIndex is exclusive; governor 0 is the root.
 */

import type {
  PipelineDocument,
  PipelineMention,
  PipelineSentence,
} from "../types.js";

export class ReaderError extends Error {}

function asArray(value: unknown, what: string): unknown[] {
  if (!Array.isArray(value)) throw new ReaderError(`${what} must be an array`);
  return value;
}

function asNumber(value: unknown, what: string): number {
  if (typeof value !== "number" || !Number.isInteger(value)) {
    throw new ReaderError(`${what} must be an integer, got ${JSON.stringify(value)}`);
  }
  return value;
}

function asString(value: unknown, what: string): string {
  if (typeof value !== "string") {
    throw new ReaderError(`${what} must be a string, got ${JSON.stringify(value)}`);
  }
  return value;
}

export function readCoreNlpDocument(raw: unknown): PipelineDocument {
  if (typeof raw !== "object" || raw === null) {
    throw new ReaderError("document must be an object");
  }
  const obj = raw as Record<string, unknown>;
  const sentences: PipelineSentence[] = asArray(obj.sentences, "sentences").map(
    (s, si) => {
      const sent = s as Record<string, unknown>;
      const tokens = asArray(sent.tokens, `sentences[${si}].tokens`).map((t, ti) => {
        const tok = t as Record<string, unknown>;
        return {
          index: asNumber(tok.index, `token[${ti}].index`),
          word: asString(tok.word, `token[${ti}].word`),
          pos: asString(tok.pos, `token[${ti}].pos`),
          ner: tok.ner === undefined ? undefined : asString(tok.ner, "ner"),
        };
      });
      const deps = asArray(
        sent.basicDependencies,
        `sentences[${si}].basicDependencies`,
      ).map((d, di) => {
        const dep = d as Record<string, unknown>;
        return {
          governor: asNumber(dep.governor, `dependency[${di}].governor`),
          dependent: asNumber(dep.dependent, `dependency[${di}].dependent`),
          dep: asString(dep.dep, `dependency[${di}].dep`),
        };
      });
      return { tokens, dependencies: deps };
    },
  );
  const chains: PipelineMention[][] = [];
  if (obj.corefs !== undefined) {
    if (typeof obj.corefs !== "object" || obj.corefs === null) {
      throw new ReaderError("corefs must be an object of chain lists");
    }
    for (const [chainId, mentions] of Object.entries(obj.corefs)) {
      chains.push(
        asArray(mentions, `corefs[${chainId}]`).map((m, mi) => {
          const mention = m as Record<string, unknown>;
          const out: PipelineMention = {
            sentence: asNumber(mention.sentNum, `mention[${mi}].sentNum`),
            start: asNumber(mention.startIndex, `mention[${mi}].startIndex`),
            end: asNumber(mention.endIndex, `mention[${mi}].endIndex`),
          };
          if (mention.headIndex !== undefined) {
            out.head = asNumber(mention.headIndex, `mention[${mi}].headIndex`);
          }
          return out;
        }),
      );
    }
  }
  return { sentences, chains };
}

export const READERS: Record<string, (raw: unknown) => PipelineDocument> = {
  corenlp: readCoreNlpDocument,
};
