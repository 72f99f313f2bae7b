/**
 * Shapes shared across the adapter.
 *
 * PipelineDocument is the pipeline-neutral intermediate: readers translate a
 * tool's native output into it, and the converter turns it plus the source
 * instance into a corpus line for the reading-comprehension engine.
 */

export interface PipelineToken {
  /** 1-based position within its sentence. */
  index: number;
  word: string;
  pos: string;
  /** Entity label; "O" or undefined means none. */
  ner?: string;
}

export interface PipelineDependency {
  /** 1-based head position in the sentence; 0 marks the root. */
  governor: number;
  /** 1-based dependent position in the sentence. */
  dependent: number;
  dep: string;
}

export interface PipelineSentence {
  tokens: PipelineToken[];
  dependencies: PipelineDependency[];
}

export interface PipelineMention {
  /** 1-based sentence number. */
  sentence: number;
  /** 1-based first token, inclusive. */
  start: number;
  /** 1-based end token, exclusive. */
  end: number;
  /** Optional 1-based head token within the sentence. */
  head?: number;
}

export interface PipelineDocument {
  sentences: PipelineSentence[];
  chains: PipelineMention[][];
}

/** The tokenized instance the pipeline annotated, as the engine stores it. */
export interface SourceInstance {
  id: string;
  context_tokens: string[];
  query_tokens: string[];
  answer: string;
}

export interface CorpusMention {
  start: number;
  end: number;
  head?: number;
}

export interface CorpusAnnotation {
  sentence_spans: [number, number][];
  dep_head: number[];
  dep_rel: string[];
  pos: string[];
  chains: CorpusMention[][];
  entity?: (string | null)[];
}

export interface CorpusLine {
  id: string;
  context_tokens: string[];
  query_tokens: string[];
  answer: string;
  annotation: CorpusAnnotation;
}

export interface ConvertReport {
  converted: number;
  skipped: number;
  mentionsDropped: number;
  /** instance id -> reason, for every skipped instance */
  skipReasons: Record<string, string>;
}
