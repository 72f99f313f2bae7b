"""Attention-target matrices built from linguistic annotations.

Five builders map an annotated context to an n x n binary matrix of desired
attention weights:

  depparse    each token points at its syntactic head (roots at themselves)
  corefall    every ordered pair of distinct mention heads sharing a chain
  corefprev   each mention head points at the nearest preceding head in its chain
  corefnext   each mention head points at the immediately following head
  narrative   symmetric links between event arguments and every predicate
              governing a mention of the same chain

Matrices are stored sparsely as {row: sorted column list}; ``k`` counts the
rows that carry at least one target. Builders are pure functions of the
annotation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUPERVISION_KINDS = ("depparse", "corefall", "corefprev", "corefnext", "narrative")

DEFAULT_ARG_RELATIONS = frozenset({"nsubj", "nsubjpass", "dobj", "obj", "iobj"})


class AnnotationError(ValueError):
    """The annotation violates a structural invariant."""


@dataclass
class Mention:
    start: int
    end: int  # half-open
    head: int | None = None  # precomputed head token, wins when present

    def to_obj(self):
        obj = {"start": self.start, "end": self.end}
        if self.head is not None:
            obj["head"] = self.head
        return obj

    @classmethod
    def from_obj(cls, obj):
        return cls(int(obj["start"]), int(obj["end"]),
                   int(obj["head"]) if obj.get("head") is not None else None)


@dataclass
class Annotation:
    """Context-side linguistic annotation.

    sentence_spans  ordered half-open token ranges covering [0, n) exactly
    dep_head        per-token head index; roots carry their own index
    dep_rel         per-token relation label
    pos             per-token part-of-speech tag
    chains          coreference chains, each a nonempty list of mentions
    entity          optional per-token entity label (None for non-entities)
    """

    sentence_spans: list[tuple[int, int]]
    dep_head: list[int]
    dep_rel: list[str]
    pos: list[str]
    chains: list[list[Mention]] = field(default_factory=list)
    entity: list[str | None] | None = None

    @property
    def n(self) -> int:
        return len(self.dep_head)

    def sentence_of(self, i: int) -> int:
        for s, (lo, hi) in enumerate(self.sentence_spans):
            if lo <= i < hi:
                return s
        raise AnnotationError(f"token {i} not covered by any sentence span")

    def validate(self):
        n = self.n
        if n < 1:
            raise AnnotationError("empty context")
        if len(self.dep_rel) != n or len(self.pos) != n:
            raise AnnotationError(
                f"field lengths disagree: dep_head {n}, dep_rel {len(self.dep_rel)},"
                f" pos {len(self.pos)}"
            )
        if self.entity is not None and len(self.entity) != n:
            raise AnnotationError(f"entity labels length {len(self.entity)} != {n}")
        if not self.sentence_spans:
            raise AnnotationError("no sentence spans")
        cursor = 0
        for lo, hi in self.sentence_spans:
            if lo != cursor or hi <= lo:
                raise AnnotationError(
                    f"sentence spans must be ordered, disjoint and covering:"
                    f" got ({lo}, {hi}) at position {cursor}"
                )
            cursor = hi
        if cursor != n:
            raise AnnotationError(f"sentence spans cover [0, {cursor}) but n = {n}")
        for i, h in enumerate(self.dep_head):
            if not 0 <= h < n:
                raise AnnotationError(f"dep_head[{i}] = {h} out of range")
            if self.sentence_of(i) != self.sentence_of(h):
                raise AnnotationError(
                    f"dep_head[{i}] = {h} crosses a sentence boundary"
                )
        for ci, chain in enumerate(self.chains):
            if not chain:
                raise AnnotationError(f"chain {ci} has no mentions")
            for m in chain:
                if not 0 <= m.start < m.end <= n:
                    raise AnnotationError(
                        f"mention ({m.start}, {m.end}) of chain {ci} out of range"
                    )
                if self.sentence_of(m.start) != self.sentence_of(m.end - 1):
                    raise AnnotationError(
                        f"mention ({m.start}, {m.end}) of chain {ci} spans sentences"
                    )
                if m.head is not None and not m.start <= m.head < m.end:
                    raise AnnotationError(
                        f"mention head {m.head} outside span ({m.start}, {m.end})"
                    )
        return self

    def to_obj(self):
        obj = {
            "sentence_spans": [list(s) for s in self.sentence_spans],
            "dep_head": list(self.dep_head),
            "dep_rel": list(self.dep_rel),
            "pos": list(self.pos),
            "chains": [[m.to_obj() for m in chain] for chain in self.chains],
        }
        if self.entity is not None:
            obj["entity"] = list(self.entity)
        return obj

    @classmethod
    def from_obj(cls, obj):
        return cls(
            sentence_spans=[tuple(s) for s in obj["sentence_spans"]],
            dep_head=[int(h) for h in obj["dep_head"]],
            dep_rel=[str(r) for r in obj["dep_rel"]],
            pos=[str(p) for p in obj["pos"]],
            chains=[[Mention.from_obj(m) for m in chain] for chain in obj.get("chains", [])],
            entity=obj.get("entity"),
        )


@dataclass
class SupervisionMatrix:
    kind: str
    n: int
    rows: dict[int, list[int]]  # row -> sorted target columns, nonempty lists only

    @property
    def k(self) -> int:
        return len(self.rows)

    def dense(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        for i, cols in self.rows.items():
            m[i, cols] = 1.0
        return m

    def to_obj(self):
        return {
            "kind": self.kind,
            "n": self.n,
            "k": self.k,
            "rows": [[i, self.rows[i]] for i in sorted(self.rows)],
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(
            kind=obj["kind"],
            n=int(obj["n"]),
            rows={int(i): [int(c) for c in cols] for i, cols in obj["rows"]},
        )


def _matrix(kind: str, n: int, entries) -> SupervisionMatrix:
    rows: dict[int, set[int]] = {}
    for i, j in entries:
        rows.setdefault(i, set()).add(j)
    return SupervisionMatrix(kind, n, {i: sorted(js) for i, js in rows.items()})


def mention_head(span: tuple[int, int], annotation: Annotation) -> int:
    """Representative token of a mention span.

    The leftmost token whose dependency head falls outside the span (or which
    is a sentence root); the last token of the span when none qualifies. A
    precomputed head supplied with the mention is honored by the chain
    builders before this rule applies.
    """
    start, end = span
    if not 0 <= start < end <= annotation.n:
        raise AnnotationError(f"empty or out-of-range span ({start}, {end})")
    for i in range(start, end):
        h = annotation.dep_head[i]
        if h == i or not start <= h < end:
            return i
    return end - 1


def _chain_heads(chain: list[Mention], annotation: Annotation) -> list[int]:
    """Unique mention heads of one chain, ascending by token index."""
    heads = set()
    for m in chain:
        h = m.head if m.head is not None else mention_head((m.start, m.end), annotation)
        heads.add(h)
    return sorted(heads)


def build_depparse(annotation: Annotation) -> SupervisionMatrix:
    """Each token targets its syntactic head; roots target themselves, so
    every row of a valid annotation is supervised and k = n."""
    n = annotation.n
    entries = []
    for i, h in enumerate(annotation.dep_head):
        if annotation.sentence_of(i) != annotation.sentence_of(h):
            raise AnnotationError(f"dep_head[{i}] = {h} crosses a sentence boundary")
        entries.append((i, h))
    return _matrix("depparse", n, entries)


def build_corefall(annotation: Annotation) -> SupervisionMatrix:
    """All ordered pairs of distinct mention heads within each chain."""
    entries = []
    for chain in annotation.chains:
        heads = _chain_heads(chain, annotation)
        for a in heads:
            for b in heads:
                if a != b:
                    entries.append((a, b))
    return _matrix("corefall", annotation.n, entries)


def build_corefprev(annotation: Annotation) -> SupervisionMatrix:
    """Each mention head targets the nearest preceding head in its chain."""
    entries = []
    for chain in annotation.chains:
        heads = _chain_heads(chain, annotation)
        for prev, cur in zip(heads, heads[1:]):
            entries.append((cur, prev))
    return _matrix("corefprev", annotation.n, entries)


def build_corefnext(annotation: Annotation) -> SupervisionMatrix:
    """Each mention head targets the immediately following head in its chain."""
    entries = []
    for chain in annotation.chains:
        heads = _chain_heads(chain, annotation)
        for prev, cur in zip(heads, heads[1:]):
            entries.append((prev, cur))
    return _matrix("corefnext", annotation.n, entries)


def is_verb(tag: str, verb_tags=None) -> bool:
    if verb_tags is not None:
        return tag in verb_tags
    return tag == "VERB" or tag.startswith("VB")


def build_narrative(annotation: Annotation, arg_relations=DEFAULT_ARG_RELATIONS,
                    verb_tags=None) -> SupervisionMatrix:
    """Symmetric argument-to-predicate links across coreference chains.

    An argument is a mention head whose relation to its (non-self) dependency
    head is in ``arg_relations`` and whose head token is verb-tagged; that
    head token is the predicate. Every argument of a chain links to every
    predicate governing any mention of the chain, its own included.
    """
    entries = []
    for chain in annotation.chains:
        heads = _chain_heads(chain, annotation)
        arguments = [
            h
            for h in heads
            if annotation.dep_head[h] != h
            and annotation.dep_rel[h] in arg_relations
            and is_verb(annotation.pos[annotation.dep_head[h]], verb_tags)
        ]
        predicates = sorted({annotation.dep_head[a] for a in arguments})
        for a in arguments:
            for p in predicates:
                entries.append((a, p))
                entries.append((p, a))
    return _matrix("narrative", annotation.n, entries)


BUILDERS = {
    "depparse": build_depparse,
    "corefall": build_corefall,
    "corefprev": build_corefprev,
    "corefnext": build_corefnext,
    "narrative": build_narrative,
}


def build(kind: str, annotation: Annotation) -> SupervisionMatrix:
    try:
        builder = BUILDERS[kind]
    except KeyError:
        raise KeyError(
            f"unknown supervision kind {kind!r}; expected one of {SUPERVISION_KINDS}"
        ) from None
    return builder(annotation)


def sentence_window_mask(annotation: Annotation) -> np.ndarray:
    """mask[i, j] = 1 iff i and j share a sentence; applied to heads trained
    with depparse supervision so in-sentence targets stay reachable."""
    n = annotation.n
    mask = np.zeros((n, n))
    for lo, hi in annotation.sentence_spans:
        mask[lo:hi, lo:hi] = 1.0
    return mask
