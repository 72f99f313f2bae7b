"""Random small annotations plus independent brute-force supervision oracles.

The oracles enumerate all (i, j) token pairs and test each kind's defining
predicate directly; they share no code with the builders under test.
"""

import numpy as np

from corefread.supervision import Annotation, Mention, mention_head

POS_TAGS = ["VERB", "NOUN", "PRON", "DET", "ADP", "PROPN"]
RELS = ["nsubj", "dobj", "det", "punct", "amod", "root", "iobj"]


def random_annotation(rng, max_n=12, max_chains=3) -> Annotation:
    n = int(rng.integers(1, max_n + 1))
    # random sentence partition
    cuts = sorted(rng.choice(np.arange(1, n), size=min(int(rng.integers(0, 3)), n - 1),
                             replace=False).tolist()) if n > 1 else []
    bounds = [0] + cuts + [n]
    spans = list(zip(bounds[:-1], bounds[1:]))
    dep_head = np.empty(n, dtype=int)
    for lo, hi in spans:
        root = int(rng.integers(lo, hi))
        for i in range(lo, hi):
            dep_head[i] = root if i == root else int(rng.integers(lo, hi))
        dep_head[root] = root
    pos = [POS_TAGS[i] for i in rng.integers(0, len(POS_TAGS), n)]
    rel = [RELS[i] for i in rng.integers(0, len(RELS), n)]
    chains = []
    for _ in range(int(rng.integers(0, max_chains + 1))):
        size = int(rng.integers(1, 4))
        mentions = []
        for _ in range(size):
            lo, hi = spans[int(rng.integers(0, len(spans)))]
            start = int(rng.integers(lo, hi))
            end = int(rng.integers(start + 1, min(hi, start + 3) + 1))
            end = min(end, hi)
            if end <= start:
                end = start + 1
            head = None
            if rng.uniform() < 0.3:
                head = int(rng.integers(start, end))
            mentions.append(Mention(start, end, head))
        chains.append(mentions)
    entity = None
    if rng.uniform() < 0.5:
        entity = [("PERSON" if rng.uniform() < 0.2 else None) for _ in range(n)]
    return Annotation(spans, dep_head.tolist(), rel, pos, chains, entity).validate()


def _heads_of_chain(chain, ann):
    heads = set()
    for m in chain:
        heads.add(m.head if m.head is not None else mention_head((m.start, m.end), ann))
    return heads


def oracle_dense(kind, ann, arg_relations=("nsubj", "nsubjpass", "dobj", "obj", "iobj")):
    """Dense 0/1 matrix for one supervision kind by direct predicate tests."""
    n = ann.n
    S = np.zeros((n, n))
    if kind == "depparse":
        for i in range(n):
            S[i, ann.dep_head[i]] = 1.0
        return S
    if kind == "corefall":
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                for chain in ann.chains:
                    hs = _heads_of_chain(chain, ann)
                    if i in hs and j in hs:
                        S[i, j] = 1.0
        return S
    if kind in ("corefprev", "corefnext"):
        for chain in ann.chains:
            hs = sorted(_heads_of_chain(chain, ann))
            for a, b in zip(hs, hs[1:]):
                # b's most recent previous head is a; a's next head is b
                if kind == "corefprev":
                    S[b, a] = 1.0
                else:
                    S[a, b] = 1.0
        return S
    if kind == "narrative":
        def is_argument(h):
            return (
                ann.dep_head[h] != h
                and ann.dep_rel[h] in arg_relations
                and (ann.pos[ann.dep_head[h]] == "VERB"
                     or ann.pos[ann.dep_head[h]].startswith("VB"))
            )

        for chain in ann.chains:
            hs = _heads_of_chain(chain, ann)
            args = [h for h in hs if is_argument(h)]
            preds = {ann.dep_head[a] for a in args}
            for a in args:
                for p in preds:
                    S[a, p] = 1.0
                    S[p, a] = 1.0
        return S
    raise ValueError(kind)
