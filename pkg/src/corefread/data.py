"""Corpus format, vocabulary, batching, training-set filtering, and the
synthetic coreference-task generator.

The corpus is UTF-8 JSON lines, one instance per line, validated against the
packaged JSON schema plus the annotation's structural invariants. Tokens
arrive pre-tokenized; this package never tokenizes text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources as importlib_resources

import jsonschema
import numpy as np

from .supervision import (
    SUPERVISION_KINDS,
    Annotation,
    AnnotationError,
    Mention,
    SupervisionMatrix,
    build,
    sentence_window_mask,
)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"


class CorpusError(ValueError):
    pass


def _schema():
    text = (
        importlib_resources.files("corefread") / "schemas" / "corpus.schema.json"
    ).read_text()
    return json.loads(text)


_VALIDATOR = jsonschema.Draft202012Validator(_schema())


@dataclass
class Instance:
    id: str
    context_tokens: list[str]
    query_tokens: list[str]
    answer: str
    annotation: Annotation

    def validate(self):
        if len(self.context_tokens) < 1:
            raise CorpusError("context must contain at least one token")
        if self.annotation.n != len(self.context_tokens):
            raise CorpusError(
                f"annotation covers {self.annotation.n} tokens but context has"
                f" {len(self.context_tokens)}"
            )
        try:
            self.annotation.validate()
        except AnnotationError as e:
            raise CorpusError(str(e)) from e
        return self

    def answer_positions(self) -> list[int]:
        return [i for i, t in enumerate(self.context_tokens) if t == self.answer]

    def to_obj(self):
        return {
            "id": self.id,
            "context_tokens": self.context_tokens,
            "query_tokens": self.query_tokens,
            "answer": self.answer,
            "annotation": self.annotation.to_obj(),
        }

    @classmethod
    def from_obj(cls, obj):
        errors = sorted(_VALIDATOR.iter_errors(obj), key=lambda e: e.json_path)
        if errors:
            e = errors[0]
            raise CorpusError(f"schema violation at {e.json_path}: {e.message}")
        return cls(
            id=obj["id"],
            context_tokens=list(obj["context_tokens"]),
            query_tokens=list(obj["query_tokens"]),
            answer=obj["answer"],
            annotation=Annotation.from_obj(obj["annotation"]),
        ).validate()


def write_corpus(path, instances):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_obj(), ensure_ascii=False))
            fh.write("\n")


def read_corpus(path):
    """Load a corpus file; malformed lines are rejected, not fatal.

    Returns (instances, errors) where errors are "line N: reason" strings.
    """
    instances, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                instances.append(Instance.from_obj(json.loads(line)))
            except (json.JSONDecodeError, CorpusError, AnnotationError, KeyError) as e:
                errors.append(f"line {line_no}: {e}")
    return instances, errors


def load_stopwords(path=None) -> frozenset[str]:
    if path is None:
        text = (
            importlib_resources.files("corefread") / "resources" / "stopwords.txt"
        ).read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


def filter_training(instances, stopwords) -> list[Instance]:
    """Keep instances whose answer occurs in the context and is not a stopword."""
    kept = []
    for inst in instances:
        if inst.answer.lower() in stopwords:
            continue
        if inst.answer not in inst.context_tokens:
            continue
        kept.append(inst)
    return kept


class Vocabulary:
    """Token and character maps with reserved PAD and UNK ids.

    Ids are dense from 0 and assigned deterministically: count descending,
    then token ascending. Words below min_count map to UNK.
    """

    def __init__(self, word_to_id, char_to_id, min_count=1):
        self.word_to_id = word_to_id
        self.char_to_id = char_to_id
        self.min_count = min_count

    @classmethod
    def build(cls, instances, min_count: int = 1):
        word_counts: dict[str, int] = {}
        chars: dict[str, int] = {}
        for inst in instances:
            for tok in list(inst.context_tokens) + list(inst.query_tokens):
                word_counts[tok] = word_counts.get(tok, 0) + 1
                for ch in tok:
                    chars[ch] = chars.get(ch, 0) + 1
        word_to_id = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok, _count in sorted(
            ((t, c) for t, c in word_counts.items() if c >= min_count),
            key=lambda tc: (-tc[1], tc[0]),
        ):
            word_to_id[tok] = len(word_to_id)
        char_to_id = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for ch, _count in sorted(chars.items(), key=lambda tc: (-tc[1], tc[0])):
            char_to_id[ch] = len(char_to_id)
        return cls(word_to_id, char_to_id, min_count)

    @property
    def size(self) -> int:
        return len(self.word_to_id)

    @property
    def char_size(self) -> int:
        return len(self.char_to_id)

    def word_id(self, token: str) -> int:
        return self.word_to_id.get(token, UNK)

    def char_id(self, ch: str) -> int:
        return self.char_to_id.get(ch, UNK)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "word_to_id": self.word_to_id,
                    "char_to_id": self.char_to_id,
                    "min_count": self.min_count,
                },
                fh,
                ensure_ascii=False,
            )

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(obj["word_to_id"], obj["char_to_id"], obj.get("min_count", 1))


@dataclass
class Batch:
    """Padded arrays for one batch of instances.

    Supervision matrices stay at each instance's real size; losses and masks
    treat rows beyond it as unsupervised padding.
    """

    ids: list[str]
    size: int
    n: int  # padded context length
    m: int  # padded query length
    context_ids: np.ndarray  # (B, n) int
    context_char_ids: np.ndarray  # (B, n, c_max) int
    context_char_lengths: np.ndarray  # (B, n) int
    context_mask: np.ndarray  # (B, n) float 0/1
    context_tokens: list[list[str]]
    query_ids: np.ndarray
    query_char_ids: np.ndarray
    query_char_lengths: np.ndarray
    query_mask: np.ndarray
    query_tokens: list[list[str]]
    answers: list[str]
    answer_positions: list[list[int]]
    supervision: dict[str, list[SupervisionMatrix]] = field(default_factory=dict)
    window_masks: np.ndarray | None = None  # (B, n, n) float


def _encode_tokens(token_lists, vocab, n_pad, c_max):
    B = len(token_lists)
    ids = np.zeros((B, n_pad), dtype=np.int64)
    char_ids = np.zeros((B, n_pad, c_max), dtype=np.int64)
    lengths = np.ones((B, n_pad), dtype=np.int64)  # length >= 1 keeps conv valid
    mask = np.zeros((B, n_pad))
    for b, tokens in enumerate(token_lists):
        for i, tok in enumerate(tokens):
            ids[b, i] = vocab.word_id(tok)
            mask[b, i] = 1.0
            lengths[b, i] = min(len(tok), c_max)
            for j, ch in enumerate(tok[:c_max]):
                char_ids[b, i, j] = vocab.char_id(ch)
    return ids, char_ids, lengths, mask


def make_batch(instances, vocab: Vocabulary, kinds=(), char_width: int = 5) -> Batch:
    """Pad a group of instances to common lengths and build the requested
    supervision matrices (rejecting kinds the annotation cannot support)."""
    if not instances:
        raise CorpusError("cannot batch zero instances")
    for kind in kinds:
        if kind not in SUPERVISION_KINDS:
            raise KeyError(f"unknown supervision kind {kind!r}")
    n_pad = max(len(i.context_tokens) for i in instances)
    m_pad = max([len(i.query_tokens) for i in instances] + [1])
    all_tokens = [t for i in instances for t in i.context_tokens + i.query_tokens]
    c_max = max([char_width] + [len(t) for t in all_tokens])

    ctx = _encode_tokens([i.context_tokens for i in instances], vocab, n_pad, c_max)
    qry = _encode_tokens([i.query_tokens for i in instances], vocab, m_pad, c_max)

    supervision: dict[str, list[SupervisionMatrix]] = {
        kind: [build(kind, inst.annotation) for inst in instances] for kind in kinds
    }

    windows = np.zeros((len(instances), n_pad, n_pad))
    for b, inst in enumerate(instances):
        w = sentence_window_mask(inst.annotation)
        windows[b, : w.shape[0], : w.shape[1]] = w

    return Batch(
        ids=[i.id for i in instances],
        size=len(instances),
        n=n_pad,
        m=m_pad,
        context_ids=ctx[0],
        context_char_ids=ctx[1],
        context_char_lengths=ctx[2],
        context_mask=ctx[3],
        context_tokens=[list(i.context_tokens) for i in instances],
        query_ids=qry[0],
        query_char_ids=qry[1],
        query_char_lengths=qry[2],
        query_mask=qry[3],
        query_tokens=[list(i.query_tokens) for i in instances],
        answers=[i.answer for i in instances],
        answer_positions=[i.answer_positions() for i in instances],
        supervision=supervision,
        window_masks=windows,
    )


def batches(instances, size, kinds=(), vocab=None):
    for lo in range(0, len(instances), size):
        yield make_batch(instances[lo : lo + size], vocab, kinds)


# ---------------------------------------------------------------------------
# synthetic coreference task


FEMALE_NAMES = ["Anna", "Clara", "Emma", "Nora"]
MALE_NAMES = ["Bob", "Felix", "James", "Oscar"]
PLACES = ["market", "harbor", "station", "garden"]
OBJECTS = ["lantern", "basket", "letter", "violin"]
INTRANS_VERBS = ["smiled", "nodded", "waited"]
CARRY_VERBS = ["carried", "held"]
QUERY_TEMPLATES = [
    ["In", "the", "end", "the", "{obj}", "belonged", "to"],
]


class _SentenceBuilder:
    def __init__(self):
        self.tokens: list[str] = []
        self.spans: list[tuple[int, int]] = []
        self.dep_head: list[int] = []
        self.dep_rel: list[str] = []
        self.pos: list[str] = []
        self.entity: list[str | None] = []
        self.mentions: dict[str, list[int]] = {}  # entity key -> head token indices

    def add_sentence(self, words, heads, rels, tags, entities, mention_of):
        """heads are sentence-local; mention_of maps local index -> entity key."""
        base = len(self.tokens)
        n = len(words)
        self.tokens.extend(words)
        self.spans.append((base, base + n))
        self.dep_head.extend(base + h for h in heads)
        self.dep_rel.extend(rels)
        self.pos.extend(tags)
        self.entity.extend(entities)
        for local, key in mention_of.items():
            self.mentions.setdefault(key, []).append(base + local)

    def annotation(self):
        chains = [
            [Mention(i, i + 1, head=i) for i in sorted(idxs)]
            for _key, idxs in sorted(self.mentions.items())
        ]
        return Annotation(
            sentence_spans=self.spans,
            dep_head=self.dep_head,
            dep_rel=self.dep_rel,
            pos=self.pos,
            chains=chains,
            entity=self.entity,
        )


def _intro_sentence(sb, female, male, place):
    # "{F} met {M} at the {place} ."
    words = [female, "met", male, "at", "the", place, "."]
    heads = [1, 1, 1, 1, 5, 3, 1]
    rels = ["nsubj", "root", "dobj", "prep", "det", "pobj", "punct"]
    tags = ["PROPN", "VERB", "PROPN", "ADP", "DET", "NOUN", "PUNCT"]
    ents = ["PERSON", None, "PERSON", None, None, None, None]
    sb.add_sentence(words, heads, rels, tags, ents, {0: female, 2: male})


def _carry_sentence(sb, subject_key, surface, verb, obj):
    # "{subject} {verb} the {obj} ."
    words = [surface, verb, "the", obj, "."]
    heads = [1, 1, 3, 1, 1]
    rels = ["nsubj", "root", "det", "dobj", "punct"]
    tags = ["PRON" if surface in ("She", "He") else "PROPN", "VERB", "DET", "NOUN", "PUNCT"]
    ents = [None if surface in ("She", "He") else "PERSON", None, None, None, None]
    sb.add_sentence(words, heads, rels, tags, ents, {0: subject_key})


def _filler_sentence(sb, subject_key, surface, verb):
    # "{subject} {verb} ."
    words = [surface, verb, "."]
    heads = [1, 1, 1]
    rels = ["nsubj", "root", "punct"]
    tags = ["PRON" if surface in ("She", "He") else "PROPN", "VERB", "PUNCT"]
    ents = [None if surface in ("She", "He") else "PERSON", None, None]
    sb.add_sentence(words, heads, rels, tags, ents, {0: subject_key})


def synth_generate(count: int, seed: int, pronoun_rate: float = 0.4,
                   max_fillers: int = 2, distractor_rate: float = 0.1):
    """Template narratives whose final query word is an entity name that is
    recoverable only through the pronoun's coreference chain.

    Two same-gender protagonists take custody of distinct objects; custody
    sentences use a pronoun with probability ``pronoun_rate``. Because the
    protagonists share a gender, a pronoun resolves only through discourse:
    it refers to the most recently mentioned protagonist, so tracking the
    mention chain is the only way to answer "who ended up with the X".
    Gold sentence spans, dependency arcs, POS tags, entity labels, and
    coreference chains come from the templates, so the annotation is exact
    by construction. Deterministic per seed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    instances = []
    for idx in range(count):
        same_gender_pool = FEMALE_NAMES if rng.uniform() < 0.5 else MALE_NAMES
        pronoun = "She" if same_gender_pool is FEMALE_NAMES else "He"
        pair = rng.choice(len(same_gender_pool), size=2, replace=False)
        a_name = same_gender_pool[pair[0]]
        b_name = same_gender_pool[pair[1]]
        place = PLACES[rng.integers(0, len(PLACES))]
        obj_ids = rng.choice(len(OBJECTS), size=2, replace=False)

        sb = _SentenceBuilder()
        _intro_sentence(sb, a_name, b_name, place)
        recent = b_name  # last mentioned protagonist so far

        events = ["carry", "carry"]
        for _ in range(int(rng.integers(0, max_fillers + 1))):
            events.insert(int(rng.integers(0, len(events) + 1)), "filler")
        carriers = []
        carry_objs = [OBJECTS[obj_ids[0]], OBJECTS[obj_ids[1]]]
        for event in events:
            use_pronoun = rng.uniform() < pronoun_rate
            if use_pronoun:
                who, surface = recent, pronoun
            else:
                who = (a_name, b_name)[rng.integers(0, 2)]
                surface = who
                recent = who
            if event == "carry":
                verb = CARRY_VERBS[rng.integers(0, len(CARRY_VERBS))]
                _carry_sentence(sb, who, surface, verb, carry_objs[len(carriers)])
                carriers.append(who)
            else:
                verb = INTRANS_VERBS[rng.integers(0, len(INTRANS_VERBS))]
                _filler_sentence(sb, who, surface, verb)
        if rng.uniform() < distractor_rate:
            pool = [n for n in FEMALE_NAMES + MALE_NAMES
                    if n not in (a_name, b_name)]
            extra = pool[rng.integers(0, len(pool))]
            verb = INTRANS_VERBS[rng.integers(0, len(INTRANS_VERBS))]
            _filler_sentence(sb, extra, extra, verb)

        asked = int(rng.integers(0, 2))
        template = QUERY_TEMPLATES[rng.integers(0, len(QUERY_TEMPLATES))]
        query = [w.format(obj=carry_objs[asked]) for w in template]

        instances.append(
            Instance(
                id=f"synth-{seed}-{idx:05d}",
                context_tokens=sb.tokens,
                query_tokens=query,
                answer=carriers[asked],
                annotation=sb.annotation(),
            ).validate()
        )
    return instances
