"""Pointer-sum decoding and evaluation with subset analyses.

Decoding sums the predicted probability over every occurrence of each
distinct word type in the context and predicts the type with the largest
summed mass; exact ties go to the type whose first occurrence is earlier.
An instance counts as correct only on an exact string match, so answers
absent from the context are necessarily wrong and stay in the denominator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Batch, CorpusError, Instance, Vocabulary, make_batch

PRONOUN_TAGS = ("PRON", "PRP", "PRP$", "WP", "WP$")
NOUN_TAGS = ("NOUN", "PROPN", "NN", "NNS", "NNP", "NNPS")


@dataclass
class Prediction:
    predicted_word: str
    summed_prob: float
    per_type_probs: dict[str, float]


@dataclass
class EvalReport:
    accuracy: float
    count: int
    correct: int
    unanswerable: int
    subset_accuracies: dict[str, tuple[int, float]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_obj(self):
        return {
            "accuracy": self.accuracy,
            "count": self.count,
            "correct": self.correct,
            "unanswerable": self.unanswerable,
            "subsets": {
                name: {"count": c, "accuracy": a}
                for name, (c, a) in sorted(self.subset_accuracies.items())
            },
            "notes": self.notes,
        }

    def to_text(self):
        lines = [
            f"instances      {self.count}",
            f"correct        {self.correct}",
            f"accuracy       {self.accuracy:.4f}",
            f"unanswerable   {self.unanswerable}",
        ]
        if self.subset_accuracies:
            lines.append("subset breakdown:")
            for name, (c, a) in sorted(self.subset_accuracies.items()):
                lines.append(f"  {name:<12} n={c:<6} accuracy={a:.4f}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def pointer_sum_decode(answer_probs, context_tokens) -> Prediction:
    """Sum probability per distinct token string and take the argmax type."""
    probs = np.asarray(answer_probs, dtype=np.float64)
    if len(context_tokens) == 0:
        raise CorpusError("pointer_sum_decode: empty context")
    if probs.shape != (len(context_tokens),):
        raise CorpusError(
            f"pointer_sum_decode: {probs.shape} probabilities for"
            f" {len(context_tokens)} tokens"
        )
    sums: dict[str, float] = {}
    for tok, p in zip(context_tokens, probs):
        sums[tok] = sums.get(tok, 0.0) + float(p)
    best = None
    best_mass = -1.0
    for tok in sums:  # insertion order = first-occurrence order; ties keep the earlier
        if sums[tok] > best_mass:
            best, best_mass = tok, sums[tok]
    return Prediction(predicted_word=best, summed_prob=best_mass, per_type_probs=sums)


def _answer_pos_class(inst: Instance) -> str | None:
    positions = inst.answer_positions()
    if not positions:
        return None
    tag = inst.annotation.pos[positions[0]]
    if tag in PRONOUN_TAGS or tag.startswith("PRP"):
        return "pronoun"
    if tag in NOUN_TAGS or tag.startswith("NN"):
        return "noun"
    return None


def _answer_entity_class(inst: Instance) -> str | None:
    if inst.annotation.entity is None:
        return None
    positions = inst.answer_positions()
    if not positions:
        return None
    labels = {inst.annotation.entity[i] for i in positions}
    if "PERSON" in labels:
        return "person"
    if labels == {None}:
        return "not_ne"
    return None


def predict_instances(model, instances, vocab: Vocabulary, batch_size: int = 64):
    """Frozen-parameter predictions in instance order."""
    preds: list[Prediction] = []
    for lo in range(0, len(instances), batch_size):
        group = instances[lo : lo + batch_size]
        batch = make_batch(group, vocab, kinds=())
        out = model.forward(batch, mode="eval")
        probs = out.answer_probs.data
        for b, inst in enumerate(group):
            preds.append(
                pointer_sum_decode(probs[b, : len(inst.context_tokens)], inst.context_tokens)
            )
    return preds


def evaluate(model, instances, vocab: Vocabulary, batch_size: int = 64,
             subsets=()) -> tuple[EvalReport, list[Prediction]]:
    """Exact-match accuracy over all instances, with optional subset rows.

    subsets may include "pos" (pronoun vs noun answers) and "entity"
    (person vs. not a named entity; skipped with a note when the corpus
    carries no entity labels).
    """
    preds = predict_instances(model, instances, vocab, batch_size)
    correct_flags = [p.predicted_word == inst.answer for p, inst in zip(preds, instances)]
    unanswerable = sum(1 for inst in instances if not inst.answer_positions())
    report = EvalReport(
        accuracy=(sum(correct_flags) / len(instances)) if instances else 0.0,
        count=len(instances),
        correct=sum(correct_flags),
        unanswerable=unanswerable,
    )
    for subset in subsets:
        if subset == "pos":
            classify = _answer_pos_class
            names = ("pronoun", "noun")
        elif subset == "entity":
            if all(inst.annotation.entity is None for inst in instances):
                report.notes.append("entity subset skipped: no entity labels in corpus")
                continue
            classify = _answer_entity_class
            names = ("person", "not_ne")
        else:
            raise ValueError(f"unknown subset {subset!r}")
        groups: dict[str, list[bool]] = {name: [] for name in names}
        for inst, ok in zip(instances, correct_flags):
            cls = classify(inst)
            if cls in groups:
                groups[cls].append(ok)
        for name, flags in groups.items():
            if flags:
                report.subset_accuracies[name] = (len(flags), sum(flags) / len(flags))
            else:
                report.subset_accuracies[name] = (0, 0.0)
    return report, preds


def agreement(predictions_a, predictions_b) -> float:
    """Fraction of instances on which two prediction lists agree exactly."""
    if len(predictions_a) != len(predictions_b):
        raise ValueError(
            f"agreement: prediction lists of length {len(predictions_a)}"
            f" and {len(predictions_b)}"
        )
    if not predictions_a:
        return 0.0
    words_a = [p.predicted_word if isinstance(p, Prediction) else p for p in predictions_a]
    words_b = [p.predicted_word if isinstance(p, Prediction) else p for p in predictions_b]
    return sum(a == b for a, b in zip(words_a, words_b)) / len(words_a)
