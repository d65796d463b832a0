"""Token-edit extraction and precision / recall / F0.5 scoring.

Edits come from the minimal Levenshtein script between the source and a
corrected sentence, with consecutive non-keep operations merged into one
edit. Counts are micro-averaged over the corpus. With several reference
annotations, each sentence uses the annotation that maximises the running
corpus F0.5, as the MaxMatch scorer does.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

from .alignment import KEEP, align
from .corpus import UNK, Vocabulary

BETA = Fraction(1, 2)


class Edit(NamedTuple):
    start: int  # source span [start, end)
    end: int
    replacement: tuple[str, ...]


def extract_edits(src: Sequence[str], corrected: Sequence[str]) -> list[Edit]:
    """Sorted, non-overlapping edits turning ``src`` into ``corrected``."""
    edits: list[Edit] = []
    start = end = None
    repl: list[str] = []
    for op in align(src, corrected):
        if op.kind == KEEP:
            if start is not None:
                edits.append(Edit(start, end, tuple(repl)))
                start, repl = None, []
            continue
        if start is None:
            start = end = op.src
        if op.kind in ("sub", "del"):
            end = op.src + 1
        if op.trg is not None:
            repl.append(corrected[op.trg])
    if start is not None:
        edits.append(Edit(start, end, tuple(repl)))
    return edits


def f_beta(precision, recall, beta=BETA):
    """(1 + b^2) P R / (b^2 P + R), and 0 when P = R = 0."""
    b2 = beta * beta
    denom = b2 * precision + recall
    if denom == 0:
        return 0 * precision
    return (1 + b2) * precision * recall / denom


def f_half(precision, recall):
    return f_beta(precision, recall, BETA)


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> Fraction:
        return Fraction(self.tp, self.tp + self.fp) if self.tp + self.fp else Fraction(0)

    @property
    def recall(self) -> Fraction:
        return Fraction(self.tp, self.tp + self.fn) if self.tp + self.fn else Fraction(0)

    @property
    def f05(self) -> Fraction:
        return f_half(self.precision, self.recall)


def match_edits(hyp: Sequence[Edit], ref: Sequence[Edit]) -> Counts:
    h, r = set(hyp), set(ref)
    tp = len(h & r)
    return Counts(tp, len(h) - tp, len(r) - tp)


def score_edits(hyp_edits: Sequence[Edit], ref_edits: Sequence[Edit]) -> tuple[float, float, float]:
    """(P, R, F0.5) of one edit set against one reference edit set."""
    c = match_edits(hyp_edits, ref_edits)
    return float(c.precision), float(c.recall), float(c.f05)


def is_unk_edit(edit: Edit, vocab: Vocabulary) -> bool:
    """An edit whose replacement consists only of out-of-vocabulary tokens (or the unk symbol)."""
    return bool(edit.replacement) and all(tok == UNK or vocab.is_oov(tok) for tok in edit.replacement)


@dataclass
class Report:
    counts: Counts
    sentences: int
    chosen_refs: list[int]

    @property
    def precision(self) -> float:
        return float(self.counts.precision)

    @property
    def recall(self) -> float:
        return float(self.counts.recall)

    @property
    def f05(self) -> float:
        return float(self.counts.f05)

    @property
    def no_edits(self) -> bool:
        return self.counts.tp + self.counts.fp + self.counts.fn == 0

    def to_text(self) -> str:
        lines = [
            f"precision={self.precision:.4f}",
            f"recall={self.recall:.4f}",
            f"f0.5={self.f05:.4f}",
            f"tp={self.counts.tp} fp={self.counts.fp} fn={self.counts.fn}",
            f"sentences={self.sentences}",
        ]
        if self.no_edits:
            lines.append("note=no edits")
        return "\n".join(lines)


def score_corpus(
    sources: Sequence[Sequence[str]],
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[Sequence[str]]],
    vocab: Vocabulary | None = None,
    exclude_unk: bool = False,
) -> Report:
    """Corpus-level P/R/F0.5.

    ``references[a][i]`` is annotator ``a``'s correction of sentence ``i``.
    With ``exclude_unk`` the unk edits (see :func:`is_unk_edit`) are removed
    from hypothesis and reference edit sets before matching.
    """
    if exclude_unk and vocab is None:
        raise ValueError("exclude_unk needs a vocabulary")
    if not references:
        raise ValueError("at least one reference annotation is required")
    n = len(sources)
    if len(hypotheses) != n or any(len(r) != n for r in references):
        raise ValueError("sources, hypotheses and every reference must have the same length")

    def _edits(src, corrected):
        e = extract_edits(src, corrected)
        return [x for x in e if not is_unk_edit(x, vocab)] if exclude_unk else e

    total = Counts()
    chosen = []
    for i in range(n):
        hyp = _edits(sources[i], hypotheses[i])
        best_key, best_counts, best_a = None, None, 0
        for a, ref in enumerate(references):
            c = match_edits(hyp, _edits(sources[i], ref[i]))
            run = total + c
            key = (run.f05, c.tp, -c.fp, -c.fn)
            if best_key is None or key > best_key:
                best_key, best_counts, best_a = key, c, a
        total = total + best_counts
        chosen.append(best_a)
    return Report(total, n, chosen)


def score_excluding_unk(sources, hypotheses, references, vocab: Vocabulary) -> Report:
    return score_corpus(sources, hypotheses, references, vocab, exclude_unk=True)
