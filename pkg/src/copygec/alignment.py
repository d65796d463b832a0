"""Token-level Levenshtein alignment with a deterministic tie-break.

Costs are unit for substitute, delete and insert. When several minimal
scripts exist the walk prefers keep > substitute > delete > insert at each
step, so the same pair of sequences always yields the same script.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

KEEP, SUB, DEL, INS = "keep", "sub", "del", "ins"


class Op(NamedTuple):
    kind: str
    src: int  # source index (for ins: the source position the token is inserted before)
    trg: int | None  # target index, None for deletions


def distance_table(src: Sequence, trg: Sequence) -> list[list[int]]:
    """``table[i][j]`` = edit distance between ``src[i:]`` and ``trg[j:]``."""
    n, m = len(src), len(trg)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    table[n] = list(range(m, -1, -1))
    for i in range(n - 1, -1, -1):
        row, below = table[i], table[i + 1]
        row[m] = n - i
        si = src[i]
        for j in range(m - 1, -1, -1):
            diag = below[j + 1] + (0 if si == trg[j] else 1)
            row[j] = min(diag, below[j] + 1, row[j + 1] + 1)
    return table


def levenshtein(src: Sequence, trg: Sequence) -> int:
    return distance_table(src, trg)[0][0]


def align(src: Sequence, trg: Sequence) -> list[Op]:
    """Minimal edit script turning ``src`` into ``trg``."""
    table = distance_table(src, trg)
    n, m = len(src), len(trg)
    i = j = 0
    ops: list[Op] = []
    while i < n or j < m:
        here = table[i][j]
        if i < n and j < m and src[i] == trg[j] and table[i + 1][j + 1] == here:
            ops.append(Op(KEEP, i, j))
            i, j = i + 1, j + 1
        elif i < n and j < m and table[i + 1][j + 1] + 1 == here:
            ops.append(Op(SUB, i, j))
            i, j = i + 1, j + 1
        elif i < n and table[i + 1][j] + 1 == here:
            ops.append(Op(DEL, i, None))
            i += 1
        else:
            ops.append(Op(INS, i, j))
            j += 1
    return ops


def token_labels(src: Sequence, trg: Sequence) -> tuple[list[bool], list[bool]]:
    """Per-source "right" flags and per-target "changed" flags from :func:`align`.

    A source token is right iff it is kept (aligned to an identical target
    token). A target position is changed iff no keep op produced it.
    """
    right = [False] * len(src)
    changed = [True] * len(trg)
    for op in align(src, trg):
        if op.kind == KEEP:
            right[op.src] = True
            changed[op.trg] = False
    return right, changed
