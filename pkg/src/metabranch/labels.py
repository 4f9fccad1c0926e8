"""Ulam-Harris labels and plane-tree checks.

A label is a finite sequence of positive integers; the empty sequence is the
root.  Child ``i`` of ``p`` is ``p + (i,)``.
"""
from __future__ import annotations

import json
from typing import Iterable, Sequence

__all__ = [
    "Label",
    "ROOT",
    "parent",
    "concat",
    "generation",
    "is_valid_tree",
    "offspring_labels",
    "parse_label",
]


class Label(tuple):
    """Immutable genealogical address.

    Ordering is by generation first, then lexicographic on the entries, so
    that sorted label sets iterate deterministically breadth-first.
    """

    __slots__ = ()

    def __new__(cls, entries: Iterable[int] = ()):
        entries = tuple(int(e) for e in entries)
        for e in entries:
            if e < 1:
                raise ValueError(f"label entries must be >= 1, got {e}")
        return super().__new__(cls, entries)

    @property
    def generation(self) -> int:
        return len(self)

    def _key(self):
        return (len(self), tuple(self))

    def __lt__(self, other):
        return self._key() < Label(other)._key()

    def __le__(self, other):
        return self._key() <= Label(other)._key()

    def __gt__(self, other):
        return self._key() > Label(other)._key()

    def __ge__(self, other):
        return self._key() >= Label(other)._key()

    def __eq__(self, other):
        return tuple.__eq__(self, other)

    def __ne__(self, other):
        return tuple.__ne__(self, other)

    def __hash__(self):
        return tuple.__hash__(self)

    def __str__(self):
        if not self:
            return "∅"
        return "(" + ",".join(str(e) for e in self) + ")"

    def __repr__(self):
        return f"Label({str(self)})"

    def to_json(self) -> list[int]:
        return list(self)


ROOT = Label()


def parse_label(text: str | Sequence[int]) -> Label:
    """Parse ``[]``, ``[1, 2]``, ``(1,2)`` or ``∅``."""
    if not isinstance(text, str):
        return Label(text)
    s = text.strip()
    if s in ("∅", "", "[]", "()"):
        return ROOT
    if s.startswith("("):
        s = "[" + s[1:-1] + "]"
    value = json.loads(s)
    if isinstance(value, int):
        value = [value]
    return Label(value)


def generation(label: Sequence[int]) -> int:
    return len(label)


def parent(label: Sequence[int]) -> Label:
    if len(label) == 0:
        raise ValueError("root has no parent")
    return Label(label[:-1])


def concat(k: Sequence[int], l: Sequence[int]) -> Label:
    return Label(tuple(k) + tuple(l))


def offspring_labels(p: Sequence[int], current_count: int, batch: int) -> list[Label]:
    """Labels of a batch of ``batch`` children after ``current_count`` earlier ones."""
    if batch < 1:
        raise ValueError("empty offspring batch")
    if current_count < 0:
        raise ValueError("current_count must be non-negative")
    base = tuple(p)
    return [Label(base + (current_count + i,)) for i in range(1, batch + 1)]


def is_valid_tree(labels: Iterable[Sequence[int]]) -> bool:
    """True iff the finite set is a rooted plane tree.

    The root must be present, the set must be closed under ``parent`` and the
    children of every node must be exactly ``1..A`` for some ``A >= 0``.
    """
    s = {tuple(l) for l in labels}
    if () not in s:
        return False
    n_children: dict[tuple, int] = {}
    for l in s:
        if not l:
            continue
        if l[:-1] not in s:
            return False
        n_children[l[:-1]] = n_children.get(l[:-1], 0) + 1
    for l in s:
        if not l:
            continue
        # contiguity: the largest child index equals the child count
        p = l[:-1]
        if l[-1] > n_children[p]:
            return False
    return True
