"""Character predicates shared by the regex and grammar engines.

A predicate is either a finite set of characters or the complement of one,
so the union of all predicates on an automaton induces a finite partition of
the character space (each mentioned character, plus one "everything else"
class). That keeps DFA construction exact without enumerating unicode.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CharPred:
    chars: frozenset
    negated: bool = False

    def matches(self, ch: str) -> bool:
        return (ch in self.chars) != self.negated

    @classmethod
    def single(cls, ch: str) -> "CharPred":
        return cls(frozenset((ch,)))

    @classmethod
    def any_char(cls) -> "CharPred":
        return cls(frozenset(), negated=True)


def parse_class_body(body: str) -> CharPred:
    """Parse the inside of a character class ``[...]``.

    Supports ranges ``a-z``, escapes (``\\n \\t \\r \\\\ \\] \\- \\uXXXX``)
    and leading ``^`` negation. An empty body yields a predicate matching
    nothing (the empty language building block).
    """
    negated = False
    i = 0
    if body.startswith("^"):
        negated = True
        i = 1
    chars: set[str] = set()
    pending: str | None = None

    def read_one(j):
        ch = body[j]
        if ch == "\\":
            if j + 1 >= len(body):
                raise ValueError("dangling escape in character class")
            esc = body[j + 1]
            if esc == "n":
                return "\n", j + 2
            if esc == "t":
                return "\t", j + 2
            if esc == "r":
                return "\r", j + 2
            if esc == "u":
                hexs = body[j + 2:j + 6]
                if len(hexs) != 4:
                    raise ValueError("bad \\u escape in character class")
                return chr(int(hexs, 16)), j + 6
            return esc, j + 2
        return ch, j + 1

    while i < len(body):
        if body[i] == "-" and pending is not None and i + 1 < len(body):
            hi, i = read_one(i + 1)
            lo = pending
            if ord(lo) > ord(hi):
                raise ValueError(f"bad range {lo!r}-{hi!r}")
            chars.update(chr(c) for c in range(ord(lo), ord(hi) + 1))
            pending = None
            continue
        if pending is not None:
            chars.add(pending)
        pending, i = read_one(i)
    if pending is not None:
        chars.add(pending)
    return CharPred(frozenset(chars), negated)
