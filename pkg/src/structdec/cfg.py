"""Context-free grammars with an incremental character-level recognizer.

Grammar dialect
---------------
Rules are ``name: alt | alt``. An alternative is a sequence of items, each
optionally suffixed with ``?``, ``*`` or ``+``:

* quoted terminals  ``"<<"`` (escapes: ``\\n \\t \\r \\" \\\\ \\uXXXX``)
* character classes ``[a-z0-9_]`` / ``[^"\\n]`` (same escapes)
* rule references   ``expr``
* groups            ``( ... | ... )``

``//`` and ``#`` start comments. A leading ``?`` on a rule name and trailing
``-> name`` annotations (as found in Lark-style grammar files) are accepted
and ignored. The first rule is the start symbol.

Recognition is chart-based (Earley) over characters, one chart column per
consumed character. The grammar is pruned of unproductive and unreachable
nonterminals at compile time, which gives the correct-prefix property: a
nonempty column means the consumed prefix extends to some accepted string.
"""

from __future__ import annotations

import re

from .charset import CharPred, parse_class_body
from .errors import GrammarParseError, UnproductiveStartSymbol

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>(//|\#)[^\n]*)
  | (?P<arrow>->\s*[A-Za-z_][\w]*)
  | (?P<name>\??[A-Za-z_][\w]*)
  | (?P<colon>:)
  | (?P<pipe>\|)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<suffix>[?*+])
  | (?P<string>"(?:\\.|[^"\\])*")
  | (?P<class>\[(?:\\.|[^\]\\])*\])
    """,
    re.VERBOSE,
)


def _lex(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise GrammarParseError(f"cannot lex grammar at offset {pos}: {source[pos:pos + 20]!r}")
        pos = m.end()
        kind = m.lastgroup
        if kind in ("ws", "comment", "arrow"):
            continue
        tokens.append((kind, m.group()))
    return tokens


def _unescape(body: str) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            esc = body[i + 1]
            if esc == "n":
                out.append("\n")
            elif esc == "t":
                out.append("\t")
            elif esc == "r":
                out.append("\r")
            elif esc == "u":
                out.append(chr(int(body[i + 2:i + 6], 16)))
                i += 6
                continue
            else:
                out.append(esc)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


class _RuleParser:
    """Parses the token stream into ``{name: [alternatives]}``.

    Alternatives are lists of symbols; a symbol is either a rule name (str)
    or a :class:`CharPred`. Suffixed items and groups desugar into fresh
    helper rules.
    """

    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0
        self.rules: dict[str, list[list]] = {}
        self.order: list[str] = []
        self._fresh = 0

    def peek(self, offset=0):
        j = self.i + offset
        return self.tokens[j] if j < len(self.tokens) else (None, None)

    def parse(self):
        while self.i < len(self.tokens):
            kind, value = self.peek()
            if kind != "name" or self.peek(1)[0] != "colon":
                raise GrammarParseError(f"expected a rule definition, got {value!r}")
            name = value.lstrip("?")
            self.i += 2
            alts = self._alts()
            if name in self.rules:
                self.rules[name].extend(alts)
            else:
                self.rules[name] = alts
                self.order.append(name)
        if not self.rules:
            raise GrammarParseError("grammar has no rules")
        return self.rules, self.order[0]

    def _alts(self):
        alts = [self._seq()]
        while self.peek()[0] == "pipe":
            self.i += 1
            alts.append(self._seq())
        return alts

    def _seq(self):
        items = []
        while True:
            kind, value = self.peek()
            if kind in (None, "pipe", "rparen"):
                break
            if kind == "name":
                # a new rule definition starts here
                if self.peek(1)[0] == "colon":
                    break
                self.i += 1
                sym = value.lstrip("?")
            elif kind == "string":
                self.i += 1
                text = _unescape(value[1:-1])
                sym = [CharPred.single(c) for c in text]
            elif kind == "class":
                self.i += 1
                sym = parse_class_body(value[1:-1])
            elif kind == "lparen":
                self.i += 1
                sym = self._group()
            else:
                raise GrammarParseError(f"unexpected {value!r} in rule body")
            sym = self._suffix(sym)
            if isinstance(sym, list):
                items.extend(sym)
            else:
                items.append(sym)
        return items

    def _group(self):
        alts = self._alts()
        if self.peek()[0] != "rparen":
            raise GrammarParseError("unbalanced '(' in grammar")
        self.i += 1
        if len(alts) == 1:
            return list(alts[0])
        name = self._fresh_rule(alts)
        return name

    def _suffix(self, sym):
        kind, value = self.peek()
        if kind != "suffix":
            return sym
        self.i += 1
        base = sym if isinstance(sym, list) else [sym]
        if value == "?":
            return self._fresh_rule([list(base), []])
        if value == "*":
            name = f"%star{self._fresh}"
            self._fresh += 1
            self.rules[name] = [list(base) + [name], []]
            got = self._suffix(name)  # allow stacked suffixes, unlikely but cheap
            return got
        # "+": one copy then star
        star = f"%star{self._fresh}"
        self._fresh += 1
        self.rules[star] = [list(base) + [star], []]
        return self._fresh_rule([list(base) + [star]])

    def _fresh_rule(self, alts):
        name = f"%g{self._fresh}"
        self._fresh += 1
        self.rules[name] = [list(a) for a in alts]
        return name


def _prune(rules: dict[str, list[list]], start: str):
    """Remove unproductive and unreachable nonterminals."""
    productive: set[str] = set()
    changed = True
    while changed:
        changed = False
        for name, alts in rules.items():
            if name in productive:
                continue
            for alt in alts:
                if all(isinstance(s, CharPred) or s in productive for s in alt):
                    productive.add(name)
                    changed = True
                    break
    if start not in productive:
        raise UnproductiveStartSymbol(f"start symbol {start!r} derives no terminal string")
    kept = {
        name: [alt for alt in alts
               if all(isinstance(s, CharPred) or s in productive for s in alt)]
        for name, alts in rules.items() if name in productive
    }
    reachable = {start}
    stack = [start]
    while stack:
        for alt in kept[stack.pop()]:
            for s in alt:
                if isinstance(s, str) and s not in reachable:
                    reachable.add(s)
                    stack.append(s)
    return {name: alts for name, alts in kept.items() if name in reachable}


class Grammar:
    """Normalized grammar: numbered rules of (lhs, rhs-symbol-tuple)."""

    def __init__(self, source: str):
        rules, start = _RuleParser(_lex(source)).parse()
        for name, alts in rules.items():
            for alt in alts:
                for sym in alt:
                    if isinstance(sym, str) and sym not in rules:
                        raise GrammarParseError(f"rule {name!r} references undefined {sym!r}")
        rules = _prune(rules, start)
        self.start = start
        self.rules: list[tuple[str, tuple]] = []
        self.by_lhs: dict[str, list[int]] = {}
        for name, alts in rules.items():
            for alt in alts:
                self.by_lhs.setdefault(name, []).append(len(self.rules))
                self.rules.append((name, tuple(alt)))


# --- Earley recognition ---

class _Column:
    __slots__ = ("index", "items", "item_set", "wants", "completed_null")

    def __init__(self, index: int):
        self.index = index
        self.items: list[tuple[int, int, int]] = []  # (rule_id, dot, origin)
        self.item_set: set[tuple[int, int, int]] = set()
        self.wants: dict[str, list[tuple[int, int, int]]] = {}
        self.completed_null: set[str] = set()


class EarleyState:
    """Recognizer configuration after consuming a character prefix.

    Holds the full chart (columns share structure across states since
    advancing only appends). States cache their per-character successors so
    that repeated decodes over the same automaton reuse work.
    """

    __slots__ = ("grammar", "columns", "accepting", "char_cache", "token_cache", "mask")

    def __init__(self, grammar: Grammar, columns: tuple):
        self.grammar = grammar
        self.columns = columns
        last = columns[-1]
        self.accepting = any(
            self.grammar.rules[rid][0] == self.grammar.start and dot == len(self.grammar.rules[rid][1]) and origin == 0
            for rid, dot, origin in last.items
        )
        self.char_cache: dict[str, EarleyState | None] = {}
        self.token_cache: dict[int, EarleyState | None] = {}
        self.mask = None

    def advance_char(self, ch: str) -> "EarleyState | None":
        cached = self.char_cache.get(ch, _MISSING)
        if cached is not _MISSING:
            return cached
        nxt = self._scan(ch)
        self.char_cache[ch] = nxt
        return nxt

    def _scan(self, ch: str) -> "EarleyState | None":
        grammar = self.grammar
        cols = self.columns
        cur = cols[-1]
        new = _Column(cur.index + 1)
        seeds = []
        for item in cur.items:
            rid, dot, origin = item
            rhs = grammar.rules[rid][1]
            if dot < len(rhs):
                sym = rhs[dot]
                if isinstance(sym, CharPred) and sym.matches(ch):
                    seeds.append((rid, dot + 1, origin))
        if not seeds:
            return None
        _close(grammar, cols + (new,), new, seeds)
        if not new.items:
            return None
        return EarleyState(grammar, cols + (new,))


_MISSING = object()


def _close(grammar: Grammar, columns: tuple, col: _Column, seeds) -> None:
    """Predict/complete fixpoint for one chart column."""
    def add(item):
        if item not in col.item_set:
            col.item_set.add(item)
            col.items.append(item)
            queue.append(item)

    for item in seeds:
        col.item_set.add(item)
        col.items.append(item)
    queue = list(seeds)
    while queue:
        rid, dot, origin = queue.pop()
        lhs, rhs = grammar.rules[rid]
        if dot == len(rhs):
            # completion: advance items waiting for lhs in the origin column
            origin_col = columns[origin]
            for wrid, wdot, worigin in list(origin_col.wants.get(lhs, ())):
                add((wrid, wdot + 1, worigin))
            if origin == col.index:
                col.completed_null.add(lhs)
            continue
        sym = rhs[dot]
        if isinstance(sym, str):
            col.wants.setdefault(sym, []).append((rid, dot, origin))
            for prid in grammar.by_lhs.get(sym, ()):
                add((prid, 0, col.index))
            if sym in col.completed_null:
                add((rid, dot + 1, origin))


def initial_earley_state(grammar: Grammar) -> EarleyState:
    col = _Column(0)
    seeds = [(rid, 0, 0) for rid in grammar.by_lhs[grammar.start]]
    _close(grammar, (col,), col, seeds)
    return EarleyState(grammar, (col,))
