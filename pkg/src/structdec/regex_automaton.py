"""Regex subset compiled to a pruned character DFA.

Supported syntax: literals, ``.``, character classes ``[...]`` (ranges,
negation), grouping ``( )``, alternation ``|``, and the suffixes ``?``,
``*``, ``+``, ``{m}``, ``{m,}``, ``{m,n}``. No anchors, backreferences, or
lookaround; patterns always match the whole string.

The DFA is pruned so that every remaining state can reach an accepting
state, which makes prefix viability equivalent to completability.
"""

from __future__ import annotations

from .charset import CharPred, parse_class_body
from .errors import EmptyLanguage, UnsupportedRegexFeature

# Marker for the "any character not individually mentioned" partition class.
OTHER = object()

_SPECIAL = set("|?*+()[]{}.\\")


# --- parsing to an AST ---
# node kinds: ("char", CharPred) ("cat", [nodes]) ("alt", [nodes])
#             ("rep", node, min, max_or_None) ("eps",)

class _Parser:
    def __init__(self, pattern: str):
        self.p = pattern
        self.i = 0

    def peek(self):
        return self.p[self.i] if self.i < len(self.p) else None

    def parse(self):
        node = self._alt()
        if self.i != len(self.p):
            raise UnsupportedRegexFeature(f"unexpected {self.p[self.i]!r} at {self.i}")
        return node

    def _alt(self):
        branches = [self._cat()]
        while self.peek() == "|":
            self.i += 1
            branches.append(self._cat())
        return branches[0] if len(branches) == 1 else ("alt", branches)

    def _cat(self):
        parts = []
        while True:
            ch = self.peek()
            if ch is None or ch in "|)":
                break
            parts.append(self._repeat())
        if not parts:
            return ("eps",)
        return parts[0] if len(parts) == 1 else ("cat", parts)

    def _repeat(self):
        node = self._atom()
        while True:
            ch = self.peek()
            if ch is not None and ch in "?*+{" and node[0] == "rep":
                raise UnsupportedRegexFeature(f"stacked quantifier at {self.i}")
            if ch == "?":
                self.i += 1
                node = ("rep", node, 0, 1)
            elif ch == "*":
                self.i += 1
                node = ("rep", node, 0, None)
            elif ch == "+":
                self.i += 1
                node = ("rep", node, 1, None)
            elif ch == "{":
                end = self.p.find("}", self.i)
                if end < 0:
                    raise UnsupportedRegexFeature("unterminated {m,n}")
                body = self.p[self.i + 1:end]
                self.i = end + 1
                node = ("rep", node, *self._bounds(body))
            else:
                return node

    @staticmethod
    def _bounds(body: str):
        try:
            if "," not in body:
                m = int(body)
                return m, m
            lo, hi = body.split(",", 1)
            m = int(lo)
            n = int(hi) if hi.strip() else None
        except ValueError as exc:
            raise UnsupportedRegexFeature(f"bad repetition {{{body}}}") from exc
        if n is not None and n < m:
            raise UnsupportedRegexFeature(f"bad repetition {{{body}}}")
        return m, n

    def _atom(self):
        ch = self.peek()
        if ch is None:
            raise UnsupportedRegexFeature("unexpected end of pattern")
        if ch == "(":
            self.i += 1
            node = self._alt()
            if self.peek() != ")":
                raise UnsupportedRegexFeature("unbalanced parenthesis")
            self.i += 1
            # parentheses shield an inner repeat from the stacked-quantifier
            # check: (a*)* is fine, a** is not
            return ("cat", [node]) if node[0] == "rep" else node
        if ch == "[":
            end = self._class_end()
            body = self.p[self.i + 1:end]
            self.i = end + 1
            return ("char", parse_class_body(body))
        if ch == ".":
            self.i += 1
            return ("char", CharPred.any_char())
        if ch == "\\":
            if self.i + 1 >= len(self.p):
                raise UnsupportedRegexFeature("dangling escape")
            esc = self.p[self.i + 1]
            self.i += 2
            mapped = {"n": "\n", "t": "\t", "r": "\r"}.get(esc, esc)
            if esc.isalnum() and esc not in "ntr":
                raise UnsupportedRegexFeature(f"unsupported escape \\{esc}")
            return ("char", CharPred.single(mapped))
        if ch in _SPECIAL:
            raise UnsupportedRegexFeature(f"unexpected {ch!r} at {self.i}")
        if ch in "^$":
            raise UnsupportedRegexFeature(
                "anchors are not supported; patterns always match the whole string")
        self.i += 1
        return ("char", CharPred.single(ch))

    def _class_end(self) -> int:
        j = self.i + 1
        while j < len(self.p):
            if self.p[j] == "\\":
                j += 2
                continue
            if self.p[j] == "]" and j > self.i + 1 + (self.p[self.i + 1:self.i + 2] == "^"):
                return j
            if self.p[j] == "]" and j == self.i + 1:
                # allow empty class "[]"
                return j
            j += 1
        raise UnsupportedRegexFeature("unterminated character class")


# --- Thompson NFA ---

class _Nfa:
    def __init__(self):
        self.eps: list[list[int]] = []
        self.edges: list[list[tuple[CharPred, int]]] = []

    def new_state(self) -> int:
        self.eps.append([])
        self.edges.append([])
        return len(self.eps) - 1


def _build(nfa: _Nfa, node) -> tuple[int, int]:
    kind = node[0]
    if kind == "eps":
        s = nfa.new_state()
        return s, s
    if kind == "char":
        s, e = nfa.new_state(), nfa.new_state()
        nfa.edges[s].append((node[1], e))
        return s, e
    if kind == "cat":
        first_s, prev_e = _build(nfa, node[1][0])
        for part in node[1][1:]:
            s, e = _build(nfa, part)
            nfa.eps[prev_e].append(s)
            prev_e = e
        return first_s, prev_e
    if kind == "alt":
        s, e = nfa.new_state(), nfa.new_state()
        for branch in node[1]:
            bs, be = _build(nfa, branch)
            nfa.eps[s].append(bs)
            nfa.eps[be].append(e)
        return s, e
    if kind == "rep":
        _, inner, lo, hi = node
        parts = [inner] * lo
        if hi is None:
            # X{lo,} = X^lo X*
            s, e = nfa.new_state(), nfa.new_state()
            bs, be = _build(nfa, inner)
            nfa.eps[s].append(bs)
            nfa.eps[s].append(e)
            nfa.eps[be].append(bs)
            nfa.eps[be].append(e)
            star = (s, e)
            if not parts:
                return star
            head_s, head_e = _build(nfa, ("cat", parts) if len(parts) > 1 else parts[0])
            nfa.eps[head_e].append(star[0])
            return head_s, star[1]
        # X{lo,hi}: lo copies then (hi-lo) optional copies
        s = nfa.new_state()
        cur = s
        for _ in range(lo):
            bs, be = _build(nfa, inner)
            nfa.eps[cur].append(bs)
            cur = be
        end = nfa.new_state()
        nfa.eps[cur].append(end)
        for _ in range(hi - lo):
            bs, be = _build(nfa, inner)
            nfa.eps[cur].append(bs)
            nfa.eps[be].append(end)
            cur = be
        return s, end
    raise AssertionError(kind)


def _eps_closure(nfa: _Nfa, states: frozenset) -> frozenset:
    stack = list(states)
    seen = set(states)
    while stack:
        s = stack.pop()
        for t in nfa.eps[s]:
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return frozenset(seen)


class RegexDfa:
    """Deterministic character automaton with dead states removed.

    Transitions are dicts mapping an individual character to the next state;
    the :data:`OTHER` key covers every character not individually mentioned
    in the pattern's predicates.
    """

    def __init__(self, transitions: list[dict], accepting: set[int], start: int,
                 mentioned: frozenset):
        self.transitions = transitions
        self.accepting = accepting
        self.start = start
        self.mentioned = mentioned

    def step(self, state: int, ch: str) -> int | None:
        # Mentioned characters never fall through to the OTHER class: if a
        # mentioned char has no explicit edge here, it is dead in this state.
        trans = self.transitions[state]
        if ch in self.mentioned:
            return trans.get(ch)
        return trans.get(OTHER)

    def is_accepting(self, state: int) -> bool:
        return state in self.accepting


def compile_regex_dfa(pattern: str) -> RegexDfa:
    ast = _Parser(pattern).parse()
    nfa = _Nfa()
    start, accept = _build(nfa, ast)

    # alphabet partition: every individually mentioned character, plus OTHER
    mentioned: set[str] = set()
    for edges in nfa.edges:
        for pred, _ in edges:
            mentioned.update(pred.chars)
    symbols = sorted(mentioned) + [OTHER]

    def move(states: frozenset, sym) -> frozenset:
        out = set()
        for s in states:
            for pred, t in nfa.edges[s]:
                if sym is OTHER:
                    if pred.negated:
                        out.add(t)
                elif pred.matches(sym):
                    out.add(t)
        return frozenset(out)

    start_set = _eps_closure(nfa, frozenset((start,)))
    ids = {start_set: 0}
    order = [start_set]
    transitions: list[dict] = [{}]
    queue = [start_set]
    while queue:
        cur = queue.pop()
        cid = ids[cur]
        for sym in symbols:
            nxt = _eps_closure(nfa, move(cur, sym))
            if not nxt:
                continue
            if nxt not in ids:
                ids[nxt] = len(order)
                order.append(nxt)
                transitions.append({})
                queue.append(nxt)
            transitions[cid][sym] = ids[nxt]
    accepting = {ids[s] for s in order if accept in s}

    # prune states that cannot reach acceptance
    n = len(order)
    reverse: list[set[int]] = [set() for _ in range(n)]
    for i, trans in enumerate(transitions):
        for t in trans.values():
            reverse[t].add(i)
    live = set(accepting)
    stack = list(accepting)
    while stack:
        s = stack.pop()
        for p in reverse[s]:
            if p not in live:
                live.add(p)
                stack.append(p)
    if 0 not in live:
        raise EmptyLanguage(f"pattern matches no string: {pattern!r}")
    remap = {old: new for new, old in enumerate(sorted(live))}
    pruned = [
        {sym: remap[t] for sym, t in transitions[old].items() if t in live}
        for old in sorted(live)
    ]
    return RegexDfa(pruned, {remap[a] for a in accepting if a in live}, remap[0],
                    frozenset(mentioned))
