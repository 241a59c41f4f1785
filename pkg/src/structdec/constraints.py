"""Constraint automata bound to a vocabulary.

A compiled constraint pairs a character-level recognizer (regex DFA or
Earley chart recognizer) with the vocabulary's token trie. Valid-token masks
are computed by simulating each token's characters from the current state,
walking the trie so shared prefixes are simulated once. Masks and per-token
transitions are memoized on the state objects, so repeated decodes over the
same automaton share all recognizer work.

Because compilation prunes dead recognizer states and useless grammar
symbols, any live character prefix extends to an accepted string; eos is
valid exactly in accepting states.
"""

from __future__ import annotations

import json

import numpy as np

from .cfg import EarleyState, Grammar, initial_earley_state
from .errors import DeadState, EmptyLanguage, InvalidAdvance, UnproductiveStartSymbol
from .json_schema import schema_to_grammar
from .regex_automaton import RegexDfa, compile_regex_dfa
from .vocab import TokenTrie, Vocabulary


_MISSING = object()


class TokenMask:
    """Set of valid next-token ids at one step."""

    __slots__ = ("valid_ids", "size")

    def __init__(self, valid_ids, size: int):
        self.valid_ids = frozenset(valid_ids)
        self.size = size

    def __contains__(self, token_id: int) -> bool:
        return token_id in self.valid_ids

    def __len__(self) -> int:
        return len(self.valid_ids)

    def as_bitvector(self) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        m[list(self.valid_ids)] = True
        return m

    @classmethod
    def full(cls, size: int) -> "TokenMask":
        return cls(range(size), size)


class ConstraintState:
    """Opaque recognizer configuration after a character prefix.

    Immutable; successor states and masks are cached on the instance, making
    the reachable state graph a shared prefix trie across decodes.
    """

    __slots__ = ("accepting", "_inner", "_children", "_mask")

    def __init__(self, inner, accepting: bool):
        self._inner = inner
        self.accepting = accepting
        self._children: dict[int, ConstraintState | None] = {}
        self._mask: TokenMask | None = None


class ConstraintAutomaton:
    """Compiled constraint with incremental advancement and token masks."""

    def __init__(self, kind: str, source: str, vocab: Vocabulary, engine):
        self.kind = kind
        self.source = source
        self.vocab = vocab
        self._engine = engine  # RegexDfa or Grammar
        self._trie = TokenTrie.from_vocabulary(vocab, include_eos=False)
        self._initial = self._make_initial()

    # --- engine dispatch ---

    def _make_initial(self) -> ConstraintState:
        if isinstance(self._engine, RegexDfa):
            inner = self._engine.start
            accepting = self._engine.is_accepting(inner)
        else:
            inner = initial_earley_state(self._engine)
            accepting = inner.accepting
        return ConstraintState(inner, accepting)

    def _advance_char(self, inner, ch: str):
        if isinstance(self._engine, RegexDfa):
            return self._engine.step(inner, ch)
        return inner.advance_char(ch)

    def _is_accepting(self, inner) -> bool:
        if isinstance(self._engine, RegexDfa):
            return self._engine.is_accepting(inner)
        return inner.accepting

    # --- public surface ---

    def initial_state(self) -> ConstraintState:
        return self._initial

    def accepts(self, text: str) -> bool:
        """Membership in the constraint language, independent of tokenization."""
        inner = self._initial._inner
        for ch in text:
            inner = self._advance_char(inner, ch)
            if inner is None:
                return False
        return self._is_accepting(inner)

    def valid_next_tokens(self, state: ConstraintState) -> TokenMask:
        if state._mask is not None:
            return state._mask
        if state._inner is None:
            raise DeadState("mask requested for a dead state")
        valid = []
        if state.accepting:
            valid.append(self.vocab.eos_id)
        stack = [(self._trie, state._inner)]
        while stack:
            node, inner = stack.pop()
            for ch, child in node.children.items():
                nxt = self._advance_char(inner, ch)
                if nxt is None:
                    continue
                if child.token_id is not None:
                    valid.append(child.token_id)
                if child.children:
                    stack.append((child, nxt))
        mask = TokenMask(valid, len(self.vocab))
        state._mask = mask
        return mask

    def advance(self, state: ConstraintState, token_id: int) -> ConstraintState:
        if token_id == self.vocab.eos_id:
            raise InvalidAdvance("cannot advance past eos")
        cached = state._children.get(token_id, _MISSING)
        if cached is not _MISSING:
            if cached is None:
                raise InvalidAdvance(
                    f"token {self.vocab.tokens[token_id]!r} not valid in this state")
            return cached
        inner = state._inner
        for ch in self.vocab.tokens[token_id]:
            inner = self._advance_char(inner, ch)
            if inner is None:
                break
        if inner is None:
            state._children[token_id] = None
            raise InvalidAdvance(
                f"token {self.vocab.tokens[token_id]!r} not valid in this state")
        nxt = ConstraintState(inner, self._is_accepting(inner))
        state._children[token_id] = nxt
        return nxt


def compile_regex(pattern: str, vocab: Vocabulary) -> ConstraintAutomaton:
    """Compile a regex pattern; raises EmptyLanguage if it matches nothing."""
    dfa = compile_regex_dfa(pattern)
    return ConstraintAutomaton("regex", pattern, vocab, dfa)


def compile_cfg(grammar_source: str, vocab: Vocabulary) -> ConstraintAutomaton:
    """Compile a grammar in the package's BNF dialect."""
    grammar = Grammar(grammar_source)
    return ConstraintAutomaton("cfg", grammar_source, vocab, grammar)


def compile_json_schema(schema, vocab: Vocabulary) -> ConstraintAutomaton:
    """Compile a schema document (dict or JSON text) via grammar generation."""
    if isinstance(schema, str):
        schema = json.loads(schema)
    source = schema_to_grammar(schema)
    try:
        grammar = Grammar(source)
    except UnproductiveStartSymbol as exc:  # pragma: no cover - generator keeps start productive
        raise EmptyLanguage(str(exc)) from exc
    return ConstraintAutomaton("json_schema", json.dumps(schema, sort_keys=True), vocab, grammar)


def compile_constraint(kind: str, source: str, vocab: Vocabulary) -> ConstraintAutomaton:
    if kind == "regex":
        return compile_regex(source, vocab)
    if kind == "cfg":
        return compile_cfg(source, vocab)
    if kind == "json_schema":
        return compile_json_schema(source, vocab)
    raise ValueError(f"unknown constraint kind {kind!r}")
