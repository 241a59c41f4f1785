"""Vocabularies, greedy tokenization, and the token-string trie.

Token ids are dense integers ``0..|V|-1`` in construction order. Tokenization
is greedy longest-match left-to-right, which makes it deterministic and gives
an exact round-trip: ``detokenize(tokenize(s)) == s`` whenever ``s`` is
tokenizable at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import DuplicateToken, EmptyToken, InvalidTokenId, MissingEos, Untokenizable

TokenIds = tuple[int, ...]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    eos_id: int
    _index: dict[str, int] = field(init=False, repr=False, compare=False, hash=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def eos_token(self) -> str:
        return self.tokens[self.eos_id]

    def id_of(self, token: str) -> int:
        return self._index[token]


def build_vocabulary(token_strings: list[str], eos: str) -> Vocabulary:
    """Build a vocabulary with dense ids assigned in input order."""
    seen = set()
    for t in token_strings:
        if not t:
            raise EmptyToken("token strings must be nonempty")
        if t in seen:
            raise DuplicateToken(f"duplicate token {t!r}")
        seen.add(t)
    if eos not in seen:
        raise MissingEos(f"eos token {eos!r} not in token list")
    if len(token_strings) < 2:
        raise MissingEos("vocabulary needs at least one content token besides eos")
    vocab = Vocabulary(tuple(token_strings), token_strings.index(eos))
    return vocab


def load_vocabulary(path: str) -> Vocabulary:
    """Load a vocabulary file: ``{"tokens": [...], "eos": "<eos>"}``."""
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    return build_vocabulary(list(data["tokens"]), data["eos"])


def vocabulary_from_spec(spec: dict) -> Vocabulary:
    return build_vocabulary(list(spec["tokens"]), spec["eos"])


class TokenTrie:
    """Character trie over the token strings of a vocabulary.

    Used both by the greedy tokenizer (longest match) and by constraint
    automata to compute valid-token masks with shared-prefix character
    simulation.
    """

    __slots__ = ("children", "token_id")

    def __init__(self):
        self.children: dict[str, TokenTrie] = {}
        self.token_id: int | None = None

    @classmethod
    def from_vocabulary(cls, vocab: Vocabulary, include_eos: bool = False) -> "TokenTrie":
        root = cls()
        for tid, tok in enumerate(vocab.tokens):
            if tid == vocab.eos_id and not include_eos:
                continue
            node = root
            for ch in tok:
                node = node.children.setdefault(ch, cls())
            node.token_id = tid
        return root


def _trie_for(vocab: Vocabulary) -> TokenTrie:
    # one trie per vocabulary instance, built lazily
    trie = getattr(vocab, "_trie", None)
    if trie is None:
        trie = TokenTrie.from_vocabulary(vocab, include_eos=True)
        object.__setattr__(vocab, "_trie", trie)
    return trie


def tokenize(vocab: Vocabulary, text: str) -> TokenIds:
    """Greedy longest-match segmentation of ``text``."""
    trie = _trie_for(vocab)
    ids: list[int] = []
    pos = 0
    n = len(text)
    while pos < n:
        node = trie
        best = None
        best_end = pos
        i = pos
        while i < n:
            node = node.children.get(text[i])
            if node is None:
                break
            i += 1
            if node.token_id is not None:
                best, best_end = node.token_id, i
        if best is None:
            raise Untokenizable(text, pos)
        ids.append(best)
        pos = best_end
    return tuple(ids)


def detokenize(vocab: Vocabulary, ids) -> str:
    """Concatenate token strings; eos renders as the empty string."""
    parts = []
    for i in ids:
        if not (0 <= i < len(vocab)):
            raise InvalidTokenId(f"token id {i} out of range for |V|={len(vocab)}")
        if i != vocab.eos_id:
            parts.append(vocab.tokens[i])
    return "".join(parts)
