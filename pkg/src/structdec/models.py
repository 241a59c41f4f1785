"""Autoregressive token-distribution sources.

All distributions are vectors of natural-log probabilities over the
vocabulary, normalized so that ``logsumexp(logprobs) == 0`` within 1e-9.
Zero-probability tokens carry ``-inf``. Models are immutable after
construction and deterministic: the same (model, context) always yields the
bitwise-identical vector for in-process kinds.

Four kinds are supported:

* ``table``   -- longest-suffix lookup table with an optional copy bias
                 (context-occurring tokens get a logit boost), used to build
                 desk-scale fixtures where conditioning on a draft shifts
                 mass toward schema-consistent tokens.
* ``ngram``   -- add-k smoothed n-gram counts trained on a toy corpus.
* ``scripted``-- a fixed per-step schedule of distributions indexed by
                 context length (clamped at the last entry).
* ``remote``  -- wire-protocol adapter: HTTP POST /v1/logprobs.
"""

from __future__ import annotations

import json
import math
from typing import Sequence

import numpy as np

from .errors import (
    ContextTooLong,
    EmptyCorpus,
    PreconditionViolation,
    RemoteUnavailable,
    Untokenizable,
)
from .vocab import Vocabulary, tokenize

NORMALIZATION_TOL = 1e-9


def logsumexp(v: np.ndarray) -> float:
    m = np.max(v)
    if m == -np.inf:
        return -math.inf
    return float(m + np.log(np.sum(np.exp(v - m))))


def normalize_logprobs(v: np.ndarray) -> np.ndarray:
    z = logsumexp(v)
    if z == -math.inf or math.isnan(z):
        raise ValueError("cannot normalize an all-zero distribution")
    return v - z


def probs_to_logprobs(probs: Sequence[float]) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if np.any(p < 0):
        raise ValueError("negative probability")
    with np.errstate(divide="ignore"):
        return normalize_logprobs(np.log(p))


def assert_normalized(logprobs: np.ndarray, tol: float = NORMALIZATION_TOL) -> None:
    if np.any(np.isnan(logprobs)):
        raise PreconditionViolation("NaN in log-probability vector")
    z = logsumexp(logprobs)
    if abs(z) > tol:
        raise PreconditionViolation(f"distribution not normalized: logsumexp={z}")


class Model:
    """Base class; subclasses implement :meth:`_distribution`."""

    kind = "abstract"

    def __init__(self, vocab: Vocabulary, declared_param_count: int = 0,
                 max_context: int | None = None):
        self.vocab = vocab
        self.declared_param_count = int(declared_param_count)
        self.max_context = max_context

    def next_distribution(self, context: Sequence[int]) -> np.ndarray:
        ctx = tuple(context)
        for i in ctx:
            if not (0 <= i < len(self.vocab)):
                raise PreconditionViolation(f"context id {i} out of range")
        if self.max_context is not None and len(ctx) > self.max_context:
            raise ContextTooLong(f"context length {len(ctx)} > {self.max_context}")
        return self._distribution(ctx)

    def _distribution(self, context: tuple[int, ...]) -> np.ndarray:
        raise NotImplementedError


class TableModel(Model):
    """Longest-suffix lookup over context, with optional copy bias.

    ``entries`` maps context suffixes (token-id tuples) to logprob vectors;
    the longest suffix of the query context that has an entry wins, falling
    back to ``default``. When ``copy_boost`` is nonzero, each token's logit is
    raised by ``copy_boost * count(token in context)`` before renormalizing,
    so tokens already present in the conditioning context become more likely.
    """

    kind = "table"

    def __init__(self, vocab: Vocabulary, default, entries=None, copy_boost: float = 0.0,
                 declared_param_count: int = 0, max_context: int | None = None):
        super().__init__(vocab, declared_param_count, max_context)
        self.default = np.asarray(default, dtype=float)
        assert_normalized(self.default)
        self.entries: dict[tuple[int, ...], np.ndarray] = {}
        for key, vec in (entries or {}).items():
            v = np.asarray(vec, dtype=float)
            assert_normalized(v)
            self.entries[tuple(key)] = v
        self.copy_boost = float(copy_boost)
        self._max_key = max((len(k) for k in self.entries), default=0)

    def _distribution(self, context):
        base = self.default
        for length in range(min(len(context), self._max_key), 0, -1):
            hit = self.entries.get(context[-length:])
            if hit is not None:
                base = hit
                break
        if self.copy_boost != 0.0 and context:
            counts = np.bincount(np.asarray(context), minlength=len(self.vocab)).astype(float)
            base = normalize_logprobs(base + self.copy_boost * counts)
        return base


class ScriptedModel(Model):
    """Fixed schedule of distributions indexed by context length."""

    kind = "scripted"

    def __init__(self, vocab: Vocabulary, schedule, declared_param_count: int = 0,
                 max_context: int | None = None):
        super().__init__(vocab, declared_param_count, max_context)
        if not schedule:
            raise ValueError("scripted model needs at least one step distribution")
        self.schedule = []
        for vec in schedule:
            v = np.asarray(vec, dtype=float)
            assert_normalized(v)
            self.schedule.append(v)

    def _distribution(self, context):
        return self.schedule[min(len(context), len(self.schedule) - 1)]


class NgramModel(Model):
    """Add-k smoothed n-gram model over (order-1)-token contexts.

    Unseen contexts have zero counts everywhere, so the smoothed estimate
    degenerates to uniform over the vocabulary; the toy model can therefore
    never itself destroy feasible mass.
    """

    kind = "ngram"

    def __init__(self, vocab: Vocabulary, order: int, counts: dict, add_k: float,
                 declared_param_count: int = 0, max_context: int | None = None):
        super().__init__(vocab, declared_param_count, max_context)
        if order < 1:
            raise ValueError("order must be >= 1")
        if add_k <= 0:
            raise ValueError("add_k must be positive")
        self.order = order
        self.add_k = float(add_k)
        self.counts = {tuple(k): np.asarray(v, dtype=float) for k, v in counts.items()}

    def _distribution(self, context):
        ctx = context[-(self.order - 1):] if self.order > 1 else ()
        c = self.counts.get(ctx)
        if c is None:
            c = np.zeros(len(self.vocab))
        p = (c + self.add_k) / (c.sum() + self.add_k * len(self.vocab))
        return np.log(p)


def train_table_ngram(corpus: list[str], vocab: Vocabulary, order: int, add_k: float,
                      declared_param_count: int = 0) -> NgramModel:
    """Count-based n-gram training on a toy corpus.

    Each corpus string is tokenized and terminated with eos; transition
    counts are collected for every position, keyed by the preceding
    (order-1)-token window (shorter near the string start).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if add_k <= 0:
        raise ValueError("add_k must be positive")
    sequences = []
    for text in corpus:
        ids = tokenize(vocab, text) + (vocab.eos_id,)
        sequences.append(ids)
    if not any(len(s) > 1 or s != (vocab.eos_id,) for s in sequences) or not sequences:
        raise EmptyCorpus("no usable sequences in corpus")
    counts: dict[tuple[int, ...], np.ndarray] = {}
    for seq in sequences:
        for t, tok in enumerate(seq):
            ctx = seq[max(0, t - (order - 1)):t] if order > 1 else ()
            vec = counts.get(ctx)
            if vec is None:
                vec = counts[ctx] = np.zeros(len(vocab))
            vec[tok] += 1
    return NgramModel(vocab, order, counts, add_k, declared_param_count)


class RemoteModel(Model):
    """Adapter for an external logits endpoint.

    POSTs ``{"context": [int, ...]}`` to ``{endpoint}/v1/logprobs`` and
    expects ``{"logprobs": [float, ...]}`` of length |V|. The response is
    renormalized in log space; non-200 responses and transport failures map
    to :class:`RemoteUnavailable`.
    """

    kind = "remote"

    def __init__(self, vocab: Vocabulary, endpoint: str, client=None,
                 declared_param_count: int = 0, max_context: int | None = None):
        super().__init__(vocab, declared_param_count, max_context)
        self.endpoint = endpoint.rstrip("/")
        if client is None:
            import httpx
            client = httpx.Client()
        self._client = client

    def _distribution(self, context):
        import httpx
        try:
            resp = self._client.post(self.endpoint + "/v1/logprobs",
                                     json={"context": list(context)})
        except httpx.HTTPError as exc:
            raise RemoteUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise RemoteUnavailable(f"endpoint returned {resp.status_code}")
        payload = resp.json()
        logprobs = payload.get("logprobs")
        if logprobs is None or len(logprobs) != len(self.vocab):
            raise RemoteUnavailable(
                f"bad response: expected {len(self.vocab)} logprobs")
        v = np.asarray(logprobs, dtype=float)
        if np.any(np.isnan(v)):
            raise RemoteUnavailable("NaN in remote logprobs")
        return normalize_logprobs(v)


def sequence_logprob(model: Model, context: Sequence[int], seq: Sequence[int]) -> float:
    """Log-probability of ``seq`` as a continuation of ``context``.

    Exactly the stepwise sum of ``next_distribution`` lookups, so it shares
    the arithmetic path with the decode loop.
    """
    seq = tuple(seq)
    if not seq:
        raise PreconditionViolation("sequence must be nonempty")
    ctx = tuple(context)
    total = 0.0
    for tok in seq:
        dist = model.next_distribution(ctx)
        total += float(dist[tok])
        ctx = ctx + (tok,)
    return total


def _probs_map_to_vec(vocab: Vocabulary, probs: dict) -> np.ndarray:
    vec = np.zeros(len(vocab))
    for tok, p in probs.items():
        vec[vocab.id_of(tok)] = float(p)
    return probs_to_logprobs(vec)


def model_from_spec(spec: dict, vocab: Vocabulary, client=None) -> Model:
    """Build a model from its JSON description.

    Contexts and schedule entries are given as token strings so that spec
    files stay readable; see the fixture files for examples.
    """
    kind = spec.get("kind")
    params = int(spec.get("declared_param_count", 0))
    max_context = spec.get("max_context")
    if kind == "table":
        entries = {}
        for entry in spec.get("entries", []):
            key = tuple(vocab.id_of(t) for t in entry["context"])
            entries[key] = _probs_map_to_vec(vocab, entry["probs"])
        return TableModel(vocab, _probs_map_to_vec(vocab, spec["default"]), entries,
                          copy_boost=float(spec.get("copy_boost", 0.0)),
                          declared_param_count=params, max_context=max_context)
    if kind == "scripted":
        schedule = [_probs_map_to_vec(vocab, step) for step in spec["schedule"]]
        return ScriptedModel(vocab, schedule, declared_param_count=params,
                             max_context=max_context)
    if kind == "ngram":
        return train_table_ngram(list(spec["corpus"]), vocab, int(spec["order"]),
                                 float(spec["add_k"]), declared_param_count=params)
    if kind == "remote":
        return RemoteModel(vocab, spec["endpoint"], client=client,
                           declared_param_count=params, max_context=max_context)
    raise ValueError(f"unknown model kind {kind!r}")


def load_model(path: str, vocab: Vocabulary, client=None) -> Model:
    with open(path, encoding="utf-8") as f:
        return model_from_spec(json.load(f), vocab, client=client)
