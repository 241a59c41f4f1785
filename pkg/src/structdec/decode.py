"""The decoding loop: unconstrained and constrained generation.

Each constrained step masks structurally invalid tokens and renormalizes the
remaining probability. The renormalization denominator is the feasible mass
``alpha`` (total model probability on valid next tokens); each step
contributes ``-ln(alpha)`` nats of reverse-KL distortion, and the running
sum is the cumulative projection tax of the whole decode. The tax equals the
log-ratio between the constrained and base sequence log-probabilities, an
identity the traces preserve exactly (the constrained total is *derived* as
``base + tax`` rather than accumulated separately).

Numerical floor: if the feasible mass underflows to zero in log space the
step falls back to a uniform choice over the mask and is flagged; flagged or
not, each step's tax contribution is capped at 745 nats (``-ln`` of the
smallest positive double) so the sum stays finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintAutomaton, TokenMask
from .errors import DomainError, InvalidSequence, ZeroFeasibleMass
from .models import Model, logsumexp, normalize_logprobs
from .vocab import detokenize

TAX_CAP_NATS = 745.0


@dataclass(frozen=True)
class DecodeConfig:
    max_len: int
    policy: str = "greedy"  # or "sample"
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.policy not in ("greedy", "sample"):
            raise ValueError(f"unknown policy {self.policy!r}")


@dataclass(frozen=True)
class StepRecord:
    token_id: int
    alpha: float
    chosen_logprob_base: float
    chosen_logprob_constrained: float
    step_kl: float
    zero_mass: bool = False


@dataclass(frozen=True)
class DecodeTrace:
    output: tuple[int, ...]
    text: str
    steps: tuple[StepRecord, ...]
    projection_tax: float
    total_logprob_base: float
    total_logprob_constrained: float
    terminated: str  # "eos" | "max_len" | "dead_end"
    constraint_satisfied: bool | None = None  # None when unconstrained
    zero_mass_steps: int = 0

    @property
    def valid(self) -> bool:
        return bool(self.constraint_satisfied) if self.constraint_satisfied is not None else True


def apply_temperature(logprobs: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 1.0:
        return logprobs
    return normalize_logprobs(logprobs / temperature)


def _mask_renorm_log(dist: np.ndarray, mask: TokenMask) -> tuple[np.ndarray, float]:
    if len(mask) == 0:
        raise ValueError("mask must be nonempty")
    if len(mask) == mask.size:
        # full-vocabulary mask: exact identity, alpha exactly 1
        return dist, 0.0
    masked = np.where(mask.as_bitvector(), dist, -np.inf)
    log_alpha = logsumexp(masked)
    if log_alpha == -np.inf:
        raise ZeroFeasibleMass("no model mass on any valid token")
    return masked - log_alpha, log_alpha


def mask_renormalize(dist: np.ndarray, mask: TokenMask) -> tuple[np.ndarray, float]:
    """Restrict ``dist`` to ``mask`` and renormalize.

    Returns the constrained log-probability vector and the feasible mass
    ``alpha``. Raises :class:`ZeroFeasibleMass` when the mass underflows to
    exactly zero in log space.
    """
    q, log_alpha = _mask_renorm_log(dist, mask)
    return q, (1.0 if log_alpha == 0.0 else float(np.exp(log_alpha)))


def step_kl(alpha: float) -> float:
    """Per-step reverse-KL distortion of mask-and-renormalize: ``-ln(alpha)``."""
    if not (0.0 < alpha <= 1.0 + 1e-9):
        raise DomainError(f"alpha must be in (0, 1], got {alpha}")
    return -float(np.log(min(alpha, 1.0)))


def _step_tax(log_alpha: float) -> float:
    return min(-log_alpha, TAX_CAP_NATS)


def _choose(q: np.ndarray, policy: str, rng) -> int:
    if policy == "greedy":
        return int(np.argmax(q))  # ties break to the lowest token id
    p = np.exp(q)
    p = p / p.sum()
    return int(rng.choice(len(p), p=p))


def decode(model: Model, prompt, constraint: ConstraintAutomaton | None,
           cfg: DecodeConfig) -> DecodeTrace:
    """Generate up to ``cfg.max_len`` tokens, recording per-step diagnostics.

    With a constraint, every emitted token is drawn from the step mask and
    an eos-terminated output detokenizes to a string in the constraint
    language. Hitting the length bound in a non-accepting state returns the
    trace flagged invalid rather than fabricating a completion.
    """
    vocab = model.vocab
    rng = np.random.default_rng(cfg.seed) if cfg.policy == "sample" else None
    state = constraint.initial_state() if constraint is not None else None
    full_mask = TokenMask.full(len(vocab))

    ids: list[int] = []
    steps: list[StepRecord] = []
    total_base = 0.0
    tax = 0.0
    zero_steps = 0
    terminated = "max_len"
    prompt = tuple(prompt)

    for _ in range(cfg.max_len):
        dist = apply_temperature(model.next_distribution(prompt + tuple(ids)), cfg.temperature)
        mask = full_mask if state is None else constraint.valid_next_tokens(state)
        if len(mask) == 0:
            terminated = "dead_end"
            break
        try:
            q, log_alpha = _mask_renorm_log(dist, mask)
            alpha = 1.0 if log_alpha == 0.0 else float(np.exp(log_alpha))
            flagged = False
        except ZeroFeasibleMass:
            valid = sorted(mask.valid_ids)
            q = np.full(len(vocab), -np.inf)
            q[valid] = -np.log(len(valid))
            alpha = 0.0
            log_alpha = -np.inf
            flagged = True
            zero_steps += 1
        tok = _choose(q, cfg.policy, rng)
        base_lp = float(dist[tok])
        kl = _step_tax(log_alpha)
        steps.append(StepRecord(tok, alpha, base_lp, base_lp + kl, kl, flagged))
        total_base += base_lp
        tax += kl
        ids.append(tok)
        if tok == vocab.eos_id:
            terminated = "eos"
            break
        if state is not None:
            state = constraint.advance(state, tok)

    satisfied = None
    if constraint is not None:
        if terminated == "eos":
            satisfied = True
        else:
            satisfied = state.accepting if state is not None else False
    text = detokenize(vocab, ids)
    return DecodeTrace(
        output=tuple(ids),
        text=text,
        steps=tuple(steps),
        projection_tax=tax,
        total_logprob_base=total_base,
        total_logprob_constrained=total_base + tax,
        terminated=terminated,
        constraint_satisfied=satisfied,
        zero_mass_steps=zero_steps,
    )


def constrained_sequence_logprob(model: Model, prompt, constraint: ConstraintAutomaton,
                                 z, temperature: float = 1.0) -> float:
    """Log-probability of ``z`` under the mask-renormalized sequence law.

    Replays the step masks along ``z`` and returns
    ``log rho_base(z) + sum_t -ln(alpha_t)``; equals the trace total of a
    decode that produced ``z`` under the same temperature.
    """
    vocab = model.vocab
    z = tuple(z)
    if not z:
        raise InvalidSequence("sequence must be nonempty")
    state = constraint.initial_state()
    ctx = tuple(prompt)
    total_base = 0.0
    tax = 0.0
    for tok in z:
        dist = apply_temperature(model.next_distribution(ctx), temperature)
        mask = constraint.valid_next_tokens(state)
        if tok not in mask:
            raise InvalidSequence(f"token {vocab.tokens[tok]!r} outside its step mask")
        try:
            _, log_alpha = _mask_renorm_log(dist, mask)
        except ZeroFeasibleMass:
            log_alpha = -np.inf
        total_base += float(dist[tok])
        tax += _step_tax(log_alpha)
        if tok == vocab.eos_id:
            break
        state = constraint.advance(state, tok)
        ctx = ctx + (tok,)
    return total_base + tax


def trace_to_jsonl(trace: DecodeTrace) -> str:
    """Serialize a trace as JSON Lines: one step per line plus a summary."""
    import json

    lines = []
    for t, s in enumerate(trace.steps):
        lines.append(json.dumps({
            "t": t, "token": s.token_id, "alpha": s.alpha, "kl": s.step_kl,
            "logp_base": s.chosen_logprob_base, "zero_mass": s.zero_mass,
        }))
    lines.append(json.dumps({
        "summary": True,
        "output": list(trace.output),
        "text": trace.text,
        "projection_tax": trace.projection_tax,
        "total_logprob_base": trace.total_logprob_base,
        "total_logprob_constrained": trace.total_logprob_constrained,
        "terminated": trace.terminated,
        "constraint_satisfied": trace.constraint_satisfied,
        "zero_mass_steps": trace.zero_mass_steps,
    }))
    return "\n".join(lines) + "\n"
