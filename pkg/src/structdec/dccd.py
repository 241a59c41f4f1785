"""Two-stage draft-then-constrain decoding with best-of-K selection.

Stage 1 samples K unconstrained drafts from the draft model. Stage 2 runs a
constrained decode for each draft with the draft spliced into the projector
model's context through a template, so the hard constraint is enforced on a
distribution already conditioned on a semantic plan. Each candidate is
scored by its cumulative log feasible mass, i.e. minus the projection tax of
its constrained realization; the winner is the argmax (ties to the lowest
index). With K=1 the procedure reduces to plain draft-then-constrain, and
with an empty draft and a passthrough template it reduces to ordinary
constrained decoding.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

from .analysis import extract_answer
from .constraints import ConstraintAutomaton
from .decode import DecodeConfig, DecodeTrace, decode
from .errors import MissingExtractedAnswer, PreconditionViolation
from .models import Model
from .vocab import detokenize, tokenize

SELECTION_RULES = ("cumulative_log_feasible_mass", "total_loglik_constrained",
                   "majority_vote_answers")


@dataclass(frozen=True)
class Stage2Template:
    """Join text for the projector context; must use both placeholders once."""

    text: str = "{prompt}\n\nDraft solution:\n{draft}\n\nNow output only the required structured answer:\n"

    def __post_init__(self):
        for ph in ("{prompt}", "{draft}"):
            if self.text.count(ph) != 1:
                raise PreconditionViolation(f"template must contain {ph} exactly once")

    def render(self, prompt_text: str, draft_text: str) -> str:
        # single pass so placeholder-like text inside the substitutions is
        # never re-expanded
        return re.sub(r"\{(prompt|draft)\}",
                      lambda m: prompt_text if m.group(1) == "prompt" else draft_text,
                      self.text)


@dataclass(frozen=True)
class DccdCandidate:
    draft: DecodeTrace
    realization: DecodeTrace
    score: float  # cumulative log feasible mass == -projection_tax
    extracted_answer: str | None = None


@dataclass(frozen=True)
class DccdResult:
    candidates: tuple[DccdCandidate, ...]
    selected: int
    selection_rule: str
    joint_confidence_selected: float
    all_realizations_invalid: bool

    @property
    def winner(self) -> DccdCandidate:
        return self.candidates[self.selected]


def generate_drafts(draft_model: Model, prompt, K: int, cfg: DecodeConfig) -> list[DecodeTrace]:
    """K independent unconstrained decodes with per-draft seeds ``seed + k``."""
    if K < 1:
        raise PreconditionViolation("K must be >= 1")
    if K > 1 and cfg.policy != "sample":
        raise PreconditionViolation("K > 1 requires the sample policy (greedy duplicates)")
    drafts = []
    for k in range(K):
        cfg_k = DecodeConfig(cfg.max_len, cfg.policy, cfg.temperature, cfg.seed + k)
        drafts.append(decode(draft_model, prompt, None, cfg_k))
    return drafts


def joint_confidence(candidate: DccdCandidate) -> float:
    """Probability of the (draft, realization) pair under the base models."""
    return math.exp(candidate.draft.total_logprob_base
                    + candidate.realization.total_logprob_base)


def select_candidate(candidates, rule: str = "cumulative_log_feasible_mass") -> int:
    """Deterministic winner index under the given rule; ties take the lowest index."""
    if not candidates:
        raise PreconditionViolation("candidate list must be nonempty")
    if rule == "cumulative_log_feasible_mass":
        scores = [c.score for c in candidates]
    elif rule == "total_loglik_constrained":
        scores = [c.realization.total_logprob_constrained for c in candidates]
    elif rule == "majority_vote_answers":
        answers = [c.extracted_answer for c in candidates]
        counts = Counter(a for a in answers if a is not None)
        if not counts:
            raise MissingExtractedAnswer("no candidate produced an extractable answer")
        top = max(counts.values())
        winners = {a for a, n in counts.items() if n == top}
        return next(i for i, a in enumerate(answers) if a in winners)
    else:
        raise ValueError(f"unknown selection rule {rule!r}")
    best = max(scores)
    return scores.index(best)


def run_dccd(draft_model: Model, proj_model: Model, prompt,
             constraint: ConstraintAutomaton, template: Stage2Template, K: int,
             cfg_draft: DecodeConfig, cfg_proj: DecodeConfig,
             selection_rule: str = "cumulative_log_feasible_mass",
             answer_format: str | None = None) -> DccdResult:
    """Draft, realize under the constraint, score, and select.

    The realization for draft k uses the projector model on the rendered
    template context and derived seed ``cfg_proj.seed + k``. The candidate
    score is minus the realization's projection tax (the same running sum,
    negated), so larger means less constraint-induced distortion.
    """
    vocab = draft_model.vocab
    prompt = tuple(prompt)
    prompt_text = detokenize(vocab, prompt)
    drafts = generate_drafts(draft_model, prompt, K, cfg_draft)
    candidates = []
    for k, draft in enumerate(drafts):
        ctx = tokenize(proj_model.vocab, template.render(prompt_text, draft.text))
        cfg_k = DecodeConfig(cfg_proj.max_len, cfg_proj.policy, cfg_proj.temperature,
                             cfg_proj.seed + k)
        realization = decode(proj_model, ctx, constraint, cfg_k)
        answer = extract_answer(realization.text, answer_format) if answer_format else None
        candidates.append(DccdCandidate(
            draft=draft,
            realization=realization,
            score=-realization.projection_tax,
            extracted_answer=answer,
        ))
    selected = select_candidate(candidates, selection_rule)
    all_invalid = all(not c.realization.valid for c in candidates)
    return DccdResult(
        candidates=tuple(candidates),
        selected=selected,
        selection_rule=selection_rule,
        joint_confidence_selected=joint_confidence(candidates[selected]),
        all_realizations_invalid=all_invalid,
    )


def _vote(answers) -> str | None:
    """Plurality over non-None answers; earliest occurrence breaks ties."""
    counts = Counter(a for a in answers if a is not None)
    if not counts:
        return None
    top = max(counts.values())
    winners = {a for a, n in counts.items() if n == top}
    return next(a for a in answers if a in winners)


def majority_vote_scaling(draft_model: Model, proj_model: Model, prompt,
                          constraint: ConstraintAutomaton, template: Stage2Template,
                          n_values, method: str, cfg_draft: DecodeConfig,
                          cfg_proj: DecodeConfig, answer_format: str) -> dict:
    """Majority vote over growing candidate pools.

    A single shared pool of ``max(n_values)`` generations is built once and
    each n evaluates its prefix, so per-n results are nested and
    reproducible. Method ``cd`` votes over constrained outputs' answers;
    method ``dccd`` votes over unconstrained drafts' answers and then runs
    one constrained projection on the earliest draft carrying the winning
    answer.
    """
    n_values = sorted(set(int(n) for n in n_values))
    if any(n < 1 or n % 2 == 0 for n in n_values):
        raise PreconditionViolation("n values must be odd positive integers")
    if method not in ("cd", "dccd"):
        raise ValueError(f"unknown scaling method {method!r}")
    pool_size = max(n_values)
    prompt = tuple(prompt)
    per_n = {}

    if method == "cd":
        pool = []
        for i in range(pool_size):
            cfg_i = DecodeConfig(cfg_proj.max_len, cfg_proj.policy, cfg_proj.temperature,
                                 cfg_proj.seed + i)
            trace = decode(proj_model, prompt, constraint, cfg_i)
            pool.append(trace)
        for n in n_values:
            answers = [extract_answer(t.text, answer_format) if t.valid else None
                       for t in pool[:n]]
            winner = _vote(answers)
            per_n[n] = {"answer": winner,
                        "valid": any(t.valid for t in pool[:n])}
        return per_n

    prompt_text = detokenize(draft_model.vocab, prompt)
    drafts = generate_drafts(
        draft_model, prompt, pool_size,
        DecodeConfig(cfg_draft.max_len, cfg_draft.policy, cfg_draft.temperature,
                     cfg_draft.seed)) if pool_size > 1 else [
        decode(draft_model, prompt, None, cfg_draft)]
    for n in n_values:
        answers = [extract_answer(d.text, answer_format) for d in drafts[:n]]
        winner_answer = _vote(answers)
        if winner_answer is None:
            pick = 0
        else:
            pick = answers.index(winner_answer)
        ctx = tokenize(proj_model.vocab, template.render(prompt_text, drafts[pick].text))
        realization = decode(proj_model, ctx, constraint, cfg_proj)
        per_n[n] = {
            "answer": extract_answer(realization.text, answer_format) if realization.valid else None,
            "valid": realization.valid,
            "draft_index": pick,
        }
    return per_n
