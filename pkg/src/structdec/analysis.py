"""Exact brute-force oracles and evaluation.

The enumerator walks every token sequence up to length T for a small
vocabulary, computing the base and constrained sequence distributions in
full. That provides independent ground truth for the identities the decode
loop is supposed to satisfy: the sequence-level KL between the constrained
and base laws equals the expected cumulative tax, and each valid sequence's
constrained probability is its base probability divided by the product of
per-step feasible masses.

Strict evaluation marks an output successful only when it is simultaneously
structurally valid (constraint membership) and semantically correct (answer
match after canonicalization).
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintAutomaton
from .decode import apply_temperature
from .errors import EnumerationTooLarge, PreconditionViolation
from .models import Model, logsumexp
from .vocab import detokenize

ENUMERATION_GUARD = 10 ** 6


@dataclass
class ExactDistributions:
    """Exhaustive sequence distributions up to length T.

    ``support`` lists every reachable output: eos-terminated sequences plus
    length-T unterminated ones. ``rho_base[z]`` is the exact base sequence
    probability; ``rho_constrained[z]`` the exact mask-renormalized one (its
    support is the constrained-reachable subset). ``tax[z]`` is the
    cumulative ``sum_t -ln(alpha_t)`` along z under the constraint, and
    ``valid[z]`` marks constraint-language membership of the detokenized
    text.
    """

    support: list[tuple[int, ...]]
    rho_base: dict[tuple[int, ...], float]
    rho_constrained: dict[tuple[int, ...], float]
    tax: dict[tuple[int, ...], float]
    valid: dict[tuple[int, ...], bool]
    kl_total: float
    expected_tax: float  # E_{rho_q}[sum_t -ln alpha_t], computed independently


def enumerate_sequences(model: Model, prompt, constraint: ConstraintAutomaton | None,
                        T: int, temperature: float = 1.0) -> ExactDistributions:
    """Exhaustive tree walk over all sequences of length <= T."""
    vocab = model.vocab
    V = len(vocab)
    if V ** T > ENUMERATION_GUARD:
        raise EnumerationTooLarge(f"|V|^T = {V ** T} exceeds {ENUMERATION_GUARD}")
    prompt = tuple(prompt)
    eos = vocab.eos_id

    support: list[tuple[int, ...]] = []
    rho_base: dict[tuple[int, ...], float] = {}
    rho_constrained: dict[tuple[int, ...], float] = {}
    tax_by_seq: dict[tuple[int, ...], float] = {}
    valid: dict[tuple[int, ...], bool] = {}

    def record(seq, logp_base, logp_q, tax, state, terminated_eos):
        support.append(seq)
        rho_base[seq] = math.exp(logp_base)
        if logp_q is not None:
            rho_constrained[seq] = math.exp(logp_q)
            tax_by_seq[seq] = tax
        if constraint is None:
            valid[seq] = True
        else:
            valid[seq] = constraint.accepts(detokenize(vocab, seq)) and terminated_eos

    def walk(seq, state, logp_base, logp_q, tax, depth):
        dist = apply_temperature(model.next_distribution(prompt + seq), temperature)
        if constraint is not None and state is not None:
            mask = constraint.valid_next_tokens(state)
            if len(mask) == 0:
                mask = None
                log_alpha = None
            else:
                bits = mask.as_bitvector()
                log_alpha = logsumexp(np.where(bits, dist, -np.inf))
        else:
            mask = None if constraint is not None else "all"
            log_alpha = None
        for tok in range(V):
            lp = float(dist[tok])
            if lp == -math.inf:
                continue
            nb = logp_base + lp
            in_mask = (mask == "all") or (mask is not None and tok in mask)
            if in_mask and log_alpha is not None:
                nq = None if logp_q is None else logp_q + lp - log_alpha
                ntax = tax + (-log_alpha)
            elif mask == "all":
                nq = None if logp_q is None else logp_q + lp
                ntax = tax
            else:
                nq, ntax = None, tax
            new_seq = seq + (tok,)
            if tok == eos:
                record(new_seq, nb, nq, ntax, state, True)
                continue
            if depth + 1 == T:
                record(new_seq, nb, nq, ntax, state, False)
                continue
            nstate = None
            if constraint is not None and state is not None and nq is not None:
                nstate = constraint.advance(state, tok)
            walk(new_seq, nstate, nb, nq, ntax, depth + 1)

    init_state = constraint.initial_state() if constraint is not None else None
    walk((), init_state, 0.0, 0.0, 0.0, 0)

    kl_total = 0.0
    expected_tax = 0.0
    for seq, q in rho_constrained.items():
        if q == 0.0:
            continue
        kl_total += q * (math.log(q) - math.log(rho_base[seq]))
        expected_tax += q * tax_by_seq[seq]
    return ExactDistributions(support, rho_base, rho_constrained, tax_by_seq,
                              valid, kl_total, expected_tax)


@dataclass(frozen=True)
class UtilitySpec:
    """Maps canonical answers to utilities in [0, 1]; default exact match."""

    table: dict = field(default_factory=dict)
    default: float = 0.0

    def utility(self, key) -> float:
        if key is None:
            return self.default
        u = self.table.get(key, self.default)
        if not (0.0 <= u <= 1.0):
            raise PreconditionViolation("utility must lie in [0, 1]")
        return u


def pinsker_check(ex: ExactDistributions, u: UtilitySpec, answers=None) -> dict:
    """Verify |E_P[gated U] - E_Q[gated U]| <= TV(P,Q) <= sqrt(KL/2).

    P is the constrained law, Q the base law. Utility is validity-gated:
    structurally invalid sequences score zero regardless of content.
    ``answers`` optionally maps sequences to canonical answers; without it
    the detokenized-sequence keying of ``u.table`` applies.
    """
    def gated(seq):
        if not ex.valid[seq]:
            return 0.0
        key = answers.get(seq) if answers is not None else seq
        return u.utility(key)

    e_p = sum(ex.rho_constrained.get(seq, 0.0) * gated(seq) for seq in ex.support)
    e_q = sum(ex.rho_base[seq] * gated(seq) for seq in ex.support)
    tv = 0.5 * sum(abs(ex.rho_constrained.get(seq, 0.0) - ex.rho_base[seq])
                   for seq in ex.support)
    gap = abs(e_p - e_q)
    bound = math.sqrt(max(ex.kl_total, 0.0) / 2.0)
    return {
        "gap": gap,
        "tv": tv,
        "bound": bound,
        "holds": (gap <= tv + 1e-9) and (tv <= bound + 1e-9),
    }


# --- answer extraction and strict evaluation ---

_WS = re.compile(r"\s+")


def canonicalize(text: str) -> str:
    return _WS.sub(" ", text.strip())


def canonical_equal(a: str | None, b: str | None) -> bool:
    """Whitespace-canonical string equality with numeric coercion."""
    if a is None or b is None:
        return False
    ca, cb = canonicalize(a), canonicalize(b)
    if ca == cb:
        return True
    try:
        return float(ca) == float(cb)
    except ValueError:
        return False


def extract_answer(text: str, fmt: str) -> str | None:
    """Pull a canonical answer string out of raw output text.

    Formats: ``json_answer_field`` (top-level "answer" of a JSON object),
    ``delimited_expression`` (content between << and >>),
    ``fol_conclusion`` (the formula of the Conclusion section), or
    ``regex:PATTERN`` (last match, first group if any). Returns None when
    extraction fails.
    """
    if fmt == "json_answer_field":
        try:
            obj = json.loads(text)
        except (json.JSONDecodeError, ValueError):
            return None
        if isinstance(obj, dict) and isinstance(obj.get("answer"), str):
            return canonicalize(obj["answer"])
        return None
    if fmt == "delimited_expression":
        m = re.search(r"<<(.*?)>>", text, re.DOTALL)
        if not m:
            return None
        return canonicalize(m.group(1))
    if fmt == "fol_conclusion":
        m = re.search(r"Conclusion:\s*(.+?)(?::::|$)", text, re.DOTALL)
        if not m:
            return None
        formula = m.group(1).strip()
        return canonicalize(formula) if formula else None
    if fmt.startswith("regex:"):
        matches = list(re.finditer(fmt[len("regex:"):], text, re.DOTALL))
        if not matches:
            return None
        m = matches[-1]
        return canonicalize(m.group(1) if m.groups() else m.group(0))
    raise ValueError(f"unknown answer format {fmt!r}")


@dataclass(frozen=True)
class StrictOutcome:
    valid: bool
    correct: bool

    @property
    def success(self) -> bool:
        return self.valid and self.correct


def strict_eval(output_text: str, constraint: ConstraintAutomaton | None,
                gold: str, fmt: str) -> StrictOutcome:
    """Joint validity-and-correctness verdict for one output."""
    valid = constraint.accepts(output_text) if constraint is not None else True
    answer = extract_answer(output_text, fmt)
    correct = canonical_equal(answer, gold)
    return StrictOutcome(valid=valid, correct=correct)


# --- aggregation ---

def aggregate_report(records: list[dict]) -> dict:
    """Aggregate per-record outcomes into per-method metrics.

    Each record: ``{"method", "outcome": StrictOutcome, "projection_tax",
    "mean_alpha", "confidence", "declared_params"}`` (the trailing fields
    optional). Deterministic: identical record lists yield identical
    reports.
    """
    if not records:
        raise PreconditionViolation("no records to aggregate")
    methods: dict[str, list[dict]] = {}
    for rec in records:
        methods.setdefault(rec["method"], []).append(rec)
    report = {"methods": {}}
    for method in sorted(methods):
        recs = methods[method]
        n = len(recs)
        validity = sum(1 for r in recs if r["outcome"].valid) / n
        correctness = sum(1 for r in recs if r["outcome"].correct) / n
        strict = sum(1 for r in recs if r["outcome"].success) / n
        taxes = [r["projection_tax"] for r in recs if r.get("projection_tax") is not None]
        alphas = [r["mean_alpha"] for r in recs if r.get("mean_alpha") is not None]
        confidences = [r["confidence"] for r in recs if r.get("confidence") is not None]
        params = sum(r.get("declared_params", 0) for r in recs[:1])
        entry = {
            "count": n,
            "strict_accuracy": strict,
            "validity_rate": validity,
            "correctness_rate": correctness,
            "mean_projection_tax": (sum(taxes) / len(taxes)) if taxes else None,
            "mean_step_alpha": (sum(alphas) / len(alphas)) if alphas else None,
            "accuracy_per_param_billion": (strict / (params / 1e9)) if params else None,
            "confidence_histogram": _histogram(confidences),
        }
        report["methods"][method] = entry
    return report


def _histogram(values, bins: int = 10) -> dict:
    edges = [i / bins for i in range(bins + 1)]
    counts = [0] * bins
    for v in values:
        idx = min(int(v * bins), bins - 1)
        counts[idx] += 1
    return {"bin_edges": edges, "counts": counts}


def report_to_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "count", "strict_accuracy", "validity_rate",
                     "correctness_rate", "mean_projection_tax", "mean_step_alpha",
                     "accuracy_per_param_billion"])
    for method, entry in report["methods"].items():
        writer.writerow([
            method, entry["count"], entry["strict_accuracy"], entry["validity_rate"],
            entry["correctness_rate"],
            "" if entry["mean_projection_tax"] is None else entry["mean_projection_tax"],
            "" if entry["mean_step_alpha"] is None else entry["mean_step_alpha"],
            "" if entry["accuracy_per_param_billion"] is None else entry["accuracy_per_param_billion"],
        ])
    return buf.getvalue()
