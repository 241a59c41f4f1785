"""Acceptance gate: one test per release criterion, each printing a verdict line.

Every criterion is checked at a pinned tolerance against an independent
computation (direct summation, exhaustive enumeration, or frozen fixture
outputs), never against the implementation's own intermediate values.
"""

import json
import math
import time

import numpy as np

from structdec import (
    DecodeConfig,
    Stage2Template,
    canonical_equal,
    compile_cfg,
    compile_constraint,
    decode,
    enumerate_sequences,
    extract_answer,
    majority_vote_scaling,
    mask_renormalize,
    run_dccd,
    select_candidate,
    step_kl,
    strict_eval,
    tokenize,
)
from structdec.analysis import UtilitySpec, pinsker_check
from structdec.constraints import TokenMask
from structdec.dccd import DccdCandidate

from conftest import FIXTURES, FOLIO_OUTPUT, GSM8K_OBJECT, char_vocab, random_model

TEMPLATE = Stage2Template("{prompt}{draft}")
ANSWER_FMT = "regex:<<([a-h])>>"


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"criterion {num} failed: {detail}"


def _direct_kl(q_log: np.ndarray, p_log: np.ndarray) -> float:
    """KL(q || p) by direct summation over q's support."""
    finite = q_log > -np.inf
    q = np.exp(q_log[finite])
    return float(np.sum(q * (q_log[finite] - p_log[finite])))


# --- 1: validity of randomized constrained decodes, all constraint kinds ---

def test_criterion_01_randomized_decodes_always_in_language():
    suites = [
        ("regex", "(a|b)+c", char_vocab("abc")),
        ("cfg", 'start: "a" | "(" start ")"', char_vocab("()a")),
        ("json_schema",
         json.dumps({"type": "object",
                     "properties": {"k": {"type": "string"}},
                     "required": ["k"]}),
         char_vocab('{"k": "a"}')),
    ]
    start = time.monotonic()
    total = eos_count = 0
    for kind, source, vocab in suites:
        constraint = compile_constraint(kind, source, vocab)
        models = [random_model(vocab, np.random.default_rng(100 + i))
                  for i in range(4)]
        for model in models:
            for seed in range(85):
                trace = decode(model, (), constraint,
                               DecodeConfig(max_len=14, policy="sample", seed=seed))
                total += 1
                if trace.terminated == "eos":
                    eos_count += 1
                    assert constraint.accepts(trace.text), (kind, trace.text)
    elapsed = time.monotonic() - start
    ok = total >= 1000 and eos_count > 0 and elapsed <= 60.0
    _verdict(1, ok, f"{total} decodes across 3 constraint kinds, "
                    f"{eos_count} eos-terminated all in-language, {elapsed:.1f}s")


# --- 2: per-step KL by direct summation equals -ln(alpha) ---

def test_criterion_02_step_kl_matches_direct_summation():
    vocab = char_vocab("abcd")  # |V| = 5 <= 50
    constraint = compile_constraint("regex", "(a|b|c)+d", vocab)
    worst = 0.0
    for run in range(100):
        model = random_model(vocab, np.random.default_rng(run))
        trace = decode(model, (), constraint,
                       DecodeConfig(max_len=10, policy="sample", seed=run))
        state = constraint.initial_state()
        ctx: tuple[int, ...] = ()
        for step in trace.steps:
            p_log = model.next_distribution(ctx)
            q_log, alpha = mask_renormalize(p_log, constraint.valid_next_tokens(state))
            direct = _direct_kl(q_log, p_log)
            worst = max(worst, abs(direct - step.step_kl),
                        abs(direct - step_kl(alpha)))
            ctx = ctx + (step.token_id,)
            if step.token_id == vocab.eos_id:
                break
            state = constraint.advance(state, step.token_id)
        assert trace.steps
    _verdict(2, worst <= 1e-9,
             f"100 decodes replayed, max |direct KL - (-ln alpha)| = {worst:.2e}")


# --- 3 & 4: exact sequence-level identities by exhaustive enumeration ---

def _enumerable_instances():
    vocab = char_vocab("ab")  # |V| = 3 <= 4
    patterns = ["(a|b)*", "a(a|b)*", "(ab)*", "a*b*", "(a|b)(a|b)"]
    for i in range(20):
        constraint = compile_constraint("regex", patterns[i % len(patterns)], vocab)
        model = random_model(vocab, np.random.default_rng(1000 + i))
        yield enumerate_sequences(model, (), constraint, T=5)


def test_criterion_03_sequence_kl_equals_expected_tax():
    worst = max(abs(ex.kl_total - ex.expected_tax) for ex in _enumerable_instances())
    _verdict(3, worst <= 1e-9,
             f"20 enumerated instances, max |KL - E[tax]| = {worst:.2e}")


def test_criterion_04_trajectory_reweighting_identity():
    worst = 0.0
    for ex in _enumerable_instances():
        for z, rho_q in ex.rho_constrained.items():
            rho_theta = ex.rho_base[z]
            worst = max(worst, abs(rho_q * math.exp(-ex.tax[z]) - rho_theta))
    _verdict(4, worst <= 1e-12,
             f"all constrained trajectories, max |rho_q * prod(alpha) - rho_theta| "
             f"= {worst:.2e}")


# --- 5: mask-and-renormalize is the reverse-KL-optimal feasible distribution ---

def test_criterion_05_projection_beats_random_feasible_distributions():
    rng = np.random.default_rng(7)
    steps = losses = 0
    for trial in range(20):
        n = 8
        logits = rng.uniform(-3, 3, size=n)
        p_log = logits - (np.max(logits) + np.log(np.sum(np.exp(logits - np.max(logits)))))
        k = int(rng.integers(2, n))  # proper nonempty feasible subset
        allowed = rng.choice(n, size=k, replace=False)
        q_log, alpha = mask_renormalize(p_log, TokenMask(allowed.tolist(), n))
        kl_q = step_kl(alpha)
        for _ in range(100):
            r = rng.dirichlet(np.ones(k))
            kl_r = float(np.sum(r * (np.log(r) - p_log[allowed])))
            steps += 1
            if kl_r < kl_q - 1e-9:
                losses += 1
    _verdict(5, losses == 0,
             f"{steps} random feasible distributions on 20 steps, "
             f"{losses} beat the projection")


# --- 6: validity-gated utility gap obeys the total-variation/Pinsker chain ---

def test_criterion_06_pinsker_chain_holds():
    rng = np.random.default_rng(42)
    worst_slack = -math.inf
    for ex in list(_enumerable_instances())[:5]:
        u = UtilitySpec(table={z: float(rng.random()) for z in ex.support},
                        default=0.5)
        chk = pinsker_check(ex, u)
        worst_slack = max(worst_slack, chk["gap"] - chk["tv"],
                          chk["tv"] - chk["bound"])
        assert chk["holds"]
    _verdict(6, worst_slack <= 1e-9,
             f"5 instances, max chain violation = {worst_slack:.2e}")


# --- 7: shipped constraint fixtures accept/reject the conformance strings ---

def test_criterion_07_fixture_conformance():
    vocab = char_vocab(GSM8K_OBJECT, FOLIO_OUTPUT, "<<(m*x)//(m+n)>>")
    gsm = compile_cfg((FIXTURES / "gsm_symbolic.bnf").read_text(), vocab)
    schema = compile_constraint(
        "json_schema", (FIXTURES / "gsm8k_schema.json").read_text(), vocab)
    folio = compile_cfg((FIXTURES / "folio_keywords.bnf").read_text(), vocab)

    checks = [
        gsm.accepts("<<total + n2 - n1>>"),
        gsm.accepts("<<(m*x)//(m+n)>>"),
        not gsm.accepts("<<total ** n1>>"),
        not gsm.accepts(""),
        schema.accepts(GSM8K_OBJECT),
        not schema.accepts('{"answer": "18"}'),
        folio.accepts(FOLIO_OUTPUT),
    ]
    _verdict(7, all(checks),
             f"{sum(checks)}/{len(checks)} conformance checks passed")


# --- 8: two-stage selection contract ---

def test_criterion_08_dccd_selection_contract(copybias):
    # score is exactly minus the realization's projection tax
    res = run_dccd(copybias["draft"], copybias["proj"],
                   tokenize(copybias["vocab"], "q3"), copybias["constraint"],
                   TEMPLATE, K=3,
                   cfg_draft=DecodeConfig(max_len=8, policy="sample", seed=5),
                   cfg_proj=DecodeConfig(max_len=8, policy="greedy", seed=0))
    scores_exact = all(c.score == -c.realization.projection_tax
                       for c in res.candidates)

    # K=1 with a passthrough template and an empty draft is plain
    # constrained decoding, token for token under the same seed
    vocab = char_vocab("abc")
    proj = random_model(vocab, np.random.default_rng(3))
    probs = np.full(len(vocab), 1e-12)
    probs[vocab.eos_id] = 1.0
    from structdec import TableModel
    empty_draft = TableModel(vocab, default=np.log(probs / probs.sum()))
    constraint = compile_constraint("regex", "(a|b)+c", vocab)
    cfg = DecodeConfig(max_len=8, policy="sample", seed=11)
    reduced = run_dccd(empty_draft, proj, tokenize(vocab, "a"), constraint,
                       TEMPLATE, K=1, cfg_draft=cfg, cfg_proj=cfg)
    plain = decode(proj, tokenize(vocab, "a"), constraint, cfg)
    passthrough = (reduced.winner.realization.output == plain.output
                   and reduced.winner.realization.steps == plain.steps)

    # exact score ties resolve to the lowest candidate index
    dummy = plain
    tied = [DccdCandidate(draft=dummy, realization=dummy, score=-0.5)
            for _ in range(3)]
    tie_rule = select_candidate(tied) == 0

    ok = scores_exact and passthrough and tie_rule
    _verdict(8, ok, f"score=-tax exact: {scores_exact}, K=1 passthrough "
                    f"reduction: {passthrough}, ties to index 0: {tie_rule}")


# --- 9: copy-biased fixture separates the two methods in the right direction ---

def test_criterion_09_copybias_direction(copybias):
    vocab, constraint = copybias["vocab"], copybias["constraint"]
    cfg = DecodeConfig(max_len=8, policy="greedy", seed=0)
    stats = {"cd": {"alphas": [], "hits": 0}, "dccd": {"alphas": [], "hits": 0}}
    for row in copybias["dataset"]:
        prompt = tokenize(vocab, row["prompt"])
        cd = decode(copybias["proj"], prompt, constraint, cfg)
        stats["cd"]["alphas"] += [s.alpha for s in cd.steps]
        if cd.valid and canonical_equal(
                extract_answer(cd.text, row["format"]), row["gold"]):
            stats["cd"]["hits"] += 1
        dc = run_dccd(copybias["draft"], copybias["proj"], prompt, constraint,
                      TEMPLATE, K=1, cfg_draft=cfg, cfg_proj=cfg,
                      answer_format=row["format"]).winner
        stats["dccd"]["alphas"] += [s.alpha for s in dc.realization.steps]
        if dc.realization.valid and canonical_equal(
                dc.extracted_answer, row["gold"]):
            stats["dccd"]["hits"] += 1
    n = len(copybias["dataset"])
    alpha_gain = (np.mean(stats["dccd"]["alphas"]) - np.mean(stats["cd"]["alphas"]))
    acc_gain = (stats["dccd"]["hits"] - stats["cd"]["hits"]) / n
    ok = alpha_gain > 0 and acc_gain > 0
    _verdict(9, ok, f"mean step alpha gain = {alpha_gain:+.4f}, "
                    f"strict accuracy gain = {acc_gain:+.4f} over {n} rows")


# --- 10: majority-vote scaling is reproducible, nested, and anchored at n=1 ---

def test_criterion_10_scaling_contract(copybias):
    vocab, constraint = copybias["vocab"], copybias["constraint"]
    prompt = tokenize(vocab, "q5")
    cfg_draft = DecodeConfig(max_len=8, policy="sample", seed=100)
    cfg_proj = DecodeConfig(max_len=8, policy="sample", seed=0)

    def scale(method, ns):
        return majority_vote_scaling(copybias["draft"], copybias["proj"], prompt,
                                     constraint, TEMPLATE, ns, method,
                                     cfg_draft, cfg_proj, ANSWER_FMT)

    checks = []
    for method in ("cd", "dccd"):
        full = scale(method, [1, 3, 5])
        checks.append(full == scale(method, [1, 3, 5]))  # reproducible
        sub = scale(method, [1, 3])
        checks.append(sub == {1: full[1], 3: full[3]})  # nested prefix pools

    single_cd = decode(copybias["proj"], prompt, constraint, cfg_proj)
    expected_cd = (extract_answer(single_cd.text, ANSWER_FMT)
                   if single_cd.valid else None)
    checks.append(scale("cd", [1])[1]["answer"] == expected_cd)

    single_dccd = run_dccd(copybias["draft"], copybias["proj"], prompt, constraint,
                           TEMPLATE, K=1, cfg_draft=cfg_draft, cfg_proj=cfg_proj,
                           answer_format=ANSWER_FMT).winner
    expected_dccd = (single_dccd.extracted_answer
                     if single_dccd.realization.valid else None)
    checks.append(scale("dccd", [1])[1]["answer"] == expected_dccd)

    _verdict(10, all(checks),
             f"{sum(checks)}/{len(checks)} scaling checks "
             f"(reproducibility, nesting, n=1 anchors) passed")


# --- 11: strict evaluation truth table across all three answer formats ---

def test_criterion_11_strict_eval_truth_table():
    vocab = char_vocab(GSM8K_OBJECT, FOLIO_OUTPUT)
    schema = compile_constraint(
        "json_schema", (FIXTURES / "gsm8k_schema.json").read_text(), vocab)
    gsm = compile_cfg((FIXTURES / "gsm_symbolic.bnf").read_text(), vocab)
    folio = compile_cfg((FIXTURES / "folio_keywords.bnf").read_text(), vocab)
    truncated_json = GSM8K_OBJECT[:80]  # cut mid-string: unparseable prefix

    #        constraint, format,                output,            gold,  valid, correct
    cases = [
        (schema, "json_answer_field", GSM8K_OBJECT, "18", True, True),
        (schema, "json_answer_field", GSM8K_OBJECT, "19", True, False),
        (schema, "json_answer_field", '{"answer": "18"}', "18", False, True),
        (schema, "json_answer_field", truncated_json, "18", False, False),
        (gsm, "delimited_expression", "<<total + n2 - n1>>", "total + n2 - n1",
         True, True),
        (gsm, "delimited_expression", "<<total + n2 - n1>>", "total - n2",
         True, False),
        (gsm, "delimited_expression", "<<total ** n1>>", "total ** n1",
         False, True),
        (gsm, "delimited_expression", "", "total", False, False),
        (folio, "fol_conclusion", FOLIO_OUTPUT,
         "Jokes(rina) xor Unaware(rina)", True, True),
        (folio, "fol_conclusion", FOLIO_OUTPUT, "Jokes(rina)", True, False),
        (folio, "fol_conclusion", "Conclusion:\nJokes(rina) xor Unaware(rina)",
         "Jokes(rina) xor Unaware(rina)", False, True),
        (folio, "fol_conclusion", "nothing structured here",
         "Jokes(rina)", False, False),
    ]
    assert len(cases) == 12
    failures = []
    for i, (constraint, fmt, output, gold, want_valid, want_correct) in enumerate(cases):
        got = strict_eval(output, constraint, gold, fmt)
        if (got.valid, got.correct) != (want_valid, want_correct):
            failures.append((i, fmt, got))
        assert got.success == (got.valid and got.correct)
    _verdict(11, not failures,
             f"12/12 truth-table cases matched" if not failures
             else f"mismatched cases: {failures}")
