"""HTTP service exposing the decoding engine.

The service is stateless: every request carries its vocabulary, model
specs, and constraint sources inline, so the server holds no run state and
any client (the bundled CLI included) can drive it. A model handed to
``create_app`` additionally enables ``POST /v1/logprobs``, the same wire
protocol the remote-model adapter consumes.
"""

from __future__ import annotations

import math

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .analysis import (
    StrictOutcome,
    aggregate_report,
    canonical_equal,
    extract_answer,
    strict_eval,
)
from .constraints import ConstraintAutomaton, compile_constraint
from .dccd import (
    SELECTION_RULES,
    DccdResult,
    Stage2Template,
    joint_confidence,
    majority_vote_scaling,
    run_dccd,
)
from .decode import DecodeConfig, DecodeTrace, decode, trace_to_jsonl
from .errors import StructdecError
from .models import Model, model_from_spec
from .vocab import Vocabulary, build_vocabulary, tokenize


# --- wire schemas ---

class VocabSpec(BaseModel):
    tokens: list[str]
    eos: str

    def build(self) -> Vocabulary:
        return build_vocabulary(self.tokens, eos=self.eos)


class ConstraintSpec(BaseModel):
    kind: str  # regex | cfg | json_schema
    source: str

    def compile(self, vocab: Vocabulary) -> ConstraintAutomaton:
        return compile_constraint(self.kind, self.source, vocab)


class DecodeSettings(BaseModel):
    max_len: int
    policy: str = "greedy"
    temperature: float = 1.0
    seed: int = 0

    def build(self) -> DecodeConfig:
        return DecodeConfig(self.max_len, self.policy, self.temperature, self.seed)


class StepOut(BaseModel):
    token_id: int
    alpha: float
    chosen_logprob_base: float
    chosen_logprob_constrained: float
    step_kl: float
    zero_mass: bool


class TraceOut(BaseModel):
    output: list[int]
    text: str
    steps: list[StepOut]
    projection_tax: float
    total_logprob_base: float
    total_logprob_constrained: float
    terminated: str
    constraint_satisfied: bool | None
    zero_mass_steps: int
    valid: bool

    @classmethod
    def from_trace(cls, trace: DecodeTrace) -> "TraceOut":
        return cls(
            output=list(trace.output),
            text=trace.text,
            steps=[StepOut(token_id=s.token_id, alpha=s.alpha,
                           chosen_logprob_base=s.chosen_logprob_base,
                           chosen_logprob_constrained=s.chosen_logprob_constrained,
                           step_kl=s.step_kl, zero_mass=s.zero_mass)
                   for s in trace.steps],
            projection_tax=trace.projection_tax,
            total_logprob_base=trace.total_logprob_base,
            total_logprob_constrained=trace.total_logprob_constrained,
            terminated=trace.terminated,
            constraint_satisfied=trace.constraint_satisfied,
            zero_mass_steps=trace.zero_mass_steps,
            valid=trace.valid,
        )


class DecodeRequest(BaseModel):
    vocab: VocabSpec
    model: dict
    prompt: str = ""
    constraint: ConstraintSpec | None = None
    config: DecodeSettings


class DecodeResponse(BaseModel):
    trace: TraceOut
    trace_jsonl: str


class DccdRequest(BaseModel):
    vocab: VocabSpec
    draft_model: dict
    proj_model: dict | None = None  # defaults to draft_model
    prompt: str = ""
    constraint: ConstraintSpec
    template: str | None = None
    K: int = 1
    selection_rule: str = "cumulative_log_feasible_mass"
    cfg_draft: DecodeSettings
    cfg_proj: DecodeSettings
    answer_format: str | None = None


class CandidateOut(BaseModel):
    draft_text: str
    realization: TraceOut
    score: float
    extracted_answer: str | None
    joint_confidence: float


class DccdResponse(BaseModel):
    candidates: list[CandidateOut]
    selected: int
    selection_rule: str
    joint_confidence_selected: float
    all_realizations_invalid: bool
    winner_text: str


class DatasetRow(BaseModel):
    id: str
    prompt: str
    gold: str
    constraint: ConstraintSpec
    format: str


class EvalRequest(BaseModel):
    vocab: VocabSpec
    model: dict
    draft_model: dict | None = None  # dccd only; defaults to model
    dataset: list[DatasetRow]
    method: str  # cd | dccd | unconstrained
    config: DecodeSettings
    cfg_draft: DecodeSettings | None = None
    template: str | None = None
    K: int = 1
    selection_rule: str = "cumulative_log_feasible_mass"


class RowResult(BaseModel):
    id: str
    method: str
    output_text: str
    answer: str | None
    valid: bool
    correct: bool
    success: bool
    projection_tax: float | None
    mean_alpha: float | None
    confidence: float | None


class EvalResponse(BaseModel):
    rows: list[RowResult]
    report: dict


class ScaleRequest(BaseModel):
    vocab: VocabSpec
    model: dict
    draft_model: dict | None = None
    dataset: list[DatasetRow]
    methods: list[str] = Field(default_factory=lambda: ["cd", "dccd"])
    n_values: list[int]
    config: DecodeSettings
    cfg_draft: DecodeSettings | None = None
    template: str | None = None


class ScaleCell(BaseModel):
    method: str
    n: int
    strict_accuracy: float
    validity_rate: float


class ScaleResponse(BaseModel):
    cells: list[ScaleCell]


class LogprobsRequest(BaseModel):
    context: list[int]


class LogprobsResponse(BaseModel):
    logprobs: list[float]


# --- helpers ---

def _mean_alpha(trace: DecodeTrace) -> float | None:
    if not trace.steps:
        return None
    return sum(s.alpha for s in trace.steps) / len(trace.steps)


def _template(text: str | None) -> Stage2Template:
    return Stage2Template(text) if text is not None else Stage2Template()


def _run_dccd_request(req: DccdRequest) -> DccdResult:
    vocab = req.vocab.build()
    draft_model = model_from_spec(req.draft_model, vocab)
    proj_model = (model_from_spec(req.proj_model, vocab)
                  if req.proj_model is not None else draft_model)
    constraint = req.constraint.compile(vocab)
    prompt = tokenize(vocab, req.prompt) if req.prompt else ()
    return run_dccd(draft_model, proj_model, prompt, constraint,
                    _template(req.template), req.K,
                    req.cfg_draft.build(), req.cfg_proj.build(),
                    req.selection_rule, req.answer_format)


def _eval_rows(req: EvalRequest) -> list[RowResult]:
    vocab = req.vocab.build()
    model = model_from_spec(req.model, vocab)
    draft_model = (model_from_spec(req.draft_model, vocab)
                   if req.draft_model is not None else model)
    cfg = req.config.build()
    rows: list[RowResult] = []
    for row in req.dataset:
        constraint = row.constraint.compile(vocab)
        prompt = tokenize(vocab, row.prompt) if row.prompt else ()
        if req.method == "unconstrained":
            trace = decode(model, prompt, None, cfg)
            text, tax, mean_a = trace.text, 0.0, None
            confidence = math.exp(trace.total_logprob_base)
        elif req.method == "cd":
            trace = decode(model, prompt, constraint, cfg)
            text, tax, mean_a = trace.text, trace.projection_tax, _mean_alpha(trace)
            confidence = math.exp(trace.total_logprob_base)
        elif req.method == "dccd":
            cfg_draft = req.cfg_draft.build() if req.cfg_draft is not None else cfg
            result = run_dccd(draft_model, model, prompt, constraint,
                              _template(req.template), req.K, cfg_draft, cfg,
                              req.selection_rule, row.format)
            trace = result.winner.realization
            text, tax, mean_a = trace.text, trace.projection_tax, _mean_alpha(trace)
            confidence = result.joint_confidence_selected
        else:
            raise ValueError(f"unknown eval method {req.method!r}")
        outcome = strict_eval(text, constraint, row.gold, row.format)
        rows.append(RowResult(
            id=row.id, method=req.method, output_text=text,
            answer=extract_answer(text, row.format),
            valid=outcome.valid, correct=outcome.correct, success=outcome.success,
            projection_tax=tax, mean_alpha=mean_a, confidence=confidence,
        ))
    return rows


def _report(rows: list[RowResult], declared_params: int) -> dict:
    records = [{
        "method": r.method,
        "outcome": strict_outcome(r),
        "projection_tax": r.projection_tax,
        "mean_alpha": r.mean_alpha,
        "confidence": r.confidence,
        "declared_params": declared_params,
    } for r in rows]
    return aggregate_report(records)


def strict_outcome(row: RowResult) -> StrictOutcome:
    return StrictOutcome(valid=row.valid, correct=row.correct)


# --- app ---

def create_app(model: Model | None = None) -> FastAPI:
    """Build the service; ``model`` (optional) backs ``POST /v1/logprobs``."""
    app = FastAPI(title="structdec", version=__version__)

    @app.exception_handler(StructdecError)
    async def _structdec_error(request: Request, exc: StructdecError):
        return JSONResponse(status_code=400,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=400,
                            content={"error": "ValueError", "detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__,
                "serves_logprobs": model is not None}

    @app.post("/decode", response_model=DecodeResponse)
    def decode_endpoint(req: DecodeRequest):
        vocab = req.vocab.build()
        m = model_from_spec(req.model, vocab)
        constraint = req.constraint.compile(vocab) if req.constraint else None
        prompt = tokenize(vocab, req.prompt) if req.prompt else ()
        trace = decode(m, prompt, constraint, req.config.build())
        return DecodeResponse(trace=TraceOut.from_trace(trace),
                              trace_jsonl=trace_to_jsonl(trace))

    @app.post("/dccd", response_model=DccdResponse)
    def dccd_endpoint(req: DccdRequest):
        if req.selection_rule not in SELECTION_RULES:
            raise ValueError(f"unknown selection rule {req.selection_rule!r}")
        result = _run_dccd_request(req)
        return DccdResponse(
            candidates=[CandidateOut(
                draft_text=c.draft.text,
                realization=TraceOut.from_trace(c.realization),
                score=c.score,
                extracted_answer=c.extracted_answer,
                joint_confidence=joint_confidence(c),
            ) for c in result.candidates],
            selected=result.selected,
            selection_rule=result.selection_rule,
            joint_confidence_selected=result.joint_confidence_selected,
            all_realizations_invalid=result.all_realizations_invalid,
            winner_text=result.winner.realization.text,
        )

    @app.post("/eval", response_model=EvalResponse)
    def eval_endpoint(req: EvalRequest):
        if not req.dataset:
            raise ValueError("dataset is empty")
        rows = _eval_rows(req)
        declared = int(req.model.get("declared_param_count", 0))
        return EvalResponse(rows=rows, report=_report(rows, declared))

    @app.post("/scale", response_model=ScaleResponse)
    def scale_endpoint(req: ScaleRequest):
        if not req.dataset:
            raise ValueError("dataset is empty")
        vocab = req.vocab.build()
        m = model_from_spec(req.model, vocab)
        draft_model = (model_from_spec(req.draft_model, vocab)
                       if req.draft_model is not None else m)
        cfg = req.config.build()
        cfg_draft = req.cfg_draft.build() if req.cfg_draft is not None else cfg
        cells: list[ScaleCell] = []
        for method in req.methods:
            hits: dict[int, int] = {n: 0 for n in req.n_values}
            valids: dict[int, int] = {n: 0 for n in req.n_values}
            for row in req.dataset:
                constraint = row.constraint.compile(vocab)
                prompt = tokenize(vocab, row.prompt) if row.prompt else ()
                per_n = majority_vote_scaling(
                    draft_model, m, prompt, constraint, _template(req.template),
                    req.n_values, method, cfg_draft, cfg, row.format)
                for n, cell in per_n.items():
                    if cell["valid"]:
                        valids[n] += 1
                    if cell["valid"] and canonical_equal(cell["answer"], row.gold):
                        hits[n] += 1
            for n in sorted(hits):
                cells.append(ScaleCell(
                    method=method, n=n,
                    strict_accuracy=hits[n] / len(req.dataset),
                    validity_rate=valids[n] / len(req.dataset),
                ))
        return ScaleResponse(cells=cells)

    if model is not None:
        @app.post("/v1/logprobs", response_model=LogprobsResponse)
        def logprobs_endpoint(req: LogprobsRequest):
            dist = model.next_distribution(req.context)
            return LogprobsResponse(logprobs=[float(x) for x in dist])

    return app
