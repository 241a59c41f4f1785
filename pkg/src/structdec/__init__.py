"""Grammar-constrained decoding with feasible-mass instrumentation.

Core pieces: toy language models over explicit vocabularies, constraint
automata compiled from regexes, context-free grammars, or a JSON-schema
subset, a mask-and-renormalize decode loop that records per-step feasible
mass and cumulative projection tax, a draft-then-constrain two-stage
decoder with best-of-K selection, and exact enumeration oracles for
verifying the sequence-level identities on small instances.
"""

from .analysis import (
    ExactDistributions,
    StrictOutcome,
    UtilitySpec,
    aggregate_report,
    canonical_equal,
    canonicalize,
    enumerate_sequences,
    extract_answer,
    pinsker_check,
    report_to_csv,
    strict_eval,
)
from .constraints import (
    ConstraintAutomaton,
    ConstraintState,
    TokenMask,
    compile_cfg,
    compile_constraint,
    compile_json_schema,
    compile_regex,
)
from .dccd import (
    DccdCandidate,
    DccdResult,
    Stage2Template,
    generate_drafts,
    joint_confidence,
    majority_vote_scaling,
    run_dccd,
    select_candidate,
)
from .decode import (
    DecodeConfig,
    DecodeTrace,
    StepRecord,
    apply_temperature,
    constrained_sequence_logprob,
    decode,
    mask_renormalize,
    step_kl,
    trace_to_jsonl,
)
from .errors import (
    ConfigError,
    RemoteUnavailable,
    StructdecError,
    Untokenizable,
    ZeroFeasibleMass,
)
from .models import (
    Model,
    NgramModel,
    RemoteModel,
    ScriptedModel,
    TableModel,
    load_model,
    model_from_spec,
    sequence_logprob,
    train_table_ngram,
)
from .vocab import (
    TokenTrie,
    Vocabulary,
    build_vocabulary,
    detokenize,
    load_vocabulary,
    tokenize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
