import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from structdec import TableModel, build_vocabulary

settings.register_profile("suite", deadline=None, max_examples=25)
settings.load_profile("suite")

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

GSM8K_OBJECT = """{
  "steps": [
    "Calculate total eggs laid per day: 16",
    "Calculate eggs consumed daily: 3 + 4 = 7",
    "Calculate eggs remaining to sell: 16 - 7 = 9",
    "Calculate revenue at $2 per egg: 9 * 2 = 18"
  ],
  "answer": "18"
}"""

FOLIO_OUTPUT = """Predicates:
Dependent(x) ::: x is dependent on caffeine
Drinks(x) ::: x regularly drinks coffee
Jokes(x) ::: x jokes about being addicted to caffeine
Unaware(x) ::: x is unaware that caffeine is a drug
Student(x) ::: x is a student

Premises:
forall x (Drinks(x) implies Dependent(x)) ::: All coffee drinkers are dependent on caffeine
forall x (Drinks(x) xor Jokes(x)) ::: People either drink coffee or joke about caffeine addiction
forall x (Jokes(x) implies not Unaware(x)) ::: Those who joke are aware caffeine is a drug
(Student(rina) and Unaware(rina)) xor not (Student(rina) or Unaware(rina)) ::: Rina's student and awareness status

Conclusion:
Jokes(rina) xor Unaware(rina) ::: Rina jokes about caffeine or is unaware it is a drug"""


def char_vocab(*texts, extra=""):
    """Character-level vocabulary covering the given texts plus an eos."""
    chars = sorted(set("".join(texts) + extra))
    return build_vocabulary(chars + ["<eos>"], eos="<eos>")


def uniform_model(vocab):
    n = len(vocab)
    return TableModel(vocab, default=np.log(np.full(n, 1.0 / n)))


def random_model(vocab, rng, peak=3.0):
    """Table model whose default distribution is a random point on the simplex."""
    n = len(vocab)
    logits = rng.uniform(-peak, peak, size=n)
    return TableModel(vocab, default=logits - _lse(logits))


def _lse(v):
    m = np.max(v)
    return m + np.log(np.sum(np.exp(v - m)))


@pytest.fixture
def copybias():
    """Loaded copy-biased fixture suite (vocab, models, constraint, dataset)."""
    import structdec as sd

    vdoc = json.loads((FIXTURES / "copybias" / "vocab.json").read_text())
    vocab = sd.build_vocabulary(vdoc["tokens"], eos=vdoc["eos"])
    return {
        "vocab": vocab,
        "draft": sd.load_model(str(FIXTURES / "copybias" / "draft_model.json"), vocab),
        "proj": sd.load_model(str(FIXTURES / "copybias" / "proj_model.json"), vocab),
        "constraint": sd.compile_cfg(
            (FIXTURES / "copybias" / "answer.bnf").read_text(), vocab),
        "dataset": [json.loads(line) for line in
                    (FIXTURES / "copybias" / "dataset.jsonl").read_text().splitlines()],
    }
