import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from structdec import RemoteModel, build_vocabulary
from structdec.service import create_app

from conftest import FIXTURES, uniform_model

VOCAB = {"tokens": ["a", "b", "c", "<eos>"], "eos": "<eos>"}
UNIFORM = {"kind": "table",
           "default": {"a": 1.0, "b": 1.0, "c": 1.0, "<eos>": 1.0}}


@pytest.fixture
def client():
    return TestClient(create_app())


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["serves_logprobs"] is False


def test_decode_endpoint_constrained(client):
    resp = client.post("/decode", json={
        "vocab": VOCAB, "model": UNIFORM, "prompt": "",
        "constraint": {"kind": "regex", "source": "(a|b)+c"},
        "config": {"max_len": 10, "policy": "sample", "seed": 3},
    })
    assert resp.status_code == 200
    body = resp.json()
    trace = body["trace"]
    assert trace["terminated"] in ("eos", "max_len")
    if trace["terminated"] == "eos":
        assert trace["constraint_satisfied"] is True
    assert len(body["trace_jsonl"].splitlines()) == len(trace["steps"]) + 1


def test_decode_endpoint_is_deterministic(client):
    payload = {
        "vocab": VOCAB, "model": UNIFORM, "prompt": "a",
        "constraint": {"kind": "regex", "source": "a[bc]+"},
        "config": {"max_len": 6, "policy": "sample", "seed": 5},
    }
    a = client.post("/decode", json=payload).json()
    b = client.post("/decode", json=payload).json()
    assert a == b


def test_bad_constraint_maps_to_400(client):
    resp = client.post("/decode", json={
        "vocab": VOCAB, "model": UNIFORM,
        "constraint": {"kind": "regex", "source": "(unbalanced"},
        "config": {"max_len": 5},
    })
    assert resp.status_code == 400
    assert resp.json()["error"] == "UnsupportedRegexFeature"


def test_bad_vocab_maps_to_400(client):
    resp = client.post("/decode", json={
        "vocab": {"tokens": ["a", "a", "<eos>"], "eos": "<eos>"},
        "model": UNIFORM, "config": {"max_len": 5},
    })
    assert resp.status_code == 400
    assert resp.json()["error"] == "DuplicateToken"


def test_dccd_endpoint(client):
    cb = FIXTURES / "copybias"
    resp = client.post("/dccd", json={
        "vocab": json.loads((cb / "vocab.json").read_text()),
        "draft_model": json.loads((cb / "draft_model.json").read_text()),
        "proj_model": json.loads((cb / "proj_model.json").read_text()),
        "prompt": "q2",
        "constraint": {"kind": "cfg", "source": (cb / "answer.bnf").read_text()},
        "template": "{prompt}{draft}",
        "K": 1,
        "cfg_draft": {"max_len": 8},
        "cfg_proj": {"max_len": 8},
        "answer_format": "regex:<<([a-h])>>",
    })
    assert resp.status_code == 200
    body = resp.json()
    assert body["winner_text"] == "<<b>>"
    assert body["candidates"][0]["extracted_answer"] == "b"
    assert body["selected"] == 0
    assert not body["all_realizations_invalid"]


def test_eval_endpoint_decline_empty_dataset(client):
    resp = client.post("/eval", json={
        "vocab": VOCAB, "model": UNIFORM, "dataset": [],
        "method": "cd", "config": {"max_len": 5},
    })
    assert resp.status_code == 400


def test_eval_endpoint_report_shape(client):
    resp = client.post("/eval", json={
        "vocab": VOCAB, "model": UNIFORM,
        "dataset": [{
            "id": "r1", "prompt": "", "gold": "abc",
            "constraint": {"kind": "regex", "source": "(a|b)+c"},
            "format": "regex:(.+)",
        }],
        "method": "cd", "config": {"max_len": 10, "policy": "sample", "seed": 1},
    })
    assert resp.status_code == 200
    body = resp.json()
    assert len(body["rows"]) == 1
    entry = body["report"]["methods"]["cd"]
    assert entry["count"] == 1
    assert 0.0 <= entry["validity_rate"] <= 1.0


def test_scale_endpoint_rejects_even_n(client):
    resp = client.post("/scale", json={
        "vocab": VOCAB, "model": UNIFORM,
        "dataset": [{
            "id": "r1", "prompt": "", "gold": "x",
            "constraint": {"kind": "regex", "source": "(a|b)+c"},
            "format": "regex:(.+)",
        }],
        "n_values": [2], "config": {"max_len": 5, "policy": "sample"},
    })
    assert resp.status_code == 400


def test_logprobs_endpoint_absent_without_model(client):
    resp = client.post("/v1/logprobs", json={"context": []})
    assert resp.status_code in (404, 405)


def test_logprobs_endpoint_and_remote_adapter_roundtrip():
    # Serve a model at /v1/logprobs and consume it through RemoteModel:
    # both sides of the wire protocol in one process.
    vocab = build_vocabulary(["a", "b", "c", "<eos>"], eos="<eos>")
    backing = uniform_model(vocab)
    server = TestClient(create_app(model=backing))

    assert server.get("/health").json()["serves_logprobs"] is True
    direct = server.post("/v1/logprobs", json={"context": [0]}).json()
    assert len(direct["logprobs"]) == len(vocab)

    remote = RemoteModel(vocab, endpoint="", client=server)
    got = remote.next_distribution((0,))
    np.testing.assert_allclose(got, backing.next_distribution((0,)), atol=1e-12)


def test_logprobs_endpoint_rejects_bad_context():
    vocab = build_vocabulary(["a", "<eos>"], eos="<eos>")
    server = TestClient(create_app(model=uniform_model(vocab)))
    resp = server.post("/v1/logprobs", json={"context": [99]})
    assert resp.status_code == 400
