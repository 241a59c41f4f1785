import json

import pytest

from structdec.errors import UnsupportedSchemaFeature
from structdec.json_schema import schema_to_grammar
from structdec.cfg import Grammar, initial_earley_state

from conftest import GSM8K_OBJECT


def accepts(source, text):
    g = Grammar(source)
    state = initial_earley_state(g)
    for ch in text:
        state = state.advance_char(ch)
        if state is None:
            return False
    return state.accepting


SCHEMA = {
    "type": "object",
    "properties": {
        "steps": {"type": "array", "items": {"type": "string", "minLength": 1},
                  "minItems": 1},
        "answer": {"type": "string", "minLength": 1},
    },
    "required": ["steps", "answer"],
}


def test_accepts_pretty_printed_object():
    assert accepts(schema_to_grammar(SCHEMA), GSM8K_OBJECT)


def test_accepts_compact_object():
    doc = json.dumps({"steps": ["a"], "answer": "1"})
    assert accepts(schema_to_grammar(SCHEMA), doc)


def test_rejects_missing_field():
    doc = json.dumps({"answer": "18"})
    assert not accepts(schema_to_grammar(SCHEMA), doc)


def test_rejects_wrong_field_order():
    doc = '{"answer": "18", "steps": ["a"]}'
    assert not accepts(schema_to_grammar(SCHEMA), doc)


def test_rejects_empty_when_min_constraints_set():
    src = schema_to_grammar(SCHEMA)
    assert not accepts(src, json.dumps({"steps": [], "answer": "1"}))
    assert not accepts(src, json.dumps({"steps": ["a"], "answer": ""}))


def test_min_zero_variants_allow_empty():
    schema = {"type": "object", "properties": {
        "steps": {"type": "array", "items": {"type": "string"}},
        "answer": {"type": "string"},
    }}
    src = schema_to_grammar(schema)
    assert accepts(src, json.dumps({"steps": [], "answer": ""}))


def test_string_escapes_and_unicode():
    src = schema_to_grammar({"type": "object", "properties": {
        "answer": {"type": "string"}}})
    assert accepts(src, '{"answer": "a\\n\\"b\\u00e9"}')
    assert not accepts(src, '{"answer": "a\\x"}')
    assert not accepts(src, '{"answer": "a\nb"}')  # raw control char


def test_rejects_trailing_garbage():
    src = schema_to_grammar(SCHEMA)
    assert not accepts(src, json.dumps({"steps": ["a"], "answer": "1"}) + "x")


def test_truncated_object_rejected():
    doc = json.dumps({"steps": ["a"], "answer": "1"})
    assert not accepts(schema_to_grammar(SCHEMA), doc[:-2])


@pytest.mark.parametrize("schema", [
    {"type": "array"},
    {"type": "object", "properties": {}},
    {"type": "object", "properties": {"a": {"type": "integer"}}},
    {"type": "object", "properties": {"a": {"type": "string"}}, "required": []},
    {"type": "object", "properties": {"a": {"type": "string", "minLength": 3}}},
    {"type": "object", "properties": {"a": {"type": "array",
                                            "items": {"type": "integer"}}}},
    {"type": "object", "properties": {"a": {"type": "string"}},
     "additionalProperties": True},
])
def test_unsupported_features_raise(schema):
    with pytest.raises(UnsupportedSchemaFeature):
        schema_to_grammar(schema)
