"""JSON-schema subset compiled to a character grammar.

Supported subset: a flat object with required fields in fixed (declaration)
order, each field typed ``string`` (optional ``minLength``) or an array of
strings (optional ``minItems``, item ``minLength``). Anything else raises
:class:`UnsupportedSchemaFeature`.

String contents follow RFC 8259 for the supported characters: any character
except ``"``, ``\\`` and controls, or one of the escapes
``\\" \\\\ \\/ \\b \\f \\n \\r \\t \\uXXXX``. Whitespace is permitted between
structural tokens, so pretty-printed objects validate.
"""

from __future__ import annotations

from .errors import UnsupportedSchemaFeature

_COMMON = r'''
ws: [ \t\n\r]*
jchar: [^"\\\u0000-\u001f] | esc
esc: "\\" (["\\/bfnrt] | "u" hex hex hex hex)
hex: [0-9a-fA-F]
'''


def _string_rule(name: str, min_length: int) -> str:
    if min_length not in (0, 1):
        raise UnsupportedSchemaFeature(f"minLength {min_length} not supported (0 or 1 only)")
    body = "jchar jchar*" if min_length == 1 else "jchar*"
    return f'{name}: "\\"" {body} "\\""\n'


def _quoted(name: str) -> str:
    return '"\\"' + name + '\\""'


def schema_to_grammar(schema: dict) -> str:
    """Generate grammar source for a schema document."""
    if not isinstance(schema, dict) or schema.get("type") != "object":
        raise UnsupportedSchemaFeature("top level must be an object schema")
    props = schema.get("properties")
    if not isinstance(props, dict) or not props:
        raise UnsupportedSchemaFeature("object schema needs properties")
    required = schema.get("required", list(props))
    if sorted(required) != sorted(props):
        raise UnsupportedSchemaFeature("all declared fields must be required")
    for key in ("additionalProperties", "patternProperties"):
        if schema.get(key):
            raise UnsupportedSchemaFeature(f"{key} not supported")

    field_rules = []
    defs = []
    for idx, (fname, fschema) in enumerate(props.items()):
        if not isinstance(fschema, dict):
            raise UnsupportedSchemaFeature(f"field {fname!r}: schema must be an object")
        ftype = fschema.get("type")
        rule = f"f{idx}"
        if ftype == "string":
            defs.append(_string_rule(f"{rule}v", int(fschema.get("minLength", 0))))
            defs.append(f'{rule}: {_quoted(fname)} ws ":" ws {rule}v\n')
        elif ftype == "array":
            items = fschema.get("items")
            if not isinstance(items, dict) or items.get("type") != "string":
                raise UnsupportedSchemaFeature(f"field {fname!r}: arrays must hold strings")
            defs.append(_string_rule(f"{rule}s", int(items.get("minLength", 0))))
            min_items = int(fschema.get("minItems", 0))
            if min_items not in (0, 1):
                raise UnsupportedSchemaFeature(f"minItems {min_items} not supported (0 or 1 only)")
            elems = f'{rule}s (ws "," ws {rule}s)*'
            if min_items == 0:
                defs.append(f'{rule}v: "[" ws ({elems})? ws "]"\n')
            else:
                defs.append(f'{rule}v: "[" ws {elems} ws "]"\n')
            defs.append(f'{rule}: {_quoted(fname)} ws ":" ws {rule}v\n')
        else:
            raise UnsupportedSchemaFeature(f"field {fname!r}: type {ftype!r} not supported")
        field_rules.append(rule)

    fields = ' ws "," ws '.join(field_rules)
    start = f'start: ws "{{" ws {fields} ws "}}" ws\n'
    return start + "".join(defs) + _COMMON
