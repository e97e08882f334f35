"""JSON schema of serialized endpoint programs, used to validate projector output."""

EXPR = {"type": "object", "minProperties": 1}


def _action_ref():
    return {"$ref": "#/$defs/action"}


def _kind(name, props, required):
    return {
        "type": "object",
        "properties": {"kind": {"const": name}, **props},
        "required": ["kind", *required],
        "additionalProperties": False,
    }


ROLES = {"type": "array", "items": {"type": "string"}}

ENDPOINT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$ref": "#/$defs/action",
    "$defs": {
        "action": {"oneOf": [
            _kind("send", {"label": {"type": "string"}, "to": {"type": "string"},
                           "expr": {"oneOf": [EXPR, {"type": "null"}]}}, ["label", "to", "expr"]),
            _kind("recv", {"label": {"type": "string"}, "from": {"type": "string"},
                           "var": {"type": ["string", "null"]}}, ["label", "from", "var"]),
            _kind("localAssign", {"var": {"type": "string"}, "expr": EXPR}, ["var", "expr"]),
            _kind("ifLocal", {"cond": EXPR, "aux": {"type": "string"}, "notify": ROLES,
                              "then": _action_ref(), "else": _action_ref()},
                  ["cond", "aux", "notify", "then", "else"]),
            _kind("branchRecv", {"aux": {"type": "string"}, "from": {"type": "string"},
                                 "branches": {"type": "object", "properties": {
                                     "then": _action_ref(), "else": _action_ref()},
                                     "required": ["then", "else"], "additionalProperties": False}},
                  ["aux", "from", "branches"]),
            _kind("whileLocal", {"cond": EXPR, "aux": {"type": "string"}, "notify": ROLES,
                                 "branches": {"type": "object", "properties": {"continue": _action_ref()},
                                              "required": ["continue"], "additionalProperties": False}},
                  ["cond", "aux", "notify", "branches"]),
            _kind("loopRecv", {"aux": {"type": "string"}, "from": {"type": "string"},
                               "branches": {"type": "object", "properties": {"continue": _action_ref()},
                                            "required": ["continue"], "additionalProperties": False}},
                  ["aux", "from", "branches"]),
            _kind("scopeCoord", {"scopeId": {"type": "string"}, "props": {"type": "object"},
                                 "involved": ROLES, "original": _action_ref()},
                  ["scopeId", "props", "involved", "original"]),
            _kind("scopeWait", {"scopeId": {"type": "string"}, "coordinator": {"type": "string"},
                                "original": _action_ref()}, ["scopeId", "coordinator", "original"]),
            _kind("localSeq", {"items": {"type": "array", "items": _action_ref(), "minItems": 2}}, ["items"]),
            _kind("localPar", {"items": {"type": "array", "items": _action_ref(), "minItems": 2}}, ["items"]),
            _kind("noop", {}, []),
        ]},
    },
}
