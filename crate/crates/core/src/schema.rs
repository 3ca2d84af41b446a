//! JSON Schema (draft 7) documents for selectors and bundles.

use crate::bundle::{ENVELOPE_VERSION, HASH_ALGO, VOLATILE_META};
use serde_json::{json, Value};

pub const SELECTOR_SCHEMA_ID: &str = "urn:lanser:schema:selector:1";
pub const BUNDLE_SCHEMA_ID: &str = "urn:lanser:schema:bundle:1.2";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaKind {
    Selectors,
    Bundles,
}

impl std::str::FromStr for SchemaKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "selectors" | "selector" => Ok(SchemaKind::Selectors),
            "bundles" | "bundle" => Ok(SchemaKind::Bundles),
            other => Err(format!("unknown schema kind '{other}' (expected selectors|bundles)")),
        }
    }
}

pub fn export(kind: SchemaKind) -> Value {
    match kind {
        SchemaKind::Selectors => selector_schema(),
        SchemaKind::Bundles => bundle_schema(),
    }
}

fn selector_definitions() -> Value {
    json!({
        "indexing": { "enum": ["utf-16", "utf-8", "codepoint"] },
        "linecol": {
            "type": "array",
            "items": { "type": "integer", "minimum": 1 },
            "minItems": 2,
            "maxItems": 2
        },
        "docVersion": { "type": "string" },
        "selector": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {
                        "kind": { "const": "cursor" },
                        "uri": { "type": "string", "minLength": 1 },
                        "line": { "type": "integer", "minimum": 1 },
                        "col": { "type": "integer", "minimum": 1 },
                        "indexing": { "$ref": "#/definitions/indexing" },
                        "docVersion": { "$ref": "#/definitions/docVersion" }
                    },
                    "required": ["kind", "uri", "line", "col"],
                    "additionalProperties": false
                },
                {
                    "type": "object",
                    "properties": {
                        "kind": { "const": "range" },
                        "uri": { "type": "string", "minLength": 1 },
                        "start": { "$ref": "#/definitions/linecol" },
                        "end": { "$ref": "#/definitions/linecol" },
                        "indexing": { "$ref": "#/definitions/indexing" },
                        "docVersion": { "$ref": "#/definitions/docVersion" }
                    },
                    "required": ["kind", "uri", "start", "end"],
                    "additionalProperties": false
                },
                {
                    "type": "object",
                    "properties": {
                        "kind": { "const": "symbol" },
                        "module": { "type": "string", "minLength": 1 },
                        "qualname": { "type": "string", "minLength": 1 },
                        "role": { "enum": ["def", "sig", "body", "doc"] },
                        "overload": { "type": "integer", "minimum": 0 },
                        "docVersion": { "$ref": "#/definitions/docVersion" }
                    },
                    "required": ["kind", "module", "qualname"],
                    "additionalProperties": false
                },
                {
                    "type": "object",
                    "properties": {
                        "kind": { "const": "ast" },
                        "path": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "array",
                                "items": [
                                    { "type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$" },
                                    { "type": "string" }
                                ],
                                "minItems": 2,
                                "maxItems": 2
                            }
                        },
                        "index": { "type": "integer", "minimum": 0 },
                        "docVersion": { "$ref": "#/definitions/docVersion" }
                    },
                    "required": ["kind", "path"],
                    "additionalProperties": false
                },
                {
                    "type": "object",
                    "properties": {
                        "kind": { "const": "anchor" },
                        "uri": { "type": "string", "minLength": 1 },
                        "snippet": { "type": "string", "minLength": 1 },
                        "ctx": { "type": "integer", "minimum": 0 },
                        "hash": { "type": "string", "pattern": "^sha256:[0-9a-f]{64}$" },
                        "docVersion": { "$ref": "#/definitions/docVersion" }
                    },
                    "required": ["kind", "uri", "snippet"],
                    "additionalProperties": false
                }
            ]
        }
    })
}

pub fn selector_schema() -> Value {
    json!({
        "$schema": "http://json-schema.org/draft-07/schema#",
        "$id": SELECTOR_SCHEMA_ID,
        "title": "PositionSpec",
        "definitions": selector_definitions(),
        "$ref": "#/definitions/selector"
    })
}

pub fn bundle_schema() -> Value {
    let mut defs = selector_definitions();
    let extra = json!({
        "range": {
            "type": "array",
            "items": { "type": "integer", "minimum": 1 },
            "minItems": 4,
            "maxItems": 4
        },
        "unit": { "type": "number", "minimum": 0, "maximum": 1 },
        "candidate": {
            "type": "object",
            "properties": {
                "uri": { "type": "string" },
                "range": { "$ref": "#/definitions/range" },
                "score": { "$ref": "#/definitions/unit" },
                "features": {
                    "type": "object",
                    "properties": {
                        "s_ast": { "$ref": "#/definitions/unit" },
                        "s_module": { "$ref": "#/definitions/unit" },
                        "j_token": { "$ref": "#/definitions/unit" },
                        "s_prox": { "$ref": "#/definitions/unit" }
                    },
                    "required": ["s_ast", "s_module", "j_token", "s_prox"],
                    "additionalProperties": false
                },
                "explanation": { "type": "string" }
            },
            "required": ["uri", "range", "score", "features", "explanation"],
            "additionalProperties": false
        },
        "location": {
            "type": "object",
            "properties": {
                "uri": { "type": "string" },
                "range": { "$ref": "#/definitions/range" }
            },
            "required": ["uri", "range"]
        },
        "errorSymbol": { "type": "string", "pattern": "^E/[A-Z_]+$" },
        "hunk": {
            "type": "object",
            "properties": {
                "file": { "type": "string" },
                "hunk_header": { "type": "string" },
                "ours": { "type": "string" },
                "theirs": { "type": "string" }
            },
            "required": ["file", "hunk_header", "ours", "theirs"],
            "additionalProperties": false
        },
        "environment": {
            "type": "object",
            "properties": {
                "server": {
                    "type": "object",
                    "properties": {
                        "name": { "type": "string" },
                        "version": { "type": ["string", "null"] }
                    },
                    "required": ["name", "version"]
                },
                "positionEncoding": { "enum": ["utf-16", "utf-8"] },
                "pythonExe": { "type": ["string", "null"] },
                "pythonVersion": { "type": ["string", "null"] },
                "venvPath": { "type": ["string", "null"] },
                "configDigest": { "type": "string", "pattern": "^sha256:[0-9a-f]{64}$" },
                "platform": { "type": "string" }
            },
            "required": ["server", "positionEncoding", "pythonExe", "pythonVersion", "configDigest", "platform"]
        }
    });
    if let (Value::Object(d), Value::Object(e)) = (&mut defs, extra) {
        d.extend(e);
    }
    json!({
        "$schema": "http://json-schema.org/draft-07/schema#",
        "$id": BUNDLE_SCHEMA_ID,
        "title": "AnalysisBundle",
        "definitions": defs,
        "type": "object",
        "properties": {
            "version": { "const": ENVELOPE_VERSION },
            "bundleId": { "type": "string", "pattern": "^sha256:[0-9a-f]{64}$" },
            "status": { "enum": ["ok", "error"] },
            "request": {
                "type": "object",
                "properties": {
                    "cmd": {
                        "enum": ["def", "refs", "hover", "symbols", "diag", "locate", "prepare-rename", "rename", "batch", "trace-replay"]
                    },
                    "selector": {
                        "oneOf": [{ "type": "null" }, { "$ref": "#/definitions/selector" }, { "type": "string" }]
                    },
                    "args": { "type": "object" }
                },
                "required": ["cmd", "selector"],
                "additionalProperties": false
            },
            "resolution": {
                "oneOf": [
                    { "type": "null" },
                    {
                        "type": "object",
                        "properties": {
                            "original": { "type": "string" },
                            "resolved": {
                                "oneOf": [{ "type": "null" }, { "$ref": "#/definitions/candidate" }]
                            },
                            "disambiguation": { "type": "array", "items": { "$ref": "#/definitions/candidate" } },
                            "error": { "$ref": "#/definitions/errorSymbol" }
                        },
                        "required": ["original", "resolved", "disambiguation"],
                        "additionalProperties": false
                    }
                ]
            },
            "facts": {
                "type": "object",
                "properties": {
                    "provenance": { "enum": ["lsp", "relocate"] },
                    "definitions": { "type": "array", "items": { "$ref": "#/definitions/location" } },
                    "references": { "type": "array", "items": { "$ref": "#/definitions/location" } },
                    "diagnostics": { "type": "array", "items": { "$ref": "#/definitions/location" } },
                    "symbols": { "type": "array", "items": { "$ref": "#/definitions/location" } }
                }
            },
            "edits": {
                "type": "object",
                "properties": {
                    "workspaceEdit": { "type": ["object", "null"] },
                    "diff": { "type": ["string", "null"] },
                    "conflicts": { "type": "array", "items": { "$ref": "#/definitions/hunk" } }
                },
                "required": ["workspaceEdit", "diff"]
            },
            "processReward": {
                "type": "object",
                "properties": {
                    "version": { "const": "pr-v1" },
                    "r": { "type": "number" },
                    "components": {
                        "type": "object",
                        "properties": {
                            "diag_delta": { "type": "integer" },
                            "safety": { "enum": [0, 1] },
                            "ambiguity_penalty": { "$ref": "#/definitions/unit" },
                            "alpha_conf": { "$ref": "#/definitions/unit" }
                        },
                        "required": ["diag_delta", "safety", "ambiguity_penalty", "alpha_conf"],
                        "additionalProperties": false
                    },
                    "weights": {
                        "type": "object",
                        "properties": {
                            "alpha": { "type": "number", "minimum": 0 },
                            "beta": { "type": "number", "minimum": 0 },
                            "gamma": { "type": "number", "minimum": 0 }
                        },
                        "required": ["alpha", "beta", "gamma"],
                        "additionalProperties": false
                    },
                    "explanation": { "type": "string" }
                },
                "required": ["version", "r", "components", "weights", "explanation"]
            },
            "environment": {
                "oneOf": [{ "type": "null" }, { "$ref": "#/definitions/environment" }]
            },
            "capabilities": {
                "type": "object",
                "properties": {
                    "partialResult": { "type": "boolean" },
                    "cancellable": { "type": "boolean" }
                },
                "required": ["partialResult", "cancellable"]
            },
            "meta": {
                "type": "object",
                "properties": {
                    "exit_code": { "type": "integer", "minimum": 0 },
                    "sorting_keys": { "type": "array", "items": { "type": "string" } },
                    "hashing": {
                        "type": "object",
                        "properties": {
                            "algo": { "const": HASH_ALGO },
                            "volatile": { "const": VOLATILE_META.iter().map(|f| format!("meta.{f}")).collect::<Vec<_>>() }
                        },
                        "required": ["algo", "volatile"]
                    },
                    "error": {
                        "type": "object",
                        "properties": {
                            "symbol": { "$ref": "#/definitions/errorSymbol" },
                            "message": { "type": "string" },
                            "retryable": { "enum": ["yes", "no", "sometimes", "manual"] }
                        },
                        "required": ["symbol", "message", "retryable"]
                    },
                    "truncated": { "type": "boolean" },
                    "cursor": { "type": "string" },
                    "timestamp": { "type": "string" },
                    "duration_ms": { "type": "integer", "minimum": 0 },
                    "pid": { "type": "integer", "minimum": 0 }
                },
                "required": ["exit_code", "sorting_keys", "hashing"]
            }
        },
        "required": [
            "version", "bundleId", "status", "request", "resolution", "facts", "edits",
            "environment", "capabilities", "meta"
        ],
        "additionalProperties": false
    })
}

/// Path-addressed schema violations of `instance` (empty when valid).
pub fn validate(schema: &Value, instance: &Value) -> Vec<String> {
    let compiled = match jsonschema::JSONSchema::compile(schema) {
        Ok(c) => c,
        Err(e) => return vec![format!("schema does not compile: {e}")],
    };
    let mut out = match compiled.validate(instance) {
        Ok(()) => Vec::new(),
        Err(errors) => errors
            .map(|e| {
                let path = e.instance_path.to_string();
                format!("{}: {e}", if path.is_empty() { "/" } else { &path })
            })
            .collect(),
    };
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::parse_selector;

    #[test]
    fn selectors_validate() {
        let schema = selector_schema();
        for s in [
            "src/app.py@L42:C7",
            "src/app.py@R(1,1->2,3)",
            "py://pkg.mod#Class.method:body",
            "ast://[module=pkg.mod]/[class=Class]/[def=method]/name[1]",
            "anchor://src/app.py#\"def%20load_data(\"?ctx=24",
        ] {
            let v = serde_json::to_value(parse_selector(s).unwrap()).unwrap();
            assert_eq!(validate(&schema, &v), Vec::<String>::new(), "{s}");
        }
        let bad = json!({"kind": "cursor", "uri": "a.py", "line": 0, "col": 1});
        assert!(!validate(&schema, &bad).is_empty());
    }

    #[test]
    fn export_is_stable() {
        let a = serde_json::to_vec(&export(SchemaKind::Bundles)).unwrap();
        let b = serde_json::to_vec(&export(SchemaKind::Bundles)).unwrap();
        assert_eq!(a, b);
        assert!(jsonschema::JSONSchema::compile(&bundle_schema()).is_ok());
    }
}
