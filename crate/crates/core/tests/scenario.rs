use std::path::PathBuf;

use coexsim::scenario::{load_or_preset, preset, Scenario, PRESET_NAMES, SCHEMA};
use coexsim::Error;
use serde_json::Value;

/// Checks `v` against the subset of JSON Schema used by the bundled schema
/// and returns every violation as a JSON pointer.
fn violations(schema: &Value, root: &Value, v: &Value, ptr: &str, out: &mut Vec<String>) {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let target = root
            .pointer(r.trim_start_matches('#'))
            .unwrap_or_else(|| panic!("dangling $ref {r}"));
        return violations(target, root, v, ptr, out);
    }
    if let Some(options) = schema.get("oneOf").and_then(Value::as_array) {
        let ok = options
            .iter()
            .filter(|o| {
                let mut e = Vec::new();
                violations(o, root, v, ptr, &mut e);
                e.is_empty()
            })
            .count();
        if ok != 1 {
            out.push(format!("{ptr}: matches {ok} oneOf branches"));
        }
        return;
    }
    if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
        if !allowed.contains(v) {
            out.push(format!("{ptr}: {v} not in enum"));
        }
    }
    if let Some(ty) = schema.get("type") {
        let types: Vec<&str> = match ty {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => panic!("bad type keyword"),
        };
        let matches = |t: &str| match t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            "number" => v.is_number(),
            "integer" => v.is_u64() || v.is_i64(),
            other => panic!("unsupported type {other}"),
        };
        if !types.iter().any(|t| matches(t)) {
            out.push(format!("{ptr}: expected {types:?}"));
            return;
        }
    }
    if let Some(x) = v.as_f64() {
        let bound = |k: &str| schema.get(k).and_then(Value::as_f64);
        if bound("minimum").is_some_and(|m| x < m)
            || bound("maximum").is_some_and(|m| x > m)
            || bound("exclusiveMinimum").is_some_and(|m| x <= m)
        {
            out.push(format!("{ptr}: {x} out of bounds"));
        }
    }
    if let Some(obj) = v.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        for key in schema
            .get("required")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
        {
            let key = key.as_str().unwrap();
            if !obj.contains_key(key) {
                out.push(format!("{ptr}: missing {key}"));
            }
        }
        for (k, val) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(s) => violations(s, root, val, &format!("{ptr}/{k}"), out),
                None => {
                    if schema.get("additionalProperties") == Some(&Value::Bool(false)) {
                        out.push(format!("{ptr}/{k}: not allowed"));
                    }
                }
            }
        }
    }
    if let Some(arr) = v.as_array() {
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if (arr.len() as u64) < min {
                out.push(format!("{ptr}: fewer than {min} items"));
            }
        }
        if let Some(items) = schema.get("items") {
            for (i, x) in arr.iter().enumerate() {
                violations(items, root, x, &format!("{ptr}/{i}"), out);
            }
        }
    }
}

fn schema_errors(doc: &Value) -> Vec<String> {
    let schema: Value = serde_json::from_str(SCHEMA).unwrap();
    let mut out = Vec::new();
    violations(&schema, &schema, doc, "", &mut out);
    out
}

fn presets_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("presets")
}

#[test]
fn bundled_files_match_presets() {
    for name in PRESET_NAMES {
        let path = presets_dir().join(format!("{name}.json"));
        let text = std::fs::read_to_string(&path).unwrap();
        let built = preset(name).unwrap();
        assert_eq!(text, built.to_json(), "{name}.json is stale");
        assert_eq!(Scenario::from_json(&text).unwrap(), built);
        assert_eq!(load_or_preset(path.to_str().unwrap()).unwrap(), built);
    }
}

#[test]
fn presets_validate_against_schema() {
    for name in PRESET_NAMES {
        let doc: Value = serde_json::from_str(&preset(name).unwrap().to_json()).unwrap();
        let errs = schema_errors(&doc);
        assert!(errs.is_empty(), "{name}: {errs:?}");
    }
}

#[test]
fn schema_and_loader_agree_on_bad_documents() {
    let good: Value = serde_json::from_str(&preset("paper_5gbps").unwrap().to_json()).unwrap();
    let edits: Vec<(&str, Value)> = vec![
        ("/topology/source/signal_channel", Value::from(99)),
        ("/topology/alice_path/1/dwdm/center", Value::from(0)),
        ("/topology/detectors/bob/efficiency", Value::from(1.5)),
        ("/duration_s", Value::from(-1.0)),
        ("/qkd/f_ec", Value::from(0.5)),
        (
            "/topology/classical_links/0/direction",
            Value::from("sideways"),
        ),
    ];
    for (ptr, value) in edits {
        let mut doc = good.clone();
        *doc.pointer_mut(ptr).unwrap() = value;
        assert!(!schema_errors(&doc).is_empty(), "schema accepts {ptr}");
        let text = serde_json::to_string_pretty(&doc).unwrap();
        assert!(
            matches!(Scenario::from_json(&text), Err(Error::Validation(_))),
            "loader accepts {ptr}"
        );
    }
    let mut doc = good.clone();
    doc.as_object_mut()
        .unwrap()
        .insert("colour".into(), Value::from("blue"));
    assert!(!schema_errors(&doc).is_empty());
    assert!(Scenario::from_json(&doc.to_string()).is_err());
}

#[test]
fn off_grid_channel_error_names_its_line() {
    let text = preset("paper_0gbps").unwrap().to_json();
    let needle = "\"signal_channel\": 35";
    let line = text.lines().position(|l| l.contains(needle)).unwrap() + 1;
    let bad = text.replace(needle, "\"signal_channel\": 80");
    match Scenario::from_json(&bad) {
        Err(Error::Validation(msgs)) => {
            assert_eq!(msgs.len(), 1);
            assert!(
                msgs[0].starts_with(&format!("line {line}, column ")),
                "{msgs:?}"
            );
            assert!(msgs[0].contains("80"), "{msgs:?}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn semantic_errors_point_at_the_offending_value() {
    let text = preset("paper_0gbps").unwrap().to_json();
    let needle = "\"dark_rate_hz\": 100.0";
    let line = text.lines().position(|l| l.contains(needle)).unwrap() + 1;
    let bad = text.replacen(needle, "\"dark_rate_hz\": -5.0", 1);
    let bad = bad.replace("\"repeats\": 3", "\"repeats\": 0");
    match Scenario::from_json(&bad) {
        Err(Error::Validation(msgs)) => {
            assert_eq!(msgs.len(), 2, "{msgs:?}");
            assert!(msgs
                .iter()
                .any(|m| m.starts_with(&format!("line {}, ", line - 2))
                    && m.contains("/detectors/alice")));
            assert!(msgs.iter().any(|m| m.contains("/franson/repeats")));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_preset_is_reported() {
    assert!(load_or_preset("paper_7gbps").is_err());
    assert!(preset("nope").is_err());
}
