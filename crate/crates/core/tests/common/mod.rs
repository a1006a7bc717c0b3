//! Helpers shared by integration test targets.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use slmkit::funcall::{ArgValue, EvalSample, FunctionCall, FunctionDef, ParamDef};

/// Structural validation of `doc` against the subset of JSON Schema the
/// in-repo schemas use: `type`, `required`, `properties`, `items`,
/// `enum`, `minimum`, `minItems`.
pub fn validate_schema(schema: &Value, doc: &Value, path: &str) -> Result<(), String> {
    if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
        if !allowed.contains(doc) {
            return Err(format!("{path}: {doc} not in enum {allowed:?}"));
        }
    }
    if let Some(ty) = schema.get("type").and_then(Value::as_str) {
        let ok = match ty {
            "object" => doc.is_object(),
            "array" => doc.is_array(),
            "string" => doc.is_string(),
            "integer" => doc.is_i64() || doc.is_u64(),
            "number" => doc.is_number(),
            "boolean" => doc.is_boolean(),
            other => return Err(format!("{path}: unsupported schema type {other}")),
        };
        if !ok {
            return Err(format!("{path}: expected {ty}, got {doc}"));
        }
    }
    if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
        let v = doc.as_f64().ok_or_else(|| format!("{path}: not numeric"))?;
        if v < min {
            return Err(format!("{path}: {v} below minimum {min}"));
        }
    }
    if let Some(required) = schema.get("required").and_then(Value::as_array) {
        for key in required {
            let key = key.as_str().unwrap();
            if doc.get(key).is_none() {
                return Err(format!("{path}: missing required key {key}"));
            }
        }
    }
    if let Some(props) = schema.get("properties").and_then(Value::as_object) {
        for (key, subschema) in props {
            if let Some(sub) = doc.get(key) {
                validate_schema(subschema, sub, &format!("{path}.{key}"))?;
            }
        }
    }
    if let Some(items) = schema.get("items") {
        if let Some(arr) = doc.as_array() {
            if let Some(min_items) = schema.get("minItems").and_then(Value::as_u64) {
                if (arr.len() as u64) < min_items {
                    return Err(format!("{path}: fewer than {min_items} items"));
                }
            }
            for (i, item) in arr.iter().enumerate() {
                validate_schema(items, item, &format!("{path}[{i}]"))?;
            }
        }
    }
    Ok(())
}

const FUNCTION_POOL: [&str; 3] = ["set_alarm", "send_email", "web_search"];
const ARG_POOL: [&str; 4] = ["a", "b", "c", "d"];

fn random_value(rng: &mut ChaCha8Rng) -> ArgValue {
    match rng.random_range(0..4) {
        0 => ArgValue::Int(rng.random_range(-20..20)),
        1 => ArgValue::Str(format!("s{}", rng.random_range(0..5))),
        2 => ArgValue::Bool(rng.random_bool(0.5)),
        _ => ArgValue::Real(rng.random_range(0..40) as f64 / 4.0),
    }
}

fn random_call(rng: &mut ChaCha8Rng, index: usize) -> FunctionCall {
    let n_args = rng.random_range(0..=3);
    let mut names: Vec<&str> = ARG_POOL.to_vec();
    let mut args = Vec::new();
    for _ in 0..n_args {
        let name = names.remove(rng.random_range(0..names.len()));
        args.push((name.to_string(), random_value(rng)));
    }
    FunctionCall {
        result_name: format!("result{}", index + 1),
        function: FUNCTION_POOL[rng.random_range(0..FUNCTION_POOL.len())].to_string(),
        args,
    }
}

fn perturb(rng: &mut ChaCha8Rng, truth: &[FunctionCall]) -> Vec<FunctionCall> {
    let mut pred = truth.to_vec();
    match rng.random_range(0..6) {
        // exact, possibly with renamed results
        0 => {
            for (i, call) in pred.iter_mut().enumerate() {
                call.result_name = format!("r{i}");
            }
        }
        // one argument value changed
        1 => {
            if let Some(call) = pred.iter_mut().find(|c| !c.args.is_empty()) {
                call.args[0].1 = ArgValue::Int(9_999);
            }
        }
        // one function renamed
        2 => {
            let i = rng.random_range(0..pred.len());
            pred[i].function = "unknown_fn".to_string();
        }
        // one call dropped
        3 => {
            pred.pop();
        }
        // one hallucinated call added
        4 => pred.push(FunctionCall {
            result_name: "extra".into(),
            function: "unknown_fn".into(),
            args: vec![],
        }),
        // order permuted
        _ => pred.reverse(),
    }
    pred
}

/// Deterministic random dataset for metric property checks. Every sample
/// in one dataset carries the same number of ground-truth calls, and no
/// generated argument is a reference, so call order can be permuted
/// freely.
pub fn random_funcall_dataset(seed: u64) -> (Vec<EvalSample>, Vec<Vec<FunctionCall>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calls_per_sample = rng.random_range(1..=3);
    let n_samples = rng.random_range(2..=8);
    let functions: Vec<FunctionDef> = FUNCTION_POOL
        .iter()
        .chain([&"unknown_fn"])
        .map(|name| FunctionDef {
            name: name.to_string(),
            description: String::new(),
            params: ARG_POOL
                .iter()
                .map(|a| ParamDef {
                    name: a.to_string(),
                    type_tag: "any".into(),
                    required: false,
                    description: String::new(),
                })
                .collect(),
        })
        .collect();

    let mut samples = Vec::new();
    let mut predictions = Vec::new();
    for i in 0..n_samples {
        let ground_truth: Vec<FunctionCall> = (0..calls_per_sample)
            .map(|j| random_call(&mut rng, j))
            .collect();
        predictions.push(perturb(&mut rng, &ground_truth));
        samples.push(EvalSample {
            query: format!("query {i}"),
            functions: functions.clone(),
            ground_truth,
        });
    }
    (samples, predictions)
}
