//! Function-call prompt rendering, output parsing, and scoring.
//!
//! Assistant output is expected as one call per line,
//! `resultN = function(arg=value, ...)`, where values are double-quoted
//! strings, numbers, booleans, bracketed lists, or bare identifiers that
//! reference an earlier result name. Two metrics are computed against
//! ground truth: all-or-nothing per-sample accuracy, and per-call soft
//! accuracy (fraction of correctly predicted parameters).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed system prompt used for every rendered sample.
pub const SYSTEM_PROMPT: &str = "You are an expert in composing functions.";

#[derive(Debug, Error)]
pub enum FuncallError {
    #[error("predictions and samples differ in length: {predictions} vs {samples}")]
    LengthMismatch { predictions: usize, samples: usize },
    #[error("sample {index}: {message}")]
    BadSample { index: usize, message: String },
    #[error("at least one function is required")]
    NoFunctions,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

/// One declared parameter of a callable function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDef {
    pub name: String,
    #[serde(rename = "type", default)]
    pub type_tag: String,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

/// A callable function exposed to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub params: Vec<ParamDef>,
}

impl FunctionDef {
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for p in &self.params {
            if !seen.insert(p.name.as_str()) {
                return Err(format!(
                    "duplicate parameter `{}` in `{}`",
                    p.name, self.name
                ));
            }
        }
        Ok(())
    }
}

/// A parsed argument value.
#[derive(Debug, Clone, PartialEq)]
pub enum ArgValue {
    Str(String),
    Int(i64),
    Real(f64),
    Bool(bool),
    List(Vec<ArgValue>),
    /// Reference to an earlier call's result name.
    Ref(String),
}

/// One function call: `result_name = function(args...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionCall {
    pub result_name: String,
    pub function: String,
    pub args: Vec<(String, ArgValue)>,
}

/// One evaluation sample: query, callable functions, expected calls.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub query: String,
    pub functions: Vec<FunctionDef>,
    pub ground_truth: Vec<FunctionCall>,
}

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

/// Renders the fixed prompt template around `functions` and `query`.
///
/// Returns `(system, user)` texts. Each function is serialized as one
/// compact JSON line, so the output is byte-deterministic for equal input.
pub fn render_prompt(
    functions: &[FunctionDef],
    query: &str,
) -> Result<(String, String), FuncallError> {
    if functions.is_empty() {
        return Err(FuncallError::NoFunctions);
    }
    let lines: Vec<String> = functions
        .iter()
        .map(|f| serde_json::to_string(f).expect("function defs serialize"))
        .collect();
    let user = format!(
        "Here is a list of functions that you can invoke:\n{}\nNow my query is: {}",
        lines.join("\n"),
        query
    );
    Ok((SYSTEM_PROMPT.to_string(), user))
}

// ---------------------------------------------------------------------------
// Output parsing
// ---------------------------------------------------------------------------

/// Calls recovered from raw model output plus a count of rejected lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub calls: Vec<FunctionCall>,
    /// Non-empty lines that failed the grammar, repeated an argument name,
    /// or referenced an unknown result.
    pub skipped: usize,
}

/// Parses arbitrary model output; never fails.
///
/// Unparseable non-empty lines are skipped and counted. A call that
/// references a result name not defined by an earlier accepted call is
/// invalid and counted as skipped.
pub fn parse_calls(text: &str) -> ParseOutcome {
    let mut outcome = ParseOutcome::default();
    let mut known_results: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Some(call) if call_is_coherent(&call, &known_results) => {
                known_results.push(call.result_name.clone());
                outcome.calls.push(call);
            }
            _ => outcome.skipped += 1,
        }
    }
    outcome
}

fn call_is_coherent(call: &FunctionCall, known: &[String]) -> bool {
    let mut names = std::collections::HashSet::new();
    for (name, value) in &call.args {
        if !names.insert(name.as_str()) {
            return false;
        }
        if !refs_are_known(value, known) {
            return false;
        }
    }
    true
}

fn refs_are_known(value: &ArgValue, known: &[String]) -> bool {
    match value {
        ArgValue::Ref(name) => known.iter().any(|k| k == name),
        ArgValue::List(items) => items.iter().all(|v| refs_are_known(v, known)),
        _ => true,
    }
}

struct LineParser<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
}

impl<'a> LineParser<'a> {
    fn new(s: &'a str) -> Self {
        Self {
            chars: s.chars().peekable(),
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some(c) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn expect(&mut self, c: char) -> Option<()> {
        (self.chars.next()? == c).then_some(())
    }

    fn ident(&mut self) -> Option<String> {
        let mut out = String::new();
        match self.chars.peek() {
            Some(&c) if c.is_ascii_alphabetic() || c == '_' => {
                out.push(c);
                self.chars.next();
            }
            _ => return None,
        }
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                out.push(c);
                self.chars.next();
            } else {
                break;
            }
        }
        Some(out)
    }

    fn string(&mut self) -> Option<String> {
        self.expect('"')?;
        let mut out = String::new();
        loop {
            match self.chars.next()? {
                '"' => return Some(out),
                '\\' => match self.chars.next()? {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    other => out.push(other),
                },
                c => out.push(c),
            }
        }
    }

    fn number(&mut self) -> Option<ArgValue> {
        let mut text = String::new();
        if matches!(self.chars.peek(), Some('-')) {
            text.push('-');
            self.chars.next();
        }
        let mut fractional = false;
        while let Some(&c) = self.chars.peek() {
            match c {
                '0'..='9' => text.push(c),
                '.' | 'e' | 'E' => {
                    fractional = true;
                    text.push(c);
                }
                '+' | '-' if text.ends_with(['e', 'E']) => text.push(c),
                _ => break,
            }
            self.chars.next();
        }
        if fractional {
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(ArgValue::Real)
        } else {
            text.parse::<i64>().ok().map(ArgValue::Int)
        }
    }

    fn value(&mut self) -> Option<ArgValue> {
        self.skip_ws();
        match self.chars.peek()? {
            '"' => self.string().map(ArgValue::Str),
            '[' => {
                self.chars.next();
                let mut items = Vec::new();
                self.skip_ws();
                if matches!(self.chars.peek(), Some(']')) {
                    self.chars.next();
                    return Some(ArgValue::List(items));
                }
                loop {
                    items.push(self.value()?);
                    self.skip_ws();
                    match self.chars.next()? {
                        ',' => {
                            self.skip_ws();
                            if matches!(self.chars.peek(), Some(']')) {
                                self.chars.next();
                                return Some(ArgValue::List(items));
                            }
                        }
                        ']' => return Some(ArgValue::List(items)),
                        _ => return None,
                    }
                }
            }
            '-' | '0'..='9' => self.number(),
            _ => match self.ident()?.as_str() {
                "true" => Some(ArgValue::Bool(true)),
                "false" => Some(ArgValue::Bool(false)),
                name => Some(ArgValue::Ref(name.to_string())),
            },
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.chars.peek().is_none()
    }
}

fn parse_line(line: &str) -> Option<FunctionCall> {
    let mut p = LineParser::new(line);
    p.skip_ws();
    let result_name = p.ident()?;
    p.skip_ws();
    p.expect('=')?;
    p.skip_ws();
    let function = p.ident()?;
    p.skip_ws();
    p.expect('(')?;
    p.skip_ws();

    let mut args = Vec::new();
    if matches!(p.chars.peek(), Some(')')) {
        p.chars.next();
    } else {
        loop {
            p.skip_ws();
            let name = p.ident()?;
            p.skip_ws();
            p.expect('=')?;
            let value = p.value()?;
            args.push((name, value));
            p.skip_ws();
            match p.chars.next()? {
                ',' => {
                    p.skip_ws();
                    if matches!(p.chars.peek(), Some(')')) {
                        p.chars.next();
                        break;
                    }
                }
                ')' => break,
                _ => return None,
            }
        }
    }
    p.at_end().then_some(FunctionCall {
        result_name,
        function,
        args,
    })
}

// ---------------------------------------------------------------------------
// Canonical comparison
// ---------------------------------------------------------------------------

/// Rewrites result names to positional `#N` names, resolving references by
/// the latest earlier definition, so differently named but structurally
/// equal call lists compare equal.
pub fn normalize_calls(calls: &[FunctionCall]) -> Vec<FunctionCall> {
    let mut registry: Vec<(String, usize)> = Vec::new();
    calls
        .iter()
        .enumerate()
        .map(|(i, call)| {
            let args = call
                .args
                .iter()
                .map(|(n, v)| (n.clone(), normalize_value(v, &registry)))
                .collect();
            registry.push((call.result_name.clone(), i));
            FunctionCall {
                result_name: format!("#{i}"),
                function: call.function.clone(),
                args,
            }
        })
        .collect()
}

fn normalize_value(value: &ArgValue, registry: &[(String, usize)]) -> ArgValue {
    match value {
        ArgValue::Ref(name) => {
            let idx = registry
                .iter()
                .rev()
                .find(|(n, _)| n == name)
                .map(|(_, i)| *i);
            match idx {
                Some(i) => ArgValue::Ref(format!("#{i}")),
                None => ArgValue::Ref(name.clone()),
            }
        }
        ArgValue::List(items) => {
            ArgValue::List(items.iter().map(|v| normalize_value(v, registry)).collect())
        }
        other => other.clone(),
    }
}

/// Canonical text form of a value. Integer-valued reals render as
/// integers, so `8` and `8.0` compare equal while `"8"` stays distinct.
fn canon_value(value: &ArgValue) -> String {
    match value {
        ArgValue::Str(s) => format!("{s:?}"),
        ArgValue::Int(i) => i.to_string(),
        ArgValue::Real(r) => {
            if r.fract() == 0.0 && (i64::MIN as f64..=i64::MAX as f64).contains(r) {
                format!("{}", *r as i64)
            } else {
                format!("{r}")
            }
        }
        ArgValue::Bool(b) => b.to_string(),
        ArgValue::List(items) => {
            let inner: Vec<String> = items.iter().map(canon_value).collect();
            format!("[{}]", inner.join(","))
        }
        ArgValue::Ref(name) => format!("ref({name})"),
    }
}

/// Canonical text form of a call: function name plus name-sorted arguments.
fn canon_call(call: &FunctionCall) -> String {
    let mut args: Vec<String> = call
        .args
        .iter()
        .map(|(n, v)| format!("{n}={}", canon_value(v)))
        .collect();
    args.sort();
    format!("{}({})", call.function, args.join(","))
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

fn sample_matched(predicted: &[FunctionCall], truth: &[FunctionCall]) -> bool {
    if predicted.len() != truth.len() {
        return false;
    }
    let canon_sorted = |calls: &[FunctionCall]| {
        let mut v: Vec<String> = normalize_calls(calls).iter().map(canon_call).collect();
        v.sort();
        v
    };
    canon_sorted(predicted) == canon_sorted(truth)
}

/// Per-call parameter scores for one sample.
///
/// Each ground-truth call is assigned the best-scoring unused predicted
/// call with the same function name (ties prefer an exactly matching call,
/// then the earliest), scoring the fraction of ground-truth parameters
/// predicted with exactly equal values. Unmatched calls score 0; a
/// zero-parameter call with a name match scores 1. A sample whose ground
/// truth is empty contributes a single score: 1 if the prediction is also
/// empty, else 0.
fn sample_call_scores(predicted: &[FunctionCall], truth: &[FunctionCall]) -> Vec<f64> {
    if truth.is_empty() {
        return vec![if predicted.is_empty() { 1.0 } else { 0.0 }];
    }
    let preds = normalize_calls(predicted);
    let truths = normalize_calls(truth);
    let mut used = vec![false; preds.len()];
    let mut scores = Vec::with_capacity(truths.len());
    for gt in &truths {
        let gt_canon = canon_call(gt);
        let mut best: Option<(usize, f64, bool)> = None;
        for (i, pred) in preds.iter().enumerate() {
            if used[i] || pred.function != gt.function {
                continue;
            }
            let score = param_score(pred, gt);
            let exact = canon_call(pred) == gt_canon;
            let better = match best {
                None => true,
                Some((_, s, e)) => score > s || (score == s && exact && !e),
            };
            if better {
                best = Some((i, score, exact));
            }
        }
        match best {
            Some((i, score, _)) => {
                used[i] = true;
                scores.push(score);
            }
            None => scores.push(0.0),
        }
    }
    scores
}

fn param_score(pred: &FunctionCall, gt: &FunctionCall) -> f64 {
    if gt.args.is_empty() {
        return 1.0;
    }
    let hit = gt
        .args
        .iter()
        .filter(|(name, value)| {
            pred.args
                .iter()
                .any(|(pn, pv)| pn == name && canon_value(pv) == canon_value(value))
        })
        .count();
    hit as f64 / gt.args.len() as f64
}

fn check_lengths<T, U>(predictions: &[T], samples: &[U]) -> Result<(), FuncallError> {
    if predictions.len() != samples.len() {
        return Err(FuncallError::LengthMismatch {
            predictions: predictions.len(),
            samples: samples.len(),
        });
    }
    if samples.is_empty() {
        return Err(FuncallError::EmptyDataset);
    }
    Ok(())
}

/// Fraction of samples whose predicted calls correspond one-to-one with
/// ground truth: same function names and identical argument maps, order
/// insensitive across parallel calls.
pub fn accuracy(
    predictions: &[Vec<FunctionCall>],
    samples: &[EvalSample],
) -> Result<f64, FuncallError> {
    check_lengths(predictions, samples)?;
    let matched = predictions
        .iter()
        .zip(samples)
        .filter(|(p, s)| sample_matched(p, &s.ground_truth))
        .count();
    Ok(matched as f64 / samples.len() as f64)
}

/// Mean per-call fraction of correctly predicted parameters across all
/// ground-truth calls of all samples.
pub fn soft_accuracy(
    predictions: &[Vec<FunctionCall>],
    samples: &[EvalSample],
) -> Result<f64, FuncallError> {
    check_lengths(predictions, samples)?;
    let mut total = 0f64;
    let mut count = 0usize;
    for (pred, sample) in predictions.iter().zip(samples) {
        for s in sample_call_scores(pred, &sample.ground_truth) {
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-sample breakdown produced by [`evaluate`].
#[derive(Debug, Clone, Serialize)]
pub struct SampleReport {
    pub matched: bool,
    pub call_scores: Vec<f64>,
    pub parsed_calls: usize,
    pub skipped_lines: usize,
}

/// Full metric report over parsed model outputs.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub num_samples: usize,
    pub accuracy: f64,
    pub soft_accuracy: f64,
    pub total_skipped_lines: usize,
    pub samples: Vec<SampleReport>,
}

/// Parses raw outputs and computes both metrics plus diagnostics.
pub fn evaluate(
    model_outputs: &[String],
    samples: &[EvalSample],
) -> Result<EvalReport, FuncallError> {
    check_lengths(model_outputs, samples)?;
    let parsed: Vec<ParseOutcome> = model_outputs.iter().map(|t| parse_calls(t)).collect();
    let predictions: Vec<Vec<FunctionCall>> = parsed.iter().map(|p| p.calls.clone()).collect();

    let accuracy = accuracy(&predictions, samples)?;
    let soft = soft_accuracy(&predictions, samples)?;
    let sample_reports = predictions
        .iter()
        .zip(samples)
        .zip(&parsed)
        .map(|((pred, sample), outcome)| SampleReport {
            matched: sample_matched(pred, &sample.ground_truth),
            call_scores: sample_call_scores(pred, &sample.ground_truth),
            parsed_calls: pred.len(),
            skipped_lines: outcome.skipped,
        })
        .collect();

    Ok(EvalReport {
        num_samples: samples.len(),
        accuracy,
        soft_accuracy: soft,
        total_skipped_lines: parsed.iter().map(|p| p.skipped).sum(),
        samples: sample_reports,
    })
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct SampleLine {
    query: String,
    functions: Vec<FunctionDef>,
    ground_truth: Vec<GroundTruthCall>,
}

#[derive(Debug, Deserialize)]
struct GroundTruthCall {
    #[serde(default)]
    result_name: Option<String>,
    function: String,
    #[serde(default)]
    args: serde_json::Map<String, serde_json::Value>,
}

fn json_to_arg(value: &serde_json::Value) -> Result<ArgValue, String> {
    match value {
        serde_json::Value::String(s) => Ok(ArgValue::Str(s.clone())),
        serde_json::Value::Bool(b) => Ok(ArgValue::Bool(*b)),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(ArgValue::Int(i))
            } else {
                Ok(ArgValue::Real(n.as_f64().ok_or("unrepresentable number")?))
            }
        }
        serde_json::Value::Array(items) => Ok(ArgValue::List(
            items.iter().map(json_to_arg).collect::<Result<_, _>>()?,
        )),
        serde_json::Value::Object(map) => {
            // {"ref": "resultN"} marks a reference to an earlier call.
            match (map.len(), map.get("ref")) {
                (1, Some(serde_json::Value::String(name))) => Ok(ArgValue::Ref(name.clone())),
                _ => Err("objects are not valid argument values (use {\"ref\": ...})".into()),
            }
        }
        serde_json::Value::Null => Err("null is not a valid argument value".into()),
    }
}

/// Loads evaluation samples from JSON-lines text.
///
/// Each line: `{"query": ..., "functions": [...], "ground_truth":
/// [{"function": ..., "args": {...}}]}`. Argument values may be strings,
/// numbers, booleans, lists, or `{"ref": "resultN"}` references. Result
/// names default to `result1`, `result2`, ... per sample.
pub fn load_samples(text: &str) -> Result<Vec<EvalSample>, FuncallError> {
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: SampleLine = serde_json::from_str(line).map_err(|source| FuncallError::Json {
            line: lineno + 1,
            source,
        })?;
        let index = samples.len();
        for f in &raw.functions {
            f.validate()
                .map_err(|message| FuncallError::BadSample { index, message })?;
        }
        let mut ground_truth = Vec::with_capacity(raw.ground_truth.len());
        for (i, call) in raw.ground_truth.iter().enumerate() {
            if !raw.functions.iter().any(|f| f.name == call.function) {
                return Err(FuncallError::BadSample {
                    index,
                    message: format!("ground truth references undeclared `{}`", call.function),
                });
            }
            let args = call
                .args
                .iter()
                .map(|(n, v)| json_to_arg(v).map(|a| (n.clone(), a)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|message| FuncallError::BadSample { index, message })?;
            ground_truth.push(FunctionCall {
                result_name: call
                    .result_name
                    .clone()
                    .unwrap_or_else(|| format!("result{}", i + 1)),
                function: call.function.clone(),
                args,
            });
        }
        samples.push(EvalSample {
            query: raw.query,
            functions: raw.functions,
            ground_truth,
        });
    }
    if samples.is_empty() {
        return Err(FuncallError::EmptyDataset);
    }
    Ok(samples)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OutputLine {
    Bare(String),
    Tagged { output: String },
}

/// Loads model outputs: JSON-lines (each line a JSON string or
/// `{"output": ...}`) when `jsonl` is set, otherwise plain text with one
/// sample per blank-line-separated paragraph.
pub fn load_outputs(text: &str, jsonl: bool) -> Result<Vec<String>, FuncallError> {
    if jsonl {
        let mut out = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: OutputLine =
                serde_json::from_str(line).map_err(|source| FuncallError::Json {
                    line: lineno + 1,
                    source,
                })?;
            out.push(match parsed {
                OutputLine::Bare(s) => s,
                OutputLine::Tagged { output } => output,
            });
        }
        Ok(out)
    } else {
        Ok(text
            .split("\n\n")
            .map(|p| p.trim_matches('\n').to_string())
            .filter(|p| !p.trim().is_empty())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(result: &str, function: &str, args: &[(&str, ArgValue)]) -> FunctionCall {
        FunctionCall {
            result_name: result.into(),
            function: function.into(),
            args: args
                .iter()
                .map(|(n, v)| (n.to_string(), v.clone()))
                .collect(),
        }
    }

    fn alarm_sample(hour: i64, minute: i64) -> EvalSample {
        EvalSample {
            query: "wake me".into(),
            functions: vec![FunctionDef {
                name: "set_alarm".into(),
                description: "Set an alarm".into(),
                params: vec![],
            }],
            ground_truth: vec![call(
                "result1",
                "set_alarm",
                &[
                    ("hour", ArgValue::Int(hour)),
                    ("minute", ArgValue::Int(minute)),
                ],
            )],
        }
    }

    #[test]
    fn parses_minimal_call() {
        let outcome = parse_calls("result1 = set_alarm(hour=8, minute=0)");
        assert_eq!(outcome.skipped, 0);
        assert_eq!(
            outcome.calls,
            vec![call(
                "result1",
                "set_alarm",
                &[("hour", ArgValue::Int(8)), ("minute", ArgValue::Int(0))]
            )]
        );
    }

    #[test]
    fn parses_reference_to_earlier_result() {
        let text = "result1 = func0(arg1=\"value1\", arg2=\"value2\")\n\
                    result2 = func1(arg1=\"value1\", arg2=result1)";
        let outcome = parse_calls(text);
        assert_eq!(outcome.skipped, 0);
        assert_eq!(outcome.calls.len(), 2);
        assert_eq!(outcome.calls[1].args[1].1, ArgValue::Ref("result1".into()));
    }

    #[test]
    fn garbage_yields_empty_list_with_diagnostics() {
        let outcome = parse_calls("certainly, here is the plan");
        assert!(outcome.calls.is_empty());
        assert_eq!(outcome.skipped, 1);
    }

    #[test]
    fn undefined_reference_invalidates_the_call() {
        let outcome = parse_calls("result2 = f(x=result1)");
        assert!(outcome.calls.is_empty());
        assert_eq!(outcome.skipped, 1);
    }

    #[test]
    fn duplicate_argument_invalidates_the_call() {
        let outcome = parse_calls("r = f(x=1, x=2)");
        assert!(outcome.calls.is_empty());
        assert_eq!(outcome.skipped, 1);
    }

    #[test]
    fn parses_value_variety() {
        let outcome = parse_calls(
            r#"r = f(s="a \"b\"", n=-3, x=2.5, e=1e3, b=true, l=[1, "two", false], empty=[])"#,
        );
        assert_eq!(outcome.skipped, 0);
        let args = &outcome.calls[0].args;
        assert_eq!(args[0].1, ArgValue::Str("a \"b\"".into()));
        assert_eq!(args[1].1, ArgValue::Int(-3));
        assert_eq!(args[2].1, ArgValue::Real(2.5));
        assert_eq!(args[3].1, ArgValue::Real(1000.0));
        assert_eq!(args[4].1, ArgValue::Bool(true));
        assert_eq!(
            args[5].1,
            ArgValue::List(vec![
                ArgValue::Int(1),
                ArgValue::Str("two".into()),
                ArgValue::Bool(false)
            ])
        );
        assert_eq!(args[6].1, ArgValue::List(vec![]));
    }

    #[test]
    fn zero_arg_call_and_trailing_comma_parse() {
        assert_eq!(parse_calls("r = ping()").calls.len(), 1);
        assert_eq!(parse_calls("r = f(a=1,)").calls.len(), 1);
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let outcome = parse_calls("r = f(a=1) and then some");
        assert!(outcome.calls.is_empty());
        assert_eq!(outcome.skipped, 1);
    }

    #[test]
    fn renamed_results_compare_equal() {
        let a = vec![call("r", "f", &[("x", ArgValue::Int(1))])];
        let b = vec![call("result1", "f", &[("x", ArgValue::Int(1))])];
        assert!(sample_matched(&a, &b));
    }

    #[test]
    fn reference_structure_survives_normalization() {
        let a = vec![
            call("a", "f", &[]),
            call("b", "g", &[("x", ArgValue::Ref("a".into()))]),
        ];
        let b = vec![
            call("result1", "f", &[]),
            call("result2", "g", &[("x", ArgValue::Ref("result1".into()))]),
        ];
        assert!(sample_matched(&a, &b));
    }

    #[test]
    fn parallel_calls_match_order_insensitively() {
        let gt = vec![
            call("r1", "f", &[("x", ArgValue::Int(1))]),
            call("r2", "g", &[("y", ArgValue::Int(2))]),
        ];
        let pred = vec![
            call("a", "g", &[("y", ArgValue::Int(2))]),
            call("b", "f", &[("x", ArgValue::Int(1))]),
        ];
        assert!(sample_matched(&pred, &gt));
    }

    #[test]
    fn int_and_real_compare_by_value_strings_do_not() {
        assert_eq!(
            canon_value(&ArgValue::Int(8)),
            canon_value(&ArgValue::Real(8.0))
        );
        assert_ne!(
            canon_value(&ArgValue::Int(8)),
            canon_value(&ArgValue::Str("8".into()))
        );
        assert_ne!(
            canon_value(&ArgValue::Real(8.5)),
            canon_value(&ArgValue::Int(8))
        );
        assert_ne!(
            canon_value(&ArgValue::Bool(true)),
            canon_value(&ArgValue::Str("true".into()))
        );
    }

    #[test]
    fn accuracy_counts_perfect_samples_only() {
        let samples = vec![
            alarm_sample(8, 0),
            alarm_sample(9, 0),
            alarm_sample(10, 0),
            alarm_sample(11, 0),
        ];
        let predictions = vec![
            samples[0].ground_truth.clone(),
            samples[1].ground_truth.clone(),
            vec![call("r", "set_alarm", &[("hour", ArgValue::Int(23))])],
            vec![],
        ];
        assert_eq!(accuracy(&predictions, &samples).unwrap(), 0.5);
    }

    #[test]
    fn hallucinated_extra_call_fails_the_sample() {
        let sample = alarm_sample(8, 0);
        let mut pred = sample.ground_truth.clone();
        pred.push(call("r9", "set_alarm", &[]));
        assert!(!sample_matched(&pred, &sample.ground_truth));
    }

    #[test]
    fn soft_accuracy_scores_partial_parameters() {
        let samples = vec![alarm_sample(8, 0)];
        let predictions = vec![vec![call(
            "r",
            "set_alarm",
            &[("hour", ArgValue::Int(8)), ("minute", ArgValue::Int(30))],
        )]];
        assert_eq!(soft_accuracy(&predictions, &samples).unwrap(), 0.5);
    }

    #[test]
    fn soft_accuracy_averages_across_calls() {
        let samples = vec![alarm_sample(8, 0), alarm_sample(9, 15)];
        let predictions = vec![
            samples[0].ground_truth.clone(),
            vec![call(
                "r",
                "set_alarm",
                &[("hour", ArgValue::Int(9)), ("minute", ArgValue::Int(0))],
            )],
        ];
        assert_eq!(soft_accuracy(&predictions, &samples).unwrap(), 0.75);
    }

    #[test]
    fn wrong_function_name_scores_zero() {
        let samples = vec![alarm_sample(8, 0)];
        let predictions = vec![vec![call(
            "r",
            "set_timer",
            &[("hour", ArgValue::Int(8)), ("minute", ArgValue::Int(0))],
        )]];
        assert_eq!(soft_accuracy(&predictions, &samples).unwrap(), 0.0);
    }

    #[test]
    fn greedy_assignment_prefers_exact_matches() {
        // Both predictions score 1.0 for the zero-parameter call; the exact
        // one must be taken so the two-parameter call keeps its partner.
        let gt = vec![
            call("r1", "f", &[]),
            call("r2", "f", &[("a", ArgValue::Int(1))]),
        ];
        let pred = vec![
            call("p1", "f", &[("a", ArgValue::Int(1))]),
            call("p2", "f", &[]),
        ];
        assert_eq!(sample_call_scores(&pred, &gt), vec![1.0, 1.0]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let samples = vec![alarm_sample(8, 0)];
        assert!(matches!(
            accuracy(&[], &samples),
            Err(FuncallError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn evaluate_combines_parsing_and_metrics() {
        let samples = vec![alarm_sample(8, 0), alarm_sample(8, 0)];
        let outputs = vec![
            "result1 = set_alarm(hour=8, minute=0)".to_string(),
            "result1 = set_alarm(hour=8, minute=30)".to_string(),
        ];
        let report = evaluate(&outputs, &samples).unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert_eq!(report.soft_accuracy, 0.75);
        assert_eq!(report.total_skipped_lines, 0);
        assert!(report.samples[0].matched);
        assert!(!report.samples[1].matched);
    }

    #[test]
    fn evaluate_all_garbage_is_zero_zero() {
        let samples = vec![alarm_sample(8, 0), alarm_sample(9, 0)];
        let outputs = vec!["no calls here".to_string(), "== nor here ==".to_string()];
        let report = evaluate(&outputs, &samples).unwrap();
        assert_eq!(report.accuracy, 0.0);
        assert_eq!(report.soft_accuracy, 0.0);
        assert!(report.total_skipped_lines >= 2);
    }

    #[test]
    fn prompt_is_byte_deterministic() {
        let functions = vec![FunctionDef {
            name: "set_alarm".into(),
            description: "Set an alarm clock".into(),
            params: vec![ParamDef {
                name: "hour".into(),
                type_tag: "int".into(),
                required: true,
                description: "hour of day".into(),
            }],
        }];
        let a = render_prompt(&functions, "Wake me up at 8:00").unwrap();
        let b = render_prompt(&functions, "Wake me up at 8:00").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0, SYSTEM_PROMPT);
        assert!(a
            .1
            .starts_with("Here is a list of functions that you can invoke:\n"));
        assert!(a.1.ends_with("\nNow my query is: Wake me up at 8:00"));
    }

    #[test]
    fn prompt_with_empty_query_is_well_formed() {
        let functions = vec![FunctionDef {
            name: "f".into(),
            description: String::new(),
            params: vec![],
        }];
        let (_, user) = render_prompt(&functions, "").unwrap();
        assert!(user.ends_with("Now my query is: "));
        assert!(render_prompt(&[], "query").is_err());
    }

    #[test]
    fn sample_loader_round_trips_values_and_refs() {
        let text = r#"{"query":"chain","functions":[{"name":"f"},{"name":"g"}],"ground_truth":[{"function":"f","args":{"x":1}},{"function":"g","args":{"y":{"ref":"result1"},"z":[1,2.5,"s"]}}]}"#;
        let samples = load_samples(text).unwrap();
        assert_eq!(samples.len(), 1);
        let gt = &samples[0].ground_truth;
        assert_eq!(gt[0].result_name, "result1");
        assert_eq!(gt[1].args[0].1, ArgValue::Ref("result1".into()));
        assert_eq!(
            gt[1].args[1].1,
            ArgValue::List(vec![
                ArgValue::Int(1),
                ArgValue::Real(2.5),
                ArgValue::Str("s".into())
            ])
        );
    }

    #[test]
    fn sample_loader_rejects_undeclared_function() {
        let text = r#"{"query":"q","functions":[{"name":"f"}],"ground_truth":[{"function":"g","args":{}}]}"#;
        assert!(matches!(
            load_samples(text),
            Err(FuncallError::BadSample { .. })
        ));
    }

    #[test]
    fn output_loader_handles_both_formats() {
        let jsonl = "\"r = f(a=1)\"\n{\"output\": \"r = g(b=2)\"}\n";
        let outs = load_outputs(jsonl, true).unwrap();
        assert_eq!(
            outs,
            vec!["r = f(a=1)".to_string(), "r = g(b=2)".to_string()]
        );

        let plain = "r1 = f(a=1)\nr2 = g(b=r1)\n\nr1 = h()\n";
        let outs = load_outputs(plain, false).unwrap();
        assert_eq!(outs.len(), 2);
        assert!(outs[0].contains('\n'));
    }
}
