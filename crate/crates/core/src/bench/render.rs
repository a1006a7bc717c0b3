//! Search report rendering: CSV, JSON (schema-backed), and markdown.

use serde::{Deserialize, Serialize};

use crate::archspace::Activation;

use super::{BenchError, RankedRow, RankedSearchResult};

/// JSON schema the `json` rendering validates against; shipped in-repo at
/// `crates/core/schemas/search-report.schema.json`.
pub const SEARCH_REPORT_SCHEMA: &str = include_str!("../../schemas/search-report.schema.json");

pub const CSV_HEADER: &str =
    "hidden,intermediate,layers,q_heads,kv_heads,activation,params,prefill_tps,decode_tps";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!(
                "unknown format `{other}` (expected csv, json, or md)"
            )),
        }
    }
}

/// One parsed CSV row; mirrors the stable column order exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvReportRow {
    pub hidden: usize,
    pub intermediate: usize,
    pub layers: usize,
    pub q_heads: usize,
    pub kv_heads: usize,
    pub activation: Activation,
    pub params: u64,
    pub prefill_tps: f64,
    pub decode_tps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonReport {
    schema_version: u32,
    metric: String,
    prompt_len: usize,
    environment: super::EnvDescriptor,
    rows: Vec<JsonReportRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonReportRow {
    hidden: usize,
    intermediate: usize,
    layers: usize,
    q_heads: usize,
    kv_heads: usize,
    activation: Activation,
    params: u64,
    prefill_tps: f64,
    decode_tps: f64,
    score: f64,
}

fn json_row(row: &RankedRow) -> JsonReportRow {
    JsonReportRow {
        hidden: row.config.hidden_size,
        intermediate: row.config.intermediate_size,
        layers: row.config.num_layers,
        q_heads: row.config.q_heads,
        kv_heads: row.config.kv_heads,
        activation: row.config.activation,
        params: row.params,
        prefill_tps: row.prefill_tps,
        decode_tps: row.decode_tps,
        score: row.score,
    }
}

/// Renders a ranked result with the stable column order
/// `hidden,intermediate,layers,q_heads,kv_heads,activation,params,prefill_tps,decode_tps`.
pub fn render_report(
    result: &RankedSearchResult,
    format: ReportFormat,
) -> Result<String, BenchError> {
    if result.rows.is_empty() {
        return Err(BenchError::EmptyReports);
    }
    Ok(match format {
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for row in &result.rows {
                let c = &row.config;
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    c.hidden_size,
                    c.intermediate_size,
                    c.num_layers,
                    c.q_heads,
                    c.kv_heads,
                    c.activation,
                    row.params,
                    row.prefill_tps,
                    row.decode_tps
                ));
            }
            out
        }
        ReportFormat::Json => {
            let doc = JsonReport {
                schema_version: 1,
                metric: result.metric.clone(),
                prompt_len: result.prompt_len,
                environment: result.environment.clone(),
                rows: result.rows.iter().map(json_row).collect(),
            };
            let mut out = serde_json::to_string_pretty(&doc).expect("report serializes");
            out.push('\n');
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| hidden | intermediate | layers | q_heads | kv_heads | activation | params | prefill_tps | decode_tps |\n\
                 |---|---|---|---|---|---|---|---|---|\n",
            );
            for row in &result.rows {
                let c = &row.config;
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {:.2} | {:.2} |\n",
                    c.hidden_size,
                    c.intermediate_size,
                    c.num_layers,
                    c.q_heads,
                    c.kv_heads,
                    c.activation,
                    row.params,
                    row.prefill_tps,
                    row.decode_tps
                ));
            }
            out
        }
    })
}

/// Parses the CSV rendering back into rows.
pub fn parse_report_csv(text: &str) -> Result<Vec<CsvReportRow>, BenchError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => {
            return Err(BenchError::InvalidPlan(format!(
                "bad csv header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(BenchError::InvalidPlan(format!(
                "csv row {}: expected 9 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_err =
            |what: &str| BenchError::InvalidPlan(format!("csv row {}: bad {what}", i + 2));
        rows.push(CsvReportRow {
            hidden: fields[0].parse().map_err(|_| parse_err("hidden"))?,
            intermediate: fields[1].parse().map_err(|_| parse_err("intermediate"))?,
            layers: fields[2].parse().map_err(|_| parse_err("layers"))?,
            q_heads: fields[3].parse().map_err(|_| parse_err("q_heads"))?,
            kv_heads: fields[4].parse().map_err(|_| parse_err("kv_heads"))?,
            activation: fields[5].parse().map_err(|_| parse_err("activation"))?,
            params: fields[6].parse().map_err(|_| parse_err("params"))?,
            prefill_tps: fields[7].parse().map_err(|_| parse_err("prefill_tps"))?,
            decode_tps: fields[8].parse().map_err(|_| parse_err("decode_tps"))?,
        });
    }
    Ok(rows)
}
