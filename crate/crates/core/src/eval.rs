//! Method A (direct prompt) vs. Method B (scatter pipeline) rounds.
//!
//! Both methods are scored by the same two counts: how many optimization
//! items a round produced and how many distinct segments those items touch.
//! Items are read from a fenced JSON block of
//! `{"description": ..., "stages": [...]}` records that every direct and
//! apply template asks the backend for.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::model::{InnovationInput, ProcessSpec, ScopeKind, SegmentId};
use crate::prompts::{Bindings, PromptError, PromptRegistry, Role};
use crate::scatter::{
    mentioned_segments, ScatterConfig, ScatterError, ScatterPipeline, Transcript,
};
use crate::text::tokenize;

/// Repair reissues allowed after the first unparseable reply.
pub const MAX_REPAIRS: usize = 2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Scatter(#[from] ScatterError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("malformed output after {attempts} attempt(s): {reason}")]
    MalformedOutput { attempts: usize, reason: String },
    #[error("rounds must be >= 1")]
    NoRounds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationItem {
    pub description: String,
    pub stages: Vec<SegmentId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricPair {
    pub items_count: usize,
    pub stages_covered: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    A,
    B,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::A => "A",
            Method::B => "B",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub method: Method,
    pub variant: usize,
    pub items: Vec<OptimizationItem>,
    pub metrics: MetricPair,
    pub transcript_keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPair {
    pub a: RoundRecord,
    pub b: RoundRecord,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub items: f64,
    pub stages: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub a: MeanMetrics,
    pub b: MeanMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<RoundPair>,
    pub averages: Averages,
}

impl ExperimentTable {
    pub fn from_rows(rows: Vec<RoundPair>) -> Self {
        let averages = Averages {
            a: mean_metrics(rows.iter().map(|r| &r.a.metrics)),
            b: mean_metrics(rows.iter().map(|r| &r.b.metrics)),
        };
        ExperimentTable { rows, averages }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> serde_json::Result<Self> {
        serde_json::from_str(json)
    }

    /// One compact JSON record per line, A before B within a round.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            for rec in [&row.a, &row.b] {
                out.push_str(&serde_json::to_string(rec).expect("record serializes"));
                out.push('\n');
            }
        }
        out
    }

    /// Per-round (A items, A stages, B items, B stages).
    pub fn metric_rows(&self) -> Vec<[usize; 4]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.a.metrics.items_count,
                    r.a.metrics.stages_covered,
                    r.b.metrics.items_count,
                    r.b.metrics.stages_covered,
                ]
            })
            .collect()
    }
}

fn mean_metrics<'a>(metrics: impl Iterator<Item = &'a MetricPair>) -> MeanMetrics {
    let (mut n, mut items, mut stages) = (0usize, 0usize, 0usize);
    for m in metrics {
        n += 1;
        items += m.items_count;
        stages += m.stages_covered;
    }
    if n == 0 {
        return MeanMetrics::default();
    }
    MeanMetrics {
        items: items as f64 / n as f64,
        stages: stages as f64 / n as f64,
    }
}

/// items_count = |items|; stages_covered = |⋃ stages ∩ spec ids|.
pub fn count_metrics(items: &[OptimizationItem], spec: &ProcessSpec) -> MetricPair {
    let covered: BTreeSet<&SegmentId> = items
        .iter()
        .flat_map(|i| i.stages.iter())
        .filter(|s| spec.contains(s))
        .collect();
    MetricPair {
        items_count: items.len(),
        stages_covered: covered.len(),
    }
}

// --- structured item parsing -------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedItems {
    pub items: Vec<OptimizationItem>,
    /// Stage labels that matched no segment.
    pub dropped_stages: Vec<String>,
}

/// Maps a stage label onto a segment id: exact id or display name, then a
/// marker equal to the whole label, then the first segment owning a marker
/// among the label's words.
pub fn normalize_stage(label: &str, spec: &ProcessSpec) -> Option<SegmentId> {
    if let Some(seg) = spec.find_by_label(label) {
        return Some(seg.id.clone());
    }
    let lowered = label.trim().to_lowercase();
    if let Some(seg) = spec.segments.iter().find(|s| s.markers.contains(&lowered)) {
        return Some(seg.id.clone());
    }
    if let Some(n) = ordinal(&lowered) {
        return n
            .checked_sub(1)
            .and_then(|i| spec.segments.get(i))
            .map(|s| s.id.clone());
    }
    let words = tokenize(label);
    spec.segments
        .iter()
        .find(|s| words.contains(s.id.as_str()) || s.markers.iter().any(|m| words.contains(m)))
        .map(|s| s.id.clone())
}

/// `3`, `#3`, `stage 3`, `step 3.` or `part 3` as a 1-based position.
fn ordinal(lowered: &str) -> Option<usize> {
    let rest = ["stage", "step", "part"]
        .iter()
        .find_map(|w| lowered.strip_prefix(w))
        .unwrap_or(lowered);
    let digits = rest
        .trim()
        .trim_start_matches('#')
        .trim_end_matches(['.', ')', ':']);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Byte range of the body of the first fenced block that looks like JSON.
fn fenced_block(text: &str) -> Option<(usize, usize, usize)> {
    let mut search = 0;
    let mut fallback = None;
    while let Some(open_rel) = text[search..].find("```") {
        let open = search + open_rel;
        let info_end = text[open + 3..].find('\n').map(|i| open + 3 + i)?;
        let info = text[open + 3..info_end].trim().to_ascii_lowercase();
        let body_start = info_end + 1;
        let close = match text[body_start..].find("```") {
            Some(rel) => body_start + rel,
            None => text.len(),
        };
        let body = text[body_start..close].trim_start();
        if info == "json" {
            return Some((open, body_start, close));
        }
        if fallback.is_none() && (body.starts_with('[') || body.starts_with('{')) {
            fallback = Some((open, body_start, close));
        }
        if close >= text.len() {
            break;
        }
        search = close + 3;
    }
    fallback
}

/// Text before the first fenced block, trimmed.
pub fn prose_before_block(text: &str) -> &str {
    match fenced_block(text) {
        Some((open, _, _)) => text[..open].trim(),
        None => text.trim(),
    }
}

fn bracketed(text: &str) -> Option<&str> {
    let start = text.find(['[', '{'])?;
    let closer = if text[start..].starts_with('[') {
        ']'
    } else {
        '}'
    };
    let end = text.rfind(closer)?;
    (end > start).then(|| &text[start..=end])
}

fn strip_trailing_commas(json: &str) -> String {
    let chars: Vec<char> = json.chars().collect();
    let mut out = String::with_capacity(json.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some(']') | Some('}')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn parse_json_lenient(candidate: &str) -> Result<Value, String> {
    match serde_json::from_str(candidate) {
        Ok(v) => Ok(v),
        Err(first) => {
            serde_json::from_str(&strip_trailing_commas(candidate)).map_err(|_| first.to_string())
        }
    }
}

fn record_list(value: Value) -> Result<Vec<Value>, String> {
    match value {
        Value::Array(list) => Ok(list),
        Value::Object(mut map) => match map.remove("items") {
            Some(Value::Array(list)) => Ok(list),
            _ => Err("expected an array of item records".into()),
        },
        _ => Err("expected an array of item records".into()),
    }
}

/// Parses the structured item block of a completion without any reissue.
pub fn parse_items(raw: &str, spec: &ProcessSpec) -> Result<ParsedItems, String> {
    let candidate = match fenced_block(raw) {
        Some((_, start, end)) => raw[start..end].trim(),
        None => bracketed(raw).ok_or("no structured item block found")?,
    };
    let records = record_list(parse_json_lenient(candidate)?)?;

    let mut items = Vec::with_capacity(records.len());
    let mut dropped_stages = Vec::new();
    for (i, record) in records.into_iter().enumerate() {
        let Value::Object(map) = record else {
            return Err(format!("item {i} is not an object"));
        };
        let description = map
            .get("description")
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|d| !d.is_empty())
            .ok_or_else(|| format!("item {i} has no description"))?
            .to_string();
        let labels: Vec<String> = match map.get("stages") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::String(s)) => vec![s.clone()],
            Some(Value::Array(list)) => list
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| format!("item {i} has a non-text stage"))
                })
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(format!("item {i} has malformed stages")),
        };
        let mut stages = Vec::new();
        for label in labels {
            match normalize_stage(&label, spec) {
                Some(id) if !stages.contains(&id) => stages.push(id),
                Some(_) => {}
                None => {
                    warn!(stage = %label, "dropping unknown stage name");
                    dropped_stages.push(label);
                }
            }
        }
        items.push(OptimizationItem {
            description,
            stages,
        });
    }
    Ok(ParsedItems {
        items,
        dropped_stages,
    })
}

// --- rounds ------------------------------------------------------------------

/// The round never finished; `partial` holds every completed round.
#[derive(Debug, Error)]
#[error("experiment aborted in round {round} (method {method}): {source}")]
pub struct ExperimentAborted {
    pub round: usize,
    pub method: Method,
    pub partial: ExperimentTable,
    #[source]
    pub source: EvalError,
}

pub struct Harness<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptRegistry,
    config: ScatterConfig,
}

impl<'a> Harness<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptRegistry, config: ScatterConfig) -> Self {
        Harness {
            gateway,
            prompts,
            config,
        }
    }

    /// Parses `raw`, reissuing a repair prompt up to [`MAX_REPAIRS`] times.
    pub fn parse_with_repair(
        &self,
        raw: String,
        spec: &ProcessSpec,
        transcript: &mut Transcript,
    ) -> Result<Vec<OptimizationItem>, EvalError> {
        let mut current = raw;
        let mut attempt = 0;
        loop {
            match parse_items(&current, spec) {
                Ok(parsed) => return Ok(parsed.items),
                Err(reason) if attempt >= MAX_REPAIRS => {
                    return Err(EvalError::MalformedOutput {
                        attempts: attempt + 1,
                        reason,
                    })
                }
                Err(reason) => {
                    warn!(attempt, %reason, "unparseable item block; requesting repair");
                    let count = self.prompts.variant_count(Role::Repair).max(1);
                    let bindings =
                        Bindings::for_process(spec).set("previous_output", current.clone());
                    let prompt = self
                        .prompts
                        .render(Role::Repair, attempt % count, &bindings)?;
                    let request =
                        CompletionRequest::new(Role::Repair, prompt, &self.config.decoding);
                    transcript.push(request.digest());
                    current = self.gateway.complete(&request)?.text;
                    attempt += 1;
                }
            }
        }
    }

    /// Method A: one direct completion, no decomposition guidance.
    pub fn run_round_a(
        &self,
        round: usize,
        input: &InnovationInput,
        spec: &ProcessSpec,
    ) -> Result<RoundRecord, EvalError> {
        let variant = self.prompts.variant_for_round(Role::Direct, round);
        let bindings = Bindings::for_process(spec)
            .set("innovation", input.text.clone())
            .set("context", input.context.clone());
        let prompt = self.prompts.render(Role::Direct, variant, &bindings)?;
        let request = CompletionRequest::new(Role::Direct, prompt, &self.config.decoding);
        let mut transcript = Transcript::default();
        transcript.push(request.digest());
        let raw = self.gateway.complete(&request)?.text;
        let items = self.parse_with_repair(raw, spec, &mut transcript)?;
        Ok(RoundRecord {
            round,
            method: Method::A,
            variant,
            metrics: count_metrics(&items, spec),
            items,
            transcript_keys: transcript.into_keys(),
        })
    }

    /// Method B: the full scatter pipeline, one item per adapted segment
    /// plus the origin-stage innovation and any extra items the adaptations
    /// list in their own item blocks.
    pub fn run_round_b(
        &self,
        round: usize,
        input: &InnovationInput,
        spec: &ProcessSpec,
    ) -> Result<RoundRecord, EvalError> {
        let variant = round.saturating_sub(1);
        let config = ScatterConfig {
            variant,
            ..self.config.clone()
        };
        let result =
            ScatterPipeline::new(self.gateway, self.prompts, config).run_scatter(input, spec)?;

        let mut items = Vec::new();
        match &result.verdict.kind {
            ScopeKind::Global => items.push(OptimizationItem {
                description: result.generalized.text.clone(),
                stages: mentioned_segments(&result.generalized.text, spec)
                    .into_iter()
                    .map(|s| s.id.clone())
                    .collect(),
            }),
            ScopeKind::Local(_) => {
                items.push(OptimizationItem {
                    description: result.local.summary.clone(),
                    stages: vec![result.local.origin.clone()],
                });
                for app in result.applications.iter().filter(|a| a.applicable) {
                    let prose = prose_before_block(&app.adapted_text);
                    let description = if prose.is_empty() {
                        format!("adapted innovation for {}", app.segment)
                    } else {
                        prose.to_string()
                    };
                    items.push(OptimizationItem {
                        description,
                        stages: vec![app.segment.clone()],
                    });
                    if fenced_block(&app.adapted_text).is_some() {
                        match parse_items(&app.adapted_text, spec) {
                            Ok(extra) => items.extend(extra.items),
                            Err(reason) => {
                                warn!(segment = %app.segment, %reason, "ignoring unparseable extra items")
                            }
                        }
                    }
                }
            }
        }

        Ok(RoundRecord {
            round,
            method: Method::B,
            variant: variant % self.prompts.variant_count(Role::Apply).max(1),
            metrics: count_metrics(&items, spec),
            items,
            transcript_keys: result.transcript_keys,
        })
    }

    /// Runs A then B for rounds `1..=n_rounds`, calling `on_record` after
    /// each finished round record.
    pub fn run_experiment(
        &self,
        n_rounds: usize,
        input: &InnovationInput,
        spec: &ProcessSpec,
        mut on_record: impl FnMut(&RoundRecord),
    ) -> Result<ExperimentTable, ExperimentAborted> {
        let mut rows = Vec::with_capacity(n_rounds);
        let abort = |round, method, rows: &Vec<RoundPair>, source| ExperimentAborted {
            round,
            method,
            partial: ExperimentTable::from_rows(rows.clone()),
            source,
        };
        if n_rounds == 0 {
            return Err(abort(0, Method::A, &rows, EvalError::NoRounds));
        }
        for round in 1..=n_rounds {
            let a = self
                .run_round_a(round, input, spec)
                .map_err(|e| abort(round, Method::A, &rows, e))?;
            on_record(&a);
            let b = self
                .run_round_b(round, input, spec)
                .map_err(|e| abort(round, Method::B, &rows, e))?;
            on_record(&b);
            rows.push(RoundPair { a, b });
        }
        Ok(ExperimentTable::from_rows(rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_lifecycle_fixture;

    fn item(stages: &[&str]) -> OptimizationItem {
        OptimizationItem {
            description: "d".into(),
            stages: stages.iter().map(|s| SegmentId::new(*s)).collect(),
        }
    }

    #[test]
    fn metrics_examples() {
        let spec = builtin_lifecycle_fixture();
        let items = vec![
            item(&["deployment"]),
            item(&["deployment", "invocation"]),
            item(&["validation"]),
        ];
        assert_eq!(
            count_metrics(&items, &spec),
            MetricPair {
                items_count: 3,
                stages_covered: 3
            }
        );
        assert_eq!(count_metrics(&[], &spec), MetricPair::default());
        let all: Vec<&str> = spec.ids().map(|s| s.as_str()).collect();
        let seven = vec![item(&all); 7];
        assert_eq!(
            count_metrics(&seven, &spec),
            MetricPair {
                items_count: 7,
                stages_covered: 5
            }
        );
    }

    #[test]
    fn parses_fenced_block_and_normalizes() {
        let spec = builtin_lifecycle_fixture();
        let raw = "Here you go:\n```json\n[\n {\"description\": \"a\", \"stages\": [\"Deployment\"]},\n {\"description\": \"b\", \"stages\": [\"deployment\", \"execution\"]},\n {\"description\": \"c\", \"stages\": [\"validation\", \"setup\"]}\n]\n```\n";
        let parsed = parse_items(raw, &spec).unwrap();
        assert_eq!(parsed.items.len(), 3);
        assert_eq!(
            parsed.items[1].stages,
            vec![SegmentId::new("deployment"), SegmentId::new("invocation")]
        );
        assert_eq!(parsed.items[2].stages, vec![SegmentId::new("validation")]);
        assert_eq!(parsed.dropped_stages, vec!["setup".to_string()]);
    }

    #[test]
    fn lenient_forms() {
        let spec = builtin_lifecycle_fixture();
        let wrapped = r#"{"items": [{"description": "x", "stages": "termination"}]}"#;
        assert_eq!(
            parse_items(wrapped, &spec).unwrap().items[0].stages,
            vec![SegmentId::new("termination")]
        );
        let trailing = "```\n[{\"description\": \"x\", \"stages\": [\"invocation\",],},]\n```";
        assert_eq!(parse_items(trailing, &spec).unwrap().items.len(), 1);
        assert!(parse_items("no structure at all", &spec).is_err());
        assert!(parse_items("```json\n[{\"stages\": []}]\n```", &spec).is_err());
    }

    #[test]
    fn prose_split() {
        assert_eq!(
            prose_before_block("Intro text.\n```json\n[]\n```"),
            "Intro text."
        );
        assert_eq!(prose_before_block("  only prose "), "only prose");
    }

    #[test]
    fn averages_are_means() {
        let rec = |items, stages| RoundRecord {
            round: 1,
            method: Method::A,
            variant: 0,
            items: vec![],
            metrics: MetricPair {
                items_count: items,
                stages_covered: stages,
            },
            transcript_keys: vec![],
        };
        let table = ExperimentTable::from_rows(vec![
            RoundPair {
                a: rec(5, 1),
                b: rec(7, 5),
            },
            RoundPair {
                a: rec(4, 2),
                b: rec(6, 4),
            },
        ]);
        assert_eq!(
            table.averages.a,
            MeanMetrics {
                items: 4.5,
                stages: 1.5
            }
        );
        assert_eq!(
            table.averages.b,
            MeanMetrics {
                items: 6.5,
                stages: 4.5
            }
        );
        assert_eq!(table.to_jsonl().lines().count(), 4);
        assert_eq!(ExperimentTable::from_json(&table.to_json()).unwrap(), table);
    }

    #[test]
    fn stage_labels_normalize() {
        let spec = builtin_lifecycle_fixture();
        let id = |l: &str| normalize_stage(l, &spec).map(|s| s.as_str().to_string());
        assert_eq!(id("Deployment").as_deref(), Some("deployment"));
        assert_eq!(id(" invoke ").as_deref(), Some("invocation"));
        assert_eq!(id("Stage 3").as_deref(), Some("invocation"));
        assert_eq!(id("#5").as_deref(), Some("validation"));
        assert_eq!(id("2.").as_deref(), Some("instantiation"));
        assert_eq!(id("the termination phase").as_deref(), Some("termination"));
        assert_eq!(id("stage 0"), None);
        assert_eq!(id("stage 9"), None);
        assert_eq!(id("compilation"), None);
    }
}
