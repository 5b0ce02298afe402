//! The four-step scatter expansion.
//!
//! 1. extract the local change and the segment it originates from,
//! 2. generalize it until its coupling to the origin drops,
//! 3. decide whether it is still local to one segment,
//! 4. adapt it to every other segment (temporal) or to every sufficiently
//!    similar part (spatial).
//!
//! Coupling and similarity are lexical scores over the declared marker
//! vocabularies; see [`coupling_strength`] and [`segment_similarity`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::gateway::{CompletionRequest, Decoding, Gateway, GatewayError};
use crate::model::{
    GeneralizedInnovation, InnovationInput, LocalInnovation, Mode, ProcessSpec, ScatterResult,
    ScopeKind, ScopeVerdict, Segment, SegmentApplication, SegmentId, SpecError,
};
use crate::prompts::{Bindings, PromptError, PromptRegistry, Role};
use crate::text::{jaccard, tokenize};

/// Reply prefix by which an apply completion declines a segment.
pub const NOT_APPLICABLE: &str = "NOT-APPLICABLE";

#[derive(Debug, Error)]
pub enum ScatterError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("segment `{0}` has no markers")]
    EmptyMarkers(String),
    #[error("cannot resolve the origin segment of the local innovation")]
    OriginUnresolvable,
    #[error("backend returned an empty {role} completion")]
    EmptyCompletion { role: Role },
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterConfig {
    /// Prompt variant used for every role (reduced modulo each role's count).
    pub variant: usize,
    /// Upper bound on generalization attempts.
    pub max_attempts: u32,
    /// Similarity threshold for spatial expansion.
    pub tau: f64,
    pub decoding: Decoding,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        ScatterConfig {
            variant: 0,
            max_attempts: 3,
            tau: 0.5,
            decoding: Decoding::default(),
        }
    }
}

impl ScatterConfig {
    pub fn validate(&self) -> Result<(), ScatterError> {
        if self.max_attempts == 0 {
            return Err(ScatterError::InvalidConfig(
                "max attempts must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(ScatterError::InvalidConfig(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// |M ∩ W| / |M| for the segment's markers M and the word tokens W of `text`.
pub fn coupling_strength(text: &str, segment: &Segment) -> Result<f64, ScatterError> {
    if segment.markers.is_empty() {
        return Err(ScatterError::EmptyMarkers(segment.id.to_string()));
    }
    let words = tokenize(text);
    let hits = segment
        .markers
        .iter()
        .filter(|m| words.contains(*m))
        .count();
    Ok(hits as f64 / segment.markers.len() as f64)
}

/// Markers plus description tokens.
pub fn feature_set(segment: &Segment) -> BTreeSet<String> {
    let mut features = tokenize(&segment.description);
    features.extend(segment.markers.iter().cloned());
    features
}

/// Jaccard index of the two segments' feature sets.
pub fn segment_similarity(a: &Segment, b: &Segment) -> f64 {
    jaccard(&feature_set(a), &feature_set(b))
}

/// Segments of `spec` whose id, name words or markers occur in `text`, in
/// process order.
pub fn mentioned_segments<'a>(text: &str, spec: &'a ProcessSpec) -> Vec<&'a Segment> {
    let words = tokenize(text);
    spec.segments
        .iter()
        .filter(|s| {
            words.contains(s.id.as_str()) || s.markers.iter().any(|m| words.contains(m)) || {
                let name = tokenize(&s.name);
                !name.is_empty() && name.is_subset(&words)
            }
        })
        .collect()
}

fn strip_decoration(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['-', '*', '#', '>', '`', ' '])
        .trim_end_matches(['*', '`', ' '])
}

fn label_value<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let line = strip_decoration(line);
    let (head, tail) = line.split_once(':')?;
    let head = head.trim().trim_matches('*').trim();
    head.eq_ignore_ascii_case(label)
        .then(|| tail.trim().trim_matches('*').trim())
}

/// Splits a diff reply into its summary and the origin label, if any.
pub fn parse_diff_reply(reply: &str) -> (String, Option<String>) {
    let mut summary = None;
    let mut origin = None;
    let mut rest = Vec::new();
    for line in reply.lines() {
        if let Some(v) = label_value(line, "summary") {
            summary.get_or_insert_with(|| v.to_string());
        } else if let Some(v) = label_value(line, "origin") {
            origin.get_or_insert_with(|| v.to_string());
        } else if !line.trim().is_empty() {
            rest.push(line.trim());
        }
    }
    let summary = summary
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| rest.join(" "));
    (summary, origin.filter(|o| !o.is_empty()))
}

/// Resolves a free-text segment label: whole label first, then word by word.
pub fn resolve_segment<'a>(label: &str, spec: &'a ProcessSpec) -> Option<&'a Segment> {
    let cleaned = label.trim().trim_matches(|c: char| !c.is_alphanumeric());
    spec.find_by_label(cleaned).or_else(|| {
        cleaned
            .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_'))
            .filter(|w| !w.is_empty())
            .find_map(|w| spec.find_by_label(w))
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedScope {
    Global,
    Local(Option<SegmentId>),
}

/// Reads the verdict token at the start of the first non-empty line,
/// ignoring case and an optional `Verdict:` label.
pub fn parse_scope_reply(reply: &str, spec: &ProcessSpec) -> Option<ParsedScope> {
    let line = reply
        .lines()
        .map(strip_decoration)
        .find(|l| !l.is_empty())?;
    let line = label_value(line, "verdict")
        .map(strip_decoration)
        .unwrap_or(line);
    let first_word_end = line
        .find(|c: char| !c.is_alphabetic())
        .unwrap_or(line.len());
    let (word, rest) = line.split_at(first_word_end);
    match word.to_ascii_lowercase().as_str() {
        "global" => Some(ParsedScope::Global),
        "local" => Some(ParsedScope::Local(
            resolve_segment(rest, spec).map(|s| s.id.clone()),
        )),
        _ => None,
    }
}

pub fn is_not_applicable(reply: &str) -> bool {
    let head = strip_decoration(reply).to_ascii_uppercase();
    head.starts_with(NOT_APPLICABLE)
        || head.starts_with("NOT APPLICABLE")
        || head.starts_with("NOT_APPLICABLE")
}

/// Digests of every request issued during one pipeline run, in issue order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript(pub Vec<String>);

impl Transcript {
    pub fn push(&mut self, digest: String) {
        self.0.push(digest);
    }

    pub fn extend(&mut self, other: Transcript) {
        self.0.extend(other.0);
    }

    pub fn into_keys(self) -> Vec<String> {
        self.0
    }
}

pub struct ScatterPipeline<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptRegistry,
    config: ScatterConfig,
}

impl<'a> ScatterPipeline<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptRegistry, config: ScatterConfig) -> Self {
        ScatterPipeline {
            gateway,
            prompts,
            config,
        }
    }

    pub fn config(&self) -> &ScatterConfig {
        &self.config
    }

    fn request(&self, role: Role, bindings: &Bindings) -> Result<CompletionRequest, ScatterError> {
        let count = self.prompts.variant_count(role).max(1);
        let prompt = self
            .prompts
            .render(role, self.config.variant % count, bindings)?;
        Ok(CompletionRequest::new(role, prompt, &self.config.decoding))
    }

    fn ask(
        &self,
        role: Role,
        bindings: &Bindings,
        transcript: &mut Transcript,
    ) -> Result<String, ScatterError> {
        let request = self.request(role, bindings)?;
        transcript.push(request.digest());
        Ok(self.gateway.complete(&request)?.text)
    }

    pub fn extract_local_innovation(
        &self,
        input: &InnovationInput,
        spec: &ProcessSpec,
        transcript: &mut Transcript,
    ) -> Result<LocalInnovation, ScatterError> {
        let bindings = Bindings::for_process(spec)
            .set("innovation", input.text.clone())
            .set("context", input.context.clone());
        let reply = self.ask(Role::Diff, &bindings, transcript)?;
        let (summary, named) = parse_diff_reply(&reply);
        if summary.trim().is_empty() {
            return Err(ScatterError::EmptyCompletion { role: Role::Diff });
        }

        let origin = if let Some(declared) = &input.declared_origin {
            spec.segment(declared)
                .ok_or_else(|| SpecError::UnknownOrigin(declared.to_string()))?
        } else if let Some(seg) = named.as_deref().and_then(|n| resolve_segment(n, spec)) {
            seg
        } else {
            let mut best: Option<(&Segment, f64)> = None;
            for seg in &spec.segments {
                let score = coupling_strength(&summary, seg)?;
                if score > best.map_or(0.0, |(_, b)| b) {
                    best = Some((seg, score));
                }
            }
            best.ok_or(ScatterError::OriginUnresolvable)?.0
        };

        let coupling_before = coupling_strength(&summary, origin)?;
        debug!(origin = %origin.id, coupling_before, "local innovation extracted");
        Ok(LocalInnovation {
            summary,
            origin: origin.id.clone(),
            coupling_before,
        })
    }

    /// Issues up to `max_attempts` generalization requests and keeps the
    /// candidate with the lowest coupling to the origin; the earliest wins
    /// ties. Stops as soon as a candidate strictly reduces coupling.
    pub fn generalize(
        &self,
        local: &LocalInnovation,
        spec: &ProcessSpec,
        max_attempts: u32,
        transcript: &mut Transcript,
    ) -> Result<GeneralizedInnovation, ScatterError> {
        if max_attempts == 0 {
            return Err(ScatterError::InvalidConfig(
                "max attempts must be >= 1".into(),
            ));
        }
        let origin = spec
            .segment(&local.origin)
            .ok_or(ScatterError::OriginUnresolvable)?;
        let bindings = Bindings::for_segment(spec, origin).set("innovation", local.summary.clone());

        let mut best: Option<(String, f64)> = None;
        let mut attempts = 0;
        while attempts < max_attempts {
            attempts += 1;
            let candidate = self
                .ask(Role::Gen, &bindings, transcript)?
                .trim()
                .to_string();
            if candidate.is_empty() {
                continue;
            }
            let coupling = coupling_strength(&candidate, origin)?;
            if best.as_ref().is_none_or(|(_, b)| coupling < *b) {
                best = Some((candidate, coupling));
            }
            if coupling < local.coupling_before {
                break;
            }
        }
        let (text, coupling_after) =
            best.ok_or(ScatterError::EmptyCompletion { role: Role::Gen })?;
        let reduced = coupling_after < local.coupling_before;
        if !reduced {
            warn!(
                attempts,
                coupling_after,
                coupling_before = local.coupling_before,
                "generalization did not reduce coupling; continuing with best candidate"
            );
        }
        Ok(GeneralizedInnovation {
            text,
            coupling_after,
            attempts,
            reduced,
        })
    }

    pub fn determine_scope(
        &self,
        gen: &GeneralizedInnovation,
        local: &LocalInnovation,
        spec: &ProcessSpec,
        transcript: &mut Transcript,
    ) -> Result<ScopeVerdict, ScatterError> {
        let origin = spec
            .segment(&local.origin)
            .ok_or(ScatterError::OriginUnresolvable)?;
        let bindings = Bindings::for_segment(spec, origin).set("innovation", gen.text.clone());
        let reply = self.ask(Role::Scope, &bindings, transcript)?;

        let verdict = match parse_scope_reply(&reply, spec) {
            Some(ParsedScope::Global) => ScopeVerdict {
                kind: ScopeKind::Global,
                rationale: format!("backend verdict: {}", reply.trim()),
            },
            Some(ParsedScope::Local(named)) => ScopeVerdict {
                kind: ScopeKind::Local(named.unwrap_or_else(|| local.origin.clone())),
                rationale: format!("backend verdict: {}", reply.trim()),
            },
            None => {
                let mentioned = mentioned_segments(&gen.text, spec);
                let names: Vec<_> = mentioned.iter().map(|s| s.id.as_str()).collect();
                if mentioned.len() >= 2 {
                    ScopeVerdict {
                        kind: ScopeKind::Global,
                        rationale: format!(
                            "heuristic fallback: generalized text mentions {} segments ({})",
                            mentioned.len(),
                            names.join(", ")
                        ),
                    }
                } else {
                    ScopeVerdict {
                        kind: ScopeKind::Local(local.origin.clone()),
                        rationale: format!(
                            "heuristic fallback: generalized text mentions {} segment(s)",
                            mentioned.len()
                        ),
                    }
                }
            }
        };
        Ok(verdict)
    }

    /// Returns the application and the digest of the request it issued.
    pub fn apply_to_segment(
        &self,
        gen: &GeneralizedInnovation,
        origin: &Segment,
        target: &Segment,
        spec: &ProcessSpec,
    ) -> Result<(SegmentApplication, String), ScatterError> {
        if !spec.contains(&target.id) {
            return Err(SpecError::UnknownOrigin(target.id.to_string()).into());
        }
        let bindings = Bindings::for_segment(spec, target).set("innovation", gen.text.clone());
        let request = self.request(Role::Apply, &bindings)?;
        let digest = request.digest();
        let text = self.gateway.complete(&request)?.text;
        let applicable = !is_not_applicable(&text);
        if applicable && text.trim().is_empty() {
            return Err(ScatterError::EmptyCompletion { role: Role::Apply });
        }
        Ok((
            SegmentApplication {
                segment: target.id.clone(),
                adapted_text: text,
                applicable,
                similarity: segment_similarity(origin, target),
            },
            digest,
        ))
    }

    pub fn run_scatter(
        &self,
        input: &InnovationInput,
        spec: &ProcessSpec,
    ) -> Result<ScatterResult, ScatterError> {
        self.config.validate()?;
        input.validate(spec)?;
        let mut transcript = Transcript::default();

        let local = self.extract_local_innovation(input, spec, &mut transcript)?;
        let generalized =
            self.generalize(&local, spec, self.config.max_attempts, &mut transcript)?;
        let verdict = self.determine_scope(&generalized, &local, spec, &mut transcript)?;

        let anchor = match &verdict.kind {
            ScopeKind::Global => {
                return Ok(ScatterResult {
                    input: input.clone(),
                    local,
                    generalized,
                    verdict,
                    applications: Vec::new(),
                    transcript_keys: transcript.into_keys(),
                })
            }
            ScopeKind::Local(id) => spec.segment(id).ok_or(ScatterError::OriginUnresolvable)?,
        };

        let targets: Vec<&Segment> = spec.segments.iter().filter(|s| s.id != anchor.id).collect();
        let outcomes = self.gateway.par_map(&targets, |target| {
            let similarity = segment_similarity(anchor, target);
            if spec.mode == Mode::Spatial && similarity < self.config.tau {
                return Ok((
                    SegmentApplication {
                        segment: target.id.clone(),
                        adapted_text: format!(
                            "skipped: similarity {similarity:.2} to `{}` is below threshold {:.2}",
                            anchor.id, self.config.tau
                        ),
                        applicable: false,
                        similarity,
                    },
                    None,
                ));
            }
            self.apply_to_segment(&generalized, anchor, target, spec)
                .map(|(app, digest)| (app, Some(digest)))
        });

        let mut applications = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            let (app, digest) = outcome?;
            if let Some(digest) = digest {
                transcript.push(digest);
            }
            applications.push(app);
        }

        Ok(ScatterResult {
            input: input.clone(),
            local,
            generalized,
            verdict,
            applications,
            transcript_keys: transcript.into_keys(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockRule, Rulebook};
    use crate::model::builtin_lifecycle_fixture;

    fn deploy_segment() -> Segment {
        Segment::new(
            "deployment",
            "Deployment",
            "",
            ["deployment", "deploy", "constructor"],
        )
    }

    #[test]
    fn coupling_examples() {
        let seg = deploy_segment();
        let c = coupling_strength("merge deployment and first invocation", &seg).unwrap();
        assert!((c - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(coupling_strength("nothing relevant", &seg).unwrap(), 0.0);
        assert_eq!(
            coupling_strength("deployment deploy constructor", &seg).unwrap(),
            1.0
        );

        let mut empty = seg.clone();
        empty.markers.clear();
        assert!(matches!(
            coupling_strength("x", &empty),
            Err(ScatterError::EmptyMarkers(_))
        ));
    }

    #[test]
    fn similarity_examples() {
        let a = Segment::new("a", "A", "", ["x", "y"]);
        let b = Segment::new("b", "B", "", ["y", "z"]);
        let c = Segment::new("c", "C", "", ["q"]);
        assert!((segment_similarity(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(segment_similarity(&a, &a), 1.0);
        assert_eq!(segment_similarity(&a, &c), 0.0);
    }

    #[test]
    fn diff_reply_parsing() {
        let (s, o) = parse_diff_reply("**Summary:** Merge steps.\nOrigin: deployment\n");
        assert_eq!(s, "Merge steps.");
        assert_eq!(o.as_deref(), Some("deployment"));
        let (s, o) = parse_diff_reply("Just prose here.");
        assert_eq!(s, "Just prose here.");
        assert_eq!(o, None);
    }

    #[test]
    fn scope_reply_parsing() {
        let spec = builtin_lifecycle_fixture();
        assert_eq!(
            parse_scope_reply("LOCAL: deployment", &spec),
            Some(ParsedScope::Local(Some("deployment".into())))
        );
        assert_eq!(
            parse_scope_reply("local", &spec),
            Some(ParsedScope::Local(None))
        );
        assert_eq!(
            parse_scope_reply("  Global.", &spec),
            Some(ParsedScope::Global)
        );
        assert_eq!(
            parse_scope_reply("Verdict: `LOCAL: Termination`", &spec),
            Some(ParsedScope::Local(Some("termination".into())))
        );
        assert_eq!(parse_scope_reply("I think it depends", &spec), None);
        assert_eq!(parse_scope_reply("localized", &spec), None);
    }

    #[test]
    fn not_applicable_detection() {
        assert!(is_not_applicable("NOT-APPLICABLE: no state"));
        assert!(is_not_applicable("  not applicable here"));
        assert!(!is_not_applicable("Applicable: merge termination"));
    }

    fn pipeline_with(rules: Vec<MockRule>) -> (Gateway, PromptRegistry) {
        (
            Gateway::mock(Rulebook::new(rules)),
            PromptRegistry::builtin(),
        )
    }

    #[test]
    fn declared_origin_wins() {
        let spec = builtin_lifecycle_fixture();
        let (gw, reg) = pipeline_with(vec![MockRule::new(
            Role::Diff,
            &[],
            "Summary: combine deployment with the first invocation\nOrigin: deployment",
        )]);
        let p = ScatterPipeline::new(&gw, &reg, ScatterConfig::default());
        let input = InnovationInput::new("x", "y").with_origin("termination");
        let local = p
            .extract_local_innovation(&input, &spec, &mut Transcript::default())
            .unwrap();
        assert_eq!(local.origin.as_str(), "termination");
        assert_eq!(local.coupling_before, 0.0);
    }

    #[test]
    fn origin_falls_back_to_max_coupling() {
        let spec = builtin_lifecycle_fixture();
        let (gw, reg) = pipeline_with(vec![MockRule::new(
            Role::Diff,
            &[],
            "Summary: terminate and selfdestruct in one go, then validate\nOrigin: setup",
        )]);
        let p = ScatterPipeline::new(&gw, &reg, ScatterConfig::default());
        let local = p
            .extract_local_innovation(
                &InnovationInput::new("x", "y"),
                &spec,
                &mut Transcript::default(),
            )
            .unwrap();
        assert_eq!(local.origin.as_str(), "termination");
        assert!((local.coupling_before - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn origin_unresolvable() {
        let spec = builtin_lifecycle_fixture();
        let (gw, reg) = pipeline_with(vec![MockRule::new(
            Role::Diff,
            &[],
            "Summary: paint it blue",
        )]);
        let p = ScatterPipeline::new(&gw, &reg, ScatterConfig::default());
        assert!(matches!(
            p.extract_local_innovation(
                &InnovationInput::new("x", "y"),
                &spec,
                &mut Transcript::default()
            ),
            Err(ScatterError::OriginUnresolvable)
        ));
    }

    fn local(summary: &str, coupling_before: f64) -> LocalInnovation {
        LocalInnovation {
            summary: summary.into(),
            origin: "deployment".into(),
            coupling_before,
        }
    }

    #[test]
    fn generalize_reduces_in_one_attempt() {
        let spec = builtin_lifecycle_fixture();
        let (gw, reg) = pipeline_with(vec![MockRule::new(
            Role::Gen,
            &[],
            "merge any lifecycle step with the immediately following step",
        )]);
        let p = ScatterPipeline::new(&gw, &reg, ScatterConfig::default());
        let l = local("merge deployment and first invocation", 1.0 / 3.0);
        let mut t = Transcript::default();
        let g = p.generalize(&l, &spec, 3, &mut t).unwrap();
        assert_eq!((g.coupling_after, g.attempts, g.reduced), (0.0, 1, true));
        assert_eq!(t.0.len(), 1);
    }

    #[test]
    fn generalize_echo_cannot_reduce() {
        let spec = builtin_lifecycle_fixture();
        let summary = "merge deployment and first invocation";
        let (gw, reg) = pipeline_with(vec![MockRule::new(Role::Gen, &[], summary)]);
        let p = ScatterPipeline::new(&gw, &reg, ScatterConfig::default());
        let l = local(summary, 1.0 / 3.0);
        let g = p
            .generalize(&l, &spec, 3, &mut Transcript::default())
            .unwrap();
        assert_eq!(g.attempts, 3);
        assert!(!g.reduced);
        assert_eq!(g.coupling_after, l.coupling_before);
    }

    #[test]
    fn generalize_zero_coupling_exhausts_attempts() {
        let spec = builtin_lifecycle_fixture();
        let (gw, reg) = pipeline_with(vec![MockRule::new(Role::Gen, &[], "anything at all")]);
        let p = ScatterPipeline::new(&gw, &reg, ScatterConfig::default());
        let g = p
            .generalize(
                &local("unrelated", 0.0),
                &spec,
                3,
                &mut Transcript::default(),
            )
            .unwrap();
        assert_eq!((g.attempts, g.reduced), (3, false));
    }

    fn gen(text: &str) -> GeneralizedInnovation {
        GeneralizedInnovation {
            text: text.into(),
            coupling_after: 0.0,
            attempts: 1,
            reduced: true,
        }
    }

    #[test]
    fn scope_from_backend_and_heuristic() {
        let spec = builtin_lifecycle_fixture();
        let l = local("x", 0.5);

        let (gw, reg) = pipeline_with(vec![MockRule::new(Role::Scope, &[], "LOCAL: deployment")]);
        let p = ScatterPipeline::new(&gw, &reg, ScatterConfig::default());
        let v = p
            .determine_scope(&gen("g"), &l, &spec, &mut Transcript::default())
            .unwrap();
        assert_eq!(v.kind, ScopeKind::Local("deployment".into()));
        assert!(v.rationale.starts_with("backend verdict"));

        let (gw, reg) = pipeline_with(vec![MockRule::new(Role::Scope, &[], "hmm, hard to say")]);
        let p = ScatterPipeline::new(&gw, &reg, ScatterConfig::default());
        let v = p
            .determine_scope(
                &gen("deployment then termination"),
                &l,
                &spec,
                &mut Transcript::default(),
            )
            .unwrap();
        assert_eq!(v.kind, ScopeKind::Global);
        assert!(v.rationale.starts_with("heuristic fallback"));
        let v = p
            .determine_scope(
                &gen("merge adjacent steps"),
                &l,
                &spec,
                &mut Transcript::default(),
            )
            .unwrap();
        assert_eq!(v.kind, ScopeKind::Local("deployment".into()));
    }

    #[test]
    fn apply_sentinel_preserves_text() {
        let spec = builtin_lifecycle_fixture();
        let (gw, reg) = pipeline_with(vec![MockRule::new(
            Role::Apply,
            &[],
            "NOT-APPLICABLE: nothing to merge",
        )]);
        let p = ScatterPipeline::new(&gw, &reg, ScatterConfig::default());
        let (app, digest) = p
            .apply_to_segment(&gen("g"), &spec.segments[0], &spec.segments[3], &spec)
            .unwrap();
        assert!(!app.applicable);
        assert_eq!(app.adapted_text, "NOT-APPLICABLE: nothing to merge");
        assert_eq!(digest.len(), 64);
    }

    #[test]
    fn run_scatter_global_returns_early() {
        let spec = builtin_lifecycle_fixture();
        let (gw, reg) = pipeline_with(vec![
            MockRule::new(
                Role::Diff,
                &[],
                "Summary: merge deployment with invocation\nOrigin: deployment",
            ),
            MockRule::new(Role::Gen, &[], "merge adjacent steps"),
            MockRule::new(Role::Scope, &[], "GLOBAL"),
        ]);
        let p = ScatterPipeline::new(&gw, &reg, ScatterConfig::default());
        let r = p
            .run_scatter(&InnovationInput::new("x", "y"), &spec)
            .unwrap();
        assert!(r.verdict.is_global());
        assert!(r.applications.is_empty());
        assert_eq!(r.transcript_keys.len(), 3);
    }
}
