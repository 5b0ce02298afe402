//! Domain types shared by the pipeline, the harness and the CLI.
//!
//! A [`ProcessSpec`] is either a temporal sequence of stages or a spatial
//! set of parts. Each [`Segment`] carries a declared marker vocabulary that
//! the coupling and similarity scores are computed against.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("duplicate segment id `{0}`")]
    DuplicateSegmentId(String),
    #[error("segment `{0}` has no markers")]
    EmptyMarkers(String),
    #[error("process needs at least 2 segments, found {0}")]
    TooFewSegments(usize),
    #[error("unknown process mode `{0}` (expected `temporal` or `spatial`)")]
    BadMode(String),
    #[error("segment id `{0}` is not a lowercase slug")]
    InvalidSegmentId(String),
    #[error("segment `{segment}` has invalid marker `{marker}`")]
    InvalidMarker { segment: String, marker: String },
    #[error("innovation {0} must not be empty")]
    EmptyInnovationField(&'static str),
    #[error("declared origin `{0}` is not a segment of the process")]
    UnknownOrigin(String),
    #[error("malformed process definition: {0}")]
    Malformed(String),
}

/// Stable key of a segment: lowercase ASCII letters, digits and `-`/`_`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(String);

impl SegmentId {
    pub fn new(id: impl Into<String>) -> Self {
        SegmentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_slug(&self) -> bool {
        let mut chars = self.0.chars();
        match chars.next() {
            Some(c) if c.is_ascii_lowercase() || c.is_ascii_digit() => {}
            _ => return false,
        }
        chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_')
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SegmentId {
    fn from(s: &str) -> Self {
        SegmentId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Ordered stages of a task.
    Temporal,
    /// Coexisting parts of a system.
    Spatial,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self, SpecError> {
        match s {
            "temporal" => Ok(Mode::Temporal),
            "spatial" => Ok(Mode::Spatial),
            other => Err(SpecError::BadMode(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Temporal => "temporal",
            Mode::Spatial => "spatial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub markers: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

impl Segment {
    pub fn new<I, S>(id: &str, name: &str, description: &str, markers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Segment {
            id: SegmentId::new(id),
            name: name.to_string(),
            description: description.to_string(),
            markers: markers.into_iter().map(Into::into).collect(),
            content: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub name: String,
    pub mode: Mode,
    pub segments: Vec<Segment>,
}

impl ProcessSpec {
    /// Parses a process definition file and validates it.
    ///
    /// The mode is read as plain text first so an unknown value surfaces as
    /// [`SpecError::BadMode`] instead of a generic decoding error.
    pub fn from_json(json: &str) -> Result<Self, SpecError> {
        #[derive(Deserialize)]
        struct RawSpec {
            name: String,
            mode: String,
            segments: Vec<Segment>,
        }
        let raw: RawSpec =
            serde_json::from_str(json).map_err(|e| SpecError::Malformed(e.to_string()))?;
        let spec = ProcessSpec {
            name: raw.name,
            mode: Mode::parse(&raw.mode)?,
            segments: raw.segments,
        };
        validate_process_spec(spec)
    }

    pub fn segment(&self, id: &SegmentId) -> Option<&Segment> {
        self.segments.iter().find(|s| &s.id == id)
    }

    pub fn position(&self, id: &SegmentId) -> Option<usize> {
        self.segments.iter().position(|s| &s.id == id)
    }

    pub fn contains(&self, id: &SegmentId) -> bool {
        self.position(id).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = &SegmentId> {
        self.segments.iter().map(|s| &s.id)
    }

    /// Looks a segment up by id or display name, ignoring case and
    /// surrounding whitespace.
    pub fn find_by_label(&self, label: &str) -> Option<&Segment> {
        let wanted = label.trim().to_lowercase();
        if wanted.is_empty() {
            return None;
        }
        self.segments
            .iter()
            .find(|s| s.id.as_str() == wanted || s.name.to_lowercase() == wanted)
    }

    /// One line per segment, in process order.
    pub fn stage_list(&self) -> String {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.description.is_empty() {
                    format!("{}. {} ({})", i + 1, s.name, s.id)
                } else {
                    format!("{}. {} ({}): {}", i + 1, s.name, s.id, s.description)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Returns the spec unchanged iff every process and segment invariant holds.
pub fn validate_process_spec(spec: ProcessSpec) -> Result<ProcessSpec, SpecError> {
    if spec.segments.len() < 2 {
        return Err(SpecError::TooFewSegments(spec.segments.len()));
    }
    let mut seen = HashSet::new();
    for seg in &spec.segments {
        if !seg.id.is_slug() {
            return Err(SpecError::InvalidSegmentId(seg.id.to_string()));
        }
        if !seen.insert(seg.id.clone()) {
            return Err(SpecError::DuplicateSegmentId(seg.id.to_string()));
        }
        if seg.markers.is_empty() {
            return Err(SpecError::EmptyMarkers(seg.id.to_string()));
        }
        for marker in &seg.markers {
            // A marker must survive tokenization as itself, otherwise it
            // could never intersect an innovation's token set.
            let tokens = tokenize(marker);
            if tokens.len() != 1 || !tokens.contains(marker.as_str()) {
                return Err(SpecError::InvalidMarker {
                    segment: seg.id.to_string(),
                    marker: marker.clone(),
                });
            }
        }
    }
    Ok(spec)
}

/// The five runtime stages of a smart contract's lifecycle.
pub fn builtin_lifecycle_fixture() -> ProcessSpec {
    ProcessSpec {
        name: "smart contract lifecycle".to_string(),
        mode: Mode::Temporal,
        segments: vec![
            Segment::new(
                "deployment",
                "Deployment",
                "The compiled contract is submitted to the chain in a creation transaction.",
                ["deployment", "deploy", "constructor"],
            ),
            Segment::new(
                "instantiation",
                "Instantiation",
                "Contract storage is initialized and the instance receives its address.",
                ["instantiation", "instantiate", "initialization"],
            ),
            Segment::new(
                "invocation",
                "Invocation",
                "Users call contract functions and the network executes them.",
                ["invocation", "invoke", "execution", "call"],
            ),
            Segment::new(
                "termination",
                "Termination",
                "The contract is disabled or destroyed and its remaining state is released.",
                ["termination", "terminate", "selfdestruct"],
            ),
            Segment::new(
                "validation",
                "Validation",
                "Nodes verify the resulting state transitions and confirm them in blocks.",
                ["validation", "validate", "verification"],
            ),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnovationInput {
    pub text: String,
    pub context: String,
    #[serde(rename = "origin", default, skip_serializing_if = "Option::is_none")]
    pub declared_origin: Option<SegmentId>,
}

impl InnovationInput {
    pub fn new(text: impl Into<String>, context: impl Into<String>) -> Self {
        InnovationInput {
            text: text.into(),
            context: context.into(),
            declared_origin: None,
        }
    }

    pub fn with_origin(mut self, origin: impl Into<SegmentId>) -> Self {
        self.declared_origin = Some(origin.into());
        self
    }

    pub fn validate(&self, spec: &ProcessSpec) -> Result<(), SpecError> {
        if self.text.trim().is_empty() {
            return Err(SpecError::EmptyInnovationField("text"));
        }
        if self.context.trim().is_empty() {
            return Err(SpecError::EmptyInnovationField("context"));
        }
        if let Some(origin) = &self.declared_origin {
            if !spec.contains(origin) {
                return Err(SpecError::UnknownOrigin(origin.to_string()));
            }
        }
        Ok(())
    }
}

impl From<String> for SegmentId {
    fn from(s: String) -> Self {
        SegmentId(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalInnovation {
    pub summary: String,
    pub origin: SegmentId,
    pub coupling_before: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedInnovation {
    pub text: String,
    pub coupling_after: f64,
    pub attempts: u32,
    pub reduced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "segment", rename_all = "UPPERCASE")]
pub enum ScopeKind {
    Local(SegmentId),
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeVerdict {
    pub kind: ScopeKind,
    pub rationale: String,
}

impl ScopeVerdict {
    pub fn is_global(&self) -> bool {
        matches!(self.kind, ScopeKind::Global)
    }

    pub fn local_segment(&self) -> Option<&SegmentId> {
        match &self.kind {
            ScopeKind::Local(id) => Some(id),
            ScopeKind::Global => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentApplication {
    pub segment: SegmentId,
    pub adapted_text: String,
    pub applicable: bool,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterResult {
    pub input: InnovationInput,
    pub local: LocalInnovation,
    pub generalized: GeneralizedInnovation,
    pub verdict: ScopeVerdict,
    pub applications: Vec<SegmentApplication>,
    pub transcript_keys: Vec<String>,
}
