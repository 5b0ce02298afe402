//! Prompt templates for every prompting role, with paraphrase variants.
//!
//! Templates are plain text with `{{name}}` placeholders. A template
//! directory holds files named `<role>.<variant>.prompt`; variants for each
//! role must be numbered contiguously from 0. The shipped defaults are
//! compiled in and can be replaced wholesale with [`PromptRegistry::load_dir`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ProcessSpec, Segment};

/// Placeholder names a template body may reference.
pub const PLACEHOLDERS: &[&str] = &[
    "innovation",
    "context",
    "segment_name",
    "segment_description",
    "process_name",
    "stage_list",
    "previous_output",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Extract the local change from the user's innovation.
    Diff,
    /// Strip origin-specific detail.
    Gen,
    /// LOCAL-or-GLOBAL decision.
    Scope,
    /// Adapt the generalized change to one segment.
    Apply,
    /// Single-shot baseline prompt with no decomposition guidance.
    Direct,
    /// Reissue after unparseable structured output.
    Repair,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Diff,
        Role::Gen,
        Role::Scope,
        Role::Apply,
        Role::Direct,
        Role::Repair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Diff => "diff",
            Role::Gen => "gen",
            Role::Scope => "scope",
            Role::Apply => "apply",
            Role::Direct => "direct",
            Role::Repair => "repair",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| PromptError::UnknownRole(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no template for role `{role}` variant {variant}")]
    UnknownTemplate { role: Role, variant: usize },
    #[error("missing binding for placeholder `{0}`")]
    MissingBinding(String),
    #[error("template {role}.{variant} references undeclared placeholder `{name}`")]
    UndeclaredPlaceholder {
        role: Role,
        variant: usize,
        name: String,
    },
    #[error("template {role}.{variant} has an unterminated placeholder")]
    Unterminated { role: Role, variant: usize },
    #[error("unknown prompting role `{0}`")]
    UnknownRole(String),
    #[error("variants for role `{role}` are not contiguous from 0 (missing {missing})")]
    NonContiguous { role: Role, missing: usize },
    #[error("bad template file name `{0}` (expected <role>.<variant>.prompt)")]
    BadFileName(String),
    #[error("io error reading templates: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(String),
}

/// A parsed template body.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub role: Role,
    pub variant: usize,
    pub body: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn parse(role: Role, variant: usize, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let mut pieces = Vec::new();
        let mut rest = body.as_str();
        while let Some(start) = rest.find("{{") {
            if start > 0 {
                pieces.push(Piece::Literal(rest[..start].to_string()));
            }
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or(PromptError::Unterminated { role, variant })?;
            let name = after[..end].trim();
            if !PLACEHOLDERS.contains(&name) {
                return Err(PromptError::UndeclaredPlaceholder {
                    role,
                    variant,
                    name: name.to_string(),
                });
            }
            pieces.push(Piece::Slot(name.to_string()));
            rest = &after[end + 2..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Literal(rest.to_string()));
        }
        Ok(PromptTemplate {
            role,
            variant,
            body,
            pieces,
        })
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(name) => Some(name.as_str()),
            Piece::Literal(_) => None,
        })
    }

    /// First non-empty line of the body when it contains no placeholder.
    pub fn opener(&self) -> Option<&str> {
        let line = self.body.lines().find(|l| !l.trim().is_empty())?;
        (!line.contains("{{")).then_some(line)
    }

    pub fn render(&self, bindings: &Bindings) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        for piece in &self.pieces {
            match piece {
                Piece::Literal(text) => out.push_str(text),
                Piece::Slot(name) => {
                    let value = bindings
                        .get(name)
                        .ok_or_else(|| PromptError::MissingBinding(name.clone()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// Placeholder name to substituted text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings(HashMap<String, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn insert(&mut self, name: &str, value: impl Into<String>) {
        self.0.insert(name.to_string(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    /// Process-level bindings plus the name and description of `segment`.
    pub fn for_segment(spec: &ProcessSpec, segment: &Segment) -> Self {
        Bindings::new()
            .set("process_name", spec.name.clone())
            .set("stage_list", spec.stage_list())
            .set("segment_name", segment.name.clone())
            .set("segment_description", segment.description.clone())
    }

    pub fn for_process(spec: &ProcessSpec) -> Self {
        Bindings::new()
            .set("process_name", spec.name.clone())
            .set("stage_list", spec.stage_list())
    }
}

macro_rules! builtin_role {
    ($role:literal; $($v:literal),+) => {
        &[$(include_str!(concat!("../templates/", $role, ".", $v, ".prompt"))),+]
    };
}

const BUILTIN: &[(Role, &[&str])] = &[
    (
        Role::Diff,
        builtin_role!("diff"; 0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19),
    ),
    (
        Role::Gen,
        builtin_role!("gen"; 0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19),
    ),
    (
        Role::Scope,
        builtin_role!("scope"; 0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19),
    ),
    (
        Role::Apply,
        builtin_role!("apply"; 0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19),
    ),
    (
        Role::Direct,
        builtin_role!("direct"; 0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19),
    ),
    (Role::Repair, builtin_role!("repair"; 0,1)),
];

/// Immutable after construction apart from [`PromptRegistry::register`],
/// which only appends.
#[derive(Debug, Clone)]
pub struct PromptRegistry {
    templates: BTreeMap<Role, Vec<PromptTemplate>>,
}

impl PromptRegistry {
    /// The compiled-in default templates.
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for (role, bodies) in BUILTIN {
            let parsed = bodies
                .iter()
                .enumerate()
                .map(|(i, body)| PromptTemplate::parse(*role, i, *body))
                .collect::<Result<Vec<_>, _>>()
                .expect("builtin templates are well formed");
            templates.insert(*role, parsed);
        }
        PromptRegistry { templates }
    }

    /// Loads every `<role>.<variant>.prompt` file in `dir`. Roles without
    /// files fall back to the builtin set; a role with files replaces its
    /// builtin variants entirely.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut found: BTreeMap<Role, BTreeMap<usize, String>> = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(file_name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(stem) = file_name.strip_suffix(".prompt") else {
                continue;
            };
            let (role, variant) = stem
                .split_once('.')
                .ok_or_else(|| PromptError::BadFileName(file_name.to_string()))?;
            let role: Role = role.parse()?;
            let variant: usize = variant
                .parse()
                .map_err(|_| PromptError::BadFileName(file_name.to_string()))?;
            found
                .entry(role)
                .or_default()
                .insert(variant, std::fs::read_to_string(&path)?);
        }
        let mut registry = Self::builtin();
        for (role, variants) in found {
            let mut parsed = Vec::with_capacity(variants.len());
            for (expected, (variant, body)) in variants.into_iter().enumerate() {
                if variant != expected {
                    return Err(PromptError::NonContiguous {
                        role,
                        missing: expected,
                    });
                }
                parsed.push(PromptTemplate::parse(role, variant, body)?);
            }
            registry.templates.insert(role, parsed);
        }
        Ok(registry)
    }

    /// Appends a variant for `role` and returns its index.
    pub fn register(&mut self, role: Role, body: impl Into<String>) -> Result<usize, PromptError> {
        let list = self.templates.entry(role).or_default();
        let variant = list.len();
        list.push(PromptTemplate::parse(role, variant, body)?);
        Ok(variant)
    }

    pub fn variant_count(&self, role: Role) -> usize {
        self.templates.get(&role).map_or(0, Vec::len)
    }

    /// Variant used in 1-based round `round`: `(round - 1) mod count`.
    pub fn variant_for_round(&self, role: Role, round: usize) -> usize {
        let count = self.variant_count(role).max(1);
        round.saturating_sub(1) % count
    }

    pub fn template(&self, role: Role, variant: usize) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(&role)
            .and_then(|list| list.get(variant))
            .ok_or(PromptError::UnknownTemplate { role, variant })
    }

    pub fn render(
        &self,
        role: Role,
        variant: usize,
        bindings: &Bindings,
    ) -> Result<String, PromptError> {
        self.template(role, variant)?.render(bindings)
    }

    /// Hex SHA-256 over every template in role/variant order, recorded in
    /// run manifests.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (role, list) in &self.templates {
            for t in list {
                hasher.update(role.as_str().as_bytes());
                hasher.update([0x1f]);
                hasher.update(t.variant.to_string().as_bytes());
                hasher.update([0x1f]);
                hasher.update(t.body.as_bytes());
                hasher.update([0x1e]);
            }
        }
        hex::encode(hasher.finalize())
    }
}

impl Default for PromptRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
