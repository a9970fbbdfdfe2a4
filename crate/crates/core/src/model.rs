//! The standardized model representation: components, manifests, validation
//! and the recipe summary.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Kind of an annotated component.
///
/// The set is closed: a keyword outside it is reported by the parser and
/// never turned into a new kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    InterfaceObject,
    InterfaceFile,
    HelperObject,
    Variable,
    Function,
    Constraint,
    Objective,
    Problem,
    Solver,
    Execution,
    OutputObject,
    OutputFile,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 12] = [
        ComponentKind::InterfaceObject,
        ComponentKind::InterfaceFile,
        ComponentKind::HelperObject,
        ComponentKind::Variable,
        ComponentKind::Function,
        ComponentKind::Constraint,
        ComponentKind::Objective,
        ComponentKind::Problem,
        ComponentKind::Solver,
        ComponentKind::Execution,
        ComponentKind::OutputObject,
        ComponentKind::OutputFile,
    ];

    /// Spelling used in annotation lines, e.g. `Output Object`.
    pub fn keyword(self) -> &'static str {
        match self {
            ComponentKind::InterfaceObject => "Interface Object",
            ComponentKind::InterfaceFile => "Interface File",
            ComponentKind::HelperObject => "Helper Object",
            ComponentKind::Variable => "Variable",
            ComponentKind::Function => "Function",
            ComponentKind::Constraint => "Constraint",
            ComponentKind::Objective => "Objective",
            ComponentKind::Problem => "Problem",
            ComponentKind::Solver => "Solver",
            ComponentKind::Execution => "Execution",
            ComponentKind::OutputObject => "Output Object",
            ComponentKind::OutputFile => "Output File",
        }
    }

    pub fn is_input(self) -> bool {
        matches!(self, ComponentKind::InterfaceObject | ComponentKind::InterfaceFile)
    }

    pub fn is_output(self) -> bool {
        matches!(self, ComponentKind::OutputObject | ComponentKind::OutputFile)
    }

    pub fn in_solve_chain(self) -> bool {
        matches!(self, ComponentKind::Problem | ComponentKind::Solver | ComponentKind::Execution)
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Half-open byte range `[start, end)` into a model source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
}

impl SourceSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        SourceSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Slice of `source` covered by this span, if it is in bounds.
    pub fn slice<'a>(&self, source: &'a str) -> Option<&'a str> {
        source.get(self.start..self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub kind: ComponentKind,
    pub name: String,
    pub description: Option<String>,
    /// Annotation line plus the code block that follows it.
    pub span: SourceSpan,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub name: String,
    pub description: Option<String>,
    pub comment_tag: String,
    pub source_digest: String,
    pub components: Vec<Component>,
}

impl ModelManifest {
    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn components_of(&self, kind: ComponentKind) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(move |c| c.kind == kind)
    }

    pub fn has_kind(&self, kind: ComponentKind) -> bool {
        self.components.iter().any(|c| c.kind == kind)
    }
}

/// `sha256:<hex>` digest of a model source.
pub fn source_digest(source: &str) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(source.as_bytes())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// A parser or validation finding. Parser diagnostics carry a 1-based
/// `line`; validation diagnostics carry the offending `component` name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
    pub message: String,
}

impl Diagnostic {
    pub fn error(message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, line: None, component: None, message: message.into() }
    }

    pub fn warning(message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Warning, line: None, component: None, message: message.into() }
    }

    pub fn at_line(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }

    pub fn for_component(mut self, name: impl Into<String>) -> Self {
        self.component = Some(name.into());
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}")?;
        if let Some(line) = self.line {
            write!(f, " (line {line})")?;
        }
        if let Some(c) = &self.component {
            write!(f, " [{c}]")?;
        }
        write!(f, ": {}", self.message)
    }
}

pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(Diagnostic::is_error)
}

/// Checks that a manifest is well formed enough to run.
///
/// Errors: duplicate component names, an Execution without any Problem.
/// Warnings: no components, an Objective without a Problem, a Solver
/// without an Execution.
pub fn validate(manifest: &ModelManifest) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    if manifest.components.is_empty() {
        out.push(Diagnostic::warning("model has no annotated components"));
        return out;
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &manifest.components {
        *counts.entry(c.name.as_str()).or_default() += 1;
    }
    // Report in file order of first occurrence.
    let mut reported = std::collections::BTreeSet::new();
    for c in &manifest.components {
        if counts[c.name.as_str()] > 1 && reported.insert(c.name.as_str()) {
            out.push(
                Diagnostic::error(format!(
                    "component name \"{}\" is used {} times; names must be unique",
                    c.name,
                    counts[c.name.as_str()]
                ))
                .for_component(&c.name),
            );
        }
    }

    let has_problem = manifest.has_kind(ComponentKind::Problem);
    let has_execution = manifest.has_kind(ComponentKind::Execution);
    for c in &manifest.components {
        match c.kind {
            ComponentKind::Execution if !has_problem => out.push(
                Diagnostic::error("execution has no Problem component to run").for_component(&c.name),
            ),
            ComponentKind::Objective if !has_problem => out.push(
                Diagnostic::warning("objective is not attached to any Problem component")
                    .for_component(&c.name),
            ),
            ComponentKind::Solver if !has_execution => out.push(
                Diagnostic::warning("solver is never used by an Execution component")
                    .for_component(&c.name),
            ),
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeEntry {
    pub name: String,
    pub kind: ComponentKind,
    pub description: Option<String>,
}

impl From<&Component> for RecipeEntry {
    fn from(c: &Component) -> Self {
        RecipeEntry { name: c.name.clone(), kind: c.kind, description: c.description.clone() }
    }
}

/// What a model needs, what it produces and how it is solved.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub inputs: Vec<RecipeEntry>,
    pub outputs: Vec<RecipeEntry>,
    pub solve_chain: Vec<String>,
}

#[derive(Debug, Error)]
#[error("manifest has {} validation error(s): {}", .0.len(), .0.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
pub struct InvalidManifest(pub Vec<Diagnostic>);

pub fn build_recipe(manifest: &ModelManifest) -> Result<Recipe, InvalidManifest> {
    let errors: Vec<_> = validate(manifest).into_iter().filter(Diagnostic::is_error).collect();
    if !errors.is_empty() {
        return Err(InvalidManifest(errors));
    }
    let mut recipe = Recipe::default();
    for c in &manifest.components {
        if c.kind.is_input() {
            recipe.inputs.push(c.into());
        } else if c.kind.is_output() {
            recipe.outputs.push(c.into());
        } else if c.kind.in_solve_chain() {
            recipe.solve_chain.push(c.name.clone());
        }
    }
    Ok(recipe)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub kind: ComponentKind,
    pub name: String,
    pub description: Option<String>,
    pub order: usize,
}

pub fn component_listing(manifest: &ModelManifest) -> Vec<ComponentRow> {
    let mut rows: Vec<_> = manifest
        .components
        .iter()
        .map(|c| ComponentRow {
            kind: c.kind,
            name: c.name.clone(),
            description: c.description.clone(),
            order: c.order,
        })
        .collect();
    rows.sort_by_key(|r| r.order);
    rows
}
