//! Annotation parser.
//!
//! An annotation is a line whose first non-blank content is the comment tag
//! immediately followed by `@`, then a keyword, a colon and a value:
//!
//! ```text
//! #@ Constraint: P_limits
//! #@ Description: Generator active power limits
//! P_limits = []
//! ```
//!
//! Each component annotation opens a span that runs up to the next component
//! annotation (or end of file), so spans tile the file from the first
//! component onwards. Text before the first component is the preamble.

use thiserror::Error;

use crate::model::{source_digest, Component, ComponentKind, Diagnostic, ModelManifest, SourceSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keyword {
    Model,
    Description,
    Component(ComponentKind),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("comment tag must not be empty")]
    EmptyTag,
    #[error("comment tag {0:?} contains whitespace")]
    WhitespaceInTag(String),
}

#[derive(Debug, Clone)]
pub struct ParserConfig {
    comment_tag: String,
    keywords: Vec<(String, Keyword)>,
}

impl ParserConfig {
    /// Config with the standard keyword table.
    pub fn new(comment_tag: impl Into<String>) -> Result<Self, ConfigError> {
        let comment_tag = comment_tag.into();
        if comment_tag.is_empty() {
            return Err(ConfigError::EmptyTag);
        }
        if comment_tag.chars().any(char::is_whitespace) {
            return Err(ConfigError::WhitespaceInTag(comment_tag));
        }
        let mut keywords = vec![
            ("Model".to_string(), Keyword::Model),
            ("Description".to_string(), Keyword::Description),
        ];
        keywords.extend(
            ComponentKind::ALL
                .iter()
                .map(|&k| (k.keyword().to_string(), Keyword::Component(k))),
        );
        Ok(ParserConfig { comment_tag, keywords })
    }

    /// Config for a file name, using [`detect_comment_tag`].
    pub fn for_filename(filename: &str) -> Result<Self, UnknownExtension> {
        let tag = detect_comment_tag(filename)?;
        Ok(ParserConfig::new(tag).expect("table tags are valid"))
    }

    pub fn comment_tag(&self) -> &str {
        &self.comment_tag
    }

    pub fn keyword(&self, spelling: &str) -> Option<Keyword> {
        self.keywords.iter().find(|(s, _)| s == spelling).map(|&(_, k)| k)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("kernel tag unknown for {filename:?}; supply the comment tag explicitly")]
pub struct UnknownExtension {
    pub filename: String,
}

/// Maps a file extension to the comment leader of its language.
pub fn detect_comment_tag(filename: &str) -> Result<&'static str, UnknownExtension> {
    let ext = std::path::Path::new(filename)
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("");
    match ext {
        "py" | "jl" | "r" | "R" | "mhl" | "mod" | "dat" | "run" | "sh" | "rb" | "pl" => Ok("#"),
        "m" => Ok("%"),
        "gms" => Ok("*"),
        _ => Err(UnknownExtension { filename: filename.to_string() }),
    }
}

/// Result of classifying one line.
enum LineKind<'a> {
    Code,
    Annotation(Keyword, &'a str),
    Unknown(&'a str),
    Malformed,
}

fn is_ws(c: char) -> bool {
    c == ' ' || c == '\t'
}

fn classify<'a>(line: &'a str, config: &ParserConfig) -> LineKind<'a> {
    let body = line.trim_end_matches(['\n', '\r']);
    let rest = body.trim_start_matches(is_ws);
    let Some(rest) = rest.strip_prefix(config.comment_tag.as_str()) else {
        return LineKind::Code;
    };
    let Some(rest) = rest.strip_prefix('@') else {
        return LineKind::Code;
    };
    let rest = rest.trim_start_matches(is_ws);
    let Some(colon) = rest.find(':') else {
        return LineKind::Malformed;
    };
    let keyword = rest[..colon].trim_end_matches(is_ws);
    let value = rest[colon + 1..].trim();
    match config.keyword(keyword) {
        Some(k) => LineKind::Annotation(k, value),
        None => LineKind::Unknown(keyword),
    }
}

enum Target {
    Nothing,
    Model,
    Component(usize),
}

/// Parses `source` into a manifest. Never fails; problems are reported as
/// diagnostics next to a best-effort manifest.
pub fn parse(source: &str, config: &ParserConfig) -> (ModelManifest, Vec<Diagnostic>) {
    let mut manifest = ModelManifest {
        name: String::new(),
        description: None,
        comment_tag: config.comment_tag.clone(),
        source_digest: source_digest(source),
        components: Vec::new(),
    };
    let mut diagnostics = Vec::new();
    let mut target = Target::Nothing;
    let mut open: Option<usize> = None;
    let mut model_named = false;

    let mut offset = 0;
    for (idx, line) in source.split_inclusive('\n').enumerate() {
        let line_no = idx + 1;
        let start = offset;
        offset += line.len();

        match classify(line, config) {
            LineKind::Code => {}
            LineKind::Malformed => diagnostics.push(
                Diagnostic::warning("annotation has no ':' separator; treated as code").at_line(line_no),
            ),
            LineKind::Unknown(keyword) => diagnostics.push(
                Diagnostic::warning(format!("unknown annotation keyword \"{keyword}\"; treated as code"))
                    .at_line(line_no),
            ),
            LineKind::Annotation(Keyword::Model, value) => {
                if value.is_empty() {
                    diagnostics.push(Diagnostic::warning("empty model name").at_line(line_no));
                } else if model_named {
                    diagnostics.push(
                        Diagnostic::warning(format!(
                            "model already named \"{}\"; ignoring \"{value}\"",
                            manifest.name
                        ))
                        .at_line(line_no),
                    );
                } else {
                    manifest.name = value.to_string();
                    model_named = true;
                }
                target = Target::Model;
            }
            LineKind::Annotation(Keyword::Description, value) => {
                let slot = match target {
                    Target::Component(i) => &mut manifest.components[i].description,
                    Target::Model => &mut manifest.description,
                    Target::Nothing => {
                        diagnostics.push(
                            Diagnostic::warning("description has no preceding component; ignored")
                                .at_line(line_no),
                        );
                        continue;
                    }
                };
                if !value.is_empty() {
                    match slot {
                        Some(d) => {
                            d.push(' ');
                            d.push_str(value);
                        }
                        None => *slot = Some(value.to_string()),
                    }
                }
            }
            LineKind::Annotation(Keyword::Component(kind), value) => {
                if value.is_empty() {
                    diagnostics.push(
                        Diagnostic::error(format!("{kind} annotation has an empty name")).at_line(line_no),
                    );
                    continue;
                }
                if let Some(i) = open.take() {
                    manifest.components[i].span.end = start;
                }
                let order = manifest.components.len();
                manifest.components.push(Component {
                    kind,
                    name: value.to_string(),
                    description: None,
                    span: SourceSpan::new(start, start),
                    order,
                });
                open = Some(order);
                target = Target::Component(order);
            }
        }
    }
    if let Some(i) = open {
        manifest.components[i].span.end = source.len();
    }
    (manifest, diagnostics)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReassembleError {
    #[error("span {start}..{end} of component {name:?} is out of bounds for a source of {len} bytes")]
    OutOfBounds { name: String, start: usize, end: usize, len: usize },
    #[error("component {name:?} overlaps or precedes the previous span")]
    Unordered { name: String },
    #[error("source does not match the manifest digest")]
    DigestMismatch,
}

/// Rebuilds the source text from the manifest's component spans and the gap
/// text between them.
pub fn reassemble(manifest: &ModelManifest, source: &str) -> Result<String, ReassembleError> {
    if source_digest(source) != manifest.source_digest {
        return Err(ReassembleError::DigestMismatch);
    }
    let mut components: Vec<_> = manifest.components.iter().collect();
    components.sort_by_key(|c| c.order);

    let mut out = String::with_capacity(source.len());
    let mut cursor = 0;
    for c in components {
        let SourceSpan { start, end } = c.span;
        if start > end || end > source.len() || !source.is_char_boundary(start) || !source.is_char_boundary(end) {
            return Err(ReassembleError::OutOfBounds { name: c.name.clone(), start, end, len: source.len() });
        }
        if start < cursor {
            return Err(ReassembleError::Unordered { name: c.name.clone() });
        }
        out.push_str(&source[cursor..start]);
        out.push_str(&source[start..end]);
        cursor = end;
    }
    out.push_str(&source[cursor..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Severity;

    fn hash() -> ParserConfig {
        ParserConfig::new("#").unwrap()
    }

    #[test]
    fn constraint_with_description() {
        let src = "#@ Constraint: P_limits\n#@ Description: Generator active power limits\nP_limits = []";
        let (m, diags) = parse(src, &hash());
        assert!(diags.is_empty());
        assert_eq!(m.components.len(), 1);
        let c = &m.components[0];
        assert_eq!(c.kind, ComponentKind::Constraint);
        assert_eq!(c.name, "P_limits");
        assert_eq!(c.description.as_deref(), Some("Generator active power limits"));
        assert_eq!(c.span, SourceSpan::new(0, src.len()));
        assert!(c.span.slice(src).unwrap().ends_with("P_limits = []"));
    }

    #[test]
    fn empty_source() {
        let (m, diags) = parse("", &hash());
        assert!(m.components.is_empty());
        assert!(diags.is_empty());
        assert_eq!(reassemble(&m, "").unwrap(), "");
    }

    #[test]
    fn unknown_keyword_warns() {
        let (m, diags) = parse("#@ Widget: w", &hash());
        assert!(m.components.is_empty());
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
        assert!(diags[0].message.contains("Widget"));
    }

    #[test]
    fn empty_name_is_error() {
        let (m, diags) = parse("#@ Variable:   \nx = 1\n", &hash());
        assert!(m.components.is_empty());
        assert!(diags[0].is_error());
        assert_eq!(diags[0].line, Some(1));
    }

    #[test]
    fn whitespace_tolerance() {
        let src = "   #@   Output Object   :   out  \r\n";
        let (m, diags) = parse(src, &hash());
        assert!(diags.is_empty());
        assert_eq!(m.components[0].kind, ComponentKind::OutputObject);
        assert_eq!(m.components[0].name, "out");
    }

    #[test]
    fn keyword_is_case_sensitive() {
        let (m, diags) = parse("#@ constraint: c\n", &hash());
        assert!(m.components.is_empty());
        assert_eq!(diags.len(), 1);
    }

    #[test]
    fn tag_must_lead_the_line() {
        let (m, _) = parse("s = \"#@ Variable: x\"\n", &hash());
        assert!(m.components.is_empty());
    }

    #[test]
    fn descriptions_concatenate() {
        let src = "#@ Variable: x\n#@ Description: first\n#@ Description: second\nx = 1\n";
        let (m, _) = parse(src, &hash());
        assert_eq!(m.components[0].description.as_deref(), Some("first second"));
    }

    #[test]
    fn model_line_names_manifest() {
        let src = "#@ Model: M\n#@ Description: about\n#@ Variable: x\nx = 1\n#@ Solver: s\n";
        let (m, diags) = parse(src, &hash());
        assert!(diags.is_empty());
        assert_eq!(m.name, "M");
        assert_eq!(m.description.as_deref(), Some("about"));
        assert_eq!(m.components[0].span.slice(src).unwrap(), "#@ Variable: x\nx = 1\n");
        assert_eq!(m.components[1].name, "s");
        assert_eq!(reassemble(&m, src).unwrap(), src);
    }

    #[test]
    fn model_line_inside_span() {
        let src = "#@ Variable: x\nx = 1\n#@ Model: M\n#@ Description: about\n";
        let (m, _) = parse(src, &hash());
        assert_eq!(m.components[0].span.end, src.len());
        assert_eq!(m.components[0].description, None);
        assert_eq!(m.description.as_deref(), Some("about"));
    }

    #[test]
    fn orphan_description_warns() {
        let (m, diags) = parse("#@ Description: nothing here\n", &hash());
        assert!(m.components.is_empty());
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
    }

    #[test]
    fn blank_lines_stay_in_span() {
        let src = "pre\n#@ Constraint: c\na\n\nb\n#@ Objective: o\nminimize x\n";
        let (m, _) = parse(src, &hash());
        assert_eq!(m.components[0].span.slice(src).unwrap(), "#@ Constraint: c\na\n\nb\n");
    }

    #[test]
    fn other_tags() {
        let cfg = ParserConfig::new("%").unwrap();
        let (m, _) = parse("%@ Constraint: c\n#@ Variable: v\n", &cfg);
        assert_eq!(m.components.len(), 1);
        assert_eq!(m.components[0].kind, ComponentKind::Constraint);
    }

    #[test]
    fn config_rejects_bad_tags() {
        assert_eq!(ParserConfig::new("").unwrap_err(), ConfigError::EmptyTag);
        assert!(matches!(ParserConfig::new("# ").unwrap_err(), ConfigError::WhitespaceInTag(_)));
    }

    #[test]
    fn comment_tags_by_extension() {
        assert_eq!(detect_comment_tag("dcopf.py").unwrap(), "#");
        assert_eq!(detect_comment_tag("case.m").unwrap(), "%");
        assert_eq!(detect_comment_tag("trnsport.gms").unwrap(), "*");
        assert_eq!(detect_comment_tag("model.mhl").unwrap(), "#");
        assert!(detect_comment_tag("model.xyz").is_err());
        assert!(detect_comment_tag("Makefile").is_err());
    }

    #[test]
    fn reassemble_rejects_bad_spans() {
        let src = "#@ Variable: x\nx = 1\n";
        let (mut m, _) = parse(src, &hash());
        m.components[0].span.end = 1000;
        assert!(matches!(reassemble(&m, src), Err(ReassembleError::OutOfBounds { .. })));
        assert_eq!(reassemble(&m, "other"), Err(ReassembleError::DigestMismatch));
    }
}
