use modelhub_core::model::source_digest;
use modelhub_core::{
    build_recipe, component_listing, parse, reassemble, validate, ComponentKind, ModelManifest, ParserConfig,
};
use proptest::prelude::*;

const EXTRACT: &str = include_str!("../../../corpus/dcopf_extract.py");

fn hash() -> ParserConfig {
    ParserConfig::new("#").unwrap()
}

#[test]
fn dcopf_extract_parses_to_six_components() {
    let (m, diags) = parse(EXTRACT, &hash());
    assert!(diags.is_empty(), "{diags:?}");
    let kinds: Vec<_> = m.components.iter().map(|c| c.kind).collect();
    assert_eq!(
        kinds,
        [
            ComponentKind::Constraint,
            ComponentKind::Objective,
            ComponentKind::Problem,
            ComponentKind::Solver,
            ComponentKind::Execution,
            ComponentKind::OutputObject,
        ]
    );
    assert_eq!(m.components[0].description.as_deref(), Some("Generator active power limits"));
    assert_eq!(reassemble(&m, EXTRACT).unwrap(), EXTRACT);

    let listing = component_listing(&m);
    assert_eq!(listing[0].name, "P_limits");
    assert_eq!(listing[0].order, 0);
    assert_eq!(listing[0].kind, ComponentKind::Constraint);

    assert!(validate(&m).iter().all(|d| !d.is_error()));
    let recipe = build_recipe(&m).unwrap();
    assert_eq!(recipe.solve_chain, ["problem", "solver", "info"]);
    assert_eq!(recipe.outputs.len(), 1);
}

#[test]
fn manifest_json_round_trips() {
    let (m, _) = parse(EXTRACT, &hash());
    let json = serde_json::to_string(&m).unwrap();
    let back: ModelManifest = serde_json::from_str(&json).unwrap();
    assert_eq!(back, m);
    assert_eq!(m.source_digest, source_digest(EXTRACT));
}

/// One generated line plus whether it is an annotation line.
#[derive(Debug, Clone)]
enum Item {
    Code(String),
    Blank,
    Component { kind: usize, name: String, pad: (usize, usize, usize) },
    Description(String),
    Model(String),
    Unknown(String),
}

fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_]{0,8}"
}

fn item() -> impl Strategy<Value = Item> {
    prop_oneof![
        4 => prop_oneof![
            (ident(), -1000i32..1000).prop_map(|(n, v)| format!("{n} = {v}")),
            "[a-z ]{0,20}".prop_map(|t| format!("# {t}")),
            ident().prop_map(|n| format!("    {n} = \"#@ Variable: {n}\"")),
            "[ -~]{0,30}".prop_filter("no leading tag", |s| !s.trim_start().starts_with("#@")),
        ]
        .prop_map(Item::Code),
        1 => Just(Item::Blank),
        3 => (0..ComponentKind::ALL.len(), ident(), (0..3usize, 0..3usize, 0..3usize))
            .prop_map(|(kind, name, pad)| Item::Component { kind, name, pad }),
        1 => "[A-Za-z ,.]{0,30}".prop_map(Item::Description),
        1 => ident().prop_map(Item::Model),
        1 => "(Widget|Parameter|Set|Data)".prop_map(Item::Unknown),
    ]
}

#[derive(Debug)]
struct Rendered {
    source: String,
    annotation_lines: Vec<usize>,
}

fn render(items: &[Item], crlf: bool, final_newline: bool) -> Rendered {
    let eol = if crlf { "\r\n" } else { "\n" };
    let pads = ["", " ", "\t  "];
    let mut lines = Vec::new();
    let mut annotation_lines = Vec::new();
    for (i, it) in items.iter().enumerate() {
        let line = match it {
            Item::Code(s) => s.clone(),
            Item::Blank => String::new(),
            Item::Component { kind, name, pad } => {
                annotation_lines.push(i);
                format!(
                    "{}#@{}{}{}:{}{}",
                    pads[pad.0],
                    pads[pad.1],
                    ComponentKind::ALL[*kind].keyword(),
                    pads[pad.2],
                    pads[pad.1],
                    name
                )
            }
            Item::Description(d) => {
                annotation_lines.push(i);
                format!("#@ Description: {d}")
            }
            Item::Model(n) => {
                annotation_lines.push(i);
                format!("#@ Model: {n}")
            }
            Item::Unknown(k) => format!("#@ {k}: thing"),
        };
        lines.push(line);
    }
    let mut source = lines.join(eol);
    if final_newline && !lines.is_empty() {
        source.push_str(eol);
    }
    Rendered { source, annotation_lines }
}

fn files() -> impl Strategy<Value = Rendered> {
    (prop::collection::vec(item(), 0..40), any::<bool>(), any::<bool>())
        .prop_map(|(items, crlf, nl)| render(&items, crlf, nl))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_is_byte_exact(file in files()) {
        let (m, _) = parse(&file.source, &hash());
        prop_assert_eq!(reassemble(&m, &file.source).unwrap(), file.source);
    }

    #[test]
    fn spans_tile_the_file(file in files()) {
        let src = &file.source;
        let (m, _) = parse(src, &hash());
        for (i, c) in m.components.iter().enumerate() {
            prop_assert_eq!(c.order, i);
            let next = m.components.get(i + 1).map_or(src.len(), |n| n.span.start);
            prop_assert_eq!(c.span.end, next);
            prop_assert!(c.span.start == 0 || src.as_bytes()[c.span.start - 1] == b'\n');
            prop_assert!(!c.name.is_empty());
        }
        // The preamble holds no component annotation.
        let preamble_end = m.components.first().map_or(src.len(), |c| c.span.start);
        let (pre, _) = parse(&src[..preamble_end], &hash());
        prop_assert!(pre.components.is_empty());
    }

    #[test]
    fn parse_is_deterministic(file in files()) {
        let a = parse(&file.source, &hash());
        let b = parse(&file.source, &hash());
        prop_assert_eq!(&a.0, &b.0);
        prop_assert_eq!(&a.1, &b.1);
        prop_assert_eq!(validate(&a.0), validate(&b.0));
    }

    #[test]
    fn dropping_an_annotation_never_errors(file in files()) {
        let (_, diags) = parse(&file.source, &hash());
        prop_assert!(diags.iter().all(|d| !d.is_error()));
        let lines: Vec<&str> = file.source.split_inclusive('\n').collect();
        for &skip in &file.annotation_lines {
            let reduced: String = lines
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, l)| *l)
                .collect();
            let (_, diags) = parse(&reduced, &hash());
            prop_assert!(diags.iter().all(|d| !d.is_error()), "removing line {} gave {:?}", skip + 1, diags);
        }
    }

    #[test]
    fn recipe_names_exist(file in files()) {
        let (m, _) = parse(&file.source, &hash());
        if let Ok(recipe) = build_recipe(&m) {
            let names: Vec<_> = m.components.iter().map(|c| c.name.as_str()).collect();
            for e in recipe.inputs.iter().chain(&recipe.outputs) {
                prop_assert!(names.contains(&e.name.as_str()));
            }
            for n in &recipe.solve_chain {
                prop_assert!(names.contains(&n.as_str()));
            }
            prop_assert!(recipe.inputs.iter().all(|e| e.kind.is_input()));
            prop_assert!(recipe.outputs.iter().all(|e| e.kind.is_output()));
        }
        prop_assert_eq!(component_listing(&m).len(), m.components.len());
    }
}
