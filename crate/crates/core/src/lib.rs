//! Core of modelhub: the annotated-model representation, the annotation
//! parser and the native `native-lp` compute kernel.

pub mod kernel;
pub mod lp;
pub mod model;
pub mod parser;
pub mod scalar;
pub mod wire;

pub use model::{
    build_recipe, component_listing, validate, Component, ComponentKind, ComponentRow, Diagnostic, ModelManifest,
    Recipe, RecipeEntry, Severity, SourceSpan,
};
pub use parser::{detect_comment_tag, parse, reassemble, ParserConfig};
pub use scalar::Scalar;

pub type LpProblem = lp::Problem<f64>;
pub type LpSolution = lp::Solution<f64>;
pub type LpParams = lp::SolveParams<f64>;
pub type LpProblemF32 = lp::Problem<f32>;
pub type LpSolutionF32 = lp::Solution<f32>;
