//! The `.mhl` modeling language run by the native LP kernel.
//!
//! Each annotated component's code block is read according to its kind:
//!
//! | kind             | statements                                          |
//! |------------------|-----------------------------------------------------|
//! | Interface Object | `name = 1.5` or `name = [1, 2]` (overridable default) |
//! | Interface File   | nothing, or `name = file()`                          |
//! | Helper Object    | `h = <expr>` over inputs, helpers and variables     |
//! | Variable         | `x = variable(n) [>= lower] [<= upper]`             |
//! | Constraint       | `<expr> <= <expr>`, `>=`, `==` (elementwise on vectors) |
//! | Objective        | `minimize <expr>` / `maximize <expr>`               |
//! | Solver           | `feastol = <expr>`, `maxiter = <expr>`              |
//! | Output Object    | `out = <expr>` over anything above and `objective`  |
//!
//! Expressions use numbers, names, `[a, b, ...]`, indexing `v[i]`, `+ - *`,
//! parentheses and `sum(v)`. Everything except outputs must stay linear in
//! the variables. Problem, Function, Execution and Output File blocks are
//! not interpreted.

mod syntax;
mod value;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::problem::{Bounds, Problem, Relation, Sense, Solution, SolveParams, Status};
use crate::model::{ComponentKind, ModelManifest};
pub use syntax::{parse_statement, BinOp, Expr, LiteralValue, Statement};
pub use value::{Affine, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScriptErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown identifier \"{0}\"")]
    UnknownIdentifier(String),
    #[error("nonlinear term: product of two expressions that both depend on variables")]
    Nonlinear,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: f64, len: usize },
    #[error("missing required input \"{0}\"")]
    MissingInput(String),
    #[error("cyclic helper definition involving \"{0}\"")]
    CyclicHelper(String),
    #[error("\"{0}\" is defined more than once")]
    Duplicate(String),
    #[error("{0}")]
    InvalidStatement(String),
    #[error("invalid solver parameter: {0}")]
    InvalidParameter(String),
    #[error("outputs need an optimal solution, status is {0}")]
    NotOptimal(Status),
}

/// A kernel error located at a component and source line.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ScriptError {
    pub component: Option<String>,
    pub line: Option<usize>,
    pub kind: ScriptErrorKind,
}

impl fmt::Display for ScriptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.component, self.line) {
            (Some(c), Some(l)) => write!(f, "{c} (line {l}): {}", self.kind),
            (Some(c), None) => write!(f, "{c}: {}", self.kind),
            (None, Some(l)) => write!(f, "line {l}: {}", self.kind),
            (None, None) => write!(f, "{}", self.kind),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Site {
    component: String,
    line: usize,
}

impl Site {
    fn err(&self, kind: ScriptErrorKind) -> ScriptError {
        ScriptError { component: Some(self.component.clone()), line: Some(self.line), kind }
    }
}

/// What a manifest component means to the native kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Binding {
    Input { has_default: bool },
    InputFile,
    Helpers(Vec<String>),
    Variables(Vec<String>),
    Constraints { statements: usize },
    Objective,
    Solver,
    Output,
    Execution,
    /// Parsed and listed but without solve-time meaning.
    Inert,
}

#[derive(Debug, Clone)]
struct InputDecl {
    name: String,
    site: Site,
    default: Option<LiteralValue>,
}

#[derive(Debug, Clone)]
struct VarDecl {
    name: String,
    site: Site,
    size: usize,
    lower: Option<Expr>,
    upper: Option<Expr>,
}

#[derive(Debug, Clone)]
struct OutputDecl {
    component: String,
    assigns: Vec<(Site, String, Expr)>,
}

/// An input value supplied at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum InputValue {
    Scalar(f64),
    Vector(Vec<f64>),
    Text(String),
}

/// Parsed model: the LP template with unresolved inputs plus what each
/// component binds to.
#[derive(Debug, Clone)]
pub struct Script {
    inputs: Vec<InputDecl>,
    helpers: BTreeMap<String, (Site, Expr)>,
    variables: Vec<VarDecl>,
    constraints: Vec<(Site, Expr, Relation, Expr)>,
    objective: Option<(Site, Sense, Expr)>,
    solver: Vec<(Site, String, Expr)>,
    outputs: Vec<OutputDecl>,
    executions: Vec<String>,
    bindings: BTreeMap<String, Binding>,
    warnings: Vec<String>,
}

const BUILTINS: [&str; 1] = ["sum"];
const OBJECTIVE_NAME: &str = "objective";
const SOLVER_KEYS: [&str; 2] = ["feastol", "maxiter"];

impl Script {
    pub fn bindings(&self) -> &BTreeMap<String, Binding> {
        &self.bindings
    }

    /// Non-fatal findings, e.g. solver parameters the kernel ignores.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Declared default of each interface object that has one.
    pub fn defaults(&self) -> BTreeMap<String, InputValue> {
        self.inputs
            .iter()
            .filter_map(|i| {
                i.default.as_ref().map(|d| {
                    let v = match d {
                        LiteralValue::Scalar(v) => InputValue::Scalar(*v),
                        LiteralValue::Vector(v) => InputValue::Vector(v.clone()),
                    };
                    (i.name.clone(), v)
                })
            })
            .collect()
    }

    /// Total number of scalar decision variables.
    pub fn num_vars(&self) -> usize {
        self.variables.iter().map(|v| v.size).sum()
    }
}

/// Reads every component's code block as `.mhl` statements.
pub fn parse_script(manifest: &ModelManifest, source: &str) -> Result<Script, ScriptError> {
    let mut script = Script {
        inputs: Vec::new(),
        helpers: BTreeMap::new(),
        variables: Vec::new(),
        constraints: Vec::new(),
        objective: None,
        solver: Vec::new(),
        outputs: Vec::new(),
        executions: Vec::new(),
        bindings: BTreeMap::new(),
        warnings: Vec::new(),
    };
    let mut defined: BTreeSet<String> = BTreeSet::new();
    let mut define = |name: &str, site: &Site| -> Result<(), ScriptError> {
        if name == OBJECTIVE_NAME || BUILTINS.contains(&name) || !defined.insert(name.to_string()) {
            return Err(site.err(ScriptErrorKind::Duplicate(name.to_string())));
        }
        Ok(())
    };

    let mut components: Vec<_> = manifest.components.iter().collect();
    components.sort_by_key(|c| c.order);

    for comp in components {
        let code = comp.span.slice(source).ok_or_else(|| ScriptError {
            component: Some(comp.name.clone()),
            line: None,
            kind: ScriptErrorKind::InvalidStatement("component span lies outside the source".into()),
        })?;
        let first_line = source[..comp.span.start].matches('\n').count() + 1;
        let header = Site { component: comp.name.clone(), line: first_line };

        let interpreted = !matches!(
            comp.kind,
            ComponentKind::Problem | ComponentKind::Function | ComponentKind::Execution | ComponentKind::OutputFile
        );
        let mut statements = Vec::new();
        if interpreted {
            for (i, raw) in code.split('\n').enumerate() {
                let site = Site { component: comp.name.clone(), line: first_line + i };
                let text = syntax::strip_comment(raw, &manifest.comment_tag);
                match parse_statement(text) {
                    Ok(Some(s)) => statements.push((site, s)),
                    Ok(None) => {}
                    Err(msg) => return Err(site.err(ScriptErrorKind::Syntax(msg))),
                }
            }
        }

        let invalid = |site: &Site, what: &str| {
            site.err(ScriptErrorKind::InvalidStatement(format!(
                "{} blocks may only contain {what}",
                comp.kind
            )))
        };

        let binding = match comp.kind {
            ComponentKind::InterfaceObject => {
                define(&comp.name, &header)?;
                let mut default = None;
                for (site, stmt) in statements {
                    match stmt {
                        Statement::Assign { target, value } if target == comp.name && default.is_none() => {
                            let lit = value.as_literal().ok_or_else(|| {
                                site.err(ScriptErrorKind::InvalidStatement(format!(
                                    "default of {} must be a number or a vector of numbers",
                                    comp.name
                                )))
                            })?;
                            default = Some(lit);
                        }
                        _ => return Err(invalid(&site, &format!("one literal assignment to {}", comp.name))),
                    }
                }
                let has_default = default.is_some();
                script.inputs.push(InputDecl { name: comp.name.clone(), site: header.clone(), default });
                Binding::Input { has_default }
            }
            ComponentKind::InterfaceFile => {
                define(&comp.name, &header)?;
                for (site, stmt) in statements {
                    match stmt {
                        Statement::File { target } if target == comp.name => {}
                        _ => return Err(invalid(&site, &format!("`{} = file()`", comp.name))),
                    }
                }
                script.inputs.push(InputDecl { name: comp.name.clone(), site: header.clone(), default: None });
                Binding::InputFile
            }
            ComponentKind::HelperObject => {
                let mut names = Vec::new();
                for (site, stmt) in statements {
                    let Statement::Assign { target, value } = stmt else {
                        return Err(invalid(&site, "assignments"));
                    };
                    define(&target, &site)?;
                    names.push(target.clone());
                    script.helpers.insert(target, (site, value));
                }
                Binding::Helpers(names)
            }
            ComponentKind::Variable => {
                let mut names = Vec::new();
                for (site, stmt) in statements {
                    let Statement::Variable { target, size, lower, upper } = stmt else {
                        return Err(invalid(&site, "`x = variable(n)` declarations"));
                    };
                    define(&target, &site)?;
                    names.push(target.clone());
                    script.variables.push(VarDecl { name: target, site, size, lower, upper });
                }
                Binding::Variables(names)
            }
            ComponentKind::Constraint => {
                let count = statements.len();
                for (site, stmt) in statements {
                    let Statement::Relation { lhs, rel, rhs } = stmt else {
                        return Err(invalid(&site, "relations"));
                    };
                    script.constraints.push((site, lhs, rel, rhs));
                }
                Binding::Constraints { statements: count }
            }
            ComponentKind::Objective => {
                for (site, stmt) in statements {
                    let Statement::Objective { sense, expr } = stmt else {
                        return Err(invalid(&site, "`minimize`/`maximize` statements"));
                    };
                    if script.objective.is_some() {
                        return Err(site.err(ScriptErrorKind::InvalidStatement(
                            "the native kernel supports a single objective".into(),
                        )));
                    }
                    script.objective = Some((site, sense, expr));
                }
                Binding::Objective
            }
            ComponentKind::Solver => {
                for (site, stmt) in statements {
                    let Statement::Assign { target, value } = stmt else {
                        return Err(invalid(&site, "parameter assignments"));
                    };
                    if SOLVER_KEYS.contains(&target.as_str()) {
                        script.solver.push((site, target, value));
                    } else {
                        script.warnings.push(format!(
                            "{} (line {}): solver parameter \"{target}\" is ignored by the native kernel",
                            site.component, site.line
                        ));
                    }
                }
                Binding::Solver
            }
            ComponentKind::OutputObject => {
                let mut assigns = Vec::new();
                for (site, stmt) in statements {
                    let Statement::Assign { target, value } = stmt else {
                        return Err(invalid(&site, "assignments"));
                    };
                    define(&target, &site)?;
                    assigns.push((site, target, value));
                }
                if !assigns.iter().any(|(_, t, _)| *t == comp.name) {
                    return Err(header.err(ScriptErrorKind::InvalidStatement(format!(
                        "output {0} never assigns {0}",
                        comp.name
                    ))));
                }
                script.outputs.push(OutputDecl { component: comp.name.clone(), assigns });
                Binding::Output
            }
            ComponentKind::Execution => {
                script.executions.push(comp.name.clone());
                Binding::Execution
            }
            ComponentKind::Problem | ComponentKind::Function | ComponentKind::OutputFile => Binding::Inert,
        };
        script.bindings.insert(comp.name.clone(), binding);
    }

    Checker::new(&script).run()?;
    Ok(script)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Scalar,
    Vector(Option<usize>),
    Unknown,
}

/// Static checks that need no input values: names resolve, the model stays
/// linear, and shapes that are fixed by the source agree.
struct Checker<'a> {
    script: &'a Script,
    inputs: BTreeSet<&'a str>,
    vars: BTreeMap<&'a str, usize>,
    visiting: BTreeSet<String>,
}

impl<'a> Checker<'a> {
    fn new(script: &'a Script) -> Self {
        Checker {
            script,
            inputs: script.inputs.iter().map(|i| i.name.as_str()).collect(),
            vars: script.variables.iter().map(|v| (v.name.as_str(), v.size)).collect(),
            visiting: BTreeSet::new(),
        }
    }

    fn run(mut self) -> Result<(), ScriptError> {
        let s = self.script;
        for (name, (site, expr)) in &s.helpers {
            self.visiting.insert(name.clone());
            self.check(expr, site, &BTreeSet::new(), true)?;
            self.visiting.clear();
        }
        for v in &s.variables {
            for e in v.lower.iter().chain(&v.upper) {
                if self.check(e, &v.site, &BTreeSet::new(), true)? {
                    return Err(v.site.err(ScriptErrorKind::InvalidStatement(
                        "variable bounds must not depend on variables".into(),
                    )));
                }
                if let Shape::Vector(Some(len)) = self.shape(e, &v.site)? {
                    if len != v.size {
                        return Err(v.site.err(ScriptErrorKind::DimensionMismatch { left: v.size, right: len }));
                    }
                }
            }
        }
        for (site, lhs, _, rhs) in &s.constraints {
            self.check(lhs, site, &BTreeSet::new(), true)?;
            self.check(rhs, site, &BTreeSet::new(), true)?;
            combine(self.shape(lhs, site)?, self.shape(rhs, site)?).map_err(|k| site.err(k))?;
        }
        if let Some((site, _, expr)) = &s.objective {
            self.check(expr, site, &BTreeSet::new(), true)?;
            if let Shape::Vector(_) = self.shape(expr, site)? {
                return Err(site.err(ScriptErrorKind::TypeMismatch("objective must be a scalar".into())));
            }
        }
        for (site, _, expr) in &s.solver {
            if self.check(expr, site, &BTreeSet::new(), true)? {
                return Err(site.err(ScriptErrorKind::InvalidParameter(
                    "solver parameters must not depend on variables".into(),
                )));
            }
        }
        let mut locals: BTreeSet<&str> = [OBJECTIVE_NAME].into();
        for out in &s.outputs {
            for (site, target, expr) in &out.assigns {
                self.check(expr, site, &locals, false)?;
                self.shape_with_locals(expr, site, &locals)?;
                locals.insert(target);
            }
        }
        Ok(())
    }

    /// Resolves names and, when `linear`, rejects products of
    /// variable-dependent terms. Returns whether `e` depends on variables.
    fn check(&mut self, e: &Expr, site: &Site, locals: &BTreeSet<&str>, linear: bool) -> Result<bool, ScriptError> {
        Ok(match e {
            Expr::Num(_) => false,
            Expr::Name(n) => {
                if locals.contains(n.as_str()) {
                    false
                } else if self.vars.contains_key(n.as_str()) {
                    true
                } else if self.inputs.contains(n.as_str()) {
                    false
                } else if let Some((hsite, hexpr)) = self.script.helpers.get(n) {
                    if !self.visiting.insert(n.clone()) {
                        // Cycles are reported when values are computed.
                        false
                    } else {
                        let d = self.check(hexpr, hsite, &BTreeSet::new(), true)?;
                        self.visiting.remove(n);
                        d
                    }
                } else {
                    return Err(site.err(ScriptErrorKind::UnknownIdentifier(n.clone())));
                }
            }
            Expr::Vector(items) => {
                let mut any = false;
                for i in items {
                    any |= self.check(i, site, locals, linear)?;
                }
                any
            }
            Expr::Call(f, args) => {
                if !BUILTINS.contains(&f.as_str()) {
                    return Err(site.err(ScriptErrorKind::UnknownIdentifier(f.clone())));
                }
                if args.len() != 1 {
                    return Err(site.err(ScriptErrorKind::InvalidStatement(format!(
                        "{f} takes exactly one argument"
                    ))));
                }
                self.check(&args[0], site, locals, linear)?
            }
            Expr::Index(base, idx) => {
                let b = self.check(base, site, locals, linear)?;
                if self.check(idx, site, locals, linear)? {
                    return Err(site.err(ScriptErrorKind::TypeMismatch(
                        "index must not depend on variables".into(),
                    )));
                }
                b
            }
            Expr::Neg(a) => self.check(a, site, locals, linear)?,
            Expr::Bin(op, a, b) => {
                let da = self.check(a, site, locals, linear)?;
                let db = self.check(b, site, locals, linear)?;
                if linear && *op == BinOp::Mul && da && db {
                    return Err(site.err(ScriptErrorKind::Nonlinear));
                }
                da || db
            }
        })
    }

    fn shape(&mut self, e: &Expr, site: &Site) -> Result<Shape, ScriptError> {
        self.shape_with_locals(e, site, &BTreeSet::new())
    }

    fn shape_with_locals(&mut self, e: &Expr, site: &Site, locals: &BTreeSet<&str>) -> Result<Shape, ScriptError> {
        Ok(match e {
            Expr::Num(_) => Shape::Scalar,
            Expr::Name(n) => {
                if locals.contains(n.as_str()) {
                    Shape::Unknown
                } else if let Some(&size) = self.vars.get(n.as_str()) {
                    Shape::Vector(Some(size))
                } else if let Some((hsite, hexpr)) = self.script.helpers.get(n) {
                    if !self.visiting.insert(n.clone()) {
                        Shape::Unknown
                    } else {
                        let s = self.shape(hexpr, hsite)?;
                        self.visiting.remove(n);
                        s
                    }
                } else {
                    Shape::Unknown
                }
            }
            Expr::Vector(items) => {
                for i in items {
                    if let Shape::Vector(_) = self.shape_with_locals(i, site, locals)? {
                        return Err(site.err(ScriptErrorKind::TypeMismatch(
                            "vector elements must be scalars".into(),
                        )));
                    }
                }
                Shape::Vector(Some(items.len()))
            }
            Expr::Call(_, _) => Shape::Scalar,
            Expr::Index(base, idx) => {
                let bs = self.shape_with_locals(base, site, locals)?;
                if bs == Shape::Scalar {
                    return Err(site.err(ScriptErrorKind::TypeMismatch("only vectors can be indexed".into())));
                }
                if let (Shape::Vector(Some(len)), Some(LiteralValue::Scalar(k))) = (bs, idx.as_literal()) {
                    if k < 0.0 || k.fract() != 0.0 || k as usize >= len {
                        return Err(site.err(ScriptErrorKind::IndexOutOfRange { index: k, len }));
                    }
                }
                Shape::Scalar
            }
            Expr::Neg(a) => self.shape_with_locals(a, site, locals)?,
            Expr::Bin(_, a, b) => {
                let sa = self.shape_with_locals(a, site, locals)?;
                let sb = self.shape_with_locals(b, site, locals)?;
                combine(sa, sb).map_err(|k| site.err(k))?
            }
        })
    }
}

fn combine(a: Shape, b: Shape) -> Result<Shape, ScriptErrorKind> {
    Ok(match (a, b) {
        (Shape::Vector(Some(x)), Shape::Vector(Some(y))) if x != y => {
            return Err(ScriptErrorKind::DimensionMismatch { left: x, right: y })
        }
        (Shape::Vector(Some(x)), _) | (_, Shape::Vector(Some(x))) => Shape::Vector(Some(x)),
        (Shape::Vector(None), _) | (_, Shape::Vector(None)) => Shape::Vector(None),
        (Shape::Scalar, Shape::Scalar) => Shape::Scalar,
        _ => Shape::Unknown,
    })
}

/// A concrete LP built from a [`Script`] and run-time inputs.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: Problem<f64>,
    pub params: SolveParams<f64>,
    /// Constant term of the objective expression, not part of `problem`.
    pub objective_offset: f64,
    inputs: BTreeMap<String, Value>,
    layout: BTreeMap<String, (usize, usize)>,
}

enum Mode<'a> {
    Build,
    At { x: &'a [f64] },
}

struct Evaluator<'a> {
    script: &'a Script,
    inputs: &'a BTreeMap<String, Value>,
    layout: &'a BTreeMap<String, (usize, usize)>,
    mode: Mode<'a>,
    helpers: BTreeMap<String, Value>,
    in_progress: BTreeSet<String>,
    locals: BTreeMap<String, Value>,
}

impl<'a> Evaluator<'a> {
    fn lookup(&mut self, name: &str, site: &Site) -> Result<Value, ScriptError> {
        if let Some(v) = self.locals.get(name) {
            return Ok(v.clone());
        }
        if let Some(&(offset, size)) = self.layout.get(name) {
            return Ok(match self.mode {
                Mode::Build => Value::Vector((offset..offset + size).map(Affine::var).collect()),
                Mode::At { x, .. } => Value::numbers(&x[offset..offset + size]),
            });
        }
        if let Some(v) = self.inputs.get(name) {
            return Ok(v.clone());
        }
        if let Some(v) = self.helpers.get(name) {
            return Ok(v.clone());
        }
        if let Some((hsite, expr)) = self.script.helpers.get(name) {
            if !self.in_progress.insert(name.to_string()) {
                return Err(hsite.err(ScriptErrorKind::CyclicHelper(name.to_string())));
            }
            let v = self.eval(expr, hsite)?;
            self.in_progress.remove(name);
            self.helpers.insert(name.to_string(), v.clone());
            return Ok(v);
        }
        Err(site.err(ScriptErrorKind::UnknownIdentifier(name.to_string())))
    }

    fn eval(&mut self, e: &Expr, site: &Site) -> Result<Value, ScriptError> {
        let wrap = |k: ScriptErrorKind| site.err(k);
        match e {
            Expr::Num(v) => Ok(Value::number(*v)),
            Expr::Name(n) => self.lookup(n, site),
            Expr::Vector(items) => {
                let mut out = Vec::with_capacity(items.len());
                for i in items {
                    match self.eval(i, site)? {
                        Value::Scalar(a) => out.push(a),
                        Value::Vector(_) => {
                            return Err(wrap(ScriptErrorKind::TypeMismatch("vector elements must be scalars".into())))
                        }
                    }
                }
                Ok(Value::Vector(out))
            }
            Expr::Index(base, idx) => {
                let b = self.eval(base, site)?;
                let i = self.eval(idx, site)?;
                b.index(&i).map_err(wrap)
            }
            Expr::Neg(a) => Ok(self.eval(a, site)?.neg()),
            Expr::Call(_, args) => Ok(self.eval(&args[0], site)?.sum()),
            Expr::Bin(op, a, b) => {
                let va = self.eval(a, site)?;
                let vb = self.eval(b, site)?;
                match op {
                    BinOp::Add => va.add(&vb),
                    BinOp::Sub => va.sub(&vb),
                    BinOp::Mul => va.mul(&vb),
                }
                .map_err(wrap)
            }
        }
    }

    fn constant(&mut self, e: &Expr, site: &Site, what: &str) -> Result<Value, ScriptError> {
        let v = self.eval(e, site)?;
        if !v.is_constant() {
            return Err(site.err(ScriptErrorKind::TypeMismatch(format!("{what} must not depend on variables"))));
        }
        Ok(v)
    }
}

fn scalar_of(v: &Value, site: &Site, what: &str) -> Result<f64, ScriptError> {
    match v {
        Value::Scalar(a) => Ok(a.constant),
        Value::Vector(_) => Err(site.err(ScriptErrorKind::TypeMismatch(format!("{what} must be a scalar, got {}", v.shape())))),
    }
}

/// Resolves inputs and helpers and assembles the LP.
pub fn instantiate(script: &Script, inputs: &BTreeMap<String, InputValue>) -> Result<Instance, ScriptError> {
    let mut resolved = BTreeMap::new();
    for decl in &script.inputs {
        let value = match (inputs.get(&decl.name), &decl.default) {
            (Some(InputValue::Scalar(v)), _) => Value::number(*v),
            (Some(InputValue::Vector(v)), _) => Value::numbers(v),
            (Some(InputValue::Text(_)), _) => {
                return Err(decl.site.err(ScriptErrorKind::TypeMismatch(format!(
                    "input {} is text; the native kernel needs a number or vector",
                    decl.name
                ))))
            }
            (None, Some(LiteralValue::Scalar(v))) => Value::number(*v),
            (None, Some(LiteralValue::Vector(v))) => Value::numbers(v),
            (None, None) => return Err(decl.site.err(ScriptErrorKind::MissingInput(decl.name.clone()))),
        };
        resolved.insert(decl.name.clone(), value);
    }

    let mut layout = BTreeMap::new();
    let mut names = Vec::new();
    let mut n = 0;
    for v in &script.variables {
        layout.insert(v.name.clone(), (n, v.size));
        names.extend((0..v.size).map(|i| format!("{}[{i}]", v.name)));
        n += v.size;
    }

    let mut ev = Evaluator {
        script,
        inputs: &resolved,
        layout: &layout,
        mode: Mode::Build,
        helpers: BTreeMap::new(),
        in_progress: BTreeSet::new(),
        locals: BTreeMap::new(),
    };
    // Evaluate every helper so cycles and shape errors surface even when
    // unused.
    for (name, (site, _)) in &script.helpers {
        ev.lookup(name, site)?;
    }

    let mut bounds = vec![Bounds::FREE; n];
    for v in &script.variables {
        let (offset, size) = layout[&v.name];
        let mut side = |e: &Option<Expr>| -> Result<Option<Vec<f64>>, ScriptError> {
            let Some(e) = e else { return Ok(None) };
            match ev.constant(e, &v.site, "variable bounds")? {
                Value::Scalar(a) => Ok(Some(vec![a.constant; size])),
                Value::Vector(items) if items.len() == size => Ok(Some(items.iter().map(|a| a.constant).collect())),
                Value::Vector(items) => {
                    Err(v.site.err(ScriptErrorKind::DimensionMismatch { left: size, right: items.len() }))
                }
            }
        };
        let lower = side(&v.lower)?;
        let upper = side(&v.upper)?;
        for i in 0..size {
            bounds[offset + i] = Bounds { lower: lower.as_ref().map(|l| l[i]), upper: upper.as_ref().map(|u| u[i]) };
            if let (Some(l), Some(u)) = (bounds[offset + i].lower, bounds[offset + i].upper) {
                if l > u {
                    return Err(v.site.err(ScriptErrorKind::InvalidStatement(format!(
                        "lower bound {l} exceeds upper bound {u} for {}[{i}]",
                        v.name
                    ))));
                }
            }
        }
    }

    let (sense, objective, objective_offset) = match &script.objective {
        Some((site, sense, expr)) => match ev.eval(expr, site)? {
            Value::Scalar(a) => (*sense, a.coefficients(n), a.constant),
            v => {
                return Err(site.err(ScriptErrorKind::TypeMismatch(format!(
                    "objective must be a scalar, got {}",
                    v.shape()
                ))))
            }
        },
        None => (Sense::Minimize, vec![0.0; n], 0.0),
    };

    let mut problem = Problem::new(sense, objective);
    problem.bounds = bounds;
    problem.names = names;
    for (site, lhs, rel, rhs) in &script.constraints {
        let l = ev.eval(lhs, site)?;
        let r = ev.eval(rhs, site)?;
        let diff = l.sub(&r).map_err(|k| site.err(k))?;
        for a in diff.elements() {
            problem = problem.with_row(a.coefficients(n), *rel, -a.constant);
        }
    }

    let mut params = SolveParams::default();
    for (site, key, expr) in &script.solver {
        let v = ev.constant(expr, site, "solver parameters")?;
        let v = scalar_of(&v, site, key)?;
        match key.as_str() {
            "feastol" => {
                if !v.is_finite() || v <= 0.0 {
                    return Err(site.err(ScriptErrorKind::InvalidParameter(format!("feastol must be positive, got {v}"))));
                }
                params.feastol = v;
            }
            "maxiter" => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(site.err(ScriptErrorKind::InvalidParameter(format!(
                        "maxiter must be a positive integer, got {v}"
                    ))));
                }
                params.maxiter = v as usize;
            }
            _ => unreachable!("filtered at parse time"),
        }
    }

    Ok(Instance { problem, params, objective_offset, inputs: resolved, layout })
}

/// Values of the output, objective and execution components at the optimum.
pub fn evaluate_outputs(
    script: &Script,
    instance: &Instance,
    solution: &Solution<f64>,
) -> Result<BTreeMap<String, serde_json::Value>, ScriptError> {
    let (Status::Optimal, Some(x), Some(obj)) = (solution.status, &solution.x, solution.objective) else {
        return Err(ScriptError { component: None, line: None, kind: ScriptErrorKind::NotOptimal(solution.status) });
    };
    let objective = obj + instance.objective_offset;
    let mut results = BTreeMap::new();
    for name in &script.executions {
        results.insert(name.clone(), serde_json::to_value(solution.info.to_map()).expect("map serializes"));
    }
    for (name, binding) in &script.bindings {
        if *binding == Binding::Objective {
            results.insert(name.clone(), serde_json::json!(objective));
        }
    }

    let mut ev = Evaluator {
        script,
        inputs: &instance.inputs,
        layout: &instance.layout,
        mode: Mode::At { x },
        helpers: BTreeMap::new(),
        in_progress: BTreeSet::new(),
        locals: BTreeMap::from([(OBJECTIVE_NAME.to_string(), Value::number(objective))]),
    };
    for out in &script.outputs {
        for (site, target, expr) in &out.assigns {
            let v = ev.eval(expr, site)?;
            ev.locals.insert(target.clone(), v);
        }
        results.insert(out.component.clone(), ev.locals[&out.component].to_json());
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::simplex::solve;
    use crate::parser::{parse, ParserConfig};

    fn script(src: &str) -> Result<Script, ScriptError> {
        let (m, diags) = parse(src, &ParserConfig::new("#").unwrap());
        assert!(diags.is_empty(), "{diags:?}");
        parse_script(&m, src)
    }

    fn no_inputs() -> BTreeMap<String, InputValue> {
        BTreeMap::new()
    }

    #[test]
    fn variable_block_with_lower_bound() {
        let s = script("#@ Variable: x\nx = variable(2) >= 0\n").unwrap();
        assert_eq!(s.num_vars(), 2);
        let inst = instantiate(&s, &no_inputs()).unwrap();
        assert_eq!(inst.problem.num_vars(), 2);
        assert!(inst.problem.bounds.iter().all(|b| b.lower == Some(0.0) && b.upper.is_none()));
        assert_eq!(inst.problem.names, ["x[0]", "x[1]"]);
    }

    #[test]
    fn constraint_translates_to_row() {
        let s = script(
            "#@ Helper Object: limits\ncap = 1\n#@ Variable: x\nx = variable(2)\n#@ Constraint: c\nx[0] + x[1] <= cap\n",
        )
        .unwrap();
        let inst = instantiate(&s, &no_inputs()).unwrap();
        assert_eq!(inst.problem.rows.len(), 1);
        let row = &inst.problem.rows[0];
        assert_eq!(row.coeffs, vec![1.0, 1.0]);
        assert_eq!(row.rel, Relation::Le);
        assert_eq!(row.rhs, 1.0);
    }

    #[test]
    fn product_of_variables_is_rejected() {
        let err = script("#@ Variable: x\nx = variable(2)\n#@ Objective: obj\nminimize x[0]*x[1]\n").unwrap_err();
        assert_eq!(err.kind, ScriptErrorKind::Nonlinear);
        assert_eq!(err.component.as_deref(), Some("obj"));
        assert_eq!(err.line, Some(4));
    }

    #[test]
    fn nonlinear_through_helper() {
        let err = script(
            "#@ Variable: x\nx = variable(2)\n#@ Helper Object: h\nsq = x[0] * x[0]\n#@ Objective: obj\nminimize sq\n",
        )
        .unwrap_err();
        assert_eq!(err.kind, ScriptErrorKind::Nonlinear);
        assert_eq!(err.component.as_deref(), Some("h"));
    }

    #[test]
    fn unknown_identifier() {
        let err = script("#@ Variable: x\nx = variable(1)\n#@ Constraint: c\nx <= y\n").unwrap_err();
        assert_eq!(err.kind, ScriptErrorKind::UnknownIdentifier("y".into()));
        assert_eq!(err.line, Some(4));
    }

    #[test]
    fn static_dimension_mismatch() {
        let err = script("#@ Variable: x\nx = variable(2)\n#@ Constraint: c\nx <= [1, 2, 3]\n").unwrap_err();
        assert_eq!(err.kind, ScriptErrorKind::DimensionMismatch { left: 2, right: 3 });
        let err = script("#@ Variable: x\nx = variable(2)\n#@ Constraint: c\nx[2] <= 1\n").unwrap_err();
        assert!(matches!(err.kind, ScriptErrorKind::IndexOutOfRange { .. }));
    }

    #[test]
    fn input_overrides_default() {
        let s = script("#@ Interface Object: feastol\nfeastol = 1e-8\n#@ Solver: solver\nfeastol = feastol\nmaxiter = 100\n")
            .unwrap();
        let inst = instantiate(&s, &no_inputs()).unwrap();
        assert_eq!(inst.params.feastol, 1e-8);
        let inputs = BTreeMap::from([("feastol".to_string(), InputValue::Scalar(1e-3))]);
        let inst = instantiate(&s, &inputs).unwrap();
        assert_eq!(inst.params.feastol, 1e-3);
        assert_eq!(inst.params.maxiter, 100);
    }

    #[test]
    fn missing_input_is_named() {
        let s = script("#@ Interface Object: demand\n#@ Variable: x\nx = variable(1) >= demand\n").unwrap();
        let err = instantiate(&s, &no_inputs()).unwrap_err();
        assert_eq!(err.kind, ScriptErrorKind::MissingInput("demand".into()));
    }

    #[test]
    fn text_input_is_type_mismatch() {
        let s = script("#@ Interface Object: d\nd = 1\n").unwrap();
        let inputs = BTreeMap::from([("d".to_string(), InputValue::Text("abc".into()))]);
        assert!(matches!(instantiate(&s, &inputs).unwrap_err().kind, ScriptErrorKind::TypeMismatch(_)));
    }

    #[test]
    fn vector_input_shape_checked_at_instantiate() {
        let s = script("#@ Interface Object: ub\nub = [1, 2]\n#@ Variable: x\nx = variable(2) <= ub\n").unwrap();
        let inputs = BTreeMap::from([("ub".to_string(), InputValue::Vector(vec![1.0, 2.0, 3.0]))]);
        let err = instantiate(&s, &inputs).unwrap_err();
        assert_eq!(err.kind, ScriptErrorKind::DimensionMismatch { left: 2, right: 3 });
        let inputs = BTreeMap::from([("ub".to_string(), InputValue::Scalar(4.0))]);
        assert!(instantiate(&s, &inputs).is_ok());
    }

    #[test]
    fn cyclic_helpers() {
        let s = script("#@ Helper Object: h\na = b + 1\nb = a * 2\n").unwrap();
        let err = instantiate(&s, &no_inputs()).unwrap_err();
        assert!(matches!(err.kind, ScriptErrorKind::CyclicHelper(_)));
    }

    #[test]
    fn helpers_in_any_order() {
        let s = script("#@ Helper Object: h\na = b + 1\nb = 2\n#@ Variable: x\nx = variable(1) >= a\n").unwrap();
        let inst = instantiate(&s, &no_inputs()).unwrap();
        assert_eq!(inst.problem.bounds[0].lower, Some(3.0));
    }

    #[test]
    fn unknown_solver_key_warns() {
        let s = script("#@ Solver: s\ntolerance = 1\n").unwrap();
        assert_eq!(s.warnings().len(), 1);
        assert!(s.warnings()[0].contains("tolerance"));
    }

    const SAMPLE: &str = "\
#@ Variable: x
x = variable(2) >= 0
#@ Constraint: limits
x[0] + x[1] <= 4
x[0] + 3*x[1] <= 6
#@ Objective: profit
maximize 3*x[0] + 2*x[1]
#@ Problem: problem
#@ Execution: info
#@ Output Object: total
total = x[0] + x[1]
";

    #[test]
    fn outputs_at_optimum() {
        let s = script(SAMPLE).unwrap();
        let inst = instantiate(&s, &no_inputs()).unwrap();
        let sol = solve(&inst.problem, &inst.params);
        let out = evaluate_outputs(&s, &inst, &sol).unwrap();
        assert!((out["total"].as_f64().unwrap() - 4.0).abs() < 1e-9);
        assert!((out["profit"].as_f64().unwrap() - 12.0).abs() < 1e-9);
        let info = out["info"].as_object().unwrap();
        let mut keys: Vec<_> = info.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["iterations", "status", "time"]);
        assert_eq!(info["status"], "optimal");
    }

    #[test]
    fn no_outputs_means_empty_map() {
        let s = script("#@ Variable: x\nx = variable(1) >= 1\n#@ Constraint: c\nx <= 2\n").unwrap();
        let inst = instantiate(&s, &no_inputs()).unwrap();
        let sol = solve(&inst.problem, &inst.params);
        assert!(evaluate_outputs(&s, &inst, &sol).unwrap().is_empty());
    }

    #[test]
    fn outputs_refuse_non_optimal() {
        let s = script("#@ Variable: x\nx = variable(1)\n#@ Constraint: c\nx <= 0\nx >= 1\n").unwrap();
        let inst = instantiate(&s, &no_inputs()).unwrap();
        let sol = solve(&inst.problem, &inst.params);
        assert_eq!(sol.status, Status::Infeasible);
        let err = evaluate_outputs(&s, &inst, &sol).unwrap_err();
        assert_eq!(err.kind, ScriptErrorKind::NotOptimal(Status::Infeasible));
    }

    #[test]
    fn objective_constant_is_reported() {
        let s = script("#@ Variable: x\nx = variable(1) >= 3\n#@ Objective: o\nminimize sum(x) + 10\n").unwrap();
        let inst = instantiate(&s, &no_inputs()).unwrap();
        let sol = solve(&inst.problem, &inst.params);
        let out = evaluate_outputs(&s, &inst, &sol).unwrap();
        assert!((out["o"].as_f64().unwrap() - 13.0).abs() < 1e-9);
    }

    #[test]
    fn bindings_cover_components() {
        let s = script(SAMPLE).unwrap();
        let b = s.bindings();
        assert_eq!(b.len(), 6);
        assert_eq!(b["x"], Binding::Variables(vec!["x".into()]));
        assert_eq!(b["limits"], Binding::Constraints { statements: 2 });
        assert_eq!(b["problem"], Binding::Inert);
    }

    #[test]
    fn redefinition_is_rejected() {
        let err = script("#@ Variable: x\nx = variable(1)\n#@ Helper Object: h\nx = 2\n").unwrap_err();
        assert_eq!(err.kind, ScriptErrorKind::Duplicate("x".into()));
    }
}
