use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl Relation {
    pub fn flipped(self) -> Self {
        match self {
            Relation::Le => Relation::Ge,
            Relation::Ge => Relation::Le,
            Relation::Eq => Relation::Eq,
        }
    }

    /// Whether `lhs rel rhs` holds up to `tol`.
    pub fn holds<S: Scalar>(self, lhs: S, rhs: S, tol: S) -> bool {
        match self {
            Relation::Le => lhs <= rhs + tol,
            Relation::Ge => lhs >= rhs - tol,
            Relation::Eq => (lhs - rhs).abs() <= tol,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        })
    }
}

/// One linear constraint `coeffs · x rel rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row<S> {
    pub coeffs: Vec<S>,
    pub rel: Relation,
    pub rhs: S,
}

impl<S: Scalar> Row<S> {
    pub fn new(coeffs: Vec<S>, rel: Relation, rhs: S) -> Self {
        Row { coeffs, rel, rhs }
    }

    pub fn activity(&self, x: &[S]) -> S {
        dot(&self.coeffs, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<S> {
    pub lower: Option<S>,
    pub upper: Option<S>,
}

impl<S> Bounds<S> {
    pub const FREE: Bounds<S> = Bounds { lower: None, upper: None };

    pub fn count(&self) -> usize {
        self.lower.is_some() as usize + self.upper.is_some() as usize
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProblemError {
    #[error("row {row} has {found} coefficients, expected {expected}")]
    RowLength { row: usize, found: usize, expected: usize },
    #[error("{found} bounds given for {expected} variables")]
    BoundsLength { found: usize, expected: usize },
    #[error("{found} names given for {expected} variables")]
    NamesLength { found: usize, expected: usize },
    #[error("variable {var} has lower bound above upper bound")]
    InvertedBounds { var: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// `minimize`/`maximize` `objective · x` subject to rows and variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem<S> {
    pub sense: Sense,
    pub objective: Vec<S>,
    pub rows: Vec<Row<S>>,
    pub bounds: Vec<Bounds<S>>,
    pub names: Vec<String>,
}

impl<S: Scalar> Problem<S> {
    /// Problem over `objective.len()` free variables named `x0, x1, ...`.
    pub fn new(sense: Sense, objective: Vec<S>) -> Self {
        let n = objective.len();
        Problem {
            sense,
            objective,
            rows: Vec::new(),
            bounds: vec![Bounds::FREE; n],
            names: (0..n).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn bound_count(&self) -> usize {
        self.bounds.iter().map(Bounds::count).sum()
    }

    pub fn with_row(mut self, coeffs: Vec<S>, rel: Relation, rhs: S) -> Self {
        self.rows.push(Row::new(coeffs, rel, rhs));
        self
    }

    pub fn with_bounds(mut self, var: usize, lower: Option<S>, upper: Option<S>) -> Self {
        self.bounds[var] = Bounds { lower, upper };
        self
    }

    /// Puts a lower bound of zero on every variable.
    pub fn nonnegative(mut self) -> Self {
        for b in &mut self.bounds {
            b.lower = Some(S::zero());
        }
        self
    }

    pub fn check(&self) -> Result<(), ProblemError> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(ProblemError::BoundsLength { found: self.bounds.len(), expected: n });
        }
        if self.names.len() != n {
            return Err(ProblemError::NamesLength { found: self.names.len(), expected: n });
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::NonFinite("objective"));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(ProblemError::RowLength { row: i, found: row.coeffs.len(), expected: n });
            }
            if row.coeffs.iter().any(|v| !v.is_finite()) || !row.rhs.is_finite() {
                return Err(ProblemError::NonFinite("constraint row"));
            }
        }
        for (j, b) in self.bounds.iter().enumerate() {
            if b.lower.is_some_and(|v| !v.is_finite()) || b.upper.is_some_and(|v| !v.is_finite()) {
                return Err(ProblemError::NonFinite("bounds"));
            }
            if let (Some(l), Some(u)) = (b.lower, b.upper) {
                if l > u {
                    return Err(ProblemError::InvertedBounds { var: j });
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[S]) -> S {
        dot(&self.objective, x)
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[S]) -> S {
        let mut worst = S::zero();
        for row in &self.rows {
            let lhs = row.activity(x);
            let v = match row.rel {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (b, &xj) in self.bounds.iter().zip(x) {
            if let Some(l) = b.lower {
                worst = worst.max(l - xj);
            }
            if let Some(u) = b.upper {
                worst = worst.max(xj - u);
            }
        }
        worst
    }

    pub fn is_feasible(&self, x: &[S], tol: S) -> bool {
        x.len() == self.num_vars() && self.max_violation(x) <= tol
    }
}

pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&p, &q)| acc + p * q)
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("feastol must be positive, got {0}")]
    Feastol(f64),
    #[error("maxiter must be at least 1")]
    Maxiter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveParams<S> {
    pub feastol: S,
    pub maxiter: usize,
}

impl<S: Scalar> SolveParams<S> {
    pub fn new(feastol: S, maxiter: usize) -> Result<Self, ParamsError> {
        if !feastol.is_finite() || feastol <= S::zero() {
            return Err(ParamsError::Feastol(feastol.to_f64().unwrap_or(f64::NAN)));
        }
        if maxiter == 0 {
            return Err(ParamsError::Maxiter);
        }
        Ok(SolveParams { feastol, maxiter })
    }
}

impl<S: Scalar> Default for SolveParams<S> {
    fn default() -> Self {
        SolveParams { feastol: S::default_feastol(), maxiter: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::IterationLimit => "iteration_limit",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Solver metadata reported alongside a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub status: String,
    pub iterations: usize,
    /// Wall-clock solve time in seconds.
    pub time: f64,
}

impl SolveInfo {
    pub fn to_map(&self) -> BTreeMap<String, serde_json::Value> {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => m.into_iter().collect(),
            _ => unreachable!("SolveInfo serializes to an object"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<S> {
    pub status: Status,
    pub x: Option<Vec<S>>,
    pub objective: Option<S>,
    pub iterations: usize,
    pub info: SolveInfo,
}

impl<S: Scalar> Solution<S> {
    pub(crate) fn without_point(status: Status, iterations: usize, time: f64) -> Self {
        Solution {
            status,
            x: None,
            objective: None,
            iterations,
            info: SolveInfo { status: status.as_str().to_string(), iterations, time },
        }
    }

    pub(crate) fn optimal(x: Vec<S>, objective: S, iterations: usize, time: f64) -> Self {
        Solution {
            status: Status::Optimal,
            x: Some(x),
            objective: Some(objective),
            iterations,
            info: SolveInfo { status: Status::Optimal.as_str().to_string(), iterations, time },
        }
    }
}
