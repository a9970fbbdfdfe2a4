//! Dense two-phase primal simplex with Bland's rule.

#![allow(clippy::needless_range_loop)]

use std::time::Instant;

use super::problem::{Problem, Relation, Sense, Solution, SolveParams, Status};
use crate::scalar::Scalar;

/// How an original variable is expressed in the nonnegative working columns.
#[derive(Debug, Clone, Copy)]
enum VarMap<S> {
    /// `x = offset + y[col]`
    Shift { col: usize, offset: S },
    /// `x = offset - y[col]`
    Mirror { col: usize, offset: S },
    /// `x = y[pos] - y[neg]`
    Split { pos: usize, neg: usize },
}

struct StandardForm<S> {
    maps: Vec<VarMap<S>>,
    ncols: usize,
    /// Rows over working columns, rhs made nonnegative.
    rows: Vec<(Vec<S>, Relation, S)>,
    /// Minimization costs over working columns.
    cost: Vec<S>,
}

fn standard_form<S: Scalar>(p: &Problem<S>) -> StandardForm<S> {
    let mut maps = Vec::with_capacity(p.num_vars());
    let mut ncols = 0;
    let mut upper_rows = Vec::new();
    for b in &p.bounds {
        let map = match (b.lower, b.upper) {
            (Some(l), u) => {
                if let Some(u) = u {
                    upper_rows.push((ncols, u - l));
                }
                VarMap::Shift { col: ncols, offset: l }
            }
            (None, Some(u)) => VarMap::Mirror { col: ncols, offset: u },
            (None, None) => {
                ncols += 1;
                VarMap::Split { pos: ncols - 1, neg: ncols }
            }
        };
        ncols += 1;
        maps.push(map);
    }

    let spread = |coeffs: &[S]| -> (Vec<S>, S) {
        let mut out = vec![S::zero(); ncols];
        let mut constant = S::zero();
        for (&a, map) in coeffs.iter().zip(&maps) {
            match *map {
                VarMap::Shift { col, offset } => {
                    out[col] = out[col] + a;
                    constant = constant + a * offset;
                }
                VarMap::Mirror { col, offset } => {
                    out[col] = out[col] - a;
                    constant = constant + a * offset;
                }
                VarMap::Split { pos, neg } => {
                    out[pos] = out[pos] + a;
                    out[neg] = out[neg] - a;
                }
            }
        }
        (out, constant)
    };

    let mut rows = Vec::with_capacity(p.num_rows() + upper_rows.len());
    for row in &p.rows {
        let (coeffs, constant) = spread(&row.coeffs);
        rows.push((coeffs, row.rel, row.rhs - constant));
    }
    for (col, width) in upper_rows {
        let mut coeffs = vec![S::zero(); ncols];
        coeffs[col] = S::one();
        rows.push((coeffs, Relation::Le, width));
    }
    for (coeffs, rel, rhs) in &mut rows {
        if *rhs < S::zero() {
            coeffs.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *rel = rel.flipped();
        }
    }

    let (mut cost, _) = spread(&p.objective);
    if p.sense == Sense::Maximize {
        cost.iter_mut().for_each(|v| *v = -*v);
    }
    StandardForm { maps, ncols, rows, cost }
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

struct Tableau<S> {
    /// Constraint rows; the last entry of each is the right-hand side.
    a: Vec<Vec<S>>,
    /// Reduced costs; the last entry is minus the current objective.
    cost: Vec<S>,
    basis: Vec<usize>,
    /// Columns that may not enter the basis.
    blocked: Vec<bool>,
    iterations: usize,
    maxiter: usize,
    eps: S,
}

impl<S: Scalar> Tableau<S> {
    fn width(&self) -> usize {
        self.cost.len() - 1
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let w = self.width();
        let p = self.a[r][col];
        for v in &mut self.a[r] {
            *v = *v / p;
        }
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != S::zero() {
                for j in 0..=w {
                    row[j] = row[j] - f * pivot_row[j];
                }
                row[col] = S::zero();
            }
        }
        let f = self.cost[col];
        if f != S::zero() {
            for j in 0..=w {
                self.cost[j] = self.cost[j] - f * pivot_row[j];
            }
            self.cost[col] = S::zero();
        }
        self.basis[r] = col;
        self.iterations += 1;
    }

    /// Resets the cost row to `c` priced out against the current basis.
    fn price(&mut self, c: &[S]) {
        let w = self.width();
        self.cost = c.to_vec();
        self.cost.push(S::zero());
        for (i, row) in self.a.iter().enumerate() {
            let cb = c[self.basis[i]];
            if cb != S::zero() {
                for j in 0..=w {
                    self.cost[j] = self.cost[j] - cb * row[j];
                }
            }
        }
    }

    fn entering(&self) -> Option<usize> {
        (0..self.width()).find(|&j| !self.blocked[j] && self.cost[j] < -self.eps)
    }

    fn leaving(&self, col: usize) -> Option<usize> {
        let w = self.width();
        let mut best: Option<(usize, S)> = None;
        for (i, row) in self.a.iter().enumerate() {
            if row[col] > self.eps {
                let ratio = row[w] / row[col];
                best = match best {
                    None => Some((i, ratio)),
                    Some((k, r)) => {
                        if ratio < r - self.eps
                            || ((ratio - r).abs() <= self.eps && self.basis[i] < self.basis[k])
                        {
                            Some((i, ratio))
                        } else {
                            Some((k, r))
                        }
                    }
                };
            }
        }
        best.map(|(i, _)| i)
    }

    fn run(&mut self) -> Outcome {
        loop {
            let Some(col) = self.entering() else {
                return Outcome::Optimal;
            };
            let Some(row) = self.leaving(col) else {
                return Outcome::Unbounded;
            };
            if self.iterations >= self.maxiter {
                return Outcome::IterationLimit;
            }
            self.pivot(row, col);
        }
    }

    fn objective(&self) -> S {
        -self.cost[self.width()]
    }
}

/// Solves `p` with the two-phase simplex method.
///
/// # Panics
///
/// If `p` fails [`Problem::check`].
pub fn solve<S: Scalar>(p: &Problem<S>, params: &SolveParams<S>) -> Solution<S> {
    if let Err(e) = p.check() {
        panic!("malformed problem: {e}");
    }
    let started = Instant::now();
    let sf = standard_form(p);
    let m = sf.rows.len();

    let n_slack = sf.rows.iter().filter(|(_, rel, _)| *rel != Relation::Eq).count();
    let n_art = sf.rows.iter().filter(|(_, rel, _)| *rel != Relation::Le).count();
    let width = sf.ncols + n_slack + n_art;
    let art_start = sf.ncols + n_slack;

    let mut a = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let (mut next_slack, mut next_art) = (sf.ncols, art_start);
    for (coeffs, rel, rhs) in &sf.rows {
        let mut row = coeffs.clone();
        row.resize(width + 1, S::zero());
        row[width] = *rhs;
        match rel {
            Relation::Le => {
                row[next_slack] = S::one();
                basis.push(next_slack);
                next_slack += 1;
            }
            Relation::Ge => {
                row[next_slack] = -S::one();
                next_slack += 1;
                row[next_art] = S::one();
                basis.push(next_art);
                next_art += 1;
            }
            Relation::Eq => {
                row[next_art] = S::one();
                basis.push(next_art);
                next_art += 1;
            }
        }
        a.push(row);
    }

    let mut t = Tableau {
        a,
        cost: vec![S::zero(); width + 1],
        basis,
        blocked: vec![false; width],
        iterations: 0,
        maxiter: params.maxiter,
        eps: S::pivot_tolerance(),
    };
    let elapsed = |started: Instant| started.elapsed().as_secs_f64();

    if n_art > 0 {
        let mut phase1 = vec![S::zero(); width];
        for c in &mut phase1[art_start..] {
            *c = S::one();
        }
        t.price(&phase1);
        match t.run() {
            Outcome::IterationLimit => {
                return Solution::without_point(Status::IterationLimit, t.iterations, elapsed(started))
            }
            Outcome::Unbounded => unreachable!("phase one objective is bounded below"),
            Outcome::Optimal => {}
        }
        if t.objective() > params.feastol {
            return Solution::without_point(Status::Infeasible, t.iterations, elapsed(started));
        }

        // Drive remaining (zero-level) artificials out of the basis; rows
        // where that is impossible are redundant.
        let mut i = 0;
        while i < t.a.len() {
            if t.basis[i] >= art_start {
                let col = (0..art_start).find(|&j| t.a[i][j].abs() > t.eps);
                match col {
                    Some(j) => {
                        if t.iterations >= t.maxiter {
                            return Solution::without_point(
                                Status::IterationLimit,
                                t.iterations,
                                elapsed(started),
                            );
                        }
                        t.pivot(i, j);
                    }
                    None => {
                        t.a.remove(i);
                        t.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        for b in &mut t.blocked[art_start..] {
            *b = true;
        }
    }

    let mut phase2 = sf.cost.clone();
    phase2.resize(width, S::zero());
    t.price(&phase2);
    match t.run() {
        Outcome::IterationLimit => {
            return Solution::without_point(Status::IterationLimit, t.iterations, elapsed(started))
        }
        Outcome::Unbounded => {
            return Solution::without_point(Status::Unbounded, t.iterations, elapsed(started))
        }
        Outcome::Optimal => {}
    }

    let mut y = vec![S::zero(); sf.ncols];
    for (i, &col) in t.basis.iter().enumerate() {
        if col < sf.ncols {
            y[col] = t.a[i][width];
        }
    }
    let x: Vec<S> = sf
        .maps
        .iter()
        .map(|map| match *map {
            VarMap::Shift { col, offset } => offset + y[col],
            VarMap::Mirror { col, offset } => offset - y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let objective = p.objective_value(&x);
    Solution::optimal(x, objective, t.iterations, elapsed(started))
}
