//! Brute-force reference solver for small LPs.
//!
//! Enumerates every basic point (every choice of `n` constraints held with
//! equality) and every extreme ray of the recession cone. It shares no code
//! with the simplex implementation and is meant for cross-checking it.

#![allow(clippy::needless_range_loop)]

use std::time::Instant;

use thiserror::Error;

use super::problem::{Problem, Relation, Sense, Solution, Status};
use crate::scalar::Scalar;

pub const MAX_VARS: usize = 4;
pub const MAX_CONSTRAINTS: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("instance too large for enumeration: {vars} variables, {constraints} rows and bounds (limits {MAX_VARS} and {MAX_CONSTRAINTS})")]
pub struct TooLarge {
    pub vars: usize,
    pub constraints: usize,
}

struct Halfspace<S> {
    normal: Vec<S>,
    rel: Relation,
    rhs: S,
}

/// Solves `p` by exhaustive enumeration.
pub fn oracle_solve<S: Scalar>(p: &Problem<S>) -> Result<Solution<S>, TooLarge> {
    let n = p.num_vars();
    let count = p.num_rows() + p.bound_count();
    if n > MAX_VARS || count > MAX_CONSTRAINTS {
        return Err(TooLarge { vars: n, constraints: count });
    }
    let started = Instant::now();
    let tol = S::lit(1e-7);

    let mut cons: Vec<Halfspace<S>> = p
        .rows
        .iter()
        .map(|r| Halfspace { normal: r.coeffs.clone(), rel: r.rel, rhs: r.rhs })
        .collect();
    for (j, b) in p.bounds.iter().enumerate() {
        if let Some(l) = b.lower {
            cons.push(Halfspace { normal: unit(n, j), rel: Relation::Ge, rhs: l });
        }
        if let Some(u) = b.upper {
            cons.push(Halfspace { normal: unit(n, j), rel: Relation::Le, rhs: u });
        }
    }

    // Directions along which every constraint is constant. If the objective
    // moves along one of them the problem is unbounded once feasible;
    // otherwise pinning them to zero makes the polyhedron pointed without
    // changing the optimum.
    let normals: Vec<Vec<S>> = cons.iter().map(|c| c.normal.clone()).collect();
    let lineality = null_space(&normals, n, tol);
    let objective_moves = lineality.iter().any(|d| dot(&p.objective, d).abs() > tol);
    for d in &lineality {
        cons.push(Halfspace { normal: d.clone(), rel: Relation::Eq, rhs: S::zero() });
    }

    let better = |a: S, b: S| match p.sense {
        Sense::Minimize => a < b,
        Sense::Maximize => a > b,
    };

    let mut best: Option<(Vec<S>, S)> = None;
    for subset in subsets(cons.len(), n) {
        let a: Vec<Vec<S>> = subset.iter().map(|&i| cons[i].normal.clone()).collect();
        let b: Vec<S> = subset.iter().map(|&i| cons[i].rhs).collect();
        let Some(x) = solve_square(a, b, tol) else {
            continue;
        };
        let feasible = cons.iter().all(|c| c.rel.holds(dot(&c.normal, &x), c.rhs, tol));
        if !feasible {
            continue;
        }
        let obj = dot(&p.objective, &x);
        if best.as_ref().is_none_or(|(_, v)| better(obj, *v)) {
            best = Some((x, obj));
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let Some((x, obj)) = best else {
        return Ok(Solution::without_point(Status::Infeasible, 0, elapsed));
    };
    if objective_moves || has_improving_ray(p, &cons, n, tol) {
        return Ok(Solution::without_point(Status::Unbounded, 0, elapsed));
    }
    Ok(Solution::optimal(x, obj, 0, elapsed))
}

/// Looks for an extreme ray of the recession cone along which the objective
/// improves. Extreme rays of a pointed cone in `n` dimensions are the
/// one-dimensional solution sets of `n - 1` tight constraints.
fn has_improving_ray<S: Scalar>(p: &Problem<S>, cons: &[Halfspace<S>], n: usize, tol: S) -> bool {
    if n == 0 {
        return false;
    }
    for subset in subsets(cons.len(), n - 1) {
        let rows: Vec<Vec<S>> = subset.iter().map(|&i| cons[i].normal.clone()).collect();
        let dirs = null_space(&rows, n, tol);
        if dirs.len() != 1 {
            continue;
        }
        for sign in [S::one(), -S::one()] {
            let r: Vec<S> = dirs[0].iter().map(|&v| v * sign).collect();
            let in_cone = cons.iter().all(|c| c.rel.holds(dot(&c.normal, &r), S::zero(), tol));
            if !in_cone {
                continue;
            }
            let slope = dot(&p.objective, &r);
            let improves = match p.sense {
                Sense::Minimize => slope < -tol,
                Sense::Maximize => slope > tol,
            };
            if improves {
                return true;
            }
        }
    }
    false
}

fn unit<S: Scalar>(n: usize, j: usize) -> Vec<S> {
    let mut v = vec![S::zero(); n];
    v[j] = S::one();
    v
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&p, &q)| acc + p * q)
}

/// All `k`-element index subsets of `0..len` in lexicographic order.
fn subsets(len: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, len: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..len {
            if len - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, len, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= len {
        rec(0, len, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_square<S: Scalar>(mut a: Vec<Vec<S>>, mut b: Vec<S>, tol: S) -> Option<Vec<S>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() <= tol {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for i in col + 1..n {
            let f = a[i][col] / a[col][col];
            for k in col..n {
                a[i][k] = a[i][k] - f * a[col][k];
            }
            b[i] = b[i] - f * b[col];
        }
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let s = (i + 1..n).fold(b[i], |acc, k| acc - a[i][k] * x[k]);
        x[i] = s / a[i][i];
    }
    Some(x)
}

/// Unit-length basis of `{ d : rows · d = 0 }` via reduced row echelon form.
fn null_space<S: Scalar>(rows: &[Vec<S>], n: usize, tol: S) -> Vec<Vec<S>> {
    let mut m: Vec<Vec<S>> = rows.to_vec();
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..n {
        if r == m.len() {
            break;
        }
        let piv = (r..m.len()).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap());
        let Some(piv) = piv else { break };
        if m[piv][col].abs() <= tol {
            continue;
        }
        m.swap(r, piv);
        let p = m[r][col];
        for v in &mut m[r] {
            *v = *v / p;
        }
        for i in 0..m.len() {
            if i != r {
                let f = m[i][col];
                if f != S::zero() {
                    for k in 0..n {
                        m[i][k] = m[i][k] - f * m[r][k];
                    }
                }
            }
        }
        pivots.push(col);
        r += 1;
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut d = vec![S::zero(); n];
            d[f] = S::one();
            for (row, &pc) in pivots.iter().enumerate() {
                d[pc] = -m[row][f];
            }
            let norm = dot(&d, &d).sqrt();
            d.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}
