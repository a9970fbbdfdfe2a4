//! Linear programs: problem types, the simplex solver, a brute-force
//! reference solver and the `.mhl` modeling language.

pub mod oracle;
pub mod problem;
pub mod script;
pub mod simplex;

pub use oracle::{oracle_solve, TooLarge};
pub use problem::{
    Bounds, ParamsError, Problem, ProblemError, Relation, Row, Sense, Solution, SolveInfo, SolveParams, Status,
};
pub use simplex::solve;
