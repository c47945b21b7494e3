//! Convex conic subproblems: linear, second-order cone and semidefinite
//! constraints over a real decision vector.
//!
//! Complex data must be realified by the caller: a complex vector `z` maps to
//! `[Re z; Im z]`, a Hermitian matrix `V` maps to `[[Re V, -Im V], [Im V, Re V]]`.
//!
//! Problems are solved by the primal-dual interior-point method in [`ipm`].
//! Every point reported as optimal is re-checked by [`ConicProblem::max_violation`],
//! which shares no code with the solver.

mod ipm;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub use ipm::IpmSettings;

/// `constant + sum_i coeff_i x_i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(i: usize) -> Self {
        Self {
            terms: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(mut self, i: usize, coeff: f64) -> Self {
        self.terms.push((i, coeff));
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }
}

/// Symmetric matrix coefficient of a PSD constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum SymMatrix {
    /// Upper-triangular entries `(i, j, v)` with `i <= j`; off-diagonal
    /// entries stand for both `(i, j)` and `(j, i)`.
    Sparse {
        dim: usize,
        entries: Vec<(usize, usize, f64)>,
    },
    Dense(DMatrix<f64>),
}

impl SymMatrix {
    pub fn dim(&self) -> usize {
        match self {
            SymMatrix::Sparse { dim, .. } => *dim,
            SymMatrix::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymMatrix::Dense(m) => m.clone(),
            SymMatrix::Sparse { dim, entries } => {
                let mut m = DMatrix::zeros(*dim, *dim);
                for &(i, j, v) in entries {
                    m[(i, j)] += v;
                    if i != j {
                        m[(j, i)] += v;
                    }
                }
                m
            }
        }
    }

    /// `<self, x> = tr(self x)` for symmetric `x`.
    pub fn dot(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            SymMatrix::Dense(m) => m.dot(x),
            SymMatrix::Sparse { entries, .. } => entries
                .iter()
                .map(|&(i, j, v)| {
                    if i == j {
                        v * x[(i, i)]
                    } else {
                        v * (x[(i, j)] + x[(j, i)])
                    }
                })
                .sum(),
        }
    }

    /// `out += alpha * self`.
    pub fn add_to(&self, out: &mut DMatrix<f64>, alpha: f64) {
        match self {
            SymMatrix::Dense(m) => *out += m * alpha,
            SymMatrix::Sparse { entries, .. } => {
                for &(i, j, v) in entries {
                    out[(i, j)] += alpha * v;
                    if i != j {
                        out[(j, i)] += alpha * v;
                    }
                }
            }
        }
    }

    /// `s self s` for symmetric `s`.
    pub(crate) fn sandwich(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SymMatrix::Dense(m) => s * m * s,
            SymMatrix::Sparse { dim, entries } => {
                let mut out = DMatrix::zeros(*dim, *dim);
                for &(i, j, v) in entries {
                    let (ci, cj) = (s.column(i), s.column(j));
                    if i == j {
                        out.ger(v, &ci, &ci, 1.0);
                    } else {
                        out.ger(v, &ci, &cj, 1.0);
                        out.ger(v, &cj, &ci, 1.0);
                    }
                }
                out
            }
        }
    }

    fn is_symmetric(&self) -> bool {
        match self {
            SymMatrix::Sparse { dim, entries } => entries.iter().all(|&(i, j, _)| i <= j && j < *dim),
            SymMatrix::Dense(m) => m.is_square() && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `expr = 0`.
    Zero(AffineExpr),
    /// `expr >= 0`.
    NonNeg(AffineExpr),
    /// `||tail||_2 <= head`.
    SecondOrder { head: AffineExpr, tail: Vec<AffineExpr> },
    /// `constant + sum_i x_i M_i` is positive semidefinite.
    Psd {
        constant: SymMatrix,
        terms: Vec<(usize, SymMatrix)>,
    },
}

/// Box bound on one variable; either side may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarBound {
    pub var: usize,
    pub lower: f64,
    pub upper: f64,
}

/// `minimize c'x` (or find any feasible `x` when `objective` is `None`)
/// subject to the listed constraints and bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub objective: Option<DVector<f64>>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<VarBound>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Dual value attached to one constraint, in the sign convention of the
/// Lagrangian `c'x - sum <dual, constraint body>`.
#[derive(Debug, Clone, PartialEq)]
pub enum DualValue {
    Scalar(f64),
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
}

/// Result of a feasibility probe built on a conic solve. Solver failures are
/// kept apart from genuine infeasibility.
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility<T> {
    Feasible(T),
    Infeasible,
    SolverFailure,
}

impl<T> Feasibility<T> {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }

    pub fn feasible(self) -> Option<T> {
        match self {
            Feasibility::Feasible(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConicOutcome {
    pub status: Status,
    pub primal: DVector<f64>,
    /// One entry per element of `constraints` (bounds are not reported).
    pub duals: Vec<DualValue>,
    pub objective: f64,
    pub max_violation: f64,
    pub iterations: usize,
}

impl ConicOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

impl ConicProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            ..Self::default()
        }
    }

    pub fn minimize(mut self, c: DVector<f64>) -> Self {
        self.objective = Some(c);
        self
    }

    pub fn push(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    pub fn bound(&mut self, var: usize, lower: f64, upper: f64) {
        self.bounds.push(VarBound { var, lower, upper });
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        let bad = |msg: String| Err(Error::Solver(msg));
        if let Some(c) = &self.objective {
            if c.len() != n {
                return bad(format!("objective has {} entries for {n} variables", c.len()));
            }
        }
        let check = |e: &AffineExpr| e.max_var().is_none_or(|m| m < n);
        for (idx, c) in self.constraints.iter().enumerate() {
            let ok = match c {
                Constraint::Zero(e) | Constraint::NonNeg(e) => check(e),
                Constraint::SecondOrder { head, tail } => check(head) && tail.iter().all(check),
                Constraint::Psd { constant, terms } => {
                    let d = constant.dim();
                    constant.is_symmetric() && terms.iter().all(|(i, m)| *i < n && m.dim() == d && m.is_symmetric())
                }
            };
            if !ok {
                return bad(format!("constraint {idx} is malformed"));
            }
        }
        for b in &self.bounds {
            if b.var >= n || b.lower.is_nan() || b.upper.is_nan() || b.lower > b.upper {
                return bad(format!("bad bound on variable {}", b.var));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`. PSD constraints
    /// contribute the negative part of their smallest eigenvalue.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let v = match c {
                Constraint::Zero(e) => e.eval(x).abs(),
                Constraint::NonNeg(e) => -e.eval(x),
                Constraint::SecondOrder { head, tail } => {
                    tail.iter().map(|t| t.eval(x).powi(2)).sum::<f64>().sqrt() - head.eval(x)
                }
                Constraint::Psd { constant, terms } => {
                    let mut m = constant.to_dense();
                    for (i, t) in terms {
                        t.add_to(&mut m, x[*i]);
                    }
                    let m = (&m + m.transpose()) * 0.5;
                    -SymmetricEigen::new(m).eigenvalues.min()
                }
            };
            worst = worst.max(v);
        }
        for b in &self.bounds {
            worst = worst.max(b.lower - x[b.var]).max(x[b.var] - b.upper);
        }
        worst
    }

    /// Solve with default interior-point settings; `tol` bounds the
    /// constraint violation accepted on an optimal return.
    pub fn solve(&self, tol: f64) -> Result<ConicOutcome> {
        self.solve_with(tol, &IpmSettings::default())
    }

    pub fn solve_with(&self, tol: f64, settings: &IpmSettings) -> Result<ConicOutcome> {
        self.validate()?;
        let (form, layout) = ipm::StandardForm::build(self);
        let res = ipm::solve(&form, settings);
        let primal = res.x.clone();
        let max_violation = self.max_violation(&primal);
        let objective = self.objective.as_ref().map_or(0.0, |c| c.dot(&primal));
        let status = match res.status {
            ipm::IpmStatus::Optimal if max_violation <= tol => Status::Optimal,
            ipm::IpmStatus::Optimal => Status::NumericalFailure,
            ipm::IpmStatus::PrimalInfeasible => Status::Infeasible,
            ipm::IpmStatus::DualInfeasible => Status::Unbounded,
            ipm::IpmStatus::Stalled => Status::NumericalFailure,
        };
        Ok(ConicOutcome {
            status,
            duals: layout.duals(&res),
            primal,
            objective,
            max_violation,
            iterations: res.iterations,
        })
    }

    /// Text dump in sparse-triplet form, one record per line.
    pub fn to_triplets(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vars {}", self.num_vars);
        if let Some(c) = &self.objective {
            for (i, v) in c.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                let _ = writeln!(out, "obj {i} {v:e}");
            }
        }
        let expr = |out: &mut String, tag: &str, row: usize, e: &AffineExpr| {
            for &(i, v) in &e.terms {
                let _ = writeln!(out, "{tag} {row} {i} {v:e}");
            }
            let _ = writeln!(out, "{tag} {row} const {:e}", e.constant);
        };
        for (ci, c) in self.constraints.iter().enumerate() {
            match c {
                Constraint::Zero(e) => {
                    let _ = writeln!(out, "con {ci} zero");
                    expr(&mut out, "a", 0, e);
                }
                Constraint::NonNeg(e) => {
                    let _ = writeln!(out, "con {ci} nonneg");
                    expr(&mut out, "a", 0, e);
                }
                Constraint::SecondOrder { head, tail } => {
                    let _ = writeln!(out, "con {ci} soc {}", tail.len() + 1);
                    expr(&mut out, "a", 0, head);
                    for (r, t) in tail.iter().enumerate() {
                        expr(&mut out, "a", r + 1, t);
                    }
                }
                Constraint::Psd { constant, terms } => {
                    let _ = writeln!(out, "con {ci} psd {}", constant.dim());
                    let mat = |out: &mut String, tag: String, m: &SymMatrix| {
                        let d = m.to_dense();
                        for i in 0..d.nrows() {
                            for j in i..d.ncols() {
                                if d[(i, j)] != 0.0 {
                                    let _ = writeln!(out, "{tag} {i} {j} {:e}", d[(i, j)]);
                                }
                            }
                        }
                    };
                    mat(&mut out, "m const".into(), constant);
                    for (v, m) in terms {
                        mat(&mut out, format!("m {v}"), m);
                    }
                }
            }
        }
        for b in &self.bounds {
            let _ = writeln!(out, "bound {} {:e} {:e}", b.var, b.lower, b.upper);
        }
        out
    }
}
