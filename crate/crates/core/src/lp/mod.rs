//! Linear programs with equality duals, and the builders for the per-region
//! fit LP and the joint merge LP. Solving is delegated to HiGHS (dual
//! simplex, one thread), so solutions are basic and repeatable.
//!
//! All variables are free; bounds are expressed as inequality rows.

mod builders;

pub use builders::{
    build_fit_lp, build_joint_lp, independent_regressors, BasisCoords, FitLayout, FitProblem,
    JointLayout, JointProblem, RegionView, COORD_TOL, RANK_TOL,
};

use crate::error::{Error, Result};

/// Which constraint of the identification problem a row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    /// `±ω(B(ξ(q))μ − ZᵀL) − t ≤ 0` for one sample.
    Residual { region: usize, sample: usize, upper: bool },
    /// `−[dB/dη(η)]μ ≤ −ε` at point `grid` of the refined η grid.
    Monotone { region: usize, grid: usize },
    /// One component of `(μ, L)_region = (μ̃, L̃)`.
    Compat { region: usize, component: usize },
    /// `L_j = 0` for a regressor component dependent on the others.
    Pinned { var: usize },
    Other,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn from_dense(row: &[f64]) -> Self {
        let mut out = SparseRow::default();
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                out.idx.push(j);
                out.val.push(v);
            }
        }
        out
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&j, &v)| x[j] * v).sum()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&j, &v) in self.idx.iter().zip(&self.val) {
            out[j] += v;
        }
        out
    }
}

impl FromIterator<(usize, f64)> for SparseRow {
    fn from_iter<I: IntoIterator<Item = (usize, f64)>>(iter: I) -> Self {
        let mut out = SparseRow::default();
        for (j, v) in iter {
            if v != 0.0 {
                out.idx.push(j);
                out.val.push(v);
            }
        }
        out
    }
}

/// `min cᵀx  s.t.  A_ub x ≤ b_ub,  A_eq x = b_eq`, `x` free.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub a_ub: Vec<SparseRow>,
    pub b_ub: Vec<f64>,
    pub ub_labels: Vec<RowLabel>,
    pub a_eq: Vec<SparseRow>,
    pub b_eq: Vec<f64>,
    pub eq_labels: Vec<RowLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The iteration guard tripped; treated as an internal fault.
    IterationLimit,
    /// The solver stopped without a usable answer.
    SolverError,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// `∂ objective / ∂ b_eq`, one per equality row.
    pub duals_eq: Vec<f64>,
    /// Nonnegative multipliers with `∂ objective / ∂ b_ub = −duals_ub`.
    pub duals_ub: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    fn failed(status: LpStatus, n: usize, iterations: usize) -> Self {
        LpSolution {
            status,
            x: vec![0.0; n],
            objective: f64::NAN,
            duals_eq: Vec::new(),
            duals_ub: Vec::new(),
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

impl LinearProgram {
    pub fn new(c: Vec<f64>) -> Self {
        LinearProgram {
            c,
            ..Default::default()
        }
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn add_ub(&mut self, row: SparseRow, b: f64, label: RowLabel) {
        self.a_ub.push(row);
        self.b_ub.push(b);
        self.ub_labels.push(label);
    }

    pub fn add_eq(&mut self, row: SparseRow, b: f64, label: RowLabel) {
        self.a_eq.push(row);
        self.b_eq.push(b);
        self.eq_labels.push(label);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.a_ub.len() != self.b_ub.len() || self.ub_labels.len() != self.b_ub.len() {
            return Err(Error::Dimension {
                expected: self.a_ub.len(),
                got: self.b_ub.len(),
            });
        }
        if self.a_eq.len() != self.b_eq.len() || self.eq_labels.len() != self.b_eq.len() {
            return Err(Error::Dimension {
                expected: self.a_eq.len(),
                got: self.b_eq.len(),
            });
        }
        for row in self.a_ub.iter().chain(&self.a_eq) {
            if let Some(&j) = row.idx.iter().find(|&&j| j >= n) {
                return Err(Error::Dimension { expected: n, got: j + 1 });
            }
            if row.val.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("LP coefficients must be finite".into()));
            }
        }
        if self.c.iter().chain(&self.b_ub).chain(&self.b_eq).any(|v| !v.is_finite()) {
            return Err(Error::Config("LP data must be finite".into()));
        }
        Ok(())
    }

    /// Largest violation of any row at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ub = self
            .a_ub
            .iter()
            .zip(&self.b_ub)
            .map(|(r, b)| (r.dot(x) - b).max(0.0));
        let eq = self.a_eq.iter().zip(&self.b_eq).map(|(r, b)| (r.dot(x) - b).abs());
        ub.chain(eq).fold(0.0, f64::max)
    }

    /// Largest `|yᵢ · slackᵢ|` over inequality rows.
    pub fn complementarity_gap(&self, sol: &LpSolution) -> f64 {
        self.a_ub
            .iter()
            .zip(&self.b_ub)
            .zip(&sol.duals_ub)
            .map(|((r, b), y)| (y * (b - r.dot(&sol.x))).abs())
            .fold(0.0, f64::max)
    }

    /// Dual objective `−b_ubᵀy + b_eqᵀv`.
    pub fn dual_objective(&self, sol: &LpSolution) -> f64 {
        let ub: f64 = self.b_ub.iter().zip(&sol.duals_ub).map(|(b, y)| b * y).sum();
        let eq: f64 = self.b_eq.iter().zip(&sol.duals_eq).map(|(b, v)| b * v).sum();
        eq - ub
    }
}

/// Solver attempts in order: presolve flag and feasibility tolerance. The
/// first conclusive answer wins; looser tolerances only come into play when
/// HiGHS reports a numerical failure on a badly conditioned cell.
const ATTEMPTS: [(bool, f64); 4] = [(true, 1e-8), (false, 1e-8), (true, 1e-7), (false, 1e-6)];

/// Solves the LP. Infeasibility and unboundedness come back as a status.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let mut last = None;
    for (presolve, tol) in ATTEMPTS {
        let sol = run_highs(lp, presolve, tol);
        match sol.status {
            LpStatus::Optimal | LpStatus::Infeasible => return Ok(sol),
            // Presolve can leave infeasible-or-unbounded undecided.
            LpStatus::Unbounded if !presolve => return Ok(sol),
            _ => last = Some(sol),
        }
    }
    Ok(last.expect("at least one attempt"))
}

fn run_highs(lp: &LinearProgram, presolve: bool, tol: f64) -> LpSolution {
    use highs::{HighsModelStatus as S, RowProblem, Sense};
    let n = lp.n_vars();
    let mut pb = RowProblem::default();
    let cols: Vec<_> = lp.c.iter().map(|&c| pb.add_column::<f64, _>(c, ..)).collect();
    let entries = |r: &SparseRow| -> Vec<_> {
        r.idx.iter().zip(&r.val).map(|(&j, &v)| (cols[j], v)).collect()
    };
    for (r, &b) in lp.a_ub.iter().zip(&lp.b_ub) {
        pb.add_row(..=b, entries(r));
    }
    for (r, &b) in lp.a_eq.iter().zip(&lp.b_eq) {
        pb.add_row(b..=b, entries(r));
    }
    let mut model = pb.optimise(Sense::Minimise);
    model.make_quiet();
    model.set_option("threads", 1);
    model.set_option("solver", "simplex");
    model.set_option("simplex_strategy", 1);
    model.set_option("presolve", if presolve { "on" } else { "off" });
    model.set_option("primal_feasibility_tolerance", tol);
    model.set_option("dual_feasibility_tolerance", tol);
    let solved = match model.try_solve() {
        Ok(s) => s,
        Err(e) => {
            log::warn!("HiGHS failed: {e:?}");
            return LpSolution::failed(LpStatus::SolverError, n, 0);
        }
    };
    let iterations = solved.simplex_iteration_count().max(0) as usize;
    let status = match solved.status() {
        S::Optimal | S::ModelEmpty => LpStatus::Optimal,
        S::Infeasible => LpStatus::Infeasible,
        S::Unbounded => LpStatus::Unbounded,
        S::UnboundedOrInfeasible if !presolve => LpStatus::Unbounded,
        S::ReachedIterationLimit | S::ReachedTimeLimit => LpStatus::IterationLimit,
        other => {
            log::warn!("HiGHS ended with {other:?}");
            LpStatus::SolverError
        }
    };
    if status != LpStatus::Optimal {
        return LpSolution::failed(status, n, iterations);
    }
    let sol = solved.get_solution();
    let x = sol.columns().to_vec();
    let duals = sol.dual_rows();
    let m_ub = lp.a_ub.len();
    let objective = lp.c.iter().zip(&x).map(|(c, x)| c * x).sum();
    LpSolution {
        status,
        objective,
        duals_ub: duals[..m_ub].iter().map(|y| (-y).max(0.0)).collect(),
        duals_eq: duals[m_ub..].to_vec(),
        x,
        iterations,
    }
}
