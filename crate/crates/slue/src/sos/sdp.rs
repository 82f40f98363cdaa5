//! Thin adapter from a triplet-form conic problem to the Clarabel solver.
//!
//! Problems are `min qᵀv  s.t.  A v + s = b, s ∈ K` with K a product of
//! zero, nonnegative, PSD-triangle, and exponential cones, stacked in the
//! order the rows were pushed.

use std::io::Write;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Result, SlueError};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

extern "C" {
    fn openblas_set_num_threads(num: i32);
}

/// BLAS threading makes small factorizations nondeterministic under
/// oversubscription; one thread is also faster at these sizes.
fn pin_blas_threads() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| unsafe { openblas_set_num_threads(1) });
}

/// svec index of symmetric entry (i, j), i ≤ j, column-major upper triangle.
pub fn svec_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeBlock {
    Zero(usize),
    Nonnegative(usize),
    PsdTriangle(usize),
    Exponential,
}

impl ConeBlock {
    pub fn rows(self) -> usize {
        match self {
            ConeBlock::Zero(n) | ConeBlock::Nonnegative(n) => n,
            ConeBlock::PsdTriangle(n) => svec_len(n),
            ConeBlock::Exponential => 3,
        }
    }
}

/// Conic problem in sparse triplet form.
#[derive(Clone, Debug, Default)]
pub struct ConicProblem {
    pub n_vars: usize,
    pub q: Vec<f64>,
    pub triplets: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<ConeBlock>,
    rows: usize,
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: SolverStatus,
    pub v: Vec<f64>,
    pub objective: f64,
    pub solve_time_s: f64,
}

impl ConicProblem {
    pub fn new(n_vars: usize) -> Self {
        ConicProblem {
            n_vars,
            q: vec![0.0; n_vars],
            ..Default::default()
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    /// Appends one row; returns its global index. Entries with `var` beyond
    /// `n_vars` panic at solve time, not here.
    pub fn push_row(&mut self, entries: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.rows;
        for &(v, c) in entries {
            if c != 0.0 {
                self.triplets.push((r, v, c));
            }
        }
        self.b.push(rhs);
        self.rows += 1;
        r
    }

    pub fn add_entry(&mut self, row: usize, var: usize, coeff: f64) {
        if coeff != 0.0 {
            self.triplets.push((row, var, coeff));
        }
    }

    pub fn push_cone(&mut self, cone: ConeBlock) {
        self.cones.push(cone);
    }

    fn check(&self) -> Result<()> {
        let cone_rows: usize = self.cones.iter().map(|c| c.rows()).sum();
        if cone_rows != self.rows {
            return Err(SlueError::Numerical(format!(
                "cone rows {cone_rows} != matrix rows {}",
                self.rows
            )));
        }
        for &(r, v, _) in &self.triplets {
            if r >= self.rows || v >= self.n_vars {
                return Err(SlueError::Numerical(format!(
                    "triplet ({r},{v}) out of range {}x{}",
                    self.rows, self.n_vars
                )));
            }
        }
        Ok(())
    }

    pub fn solve(&self, max_iter: u32) -> Result<ConicSolution> {
        self.check()?;
        pin_blas_threads();
        let (rows, cols, vals): (Vec<_>, Vec<_>, Vec<_>) = self
            .triplets
            .iter()
            .map(|&(r, c, v)| (r, c, v))
            .collect::<Vec<_>>()
            .into_iter()
            .fold((vec![], vec![], vec![]), |(mut r, mut c, mut v), t| {
                r.push(t.0);
                c.push(t.1);
                v.push(t.2);
                (r, c, v)
            });
        let a = CscMatrix::new_from_triplets(self.rows, self.n_vars, rows, cols, vals);
        let p = CscMatrix::zeros((self.n_vars, self.n_vars));
        let cones: Vec<SupportedConeT<f64>> = self
            .cones
            .iter()
            .map(|c| match *c {
                ConeBlock::Zero(n) => SupportedConeT::ZeroConeT(n),
                ConeBlock::Nonnegative(n) => SupportedConeT::NonnegativeConeT(n),
                ConeBlock::PsdTriangle(n) => SupportedConeT::PSDTriangleConeT(n),
                ConeBlock::Exponential => SupportedConeT::ExponentialConeT(),
            })
            .collect();
        let settings = DefaultSettings {
            verbose: std::env::var("SLUE_SOLVER_VERBOSE").is_ok(),
            max_iter,
            chordal_decomposition_enable: std::env::var("SLUE_CHORDAL_OFF").is_err(),
            iterative_refinement_enable: std::env::var("SLUE_REFINE_OFF").is_err(),
            tol_gap_rel: std::env::var("SLUE_TOL_GAP_REL")
                .ok()
                .and_then(|s| s.parse().ok())
                .unwrap_or(1e-8),
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &self.q, &a, &self.b, &cones, settings)
            .map_err(|e| SlueError::Numerical(format!("solver setup: {e}")))?;
        solver.solve();
        let sol = &solver.solution;
        Ok(ConicSolution {
            status: sol.status,
            v: sol.x.clone(),
            objective: sol.obj_val,
            solve_time_s: sol.solve_time,
        })
    }

    /// Writes the constraint matrix as `block row col value` lines, with
    /// `row` local to the cone block.
    pub fn dump_triplets(&self, w: &mut impl Write) -> Result<()> {
        let mut starts = Vec::with_capacity(self.cones.len() + 1);
        let mut acc = 0;
        for c in &self.cones {
            starts.push(acc);
            acc += c.rows();
        }
        starts.push(acc);
        let mut sorted = self.triplets.clone();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (r, v, c) in sorted {
            let block = match starts.binary_search(&r) {
                Ok(i) => {
                    // a row index equal to a start belongs to that block
                    if i == self.cones.len() {
                        i - 1
                    } else {
                        i
                    }
                }
                Err(i) => i - 1,
            };
            writeln!(w, "{} {} {} {:.17e}", block, r - starts[block], v, c)?;
        }
        Ok(())
    }
}

/// True when the solver produced a usable optimum.
pub fn status_is_solved(s: SolverStatus) -> bool {
    matches!(s, SolverStatus::Solved | SolverStatus::AlmostSolved)
}

pub fn status_is_primal_infeasible(s: SolverStatus) -> bool {
    matches!(
        s,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible
    )
}

pub fn status_is_dual_infeasible(s: SolverStatus) -> bool {
    matches!(
        s,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_indexing_is_column_major_upper() {
        assert_eq!(svec_index(0, 0), 0);
        assert_eq!(svec_index(0, 1), 1);
        assert_eq!(svec_index(1, 1), 2);
        assert_eq!(svec_index(0, 2), 3);
        assert_eq!(svec_index(2, 2), 5);
        assert_eq!(svec_len(3), 6);
    }

    #[test]
    fn tiny_lp_solves() {
        // min -x s.t. x <= 2, x >= 0
        let mut p = ConicProblem::new(1);
        p.q[0] = -1.0;
        p.push_row(&[(0, 1.0)], 2.0);
        p.push_row(&[(0, -1.0)], 0.0);
        p.push_cone(ConeBlock::Nonnegative(2));
        let sol = p.solve(200).unwrap();
        assert!(status_is_solved(sol.status));
        assert!((sol.v[0] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn tiny_sdp_solves() {
        // min tr(X) s.t. X ⪰ 0, X_00 = 1, X_11 = 2 (2x2)
        let mut p = ConicProblem::new(3); // svec(X)
        p.q[0] = 1.0;
        p.q[2] = 1.0;
        p.push_row(&[(0, 1.0)], 1.0);
        p.push_row(&[(2, 1.0)], 2.0);
        p.push_row(&[(0, -1.0)], 0.0);
        p.push_row(&[(1, -1.0)], 0.0);
        p.push_row(&[(2, -1.0)], 0.0);
        p.push_cone(ConeBlock::Zero(2));
        p.push_cone(ConeBlock::PsdTriangle(2));
        let sol = p.solve(200).unwrap();
        assert!(status_is_solved(sol.status));
        // off-diagonal is free; optimum keeps it at 0
        assert!((sol.objective - 3.0).abs() < 1e-6);
    }

    #[test]
    fn exp_cone_log_maximization() {
        // max t s.t. e^t <= 5: rows (t, 1, 5)
        let mut p = ConicProblem::new(1);
        p.q[0] = -1.0;
        p.push_row(&[(0, -1.0)], 0.0);
        p.push_row(&[], 1.0);
        p.push_row(&[], 5.0);
        p.push_cone(ConeBlock::Exponential);
        let sol = p.solve(200).unwrap();
        assert!(status_is_solved(sol.status));
        assert!((sol.v[0] - 5f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn infeasible_lp_reports_primal_infeasible() {
        // x >= 1 and x <= 0
        let mut p = ConicProblem::new(1);
        p.push_row(&[(0, -1.0)], -1.0);
        p.push_row(&[(0, 1.0)], 0.0);
        p.push_cone(ConeBlock::Nonnegative(2));
        let sol = p.solve(200).unwrap();
        assert!(status_is_primal_infeasible(sol.status));
    }

    #[test]
    fn mismatched_cone_rows_rejected() {
        let mut p = ConicProblem::new(1);
        p.push_row(&[(0, 1.0)], 0.0);
        p.push_cone(ConeBlock::Zero(2));
        assert!(p.solve(200).is_err());
    }

    #[test]
    fn triplet_dump_uses_block_local_rows() {
        let mut p = ConicProblem::new(2);
        p.push_row(&[(0, 1.0)], 0.0);
        p.push_row(&[(1, 2.0)], 0.0);
        p.push_row(&[(0, -1.0)], 0.0);
        p.push_cone(ConeBlock::Zero(2));
        p.push_cone(ConeBlock::Nonnegative(1));
        let mut buf = Vec::new();
        p.dump_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("0 0 0 "));
        assert!(lines[1].starts_with("0 1 1 "));
        assert!(lines[2].starts_with("1 0 0 "));
    }
}
