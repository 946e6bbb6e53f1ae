//! PSD feasibility machinery: matrix completion by alternating projections
//! with Dykstra corrections, and linear optimization over the completable set
//! by bisection on the feasibility oracle.
//!
//! The problems here are tiny (a few dozen rows), so projection methods with
//! a dense eigensolver are a better fit than an interior-point code: the only
//! kernel needed is [`sym_eig`], every step is deterministic, and
//! infeasibility shows up as a converged positive distance between the PSD
//! cone and the fixed-entry affine set. That distance is a heuristic
//! separation estimate, not a dual certificate.

mod linalg;
pub mod optimize;

pub use linalg::{min_eigenvalue, psd_project, sym_eig, EigenDecomposition, SymMatrix};
pub use optimize::{max_linear_over_q1, BisectionResult, BoundConfig, LinearObjective};

use crate::error::{Error, Result};

/// A symmetric matrix with a mask of entries pinned to fixed values.
/// Free entries of `entries` hold the solver's starting values.
#[derive(Debug, Clone)]
pub struct PartialMatrix {
    entries: SymMatrix,
    fixed: Vec<bool>,
}

impl PartialMatrix {
    pub fn new(entries: SymMatrix, fixed: Vec<bool>) -> Result<Self> {
        let n = entries.n();
        if fixed.len() != n * n {
            return Err(Error::shape("mask size must match matrix size"));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if fixed[i * n + j] != fixed[j * n + i] {
                    return Err(Error::Contract(format!("mask not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(PartialMatrix { entries, fixed })
    }

    pub fn n(&self) -> usize {
        self.entries.n()
    }

    pub fn entries(&self) -> &SymMatrix {
        &self.entries
    }

    pub fn is_fixed(&self, i: usize, j: usize) -> bool {
        self.fixed[i * self.entries.n() + j]
    }

    pub fn fixed_mask(&self) -> &[bool] {
        &self.fixed
    }

    /// Free a fixed entry (used by mask-loosening tests).
    pub fn release(&mut self, i: usize, j: usize) {
        let n = self.entries.n();
        self.fixed[i * n + j] = false;
        self.fixed[j * n + i] = false;
    }

    /// Largest deviation of `m` from the fixed entries.
    pub fn fixed_residual(&self, m: &SymMatrix) -> f64 {
        let n = self.entries.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                if self.fixed[i * n + j] {
                    worst = worst.max((m.get(i, j) - self.entries.get(i, j)).abs());
                }
            }
        }
        worst
    }

    /// Projection onto the affine set of matrices agreeing with the fixed
    /// entries: overwrite them, leave free entries alone.
    pub fn overwrite_fixed(&self, m: &mut SymMatrix) {
        let n = self.entries.n();
        for i in 0..n {
            for j in i..n {
                if self.fixed[i * n + j] {
                    m.set(i, j, self.entries.get(i, j));
                }
            }
        }
    }
}

/// Knobs for the completion solver.
#[derive(Debug, Clone, Copy)]
pub struct SolveConfig {
    /// Feasibility declared when the cone point and the affine point are
    /// within this Frobenius distance.
    pub feas_tol: f64,
    /// Iteration budget; exhaustion yields `Undecided`.
    pub max_iter: usize,
    /// Window for the stalled-gap infeasibility test.
    pub stall_window: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { feas_tol: 1e-8, max_iter: 200_000, stall_window: 500 }
    }
}

impl SolveConfig {
    pub fn with_feas_tol(mut self, feas_tol: f64) -> Self {
        self.feas_tol = feas_tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompletionStatus {
    Feasible,
    Infeasible,
    Undecided,
}

/// Result of a completion solve.
#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub status: CompletionStatus,
    /// PSD completion agreeing with the fixed entries (Feasible only).
    pub completion: Option<SymMatrix>,
    /// Minimum eigenvalue of the returned completion (Feasible only).
    pub psd_margin: Option<f64>,
    /// Converged distance between the cone and the affine set
    /// (Infeasible only; heuristic lower bound on the true separation).
    pub separation_lower_bound: Option<f64>,
    pub iterations: usize,
}

impl CompletionResult {
    pub fn is_feasible(&self) -> bool {
        self.status == CompletionStatus::Feasible
    }
}

/// Per-iteration diagnostics callback (iteration counter, current gap).
pub type SolveTrace<'a> = &'a mut dyn FnMut(usize, f64);

/// Decide whether the partial matrix admits a PSD completion.
///
/// Dykstra-corrected alternating projections between the PSD cone and the
/// affine set of matrices matching the fixed entries:
///
/// * `Feasible` once the two projected points are within `feas_tol`; the
///   returned completion satisfies the fixed entries exactly and has minimum
///   eigenvalue at least `-feas_tol`.
/// * `Infeasible` once the inter-set distance has stopped moving (relative
///   change below 1e-10 across `stall_window` iterations) at a value above
///   `10 * feas_tol`.
/// * `Undecided` when the iteration budget runs out first.
pub fn complete_to_psd(partial: &PartialMatrix, config: &SolveConfig) -> CompletionResult {
    complete_to_psd_traced(partial, config, None)
}

/// [`complete_to_psd`] warm-started from an explicit matrix instead of the
/// partial's own starting fill.
pub fn complete_to_psd_from(
    partial: &PartialMatrix,
    start: &SymMatrix,
    config: &SolveConfig,
) -> CompletionResult {
    run_completion(partial, start.clone(), config, None)
}

pub fn complete_to_psd_traced(
    partial: &PartialMatrix,
    config: &SolveConfig,
    trace: Option<SolveTrace<'_>>,
) -> CompletionResult {
    run_completion(partial, partial.entries.clone(), config, trace)
}

fn run_completion(
    partial: &PartialMatrix,
    start: SymMatrix,
    config: &SolveConfig,
    mut trace: Option<SolveTrace<'_>>,
) -> CompletionResult {
    let n = partial.n();
    let mut x = start;
    let mut p = SymMatrix::zeros(n);
    let mut q = SymMatrix::zeros(n);
    let mut gap_history: std::collections::VecDeque<f64> =
        std::collections::VecDeque::with_capacity(config.stall_window + 1);

    for iter in 1..=config.max_iter {
        // Cone step with correction.
        let cone_input = x.add(&p);
        let y = psd_project(&cone_input);
        p = cone_input.sub(&y);

        // Affine step with correction.
        let mut z = y.add(&q);
        partial.overwrite_fixed(&mut z);
        q = y.add(&q).sub(&z);

        let gap = y.distance(&z);
        if let Some(t) = trace.as_mut() {
            t(iter, gap);
        }

        if gap <= config.feas_tol {
            let margin = min_eigenvalue(&z).unwrap_or(f64::NEG_INFINITY);
            return CompletionResult {
                status: CompletionStatus::Feasible,
                completion: Some(z),
                psd_margin: Some(margin),
                separation_lower_bound: None,
                iterations: iter,
            };
        }

        gap_history.push_back(gap);
        if gap_history.len() > config.stall_window {
            let old = gap_history.pop_front().unwrap();
            let stalled = (old - gap).abs() <= (1e-10 * gap).max(1e-16);
            if stalled && gap > 10.0 * config.feas_tol {
                return CompletionResult {
                    status: CompletionStatus::Infeasible,
                    completion: None,
                    psd_margin: None,
                    separation_lower_bound: Some(gap),
                    iterations: iter,
                };
            }
        }

        x = z;
    }

    CompletionResult {
        status: CompletionStatus::Undecided,
        completion: None,
        psd_margin: None,
        separation_lower_bound: None,
        iterations: config.max_iter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 2x2 partial matrix with fixed diagonal (1, 1) and free off-diagonal:
    /// always completable (identity works).
    #[test]
    fn free_off_diagonal_is_feasible() {
        let mut entries = SymMatrix::zeros(2);
        entries.set(0, 0, 1.0);
        entries.set(1, 1, 1.0);
        entries.set(0, 1, 5.0); // bad starting value; solver must fix it
        let fixed = vec![true, false, false, true];
        let partial = PartialMatrix::new(entries, fixed).unwrap();
        let result = complete_to_psd(&partial, &SolveConfig::default());
        assert_eq!(result.status, CompletionStatus::Feasible);
        let completion = result.completion.unwrap();
        assert!(partial.fixed_residual(&completion) == 0.0);
        assert!(result.psd_margin.unwrap() >= -1e-8);
    }

    /// Fully fixed non-PSD matrix: no completion can exist.
    #[test]
    fn fully_fixed_indefinite_is_infeasible() {
        let mut entries = SymMatrix::zeros(2);
        entries.set(0, 0, 1.0);
        entries.set(1, 1, 1.0);
        entries.set(0, 1, 2.0);
        let partial = PartialMatrix::new(entries, vec![true; 4]).unwrap();
        let result = complete_to_psd(&partial, &SolveConfig::default());
        assert_eq!(result.status, CompletionStatus::Infeasible);
        assert!(result.separation_lower_bound.unwrap() > 0.0);
    }

    /// Freeing entries never turns Feasible into Infeasible.
    #[test]
    fn mask_loosening_is_monotone() {
        let mut rng = crate::rng::Xoshiro256pp::new(7);
        for _ in 0..20 {
            let n = 4;
            let mut m = SymMatrix::zeros(n);
            for i in 0..n {
                for j in i..n {
                    m.set(i, j, 2.0 * rng.next_f64() - 1.0);
                }
            }
            let partial = PartialMatrix::new(m.clone(), vec![true; n * n]).unwrap();
            let base = complete_to_psd(&partial, &SolveConfig::default());
            if base.status != CompletionStatus::Feasible {
                continue;
            }
            let mut loosened = partial.clone();
            loosened.release(0, 1);
            loosened.release(2, 3);
            let after = complete_to_psd(&loosened, &SolveConfig::default());
            assert_eq!(after.status, CompletionStatus::Feasible);
        }
    }
}
