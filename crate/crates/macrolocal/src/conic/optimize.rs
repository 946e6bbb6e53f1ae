//! Maximize a linear functional over the set of completable behaviors.
//!
//! Bisection on the objective value: each step asks whether a behavior with
//! functional value `v` exists whose order-1 moment matrix completes to PSD.
//! In the moment form every defining relation is *linear* in the behavior
//! entries, so the behavior itself becomes part of the unknown matrix and the
//! feasibility question is an intersection of three convex sets:
//!
//! * the PSD cone,
//! * the affine subspace tying matrix entries to a normalized, no-signaling
//!   table with the required functional value(s),
//! * the orthant of nonnegative joint probabilities.
//!
//! Cyclic Dykstra projections decide the intersection. Lower bounds are only
//! ever claimed through an explicit witness behavior that independently
//! passes the membership solve; upper bounds come from the stalled-gap
//! infeasibility heuristic.

use crate::certificates::{build_npa1_partial, row_index, CertificateKind};
use crate::conic::{
    complete_to_psd_from, psd_project, CompletionStatus, SolveConfig, SymMatrix,
};
use crate::error::{Error, Result};
use crate::scenario::{Behavior, DeterministicVertices, Party, Scenario};

/// A linear functional on behaviors: one coefficient per `(X, Y, a, b)`.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    scenario: Scenario,
    coeffs: Vec<f64>,
}

impl LinearObjective {
    pub fn new(scenario: Scenario, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != scenario.table_len() {
            return Err(Error::shape(format!(
                "objective has {} coefficients, scenario needs {}",
                coeffs.len(),
                scenario.table_len()
            )));
        }
        Ok(LinearObjective { scenario, coeffs })
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn evaluate(&self, behavior: &Behavior) -> Result<f64> {
        if behavior.scenario() != self.scenario {
            return Err(Error::shape("objective and behavior scenarios differ"));
        }
        Ok(self
            .coeffs
            .iter()
            .zip(behavior.table())
            .map(|(c, p)| c * p)
            .sum())
    }

    /// `sum over (X,Y) of max_(a,b) c`: the largest value any normalized
    /// table (signaling or not) could reach.
    pub fn algebraic_max(&self) -> f64 {
        let sc = self.scenario;
        let d = sc.outcomes();
        let mut total = 0.0;
        for x in 0..sc.settings_a() {
            for y in 0..sc.settings_b() {
                let mut best = f64::NEG_INFINITY;
                for a in 0..d {
                    for b in 0..d {
                        best = best.max(self.coeffs[sc.index(x, y, a, b)]);
                    }
                }
                total += best;
            }
        }
        total
    }
}

/// Starting bracket for the bisection: a proven-feasible value with its
/// witness, and a value known to be unreachable.
#[derive(Debug, Clone)]
pub struct InitialBracket {
    pub lower: f64,
    pub witness: Behavior,
    pub upper: f64,
}

/// Knobs for [`max_linear_over_q1`].
#[derive(Debug, Clone)]
pub struct BoundConfig {
    /// Target bracket width.
    pub gap: f64,
    /// Inner feasibility-solver knobs.
    pub solve: SolveConfig,
    /// Budget doublings when a step comes back undecided.
    pub escalations: usize,
    /// Cap on bisection steps.
    pub max_rounds: usize,
    /// Additional linear equality pins on the behavior.
    pub equalities: Vec<(LinearObjective, f64)>,
    /// Explicit starting bracket; required when `equalities` is nonempty
    /// (a deterministic vertex will not satisfy a generic pin).
    pub bracket: Option<InitialBracket>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            gap: 1e-4,
            solve: SolveConfig::default(),
            escalations: 3,
            max_rounds: 120,
            equalities: Vec::new(),
            bracket: None,
        }
    }
}

/// Outcome of the bisection.
#[derive(Debug, Clone)]
pub struct BisectionResult {
    /// Largest witnessed value: `witness` attains it and passes membership.
    pub lower: f64,
    /// Smallest value the oracle declared unreachable.
    pub upper: f64,
    pub witness: Behavior,
    /// Bisection rounds performed.
    pub iterations: usize,
}

/// Maximize `objective` over behaviors whose moment matrix completes to PSD,
/// subject to the equality pins in `config`.
pub fn max_linear_over_q1(
    objective: &LinearObjective,
    config: &BoundConfig,
) -> Result<BisectionResult> {
    let scenario = objective.scenario;
    for (eq, _) in &config.equalities {
        if eq.scenario != scenario {
            return Err(Error::shape("equality pin scenario differs from objective"));
        }
    }

    let (mut lower, mut witness, mut upper) = match &config.bracket {
        Some(bracket) => (bracket.lower, bracket.witness.clone(), bracket.upper),
        None => {
            if !config.equalities.is_empty() {
                return Err(Error::Consistency(
                    "equality-constrained bounds need an explicit starting bracket".into(),
                ));
            }
            let mut best = f64::NEG_INFINITY;
            let mut best_vertex = None;
            for vertex in DeterministicVertices::new(scenario)? {
                let value = objective.evaluate(&vertex)?;
                if value > best {
                    best = value;
                    best_vertex = Some(vertex);
                }
            }
            (best, best_vertex.expect("scenario has vertices"), objective.algebraic_max())
        }
    };
    if witness.scenario() != scenario {
        return Err(Error::shape("bracket witness scenario differs from objective"));
    }

    if upper - lower <= config.gap {
        return Ok(BisectionResult { lower, upper, witness, iterations: 0 });
    }

    let problem = JointProblem::build(scenario, objective, &config.equalities)?;
    let mut warm = build_npa1_partial(&witness)?.matrix().entries().clone();
    let mut rounds = 0;

    while upper - lower > config.gap && rounds < config.max_rounds {
        rounds += 1;
        let v = 0.5 * (lower + upper);
        let mut solver = problem.solver(v, warm.clone(), config.solve);

        let mut decided = false;
        let mut budget = config.solve.max_iter;
        for _attempt in 0..=config.escalations {
            match solver.run(budget) {
                StepOutcome::Converged => {
                    if let Some((value, behavior)) =
                        problem.certify_witness(solver.iterate(), config)
                    {
                        if value > lower {
                            lower = value;
                            witness = behavior;
                            decided = true;
                        }
                    }
                    if !decided {
                        // The near-feasible point did not certify; force the
                        // solver onward at full precision before giving up.
                        if solver.tighten() {
                            continue;
                        }
                    }
                    break;
                }
                StepOutcome::Stalled => {
                    upper = v;
                    decided = true;
                    break;
                }
                StepOutcome::Exhausted => {
                    // Opportunistic witness before buying more budget.
                    if let Some((value, behavior)) =
                        problem.certify_witness(solver.iterate(), config)
                    {
                        if value > lower + 0.25 * config.gap {
                            lower = value;
                            witness = behavior;
                            decided = true;
                            break;
                        }
                    }
                    budget *= 2;
                }
            }
        }

        warm = solver.into_iterate();
        if !decided {
            break; // honest exit: the bracket stands as proven so far
        }
    }

    debug_assert!(lower <= upper + 1e-12);
    Ok(BisectionResult { lower, upper, witness, iterations: rounds })
}

// ---------------------------------------------------------------------------
// Joint feasibility problem
// ---------------------------------------------------------------------------

/// One linear equality on a symmetric matrix: `sum w * G[i][j] = rhs`,
/// each unordered pair listed once.
struct ConstraintRow {
    terms: Vec<(usize, usize, f64)>,
    rhs: f64,
}

/// Affine subspace of symmetric matrices cut out by equality rows, with a
/// precomputed pseudo-inverse of the row Gram matrix for exact projection.
struct AffineSet {
    rows: Vec<ConstraintRow>,
    pinv: Vec<f64>, // m x m
}

impl AffineSet {
    fn build(rows: Vec<ConstraintRow>) -> Result<Self> {
        let m = rows.len();
        // Gram of the Frobenius gradients: diagonal terms weigh 1, paired
        // off-diagonal terms weigh 1/2 (each half lives on both triangles).
        let mut gram = SymMatrix::zeros(m);
        for (r, row_r) in rows.iter().enumerate() {
            for (s, row_s) in rows.iter().enumerate().skip(r) {
                let mut acc = 0.0;
                for &(i, j, w) in &row_r.terms {
                    for &(i2, j2, w2) in &row_s.terms {
                        if i == i2 && j == j2 {
                            acc += if i == j { w * w2 } else { 0.5 * w * w2 };
                        }
                    }
                }
                gram.set(r, s, acc);
            }
        }
        let eig = crate::conic::sym_eig(&gram)?;
        let cutoff = 1e-12 * eig.values.last().copied().unwrap_or(0.0).max(1e-300);
        let pinv_mat = eig.reconstruct_with(|v| if v > cutoff { 1.0 / v } else { 0.0 });
        let mut pinv = vec![0.0; m * m];
        for r in 0..m {
            for s in 0..m {
                pinv[r * m + s] = pinv_mat.get(r, s);
            }
        }
        Ok(AffineSet { rows, pinv })
    }

    fn residuals(&self, g: &SymMatrix, out: &mut Vec<f64>) {
        out.clear();
        for row in &self.rows {
            let mut v = -row.rhs;
            for &(i, j, w) in &row.terms {
                v += w * g.get(i, j);
            }
            out.push(v);
        }
    }

}

struct JointProblem {
    scenario: Scenario,
    affine: AffineSet,
    objective_row: usize,
    /// Moment-matrix coordinates of the joint probabilities.
    cross: Vec<(usize, usize)>,
    objective: LinearObjective,
}

impl JointProblem {
    fn build(
        scenario: Scenario,
        objective: &LinearObjective,
        equalities: &[(LinearObjective, f64)],
    ) -> Result<Self> {
        let kind = CertificateKind::Npa1;
        let d = scenario.outcomes();
        let row_a = |x: usize, a: usize| row_index(kind, scenario, Party::A, x, a);
        let row_b = |y: usize, b: usize| row_index(kind, scenario, Party::B, y, b);
        let mut rows = Vec::new();

        // Identity entry.
        rows.push(ConstraintRow { terms: vec![(0, 0, 1.0)], rhs: 1.0 });

        // Cross-block row sums reproduce the marginal entries of the first
        // row, for every partner setting: normalization-consistent and
        // no-signaling by construction.
        for x in 0..scenario.settings_a() {
            for a in 0..d {
                for y in 0..scenario.settings_b() {
                    let mut terms: Vec<(usize, usize, f64)> =
                        (0..d).map(|b| (row_a(x, a), row_b(y, b), 1.0)).collect();
                    terms.push((0, row_a(x, a), -1.0));
                    rows.push(ConstraintRow { terms, rhs: 0.0 });
                }
            }
        }
        for y in 0..scenario.settings_b() {
            for b in 0..d {
                for x in 0..scenario.settings_a() {
                    let mut terms: Vec<(usize, usize, f64)> =
                        (0..d).map(|a| (row_a(x, a), row_b(y, b), 1.0)).collect();
                    terms.push((0, row_b(y, b), -1.0));
                    rows.push(ConstraintRow { terms, rhs: 0.0 });
                }
            }
        }

        // Same-setting blocks: zero off-diagonal, diagonal tied to the
        // first-row marginal.
        for x in 0..scenario.settings_a() {
            for a in 0..d {
                rows.push(ConstraintRow {
                    terms: vec![(row_a(x, a), row_a(x, a), 1.0), (0, row_a(x, a), -1.0)],
                    rhs: 0.0,
                });
                for a2 in (a + 1)..d {
                    rows.push(ConstraintRow {
                        terms: vec![(row_a(x, a), row_a(x, a2), 1.0)],
                        rhs: 0.0,
                    });
                }
            }
        }
        for y in 0..scenario.settings_b() {
            for b in 0..d {
                rows.push(ConstraintRow {
                    terms: vec![(row_b(y, b), row_b(y, b), 1.0), (0, row_b(y, b), -1.0)],
                    rhs: 0.0,
                });
                for b2 in (b + 1)..d {
                    rows.push(ConstraintRow {
                        terms: vec![(row_b(y, b), row_b(y, b2), 1.0)],
                        rhs: 0.0,
                    });
                }
            }
        }

        // Per-setting-pair normalization.
        for x in 0..scenario.settings_a() {
            for y in 0..scenario.settings_b() {
                let mut terms = Vec::with_capacity(d * d);
                for a in 0..d {
                    for b in 0..d {
                        terms.push((row_a(x, a), row_b(y, b), 1.0));
                    }
                }
                rows.push(ConstraintRow { terms, rhs: 1.0 });
            }
        }

        // Extra equality pins.
        for (eq, target) in equalities {
            rows.push(functional_row(scenario, eq, *target));
        }

        // Objective pin; rhs is set per bisection step.
        let objective_row = rows.len();
        rows.push(functional_row(scenario, objective, 0.0));

        let mut cross = Vec::with_capacity(scenario.table_len());
        for x in 0..scenario.settings_a() {
            for y in 0..scenario.settings_b() {
                for a in 0..d {
                    for b in 0..d {
                        cross.push((row_a(x, a), row_b(y, b)));
                    }
                }
            }
        }

        Ok(JointProblem {
            scenario,
            affine: AffineSet::build(rows)?,
            objective_row,
            cross,
            objective: objective.clone(),
        })
    }

    fn solver(&self, value: f64, warm: SymMatrix, config: SolveConfig) -> JointSolver<'_> {
        JointSolver::new(self, value, warm, config)
    }

    /// Read the behavior off the iterate's cross block, scrub residual
    /// negativity by mixing toward uniform, and certify it with an
    /// independent membership solve. Returns the certified objective value.
    fn certify_witness(&self, g: &SymMatrix, config: &BoundConfig) -> Option<(f64, Behavior)> {
        let scenario = self.scenario;
        let d = scenario.outcomes();
        let mut table = vec![0.0; scenario.table_len()];
        let mut idx = 0;
        let mut min_entry = f64::INFINITY;
        for x in 0..scenario.settings_a() {
            for y in 0..scenario.settings_b() {
                for a in 0..d {
                    for b in 0..d {
                        let v = g.get(self.cross[idx].0, self.cross[idx].1);
                        table[scenario.index(x, y, a, b)] = v;
                        min_entry = min_entry.min(v);
                        idx += 1;
                    }
                }
            }
        }

        let neg = (-min_entry).max(0.0);
        let dd = (d * d) as f64;
        let t = if neg > 0.0 { (neg / (neg + 1.0 / dd)) * (1.0 + 1e-9) + 1e-15 } else { 0.0 };
        if t > 1e-3 {
            return None; // iterate too dirty to clean cheaply
        }
        let raw = Behavior::from_table(scenario, table).ok()?;
        let uniform = Behavior::uniform(scenario);
        let candidate = if t > 0.0 {
            Behavior::mix(&[(1.0 - t, &raw), (t, &uniform)]).ok()?
        } else {
            raw
        };
        if !candidate.validate(1e-9).is_valid() {
            return None;
        }
        for (eq, target) in &config.equalities {
            if (eq.evaluate(&candidate).ok()? - target).abs() > 1e-6 {
                return None;
            }
        }

        // Membership, warm-started from the blend of the iterate with the
        // uniform moment matrix (an almost-exact completion of `candidate`).
        let partial = build_npa1_partial(&candidate).ok()?;
        let mut start = g.clone();
        if t > 0.0 {
            let uniform_moment = build_npa1_partial(&uniform).ok()?;
            start = blend(g, uniform_moment.matrix().entries(), t);
        }
        let result = complete_to_psd_from(partial.matrix(), &start, &config.solve);
        if result.status != CompletionStatus::Feasible {
            return None;
        }
        let value = self.objective.evaluate(&candidate).ok()?;
        Some((value, candidate))
    }
}

fn functional_row(scenario: Scenario, objective: &LinearObjective, rhs: f64) -> ConstraintRow {
    let kind = CertificateKind::Npa1;
    let d = scenario.outcomes();
    let mut terms = Vec::new();
    for x in 0..scenario.settings_a() {
        for y in 0..scenario.settings_b() {
            for a in 0..d {
                for b in 0..d {
                    let c = objective.coeffs()[scenario.index(x, y, a, b)];
                    if c != 0.0 {
                        terms.push((
                            row_index(kind, scenario, Party::A, x, a),
                            row_index(kind, scenario, Party::B, y, b),
                            c,
                        ));
                    }
                }
            }
        }
    }
    ConstraintRow { terms, rhs }
}

fn blend(a: &SymMatrix, b: &SymMatrix, t: f64) -> SymMatrix {
    let mut out = a.clone();
    out.add_scaled(a, -t); // out = (1-t) a
    out.add_scaled(b, t);
    out
}

enum StepOutcome {
    /// Inter-set gap fell below the witness trigger.
    Converged,
    /// Gap stopped moving at a level inconsistent with feasibility.
    Stalled,
    /// Budget ran out.
    Exhausted,
}

/// Cyclic Dykstra iteration over (orthant, PSD cone, affine subspace).
struct JointSolver<'a> {
    problem: &'a JointProblem,
    affine_rows: AffineOverride<'a>,
    config: SolveConfig,
    /// Gap at which `Converged` fires; starts loose because witnesses are
    /// certified independently, tightened on demand.
    trigger: f64,
    g: SymMatrix,
    corr_orth: SymMatrix,
    corr_psd: SymMatrix,
    corr_aff: SymMatrix,
    scratch: Vec<f64>,
    gap_history: std::collections::VecDeque<f64>,
    cycles: usize,
}

/// The affine set with one rhs entry overridden (the per-step objective pin)
/// so concurrent solver instances do not mutate the shared problem.
struct AffineOverride<'a> {
    set: &'a AffineSet,
    row: usize,
    rhs: f64,
}

impl AffineOverride<'_> {
    fn project(&self, g: &mut SymMatrix, scratch: &mut Vec<f64>) {
        let m = self.set.rows.len();
        self.set.residuals(g, scratch);
        scratch[self.row] += self.set.rows[self.row].rhs; // undo stored rhs
        scratch[self.row] -= self.rhs;
        for (r, row) in self.set.rows.iter().enumerate() {
            let mut mu = 0.0;
            for s in 0..m {
                mu += self.set.pinv[r * m + s] * scratch[s];
            }
            if mu == 0.0 {
                continue;
            }
            for &(i, j, w) in &row.terms {
                let coeff = if i == j { w } else { 0.5 * w };
                g.set(i, j, g.get(i, j) - mu * coeff);
            }
        }
    }
}

impl<'a> JointSolver<'a> {
    fn new(problem: &'a JointProblem, value: f64, warm: SymMatrix, config: SolveConfig) -> Self {
        let n = warm.n();
        JointSolver {
            affine_rows: AffineOverride {
                set: &problem.affine,
                row: problem.objective_row,
                rhs: value,
            },
            problem,
            config,
            trigger: (config.feas_tol * 100.0).max(1e-6).max(config.feas_tol),
            g: warm,
            corr_orth: SymMatrix::zeros(n),
            corr_psd: SymMatrix::zeros(n),
            corr_aff: SymMatrix::zeros(n),
            scratch: Vec::new(),
            gap_history: std::collections::VecDeque::new(),
        cycles: 0,
        }
    }

    fn iterate(&self) -> &SymMatrix {
        &self.g
    }

    fn into_iterate(self) -> SymMatrix {
        self.g
    }

    /// Demand full-precision convergence from now on. Returns false if the
    /// trigger was already tight.
    fn tighten(&mut self) -> bool {
        if self.trigger > self.config.feas_tol {
            self.trigger = self.config.feas_tol;
            self.gap_history.clear();
            true
        } else {
            false
        }
    }

    fn run(&mut self, budget: usize) -> StepOutcome {
        for _ in 0..budget {
            self.cycles += 1;

            // Orthant step.
            let t1 = self.g.add(&self.corr_orth);
            let mut o1 = t1.clone();
            for &(i, j) in &self.problem.cross {
                if o1.get(i, j) < 0.0 {
                    o1.set(i, j, 0.0);
                }
            }
            self.corr_orth = t1.sub(&o1);

            // Cone step.
            let t2 = o1.add(&self.corr_psd);
            let o2 = psd_project(&t2);
            self.corr_psd = t2.sub(&o2);

            // Affine step.
            let t3 = o2.add(&self.corr_aff);
            let mut o3 = t3.clone();
            self.affine_rows.project(&mut o3, &mut self.scratch);
            self.corr_aff = t3.sub(&o3);

            let gap = o1.distance(&o2).max(o2.distance(&o3));
            self.g = o3;

            if gap <= self.trigger {
                return StepOutcome::Converged;
            }

            self.gap_history.push_back(gap);
            if self.gap_history.len() > self.config.stall_window {
                let old = self.gap_history.pop_front().unwrap();
                let stalled = (old - gap).abs() <= (1e-10 * gap).max(1e-16);
                if stalled && gap > 10.0 * self.config.feas_tol {
                    return StepOutcome::Stalled;
                }
            }
        }
        StepOutcome::Exhausted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::deterministic_vertices;

    fn chsh_objective() -> LinearObjective {
        let scenario = Scenario::new(2, 2, 2).unwrap();
        let mut coeffs = vec![0.0; scenario.table_len()];
        for x in 0..2 {
            for y in 0..2 {
                let sign = if x == 1 && y == 1 { -1.0 } else { 1.0 };
                for a in 0..2 {
                    for b in 0..2 {
                        let oa = if a == 0 { 1.0 } else { -1.0 };
                        let ob = if b == 0 { 1.0 } else { -1.0 };
                        coeffs[scenario.index(x, y, a, b)] = sign * oa * ob;
                    }
                }
            }
        }
        LinearObjective::new(scenario, coeffs).unwrap()
    }

    #[test]
    fn zero_objective_is_zero() {
        let scenario = Scenario::new(2, 2, 2).unwrap();
        let objective =
            LinearObjective::new(scenario, vec![0.0; scenario.table_len()]).unwrap();
        let result = max_linear_over_q1(&objective, &BoundConfig::default()).unwrap();
        assert_eq!(result.lower, 0.0);
        assert_eq!(result.upper, 0.0);
        assert_eq!(result.iterations, 0);
    }

    #[test]
    fn chsh_algebraic_max_is_four() {
        assert_eq!(chsh_objective().algebraic_max(), 4.0);
    }

    #[test]
    fn chsh_vertex_bound_is_two() {
        let objective = chsh_objective();
        let best = deterministic_vertices(objective.scenario())
            .unwrap()
            .iter()
            .map(|v| objective.evaluate(v).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, 2.0);
    }

    #[test]
    fn affine_projection_is_exact() {
        let objective = chsh_objective();
        let problem = JointProblem::build(objective.scenario(), &objective, &[]).unwrap();
        let mut g = SymMatrix::zeros(9);
        // Arbitrary symmetric junk.
        for i in 0..9 {
            for j in i..9 {
                g.set(i, j, ((i * 3 + j) % 7) as f64 * 0.21 - 0.4);
            }
        }
        let over = AffineOverride { set: &problem.affine, row: problem.objective_row, rhs: 1.3 };
        let mut scratch = Vec::new();
        over.project(&mut g, &mut scratch);
        problem.affine.residuals(&g, &mut scratch);
        scratch[problem.objective_row] += problem.affine.rows[problem.objective_row].rhs;
        scratch[problem.objective_row] -= 1.3;
        let worst = scratch.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        assert!(worst <= 1e-10, "projection residual {worst}");
    }

    // Coarse CHSH bracket; the tight 1e-4 run lives in the acceptance suite.
    #[test]
    fn chsh_bound_brackets_tsirelson_at_coarse_gap() {
        let objective = chsh_objective();
        let config = BoundConfig { gap: 5e-3, ..BoundConfig::default() };
        let result = max_linear_over_q1(&objective, &config).unwrap();
        let tsirelson = 2.0 * 2.0_f64.sqrt();
        assert!(result.lower <= tsirelson + 1e-9, "lower {}", result.lower);
        assert!(result.upper >= tsirelson - 1e-9, "upper {}", result.upper);
        assert!(
            result.upper - result.lower <= 5e-3,
            "bracket [{}, {}]",
            result.lower,
            result.upper
        );
    }
}
