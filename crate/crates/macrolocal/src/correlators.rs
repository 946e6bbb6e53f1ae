//! One- and two-point correlators and the arcsin conditions.
//!
//! For two settings and two outcomes per party, the completable behaviors are
//! characterized in correlator terms by the Tsirelson-Landau-Masanes
//! inequalities `|sum arcsin E_XY - 2 arcsin E_X'Y'| <= pi`, applied to the
//! raw correlators when the marginals are unbiased and to the normalized
//! correlators `(E_XY - E_X E_Y) / sqrt((1-E_X^2)(1-E_Y^2))` in general.
//! That closed form is the independent oracle against which the projection
//! solver is cross-checked.
//!
//! [`quantum_realizable_correlators`] decides whether a two-point correlator
//! set admits unit vectors with the prescribed pairwise inner products (the
//! Gram construction of a quantum model) by completing a partial matrix with
//! unit diagonal and the correlators on the cross block.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::conic::{complete_to_psd, sym_eig, CompletionStatus, PartialMatrix, SolveConfig, SymMatrix};
use crate::error::{Error, Result};
use crate::scenario::{Behavior, Party, Scenario};

/// Real value assigned to each outcome of each setting, within `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ObservableAssignment {
    scenario: Scenario,
    /// `[party-major: Alice settings then Bob settings][outcome]`
    values: Vec<f64>,
}

impl ObservableAssignment {
    pub fn new(scenario: Scenario, values: Vec<f64>) -> Result<Self> {
        let expected = (scenario.settings_a() + scenario.settings_b()) * scenario.outcomes();
        if values.len() != expected {
            return Err(Error::shape(format!(
                "expected {expected} observable values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| v.abs() > 1.0 + 1e-12) {
            return Err(Error::Domain("observable values must lie in [-1, 1]".into()));
        }
        Ok(ObservableAssignment { scenario, values })
    }

    /// The `+1/-1` assignment for two-outcome scenarios: outcome 0 maps to +1.
    pub fn dichotomic(scenario: Scenario) -> Result<Self> {
        if scenario.outcomes() != 2 {
            return Err(Error::Domain(
                "the default +1/-1 observables need two outcomes".into(),
            ));
        }
        let settings = scenario.settings_a() + scenario.settings_b();
        let values = (0..settings)
            .flat_map(|_| [1.0, -1.0])
            .collect();
        Ok(ObservableAssignment { scenario, values })
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn value(&self, party: Party, setting: usize, outcome: usize) -> f64 {
        let d = self.scenario.outcomes();
        let base = match party {
            Party::A => setting,
            Party::B => self.scenario.settings_a() + setting,
        };
        self.values[base * d + outcome]
    }
}

/// One- and two-point correlators of a behavior under an observable
/// assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorSet {
    settings_a: usize,
    settings_b: usize,
    /// `E_X` for Alice's settings, then `E_Y` for Bob's.
    pub one_point: Vec<f64>,
    /// Row-major over `(X, Y)`.
    pub two_point: Vec<f64>,
}

impl CorrelatorSet {
    pub fn new(settings_a: usize, settings_b: usize, one_point: Vec<f64>, two_point: Vec<f64>) -> Result<Self> {
        if one_point.len() != settings_a + settings_b || two_point.len() != settings_a * settings_b {
            return Err(Error::shape("correlator array sizes do not match settings"));
        }
        if one_point.iter().chain(&two_point).any(|v| v.abs() > 1.0 + 1e-9) {
            return Err(Error::Domain("correlators must lie in [-1, 1]".into()));
        }
        Ok(CorrelatorSet { settings_a, settings_b, one_point, two_point })
    }

    pub fn settings_a(&self) -> usize {
        self.settings_a
    }

    pub fn settings_b(&self) -> usize {
        self.settings_b
    }

    pub fn e_one(&self, party: Party, setting: usize) -> f64 {
        match party {
            Party::A => self.one_point[setting],
            Party::B => self.one_point[self.settings_a + setting],
        }
    }

    pub fn e_two(&self, x: usize, y: usize) -> f64 {
        self.two_point[x * self.settings_b + y]
    }
}

/// Compute the correlators `E_XY = sum P(a,b|X,Y) O_X(a) O_Y(b)` and
/// `E_Z = sum P(c|Z) O_Z(c)`.
pub fn correlators(behavior: &Behavior, obs: &ObservableAssignment) -> Result<CorrelatorSet> {
    if behavior.scenario() != obs.scenario() {
        return Err(Error::shape("behavior and observables scenarios differ"));
    }
    let sc = behavior.scenario();
    let d = sc.outcomes();
    let marginals = behavior.marginals()?;

    let mut one_point = Vec::with_capacity(sc.settings_a() + sc.settings_b());
    for party in [Party::A, Party::B] {
        for setting in 0..sc.settings(party) {
            let e: f64 = (0..d)
                .map(|c| marginals.prob(party, setting, c) * obs.value(party, setting, c))
                .sum();
            one_point.push(e);
        }
    }

    let mut two_point = Vec::with_capacity(sc.settings_a() * sc.settings_b());
    for x in 0..sc.settings_a() {
        for y in 0..sc.settings_b() {
            let mut e = 0.0;
            for a in 0..d {
                for b in 0..d {
                    e += behavior.prob(x, y, a, b)
                        * obs.value(Party::A, x, a)
                        * obs.value(Party::B, y, b);
                }
            }
            two_point.push(e);
        }
    }

    CorrelatorSet::new(sc.settings_a(), sc.settings_b(), one_point, two_point)
}

/// Verdict of the arcsin checks. `worst_slack` is `pi` minus the largest
/// left-hand side; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TlmVerdict {
    pub satisfied: bool,
    pub worst_slack: f64,
}

/// The arcsin conditions on four two-point correlators (two settings per
/// party): `|sum_XY arcsin E_XY - 2 arcsin E_X'Y'| <= pi` for all `(X', Y')`.
pub fn tlm_check(two_point: &[f64]) -> Result<TlmVerdict> {
    if two_point.len() != 4 {
        return Err(Error::shape("the arcsin conditions need a 2x2 correlator table"));
    }
    let mut clamped = [0.0f64; 4];
    for (slot, &e) in clamped.iter_mut().zip(two_point) {
        if e.abs() > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("correlator {e} outside [-1, 1]")));
        }
        *slot = e.clamp(-1.0, 1.0);
    }
    let asins: Vec<f64> = clamped.iter().map(|e| e.asin()).collect();
    let total: f64 = asins.iter().sum();
    let mut worst_lhs = 0.0f64;
    for s in &asins {
        worst_lhs = worst_lhs.max((total - 2.0 * s).abs());
    }
    Ok(TlmVerdict { satisfied: worst_lhs <= PI + 1e-12, worst_slack: PI - worst_lhs })
}

/// The biased arcsin conditions: normalize each correlator by the marginal
/// bias, `E~_XY = (E_XY - E_X E_Y) / sqrt((1-E_X^2)(1-E_Y^2))`, and apply
/// [`tlm_check`].
///
/// Degenerate case: when some `|E_Z| = 1` the denominator vanishes; a
/// deterministic +-1 marginal forces `E_XY = E_X E_Y` for every pair touching
/// `Z`, so the conditions hold iff that product rule does, with the affected
/// normalized correlators set to zero.
pub fn biased_tlm_check(corr: &CorrelatorSet) -> Result<TlmVerdict> {
    if corr.settings_a != 2 || corr.settings_b != 2 {
        return Err(Error::shape("the biased arcsin conditions need 2 settings per party"));
    }
    let deterministic = |e: f64| 1.0 - e.abs() <= 1e-12;
    let mut product_violation = 0.0f64;
    let mut normalized = [0.0f64; 4];
    for x in 0..2 {
        for y in 0..2 {
            let exy = corr.e_two(x, y);
            let ex = corr.e_one(Party::A, x);
            let ey = corr.e_one(Party::B, y);
            if deterministic(ex) || deterministic(ey) {
                product_violation = product_violation.max((exy - ex * ey).abs());
                normalized[x * 2 + y] = 0.0;
                continue;
            }
            let denom = ((1.0 - ex * ex) * (1.0 - ey * ey)).sqrt();
            let e = (exy - ex * ey) / denom;
            if e.abs() > 1.0 + 1e-9 {
                return Err(Error::Consistency(format!(
                    "normalized correlator {e} exceeds 1: no behavior can produce this set"
                )));
            }
            normalized[x * 2 + y] = e.clamp(-1.0, 1.0);
        }
    }
    if product_violation > 1e-9 {
        return Ok(TlmVerdict { satisfied: false, worst_slack: -product_violation });
    }
    tlm_check(&normalized)
}

/// Result of the correlator realizability check.
#[derive(Debug, Clone)]
pub struct RealizabilityResult {
    pub status: CompletionStatus,
    pub gram_vectors: Option<GramVectors>,
}

impl RealizabilityResult {
    pub fn realizable(&self) -> bool {
        self.status == CompletionStatus::Feasible
    }
}

/// Unit vectors `u_X` for Alice and `v_Y` for Bob with
/// `u_X . v_Y = E_XY`: a quantum model for the two-point correlators.
#[derive(Debug, Clone)]
pub struct GramVectors {
    pub alice: Vec<Vec<f64>>,
    pub bob: Vec<Vec<f64>>,
}

impl GramVectors {
    pub fn correlator(&self, x: usize, y: usize) -> f64 {
        self.alice[x].iter().zip(&self.bob[y]).map(|(a, b)| a * b).sum()
    }
}

/// Decide whether the two-point correlators admit a quantum model: complete
/// the matrix with unit diagonal, free same-party off-diagonals and the
/// correlators on the cross block to PSD, then extract Gram vectors from the
/// eigen-square-root of the completion.
pub fn quantum_realizable_correlators(corr: &CorrelatorSet) -> Result<RealizabilityResult> {
    quantum_realizable_with(corr, &SolveConfig::default())
}

pub fn quantum_realizable_with(
    corr: &CorrelatorSet,
    config: &SolveConfig,
) -> Result<RealizabilityResult> {
    let sa = corr.settings_a;
    let sb = corr.settings_b;
    let n = sa + sb;
    let mut entries = SymMatrix::zeros(n);
    let mut fixed = vec![false; n * n];
    for i in 0..n {
        entries.set(i, i, 1.0);
        fixed[i * n + i] = true;
    }
    for x in 0..sa {
        for y in 0..sb {
            let j = sa + y;
            entries.set(x, j, corr.e_two(x, y));
            fixed[x * n + j] = true;
            fixed[j * n + x] = true;
        }
    }
    let partial = PartialMatrix::new(entries, fixed)?;
    let result = complete_to_psd(&partial, config);
    let gram_vectors = result.completion.as_ref().map(|completion| {
        let rows = sym_eig(completion)
            .expect("completion is symmetric")
            .gram_rows();
        GramVectors { alice: rows[..sa].to_vec(), bob: rows[sa..].to_vec() }
    });
    Ok(RealizabilityResult { status: result.status, gram_vectors })
}

// ---------------------------------------------------------------------------
// CSV export: `E X Y value` rows for two-point correlators and `E Z value`
// rows for one-point correlators, with Bob's settings offset by Alice's
// count in the global numbering.
// ---------------------------------------------------------------------------

pub fn serialize_correlators(corr: &CorrelatorSet) -> String {
    let mut out = String::new();
    for x in 0..corr.settings_a {
        for y in 0..corr.settings_b {
            let _ = writeln!(out, "E {} {} {:.17e}", x + 1, y + 1, corr.e_two(x, y));
        }
    }
    for (z, e) in corr.one_point.iter().enumerate() {
        let _ = writeln!(out, "E {} {:.17e}", z + 1, e);
    }
    out
}

/// Parse the CSV form; needs the setting counts to interpret the rows.
pub fn parse_correlators(text: &str, settings_a: usize, settings_b: usize) -> Result<CorrelatorSet> {
    let mut one_point = vec![None; settings_a + settings_b];
    let mut two_point = vec![None; settings_a * settings_b];
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens[0] != "E" {
            return Err(Error::format(line, format!("unknown row `{}`", tokens[0])));
        }
        let value: f64 = tokens
            .last()
            .unwrap()
            .parse()
            .map_err(|_| Error::format(line, "bad correlator value"))?;
        match tokens.len() {
            4 => {
                let x: usize = tokens[1]
                    .parse()
                    .map_err(|_| Error::format(line, "bad setting index"))?;
                let y: usize = tokens[2]
                    .parse()
                    .map_err(|_| Error::format(line, "bad setting index"))?;
                if x < 1 || x > settings_a || y < 1 || y > settings_b {
                    return Err(Error::format(line, "setting index out of range"));
                }
                two_point[(x - 1) * settings_b + (y - 1)] = Some(value);
            }
            3 => {
                let z: usize = tokens[1]
                    .parse()
                    .map_err(|_| Error::format(line, "bad setting index"))?;
                if z < 1 || z > settings_a + settings_b {
                    return Err(Error::format(line, "setting index out of range"));
                }
                one_point[z - 1] = Some(value);
            }
            _ => return Err(Error::format(line, "expected `E X Y value` or `E Z value`")),
        }
    }
    let one_point: Vec<f64> = one_point
        .into_iter()
        .map(|v| v.ok_or_else(|| Error::format(0, "missing one-point correlator")))
        .collect::<Result<_>>()?;
    let two_point: Vec<f64> = two_point
        .into_iter()
        .map(|v| v.ok_or_else(|| Error::format(0, "missing two-point correlator")))
        .collect::<Result<_>>()?;
    CorrelatorSet::new(settings_a, settings_b, one_point, two_point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dichotomic_correlators(behavior: &Behavior) -> CorrelatorSet {
        let obs = ObservableAssignment::dichotomic(behavior.scenario()).unwrap();
        correlators(behavior, &obs).unwrap()
    }

    #[test]
    fn pr_box_correlators() {
        let corr = dichotomic_correlators(&Behavior::pr_box());
        assert_eq!(corr.two_point, vec![1.0, 1.0, 1.0, -1.0]);
        for e in &corr.one_point {
            assert_abs_diff_eq!(*e, 0.0);
        }
    }

    #[test]
    fn uniform_correlators_vanish() {
        let corr = dichotomic_correlators(&Behavior::uniform(Scenario::new(2, 2, 2).unwrap()));
        for e in corr.one_point.iter().chain(&corr.two_point) {
            assert_abs_diff_eq!(*e, 0.0);
        }
    }

    #[test]
    fn singlet_optimal_two_point() {
        let corr = dichotomic_correlators(&Behavior::singlet_chsh_optimal());
        let r = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(corr.e_two(0, 0), r, epsilon = 1e-12);
        assert_abs_diff_eq!(corr.e_two(0, 1), r, epsilon = 1e-12);
        assert_abs_diff_eq!(corr.e_two(1, 0), r, epsilon = 1e-12);
        assert_abs_diff_eq!(corr.e_two(1, 1), -r, epsilon = 1e-12);
    }

    #[test]
    fn tlm_saturated_at_tsirelson_correlators() {
        let r = 1.0 / 2.0_f64.sqrt();
        let verdict = tlm_check(&[r, r, r, -r]).unwrap();
        assert!(verdict.satisfied);
        assert_abs_diff_eq!(verdict.worst_slack, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tlm_violated_beyond_tsirelson() {
        let verdict = tlm_check(&[0.8, 0.8, 0.8, -0.8]).unwrap();
        assert!(!verdict.satisfied);
        // 4 * arcsin(0.8) - pi
        assert_abs_diff_eq!(verdict.worst_slack, PI - 4.0 * 0.8_f64.asin(), epsilon = 1e-12);
    }

    #[test]
    fn tlm_trivial_at_zero_correlators() {
        let verdict = tlm_check(&[0.0; 4]).unwrap();
        assert!(verdict.satisfied);
        assert_abs_diff_eq!(verdict.worst_slack, PI);
    }

    #[test]
    fn tlm_rejects_out_of_domain() {
        assert!(tlm_check(&[1.5, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn biased_matches_unbiased_when_marginals_vanish() {
        for e in [[0.2, -0.4, 0.6, 0.1], [0.7, 0.7, 0.7, -0.7]] {
            let corr = CorrelatorSet::new(2, 2, vec![0.0; 4], e.to_vec()).unwrap();
            let biased = biased_tlm_check(&corr).unwrap();
            let plain = tlm_check(&e).unwrap();
            assert_eq!(biased.satisfied, plain.satisfied);
            assert_abs_diff_eq!(biased.worst_slack, plain.worst_slack, epsilon = 1e-12);
        }
    }

    #[test]
    fn biased_degenerate_marginal_follows_product_rule() {
        // E_1 = 1 forces E_1Y = E_Y = 0 here; remaining correlators are free
        // but must satisfy the plain conditions.
        let corr = CorrelatorSet::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 0.5],
        )
        .unwrap();
        let verdict = biased_tlm_check(&corr).unwrap();
        assert!(verdict.satisfied);

        let broken = CorrelatorSet::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.3, 0.0, 0.5, 0.5],
        )
        .unwrap();
        let verdict = biased_tlm_check(&broken).unwrap();
        assert!(!verdict.satisfied);
        assert!(verdict.worst_slack <= -0.3 + 1e-12);
    }

    #[test]
    fn noisy_pr_threshold_is_inverse_sqrt2() {
        // 4 arcsin(v) <= pi exactly at v = 1/sqrt(2).
        for v in [0.70, 0.7071067811865475, 0.72] {
            let corr = CorrelatorSet::new(2, 2, vec![0.0; 4], vec![v, v, v, -v]).unwrap();
            let verdict = biased_tlm_check(&corr).unwrap();
            let expected = v <= 1.0 / 2.0_f64.sqrt() + 1e-12;
            assert_eq!(verdict.satisfied, expected, "visibility {v}");
        }
    }

    #[test]
    fn zero_correlators_are_realizable() {
        let corr = CorrelatorSet::new(2, 2, vec![0.0; 4], vec![0.0; 4]).unwrap();
        let result = quantum_realizable_correlators(&corr).unwrap();
        assert!(result.realizable());
    }

    #[test]
    fn all_ones_correlators_are_realizable() {
        let corr = CorrelatorSet::new(2, 2, vec![0.0; 4], vec![1.0; 4]).unwrap();
        let result = quantum_realizable_correlators(&corr).unwrap();
        assert!(result.realizable());
        let gram = result.gram_vectors.unwrap();
        for x in 0..2 {
            for y in 0..2 {
                assert_abs_diff_eq!(gram.correlator(x, y), 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn pr_correlators_are_not_realizable() {
        // Equivalent to the arcsin violation: the sum reaches 2 pi.
        let corr = CorrelatorSet::new(2, 2, vec![0.0; 4], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let tlm = tlm_check(&corr.two_point).unwrap();
        assert!(!tlm.satisfied);
        let result = quantum_realizable_correlators(&corr).unwrap();
        assert_eq!(result.status, CompletionStatus::Infeasible);
    }

    #[test]
    fn gram_vectors_reproduce_singlet_correlators() {
        let corr = dichotomic_correlators(&Behavior::singlet_chsh_optimal());
        let result = quantum_realizable_correlators(&corr).unwrap();
        assert!(result.realizable());
        let gram = result.gram_vectors.unwrap();
        for x in 0..2 {
            for y in 0..2 {
                assert_abs_diff_eq!(gram.correlator(x, y), corr.e_two(x, y), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn tlm_verdict_invariant_under_observable_sign_flip() {
        // Flipping one setting's observable negates its row/column of E;
        // arcsin oddness keeps the verdict.
        let sets = [
            [0.5, -0.2, 0.3, 0.6],
            [0.71, 0.71, 0.71, -0.71],
            [0.9, 0.9, 0.9, -0.9],
        ];
        for e in sets {
            let base = tlm_check(&e).unwrap();
            let flipped = [-e[0], -e[1], e[2], e[3]]; // flip Alice setting 1
            let alt = tlm_check(&flipped).unwrap();
            assert_eq!(base.satisfied, alt.satisfied);
            assert_abs_diff_eq!(base.worst_slack, alt.worst_slack, epsilon = 1e-12);
        }
    }

    #[test]
    fn correlator_csv_round_trip() {
        let corr = dichotomic_correlators(&Behavior::singlet_chsh_optimal());
        let text = serialize_correlators(&corr);
        let back = parse_correlators(&text, 2, 2).unwrap();
        assert_eq!(back, corr);
    }
}
