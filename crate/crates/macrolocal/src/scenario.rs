//! Bipartite measurement scenarios and the probability tables they produce.
//!
//! A [`Behavior`] is the complete description of a two-party box: the joint
//! outcome probabilities `P(a,b|X,Y)` for every pair of measurement settings.
//! Everything else in the crate is a question asked about behaviors, so this
//! module also carries the structural checks (normalization, nonnegativity,
//! no-signaling), marginals, the local deterministic vertices, the singlet
//! test-vector generator and the plain-text file format.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Default tolerance for the probability-table constraint checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Default cap on `d^sA * d^sB` for deterministic-vertex enumeration.
pub const VERTEX_ENUMERATION_CAP: u128 = 1_000_000;

/// Which side of the experiment a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Party {
    A,
    B,
}

impl Party {
    pub fn label(self) -> char {
        match self {
            Party::A => 'A',
            Party::B => 'B',
        }
    }
}

/// Measurement layout: settings per party and a uniform outcome count `d`.
///
/// Settings are indexed `0..settings` internally; the text formats and the
/// CLI use 1-based setting indices. Outcomes are 0-based everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scenario {
    settings_a: usize,
    settings_b: usize,
    outcomes: usize,
}

impl Scenario {
    pub fn new(settings_a: usize, settings_b: usize, outcomes: usize) -> Result<Self> {
        if settings_a < 1 || settings_b < 1 {
            return Err(Error::shape("each party needs at least one setting"));
        }
        if outcomes < 2 {
            return Err(Error::shape("need at least two outcomes per measurement"));
        }
        Ok(Scenario { settings_a, settings_b, outcomes })
    }

    pub fn settings_a(&self) -> usize {
        self.settings_a
    }

    pub fn settings_b(&self) -> usize {
        self.settings_b
    }

    pub fn settings(&self, party: Party) -> usize {
        match party {
            Party::A => self.settings_a,
            Party::B => self.settings_b,
        }
    }

    pub fn outcomes(&self) -> usize {
        self.outcomes
    }

    /// Number of entries in a full probability table.
    pub fn table_len(&self) -> usize {
        self.settings_a * self.settings_b * self.outcomes * self.outcomes
    }

    /// Row-major index of `P(a,b|x,y)` (all arguments 0-based).
    pub fn index(&self, x: usize, y: usize, a: usize, b: usize) -> usize {
        debug_assert!(x < self.settings_a && y < self.settings_b);
        debug_assert!(a < self.outcomes && b < self.outcomes);
        ((x * self.settings_b + y) * self.outcomes + a) * self.outcomes + b
    }
}

/// Joint outcome probabilities for every setting pair.
///
/// Construction checks only the shape; use [`Behavior::validate`] to test the
/// probabilistic constraints. That split is deliberate: several operations
/// need to hold and report on tables that are *not* valid distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    scenario: Scenario,
    table: Vec<f64>,
}

/// One-party outcome distributions `P(a|X)` and `P(b|Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTables {
    scenario: Scenario,
    p_a: Vec<f64>,
    p_b: Vec<f64>,
}

impl MarginalTables {
    pub fn prob_a(&self, x: usize, a: usize) -> f64 {
        self.p_a[x * self.scenario.outcomes + a]
    }

    pub fn prob_b(&self, y: usize, b: usize) -> f64 {
        self.p_b[y * self.scenario.outcomes + b]
    }

    pub fn prob(&self, party: Party, setting: usize, outcome: usize) -> f64 {
        match party {
            Party::A => self.prob_a(setting, outcome),
            Party::B => self.prob_b(setting, outcome),
        }
    }
}

/// Outcome of [`Behavior::validate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub normalized: bool,
    pub nonnegative: bool,
    pub no_signaling: bool,
    /// Largest absolute constraint residual over all three families.
    pub worst_violation: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.normalized && self.nonnegative && self.no_signaling
    }
}

impl Behavior {
    /// Wrap a full probability table. `table` is indexed by
    /// [`Scenario::index`]; only the length is checked here.
    pub fn from_table(scenario: Scenario, table: Vec<f64>) -> Result<Self> {
        if table.len() != scenario.table_len() {
            return Err(Error::shape(format!(
                "table has {} entries, scenario needs {}",
                table.len(),
                scenario.table_len()
            )));
        }
        Ok(Behavior { scenario, table })
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn prob(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        self.table[self.scenario.index(x, y, a, b)]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Copy with one entry replaced; handy for constructing deliberately
    /// broken tables in tests and demonstrations.
    pub fn with_entry(&self, x: usize, y: usize, a: usize, b: usize, value: f64) -> Behavior {
        let mut copy = self.clone();
        let idx = self.scenario.index(x, y, a, b);
        copy.table[idx] = value;
        copy
    }

    /// The maximally mixed behavior `P = 1/d^2`.
    pub fn uniform(scenario: Scenario) -> Self {
        let p = 1.0 / (scenario.outcomes * scenario.outcomes) as f64;
        Behavior { scenario, table: vec![p; scenario.table_len()] }
    }

    /// The extremal no-signaling box: `P(a,b|X,Y) = 1/2` iff
    /// `a XOR b = (X-1)(Y-1)` in 1-based setting indices, else 0.
    pub fn pr_box() -> Self {
        let scenario = Scenario::new(2, 2, 2).unwrap();
        let mut table = vec![0.0; scenario.table_len()];
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        if a ^ b == x * y {
                            table[scenario.index(x, y, a, b)] = 0.5;
                        }
                    }
                }
            }
        }
        Behavior { scenario, table }
    }

    /// Local deterministic behavior `P(a,b|X,Y) = [a = f(X)] [b = g(Y)]`.
    pub fn deterministic(scenario: Scenario, f: &[usize], g: &[usize]) -> Result<Self> {
        if f.len() != scenario.settings_a || g.len() != scenario.settings_b {
            return Err(Error::shape("assignment length must match setting count"));
        }
        if f.iter().chain(g).any(|&o| o >= scenario.outcomes) {
            return Err(Error::shape("assignment outcome out of range"));
        }
        let mut table = vec![0.0; scenario.table_len()];
        for x in 0..scenario.settings_a {
            for y in 0..scenario.settings_b {
                table[scenario.index(x, y, f[x], g[y])] = 1.0;
            }
        }
        Ok(Behavior { scenario, table })
    }

    /// Singlet-state statistics for planar measurements at the given angles:
    /// `P(a,b|X,Y) = (1 - (-1)^a (-1)^b cos(theta_X - phi_Y)) / 4`,
    /// so the two-point correlator with `0 -> +1, 1 -> -1` observables is
    /// `E_XY = -cos(theta_X - phi_Y)`.
    pub fn singlet(angles_a: &[f64], angles_b: &[f64]) -> Result<Self> {
        let scenario = Scenario::new(angles_a.len(), angles_b.len(), 2)?;
        let mut table = vec![0.0; scenario.table_len()];
        for (x, &theta) in angles_a.iter().enumerate() {
            for (y, &phi) in angles_b.iter().enumerate() {
                let c = (theta - phi).cos();
                for a in 0..2 {
                    for b in 0..2 {
                        let sign = if (a + b) % 2 == 0 { 1.0 } else { -1.0 };
                        table[scenario.index(x, y, a, b)] = (1.0 - sign * c) / 4.0;
                    }
                }
            }
        }
        Ok(Behavior { scenario, table })
    }

    /// Singlet behavior at angles where the CHSH functional of
    /// [`crate::bell::chsh`] reaches `2*sqrt(2)`.
    pub fn singlet_chsh_optimal() -> Self {
        use std::f64::consts::PI;
        Behavior::singlet(&[0.0, PI / 2.0], &[5.0 * PI / 4.0, 3.0 * PI / 4.0]).unwrap()
    }

    /// Convex combination of behaviors over a common scenario.
    pub fn mix(parts: &[(f64, &Behavior)]) -> Result<Self> {
        let Some(&(_, first)) = parts.first() else {
            return Err(Error::shape("mixture needs at least one component"));
        };
        let scenario = first.scenario;
        let mut weight_sum = 0.0;
        let mut table = vec![0.0; scenario.table_len()];
        for &(w, part) in parts {
            if part.scenario != scenario {
                return Err(Error::shape("mixture components must share a scenario"));
            }
            if w < -1e-12 {
                return Err(Error::Domain("mixture weights must be nonnegative".into()));
            }
            weight_sum += w;
            for (t, &p) in table.iter_mut().zip(&part.table) {
                *t += w * p;
            }
        }
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "mixture weights sum to {weight_sum}, expected 1"
            )));
        }
        Ok(Behavior { scenario, table })
    }

    /// PR box mixed with the uniform behavior at visibility `v`.
    pub fn noisy_pr(v: f64) -> Result<Self> {
        let pr = Behavior::pr_box();
        let uniform = Behavior::uniform(pr.scenario);
        Behavior::mix(&[(v, &pr), (1.0 - v, &uniform)])
    }

    /// Check normalization, nonnegativity and no-signaling, reporting the
    /// worst absolute residual across all constraints.
    pub fn validate(&self, tolerance: f64) -> ValidationReport {
        let sc = self.scenario;
        let d = sc.outcomes;

        let mut worst_norm: f64 = 0.0;
        for x in 0..sc.settings_a {
            for y in 0..sc.settings_b {
                let mut sum = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        sum += self.prob(x, y, a, b);
                    }
                }
                worst_norm = worst_norm.max((sum - 1.0).abs());
            }
        }

        let mut worst_neg: f64 = 0.0;
        for &p in &self.table {
            worst_neg = worst_neg.max(-p);
        }

        // Residuals of Bob's marginal under changes of X and vice versa.
        let mut worst_ns: f64 = 0.0;
        for y in 0..sc.settings_b {
            for b in 0..d {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for x in 0..sc.settings_a {
                    let m: f64 = (0..d).map(|a| self.prob(x, y, a, b)).sum();
                    lo = lo.min(m);
                    hi = hi.max(m);
                }
                worst_ns = worst_ns.max(hi - lo);
            }
        }
        for x in 0..sc.settings_a {
            for a in 0..d {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for y in 0..sc.settings_b {
                    let m: f64 = (0..d).map(|b| self.prob(x, y, a, b)).sum();
                    lo = lo.min(m);
                    hi = hi.max(m);
                }
                worst_ns = worst_ns.max(hi - lo);
            }
        }

        ValidationReport {
            normalized: worst_norm <= tolerance,
            nonnegative: worst_neg <= tolerance,
            no_signaling: worst_ns <= tolerance,
            worst_violation: worst_norm.max(worst_neg).max(worst_ns),
        }
    }

    /// One-party marginals, averaged over the other party's settings so that
    /// numerical signaling residue is split symmetrically.
    pub fn marginals(&self) -> Result<MarginalTables> {
        self.marginals_with_tol(DEFAULT_TOL)
    }

    pub fn marginals_with_tol(&self, tolerance: f64) -> Result<MarginalTables> {
        let report = self.validate(tolerance);
        let sc = self.scenario;
        let d = sc.outcomes;
        if !report.no_signaling {
            return Err(Error::InconsistentMarginals {
                residual: report.worst_violation,
                tolerance,
            });
        }
        let mut p_a = vec![0.0; sc.settings_a * d];
        for x in 0..sc.settings_a {
            for a in 0..d {
                let mut sum = 0.0;
                for y in 0..sc.settings_b {
                    for b in 0..d {
                        sum += self.prob(x, y, a, b);
                    }
                }
                p_a[x * d + a] = sum / sc.settings_b as f64;
            }
        }
        let mut p_b = vec![0.0; sc.settings_b * d];
        for y in 0..sc.settings_b {
            for b in 0..d {
                let mut sum = 0.0;
                for x in 0..sc.settings_a {
                    for a in 0..d {
                        sum += self.prob(x, y, a, b);
                    }
                }
                p_b[y * d + b] = sum / sc.settings_a as f64;
            }
        }
        Ok(MarginalTables { scenario: sc, p_a, p_b })
    }
}

/// Iterator over all local deterministic behaviors of a scenario, in
/// lexicographic order of the assignment tuple `(f(1),...,f(sA),g(1),...,g(sB))`
/// with the first entry most significant.
#[derive(Debug, Clone)]
pub struct DeterministicVertices {
    scenario: Scenario,
    next: u128,
    total: u128,
}

impl DeterministicVertices {
    pub fn new(scenario: Scenario) -> Result<Self> {
        Self::with_cap(scenario, VERTEX_ENUMERATION_CAP)
    }

    pub fn with_cap(scenario: Scenario, cap: u128) -> Result<Self> {
        let d = scenario.outcomes as u128;
        let digits = (scenario.settings_a + scenario.settings_b) as u32;
        let total = d
            .checked_pow(digits)
            .ok_or(Error::EnumerationTooLarge { total: u128::MAX, cap })?;
        if total > cap {
            return Err(Error::EnumerationTooLarge { total, cap });
        }
        Ok(DeterministicVertices { scenario, next: 0, total })
    }

    /// Assignment pair for a vertex index, most significant digit first.
    pub fn assignment(&self, index: u128) -> (Vec<usize>, Vec<usize>) {
        let sc = self.scenario;
        let d = sc.outcomes as u128;
        let digits = sc.settings_a + sc.settings_b;
        let mut buf = vec![0usize; digits];
        let mut rem = index;
        for slot in buf.iter_mut().rev() {
            *slot = (rem % d) as usize;
            rem /= d;
        }
        let g = buf.split_off(sc.settings_a);
        (buf, g)
    }

    pub fn len(&self) -> usize {
        self.total as usize
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

impl Iterator for DeterministicVertices {
    type Item = Behavior;

    fn next(&mut self) -> Option<Behavior> {
        if self.next >= self.total {
            return None;
        }
        let (f, g) = self.assignment(self.next);
        self.next += 1;
        Some(Behavior::deterministic(self.scenario, &f, &g).unwrap())
    }
}

/// All local deterministic vertices (see [`DeterministicVertices`] for order).
pub fn deterministic_vertices(scenario: Scenario) -> Result<Vec<Behavior>> {
    Ok(DeterministicVertices::new(scenario)?.collect())
}

// ---------------------------------------------------------------------------
// Text format
//
//   scenario <settings_a> <settings_b> <d>
//   p <X> <Y> <a> <b> <value>      (X, Y 1-based; a, b 0-based; any order)
//
// Comment lines start with '#'. Every entry must appear exactly once.
// ---------------------------------------------------------------------------

pub fn parse_behavior(text: &str) -> Result<Behavior> {
    let mut scenario: Option<Scenario> = None;
    let mut table: Vec<f64> = Vec::new();
    let mut seen: Vec<bool> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        match tokens[0] {
            "scenario" => {
                if scenario.is_some() {
                    return Err(Error::format(line, "duplicate scenario header"));
                }
                if tokens.len() != 4 {
                    return Err(Error::format(line, "expected `scenario <sA> <sB> <d>`"));
                }
                let sa = parse_usize(tokens[1], line, "settings_a")?;
                let sb = parse_usize(tokens[2], line, "settings_b")?;
                let d = parse_usize(tokens[3], line, "outcomes")?;
                let sc = Scenario::new(sa, sb, d)
                    .map_err(|e| Error::format(line, e.to_string()))?;
                table = vec![0.0; sc.table_len()];
                seen = vec![false; sc.table_len()];
                scenario = Some(sc);
            }
            "p" => {
                let sc = scenario
                    .ok_or_else(|| Error::format(line, "entry before scenario header"))?;
                if tokens.len() != 6 {
                    return Err(Error::format(line, "expected `p <X> <Y> <a> <b> <value>`"));
                }
                let x = parse_setting(tokens[1], line, sc.settings_a, "X")?;
                let y = parse_setting(tokens[2], line, sc.settings_b, "Y")?;
                let a = parse_outcome(tokens[3], line, sc.outcomes, "a")?;
                let b = parse_outcome(tokens[4], line, sc.outcomes, "b")?;
                let value: f64 = tokens[5]
                    .parse()
                    .map_err(|_| Error::format(line, format!("bad value `{}`", tokens[5])))?;
                let idx = sc.index(x, y, a, b);
                if seen[idx] {
                    return Err(Error::format(
                        line,
                        format!("duplicate entry p {} {} {a} {b}", x + 1, y + 1),
                    ));
                }
                seen[idx] = true;
                table[idx] = value;
            }
            other => {
                return Err(Error::format(line, format!("unknown directive `{other}`")));
            }
        }
    }

    let sc = scenario.ok_or_else(|| Error::format(0, "missing scenario header"))?;
    if let Some(idx) = seen.iter().position(|&s| !s) {
        let d = sc.outcomes;
        let b = idx % d;
        let a = (idx / d) % d;
        let y = (idx / (d * d)) % sc.settings_b;
        let x = idx / (d * d * sc.settings_b);
        return Err(Error::format(
            0,
            format!("missing entry p {} {} {a} {b}", x + 1, y + 1),
        ));
    }
    Behavior::from_table(sc, table)
}

/// Canonical serialization: header, then entries in `(X, Y, a, b)` order with
/// 18 significant digits (enough to round-trip every f64 exactly).
pub fn serialize_behavior(behavior: &Behavior) -> String {
    let sc = behavior.scenario();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {} {} {}",
        sc.settings_a, sc.settings_b, sc.outcomes
    );
    for x in 0..sc.settings_a {
        for y in 0..sc.settings_b {
            for a in 0..sc.outcomes {
                for b in 0..sc.outcomes {
                    let _ = writeln!(
                        out,
                        "p {} {} {} {} {:.17e}",
                        x + 1,
                        y + 1,
                        a,
                        b,
                        behavior.prob(x, y, a, b)
                    );
                }
            }
        }
    }
    out
}

fn parse_usize(token: &str, line: usize, what: &str) -> Result<usize> {
    token
        .parse()
        .map_err(|_| Error::format(line, format!("bad {what} `{token}`")))
}

fn parse_setting(token: &str, line: usize, count: usize, what: &str) -> Result<usize> {
    let v: usize = parse_usize(token, line, what)?;
    if v < 1 || v > count {
        return Err(Error::format(
            line,
            format!("{what}={v} out of range 1..={count}"),
        ));
    }
    Ok(v - 1)
}

fn parse_outcome(token: &str, line: usize, d: usize, what: &str) -> Result<usize> {
    let v: usize = parse_usize(token, line, what)?;
    if v >= d {
        return Err(Error::format(
            line,
            format!("{what}={v} out of range 0..{d}"),
        ));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_behavior_is_exactly_valid() {
        let sc = Scenario::new(2, 2, 2).unwrap();
        let report = Behavior::uniform(sc).validate(0.0);
        assert!(report.is_valid());
        assert_eq!(report.worst_violation, 0.0);
    }

    #[test]
    fn pr_box_is_no_signaling_with_uniform_marginals() {
        let pr = Behavior::pr_box();
        let report = pr.validate(0.0);
        assert!(report.is_valid());
        let m = pr.marginals().unwrap();
        for x in 0..2 {
            for a in 0..2 {
                assert_abs_diff_eq!(m.prob_a(x, a), 0.5);
                assert_abs_diff_eq!(m.prob_b(x, a), 0.5);
            }
        }
    }

    #[test]
    fn bumped_entry_breaks_normalization() {
        let u = Behavior::uniform(Scenario::new(2, 2, 2).unwrap());
        let b = u.with_entry(0, 0, 0, 0, u.prob(0, 0, 0, 0) + 0.01);
        let report = b.validate(1e-9);
        assert!(!report.normalized);
        assert!(report.worst_violation >= 0.01);
    }

    #[test]
    fn deterministic_marginals_are_zero_one() {
        let sc = Scenario::new(2, 2, 2).unwrap();
        let b = Behavior::deterministic(sc, &[0, 0], &[0, 0]).unwrap();
        let m = b.marginals().unwrap();
        for x in 0..2 {
            assert_eq!(m.prob_a(x, 0), 1.0);
            assert_eq!(m.prob_a(x, 1), 0.0);
        }
    }

    #[test]
    fn uniform_d3_marginals() {
        let sc = Scenario::new(2, 2, 3).unwrap();
        let m = Behavior::uniform(sc).marginals().unwrap();
        for x in 0..2 {
            for a in 0..3 {
                assert_abs_diff_eq!(m.prob_a(x, a), 1.0 / 3.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn vertex_counts() {
        assert_eq!(deterministic_vertices(Scenario::new(2, 2, 2).unwrap()).unwrap().len(), 16);
        assert_eq!(deterministic_vertices(Scenario::new(1, 1, 2).unwrap()).unwrap().len(), 4);
        assert_eq!(deterministic_vertices(Scenario::new(2, 2, 3).unwrap()).unwrap().len(), 81);
    }

    #[test]
    fn vertex_order_is_lexicographic() {
        let sc = Scenario::new(2, 2, 2).unwrap();
        let vertices = deterministic_vertices(sc).unwrap();
        // Index 0: all-zero assignments. Index 1: g = (0,1). Index 15: all ones.
        assert_eq!(vertices[0], Behavior::deterministic(sc, &[0, 0], &[0, 0]).unwrap());
        assert_eq!(vertices[1], Behavior::deterministic(sc, &[0, 0], &[0, 1]).unwrap());
        assert_eq!(vertices[15], Behavior::deterministic(sc, &[1, 1], &[1, 1]).unwrap());
    }

    #[test]
    fn vertex_cap_is_enforced() {
        let sc = Scenario::new(8, 8, 8).unwrap();
        match DeterministicVertices::new(sc) {
            Err(Error::EnumerationTooLarge { .. }) => {}
            other => panic!("expected enumeration cap error, got {other:?}"),
        }
    }

    #[test]
    fn every_vertex_validates_exactly() {
        let sc = Scenario::new(2, 2, 3).unwrap();
        for v in DeterministicVertices::new(sc).unwrap() {
            let report = v.validate(0.0);
            assert!(report.is_valid());
            assert_eq!(report.worst_violation, 0.0);
        }
    }

    #[test]
    fn singlet_anticorrelated_at_equal_angles() {
        let b = Behavior::singlet(&[0.0], &[0.0]).unwrap();
        assert_eq!(b.prob(0, 0, 0, 0), 0.0);
        assert_eq!(b.prob(0, 0, 1, 1), 0.0);
        assert_abs_diff_eq!(b.prob(0, 0, 0, 1), 0.5);
    }

    #[test]
    fn singlet_correlated_at_opposite_angles() {
        let b = Behavior::singlet(&[0.0], &[std::f64::consts::PI]).unwrap();
        assert_abs_diff_eq!(b.prob(0, 0, 0, 0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b.prob(0, 0, 0, 1), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn singlet_optimal_correlators() {
        // Independent oracle: E_XY = -cos(theta_X - phi_Y) by direct summation.
        let b = Behavior::singlet_chsh_optimal();
        let e = |x: usize, y: usize| -> f64 {
            let mut s = 0.0;
            for a in 0..2 {
                for bo in 0..2 {
                    let sign = if (a + bo) % 2 == 0 { 1.0 } else { -1.0 };
                    s += sign * b.prob(x, y, a, bo);
                }
            }
            s
        };
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(e(0, 0), inv_sqrt2, epsilon = 1e-12);
        assert_abs_diff_eq!(e(0, 1), inv_sqrt2, epsilon = 1e-12);
        assert_abs_diff_eq!(e(1, 0), inv_sqrt2, epsilon = 1e-12);
        assert_abs_diff_eq!(e(1, 1), -inv_sqrt2, epsilon = 1e-12);
        let chsh = e(0, 0) + e(1, 0) + e(0, 1) - e(1, 1);
        assert_abs_diff_eq!(chsh, 2.0 * 2.0_f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn singlet_always_validates() {
        let b = Behavior::singlet(&[0.3, 1.1, 2.7], &[0.9, 2.2]).unwrap();
        let report = b.validate(1e-12);
        assert!(report.is_valid(), "worst violation {}", report.worst_violation);
    }

    #[test]
    fn serialize_parse_round_trip_is_exact() {
        let b = Behavior::singlet(&[0.1, 0.7], &[0.2, 1.9]).unwrap();
        let text = serialize_behavior(&b);
        let back = parse_behavior(&text).unwrap();
        assert_eq!(b, back);
        assert_eq!(serialize_behavior(&back), text);
    }

    #[test]
    fn parse_reports_missing_entry() {
        let b = Behavior::uniform(Scenario::new(1, 1, 2).unwrap());
        let mut text = serialize_behavior(&b);
        // Drop the `p 1 1 1 0 ...` line.
        text = text
            .lines()
            .filter(|l| !l.starts_with("p 1 1 1 0"))
            .collect::<Vec<_>>()
            .join("\n");
        match parse_behavior(&text) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("missing entry p 1 1 1 0"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_out_of_range_setting() {
        let text = "scenario 1 1 2\np 0 1 0 0 0.25\n";
        match parse_behavior(text) {
            Err(Error::Format { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("out of range"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_duplicates() {
        let text = "scenario 1 1 2\np 1 1 0 0 0.25\np 1 1 0 0 0.25\n";
        match parse_behavior(text) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn mixture_of_vertices_validates_tightly() {
        let sc = Scenario::new(2, 2, 2).unwrap();
        let vs = deterministic_vertices(sc).unwrap();
        let parts: Vec<(f64, &Behavior)> = vs.iter().map(|v| (1.0 / 16.0, v)).collect();
        let mixed = Behavior::mix(&parts).unwrap();
        assert!(mixed.validate(1e-12).is_valid());
    }

    #[test]
    fn marginals_error_on_signaling_table() {
        // Alice's outcome tracks Bob's *setting*: maximally signaling.
        let sc = Scenario::new(1, 2, 2).unwrap();
        let mut table = vec![0.0; sc.table_len()];
        table[sc.index(0, 0, 0, 0)] = 1.0;
        table[sc.index(0, 1, 1, 0)] = 1.0;
        let b = Behavior::from_table(sc, table).unwrap();
        match b.marginals() {
            Err(Error::InconsistentMarginals { residual, .. }) => assert!(residual >= 1.0),
            other => panic!("expected marginals error, got {other:?}"),
        }
    }
}
