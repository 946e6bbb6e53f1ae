//! Bell functionals and their bounds.
//!
//! A [`BellFunctional`] is a linear function of the behavior table. Its local
//! bound comes from brute-force enumeration of the deterministic vertices;
//! its bound over the completable set comes from the bisection optimizer in
//! [`crate::conic::optimize`], reported as a bracket (witnessed lower value,
//! heuristically-infeasible upper value) rather than a single float.

use std::fmt::Write as _;

use crate::conic::{max_linear_over_q1, BisectionResult, BoundConfig, LinearObjective};
use crate::error::{Error, Result};
use crate::scenario::{Behavior, DeterministicVertices, Party, Scenario};

/// Linear functional on behaviors, with coefficients over `(X, Y, a, b)`.
#[derive(Debug, Clone)]
pub struct BellFunctional {
    scenario: Scenario,
    coefficients: Vec<f64>,
    name: Option<String>,
}

impl BellFunctional {
    pub fn new(scenario: Scenario, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != scenario.table_len() {
            return Err(Error::shape(format!(
                "functional has {} coefficients, scenario needs {}",
                coefficients.len(),
                scenario.table_len()
            )));
        }
        Ok(BellFunctional { scenario, coefficients, name: None })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn coefficient(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        self.coefficients[self.scenario.index(x, y, a, b)]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn scaled(&self, factor: f64) -> Self {
        BellFunctional {
            scenario: self.scenario,
            coefficients: self.coefficients.iter().map(|c| c * factor).collect(),
            name: self.name.clone(),
        }
    }

    pub fn objective(&self) -> LinearObjective {
        LinearObjective::new(self.scenario, self.coefficients.clone())
            .expect("coefficient shape checked at construction")
    }
}

/// The four-correlator functional `E11 + E21 + E12 - E22` with outcomes
/// mapped `0 -> +1, 1 -> -1`. Local bound 2, Tsirelson bound `2*sqrt(2)`.
pub fn chsh() -> BellFunctional {
    let scenario = Scenario::new(2, 2, 2).unwrap();
    let mut coefficients = vec![0.0; scenario.table_len()];
    for x in 0..2 {
        for y in 0..2 {
            let sign = if x == 1 && y == 1 { -1.0 } else { 1.0 };
            for a in 0..2 {
                for b in 0..2 {
                    let oa = if a == 0 { 1.0 } else { -1.0 };
                    let ob = if b == 0 { 1.0 } else { -1.0 };
                    coefficients[scenario.index(x, y, a, b)] = sign * oa * ob;
                }
            }
        }
    }
    BellFunctional { scenario, coefficients, name: Some("chsh".into()) }
}

/// The CGLMP functional for `d` outcomes on the two-setting scenario:
///
/// ```text
/// S_d = sum_{k=0}^{floor(d/2)-1} (1 - 2k/(d-1)) * (
///         [P(A1 = B1 + k) + P(B1 = A2 + k + 1) + P(A2 = B2 + k) + P(B2 = A1 + k)]
///       - [P(A1 = B1 - k - 1) + P(B1 = A2 - k) + P(A2 = B2 - k - 1) + P(B2 = A1 - k - 1)] )
/// ```
///
/// with outcome arithmetic mod `d`. For every `d >= 2` the local bound is 2.
pub fn cglmp(d: usize) -> Result<BellFunctional> {
    if d < 2 {
        return Err(Error::Domain("cglmp needs at least two outcomes".into()));
    }
    let scenario = Scenario::new(2, 2, d)?;
    let mut coefficients = vec![0.0; scenario.table_len()];
    let modd = |v: i64| -> usize { v.rem_euclid(d as i64) as usize };

    // (x, y, alice_equals_bob_plus, shift): P(A_{x+1} = B_{y+1} + shift) has
    // a = b + shift when `alice_equals_bob_plus`, else b = a + shift.
    let mut add = |x: usize, y: usize, a_eq_b_plus: bool, shift: i64, weight: f64| {
        for j in 0..d {
            let (a, b) = if a_eq_b_plus {
                (modd(j as i64 + shift), j)
            } else {
                (j, modd(j as i64 + shift))
            };
            coefficients[scenario.index(x, y, a, b)] += weight;
        }
    };

    for k in 0..(d / 2) {
        let ki = k as i64;
        let w = 1.0 - 2.0 * k as f64 / (d - 1) as f64;
        // Positive group.
        add(0, 0, true, ki, w); //  P(A1 = B1 + k)
        add(1, 0, false, ki + 1, w); //  P(B1 = A2 + k + 1)
        add(1, 1, true, ki, w); //  P(A2 = B2 + k)
        add(0, 1, false, ki, w); //  P(B2 = A1 + k)
        // Negative group.
        add(0, 0, true, -ki - 1, -w); // -P(A1 = B1 - k - 1)
        add(1, 0, false, -ki, -w); // -P(B1 = A2 - k)
        add(1, 1, true, -ki - 1, -w); // -P(A2 = B2 - k - 1)
        add(0, 1, false, -ki - 1, -w); // -P(B2 = A1 - k - 1)
    }

    Ok(BellFunctional { scenario, coefficients, name: Some(format!("cglmp{d}")) })
}

/// One-point observable value of a single setting, as a functional: the mean
/// of `O(c) = 1 - 2c/(d-1)` under that setting's marginal (read off the
/// partner's first setting, which no-signaling makes immaterial).
pub fn one_point_functional(
    scenario: Scenario,
    party: Party,
    setting: usize,
) -> Result<BellFunctional> {
    if setting >= scenario.settings(party) {
        return Err(Error::shape("setting out of range"));
    }
    let d = scenario.outcomes();
    let obs = |c: usize| 1.0 - 2.0 * c as f64 / (d - 1) as f64;
    let mut coefficients = vec![0.0; scenario.table_len()];
    for a in 0..d {
        for b in 0..d {
            match party {
                Party::A => coefficients[scenario.index(setting, 0, a, b)] = obs(a),
                Party::B => coefficients[scenario.index(0, setting, a, b)] = obs(b),
            }
        }
    }
    Ok(BellFunctional { scenario, coefficients, name: None })
}

/// `sum of coefficients * probabilities`.
pub fn evaluate(functional: &BellFunctional, behavior: &Behavior) -> Result<f64> {
    if functional.scenario != behavior.scenario() {
        return Err(Error::shape("functional and behavior scenarios differ"));
    }
    Ok(functional
        .coefficients
        .iter()
        .zip(behavior.table())
        .map(|(c, p)| c * p)
        .sum())
}

/// Local bound and its witness.
#[derive(Debug, Clone)]
pub struct LocalBound {
    pub value: f64,
    pub argmax_vertex: Behavior,
}

/// Maximum over the local deterministic vertices; ties go to the first
/// maximizer in lexicographic vertex order.
pub fn local_bound(functional: &BellFunctional) -> Result<LocalBound> {
    let mut best = f64::NEG_INFINITY;
    let mut argmax = None;
    for vertex in DeterministicVertices::new(functional.scenario)? {
        let value = evaluate(functional, &vertex)?;
        if value > best {
            best = value;
            argmax = Some(vertex);
        }
    }
    Ok(LocalBound { value: best, argmax_vertex: argmax.expect("at least one vertex") })
}

/// Bracket the maximum of the functional over the completable set.
pub fn q1_bound(functional: &BellFunctional, gap: f64) -> Result<BisectionResult> {
    q1_bound_with(functional, &BoundConfig { gap, ..BoundConfig::default() })
}

pub fn q1_bound_with(
    functional: &BellFunctional,
    config: &BoundConfig,
) -> Result<BisectionResult> {
    max_linear_over_q1(&functional.objective(), config)
}

// ---------------------------------------------------------------------------
// Text format
//
//   functional <settings_a> <settings_b> <d>
//   c <X> <Y> <a> <b> <value>      (omitted coefficients are zero)
// ---------------------------------------------------------------------------

pub fn serialize_functional(functional: &BellFunctional) -> String {
    let sc = functional.scenario;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "functional {} {} {}",
        sc.settings_a(),
        sc.settings_b(),
        sc.outcomes()
    );
    for x in 0..sc.settings_a() {
        for y in 0..sc.settings_b() {
            for a in 0..sc.outcomes() {
                for b in 0..sc.outcomes() {
                    let v = functional.coefficient(x, y, a, b);
                    if v != 0.0 {
                        let _ = writeln!(out, "c {} {} {} {} {:.17e}", x + 1, y + 1, a, b, v);
                    }
                }
            }
        }
    }
    out
}

pub fn parse_functional(text: &str) -> Result<BellFunctional> {
    let mut scenario: Option<Scenario> = None;
    let mut coefficients: Vec<f64> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        match tokens[0] {
            "functional" => {
                if scenario.is_some() {
                    return Err(Error::format(line, "duplicate functional header"));
                }
                if tokens.len() != 4 {
                    return Err(Error::format(line, "expected `functional <sA> <sB> <d>`"));
                }
                let parse = |t: &str, what: &str| -> Result<usize> {
                    t.parse().map_err(|_| Error::format(line, format!("bad {what} `{t}`")))
                };
                let sc = Scenario::new(
                    parse(tokens[1], "settings_a")?,
                    parse(tokens[2], "settings_b")?,
                    parse(tokens[3], "outcomes")?,
                )
                .map_err(|e| Error::format(line, e.to_string()))?;
                coefficients = vec![0.0; sc.table_len()];
                scenario = Some(sc);
            }
            "c" => {
                let sc = scenario
                    .ok_or_else(|| Error::format(line, "coefficient before header"))?;
                if tokens.len() != 6 {
                    return Err(Error::format(line, "expected `c <X> <Y> <a> <b> <value>`"));
                }
                let idx = |t: &str, hi: usize, base: usize, what: &str| -> Result<usize> {
                    let v: usize = t
                        .parse()
                        .map_err(|_| Error::format(line, format!("bad {what} `{t}`")))?;
                    if v < base || v >= hi + base {
                        return Err(Error::format(line, format!("{what}={v} out of range")));
                    }
                    Ok(v - base)
                };
                let x = idx(tokens[1], sc.settings_a(), 1, "X")?;
                let y = idx(tokens[2], sc.settings_b(), 1, "Y")?;
                let a = idx(tokens[3], sc.outcomes(), 0, "a")?;
                let b = idx(tokens[4], sc.outcomes(), 0, "b")?;
                let value: f64 = tokens[5]
                    .parse()
                    .map_err(|_| Error::format(line, format!("bad value `{}`", tokens[5])))?;
                coefficients[sc.index(x, y, a, b)] = value;
            }
            other => return Err(Error::format(line, format!("unknown directive `{other}`"))),
        }
    }

    let sc = scenario.ok_or_else(|| Error::format(0, "missing functional header"))?;
    BellFunctional::new(sc, coefficients)
}
