//! Partially-fixed certificate matrices for a behavior.
//!
//! Two equivalent forms are used throughout the crate:
//!
//! * the covariance form `Gamma`, the central-limit covariance matrix of the
//!   intensity fluctuations: cross block `P(a,b) - P(a)P(b)`, same-setting
//!   blocks `delta P(a) - P(a)P(a')`, entries between different settings of
//!   the same party unknown;
//! * the order-1 moment form `gamma` (one extra identity row/column): first
//!   row `(1, P_A, P_B)`, cross block `P(a,b)`, same-setting blocks
//!   `delta P(a)`, same free pattern.
//!
//! The two are Schur complements of one another with respect to the identity
//! entry, so a completion of one is PSD exactly when the converted completion
//! of the other is. A behavior's macroscopic statistics admit a classical
//! joint model precisely when the free entries can be filled to a PSD matrix;
//! the actual search lives in [`crate::conic`].

use crate::conic::{sym_eig, PartialMatrix, SymMatrix};
use crate::error::{Error, Result};
use crate::scenario::{Behavior, MarginalTables, Party, Scenario, DEFAULT_TOL};

/// Which certificate form a matrix is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateKind {
    /// Covariance form, size `|A| + |B|`.
    Covariance,
    /// Order-1 moment form with identity row, size `1 + |A| + |B|`.
    Npa1,
}

impl CertificateKind {
    pub fn token(self) -> &'static str {
        match self {
            CertificateKind::Covariance => "covariance",
            CertificateKind::Npa1 => "npa1",
        }
    }

    pub fn from_token(token: &str) -> Result<Self> {
        match token {
            "covariance" | "gamma" => Ok(CertificateKind::Covariance),
            "npa1" => Ok(CertificateKind::Npa1),
            other => Err(Error::Consistency(format!("unknown certificate kind `{other}`"))),
        }
    }

    pub fn size(self, scenario: Scenario) -> usize {
        let outcomes =
            (scenario.settings_a() + scenario.settings_b()) * scenario.outcomes();
        match self {
            CertificateKind::Covariance => outcomes,
            CertificateKind::Npa1 => 1 + outcomes,
        }
    }
}

/// Row label of a certificate matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    Identity,
    Outcome { party: Party, setting: usize, outcome: usize },
}

/// A certificate matrix for a behavior: a [`PartialMatrix`] plus its kind,
/// row labels and the scenario it was built from.
///
/// Row order is identity (moment form only), then Alice's outcomes by
/// `(setting, outcome)`, then Bob's.
#[derive(Debug, Clone)]
pub struct PartialSymmetricMatrix {
    kind: CertificateKind,
    scenario: Scenario,
    labels: Vec<RowLabel>,
    matrix: PartialMatrix,
}

impl PartialSymmetricMatrix {
    pub fn kind(&self) -> CertificateKind {
        self.kind
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn labels(&self) -> &[RowLabel] {
        &self.labels
    }

    pub fn matrix(&self) -> &PartialMatrix {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    /// Row index of an outcome coordinate.
    pub fn row_of(&self, party: Party, setting: usize, outcome: usize) -> usize {
        row_index(self.kind, self.scenario, party, setting, outcome)
    }
}

pub(crate) fn row_index(
    kind: CertificateKind,
    scenario: Scenario,
    party: Party,
    setting: usize,
    outcome: usize,
) -> usize {
    let d = scenario.outcomes();
    let base = match kind {
        CertificateKind::Covariance => 0,
        CertificateKind::Npa1 => 1,
    };
    match party {
        Party::A => base + setting * d + outcome,
        Party::B => base + (scenario.settings_a() + setting) * d + outcome,
    }
}

fn labels_for(kind: CertificateKind, scenario: Scenario) -> Vec<RowLabel> {
    let mut labels = Vec::with_capacity(kind.size(scenario));
    if kind == CertificateKind::Npa1 {
        labels.push(RowLabel::Identity);
    }
    for party in [Party::A, Party::B] {
        for setting in 0..scenario.settings(party) {
            for outcome in 0..scenario.outcomes() {
                labels.push(RowLabel::Outcome { party, setting, outcome });
            }
        }
    }
    labels
}

fn checked_marginals(behavior: &Behavior) -> Result<MarginalTables> {
    let report = behavior.validate(DEFAULT_TOL);
    if !report.is_valid() {
        return Err(Error::Validation(format!(
            "worst constraint residual {:.3e}",
            report.worst_violation
        )));
    }
    behavior.marginals()
}

/// Covariance-form partial matrix of a behavior. Free entries start at zero.
pub fn build_covariance_partial(behavior: &Behavior) -> Result<PartialSymmetricMatrix> {
    let marginals = checked_marginals(behavior)?;
    let scenario = behavior.scenario();
    let kind = CertificateKind::Covariance;
    let labels = labels_for(kind, scenario);
    let n = labels.len();
    let mut entries = SymMatrix::zeros(n);
    let mut fixed = vec![false; n * n];
    let mut fix = |entries: &mut SymMatrix, i: usize, j: usize, v: f64| {
        entries.set(i, j, v);
        fixed[i * n + j] = true;
        fixed[j * n + i] = true;
    };

    for i in 0..n {
        for j in i..n {
            let (RowLabel::Outcome { party: pi, setting: si, outcome: oi },
                 RowLabel::Outcome { party: pj, setting: sj, outcome: oj }) =
                (labels[i], labels[j])
            else {
                unreachable!("covariance form has no identity row");
            };
            match (pi, pj) {
                (Party::A, Party::B) => {
                    let joint = behavior.prob(si, sj, oi, oj);
                    let v = joint - marginals.prob_a(si, oi) * marginals.prob_b(sj, oj);
                    fix(&mut entries, i, j, v);
                }
                (Party::A, Party::A) | (Party::B, Party::B) if si == sj => {
                    let pa = marginals.prob(pi, si, oi);
                    let pb = marginals.prob(pj, sj, oj);
                    let v = if oi == oj { pa - pa * pb } else { -pa * pb };
                    fix(&mut entries, i, j, v);
                }
                _ => {} // same party, different settings: free, starts at 0
            }
        }
    }

    Ok(PartialSymmetricMatrix {
        kind,
        scenario,
        labels,
        matrix: PartialMatrix::new(entries, fixed)?,
    })
}

/// Moment-form (order-1) partial matrix of a behavior. Free entries start at
/// the product of marginals, the Schur image of the covariance form's zeros.
pub fn build_npa1_partial(behavior: &Behavior) -> Result<PartialSymmetricMatrix> {
    let marginals = checked_marginals(behavior)?;
    let scenario = behavior.scenario();
    let kind = CertificateKind::Npa1;
    let labels = labels_for(kind, scenario);
    let n = labels.len();
    let mut entries = SymMatrix::zeros(n);
    let mut fixed = vec![false; n * n];
    let mut fix = |entries: &mut SymMatrix, i: usize, j: usize, v: f64| {
        entries.set(i, j, v);
        fixed[i * n + j] = true;
        fixed[j * n + i] = true;
    };

    let marginal_of = |label: RowLabel| -> f64 {
        match label {
            RowLabel::Identity => 1.0,
            RowLabel::Outcome { party, setting, outcome } => {
                marginals.prob(party, setting, outcome)
            }
        }
    };

    for i in 0..n {
        for j in i..n {
            match (labels[i], labels[j]) {
                (RowLabel::Identity, _) => {
                    fix(&mut entries, i, j, marginal_of(labels[j]));
                }
                (RowLabel::Outcome { party: Party::A, setting: si, outcome: oi },
                 RowLabel::Outcome { party: Party::B, setting: sj, outcome: oj }) => {
                    fix(&mut entries, i, j, behavior.prob(si, sj, oi, oj));
                }
                (RowLabel::Outcome { party: pi, setting: si, outcome: oi },
                 RowLabel::Outcome { party: pj, setting: sj, outcome: oj })
                    if pi == pj && si == sj =>
                {
                    let v = if oi == oj { marginals.prob(pi, si, oi) } else { 0.0 };
                    fix(&mut entries, i, j, v);
                }
                _ => {
                    // Free; start at the product of marginals.
                    entries.set(i, j, marginal_of(labels[i]) * marginal_of(labels[j]));
                }
            }
        }
    }

    Ok(PartialSymmetricMatrix {
        kind,
        scenario,
        labels,
        matrix: PartialMatrix::new(entries, fixed)?,
    })
}

/// Convert a *completed* certificate between the two forms via the Schur
/// rule: the covariance form is the moment form's outcome block minus the
/// rank-one product of marginals, and vice versa. Applying the conversion
/// twice is the identity.
///
/// The behavior supplies the marginal vector and is cross-checked against the
/// completion's fixed entries.
pub fn schur_convert(
    completion: &SymMatrix,
    from: CertificateKind,
    behavior: &Behavior,
) -> Result<SymMatrix> {
    let scenario = behavior.scenario();
    let marginals = behavior.marginals()?;
    let n_out = (scenario.settings_a() + scenario.settings_b()) * scenario.outcomes();
    let expected = from.size(scenario);
    if completion.n() != expected {
        return Err(Error::shape(format!(
            "completion has size {}, {} form of this scenario needs {}",
            completion.n(),
            from.token(),
            expected
        )));
    }

    // Marginal vector in outcome-row order.
    let out_labels = labels_for(CertificateKind::Covariance, scenario);
    let u: Vec<f64> = out_labels
        .iter()
        .map(|&l| match l {
            RowLabel::Outcome { party, setting, outcome } => {
                marginals.prob(party, setting, outcome)
            }
            RowLabel::Identity => unreachable!(),
        })
        .collect();

    match from {
        CertificateKind::Npa1 => {
            // Consistency: identity entry and first row must carry (1, u).
            if (completion.get(0, 0) - 1.0).abs() > 1e-9 {
                return Err(Error::Consistency("identity entry is not 1".into()));
            }
            for (k, &uk) in u.iter().enumerate() {
                if (completion.get(0, k + 1) - uk).abs() > 1e-6 {
                    return Err(Error::Consistency(format!(
                        "first-row marginal {k} disagrees with the behavior"
                    )));
                }
            }
            let mut out = SymMatrix::zeros(n_out);
            for i in 0..n_out {
                for j in i..n_out {
                    out.set(i, j, completion.get(i + 1, j + 1) - u[i] * u[j]);
                }
            }
            Ok(out)
        }
        CertificateKind::Covariance => {
            let mut out = SymMatrix::zeros(n_out + 1);
            out.set(0, 0, 1.0);
            for (k, &uk) in u.iter().enumerate() {
                out.set(0, k + 1, uk);
            }
            for i in 0..n_out {
                for j in i..n_out {
                    out.set(i + 1, j + 1, completion.get(i, j) + u[i] * u[j]);
                }
            }
            Ok(out)
        }
    }
}

/// Verdict of [`verify_completion`].
#[derive(Debug, Clone, Copy)]
pub struct CompletionVerdict {
    pub valid: bool,
    pub min_eigenvalue: f64,
    pub worst_fixed_residual: f64,
}

/// Check a proposed completion against a partial matrix: every fixed entry
/// must agree within `tolerance` and the minimum eigenvalue must be at least
/// `-tolerance`.
pub fn verify_completion(
    partial: &PartialSymmetricMatrix,
    completion: &SymMatrix,
    tolerance: f64,
) -> Result<CompletionVerdict> {
    verify_against(partial.matrix(), completion, tolerance)
}

/// Same check against a bare partial matrix.
pub fn verify_against(
    partial: &PartialMatrix,
    completion: &SymMatrix,
    tolerance: f64,
) -> Result<CompletionVerdict> {
    if completion.n() != partial.n() {
        return Err(Error::shape(format!(
            "completion size {} does not match partial size {}",
            completion.n(),
            partial.n()
        )));
    }
    let worst_fixed_residual = partial.fixed_residual(completion);
    let min_eigenvalue = sym_eig(completion)?.min_value();
    Ok(CompletionVerdict {
        valid: worst_fixed_residual <= tolerance && min_eigenvalue >= -tolerance,
        min_eigenvalue,
        worst_fixed_residual,
    })
}

// ---------------------------------------------------------------------------
// Text format
//
//   certificate <kind> <n>
//   <n rows of n decimal values>
//   mask
//   <n rows of n 0/1>
// ---------------------------------------------------------------------------

pub fn serialize_certificate(kind: CertificateKind, matrix: &PartialMatrix) -> String {
    use std::fmt::Write as _;
    let n = matrix.n();
    let mut out = String::new();
    let _ = writeln!(out, "certificate {} {}", kind.token(), n);
    for i in 0..n {
        let row: Vec<String> =
            (0..n).map(|j| format!("{:.17e}", matrix.entries().get(i, j))).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    let _ = writeln!(out, "mask");
    for i in 0..n {
        let row: Vec<&str> =
            (0..n).map(|j| if matrix.is_fixed(i, j) { "1" } else { "0" }).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn parse_certificate(text: &str) -> Result<(CertificateKind, PartialMatrix)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line, header) = lines
        .next()
        .ok_or_else(|| Error::format(0, "empty certificate file"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 3 || tokens[0] != "certificate" {
        return Err(Error::format(line, "expected `certificate <kind> <n>`"));
    }
    let kind = CertificateKind::from_token(tokens[1])
        .map_err(|e| Error::format(line, e.to_string()))?;
    let n: usize = tokens[2]
        .parse()
        .map_err(|_| Error::format(line, format!("bad size `{}`", tokens[2])))?;

    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n {
        let (line, row) = lines
            .next()
            .ok_or_else(|| Error::format(0, "truncated certificate matrix"))?;
        let values: Vec<f64> = row
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::format(line, format!("bad value `{t}`"))))
            .collect::<Result<_>>()?;
        if values.len() != n {
            return Err(Error::format(line, format!("expected {n} values per row")));
        }
        data.extend(values);
    }
    let entries = SymMatrix::from_raw(n, data)?;

    let mut fixed = vec![false; n * n];
    match lines.next() {
        Some((_, "mask")) => {
            for i in 0..n {
                let (line, row) = lines
                    .next()
                    .ok_or_else(|| Error::format(0, "truncated mask"))?;
                let bits: Vec<&str> = row.split_whitespace().collect();
                if bits.len() != n {
                    return Err(Error::format(line, format!("expected {n} mask bits per row")));
                }
                for (j, bit) in bits.iter().enumerate() {
                    fixed[i * n + j] = match *bit {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(Error::format(line, format!("bad mask bit `{other}`")))
                        }
                    };
                }
            }
        }
        Some((line, other)) => {
            return Err(Error::format(line, format!("expected `mask`, found `{other}`")))
        }
        // No mask section: treat as fully completed.
        None => fixed.fill(true),
    }

    Ok((kind, PartialMatrix::new(entries, fixed)?))
}
