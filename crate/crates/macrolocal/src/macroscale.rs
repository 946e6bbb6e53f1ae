//! The many-particle version of the experiment, simulated.
//!
//! A source emits `N` independent pairs per trial; each party applies one
//! interaction to its whole beam and reads intensities off its `d` detectors.
//! With the counts renormalized as `(count - N P(c)) / sqrt(N)`, the central
//! limit theorem drives the fluctuation vector to a zero-mean gaussian whose
//! covariance block is determined by the behavior: cross entries
//! `P(a,b) - P(a)P(b)`, same-party entries `delta P(c) - P(c)P(c')` — the
//! fixed entries of the covariance certificate. A PSD completion of that
//! certificate is therefore a concrete classical model: sampling
//! `L g` with `L L^T = Gamma` produces joint intensities for *all* settings
//! whose per-setting-pair blocks reproduce the observed statistics.

use crate::certificates::{CertificateKind, RowLabel};
use crate::conic::{sym_eig, SymMatrix};
use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, Xoshiro256pp};
use crate::scenario::{Behavior, Party};

/// Monte Carlo configuration for one setting pair.
#[derive(Debug, Clone, Copy)]
pub struct SimulationConfig {
    /// Particles per beam and trial (`N`).
    pub pairs_per_trial: usize,
    /// Number of independent trials (`T`).
    pub trials: usize,
    pub seed: u64,
    /// 0-based `(X, Y)`.
    pub setting_pair: (usize, usize),
}

/// Renormalized intensity fluctuations, one vector per trial over the `2d`
/// detectors of the chosen setting pair (Alice's `d` first).
#[derive(Debug, Clone)]
pub struct IntensitySample {
    pub setting_pair: (usize, usize),
    pub labels: Vec<RowLabel>,
    pub trials: Vec<Vec<f64>>,
}

/// Covariance over the detectors of one setting pair.
#[derive(Debug, Clone)]
pub struct CovarianceBlock {
    pub setting_pair: (usize, usize),
    pub labels: Vec<RowLabel>,
    pub matrix: SymMatrix,
}

/// Sample covariance plus the conservative per-entry standard error
/// `sqrt((1 + |c_ii c_jj|) / T)` used by the consistency report.
#[derive(Debug, Clone)]
pub struct EmpiricalCovariance {
    pub block: CovarianceBlock,
    pub std_err: SymMatrix,
    pub trials: usize,
}

fn block_labels(behavior: &Behavior, x: usize, y: usize) -> Vec<RowLabel> {
    let d = behavior.scenario().outcomes();
    let mut labels = Vec::with_capacity(2 * d);
    for outcome in 0..d {
        labels.push(RowLabel::Outcome { party: Party::A, setting: x, outcome });
    }
    for outcome in 0..d {
        labels.push(RowLabel::Outcome { party: Party::B, setting: y, outcome });
    }
    labels
}

/// The central-limit covariance block of one setting pair, computed from the
/// behavior in closed form. Equals the corresponding fixed submatrix of the
/// covariance certificate.
pub fn analytic_covariance(behavior: &Behavior, x: usize, y: usize) -> Result<CovarianceBlock> {
    let sc = behavior.scenario();
    if x >= sc.settings_a() || y >= sc.settings_b() {
        return Err(Error::shape("setting pair out of range"));
    }
    let d = sc.outcomes();
    let marginals = behavior.marginals()?;
    let n = 2 * d;
    let mut matrix = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let (pi, oi) = if i < d { (Party::A, i) } else { (Party::B, i - d) };
            let (pj, oj) = if j < d { (Party::A, j) } else { (Party::B, j - d) };
            let value = match (pi, pj) {
                (Party::A, Party::B) => {
                    behavior.prob(x, y, oi, oj)
                        - marginals.prob_a(x, oi) * marginals.prob_b(y, oj)
                }
                _ => {
                    let setting = if pi == Party::A { x } else { y };
                    let p_i = marginals.prob(pi, setting, oi);
                    let p_j = marginals.prob(pj, setting, oj);
                    if oi == oj {
                        p_i - p_i * p_j
                    } else {
                        -p_i * p_j
                    }
                }
            };
            matrix.set(i, j, value);
        }
    }
    Ok(CovarianceBlock { setting_pair: (x, y), labels: block_labels(behavior, x, y), matrix })
}

/// Draw `T` trials of `N` pairs each from `P(.,.|X,Y)` and return the
/// renormalized detector fluctuations. Deterministic in `(seed, config,
/// behavior)`; trial `t` uses the `t`-th jump substream, so a parallel
/// implementation would reproduce the sequential sample set exactly.
pub fn simulate_intensities(
    behavior: &Behavior,
    config: &SimulationConfig,
) -> Result<IntensitySample> {
    let sc = behavior.scenario();
    let (x, y) = config.setting_pair;
    if x >= sc.settings_a() || y >= sc.settings_b() {
        return Err(Error::shape("setting pair out of range"));
    }
    if config.pairs_per_trial == 0 || config.trials == 0 {
        return Err(Error::shape("need at least one pair and one trial"));
    }
    let report = behavior.validate(1e-9);
    if !report.is_valid() {
        return Err(Error::Validation(format!(
            "worst constraint residual {:.3e}",
            report.worst_violation
        )));
    }

    let d = sc.outcomes();
    // Cell probabilities and their cumulative sums for inverse-CDF draws.
    let mut cells = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            cells.push(behavior.prob(x, y, a, b).max(0.0));
        }
    }
    let mut cumulative = Vec::with_capacity(cells.len());
    let mut acc = 0.0;
    for &c in &cells {
        acc += c;
        cumulative.push(acc);
    }
    // Setting-local detector means (the exact P(c) of the renormalization).
    let mut mean_a = vec![0.0; d];
    let mut mean_b = vec![0.0; d];
    for a in 0..d {
        for b in 0..d {
            mean_a[a] += cells[a * d + b];
            mean_b[b] += cells[a * d + b];
        }
    }

    let n = config.pairs_per_trial;
    let sqrt_n = (n as f64).sqrt();
    let mut stream = Xoshiro256pp::new(config.seed);
    let mut trials = Vec::with_capacity(config.trials);
    let mut counts_a = vec![0usize; d];
    let mut counts_b = vec![0usize; d];

    for _ in 0..config.trials {
        let mut rng = stream.split_off();
        counts_a.fill(0);
        counts_b.fill(0);
        for _ in 0..n {
            let u = rng.next_f64() * acc;
            let mut cell = cumulative.len() - 1;
            for (k, &edge) in cumulative.iter().enumerate() {
                if u < edge {
                    cell = k;
                    break;
                }
            }
            counts_a[cell / d] += 1;
            counts_b[cell % d] += 1;
        }
        let mut fluct = Vec::with_capacity(2 * d);
        for a in 0..d {
            fluct.push((counts_a[a] as f64 - n as f64 * mean_a[a]) / sqrt_n);
        }
        for b in 0..d {
            fluct.push((counts_b[b] as f64 - n as f64 * mean_b[b]) / sqrt_n);
        }
        trials.push(fluct);
    }

    Ok(IntensitySample {
        setting_pair: (x, y),
        labels: block_labels(behavior, x, y),
        trials,
    })
}

/// Unbiased sample covariance of the fluctuation vectors, with the
/// conservative standard-error estimate per entry.
pub fn empirical_covariance(sample: &IntensitySample) -> Result<EmpiricalCovariance> {
    let t = sample.trials.len();
    if t < 2 {
        return Err(Error::shape("sample covariance needs at least two trials"));
    }
    let dim = sample.labels.len();
    let mut mean = vec![0.0; dim];
    for trial in &sample.trials {
        for (m, v) in mean.iter_mut().zip(trial) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let mut matrix = SymMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let mut acc = 0.0;
            for trial in &sample.trials {
                acc += (trial[i] - mean[i]) * (trial[j] - mean[j]);
            }
            matrix.set(i, j, acc / (t as f64 - 1.0));
        }
    }
    let mut std_err = SymMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let v = (1.0 + (matrix.get(i, i) * matrix.get(j, j)).abs()) / t as f64;
            std_err.set(i, j, v.sqrt());
        }
    }
    Ok(EmpiricalCovariance {
        block: CovarianceBlock {
            setting_pair: sample.setting_pair,
            labels: sample.labels.clone(),
            matrix,
        },
        std_err,
        trials: t,
    })
}

/// Empirical-vs-analytic comparison of one setting pair.
#[derive(Debug, Clone)]
pub struct CovarianceReport {
    pub analytic: CovarianceBlock,
    pub empirical: EmpiricalCovariance,
    /// Largest `|empirical - analytic| / std_err` over entries.
    pub worst_deviation_se: f64,
    pub entries: usize,
    pub entries_within_4se: usize,
}

pub fn covariance_report(behavior: &Behavior, config: &SimulationConfig) -> Result<CovarianceReport> {
    let analytic = analytic_covariance(behavior, config.setting_pair.0, config.setting_pair.1)?;
    let sample = simulate_intensities(behavior, config)?;
    let empirical = empirical_covariance(&sample)?;
    let dim = analytic.labels.len();
    let mut worst = 0.0f64;
    let mut within = 0usize;
    let mut entries = 0usize;
    for i in 0..dim {
        for j in i..dim {
            let dev = (empirical.block.matrix.get(i, j) - analytic.matrix.get(i, j)).abs()
                / empirical.std_err.get(i, j);
            worst = worst.max(dev);
            entries += 1;
            if dev <= 4.0 {
                within += 1;
            }
        }
    }
    Ok(CovarianceReport {
        analytic,
        empirical,
        worst_deviation_se: worst,
        entries,
        entries_within_4se: within,
    })
}

/// Sample joint intensities for *all* settings from a completed covariance
/// certificate: `z = L g` with `L` the eigen-square-root of the completion
/// and `g` standard normal. This is the classical model made executable.
pub fn gaussian_global_sample(
    completion: &SymMatrix,
    trials: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let eig = sym_eig(completion)?;
    if eig.min_value() < -1e-8 {
        return Err(Error::Domain(format!(
            "completion is not PSD: min eigenvalue {:.3e}",
            eig.min_value()
        )));
    }
    let n = completion.n();
    let gram = eig.gram_rows();
    let mut stream = Xoshiro256pp::new(seed);
    let mut out = Vec::with_capacity(trials);
    let mut normals = vec![0.0; n];
    for _ in 0..trials {
        let mut rng = stream.split_off();
        fill_standard_normal(&mut rng, &mut normals);
        let z: Vec<f64> = gram
            .iter()
            .map(|row| row.iter().zip(&normals).map(|(l, g)| l * g).sum())
            .collect();
        out.push(z);
    }
    Ok(out)
}

/// Kolmogorov-Smirnov test of a sample against the centered normal with the
/// given variance.
#[derive(Debug, Clone, Copy)]
pub struct KsOutcome {
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

pub fn ks_normal_test(samples: &[f64], variance: f64, alpha: f64) -> Result<KsOutcome> {
    if samples.is_empty() {
        return Err(Error::shape("KS test needs samples"));
    }
    if variance < 0.0 || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::Domain("variance must be >= 0 and alpha in (0,1)".into()));
    }
    if variance == 0.0 {
        let worst = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        return Ok(KsOutcome { statistic: worst, critical: 0.0, pass: worst <= 1e-12 });
    }
    let sigma = variance.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = sorted.len() as f64;
    let mut statistic = 0.0f64;
    for (i, &v) in sorted.iter().enumerate() {
        let cdf = normal_cdf(v / sigma);
        statistic = statistic.max((cdf - (i + 1) as f64 / t).abs());
        statistic = statistic.max((cdf - i as f64 / t).abs());
    }
    let critical = ((2.0 / alpha).ln() / 2.0).sqrt() / t.sqrt();
    Ok(KsOutcome { statistic, critical, pass: statistic <= critical })
}

/// Standard normal CDF via the Abramowitz-Stegun 7.1.26 erf approximation
/// (absolute error below 1.5e-7, ample for the KS thresholds used here).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// CSV export: `trial,setting_pair,outcome_label,value`.
pub fn serialize_samples(sample: &IntensitySample) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("trial,setting_pair,outcome_label,value\n");
    let (x, y) = sample.setting_pair;
    for (t, trial) in sample.trials.iter().enumerate() {
        for (label, value) in sample.labels.iter().zip(trial) {
            let name = match label {
                RowLabel::Outcome { party, setting, outcome } => {
                    format!("{}{}:{}", party.label(), setting + 1, outcome)
                }
                RowLabel::Identity => "I".to_string(),
            };
            let _ = writeln!(out, "{},{}-{},{},{:.17e}", t, x + 1, y + 1, name, value);
        }
    }
    out
}

/// The fixed submatrix of a certificate restricted to one setting pair, for
/// block-by-block comparisons (labels in the same order as the covariance
/// blocks above).
pub fn certificate_block(
    completion: &SymMatrix,
    kind: CertificateKind,
    behavior: &Behavior,
    x: usize,
    y: usize,
) -> Result<SymMatrix> {
    let sc = behavior.scenario();
    let d = sc.outcomes();
    let rows: Vec<usize> = (0..d)
        .map(|o| crate::certificates::row_index(kind, sc, Party::A, x, o))
        .chain((0..d).map(|o| crate::certificates::row_index(kind, sc, Party::B, y, o)))
        .collect();
    if rows.iter().any(|&r| r >= completion.n()) {
        return Err(Error::shape("completion too small for this scenario"));
    }
    let mut block = SymMatrix::zeros(2 * d);
    for i in 0..2 * d {
        for j in i..2 * d {
            block.set(i, j, completion.get(rows[i], rows[j]));
        }
    }
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::build_covariance_partial;
    use crate::scenario::Scenario;
    use approx::assert_abs_diff_eq;

    #[test]
    fn analytic_covariance_uniform() {
        let b = Behavior::uniform(Scenario::new(2, 2, 2).unwrap());
        let block = analytic_covariance(&b, 0, 0).unwrap().matrix;
        for i in 0..4 {
            assert_abs_diff_eq!(block.get(i, i), 0.25);
        }
        assert_abs_diff_eq!(block.get(0, 1), -0.25); // same party
        assert_abs_diff_eq!(block.get(0, 2), 0.0); // cross, independent
    }

    #[test]
    fn analytic_covariance_perfectly_correlated() {
        let sc = Scenario::new(1, 1, 2).unwrap();
        let mut table = vec![0.0; sc.table_len()];
        table[sc.index(0, 0, 0, 0)] = 0.5;
        table[sc.index(0, 0, 1, 1)] = 0.5;
        let b = Behavior::from_table(sc, table).unwrap();
        let block = analytic_covariance(&b, 0, 0).unwrap().matrix;
        assert_abs_diff_eq!(block.get(0, 2), 0.25); // a=0 with b=0
        assert_abs_diff_eq!(block.get(0, 3), -0.25); // a=0 with b=1
    }

    #[test]
    fn analytic_covariance_deterministic_is_zero() {
        let sc = Scenario::new(2, 2, 2).unwrap();
        let b = Behavior::deterministic(sc, &[0, 1], &[1, 0]).unwrap();
        let block = analytic_covariance(&b, 1, 0).unwrap().matrix;
        assert_eq!(block.frob_norm(), 0.0);
    }

    #[test]
    fn analytic_covariance_matches_certificate_block() {
        let b = Behavior::singlet_chsh_optimal();
        let partial = build_covariance_partial(&b).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                let block = analytic_covariance(&b, x, y).unwrap().matrix;
                let cert_block = certificate_block(
                    partial.matrix().entries(),
                    CertificateKind::Covariance,
                    &b,
                    x,
                    y,
                )
                .unwrap();
                assert!(block.max_abs_diff(&cert_block) <= 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_behavior_has_zero_fluctuations() {
        let sc = Scenario::new(1, 1, 2).unwrap();
        let b = Behavior::deterministic(sc, &[0], &[1]).unwrap();
        let sample = simulate_intensities(
            &b,
            &SimulationConfig { pairs_per_trial: 1, trials: 1, seed: 3, setting_pair: (0, 0) },
        )
        .unwrap();
        for v in &sample.trials[0] {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn fluctuations_sum_to_zero_per_party() {
        let b = Behavior::singlet_chsh_optimal();
        let sample = simulate_intensities(
            &b,
            &SimulationConfig { pairs_per_trial: 500, trials: 50, seed: 7, setting_pair: (1, 0) },
        )
        .unwrap();
        for trial in &sample.trials {
            let alice: f64 = trial[..2].iter().sum();
            let bob: f64 = trial[2..].iter().sum();
            assert_abs_diff_eq!(alice, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(bob, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let b = Behavior::noisy_pr(0.6).unwrap();
        let config =
            SimulationConfig { pairs_per_trial: 100, trials: 10, seed: 99, setting_pair: (0, 1) };
        let s1 = simulate_intensities(&b, &config).unwrap();
        let s2 = simulate_intensities(&b, &config).unwrap();
        assert_eq!(s1.trials, s2.trials);
    }

    #[test]
    fn two_trial_covariance_hand_oracle() {
        // Trials v and -v: mean 0, unbiased covariance 2 v v^T.
        let sample = IntensitySample {
            setting_pair: (0, 0),
            labels: vec![
                RowLabel::Outcome { party: Party::A, setting: 0, outcome: 0 },
                RowLabel::Outcome { party: Party::A, setting: 0, outcome: 1 },
            ],
            trials: vec![vec![0.3, -0.3], vec![-0.3, 0.3]],
        };
        let emp = empirical_covariance(&sample).unwrap();
        assert_abs_diff_eq!(emp.block.matrix.get(0, 0), 2.0 * 0.09, epsilon = 1e-15);
        assert_abs_diff_eq!(emp.block.matrix.get(0, 1), -2.0 * 0.09, epsilon = 1e-15);
    }

    #[test]
    fn constant_sample_has_zero_covariance() {
        let sample = IntensitySample {
            setting_pair: (0, 0),
            labels: vec![RowLabel::Outcome { party: Party::A, setting: 0, outcome: 0 }],
            trials: vec![vec![0.7]; 5],
        };
        let emp = empirical_covariance(&sample).unwrap();
        assert_eq!(emp.block.matrix.get(0, 0), 0.0);
    }

    #[test]
    fn uniform_cross_covariance_is_small() {
        let b = Behavior::uniform(Scenario::new(2, 2, 2).unwrap());
        let config = SimulationConfig {
            pairs_per_trial: 10_000,
            trials: 10_000,
            seed: 11,
            setting_pair: (0, 0),
        };
        let sample = simulate_intensities(&b, &config).unwrap();
        let emp = empirical_covariance(&sample).unwrap();
        // Cross entries target 0; CLT scaling allows 5/sqrt(T).
        let bound = 5.0 / (config.trials as f64).sqrt();
        for i in 0..2 {
            for j in 2..4 {
                assert!(
                    emp.block.matrix.get(i, j).abs() <= bound,
                    "cross covariance {} exceeds {}",
                    emp.block.matrix.get(i, j),
                    bound
                );
            }
        }
    }

    #[test]
    fn gaussian_sampler_zero_matrix() {
        let samples = gaussian_global_sample(&SymMatrix::zeros(3), 5, 1).unwrap();
        for s in samples {
            assert_eq!(s, vec![0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn gaussian_sampler_identity_covariance() {
        let n = 3;
        let trials = 20_000;
        let samples = gaussian_global_sample(&SymMatrix::identity(n), trials, 5).unwrap();
        let bound = 5.0 / (trials as f64).sqrt();
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for s in &samples {
                    acc += s[i] * s[j];
                }
                let emp = acc / trials as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((emp - target).abs() <= bound, "entry ({i},{j}) = {emp}");
            }
        }
    }

    #[test]
    fn gaussian_sampler_rejects_indefinite() {
        let mut m = SymMatrix::zeros(2);
        m.set(0, 1, 1.0);
        assert!(gaussian_global_sample(&m, 1, 0).is_err());
    }

    #[test]
    fn ks_accepts_its_own_normals() {
        let mut rng = Xoshiro256pp::new(17);
        let mut buf = vec![0.0; 10_000];
        fill_standard_normal(&mut rng, &mut buf);
        let outcome = ks_normal_test(&buf, 1.0, 0.01).unwrap();
        assert!(outcome.pass, "D = {} vs {}", outcome.statistic, outcome.critical);
    }

    #[test]
    fn ks_rejects_wrong_variance() {
        let mut rng = Xoshiro256pp::new(18);
        let mut buf = vec![0.0; 10_000];
        fill_standard_normal(&mut rng, &mut buf);
        for v in &mut buf {
            *v *= 2.0;
        }
        let outcome = ks_normal_test(&buf, 1.0, 0.01).unwrap();
        assert!(!outcome.pass);
    }

    #[test]
    fn empirical_error_shrinks_with_more_trials() {
        // Same seed family at T and 100T: the max-entry error should drop
        // by roughly sqrt(100) = 10.
        let b = Behavior::singlet_chsh_optimal();
        let analytic = analytic_covariance(&b, 0, 0).unwrap().matrix;
        let worst = |trials: usize| -> f64 {
            let sample = simulate_intensities(
                &b,
                &SimulationConfig {
                    pairs_per_trial: 1000,
                    trials,
                    seed: 42,
                    setting_pair: (0, 0),
                },
            )
            .unwrap();
            let emp = empirical_covariance(&sample).unwrap();
            emp.block.matrix.max_abs_diff(&analytic)
        };
        let coarse = worst(1_000);
        let fine = worst(100_000);
        let ratio = coarse / fine;
        assert!(
            (3.0..35.0).contains(&ratio),
            "error ratio {ratio} (coarse {coarse}, fine {fine}) inconsistent with 1/sqrt(T)"
        );
    }
}
