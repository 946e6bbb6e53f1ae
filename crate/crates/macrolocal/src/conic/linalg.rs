//! Dense symmetric matrices, the cyclic Jacobi eigensolver and the
//! Frobenius-nearest PSD projection.
//!
//! Everything downstream (membership, bounds, certificates, sampling) sits on
//! these three pieces. Jacobi was chosen over QR for determinism: the sweep
//! order is fixed (row-major upper triangle), so identical inputs give
//! bit-identical decompositions on every run.

use crate::error::{Error, Result};

/// Dense symmetric matrix. Writes go through [`SymMatrix::set`], which
/// mirrors the entry, so the storage is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a row-major buffer, requiring symmetry within
    /// `1e-12 * max|entry|`.
    pub fn from_raw(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape(format!("expected {} entries, got {}", n * n, data.len())));
        }
        let scale = data.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        for i in 0..n {
            for j in (i + 1)..n {
                if (data[i * n + j] - data[j * n + i]).abs() > 1e-12 * scale.max(1.0) {
                    return Err(Error::Contract(format!(
                        "matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let mut m = SymMatrix { n, data };
        // Average away representation asymmetry below the tolerance.
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m.data[i * n + j] + m.data[j * n + i]);
                m.data[i * n + j] = avg;
                m.data[j * n + i] = avg;
            }
        }
        Ok(m)
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn off_diag_frob(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    let v = self.data[i * self.n + j];
                    s += v * v;
                }
            }
        }
        s.sqrt()
    }

    pub fn distance(&self, other: &SymMatrix) -> f64 {
        debug_assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        debug_assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &SymMatrix, scale: f64) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        let mut out = self.clone();
        out.add_scaled(other, 1.0);
        out
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }
}

/// Eigendecomposition of a symmetric matrix: ascending eigenvalues and an
/// orthonormal set of column eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    n: usize,
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Row-major `n x n`; column `k` is the eigenvector for `values[k]`.
    vectors: Vec<f64>,
}

impl EigenDecomposition {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn min_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn vector_component(&self, row: usize, which: usize) -> f64 {
        self.vectors[row * self.n + which]
    }

    /// `V diag(values) V^T`.
    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|v| v)
    }

    /// `V diag(f(values)) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.n;
        let mapped: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    let lk = mapped[k];
                    if lk != 0.0 {
                        s += lk * self.vectors[i * n + k] * self.vectors[j * n + k];
                    }
                }
                m.set(i, j, s);
            }
        }
        m
    }

    /// Rows `w_i` of `V diag(sqrt(max(values,0)))`, so `w_i . w_j`
    /// reconstructs the PSD part of the matrix. Used for Gram vectors.
    pub fn gram_rows(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let roots: Vec<f64> = self.values.iter().map(|&v| v.max(0.0).sqrt()).collect();
        (0..n)
            .map(|i| (0..n).map(|k| self.vectors[i * n + k] * roots[k]).collect())
            .collect()
    }

    /// `max |V^T V - I|`, for invariant checks.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in a..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += self.vectors[i * n + a] * self.vectors[i * n + b];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

const MAX_SWEEPS: usize = 200;

/// Cyclic Jacobi eigendecomposition.
///
/// Sweeps the upper triangle in row-major order, rotating each off-diagonal
/// entry to zero, until the off-diagonal Frobenius norm drops below
/// `1e-12 * ||input||`. Eigenvalues are returned ascending.
pub fn sym_eig(matrix: &SymMatrix) -> Result<EigenDecomposition> {
    let n = matrix.n;
    if matrix.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("matrix has non-finite entries".into()));
    }
    let norm0 = matrix.frob_norm();
    let mut a = matrix.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    if norm0 > 0.0 {
        let threshold = 1e-12 * norm0;
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off += a[i * n + j] * a[i * n + j];
                    }
                }
            }
            if off.sqrt() <= threshold {
                converged = true;
                break;
            }
            for p in 0..n.saturating_sub(1) {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                    let t = if theta >= 0.0 {
                        1.0 / (theta + (1.0 + theta * theta).sqrt())
                    } else {
                        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // A <- J^T A J and V <- V J for the (p,q) rotation.
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        if !converged {
            // One more norm check: the loop may have converged on the final sweep.
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off += a[i * n + j] * a[i * n + j];
                    }
                }
            }
            if off.sqrt() > threshold {
                return Err(Error::Contract("Jacobi iteration did not converge".into()));
            }
        }
    }

    // Sort ascending, permuting eigenvector columns to match.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values: Vec<f64> = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + new_col] = v[row * n + old_col];
        }
    }

    Ok(EigenDecomposition { n, values, vectors })
}

/// Frobenius-nearest PSD matrix: eigendecompose, clamp negative eigenvalues
/// to zero, reconstruct.
pub fn psd_project(matrix: &SymMatrix) -> SymMatrix {
    let eig = sym_eig(matrix).expect("psd_project input must be a finite symmetric matrix");
    if eig.min_value() >= 0.0 {
        return matrix.clone();
    }
    eig.reconstruct_with(|v| v.max(0.0))
}

/// Smallest eigenvalue.
pub fn min_eigenvalue(matrix: &SymMatrix) -> Result<f64> {
    Ok(sym_eig(matrix)?.min_value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn from_rows(rows: &[&[f64]]) -> SymMatrix {
        let n = rows.len();
        SymMatrix::from_fn(n, |i, j| rows[i][j])
    }

    #[test]
    fn eig_identity() {
        let eig = sym_eig(&SymMatrix::identity(3)).unwrap();
        for v in &eig.values {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn eig_diagonal() {
        let m = from_rows(&[&[-1.0, 0.0], &[0.0, 2.0]]);
        let eig = sym_eig(&m).unwrap();
        assert_abs_diff_eq!(eig.values[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.vector_component(0, 0).abs(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.vector_component(1, 1).abs(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eig_pauli_x() {
        let m = from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let eig = sym_eig(&m).unwrap();
        assert_abs_diff_eq!(eig.values[0], -1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(eig.values[1], 1.0, epsilon = 1e-13);
    }

    #[test]
    fn eig_reconstruction_and_orthonormality() {
        let m = from_rows(&[
            &[1.0, 2.0, 3.0, 4.0],
            &[2.0, 3.0, 0.0, 2.0],
            &[3.0, 0.0, 2.0, 1.0],
            &[4.0, 2.0, 1.0, 1.0],
        ]);
        let eig = sym_eig(&m).unwrap();
        let rec = eig.reconstruct();
        assert!(rec.max_abs_diff(&m) <= 1e-10 * m.frob_norm());
        assert!(eig.orthonormality_error() <= 1e-10);
    }

    #[test]
    fn eig_zero_matrix() {
        let eig = sym_eig(&SymMatrix::zeros(3)).unwrap();
        assert_eq!(eig.values, vec![0.0, 0.0, 0.0]);
        assert!(eig.orthonormality_error() <= 1e-14);
    }

    #[test]
    fn psd_project_fixes_psd_input() {
        let m = from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let p = psd_project(&m);
        assert!(p.max_abs_diff(&m) <= 1e-10);
    }

    #[test]
    fn psd_project_clamps_diagonal() {
        let m = from_rows(&[&[-1.0, 0.0], &[0.0, 2.0]]);
        let p = psd_project(&m);
        assert_abs_diff_eq!(p.get(0, 0), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(p.get(1, 1), 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(p.get(0, 1), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn psd_project_pauli_x() {
        // Clamping the -1 eigenvalue of [[0,1],[1,0]] and reconstructing by
        // hand gives the all-halves matrix.
        let m = from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let p = psd_project(&m);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(p.get(i, j), 0.5, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn psd_project_is_idempotent() {
        let m = from_rows(&[&[0.3, -1.2, 0.4], &[-1.2, -0.5, 0.9], &[0.4, 0.9, 0.1]]);
        let once = psd_project(&m);
        let twice = psd_project(&once);
        assert!(twice.max_abs_diff(&once) <= 1e-10);
    }

    #[test]
    fn psd_project_matches_grid_search_2x2() {
        // Brute-force oracle: scan PSD 2x2 matrices on a coarse grid and keep
        // the closest in Frobenius distance.
        let targets = [
            from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]),
            from_rows(&[&[-0.4, 0.3], &[0.3, 0.2]]),
            from_rows(&[&[0.5, -0.9], &[-0.9, -0.1]]),
        ];
        let step = 0.02;
        for m in &targets {
            let projected = psd_project(m);
            let mut best = f64::INFINITY;
            let mut best_mat = SymMatrix::zeros(2);
            let steps = (2.0 / step) as i64;
            for ia in 0..=steps {
                let a = ia as f64 * step;
                for ic in 0..=steps {
                    let c = ic as f64 * step;
                    let bmax = (a * c).sqrt();
                    let nb = (2.0 * bmax / step).ceil() as i64;
                    for ib in -nb..=nb {
                        let b = ib as f64 * step;
                        if b * b > a * c {
                            continue;
                        }
                        let cand = from_rows(&[&[a, b], &[b, c]]);
                        let dist = cand.distance(m);
                        if dist < best {
                            best = dist;
                            best_mat = cand;
                        }
                    }
                }
            }
            // The grid winner must be within grid resolution of the projection.
            assert!(projected.max_abs_diff(&best_mat) <= 2.0 * step,
                "projection {:?} vs grid {:?}", projected.data(), best_mat.data());
        }
    }

    #[test]
    fn from_raw_rejects_asymmetry() {
        let data = vec![1.0, 0.5, 0.4, 1.0];
        match SymMatrix::from_raw(2, data) {
            Err(Error::Contract(_)) => {}
            other => panic!("expected contract error, got {other:?}"),
        }
    }
}
