//! Gaussian kernel density model on the whitened data, with its potential and drift.
//!
//! Kernel centers are the training points shrunk by `s_hat / s`, which keeps the mixture
//! centered with identity covariance.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::numeric::{log_sum_exp, FLUSH_EXPONENT};
use crate::pca::NormalizedMatrix;

/// Silverman bandwidth `s` and the modified bandwidth `s_hat` for `N` points in dimension `nu`.
pub fn bandwidths(n_samples: usize, nu: usize) -> (f64, f64) {
    let n = n_samples as f64;
    let nu_f = nu as f64;
    let s = (4.0 / (n * (nu_f + 2.0))).powf(1.0 / (nu_f + 4.0));
    let s_hat = s / (s * s + (n - 1.0) / n).sqrt();
    (s, s_hat)
}

/// Bandwidth pair persisted by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub s: f64,
    pub s_hat: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct KdeModel {
    s: f64,
    s_hat: f64,
    /// `(s_hat / s) eta_d`, one center per column.
    centers: DMatrix<f64>,
}

impl KdeModel {
    pub fn new(eta: &NormalizedMatrix) -> Self {
        let (s, s_hat) = bandwidths(eta.n_samples(), eta.nu());
        Self::with_bandwidths(eta, s, s_hat)
    }

    pub fn with_bandwidths(eta: &NormalizedMatrix, s: f64, s_hat: f64) -> Self {
        KdeModel { s, s_hat, centers: eta.matrix() * (s_hat / s) }
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn s_hat(&self) -> f64 {
        self.s_hat
    }

    pub fn ratio(&self) -> f64 {
        self.s_hat / self.s
    }

    pub fn bandwidths(&self) -> Bandwidths {
        Bandwidths { s: self.s, s_hat: self.s_hat, ratio: self.ratio() }
    }

    pub fn nu(&self) -> usize {
        self.centers.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.centers.ncols()
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    /// Kernel exponents `-|c_j - u|^2 / (2 s_hat^2)`, one per center.
    fn exponents(&self, u: DVectorView<'_, f64>, out: &mut Vec<f64>) {
        let inv = 0.5 / (self.s_hat * self.s_hat);
        out.clear();
        out.extend(self.centers.column_iter().map(|c| {
            let d2: f64 = c.iter().zip(u.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            -d2 * inv
        }));
    }

    fn log_normalizer(&self) -> f64 {
        (self.n_samples() as f64).ln() + self.nu() as f64 * ((2.0 * PI).sqrt() * self.s_hat).ln()
    }

    pub fn log_pdf(&self, eta: &DVector<f64>) -> f64 {
        self.log_pdf_view(eta.as_view())
    }

    fn log_pdf_view(&self, eta: DVectorView<'_, f64>) -> f64 {
        let mut e = Vec::with_capacity(self.n_samples());
        self.exponents(eta, &mut e);
        log_sum_exp(&e) - self.log_normalizer()
    }

    pub fn pdf(&self, eta: &DVector<f64>) -> f64 {
        self.log_pdf(eta).exp()
    }

    /// `V(u) = -ln( (1/N) sum_j exp(-|c_j - u|^2 / (2 s_hat^2)) )`.
    pub fn potential(&self, u: &DVector<f64>) -> f64 {
        let mut e = Vec::with_capacity(self.n_samples());
        self.exponents(u.as_view(), &mut e);
        (self.n_samples() as f64).ln() - log_sum_exp(&e)
    }

    /// Log-density of a matrix whose columns are independent draws.
    pub fn matrix_log_pdf(&self, eta: &DMatrix<f64>) -> f64 {
        eta.column_iter().map(|c| self.log_pdf_view(c)).sum()
    }

    /// `-grad V(u)` for a single column.
    pub fn drift_column(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nu());
        let mut scratch = Vec::with_capacity(self.n_samples());
        self.drift_into(u.as_view(), &mut out, &mut scratch);
        out
    }

    /// Column-wise `-grad V` of every column of `u`.
    pub fn drift(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(u.nrows(), u.ncols());
        let mut scratch = Vec::with_capacity(self.n_samples());
        let mut col_out = DVector::zeros(self.nu());
        for (l, col) in u.column_iter().enumerate() {
            self.drift_into(col, &mut col_out, &mut scratch);
            out.set_column(l, &col_out);
        }
        out
    }

    fn drift_into(&self, u: DVectorView<'_, f64>, out: &mut DVector<f64>, weights: &mut Vec<f64>) {
        self.exponents(u, weights);
        let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for w in weights.iter_mut() {
            let rel = *w - max;
            *w = if rel < FLUSH_EXPONENT { 0.0 } else { rel.exp() };
            total += *w;
        }
        out.fill(0.0);
        for (c, &w) in self.centers.column_iter().zip(weights.iter()) {
            if w != 0.0 {
                out.axpy(w, &c, 1.0);
            }
        }
        let scale = 1.0 / (total * self.s_hat * self.s_hat);
        for (o, x) in out.iter_mut().zip(u.iter()) {
            *o = *o * scale - x / (self.s_hat * self.s_hat);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn eta(nu: usize, data: &[f64]) -> NormalizedMatrix {
        NormalizedMatrix::from_matrix(DMatrix::from_row_slice(nu, data.len() / nu, data))
    }

    fn random_eta(nu: usize, n: usize, seed: u64) -> NormalizedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NormalizedMatrix::from_matrix(DMatrix::from_fn(nu, n, |_, _| rng.sample(StandardNormal)))
    }

    #[test]
    fn bandwidths_match_reference_values() {
        let (s, s_hat) = bandwidths(200, 9);
        assert_eq!(format!("{s:.3} {s_hat:.3} {:.3}", s_hat / s), "0.615 0.525 0.853");
        // Frozen from an independent double-precision evaluation of the closed forms.
        let (s, s_hat) = bandwidths(100, 4);
        assert!((s - 0.534_550_318_463_921_5).abs() < 1e-14);
        assert!((s_hat - 0.473_267_648_470_88).abs() < 1e-13);
    }

    #[test]
    fn bandwidths_shrink_with_more_samples() {
        let mut prev = (f64::INFINITY, 0.0);
        for n in [100, 10_000, 1_000_000] {
            let (s, s_hat) = bandwidths(n, 3);
            assert!(s < prev.0 && s_hat / s > prev.1);
            assert!(0.0 < s_hat && s_hat < s && s < 1.0);
            prev = (s, s_hat / s);
        }
        assert!(1.0 - prev.1 < 1e-2);
    }

    #[test]
    fn single_kernel_density_potential_and_drift() {
        let e = eta(1, &[0.0]);
        let kde = KdeModel::new(&e);
        let expect = 1.0 / ((2.0 * PI).sqrt() * kde.s_hat());
        assert!((kde.pdf(&DVector::from_element(1, 0.0)) - expect).abs() < 1e-14);

        let e = eta(2, &[0.7, -0.3]);
        let kde = KdeModel::new(&e);
        let center = kde.centers().column(0).into_owned();
        assert!(kde.potential(&center).abs() < 1e-15);
        let u = DVector::from_vec(vec![1.5, 2.0]);
        let analytic = (&center - &u) / kde.s_hat().powi(2);
        assert!((kde.drift_column(&u) - analytic).amax() < 1e-14);
    }

    #[test]
    fn two_point_mixture_matches_brute_force_sum() {
        // {-1, 1} has sample variance 2; scale by 1/sqrt(2) to whiten.
        let h = 0.5f64.sqrt();
        let e = eta(1, &[-h, h]);
        let kde = KdeModel::new(&e);
        let (s, sh) = bandwidths(2, 1);
        let kernel = |x: f64| (-(x * x) / (2.0 * sh * sh)).exp() / ((2.0 * PI).sqrt() * sh);
        for x in [0.0, 0.3, -1.2] {
            let brute = 0.5 * (kernel(sh / s * -h - x) + kernel(sh / s * h - x));
            assert!((kde.pdf(&DVector::from_element(1, x)) - brute).abs() < 1e-15);
        }
        let m = DMatrix::from_row_slice(1, 2, &[0.0, 0.3]);
        let brute = (0.5 * (kernel(sh / s * -h) + kernel(sh / s * h))).ln()
            + (0.5 * (kernel(sh / s * -h - 0.3) + kernel(sh / s * h - 0.3))).ln();
        assert!((kde.matrix_log_pdf(&m) - brute).abs() < 1e-14);
        assert!(kde.drift_column(&DVector::from_element(1, 0.0))[0].abs() < 1e-15);
    }

    #[test]
    fn potential_and_log_pdf_differ_by_normalizer() {
        let e = random_eta(2, 5, 1);
        let kde = KdeModel::new(&e);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = -2.0 * ((2.0 * PI).sqrt() * kde.s_hat()).ln();
        for _ in 0..20 {
            let u = DVector::from_fn(2, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
            assert!((kde.potential(&u) + kde.log_pdf(&u) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn far_field_potential_is_nearest_center_quadratic() {
        let e = random_eta(3, 8, 4);
        let kde = KdeModel::new(&e);
        let u = DVector::from_vec(vec![100.0, 0.0, 0.0]);
        let nearest = kde
            .centers()
            .column_iter()
            .map(|c| (c - &u).norm_squared())
            .fold(f64::INFINITY, f64::min);
        let approx = nearest / (2.0 * kde.s_hat().powi(2)) + 8f64.ln();
        let v = kde.potential(&u);
        assert!((v - approx).abs() <= 1e-6 * approx.abs());
        let huge = DVector::from_vec(vec![1e6, -1e6, 1e6]);
        assert!(kde.potential(&huge).is_finite());
        assert!(kde.drift_column(&huge).iter().all(|v| v.is_finite()));
        assert!(kde.log_pdf(&huge).is_finite());
    }

    #[test]
    fn drift_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_eta(3, 10, 2);
        let kde = KdeModel::new(&e);
        let h = 1e-5;
        for _ in 0..5 {
            let u = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let d = kde.drift_column(&u);
            for k in 0..3 {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = -(kde.potential(&up) - kde.potential(&dn)) / (2.0 * h);
                assert!((fd - d[k]).abs() <= 1e-6 * d[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn matrix_log_pdf_is_permutation_invariant_and_additive() {
        let e = random_eta(2, 6, 8);
        let kde = KdeModel::new(&e);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(2, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let base = kde.matrix_log_pdf(&m);
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..6).collect();
            for i in (1..6).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let p = DMatrix::from_fn(2, 6, |i, j| m[(i, perm[j])]);
            assert!((kde.matrix_log_pdf(&p) - base).abs() < 1e-12);
        }
        let col = DVector::from_vec(vec![0.2, -0.4]);
        let same = DMatrix::from_fn(2, 6, |i, _| col[i]);
        assert!((kde.matrix_log_pdf(&same) - 6.0 * kde.log_pdf(&col)).abs() < 1e-12);
    }

    #[test]
    fn drift_matrix_is_columnwise() {
        let e = random_eta(2, 7, 3);
        let kde = KdeModel::new(&e);
        let u = DMatrix::from_fn(2, 4, |i, j| (i as f64) - 0.5 * j as f64);
        let d = kde.drift(&u);
        for j in 0..4 {
            let c = kde.drift_column(&u.column(j).into_owned());
            assert_eq!(d.column(j), c.column(0));
        }
    }
}
