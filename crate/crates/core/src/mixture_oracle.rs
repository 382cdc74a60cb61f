//! Exact Gaussian-mixture form of the reduced measure, by brute-force enumeration of all
//! `N^N` multi-indices. Only feasible for tiny `N`; used as ground truth.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion_maps::ReducedBasis;
use crate::error::{PlomError, Result};
use crate::numeric::log_sum_exp;
use crate::pca::NormalizedMatrix;

pub const DEFAULT_CAP: usize = 6;
pub const HARD_MAX: usize = 8;

/// All `j in {0..N-1}^N` in odometer order, last position fastest.
#[derive(Debug, Clone, Copy)]
pub struct MultiIndexEnumeration {
    n: usize,
}

impl MultiIndexEnumeration {
    pub fn new(n: usize, cap: usize) -> Result<Self> {
        let cap = cap.min(HARD_MAX);
        if n == 0 || n > cap {
            return Err(PlomError::EnumerationSize { n, cap, count: (n as u128).pow(n as u32) });
        }
        if n > DEFAULT_CAP {
            log::warn!("enumerating {} multi-indices", (n as u128).pow(n as u32));
        }
        Ok(MultiIndexEnumeration { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The multi-index at position `idx` of the odometer order.
    pub fn index(&self, mut idx: usize) -> Vec<usize> {
        let mut j = vec![0; self.n];
        for slot in j.iter_mut().rev() {
            *slot = idx % self.n;
            idx /= self.n;
        }
        j
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.len()).map(|i| self.index(i))
    }
}

/// `eta(j)`: column `l` is `eta^{j_l}`.
pub fn eta_of(eta: &DMatrix<f64>, j: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(eta.nrows(), j.len(), |k, l| eta[(k, j[l])])
}

#[derive(Debug, Clone)]
pub struct MixtureModel {
    m: usize,
    s: f64,
    s_hat: f64,
    enumeration: MultiIndexEnumeration,
    eta: DMatrix<f64>,
    gram: DMatrix<f64>,
    g: DMatrix<f64>,
    a: DMatrix<f64>,
    projector: DMatrix<f64>,
    a_vals: Vec<f64>,
    log_gamma: Vec<f64>,
    cov: DMatrix<f64>,
    cov_chol: Cholesky<f64, Dyn>,
}

/// Enumerates the mixture for the reduced basis, with kernel bandwidths `(s, s_hat)`.
pub fn enumerate_mixture(
    eta: &NormalizedMatrix,
    basis: &ReducedBasis,
    s: f64,
    s_hat: f64,
    cap: usize,
) -> Result<MixtureModel> {
    let n = eta.n_samples();
    if basis.n_samples() != n {
        return Err(PlomError::Shape(format!("basis built on {} points, data has {n}", basis.n_samples())));
    }
    let enumeration = MultiIndexEnumeration::new(n, cap)?;
    let x = eta.matrix().clone();
    let gram = x.transpose() * &x;
    let m = basis.m();
    // G_N is the identity exactly; use that rather than its rounded form.
    let complement = if m == n {
        DMatrix::zeros(n, n)
    } else {
        DMatrix::<f64>::identity(n, n) - basis.projector()
    };
    let a_vals: Vec<f64> = (0..enumeration.len())
        .into_par_iter()
        .map(|idx| {
            let j = enumeration.index(idx);
            frobenius_on_indices(&complement, &gram, &j).max(0.0)
        })
        .collect();
    let log_gamma = a_vals.iter().map(|a| -a / (2.0 * s * s)).collect();
    let cov = (basis.g().transpose() * basis.g()).try_inverse().ok_or_else(|| {
        PlomError::NumericalInconsistency("basis Gram matrix is singular".into())
    })? * (s_hat * s_hat);
    let cov = (&cov + cov.transpose()) * 0.5;
    let cov_chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| PlomError::NumericalInconsistency("mixture covariance is not positive definite".into()))?;
    Ok(MixtureModel {
        m,
        s,
        s_hat,
        enumeration,
        eta: x,
        gram,
        g: basis.g().clone(),
        a: basis.a().clone(),
        projector: basis.projector().clone(),
        a_vals,
        log_gamma,
        cov,
        cov_chol,
    })
}

/// `<Q, M_d(j)>_F` with `M_d(j)[l, l'] = gram[j_l, j_l']`.
fn frobenius_on_indices(q: &DMatrix<f64>, gram: &DMatrix<f64>, j: &[usize]) -> f64 {
    let n = j.len();
    let mut acc = 0.0;
    for l in 0..n {
        for lp in 0..n {
            acc += q[(l, lp)] * gram[(j[l], j[lp])];
        }
    }
    acc
}

/// Per-component statistics of the distance decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceDecomposition {
    pub f_d: f64,
    /// `sum_j p_j g_j`.
    pub h_d: f64,
    /// Uniform average of `g_j`.
    pub g_bar: f64,
    /// Uniform average of `gamma_j`.
    pub gamma_bar: f64,
    /// `h_d / g_bar`.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureMoments {
    pub mean: DMatrix<f64>,
    pub second_moment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumIdentityReport {
    pub mean_residual: f64,
    pub gram_residual: f64,
    pub cross_residual: f64,
}

impl SumIdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.mean_residual.max(self.gram_residual).max(self.cross_residual)
    }
}

impl MixtureModel {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_samples(&self) -> usize {
        self.enumeration.n()
    }

    pub fn nu(&self) -> usize {
        self.eta.nrows()
    }

    pub fn len(&self) -> usize {
        self.a_vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_vals.is_empty()
    }

    pub fn enumeration(&self) -> &MultiIndexEnumeration {
        &self.enumeration
    }

    pub fn a_vals(&self) -> &[f64] {
        &self.a_vals
    }

    pub fn log_gamma(&self) -> &[f64] {
        &self.log_gamma
    }

    pub fn gamma(&self) -> Vec<f64> {
        self.log_gamma.iter().map(|v| v.exp()).collect()
    }

    /// Normalized weights `p_j`.
    pub fn weights(&self) -> Vec<f64> {
        let max = self.log_gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = self.log_gamma.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        let norm = log_sum_exp(&self.log_gamma);
        self.log_gamma.iter().map(|v| v - norm).collect()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn ratio(&self) -> f64 {
        self.s_hat / self.s
    }

    /// Component mean in `z` space: row `k` is the mean of row `k` of `z`.
    pub fn component_mean(&self, j: &[usize]) -> DMatrix<f64> {
        eta_of(&self.eta, j) * &self.a * self.ratio()
    }

    pub fn log_pdf(&self, z: &DMatrix<f64>) -> f64 {
        let (nu, m) = (self.nu(), self.m);
        let log_det: f64 = 2.0 * self.cov_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * nu as f64 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        let log_w = self.log_weights();
        let terms: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|idx| {
                let mu = self.component_mean(&self.enumeration.index(idx));
                let diff = (z - mu).transpose();
                let solved = self.cov_chol.solve(&diff);
                log_w[idx] - 0.5 * diff.dot(&solved)
            })
            .collect();
        log_sum_exp(&terms) + log_norm
    }

    /// Draws one `nu x m` realization of `Z`.
    pub fn sample(&self, cumulative: &[f64], rng: &mut impl Rng) -> DMatrix<f64> {
        let u: f64 = rng.random();
        let idx = cumulative.partition_point(|&c| c < u).min(self.len() - 1);
        let mu = self.component_mean(&self.enumeration.index(idx));
        let xi = DMatrix::from_fn(self.m, self.nu(), |_, _| rng.sample::<f64, _>(StandardNormal));
        mu + (self.cov_chol.l() * xi).transpose()
    }

    /// Running sums of the weights, for [`MixtureModel::sample`].
    pub fn cumulative_weights(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.weights()
            .into_iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    }

    pub fn basis_g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// `E[H]` and `E|H|^2` for `H = Z g^T`.
    pub fn closed_form_moments(&self) -> MixtureMoments {
        let (nu, n) = (self.nu(), self.n_samples());
        let p = self.weights();
        let mut mean = DMatrix::zeros(nu, n);
        let mut second = 0.0;
        let base = nu as f64 * self.s_hat * self.s_hat * self.m as f64;
        let r = self.ratio();
        for (idx, &pj) in p.iter().enumerate() {
            let j = self.enumeration.index(idx);
            mean += eta_of(&self.eta, &j) * (pj * r);
            second += pj * (base + r * r * frobenius_on_indices(&self.projector, &self.gram, &j));
        }
        MixtureMoments { mean: mean * &self.projector, second_moment: second }
    }

    /// `d^2 = 1 + m s_hat^2 / (N-1) + |eta|^{-2} sum_j p_j <G, B_d(j)>`.
    pub fn exact_dsq(&self) -> f64 {
        let n = self.n_samples();
        let r = self.ratio();
        let p = self.weights();
        let norm_sq = self.eta.norm_squared();
        let mut acc = 0.0;
        for (idx, &pj) in p.iter().enumerate() {
            let j = self.enumeration.index(idx);
            let mut gb = 0.0;
            for l in 0..n {
                for lp in 0..n {
                    let b = r * r * self.gram[(j[l], j[lp])] - 2.0 * r * self.gram[(j[l], lp)];
                    gb += self.projector[(l, lp)] * b;
                }
            }
            acc += pj * gb;
        }
        1.0 + self.m as f64 * self.s_hat * self.s_hat / (n - 1) as f64 + acc / norm_sq
    }

    /// `f_d + h_d`, with `h_d` summed over projected component offsets.
    pub fn decomposition(&self) -> DistanceDecomposition {
        let n = self.n_samples();
        let r = self.ratio();
        let norm_sq = self.eta.norm_squared();
        let eta_m = &self.eta * &self.projector;
        let eps_sq = (&self.eta - &eta_m).norm_squared() / norm_sq;
        let f_d = self.m as f64 * self.s_hat * self.s_hat / (n - 1) as f64 + eps_sq;
        let p = self.weights();
        let gamma = self.gamma();
        let (mut h_d, mut g_sum, mut gamma_sum) = (0.0, 0.0, 0.0);
        for (idx, (&pj, &gj_weight)) in p.iter().zip(&gamma).enumerate() {
            let j = self.enumeration.index(idx);
            let offset = &eta_m - eta_of(&self.eta, &j) * &self.projector * r;
            let g_j = offset.norm_squared() / norm_sq;
            h_d += pj * g_j;
            g_sum += g_j;
            gamma_sum += gj_weight;
        }
        let count = self.len() as f64;
        let g_bar = g_sum / count;
        DistanceDecomposition { f_d, h_d, g_bar, gamma_bar: gamma_sum / count, r: h_d / g_bar }
    }
}

/// Checks the three uniform-average identities over all multi-indices.
pub fn verify_sum_identities(eta: &NormalizedMatrix, s: f64, s_hat: f64, cap: usize) -> Result<SumIdentityReport> {
    let n = eta.n_samples();
    let enumeration = MultiIndexEnumeration::new(n, cap)?;
    let x = eta.matrix();
    let r = s_hat / s;
    let mut sum_eta = DMatrix::zeros(eta.nu(), n);
    let mut sum_m = DMatrix::zeros(n, n);
    let mut sum_b = DMatrix::zeros(n, n);
    for j in enumeration.iter() {
        let ej = eta_of(x, &j);
        let mj = ej.transpose() * &ej;
        sum_b += &mj * (r * r) - ej.transpose() * x * (2.0 * r);
        sum_m += mj;
        sum_eta += ej;
    }
    let count = enumeration.len() as f64;
    let level = eta.norm_sq() / n as f64;
    let eye = DMatrix::<f64>::identity(n, n);
    Ok(SumIdentityReport {
        mean_residual: (sum_eta / count).amax(),
        gram_residual: (sum_m / count - &eye * level).amax(),
        cross_residual: (sum_b / count - &eye * (r * r * level)).amax(),
    })
}
