//! Diffusion-maps kernel, its spectral basis, the reduced projector, and bandwidth selection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{PlomError, Result};
use crate::numeric::median;
use crate::pca::NormalizedMatrix;

/// Pairs closer than this are treated as duplicates.
pub const MIN_PAIR_DISTANCE: f64 = 1e-12;
/// Eigenvalues below this (relative to `lambda_1 = 1`) are clamped up to it.
pub const EIGENVALUE_FLOOR: f64 = f64::EPSILON;
/// Computed eigenvalues below `-NEGATIVE_EIGENVALUE_TOL` mean the kernel is not positive definite.
pub const NEGATIVE_EIGENVALUE_TOL: f64 = 1e-8;
pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_KAPPA: u32 = 1;

#[derive(Debug, Clone)]
pub struct DiffusionKernel {
    eps_dm: f64,
    k: DMatrix<f64>,
    b: DVector<f64>,
    closest: (usize, usize, f64),
}

pub fn build_kernel(eta: &NormalizedMatrix, eps_dm: f64) -> Result<DiffusionKernel> {
    if !(eps_dm > 0.0 && eps_dm.is_finite()) {
        return Err(PlomError::Config(format!("kernel bandwidth must be positive, got {eps_dm}")));
    }
    let x = eta.matrix();
    let n = x.ncols();
    let d2 = pairwise_sq_distances(x);
    let mut closest = (0, 0, f64::INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            if d2[(i, j)] < closest.2 {
                closest = (i, j, d2[(i, j)]);
            }
        }
    }
    closest.2 = closest.2.sqrt();
    if n > 1 && closest.2 < MIN_PAIR_DISTANCE {
        return Err(PlomError::Concentration { first: closest.0, second: closest.1, distance: closest.2 });
    }
    let inv = 0.25 / eps_dm;
    let k = d2.map(|v| (-v * inv).exp());
    let b = DVector::from_iterator(n, k.row_iter().map(|r| r.sum()));
    Ok(DiffusionKernel { eps_dm, k, b, closest })
}

fn pairwise_sq_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let mut d2 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (x.column(i) - x.column(j)).norm_squared();
            d2[(i, j)] = v;
            d2[(j, i)] = v;
        }
    }
    d2
}

impl DiffusionKernel {
    pub fn eps_dm(&self) -> f64 {
        self.eps_dm
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn row_sums(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn n_samples(&self) -> usize {
        self.b.len()
    }

    /// Row-stochastic transition matrix `b^{-1} K`.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let mut p = self.k.clone();
        for (i, mut row) in p.row_iter_mut().enumerate() {
            row /= self.b[i];
        }
        p
    }
}

/// Stationary distribution of the kernel's Markov chain: `b_i / sum(b)`.
pub fn chain_invariant_measure(kernel: &DiffusionKernel) -> DVector<f64> {
    let total = kernel.b.sum();
    kernel.b.map(|v| v / total)
}

/// Full generalized spectrum `K psi = lambda b psi`, sorted descending, `b`-orthonormal.
#[derive(Debug, Clone)]
pub struct DiffusionBasis {
    eps_dm: f64,
    kappa: u32,
    eigenvalues: DVector<f64>,
    psi: DMatrix<f64>,
    n_clamped: usize,
    min_raw_eigenvalue: f64,
}

pub fn solve_basis(kernel: &DiffusionKernel, kappa: u32) -> Result<DiffusionBasis> {
    let n = kernel.n_samples();
    let sqrt_b = kernel.b.map(f64::sqrt);
    let s = DMatrix::from_fn(n, n, |i, j| kernel.k[(i, j)] / (sqrt_b[i] * sqrt_b[j]));
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| PlomError::EigenSolver(format!("no convergence for N = {n}")))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(PlomError::EigenSolver("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let min_raw = eig.eigenvalues[order[n - 1]];
    if min_raw < -NEGATIVE_EIGENVALUE_TOL {
        let (first, second, distance) = kernel.closest;
        return Err(PlomError::Concentration { first, second, distance });
    }

    let mut eigenvalues = DVector::zeros(n);
    let mut phi = DMatrix::zeros(n, n);
    let mut n_clamped = 0;
    for (dst, &src) in order.iter().enumerate() {
        let mut lambda = eig.eigenvalues[src];
        if lambda < EIGENVALUE_FLOOR {
            lambda = EIGENVALUE_FLOOR;
            n_clamped += 1;
        }
        eigenvalues[dst] = lambda;
        let mut col = eig.eigenvectors.column(src).into_owned();
        let lead = col.iamax();
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        phi.set_column(dst, &col);
    }
    // The leading pair is known in closed form.
    eigenvalues[0] = 1.0;
    let norm = sqrt_b.norm();
    phi.set_column(0, &(&sqrt_b / norm));

    let mut psi = phi;
    for (i, mut row) in psi.row_iter_mut().enumerate() {
        row /= sqrt_b[i];
    }
    Ok(DiffusionBasis {
        eps_dm: kernel.eps_dm,
        kappa,
        eigenvalues,
        psi,
        n_clamped,
        min_raw_eigenvalue: min_raw,
    })
}

impl DiffusionBasis {
    pub fn eps_dm(&self) -> f64 {
        self.eps_dm
    }

    pub fn kappa(&self) -> u32 {
        self.kappa
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Eigenvectors `psi^alpha` as columns, normalized so that `psi^T b psi = I`.
    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn n_samples(&self) -> usize {
        self.eigenvalues.len()
    }

    /// How many trailing eigenvalues sat below the floor and were clamped.
    pub fn n_clamped(&self) -> usize {
        self.n_clamped
    }

    pub fn min_raw_eigenvalue(&self) -> f64 {
        self.min_raw_eigenvalue
    }

    pub fn m_hat(&self, threshold: f64) -> usize {
        m_hat_from_spectrum(self.eigenvalues.as_slice(), threshold)
    }

    /// Same spectrum with a different exponent on the basis scaling.
    pub fn with_kappa(&self, kappa: u32) -> DiffusionBasis {
        DiffusionBasis { kappa, ..self.clone() }
    }

    pub fn reduce(&self, m: usize) -> Result<ReducedBasis> {
        let n = self.n_samples();
        if m == 0 || m > n {
            return Err(PlomError::Config(format!("reduced order must lie in 1..={n}, got {m}")));
        }
        let psi_m = self.psi.columns(0, m).into_owned();
        let scale: Vec<f64> = (0..m).map(|a| self.eigenvalues[a].powi(self.kappa as i32)).collect();
        // Solve on psi (well conditioned), then fold in the lambda^kappa scaling.
        let gram = psi_m.transpose() * &psi_m;
        let chol = gram
            .cholesky()
            .ok_or_else(|| PlomError::EigenSolver("basis Gram matrix is not positive definite".into()))?;
        let x = chol.solve(&psi_m.transpose());
        let mut a = x.transpose();
        let mut g = psi_m;
        for (k, &sc) in scale.iter().enumerate() {
            a.column_mut(k).scale_mut(1.0 / sc);
            g.column_mut(k).scale_mut(sc);
        }
        let projector = &a * g.transpose();
        Ok(ReducedBasis { m, kappa: self.kappa, eps_dm: self.eps_dm, g, a, projector })
    }
}

/// Reduced basis `g_m`, its pseudo-inverse factor `a_m = g (g^T g)^{-1}`, and `G_m = a_m g_m^T`.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    m: usize,
    kappa: u32,
    eps_dm: f64,
    g: DMatrix<f64>,
    a: DMatrix<f64>,
    projector: DMatrix<f64>,
}

impl ReducedBasis {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kappa(&self) -> u32 {
        self.kappa
    }

    pub fn eps_dm(&self) -> f64 {
        self.eps_dm
    }

    pub fn n_samples(&self) -> usize {
        self.g.nrows()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }
}

/// Smallest `alpha >= 3` (1-based) with `lambda_alpha / lambda_2 < threshold`, or `N`.
pub fn m_hat_from_spectrum(eigenvalues: &[f64], threshold: f64) -> usize {
    let n = eigenvalues.len();
    if n < 3 {
        return n;
    }
    let l2 = eigenvalues[1];
    (3..=n).find(|&alpha| eigenvalues[alpha - 1] / l2 < threshold).unwrap_or(n)
}

pub fn m_hat(eta: &NormalizedMatrix, eps_dm: f64, threshold: f64) -> Result<usize> {
    let basis = solve_basis(&build_kernel(eta, eps_dm)?, DEFAULT_KAPPA)?;
    Ok(basis.m_hat(threshold))
}

/// One row of the bandwidth scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub eps: f64,
    pub mhat: usize,
    pub lambda_2: f64,
    pub lambda_mhat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSelection {
    pub eps_opt: f64,
    pub m_opt: usize,
    /// `lambda_{m_opt} / lambda_{m_opt + 1}`; large values mean a clean spectral gap.
    pub gap_ratio: Option<f64>,
    pub profile: Vec<ProfilePoint>,
}

pub const DEFAULT_GRID_LO: f64 = 0.1;
pub const DEFAULT_GRID_HI: f64 = 100.0;
pub const DEFAULT_GRID_POINTS: usize = 24;

/// Median pairwise distance between data columns.
pub fn median_pair_distance(eta: &NormalizedMatrix) -> f64 {
    let d2 = pairwise_sq_distances(eta.matrix());
    let n = d2.nrows();
    let mut dists: Vec<f64> =
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| d2[(i, j)].sqrt()).collect();
    median(&mut dists)
}

/// Geometric grid over `[lo, hi] * med^2`.
pub fn scaled_eps_grid(eta: &NormalizedMatrix, lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let med_sq = median_pair_distance(eta).powi(2);
    geometric_grid(lo * med_sq, hi * med_sq, points)
}

/// 24 geometric points over `[0.1, 100] * med^2`.
pub fn default_eps_grid(eta: &NormalizedMatrix) -> Vec<f64> {
    scaled_eps_grid(eta, DEFAULT_GRID_LO, DEFAULT_GRID_HI, DEFAULT_GRID_POINTS)
}

pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let ratio = (hi / lo).powf(1.0 / (points - 1) as f64);
    (0..points).map(|k| if k + 1 == points { hi } else { lo * ratio.powi(k as i32) }).collect()
}

/// Scans the grid and applies the plateau rule (see [`select_from_profile`]).
pub fn select_eps_m(eta: &NormalizedMatrix, grid: &[f64], threshold: f64) -> Result<EpsSelection> {
    validate_grid(grid)?;
    let mut profile = Vec::with_capacity(grid.len());
    let mut spectra = Vec::with_capacity(grid.len());
    for &eps in grid {
        let basis = solve_basis(&build_kernel(eta, eps)?, DEFAULT_KAPPA)?;
        let lambda = basis.eigenvalues().as_slice().to_vec();
        let mhat = m_hat_from_spectrum(&lambda, threshold);
        profile.push(ProfilePoint { eps, mhat, lambda_2: lambda.get(1).copied().unwrap_or(1.0), lambda_mhat: lambda[mhat - 1] });
        spectra.push(lambda);
    }
    let mhats: Vec<usize> = profile.iter().map(|p| p.mhat).collect();
    let idx = select_from_profile(grid, &mhats)?;
    let m_opt = mhats[idx];
    let lambda = &spectra[idx];
    let gap_ratio = lambda.get(m_opt).map(|next| lambda[m_opt - 1] / next);
    Ok(EpsSelection { eps_opt: grid[idx], m_opt, gap_ratio, profile })
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 8 {
        return Err(PlomError::Config(format!("bandwidth grid needs at least 8 points, got {}", grid.len())));
    }
    if grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PlomError::Config("bandwidth grid must be positive and strictly increasing".into()));
    }
    Ok(())
}

/// Index of the first grid point where `m_hat` has dropped below every smaller grid value
/// and stays constant on the grid points in `(eps, 1.5 eps]`.
pub fn select_from_profile(grid: &[f64], mhats: &[usize]) -> Result<usize> {
    assert_eq!(grid.len(), mhats.len());
    if let Some(k) = (1..mhats.len()).find(|&k| mhats[k] > mhats[k - 1]) {
        return Err(PlomError::NonMonotone(format!(
            "m-hat rises from {} to {} between eps = {:e} and {:e}; a general bandwidth selector is \
             required for this dataset",
            mhats[k - 1],
            mhats[k],
            grid[k - 1],
            grid[k]
        )));
    }
    let last = *grid.last().expect("non-empty grid");
    for i in 1..grid.len() {
        if mhats[i] >= mhats[i - 1] {
            continue;
        }
        let eps = grid[i];
        if last < 1.5 * eps {
            break;
        }
        let window: Vec<usize> = grid
            .iter()
            .zip(mhats)
            .filter(|(&e, _)| e > eps && e <= 1.5 * eps)
            .map(|(_, &m)| m)
            .collect();
        // An empty window cannot witness a plateau.
        if !window.is_empty() && window.iter().all(|&m| m == mhats[i]) {
            if mhats[i] <= 2 {
                return Err(PlomError::ScanRange(format!("selected order {} must exceed 2", mhats[i])));
            }
            return Ok(i);
        }
    }
    Err(PlomError::ScanRange(
        "no plateau of m-hat found; widen the bandwidth grid".into(),
    ))
}
