//! Truncated principal component analysis producing the whitened matrix `eta_d`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset_io::RawDataset;
use crate::error::{PlomError, Result};

/// Eigenvalues below this fraction of the largest one are numerical zeros.
pub const ZERO_EIGENVALUE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    err_pca: f64,
    eps_tol: f64,
}

/// The `nu x N` matrix of whitened realizations, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatrix {
    eta: DMatrix<f64>,
}

impl NormalizedMatrix {
    /// Wraps a matrix assumed to be centered and whitened already.
    pub fn from_matrix(eta: DMatrix<f64>) -> Self {
        NormalizedMatrix { eta }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.eta
    }

    pub fn nu(&self) -> usize {
        self.eta.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.eta.ncols()
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.eta.norm_squared()
    }
}

/// Fits the PCA, retaining the smallest `nu` whose relative truncation error is within `eps_tol`.
pub fn fit_pca(scaled: &RawDataset, eps_tol: f64) -> Result<PcaModel> {
    if !(0.0..1.0).contains(&eps_tol) {
        return Err(PlomError::Config(format!("PCA tolerance must lie in [0, 1), got {eps_tol}")));
    }
    let x = scaled.points();
    let (n, n_samples) = x.shape();
    if n_samples < 3 {
        return Err(PlomError::Shape(format!("PCA needs at least 3 realizations, got {n_samples}")));
    }
    let mean = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let denom = (n_samples - 1) as f64;

    // Eigenpairs of the covariance, sorted descending.
    let (values, vectors) = if n <= n_samples {
        let cov = (&centered * centered.transpose()) / denom;
        sorted_eigen(cov)
    } else {
        let gram = (centered.transpose() * &centered) / denom;
        let (values, v) = sorted_eigen(gram);
        let mut phi = &centered * v;
        for (k, mut col) in phi.column_iter_mut().enumerate() {
            let norm = col.norm();
            if values[k] > 0.0 && norm > 0.0 {
                col /= norm;
            }
        }
        (values, phi)
    };

    let lead = values[0].max(0.0);
    if lead <= 0.0 {
        return Err(PlomError::Dimension("scaled data has zero variance".into()));
    }
    let trace: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let significant = values.iter().take_while(|&&v| v >= ZERO_EIGENVALUE_RATIO * lead).count();

    let mut retained = 0.0;
    let mut nu = 0;
    let mut err = 1.0;
    for (k, &v) in values.iter().take(significant).enumerate() {
        retained += v;
        nu = k + 1;
        err = (1.0 - retained / trace).max(0.0);
        if err <= eps_tol {
            break;
        }
    }
    // Once only numerically-zero modes remain, the residual error is rounding noise.
    let exhausted = nu == significant;
    if (err > eps_tol && !exhausted) || nu >= n_samples {
        return Err(PlomError::Dimension(format!(
            "a relative PCA error of {eps_tol:e} needs nu >= N = {n_samples}; use more realizations \
             or a looser tolerance"
        )));
    }

    let mut eigenvectors = vectors.columns(0, nu).into_owned();
    for mut col in eigenvectors.column_iter_mut() {
        let lead_idx = col.iamax();
        if col[lead_idx] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(PcaModel {
        mean,
        eigenvalues: DVector::from_iterator(nu, values.iter().take(nu).copied()),
        eigenvectors,
        err_pca: err,
        eps_tol,
    })
}

fn sorted_eigen(sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |i, k| {
        eig.eigenvectors[(i, order[k])]
    });
    (values, vectors)
}

impl PcaModel {
    pub fn nu(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn err_pca(&self) -> f64 {
        self.err_pca
    }

    pub fn eps_tol(&self) -> f64 {
        self.eps_tol
    }

    /// `eta = mu^{-1/2} Phi^T (x - mean)` for each column of `x`.
    pub fn normalize_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n() {
            return Err(PlomError::Dimension(format!(
                "PCA fitted on {} features, got {}",
                self.n(),
                x.nrows()
            )));
        }
        let mut centered = x.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        let mut eta = self.eigenvectors.transpose() * centered;
        for (k, mut row) in eta.row_iter_mut().enumerate() {
            row /= self.eigenvalues[k].sqrt();
        }
        Ok(eta)
    }

    pub fn normalize(&self, scaled: &RawDataset) -> Result<NormalizedMatrix> {
        self.normalize_matrix(scaled.points()).map(NormalizedMatrix::from_matrix)
    }

    /// `x = mean + Phi mu^{1/2} eta` for each column of `eta`.
    pub fn reconstruct(&self, eta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if eta.nrows() != self.nu() {
            return Err(PlomError::Dimension(format!(
                "expected {} reduced coordinates, got {}",
                self.nu(),
                eta.nrows()
            )));
        }
        let mut scaled_eta = eta.clone();
        for (k, mut row) in scaled_eta.row_iter_mut().enumerate() {
            row *= self.eigenvalues[k].sqrt();
        }
        let mut x = &self.eigenvectors * scaled_eta;
        for mut col in x.column_iter_mut() {
            col += &self.mean;
        }
        Ok(x)
    }
}

#[derive(Serialize, Deserialize)]
struct PcaModelDto {
    n: usize,
    nu: usize,
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// `n x nu`, row-major.
    eigenvectors: Vec<f64>,
    err_pca: f64,
    eps_tol: f64,
}

impl Serialize for PcaModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (n, nu) = self.eigenvectors.shape();
        PcaModelDto {
            n,
            nu,
            mean: self.mean.iter().copied().collect(),
            eigenvalues: self.eigenvalues.iter().copied().collect(),
            eigenvectors: self.eigenvectors.transpose().as_slice().to_vec(),
            err_pca: self.err_pca,
            eps_tol: self.eps_tol,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PcaModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let dto = PcaModelDto::deserialize(deserializer)?;
        if dto.mean.len() != dto.n || dto.eigenvalues.len() != dto.nu || dto.eigenvectors.len() != dto.n * dto.nu {
            return Err(D::Error::custom("PCA model arrays disagree with declared dimensions"));
        }
        Ok(PcaModel {
            mean: DVector::from_vec(dto.mean),
            eigenvalues: DVector::from_vec(dto.eigenvalues),
            eigenvectors: DMatrix::from_row_slice(dto.n, dto.nu, &dto.eigenvectors),
            err_pca: dto.err_pca,
            eps_tol: dto.eps_tol,
        })
    }
}
