//! Concentration diagnostics: projection residual, the distance bounds and estimates as
//! functions of the reduced order `m`, and the closed-form MaxEnt quantities.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffusion_maps::DiffusionBasis;
use crate::error::{PlomError, Result};
use crate::isde::LearnedSet;
use crate::kde::bandwidths;
use crate::numeric::flushed_exp;
use crate::pca::NormalizedMatrix;

/// Orthonormal basis of the nested spans `span(psi^1..psi^m)`, one column per order.
fn nested_orthonormal_basis(basis: &DiffusionBasis) -> DMatrix<f64> {
    basis.psi().clone().qr().q()
}

/// `eps_d(m)` for every `m = 1..=N` (entry `m - 1`).
pub fn eps_d_curve(eta: &NormalizedMatrix, basis: &DiffusionBasis) -> Result<Vec<f64>> {
    if basis.n_samples() != eta.n_samples() {
        return Err(PlomError::Shape("basis and data disagree on N".into()));
    }
    let q = nested_orthonormal_basis(basis);
    let norm_sq = eta.norm_sq();
    let captured: Vec<f64> = (eta.matrix() * q).column_iter().map(|c| c.norm_squared()).collect();
    // Tail sums, so that eps_d(N) is exactly zero.
    let mut tail = 0.0;
    let mut out = vec![0.0; captured.len()];
    for k in (0..captured.len()).rev() {
        out[k] = (tail / norm_sq).sqrt();
        tail += captured[k];
    }
    Ok(out)
}

/// Relative distance from the data to its projection on the order-`m` basis.
pub fn eps_d(eta: &NormalizedMatrix, basis: &DiffusionBasis, m: usize) -> Result<f64> {
    let n = basis.n_samples();
    if m == 0 || m > n {
        return Err(PlomError::Config(format!("order must lie in 1..={n}, got {m}")));
    }
    Ok(eps_d_curve(eta, basis)?[m - 1])
}

pub fn f_d(n_samples: usize, nu: usize, eps_d: f64, m: usize) -> f64 {
    let (_, s_hat) = bandwidths(n_samples, nu);
    m as f64 * s_hat * s_hat / (n_samples - 1) as f64 + eps_d * eps_d
}

pub fn g_bar(n_samples: usize, nu: usize, eps_d: f64, m: usize) -> Result<f64> {
    let (s, s_hat) = bandwidths(n_samples, nu);
    let v = 1.0 + (s_hat * s_hat / (s * s)) * (m as f64 / n_samples as f64) - eps_d * eps_d;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(PlomError::NumericalInconsistency(format!("g_bar({m}) = {v} is not positive")))
    }
}

/// Upper bound `1 + m / (N - 1)` from the maximum-entropy surrogate.
pub fn d_maxent(n_samples: usize, m: usize) -> f64 {
    1.0 + m as f64 / (n_samples - 1) as f64
}

/// `f_d + g_bar exp(-eps_d^2 |eta|^2 / (2 s^2))`.
pub fn d_app(n_samples: usize, nu: usize, eps_d: f64, m: usize, eta_norm_sq: f64) -> Result<f64> {
    let (s, _) = bandwidths(n_samples, nu);
    let damping = flushed_exp(-eps_d * eps_d * eta_norm_sq / (2.0 * s * s));
    Ok(f_d(n_samples, nu, eps_d, m) + g_bar(n_samples, nu, eps_d, m)? * damping)
}

/// `ln gamma_bar^c(m) = -(nu (N - m) / 2) ln(1 + sigma^2 / s^2)`, `sigma^2 = 1 - 1/N`.
pub fn log_gamma_c(n_samples: usize, nu: usize, m: usize) -> f64 {
    let (s, _) = bandwidths(n_samples, nu);
    let sigma_sq = 1.0 - 1.0 / n_samples as f64;
    -(nu as f64 * (n_samples - m) as f64 / 2.0) * (sigma_sq / (s * s)).ln_1p()
}

/// Entropy of the Gaussian surrogate over the entropy of the discrete data measure.
pub fn entropy_ratio(n_samples: usize, nu: usize) -> f64 {
    let n = n_samples as f64;
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    nu as f64 * (two_pi_e.ln() + (1.0 - 1.0 / n).ln()) / (2.0 * n.ln())
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    /// Standard error from batch means within each group, pooled across groups.
    /// Independent samples give back the usual standard error of the mean.
    pub fn from_grouped(values: &[f64], groups: &[usize]) -> McEstimate {
        assert_eq!(values.len(), groups.len());
        let n = values.len();
        if n == 0 {
            return McEstimate { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut by_group: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&v, &g) in values.iter().zip(groups) {
            by_group.entry(g).or_default().push(v);
        }
        let mut batches = Vec::new();
        let mut batch_len = Vec::new();
        for chain in by_group.values() {
            let size = (chain.len() as f64).sqrt().floor().max(1.0) as usize;
            for batch in chain.chunks(size) {
                batches.push(batch.iter().sum::<f64>() / batch.len() as f64);
                batch_len.push(batch.len() as f64);
            }
        }
        if batches.len() < 2 {
            return McEstimate { mean, stderr: 0.0, n };
        }
        // Size-weighted batch variance; reduces to the sample variance for unit batches.
        let total: f64 = batch_len.iter().sum();
        let ss: f64 = batches.iter().zip(&batch_len).map(|(b, w)| w * (b - mean).powi(2)).sum();
        let var_of_mean = ss / ((batches.len() - 1) as f64 * total);
        McEstimate { mean, stderr: var_of_mean.sqrt(), n }
    }

    pub fn from_independent(values: &[f64]) -> McEstimate {
        let groups: Vec<usize> = (0..values.len()).collect();
        Self::from_grouped(values, &groups)
    }
}

/// Mean relative squared distance between learned matrices and the data.
pub fn d_sim(learned: &LearnedSet, eta: &NormalizedMatrix) -> Result<McEstimate> {
    if learned.is_empty() {
        return Err(PlomError::Shape("learned set is empty".into()));
    }
    let norm_sq = eta.norm_sq();
    let mut values = Vec::with_capacity(learned.len());
    for h in &learned.eta_samples {
        if h.shape() != eta.matrix().shape() {
            return Err(PlomError::Shape(format!(
                "learned matrix is {:?}, data is {:?}",
                h.shape(),
                eta.matrix().shape()
            )));
        }
        values.push((h - eta.matrix()).norm_squared() / norm_sq);
    }
    Ok(McEstimate::from_grouped(&values, &learned.chain_of))
}

/// Second-moment estimate `E|H|^2` from a learned set.
pub fn second_moment(learned: &LearnedSet) -> McEstimate {
    let values: Vec<f64> = learned.eta_samples.iter().map(|h| h.norm_squared()).collect();
    McEstimate::from_grouped(&values, &learned.chain_of)
}

/// Entrywise sample mean of the learned matrices with per-entry standard errors.
pub fn entrywise_mean(learned: &LearnedSet) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = learned.eta_samples[0].shape();
    let mut mean = DMatrix::zeros(rows, cols);
    let mut se = DMatrix::zeros(rows, cols);
    let mut values = vec![0.0; learned.len()];
    for i in 0..rows {
        for j in 0..cols {
            for (v, h) in values.iter_mut().zip(&learned.eta_samples) {
                *v = h[(i, j)];
            }
            let est = McEstimate::from_grouped(&values, &learned.chain_of);
            mean[(i, j)] = est.mean;
            se[(i, j)] = est.stderr;
        }
    }
    (mean, se)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdSelection {
    pub m: usize,
    /// Whether `eps_d(m)^2 < s_hat^2/(N-1) < eps_d(m-1)^2` holds at the minimizer.
    pub sandwich: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationCurves {
    pub n_samples: usize,
    pub nu: usize,
    pub m_values: Vec<usize>,
    pub eps_d: Vec<f64>,
    pub f_d: Vec<f64>,
    pub g_bar: Vec<f64>,
    pub d_sim: Vec<Option<McEstimate>>,
    pub d_maxent: Vec<Option<f64>>,
    pub d_app: Vec<Option<f64>>,
    pub m_opt: usize,
}

/// Assembles every curve for `m = 1..=N`; `d_sim` is filled where learned estimates exist.
pub fn build_curves(
    eta: &NormalizedMatrix,
    basis: &DiffusionBasis,
    d_sim: &BTreeMap<usize, McEstimate>,
    m_opt: usize,
) -> Result<ConcentrationCurves> {
    let (n, nu) = (eta.n_samples(), eta.nu());
    let eps = eps_d_curve(eta, basis)?;
    let norm_sq = eta.norm_sq();
    let m_values: Vec<usize> = (1..=n).collect();
    let mut curves = ConcentrationCurves {
        n_samples: n,
        nu,
        m_values: m_values.clone(),
        eps_d: eps.clone(),
        f_d: Vec::with_capacity(n),
        g_bar: Vec::with_capacity(n),
        d_sim: Vec::with_capacity(n),
        d_maxent: Vec::with_capacity(n),
        d_app: Vec::with_capacity(n),
        m_opt,
    };
    for (&m, &e) in m_values.iter().zip(&eps) {
        curves.f_d.push(f_d(n, nu, e, m));
        curves.g_bar.push(g_bar(n, nu, e, m)?);
        curves.d_sim.push(d_sim.get(&m).copied());
        let tail = m >= m_opt;
        curves.d_maxent.push(tail.then(|| d_maxent(n, m)));
        curves.d_app.push(if tail { Some(d_app(n, nu, e, m, norm_sq)?) } else { None });
    }
    Ok(curves)
}

/// Minimizer of `f_d` (smallest on ties), with the sandwich diagnostic.
pub fn select_m_by_fd(curves: &ConcentrationCurves) -> FdSelection {
    let mut best = 0;
    for (k, &v) in curves.f_d.iter().enumerate() {
        if v < curves.f_d[best] {
            best = k;
        }
    }
    let (_, s_hat) = bandwidths(curves.n_samples, curves.nu);
    let level = s_hat * s_hat / (curves.n_samples - 1) as f64;
    let sandwich = best > 0 && curves.eps_d[best].powi(2) < level && level < curves.eps_d[best - 1].powi(2);
    FdSelection { m: curves.m_values[best], sandwich }
}

const CSV_HEADER: &str = "m,eps_d,f_d,g_bar,d_sim,d_sim_stderr,d_sim_n,d_maxent,d_app";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ConcentrationCurves {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for k in 0..self.m_values.len() {
            let sim = self.d_sim[k];
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                self.m_values[k],
                self.eps_d[k],
                self.f_d[k],
                self.g_bar[k],
                opt(sim.map(|e| e.mean)),
                opt(sim.map(|e| e.stderr)),
                sim.map(|e| e.n.to_string()).unwrap_or_default(),
                opt(self.d_maxent[k]),
                opt(self.d_app[k]),
            ));
        }
        let mut file = std::fs::File::create(path).map_err(|e| PlomError::Io { path: path.into(), source: e })?;
        file.write_all(out.as_bytes()).map_err(|e| PlomError::Io { path: path.into(), source: e })
    }

    pub fn read_csv(path: impl AsRef<Path>, n_samples: usize, nu: usize, m_opt: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .from_path(path)
            .map_err(|e| PlomError::Format { row: 0, col: 0, msg: e.to_string() })?;
        let mut c = ConcentrationCurves {
            n_samples,
            nu,
            m_values: vec![],
            eps_d: vec![],
            f_d: vec![],
            g_bar: vec![],
            d_sim: vec![],
            d_maxent: vec![],
            d_app: vec![],
            m_opt,
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| PlomError::Format { row: row + 2, col: 0, msg: e.to_string() })?;
            let field = |col: usize| -> Result<Option<f64>> {
                let s = rec.get(col).unwrap_or("");
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|e| PlomError::Format {
                    row: row + 2,
                    col: col + 1,
                    msg: e.to_string(),
                })
            };
            let required = |col: usize| -> Result<f64> {
                field(col)?.ok_or(PlomError::Format { row: row + 2, col: col + 1, msg: "missing value".into() })
            };
            c.m_values.push(required(0)? as usize);
            c.eps_d.push(required(1)?);
            c.f_d.push(required(2)?);
            c.g_bar.push(required(3)?);
            c.d_sim.push(match (field(4)?, field(5)?, field(6)?) {
                (Some(mean), Some(stderr), Some(n)) => Some(McEstimate { mean, stderr, n: n as usize }),
                _ => None,
            });
            c.d_maxent.push(field(7)?);
            c.d_app.push(field(8)?);
        }
        Ok(c)
    }
}

/// Headline numbers of a diagnosis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSummary {
    pub m_opt: usize,
    pub eps_opt: f64,
    pub d_sim_m_opt: Option<McEstimate>,
    pub d_sim_n: Option<McEstimate>,
    /// `1 + N/(N-1)`, the exact distance without reduction.
    pub d_full_closed_form: f64,
    pub d_maxent_m_opt: f64,
    /// `eps_d(m_opt - 1) / eps_d(m_opt)`; a large value is the gap the reduction relies on.
    /// `None` at `m_opt = 1` or when `eps_d(m_opt)` vanishes.
    pub eps_d_gap_ratio: Option<f64>,
    pub m_fd: usize,
    pub fd_sandwich: bool,
    /// Orders `m >= m_opt` whose estimate exceeds `1 + m/(N-1)` by more than three standard
    /// errors, i.e. where the mixture ratio `r(m) <= 1` is contradicted.
    pub maxent_violations: Vec<usize>,
    pub log_gamma_c_m_opt: f64,
    pub entropy_ratio: f64,
}

pub fn summarize(curves: &ConcentrationCurves, eps_opt: f64) -> DiagnosisSummary {
    let (n, nu, m_opt) = (curves.n_samples, curves.nu, curves.m_opt);
    let at = |m: usize| curves.d_sim.get(m.wrapping_sub(1)).copied().flatten();
    let fd = select_m_by_fd(curves);
    let maxent_violations = curves
        .m_values
        .iter()
        .zip(&curves.d_sim)
        .filter_map(|(&m, est)| {
            let est = (*est)?;
            (m >= m_opt && est.mean > d_maxent(n, m) + 3.0 * est.stderr).then_some(m)
        })
        .collect();
    DiagnosisSummary {
        m_opt,
        eps_opt,
        d_sim_m_opt: at(m_opt),
        d_sim_n: at(n),
        d_full_closed_form: d_maxent(n, n),
        d_maxent_m_opt: d_maxent(n, m_opt),
        eps_d_gap_ratio: (m_opt >= 2 && curves.eps_d[m_opt - 1] > 0.0)
            .then(|| curves.eps_d[m_opt - 2] / curves.eps_d[m_opt - 1]),
        m_fd: fd.m,
        fd_sandwich: fd.sandwich,
        maxent_violations,
        log_gamma_c_m_opt: log_gamma_c(n, nu, m_opt),
        entropy_ratio: entropy_ratio(n, nu),
    }
}
