//! Reduced-order dissipative Hamiltonian sampler.
//!
//! The state is a pair of `nu x m` matrices `(z, y)`. The position marginal of its invariant
//! measure is the kernel density model transported onto the reduced basis; learned
//! realizations are `z g_m^T`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{ArchiveMetadata, LearnedArchive, ScalingSpec};
use crate::diffusion_maps::ReducedBasis;
use crate::error::{PlomError, Result};
use crate::kde::KdeModel;
use crate::pca::{NormalizedMatrix, PcaModel};

pub const DEFAULT_F0: f64 = 1.5;
pub const DEFAULT_CHAINS: usize = 8;

/// `2 pi s_hat / 20`.
pub fn default_dr(s_hat: f64) -> f64 {
    2.0 * std::f64::consts::PI * s_hat / 20.0
}

/// Steps until the transient factor `exp(-f0 r / 2)` drops below `1e-3`.
pub fn default_burn_in(f0: f64, dr: f64) -> usize {
    (2.0 * 1000f64.ln() / (f0 * dr)).ceil() as usize
}

pub fn default_spacing(burn_in: usize) -> usize {
    burn_in.div_ceil(4).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsdeConfig {
    pub f0: f64,
    pub dr: f64,
    pub burn_in_steps: usize,
    pub spacing_steps: usize,
    pub n_chains: usize,
    pub n_mc: usize,
    pub seed: u64,
    /// Cap on retained samples per chain; `None` spreads `n_mc` evenly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_chain: Option<usize>,
}

impl IsdeConfig {
    /// Default schedule for a model with modified bandwidth `s_hat`.
    pub fn with_defaults(s_hat: f64, n_mc: usize, seed: u64) -> Self {
        let dr = default_dr(s_hat);
        let burn_in = default_burn_in(DEFAULT_F0, dr);
        IsdeConfig {
            f0: DEFAULT_F0,
            dr,
            burn_in_steps: burn_in,
            spacing_steps: default_spacing(burn_in),
            n_chains: DEFAULT_CHAINS,
            n_mc,
            seed,
            samples_per_chain: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PlomError::Config(msg));
        if self.n_mc == 0 {
            return bad("n_mc must be at least 1".into());
        }
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return bad(format!("f0 must be positive, got {}", self.f0));
        }
        if !(self.dr > 0.0 && self.dr.is_finite()) {
            return bad(format!("dr must be positive, got {}", self.dr));
        }
        if self.spacing_steps == 0 || self.n_chains == 0 {
            return bad("spacing and chain count must be at least 1".into());
        }
        if let Some(per_chain) = self.samples_per_chain {
            if per_chain.saturating_mul(self.n_chains) < self.n_mc {
                return bad(format!(
                    "{} chains x {per_chain} samples cannot produce n_mc = {}",
                    self.n_chains, self.n_mc
                ));
            }
        }
        Ok(())
    }

    /// Samples retained by each chain, summing to `n_mc`.
    pub fn chain_counts(&self) -> Vec<usize> {
        let per_chain = self.samples_per_chain.unwrap_or_else(|| self.n_mc.div_ceil(self.n_chains));
        let mut left = self.n_mc;
        (0..self.n_chains)
            .map(|_| {
                let take = per_chain.min(left);
                left -= take;
                take
            })
            .collect()
    }
}

/// Independent random stream for chain `chain`; other chains never perturb it.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub z: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub r: f64,
    pub steps: usize,
}

/// `z = eta_d a_m`, `y = v0 a_m` with `v0` a fresh standard normal `nu x N` draw.
pub fn init_chain(eta: &NormalizedMatrix, basis: &ReducedBasis, rng: &mut impl Rng) -> ChainState {
    let v0 = standard_normal_matrix(eta.nu(), eta.n_samples(), rng);
    ChainState { z: eta.matrix() * basis.a(), y: v0 * basis.a(), r: 0.0, steps: 0 }
}

/// `L(z g^T) a`: the full drift evaluated on the lifted state, projected back.
pub fn reduced_drift(kde: &KdeModel, basis: &ReducedBasis, z: &DMatrix<f64>) -> DMatrix<f64> {
    let u = z * basis.g().transpose();
    kde.drift(&u) * basis.a()
}

/// One Verlet step driven by a given Wiener increment `dw` (`nu x N`, variance `dr`).
pub fn step_with_increment(
    state: &mut ChainState,
    kde: &KdeModel,
    basis: &ReducedBasis,
    f0: f64,
    dr: f64,
    dw: &DMatrix<f64>,
) {
    let b = f0 * dr / 4.0;
    let half = &state.z + &state.y * (0.5 * dr);
    let force = reduced_drift(kde, basis, &half);
    let noise = dw * basis.a();
    let y = &state.y * ((1.0 - b) / (1.0 + b)) + force * (dr / (1.0 + b)) + noise * (f0.sqrt() / (1.0 + b));
    state.z = half + &y * (0.5 * dr);
    state.y = y;
    state.r += dr;
    state.steps += 1;
}

pub fn step(
    state: &mut ChainState,
    kde: &KdeModel,
    basis: &ReducedBasis,
    config: &IsdeConfig,
    chain: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let mut dw = standard_normal_matrix(kde.nu(), basis.n_samples(), rng);
    dw *= config.dr.sqrt();
    step_with_increment(state, kde, basis, config.f0, config.dr, &dw);
    if state.z.iter().chain(state.y.iter()).any(|v| !v.is_finite()) {
        return Err(PlomError::Divergence { chain, step: state.steps });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LearnedSet {
    pub m: usize,
    pub z_samples: Vec<DMatrix<f64>>,
    pub eta_samples: Vec<DMatrix<f64>>,
    /// Chain that produced each sample, in merge order.
    pub chain_of: Vec<usize>,
    pub config: IsdeConfig,
}

impl LearnedSet {
    pub fn len(&self) -> usize {
        self.z_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_samples.is_empty()
    }
}

/// Runs the chains in parallel and merges them in chain order.
pub fn generate(
    eta: &NormalizedMatrix,
    kde: &KdeModel,
    basis: &ReducedBasis,
    config: &IsdeConfig,
) -> Result<LearnedSet> {
    config.validate()?;
    if basis.n_samples() != eta.n_samples() || kde.nu() != eta.nu() {
        return Err(PlomError::Shape("data, density model and basis disagree in size".into()));
    }
    let counts = config.chain_counts();
    let chains: Vec<Result<Vec<DMatrix<f64>>>> = counts
        .par_iter()
        .enumerate()
        .map(|(chain, &count)| run_chain(eta, kde, basis, config, chain, count))
        .collect();
    let mut z_samples = Vec::with_capacity(config.n_mc);
    let mut chain_of = Vec::with_capacity(config.n_mc);
    for (chain, result) in chains.into_iter().enumerate() {
        let zs = result?;
        chain_of.extend(std::iter::repeat_n(chain, zs.len()));
        z_samples.extend(zs);
    }
    let gt = basis.g().transpose();
    let eta_samples = z_samples.iter().map(|z| z * &gt).collect();
    Ok(LearnedSet { m: basis.m(), z_samples, eta_samples, chain_of, config: config.clone() })
}

fn run_chain(
    eta: &NormalizedMatrix,
    kde: &KdeModel,
    basis: &ReducedBasis,
    config: &IsdeConfig,
    chain: usize,
    count: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    let mut rng = chain_rng(config.seed, chain);
    let mut state = init_chain(eta, basis, &mut rng);
    for _ in 0..config.burn_in_steps {
        step(&mut state, kde, basis, config, chain, &mut rng)?;
    }
    for _ in 0..count {
        for _ in 0..config.spacing_steps {
            step(&mut state, kde, basis, config, chain, &mut rng)?;
        }
        out.push(state.z.clone());
    }
    Ok(out)
}

/// Maps every learned matrix back to physical coordinates; one archive column per realization.
pub fn reconstruct_learned(
    learned: &LearnedSet,
    pca: &PcaModel,
    scaling: &ScalingSpec,
    eps_dm: f64,
    kappa: u32,
) -> Result<LearnedArchive> {
    let Some(first) = learned.eta_samples.first() else {
        return Err(PlomError::Shape("learned set is empty".into()));
    };
    let (nu, n_samples) = first.shape();
    if nu != pca.nu() || scaling.n() != pca.n() {
        return Err(PlomError::Dimension(format!(
            "learned samples have {nu} coordinates; PCA expects {} and maps to {} features (scaling has {})",
            pca.nu(),
            pca.n(),
            scaling.n()
        )));
    }
    let total = learned.len() * n_samples;
    let mut samples = DMatrix::zeros(pca.n(), total);
    for (l, eta_ar) in learned.eta_samples.iter().enumerate() {
        let x = scaling.invert(&pca.reconstruct(eta_ar)?)?;
        samples.columns_mut(l * n_samples, n_samples).copy_from(&x);
    }
    let metadata = ArchiveMetadata {
        n_samples,
        nu,
        m: learned.m,
        eps_dm,
        kappa,
        f0: learned.config.f0,
        dr: learned.config.dr,
        seed: learned.config.seed,
        n_mc: total,
    };
    LearnedArchive::new(samples, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_io::{RawDataset, ScalingMode};
    use crate::diffusion_maps::{build_kernel, solve_basis};
    use crate::pca::fit_pca;

    fn small_problem(nu: usize, n: usize, seed: u64) -> (NormalizedMatrix, KdeModel, crate::diffusion_maps::DiffusionBasis) {
        let mut rng = chain_rng(seed, 99);
        let x = standard_normal_matrix(nu, n, &mut rng);
        let raw = RawDataset::new(x, None).unwrap();
        let pca = fit_pca(&raw, 1e-12).unwrap();
        let eta = pca.normalize(&raw).unwrap();
        let kde = KdeModel::new(&eta);
        let basis = solve_basis(&build_kernel(&eta, 1.0).unwrap(), 1).unwrap();
        (eta, kde, basis)
    }

    #[test]
    fn defaults_follow_the_schedule_rules() {
        let cfg = IsdeConfig::with_defaults(0.525, 100, 1);
        assert!((cfg.dr - 2.0 * std::f64::consts::PI * 0.525 / 20.0).abs() < 1e-15);
        let expect = (2.0 * 1000f64.ln() / (1.5 * cfg.dr)).ceil() as usize;
        assert_eq!(cfg.burn_in_steps, expect);
        assert_eq!(cfg.spacing_steps, expect.div_ceil(4));
        assert_eq!(cfg.chain_counts().iter().sum::<usize>(), 100);
        assert_eq!(cfg.chain_counts().len(), 8);
    }

    #[test]
    fn config_validation() {
        let mut cfg = IsdeConfig::with_defaults(0.5, 0, 1);
        assert!(matches!(cfg.validate(), Err(PlomError::Config(_))));
        cfg.n_mc = 10;
        cfg.samples_per_chain = Some(1);
        assert!(matches!(cfg.validate(), Err(PlomError::Config(_))));
        cfg.samples_per_chain = Some(2);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn initial_state_projects_the_data() {
        let (eta, _, basis) = small_problem(2, 12, 1);
        for m in [3, 7, 12] {
            let r = basis.reduce(m).unwrap();
            let state = init_chain(&eta, &r, &mut chain_rng(5, 0));
            let lifted = &state.z * r.g().transpose();
            let projected = eta.matrix() * r.projector();
            assert!((lifted - projected).amax() < 1e-10);
        }
        let full = basis.reduce(12).unwrap();
        let state = init_chain(&eta, &full, &mut chain_rng(5, 0));
        assert!((&state.z * full.g().transpose() - eta.matrix()).amax() < 1e-10);
        let again = init_chain(&eta, &full, &mut chain_rng(5, 0));
        assert_eq!(state, again);
    }

    #[test]
    fn full_order_drift_matches_unreduced_drift() {
        let (_, kde, basis) = small_problem(2, 10, 2);
        let full = basis.reduce(10).unwrap();
        let z = standard_normal_matrix(2, 10, &mut chain_rng(1, 1));
        let lhs = reduced_drift(&kde, &full, &z) * full.g().transpose();
        let rhs = kde.drift(&(&z * full.g().transpose()));
        assert!((lhs - rhs).amax() < 1e-8);
    }

    #[test]
    fn single_kernel_lifted_drift_is_affine() {
        let eta = NormalizedMatrix::from_matrix(DMatrix::from_row_slice(1, 1, &[0.4]));
        let kde = KdeModel::with_bandwidths(&eta, 0.8, 0.6);
        let g = DMatrix::from_row_slice(1, 1, &[2.0]);
        // One-point basis: build it through a kernel on the single point.
        let basis = solve_basis(&build_kernel(&eta, 1.0).unwrap(), 0).unwrap().reduce(1).unwrap();
        let z = DMatrix::from_row_slice(1, 1, &[1.7]);
        let u = &z * basis.g().transpose();
        let center = 0.4 * 0.6 / 0.8;
        let expect = (DMatrix::from_element(1, 1, center) - &u) / 0.36 * basis.a();
        assert!((reduced_drift(&kde, &basis, &z) - expect).amax() < 1e-14);
        let _ = g;
    }

    #[test]
    fn noiseless_undamped_step_conserves_harmonic_energy() {
        // One point at the origin: V(u) = u^2 / (2 s_hat^2), a harmonic well.
        let eta = NormalizedMatrix::from_matrix(DMatrix::from_row_slice(1, 1, &[0.0]));
        let kde = KdeModel::with_bandwidths(&eta, 1.0, 1.0);
        let basis = solve_basis(&build_kernel(&eta, 1.0).unwrap(), 0).unwrap().reduce(1).unwrap();
        let c = basis.g()[(0, 0)];
        let mut state = ChainState {
            z: DMatrix::from_element(1, 1, 1.0 / c),
            y: DMatrix::zeros(1, 1),
            r: 0.0,
            steps: 0,
        };
        // Energy in lifted coordinates: (c y)^2/2 + (c z)^2/2.
        let energy = |s: &ChainState| 0.5 * (c * s.y[(0, 0)]).powi(2) + 0.5 * (c * s.z[(0, 0)]).powi(2);
        let e0 = energy(&state);
        let zero = DMatrix::zeros(1, 1);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            step_with_increment(&mut state, &kde, &basis, 0.0, 0.01, &zero);
            worst = worst.max((energy(&state) - e0).abs() / e0);
        }
        assert!(worst <= 1e-3, "relative energy drift {worst}");
    }

    #[test]
    fn damping_drains_velocity_without_noise() {
        let eta = NormalizedMatrix::from_matrix(DMatrix::from_row_slice(1, 1, &[0.0]));
        let kde = KdeModel::with_bandwidths(&eta, 1.0, 1.0);
        let basis = solve_basis(&build_kernel(&eta, 1.0).unwrap(), 0).unwrap().reduce(1).unwrap();
        let mut state = ChainState { z: DMatrix::zeros(1, 1), y: DMatrix::from_element(1, 1, 2.0), r: 0.0, steps: 0 };
        let zero = DMatrix::zeros(1, 1);
        let mut energy = Vec::new();
        for _ in 0..3000 {
            step_with_increment(&mut state, &kde, &basis, 1.5, 0.05, &zero);
            energy.push(state.y.norm_squared() + state.z.norm_squared());
        }
        // Verlet energy oscillates within a period, so compare across ten time units.
        assert!(energy.windows(201).all(|w| w[200] < w[0]));
        assert!(energy[2999] < 1e-20);
    }

    #[test]
    fn generation_is_deterministic_and_on_the_subspace() {
        let (eta, kde, basis) = small_problem(2, 10, 3);
        let r = basis.reduce(4).unwrap();
        let mut cfg = IsdeConfig::with_defaults(kde.s_hat(), 20, 77);
        cfg.n_chains = 3;
        let a = generate(&eta, &kde, &r, &cfg).unwrap();
        let b = generate(&eta, &kde, &r, &cfg).unwrap();
        assert_eq!(a.len(), 20);
        for (x, y) in a.z_samples.iter().zip(&b.z_samples) {
            assert_eq!(x.as_slice(), y.as_slice());
        }
        let complement = DMatrix::<f64>::identity(10, 10) - r.projector();
        for (z, h) in a.z_samples.iter().zip(&a.eta_samples) {
            assert!((z * r.g().transpose() - h).amax() < 1e-12);
            assert!((h * &complement).amax() < 1e-10);
        }
        assert_eq!(a.chain_of, [0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn adding_chains_leaves_existing_streams_untouched() {
        let (eta, kde, basis) = small_problem(2, 8, 4);
        let r = basis.reduce(8).unwrap();
        let mut cfg = IsdeConfig::with_defaults(kde.s_hat(), 4, 5);
        cfg.n_chains = 2;
        cfg.samples_per_chain = Some(2);
        let two = generate(&eta, &kde, &r, &cfg).unwrap();
        cfg.n_chains = 4;
        cfg.n_mc = 8;
        let four = generate(&eta, &kde, &r, &cfg).unwrap();
        for k in 0..4 {
            assert_eq!(two.z_samples[k], four.z_samples[k]);
        }
    }

    #[test]
    fn reconstruction_of_learned_samples() {
        let mut rng = chain_rng(8, 0);
        let x = standard_normal_matrix(3, 9, &mut rng).map(|v| 5.0 + 2.0 * v);
        let raw = RawDataset::new(x, None).unwrap();
        let scaling = ScalingSpec::fit(&raw, ScalingMode::MinMax);
        let scaled = scaling.apply_dataset(&raw).unwrap();
        let pca = fit_pca(&scaled, 1e-12).unwrap();
        let eta = pca.normalize(&scaled).unwrap();
        let cfg = IsdeConfig::with_defaults(0.5, 2, 0);
        let learned = LearnedSet {
            m: 9,
            z_samples: vec![DMatrix::zeros(3, 9); 2],
            eta_samples: vec![eta.matrix().clone(), DMatrix::zeros(3, 9)],
            chain_of: vec![0, 0],
            config: cfg,
        };
        let archive = reconstruct_learned(&learned, &pca, &scaling, 1.0, 1).unwrap();
        assert_eq!(archive.metadata.n_mc, archive.samples.ncols());
        assert_eq!(archive.samples.ncols(), 18);
        assert!((archive.samples.columns(0, 9) - raw.points()).amax() < 1e-10);
        let mean_image = scaling.invert(&DMatrix::from_column_slice(3, 1, pca.mean().as_slice())).unwrap();
        for col in archive.samples.columns(9, 9).column_iter() {
            assert!((col - mean_image.column(0)).amax() < 1e-12);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (eta, kde, basis) = small_problem(2, 6, 6);
        let r = basis.reduce(6).unwrap();
        let mut cfg = IsdeConfig::with_defaults(kde.s_hat(), 1, 1);
        cfg.dr = 1e3;
        cfg.burn_in_steps = 200;
        let err = generate(&eta, &kde, &r, &cfg).unwrap_err();
        assert!(matches!(err, PlomError::Divergence { .. }), "{err}");
    }
}
