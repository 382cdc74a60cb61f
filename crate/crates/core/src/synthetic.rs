//! Seeded synthetic datasets concentrated near low-dimensional manifolds.
//! Every generator returns points as columns of an `n x N` matrix.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset_io::RawDataset;
use crate::error::Result;

fn noisy(mut x: DMatrix<f64>, noise: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    if noise > 0.0 {
        x.iter_mut().for_each(|v| *v += noise * rng.sample::<f64, _>(StandardNormal));
    }
    x
}

/// Two turns of a circular helix of pitch 0.5 in three features.
pub fn helix(n_samples: usize, noise: f64, seed: u64) -> Result<RawDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(3, n_samples);
    for mut c in x.column_iter_mut() {
        let t = 2.0 * TAU * rng.random::<f64>();
        c[0] = t.cos();
        c[1] = t.sin();
        c[2] = 0.5 * t / TAU;
    }
    RawDataset::new(noisy(x, noise, &mut rng), None)
}

/// Unit circle with a third-harmonic out-of-plane wobble.
pub fn ring(n_samples: usize, noise: f64, seed: u64) -> Result<RawDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(3, n_samples);
    for mut c in x.column_iter_mut() {
        let t = TAU * rng.random::<f64>();
        c[0] = t.cos();
        c[1] = t.sin();
        c[2] = 0.3 * (3.0 * t).sin();
    }
    RawDataset::new(noisy(x, noise, &mut rng), None)
}

/// Saddle `(u, v, u^2 - v^2)` over the unit square, a two-dimensional sheet.
pub fn curved_sheet(n_samples: usize, noise: f64, seed: u64) -> Result<RawDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(3, n_samples);
    for mut c in x.column_iter_mut() {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        c[0] = u;
        c[1] = v;
        c[2] = u * u - v * v;
    }
    RawDataset::new(noisy(x, noise, &mut rng), None)
}

/// Swiss roll `(t cos t, h, t sin t)`, `t` in `[1.5 pi, 4.5 pi]`, `h` in `[0, 21]`.
pub fn swiss_roll(n_samples: usize, noise: f64, seed: u64) -> Result<RawDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(3, n_samples);
    for mut c in x.column_iter_mut() {
        let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * rng.random::<f64>());
        c[0] = t * t.cos();
        c[1] = 21.0 * rng.random::<f64>();
        c[2] = t * t.sin();
    }
    RawDataset::new(noisy(x, noise, &mut rng), None)
}

/// A two-parameter surface lifted through nine smooth features, then linearly embedded
/// into `n_features` coordinates. The result has exact rank nine after centering.
pub fn embedded_surface(n_features: usize, n_samples: usize, seed: u64) -> Result<RawDataset> {
    const LATENT: usize = 9;
    assert!(n_features >= LATENT, "need at least {LATENT} features");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = DMatrix::zeros(LATENT, n_samples);
    for mut c in features.column_iter_mut() {
        let u = rng.random::<f64>();
        let v = rng.random::<f64>();
        let (a, b) = (TAU * u, TAU * v);
        c[0] = a.cos();
        c[1] = a.sin();
        c[2] = b.cos();
        c[3] = b.sin();
        c[4] = (a + b).cos();
        c[5] = (a - b).sin();
        c[6] = 0.5 * (2.0 * a).cos();
        c[7] = 0.5 * (2.0 * b).sin();
        c[8] = u * v;
    }
    let embed = DMatrix::from_fn(n_features, LATENT, |_, _| rng.sample::<f64, _>(StandardNormal));
    RawDataset::new(embed * features, None)
}
