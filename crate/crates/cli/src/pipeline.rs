//! Stages of a run. Each subcommand runs the stages it needs in order, writing the
//! artifacts of every stage it passes through.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use plom::dataset_io::{load_dataset, metadata_path, save_learned, write_matrix, ScalingSpec};
use plom::diagnostics::{build_curves, d_sim, summarize, DiagnosisSummary, McEstimate};
use plom::diffusion_maps::{
    build_kernel, scaled_eps_grid, select_eps_m, solve_basis, DiffusionBasis, ProfilePoint,
};
use plom::isde::{default_burn_in, default_dr, default_spacing, generate, reconstruct_learned, IsdeConfig, LearnedSet};
use plom::kde::KdeModel;
use plom::mixture_oracle::{enumerate_mixture, verify_sum_identities};
use plom::pca::{fit_pca, NormalizedMatrix, PcaModel};
use plom::{PlomError, Result};
use serde::Serialize;

use crate::config::{Auto, Orders, RunConfig};
use crate::manifest::{RunManifest, Status, FAILED_FILE};

const SPECTRUM_HEAD: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Basis,
    Sample,
    Diagnose,
    Learn,
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Basis => "basis",
            Command::Sample => "sample",
            Command::Diagnose => "diagnose",
            Command::Learn => "learn",
            Command::Oracle => "oracle",
        }
    }
}

/// A failure together with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: PlomError,
}

pub struct Fitted {
    pub scaling: ScalingSpec,
    pub pca: PcaModel,
    pub eta: NormalizedMatrix,
    pub kde: KdeModel,
}

pub struct Based {
    pub eps: f64,
    pub m: usize,
    pub m_opt: usize,
    pub basis: DiffusionBasis,
}

pub struct Run {
    dir: PathBuf,
    write_artifacts: bool,
    pub manifest: RunManifest,
}

impl Run {
    pub fn new(dir: PathBuf, command: Command, config: RunConfig, write_artifacts: bool) -> Self {
        Run { dir, write_artifacts, manifest: RunManifest::new(command.name(), config) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn cfg(&self) -> &RunConfig {
        &self.manifest.resolved
    }

    fn stage<T>(&mut self, stage: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T, StageError> {
        info!("stage {stage}: start");
        let start = Instant::now();
        let out = f(self).map_err(|source| StageError { stage, source });
        self.manifest.timings_seconds.insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }

    fn record(&mut self, name: &str, file: &str) -> Option<PathBuf> {
        if !self.write_artifacts {
            return None;
        }
        self.manifest.artifacts.insert(name.to_string(), file.to_string());
        Some(self.dir.join(file))
    }

    fn write_text(&mut self, name: &str, file: &str, text: &str) -> Result<()> {
        match self.record(name, file) {
            Some(path) => std::fs::write(&path, text).map_err(|e| PlomError::Io { path, source: e }),
            None => Ok(()),
        }
    }

    fn write_json(&mut self, name: &str, file: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
        self.write_text(name, file, &text)
    }

    fn fit(&mut self) -> Result<Fitted, StageError> {
        self.stage("fit", |run| {
            let cfg = run.cfg().clone();
            let raw = load_dataset(cfg.input_path(), cfg.layout)?;
            let scaling = ScalingSpec::fit(&raw, cfg.scaling);
            let scaled = scaling.apply_dataset(&raw)?;
            let pca = fit_pca(&scaled, cfg.eps_tol)?;
            let eta = pca.normalize(&scaled)?;
            let kde = KdeModel::new(&eta);
            info!(
                "N = {}, n = {}, nu = {}, s = {:.6}, s_hat = {:.6}",
                eta.n_samples(),
                raw.n(),
                eta.nu(),
                kde.s(),
                kde.s_hat()
            );

            let d = &mut run.manifest.derived;
            d.n_features = Some(raw.n());
            d.n_samples = Some(eta.n_samples());
            d.nu = Some(eta.nu());
            d.err_pca = Some(pca.err_pca());
            d.s = Some(kde.s());
            d.s_hat = Some(kde.s_hat());

            // Sampler defaults depend only on s_hat, so they are settled here.
            let r = &mut run.manifest.resolved;
            let dr = r.dr.or_resolve(|| default_dr(kde.s_hat()));
            let burn_in = r.burn_in.or_resolve(|| default_burn_in(r.f0, dr));
            r.spacing.or_resolve(|| default_spacing(burn_in));
            let n_mc = r.n_mc;
            r.diag_n_mc.or_resolve(|| n_mc);

            run.write_json("scaling", "scaling.json", &scaling)?;
            run.write_json("pca", "pca.json", &pca)?;
            run.write_json("bandwidths", "bandwidths.json", &kde.bandwidths())?;
            if let Some(path) = run.record("eta", "eta.bin") {
                write_matrix(path, eta.matrix())?;
            }
            Ok(Fitted { scaling, pca, eta, kde })
        })
    }

    fn basis(&mut self, fitted: &Fitted) -> Result<Based, StageError> {
        self.stage("basis", |run| {
            let cfg = run.cfg().clone();
            let eta = &fitted.eta;
            let n = eta.n_samples();
            let (eps, m_opt, gap_ratio, profile, basis) = match cfg.eps_dm.value() {
                None => {
                    let grid = scaled_eps_grid(eta, cfg.eps_grid_lo, cfg.eps_grid_hi, cfg.eps_grid_points);
                    let sel = select_eps_m(eta, &grid, cfg.threshold)?;
                    let basis = solve_basis(&build_kernel(eta, sel.eps_opt)?, cfg.kappa)?;
                    (sel.eps_opt, sel.m_opt, sel.gap_ratio, sel.profile, basis)
                }
                Some(eps) => {
                    let basis = solve_basis(&build_kernel(eta, eps)?, cfg.kappa)?;
                    let mhat = basis.m_hat(cfg.threshold);
                    let lambda = basis.eigenvalues();
                    let point = ProfilePoint {
                        eps,
                        mhat,
                        lambda_2: if n > 1 { lambda[1] } else { 1.0 },
                        lambda_mhat: lambda[mhat - 1],
                    };
                    let gap = (mhat < n).then(|| lambda[mhat - 1] / lambda[mhat]);
                    (eps, mhat, gap, vec![point], basis)
                }
            };
            run.manifest.resolved.eps_dm = Auto::Value(eps);
            let m = run.manifest.resolved.m.or_resolve(|| m_opt);
            if m > n {
                return Err(PlomError::Config(format!("m = {m} exceeds N = {n}")));
            }
            info!("eps_dm = {eps}, m_opt = {m_opt}, m = {m}");

            let d = &mut run.manifest.derived;
            d.eps_opt = Some(eps);
            d.m_opt = Some(m_opt);
            d.gap_ratio = gap_ratio;
            d.spectrum_head = basis.eigenvalues().iter().take(SPECTRUM_HEAD).copied().collect();
            d.n_clamped = Some(basis.n_clamped());

            let mut table = String::from("eps,mhat,lambda_2,lambda_mhat\n");
            for p in &profile {
                writeln!(table, "{},{},{},{}", p.eps, p.mhat, p.lambda_2, p.lambda_mhat).unwrap();
            }
            run.write_text("mhat_profile", "mhat_profile.csv", &table)?;
            let mut spectrum = String::from("alpha,lambda\n");
            for (k, l) in basis.eigenvalues().iter().enumerate() {
                writeln!(spectrum, "{},{}", k + 1, l).unwrap();
            }
            run.write_text("spectrum", "spectrum.csv", &spectrum)?;
            Ok(Based { eps, m, m_opt, basis })
        })
    }

    fn isde_config(&self, n_mc: usize) -> IsdeConfig {
        let c = self.cfg();
        IsdeConfig {
            f0: c.f0,
            dr: c.dr.value().expect("resolved by fit"),
            burn_in_steps: c.burn_in.value().expect("resolved by fit"),
            spacing_steps: c.spacing.value().expect("resolved by fit"),
            n_chains: c.chains,
            n_mc,
            seed: c.seed,
            samples_per_chain: None,
        }
    }

    fn generate(&self, fitted: &Fitted, based: &Based, m: usize, n_mc: usize) -> Result<LearnedSet> {
        let reduced = based.basis.reduce(m)?;
        generate(&fitted.eta, &fitted.kde, &reduced, &self.isde_config(n_mc))
    }

    fn sample(&mut self, fitted: &Fitted, based: &Based) -> Result<LearnedSet, StageError> {
        self.stage("sample", |run| {
            let n_mc = run.cfg().n_mc;
            let learned = run.generate(fitted, based, based.m, n_mc)?;
            let archive = reconstruct_learned(&learned, &fitted.pca, &fitted.scaling, based.eps, run.cfg().kappa)?;
            if let Some(path) = run.record("learned", "learned.bin") {
                let meta = metadata_path(&path);
                save_learned(&archive, &path)?;
                let meta_name = meta.file_name().expect("file name").to_string_lossy().into_owned();
                run.manifest.artifacts.insert("learned_metadata".into(), meta_name);
            }
            info!("generated {} learned matrices at m = {}", learned.len(), based.m);
            Ok(learned)
        })
    }

    fn diagnose(
        &mut self,
        fitted: &Fitted,
        based: &Based,
        reuse: Option<&LearnedSet>,
    ) -> Result<DiagnosisSummary, StageError> {
        self.stage("diagnose", |run| {
            let n = fitted.eta.n_samples();
            let orders: Vec<usize> = match &run.cfg().diag_orders {
                Auto::Value(Orders(list)) => list.clone(),
                Auto::Auto => BTreeSet::from([based.m_opt, based.m, n]).into_iter().collect(),
            };
            if let Some(&bad) = orders.iter().find(|&&m| m == 0 || m > n) {
                return Err(PlomError::Config(format!("diagnostic order {bad} outside 1..={n}")));
            }
            run.manifest.resolved.diag_orders = Auto::Value(Orders(orders.clone()));
            let n_mc = run.cfg().diag_n_mc.value().expect("resolved by fit");

            let mut estimates: BTreeMap<usize, McEstimate> = BTreeMap::new();
            for &m in &orders {
                let est = match reuse {
                    Some(set) if set.m == m && set.len() == n_mc => d_sim(set, &fitted.eta)?,
                    _ => d_sim(&run.generate(fitted, based, m, n_mc)?, &fitted.eta)?,
                };
                info!("d_sim({m}) = {:.6} +- {:.6}", est.mean, est.stderr);
                estimates.insert(m, est);
            }
            let curves = build_curves(&fitted.eta, &based.basis, &estimates, based.m_opt)?;
            let summary = summarize(&curves, based.eps);
            if !summary.maxent_violations.is_empty() {
                log::warn!(
                    "d_sim exceeds the maxent line at m = {:?}; the mixture ratio r(m) <= 1 does not hold there",
                    summary.maxent_violations
                );
            }
            if let Some(path) = run.record("curves", "curves.csv") {
                curves.write_csv(path)?;
            }
            run.write_json("summary", "summary.json", &summary)?;
            Ok(summary)
        })
    }

    fn oracle(&mut self, fitted: &Fitted) -> Result<serde_json::Value, StageError> {
        self.stage("oracle", |run| {
            let cfg = run.cfg().clone();
            let eps = cfg.eps_dm.value().ok_or_else(|| {
                PlomError::Config("the oracle needs an explicit eps_dm; bandwidth scans need N >> 6".into())
            })?;
            let eta = &fitted.eta;
            let n = eta.n_samples();
            let (s, s_hat) = (fitted.kde.s(), fitted.kde.s_hat());
            let basis = solve_basis(&build_kernel(eta, eps)?, cfg.kappa)?;
            let orders: Vec<usize> = match cfg.m.value() {
                Some(m) => vec![m],
                None => (1..=n).collect(),
            };
            let mut rows = Vec::new();
            for m in orders {
                let mixture = enumerate_mixture(eta, &basis.reduce(m)?, s, s_hat, cfg.oracle_cap)?;
                let moments = mixture.closed_form_moments();
                rows.push(serde_json::json!({
                    "m": m,
                    "exact_dsq": mixture.exact_dsq(),
                    "decomposition": mixture.decomposition(),
                    "second_moment": moments.second_moment,
                    "mean": moments.mean.as_slice(),
                }));
            }
            let identities = verify_sum_identities(eta, s, s_hat, cfg.oracle_cap)?;
            let out = serde_json::json!({
                "N": n,
                "nu": eta.nu(),
                "s": s,
                "s_hat": s_hat,
                "eps_dm": eps,
                "kappa": cfg.kappa,
                "sum_identity_residual": identities.max_residual(),
                "orders": rows,
            });
            run.write_json("oracle", "oracle.json", &out)?;
            Ok(out)
        })
    }

    /// Runs `command` to completion. On failure, the manifest is marked failed and a
    /// `FAILED` marker names the stage; artifacts written so far are kept.
    pub fn execute(mut self, command: Command) -> (RunManifest, Result<Option<serde_json::Value>, StageError>) {
        let result = self.dispatch(command);
        match &result {
            Ok(_) if !self.write_artifacts => self.manifest.status = Status::DryRun,
            Ok(_) => {
                let _ = std::fs::remove_file(self.dir.join(FAILED_FILE));
            }
            Err(e) => {
                self.manifest.status = Status::Failed;
                self.manifest.error = Some(e.to_string());
                let marker = format!("stage: {}\nerror: {}\n", e.stage, e.source);
                let _ = std::fs::write(self.dir.join(FAILED_FILE), marker);
            }
        }
        let result = match self.manifest.write(&self.dir) {
            Err(source) if result.is_ok() => Err(StageError { stage: "manifest", source }),
            _ => result,
        };
        (self.manifest, result)
    }

    fn dispatch(&mut self, command: Command) -> Result<Option<serde_json::Value>, StageError> {
        let fitted = self.fit()?;
        if !self.write_artifacts {
            return Ok(None);
        }
        match command {
            Command::Fit => {}
            Command::Oracle => return self.oracle(&fitted).map(Some),
            Command::Basis => {
                self.basis(&fitted)?;
            }
            Command::Sample => {
                let based = self.basis(&fitted)?;
                self.sample(&fitted, &based)?;
            }
            Command::Diagnose => {
                let based = self.basis(&fitted)?;
                let summary = self.diagnose(&fitted, &based, None)?;
                return Ok(Some(serde_json::to_value(summary).expect("summary serializes")));
            }
            Command::Learn => {
                let based = self.basis(&fitted)?;
                let learned = self.sample(&fitted, &based)?;
                let summary = self.diagnose(&fitted, &based, Some(&learned))?;
                return Ok(Some(serde_json::to_value(summary).expect("summary serializes")));
            }
        }
        Ok(None)
    }
}
