//! Run configuration: a flat TOML document, overridden by command-line flags.
//!
//! Every key and its default:
//!
//! | key               | default            | meaning                                           |
//! |-------------------|--------------------|---------------------------------------------------|
//! | `input`           | (required)         | CSV file with the training points                 |
//! | `layout`          | `rows-are-samples` | or `columns-are-samples`                          |
//! | `scaling`         | `min-max`          | or `standardize`                                  |
//! | `eps_tol`         | `1e-6`             | PCA relative truncation error                     |
//! | `kappa`           | `1`                | diffusion-maps time exponent                      |
//! | `eps_dm`          | `"auto"`           | kernel bandwidth, or scan the grid below          |
//! | `eps_grid_lo`     | `0.1`              | grid start, in units of the median squared distance |
//! | `eps_grid_hi`     | `100.0`            | grid end, same units                              |
//! | `eps_grid_points` | `24`               | geometric grid size                               |
//! | `m`               | `"auto"`           | reduced order, or the eigenvalue-gap choice       |
//! | `threshold`       | `0.1`              | eigenvalue ratio defining the gap                 |
//! | `n_mc`            | `100`              | learned matrices to generate                      |
//! | `f0`              | `1.5`              | damping                                           |
//! | `dr`              | `"auto"`           | step size, `2 pi s_hat / 20`                      |
//! | `burn_in`         | `"auto"`           | steps until the transient is below `1e-3`         |
//! | `spacing`         | `"auto"`           | steps between retained samples, `burn_in / 4`     |
//! | `chains`          | `8`                | independent chains                                |
//! | `seed`            | `0`                | master seed; chain `c` uses stream `c`            |
//! | `diag_orders`     | `"auto"`           | orders at which to estimate the distance          |
//! | `diag_n_mc`       | `"auto"`           | learned matrices per order, defaults to `n_mc`    |
//! | `oracle_cap`      | `6`                | largest N the exact mixture enumeration accepts   |
//! | `output`          | `"plom-out"`       | artifact directory                                |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use plom::dataset_io::{Layout, ScalingMode};
use plom::{PlomError, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A value that is either given or resolved from the data at run time.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Auto<T> {
    #[default]
    Auto,
    Value(T),
}

impl<T: Copy> Auto<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            Auto::Auto => None,
            Auto::Value(v) => Some(*v),
        }
    }

    pub fn or_resolve(&mut self, f: impl FnOnce() -> T) -> T {
        let v = self.value().unwrap_or_else(f);
        *self = Auto::Value(v);
        v
    }
}

impl<T: Serialize> Serialize for Auto<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Auto::Auto => s.serialize_str("auto"),
            Auto::Value(v) => v.serialize(s),
        }
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Auto<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr<T> {
            Word(String),
            Value(T),
        }
        match Repr::deserialize(d)? {
            Repr::Word(w) if w == "auto" => Ok(Auto::Auto),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("expected a value or \"auto\", got {w:?}"))),
            Repr::Value(v) => Ok(Auto::Value(v)),
        }
    }
}

impl<T: FromStr> FromStr for Auto<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            Ok(Auto::Auto)
        } else {
            s.parse().map(Auto::Value).map_err(|e| format!("expected a value or \"auto\": {e}"))
        }
    }
}

/// Comma-separated list of orders, e.g. `5,10,200`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Orders(pub Vec<usize>);

impl FromStr for Orders {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| format!("bad order {t:?}: {e}")))
            .collect::<std::result::Result<_, _>>()
            .map(Orders)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub layout: Layout,
    pub scaling: ScalingMode,
    pub eps_tol: f64,
    pub kappa: u32,
    pub eps_dm: Auto<f64>,
    pub eps_grid_lo: f64,
    pub eps_grid_hi: f64,
    pub eps_grid_points: usize,
    pub m: Auto<usize>,
    pub threshold: f64,
    pub n_mc: usize,
    pub f0: f64,
    pub dr: Auto<f64>,
    pub burn_in: Auto<usize>,
    pub spacing: Auto<usize>,
    pub chains: usize,
    pub seed: u64,
    pub diag_orders: Auto<Orders>,
    pub diag_n_mc: Auto<usize>,
    pub oracle_cap: usize,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        use plom::diffusion_maps as dm;
        RunConfig {
            input: None,
            layout: Layout::default(),
            scaling: ScalingMode::default(),
            eps_tol: 1e-6,
            kappa: dm::DEFAULT_KAPPA,
            eps_dm: Auto::Auto,
            eps_grid_lo: dm::DEFAULT_GRID_LO,
            eps_grid_hi: dm::DEFAULT_GRID_HI,
            eps_grid_points: dm::DEFAULT_GRID_POINTS,
            m: Auto::Auto,
            threshold: dm::DEFAULT_THRESHOLD,
            n_mc: 100,
            f0: plom::isde::DEFAULT_F0,
            dr: Auto::Auto,
            burn_in: Auto::Auto,
            spacing: Auto::Auto,
            chains: plom::isde::DEFAULT_CHAINS,
            seed: 0,
            diag_orders: Auto::Auto,
            diag_n_mc: Auto::Auto,
            oracle_cap: plom::mixture_oracle::DEFAULT_CAP,
            output: PathBuf::from("plom-out"),
        }
    }
}

/// Flags shared by every subcommand; each one overrides the matching config key.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// TOML config file; flags below take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<Layout>,
    #[arg(long)]
    pub scaling: Option<ScalingMode>,
    #[arg(long)]
    pub eps_tol: Option<f64>,
    #[arg(long)]
    pub kappa: Option<u32>,
    #[arg(long)]
    pub eps_dm: Option<Auto<f64>>,
    #[arg(long)]
    pub m: Option<Auto<usize>>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub n_mc: Option<usize>,
    #[arg(long)]
    pub f0: Option<f64>,
    #[arg(long)]
    pub dr: Option<Auto<f64>>,
    #[arg(long)]
    pub burn_in: Option<Auto<usize>>,
    #[arg(long)]
    pub spacing: Option<Auto<usize>>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Orders for the distance estimates, comma separated, or "auto" for m and N.
    #[arg(long)]
    pub diag_orders: Option<Auto<Orders>>,
    #[arg(long)]
    pub diag_n_mc: Option<Auto<usize>>,
    #[arg(long)]
    pub oracle_cap: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Resolve every default, write the manifest, and stop before any heavy stage.
    #[arg(long)]
    pub manifest_only: bool,
}

macro_rules! apply {
    ($cfg:ident, $ov:ident, $($field:ident),*) => {
        $(if let Some(v) = $ov.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PlomError::MissingInput(path.into()),
            _ => PlomError::Io { path: path.into(), source: e },
        })?;
        toml::from_str(&text).map_err(|e| PlomError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Config file (if any) with the command-line flags laid on top.
    pub fn load(ov: &Overrides) -> Result<Self> {
        let mut cfg = match &ov.config {
            Some(path) => Self::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(input) = &ov.input {
            cfg.input = Some(input.clone());
        }
        apply!(
            cfg, ov, layout, scaling, eps_tol, kappa, eps_dm, m, threshold, n_mc, f0, dr, burn_in, spacing, chains,
            seed, diag_orders, diag_n_mc, oracle_cap, output
        );
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PlomError::Config(msg));
        if self.input.is_none() {
            return bad("no input file given (set `input` or pass --input)".into());
        }
        if self.n_mc == 0 {
            return bad("n_mc must be at least 1; there is nothing to generate".into());
        }
        if !(0.0..1.0).contains(&self.eps_tol) {
            return bad(format!("eps_tol must lie in [0, 1), got {}", self.eps_tol));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if let Some(eps) = self.eps_dm.value() {
            if !(eps > 0.0 && eps.is_finite()) {
                return bad(format!("eps_dm must be positive, got {eps}"));
            }
        }
        if !(self.eps_grid_lo > 0.0 && self.eps_grid_hi > self.eps_grid_lo) {
            return bad("eps grid needs 0 < eps_grid_lo < eps_grid_hi".into());
        }
        if self.m.value() == Some(0) {
            return bad("m must be at least 1".into());
        }
        if self.chains == 0 {
            return bad("chains must be at least 1".into());
        }
        if self.diag_n_mc.value() == Some(0) {
            return bad("diag_n_mc must be at least 1".into());
        }
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return bad(format!("f0 must be positive, got {}", self.f0));
        }
        Ok(())
    }

    pub fn input_path(&self) -> &Path {
        self.input.as_deref().expect("validated config has an input")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_input() -> RunConfig {
        RunConfig { input: Some("x.csv".into()), ..RunConfig::default() }
    }

    #[test]
    fn auto_round_trips_through_toml() {
        let mut cfg = with_input();
        cfg.m = Auto::Value(7);
        cfg.diag_orders = Auto::Value(Orders(vec![3, 20]));
        let text = cfg.to_toml();
        assert!(text.contains("eps_dm = \"auto\""));
        assert!(text.contains("m = 7"));
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_words_are_rejected() {
        assert!(toml::from_str::<RunConfig>("input = \"a\"\nsigma = 2").is_err());
        assert!(toml::from_str::<RunConfig>("m = \"many\"").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "input = \"a.csv\"\nseed = 4\nn_mc = 9\n").unwrap();
        let ov = Overrides { config: Some(path), seed: Some(11), m: Some(Auto::Value(3)), ..Overrides::default() };
        let cfg = RunConfig::load(&ov).unwrap();
        assert_eq!((cfg.seed, cfg.n_mc, cfg.m.value()), (11, 9, Some(3)));
    }

    #[test]
    fn validation_errors_are_config_errors() {
        let cfg = RunConfig { n_mc: 0, ..with_input() };
        assert_eq!(cfg.validate().unwrap_err().kind(), plom::ErrorKind::Config);
        assert!(RunConfig::default().validate().is_err());
        assert!(RunConfig { eps_tol: 1.0, ..with_input() }.validate().is_err());
    }

    #[test]
    fn parse_flags() {
        assert_eq!("auto".parse::<Auto<f64>>().unwrap(), Auto::Auto);
        assert_eq!("2.5".parse::<Auto<f64>>().unwrap(), Auto::Value(2.5));
        assert!("x".parse::<Auto<usize>>().is_err());
        assert_eq!("4, 9,200".parse::<Orders>().unwrap(), Orders(vec![4, 9, 200]));
    }
}
