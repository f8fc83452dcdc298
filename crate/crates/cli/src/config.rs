//! Run configuration read from TOML.
//!
//! Every key is optional except `n_emitters` and `eta`; unknown keys are
//! rejected. Times are given in units of `1/gamma`.
//!
//! ```toml
//! n_emitters = 4
//! eta = 0.4
//! gamma_dt = 0.01
//! chi_max = 128
//! observables = ["emitter_state", "in_out_entropy", "field"]
//!
//! [sweep]
//! chi_max = [64, 128, 256]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wqed_core::{ModelParams, TruncationPolicy};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    AllExcited,
    SymmetricDicke,
}

/// Optional observables beyond the excitation number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Entropy, negativity, sector and singlet populations.
    EmitterState,
    InOutEntropy,
    /// Photon number in the waveguide.
    Field,
    /// Survival probability of the initial emitter state.
    Survival,
    /// Second-order correlation profiles (needs `n_max >= 2`).
    G2,
    /// Third-order correlation profiles (needs `n_max >= 3`).
    G3,
}

/// Parameter axes of a sweep; every combination is one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chi_max: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma_dt: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_emitters: Vec<usize>,
}

fn default_gamma() -> f64 {
    1.0
}
fn default_gamma_dt() -> f64 {
    0.01
}
fn default_phi() -> f64 {
    2.0 * std::f64::consts::PI
}
fn default_n_max() -> usize {
    1
}
fn default_chi_max() -> usize {
    128
}
fn default_cutoff() -> f64 {
    1e-10
}
fn default_gamma_t_max() -> f64 {
    16.0
}
fn default_initial() -> InitialState {
    InitialState::AllExcited
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("wqed-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_emitters: usize,
    /// `gamma * tau`; zero selects the Markovian solver.
    pub eta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_gamma_dt")]
    pub gamma_dt: f64,
    /// Phase per inter-emitter hop, `k0 d`.
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_chi_max")]
    pub chi_max: usize,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default = "default_gamma_t_max")]
    pub gamma_t_max: f64,
    #[serde(default)]
    pub pad_emitter_sites: bool,
    #[serde(default = "default_initial")]
    pub initial_state: InitialState,
    #[serde(default)]
    pub observables: Vec<Observable>,
    /// Steps between heavy samples; defaults to `ell`.
    #[serde(default)]
    pub sample_stride: Option<usize>,
    /// Field profiles are written at these `gamma t`.
    #[serde(default)]
    pub profile_times: Vec<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Final state is written here.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepAxes>,
}

impl RunConfig {
    /// Config with every default and the two required keys.
    pub fn minimal(n_emitters: usize, eta: f64) -> Self {
        toml::from_str(&format!("n_emitters = {n_emitters}\neta = {eta:?}"))
            .expect("defaults are valid")
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn is_markovian(&self) -> bool {
        self.eta == 0.0
    }

    /// Bins per delay, `round(eta / (gamma dt))`.
    pub fn ell(&self) -> usize {
        (self.eta / self.gamma_dt).round() as usize
    }

    pub fn wants(&self, o: Observable) -> bool {
        self.observables.contains(&o)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        if self.n_emitters == 0 {
            return bad("n_emitters", "must be positive".into());
        }
        if !self.is_markovian() && !self.n_emitters.is_multiple_of(2) {
            return bad("n_emitters", format!("must be even for delayed runs, got {}", self.n_emitters));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("must be finite and non-negative, got {}", self.eta));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma", format!("must be positive, got {}", self.gamma));
        }
        if !(self.gamma_dt > 0.0 && self.gamma_dt.is_finite()) {
            return bad("gamma_dt", format!("must be positive, got {}", self.gamma_dt));
        }
        if !self.is_markovian() && self.ell() == 0 {
            return bad(
                "gamma_dt",
                format!("eta / gamma_dt = {} rounds to zero bins per delay", self.eta / self.gamma_dt),
            );
        }
        if !(self.gamma_t_max >= 0.0 && self.gamma_t_max.is_finite()) {
            return bad("gamma_t_max", format!("must be non-negative, got {}", self.gamma_t_max));
        }
        if !matches!(self.n_max, 1..=3) {
            return bad("n_max", format!("must be 1, 2 or 3, got {}", self.n_max));
        }
        TruncationPolicy::new(self.chi_max, self.cutoff)
            .map_err(|e| CliError::Config(format!("chi_max/cutoff: {e}")))?;
        for (obs, order) in [(Observable::G2, 2), (Observable::G3, 3)] {
            if self.wants(obs) && self.n_max < order {
                return bad(
                    "observables",
                    format!("order-{order} correlations need n_max >= {order}; set n_max = 3"),
                );
            }
        }
        if self.sample_stride == Some(0) {
            return bad("sample_stride", "must be at least 1".into());
        }
        if let Some(s) = &self.sweep {
            if s.chi_max.contains(&0) {
                return bad("sweep.chi_max", "entries must be at least 1".into());
            }
            if s.gamma_dt.iter().any(|&x| !(x > 0.0)) {
                return bad("sweep.gamma_dt", "entries must be positive".into());
            }
            if s.eta.iter().any(|&x| !(x >= 0.0)) {
                return bad("sweep.eta", "entries must be non-negative".into());
            }
        }
        Ok(())
    }

    pub fn policy(&self) -> TruncationPolicy {
        TruncationPolicy::new(self.chi_max, self.cutoff).expect("validated")
    }

    /// Collision-model parameters (not meaningful when `eta == 0`).
    pub fn model_params(&self) -> ModelParams {
        let ell = self.ell().max(1);
        ModelParams {
            n_emitters: self.n_emitters,
            gamma: self.gamma,
            tau: self.eta / self.gamma,
            ell,
            phi: self.phi,
            n_max: self.n_max,
            t_max: self.gamma_t_max / self.gamma,
            policy: self.policy(),
            pad_emitter_sites: self.pad_emitter_sites,
        }
    }

    /// Every combination of the sweep axes, in a fixed order.
    pub fn sweep_points(&self) -> Vec<RunConfig> {
        let axes = self.sweep.clone().unwrap_or_default();
        let mut points = vec![RunConfig { sweep: None, ..self.clone() }];
        macro_rules! expand {
            ($field:ident) => {
                if !axes.$field.is_empty() {
                    points = points
                        .into_iter()
                        .flat_map(|p| {
                            axes.$field.iter().map(move |&v| RunConfig { $field: v, ..p.clone() })
                        })
                        .collect();
                }
            };
        }
        expand!(n_emitters);
        expand!(eta);
        expand!(gamma_dt);
        expand!(chi_max);
        points
    }
}
