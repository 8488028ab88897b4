//! Flat experiment configuration (TOML, unknown keys rejected).

use std::collections::BTreeMap;
use std::path::Path;

use momentum_lab::rates::Regime;
use momentum_lab::simulate::{Clock, Scheme};
use momentum_lab::Potential;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

fn default_s() -> Vec<f64> {
    vec![0.05]
}

fn default_alpha() -> Vec<f64> {
    vec![0.9]
}

fn default_schemes() -> Vec<String> {
    vec!["sgdm".into()]
}

fn default_regime() -> String {
    "underdamped_hp".into()
}

fn default_clock() -> String {
    "linear".into()
}

fn default_n_traj() -> usize {
    500
}

fn default_n_steps() -> usize {
    10_000
}

fn default_record_every() -> usize {
    10
}

fn default_grid() -> usize {
    120
}

fn default_eigen_k() -> usize {
    6
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Catalog name: quadratic, tilted_double_well, triple_well, double_well_2d, flat.
    pub potential: String,
    pub theta: Option<f64>,
    pub tau: Option<f64>,
    pub dim: Option<f64>,
    /// Per-axis box override.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    #[serde(default = "default_s")]
    pub s: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<String>,
    #[serde(default = "default_regime")]
    pub regime: String,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// SDE time step.
    pub dt: Option<f64>,
    #[serde(default = "default_clock")]
    pub clock: String,
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_grid")]
    pub nx: usize,
    #[serde(default = "default_grid")]
    pub nv: usize,
    #[serde(default = "default_eigen_k")]
    pub eigen_k: usize,
    /// Relative Hessian bound constant; estimated on the box when absent.
    pub villani_c: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Validation(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        self.build_potential()?;
        if self.s.is_empty() || self.alpha.is_empty() {
            return bad("s and alpha grids must be nonempty".into());
        }
        if let Some(s) = self.s.iter().find(|s| !(**s > 0.0)) {
            return bad(format!("learning rates must be positive, got {s}"));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("momentum must lie in (0, 1), got {a}"));
        }
        if self.n_traj == 0 {
            return bad("n_traj must be at least 1".into());
        }
        if self.n_steps == 0 || self.record_every == 0 {
            return bad("n_steps and record_every must be at least 1".into());
        }
        if self.dt.is_some_and(|dt| !(dt > 0.0)) {
            return bad("dt must be positive".into());
        }
        if self.eigen_k < 2 {
            return bad("eigen_k must be at least 2".into());
        }
        if self.villani_c.is_some_and(|c| !(c >= 0.0)) {
            return bad("villani_c must be nonnegative".into());
        }
        self.schemes()?;
        self.regime()?;
        self.clock()?;
        Ok(())
    }

    pub fn build_potential(&self) -> Result<Potential, CliError> {
        let mut params = BTreeMap::new();
        for (k, v) in [("theta", self.theta), ("tau", self.tau), ("dim", self.dim), ("lower", self.lower), ("upper", self.upper)] {
            if let Some(v) = v {
                params.insert(k.to_string(), v);
            }
        }
        Ok(Potential::from_name(&self.potential, &params)?)
    }

    pub fn schemes(&self) -> Result<Vec<Scheme>, CliError> {
        if self.schemes.is_empty() {
            return Err(CliError::Validation("scheme list must be nonempty".into()));
        }
        Ok(self.schemes.iter().map(|s| Scheme::parse(s)).collect::<Result<_, _>>()?)
    }

    pub fn regime(&self) -> Result<Regime, CliError> {
        Ok(match self.regime.as_str() {
            "underdamped_hp" => Regime::UnderdampedHp,
            "overdamped_lr" => Regime::OverdampedLr,
            "nag_sc" => Regime::NagSc,
            "nag_c" => Regime::NagC,
            other => return Err(CliError::Validation(format!("unknown regime '{other}'"))),
        })
    }

    pub fn clock(&self) -> Result<Clock, CliError> {
        match self.clock.as_str() {
            "linear" => Ok(Clock::Linear),
            "sqrt" => Ok(Clock::Sqrt),
            other => Err(CliError::Validation(format!("unknown clock '{other}'"))),
        }
    }

    /// `(s, alpha)` pairs in row-major order.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        self.s.iter().flat_map(|&s| self.alpha.iter().map(move |&a| (s, a))).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        config_hash(&toml::to_string(self).expect("config serializes"))
    }
}

pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
