//! Run configuration: one JSON file per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use linsde::error_analysis::Basis;
use linsde::{BdgPolicy, BoundConstants, GridAxis, InitialCondition, ModelSpec, Scheme, SimulationConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    ValidateScaling,
    Bound,
    S2Field,
    RobustSet,
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_n_samples() -> usize {
    1000
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            dt: default_dt(),
            scheme: Scheme::default(),
            n_samples: default_n_samples(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(default = "default_bases")]
    pub bases: Vec<Basis>,
    /// Bootstrap resamples; no bootstrap when absent.
    #[serde(default)]
    pub bootstrap: Option<usize>,
}

fn default_bases() -> Vec<Basis> {
    vec![Basis::ConstPlusEps2]
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            bases: default_bases(),
            bootstrap: None,
        }
    }
}

/// Where the hypothesis constants come from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstantsSource {
    /// The model's analytic bounds.
    #[default]
    Analytic,
    /// Sampled over the model domain and `[0, t]`.
    Estimated {
        #[serde(default = "default_samples_per_axis")]
        samples_per_axis: usize,
    },
    Explicit {
        k_grad_u: f64,
        k_hess_u: f64,
        k_grad_sigma: f64,
        k_sigma: f64,
        k_linear_growth: f64,
    },
}

fn default_samples_per_axis() -> usize {
    9
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    #[serde(default)]
    pub constants: ConstantsSource,
    #[serde(default)]
    pub bdg: BdgPolicy,
    /// Override of the initial-uncertainty moments; derived from `init` otherwise.
    #[serde(default)]
    pub delta_r: Option<f64>,
    #[serde(default)]
    pub delta_2r: Option<f64>,
}

impl BoundSection {
    pub fn explicit(&self, n: usize) -> Option<BoundConstants> {
        match self.constants {
            ConstantsSource::Explicit {
                k_grad_u,
                k_hess_u,
                k_grad_sigma,
                k_sigma,
                k_linear_growth,
            } => Some(BoundConstants::new(
                n,
                k_grad_u,
                k_hess_u,
                k_grad_sigma,
                k_sigma,
                k_linear_growth,
            )),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    /// Bins per axis; Freedman-Diaconis when absent.
    #[serde(default)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelSpec,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitialCondition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhos: Option<Vec<f64>>,
    #[serde(default = "default_r")]
    pub r: Vec<f64>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<GridAxis>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub histogram: HistogramSection,
    /// Thread count; 0 lets the runtime decide. Never changes results.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_r() -> Vec<f64> {
    vec![1.0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Default sweep grids.
pub fn default_epsilons() -> Vec<f64> {
    linsde::linalg::linspace(-3.0, -1.0, 7)
        .into_iter()
        .map(|p| 10f64.powf(p))
        .collect()
}

pub fn default_rhos() -> Vec<f64> {
    vec![0.0, 1e-3, 1e-2, 1e-1]
}

/// Grid axes used by field commands when the config gives none.
pub const DEFAULT_GRID_COUNT: usize = 100;

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(if path.is_empty() { "." } else { &path }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid("<config>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON of the fields that determine results.
    /// Output location and thread count are excluded.
    pub fn sha256(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
            obj.remove("workers");
        }
        let bytes = serde_json::to_vec(&v).expect("value serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        SimulationConfig {
            dt: self.simulation.dt,
            scheme: self.simulation.scheme,
            n_samples: self.simulation.n_samples,
            seed: self.simulation.seed,
            t_final: self.t,
        }
    }

    pub fn require_init(&self) -> Result<&InitialCondition, CliError> {
        self.init
            .as_ref()
            .ok_or_else(|| invalid("init", "required by this command"))
    }

    pub fn require_epsilon(&self) -> Result<f64, CliError> {
        self.epsilon
            .ok_or_else(|| invalid("epsilon", "required by this command"))
    }

    pub fn require_threshold(&self) -> Result<f64, CliError> {
        self.threshold
            .ok_or_else(|| invalid("threshold", "required by this command"))
    }

    pub fn epsilon_grid(&self) -> Vec<f64> {
        self.epsilons.clone().unwrap_or_else(default_epsilons)
    }

    pub fn rho_grid(&self) -> Vec<f64> {
        self.rhos.clone().unwrap_or_else(default_rhos)
    }

    /// Checks that do not need the model; model-dependent checks happen
    /// when the command runs.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(invalid("t", "must be finite and non-negative"));
        }
        if self.r.is_empty() {
            return Err(invalid("r", "must be non-empty"));
        }
        for (i, r) in self.r.iter().enumerate() {
            if !(*r > 0.0 && r.is_finite()) {
                return Err(invalid(&format!("r[{i}]"), "must be positive"));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(invalid("epsilon", "must be finite and non-negative"));
            }
        }
        for (name, grid) in [("epsilons", &self.epsilons), ("rhos", &self.rhos)] {
            if let Some(g) = grid {
                if g.is_empty() {
                    return Err(invalid(name, "must be non-empty"));
                }
                for (i, v) in g.iter().enumerate() {
                    if !(*v >= 0.0 && v.is_finite()) {
                        return Err(invalid(&format!("{name}[{i}]"), "must be finite and non-negative"));
                    }
                }
            }
        }
        if self.fit.bases.is_empty() {
            return Err(invalid("fit.bases", "must be non-empty"));
        }
        if let Some(b) = self.histogram.bins {
            if b == 0 {
                return Err(invalid("histogram.bins", "must be positive"));
            }
        }
        if let Some(th) = self.threshold {
            if !(th >= 0.0) {
                return Err(invalid("threshold", "must be non-negative"));
            }
        }
        match self.command {
            Command::Simulate | Command::Histogram => {
                self.require_init()?;
                self.require_epsilon()?;
            }
            Command::ValidateScaling => {
                self.require_init()?;
            }
            Command::Bound => {
                if self.epsilon.is_none() && self.epsilons.is_none() {
                    return Err(invalid("epsilon", "bound needs `epsilon` or `epsilons`"));
                }
            }
            Command::S2Field => {}
            Command::RobustSet => {
                self.require_threshold()?;
            }
        }
        Ok(())
    }
}
