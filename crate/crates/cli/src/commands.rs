//! Command dispatch and artifact emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use linsde::bounds::{bound_rhs, estimate_constants, gaussian_deltas, BoundBreakdown};
use linsde::error_analysis::{bootstrap_fit, fit_scaling, run_sweep, strong_error, BootstrapFit, StrongError};
use linsde::io::write_json;
use linsde::linalg::linspace;
use linsde::linearisation::linearised_distribution;
use linsde::sde_sampler::sample_coupled;
use linsde::sensitivity::{extract_robust_set, s2_field};
use linsde::{builtin_model, GridAxis, InitFamily, Model, Provenance, S2Field, ScalingFit, VectorField};

use crate::config::{Command, ConstantsSource, RunConfig, DEFAULT_GRID_COUNT};
use crate::histogram;
use crate::CliError;

/// Files written by one run, in emission order.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongErrors {
    pub epsilon: f64,
    pub errors: Vec<RStrongError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RStrongError {
    pub r: f64,
    #[serde(flatten)]
    pub error: StrongError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fits: Vec<ScalingFit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bootstrap: Vec<BootstrapFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bounds: Vec<BoundBreakdown>,
}

/// Run metadata that may differ between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: Command,
    pub version: String,
    pub created_unix: u64,
    pub files: Vec<String>,
}

struct Sink {
    dir: PathBuf,
    files: Vec<PathBuf>,
    provenance: Provenance,
}

impl Sink {
    fn new(dir: &Path, provenance: Provenance) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            provenance,
        })
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|source| CliError::Output {
            path: path.display().to_string(),
            source,
        })?;
        self.files.push(path);
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, payload: &T) -> Result<(), CliError> {
        let prov = self.provenance.clone();
        let mut w = self.open(name)?;
        write_json(&mut w, &prov, payload)?;
        self.flush(w)
    }

    fn csv(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>, &Provenance) -> linsde::Result<()>,
    ) -> Result<(), CliError> {
        let prov = self.provenance.clone();
        let mut w = self.open(name)?;
        body(&mut w, &prov)?;
        self.flush(w)
    }

    fn flush(&self, mut w: BufWriter<File>) -> Result<(), CliError> {
        w.flush().map_err(|source| CliError::Output {
            path: self.dir.display().to_string(),
            source,
        })
    }

    fn finish(mut self, command: Command) -> Result<Artifacts, CliError> {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let record = RunRecord {
            command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix,
            files: self
                .files
                .iter()
                .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect(),
        };
        self.json("provenance.json", &record)?;
        Ok(Artifacts {
            dir: self.dir,
            files: self.files,
        })
    }
}

fn load_model(config: &RunConfig) -> Result<Model, CliError> {
    builtin_model(&config.model).map_err(|e| match e {
        linsde::Error::InvalidParameter { name, reason } => CliError::Config {
            path: format!("model.params.{name}"),
            message: reason,
        },
        other if !other.is_numerical() => CliError::Config {
            path: "model".into(),
            message: other.to_string(),
        },
        other => other.into(),
    })
}

fn check_dim(config: &RunConfig, model: &dyn VectorField) -> Result<(), CliError> {
    if let Some(init) = &config.init {
        if init.dim() != model.dim_state() {
            return Err(CliError::Config {
                path: "init.reference_point".into(),
                message: format!(
                    "{} components for a {}-dimensional model",
                    init.dim(),
                    model.dim_state()
                ),
            });
        }
    }
    Ok(())
}

fn field_axes(config: &RunConfig, model: &dyn VectorField) -> Vec<GridAxis> {
    config.grid.clone().unwrap_or_else(|| {
        let d = model.domain();
        (0..d.dim())
            .map(|k| GridAxis::new(d.lower[k], d.upper[k], DEFAULT_GRID_COUNT))
            .collect()
    })
}

/// Named configuration inputs should surface as config errors.
fn as_config(e: linsde::Error, path: &str) -> CliError {
    match e {
        linsde::Error::InvalidParameter { name, reason } => CliError::Config {
            path: format!("{path}.{name}"),
            message: reason,
        },
        linsde::Error::Dimension { expected, got } => CliError::Config {
            path: path.into(),
            message: format!("expected {expected} entries, got {got}"),
        },
        other => other.into(),
    }
}

fn compute_field(config: &RunConfig, model: &dyn VectorField) -> Result<S2Field, CliError> {
    let axes = field_axes(config, model);
    let mut field = s2_field(model, &axes, config.t, config.workers).map_err(|e| as_config(e, "grid"))?;
    field.model = config.model.clone();
    Ok(field)
}

/// Runs `config` and writes its artifacts under `config.output_dir`.
pub fn run(config: &RunConfig) -> Result<Artifacts, CliError> {
    config.validate()?;
    let model = load_model(config)?;
    check_dim(config, model.as_ref())?;
    if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| linsde::Error::ThreadPool(e.to_string()))?;
        pool.install(|| dispatch(config, model.as_ref()))
    } else {
        dispatch(config, model.as_ref())
    }
}

fn dispatch(config: &RunConfig, model: &dyn VectorField) -> Result<Artifacts, CliError> {
    let prov = Provenance::new(config.sha256(), config.simulation.seed);
    let mut sink = Sink::new(&config.output_dir, prov)?;
    let sim = config.simulation_config();
    match config.command {
        Command::Simulate | Command::Histogram => {
            let init = config.require_init()?;
            let eps = config.require_epsilon()?;
            sim.validate(model).map_err(|e| as_config(e, "simulation"))?;
            let batch = sample_coupled(model, init, eps, &sim)?;
            let law = linearised_distribution(model, init, config.t, eps)?;
            if config.command == Command::Simulate {
                sink.csv("samples.csv", |w, p| batch.write_csv(w, p))?;
                sink.json("samples.json", &batch.meta())?;
                let errors = config
                    .r
                    .iter()
                    .map(|&r| {
                        Ok(RStrongError {
                            r,
                            error: strong_error(&batch, r)?,
                        })
                    })
                    .collect::<linsde::Result<Vec<_>>>()?;
                sink.json("strong_error.json", &StrongErrors { epsilon: eps, errors })?;
            } else {
                let bins = config.histogram.bins;
                let rows = histogram::marginals(&batch, &law, bins);
                sink.csv("histogram.csv", |w, p| histogram::write_rows(w, p, &rows))?;
                if batch.dim() == 2 {
                    let rows = histogram::joint(&batch, &law, bins);
                    sink.csv("histogram_joint.csv", |w, p| histogram::write_rows(w, p, &rows))?;
                }
            }
            sink.json("linearised.json", &law)?;
        }
        Command::ValidateScaling => {
            let init = config.require_init()?;
            let family = InitFamily {
                reference: init.reference_point.as_slice().to_vec(),
                rhos: config.rho_grid(),
            };
            sim.validate(model).map_err(|e| as_config(e, "simulation"))?;
            let sweep = run_sweep(model, &family, &config.epsilon_grid(), &config.r, &sim)?;
            sink.csv("sweep.csv", |w, p| sweep.write_csv(w, p))?;
            let mut report = FitReport {
                fits: Vec::new(),
                bootstrap: Vec::new(),
            };
            for &basis in &config.fit.bases {
                report.fits.extend(fit_scaling(&sweep, basis)?);
                if let Some(n) = config.fit.bootstrap {
                    report
                        .bootstrap
                        .extend(bootstrap_fit(&sweep, basis, n, config.simulation.seed)?);
                }
            }
            sink.json("fits.json", &report)?;
        }
        Command::Bound => {
            let n = model.dim_state();
            let constants = match &config.bound.constants {
                ConstantsSource::Analytic => model.constants(),
                ConstantsSource::Estimated { samples_per_axis } => {
                    estimate_constants(model, &model.domain(), *samples_per_axis, &linspace(0.0, config.t, 5))
                        .map_err(|e| as_config(e, "bound.constants"))?
                }
                ConstantsSource::Explicit { .. } => config.bound.explicit(n).expect("explicit constants"),
            }
            .with_bdg(config.bound.bdg);
            let epsilons = match (&config.epsilons, config.epsilon) {
                (Some(g), _) => g.clone(),
                (None, Some(e)) => vec![e],
                (None, None) => unreachable!("validated"),
            };
            let mut bounds = Vec::new();
            for &eps in &epsilons {
                for &r in &config.r {
                    let (dr, d2r) = match &config.init {
                        Some(init) => gaussian_deltas(r, &init.covariance),
                        None => (0.0, 0.0),
                    };
                    let dr = config.bound.delta_r.unwrap_or(dr);
                    let d2r = config.bound.delta_2r.unwrap_or(d2r);
                    bounds.push(bound_rhs(r, config.t, eps, dr, d2r, &constants).map_err(|e| as_config(e, "bound"))?);
                }
            }
            sink.json("bound.json", &BoundReport { bounds })?;
        }
        Command::S2Field => {
            let field = compute_field(config, model)?;
            sink.csv("s2_field.csv", |w, p| field.write_csv(w, p))?;
            sink.json("s2_field.json", &field)?;
        }
        Command::RobustSet => {
            let field = compute_field(config, model)?;
            let set = extract_robust_set(&field, config.require_threshold()?)?;
            sink.csv("s2_field.csv", |w, p| field.write_csv(w, p))?;
            sink.json("s2_field.json", &field)?;
            sink.csv("robust_set.csv", |w, p| set.write_csv(w, &field, p))?;
            sink.json("robust_set.json", &set)?;
        }
    }
    sink.finish(config.command)
}
