//! Coupled Monte-Carlo simulation of the SDE and its linearisation.
//!
//! Sample `i` draws its initial state and every Wiener increment from stream
//! `i` under the batch seed, so a batch does not depend on how samples are
//! scheduled across threads.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::trajectory;
use crate::io::{csv_reader, csv_writer, expect_headers, parse_f64, Provenance};
use crate::linalg::{max_eigenvalue, symmetric_sqrt};
use crate::linearisation::{InitKind, InitialCondition};
use crate::model_catalog::VectorField;
use crate::ode::DEFAULT_RTOL;
use crate::rng::stream;

/// Maximum fraction of non-finite paths tolerated in a batch.
pub const MAX_FLAGGED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Milstein; scalar state and noise only.
    #[serde(rename = "milstein_1d")]
    Milstein1d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub n_samples: usize,
    pub seed: u64,
    pub t_final: f64,
}

fn default_dt() -> f64 {
    1e-3
}

impl SimulationConfig {
    pub fn new(t_final: f64, n_samples: usize, seed: u64) -> Self {
        SimulationConfig {
            dt: default_dt(),
            scheme: Scheme::EulerMaruyama,
            n_samples,
            seed,
            t_final,
        }
    }

    /// `round(t_final / dt)`, at least one.
    pub fn steps(&self) -> usize {
        ((self.t_final / self.dt).round() as usize).max(1)
    }

    /// The step actually taken, `t_final / steps`.
    pub fn step_size(&self) -> f64 {
        self.t_final / self.steps() as f64
    }

    pub fn validate(&self, model: &dyn VectorField) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::invalid(
                "t_final",
                format!("must be positive, got {}", self.t_final),
            ));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples", "must be positive"));
        }
        if self.scheme == Scheme::Milstein1d && (model.dim_state() != 1 || model.dim_noise() != 1) {
            return Err(Error::invalid(
                "scheme",
                "milstein_1d requires a scalar state and scalar noise",
            ));
        }
        Ok(())
    }
}

/// Terminal states of `N` coupled pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePairBatch {
    /// `N × n` nonlinear terminal states.
    pub y_samples: Vec<Vec<f64>>,
    /// `N × n` linearised terminal states.
    pub l_samples: Vec<Vec<f64>>,
    pub epsilon: f64,
    /// Isotropic initial scale; `sqrt` of the largest initial variance for
    /// anisotropic initial laws, 0 for fixed.
    pub rho: f64,
    pub config: SimulationConfig,
    /// Paths excluded after a non-finite excursion.
    pub flagged: usize,
}

/// Sidecar metadata for a batch CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub epsilon: f64,
    pub rho: f64,
    pub config: SimulationConfig,
    pub flagged: usize,
    pub n_kept: usize,
    pub dim: usize,
}

impl SamplePairBatch {
    pub fn len(&self) -> usize {
        self.y_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.y_samples.first().map_or(0, Vec::len)
    }

    /// Euclidean distance of each pair.
    pub fn distances(&self) -> Vec<f64> {
        self.y_samples
            .iter()
            .zip(&self.l_samples)
            .map(|(y, l)| y.iter().zip(l).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect()
    }

    pub fn meta(&self) -> BatchMeta {
        BatchMeta {
            epsilon: self.epsilon,
            rho: self.rho,
            config: self.config.clone(),
            flagged: self.flagged,
            n_kept: self.len(),
            dim: self.dim(),
        }
    }

    fn columns(n: usize) -> Vec<String> {
        (1..=n)
            .map(|i| format!("y{i}"))
            .chain((1..=n).map(|i| format!("l{i}")))
            .collect()
    }

    /// One row per sample: `y1..yn, l1..ln`.
    pub fn write_csv<W: Write>(&self, w: W, provenance: &Provenance) -> Result<()> {
        let n = self.dim();
        let mut w = csv_writer(w, provenance)?;
        w.write_record(Self::columns(n))?;
        for (y, l) in self.y_samples.iter().zip(&self.l_samples) {
            w.write_record(y.iter().chain(l).map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv) given the sidecar metadata.
    pub fn read_csv<R: BufRead>(r: R, meta: &BatchMeta) -> Result<(Provenance, Self)> {
        let (prov, mut rdr) = csv_reader(r)?;
        let n = meta.dim;
        expect_headers(rdr.headers()?, &Self::columns(n), "batch csv")?;
        let mut y_samples = Vec::new();
        let mut l_samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| parse_f64(f, "batch csv"))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != 2 * n {
                return Err(Error::Format {
                    format: "batch csv",
                    reason: format!("row has {} fields, expected {}", vals.len(), 2 * n),
                });
            }
            y_samples.push(vals[..n].to_vec());
            l_samples.push(vals[n..].to_vec());
        }
        if y_samples.len() != meta.n_kept {
            return Err(Error::Format {
                format: "batch csv",
                reason: format!("{} rows, sidecar says {}", y_samples.len(), meta.n_kept),
            });
        }
        Ok((
            prov,
            SamplePairBatch {
                y_samples,
                l_samples,
                epsilon: meta.epsilon,
                rho: meta.rho,
                config: meta.config.clone(),
                flagged: meta.flagged,
            },
        ))
    }
}

/// Initial-state sampler shared with [`sample_coupled`]: each draw consumes
/// `n` standard normals from the sample's stream, also for fixed starts, so
/// a zero covariance reproduces the fixed batch exactly.
struct InitialSampler {
    mean: Vec<f64>,
    factor: Option<DMatrix<f64>>,
}

impl InitialSampler {
    fn new(init: &InitialCondition) -> Result<Self> {
        init.validate()?;
        let factor = match init.kind {
            InitKind::Fixed => None,
            InitKind::Gaussian => Some(symmetric_sqrt(&init.covariance)?),
        };
        Ok(InitialSampler {
            mean: init.mean.as_slice().to_vec(),
            factor,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64], z: &mut [f64]) {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        out.copy_from_slice(&self.mean);
        if let Some(a) = &self.factor {
            let n = out.len();
            for i in 0..n {
                out[i] += (0..n).map(|j| a[(i, j)] * z[j]).sum::<f64>();
            }
        }
    }
}

/// `n_samples` initial states, identical to those used by [`sample_coupled`]
/// with the same seed.
pub fn draw_initial(init: &InitialCondition, n_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = InitialSampler::new(init)?;
    let n = init.dim();
    Ok((0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let mut x = vec![0.0; n];
            let mut z = vec![0.0; n];
            sampler.draw(&mut rng, &mut x, &mut z);
            x
        })
        .collect())
}

/// Reference trajectory and the linearised coefficients on the step grid.
struct Reference {
    n: usize,
    m: usize,
    h: f64,
    steps: usize,
    states: Vec<f64>,
    drift: Vec<f64>,
    jac: Vec<f64>,
    sigma: Vec<f64>,
}

impl Reference {
    fn new(model: &dyn VectorField, x0: &[f64], h: f64, steps: usize) -> Result<Self> {
        let n = model.dim_state();
        let m = model.dim_noise();
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
        let traj = trajectory(model, x0, &times, DEFAULT_RTOL)?;
        let mut r = Reference {
            n,
            m,
            h,
            steps,
            states: traj.concat(),
            drift: vec![0.0; (steps + 1) * n],
            jac: vec![0.0; (steps + 1) * n * n],
            sigma: vec![0.0; (steps + 1) * n * m],
        };
        for (k, t) in times.iter().enumerate() {
            let x = &r.states[k * n..(k + 1) * n];
            model.drift(x, *t, &mut r.drift[k * n..(k + 1) * n]);
            model.drift_gradient(x, *t, &mut r.jac[k * n * n..(k + 1) * n * n]);
            model.diffusion(x, *t, &mut r.sigma[k * n * m..(k + 1) * n * m]);
        }
        if r.drift.iter().chain(&r.jac).chain(&r.sigma).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "reference coefficients",
                point: x0.to_vec(),
                t: 0.0,
            });
        }
        Ok(r)
    }
}

struct PathScratch {
    u: Vec<f64>,
    sigma: Vec<f64>,
    dsigma: Vec<f64>,
    dw: Vec<f64>,
    dl: Vec<f64>,
}

impl PathScratch {
    fn new(n: usize, m: usize) -> Self {
        PathScratch {
            u: vec![0.0; n],
            sigma: vec![0.0; n * m],
            dsigma: vec![0.0; n * n * m],
            dw: vec![0.0; m],
            dl: vec![0.0; n],
        }
    }
}

/// Advances `y` and `l` from a common start through all steps; `fill_dw`
/// supplies the increment for each step. `false` on a non-finite state.
#[allow(clippy::too_many_arguments)]
fn run_path(
    model: &dyn VectorField,
    r: &Reference,
    scheme: Scheme,
    epsilon: f64,
    y: &mut [f64],
    l: &mut [f64],
    s: &mut PathScratch,
    mut fill_dw: impl FnMut(&mut [f64]),
) -> bool {
    let (n, m, h) = (r.n, r.m, r.h);
    for k in 0..r.steps {
        let t = k as f64 * h;
        fill_dw(&mut s.dw);

        // linearised equation, coefficients frozen on the reference path
        let f = &r.states[k * n..(k + 1) * n];
        let jac = &r.jac[k * n * n..(k + 1) * n * n];
        let sig = &r.sigma[k * n * m..(k + 1) * n * m];
        for i in 0..n {
            let mut drift = r.drift[k * n + i];
            for j in 0..n {
                drift += jac[i * n + j] * (l[j] - f[j]);
            }
            let mut noise = 0.0;
            for j in 0..m {
                noise += sig[i * m + j] * s.dw[j];
            }
            s.dl[i] = drift * h + epsilon * noise;
        }

        model.drift(y, t, &mut s.u);
        model.diffusion(y, t, &mut s.sigma);
        if scheme == Scheme::Milstein1d {
            model.diffusion_gradient(y, t, &mut s.dsigma);
            let dw = s.dw[0];
            y[0] += s.u[0] * h
                + epsilon * s.sigma[0] * dw
                + 0.5 * epsilon * epsilon * s.sigma[0] * s.dsigma[0] * (dw * dw - h);
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                let row = &s.sigma[i * m..(i + 1) * m];
                let noise: f64 = row.iter().zip(&s.dw).map(|(a, b)| a * b).sum();
                *yi += s.u[i] * h + epsilon * noise;
            }
        }
        for (li, dli) in l.iter_mut().zip(&s.dl) {
            *li += dli;
        }
        if y.iter().chain(l.iter()).any(|v| !v.is_finite()) {
            return false;
        }
    }
    true
}

fn batch_rho(init: &InitialCondition) -> f64 {
    match (init.kind, init.rho) {
        (InitKind::Fixed, _) => 0.0,
        (_, Some(rho)) => rho,
        _ => max_eigenvalue(&init.covariance).max(0.0).sqrt(),
    }
}

/// Simulates `config.n_samples` coupled pairs to `config.t_final`.
pub fn sample_coupled(
    model: &dyn VectorField,
    init: &InitialCondition,
    epsilon: f64,
    config: &SimulationConfig,
) -> Result<SamplePairBatch> {
    config.validate(model)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(
            "epsilon",
            format!("must be finite and non-negative, got {epsilon}"),
        ));
    }
    let n = model.dim_state();
    if init.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: init.dim(),
        });
    }
    let initial = InitialSampler::new(init)?;
    let reference = Reference::new(
        model,
        init.reference_point.as_slice(),
        config.step_size(),
        config.steps(),
    )?;
    let m = model.dim_noise();
    let sqrt_h = reference.h.sqrt();

    let paths: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..config.n_samples as u64)
        .into_par_iter()
        .map_init(
            || PathScratch::new(n, m),
            |scratch, i| {
                let mut rng = stream(config.seed, i);
                let mut y = vec![0.0; n];
                let mut z = vec![0.0; n];
                initial.draw(&mut rng, &mut y, &mut z);
                let mut l = y.clone();
                let ok = run_path(
                    model,
                    &reference,
                    config.scheme,
                    epsilon,
                    &mut y,
                    &mut l,
                    scratch,
                    |dw| {
                        for v in dw.iter_mut() {
                            *v = sqrt_h * rng.sample::<f64, _>(StandardNormal);
                        }
                    },
                );
                ok.then_some((y, l))
            },
        )
        .collect();

    let flagged = paths.iter().filter(|p| p.is_none()).count();
    if flagged as f64 > MAX_FLAGGED_FRACTION * config.n_samples as f64 {
        return Err(Error::TooManyFlagged {
            flagged,
            total: config.n_samples,
        });
    }
    let (y_samples, l_samples) = paths.into_iter().flatten().unzip();
    Ok(SamplePairBatch {
        y_samples,
        l_samples,
        epsilon,
        rho: batch_rho(init),
        config: config.clone(),
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_catalog::{builtin_model, Model, ModelSpec};

    fn model(name: &str) -> Model {
        builtin_model(&ModelSpec::new(name)).unwrap()
    }

    fn mean_distance(b: &SamplePairBatch) -> f64 {
        let d = b.distances();
        d.iter().sum::<f64>() / d.len() as f64
    }

    #[test]
    fn step_count_rounds() {
        let mut c = SimulationConfig::new(1.5, 10, 0);
        assert_eq!(c.steps(), 1500);
        c.dt = 0.4;
        assert_eq!(c.steps(), 4);
        assert!((c.step_size() - 0.375).abs() < 1e-15);
        c.dt = 10.0;
        assert_eq!(c.steps(), 1);
    }

    #[test]
    fn config_validation() {
        let jet = model("meandering_jet");
        let mut c = SimulationConfig::new(1.0, 10, 0);
        c.scheme = Scheme::Milstein1d;
        assert!(c.validate(jet.as_ref()).is_err());
        assert!(c.validate(model("linear_multiplicative").as_ref()).is_ok());
        c.dt = 0.0;
        assert!(c.validate(model("sine").as_ref()).is_err());
        let parsed: SimulationConfig =
            serde_json::from_str(r#"{"scheme":"milstein_1d","n_samples":5,"seed":3,"t_final":1.0}"#).unwrap();
        assert_eq!(parsed.scheme, Scheme::Milstein1d);
        assert_eq!(parsed.dt, 1e-3);
    }

    #[test]
    fn fixed_draws_are_constant() {
        let x = draw_initial(&InitialCondition::fixed(&[0.5, 1.0]), 50, 9).unwrap();
        assert!(x.iter().all(|r| r == &[0.5, 1.0]));
    }

    #[test]
    fn gaussian_draw_mean() {
        let (mu, rho, n) = (0.5, 0.1, 100_000);
        let x = draw_initial(&InitialCondition::isotropic(&[mu], rho).unwrap(), n, 11).unwrap();
        let mean = x.iter().map(|r| r[0]).sum::<f64>() / n as f64;
        assert!((mean - mu).abs() < 4.0 * rho / (n as f64).sqrt());
        let var = x.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - rho * rho).abs() < 0.02 * rho * rho);
    }

    #[test]
    fn zero_covariance_matches_fixed() {
        let m = model("sine");
        let cfg = SimulationConfig::new(1.0, 200, 5);
        let a = sample_coupled(m.as_ref(), &InitialCondition::fixed(&[0.5]), 0.1, &cfg).unwrap();
        let b = sample_coupled(
            m.as_ref(),
            &InitialCondition::isotropic(&[0.5], 0.0).unwrap(),
            0.1,
            &cfg,
        )
        .unwrap();
        assert_eq!(a.y_samples, b.y_samples);
        assert_eq!(a.l_samples, b.l_samples);
        assert_eq!(
            draw_initial(&InitialCondition::fixed(&[0.5]), 20, 5).unwrap(),
            draw_initial(&InitialCondition::isotropic(&[0.5], 0.0).unwrap(), 20, 5).unwrap()
        );
    }

    #[test]
    fn initial_draws_are_shared_with_sampler() {
        // with no noise both equations are deterministic from the drawn start
        let m = model("brownian");
        let init = InitialCondition::isotropic(&[0.2], 0.3).unwrap();
        let mut cfg = SimulationConfig::new(0.01, 64, 17);
        cfg.dt = 0.01;
        let b = sample_coupled(m.as_ref(), &init, 0.0, &cfg).unwrap();
        let x = draw_initial(&init, 64, 17).unwrap();
        assert_eq!(b.y_samples, x);
        assert_eq!(b.l_samples, x);
    }

    #[test]
    fn seed_determinism() {
        let m = model("meandering_jet");
        let init = InitialCondition::isotropic(&[0.0, 1.0], 0.01).unwrap();
        let cfg = SimulationConfig::new(0.5, 300, 99);
        let a = sample_coupled(m.as_ref(), &init, 0.05, &cfg).unwrap();
        let b = sample_coupled(m.as_ref(), &init, 0.05, &cfg).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| sample_coupled(m.as_ref(), &init, 0.05, &cfg).unwrap());
        assert_eq!(a, c);
        let other = SimulationConfig { seed: 100, ..cfg };
        assert_ne!(a, sample_coupled(m.as_ref(), &init, 0.05, &other).unwrap());
    }

    #[test]
    fn linear_additive_is_exact() {
        let m = model("linear_additive");
        let mut cfg = SimulationConfig::new(1.0, 1000, 3);
        cfg.dt = 1e-3;
        let b = sample_coupled(m.as_ref(), &InitialCondition::fixed(&[0.5, -0.3]), 0.1, &cfg).unwrap();
        let worst = b.distances().into_iter().fold(0.0, f64::max);
        assert!(worst <= 10.0 * cfg.dt, "{worst}");
    }

    #[test]
    fn zero_noise_tracks_flow() {
        let m = model("sine");
        let cfg = SimulationConfig::new(1.5, 4, 1);
        let b = sample_coupled(m.as_ref(), &InitialCondition::fixed(&[0.5]), 0.0, &cfg).unwrap();
        let exact = m.analytic_flow(&[0.5], 1.5).unwrap()[0];
        for (y, l) in b.y_samples.iter().zip(&b.l_samples) {
            assert!((y[0] - exact).abs() < 1e-3);
            assert!((l[0] - exact).abs() < 1e-3);
        }
    }

    #[test]
    fn sine_error_quarters_when_noise_halves() {
        let m = model("sine");
        let cfg = SimulationConfig::new(1.5, 4000, 21);
        let init = InitialCondition::fixed(&[0.5]);
        let e1 = mean_distance(&sample_coupled(m.as_ref(), &init, 0.04, &cfg).unwrap());
        let e2 = mean_distance(&sample_coupled(m.as_ref(), &init, 0.02, &cfg).unwrap());
        let ratio = e1 / e2;
        assert!((3.3..4.7).contains(&ratio), "{ratio}");
    }

    #[test]
    fn excessive_blow_up_is_an_error() {
        struct Explosive;
        impl VectorField for Explosive {
            fn name(&self) -> &'static str {
                "explosive"
            }
            fn dim_state(&self) -> usize {
                1
            }
            fn dim_noise(&self) -> usize {
                1
            }
            fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
                out[0] = x[0].powi(3) * 1e3;
            }
            fn drift_gradient(&self, x: &[f64], _t: f64, out: &mut [f64]) {
                out[0] = 3e3 * x[0] * x[0];
            }
            fn diffusion(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
                out[0] = 1.0;
            }
            fn constants(&self) -> crate::bounds::BoundConstants {
                crate::bounds::BoundConstants::new(1, 0.0, 0.0, 0.0, 1.0, 1.0)
            }
            fn domain(&self) -> crate::model_catalog::BoxDomain {
                crate::model_catalog::BoxDomain::cube(1, -1.0, 1.0)
            }
        }
        let mut cfg = SimulationConfig::new(1.0, 100, 2);
        cfg.dt = 0.01;
        let err = sample_coupled(&Explosive, &InitialCondition::fixed(&[0.0]), 1.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::TooManyFlagged { .. }), "{err:?}");
    }

    fn jet_linearised_moments(dt: f64) -> (f64, f64, f64) {
        let m = model("meandering_jet");
        let init = InitialCondition::fixed(&[0.0, 1.0]);
        let eps = 1e-2;
        let n = 10_000;
        let mut cfg = SimulationConfig::new(1.0, n, 8);
        cfg.dt = dt;
        let b = sample_coupled(m.as_ref(), &init, eps, &cfg).unwrap();
        let law = crate::linearisation::linearised_distribution(m.as_ref(), &init, 1.0, eps).unwrap();
        let (mean, cov) = sample_moments(&b.l_samples);
        let cov_rel = (&cov - &law.covariance).norm() / law.covariance.norm();
        let sd = max_eigenvalue(&law.covariance).sqrt();
        (cov_rel, (mean - law.mean).norm(), sd / (n as f64).sqrt())
    }

    #[test]
    fn linearised_covariance_is_reproduced() {
        let (cov_rel, _, _) = jet_linearised_moments(1e-3);
        assert!(cov_rel <= 5.0 / 100.0, "{cov_rel}");
    }

    /// Euler's weak bias on the jet at `dt = 1e-3` is a few times the
    /// statistical tolerance for the mean, so the mean is checked finer.
    #[test]
    fn linearised_mean_is_reproduced() {
        let (cov_rel, mean_err, se) = jet_linearised_moments(1e-4);
        assert!(cov_rel <= 5.0 / 100.0, "{cov_rel}");
        assert!(mean_err <= 5.0 * se, "{mean_err} vs {}", 5.0 * se);
    }

    #[test]
    fn halving_dt_is_within_monte_carlo_error() {
        // coarse increments are sums of consecutive fine ones
        let m = model("sine");
        let (eps, t, fine_dt, n_paths) = (0.05, 1.5f64, 5e-4f64, 5000u64);
        let steps_fine = (t / fine_dt).round() as usize;
        let coarse = Reference::new(m.as_ref(), &[0.5], 2.0 * fine_dt, steps_fine / 2).unwrap();
        let fine = Reference::new(m.as_ref(), &[0.5], fine_dt, steps_fine).unwrap();
        let mut d_coarse = Vec::new();
        let mut d_fine = Vec::new();
        let mut s = PathScratch::new(1, 1);
        for i in 0..n_paths {
            let mut rng = stream(1234, i);
            let z: Vec<f64> = (0..steps_fine)
                .map(|_| fine_dt.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let (mut y, mut l) = (vec![0.5], vec![0.5]);
            let mut it = z.iter();
            assert!(run_path(
                m.as_ref(),
                &fine,
                Scheme::EulerMaruyama,
                eps,
                &mut y,
                &mut l,
                &mut s,
                |dw| { dw[0] = *it.next().unwrap() }
            ));
            d_fine.push((y[0] - l[0]).abs());
            let (mut y, mut l) = (vec![0.5], vec![0.5]);
            let mut pairs = z.chunks(2);
            assert!(run_path(
                m.as_ref(),
                &coarse,
                Scheme::EulerMaruyama,
                eps,
                &mut y,
                &mut l,
                &mut s,
                |dw| {
                    let p = pairs.next().unwrap();
                    dw[0] = p[0] + p[1];
                }
            ));
            d_coarse.push((y[0] - l[0]).abs());
        }
        let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
        let ef = mean(&d_fine);
        let sd = (d_fine.iter().map(|v| (v - ef).powi(2)).sum::<f64>() / (d_fine.len() - 1) as f64).sqrt();
        let stderr = sd / (d_fine.len() as f64).sqrt();
        assert!(
            (mean(&d_coarse) - ef).abs() < stderr,
            "{} vs {ef} (se {stderr})",
            mean(&d_coarse)
        );
    }

    fn sample_moments(rows: &[Vec<f64>]) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
        let n = rows[0].len();
        let count = rows.len() as f64;
        let mut mean = nalgebra::DVector::zeros(n);
        for r in rows {
            mean += nalgebra::DVector::from_row_slice(r);
        }
        mean /= count;
        let mut cov = DMatrix::zeros(n, n);
        for r in rows {
            let d = nalgebra::DVector::from_row_slice(r) - &mean;
            cov += &d * d.transpose();
        }
        (mean, cov / (count - 1.0))
    }

    #[test]
    fn csv_round_trip() {
        let m = model("meandering_jet");
        let cfg = SimulationConfig::new(0.2, 20, 4);
        let b = sample_coupled(m.as_ref(), &InitialCondition::fixed(&[0.0, 1.0]), 0.1, &cfg).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf, &Provenance::new("abc", 4)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# config_sha256=abc seed=4\ny1,y2,l1,l2\n"));
        let meta: BatchMeta = serde_json::from_str(&serde_json::to_string(&b.meta()).unwrap()).unwrap();
        let (prov, back) = SamplePairBatch::read_csv(&buf[..], &meta).unwrap();
        assert_eq!(prov.seed, 4);
        assert_eq!(back, b);
    }
}
