//! Strong-error estimation and scaling-law regression.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, expect_headers, parse_f64, Provenance};
use crate::linearisation::InitialCondition;
use crate::model_catalog::VectorField;
use crate::rng::{derive_seed, stream};
use crate::sde_sampler::{sample_coupled, SamplePairBatch, SimulationConfig};

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

/// Monte-Carlo estimate of `E||y - l||^r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongError {
    pub estimate: f64,
    pub standard_error: f64,
    pub n: usize,
}

pub fn strong_error(batch: &SamplePairBatch, r: f64) -> Result<StrongError> {
    strong_error_of(&batch.distances(), r)
}

/// Same estimator from precomputed pair distances.
pub fn strong_error_of(distances: &[f64], r: f64) -> Result<StrongError> {
    if distances.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("r", format!("must be positive, got {r}")));
    }
    let n = distances.len();
    let powered: Vec<f64> = distances.iter().map(|d| d.powf(r)).collect();
    let mean = powered.iter().sum::<f64>() / n as f64;
    let standard_error = if n > 1 {
        let var = powered.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(StrongError {
        estimate: mean,
        standard_error,
        n,
    })
}

/// Isotropic Gaussian initial laws `Normal(reference, rho^2 I)`, one per `rho`,
/// all linearised about `reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitFamily {
    pub reference: Vec<f64>,
    pub rhos: Vec<f64>,
}

/// One row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub epsilon: f64,
    pub rho: f64,
    pub r: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
}

/// Per-sample distances of one `(epsilon, rho)` batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSamples {
    pub epsilon: f64,
    pub rho: f64,
    pub seed: u64,
    pub flagged: usize,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Empty when read back from CSV.
    pub samples: Vec<CellSamples>,
}

const CSV_COLUMNS: [&str; 7] = ["epsilon", "rho", "r", "estimate", "stderr", "n", "seed"];

impl SweepResult {
    /// Builds cells for each `r` from stored per-sample distances.
    pub fn from_samples(samples: Vec<CellSamples>, rs: &[f64]) -> Result<Self> {
        let mut cells = Vec::with_capacity(samples.len() * rs.len());
        for s in &samples {
            for &r in rs {
                let e = strong_error_of(&s.distances, r)?;
                cells.push(SweepCell {
                    epsilon: s.epsilon,
                    rho: s.rho,
                    r,
                    estimate: e.estimate,
                    stderr: e.standard_error,
                    n: e.n,
                    seed: s.seed,
                });
            }
        }
        Ok(SweepResult { cells, samples })
    }

    pub fn cell(&self, epsilon: f64, rho: f64, r: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.epsilon == epsilon && c.rho == rho && c.r == r)
    }

    pub fn write_csv<W: Write>(&self, w: W, provenance: &Provenance) -> Result<()> {
        let mut w = csv_writer(w, provenance)?;
        w.write_record(CSV_COLUMNS)?;
        for c in &self.cells {
            w.write_record([
                format!("{:e}", c.epsilon),
                format!("{:e}", c.rho),
                format!("{}", c.r),
                format!("{:e}", c.estimate),
                format!("{:e}", c.stderr),
                c.n.to_string(),
                c.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<(Provenance, Self)> {
        let (prov, mut rdr) = csv_reader(r)?;
        let cols: Vec<String> = CSV_COLUMNS.iter().map(|s| s.to_string()).collect();
        expect_headers(rdr.headers()?, &cols, "sweep csv")?;
        let mut cells = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| parse_f64(&rec[i], "sweep csv");
            let int = |i: usize| {
                rec[i].parse::<u64>().map_err(|_| Error::Format {
                    format: "sweep csv",
                    reason: format!("not an integer: `{}`", &rec[i]),
                })
            };
            cells.push(SweepCell {
                epsilon: f(0)?,
                rho: f(1)?,
                r: f(2)?,
                estimate: f(3)?,
                stderr: f(4)?,
                n: int(5)? as usize,
                seed: int(6)?,
            });
        }
        Ok((
            prov,
            SweepResult {
                cells,
                samples: Vec::new(),
            },
        ))
    }
}

/// One coupled batch per `(epsilon, rho)` cell and `E_r` for each `r`.
/// Cell `k` (rho-major order) uses seed `derive_seed(config.seed, k)`.
pub fn run_sweep(
    model: &dyn VectorField,
    family: &InitFamily,
    epsilons: &[f64],
    rs: &[f64],
    config: &SimulationConfig,
) -> Result<SweepResult> {
    if family.rhos.is_empty() || epsilons.is_empty() || rs.is_empty() {
        return Err(Error::invalid("sweep", "grids must be non-empty"));
    }
    config.validate(model)?;
    let grid: Vec<(usize, f64, f64)> = family
        .rhos
        .iter()
        .flat_map(|&rho| epsilons.iter().map(move |&eps| (eps, rho)))
        .enumerate()
        .map(|(k, (eps, rho))| (k, eps, rho))
        .collect();
    let samples = grid
        .par_iter()
        .map(|&(k, epsilon, rho)| {
            let seed = derive_seed(config.seed, k as u64);
            let cell_err = |source| Error::SweepCell {
                epsilon,
                rho,
                source: Box::new(source),
            };
            let init = InitialCondition::isotropic(&family.reference, rho).map_err(cell_err)?;
            let cfg = SimulationConfig { seed, ..config.clone() };
            let batch = sample_coupled(model, &init, epsilon, &cfg).map_err(cell_err)?;
            if batch.is_empty() {
                return Err(cell_err(Error::EmptyBatch));
            }
            Ok(CellSamples {
                epsilon,
                rho,
                seed,
                flagged: batch.flagged,
                distances: batch.distances(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SweepResult::from_samples(samples, rs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `b0 + b1 eps^2`
    ConstPlusEps2,
    /// `b1 eps + b2 eps^2`
    EpsPlusEps2,
    /// `b0 + b1 rho`
    ConstPlusRho,
    /// `b0 + b1 rho^2`
    ConstPlusRho2,
    /// `b0 + b1 rho + b2 rho^2`
    ConstPlusRhoPlusRho2,
    /// `log10 E = b0 + b1 log10 eps`
    LoglogLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Epsilon,
    Rho,
}

impl Basis {
    pub fn arity(self) -> usize {
        match self {
            Basis::ConstPlusRhoPlusRho2 => 3,
            _ => 2,
        }
    }

    pub fn axis(self) -> Axis {
        match self {
            Basis::ConstPlusEps2 | Basis::EpsPlusEps2 | Basis::LoglogLine => Axis::Epsilon,
            _ => Axis::Rho,
        }
    }

    fn row(self, x: f64) -> Vec<f64> {
        match self {
            Basis::ConstPlusEps2 | Basis::ConstPlusRho2 => vec![1.0, x * x],
            Basis::EpsPlusEps2 => vec![x, x * x],
            Basis::ConstPlusRho => vec![1.0, x],
            Basis::ConstPlusRhoPlusRho2 => vec![1.0, x, x * x],
            Basis::LoglogLine => vec![1.0, x.log10()],
        }
    }

    /// Fitted value at `x` in untransformed space.
    pub fn predict(self, coefficients: &[f64], x: f64) -> f64 {
        let lin: f64 = self.row(x).iter().zip(coefficients).map(|(a, b)| a * b).sum();
        match self {
            Basis::LoglogLine => 10f64.powf(lin),
            _ => lin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub basis: Basis,
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    /// Log-log slope; only for `loglog_line`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    /// Value of the coordinate held fixed along the fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Ordinary least squares of `ys` on the basis evaluated at `xs`.
pub fn fit_points(basis: Basis, xs: &[f64], ys: &[f64]) -> Result<ScalingFit> {
    let p = basis.arity();
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < p + 2 {
        return Err(Error::DegenerateDesign(format!(
            "{} points for a {p}-parameter basis; need at least {}",
            xs.len(),
            p + 2
        )));
    }
    let target: Vec<f64> = match basis {
        Basis::LoglogLine => {
            if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
                return Err(Error::DegenerateDesign("log-log fit needs positive data".into()));
            }
            ys.iter().map(|y| y.log10()).collect()
        }
        _ => ys.to_vec(),
    };
    let k = xs.len();
    let design = DMatrix::from_fn(k, p, |i, j| basis.row(xs[i])[j]);
    let y = DVector::from_vec(target);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::DegenerateDesign(format!("condition {:e}", smax / smin)));
    }
    let beta = svd.solve(&y, 0.0).map_err(|e| Error::DegenerateDesign(e.to_string()))?;
    let resid = &y - &design * &beta;
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let ss_res = resid.norm_squared();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    let coefficients = beta.as_slice().to_vec();
    Ok(ScalingFit {
        basis,
        slope: (basis == Basis::LoglogLine).then(|| coefficients[1]),
        coefficients,
        r_squared,
        fixed: None,
        r: None,
        x: xs.to_vec(),
        y: ys.to_vec(),
    })
}

/// Cells grouped by `(fixed coordinate, r)` in order of first appearance.
fn slices(sweep: &SweepResult, axis: Axis) -> Vec<(f64, f64, Vec<SweepCell>)> {
    let mut out: Vec<(f64, f64, Vec<SweepCell>)> = Vec::new();
    for c in &sweep.cells {
        let fixed = match axis {
            Axis::Epsilon => c.rho,
            Axis::Rho => c.epsilon,
        };
        match out.iter_mut().find(|(f, r, _)| *f == fixed && *r == c.r) {
            Some((_, _, v)) => v.push(*c),
            None => out.push((fixed, c.r, vec![*c])),
        }
    }
    for (_, _, v) in &mut out {
        v.sort_by(|a, b| axis_value(a, axis).total_cmp(&axis_value(b, axis)));
    }
    out
}

fn axis_value(c: &SweepCell, axis: Axis) -> f64 {
    match axis {
        Axis::Epsilon => c.epsilon,
        Axis::Rho => c.rho,
    }
}

/// One fit per slice of the sweep along the basis' axis, i.e. per `rho`
/// (and `r`) for epsilon bases and per `epsilon` for rho bases.
pub fn fit_scaling(sweep: &SweepResult, basis: Basis) -> Result<Vec<ScalingFit>> {
    let axis = basis.axis();
    slices(sweep, axis)
        .into_iter()
        .map(|(fixed, r, cells)| {
            let xs: Vec<f64> = cells.iter().map(|c| axis_value(c, axis)).collect();
            let ys: Vec<f64> = cells.iter().map(|c| c.estimate).collect();
            let mut fit = fit_points(basis, &xs, &ys)?;
            fit.fixed = Some(fixed);
            fit.r = Some(r);
            Ok(fit)
        })
        .collect()
}

/// Percentile bootstrap of a fit: cell samples are resampled with
/// replacement, `E_r` recomputed and the fit repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapFit {
    pub fit: ScalingFit,
    pub resamples: usize,
    /// 2.5% and 97.5% percentiles per coefficient.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl BootstrapFit {
    /// Whether the 95% interval of coefficient `i` contains zero.
    pub fn contains_zero(&self, i: usize) -> bool {
        self.lower[i] <= 0.0 && 0.0 <= self.upper[i]
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn bootstrap_fit(sweep: &SweepResult, basis: Basis, resamples: usize, seed: u64) -> Result<Vec<BootstrapFit>> {
    if resamples < 2 {
        return Err(Error::invalid("resamples", "need at least two"));
    }
    let axis = basis.axis();
    let fits = fit_scaling(sweep, basis)?;
    slices(sweep, axis)
        .into_iter()
        .zip(fits)
        .enumerate()
        .map(|(slice_idx, ((_, r, cells), fit))| {
            let data: Vec<&CellSamples> = cells
                .iter()
                .map(|c| {
                    sweep
                        .samples
                        .iter()
                        .find(|s| s.epsilon == c.epsilon && s.rho == c.rho)
                        .ok_or_else(|| Error::invalid("sweep", "bootstrap needs per-sample distances"))
                })
                .collect::<Result<_>>()?;
            let xs: Vec<f64> = cells.iter().map(|c| axis_value(c, axis)).collect();
            let slice_seed = derive_seed(seed, slice_idx as u64);
            let draws = (0..resamples as u64)
                .into_par_iter()
                .map(|b| {
                    let mut rng = stream(slice_seed, b);
                    let ys: Vec<f64> = data
                        .iter()
                        .map(|s| {
                            let n = s.distances.len();
                            (0..n).map(|_| s.distances[rng.random_range(0..n)].powf(r)).sum::<f64>() / n as f64
                        })
                        .collect();
                    fit_points(basis, &xs, &ys).map(|f| f.coefficients)
                })
                .collect::<Result<Vec<_>>>()?;
            let p = basis.arity();
            let mut lower = Vec::with_capacity(p);
            let mut upper = Vec::with_capacity(p);
            let mut std_error = Vec::with_capacity(p);
            for j in 0..p {
                let mut col: Vec<f64> = draws.iter().map(|c| c[j]).collect();
                col.sort_by(f64::total_cmp);
                lower.push(percentile(&col, 0.025));
                upper.push(percentile(&col, 0.975));
                let m = col.iter().sum::<f64>() / col.len() as f64;
                std_error.push((col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (col.len() - 1) as f64).sqrt());
            }
            Ok(BootstrapFit {
                fit,
                resamples,
                lower,
                upper,
                std_error,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_catalog::{builtin_model, ModelSpec};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp1};

    fn synthetic_sweep(epsilons: &[f64], rhos: &[f64], f: impl Fn(f64, f64) -> f64) -> SweepResult {
        let cells = rhos
            .iter()
            .flat_map(|&rho| epsilons.iter().map(move |&eps| (eps, rho)))
            .map(|(epsilon, rho)| SweepCell {
                epsilon,
                rho,
                r: 1.0,
                estimate: f(epsilon, rho),
                stderr: 0.0,
                n: 1,
                seed: 0,
            })
            .collect();
        SweepResult {
            cells,
            samples: Vec::new(),
        }
    }

    #[test]
    fn identical_samples_have_zero_error() {
        let d = vec![0.0; 10];
        let e = strong_error_of(&d, 1.0).unwrap();
        assert_eq!((e.estimate, e.standard_error), (0.0, 0.0));
    }

    #[test]
    fn single_pair() {
        let e = strong_error_of(&[0.3], 2.0).unwrap();
        assert!((e.estimate - 0.09).abs() < 1e-16);
        assert!(matches!(strong_error_of(&[], 1.0), Err(Error::EmptyBatch)));
    }

    #[test]
    fn standard_error_formula() {
        let e = strong_error_of(&[1.0, 2.0, 3.0, 4.0], 1.0).unwrap();
        assert!((e.estimate - 2.5).abs() < 1e-15);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.standard_error - sd / 2.0).abs() < 1e-15);
    }

    #[test]
    fn exact_polynomial_recovery() {
        let eps = [0.001, 0.003, 0.01, 0.03, 0.1];
        let s = synthetic_sweep(&eps, &[0.0], |e, _| 3.0 + 2.0 * e * e);
        let fit = &fit_scaling(&s, Basis::ConstPlusEps2).unwrap()[0];
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-10 * 3.0);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-10 * 2.0);
        assert_eq!(fit.r_squared, 1.0);

        let s = synthetic_sweep(&eps, &[0.0], |e, _| 0.7 * e + 5.0 * e * e);
        let fit = &fit_scaling(&s, Basis::EpsPlusEps2).unwrap()[0];
        assert!((fit.coefficients[0] - 0.7).abs() < 1e-10 * 0.7);
        assert!((fit.coefficients[1] - 5.0).abs() < 1e-10 * 5.0);

        let rhos = [0.0, 0.01, 0.02, 0.05, 0.1];
        let s = synthetic_sweep(&[0.01], &rhos, |_, r| 1e-4 + 0.3 * r + 2.0 * r * r);
        let fit = &fit_scaling(&s, Basis::ConstPlusRhoPlusRho2).unwrap()[0];
        for (got, want) in fit.coefficients.iter().zip([1e-4, 0.3, 2.0]) {
            assert!((got - want).abs() < 1e-10 * want, "{got} {want}");
        }
        assert_eq!(fit.fixed, Some(0.01));
    }

    #[test]
    fn loglog_slope_is_exact() {
        for r in [1.0, 2.0, 3.0] {
            let eps = [0.1, 10f64.powf(-1.5), 0.01, 10f64.powf(-2.5)];
            let s = synthetic_sweep(&eps, &[0.0], |e, _| 4.2 * e.powf(2.0 * r));
            let fit = &fit_scaling(&s, Basis::LoglogLine).unwrap()[0];
            assert!((fit.slope.unwrap() - 2.0 * r).abs() < 1e-10);
            assert!((1.0 - fit.r_squared).abs() < 1e-12);
        }
    }

    #[test]
    fn fits_slice_per_fixed_coordinate() {
        let eps = [0.001, 0.01, 0.02, 0.05];
        let s = synthetic_sweep(&eps, &[0.0, 0.1], |e, r| r + e * e);
        let fits = fit_scaling(&s, Basis::ConstPlusEps2).unwrap();
        assert_eq!(fits.len(), 2);
        assert!((fits[1].coefficients[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn too_few_points_is_degenerate() {
        let s = synthetic_sweep(&[0.01, 0.02, 0.03], &[0.0], |e, _| e);
        assert!(matches!(
            fit_scaling(&s, Basis::ConstPlusEps2),
            Err(Error::DegenerateDesign(_))
        ));
        assert!(fit_points(Basis::ConstPlusEps2, &[0.1; 4], &[1.0; 4]).is_err());
    }

    #[test]
    fn r_squared_is_clamped() {
        let fit = fit_points(Basis::EpsPlusEps2, &[0.1, 0.2, 0.3, 0.4], &[5.0, -5.0, 5.0, -5.0]).unwrap();
        assert!((0.0..=1.0).contains(&fit.r_squared));
    }

    #[test]
    fn noisy_recovery_within_bootstrap_error() {
        let eps = [0.01, 0.02, 0.04, 0.06, 0.08, 0.1];
        let (b0, b1) = (0.05, 30.0);
        let n = 4000;
        let samples: Vec<CellSamples> = eps
            .iter()
            .enumerate()
            .map(|(k, &e)| {
                let mut rng = stream(77, k as u64);
                let mean = b0 + b1 * e * e;
                CellSamples {
                    epsilon: e,
                    rho: 0.0,
                    seed: k as u64,
                    flagged: 0,
                    distances: (0..n)
                        .map(|_| mean * <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng))
                        .collect(),
                }
            })
            .collect();
        let sweep = SweepResult::from_samples(samples, &[1.0]).unwrap();
        let boot = &bootstrap_fit(&sweep, Basis::ConstPlusEps2, 400, 5).unwrap()[0];
        for (j, want) in [b0, b1].iter().enumerate() {
            let got = boot.fit.coefficients[j];
            assert!(
                (got - want).abs() <= 3.0 * boot.std_error[j],
                "{j}: {got} vs {want} ± {}",
                boot.std_error[j]
            );
            assert!(boot.lower[j] <= got && got <= boot.upper[j]);
        }
    }

    #[test]
    fn sweep_cells_are_reproducible() {
        let m = builtin_model(&ModelSpec::new("sine")).unwrap();
        let fam = InitFamily {
            reference: vec![0.5],
            rhos: vec![0.0, 0.01],
        };
        let cfg = SimulationConfig::new(1.5, 200, 3);
        let a = run_sweep(m.as_ref(), &fam, &[0.01, 0.1], &[1.0, 2.0], &cfg).unwrap();
        let b = run_sweep(m.as_ref(), &fam, &[0.01, 0.1], &[1.0, 2.0], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 8);
        let seeds: std::collections::HashSet<u64> = a.cells.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 4);
        // 1x1 grid is one strong_error call on the cell's batch
        let single = run_sweep(
            m.as_ref(),
            &InitFamily {
                reference: vec![0.5],
                rhos: vec![0.0],
            },
            &[0.1],
            &[1.0],
            &cfg,
        )
        .unwrap();
        let batch = sample_coupled(
            m.as_ref(),
            &InitialCondition::isotropic(&[0.5], 0.0).unwrap(),
            0.1,
            &SimulationConfig {
                seed: derive_seed(3, 0),
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(single.cells[0].estimate, strong_error(&batch, 1.0).unwrap().estimate);
    }

    #[test]
    fn sine_sweep_is_monotone_in_epsilon() {
        let m = builtin_model(&ModelSpec::new("sine")).unwrap();
        let fam = InitFamily {
            reference: vec![0.5],
            rhos: vec![0.0],
        };
        let eps: Vec<f64> = crate::linalg::linspace(-3.0, -1.0, 5)
            .iter()
            .map(|p| 10f64.powf(*p))
            .collect();
        let s = run_sweep(m.as_ref(), &fam, &eps, &[1.0], &SimulationConfig::new(1.5, 1000, 12)).unwrap();
        for w in s.cells.windows(2) {
            assert!(w[1].estimate + 2.0 * w[1].stderr >= w[0].estimate - 2.0 * w[0].stderr);
        }
    }

    #[test]
    fn multiplicative_sweep_increases_in_rho() {
        let m = builtin_model(&ModelSpec::new("linear_multiplicative")).unwrap();
        let fam = InitFamily {
            reference: vec![2.0],
            rhos: vec![0.0, 0.05, 0.1],
        };
        let mut cfg = SimulationConfig::new(1.0, 2000, 4);
        cfg.scheme = crate::sde_sampler::Scheme::Milstein1d;
        let s = run_sweep(m.as_ref(), &fam, &[0.01], &[1.0], &cfg).unwrap();
        assert!(s.cells[0].estimate < s.cells[1].estimate);
        assert!(s.cells[1].estimate < s.cells[2].estimate);
    }

    #[test]
    fn sweep_csv_round_trip() {
        let s = synthetic_sweep(&[0.001, 0.01], &[0.0, 0.1], |e, r| e + r);
        let mut buf = Vec::new();
        s.write_csv(&mut buf, &Provenance::new("aa", 9)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap() == "epsilon,rho,r,estimate,stderr,n,seed");
        let (p, back) = SweepResult::read_csv(&buf[..]).unwrap();
        assert_eq!(p.seed, 9);
        assert_eq!(back, s);
    }

    #[test]
    fn fit_json_shape() {
        let fit = fit_points(
            Basis::LoglogLine,
            &[0.1, 0.01, 0.001, 0.0001],
            &[1e-2, 1e-4, 1e-6, 1e-8],
        )
        .unwrap();
        let v: serde_json::Value = serde_json::to_value(&fit).unwrap();
        assert_eq!(v["basis"], "loglog_line");
        assert!((v["slope"].as_f64().unwrap() - 2.0).abs() < 1e-12);
        let back: ScalingFit = serde_json::from_value(v).unwrap();
        assert_eq!(back, fit);
    }

    proptest! {
        #[test]
        fn permutation_invariant(d in proptest::collection::vec(0.0..10.0f64, 2..50), seed in any::<u64>()) {
            let mut shuffled = d.clone();
            let mut rng = stream(seed, 0);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            let a = strong_error_of(&d, 1.5).unwrap();
            let b = strong_error_of(&shuffled, 1.5).unwrap();
            prop_assert!((a.estimate - b.estimate).abs() <= 1e-12 * a.estimate.max(1e-300));
        }

        #[test]
        fn power_means_are_ordered(d in proptest::collection::vec(0.0..10.0f64, 1..50)) {
            let m: Vec<f64> = [1.0, 2.0, 3.0, 4.0]
                .iter()
                .map(|&r| strong_error_of(&d, r).unwrap().estimate.powf(1.0 / r))
                .collect();
            for w in m.windows(2) {
                prop_assert!(w[1] >= w[0] * (1.0 - 1e-12));
            }
        }
    }
}
