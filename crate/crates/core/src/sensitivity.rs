//! Stochastic sensitivity: the top eigenvalue of the unit-noise covariance
//! of the linearised flow, pointwise and on grids.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, expect_headers, parse_f64, Provenance};
use crate::linalg::{linspace, max_eigenvalue};
use crate::linearisation::{propagate, InitialCondition, LinearisationOptions};
use crate::model_catalog::{ModelSpec, VectorField};
use crate::sde_sampler::{sample_coupled, SimulationConfig};

/// Largest fraction of grid nodes allowed to fail before the field is rejected.
pub const MAX_MISSING_FRACTION: f64 = 1e-3;

/// Unit-noise covariance `Sigma_0^t(x0)` of the linearisation from a point mass.
pub fn unit_covariance(model: &dyn VectorField, x0: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let n = model.dim_state();
    let p = propagate(
        model,
        x0,
        t,
        1.0,
        &DMatrix::zeros(n, n),
        &LinearisationOptions::default(),
    )?;
    Ok(p.covariance)
}

pub fn s2_point(model: &dyn VectorField, x0: &[f64], t: f64) -> Result<f64> {
    Ok(max_eigenvalue(&unit_covariance(model, x0, t)?).max(0.0))
}

/// Uniform axis including both end points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        GridAxis { min, max, count }
    }

    pub fn nodes(&self) -> Vec<f64> {
        linspace(self.min, self.max, self.count)
    }
}

/// Node count of a grid.
pub fn grid_len(axes: &[GridAxis]) -> usize {
    axes.iter().map(|a| a.count).product()
}

/// Coordinates of node `index`; the first axis varies slowest.
pub fn grid_point(axes: &[GridAxis], mut index: usize) -> Vec<f64> {
    let mut x = vec![0.0; axes.len()];
    for (k, a) in axes.iter().enumerate().rev() {
        let i = index % a.count;
        index /= a.count;
        x[k] = if a.count == 1 {
            a.min
        } else {
            a.min + (a.max - a.min) * i as f64 / (a.count - 1) as f64
        };
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S2Field {
    pub axes: Vec<GridAxis>,
    pub t: f64,
    pub model: ModelSpec,
    /// Indices of nodes whose computation failed; their values are NaN.
    #[serde(default)]
    pub missing: Vec<usize>,
    /// Row-major over `axes`, first axis slowest.
    #[serde(skip)]
    pub values: Vec<f64>,
}

fn validate_grid(model: &dyn VectorField, axes: &[GridAxis]) -> Result<()> {
    if axes.len() != model.dim_state() {
        return Err(Error::Dimension {
            expected: model.dim_state(),
            got: axes.len(),
        });
    }
    let dom = model.domain();
    for (k, a) in axes.iter().enumerate() {
        if a.count == 0 {
            return Err(Error::invalid(format!("grid[{k}].count"), "must be positive"));
        }
        if !(a.min.is_finite() && a.max.is_finite()) || a.min > a.max {
            return Err(Error::invalid(format!("grid[{k}]"), "need finite min <= max"));
        }
        if a.min < dom.lower[k] || a.max > dom.upper[k] {
            return Err(Error::invalid(
                format!("grid[{k}]"),
                format!(
                    "[{}, {}] leaves the model domain [{}, {}]",
                    a.min, a.max, dom.lower[k], dom.upper[k]
                ),
            ));
        }
    }
    Ok(())
}

/// `s2_point` at every grid node. `workers = 0` uses the global pool.
pub fn s2_field(model: &dyn VectorField, axes: &[GridAxis], t: f64, workers: usize) -> Result<S2Field> {
    validate_grid(model, axes)?;
    let total = grid_len(axes);
    let compute = || {
        (0..total)
            .into_par_iter()
            .map(|i| s2_point(model, &grid_point(axes, i), t))
            .collect::<Vec<_>>()
    };
    let results = if workers == 0 {
        compute()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?
            .install(compute)
    };
    let mut values = Vec::with_capacity(total);
    let mut missing = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => values.push(v),
            Err(e) => {
                // a malformed horizon fails everywhere; report it as such
                if !e.is_numerical() {
                    return Err(e);
                }
                missing.push(i);
                values.push(f64::NAN);
            }
        }
    }
    if missing.len() as f64 > MAX_MISSING_FRACTION * total as f64 {
        return Err(Error::FieldIncomplete {
            missing: missing.len(),
            total,
        });
    }
    Ok(S2Field {
        axes: axes.to_vec(),
        t,
        model: ModelSpec::new(model.name()),
        missing,
        values,
    })
}

impl S2Field {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        grid_point(&self.axes, index)
    }

    fn coordinate_columns(&self) -> Vec<String> {
        (1..=self.axes.len()).map(|k| format!("x{k}")).collect()
    }

    fn write_table<W: Write>(&self, w: W, provenance: &Provenance, mask: Option<&[bool]>) -> Result<()> {
        let mut w = csv_writer(w, provenance)?;
        let mut header = self.coordinate_columns();
        header.push("s2".into());
        if mask.is_some() {
            header.push("robust".into());
        }
        w.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.point(i).iter().map(|x| format!("{x:e}")).collect();
            row.push(format!("{v:e}"));
            if let Some(m) = mask {
                row.push(m[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per node: coordinates then `s2`.
    pub fn write_csv<W: Write>(&self, w: W, provenance: &Provenance) -> Result<()> {
        self.write_table(w, provenance, None)
    }

    /// Reads values written by [`S2Field::write_csv`] into a field whose
    /// header came from the JSON sidecar, checking node coordinates.
    pub fn read_csv<R: BufRead>(r: R, mut header: S2Field) -> Result<(Provenance, S2Field)> {
        let (prov, values, _) = header.read_table(r, false)?;
        header.values = values;
        Ok((prov, header))
    }

    fn read_table<R: BufRead>(&self, r: R, with_mask: bool) -> Result<(Provenance, Vec<f64>, Vec<bool>)> {
        let fmt = if with_mask { "robust set csv" } else { "s2 field csv" };
        let (prov, mut rdr) = csv_reader(r)?;
        let mut cols = self.coordinate_columns();
        cols.push("s2".into());
        if with_mask {
            cols.push("robust".into());
        }
        expect_headers(rdr.headers()?, &cols, fmt)?;
        let n = self.axes.len();
        let mut values = Vec::new();
        let mut mask = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let expected = grid_point(&self.axes, i);
            for k in 0..n {
                let x = parse_f64(&rec[k], fmt)?;
                if (x - expected[k]).abs() > 1e-12 * expected[k].abs().max(1.0) {
                    return Err(Error::Format {
                        format: fmt,
                        reason: format!("row {i} is not grid node {expected:?}"),
                    });
                }
            }
            values.push(parse_f64(&rec[n], fmt)?);
            if with_mask {
                mask.push(rec[n + 1].parse::<bool>().map_err(|_| Error::Format {
                    format: fmt,
                    reason: format!("not a boolean: `{}`", &rec[n + 1]),
                })?);
            }
        }
        if values.len() != grid_len(&self.axes) {
            return Err(Error::Format {
                format: fmt,
                reason: format!("{} rows for {} nodes", values.len(), grid_len(&self.axes)),
            });
        }
        Ok((prov, values, mask))
    }
}

/// Nodes whose sensitivity does not exceed `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSet {
    pub threshold: f64,
    pub fraction: f64,
    #[serde(skip)]
    pub mask: Vec<bool>,
}

pub fn extract_robust_set(field: &S2Field, threshold: f64) -> Result<RobustSet> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid(
            "threshold",
            format!("must be non-negative, got {threshold}"),
        ));
    }
    let mask: Vec<bool> = field.values.iter().map(|v| *v <= threshold).collect();
    let fraction = if mask.is_empty() {
        0.0
    } else {
        mask.iter().filter(|m| **m).count() as f64 / mask.len() as f64
    };
    Ok(RobustSet {
        threshold,
        fraction,
        mask,
    })
}

impl RobustSet {
    /// Field rows with an extra `robust` column.
    pub fn write_csv<W: Write>(&self, w: W, field: &S2Field, provenance: &Provenance) -> Result<()> {
        if self.mask.len() != field.len() {
            return Err(Error::Dimension {
                expected: field.len(),
                got: self.mask.len(),
            });
        }
        field.write_table(w, provenance, Some(&self.mask))
    }

    pub fn read_csv<R: BufRead>(r: R, field_header: &S2Field, threshold: f64) -> Result<(Provenance, Self)> {
        let (prov, _, mask) = field_header.read_table(r, true)?;
        let fraction = if mask.is_empty() {
            0.0
        } else {
            mask.iter().filter(|m| **m).count() as f64 / mask.len() as f64
        };
        Ok((
            prov,
            RobustSet {
                threshold,
                fraction,
                mask,
            },
        ))
    }
}

/// Top eigenvalue of the sample covariance of `y_T`, divided by `eps^2`,
/// for each `eps`. Batches use `config` with point-mass initial state `x0`.
pub fn s2_empirical_limit(
    model: &dyn VectorField,
    x0: &[f64],
    epsilons: &[f64],
    config: &SimulationConfig,
) -> Result<Vec<f64>> {
    let init = InitialCondition::fixed(x0);
    epsilons
        .iter()
        .map(|&eps| {
            if !(eps > 0.0) {
                return Err(Error::invalid("epsilon", "must be positive"));
            }
            let batch = sample_coupled(model, &init, eps, config)?;
            let cov = sample_covariance(&batch.y_samples)?;
            Ok(max_eigenvalue(&cov) / (eps * eps))
        })
        .collect()
}

/// Unbiased sample covariance of row vectors.
pub fn sample_covariance(samples: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::EmptyBatch);
    }
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    Ok(cov / (n - 1) as f64)
}
