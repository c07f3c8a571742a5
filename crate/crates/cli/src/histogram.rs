//! Binned sample densities with the linearised Gaussian density on the
//! same bins.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use linsde::io::{csv_reader, csv_writer};
use linsde::{GaussianState, Provenance, SamplePairBatch};

/// Upper limit on Freedman-Diaconis bin counts per axis.
pub const MAX_BINS: usize = 200;

/// Freedman-Diaconis bin count for `data` over `[lo, hi]`.
pub fn freedman_diaconis_bins(data: &[f64], lo: f64, hi: f64) -> usize {
    let n = data.len();
    if n < 2 || !(hi > lo) {
        return 1;
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let (a, b) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[a] + (sorted[b] - sorted[a]) * (pos - a as f64)
    };
    let iqr = q(0.75) - q(0.25);
    if !(iqr > 0.0) {
        return 1;
    }
    let width = 2.0 * iqr / (n as f64).cbrt();
    ((hi - lo) / width).ceil().clamp(1.0, MAX_BINS as f64) as usize
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        // degenerate sample: one unit-width bin around the value
        (lo - 0.5, lo + 0.5)
    }
}

fn bin_of(x: f64, lo: f64, width: f64, bins: usize) -> usize {
    (((x - lo) / width) as usize).min(bins - 1)
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    if var > 0.0 {
        (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub dim: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub center: f64,
    pub y_density: f64,
    pub l_density: f64,
    pub gaussian_density: f64,
}

/// One block of rows per state component, sharing bins between `y` and `l`.
pub fn marginals(batch: &SamplePairBatch, law: &GaussianState, bins: Option<usize>) -> Vec<MarginalRow> {
    let n = batch.len() as f64;
    let mut rows = Vec::new();
    for k in 0..batch.dim() {
        let ys: Vec<f64> = batch.y_samples.iter().map(|s| s[k]).collect();
        let ls: Vec<f64> = batch.l_samples.iter().map(|s| s[k]).collect();
        let (lo, hi) = range(ys.iter().chain(&ls).copied());
        let count = bins.unwrap_or_else(|| freedman_diaconis_bins(&ys, lo, hi));
        let width = (hi - lo) / count as f64;
        let mut y_counts = vec![0usize; count];
        let mut l_counts = vec![0usize; count];
        for &v in &ys {
            y_counts[bin_of(v, lo, width, count)] += 1;
        }
        for &v in &ls {
            l_counts[bin_of(v, lo, width, count)] += 1;
        }
        for b in 0..count {
            let center = lo + (b as f64 + 0.5) * width;
            rows.push(MarginalRow {
                dim: k + 1,
                bin_lo: lo + b as f64 * width,
                bin_hi: lo + (b + 1) as f64 * width,
                center,
                y_density: y_counts[b] as f64 / (n * width),
                l_density: l_counts[b] as f64 / (n * width),
                gaussian_density: normal_pdf(center, law.mean[k], law.covariance[(k, k)]),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub x1: f64,
    pub x2: f64,
    pub y_density: f64,
    pub l_density: f64,
    pub gaussian_density: f64,
}

/// Two-dimensional histogram on bin centres, first axis slowest.
pub fn joint(batch: &SamplePairBatch, law: &GaussianState, bins: Option<usize>) -> Vec<JointRow> {
    assert_eq!(batch.dim(), 2, "joint histogram needs a 2-D state");
    let n = batch.len() as f64;
    let axis = |k: usize| {
        let all: Vec<f64> = batch.y_samples.iter().chain(&batch.l_samples).map(|s| s[k]).collect();
        let ys: Vec<f64> = batch.y_samples.iter().map(|s| s[k]).collect();
        let (lo, hi) = range(all.into_iter());
        let count = bins.unwrap_or_else(|| freedman_diaconis_bins(&ys, lo, hi));
        (lo, (hi - lo) / count as f64, count)
    };
    let (a, b) = (axis(0), axis(1));
    let index = |s: &Vec<f64>| bin_of(s[0], a.0, a.1, a.2) * b.2 + bin_of(s[1], b.0, b.1, b.2);
    let mut y_counts = vec![0usize; a.2 * b.2];
    let mut l_counts = vec![0usize; a.2 * b.2];
    for s in &batch.y_samples {
        y_counts[index(s)] += 1;
    }
    for s in &batch.l_samples {
        l_counts[index(s)] += 1;
    }
    let area = a.1 * b.1;
    let mut rows = Vec::with_capacity(a.2 * b.2);
    for i in 0..a.2 {
        for j in 0..b.2 {
            let x1 = a.0 + (i as f64 + 0.5) * a.1;
            let x2 = b.0 + (j as f64 + 0.5) * b.1;
            let idx = i * b.2 + j;
            rows.push(JointRow {
                x1,
                x2,
                y_density: y_counts[idx] as f64 / (n * area),
                l_density: l_counts[idx] as f64 / (n * area),
                gaussian_density: law.density(&nalgebra::DVector::from_vec(vec![x1, x2])).unwrap_or(0.0),
            });
        }
    }
    rows
}

pub fn write_rows<T: Serialize, W: Write>(w: W, provenance: &Provenance, rows: &[T]) -> linsde::Result<()> {
    let mut w = csv_writer(w, provenance)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>, R: BufRead>(r: R) -> linsde::Result<(Provenance, Vec<T>)> {
    let (prov, mut rdr) = csv_reader(r)?;
    let rows = rdr.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok((prov, rows))
}
