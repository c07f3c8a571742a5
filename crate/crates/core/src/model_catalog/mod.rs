//! Drift/diffusion models and the compiled-in catalog.
//!
//! A model supplies `u(x, t)`, `grad u(x, t)` and `sigma(x, t)` for an
//! Ito SDE `dy = u dt + eps sigma dW` with `n` state and `m` noise
//! dimensions. Hot paths write into caller-provided row-major buffers;
//! [`eval_model`] wraps them into `nalgebra` types and checks finiteness.

mod jet;
mod linear;
mod scalar;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::BoundConstants;
use crate::error::{Error, Result};

pub use jet::{MeanderingJet, MeanderingJetParams};
pub use linear::{Brownian, LinearAdditive};
pub use scalar::{LinearMultiplicative, OrnsteinUhlenbeck, Sine};

/// Shared handle to a catalog model.
pub type Model = Arc<dyn VectorField>;

/// Axis-aligned box in state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        BoxDomain {
            lower: vec![lo; n],
            upper: vec![hi; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

pub trait VectorField: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim_state(&self) -> usize;
    fn dim_noise(&self) -> usize;

    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// Row-major `n x n`, `out[i * n + j] = d u_i / d x_j`.
    fn drift_gradient(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// Row-major `n x m`.
    fn diffusion(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// `out[k * n * m + i * m + j] = d sigma_ij / d x_k`. Defaults to central
    /// differences of [`VectorField::diffusion`].
    fn diffusion_gradient(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let n = self.dim_state();
        let nm = n * self.dim_noise();
        let mut xp = x.to_vec();
        let mut plus = vec![0.0; nm];
        let mut minus = vec![0.0; nm];
        for k in 0..n {
            let h = 1e-6 * x[k].abs().max(1.0);
            xp[k] = x[k] + h;
            self.diffusion(&xp, t, &mut plus);
            xp[k] = x[k] - h;
            self.diffusion(&xp, t, &mut minus);
            xp[k] = x[k];
            for idx in 0..nm {
                out[k * nm + idx] = (plus[idx] - minus[idx]) / (2.0 * h);
            }
        }
    }

    /// Closed-form flow map, when one is known.
    fn analytic_flow(&self, _x: &[f64], _t: f64) -> Option<Vec<f64>> {
        None
    }

    fn analytic_flow_gradient(&self, _x: &[f64], _t: f64) -> Option<DMatrix<f64>> {
        None
    }

    /// Analytic upper bounds on the hypothesis constants over all of state space.
    fn constants(&self) -> BoundConstants;

    /// Region used for constant estimation and field grids.
    fn domain(&self) -> BoxDomain;
}

/// Model selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>) -> Self {
        ModelSpec {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

pub const BUILTIN_NAMES: &[&str] = &[
    "sine",
    "linear_multiplicative",
    "meandering_jet",
    "ornstein_uhlenbeck",
    "brownian",
    "linear_additive",
];

/// Pulls named parameters out of a spec, rejecting unknown keys.
struct Params<'a> {
    spec: &'a ModelSpec,
}

impl<'a> Params<'a> {
    fn new(spec: &'a ModelSpec, allowed: &[&str]) -> Result<Self> {
        if let Some(bad) = spec.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::invalid(
                bad.clone(),
                format!("not a parameter of model `{}`", spec.name),
            ));
        }
        for (k, v) in &spec.params {
            if !v.is_finite() {
                return Err(Error::invalid(k.clone(), "must be finite"));
            }
        }
        Ok(Params { spec })
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.spec.params.get(key).copied().unwrap_or(default)
    }
}

/// Builds a catalog model from its name and parameter map.
pub fn builtin_model(spec: &ModelSpec) -> Result<Model> {
    let model: Model = match spec.name.as_str() {
        "sine" => {
            Params::new(spec, &[])?;
            Arc::new(Sine)
        }
        "linear_multiplicative" => {
            Params::new(spec, &[])?;
            Arc::new(LinearMultiplicative)
        }
        "ornstein_uhlenbeck" => {
            let p = Params::new(spec, &["a"])?;
            Arc::new(OrnsteinUhlenbeck::new(p.get("a", 1.0))?)
        }
        "brownian" => {
            let p = Params::new(spec, &["dim"])?;
            let dim = p.get("dim", 1.0);
            if dim < 1.0 || dim.fract() != 0.0 {
                return Err(Error::invalid("dim", "must be a positive integer"));
            }
            Arc::new(Brownian::new(dim as usize))
        }
        "linear_additive" => {
            let keys = linear::LINEAR_ADDITIVE_KEYS;
            let p = Params::new(spec, keys)?;
            let defaults = LinearAdditive::default();
            let d = defaults.coefficients();
            let vals: Vec<f64> = keys.iter().zip(d.iter()).map(|(k, &v)| p.get(k, v)).collect();
            Arc::new(LinearAdditive::from_coefficients(&vals))
        }
        "meandering_jet" => {
            let p = Params::new(spec, &["c", "A", "K", "eps_mj", "c1", "k1", "l1"])?;
            let d = MeanderingJetParams::default();
            Arc::new(MeanderingJet::new(MeanderingJetParams {
                c: p.get("c", d.c),
                a: p.get("A", d.a),
                k: p.get("K", d.k),
                eps_mj: p.get("eps_mj", d.eps_mj),
                c1: p.get("c1", d.c1),
                k1: p.get("k1", d.k1),
                l1: p.get("l1", d.l1),
            }))
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(model)
}

/// Bundled evaluation of a model at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEvaluation {
    pub u: DVector<f64>,
    pub grad_u: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

pub fn eval_model(model: &dyn VectorField, x: &[f64], t: f64) -> Result<ModelEvaluation> {
    let n = model.dim_state();
    let m = model.dim_noise();
    if x.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x.len(),
        });
    }
    let mut u = vec![0.0; n];
    let mut g = vec![0.0; n * n];
    let mut s = vec![0.0; n * m];
    model.drift(x, t, &mut u);
    model.drift_gradient(x, t, &mut g);
    model.diffusion(x, t, &mut s);
    for (what, vals) in [("drift", &u), ("drift_gradient", &g), ("diffusion", &s)] {
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what,
                point: x.to_vec(),
                t,
            });
        }
    }
    Ok(ModelEvaluation {
        u: DVector::from_vec(u),
        grad_u: DMatrix::from_row_slice(n, n, &g),
        sigma: DMatrix::from_row_slice(n, m, &s),
    })
}

/// Central-difference Jacobian of the drift; test and estimation helper.
pub fn finite_difference_drift_gradient(model: &dyn VectorField, x: &[f64], t: f64) -> DMatrix<f64> {
    let n = model.dim_state();
    let mut out = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        model.drift(&xp, t, &mut plus);
        xp[j] = x[j] - h;
        model.drift(&xp, t, &mut minus);
        xp[j] = x[j];
        for i in 0..n {
            out[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    out
}
