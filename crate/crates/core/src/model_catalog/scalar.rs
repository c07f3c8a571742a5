use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::{BoxDomain, VectorField};
use crate::bounds::BoundConstants;
use crate::error::{Error, Result};

/// `dy = sin(y) dt + eps dW`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sine;

impl VectorField for Sine {
    fn name(&self) -> &'static str {
        "sine"
    }
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_noise(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = x[0].sin();
    }
    fn drift_gradient(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = x[0].cos();
    }
    fn diffusion(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn diffusion_gradient(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = 0.0;
    }

    /// `2 atan(e^t tan(x/2))`, valid on `(-pi, pi)`.
    fn analytic_flow(&self, x: &[f64], t: f64) -> Option<Vec<f64>> {
        Some(vec![2.0 * (t.exp() * (0.5 * x[0]).tan()).atan()])
    }

    fn analytic_flow_gradient(&self, x: &[f64], t: f64) -> Option<DMatrix<f64>> {
        let tan_half = (0.5 * x[0]).tan();
        let sec2 = 1.0 + tan_half * tan_half;
        let growth = t.exp();
        let g = growth * sec2 / (1.0 + growth * growth * tan_half * tan_half);
        Some(DMatrix::from_element(1, 1, g))
    }

    fn constants(&self) -> BoundConstants {
        BoundConstants::new(1, 1.0, 1.0, 0.0, 1.0, 1.0)
    }

    fn domain(&self) -> BoxDomain {
        BoxDomain::cube(1, -PI, PI)
    }
}

/// `dy = y/2 dt + eps cos(y) dW`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearMultiplicative;

impl VectorField for LinearMultiplicative {
    fn name(&self) -> &'static str {
        "linear_multiplicative"
    }
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_noise(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = 0.5 * x[0];
    }
    fn drift_gradient(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = 0.5;
    }
    fn diffusion(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = x[0].cos();
    }
    fn diffusion_gradient(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = -x[0].sin();
    }
    fn analytic_flow(&self, x: &[f64], t: f64) -> Option<Vec<f64>> {
        Some(vec![(0.5 * t).exp() * x[0]])
    }
    fn analytic_flow_gradient(&self, _x: &[f64], t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, (0.5 * t).exp()))
    }
    fn constants(&self) -> BoundConstants {
        BoundConstants::new(1, 0.5, 0.0, 1.0, 1.0, 1.0)
    }
    fn domain(&self) -> BoxDomain {
        BoxDomain::cube(1, -PI, PI)
    }
}

/// `dy = -a y dt + eps dW`.
#[derive(Debug, Clone, Copy)]
pub struct OrnsteinUhlenbeck {
    rate: f64,
}

impl OrnsteinUhlenbeck {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::invalid("a", "mean-reversion rate must be positive"));
        }
        Ok(OrnsteinUhlenbeck { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Stationary-from-zero variance `(1 - e^{-2at}) / 2a` at unit noise.
    pub fn variance(&self, t: f64) -> f64 {
        (1.0 - (-2.0 * self.rate * t).exp()) / (2.0 * self.rate)
    }
}

impl VectorField for OrnsteinUhlenbeck {
    fn name(&self) -> &'static str {
        "ornstein_uhlenbeck"
    }
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_noise(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = -self.rate * x[0];
    }
    fn drift_gradient(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = -self.rate;
    }
    fn diffusion(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn diffusion_gradient(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn analytic_flow(&self, x: &[f64], t: f64) -> Option<Vec<f64>> {
        Some(vec![(-self.rate * t).exp() * x[0]])
    }
    fn analytic_flow_gradient(&self, _x: &[f64], t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, (-self.rate * t).exp()))
    }
    fn constants(&self) -> BoundConstants {
        BoundConstants::new(1, self.rate, 0.0, 0.0, 1.0, self.rate.max(1.0))
    }
    fn domain(&self) -> BoxDomain {
        BoxDomain::cube(1, -PI, PI)
    }
}
