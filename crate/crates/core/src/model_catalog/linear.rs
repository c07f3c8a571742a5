use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{BoxDomain, VectorField};
use crate::bounds::BoundConstants;
use crate::linalg::spectral_norm;

/// `dy = eps dW` in `n` dimensions.
#[derive(Debug, Clone, Copy)]
pub struct Brownian {
    dim: usize,
}

impl Brownian {
    pub fn new(dim: usize) -> Self {
        Brownian { dim: dim.max(1) }
    }
}

impl VectorField for Brownian {
    fn name(&self) -> &'static str {
        "brownian"
    }
    fn dim_state(&self) -> usize {
        self.dim
    }
    fn dim_noise(&self) -> usize {
        self.dim
    }
    fn drift(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn drift_gradient(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn diffusion(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = 1.0;
        }
    }
    fn diffusion_gradient(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn analytic_flow(&self, x: &[f64], _t: f64) -> Option<Vec<f64>> {
        Some(x.to_vec())
    }
    fn analytic_flow_gradient(&self, _x: &[f64], _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(self.dim, self.dim))
    }
    fn constants(&self) -> BoundConstants {
        BoundConstants::new(self.dim, 0.0, 0.0, 0.0, 1.0, 1.0)
    }
    fn domain(&self) -> BoxDomain {
        BoxDomain::cube(self.dim, -PI, PI)
    }
}

pub(super) const LINEAR_ADDITIVE_KEYS: &[&str] = &["a11", "a12", "a21", "a22", "b1", "b2", "s11", "s12", "s21", "s22"];

/// `dy = (A y + b) dt + eps S dW` in two dimensions, with constant `A`, `b`, `S`.
#[derive(Debug, Clone)]
pub struct LinearAdditive {
    a: [f64; 4],
    b: [f64; 2],
    s: [f64; 4],
}

impl Default for LinearAdditive {
    /// A damped rotation with a constant offset and correlated noise.
    fn default() -> Self {
        LinearAdditive {
            a: [-0.5, 1.0, -1.0, -0.5],
            b: [0.2, -0.1],
            s: [1.0, 0.0, 0.5, 1.0],
        }
    }
}

impl LinearAdditive {
    /// Coefficients in [`LINEAR_ADDITIVE_KEYS`] order.
    pub fn from_coefficients(c: &[f64]) -> Self {
        LinearAdditive {
            a: [c[0], c[1], c[2], c[3]],
            b: [c[4], c[5]],
            s: [c[6], c[7], c[8], c[9]],
        }
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.a.iter().chain(&self.b).chain(&self.s).copied().collect()
    }

    pub fn drift_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &self.a)
    }

    pub fn noise_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &self.s)
    }
}

impl VectorField for LinearAdditive {
    fn name(&self) -> &'static str {
        "linear_additive"
    }
    fn dim_state(&self) -> usize {
        2
    }
    fn dim_noise(&self) -> usize {
        2
    }
    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = self.a[0] * x[0] + self.a[1] * x[1] + self.b[0];
        out[1] = self.a[2] * x[0] + self.a[3] * x[1] + self.b[1];
    }
    fn drift_gradient(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.a);
    }
    fn diffusion(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.s);
    }
    fn diffusion_gradient(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn constants(&self) -> BoundConstants {
        let a = spectral_norm(&self.drift_matrix());
        let s = spectral_norm(&self.noise_matrix());
        let b = DVector::from_row_slice(&self.b).norm();
        BoundConstants::new(2, a, 0.0, 0.0, s, a + b + s)
    }
    fn domain(&self) -> BoxDomain {
        BoxDomain::cube(2, -PI, PI)
    }
}
