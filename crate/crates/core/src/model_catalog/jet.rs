use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{BoxDomain, VectorField};
use crate::bounds::BoundConstants;

/// Parameters of the unsteady meandering jet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanderingJetParams {
    /// Phase speed of the primary wave.
    pub c: f64,
    /// Primary amplitude.
    pub a: f64,
    /// Primary wavenumber along `y1`.
    pub k: f64,
    /// Perturbation amplitude.
    pub eps_mj: f64,
    /// Perturbation phase speed in the co-moving frame.
    pub c1: f64,
    pub k1: f64,
    pub l1: f64,
}

impl Default for MeanderingJetParams {
    fn default() -> Self {
        MeanderingJetParams {
            c: 0.5,
            a: 1.0,
            k: 4.0,
            eps_mj: 0.3,
            c1: PI,
            k1: 1.0,
            l1: 2.0,
        }
    }
}

/// Kinematic travelling wave with an oscillatory perturbation, driven by
/// noise on the phase speed `c` and amplitude `A`.
#[derive(Debug, Clone)]
pub struct MeanderingJet {
    p: MeanderingJetParams,
}

impl MeanderingJet {
    pub fn new(p: MeanderingJetParams) -> Self {
        MeanderingJet { p }
    }

    pub fn params(&self) -> &MeanderingJetParams {
        &self.p
    }
}

struct Trig {
    s_ky1: f64,
    c_ky1: f64,
    s_y2: f64,
    c_y2: f64,
    s_ph: f64,
    c_ph: f64,
    s_ly2: f64,
    c_ly2: f64,
}

impl MeanderingJet {
    fn trig(&self, x: &[f64], t: f64) -> Trig {
        let p = &self.p;
        let (s_ky1, c_ky1) = (p.k * x[0]).sin_cos();
        let (s_y2, c_y2) = x[1].sin_cos();
        let (s_ph, c_ph) = (p.k1 * (x[0] - p.c1 * t)).sin_cos();
        let (s_ly2, c_ly2) = (p.l1 * x[1]).sin_cos();
        Trig {
            s_ky1,
            c_ky1,
            s_y2,
            c_y2,
            s_ph,
            c_ph,
            s_ly2,
            c_ly2,
        }
    }
}

impl VectorField for MeanderingJet {
    fn name(&self) -> &'static str {
        "meandering_jet"
    }
    fn dim_state(&self) -> usize {
        2
    }
    fn dim_noise(&self) -> usize {
        2
    }

    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let p = &self.p;
        let g = self.trig(x, t);
        out[0] = p.c - p.a * g.s_ky1 * g.c_y2 + p.eps_mj * p.l1 * g.s_ph * g.c_ly2;
        out[1] = p.a * p.k * g.c_ky1 * g.s_y2 + p.eps_mj * p.k1 * g.c_ph * g.s_ly2;
    }

    fn drift_gradient(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let p = &self.p;
        let g = self.trig(x, t);
        let e = p.eps_mj;
        out[0] = -p.a * p.k * g.c_ky1 * g.c_y2 + e * p.l1 * p.k1 * g.c_ph * g.c_ly2;
        out[1] = p.a * g.s_ky1 * g.s_y2 - e * p.l1 * p.l1 * g.s_ph * g.s_ly2;
        out[2] = -p.a * p.k * p.k * g.s_ky1 * g.s_y2 - e * p.k1 * p.k1 * g.s_ph * g.s_ly2;
        out[3] = p.a * p.k * g.c_ky1 * g.c_y2 + e * p.k1 * p.l1 * g.c_ph * g.c_ly2;
    }

    fn diffusion(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let g = self.trig(x, t);
        out[0] = 1.0;
        out[1] = g.s_ky1 * g.c_y2;
        out[2] = 0.0;
        out[3] = self.p.k * g.c_ky1 * g.s_y2;
    }

    fn diffusion_gradient(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let k = self.p.k;
        let g = self.trig(x, t);
        // d/dy1
        out[0] = 0.0;
        out[1] = k * g.c_ky1 * g.c_y2;
        out[2] = 0.0;
        out[3] = -k * k * g.s_ky1 * g.s_y2;
        // d/dy2
        out[4] = 0.0;
        out[5] = -g.s_ky1 * g.s_y2;
        out[6] = 0.0;
        out[7] = k * g.c_ky1 * g.c_y2;
    }

    /// Frobenius bounds from the amplitude of each trigonometric term.
    fn constants(&self) -> BoundConstants {
        let p = &self.p;
        let (a, k, e, k1, l1) = (p.a.abs(), p.k.abs(), p.eps_mj.abs(), p.k1.abs(), p.l1.abs());
        let frob = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let grad = frob(&[
            a * k + e * l1 * k1,
            a + e * l1 * l1,
            a * k * k + e * k1 * k1,
            a * k + e * k1 * l1,
        ]);
        let d12 = a * k + e * l1 * l1 * k1;
        let e12 = a * k * k + e * k1 * k1 * l1;
        let hess = frob(&[
            a * k * k + e * l1 * k1 * k1,
            d12,
            d12,
            a + e * l1 * l1 * l1,
            a * k * k * k + e * k1 * k1 * k1,
            e12,
            e12,
            a * k + e * k1 * l1 * l1,
        ]);
        let sigma = (2.0 + k * k).sqrt();
        let grad_sigma = frob(&[k, 1.0, k * k, k]);
        let drift_sup = frob(&[p.c.abs() + a + e * l1, a * k + e * k1]);
        BoundConstants::new(2, grad, hess, grad_sigma, sigma, drift_sup + sigma)
    }

    fn domain(&self) -> BoxDomain {
        BoxDomain::cube(2, 0.0, PI)
    }
}
