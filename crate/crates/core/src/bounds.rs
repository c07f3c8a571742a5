//! Explicit strong-error bound for the linearisation.
//!
//! For `r >= 1` the r-th moment of `|y_t - l_t|` is bounded by
//!
//! ```text
//! (Khh^r + Kgs^r) D1 eps^(2r) + Khh^r D2 delta_2r^(2r) + Kgs^r D3 delta_r^r eps^r
//! ```
//!
//! with `Khh` bounding the drift Hessian and `Kgs` the diffusion gradient.
//! `D1..D3` are assembled from the lemma constants `H1`, `H2` and a
//! Burkholder-Davis-Gundy constant `G_p`, whose value is a policy choice
//! ([`BdgPolicy`]).

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::linalg::{linspace, spectral_norm};
use crate::model_catalog::{BoxDomain, VectorField};
use crate::rng;

/// How `G_p` is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum BdgPolicy {
    /// `(p / (p - 1))^p p^(p/2)` for `p > 1`, and `4` for `p <= 1`.
    #[default]
    Classical,
    /// A user-supplied constant for every `p`.
    Fixed(f64),
}

impl BdgPolicy {
    pub fn constant(&self, p: f64) -> f64 {
        match *self {
            BdgPolicy::Classical if p > 1.0 => (p / (p - 1.0)).powf(p) * p.powf(0.5 * p),
            BdgPolicy::Classical => 4.0,
            BdgPolicy::Fixed(g) => g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub n: usize,
    /// `sup |grad u|`.
    pub k_grad_u: f64,
    /// `sup |grad grad u|`.
    pub k_hess_u: f64,
    /// `sup |grad sigma|`.
    pub k_grad_sigma: f64,
    /// `sup |sigma|`.
    pub k_sigma: f64,
    /// Linear-growth constant.
    pub k_linear_growth: f64,
    #[serde(default)]
    pub bdg: BdgPolicy,
    /// Sampled suprema (lower estimates) rather than analytic bounds.
    #[serde(default)]
    pub estimated: bool,
}

impl BoundConstants {
    pub fn new(n: usize, k_grad_u: f64, k_hess_u: f64, k_grad_sigma: f64, k_sigma: f64, k_linear_growth: f64) -> Self {
        BoundConstants {
            n,
            k_grad_u,
            k_hess_u,
            k_grad_sigma,
            k_sigma,
            k_linear_growth,
            bdg: BdgPolicy::Classical,
            estimated: false,
        }
    }

    pub fn with_bdg(mut self, bdg: BdgPolicy) -> Self {
        self.bdg = bdg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("k_grad_u", self.k_grad_u),
            ("k_hess_u", self.k_hess_u),
            ("k_grad_sigma", self.k_grad_sigma),
            ("k_sigma", self.k_sigma),
            ("k_linear_growth", self.k_linear_growth),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) {
                return Err(Error::invalid(name, "must be non-negative"));
            }
        }
        if self.n == 0 {
            return Err(Error::invalid("n", "state dimension must be positive"));
        }
        if let BdgPolicy::Fixed(g) = self.bdg {
            if !(g > 0.0) {
                return Err(Error::invalid("bdg", "BDG constant must be positive"));
            }
        }
        Ok(())
    }

    fn bdg(&self, p: f64) -> f64 {
        self.bdg.constant(p)
    }
}

/// `M_r = 2^(r/2) Gamma((r+1)/2) / sqrt(pi)`, the r-th absolute moment of a
/// standard normal.
pub fn moment_constant(r: f64) -> f64 {
    assert!(r >= 0.0, "moment order must be non-negative");
    2f64.powf(0.5 * r) * gamma(0.5 * (r + 1.0)) / std::f64::consts::PI.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaConstants {
    pub h1: f64,
    pub h2: f64,
    pub overflow: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub overflow: bool,
}

/// `3^(q-1) K_grad_u^q t^q`, the Gronwall exponent shared by every constant.
fn gronwall_exponent(q: f64, t: f64, c: &BoundConstants) -> f64 {
    3f64.powf(q - 1.0) * c.k_grad_u.powf(q) * t.powf(q)
}

/// `H1(q, t) * t^shift`, folding the power of `t` in before evaluation so
/// that removable singularities at `t = 0` stay finite.
fn h1_shifted(q: f64, t: f64, shift: f64, c: &BoundConstants) -> f64 {
    if c.k_sigma == 0.0 {
        return 0.0;
    }
    let n = c.n as f64;
    3f64.powf(q - 1.0)
        * n.powf(1.5 * q)
        * c.k_sigma.powf(0.5 * q)
        * c.bdg(0.5 * q)
        * t.powf(0.5 * q + 1.0 + shift)
        * gronwall_exponent(q, t, c).exp()
}

fn h2_shifted(q: f64, t: f64, shift: f64, c: &BoundConstants) -> f64 {
    3f64.powf(q - 1.0) * t.powf(1.0 + shift) * gronwall_exponent(q, t, c).exp()
}

/// Lemma constants `(H1, H2)` for `q >= 1`. Both are non-decreasing in `t`.
pub fn lemma_constants(q: f64, t: f64, c: &BoundConstants) -> Result<LemmaConstants> {
    if !(q >= 1.0) {
        return Err(Error::invalid("q", "must be at least 1"));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid("t", "must be non-negative"));
    }
    let h1 = h1_shifted(q, t, 0.0, c);
    let h2 = h2_shifted(q, t, 0.0, c);
    Ok(LemmaConstants {
        h1,
        h2,
        overflow: h1.is_infinite() || h2.is_infinite(),
    })
}

/// Theorem constants `(D1, D2, D3)` for `r >= 1`.
///
/// `D3` and the second branch of `K_M` carry `t^(r/2 - 1)`, singular at
/// `t = 0` for `r < 2`; the accompanying `H` factor carries `t`, so the product
/// is evaluated as a single power and is `0` at `t = 0`.
pub fn theorem_constants(r: f64, t: f64, c: &BoundConstants) -> Result<TheoremConstants> {
    if !(r >= 1.0) {
        return Err(Error::invalid("r", "must be at least 1"));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid("t", "must be non-negative"));
    }
    let n = c.n as f64;
    let pre = 3f64.powf(r - 1.0);
    let growth = gronwall_exponent(r, t, c).exp();
    let g = c.bdg(0.5 * r);

    let km_first = t.powf(r - 1.0) * n.powf(0.5 * r) * h1_shifted(2.0 * r, t, 0.0, c) / 2f64.powf(r);
    let km_second = g * h1_shifted(r, t, 0.5 * r - 1.0, c);
    let k_m = km_first.max(km_second);

    let d1 = if k_m == 0.0 { 0.0 } else { pre * growth * k_m };
    let d2 = pre * t.powf(r - 1.0) * n.powf(0.5 * r) * h2_shifted(2.0 * r, t, 0.0, c) * growth;
    let d3 = pre * g * h2_shifted(r, t, 0.5 * r - 1.0, c) * growth;
    Ok(TheoremConstants {
        d1,
        d2,
        d3,
        overflow: [d1, d2, d3].iter().any(|v| v.is_infinite()),
    })
}

/// Three-term evaluation of the bound, with its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub r: f64,
    pub t: f64,
    pub epsilon: f64,
    pub delta_r: f64,
    pub delta_2r: f64,
    pub constants: BoundConstants,
    pub d: TheoremConstants,
    pub term_ongoing: f64,
    pub term_initial: f64,
    pub term_cross: f64,
    pub total: f64,
    pub overflow: bool,
}

/// `coef * value`, where a zero coefficient switches the term off even if
/// `value` overflowed.
fn gated(coef: f64, value: f64) -> f64 {
    if coef == 0.0 {
        0.0
    } else {
        coef * value
    }
}

pub fn bound_rhs(
    r: f64,
    t: f64,
    epsilon: f64,
    delta_r: f64,
    delta_2r: f64,
    c: &BoundConstants,
) -> Result<BoundBreakdown> {
    c.validate()?;
    for (name, v) in [("epsilon", epsilon), ("delta_r", delta_r), ("delta_2r", delta_2r)] {
        if !(v >= 0.0) {
            return Err(Error::invalid(name, "must be non-negative"));
        }
    }
    let d = theorem_constants(r, t, c)?;
    let khh = c.k_hess_u.powf(r);
    let kgs = c.k_grad_sigma.powf(r);

    let term_ongoing = gated(khh + kgs, gated(epsilon.powf(2.0 * r), d.d1));
    let term_initial = gated(khh, gated(delta_2r.powf(2.0 * r), d.d2));
    let term_cross = gated(kgs, gated(delta_r.powf(r) * epsilon.powf(r), d.d3));
    let total = term_ongoing + term_initial + term_cross;
    Ok(BoundBreakdown {
        r,
        t,
        epsilon,
        delta_r,
        delta_2r,
        constants: c.clone(),
        d,
        term_ongoing,
        term_initial,
        term_cross,
        total,
        overflow: total.is_infinite(),
    })
}

/// `(delta_r, delta_2r)` for a Gaussian initial condition centred on the
/// reference point. Exact in one dimension; in `n` dimensions the trace
/// bound `delta_r^r <= n^(3r/2 - 1) M_r tr(Sigma0)^(r/2)` is used.
pub fn gaussian_deltas(r: f64, covariance: &DMatrix<f64>) -> (f64, f64) {
    let n = covariance.nrows() as f64;
    let tr = covariance.trace().max(0.0);
    let delta = |q: f64| {
        let power = n.powf(1.5 * q - 1.0) * moment_constant(q) * tr.powf(0.5 * q);
        power.powf(1.0 / q)
    };
    (delta(r), delta(2.0 * r))
}

/// Sup-norm of a third-order tensor given as `n` matrix slices
/// `T_k = d M / d x_k`: `sup_{|v| = 1} |sum_k v_k T_k|`, sampled over
/// directions (exact for `n = 1`).
fn tensor_norm(slices: &[DMatrix<f64>], directions: &[Vec<f64>]) -> f64 {
    if slices.len() == 1 {
        return spectral_norm(&slices[0]);
    }
    directions
        .iter()
        .map(|v| {
            let combo = slices
                .iter()
                .zip(v)
                .fold(DMatrix::zeros(slices[0].nrows(), slices[0].ncols()), |acc, (s, &w)| {
                    acc + s * w
                });
            spectral_norm(&combo)
        })
        .fold(0.0, f64::max)
}

fn unit_directions(n: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0]],
        2 => (0..64)
            .map(|i| {
                let a = std::f64::consts::PI * i as f64 / 64.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut dirs: Vec<Vec<f64>> = (0..n)
                .map(|k| (0..n).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
                .collect();
            let mut r = rng::stream(0x5eed_d1e5, 0);
            for _ in 0..64 {
                let v: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                dirs.push(v.into_iter().map(|x| x / norm).collect());
            }
            dirs
        }
    }
}

/// Sampled suprema of the hypothesis constants over `domain x times`.
///
/// A tensor grid with `samples_per_axis` points per axis plus a fixed random
/// jitter set is evaluated; the Hessian of `u` and gradient of `sigma` come
/// from central differences. Results are lower estimates of the true
/// suprema and are flagged `estimated`.
pub fn estimate_constants(
    model: &dyn VectorField,
    domain: &BoxDomain,
    samples_per_axis: usize,
    times: &[f64],
) -> Result<BoundConstants> {
    let n = model.dim_state();
    let m = model.dim_noise();
    if domain.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: domain.dim(),
        });
    }
    if samples_per_axis == 0 {
        return Err(Error::invalid("samples_per_axis", "must be positive"));
    }
    let times: Vec<f64> = if times.is_empty() { vec![0.0] } else { times.to_vec() };

    let axes: Vec<Vec<f64>> = (0..n)
        .map(|k| linspace(domain.lower[k], domain.upper[k], samples_per_axis))
        .collect();
    let grid_size = samples_per_axis.pow(n as u32);
    let mut points: Vec<Vec<f64>> = (0..grid_size)
        .map(|mut idx| {
            let mut p = vec![0.0; n];
            for k in (0..n).rev() {
                p[k] = axes[k][idx % samples_per_axis];
                idx /= samples_per_axis;
            }
            p
        })
        .collect();
    let mut jitter = rng::stream(0x0a11_ce5e, n as u64);
    for _ in 0..16 * n {
        points.push(
            (0..n)
                .map(|k| domain.lower[k] + (domain.upper[k] - domain.lower[k]) * jitter.random::<f64>())
                .collect(),
        );
    }

    let dirs = unit_directions(n);
    let mut k_grad_u = 0.0_f64;
    let mut k_hess_u = 0.0_f64;
    let mut k_grad_sigma = 0.0_f64;
    let mut k_sigma = 0.0_f64;
    let mut k_lin = 0.0_f64;

    let mut g = vec![0.0; n * n];
    let mut gp = vec![0.0; n * n];
    let mut gm = vec![0.0; n * n];
    let mut s = vec![0.0; n * m];
    let mut sp = vec![0.0; n * m];
    let mut sm = vec![0.0; n * m];
    let mut u = vec![0.0; n];

    for &t in &times {
        for x in &points {
            model.drift(x, t, &mut u);
            model.drift_gradient(x, t, &mut g);
            model.diffusion(x, t, &mut s);
            if u.iter().chain(&g).chain(&s).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "model",
                    point: x.clone(),
                    t,
                });
            }
            let grad = DMatrix::from_row_slice(n, n, &g);
            let sig = DMatrix::from_row_slice(n, m, &s);
            k_grad_u = k_grad_u.max(spectral_norm(&grad));
            let sig_norm = spectral_norm(&sig);
            k_sigma = k_sigma.max(sig_norm);
            let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u_norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            k_lin = k_lin.max((u_norm + sig_norm) / (1.0 + x_norm));

            let mut xp = x.clone();
            let mut hess_slices = Vec::with_capacity(n);
            let mut sigma_slices = Vec::with_capacity(n);
            for k in 0..n {
                let h = 1e-5 * x[k].abs().max(1.0);
                xp[k] = x[k] + h;
                model.drift_gradient(&xp, t, &mut gp);
                model.diffusion(&xp, t, &mut sp);
                xp[k] = x[k] - h;
                model.drift_gradient(&xp, t, &mut gm);
                model.diffusion(&xp, t, &mut sm);
                xp[k] = x[k];
                let dg: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                let ds: Vec<f64> = sp.iter().zip(&sm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                hess_slices.push(DMatrix::from_row_slice(n, n, &dg));
                sigma_slices.push(DMatrix::from_row_slice(n, m, &ds));
            }
            k_hess_u = k_hess_u.max(tensor_norm(&hess_slices, &dirs));
            k_grad_sigma = k_grad_sigma.max(tensor_norm(&sigma_slices, &dirs));
        }
    }

    // differences of exactly constant fields leave rounding noise
    let clean = |v: f64| if v < 1e-9 { 0.0 } else { v };
    Ok(BoundConstants {
        n,
        k_grad_u: clean(k_grad_u),
        k_hess_u: clean(k_hess_u),
        k_grad_sigma: clean(k_grad_sigma),
        k_sigma: clean(k_sigma),
        k_linear_growth: clean(k_lin),
        bdg: BdgPolicy::Classical,
        estimated: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_catalog::{builtin_model, ModelSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{E, PI};

    fn unit() -> BoundConstants {
        BoundConstants::new(1, 1.0, 1.0, 1.0, 1.0, 1.0).with_bdg(BdgPolicy::Fixed(1.0))
    }

    /// Gamma at positive integers and half-integers from factorials only.
    fn half_integer_gamma(x: f64) -> f64 {
        let twice = (2.0 * x).round() as u64;
        if twice.is_multiple_of(2) {
            (1..(twice / 2)).map(|k| k as f64).product()
        } else {
            // Gamma(k + 1/2) = (2k)! sqrt(pi) / (4^k k!)
            let k = (twice - 1) / 2;
            let num: f64 = (1..=2 * k).map(|j| j as f64).product();
            let den: f64 = 4f64.powi(k as i32) * (1..=k).map(|j| j as f64).product::<f64>();
            num / den * PI.sqrt()
        }
    }

    #[test]
    fn moment_constant_values() {
        assert_relative_eq!(moment_constant(2.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(moment_constant(1.0), (2.0 / PI).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(moment_constant(1.0), 0.797_885, epsilon = 1e-6);
        assert_relative_eq!(moment_constant(0.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(moment_constant(4.0), 3.0, epsilon = 1e-13);
    }

    #[test]
    fn moment_constant_against_factorial_gamma() {
        for r in 0..12 {
            let r = r as f64;
            let oracle = 2f64.powf(r / 2.0) * half_integer_gamma((r + 1.0) / 2.0) / PI.sqrt();
            assert_relative_eq!(moment_constant(r), oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn classical_bdg_policy() {
        let p = BdgPolicy::Classical;
        assert_eq!(p.constant(0.5), 4.0);
        assert_eq!(p.constant(1.0), 4.0);
        assert_relative_eq!(p.constant(2.0), 8.0, epsilon = 1e-12);
        assert_eq!(BdgPolicy::Fixed(2.5).constant(7.0), 2.5);
    }

    #[test]
    fn lemma_constants_at_zero_time() {
        let l = lemma_constants(1.0, 0.0, &unit()).unwrap();
        assert_eq!((l.h1, l.h2), (0.0, 0.0));
    }

    #[test]
    fn lemma_constants_unit_case() {
        let l = lemma_constants(1.0, 1.0, &unit()).unwrap();
        assert_relative_eq!(l.h1, E, epsilon = 1e-14);
        assert_relative_eq!(l.h2, E, epsilon = 1e-14);
        assert!(!l.overflow);
    }

    #[test]
    fn h1_vanishes_without_noise() {
        let mut c = unit();
        c.k_sigma = 0.0;
        for t in [0.0, 0.5, 10.0, 1e3] {
            assert_eq!(lemma_constants(2.0, t, &c).unwrap().h1, 0.0);
        }
    }

    #[test]
    fn lemma_overflow_flagged() {
        let l = lemma_constants(8.0, 50.0, &unit()).unwrap();
        assert!(l.overflow);
        assert!(l.h1.is_infinite());
    }

    #[test]
    fn lemma_rejects_small_q() {
        assert!(lemma_constants(0.5, 1.0, &unit()).is_err());
    }

    #[test]
    fn theorem_d2_unit_case() {
        let d = theorem_constants(1.0, 1.0, &unit()).unwrap();
        // H2(2, 1) = 3 e^3, times exp(K t) = e
        assert_relative_eq!(d.d2, 3.0 * E.powi(4), epsilon = 1e-10);
        assert_relative_eq!(d.d2, 163.79, epsilon = 5e-3);
    }

    #[test]
    fn theorem_constants_removable_limit() {
        for r in [1.0, 1.5, 2.0, 3.0] {
            let d = theorem_constants(r, 0.0, &unit()).unwrap();
            assert_eq!(d.d2, 0.0);
            assert_eq!(d.d3, 0.0);
            assert!(d.d1.is_finite());
            let tiny = theorem_constants(r, 1e-12, &unit()).unwrap();
            assert!(tiny.d2 < 1e-10 && tiny.d3 < 1e-5);
        }
    }

    #[test]
    fn d1_vanishes_without_noise() {
        let mut c = unit();
        c.k_sigma = 0.0;
        assert_eq!(theorem_constants(2.0, 1.0, &c).unwrap().d1, 0.0);
    }

    #[test]
    fn exact_linearisation_bound_is_zero() {
        let c = BoundConstants::new(2, 3.0, 0.0, 0.0, 2.0, 1.0);
        let b = bound_rhs(2.0, 1.0, 0.1, 0.2, 0.3, &c).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn additive_noise_has_no_cross_term() {
        let sine = builtin_model(&ModelSpec::new("sine")).unwrap().constants();
        let (rho, eps, r, t) = (0.05f64, 0.01, 1.0, 1.5);
        let d_r = (moment_constant(r) * rho.powf(r)).powf(1.0 / r);
        let d_2r = (moment_constant(2.0 * r) * rho.powf(2.0 * r)).powf(1.0 / (2.0 * r));
        let b = bound_rhs(r, t, eps, d_r, d_2r, &sine).unwrap();
        assert_eq!(b.term_cross, 0.0);
        let d = theorem_constants(r, t, &sine).unwrap();
        let expected = d.d1 * eps.powf(2.0 * r) + moment_constant(2.0 * r) * d.d2 * rho.powf(2.0 * r);
        assert_relative_eq!(b.total, expected, max_relative = 1e-12);
    }

    #[test]
    fn linear_drift_has_no_initial_term() {
        let mult = builtin_model(&ModelSpec::new("linear_multiplicative"))
            .unwrap()
            .constants();
        let (rho, eps, r, t) = (0.05, 0.01, 1.0, 1.0);
        let d_r = moment_constant(r) * rho;
        let b = bound_rhs(r, t, eps, d_r, 0.1, &mult).unwrap();
        assert_eq!(b.term_initial, 0.0);
        let d = theorem_constants(r, t, &mult).unwrap();
        let expected = d.d1 * eps * eps + moment_constant(r) * d.d3 * eps * rho;
        assert_relative_eq!(b.total, expected, max_relative = 1e-12);
    }

    #[test]
    fn scaling_identities() {
        let c = BoundConstants::new(2, 0.7, 1.3, 0.4, 1.1, 2.0);
        for r in [1.0, 1.5, 2.0, 3.0] {
            let a = bound_rhs(r, 0.8, 0.01, 0.03, 0.05, &c).unwrap();
            let b = bound_rhs(r, 0.8, 0.02, 0.03, 0.05, &c).unwrap();
            assert_relative_eq!(
                b.term_ongoing / a.term_ongoing,
                2f64.powf(2.0 * r),
                max_relative = 1e-12
            );
            assert_relative_eq!(b.term_cross / a.term_cross, 2f64.powf(r), max_relative = 1e-12);
            assert_eq!(a.term_initial, b.term_initial);
        }
    }

    #[test]
    fn gaussian_deltas_exact_in_one_dimension() {
        let rho = 0.1;
        let cov = DMatrix::from_element(1, 1, rho * rho);
        let (d1, d2) = gaussian_deltas(1.0, &cov);
        assert_relative_eq!(d1, moment_constant(1.0) * rho, max_relative = 1e-14);
        assert_relative_eq!(d2, rho, max_relative = 1e-14);
    }

    #[test]
    fn sine_constants_estimated() {
        let m = builtin_model(&ModelSpec::new("sine")).unwrap();
        let c = estimate_constants(m.as_ref(), &m.domain(), 41, &[0.0]).unwrap();
        assert_relative_eq!(c.k_grad_u, 1.0, epsilon = 1e-9);
        assert_relative_eq!(c.k_hess_u, 1.0, epsilon = 1e-6);
        assert_eq!(c.k_sigma, 1.0);
        assert_eq!(c.k_grad_sigma, 0.0);
        assert!(c.estimated);
    }

    #[test]
    fn brownian_constants_estimated() {
        let m = builtin_model(&ModelSpec::new("brownian").with("dim", 2.0)).unwrap();
        let c = estimate_constants(m.as_ref(), &m.domain(), 5, &[0.0, 1.0]).unwrap();
        assert_eq!((c.k_grad_u, c.k_hess_u, c.k_grad_sigma), (0.0, 0.0, 0.0));
        assert_eq!(c.k_sigma, 1.0);
    }

    #[test]
    fn multiplicative_constants_estimated() {
        let m = builtin_model(&ModelSpec::new("linear_multiplicative")).unwrap();
        let c = estimate_constants(m.as_ref(), &m.domain(), 41, &[0.0]).unwrap();
        assert_eq!(c.k_grad_u, 0.5);
        assert_eq!(c.k_hess_u, 0.0);
        assert_relative_eq!(c.k_grad_sigma, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn estimates_do_not_exceed_analytic_bounds() {
        let m = builtin_model(&ModelSpec::new("meandering_jet")).unwrap();
        let est = estimate_constants(m.as_ref(), &m.domain(), 15, &[0.0, 0.5, 1.0]).unwrap();
        let bound = m.constants();
        assert!(est.k_grad_u <= bound.k_grad_u);
        assert!(est.k_hess_u <= bound.k_hess_u);
        assert!(est.k_grad_sigma <= bound.k_grad_sigma);
        assert!(est.k_sigma <= bound.k_sigma);
        assert!(est.k_linear_growth <= bound.k_linear_growth);
    }

    proptest! {
        #[test]
        fn total_is_monotone(
            r in 1.0f64..4.0,
            t in 0.0f64..2.0,
            eps in 0.0f64..0.5,
            d1 in 0.0f64..0.5,
            d2 in 0.0f64..0.5,
            bump in 0.0f64..0.3,
        ) {
            let c = BoundConstants::new(1, 1.0, 1.0, 1.0, 1.0, 1.0);
            let base = bound_rhs(r, t, eps, d1, d2, &c).unwrap().total;
            for (tt, e, a, b) in [
                (t + bump, eps, d1, d2),
                (t, eps + bump, d1, d2),
                (t, eps, d1 + bump, d2),
                (t, eps, d1, d2 + bump),
            ] {
                let v = bound_rhs(r, tt, e, a, b, &c).unwrap().total;
                prop_assert!(v >= base * (1.0 - 1e-12));
            }
        }

        #[test]
        fn lemma_constants_non_decreasing_in_t(q in 1.0f64..6.0, t in 0.0f64..2.0, dt in 0.0f64..1.0) {
            let c = BoundConstants::new(2, 0.8, 0.0, 0.0, 1.3, 1.0);
            let a = lemma_constants(q, t, &c).unwrap();
            let b = lemma_constants(q, t + dt, &c).unwrap();
            prop_assert!(b.h1 >= a.h1 && b.h2 >= a.h2);
        }

        #[test]
        fn breakdown_terms_sum(r in 1.0f64..3.0, eps in 0.0f64..0.2, d in 0.0f64..0.2) {
            let c = BoundConstants::new(2, 0.5, 0.9, 0.3, 1.0, 1.0);
            let b = bound_rhs(r, 1.0, eps, d, d, &c).unwrap();
            prop_assert!(b.term_ongoing >= 0.0 && b.term_initial >= 0.0 && b.term_cross >= 0.0);
            prop_assert_eq!(b.total, b.term_ongoing + b.term_initial + b.term_cross);
        }
    }
}
