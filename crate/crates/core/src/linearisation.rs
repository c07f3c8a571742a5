//! Gaussian law of the linearised SDE about a deterministic trajectory.
//!
//! The covariance is available two ways: from the Lyapunov ODE integrated
//! jointly with the flow and its gradient, and from Gauss-Legendre quadrature
//! of `L Lᵀ` with `L = (∇F)⁻¹ σ(F)`. The ODE path is the production path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{flow_at_times, matmul_into};
use crate::linalg::{check_psd, symmetrise, symmetrise_row_major, SINGULAR_CONDITION};
use crate::model_catalog::VectorField;
use crate::ode::{integrate, OdeSystem, Tolerance, DEFAULT_RTOL};

/// Dense flow nodes per unit time for the quadrature path.
pub const QUADRATURE_NODES_PER_UNIT_TIME: usize = 200;

const GAUSS_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GAUSS_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Mean and covariance of the linearised solution at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GaussianRecord", try_from = "GaussianRecord")]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub t: f64,
    pub epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct GaussianRecord {
    mean: Vec<f64>,
    /// Row-major.
    covariance: Vec<f64>,
    t: f64,
    epsilon: f64,
}

impl From<GaussianState> for GaussianRecord {
    fn from(g: GaussianState) -> Self {
        GaussianRecord {
            covariance: crate::linalg::to_row_major(&g.covariance),
            mean: g.mean.as_slice().to_vec(),
            t: g.t,
            epsilon: g.epsilon,
        }
    }
}

impl TryFrom<GaussianRecord> for GaussianState {
    type Error = Error;
    fn try_from(r: GaussianRecord) -> Result<Self> {
        let n = r.mean.len();
        if r.covariance.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: r.covariance.len(),
            });
        }
        Ok(GaussianState {
            mean: DVector::from_vec(r.mean),
            covariance: DMatrix::from_row_slice(n, n, &r.covariance),
            t: r.t,
            epsilon: r.epsilon,
        })
    }
}

impl GaussianState {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Density of the law at `x`; `None` when the covariance is singular.
    pub fn density(&self, x: &DVector<f64>) -> Option<f64> {
        let chol = self.covariance.clone().cholesky()?;
        let d = x - &self.mean;
        let z = chol.solve(&d);
        let det = chol.determinant();
        let n = self.dim() as f64;
        Some((-0.5 * d.dot(&z)).exp() / ((2.0 * std::f64::consts::PI).powf(n) * det).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Fixed,
    Gaussian,
}

/// Law of the initial state together with the linearisation reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "InitRecord", try_from = "InitRecord")]
pub struct InitialCondition {
    pub kind: InitKind,
    pub reference_point: DVector<f64>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Set when the covariance was given as `rho^2 I`.
    pub rho: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitRecord {
    kind: InitKind,
    reference_point: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariance: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
}

impl From<InitialCondition> for InitRecord {
    fn from(c: InitialCondition) -> Self {
        let reference_point = c.reference_point.as_slice().to_vec();
        match c.kind {
            InitKind::Fixed => InitRecord {
                kind: InitKind::Fixed,
                reference_point,
                mean: None,
                covariance: None,
                rho: None,
            },
            InitKind::Gaussian => InitRecord {
                kind: InitKind::Gaussian,
                reference_point,
                mean: Some(c.mean.as_slice().to_vec()),
                covariance: c.rho.is_none().then(|| crate::linalg::to_row_major(&c.covariance)),
                rho: c.rho,
            },
        }
    }
}

impl TryFrom<InitRecord> for InitialCondition {
    type Error = Error;
    fn try_from(r: InitRecord) -> Result<Self> {
        let n = r.reference_point.len();
        match r.kind {
            InitKind::Fixed => {
                if r.covariance.is_some() || r.rho.is_some() {
                    return Err(Error::invalid(
                        "init",
                        "a fixed initial condition takes no covariance or rho",
                    ));
                }
                if r.mean.as_ref().is_some_and(|m| m != &r.reference_point) {
                    return Err(Error::invalid(
                        "init.mean",
                        "must equal reference_point for a fixed initial condition",
                    ));
                }
                Ok(InitialCondition::fixed(&r.reference_point))
            }
            InitKind::Gaussian => {
                let mean = r.mean.unwrap_or_else(|| r.reference_point.clone());
                let cond = match (r.covariance, r.rho) {
                    (Some(_), Some(_)) => {
                        return Err(Error::invalid("init", "give either covariance or rho, not both"))
                    }
                    (None, Some(rho)) => {
                        let mut c = InitialCondition::isotropic(&mean, rho)?;
                        c.reference_point = DVector::from_vec(r.reference_point);
                        c
                    }
                    (Some(cov), None) => {
                        if cov.len() != n * n {
                            return Err(Error::Dimension {
                                expected: n * n,
                                got: cov.len(),
                            });
                        }
                        InitialCondition::gaussian(&r.reference_point, &mean, DMatrix::from_row_slice(n, n, &cov))?
                    }
                    (None, None) => {
                        return Err(Error::invalid(
                            "init",
                            "gaussian initial condition needs covariance or rho",
                        ))
                    }
                };
                cond.validate()?;
                Ok(cond)
            }
        }
    }
}

impl InitialCondition {
    /// Deterministic start at `x0`, which is also the reference point.
    pub fn fixed(x0: &[f64]) -> Self {
        let n = x0.len();
        InitialCondition {
            kind: InitKind::Fixed,
            reference_point: DVector::from_row_slice(x0),
            mean: DVector::from_row_slice(x0),
            covariance: DMatrix::zeros(n, n),
            rho: None,
        }
    }

    /// `Normal(mean, rho^2 I)` linearised about its mean.
    pub fn isotropic(mean: &[f64], rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::invalid(
                "rho",
                format!("must be finite and non-negative, got {rho}"),
            ));
        }
        let n = mean.len();
        Ok(InitialCondition {
            kind: InitKind::Gaussian,
            reference_point: DVector::from_row_slice(mean),
            mean: DVector::from_row_slice(mean),
            covariance: DMatrix::identity(n, n) * (rho * rho),
            rho: Some(rho),
        })
    }

    pub fn gaussian(reference_point: &[f64], mean: &[f64], covariance: DMatrix<f64>) -> Result<Self> {
        let c = InitialCondition {
            kind: InitKind::Gaussian,
            reference_point: DVector::from_row_slice(reference_point),
            mean: DVector::from_row_slice(mean),
            covariance,
            rho: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.reference_point.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.mean.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.mean.len(),
            });
        }
        if self.covariance.shape() != (n, n) {
            return Err(Error::Dimension {
                expected: n * n,
                got: self.covariance.len(),
            });
        }
        if self.kind == InitKind::Fixed
            && (self.covariance.iter().any(|&v| v != 0.0) || self.mean != self.reference_point)
        {
            return Err(Error::invalid(
                "init",
                "fixed initial condition must have zero covariance and mean = reference_point",
            ));
        }
        let all_finite = self
            .mean
            .iter()
            .chain(self.reference_point.iter())
            .chain(self.covariance.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("init", "non-finite entries"));
        }
        let norm = self.covariance.norm();
        if crate::linalg::max_asymmetry(&self.covariance) > 1e-12 * norm {
            return Err(Error::invalid("init.covariance", "must be symmetric"));
        }
        check_psd(&self.covariance)
    }
}

/// Covariance integrator selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CovarianceIntegrator {
    /// Adaptive Dormand-Prince on the augmented state/gradient/covariance system.
    #[default]
    Adaptive,
    /// Fixed-step Heun mean with a Gauss-Legendre (Cayley) update of the
    /// gradient and covariance. Preserves positive semi-definiteness per step.
    Hybrid { steps_per_unit_time: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearisationOptions {
    pub tol: f64,
    pub integrator: CovarianceIntegrator,
}

impl Default for LinearisationOptions {
    fn default() -> Self {
        LinearisationOptions {
            tol: DEFAULT_RTOL,
            integrator: CovarianceIntegrator::Adaptive,
        }
    }
}

/// Everything integrated along one reference trajectory.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub state: DVector<f64>,
    pub gradient: DMatrix<f64>,
    /// Unit-noise covariance from a zero start, `Σ_0^t(x0)`.
    pub unit_covariance: DMatrix<f64>,
    /// `Π(t)` for the requested `epsilon` and initial covariance.
    pub covariance: DMatrix<f64>,
}

/// Layout `[x, ∇F, S, Π]`. `S` is the unit-noise covariance from zero;
/// step control covers `[x, ∇F, S]` only, so the step sequence does not
/// depend on `epsilon` or the initial covariance and `Π` is exactly linear
/// in both.
struct LyapunovSystem<'a> {
    model: &'a dyn VectorField,
    n: usize,
    m: usize,
    eps2: f64,
    jac: Vec<f64>,
    sigma: Vec<f64>,
    q: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> LyapunovSystem<'a> {
    fn new(model: &'a dyn VectorField, epsilon: f64) -> Self {
        let n = model.dim_state();
        let m = model.dim_noise();
        LyapunovSystem {
            model,
            n,
            m,
            eps2: epsilon * epsilon,
            jac: vec![0.0; n * n],
            sigma: vec![0.0; n * m],
            q: vec![0.0; n * n],
            tmp: vec![0.0; n * n],
        }
    }

    /// `out = J P + P Jᵀ + c Q`.
    fn lyapunov_rhs(&mut self, p: &[f64], c: f64, out: &mut [f64]) {
        let n = self.n;
        matmul_into(&self.jac, p, &mut self.tmp, n);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.tmp[i * n + j] + self.tmp[j * n + i] + c * self.q[i * n + j];
            }
        }
    }
}

impl OdeSystem for LyapunovSystem<'_> {
    fn dim(&self) -> usize {
        self.n + 3 * self.n * self.n
    }

    fn controlled_dim(&self) -> usize {
        self.n + 2 * self.n * self.n
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let nn = n * n;
        let x = &y[..n];
        self.model.drift(x, t, &mut dy[..n]);
        self.model.drift_gradient(x, t, &mut self.jac);
        self.model.diffusion(x, t, &mut self.sigma);
        for i in 0..n {
            for j in 0..n {
                self.q[i * n + j] = (0..m).map(|k| self.sigma[i * m + k] * self.sigma[j * m + k]).sum();
            }
        }
        let (_, rest) = dy.split_at_mut(n);
        let (dg, rest) = rest.split_at_mut(nn);
        let (ds, dp) = rest.split_at_mut(nn);
        matmul_into(&self.jac, &y[n..n + nn], dg, n);
        self.lyapunov_rhs(&y[n + nn..n + 2 * nn], 1.0, ds);
        let eps2 = self.eps2;
        self.lyapunov_rhs(&y[n + 2 * nn..], eps2, dp);
    }

    fn has_post_step(&self) -> bool {
        true
    }

    fn post_step(&mut self, y: &mut [f64]) {
        let n = self.n;
        let nn = n * n;
        symmetrise_row_major(&mut y[n + nn..n + 2 * nn], n);
        symmetrise_row_major(&mut y[n + 2 * nn..], n);
    }
}

fn check_horizon(model: &dyn VectorField, x0: &[f64], t: f64, epsilon: f64) -> Result<()> {
    if x0.len() != model.dim_state() {
        return Err(Error::Dimension {
            expected: model.dim_state(),
            got: x0.len(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", format!("must be finite and non-negative, got {t}")));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(
            "epsilon",
            format!("must be finite and non-negative, got {epsilon}"),
        ));
    }
    Ok(())
}

/// Integrates state, gradient and covariances from `(x0, sigma_init)` to `t`.
pub fn propagate(
    model: &dyn VectorField,
    x0: &[f64],
    t: f64,
    epsilon: f64,
    sigma_init: &DMatrix<f64>,
    options: &LinearisationOptions,
) -> Result<Propagation> {
    check_horizon(model, x0, t, epsilon)?;
    let n = model.dim_state();
    if sigma_init.shape() != (n, n) {
        return Err(Error::Dimension {
            expected: n * n,
            got: sigma_init.len(),
        });
    }
    let out = match options.integrator {
        CovarianceIntegrator::Adaptive => propagate_adaptive(model, x0, t, epsilon, sigma_init, options.tol)?,
        CovarianceIntegrator::Hybrid { steps_per_unit_time } => {
            propagate_hybrid(model, x0, t, epsilon, sigma_init, steps_per_unit_time)?
        }
    };
    check_psd(&out.covariance)?;
    Ok(out)
}

fn propagate_adaptive(
    model: &dyn VectorField,
    x0: &[f64],
    t: f64,
    epsilon: f64,
    sigma_init: &DMatrix<f64>,
    tol: f64,
) -> Result<Propagation> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("must be positive, got {tol}")));
    }
    let n = model.dim_state();
    let nn = n * n;
    let mut sys = LyapunovSystem::new(model, epsilon);
    let mut y = vec![0.0; sys.dim()];
    y[..n].copy_from_slice(x0);
    for i in 0..n {
        y[n + i * n + i] = 1.0;
    }
    y[n + 2 * nn..].copy_from_slice(&crate::linalg::to_row_major(&symmetrise(sigma_init)));
    integrate(&mut sys, 0.0, &mut y, &[t], Tolerance::relative(tol), |_, _, _| Ok(()))?;
    Ok(Propagation {
        state: DVector::from_row_slice(&y[..n]),
        gradient: DMatrix::from_row_slice(n, n, &y[n..n + nn]),
        unit_covariance: DMatrix::from_row_slice(n, n, &y[n + nn..n + 2 * nn]),
        covariance: DMatrix::from_row_slice(n, n, &y[n + 2 * nn..]),
    })
}

fn propagate_hybrid(
    model: &dyn VectorField,
    x0: &[f64],
    t: f64,
    epsilon: f64,
    sigma_init: &DMatrix<f64>,
    steps_per_unit_time: usize,
) -> Result<Propagation> {
    if steps_per_unit_time == 0 {
        return Err(Error::invalid("steps_per_unit_time", "must be positive"));
    }
    let n = model.dim_state();
    let steps = ((t * steps_per_unit_time as f64).ceil() as usize).max(1);
    let h = t / steps as f64;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut x = DVector::from_row_slice(x0);
    let mut g = eye.clone();
    let mut s = DMatrix::zeros(n, n);
    let mut p = symmetrise(sigma_init);
    let mut u0 = vec![0.0; n];
    let mut u1 = vec![0.0; n];
    for k in 0..steps {
        let tk = k as f64 * h;
        model.drift(x.as_slice(), tk, &mut u0);
        let pred: Vec<f64> = x.iter().zip(&u0).map(|(a, b)| a + h * b).collect();
        model.drift(&pred, tk + h, &mut u1);
        let x_new = DVector::from_iterator(n, (0..n).map(|i| x[i] + 0.5 * h * (u0[i] + u1[i])));
        let mid = (&x + &x_new) * 0.5;
        let ev = crate::model_catalog::eval_model(model, mid.as_slice(), tk + 0.5 * h)?;
        let kinv = (&eye - &ev.grad_u * (0.5 * h))
            .try_inverse()
            .ok_or_else(|| Error::IntegrationFailure {
                t_last: tk,
                reason: "singular Cayley factor".into(),
            })?;
        let mstep = &kinv * (&eye + &ev.grad_u * (0.5 * h));
        let noise = &kinv * &ev.sigma * ev.sigma.transpose() * kinv.transpose() * h;
        g = &mstep * g;
        s = symmetrise(&(&mstep * &s * mstep.transpose() + &noise));
        p = symmetrise(&(&mstep * &p * mstep.transpose() + noise * (epsilon * epsilon)));
        x = x_new;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure {
                t_last: tk,
                reason: "non-finite state".into(),
            });
        }
    }
    Ok(Propagation {
        state: x,
        gradient: g,
        unit_covariance: s,
        covariance: p,
    })
}

/// Mean `F_0^t(x0)` and covariance `Π(t)` from `Π(0) = sigma_init`.
pub fn propagate_covariance(
    model: &dyn VectorField,
    x0: &[f64],
    t: f64,
    epsilon: f64,
    sigma_init: &DMatrix<f64>,
    tol: f64,
) -> Result<GaussianState> {
    let options = LinearisationOptions {
        tol,
        ..Default::default()
    };
    let p = propagate(model, x0, t, epsilon, sigma_init, &options)?;
    Ok(GaussianState {
        mean: p.state,
        covariance: p.covariance,
        t,
        epsilon,
    })
}

/// Default panel count for [`covariance_by_quadrature`] on `[0, t]`.
pub fn default_panels(t: f64) -> usize {
    (t * QUADRATURE_NODES_PER_UNIT_TIME as f64).ceil() as usize
}

/// `Σ_0^t(x0)` by composite 5-point Gauss-Legendre quadrature over `panels`
/// equal sub-intervals. Refuses when `∇F` is near-singular at a node.
pub fn covariance_by_quadrature(model: &dyn VectorField, x0: &[f64], t: f64, panels: usize) -> Result<DMatrix<f64>> {
    check_horizon(model, x0, t, 0.0)?;
    let n = model.dim_state();
    let m = model.dim_noise();
    if t == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    if panels == 0 {
        return Err(Error::invalid("panels", "must be positive"));
    }
    let h = t / panels as f64;
    let mut times = Vec::with_capacity(5 * panels + 1);
    for p in 0..panels {
        let a = p as f64 * h;
        times.extend(GAUSS_NODES.iter().map(|xi| a + 0.5 * h * (1.0 + xi)));
    }
    times.push(t);
    let flows = flow_at_times(model, x0, &times, DEFAULT_RTOL * 1e-2)?;

    let mut integral = DMatrix::zeros(n, n);
    let mut sigma = vec![0.0; n * m];
    for (i, f) in flows[..5 * panels].iter().enumerate() {
        if f.condition_number > SINGULAR_CONDITION {
            return Err(Error::SingularGradient {
                t: f.t,
                condition: f.condition_number,
            });
        }
        model.diffusion(f.state.as_slice(), f.t, &mut sigma);
        let s = DMatrix::from_row_slice(n, m, &sigma);
        let l = f.gradient.clone().lu().solve(&s).ok_or(Error::SingularGradient {
            t: f.t,
            condition: f.condition_number,
        })?;
        integral += (&l * l.transpose()) * (0.5 * h * GAUSS_WEIGHTS[i % 5]);
    }
    let g = &flows[5 * panels].gradient;
    Ok(symmetrise(&(g * integral * g.transpose())))
}

/// Full Gaussian law of the linearised solution with default options.
pub fn linearised_distribution(
    model: &dyn VectorField,
    init: &InitialCondition,
    t: f64,
    epsilon: f64,
) -> Result<GaussianState> {
    linearised_distribution_with(model, init, t, epsilon, &LinearisationOptions::default())
}

pub fn linearised_distribution_with(
    model: &dyn VectorField,
    init: &InitialCondition,
    t: f64,
    epsilon: f64,
    options: &LinearisationOptions,
) -> Result<GaussianState> {
    init.validate()?;
    let p = propagate(
        model,
        init.reference_point.as_slice(),
        t,
        epsilon,
        &init.covariance,
        options,
    )?;
    let mean = if init.kind == InitKind::Fixed {
        p.state
    } else {
        &p.state + &p.gradient * (&init.mean - &init.reference_point)
    };
    Ok(GaussianState {
        mean,
        covariance: p.covariance,
        t,
        epsilon,
    })
}
