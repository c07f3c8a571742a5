//! Flow map of the deterministic reference ODE and its gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, SINGULAR_CONDITION};
use crate::model_catalog::VectorField;
use crate::ode::{integrate, OdeSystem, Tolerance};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub state: DVector<f64>,
    pub gradient: DMatrix<f64>,
    pub t: f64,
    pub x0: DVector<f64>,
    /// Two-norm condition number of `gradient`.
    pub condition_number: f64,
    /// Set when the condition number exceeds `1e12`.
    pub near_singular: bool,
}

/// State, optionally augmented with the row-major variational matrix.
pub(crate) struct FlowSystem<'a> {
    model: &'a dyn VectorField,
    n: usize,
    with_gradient: bool,
    jac: Vec<f64>,
}

impl<'a> FlowSystem<'a> {
    pub(crate) fn new(model: &'a dyn VectorField, with_gradient: bool) -> Self {
        let n = model.dim_state();
        FlowSystem {
            model,
            n,
            with_gradient,
            jac: vec![0.0; n * n],
        }
    }

    pub(crate) fn initial_state(&self, x0: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = x0.to_vec();
        if self.with_gradient {
            y.resize(n + n * n, 0.0);
            for i in 0..n {
                y[n + i * n + i] = 1.0;
            }
        }
        y
    }
}

impl OdeSystem for FlowSystem<'_> {
    fn dim(&self) -> usize {
        if self.with_gradient {
            self.n + self.n * self.n
        } else {
            self.n
        }
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let (x, g) = y.split_at(n);
        let (dx, dg) = dy.split_at_mut(n);
        self.model.drift(x, t, dx);
        if self.with_gradient {
            self.model.drift_gradient(x, t, &mut self.jac);
            matmul_into(&self.jac, g, dg, n);
        }
    }
}

/// `out = a * b` for square row-major matrices.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = acc;
        }
    }
}

fn check_inputs(model: &dyn VectorField, x0: &[f64], t: f64, tol: f64) -> Result<()> {
    if x0.len() != model.dim_state() {
        return Err(Error::Dimension {
            expected: model.dim_state(),
            got: x0.len(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", format!("must be finite and non-negative, got {t}")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("must be positive, got {tol}")));
    }
    Ok(())
}

pub(crate) fn integrate_flow_from(
    model: &dyn VectorField,
    x: &[f64],
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<DVector<f64>> {
    let mut sys = FlowSystem::new(model, false);
    let mut y = sys.initial_state(x);
    integrate(&mut sys, t0, &mut y, &[t1], Tolerance::relative(tol), |_, _, _| Ok(()))?;
    Ok(DVector::from_vec(y))
}

/// `F_0^t(x0)`.
pub fn integrate_flow(model: &dyn VectorField, x0: &[f64], t: f64, tol: f64) -> Result<DVector<f64>> {
    check_inputs(model, x0, t, tol)?;
    integrate_flow_from(model, x0, 0.0, t, tol)
}

fn flow_result(n: usize, x0: &[f64], t: f64, y: &[f64]) -> FlowResult {
    let gradient = DMatrix::from_row_slice(n, n, &y[n..]);
    let condition = condition_number(&gradient);
    FlowResult {
        state: DVector::from_row_slice(&y[..n]),
        near_singular: condition > SINGULAR_CONDITION,
        condition_number: condition,
        gradient,
        t,
        x0: DVector::from_row_slice(x0),
    }
}

/// `F_0^t(x0)` and `∇F_0^t(x0)` from the state jointly integrated with the
/// equation of variations.
pub fn integrate_flow_with_gradient(model: &dyn VectorField, x0: &[f64], t: f64, tol: f64) -> Result<FlowResult> {
    Ok(flow_at_times(model, x0, &[t], tol)?.remove(0))
}

/// Flow and gradient at each of the non-decreasing `times` from one integration.
pub fn flow_at_times(model: &dyn VectorField, x0: &[f64], times: &[f64], tol: f64) -> Result<Vec<FlowResult>> {
    for &t in times {
        check_inputs(model, x0, t, tol)?;
    }
    let n = model.dim_state();
    let mut sys = FlowSystem::new(model, true);
    let mut y = sys.initial_state(x0);
    let mut out = Vec::with_capacity(times.len());
    integrate(&mut sys, 0.0, &mut y, times, Tolerance::relative(tol), |_, t, y| {
        out.push(flow_result(n, x0, t, y));
        Ok(())
    })?;
    Ok(out)
}

/// Flow states (no gradient) at each of the non-decreasing `times`.
pub fn trajectory(model: &dyn VectorField, x0: &[f64], times: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
    for &t in times {
        check_inputs(model, x0, t, tol)?;
    }
    let mut sys = FlowSystem::new(model, false);
    let mut y = sys.initial_state(x0);
    let mut out = Vec::with_capacity(times.len());
    integrate(&mut sys, 0.0, &mut y, times, Tolerance::relative(tol), |_, _, y| {
        out.push(y.to_vec());
        Ok(())
    })?;
    Ok(out)
}
