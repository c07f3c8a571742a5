//! Adaptive Dormand-Prince 5(4) integrator.
//!
//! Steps land exactly on every requested output time, so callers get the
//! solution at those times without interpolation.

use crate::error::{Error, Result};

/// Default relative tolerance for deterministic integrations.
pub const DEFAULT_RTOL: f64 = 1e-8;

/// Absolute tolerance as a fraction of the relative tolerance.
const ATOL_RATIO: f64 = 1e-2;

const MAX_STEPS: usize = 5_000_000;

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Projection applied after every accepted step.
    fn post_step(&mut self, _y: &mut [f64]) {}

    fn has_post_step(&self) -> bool {
        false
    }

    /// Number of leading components that take part in step-size control.
    /// Trailing components are carried along on the same step sequence.
    fn controlled_dim(&self) -> usize {
        self.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    /// `rtol` with `atol = 1e-2 * rtol`.
    pub fn relative(rtol: f64) -> Self {
        Tolerance {
            rtol,
            atol: rtol * ATOL_RATIO,
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::relative(DEFAULT_RTOL)
    }
}

// Dormand-Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Stages {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }
}

fn error_norm(y: &[f64], y_new: &[f64], err: impl Iterator<Item = f64>, tol: Tolerance) -> f64 {
    let mut acc = 0.0;
    for ((e, a), b) in err.zip(y).zip(y_new) {
        let scale = tol.atol + tol.rtol * a.abs().max(b.abs());
        acc += (e / scale).powi(2);
    }
    (acc / y.len().max(1) as f64).sqrt()
}

fn initial_step<S: OdeSystem>(sys: &mut S, t: f64, y: &[f64], f0: &[f64], span: f64, tol: Tolerance) -> f64 {
    let n = y.len();
    let k = sys.controlled_dim();
    let scale: Vec<f64> = y[..k].iter().map(|v| tol.atol + tol.rtol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / k.max(1) as f64).sqrt();
    let d0 = rms(y);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(t + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| (a - b) / h0).collect();
    let d2 = rms(&diff);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates from `t0` with state `y`, reporting the state at each of the
/// non-decreasing `outputs` (all `>= t0`) through `observe(index, t, y)`.
/// On return `y` holds the state at the last output time.
pub fn integrate<S, O>(
    sys: &mut S,
    t0: f64,
    y: &mut [f64],
    outputs: &[f64],
    tol: Tolerance,
    mut observe: O,
) -> Result<()>
where
    S: OdeSystem,
    O: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    let n = sys.dim();
    debug_assert_eq!(y.len(), n);
    if let Some(bad) = outputs.windows(2).find(|w| w[1] < w[0]) {
        return Err(Error::invalid(
            "outputs",
            format!("times must be non-decreasing, got {bad:?}"),
        ));
    }
    if outputs.first().is_some_and(|&first| first < t0) {
        return Err(Error::invalid("outputs", "output time precedes start time"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationFailure {
            t_last: t0,
            reason: "non-finite initial state".into(),
        });
    }

    let mut st = Stages::new(n);
    let mut t = t0;
    let mut h = 0.0;
    let mut fsal_valid = false;
    let mut steps = 0usize;

    for (idx, &target) in outputs.iter().enumerate() {
        while t < target {
            if !fsal_valid {
                sys.rhs(t, y, &mut st.k[0]);
                fsal_valid = true;
            }
            if h == 0.0 {
                let span = outputs.last().copied().unwrap_or(target) - t;
                h = initial_step(sys, t, y, &st.k[0], span, tol);
            }
            let remaining = target - t;
            let last = h >= remaining * (1.0 - 1e-12);
            let h_try = if last { remaining } else { h };

            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::IntegrationFailure {
                    t_last: t,
                    reason: "step budget exhausted".into(),
                });
            }

            let err = dopri_step(sys, t, y, h_try, &mut st, tol);
            if err.is_finite() && err <= 1.0 {
                t = if last { target } else { t + h_try };
                y.copy_from_slice(&st.y_new);
                if sys.has_post_step() {
                    sys.post_step(y);
                    fsal_valid = false;
                } else {
                    st.k.swap(0, 6);
                }
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // keep the step that was planned before clamping to an output
                h = if last { h.max(h_try) } else { h_try * factor };
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::IntegrationFailure {
                        t_last: t,
                        reason: format!("step size underflow (h = {h:e})"),
                    });
                }
            } else {
                let factor = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
                } else {
                    0.25
                };
                h = h_try * factor;
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::IntegrationFailure {
                        t_last: t,
                        reason: format!("step size underflow (h = {h:e})"),
                    });
                }
            }
        }
        observe(idx, t, y)?;
    }
    Ok(())
}

fn dopri_step<S: OdeSystem>(sys: &mut S, t: f64, y: &[f64], h: f64, st: &mut Stages, tol: Tolerance) -> f64 {
    let n = y.len();
    let Stages { k, tmp, y_new } = st;
    let [k1, k2, k3, k4, k5, k6, k7] = k;

    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    sys.rhs(t + C2 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    sys.rhs(t + C3 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    sys.rhs(t + C4 * h, tmp, k4);
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    sys.rhs(t + C5 * h, tmp, k5);
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    sys.rhs(t + h, tmp, k6);
    for i in 0..n {
        y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    }
    sys.rhs(t + h, y_new, k7);

    let err = (0..n).map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]));
    let k = sys.controlled_dim();
    error_norm(&y[..k], &y_new[..k], err.take(k), tol)
}
