//! Noise schedules for the reference SDE `dx = f(t) x dt + g(t) dw`, t in [0, 1].
//!
//! Three families, all with closed-form coefficients:
//!
//! | family     | f(t)        | g^2(t)                  | alpha_t            | sigma_t^2                            |
//! |------------|-------------|-------------------------|--------------------|--------------------------------------|
//! | gmax       | 0           | b0 + t (b1 - b0)        | 1                  | (b1 - b0) t^2 / 2 + b0 t             |
//! | vp         | -beta(t)/2  | beta(t) = b0 + t(b1-b0) | exp(-B(t)/2)       | exp(B(t)) - 1                        |
//! | constant g | 0           | sigma^2                 | 1                  | sigma^2 t                            |
//!
//! with `B(t) = integral of beta over [0, t]`. Derived quantities:
//! `alpha_bar_t = alpha_t / alpha_1`, `sigma_bar_t^2 = sigma_1^2 - sigma_t^2`,
//! and the log-style variable `lambda_t = -1 / sigma_t^2` used by the
//! second-order samplers (undefined at t = 0, reported as `-inf`).
//!
//! The closed forms are the only thing the sampling path touches. An
//! adaptive Simpson quadrature of `g^2(tau) / alpha_tau^2` is provided as an
//! independent oracle for tests.

use crate::{Error, Result};

/// Parameters of a noise-schedule family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    /// Zero drift, `g^2` linear in t; `beta1` is the maximum of `g^2(t)`.
    BridgeGmax { beta0: f64, beta1: f64 },
    /// Variance-preserving drift `f = -beta(t)/2` with the same linear `beta`.
    BridgeVp { beta0: f64, beta1: f64 },
    /// Zero drift, constant diffusion `g = sigma` (scaled Brownian motion).
    ConstantG { sigma: f64 },
}

/// All coefficients of a schedule at one time `t`.
///
/// `lambda` is `-1 / sigma2`; at `t = 0` it is reported as
/// `f64::NEG_INFINITY`. Interior consumers (the second-order samplers) only
/// ever form lambda differences at `t > 0`.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleEval {
    pub t: f64,
    pub f: f64,
    pub g2: f64,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub sigma2: f64,
    pub sigma2_bar: f64,
    pub sigma2_1: f64,
    pub lambda: f64,
}

/// An immutable, validated noise schedule. Cheap to copy and safe to share
/// between threads; evaluation is pure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    spec: ScheduleSpec,
}

/// Validates `spec` and returns the schedule.
pub fn make_schedule(spec: ScheduleSpec) -> Result<Schedule> {
    Schedule::new(spec)
}

impl Schedule {
    pub fn new(spec: ScheduleSpec) -> Result<Self> {
        match spec {
            ScheduleSpec::BridgeGmax { beta0, beta1 } | ScheduleSpec::BridgeVp { beta0, beta1 } => {
                if !(beta0 >= 0.0) || !beta0.is_finite() {
                    return Err(Error::InvalidSchedule(format!(
                        "beta0 must be finite and >= 0, got {beta0}"
                    )));
                }
                if !(beta1 > beta0) || !beta1.is_finite() {
                    return Err(Error::InvalidSchedule(format!(
                        "beta1 must be finite and > beta0, got beta0={beta0}, beta1={beta1}"
                    )));
                }
            }
            ScheduleSpec::ConstantG { sigma } => {
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::InvalidSchedule(format!(
                        "sigma must be finite and > 0, got {sigma}"
                    )));
                }
            }
        }
        Ok(Schedule { spec })
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    /// Drift rate `f(t)`.
    pub fn f(&self, t: f64) -> f64 {
        match self.spec {
            ScheduleSpec::BridgeGmax { .. } | ScheduleSpec::ConstantG { .. } => 0.0,
            ScheduleSpec::BridgeVp { beta0, beta1 } => -0.5 * (beta0 + t * (beta1 - beta0)),
        }
    }

    /// Squared diffusion `g^2(t)`.
    pub fn g2(&self, t: f64) -> f64 {
        match self.spec {
            ScheduleSpec::BridgeGmax { beta0, beta1 } | ScheduleSpec::BridgeVp { beta0, beta1 } => {
                beta0 + t * (beta1 - beta0)
            }
            ScheduleSpec::ConstantG { sigma } => sigma * sigma,
        }
    }

    /// `alpha_t = exp(integral of f over [0, t])`.
    pub fn alpha(&self, t: f64) -> f64 {
        match self.spec {
            ScheduleSpec::BridgeGmax { .. } | ScheduleSpec::ConstantG { .. } => 1.0,
            ScheduleSpec::BridgeVp { .. } => (-0.5 * self.beta_integral(t)).exp(),
        }
    }

    /// `sigma_t^2 = integral of g^2 / alpha^2 over [0, t]`, in closed form.
    pub fn sigma2(&self, t: f64) -> f64 {
        match self.spec {
            ScheduleSpec::BridgeGmax { beta0, beta1 } => 0.5 * (beta1 - beta0) * t * t + beta0 * t,
            ScheduleSpec::BridgeVp { .. } => self.beta_integral(t).exp_m1(),
            ScheduleSpec::ConstantG { sigma } => sigma * sigma * t,
        }
    }

    /// Terminal bridge variance `sigma_1^2`.
    pub fn sigma2_1(&self) -> f64 {
        self.sigma2(1.0)
    }

    /// All coefficients at `t`, checked for `t in [0, 1]`.
    pub fn eval(&self, t: f64) -> Result<ScheduleEval> {
        if !(0.0..=1.0).contains(&t) || !t.is_finite() {
            return Err(Error::TimeOutOfRange { t });
        }
        Ok(self.at(t))
    }

    /// Unchecked evaluation; callers guarantee `t in [0, 1]` (samplers walk
    /// validated grids).
    pub(crate) fn at(&self, t: f64) -> ScheduleEval {
        debug_assert!((0.0..=1.0).contains(&t), "t={t} outside [0,1]");
        let alpha = self.alpha(t);
        let alpha_1 = self.alpha(1.0);
        let sigma2 = self.sigma2(t);
        let sigma2_1 = self.sigma2(1.0);
        let lambda = if sigma2 > 0.0 {
            -1.0 / sigma2
        } else {
            f64::NEG_INFINITY
        };
        ScheduleEval {
            t,
            f: self.f(t),
            g2: self.g2(t),
            alpha,
            alpha_bar: alpha / alpha_1,
            sigma2,
            sigma2_bar: sigma2_1 - sigma2,
            sigma2_1,
            lambda,
        }
    }

    /// `B(t)`, the integral of the linear beta over `[0, t]` (vp family).
    fn beta_integral(&self, t: f64) -> f64 {
        match self.spec {
            ScheduleSpec::BridgeVp { beta0, beta1 } => beta0 * t + 0.5 * (beta1 - beta0) * t * t,
            _ => 0.0,
        }
    }

    /// Adaptive-Simpson estimate of `integral of g^2 / alpha^2 over [0, t]`.
    ///
    /// Verification oracle only; never on the sampling path. The requested
    /// absolute tolerance is floored at a few ulps of the running estimate,
    /// so very large integrals (the vp family reaches ~2e4) resolve to
    /// machine-relative accuracy instead of looping forever.
    pub fn quadrature_sigma2(&self, t: f64, tol: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) || !t.is_finite() {
            return Err(Error::TimeOutOfRange { t });
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "quadrature tolerance must be > 0, got {tol}"
            )));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let integrand = |tau: f64| {
            let a = self.alpha(tau);
            self.g2(tau) / (a * a)
        };
        adaptive_simpson(&integrand, 0.0, t, tol)
    }
}

const MAX_QUADRATURE_DEPTH: u32 = 48;

fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    let s = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    (m, fm, s)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 0)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let (ml, fml, left) = simpson(f, a, fa, m, fm);
    let (mr, fmr, right) = simpson(f, m, fm, b, fb);
    let refined = left + right;
    let err = refined - whole;
    // Floating-point floor: once the interval estimate is at rounding noise
    // relative to the integral magnitude, further halving cannot help.
    let floor = 8.0 * f64::EPSILON * refined.abs();
    if err.abs() <= 15.0 * tol.max(floor) {
        return Ok(refined + err / 15.0);
    }
    if depth >= MAX_QUADRATURE_DEPTH {
        return Err(Error::QuadratureNoConvergence {
            max_depth: MAX_QUADRATURE_DEPTH,
        });
    }
    let half = 0.5 * tol;
    Ok(
        recurse(f, a, fa, m, fm, ml, fml, left, half, depth + 1)?
            + recurse(f, m, fm, b, fb, mr, fmr, right, half, depth + 1)?,
    )
}
