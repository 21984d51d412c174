//! Predictor contract and model parameterizations.
//!
//! A predictor maps `(x_t, t, x1)` to an output vector under a declared
//! parameterization. Four parameterizations are supported, each with a
//! regression target and an algebraic inversion back to a data (`x0`)
//! prediction:
//!
//! - `X0`: predict the clean data directly (default; the other three exist
//!   for coverage and tend to behave worse in practice).
//! - `NoisePsiHat`: predict `(x_t - alpha_t x0) / (alpha_t sigma_t)`, the
//!   noise of the backward potential.
//! - `NoiseSb`: predict the standardized bridge noise
//!   `(x_t - mean_t) / std_t`, i.e. exactly the `eps` used to form `x_t`.
//! - `Velocity`: predict the deterministic-flow drift at `(x_t, t)`.
//!
//! Analytic predictors for sampler validation live here too: the exact
//! posterior mean for Gaussian conditional data, and a constant predictor
//! that makes the exponential-integrator steps exact.

use crate::bridge::{form_xt, marginal_params};
use crate::schedules::Schedule;
use crate::vecmath::check_same_dim;
use crate::{Error, Result};

/// Which quantity a predictor outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parameterization {
    #[default]
    X0,
    NoisePsiHat,
    NoiseSb,
    Velocity,
}

impl Parameterization {
    pub fn name(&self) -> &'static str {
        match self {
            Parameterization::X0 => "x0",
            Parameterization::NoisePsiHat => "noise-psi-hat",
            Parameterization::NoiseSb => "noise-sb",
            Parameterization::Velocity => "velocity",
        }
    }
}

/// Evaluation contract: deterministic map `(x_t, t, x1) -> output` of the
/// same dimension, under a declared parameterization. Implementations are
/// immutable and shareable.
pub trait Predictor: Send + Sync {
    fn parameterization(&self) -> Parameterization;

    fn eval(&self, x_t: &[f64], t: f64, x1: &[f64]) -> Vec<f64>;

    /// Batched evaluation over states sharing one `(t, x1)`.
    fn eval_batch(&self, states: &[Vec<f64>], t: f64, x1: &[f64]) -> Vec<Vec<f64>> {
        states.iter().map(|x| self.eval(x, t, x1)).collect()
    }
}

/// Regression target for parameterization `param` at `(x0, x1, t)`, given
/// the exact standard normal draw `eps_used` that formed `x_t`.
pub fn target_for(
    param: Parameterization,
    schedule: &Schedule,
    t: f64,
    x0: &[f64],
    x1: &[f64],
    eps_used: &[f64],
) -> Result<Vec<f64>> {
    check_same_dim(x0, x1)?;
    check_same_dim(x0, eps_used)?;
    let e = schedule.eval(t)?;
    match param {
        Parameterization::X0 => Ok(x0.to_vec()),
        Parameterization::NoisePsiHat => {
            if e.sigma2 <= 0.0 {
                return Err(Error::SingularConversion {
                    param: param.name(),
                    t,
                });
            }
            let x_t = form_xt(schedule, t, x0, x1, eps_used)?;
            let denom = e.alpha * e.sigma2.sqrt();
            Ok(x_t
                .iter()
                .zip(x0)
                .map(|(xt, x0i)| (xt - e.alpha * x0i) / denom)
                .collect())
        }
        Parameterization::NoiseSb => {
            if e.sigma2 <= 0.0 || e.sigma2_bar <= 0.0 {
                return Err(Error::SingularConversion {
                    param: param.name(),
                    t,
                });
            }
            // standardizing x_t returns exactly the noise that formed it
            Ok(eps_used.to_vec())
        }
        Parameterization::Velocity => {
            if e.sigma2 <= 0.0 || e.sigma2_bar <= 0.0 {
                return Err(Error::SingularConversion {
                    param: param.name(),
                    t,
                });
            }
            let x_t = form_xt(schedule, t, x0, x1, eps_used)?;
            let a2 = e.alpha * e.alpha;
            let pull1 = 0.5 * e.g2 / (a2 * e.sigma2_bar);
            let pull0 = 0.5 * e.g2 / (a2 * e.sigma2);
            Ok((0..x0.len())
                .map(|i| {
                    e.f * x_t[i] - pull1 * (x_t[i] - e.alpha_bar * x1[i])
                        + pull0 * (x_t[i] - e.alpha * x0[i])
                })
                .collect())
        }
    }
}

/// Inverts a predictor output to the implied `x0` estimate.
///
/// `X0` is the identity. `NoisePsiHat` inverts on all of `[0, 1]` (the
/// denominators stay positive at `t = 1`, which is what lets sampling start
/// from the prior with a noise predictor). `NoiseSb` and `Velocity` are
/// singular at `t = 1`; at `t = 0` the state itself is the exact data point
/// and is returned directly.
pub fn to_x0(
    param: Parameterization,
    output: &[f64],
    schedule: &Schedule,
    t: f64,
    x_t: &[f64],
    x1: &[f64],
) -> Result<Vec<f64>> {
    check_same_dim(output, x_t)?;
    check_same_dim(output, x1)?;
    if param == Parameterization::X0 {
        schedule.eval(t)?;
        return Ok(output.to_vec());
    }
    if t == 0.0 {
        return Ok(x_t.to_vec());
    }
    let e = schedule.eval(t)?;
    match param {
        Parameterization::X0 => unreachable!(),
        Parameterization::NoisePsiHat => {
            let scale = e.alpha * e.sigma2.sqrt();
            Ok(x_t
                .iter()
                .zip(output)
                .map(|(xt, o)| (xt - scale * o) / e.alpha)
                .collect())
        }
        Parameterization::NoiseSb => {
            let m = marginal_params(schedule, t)?;
            if m.w0 <= 0.0 {
                return Err(Error::SingularConversion {
                    param: param.name(),
                    t,
                });
            }
            Ok((0..x_t.len())
                .map(|i| (x_t[i] - m.w1 * x1[i] - m.std * output[i]) / m.w0)
                .collect())
        }
        Parameterization::Velocity => {
            if e.sigma2_bar <= 0.0 {
                return Err(Error::SingularConversion {
                    param: param.name(),
                    t,
                });
            }
            let a2 = e.alpha * e.alpha;
            let pull1 = 0.5 * e.g2 / (a2 * e.sigma2_bar);
            let back = 2.0 * a2 * e.sigma2 / e.g2;
            Ok((0..x_t.len())
                .map(|i| {
                    let rest = e.f * x_t[i] - pull1 * (x_t[i] - e.alpha_bar * x1[i]);
                    (x_t[i] - (output[i] - rest) * back) / e.alpha
                })
                .collect())
        }
    }
}

/// Evaluates a predictor and converts its output to a data prediction.
pub fn predict_x0(
    predictor: &dyn Predictor,
    schedule: &Schedule,
    x_t: &[f64],
    t: f64,
    x1: &[f64],
) -> Result<Vec<f64>> {
    let out = predictor.eval(x_t, t, x1);
    to_x0(predictor.parameterization(), &out, schedule, t, x_t, x1)
}

/// Batched [`predict_x0`] over states sharing one `(t, x1)`.
pub fn predict_x0_batch(
    predictor: &dyn Predictor,
    schedule: &Schedule,
    states: &[Vec<f64>],
    t: f64,
    x1: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let outs = predictor.eval_batch(states, t, x1);
    states
        .iter()
        .zip(&outs)
        .map(|(x, o)| to_x0(predictor.parameterization(), o, schedule, t, x, x1))
        .collect()
}

/// Per-condition Gaussian data model `x0 ~ N(m, s2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTaskParams {
    pub m: Vec<f64>,
    pub s2: f64,
}

impl GaussianTaskParams {
    pub fn new(m: Vec<f64>, s2: f64) -> Result<Self> {
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "task variance must be > 0, got {s2}"
            )));
        }
        Ok(GaussianTaskParams { m, s2 })
    }
}

/// Exact posterior mean `E[x0 | x_t]` when `x0 ~ N(m, s2 I)` and
/// `x_t = w0 x0 + w1 x1 + std eps`:
///
/// `E[x0 | x_t] = (s2 w0 (x_t - w1 x1) + std^2 m) / (w0^2 s2 + std^2)`.
///
/// At `t = 1` the state carries no information and the prior mean `m` is
/// returned; at `t = 0` the state is the exact data point.
#[derive(Debug, Clone)]
pub struct GaussianPosteriorOracle {
    schedule: Schedule,
    task: GaussianTaskParams,
}

impl GaussianPosteriorOracle {
    pub fn new(schedule: Schedule, task: GaussianTaskParams) -> Self {
        GaussianPosteriorOracle { schedule, task }
    }

    /// The affine form `E[x0 | x_t] = gain * x_t + offset` at time `t`.
    /// Exposed so distribution laws under this predictor can be propagated
    /// in closed form.
    pub fn affine_coeffs(&self, t: f64, x1: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.task.m.len();
        if t >= 1.0 {
            return Ok((0.0, self.task.m.clone()));
        }
        if t <= 0.0 {
            return Ok((1.0, vec![0.0; d]));
        }
        let m = marginal_params(&self.schedule, t)?;
        let s2 = self.task.s2;
        let denom = m.w0 * m.w0 * s2 + m.std * m.std;
        let gain = s2 * m.w0 / denom;
        let offset = (0..d)
            .map(|i| (m.std * m.std * self.task.m[i] - s2 * m.w0 * m.w1 * x1[i]) / denom)
            .collect();
        Ok((gain, offset))
    }
}

impl Predictor for GaussianPosteriorOracle {
    fn parameterization(&self) -> Parameterization {
        Parameterization::X0
    }

    fn eval(&self, x_t: &[f64], t: f64, x1: &[f64]) -> Vec<f64> {
        let (gain, offset) = self
            .affine_coeffs(t, x1)
            .expect("oracle evaluated outside [0, 1]");
        x_t.iter()
            .zip(&offset)
            .map(|(x, o)| gain * x + o)
            .collect()
    }
}

/// Always returns the same vector; the exponential-integrator steps are
/// exact for it, which pins down their coefficients in tests.
#[derive(Debug, Clone)]
pub struct ConstantPredictor {
    pub c: Vec<f64>,
}

impl ConstantPredictor {
    pub fn new(c: Vec<f64>) -> Self {
        ConstantPredictor { c }
    }
}

impl Predictor for ConstantPredictor {
    fn parameterization(&self) -> Parameterization {
        Parameterization::X0
    }

    fn eval(&self, _x_t: &[f64], _t: f64, _x1: &[f64]) -> Vec<f64> {
        self.c.clone()
    }
}
