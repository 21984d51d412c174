//! Bridge SDE/ODE sampling from the prior `x1` at `t = 1` down to `t = 0`.
//!
//! Substituting a data prediction into the reverse bridge gives
//!
//! - bridge SDE drift: `f x + g^2 (x - alpha_t x0hat) / (alpha_t^2 sigma_t^2)`
//!   with diffusion `g`;
//! - bridge ODE drift: `f x - g^2 (x - alpha_bar_t x1) / (2 alpha_t^2 sigma_bar_t^2)
//!   + g^2 (x - alpha_t x0hat) / (2 alpha_t^2 sigma_t^2)`.
//!
//! Exponential integrators cancel the linear part analytically, leaving only
//! the predictor inside the integral. First-order steps (`s -> t < s`):
//!
//! ```text
//! SDE:  x_t = (a_t s_t^2)/(a_s s_s^2) x_s + a_t (1 - s_t^2/s_s^2) x0hat
//!           + a_t s_t sqrt(1 - s_t^2/s_s^2) eps
//! ODE:  x_t = (a_t s_t sb_t)/(a_s s_s sb_s) x_s
//!           + a_t/sig1^2 [ (sb_t^2 - sb_s s_t sb_t / s_s) x0hat
//!                        + (s_t^2 - s_s s_t sb_t / sb_s) x1/a_1 ]
//! ```
//!
//! (`a = alpha`, `s = sigma`, `sb = sigma_bar`). At `s = 1` the ODE step is
//! taken in its continuous limit, the noiseless marginal interpolation
//! `x_t = (a_t sb_t^2/sig1^2) x0hat + (abar_t s_t^2/sig1^2) x1`: the two
//! divergent coefficients cancel exactly when the walk starts at the prior.
//!
//! Second-order variants re-evaluate the predictor at the looked-ahead state
//! and average (two evaluations per step, fresh noise in prediction and
//! correction). An Euler-Maruyama baseline discretizes the SDE drift
//! directly, and a DDIM-style comparator covers the vanishing-`sigma_t/sigma_1`
//! limit of the ODE step.
//!
//! Temperature `tau_b` scales injected noise to `N(0, I / tau_b)`; it never
//! touches drifts or deterministic coefficients, so ODE samplers are
//! bit-identical for any temperature.

use rand::Rng;

use crate::predictors::{predict_x0, predict_x0_batch, Predictor};
use crate::schedules::Schedule;
use crate::vecmath::standard_normal_vec;
use crate::{Error, Result};

/// Strictly decreasing times `1 = t_N > ... > t_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `n >= 1` steps; endpoints are exact.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("grid needs >= 1 step".into()));
        }
        let times = (0..=n).map(|i| (n - i) as f64 / n as f64).collect();
        Ok(TimeGrid { times })
    }

    /// A caller-supplied grid, validated: endpoints exactly 1 and 0, strictly
    /// decreasing in between.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 1.0 || *times.last().unwrap() != 0.0 {
            return Err(Error::InvalidArgument(
                "grid must run from exactly 1 to exactly 0".into(),
            ));
        }
        if !times.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(
                "grid times must be strictly decreasing".into(),
            ));
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Iterator over `(s, t)` pairs with `s > t`.
    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Uniform grid constructor matching the sampler loop's convention.
pub fn make_time_grid(n: usize) -> Result<TimeGrid> {
    TimeGrid::uniform(n)
}

/// Which stepping rule drives the sampling loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Sde1,
    Ode1,
    Sde2,
    Ode2,
    EulerMaruyama,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Sde1 => "sde1",
            SamplerKind::Ode1 => "ode1",
            SamplerKind::Sde2 => "sde2",
            SamplerKind::Ode2 => "ode2",
            SamplerKind::EulerMaruyama => "em",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            SamplerKind::Sde1 | SamplerKind::Sde2 | SamplerKind::EulerMaruyama
        )
    }
}

/// Sampler kind, evaluation budget, and noise temperature. The grid is
/// uniform in `t`; second-order kinds spend two evaluations per grid step,
/// so their `nfe` must be even.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub nfe: usize,
    pub tau_b: f64,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, nfe: usize, tau_b: f64) -> Result<Self> {
        let cfg = SamplerConfig { kind, nfe, tau_b };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(Error::InvalidArgument("nfe must be >= 1".into()));
        }
        if matches!(self.kind, SamplerKind::Sde2 | SamplerKind::Ode2) && self.nfe % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} spends 2 evaluations per step; nfe must be even, got {}",
                self.kind.name(),
                self.nfe
            )));
        }
        if !(self.tau_b > 0.0) || !self.tau_b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tau_b must be > 0, got {}",
                self.tau_b
            )));
        }
        Ok(())
    }

    fn grid(&self) -> Result<TimeGrid> {
        let steps = match self.kind {
            SamplerKind::Sde2 | SamplerKind::Ode2 => self.nfe / 2,
            _ => self.nfe,
        };
        TimeGrid::uniform(steps)
    }
}

/// One linear stepping rule: `x_t = on_state x_s + on_x0hat x0hat
/// + on_x1 x1 + noise_std eps` with `eps ~ N(0, I)` before temperature.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearStep {
    pub on_state: f64,
    pub on_x0hat: f64,
    pub on_x1: f64,
    pub noise_std: f64,
}

impl LinearStep {
    fn apply<R: Rng + ?Sized>(
        &self,
        x_s: &[f64],
        x0hat: &[f64],
        x1: &[f64],
        tau_b: f64,
        rng: &mut R,
    ) -> Vec<f64> {
        // the noise coefficient vanishes identically on deterministic paths
        // (ODE steps, final SDE step to t = 0); skip the draw there
        let scale = self.noise_std / tau_b.sqrt();
        let noise = if self.noise_std > 0.0 {
            standard_normal_vec(x_s.len(), rng)
        } else {
            vec![0.0; x_s.len()]
        };
        (0..x_s.len())
            .map(|i| {
                self.on_state * x_s[i]
                    + self.on_x0hat * x0hat[i]
                    + self.on_x1 * x1[i]
                    + scale * noise[i]
            })
            .collect()
    }
}

/// Exponential-integrator step for the bridge SDE.
pub(crate) fn sde1_coeffs(schedule: &Schedule, s: f64, t: f64) -> LinearStep {
    let es = schedule.at(s);
    let et = schedule.at(t);
    let ratio = et.sigma2 / es.sigma2;
    LinearStep {
        on_state: et.alpha * et.sigma2 / (es.alpha * es.sigma2),
        on_x0hat: et.alpha * (1.0 - ratio),
        on_x1: 0.0,
        noise_std: et.alpha * et.sigma2.sqrt() * (1.0 - ratio).sqrt(),
    }
}

/// Exponential-integrator step for the bridge ODE, with the exact `s = 1`
/// limit (noiseless marginal interpolation) applied on the first step.
pub(crate) fn ode1_coeffs(schedule: &Schedule, s: f64, t: f64) -> LinearStep {
    let et = schedule.at(t);
    if s >= 1.0 {
        return LinearStep {
            on_state: 0.0,
            on_x0hat: et.alpha * et.sigma2_bar / et.sigma2_1,
            on_x1: et.alpha_bar * et.sigma2 / et.sigma2_1,
            noise_std: 0.0,
        };
    }
    let es = schedule.at(s);
    let (ss, sbs) = (es.sigma2.sqrt(), es.sigma2_bar.sqrt());
    let (st, sbt) = (et.sigma2.sqrt(), et.sigma2_bar.sqrt());
    let on_state = et.alpha * st * sbt / (es.alpha * ss * sbs);
    let on_x0hat = et.alpha / et.sigma2_1 * (et.sigma2_bar - sbs * st * sbt / ss);
    // alpha_t / alpha_1 = alpha_bar_t absorbs the x1 / alpha_1 factor
    let on_x1 = et.alpha_bar / et.sigma2_1 * (et.sigma2 - ss * st * sbt / sbs);
    LinearStep {
        on_state,
        on_x0hat,
        on_x1,
        noise_std: 0.0,
    }
}

/// DDIM-style update under bridge coefficient conventions; comparator for
/// the vanishing-`sigma/sigma_1` limit of the ODE step:
/// `x_t = (a_t s_t)/(a_s s_s) x_s + a_t (1 - s_t/s_s) x0hat`.
/// The coefficients sum to `a_t` on a clean point, which is what the limit
/// reduction requires.
pub(crate) fn ddim_coeffs(schedule: &Schedule, s: f64, t: f64) -> LinearStep {
    let es = schedule.at(s);
    let et = schedule.at(t);
    let ratio = (et.sigma2 / es.sigma2).sqrt();
    LinearStep {
        on_state: et.alpha * ratio,
        on_x0hat: et.alpha * (1.0 - ratio),
        on_x1: 0.0,
        noise_std: 0.0,
    }
}

fn check_interval(s: f64, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) || !(t < s) {
        return Err(Error::InvalidInterval { s, t });
    }
    Ok(())
}

/// Drift and diffusion of the bridge SDE at `(t, x_t)`; `t = 0` is singular.
pub fn bridge_sde_drift(
    schedule: &Schedule,
    t: f64,
    x_t: &[f64],
    x0hat: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let e = schedule.eval(t)?;
    if e.sigma2 <= 0.0 {
        return Err(Error::TimeOutOfRange { t });
    }
    let pull = e.g2 / (e.alpha * e.alpha * e.sigma2);
    let drift = (0..x_t.len())
        .map(|i| e.f * x_t[i] + pull * (x_t[i] - e.alpha * x0hat[i]))
        .collect();
    Ok((drift, e.g2.sqrt()))
}

/// Drift of the bridge ODE at `(t, x_t)`; both endpoints are singular.
pub fn bridge_ode_drift(
    schedule: &Schedule,
    t: f64,
    x_t: &[f64],
    x0hat: &[f64],
    x1: &[f64],
) -> Result<Vec<f64>> {
    let e = schedule.eval(t)?;
    if e.sigma2 <= 0.0 || e.sigma2_bar <= 0.0 {
        return Err(Error::TimeOutOfRange { t });
    }
    let a2 = e.alpha * e.alpha;
    let pull1 = 0.5 * e.g2 / (a2 * e.sigma2_bar);
    let pull0 = 0.5 * e.g2 / (a2 * e.sigma2);
    Ok((0..x_t.len())
        .map(|i| {
            e.f * x_t[i] - pull1 * (x_t[i] - e.alpha_bar * x1[i])
                + pull0 * (x_t[i] - e.alpha * x0hat[i])
        })
        .collect())
}

/// First-order bridge-SDE step from `(s, x_s)` to `t < s` given a data
/// prediction at `s`. Noise is `N(0, I / tau_b)`.
pub fn sde_first_order_step<R: Rng + ?Sized>(
    schedule: &Schedule,
    s: f64,
    t: f64,
    x_s: &[f64],
    x0hat: &[f64],
    rng: &mut R,
    tau_b: f64,
) -> Result<Vec<f64>> {
    check_interval(s, t)?;
    Ok(sde1_coeffs(schedule, s, t).apply(x_s, x0hat, x_s, tau_b, rng))
}

/// First-order bridge-ODE step from `(s, x_s)` to `t < s`. At `s = 1` the
/// continuous-limit form is used (see module docs).
pub fn ode_first_order_step(
    schedule: &Schedule,
    s: f64,
    t: f64,
    x_s: &[f64],
    x0hat: &[f64],
    x1: &[f64],
) -> Result<Vec<f64>> {
    check_interval(s, t)?;
    let c = ode1_coeffs(schedule, s, t);
    Ok((0..x_s.len())
        .map(|i| c.on_state * x_s[i] + c.on_x0hat * x0hat[i] + c.on_x1 * x1[i])
        .collect())
}

/// DDIM-style deterministic step; `t = 0` collapses to the data prediction.
pub fn ddim_step(
    schedule: &Schedule,
    s: f64,
    t: f64,
    x_s: &[f64],
    x0hat: &[f64],
) -> Result<Vec<f64>> {
    check_interval(s, t)?;
    let c = ddim_coeffs(schedule, s, t);
    Ok((0..x_s.len())
        .map(|i| c.on_state * x_s[i] + c.on_x0hat * x0hat[i])
        .collect())
}

/// Predictor-corrector sampler for the bridge SDE (two evaluations and two
/// independent noise draws per grid step).
pub fn second_order_sde_sample<R: Rng + ?Sized>(
    schedule: &Schedule,
    predictor: &dyn Predictor,
    grid: &TimeGrid,
    x1: &[f64],
    rng: &mut R,
    tau_b: f64,
) -> Result<Vec<f64>> {
    let mut x = x1.to_vec();
    for (s, t) in grid.steps() {
        let coeffs = sde1_coeffs(schedule, s, t);
        let x0_s = predict_x0(predictor, schedule, &x, s, x1)?;
        let x_pred = coeffs.apply(&x, &x0_s, x1, tau_b, rng);
        let x0_t = predict_x0(predictor, schedule, &x_pred, t, x1)?;
        let avg: Vec<f64> = x0_s
            .iter()
            .zip(&x0_t)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        x = coeffs.apply(&x, &avg, x1, tau_b, rng);
    }
    Ok(x)
}

/// Predictor-corrector sampler for the bridge ODE.
pub fn second_order_ode_sample(
    schedule: &Schedule,
    predictor: &dyn Predictor,
    grid: &TimeGrid,
    x1: &[f64],
) -> Result<Vec<f64>> {
    let mut x = x1.to_vec();
    let mut rng = NoNoise;
    for (s, t) in grid.steps() {
        let coeffs = ode1_coeffs(schedule, s, t);
        let x0_s = predict_x0(predictor, schedule, &x, s, x1)?;
        let x_pred = coeffs.apply(&x, &x0_s, x1, 1.0, &mut rng);
        let x0_t = predict_x0(predictor, schedule, &x_pred, t, x1)?;
        let avg: Vec<f64> = x0_s
            .iter()
            .zip(&x0_t)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        x = coeffs.apply(&x, &avg, x1, 1.0, &mut rng);
    }
    Ok(x)
}

/// Direct Euler-Maruyama discretization of the bridge SDE (baseline).
/// Drift is always evaluated at the pre-step time, so `t = 0` is never hit.
pub fn euler_maruyama_sample<R: Rng + ?Sized>(
    schedule: &Schedule,
    predictor: &dyn Predictor,
    grid: &TimeGrid,
    x1: &[f64],
    rng: &mut R,
    tau_b: f64,
) -> Result<Vec<f64>> {
    let mut x = x1.to_vec();
    for (s, t) in grid.steps() {
        let x0hat = predict_x0(predictor, schedule, &x, s, x1)?;
        let (drift, g) = bridge_sde_drift(schedule, s, &x, &x0hat)?;
        let dt = t - s;
        let noise = standard_normal_vec(x.len(), rng);
        let scale = g * (s - t).sqrt() / tau_b.sqrt();
        for i in 0..x.len() {
            x[i] += drift[i] * dt + scale * noise[i];
        }
    }
    Ok(x)
}

/// Full sampling loop: uniform grid from the config, one chain from `x1`.
pub fn sample<R: Rng + ?Sized>(
    schedule: &Schedule,
    predictor: &dyn Predictor,
    config: &SamplerConfig,
    x1: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    config.validate()?;
    let grid = config.grid()?;
    match config.kind {
        SamplerKind::Sde1 => {
            let mut x = x1.to_vec();
            for (s, t) in grid.steps() {
                let x0hat = predict_x0(predictor, schedule, &x, s, x1)?;
                x = sde1_coeffs(schedule, s, t).apply(&x, &x0hat, x1, config.tau_b, rng);
            }
            Ok(x)
        }
        SamplerKind::Ode1 => {
            let mut x = x1.to_vec();
            for (s, t) in grid.steps() {
                let x0hat = predict_x0(predictor, schedule, &x, s, x1)?;
                x = ode_apply(&ode1_coeffs(schedule, s, t), &x, &x0hat, x1);
            }
            Ok(x)
        }
        SamplerKind::Sde2 => second_order_sde_sample(schedule, predictor, &grid, x1, rng, config.tau_b),
        SamplerKind::Ode2 => second_order_ode_sample(schedule, predictor, &grid, x1),
        SamplerKind::EulerMaruyama => {
            euler_maruyama_sample(schedule, predictor, &grid, x1, rng, config.tau_b)
        }
    }
}

/// `n_chains` independent chains from the same `x1`, stepped together so the
/// predictor sees whole batches. Noise is drawn per chain in chain order.
pub fn sample_batch<R: Rng + ?Sized>(
    schedule: &Schedule,
    predictor: &dyn Predictor,
    config: &SamplerConfig,
    x1: &[f64],
    n_chains: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let grid = config.grid()?;
    let mut states: Vec<Vec<f64>> = vec![x1.to_vec(); n_chains];
    match config.kind {
        SamplerKind::Sde1 => {
            for (s, t) in grid.steps() {
                let coeffs = sde1_coeffs(schedule, s, t);
                let x0hats = predict_x0_batch(predictor, schedule, &states, s, x1)?;
                for (x, x0hat) in states.iter_mut().zip(&x0hats) {
                    *x = coeffs.apply(x, x0hat, x1, config.tau_b, rng);
                }
            }
        }
        SamplerKind::Ode1 => {
            for (s, t) in grid.steps() {
                let coeffs = ode1_coeffs(schedule, s, t);
                let x0hats = predict_x0_batch(predictor, schedule, &states, s, x1)?;
                for (x, x0hat) in states.iter_mut().zip(&x0hats) {
                    *x = ode_apply(&coeffs, x, x0hat, x1);
                }
            }
        }
        SamplerKind::Sde2 => {
            for (s, t) in grid.steps() {
                let coeffs = sde1_coeffs(schedule, s, t);
                let x0_s = predict_x0_batch(predictor, schedule, &states, s, x1)?;
                let preds: Vec<Vec<f64>> = states
                    .iter()
                    .zip(&x0_s)
                    .map(|(x, x0)| coeffs.apply(x, x0, x1, config.tau_b, rng))
                    .collect();
                let x0_t = predict_x0_batch(predictor, schedule, &preds, t, x1)?;
                for ((x, a), b) in states.iter_mut().zip(&x0_s).zip(&x0_t) {
                    let avg: Vec<f64> = a.iter().zip(b).map(|(u, v)| 0.5 * (u + v)).collect();
                    *x = coeffs.apply(x, &avg, x1, config.tau_b, rng);
                }
            }
        }
        SamplerKind::Ode2 => {
            let mut no_noise = NoNoise;
            for (s, t) in grid.steps() {
                let coeffs = ode1_coeffs(schedule, s, t);
                let x0_s = predict_x0_batch(predictor, schedule, &states, s, x1)?;
                let preds: Vec<Vec<f64>> = states
                    .iter()
                    .zip(&x0_s)
                    .map(|(x, x0)| coeffs.apply(x, x0, x1, 1.0, &mut no_noise))
                    .collect();
                let x0_t = predict_x0_batch(predictor, schedule, &preds, t, x1)?;
                for ((x, a), b) in states.iter_mut().zip(&x0_s).zip(&x0_t) {
                    let avg: Vec<f64> = a.iter().zip(b).map(|(u, v)| 0.5 * (u + v)).collect();
                    *x = coeffs.apply(x, &avg, x1, 1.0, &mut no_noise);
                }
            }
        }
        SamplerKind::EulerMaruyama => {
            for (s, t) in grid.steps() {
                let x0hats = predict_x0_batch(predictor, schedule, &states, s, x1)?;
                for (x, x0hat) in states.iter_mut().zip(&x0hats) {
                    let (drift, g) = bridge_sde_drift(schedule, s, x, x0hat)?;
                    let noise = standard_normal_vec(x.len(), rng);
                    let scale = g * (s - t).sqrt() / config.tau_b.sqrt();
                    for i in 0..x.len() {
                        x[i] += drift[i] * (t - s) + scale * noise[i];
                    }
                }
            }
        }
    }
    Ok(states)
}

fn ode_apply(c: &LinearStep, x_s: &[f64], x0hat: &[f64], x1: &[f64]) -> Vec<f64> {
    (0..x_s.len())
        .map(|i| c.on_state * x_s[i] + c.on_x0hat * x0hat[i] + c.on_x1 * x1[i])
        .collect()
}

/// Rng that must never be asked for bytes; used on deterministic paths where
/// the noise coefficient is identically zero.
struct NoNoise;

impl rand::RngCore for NoNoise {
    fn next_u32(&mut self) -> u32 {
        unreachable!("deterministic path drew randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("deterministic path drew randomness")
    }
    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("deterministic path drew randomness")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::marginal_params;
    use crate::predictors::{
        ConstantPredictor, GaussianPosteriorOracle, GaussianTaskParams,
    };
    use crate::schedules::{Schedule, ScheduleSpec};
    use crate::vecmath::{dist2, linear2, max_abs_diff, sample_mean};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn gmax() -> Schedule {
        Schedule::new(ScheduleSpec::BridgeGmax {
            beta0: 0.01,
            beta1: 50.0,
        })
        .unwrap()
    }

    fn vp() -> Schedule {
        Schedule::new(ScheduleSpec::BridgeVp {
            beta0: 0.01,
            beta1: 20.0,
        })
        .unwrap()
    }

    fn constant(sigma: f64) -> Schedule {
        Schedule::new(ScheduleSpec::ConstantG { sigma }).unwrap()
    }

    #[test]
    fn uniform_grids() {
        let g = TimeGrid::uniform(1).unwrap();
        assert_eq!(g.times(), &[1.0, 0.0]);
        let g = TimeGrid::uniform(4).unwrap();
        assert_eq!(g.times(), &[1.0, 0.75, 0.5, 0.25, 0.0]);
        assert!(TimeGrid::uniform(0).is_err());
        for n in [1, 3, 7, 100] {
            let g = TimeGrid::uniform(n).unwrap();
            assert_eq!(g.times()[0], 1.0);
            assert_eq!(*g.times().last().unwrap(), 0.0);
            assert!(g.times().windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn explicit_grid_validation() {
        assert!(TimeGrid::from_times(vec![1.0, 0.5, 0.0]).is_ok());
        assert!(TimeGrid::from_times(vec![0.9, 0.5, 0.0]).is_err());
        assert!(TimeGrid::from_times(vec![1.0, 0.5, 0.1]).is_err());
        assert!(TimeGrid::from_times(vec![1.0, 0.5, 0.5, 0.0]).is_err());
    }

    #[test]
    fn sampler_config_validation() {
        assert!(SamplerConfig::new(SamplerKind::Sde2, 3, 1.0).is_err());
        assert!(SamplerConfig::new(SamplerKind::Ode2, 2, 1.0).is_ok());
        assert!(SamplerConfig::new(SamplerKind::Sde1, 0, 1.0).is_err());
        assert!(SamplerConfig::new(SamplerKind::Sde1, 1, 0.0).is_err());
    }

    #[test]
    fn sde_drift_score_term_vanishes_at_prediction() {
        let sched = vp();
        let t = 0.6;
        let e = sched.eval(t).unwrap();
        let x0hat = vec![0.7, -0.3];
        let x_t: Vec<f64> = x0hat.iter().map(|v| e.alpha * v).collect();
        let (drift, g) = bridge_sde_drift(&sched, t, &x_t, &x0hat).unwrap();
        for i in 0..2 {
            assert_relative_eq!(drift[i], e.f * x_t[i], max_relative = 1e-12);
        }
        assert_relative_eq!(g * g, e.g2, max_relative = 1e-12);
    }

    #[test]
    fn sde_drift_constant_g_closed_form() {
        // f = 0, g = sigma: drift = (x - x0hat) / t.
        let sched = constant(5.0);
        let t = 0.4;
        let (drift, _) = bridge_sde_drift(&sched, t, &[2.0], &[0.5]).unwrap();
        assert_relative_eq!(drift[0], (2.0 - 0.5) / t, max_relative = 1e-12);
    }

    #[test]
    fn sde_drift_gmax_coefficient_value() {
        let (drift, _) = bridge_sde_drift(&gmax(), 0.5, &[1.0], &[0.0]).unwrap();
        // g^2(0.5) / sigma2(0.5) = 25.005 / 6.25375
        assert_abs_diff_eq!(drift[0], 3.9984, epsilon = 1e-4);
        assert_relative_eq!(drift[0], 25.005 / 6.25375, max_relative = 1e-12);
    }

    #[test]
    fn sde_drift_rejects_time_zero() {
        assert!(bridge_sde_drift(&gmax(), 0.0, &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn ode_drift_follows_marginal_mean_velocity() {
        // Along the bridge mean with exact data prediction, the ODE drift
        // equals d/dt of the marginal mean; for constant g that is x1 - x0.
        let sched = constant(5.0);
        let x0 = vec![1.0, -1.0];
        let x1 = vec![0.0, 2.0];
        for t in [0.2, 0.5, 0.8] {
            let m = marginal_params(&sched, t).unwrap();
            let mean = linear2(m.w0, &x0, m.w1, &x1);
            let drift = bridge_ode_drift(&sched, t, &mean, &x0, &x1).unwrap();
            for i in 0..2 {
                assert_relative_eq!(drift[i], x1[i] - x0[i], max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn ode_drift_symmetric_cancellation() {
        let sched = constant(5.0);
        let t = 0.5;
        // x_t = alpha_bar x1 = alpha x0hat and f = 0 kills every term
        let v = vec![1.3, -0.2];
        let drift = bridge_ode_drift(&sched, t, &v, &v, &v).unwrap();
        assert_abs_diff_eq!(crate::vecmath::norm2(&drift), 0.0);
    }

    #[test]
    fn ode_drift_rejects_boundaries() {
        assert!(bridge_ode_drift(&gmax(), 0.0, &[1.0], &[0.0], &[0.0]).is_err());
        assert!(bridge_ode_drift(&gmax(), 1.0, &[1.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn ode_step_is_consistent_with_euler_on_the_drift() {
        // One exponential-integrator step s -> t matches explicit Euler on
        // the ODE drift to O((s - t)^2): Richardson-style comparison.
        let sched = gmax();
        let x1 = vec![0.5, -0.5];
        let x0hat = vec![1.0, 2.0];
        let x_s = vec![0.8, 0.1];
        let s = 0.6;
        let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|h| {
                let t = s - h;
                let exact = ode_first_order_step(&sched, s, t, &x_s, &x0hat, &x1).unwrap();
                let drift = bridge_ode_drift(&sched, s, &x_s, &x0hat, &x1).unwrap();
                let euler: Vec<f64> = (0..2).map(|i| x_s[i] - h * drift[i]).collect();
                dist2(&exact, &euler)
            })
            .collect();
        // halving h should cut the gap by ~4x
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
        assert!(errs[1] / errs[2] > 3.0, "{errs:?}");
    }

    #[test]
    fn sde_step_from_prior_to_zero_returns_prediction() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x1 = vec![4.0, -2.0];
        let x0hat = vec![1.0, 1.0];
        for sched in [gmax(), vp(), constant(5.0)] {
            let out = sde_first_order_step(&sched, 1.0, 0.0, &x1, &x0hat, &mut rng, 1.0).unwrap();
            assert!(max_abs_diff(&out, &x0hat) <= 1e-12);
        }
    }

    #[test]
    fn sde_step_matches_shortened_bridge_posterior() {
        for sched in [gmax(), vp(), constant(5.0)] {
            for (s, t) in [(0.9, 0.4), (0.5, 0.25), (1.0, 0.5)] {
                let es = sched.eval(s).unwrap();
                let et = sched.eval(t).unwrap();
                let c = sde1_coeffs(&sched, s, t);
                let mean_x0 = et.alpha * (es.sigma2 - et.sigma2) / es.sigma2;
                let mean_xs = (et.alpha / es.alpha) * et.sigma2 / es.sigma2;
                let var = et.alpha * et.alpha * et.sigma2 * (es.sigma2 - et.sigma2) / es.sigma2;
                assert_relative_eq!(c.on_x0hat, mean_x0, max_relative = 1e-12);
                assert_relative_eq!(c.on_state, mean_xs, max_relative = 1e-12);
                assert_relative_eq!(c.noise_std * c.noise_std, var, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn sde_step_continuous_in_gap() {
        let sched = gmax();
        let x_s = vec![1.0, 2.0];
        let x0hat = vec![0.0, 0.0];
        let s = 0.7;
        let c = sde1_coeffs(&sched, s, s - 1e-9);
        let mean: Vec<f64> = (0..2)
            .map(|i| c.on_state * x_s[i] + c.on_x0hat * x0hat[i])
            .collect();
        assert!(max_abs_diff(&mean, &x_s) < 1e-7);
        assert!(c.noise_std < 1e-3);
    }

    #[test]
    fn ode_step_from_prior_to_zero_returns_prediction() {
        let x1 = vec![4.0, -2.0];
        let x0hat = vec![1.0, 1.0];
        for sched in [gmax(), vp(), constant(5.0)] {
            let out = ode_first_order_step(&sched, 1.0, 0.0, &x1, &x0hat, &x1).unwrap();
            assert!(max_abs_diff(&out, &x0hat) <= 1e-12);
        }
    }

    #[test]
    fn ode_steps_compose_exactly_for_constant_prediction() {
        let x1 = vec![4.0, -2.0];
        let c = vec![0.3, 0.9];
        for sched in [gmax(), vp(), constant(5.0)] {
            let single = ode_first_order_step(&sched, 1.0, 0.0, &x1, &c, &x1).unwrap();
            let mid = ode_first_order_step(&sched, 1.0, 0.5, &x1, &c, &x1).unwrap();
            let composed = ode_first_order_step(&sched, 0.5, 0.0, &mid, &c, &x1).unwrap();
            assert!(max_abs_diff(&single, &composed) <= 1e-10);
        }
    }

    #[test]
    fn ddim_collapses_to_prediction_at_zero() {
        let out = ddim_step(&gmax(), 0.7, 0.0, &[3.0], &[1.25]).unwrap();
        assert_abs_diff_eq!(out[0], 1.25);
    }

    #[test]
    fn ddim_matches_ode_step_when_sigma_ratio_vanishes() {
        // sigma_s^2 / sigma_1^2 <= 1e-4 puts the two rules within 1%.
        let sched = constant(1.0);
        let (s, t) = (1e-4, 5e-5);
        let x_s = vec![0.8, -0.3];
        let x0hat = vec![0.2, 0.1];
        let x1 = vec![1.0, 1.0];
        let ode = ode_first_order_step(&sched, s, t, &x_s, &x0hat, &x1).unwrap();
        let ddim = ddim_step(&sched, s, t, &x_s, &x0hat).unwrap();
        for i in 0..2 {
            let rel = (ode[i] - ddim[i]).abs() / ode[i].abs().max(1e-12);
            assert!(rel < 0.01, "component {i}: {} vs {}", ode[i], ddim[i]);
        }
    }

    #[test]
    fn ddim_coefficients_scale_invariant_in_g() {
        // Fixed (s, t): rescaling g leaves sigma_t / sigma_s and therefore
        // the ddim coefficients unchanged.
        let (s, t) = (0.8, 0.3);
        let a = ddim_coeffs(&constant(1.0), s, t);
        let b = ddim_coeffs(&constant(10.0), s, t);
        assert_relative_eq!(a.on_state, b.on_state, max_relative = 1e-12);
        assert_relative_eq!(a.on_x0hat, b.on_x0hat, max_relative = 1e-12);
    }

    #[test]
    fn second_order_sde_single_outer_step_trace() {
        // N = 1: prediction lands on x_theta(x1, 1); the correction averages
        // the prediction with the re-evaluation at t = 0. A predictor that is
        // consistent at t = 0 (returns its state) reproduces the one-step
        // identity exactly.
        let sched = gmax();
        let task = GaussianTaskParams::new(vec![1.0, -1.0], 1.0).unwrap();
        let oracle = GaussianPosteriorOracle::new(sched, task.clone());
        let x1 = vec![1.0, -1.0];
        let grid = TimeGrid::uniform(1).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let out = second_order_sde_sample(&sched, &oracle, &grid, &x1, &mut rng, 1.0).unwrap();
        assert!(max_abs_diff(&out, &task.m) <= 1e-12);
    }

    #[test]
    fn second_order_sde_exact_for_lambda_linear_prediction() {
        // x_theta(., tau) = a + b * lambda_tau (state-free) makes the
        // averaged correction the exact integral: trapezoid on a linear
        // integrand in lambda.
        struct LambdaLinear {
            sched: Schedule,
            a: Vec<f64>,
            b: Vec<f64>,
        }
        impl Predictor for LambdaLinear {
            fn parameterization(&self) -> crate::predictors::Parameterization {
                crate::predictors::Parameterization::X0
            }
            fn eval(&self, _x: &[f64], t: f64, _x1: &[f64]) -> Vec<f64> {
                let lambda = self.sched.eval(t).unwrap().lambda;
                linear2(1.0, &self.a, lambda, &self.b)
            }
        }
        let sched = gmax();
        let pred = LambdaLinear {
            sched,
            a: vec![0.4, -0.2],
            b: vec![0.05, 0.1],
        };
        let (s, t) = (0.8, 0.3);
        let es = sched.eval(s).unwrap();
        let et = sched.eval(t).unwrap();
        let (ls, lt) = (es.lambda, et.lambda);
        let x_s = vec![2.0, 1.0];
        // exact mean: A x_s - alpha_t sigma_t^2 * integral of (a + b lambda) dlambda
        let c = sde1_coeffs(&sched, s, t);
        let integral: Vec<f64> = (0..2)
            .map(|i| (lt - ls) * pred.a[i] + 0.5 * (lt * lt - ls * ls) * pred.b[i])
            .collect();
        let exact: Vec<f64> = (0..2)
            .map(|i| c.on_state * x_s[i] - et.alpha * et.sigma2 * integral[i])
            .collect();
        // correction mean with the averaged predictor (noise suppressed by
        // evaluating the deterministic part only)
        let x0_s = pred.eval(&x_s, s, &x_s);
        let x0_t = pred.eval(&x_s, t, &x_s);
        let corrected: Vec<f64> = (0..2)
            .map(|i| c.on_state * x_s[i] + c.on_x0hat * 0.5 * (x0_s[i] + x0_t[i]))
            .collect();
        assert!(max_abs_diff(&exact, &corrected) <= 1e-12, "{exact:?} vs {corrected:?}");
    }

    #[test]
    fn second_order_ode_constant_prediction_identical_to_first_order() {
        let c = vec![0.3, 0.9];
        let pred = ConstantPredictor::new(c.clone());
        let x1 = vec![4.0, -2.0];
        for sched in [gmax(), vp(), constant(5.0)] {
            let grid = TimeGrid::uniform(8).unwrap();
            let second = second_order_ode_sample(&sched, &pred, &grid, &x1).unwrap();
            let mut x = x1.clone();
            for (s, t) in grid.steps() {
                x = ode_first_order_step(&sched, s, t, &x, &c, &x1).unwrap();
            }
            assert!(max_abs_diff(&second, &x) <= 1e-12);
        }
    }

    #[test]
    fn euler_maruyama_mean_matches_sde_step_to_second_order() {
        // One EM step mean differs from the exponential-integrator mean by
        // O(dt^2). (Needs curvature in sigma_t^2: for constant g the mean
        // path is linear in t and Euler happens to be exact.)
        let sched = gmax();
        let c = vec![0.5];
        let s = 0.8;
        let x_s = vec![2.0];
        let errs: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|h| {
                let t = s - h;
                let (drift, _) = bridge_sde_drift(&sched, s, &x_s, &c).unwrap();
                let em_mean = x_s[0] + drift[0] * (t - s);
                let cc = sde1_coeffs(&sched, s, t);
                let exact_mean = cc.on_state * x_s[0] + cc.on_x0hat * c[0];
                (em_mean - exact_mean).abs()
            })
            .collect();
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
        assert!(errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn euler_maruyama_converges_weakly_to_exact_sampler() {
        // Terminal law error vs the converged sampler decays ~ 1/N. The
        // oracle keeps every step affine, so laws are propagated in closed
        // form and the comparison carries no Monte Carlo noise.
        let sched = gmax();
        let m = vec![1.0, -1.0];
        let oracle = GaussianPosteriorOracle::new(
            sched,
            GaussianTaskParams::new(m.clone(), 1.0).unwrap(),
        );
        let reference = crate::selftest::sde1_law_with_oracle(&sched, &oracle, &m, 1 << 15, 1.0);
        let err_at = |nfe: usize| {
            let law = crate::selftest::em_law_with_oracle(&sched, &oracle, &m, nfe, 1.0);
            crate::selftest::w2_isotropic(&law, &reference.mean, reference.var)
        };
        let errs = [err_at(16), err_at(64), err_at(256)];
        assert!(
            errs[0] / errs[1] > 2.5 && errs[1] / errs[2] > 2.5,
            "expected ~1/N weak-error decay, got {errs:?}"
        );
        // and a sampled run agrees with the propagated law
        let mut rng = ChaCha12Rng::seed_from_u64(1234);
        let cfg = SamplerConfig::new(SamplerKind::EulerMaruyama, 64, 1.0).unwrap();
        let outs = sample_batch(&sched, &oracle, &cfg, &m, 20_000, &mut rng).unwrap();
        let law = crate::selftest::em_law_with_oracle(&sched, &oracle, &m, 64, 1.0);
        let mean = sample_mean(&outs);
        let se = (law.var / 20_000.0).sqrt();
        assert!(dist2(&mean, &law.mean) <= 4.0 * se * 2.0, "{mean:?} vs {:?}", law.mean);
        let cov = crate::vecmath::sample_covariance(&outs);
        for i in 0..2 {
            let rel = (cov[i][i] - law.var).abs() / law.var;
            assert!(rel < 0.05, "variance mismatch: {} vs {}", cov[i][i], law.var);
        }
    }

    #[test]
    fn one_step_identity_for_every_exponential_integrator_kind() {
        let sched = gmax();
        let m = vec![1.0, -1.0];
        let oracle =
            GaussianPosteriorOracle::new(sched, GaussianTaskParams::new(m.clone(), 1.0).unwrap());
        let x1 = vec![2.0, 0.5];
        let direct = oracle.eval(&x1, 1.0, &x1);
        for (kind, nfe) in [
            (SamplerKind::Sde1, 1),
            (SamplerKind::Ode1, 1),
            (SamplerKind::Sde2, 2),
            (SamplerKind::Ode2, 2),
        ] {
            for tau in [1.0, 2.0] {
                let mut rng = ChaCha12Rng::seed_from_u64(77);
                let cfg = SamplerConfig::new(kind, nfe, tau).unwrap();
                let out = sample(&sched, &oracle, &cfg, &x1, &mut rng).unwrap();
                assert!(
                    max_abs_diff(&out, &direct) <= 1e-12,
                    "{kind:?} tau={tau}: {out:?} vs {direct:?}"
                );
            }
        }
    }

    #[test]
    fn dirac_task_ode_any_nfe_returns_class_mean() {
        let sched = gmax();
        let m = vec![0.7, 0.2];
        let oracle =
            GaussianPosteriorOracle::new(sched, GaussianTaskParams::new(m.clone(), 1e-12).unwrap());
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for nfe in [1, 2, 4, 16] {
            let cfg = SamplerConfig::new(SamplerKind::Ode1, nfe, 1.0).unwrap();
            let out = sample(&sched, &oracle, &cfg, &m, &mut rng).unwrap();
            assert!(max_abs_diff(&out, &m) <= 1e-9, "nfe={nfe}: {out:?}");
        }
    }

    #[test]
    fn temperature_leaves_ode_untouched_and_shrinks_sde_spread() {
        let sched = gmax();
        let m = vec![1.0, -1.0];
        let oracle =
            GaussianPosteriorOracle::new(sched, GaussianTaskParams::new(m.clone(), 1.0).unwrap());
        let x1 = m.clone();
        // ODE: bit-identical for any temperature
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let o1 = sample(
            &sched,
            &oracle,
            &SamplerConfig::new(SamplerKind::Ode1, 8, 1.0).unwrap(),
            &x1,
            &mut rng,
        )
        .unwrap();
        let o2 = sample(
            &sched,
            &oracle,
            &SamplerConfig::new(SamplerKind::Ode1, 8, 7.5).unwrap(),
            &x1,
            &mut rng,
        )
        .unwrap();
        assert_eq!(o1, o2);
        // SDE: higher temperature gives strictly smaller terminal variance
        let spread = |tau: f64| {
            let mut rng = ChaCha12Rng::seed_from_u64(99);
            let cfg = SamplerConfig::new(SamplerKind::Sde1, 16, tau).unwrap();
            let outs = sample_batch(&sched, &oracle, &cfg, &x1, 4000, &mut rng).unwrap();
            let cov = crate::vecmath::sample_covariance(&outs);
            cov[0][0] + cov[1][1]
        };
        assert!(spread(2.0) < spread(1.0));
    }
}
