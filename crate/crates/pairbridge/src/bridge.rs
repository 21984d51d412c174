//! The tractable bridge between a paired boundary `(x0, x1)`.
//!
//! For a reference SDE with linear drift, pinning both endpoints gives
//! closed-form potentials and marginals (all covariances isotropic):
//!
//! - backward potential `psi_hat_t = N(alpha_t x0, alpha_t^2 sigma_t^2 I)`
//! - forward potential  `psi_t     = N(alpha_bar_t x1, alpha_t^2 sigma_bar_t^2 I)`
//! - marginal `p_t = psi_t * psi_hat_t
//!             = N((alpha_t sigma_bar_t^2 x0 + alpha_bar_t sigma_t^2 x1) / sigma_1^2,
//!                (alpha_t^2 sigma_bar_t^2 sigma_t^2 / sigma_1^2) I)`
//!
//! With `f = 0` and constant `g = sigma` this reduces to the classic Brownian
//! bridge `N((1-t) x0 + t x1, sigma^2 t (1-t) I)`.
//!
//! The epsilon-smoothed version (boundaries observed under Gaussian noise) is
//! provided for validation; the crate otherwise operates in the clean limit.

use rand::Rng;

use crate::schedules::Schedule;
use crate::vecmath::{all_finite, check_same_dim, linear2, linear3, standard_normal_vec};
use crate::{Error, Result};

/// One boundary pair: data `x0`, prior `x1`, optional condition label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub condition: Option<usize>,
}

impl PairedSample {
    pub fn new(x0: Vec<f64>, x1: Vec<f64>, condition: Option<usize>) -> Result<Self> {
        check_same_dim(&x0, &x1)?;
        if x0.is_empty() {
            return Err(Error::InvalidArgument(
                "paired sample needs dimension >= 1".into(),
            ));
        }
        if !all_finite(&x0) || !all_finite(&x1) {
            return Err(Error::NonFinite("paired sample"));
        }
        Ok(PairedSample { x0, x1, condition })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}

/// An isotropic Gaussian `N(mean, var * I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub var: f64,
}

impl GaussianParams {
    /// Pointwise product of two Gaussian densities (up to normalization):
    /// precision-weighted mean, harmonic variance.
    pub fn product(&self, other: &GaussianParams) -> GaussianParams {
        debug_assert_eq!(self.mean.len(), other.mean.len());
        let vsum = self.var + other.var;
        let mean = linear2(
            other.var / vsum,
            &self.mean,
            self.var / vsum,
            &other.mean,
        );
        GaussianParams {
            mean,
            var: self.var * other.var / vsum,
        }
    }
}

/// Boundary-smoothed potentials at one time, together with the smoothed
/// endpoint parameters `a`, `b` and the smoothing variance `sigma2_eps`.
#[derive(Debug, Clone)]
pub struct SmoothedPotentials {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma2_eps: f64,
    pub psi_hat: GaussianParams,
    pub psi: GaussianParams,
}

/// The marginal law `p_t` as interpolation weights and a noise scale:
/// `x_t = w0 x0 + w1 x1 + std * eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalParams {
    pub w0: f64,
    pub w1: f64,
    pub std: f64,
}

/// Smoothed potentials for boundaries observed under `N(0, eps^2 I)` noise.
///
/// The smoothed endpoints are
/// `a = x0 + (s2/sigma_1^2)(x0 - x1/alpha_1)`,
/// `b = x1 + (s2/sigma_1^2)(x1 - alpha_1 x0)`, with
/// `s2 = eps^2 + (sqrt(sigma_1^4 + 4 eps^4) - sigma_1^2)/2`, and the
/// potentials are
/// `psi_hat = N(alpha_t a, alpha_t^2 (s2 + sigma_t^2) I)`,
/// `psi = N(alpha_bar_t b, alpha_t^2 (s2 + sigma_bar_t^2) I)`.
pub fn smoothed_potentials(
    schedule: &Schedule,
    t: f64,
    x0: &[f64],
    x1: &[f64],
    eps: f64,
) -> Result<SmoothedPotentials> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "smoothing eps must be > 0, got {eps}"
        )));
    }
    check_same_dim(x0, x1)?;
    let e = schedule.eval(t)?;
    let s1sq = e.sigma2_1;
    let alpha_1 = e.alpha / e.alpha_bar;
    let e4 = eps * eps * eps * eps;
    let s2 = eps * eps + 0.5 * ((s1sq * s1sq + 4.0 * e4).sqrt() - s1sq);
    let ratio = s2 / s1sq;
    let a = linear2(1.0 + ratio, x0, -ratio / alpha_1, x1);
    let b = linear2(1.0 + ratio, x1, -ratio * alpha_1, x0);
    let psi_hat = GaussianParams {
        mean: a.iter().map(|v| e.alpha * v).collect(),
        var: e.alpha * e.alpha * (s2 + e.sigma2),
    };
    let psi = GaussianParams {
        mean: b.iter().map(|v| e.alpha_bar * v).collect(),
        var: e.alpha * e.alpha * (s2 + e.sigma2_bar),
    };
    Ok(SmoothedPotentials {
        a,
        b,
        sigma2_eps: s2,
        psi_hat,
        psi,
    })
}

/// Clean-limit potentials `(psi_hat_t, psi_t)`.
pub fn clean_potentials(
    schedule: &Schedule,
    t: f64,
    x0: &[f64],
    x1: &[f64],
) -> Result<(GaussianParams, GaussianParams)> {
    check_same_dim(x0, x1)?;
    let e = schedule.eval(t)?;
    let psi_hat = GaussianParams {
        mean: x0.iter().map(|v| e.alpha * v).collect(),
        var: e.alpha * e.alpha * e.sigma2,
    };
    let psi = GaussianParams {
        mean: x1.iter().map(|v| e.alpha_bar * v).collect(),
        var: e.alpha * e.alpha * e.sigma2_bar,
    };
    Ok((psi_hat, psi))
}

/// Interpolation weights and noise scale of the marginal `p_t`.
pub fn marginal_params(schedule: &Schedule, t: f64) -> Result<MarginalParams> {
    let e = schedule.eval(t)?;
    Ok(marginal_at(&e))
}

pub(crate) fn marginal_at(e: &crate::schedules::ScheduleEval) -> MarginalParams {
    MarginalParams {
        w0: e.alpha * e.sigma2_bar / e.sigma2_1,
        w1: e.alpha_bar * e.sigma2 / e.sigma2_1,
        std: e.alpha * (e.sigma2_bar * e.sigma2).sqrt() / e.sigma2_1.sqrt(),
    }
}

/// Forms `x_t = w0 x0 + w1 x1 + std * eps` from a recorded noise draw.
pub fn form_xt(schedule: &Schedule, t: f64, x0: &[f64], x1: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    check_same_dim(x0, x1)?;
    check_same_dim(x0, eps)?;
    let m = marginal_params(schedule, t)?;
    Ok(linear3(m.w0, x0, m.w1, x1, m.std, eps))
}

/// Draws `x_t` from the marginal at `t` for one boundary pair.
pub fn sample_xt<R: Rng + ?Sized>(
    schedule: &Schedule,
    t: f64,
    pair: &PairedSample,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let eps = standard_normal_vec(pair.dim(), rng);
    form_xt(schedule, t, &pair.x0, &pair.x1, &eps)
}

/// Forward transition of the reference SDE from time `s` to `t >= s`:
/// `N((alpha_t/alpha_s) x_s, alpha_t^2 (sigma_t^2 - sigma_s^2) I)`.
pub fn reference_transition(
    schedule: &Schedule,
    s: f64,
    t: f64,
    x_s: &[f64],
) -> Result<GaussianParams> {
    if !(s <= t) {
        return Err(Error::InvalidInterval { s, t });
    }
    let es = schedule.eval(s)?;
    let et = schedule.eval(t)?;
    let scale = et.alpha / es.alpha;
    Ok(GaussianParams {
        mean: x_s.iter().map(|v| scale * v).collect(),
        var: et.alpha * et.alpha * (et.sigma2 - es.sigma2),
    })
}

/// The reference process conditioned on both endpoints, computed by the
/// Bayes route: combine the forward transition `0 -> t` with the likelihood
/// of reaching `x1` via `t -> 1`, as a product of Gaussians in `x_t`. This is
/// deliberately independent of [`marginal_params`]; the two must agree.
pub fn brownian_conditional(
    schedule: &Schedule,
    t: f64,
    x0: &[f64],
    x1: &[f64],
) -> Result<GaussianParams> {
    check_same_dim(x0, x1)?;
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::TimeOutOfRange { t });
    }
    let from_x0 = reference_transition(schedule, 0.0, t, x0)?;
    // p(x1 | x_t) = N(x1; (alpha_1/alpha_t) x_t, alpha_1^2 (sigma_1^2 - sigma_t^2) I),
    // which as a function of x_t is a Gaussian centered at (alpha_t/alpha_1) x1.
    let et = schedule.eval(t)?;
    let e1 = schedule.eval(1.0)?;
    let scale = e1.alpha / et.alpha;
    let likelihood = GaussianParams {
        mean: x1.iter().map(|v| v / scale).collect(),
        var: e1.alpha * e1.alpha * (e1.sigma2 - et.sigma2) / (scale * scale),
    };
    Ok(from_x0.product(&likelihood))
}
