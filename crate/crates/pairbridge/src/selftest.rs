//! The numerical validation suite.
//!
//! Ten criterion groups cover the whole stack: schedule closed forms against
//! quadrature, the marginal law against Monte Carlo, sampler identities and
//! exactness, the posterior-sampling equivalence, the DDIM limit, the
//! Brownian-bridge reduction, loss-gradient correctness, the end-to-end toy
//! generative run, and the solver-order/temperature sweeps.
//!
//! Each check reports a measured value against its bound; the CLI `selftest`
//! subcommand prints one line per check and exits nonzero if any fail, and
//! the acceptance test suite asserts them individually.
//!
//! Where a sampler is driven by the Gaussian-task posterior oracle, the
//! whole chain is affine in the state and the injected noise, so terminal
//! laws are propagated in closed form here instead of sampled. That keeps
//! the order-comparison checks free of Monte Carlo noise.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::bridge::{form_xt, marginal_params, sample_xt, PairedSample};
use crate::predictors::{
    ConstantPredictor, GaussianPosteriorOracle, GaussianTaskParams, Parameterization, Predictor,
};
use crate::samplers::{sample, sample_batch, SamplerConfig, SamplerKind, TimeGrid};
use crate::schedules::{Schedule, ScheduleSpec};
use crate::training::{
    bridge_loss, train, LossSample, Mlp, MlpPredictor, MlpSpec, ToyTaskSpec, TrainConfig,
};
use crate::vecmath::{
    cov_frobenius_rel_err, dist2, linear2, max_abs_diff, sample_covariance, sample_mean,
    standard_normal_vec,
};

/// Outcome of one check: `value` measured against `bound` under `relation`.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
    pub relation: &'static str,
}

impl CheckResult {
    fn at_most(criterion: u8, name: &str, value: f64, bound: f64) -> Self {
        CheckResult {
            criterion,
            name: name.to_string(),
            passed: value.is_finite() && value <= bound,
            value,
            bound,
            relation: "<=",
        }
    }

    fn at_least(criterion: u8, name: &str, value: f64, bound: f64) -> Self {
        CheckResult {
            criterion,
            name: name.to_string(),
            passed: value.is_finite() && value >= bound,
            value,
            bound,
            relation: ">=",
        }
    }

    fn below(criterion: u8, name: &str, value: f64, bound: f64) -> Self {
        CheckResult {
            criterion,
            name: name.to_string(),
            passed: value.is_finite() && value < bound,
            value,
            bound,
            relation: "<",
        }
    }

    /// `PASS <name> <value> <relation> <bound>`.
    pub fn line(&self) -> String {
        format!(
            "{} {} {:e} {} {:e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.relation,
            self.bound
        )
    }
}

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

fn constant_g(sigma: f64) -> Schedule {
    Schedule::new(ScheduleSpec::ConstantG { sigma }).unwrap()
}

fn all_schedules() -> [Schedule; 3] {
    [gmax(), vp(), constant_g(5.0)]
}

/// Schedule for the unit-variance toy task: same family and beta0 as the
/// reference gmax schedule, with beta1 sized so sigma_1^2 matches the data
/// variance (the reference beta1 = 50 targets mel-scale data and would put
/// the bridge noise 25x above this task's variance).
fn toy_schedule() -> Schedule {
    Schedule::new(ScheduleSpec::BridgeGmax {
        beta0: 0.01,
        beta1: 2.0,
    })
    .unwrap()
}

// ---------------------------------------------------------------------------
// Closed-form law propagation for affine predictors.
//
// With the Gaussian-task oracle, every stepping rule used here is affine in
// (state, noise), so the chain law stays Gaussian with isotropic covariance
// and can be advanced exactly.
// ---------------------------------------------------------------------------

/// An isotropic Gaussian chain state `N(mean, var I)`.
#[derive(Debug, Clone)]
pub struct IsotropicLaw {
    pub mean: Vec<f64>,
    pub var: f64,
}

/// 2-Wasserstein distance between isotropic Gaussians.
pub fn w2_isotropic(a: &IsotropicLaw, mean: &[f64], var: f64) -> f64 {
    let dm = dist2(&a.mean, mean);
    let ds = a.var.sqrt() - var.sqrt();
    (dm * dm + a.mean.len() as f64 * ds * ds).sqrt()
}

/// Terminal law of the first-order bridge-SDE sampler driven by the
/// posterior oracle, from the deterministic start `x1`.
pub fn sde1_law_with_oracle(
    schedule: &Schedule,
    oracle: &GaussianPosteriorOracle,
    x1: &[f64],
    nfe: usize,
    tau_b: f64,
) -> IsotropicLaw {
    let grid = TimeGrid::uniform(nfe).unwrap();
    let mut law = IsotropicLaw {
        mean: x1.to_vec(),
        var: 0.0,
    };
    for (s, t) in grid.steps() {
        let (gain, offset) = oracle.affine_coeffs(s, x1).unwrap();
        let c = crate::samplers::sde1_coeffs(schedule, s, t);
        let p = c.on_state + c.on_x0hat * gain;
        law.mean = law
            .mean
            .iter()
            .zip(&offset)
            .map(|(m, o)| p * m + c.on_x0hat * o)
            .collect();
        law.var = p * p * law.var + c.noise_std * c.noise_std / tau_b;
    }
    law
}

/// Terminal law of the second-order (predictor-corrector) bridge-SDE sampler
/// driven by the posterior oracle. `nfe` counts predictor evaluations (two
/// per grid step).
pub fn sde2_law_with_oracle(
    schedule: &Schedule,
    oracle: &GaussianPosteriorOracle,
    x1: &[f64],
    nfe: usize,
    tau_b: f64,
) -> IsotropicLaw {
    assert!(nfe % 2 == 0, "second-order sampler needs even nfe");
    let grid = TimeGrid::uniform(nfe / 2).unwrap();
    let mut law = IsotropicLaw {
        mean: x1.to_vec(),
        var: 0.0,
    };
    for (s, t) in grid.steps() {
        let (gain_s, off_s) = oracle.affine_coeffs(s, x1).unwrap();
        let (gain_t, off_t) = oracle.affine_coeffs(t, x1).unwrap();
        let c = crate::samplers::sde1_coeffs(schedule, s, t);
        // prediction: xh = (a + b gain_s) x + b off_s + n eps1
        // correction: x' = [a + (b/2) gain_s + (b/2) gain_t (a + b gain_s)] x
        //                 + (b/2) [off_s + off_t + gain_t b off_s]
        //                 + (b/2) gain_t n eps1 + n eps2
        let (a, b, noise) = (c.on_state, c.on_x0hat, c.noise_std);
        let p = a + 0.5 * b * gain_s + 0.5 * b * gain_t * (a + b * gain_s);
        law.mean = law
            .mean
            .iter()
            .zip(off_s.iter().zip(&off_t))
            .map(|(m, (os, ot))| p * m + 0.5 * b * (os + ot + gain_t * b * os))
            .collect();
        let n1 = 0.5 * b * gain_t * noise;
        law.var = p * p * law.var + (n1 * n1 + noise * noise) / tau_b;
    }
    law
}

/// Terminal law of the Euler-Maruyama baseline driven by the posterior
/// oracle.
pub fn em_law_with_oracle(
    schedule: &Schedule,
    oracle: &GaussianPosteriorOracle,
    x1: &[f64],
    nfe: usize,
    tau_b: f64,
) -> IsotropicLaw {
    let grid = TimeGrid::uniform(nfe).unwrap();
    let mut law = IsotropicLaw {
        mean: x1.to_vec(),
        var: 0.0,
    };
    for (s, t) in grid.steps() {
        let (gain, offset) = oracle.affine_coeffs(s, x1).unwrap();
        let e = schedule.eval(s).unwrap();
        let h = s - t;
        let pull = e.g2 / (e.alpha * e.alpha * e.sigma2);
        // x' = x - h [f x + pull (x - alpha (gain x + offset))] + g sqrt(h) eps
        let p = 1.0 - h * (e.f + pull * (1.0 - e.alpha * gain));
        law.mean = law
            .mean
            .iter()
            .zip(&offset)
            .map(|(m, o)| p * m + h * pull * e.alpha * o)
            .collect();
        law.var = p * p * law.var + e.g2 * h / tau_b;
    }
    law
}

// ---------------------------------------------------------------------------
// Criterion 1: schedule closed forms vs quadrature.
// ---------------------------------------------------------------------------

pub fn schedule_consistency() -> Vec<CheckResult> {
    let start = Instant::now();
    let mut worst_quad: f64 = 0.0;
    let mut worst_split: f64 = 0.0;
    for sched in all_schedules() {
        for i in 1..=1000 {
            let t = i as f64 / 1000.0;
            let e = sched.eval(t).unwrap();
            let quad = sched.quadrature_sigma2(t, 1e-10).unwrap();
            worst_quad = worst_quad.max((e.sigma2 - quad).abs() / e.sigma2.max(1e-12));
            worst_split = worst_split
                .max((e.sigma2 + e.sigma2_bar - e.sigma2_1).abs() / e.sigma2_1.max(1e-12));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    vec![
        CheckResult::at_most(1, "schedule-quadrature-agreement", worst_quad, 1e-8),
        CheckResult::at_most(1, "schedule-variance-split", worst_split, 1e-12),
        CheckResult::below(1, "schedule-runtime-seconds", elapsed, 5.0),
    ]
}

// ---------------------------------------------------------------------------
// Criterion 2: the marginal law against Monte Carlo forward draws.
// ---------------------------------------------------------------------------

pub fn marginal_law() -> Vec<CheckResult> {
    let sched = gmax();
    let pair = PairedSample::new(vec![1.5, -0.75], vec![-0.25, 1.0], None).unwrap();
    let n = 100_000;
    let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_0002);
    let mut worst_z: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for t in [0.25, 0.5, 0.75] {
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| sample_xt(&sched, t, &pair, &mut rng).unwrap())
            .collect();
        let m = marginal_params(&sched, t).unwrap();
        let expect = linear2(m.w0, &pair.x0, m.w1, &pair.x1);
        let se = m.std / (n as f64).sqrt();
        let mean = sample_mean(&draws);
        for i in 0..2 {
            worst_z = worst_z.max((mean[i] - expect[i]).abs() / se);
        }
        let cov = sample_covariance(&draws);
        for (i, row) in cov.iter().enumerate() {
            worst_var = worst_var.max((row[i] - m.std * m.std).abs() / (m.std * m.std));
        }
    }
    vec![
        CheckResult::at_most(2, "marginal-mean-z-score", worst_z, 4.0),
        CheckResult::at_most(2, "marginal-variance-rel-err", worst_var, 0.02),
    ]
}

// ---------------------------------------------------------------------------
// Criterion 3: the one-step identity. Every exponential-integrator kind at
// its minimal evaluation budget returns the direct prediction at the prior.
// (The Euler-Maruyama baseline discretizes the drift directly and injects
// g(1) noise on its first step, so the identity cannot apply to it.)
// ---------------------------------------------------------------------------

pub fn one_step_identity() -> Vec<CheckResult> {
    let mut worst: f64 = 0.0;
    let kinds = [
        (SamplerKind::Sde1, 1),
        (SamplerKind::Ode1, 1),
        (SamplerKind::Sde2, 2),
        (SamplerKind::Ode2, 2),
    ];
    for sched in all_schedules() {
        let x1 = vec![2.0, 0.5];
        let c = vec![-0.3, 0.8];
        let constant = ConstantPredictor::new(c.clone());
        let oracle = GaussianPosteriorOracle::new(
            sched,
            GaussianTaskParams::new(vec![1.0, -1.0], 1.0).unwrap(),
        );
        for (kind, nfe) in kinds {
            for tau in [1.0, 2.0] {
                let cfg = SamplerConfig::new(kind, nfe, tau).unwrap();
                let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_0003);
                let got = sample(&sched, &constant, &cfg, &x1, &mut rng).unwrap();
                worst = worst.max(max_abs_diff(&got, &c));
                let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_0004);
                let got = sample(&sched, &oracle, &cfg, &x1, &mut rng).unwrap();
                let direct = oracle.eval(&x1, 1.0, &x1);
                worst = worst.max(max_abs_diff(&got, &direct));
            }
        }
    }
    vec![CheckResult::at_most(
        3,
        "one-step-identity-max-dev",
        worst,
        1e-12,
    )]
}

// ---------------------------------------------------------------------------
// Criterion 4: constant-prediction exactness across grid refinements.
// ---------------------------------------------------------------------------

pub fn constant_predictor_exactness() -> Vec<CheckResult> {
    let grids = [1usize, 2, 4, 64];
    let x1 = vec![3.0, -1.5];
    let c = vec![0.4, 0.9];
    let predictor = ConstantPredictor::new(c.clone());
    let mut worst_ode: f64 = 0.0;
    let mut worst_sde: f64 = 0.0;
    for sched in all_schedules() {
        // ODE1 terminal point must not depend on the grid at all
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let outs: Vec<Vec<f64>> = grids
            .iter()
            .map(|&n| {
                let cfg = SamplerConfig::new(SamplerKind::Ode1, n, 1.0).unwrap();
                sample(&sched, &predictor, &cfg, &x1, &mut rng).unwrap()
            })
            .collect();
        for pair in outs.windows(2) {
            worst_ode = worst_ode.max(max_abs_diff(&pair[0], &pair[1]));
        }
        // SDE1: compose the per-step Gaussians analytically; terminal mean
        // and variance are grid-invariant (and collapse onto the prediction)
        for &n in &grids {
            let grid = TimeGrid::uniform(n).unwrap();
            let mut law = IsotropicLaw {
                mean: x1.clone(),
                var: 0.0,
            };
            for (s, t) in grid.steps() {
                let co = crate::samplers::sde1_coeffs(&sched, s, t);
                law.mean = law
                    .mean
                    .iter()
                    .zip(&c)
                    .map(|(m, ci)| co.on_state * m + co.on_x0hat * ci)
                    .collect();
                law.var = co.on_state * co.on_state * law.var + co.noise_std * co.noise_std;
            }
            worst_sde = worst_sde.max(max_abs_diff(&law.mean, &c));
            worst_sde = worst_sde.max(law.var.abs());
        }
    }
    vec![
        CheckResult::at_most(4, "ode1-grid-invariance", worst_ode, 1e-10),
        CheckResult::at_most(4, "sde1-composition-invariance", worst_sde, 1e-10),
    ]
}

// ---------------------------------------------------------------------------
// Criterion 5: the first-order SDE step equals the shortened-bridge
// posterior in mean and variance.
// ---------------------------------------------------------------------------

pub fn posterior_sampling_equivalence() -> Vec<CheckResult> {
    let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_0005);
    let schedules = all_schedules();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let sched = &schedules[i % 3];
        let s: f64 = rng.random_range(1e-3..=1.0);
        let t: f64 = rng.random_range(0.0..s * (1.0 - 1e-9));
        let x_s = standard_normal_vec(3, &mut rng);
        let x0hat = standard_normal_vec(3, &mut rng);
        let c = crate::samplers::sde1_coeffs(sched, s, t);
        let step_mean: Vec<f64> = (0..3)
            .map(|k| c.on_state * x_s[k] + c.on_x0hat * x0hat[k])
            .collect();
        let step_var = c.noise_std * c.noise_std;
        // posterior of the reference process pinned at (x0hat, x_s),
        // written exactly as the shortened-bridge Gaussian
        let es = sched.eval(s).unwrap();
        let et = sched.eval(t).unwrap();
        let post_mean: Vec<f64> = (0..3)
            .map(|k| {
                (et.alpha * (es.sigma2 - et.sigma2) * x0hat[k]
                    + (et.alpha / es.alpha) * et.sigma2 * x_s[k])
                    / es.sigma2
            })
            .collect();
        let post_var = et.alpha * et.alpha * et.sigma2 * (es.sigma2 - et.sigma2) / es.sigma2;
        worst = worst.max(max_abs_diff(&step_mean, &post_mean));
        worst = worst.max((step_var - post_var).abs() / post_var.max(1.0));
    }
    vec![CheckResult::at_most(
        5,
        "posterior-step-equivalence",
        worst,
        1e-12,
    )]
}

// ---------------------------------------------------------------------------
// Criterion 6: the DDIM limit. Deviation between the first-order ODE step
// and the DDIM update is quadratic in sigma / sigma_1. The comparison holds
// the noise levels sigma_s^2, sigma_t^2 fixed while sigma_1^2 grows 100x
// (sigma x10, times /100); the deviation must shrink by ~100x. (Rescaling
// sigma alone cannot move the ratio: both rules' coefficients are invariant
// under g -> c g at fixed times.)
// ---------------------------------------------------------------------------

pub fn ddim_limit() -> Vec<CheckResult> {
    let x_s = vec![0.8, -0.3];
    let x0hat = vec![0.2, 0.1];
    let x1 = vec![1.0, 1.0];
    let deviation = |sigma: f64, s: f64, t: f64| {
        let sched = constant_g(sigma);
        let ode = crate::samplers::ode_first_order_step(&sched, s, t, &x_s, &x0hat, &x1).unwrap();
        let ddim = crate::samplers::ddim_step(&sched, s, t, &x_s, &x0hat).unwrap();
        dist2(&ode, &ddim)
    };
    let coarse = deviation(1.0, 0.02, 0.01);
    let fine = deviation(10.0, 0.02 / 100.0, 0.01 / 100.0);
    let ratio = coarse / fine;
    vec![
        CheckResult::at_least(6, "ddim-limit-shrink-lower", ratio, 50.0),
        CheckResult::at_most(6, "ddim-limit-shrink-upper", ratio, 200.0),
    ]
}

// ---------------------------------------------------------------------------
// Criterion 7: Brownian-bridge reduction and the conditioned-reference
// identity.
// ---------------------------------------------------------------------------

pub fn brownian_bridge_reduction() -> Vec<CheckResult> {
    let x0 = vec![1.5, -0.75];
    let x1 = vec![-0.25, 1.0];
    let mut worst_classic: f64 = 0.0;
    for sigma in [2.5, 5.0] {
        let sched = constant_g(sigma);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let m = marginal_params(&sched, t).unwrap();
            worst_classic = worst_classic.max((m.w0 - (1.0 - t)).abs());
            worst_classic = worst_classic.max((m.w1 - t).abs());
            worst_classic = worst_classic.max(
                (m.std * m.std - sigma * sigma * t * (1.0 - t)).abs() / (sigma * sigma).max(1.0),
            );
        }
    }
    let mut worst_cond: f64 = 0.0;
    for sched in all_schedules() {
        for i in 1..100 {
            let t = i as f64 / 100.0;
            let cond = crate::bridge::brownian_conditional(&sched, t, &x0, &x1).unwrap();
            let m = marginal_params(&sched, t).unwrap();
            let mean = linear2(m.w0, &x0, m.w1, &x1);
            worst_cond = worst_cond.max(max_abs_diff(&cond.mean, &mean));
            worst_cond = worst_cond.max((cond.var - m.std * m.std).abs());
        }
    }
    vec![
        CheckResult::at_most(7, "brownian-bridge-closed-form", worst_classic, 1e-12),
        CheckResult::at_most(7, "conditioned-reference-vs-marginal", worst_cond, 1e-10),
    ]
}

// ---------------------------------------------------------------------------
// Criterion 8: analytic loss gradients vs central finite differences, for
// all four parameterizations.
// ---------------------------------------------------------------------------

pub fn gradient_correctness() -> Vec<CheckResult> {
    let sched = gmax();
    let spec = MlpSpec {
        layers: vec![5, 32, 32, 2],
    };
    let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_0008);
    let params = [
        Parameterization::X0,
        Parameterization::NoisePsiHat,
        Parameterization::NoiseSb,
        Parameterization::Velocity,
    ];
    params
        .iter()
        .map(|&param| {
            let mut mlp = Mlp::init(spec.clone(), &mut rng).unwrap();
            let batch: Vec<LossSample> = (0..16)
                .map(|_| LossSample {
                    x0: standard_normal_vec(2, &mut rng),
                    x1: standard_normal_vec(2, &mut rng),
                    t: rng.random_range(0.05..0.95),
                    eps: standard_normal_vec(2, &mut rng),
                })
                .collect();
            let analytic = bridge_loss(&mlp, param, &sched, &batch).unwrap();
            let h = 1e-4;
            let mut worst: f64 = 0.0;
            for probe in 0..50 {
                let idx = (probe * 131 + 17) % mlp.num_params();
                let orig = mlp.params()[idx];
                mlp.params_mut()[idx] = orig + h;
                let up = bridge_loss(&mlp, param, &sched, &batch).unwrap().loss;
                mlp.params_mut()[idx] = orig - h;
                let down = bridge_loss(&mlp, param, &sched, &batch).unwrap().loss;
                mlp.params_mut()[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let denom = analytic.grads[idx].abs().max(fd.abs()).max(1e-6);
                worst = worst.max((analytic.grads[idx] - fd).abs() / denom);
            }
            CheckResult::at_most(8, &format!("loss-gradient-fd-{}", param.name()), worst, 1e-4)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Criterion 9: the toy generative run. The analytic oracle must clear the
// generation thresholds with 2x margin first; the trained network then has
// to meet them, and its held-out loss must sit between the oracle's and a
// constant-mean predictor's.
// ---------------------------------------------------------------------------

pub fn toy_generative_run() -> Vec<CheckResult> {
    let start = Instant::now();
    let sched = toy_schedule();
    let task = ToyTaskSpec::with_default_means(2, 3, 1.0, 10_000, 0x5eed_0009).unwrap();
    let n_eval = 10_000;
    let cfg = SamplerConfig::new(SamplerKind::Sde1, 50, 1.0).unwrap();

    // oracle pipeline with 2x-tighter thresholds
    let mut worst_oracle_mean: f64 = 0.0;
    let mut worst_oracle_cov: f64 = 0.0;
    let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_000a);
    for y in 0..task.k {
        let oracle = GaussianPosteriorOracle::new(
            sched,
            GaussianTaskParams::new(task.means[y].clone(), task.s2).unwrap(),
        );
        let outs = sample_batch(&sched, &oracle, &cfg, &task.means[y], n_eval, &mut rng).unwrap();
        let mean = sample_mean(&outs);
        let cov = sample_covariance(&outs);
        worst_oracle_mean = worst_oracle_mean.max(dist2(&mean, &task.means[y]));
        worst_oracle_cov = worst_oracle_cov.max(cov_frobenius_rel_err(&cov, task.s2));
    }

    // trained pipeline
    let train_cfg = TrainConfig {
        eval_nfes: vec![],
        seed: 0x5eed_000b,
        ..TrainConfig::default()
    };
    let outcome = train(&task, &MlpSpec::for_dim(2), &train_cfg, &sched).unwrap();
    let predictor = MlpPredictor {
        mlp: &outcome.mlp,
        param: Parameterization::X0,
    };
    let mut worst_trained_mean: f64 = 0.0;
    let mut worst_trained_cov: f64 = 0.0;
    for y in 0..task.k {
        let outs = sample_batch(
            &sched,
            &predictor,
            &cfg,
            &outcome.encoder.z[y],
            n_eval,
            &mut rng,
        )
        .unwrap();
        let mean = sample_mean(&outs);
        let cov = sample_covariance(&outs);
        worst_trained_mean = worst_trained_mean.max(dist2(&mean, &task.means[y]));
        worst_trained_cov = worst_trained_cov.max(cov_frobenius_rel_err(&cov, task.s2));
    }

    // held-out loss ordering: oracle <= trained <= constant class mean
    let mut held_out: Vec<(usize, LossSample)> = Vec::with_capacity(10_000);
    for _ in 0..10_000 {
        let y = rng.random_range(0..task.k);
        let eps0 = standard_normal_vec(task.d, &mut rng);
        let x0: Vec<f64> = task.means[y]
            .iter()
            .zip(&eps0)
            .map(|(m, e)| m + task.s2.sqrt() * e)
            .collect();
        held_out.push((
            y,
            LossSample {
                x0,
                x1: outcome.encoder.z[y].clone(),
                t: rng.random_range(1e-5..1.0 - 1e-5),
                eps: standard_normal_vec(task.d, &mut rng),
            },
        ));
    }
    let oracles: Vec<GaussianPosteriorOracle> = (0..task.k)
        .map(|y| {
            GaussianPosteriorOracle::new(
                sched,
                GaussianTaskParams::new(task.means[y].clone(), task.s2).unwrap(),
            )
        })
        .collect();
    let (mut loss_oracle, mut loss_trained, mut loss_const) = (0.0, 0.0, 0.0);
    let n = held_out.len() as f64;
    for (y, item) in &held_out {
        let x_t = form_xt(&sched, item.t, &item.x0, &item.x1, &item.eps).unwrap();
        let o = oracles[*y].eval(&x_t, item.t, &item.x1);
        let tr = predictor.eval(&x_t, item.t, &item.x1);
        loss_oracle += dist2(&o, &item.x0).powi(2) / n;
        loss_trained += dist2(&tr, &item.x0).powi(2) / n;
        loss_const += dist2(&task.means[*y], &item.x0).powi(2) / n;
    }
    let elapsed = start.elapsed().as_secs_f64();

    vec![
        CheckResult::at_most(9, "oracle-generated-mean-err", worst_oracle_mean, 0.025),
        CheckResult::at_most(9, "oracle-generated-cov-err", worst_oracle_cov, 0.05),
        CheckResult::at_most(9, "trained-generated-mean-err", worst_trained_mean, 0.05),
        CheckResult::at_most(9, "trained-generated-cov-err", worst_trained_cov, 0.10),
        CheckResult::at_most(
            9,
            "heldout-loss-oracle-vs-trained",
            loss_oracle,
            loss_trained,
        ),
        CheckResult::at_most(
            9,
            "heldout-loss-trained-vs-constant",
            loss_trained,
            loss_const,
        ),
        CheckResult::at_most(9, "toy-run-seconds", elapsed, 300.0),
    ]
}

// ---------------------------------------------------------------------------
// Criterion 10: solver order and ablation directions on the oracle task,
// all propagated in closed form.
// ---------------------------------------------------------------------------

pub fn order_and_ablation_sweep() -> Vec<CheckResult> {
    let sched = toy_schedule();
    let m = vec![2.0, 0.0];
    let oracle =
        GaussianPosteriorOracle::new(sched, GaussianTaskParams::new(m.clone(), 1.0).unwrap());

    // (a) SDE1 terminal-distribution error strictly decreasing in NFE
    let nfes = [2usize, 4, 8, 16, 32, 64, 128, 256];
    let errs: Vec<f64> = nfes
        .iter()
        .map(|&nfe| {
            let law = sde1_law_with_oracle(&sched, &oracle, &m, nfe, 1.0);
            w2_isotropic(&law, &m, 1.0)
        })
        .collect();
    let max_increase = errs
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);

    // (b) second-order ODE at least as accurate as first-order at equal NFE
    // for NFE >= 8. The walk starts from a perturbed interior state: from
    // the prior point the oracle-driven trajectory rides the marginal mean
    // path, where the prediction is constant and every integrator is exact
    // to rounding.
    let z = vec![1.6, 0.4];
    let s_start = 0.9;
    let mp = marginal_params(&sched, s_start).unwrap();
    let mean = linear2(mp.w0, &m, mp.w1, &z);
    let start = vec![mean[0] + 0.9, mean[1] - 0.7];
    let run_ode = |n_steps: usize, second_order: bool| -> Vec<f64> {
        let mut x = start.clone();
        for k in 0..n_steps {
            let s = s_start * (n_steps - k) as f64 / n_steps as f64;
            let t = s_start * (n_steps - k - 1) as f64 / n_steps as f64;
            let x0_s = crate::predictors::predict_x0(&oracle, &sched, &x, s, &z).unwrap();
            if second_order {
                let ahead =
                    crate::samplers::ode_first_order_step(&sched, s, t, &x, &x0_s, &z).unwrap();
                let x0_t = crate::predictors::predict_x0(&oracle, &sched, &ahead, t, &z).unwrap();
                let avg: Vec<f64> =
                    x0_s.iter().zip(&x0_t).map(|(a, b)| 0.5 * (a + b)).collect();
                x = crate::samplers::ode_first_order_step(&sched, s, t, &x, &avg, &z).unwrap();
            } else {
                x = crate::samplers::ode_first_order_step(&sched, s, t, &x, &x0_s, &z).unwrap();
            }
        }
        x
    };
    let reference = run_ode(1 << 15, true);
    let mut worst_ratio: f64 = 0.0;
    for nfe in [8usize, 16, 32, 64, 128, 256] {
        let e1 = dist2(&run_ode(nfe, false), &reference);
        let e2 = dist2(&run_ode(nfe / 2, true), &reference);
        worst_ratio = worst_ratio.max(e2 / e1);
    }

    // (c) raising the temperature strictly shrinks the terminal variance
    let v1 = sde1_law_with_oracle(&sched, &oracle, &m, 50, 1.0).var;
    let v2 = sde1_law_with_oracle(&sched, &oracle, &m, 50, 2.0).var;

    vec![
        CheckResult::below(10, "sde1-nfe-error-max-increase", max_increase, 0.0),
        CheckResult::at_most(10, "ode2-vs-ode1-error-ratio", worst_ratio, 1.0),
        CheckResult::below(10, "temperature-variance-shrink", v2 - v1, 0.0),
    ]
}

/// Runs every criterion group in order.
pub fn run_all() -> Vec<CheckResult> {
    let mut results = Vec::new();
    results.extend(schedule_consistency());
    results.extend(marginal_law());
    results.extend(one_step_identity());
    results.extend(constant_predictor_exactness());
    results.extend(posterior_sampling_equivalence());
    results.extend(ddim_limit());
    results.extend(brownian_bridge_reduction());
    results.extend(gradient_correctness());
    results.extend(toy_generative_run());
    results.extend(order_and_ablation_sweep());
    results
}
