//! Bridge-loss training on a synthetic conditional paired-data task.
//!
//! The task: `K` conditions, each with data `x0 ~ N(m_y, s2 I)`. The prior
//! side of each pair is a learnable per-condition vector (the "encoder
//! table"), trained first with plain MSE to the class data (warm-up) and
//! then frozen — or updated jointly when the mutable-prior mode is selected.
//!
//! The predictor network sees `concat(x_t, t, x1)` and regresses onto the
//! target of its declared parameterization; the loss is the batch mean of
//! the squared residual norm. Gradients are exact (manual backprop) and are
//! checked against central finite differences in the tests.
//!
//! Training is single-threaded and bit-deterministic for a fixed seed.

pub mod mlp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub use mlp::{adam_step, AdamConfig, AdamState, Mlp, MlpSpec};

use crate::bridge::form_xt;
use crate::predictors::{target_for, Parameterization, Predictor};
use crate::samplers::{sample_batch, SamplerConfig, SamplerKind};
use crate::schedules::Schedule;
use crate::vecmath::{
    cov_frobenius_rel_err, dist2, sample_covariance, sample_mean, standard_normal_vec,
};
use crate::{Error, Result};

/// Synthetic task description: `K` Gaussian condition clusters in `d`
/// dimensions with shared variance `s2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTaskSpec {
    pub d: usize,
    pub k: usize,
    pub means: Vec<Vec<f64>>,
    pub s2: f64,
    pub n_train: usize,
    pub seed: u64,
}

impl ToyTaskSpec {
    pub fn new(
        d: usize,
        k: usize,
        means: Vec<Vec<f64>>,
        s2: f64,
        n_train: usize,
        seed: u64,
    ) -> Result<Self> {
        if d == 0 || k == 0 || n_train == 0 {
            return Err(Error::InvalidArgument(
                "task needs d >= 1, k >= 1, n_train >= 1".into(),
            ));
        }
        if means.len() != k || means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidArgument(format!(
                "need {k} means of dimension {d}"
            )));
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if means[i] == means[j] {
                    return Err(Error::InvalidArgument(format!(
                        "condition means {i} and {j} coincide"
                    )));
                }
            }
        }
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "task variance must be > 0, got {s2}"
            )));
        }
        Ok(ToyTaskSpec {
            d,
            k,
            means,
            s2,
            n_train,
            seed,
        })
    }

    /// Standard setup: condition means on a circle of radius 2 in the first
    /// two coordinates (equally spaced on a line for `d = 1`).
    pub fn with_default_means(d: usize, k: usize, s2: f64, n_train: usize, seed: u64) -> Result<Self> {
        let means = default_means(d, k);
        ToyTaskSpec::new(d, k, means, s2, n_train, seed)
    }
}

pub fn default_means(d: usize, k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut m = vec![0.0; d];
            if d == 1 {
                m[0] = if k == 1 {
                    0.0
                } else {
                    -2.0 + 4.0 * i as f64 / (k - 1) as f64
                };
            } else {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                m[0] = 2.0 * angle.cos();
                m[1] = 2.0 * angle.sin();
            }
            m
        })
        .collect()
}

/// Materialized draws from a [`ToyTaskSpec`].
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub x0: Vec<Vec<f64>>,
    pub label: Vec<usize>,
    pub class_counts: Vec<usize>,
}

pub fn generate_dataset(spec: &ToyTaskSpec) -> ToyDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut x0 = Vec::with_capacity(spec.n_train);
    let mut label = Vec::with_capacity(spec.n_train);
    let mut class_counts = vec![0usize; spec.k];
    let s = spec.s2.sqrt();
    for _ in 0..spec.n_train {
        let y = rng.random_range(0..spec.k);
        let eps = standard_normal_vec(spec.d, &mut rng);
        x0.push(
            spec.means[y]
                .iter()
                .zip(&eps)
                .map(|(m, e)| m + s * e)
                .collect(),
        );
        label.push(y);
        class_counts[y] += 1;
    }
    ToyDataset {
        x0,
        label,
        class_counts,
    }
}

/// One learnable prior vector per condition.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTable {
    pub z: Vec<Vec<f64>>,
}

impl EncoderTable {
    pub fn zeros(k: usize, d: usize) -> Self {
        EncoderTable {
            z: vec![vec![0.0; d]; k],
        }
    }

    fn flat(&self) -> Vec<f64> {
        self.z.iter().flatten().copied().collect()
    }

    fn from_flat(flat: &[f64], k: usize, d: usize) -> Self {
        EncoderTable {
            z: (0..k).map(|y| flat[y * d..(y + 1) * d].to_vec()).collect(),
        }
    }
}

/// Adam budget used for the encoder warm-up stage. The objective is a plain
/// quadratic, so a small rate with many (cheap) steps settles the table well
/// below the 1e-3 band around the empirical class means.
pub fn warmup_adam_config() -> AdamConfig {
    AdamConfig {
        lr: 1e-4,
        steps: 60_000,
        batch: 0, // full batch
        ..AdamConfig::default()
    }
}

/// Trains the encoder table by MSE to the per-condition data. Full-batch
/// gradients: `dL/dz_y = (2 n_y / n) (z_y - mean_y)`.
pub fn encoder_warmup(
    dataset: &ToyDataset,
    k: usize,
    d: usize,
    table: EncoderTable,
    cfg: &AdamConfig,
) -> Result<EncoderTable> {
    cfg.validate()?;
    let n = dataset.x0.len() as f64;
    let mut class_sums = vec![vec![0.0; d]; k];
    for (x, &y) in dataset.x0.iter().zip(&dataset.label) {
        for (s, xi) in class_sums[y].iter_mut().zip(x) {
            *s += xi;
        }
    }
    let mut flat = table.flat();
    let mut state = AdamState::new(flat.len());
    let mut grads = vec![0.0; flat.len()];
    for _ in 0..cfg.steps {
        for y in 0..k {
            let n_y = dataset.class_counts[y] as f64;
            for i in 0..d {
                grads[y * d + i] = 2.0 * (n_y * flat[y * d + i] - class_sums[y][i]) / n;
            }
        }
        adam_step(&mut flat, &grads, &mut state, cfg);
    }
    Ok(EncoderTable::from_flat(&flat, k, d))
}

/// One training example for the bridge loss: the boundary pair, the loss
/// time, and the exact noise draw that formed `x_t`.
#[derive(Debug, Clone)]
pub struct LossSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
    pub eps: Vec<f64>,
}

/// Loss value, parameter gradients, and (data-parameterization only) the
/// per-item gradients with respect to the prior vector `x1`.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub x1_grads: Vec<Vec<f64>>,
}

/// Mean over the batch of the squared residual norm
/// `|| net(x_t, t, x1) - target ||^2`, with exact parameter gradients.
pub fn bridge_loss(
    mlp: &Mlp,
    param: Parameterization,
    schedule: &Schedule,
    batch: &[LossSample],
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty loss batch".into()));
    }
    let d = mlp.spec().output_dim();
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; mlp.num_params()];
    let mut x1_grads = Vec::with_capacity(batch.len());
    for item in batch {
        let x_t = form_xt(schedule, item.t, &item.x0, &item.x1, &item.eps)?;
        let target = target_for(param, schedule, item.t, &item.x0, &item.x1, &item.eps)?;
        let mut input = Vec::with_capacity(2 * d + 1);
        input.extend_from_slice(&x_t);
        input.push(item.t);
        input.extend_from_slice(&item.x1);
        let trace = mlp.forward_trace(&input);
        let out = trace.output();
        let mut dout = vec![0.0; d];
        for i in 0..d {
            let r = out[i] - target[i];
            loss += r * r / b;
            dout[i] = 2.0 * r / b;
        }
        let dinput = mlp.backward_accumulate(&trace, &dout, &mut grads);
        if param == Parameterization::X0 {
            // x1 feeds the network twice: through x_t (weight w1) and as the
            // conditioning slice of the input.
            let m = crate::bridge::marginal_params(schedule, item.t)?;
            let gx1: Vec<f64> = (0..d)
                .map(|i| m.w1 * dinput[i] + dinput[d + 1 + i])
                .collect();
            x1_grads.push(gx1);
        }
    }
    Ok(LossOutput {
        loss,
        grads,
        x1_grads,
    })
}

/// A trained (or in-training) network exposed under the predictor contract.
pub struct MlpPredictor<'a> {
    pub mlp: &'a Mlp,
    pub param: Parameterization,
}

impl Predictor for MlpPredictor<'_> {
    fn parameterization(&self) -> Parameterization {
        self.param
    }

    fn eval(&self, x_t: &[f64], t: f64, x1: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(x_t.len() + 1 + x1.len());
        input.extend_from_slice(x_t);
        input.push(t);
        input.extend_from_slice(x1);
        self.mlp.forward(&input)
    }
}

/// Whether the encoder table is frozen after warm-up or trained jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorMode {
    Fixed,
    Mutable,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub param: Parameterization,
    pub prior_mode: PriorMode,
    /// Loss times are drawn from `U(t_min, 1 - t_min)` to keep the non-data
    /// targets away from their singular boundaries.
    pub t_min: f64,
    /// Fraction of final iterates whose average becomes the returned
    /// parameters (Polyak-style tail averaging). A constant learning rate
    /// leaves Adam wandering a noise ball around the optimum; the averaged
    /// iterate removes most of that wander. `0` returns the last iterate.
    pub tail_average_frac: f64,
    pub eval_samples: usize,
    pub eval_nfes: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            param: Parameterization::X0,
            prior_mode: PriorMode::Fixed,
            t_min: 1e-5,
            tail_average_frac: 0.3,
            eval_samples: 2000,
            eval_nfes: vec![1, 2, 4, 50],
            seed: 0,
        }
    }
}

/// Distribution quality of generated samples for one sampler configuration
/// and condition.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub kind: SamplerKind,
    pub nfe: usize,
    pub tau_b: f64,
    pub condition: usize,
    pub mean_err: f64,
    pub cov_frob_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Loss per optimization step.
    pub loss_curve: Vec<f64>,
    pub metrics: Vec<MetricRow>,
    pub notes: Vec<String>,
}

pub struct TrainOutcome {
    pub mlp: Mlp,
    pub encoder: EncoderTable,
    pub report: TrainReport,
}

/// Full training run: dataset generation, encoder warm-up (or joint
/// training), the bridge-loss loop, and generation metrics at the configured
/// evaluation budgets.
pub fn train(
    task: &ToyTaskSpec,
    mlp_spec: &MlpSpec,
    cfg: &TrainConfig,
    schedule: &Schedule,
) -> Result<TrainOutcome> {
    cfg.adam.validate()?;
    if cfg.adam.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if !(cfg.t_min > 0.0 && cfg.t_min < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "t_min must lie in (0, 0.5), got {}",
            cfg.t_min
        )));
    }
    if cfg.prior_mode == PriorMode::Mutable && cfg.param != Parameterization::X0 {
        return Err(Error::InvalidArgument(
            "joint prior training is only supported with the data parameterization".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.tail_average_frac) {
        return Err(Error::InvalidArgument(format!(
            "tail_average_frac must lie in [0, 1], got {}",
            cfg.tail_average_frac
        )));
    }
    let dataset = generate_dataset(task);
    let mut encoder = match cfg.prior_mode {
        PriorMode::Fixed => encoder_warmup(
            &dataset,
            task.k,
            task.d,
            EncoderTable::zeros(task.k, task.d),
            &warmup_adam_config(),
        )?,
        PriorMode::Mutable => EncoderTable::zeros(task.k, task.d),
    };

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut mlp = Mlp::init(mlp_spec.clone(), &mut rng)?;
    let mut state = AdamState::new(mlp.num_params());
    let mut enc_state = AdamState::new(task.k * task.d);
    let mut loss_curve = Vec::with_capacity(cfg.adam.steps);
    let mut batch = Vec::with_capacity(cfg.adam.batch);
    let avg_from = cfg.adam.steps - (cfg.adam.steps as f64 * cfg.tail_average_frac) as usize;
    let mut tail_sum = vec![0.0; mlp.num_params()];
    let mut tail_count = 0u64;
    for step in 0..cfg.adam.steps {
        batch.clear();
        let mut batch_labels = Vec::with_capacity(cfg.adam.batch);
        for i in 0..cfg.adam.batch {
            let idx = rng.random_range(0..dataset.x0.len());
            let y = dataset.label[idx];
            // stratified over the batch: each item draws its time from one
            // cell of a uniform partition, so t stays U(t_min, 1 - t_min)
            // marginally while the batch gradient loses most of the
            // t-sampling noise
            let u: f64 = rng.random_range(0.0..1.0);
            let t = cfg.t_min + (1.0 - 2.0 * cfg.t_min) * ((i as f64 + u) / cfg.adam.batch as f64);
            batch.push(LossSample {
                x0: dataset.x0[idx].clone(),
                x1: encoder.z[y].clone(),
                t,
                eps: standard_normal_vec(task.d, &mut rng),
            });
            batch_labels.push(y);
        }
        let out = bridge_loss(&mlp, cfg.param, schedule, &batch)?;
        if !out.loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                loss: out.loss,
            });
        }
        adam_step(mlp.params_mut(), &out.grads, &mut state, &cfg.adam);
        if cfg.prior_mode == PriorMode::Mutable {
            // joint mode: bridge-loss gradients through x1 plus the MSE
            // encoder loss, both batch means
            let mut enc_grads = vec![0.0; task.k * task.d];
            let b = batch.len() as f64;
            for (item, (&y, gx1)) in batch
                .iter()
                .zip(batch_labels.iter().zip(&out.x1_grads))
            {
                for i in 0..task.d {
                    enc_grads[y * task.d + i] +=
                        gx1[i] + 2.0 * (encoder.z[y][i] - item.x0[i]) / b;
                }
            }
            let mut flat = encoder.flat();
            adam_step(&mut flat, &enc_grads, &mut enc_state, &cfg.adam);
            encoder = EncoderTable::from_flat(&flat, task.k, task.d);
        }
        loss_curve.push(out.loss);
        if step >= avg_from {
            for (acc, p) in tail_sum.iter_mut().zip(mlp.params()) {
                *acc += p;
            }
            tail_count += 1;
        }
    }
    if tail_count > 0 {
        for (p, acc) in mlp.params_mut().iter_mut().zip(&tail_sum) {
            *p = acc / tail_count as f64;
        }
    }

    let mut metrics = Vec::new();
    let mut notes = Vec::new();
    if matches!(
        cfg.param,
        Parameterization::NoiseSb | Parameterization::Velocity
    ) {
        notes.push(format!(
            "generation metrics skipped: {} output is singular at t = 1 and cannot seed sampling from the prior",
            cfg.param.name()
        ));
    } else {
        let predictor = MlpPredictor {
            mlp: &mlp,
            param: cfg.param,
        };
        for y in 0..task.k {
            for (kind, tau_b) in [
                (SamplerKind::Sde1, 1.0),
                (SamplerKind::Sde1, 2.0),
                (SamplerKind::Ode1, 1.0),
            ] {
                for &nfe in &cfg.eval_nfes {
                    let config = SamplerConfig::new(kind, nfe, tau_b)?;
                    let (mean_err, cov_err) = generation_metrics(
                        schedule,
                        &predictor,
                        &config,
                        &encoder.z[y],
                        &task.means[y],
                        task.s2,
                        cfg.eval_samples,
                        &mut rng,
                    )?;
                    metrics.push(MetricRow {
                        kind,
                        nfe,
                        tau_b,
                        condition: y,
                        mean_err,
                        cov_frob_rel_err: cov_err,
                    });
                }
            }
        }
    }

    Ok(TrainOutcome {
        mlp,
        encoder,
        report: TrainReport {
            loss_curve,
            metrics,
            notes,
        },
    })
}

/// Generates `n` chains and reports (mean error, covariance Frobenius
/// relative error) against the target `N(target_mean, target_var I)`.
#[allow(clippy::too_many_arguments)]
pub fn generation_metrics<R: Rng + ?Sized>(
    schedule: &Schedule,
    predictor: &dyn Predictor,
    config: &SamplerConfig,
    x1: &[f64],
    target_mean: &[f64],
    target_var: f64,
    n: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let outs = sample_batch(schedule, predictor, config, x1, n, rng)?;
    let mean = sample_mean(&outs);
    let cov = sample_covariance(&outs);
    Ok((
        dist2(&mean, target_mean),
        cov_frobenius_rel_err(&cov, target_var),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{GaussianPosteriorOracle, GaussianTaskParams};
    use crate::schedules::{Schedule, ScheduleSpec};
    use approx::assert_abs_diff_eq;

    fn gmax() -> Schedule {
        Schedule::new(ScheduleSpec::BridgeGmax {
            beta0: 0.01,
            beta1: 50.0,
        })
        .unwrap()
    }

    fn small_task() -> ToyTaskSpec {
        ToyTaskSpec::with_default_means(2, 3, 1.0, 6000, 41).unwrap()
    }

    #[test]
    fn task_spec_validation() {
        assert!(ToyTaskSpec::new(2, 2, vec![vec![0.0, 0.0]; 2], 1.0, 10, 0).is_err());
        assert!(ToyTaskSpec::new(2, 1, vec![vec![0.0, 0.0]], 0.0, 10, 0).is_err());
        assert!(ToyTaskSpec::with_default_means(2, 3, 1.0, 100, 0).is_ok());
        let means = default_means(1, 3);
        assert_eq!(means, vec![vec![-2.0], vec![0.0], vec![2.0]]);
    }

    #[test]
    fn dataset_statistics() {
        let task = small_task();
        let ds = generate_dataset(&task);
        assert_eq!(ds.x0.len(), task.n_train);
        assert_eq!(ds.class_counts.iter().sum::<usize>(), task.n_train);
        // every class is populated for this size
        assert!(ds.class_counts.iter().all(|&c| c > task.n_train / 6));
    }

    #[test]
    fn warmup_single_class_reaches_global_mean() {
        let task = ToyTaskSpec::with_default_means(2, 1, 1.0, 4000, 7).unwrap();
        let ds = generate_dataset(&task);
        let table = encoder_warmup(
            &ds,
            1,
            2,
            EncoderTable::zeros(1, 2),
            &warmup_adam_config(),
        )
        .unwrap();
        let mean = sample_mean(&ds.x0);
        assert!(dist2(&table.z[0], &mean) <= 1e-3, "{:?} vs {mean:?}", table.z[0]);
    }

    #[test]
    fn warmup_gradient_zero_at_empirical_mean() {
        let task = small_task();
        let ds = generate_dataset(&task);
        // analytic gradient at z = class mean vanishes
        let mut class_means = vec![vec![0.0; task.d]; task.k];
        for (x, &y) in ds.x0.iter().zip(&ds.label) {
            for i in 0..task.d {
                class_means[y][i] += x[i] / ds.class_counts[y] as f64;
            }
        }
        let n = ds.x0.len() as f64;
        for y in 0..task.k {
            let n_y = ds.class_counts[y] as f64;
            for i in 0..task.d {
                let sum: f64 = ds
                    .x0
                    .iter()
                    .zip(&ds.label)
                    .filter(|(_, &l)| l == y)
                    .map(|(x, _)| x[i])
                    .sum();
                let grad = 2.0 * (n_y * class_means[y][i] - sum) / n;
                assert_abs_diff_eq!(grad, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn warmup_lands_within_standard_error_of_true_means() {
        let task = small_task();
        let ds = generate_dataset(&task);
        let table = encoder_warmup(
            &ds,
            task.k,
            task.d,
            EncoderTable::zeros(task.k, task.d),
            &warmup_adam_config(),
        )
        .unwrap();
        for y in 0..task.k {
            let bound = 3.0 * task.s2.sqrt() / (ds.class_counts[y] as f64).sqrt();
            assert!(
                dist2(&table.z[y], &task.means[y]) <= bound,
                "condition {y}: {:?} vs {:?} (bound {bound})",
                table.z[y],
                task.means[y]
            );
        }
    }

    #[test]
    fn oracle_predictor_has_near_zero_loss_on_dirac_task() {
        let sched = gmax();
        let m = vec![1.0, -1.0];
        let s2 = 1e-12;
        let oracle = GaussianPosteriorOracle::new(
            sched,
            GaussianTaskParams::new(m.clone(), s2).unwrap(),
        );
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut total = 0.0;
        let n = 200;
        for _ in 0..n {
            let t = rng.random_range(0.05..0.95);
            let eps = standard_normal_vec(2, &mut rng);
            let x0: Vec<f64> = m.iter().zip(&eps).map(|(mi, e)| mi + s2.sqrt() * e).collect();
            let x_t = form_xt(&sched, t, &x0, &m, &standard_normal_vec(2, &mut rng)).unwrap();
            let pred = oracle.eval(&x_t, t, &m);
            total += dist2(&pred, &x0).powi(2) / n as f64;
        }
        assert!(total < 1e-6, "oracle loss on near-dirac task: {total}");
    }

    #[test]
    fn constant_mean_predictor_loss_approaches_dimension_times_variance() {
        // E ||x0 - m||^2 = d * s2.
        let task = small_task();
        let sched = gmax();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 60_000;
        let mut total = 0.0;
        for _ in 0..n {
            let eps = standard_normal_vec(task.d, &mut rng);
            let x0: Vec<f64> = task.means[0]
                .iter()
                .zip(&eps)
                .map(|(m, e)| m + task.s2.sqrt() * e)
                .collect();
            total += dist2(&x0, &task.means[0]).powi(2) / n as f64;
        }
        let expect = task.d as f64 * task.s2;
        assert!(
            (total - expect).abs() / expect < 0.03,
            "{total} vs {expect}"
        );
        let _ = sched;
    }

    #[test]
    fn bridge_loss_gradients_match_finite_differences_all_parameterizations() {
        let sched = gmax();
        let spec = MlpSpec {
            layers: vec![5, 16, 16, 2],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for param in [
            Parameterization::X0,
            Parameterization::NoisePsiHat,
            Parameterization::NoiseSb,
            Parameterization::Velocity,
        ] {
            let mut mlp = Mlp::init(spec.clone(), &mut rng).unwrap();
            let batch: Vec<LossSample> = (0..16)
                .map(|_| LossSample {
                    x0: standard_normal_vec(2, &mut rng),
                    x1: standard_normal_vec(2, &mut rng),
                    t: rng.random_range(0.05..0.95),
                    eps: standard_normal_vec(2, &mut rng),
                })
                .collect();
            let out = bridge_loss(&mlp, param, &sched, &batch).unwrap();
            let h = 1e-4;
            let mut worst: f64 = 0.0;
            for probe in 0..50 {
                let idx = (probe * 37) % mlp.num_params();
                let orig = mlp.params()[idx];
                mlp.params_mut()[idx] = orig + h;
                let up = bridge_loss(&mlp, param, &sched, &batch).unwrap().loss;
                mlp.params_mut()[idx] = orig - h;
                let down = bridge_loss(&mlp, param, &sched, &batch).unwrap().loss;
                mlp.params_mut()[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let denom = out.grads[idx].abs().max(fd.abs()).max(1e-6);
                worst = worst.max((out.grads[idx] - fd).abs() / denom);
            }
            assert!(worst <= 1e-4, "{param:?}: worst relative error {worst}");
        }
    }

    #[test]
    fn bridge_loss_x1_gradients_match_finite_differences() {
        let sched = gmax();
        let spec = MlpSpec {
            layers: vec![5, 12, 2],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mlp = Mlp::init(spec, &mut rng).unwrap();
        let mut batch: Vec<LossSample> = (0..4)
            .map(|_| LossSample {
                x0: standard_normal_vec(2, &mut rng),
                x1: standard_normal_vec(2, &mut rng),
                t: rng.random_range(0.2..0.8),
                eps: standard_normal_vec(2, &mut rng),
            })
            .collect();
        let out = bridge_loss(&mlp, Parameterization::X0, &sched, &batch).unwrap();
        let h = 1e-6;
        for item in 0..batch.len() {
            for i in 0..2 {
                let orig = batch[item].x1[i];
                batch[item].x1[i] = orig + h;
                let up = bridge_loss(&mlp, Parameterization::X0, &sched, &batch)
                    .unwrap()
                    .loss;
                batch[item].x1[i] = orig - h;
                let down = bridge_loss(&mlp, Parameterization::X0, &sched, &batch)
                    .unwrap()
                    .loss;
                batch[item].x1[i] = orig;
                let fd = (up - down) / (2.0 * h);
                assert_abs_diff_eq!(out.x1_grads[item][i], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let task = ToyTaskSpec::with_default_means(2, 2, 1.0, 500, 3).unwrap();
        let sched = gmax();
        let spec = MlpSpec {
            layers: vec![5, 16, 2],
        };
        let cfg = TrainConfig {
            adam: AdamConfig {
                steps: 40,
                batch: 16,
                ..AdamConfig::default()
            },
            eval_samples: 50,
            eval_nfes: vec![1],
            seed: 123,
            ..TrainConfig::default()
        };
        let a = train(&task, &spec, &cfg, &sched).unwrap();
        let b = train(&task, &spec, &cfg, &sched).unwrap();
        assert_eq!(a.report.loss_curve, b.report.loss_curve);
        assert_eq!(a.mlp.params(), b.mlp.params());
    }

    #[test]
    fn training_rejects_mutable_prior_with_noise_parameterizations() {
        let task = small_task();
        let sched = gmax();
        let cfg = TrainConfig {
            param: Parameterization::NoiseSb,
            prior_mode: PriorMode::Mutable,
            ..TrainConfig::default()
        };
        assert!(train(&task, &MlpSpec::for_dim(2), &cfg, &sched).is_err());
    }

    #[test]
    fn dirac_task_one_step_output_hits_class_means() {
        // Near-point-mass data: after a short run, the 1-step output (the
        // direct prediction at the prior) lands on each class mean.
        let task = ToyTaskSpec::with_default_means(2, 3, 1e-6, 3000, 17).unwrap();
        let sched = gmax();
        let cfg = TrainConfig {
            adam: AdamConfig {
                steps: 1500,
                ..AdamConfig::default()
            },
            eval_samples: 10,
            eval_nfes: vec![1],
            seed: 9,
            ..TrainConfig::default()
        };
        let out = train(&task, &MlpSpec::for_dim(2), &cfg, &sched).unwrap();
        let predictor = MlpPredictor {
            mlp: &out.mlp,
            param: Parameterization::X0,
        };
        for y in 0..task.k {
            let got = predictor.eval(&out.encoder.z[y], 1.0, &out.encoder.z[y]);
            assert!(
                dist2(&got, &task.means[y]) <= 0.05,
                "condition {y}: {got:?} vs {:?}",
                task.means[y]
            );
        }
    }

    #[test]
    fn mutable_prior_mode_completes_and_reports_metrics() {
        let task = ToyTaskSpec::with_default_means(2, 2, 1.0, 1000, 29).unwrap();
        let sched = gmax();
        let cfg = TrainConfig {
            adam: AdamConfig {
                steps: 300,
                batch: 64,
                ..AdamConfig::default()
            },
            prior_mode: PriorMode::Mutable,
            eval_samples: 100,
            eval_nfes: vec![1, 4],
            seed: 31,
            ..TrainConfig::default()
        };
        let out = train(&task, &MlpSpec::for_dim(2), &cfg, &sched).unwrap();
        assert_eq!(out.report.metrics.len(), 2 * 3 * 2);
        assert!(out.report.notes.is_empty());
        // the jointly trained prior moves away from its zero init
        assert!(out.encoder.z.iter().any(|z| crate::vecmath::norm2(z) > 0.1));
    }

    #[test]
    fn noise_sb_training_runs_but_skips_generation_metrics() {
        let task = ToyTaskSpec::with_default_means(2, 2, 1.0, 800, 5).unwrap();
        let sched = gmax();
        let cfg = TrainConfig {
            adam: AdamConfig {
                steps: 50,
                batch: 32,
                ..AdamConfig::default()
            },
            param: Parameterization::NoiseSb,
            eval_samples: 10,
            eval_nfes: vec![1],
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train(&task, &MlpSpec::for_dim(2), &cfg, &sched).unwrap();
        assert!(out.report.metrics.is_empty());
        assert_eq!(out.report.notes.len(), 1);
    }
}
