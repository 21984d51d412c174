//! Fully connected tanh network with hand-written backprop, and Adam.
//!
//! Parameters are stored flat, layer by layer: weights (row-major
//! `out x in`), then biases. Weights initialize from
//! `U(-1/sqrt(fan_in), +1/sqrt(fan_in))`, biases start at zero. Hidden
//! activations are tanh; the output layer is linear.

use rand::Rng;

use crate::{Error, Result};

/// Layer widths, including input and output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layers: Vec<usize>,
}

impl MlpSpec {
    /// Default predictor shape for a `d`-dimensional task: the input is
    /// `concat(x_t, t, x1)`, two hidden layers of 128.
    pub fn for_dim(d: usize) -> Self {
        MlpSpec {
            layers: vec![2 * d + 1, 128, 128, d],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 || self.layers.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(
                "network needs >= 2 nonzero layer widths".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layers.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
}

/// Activations recorded during a forward pass; input first, output last.
pub struct ForwardTrace {
    activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = vec![0.0; spec.num_params()];
        let mut offset = 0;
        for w in spec.layers.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in params[offset..offset + fan_in * fan_out].iter_mut() {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out; // biases stay zero
        }
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_trace(input).activations.pop().unwrap()
    }

    pub fn forward_trace(&self, input: &[f64]) -> ForwardTrace {
        assert_eq!(input.len(), self.spec.input_dim(), "input width mismatch");
        let n_layers = self.spec.layers.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for (l, w) in self.spec.layers.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let prev = activations.last().unwrap();
            let mut out = vec![0.0; fan_out];
            for (o, (row, b)) in out
                .iter_mut()
                .zip(weights.chunks_exact(fan_in).zip(biases))
            {
                let mut z = *b;
                for (wi, xi) in row.iter().zip(prev) {
                    z += wi * xi;
                }
                *o = if l + 1 < n_layers { z.tanh() } else { z };
            }
            activations.push(out);
            offset += fan_in * fan_out + fan_out;
        }
        ForwardTrace { activations }
    }

    /// Backpropagates `dloss_doutput` through a recorded forward pass.
    /// Returns gradients (same layout as `params`) and the gradient with
    /// respect to the network input.
    pub fn backward(&self, trace: &ForwardTrace, dloss_doutput: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut grads = vec![0.0; self.params.len()];
        let dinput = self.backward_accumulate(trace, dloss_doutput, &mut grads);
        (grads, dinput)
    }

    /// Like [`Mlp::backward`] but adds into an existing gradient buffer, so a
    /// batch can share one allocation.
    pub fn backward_accumulate(
        &self,
        trace: &ForwardTrace,
        dloss_doutput: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len());
        let n_layers = self.spec.layers.len() - 1;
        let mut layer_offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.spec.layers.windows(2) {
            layer_offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = dloss_doutput.to_vec();
        for l in (0..n_layers).rev() {
            let fan_in = self.spec.layers[l];
            let fan_out = self.spec.layers[l + 1];
            let w_start = layer_offsets[l];
            let b_start = w_start + fan_in * fan_out;
            // output layer is linear; hidden layers carry tanh'
            if l + 1 < n_layers {
                let act = &trace.activations[l + 1];
                for (d, a) in delta.iter_mut().zip(act) {
                    *d *= 1.0 - a * a;
                }
            }
            let prev = &trace.activations[l];
            for o in 0..fan_out {
                let row = w_start + o * fan_in;
                for i in 0..fan_in {
                    grads[row + i] += delta[o] * prev[i];
                }
                grads[b_start + o] += delta[o];
            }
            let weights = &self.params[w_start..b_start];
            let mut next_delta = vec![0.0; fan_in];
            for (o, row) in weights.chunks_exact(fan_in).enumerate() {
                for (nd, wi) in next_delta.iter_mut().zip(row) {
                    *nd += delta[o] * wi;
                }
            }
            delta = next_delta;
        }
        delta
    }
}

/// Adam hyperparameters plus the training-loop budget that uses them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta_m: f64,
    pub beta_v: f64,
    pub eps_stab: f64,
    pub steps: usize,
    pub batch: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta_m: 0.9,
            beta_v: 0.999,
            eps_stab: 1e-8,
            steps: 5000,
            batch: 128,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta_m", self.beta_m), ("beta_v", self.beta_v)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// First/second moment accumulators and the bias-correction step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let bc_m = 1.0 - cfg.beta_m.powi(state.step as i32);
    let bc_v = 1.0 - cfg.beta_v.powi(state.step as i32);
    for i in 0..params.len() {
        state.m[i] = cfg.beta_m * state.m[i] + (1.0 - cfg.beta_m) * grads[i];
        state.v[i] = cfg.beta_v * state.v[i] + (1.0 - cfg.beta_v) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc_m;
        let v_hat = state.v[i] / bc_v;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps_stab);
    }
}
