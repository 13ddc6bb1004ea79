//! Dense feed-forward networks with analytic backpropagation.
//!
//! Weights are stored row-major with shape `(fan_out, fan_in)`. Batched
//! inputs and outputs are flat row-major buffers of shape `(batch, width)`.
//! All arithmetic is `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Parameters of a dense network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Gradients (or optimizer moments) shaped like an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-layer values recorded by a forward pass, consumed by backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `layer_inputs[k]` is the input to layer `k`; index 0 is the network input.
    layer_inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn into_output(self) -> Vec<f64> {
        self.output
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least 2 layer sizes, got {}",
            layer_sizes.len()
        )));
    }
    if let Some(pos) = layer_sizes.iter().position(|&w| w == 0) {
        return Err(Error::InvalidArchitecture(format!(
            "layer {pos} has zero width"
        )));
    }
    Ok(())
}

/// `c = a · b + beta · c` for row/column-strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(m == 0 || n == 0 || c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl MlpParams {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn init(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    /// Builds parameters from explicit layer tensors, validating the shape chain.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        check_sizes(&layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::InvalidArchitecture(format!(
                "expected {layers} weight/bias tensors, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        for (k, pair) in layer_sizes.windows(2).enumerate() {
            if weights[k].len() != pair[0] * pair[1] || biases[k].len() != pair[1] {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {k} tensors do not match {}x{}",
                    pair[1], pair[0]
                )));
            }
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn same_architecture(&self, other: &MlpParams) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.hidden_activation == other.hidden_activation
            && self.output_activation == other.output_activation
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.forward_batch(input, 1)?;
        Ok((cache.output.clone(), cache))
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        let in_dim = self.input_dim();
        if inputs.len() != batch * in_dim {
            return Err(Error::DimensionMismatch {
                context: "mlp input",
                expected: batch * in_dim,
                got: inputs.len(),
            });
        }
        let layers = self.num_layers();
        let mut layer_inputs = Vec::with_capacity(layers);
        let mut pre_activations = Vec::with_capacity(layers);
        let mut x = inputs.to_vec();
        for k in 0..layers {
            let (fan_in, fan_out) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
            let mut z = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                z.extend_from_slice(&self.biases[k]);
            }
            // z (batch x out) += x (batch x in) . W^T
            gemm(
                batch,
                fan_in,
                fan_out,
                &x,
                fan_in,
                1,
                &self.weights[k],
                1,
                fan_in,
                1.0,
                &mut z,
            );
            let act = self.activation_of(k);
            let y: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            layer_inputs.push(x);
            pre_activations.push(z);
            x = y;
        }
        Ok(ForwardCache {
            batch,
            layer_inputs,
            pre_activations,
            output: x,
        })
    }

    /// Output-only batched evaluation.
    pub fn predict_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward_batch(inputs, batch)?.output)
    }

    /// Gradients of `sum(output ⊙ upstream)` with respect to every parameter
    /// (summed over the batch) and with respect to the inputs.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let layers = self.num_layers();
        if cache.layer_inputs.len() != layers || cache.pre_activations.len() != layers {
            return Err(Error::ArchitectureMismatch(
                "cache was produced by a network with a different depth".into(),
            ));
        }
        let batch = cache.batch;
        let out_dim = self.output_dim();
        if upstream.len() != batch * out_dim {
            return Err(Error::DimensionMismatch {
                context: "upstream gradient",
                expected: batch * out_dim,
                got: upstream.len(),
            });
        }
        for k in 0..layers {
            let (fan_in, fan_out) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
            if cache.layer_inputs[k].len() != batch * fan_in
                || cache.pre_activations[k].len() != batch * fan_out
            {
                return Err(Error::ArchitectureMismatch(format!(
                    "cache layer {k} does not match network shape"
                )));
            }
        }

        let mut grads = self.zero_grads();
        let mut delta = upstream.to_vec();
        for k in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
            let act = self.activation_of(k);
            let z = &cache.pre_activations[k];
            // post-activation of layer k is the input of k+1, or the output
            let y = if k + 1 < layers {
                &cache.layer_inputs[k + 1]
            } else {
                &cache.output
            };
            for ((d, &zv), &yv) in delta.iter_mut().zip(z).zip(y) {
                *d *= act.derivative(zv, yv);
            }
            let x = &cache.layer_inputs[k];
            // dW (out x in) = delta^T (out x batch) . x (batch x in)
            gemm(
                fan_out,
                batch,
                fan_in,
                &delta,
                1,
                fan_out,
                x,
                fan_in,
                1,
                0.0,
                &mut grads.weights[k],
            );
            let db = &mut grads.biases[k];
            for row in delta.chunks_exact(fan_out) {
                for (b, &d) in db.iter_mut().zip(row) {
                    *b += d;
                }
            }
            // dx (batch x in) = delta (batch x out) . W (out x in)
            let mut dx = vec![0.0; batch * fan_in];
            gemm(
                batch,
                fan_out,
                fan_in,
                &delta,
                fan_out,
                1,
                &self.weights[k],
                fan_in,
                1,
                0.0,
                &mut dx,
            );
            delta = dx;
        }
        Ok((grads, delta))
    }
}

impl MlpGrads {
    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn matches(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self.biases.len() == params.biases.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(a, b)| a.len() == b.len())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(a, b)| a.len() == b.len())
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.weights.iter().chain(self.biases.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: MlpGrads,
    pub second_moment: MlpGrads,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        Self {
            first_moment: params.zero_grads(),
            second_moment: params.zero_grads(),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place. Non-finite gradients leave both
/// `params` and `state` untouched.
pub fn adam_step(params: &mut MlpParams, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    if !grads.matches(params) || !state.first_moment.matches(params) {
        return Err(Error::ArchitectureMismatch(
            "gradient or moment shapes differ from parameters".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient rejected".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let step = state.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
    let eps = state.epsilon_hat;

    let param_tensors = params.weights.iter_mut().chain(params.biases.iter_mut());
    let moments = state
        .first_moment
        .tensors_mut()
        .zip(state.second_moment.tensors_mut());
    for ((p, g), (m, v)) in param_tensors.zip(grads.tensors()).zip(moments) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= step * m[i] / (v[i].sqrt() + eps);
        }
    }
    Ok(())
}

/// `tau * target + (1 - tau) * online`, elementwise.
pub fn polyak_update(target: &MlpParams, online: &MlpParams, tau: f64) -> Result<MlpParams> {
    let mut out = target.clone();
    polyak_update_in_place(&mut out, online, tau)?;
    Ok(out)
}

pub fn polyak_update_in_place(target: &mut MlpParams, online: &MlpParams, tau: f64) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(Error::ArchitectureMismatch(format!(
            "target {:?} vs online {:?}",
            target.layer_sizes, online.layer_sizes
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    let pairs = target
        .weights
        .iter_mut()
        .chain(target.biases.iter_mut())
        .zip(online.weights.iter().chain(&online.biases));
    for (t, o) in pairs {
        for (tv, &ov) in t.iter_mut().zip(o) {
            // exact endpoints for tau in {0, 1}
            *tv = if tau == 1.0 {
                *tv
            } else if tau == 0.0 {
                ov
            } else {
                tau * *tv + (1.0 - tau) * ov
            };
        }
    }
    Ok(())
}
