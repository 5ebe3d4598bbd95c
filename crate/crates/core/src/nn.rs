//! Fully connected network with rectifier hidden layers, trained by
//! backpropagation and Adam.
//!
//! Weights are row-major `(out, in)`. Batched activations are stored
//! feature-major (`features x batch`) so that the inner loops of the forward
//! and backward passes run contiguously over the batch.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

const CHECKPOINT_MAGIC: &str = "nleq-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    /// Element-wise logistic sigmoid, one probability per output.
    Sigmoid,
}

impl OutputActivation {
    pub fn tag(self) -> &'static str {
        match self {
            OutputActivation::Linear => "linear",
            OutputActivation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "linear" => Some(OutputActivation::Linear),
            "sigmoid" => Some(OutputActivation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output_activation: OutputActivation,
    // Identity and parameter version, used to reject stale caches.
    id: u64,
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.output_activation == other.output_activation
            && self.weights == other.weights
            && self.biases == other.biases
    }
}

/// Activations recorded by a forward pass, needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    net_id: u64,
    net_version: u64,
    batch: usize,
    layer_sizes: Vec<usize>,
    // acts[0] is the input; acts[l + 1] is the output of layer l (after the
    // activation). All feature-major.
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Network outputs, row-major `(batch, outputs)`.
    pub fn outputs(&self) -> Vec<f64> {
        let out = *self.layer_sizes.last().expect("at least two layers");
        let last = self.acts.last().expect("acts populated");
        let mut rows = vec![0.0; self.batch * out];
        for o in 0..out {
            for b in 0..self.batch {
                rows[b * out + o] = last[o * self.batch + b];
            }
        }
        rows
    }

    /// Index of the first layer whose output holds a non-finite value.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.acts[1..].iter().position(|a| a.iter().any(|v| !v.is_finite()))
    }

    /// Which hidden rectifiers are active, over all layers and examples.
    /// Finite-difference checks use it to detect steps across a kink.
    pub fn hidden_pattern(&self) -> Vec<bool> {
        let n = self.acts.len();
        self.acts[1..n - 1]
            .iter()
            .flat_map(|a| a.iter().map(|&v| v > 0.0))
            .collect()
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Layer by layer: weights then biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn fill_zero(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.fill(0.0);
        }
    }
}

impl Mlp {
    /// Uniform Glorot initialization, zero biases.
    pub fn init(layer_sizes: &[usize], output_activation: OutputActivation, seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
            weights.push((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self::from_parts(layer_sizes.to_vec(), weights, biases, output_activation))
    }

    /// Assemble a network from explicit parameters.
    pub fn from_parameters(
        layer_sizes: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        if weights.len() != layer_sizes.len() - 1 || biases.len() != layer_sizes.len() - 1 {
            return Err(Error::invalid("one weight matrix and bias vector per layer required"));
        }
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] || biases[l].len() != pair[1] {
                return Err(Error::invalid(format!(
                    "layer {l}: expected {}x{} weights and {} biases",
                    pair[1], pair[0], pair[1]
                )));
            }
            if weights[l].iter().chain(&biases[l]).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l}: parameters must be finite")));
            }
        }
        Ok(Self::from_parts(layer_sizes.to_vec(), weights, biases, output_activation))
    }

    fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        output_activation: OutputActivation,
    ) -> Self {
        Self {
            layer_sizes,
            weights,
            biases,
            output_activation,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    /// Row-major `(out, in)` weights of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        &self.weights[l]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        &self.biases[l]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Layer by layer: weights then biases.
    pub fn parameters_flat(&self) -> Vec<f64> {
        Gradients {
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        }
        .flat()
    }

    pub fn set_parameters_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.copy_from_slice(&flat[pos..pos + n]);
            pos += w.len();
            let n = b.len();
            b.copy_from_slice(&flat[pos..pos + n]);
            pos += b.len();
        }
        self.version += 1;
        Ok(())
    }

    /// Forward pass for a single feature vector.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Cache)> {
        let mut cache = self.new_cache(1);
        self.forward_batch(input, 1, &mut cache)?;
        Ok((cache.outputs(), cache))
    }

    pub fn new_cache(&self, batch: usize) -> Cache {
        Cache {
            net_id: self.id,
            net_version: self.version,
            batch,
            layer_sizes: self.layer_sizes.clone(),
            acts: self.layer_sizes.iter().map(|&n| vec![0.0; n * batch]).collect(),
        }
    }

    /// Forward pass over `batch` row-major inputs, recording activations in
    /// `cache` (reallocated if its shape does not fit).
    pub fn forward_batch(&self, inputs: &[f64], batch: usize, cache: &mut Cache) -> Result<()> {
        let n_in = self.input_len();
        if batch == 0 || inputs.len() != batch * n_in {
            return Err(Error::invalid(format!(
                "expected {batch} inputs of length {n_in}, got {} values",
                inputs.len()
            )));
        }
        if cache.batch != batch || cache.layer_sizes != self.layer_sizes {
            *cache = self.new_cache(batch);
        }
        cache.net_id = self.id;
        cache.net_version = self.version;

        let input = &mut cache.acts[0];
        for b in 0..batch {
            for i in 0..n_in {
                input[i * batch + b] = inputs[b * n_in + i];
            }
        }

        let last = self.num_layers() - 1;
        for l in 0..=last {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (prev, rest) = cache.acts.split_at_mut(l + 1);
            let a_in = &prev[l];
            let a_out = &mut rest[0];
            let w = &self.weights[l];
            for o in 0..n_out {
                let row = &mut a_out[o * batch..(o + 1) * batch];
                row.fill(self.biases[l][o]);
                for i in 0..n_in {
                    axpy(w[o * n_in + i], &a_in[i * batch..(i + 1) * batch], row);
                }
            }
            if l < last {
                for v in a_out.iter_mut() {
                    *v = v.max(0.0);
                }
            } else if self.output_activation == OutputActivation::Sigmoid {
                for v in a_out.iter_mut() {
                    *v = sigmoid(*v);
                }
            }
        }
        Ok(())
    }

    /// Outputs for `n` row-major inputs, row-major `(n, outputs)`.
    pub fn predict(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        const CHUNK: usize = 1024;
        let n_in = self.input_len();
        if inputs.len() != n * n_in {
            return Err(Error::invalid(format!(
                "expected {n} inputs of length {n_in}, got {} values",
                inputs.len()
            )));
        }
        let mut out = Vec::with_capacity(n * self.output_len());
        let mut cache = self.new_cache(CHUNK.min(n.max(1)));
        let mut start = 0;
        while start < n {
            let len = CHUNK.min(n - start);
            self.forward_batch(&inputs[start * n_in..(start + len) * n_in], len, &mut cache)?;
            out.extend(cache.outputs());
            start += len;
        }
        Ok(out)
    }

    /// Gradients of a scalar loss given its derivative with respect to the
    /// network outputs (after the output activation). `output_gradient` is
    /// row-major `(batch, outputs)`.
    pub fn backward(&self, cache: &Cache, output_gradient: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, output_gradient, false, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Mlp::backward`], but the gradient is taken with respect to the
    /// output layer's pre-activation (the logits of a sigmoid network).
    pub fn backward_preactivation(&self, cache: &Cache, logit_gradient: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, logit_gradient, true, &mut grads)?;
        Ok(grads)
    }

    /// Backward pass writing into preallocated gradients (overwritten).
    pub fn backward_into(
        &self,
        cache: &Cache,
        output_gradient: &[f64],
        preactivation: bool,
        grads: &mut Gradients,
    ) -> Result<()> {
        if cache.net_id != self.id || cache.net_version != self.version || cache.layer_sizes != self.layer_sizes {
            return Err(Error::InvalidState(
                "cache was produced by a different network or before a parameter update".into(),
            ));
        }
        let batch = cache.batch;
        let n_out = self.output_len();
        if output_gradient.len() != batch * n_out {
            return Err(Error::invalid(format!(
                "expected {} output gradient values, got {}",
                batch * n_out,
                output_gradient.len()
            )));
        }
        grads.fill_zero();

        let last = self.num_layers() - 1;
        // Gradient w.r.t. the pre-activation of the current layer, feature-major.
        let mut delta = vec![0.0; n_out * batch];
        let out_act = &cache.acts[last + 1];
        for o in 0..n_out {
            for b in 0..batch {
                let g = output_gradient[b * n_out + o];
                let idx = o * batch + b;
                delta[idx] = match (self.output_activation, preactivation) {
                    (OutputActivation::Sigmoid, false) => {
                        let p = out_act[idx];
                        g * p * (1.0 - p)
                    }
                    _ => g,
                };
            }
        }

        for l in (0..=last).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let a_in = &cache.acts[l];
            let w = &self.weights[l];
            let gw = &mut grads.weights[l];
            for o in 0..n_out {
                let d = &delta[o * batch..(o + 1) * batch];
                grads.biases[l][o] = d.iter().sum();
                for i in 0..n_in {
                    gw[o * n_in + i] = dot(d, &a_in[i * batch..(i + 1) * batch]);
                }
            }
            if l == 0 {
                break;
            }
            let mut next = vec![0.0; n_in * batch];
            for o in 0..n_out {
                let d = &delta[o * batch..(o + 1) * batch];
                for i in 0..n_in {
                    axpy(w[o * n_in + i], d, &mut next[i * batch..(i + 1) * batch]);
                }
            }
            // Rectifier: the subgradient at 0 is 0.
            for (g, &a) in next.iter_mut().zip(a_in) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = next;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, header: &str) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string(header)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text).map_err(|msg| Error::parse(path, msg))
    }

    /// Textual checkpoint. Floats use Rust's shortest round-trip formatting,
    /// so loading reproduces every parameter bit for bit.
    pub fn to_checkpoint_string(&self, header: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        for line in header.lines() {
            let _ = writeln!(s, "# {}", line.trim_start_matches('#').trim_start());
        }
        let sizes: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "layer_sizes {}", sizes.join(" "));
        let _ = writeln!(s, "hidden_activation relu");
        let _ = writeln!(s, "output_activation {}", self.output_activation.tag());
        for l in 0..self.num_layers() {
            let _ = writeln!(s, "weights {l} {}", join_floats(&self.weights[l]));
            let _ = writeln!(s, "biases {l} {}", join_floats(&self.biases[l]));
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (n, magic) = lines.next().ok_or("empty checkpoint")?;
        if magic != format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}") {
            return Err(format!("line {n}: unsupported checkpoint header {magic:?}"));
        }

        let mut sizes = None;
        let mut output = None;
        let mut weights: Vec<Option<Vec<f64>>> = Vec::new();
        let mut biases: Vec<Option<Vec<f64>>> = Vec::new();
        for (n, line) in lines {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            match key {
                "layer_sizes" => {
                    let s: std::result::Result<Vec<usize>, _> = parts.map(str::parse).collect();
                    let s = s.map_err(|e| format!("line {n}: {e}"))?;
                    weights = vec![None; s.len().saturating_sub(1)];
                    biases = vec![None; s.len().saturating_sub(1)];
                    sizes = Some(s);
                }
                "hidden_activation" => {
                    if parts.next() != Some("relu") {
                        return Err(format!("line {n}: only relu hidden layers are supported"));
                    }
                }
                "output_activation" => {
                    let tag = parts.next().unwrap_or_default();
                    output = Some(
                        OutputActivation::from_tag(tag)
                            .ok_or_else(|| format!("line {n}: unknown output activation {tag:?}"))?,
                    );
                }
                "weights" | "biases" => {
                    let l: usize = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| format!("line {n}: missing layer index"))?;
                    let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
                    let values = values.map_err(|e| format!("line {n}: {e}"))?;
                    let slot = if key == "weights" { &mut weights } else { &mut biases };
                    let entry = slot
                        .get_mut(l)
                        .ok_or_else(|| format!("line {n}: layer {l} out of range (or layer_sizes missing)"))?;
                    *entry = Some(values);
                }
                other => return Err(format!("line {n}: unknown key {other:?}")),
            }
        }
        let sizes = sizes.ok_or("missing layer_sizes")?;
        let output = output.ok_or("missing output_activation")?;
        let weights: Option<Vec<_>> = weights.into_iter().collect();
        let biases: Option<Vec<_>> = biases.into_iter().collect();
        let (weights, biases) = weights.zip(biases).ok_or("missing weights or biases for some layer")?;
        Mlp::from_parameters(&sizes, weights, biases, output).map_err(|e| e.to_string())
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid(format!(
            "a network needs at least an input and an output layer, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::invalid(format!("layer sizes must be positive, got {layer_sizes:?}")));
    }
    Ok(())
}

fn join_floats(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    parts.join(" ")
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with four independent accumulators (fixed summation order).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first_moment: Gradients,
    second_moment: Gradients,
    step: u64,
}

impl OptimizerState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::invalid("moment decays must lie in [0, 1)"));
        }
        if config.epsilon.is_nan() || config.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(Self {
            config,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place. Non-finite gradients are
/// rejected before anything is modified.
pub fn step(net: &mut Mlp, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if grads.weights.len() != net.weights.len()
        || grads.weights.iter().zip(&net.weights).any(|(g, w)| g.len() != w.len())
        || grads.biases.iter().zip(&net.biases).any(|(g, b)| g.len() != b.len())
        || opt.first_moment.weights.len() != net.weights.len()
    {
        return Err(Error::invalid("gradient or optimizer shapes do not match the network"));
    }
    for (l, (gw, gb)) in grads.weights.iter().zip(&grads.biases).enumerate() {
        if gw.iter().chain(gb).any(|g| !g.is_finite()) {
            return Err(Error::Numerical {
                message: "non-finite gradient".into(),
                epoch: None,
                layer: Some(l),
            });
        }
    }

    opt.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = opt.config;
    let t = opt.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    let update = |params: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for k in 0..params.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            params[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    };
    for l in 0..net.weights.len() {
        update(
            &mut net.weights[l],
            &grads.weights[l],
            &mut opt.first_moment.weights[l],
            &mut opt.second_moment.weights[l],
        );
        update(
            &mut net.biases[l],
            &grads.biases[l],
            &mut opt.first_moment.biases[l],
            &mut opt.second_moment.biases[l],
        );
    }
    net.version += 1;
    Ok(())
}
