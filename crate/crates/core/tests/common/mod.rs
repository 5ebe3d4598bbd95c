//! Oracles shared by the integration tests. Nothing here calls the library's
//! demapper or metrics code; the point is to check them independently.
#![allow(dead_code)]

use std::f64::consts::PI;

use nleq::constellation::Constellation;
use nleq::demapper::DemapperParams;
use nleq::loss::{bce_loss, mse_loss, msex_loss, proxy_ce_loss, LossReport};
use nleq::nn::{Gradients, Mlp, OutputActivation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Composite Simpson rule with `intervals` (rounded up to even) subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

pub fn gauss_pdf(y: f64, mean: f64, var: f64) -> f64 {
    (-(y - mean) * (y - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// I(X;Y) in bits for Y = X + N(0, var), by direct quadrature.
pub fn awgn_mutual_information(points: &[f64], prior: &[f64], var: f64) -> f64 {
    let sigma = var.sqrt();
    let lo = points.iter().cloned().fold(f64::INFINITY, f64::min) - 12.0 * sigma;
    let hi = points.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 12.0 * sigma;
    let mut total = 0.0;
    for (&x, &px) in points.iter().zip(prior) {
        let integrand = |y: f64| {
            let p = gauss_pdf(y, x, var);
            if p < 1e-300 {
                return 0.0;
            }
            let mix: f64 = points.iter().zip(prior).map(|(&x2, &p2)| p2 * gauss_pdf(y, x2, var)).sum();
            p * (p / mix).log2()
        };
        total += px * simpson(integrand, lo, hi, 40_000);
    }
    total
}

/// Upper tail of the standard normal, Q(t).
pub fn q_function(t: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(t / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Msex,
    ProxyCe,
    Bce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Eq,
    Joint1,
    Joint2,
    Linear,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Eq, Arch::Joint1, Arch::Joint2, Arch::Linear];

    pub fn sizes(self) -> Vec<usize> {
        match self {
            Arch::Eq => vec![17, 32, 26, 1],
            Arch::Joint1 => vec![17, 32, 26, 3],
            Arch::Joint2 => vec![17, 32, 26, 16, 3],
            Arch::Linear => vec![17, 1],
        }
    }

    pub fn activation(self) -> OutputActivation {
        match self {
            Arch::Joint1 | Arch::Joint2 => OutputActivation::Sigmoid,
            _ => OutputActivation::Linear,
        }
    }
}

/// Loss/architecture pairs where the loss is defined on the network output:
/// the symbol-domain losses on single-output networks, BCE on sigmoid
/// networks, and MSE additionally through the sigmoid outputs.
pub fn compatible_pairs() -> Vec<(LossKind, Arch)> {
    let mut v = Vec::new();
    for arch in [Arch::Eq, Arch::Linear] {
        for loss in [LossKind::Mse, LossKind::Msex, LossKind::ProxyCe] {
            v.push((loss, arch));
        }
    }
    for arch in [Arch::Joint1, Arch::Joint2] {
        v.push((LossKind::Bce, arch));
        v.push((LossKind::Mse, arch));
    }
    v
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose ±h perturbation switched a rectifier.
    pub skipped: usize,
}

/// Denominator floor of the relative error, as a fraction of the largest
/// gradient entry. Central differences carry roundoff of about
/// `|loss| * eps / h`, which swamps entries far below the gradient's own
/// scale; those are compared at this absolute scale instead.
pub const REL_FLOOR: f64 = 1e-3;

struct Problem {
    kind: LossKind,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    bits: Vec<u8>,
    batch: usize,
    sigma2: f64,
    constellation: Constellation,
}

impl Problem {
    fn loss(&self, outputs: &[f64]) -> LossReport {
        let c = &self.constellation;
        match self.kind {
            LossKind::Mse => mse_loss(outputs, &self.targets).unwrap(),
            LossKind::Msex => msex_loss(outputs, &self.targets, c, self.sigma2).unwrap(),
            LossKind::ProxyCe => {
                proxy_ce_loss(outputs, &self.targets, &DemapperParams::new(c, self.sigma2).unwrap()).unwrap()
            }
            LossKind::Bce => bce_loss(outputs, &self.bits, 3).unwrap(),
        }
    }

    fn eval(&self, net: &Mlp) -> (f64, Vec<bool>) {
        let mut cache = net.new_cache(self.batch);
        net.forward_batch(&self.inputs, self.batch, &mut cache).unwrap();
        (self.loss(&cache.outputs()).value, cache.hidden_pattern())
    }
}

/// Compare backprop gradients with central differences (step `h`) for one
/// random network (parameters uniform in [-0.5, 0.5]) and random batch.
pub fn gradient_check(kind: LossKind, arch: Arch, seed: u64, h: f64) -> GradCheck {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let c = Constellation::make_ask(3).unwrap();
    let mut net = Mlp::init(&arch.sizes(), arch.activation(), seed).unwrap();
    let params: Vec<f64> = (0..net.parameter_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
    net.set_parameters_flat(&params).unwrap();

    let batch = 4;
    let n_out = *arch.sizes().last().unwrap();
    let inputs: Vec<f64> = (0..batch * 17).map(|_| rng.random_range(-1.5..1.5)).collect();
    let targets: Vec<f64> = if kind == LossKind::Mse && n_out > 1 {
        (0..batch * n_out).map(|_| rng.random_range(0.0..1.0)).collect()
    } else {
        (0..batch).map(|_| c.points()[rng.random_range(0..8)]).collect()
    };
    let bits: Vec<u8> = (0..batch * 3).map(|_| rng.random_range(0..2)).collect();
    let problem = Problem {
        kind,
        inputs,
        targets,
        bits,
        batch,
        sigma2: rng.random_range(0.02..0.3),
        constellation: c,
    };

    let mut cache = net.new_cache(batch);
    net.forward_batch(&problem.inputs, batch, &mut cache).unwrap();
    let report = problem.loss(&cache.outputs());
    let base_pattern = cache.hidden_pattern();
    let mut grads = Gradients::zeros_like(&net);
    net.backward_into(&cache, &report.output_gradients, kind == LossKind::Bce, &mut grads)
        .unwrap();
    let analytic = grads.flat();

    let floor = REL_FLOOR * analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut result = GradCheck::default();
    let mut probe = net.clone();
    let mut shifted = params.clone();
    for (j, &a) in analytic.iter().enumerate() {
        shifted[j] = params[j] + h;
        probe.set_parameters_flat(&shifted).unwrap();
        let (plus, pat_plus) = problem.eval(&probe);
        shifted[j] = params[j] - h;
        probe.set_parameters_flat(&shifted).unwrap();
        let (minus, pat_minus) = problem.eval(&probe);
        shifted[j] = params[j];
        if pat_plus != base_pattern || pat_minus != base_pattern {
            result.skipped += 1;
            continue;
        }
        let fd = (plus - minus) / (2.0 * h);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        result.max_rel_error = result.max_rel_error.max(rel);
        result.checked += 1;
    }
    result
}
