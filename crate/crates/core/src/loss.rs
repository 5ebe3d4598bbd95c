//! Training criteria with exact gradients with respect to the network output.
//!
//! All values are batch means in natural-log units. Summation runs in example
//! order, so results are bit-stable for a given batch.

use crate::constellation::Constellation;
use crate::demapper::DemapperParams;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// Per-example gradients, row-major `(batch, outputs)`. For
    /// [`bce_loss`] these are taken with respect to the pre-sigmoid logits.
    pub output_gradients: Vec<f64>,
    /// Named sub-terms (MSE-X reports `mse_term` and `entropy_term`).
    pub components: Vec<(&'static str, f64)>,
}

impl LossReport {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

fn check_lengths(outputs: &[f64], targets: &[f64]) -> Result<()> {
    if outputs.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} outputs but {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    if outputs.is_empty() {
        return Err(Error::invalid("loss needs at least one example"));
    }
    Ok(())
}

pub fn mse_loss(outputs: &[f64], targets: &[f64]) -> Result<LossReport> {
    check_lengths(outputs, targets)?;
    let n = outputs.len() as f64;
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (&y, &x) in outputs.iter().zip(targets) {
        let d = y - x;
        sum += d * d;
        grads.push(2.0 * d / n);
    }
    let value = sum / n;
    Ok(LossReport {
        value,
        output_gradients: grads,
        components: vec![("mse_term", value)],
    })
}

/// Entropy-regularized MSE: `mean (y-x)^2 - 2σ² mean(-ln Q_Y(y))`, with Q_Y
/// the Gaussian mixture over `constellation` at variance `sigma2`.
///
/// `sigma2 == 0` switches the entropy term off and returns plain MSE.
pub fn msex_loss(
    outputs: &[f64],
    targets: &[f64],
    constellation: &Constellation,
    sigma2: f64,
) -> Result<LossReport> {
    check_lengths(outputs, targets)?;
    if sigma2 == 0.0 {
        let mut report = mse_loss(outputs, targets)?;
        report.components.push(("entropy_term", 0.0));
        return Ok(report);
    }
    let params = DemapperParams::new(constellation, sigma2)?;

    let n = outputs.len() as f64;
    let weight = 2.0 * sigma2;
    let mut posterior = vec![0.0; constellation.len()];
    let mut sq_sum = 0.0;
    let mut neg_log_q_sum = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (&y, &x) in outputs.iter().zip(targets) {
        let d = y - x;
        sq_sum += d * d;
        let log_q = params.symbol_posterior_into(y, &mut posterior);
        neg_log_q_sum -= log_q;
        let dlog_q = params.log_marginal_derivative(y, &posterior);
        grads.push((2.0 * d + weight * dlog_q) / n);
    }
    let mse_term = sq_sum / n;
    let entropy_term = weight * (neg_log_q_sum / n);
    Ok(LossReport {
        value: mse_term - entropy_term,
        output_gradients: grads,
        components: vec![("mse_term", mse_term), ("entropy_term", entropy_term)],
    })
}

/// Demapper-proxy cross-entropy `mean(-ln Q(x|y))` through the Gaussian
/// demapper. Targets must be constellation points.
pub fn proxy_ce_loss(outputs: &[f64], targets: &[f64], params: &DemapperParams) -> Result<LossReport> {
    check_lengths(outputs, targets)?;
    let c = params.constellation();
    let n = outputs.len() as f64;
    let mut joint = vec![0.0; c.len()];
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (&y, &x) in outputs.iter().zip(targets) {
        let t = c
            .index_of(x)
            .ok_or_else(|| Error::invalid(format!("target {x} is not a constellation point")))?;
        params.log_joint_into(y, &mut joint);
        let lse = crate::math::logsumexp(&joint);
        sum += lse - joint[t];
        // d/dy [(y-x)²/2σ² + ln Q_Y(y)] = (E[X|y] - x) / σ²
        let mean: f64 = joint
            .iter()
            .zip(c.points())
            .map(|(lj, p)| (lj - lse).exp() * p)
            .sum();
        grads.push((mean - x) / params.sigma2() / n);
    }
    Ok(LossReport {
        value: sum / n,
        output_gradients: grads,
        components: Vec::new(),
    })
}

/// Binary cross-entropy over `m` sigmoid outputs per example.
/// `probabilities` and `target_bits` are row-major `(batch, m)`.
pub fn bce_loss(probabilities: &[f64], target_bits: &[u8], m: usize) -> Result<LossReport> {
    if m == 0 || probabilities.len() != target_bits.len() || !probabilities.len().is_multiple_of(m) {
        return Err(Error::invalid(format!(
            "{} probabilities and {} target bits do not form (batch, {m}) arrays",
            probabilities.len(),
            target_bits.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::invalid("loss needs at least one example"));
    }
    if target_bits.iter().any(|&b| b > 1) {
        return Err(Error::invalid("target bits must be 0 or 1"));
    }
    let total = probabilities.len() as f64;
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(probabilities.len());
    for (&p, &b) in probabilities.iter().zip(target_bits) {
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        sum -= if b == 1 { pc.ln() } else { (1.0 - pc).ln() };
        grads.push((p - b as f64) / total);
    }
    Ok(LossReport {
        value: sum / total,
        output_gradients: grads,
        components: Vec::new(),
    })
}

/// Expand labels into row-major bits, bit 0 first.
pub fn labels_to_bits(labels: &[u32], m: usize) -> Vec<u8> {
    let mut bits = Vec::with_capacity(labels.len() * m);
    for &label in labels {
        for i in 0..m {
            bits.push(crate::constellation::bit_of(label, i, m));
        }
    }
    bits
}
