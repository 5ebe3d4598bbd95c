//! Gaussian auxiliary-channel demapper.
//!
//! The demapper is fully described by the alphabet (with its prior) and one
//! noise variance. Everything is evaluated in the log domain. Likelihoods use
//! the real Gaussian density `exp(-(y-x)^2 / 2σ²) / sqrt(2πσ²)`; the
//! normalizing constant cancels in posteriors and LLRs.
//!
//! LLRs are natural-log ratios `ln Q(b=0|y) / Q(b=1|y)`: positive favors 0.

use std::f64::consts::PI;

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::math::{logsumexp, logsumexp_indexed};

/// Smallest noise variance ever handed to a demapper.
pub const SIGMA2_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DemapperParams<'a> {
    constellation: &'a Constellation,
    sigma2: f64,
    log_prior: Vec<f64>,
    log_norm: f64,
    // subsets[i][b]: point indices whose bit i equals b.
    subsets: Vec<[Vec<usize>; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftOutput {
    pub symbol_posterior: Vec<f64>,
    pub bit_llrs: Vec<f64>,
}

impl<'a> DemapperParams<'a> {
    pub fn new(constellation: &'a Constellation, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!(
                "demapper noise variance must be positive and finite, got {sigma2}"
            )));
        }
        let m = constellation.bits_per_symbol();
        let subsets = (0..m)
            .map(|i| {
                [
                    constellation.bit_subset(i, 0).expect("bit index in range"),
                    constellation.bit_subset(i, 1).expect("bit index in range"),
                ]
            })
            .collect();
        Ok(Self {
            constellation,
            sigma2,
            log_prior: constellation.prior().iter().map(|p| p.ln()).collect(),
            log_norm: -0.5 * (2.0 * PI * sigma2).ln(),
            subsets,
        })
    }

    pub fn constellation(&self) -> &'a Constellation {
        self.constellation
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    #[inline]
    pub fn log_likelihood(&self, y: f64, x: f64) -> f64 {
        let d = y - x;
        self.log_norm - d * d / (2.0 * self.sigma2)
    }

    pub fn likelihood(&self, y: f64, x: f64) -> f64 {
        self.log_likelihood(y, x).exp()
    }

    /// `ln P(x) + ln Q(y|x)` for every point, written to `out`.
    #[inline]
    pub fn log_joint_into(&self, y: f64, out: &mut [f64]) {
        for ((o, &x), &lp) in out.iter_mut().zip(self.constellation.points()).zip(&self.log_prior) {
            *o = lp + self.log_likelihood(y, x);
        }
    }

    pub fn log_marginal(&self, y: f64) -> f64 {
        let mut joint = vec![0.0; self.constellation.len()];
        self.log_joint_into(y, &mut joint);
        logsumexp(&joint)
    }

    /// Gaussian-mixture density Q_Y(y).
    pub fn marginal(&self, y: f64) -> f64 {
        self.log_marginal(y).exp()
    }

    /// Posterior over the points written to `out`; returns `ln Q_Y(y)`.
    #[inline]
    pub fn symbol_posterior_into(&self, y: f64, out: &mut [f64]) -> f64 {
        self.log_joint_into(y, out);
        let lse = logsumexp(out);
        for v in out.iter_mut() {
            *v = (*v - lse).exp();
        }
        lse
    }

    pub fn symbol_posterior(&self, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.constellation.len()];
        self.symbol_posterior_into(y, &mut out);
        out
    }

    /// Bit LLRs from log-joint terms produced by [`Self::log_joint_into`].
    #[inline]
    pub fn llrs_from_log_joint(&self, log_joint: &[f64], llrs: &mut [f64]) {
        for (llr, [zero, one]) in llrs.iter_mut().zip(&self.subsets) {
            *llr = logsumexp_indexed(log_joint, zero) - logsumexp_indexed(log_joint, one);
        }
    }

    pub fn bit_posteriors_and_llrs(&self, y: f64) -> SoftOutput {
        let mut joint = vec![0.0; self.constellation.len()];
        self.log_joint_into(y, &mut joint);
        let mut bit_llrs = vec![0.0; self.constellation.bits_per_symbol()];
        self.llrs_from_log_joint(&joint, &mut bit_llrs);
        let lse = logsumexp(&joint);
        let symbol_posterior = joint.iter().map(|v| (v - lse).exp()).collect();
        SoftOutput {
            symbol_posterior,
            bit_llrs,
        }
    }

    /// Q(B_i = b | y) obtained from the LLR.
    pub fn bit_posterior(&self, y: f64, bit: usize, value: u8) -> f64 {
        let llr = self.bit_posteriors_and_llrs(y).bit_llrs[bit];
        let p0 = crate::nn::sigmoid(llr);
        if value == 0 {
            p0
        } else {
            crate::nn::sigmoid(-llr)
        }
    }

    /// `d/dy ln Q_Y(y) = Σ_x Q(x|y) (x - y) / σ²`, evaluated with `posterior`
    /// from [`Self::symbol_posterior_into`].
    #[inline]
    pub fn log_marginal_derivative(&self, y: f64, posterior: &[f64]) -> f64 {
        let mean: f64 = posterior
            .iter()
            .zip(self.constellation.points())
            .map(|(p, x)| p * x)
            .sum();
        (mean - y) / self.sigma2
    }
}

/// Data-aided noise variance: mean squared deviation of the equalized signal
/// from the transmitted symbols, floored at [`SIGMA2_FLOOR`].
pub fn estimate_sigma2(equalized: &[f64], reference: &[f64]) -> Result<f64> {
    if equalized.len() != reference.len() {
        return Err(Error::invalid(format!(
            "equalized and reference lengths differ ({} vs {})",
            equalized.len(),
            reference.len()
        )));
    }
    if equalized.len() < 2 {
        return Err(Error::invalid("need at least 2 samples to estimate a noise variance"));
    }
    let sum: f64 = equalized
        .iter()
        .zip(reference)
        .map(|(y, x)| (y - x) * (y - x))
        .sum();
    Ok((sum / equalized.len() as f64).max(SIGMA2_FLOOR))
}
