//! BER, symbol-wise AIR, bitwise GMI and conditional scatter statistics.
//!
//! Cross-entropies are accumulated in nats; rates are reported in bits per
//! (real) symbol.

use std::f64::consts::LN_2;
use std::fmt::Write as _;

use crate::constellation::Constellation;
use crate::demapper::{estimate_sigma2, DemapperParams};
use crate::error::{Error, Result};
use crate::loss::{labels_to_bits, BCE_CLAMP};
use crate::math::{binary_entropy_bits, logsumexp, softplus};

/// Hard-decision bit error rate. A positive LLR decides 0, a negative one
/// decides 1; exact zeros alternate between counting as error and not.
pub fn ber(llrs: &[f64], target_bits: &[u8]) -> Result<f64> {
    if llrs.len() != target_bits.len() {
        return Err(Error::invalid(format!(
            "{} LLRs but {} target bits",
            llrs.len(),
            target_bits.len()
        )));
    }
    if llrs.is_empty() {
        return Err(Error::invalid("BER needs at least one bit"));
    }
    let mut errors = 0usize;
    let mut ties = 0usize;
    for (&l, &b) in llrs.iter().zip(target_bits) {
        if l == 0.0 {
            if ties.is_multiple_of(2) {
                errors += 1;
            }
            ties += 1;
        } else if (l < 0.0) != (b == 1) {
            errors += 1;
        }
    }
    Ok(errors as f64 / llrs.len() as f64)
}

/// `[H(X) - CE / ln 2]^+` in bits.
pub fn air_symbolwise(ce_nats: f64, hx_bits: f64) -> f64 {
    (hx_bits - ce_nats / LN_2).max(0.0)
}

/// Bit-metric GMI `[Σ_i H(B_i) - E(-log2 Q(b_i|y))]^+` from row-major
/// `(n, m)` LLRs, where `m = bit_one_priors.len()`.
pub fn gmi_bitwise(llrs: &[f64], target_bits: &[u8], bit_one_priors: &[f64]) -> Result<f64> {
    let m = bit_one_priors.len();
    if m == 0 || llrs.len() != target_bits.len() || !llrs.len().is_multiple_of(m) || llrs.is_empty() {
        return Err(Error::invalid(format!(
            "{} LLRs and {} bits do not form (n, {m}) arrays",
            llrs.len(),
            target_bits.len()
        )));
    }
    let n = llrs.len() / m;
    let mut ce = vec![0.0; m];
    for row in 0..n {
        for i in 0..m {
            let l = llrs[row * m + i];
            // -ln Q(0|y) = softplus(-L), -ln Q(1|y) = softplus(L)
            ce[i] += if target_bits[row * m + i] == 0 { softplus(-l) } else { softplus(l) };
        }
    }
    let rate: f64 = (0..m)
        .map(|i| binary_entropy_bits(bit_one_priors[i]) - ce[i] / n as f64 / LN_2)
        .sum();
    Ok(rate.max(0.0))
}

/// LLRs `ln (1-p)/p` from per-bit probabilities of a one, after clamping.
pub fn bit_probabilities_to_llrs(p_one: &[f64]) -> Vec<f64> {
    p_one
        .iter()
        .map(|&p| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            (1.0 - p).ln() - p.ln()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointStats {
    pub point: f64,
    pub count: usize,
    /// `None` when no sample was transmitted at this point.
    pub mean: Option<f64>,
    /// Population variance; `None` for empty groups.
    pub variance: Option<f64>,
}

/// Conditional mean and variance of the equalized signal per transmitted point.
pub fn scatter_stats(equalized: &[f64], reference: &[f64], c: &Constellation) -> Result<Vec<PointStats>> {
    if equalized.len() != reference.len() {
        return Err(Error::invalid(format!(
            "equalized and reference lengths differ ({} vs {})",
            equalized.len(),
            reference.len()
        )));
    }
    let mut count = vec![0usize; c.len()];
    let mut sum = vec![0.0; c.len()];
    for (&y, &x) in equalized.iter().zip(reference) {
        let k = c
            .index_of(x)
            .ok_or_else(|| Error::invalid(format!("reference {x} is not a constellation point")))?;
        count[k] += 1;
        sum[k] += y;
    }
    let mean: Vec<f64> = (0..c.len()).map(|k| sum[k] / count[k].max(1) as f64).collect();
    let mut sq = vec![0.0; c.len()];
    for (&y, &x) in equalized.iter().zip(reference) {
        let k = c.index_of(x).expect("checked above");
        sq[k] += (y - mean[k]) * (y - mean[k]);
    }
    Ok((0..c.len())
        .map(|k| PointStats {
            point: c.points()[k],
            count: count[k],
            mean: (count[k] > 0).then_some(mean[k]),
            variance: (count[k] > 0).then(|| sq[k] / count[k] as f64),
        })
        .collect())
}

/// Average of the conditional variances over non-empty groups.
pub fn mean_conditional_variance(stats: &[PointStats]) -> Option<f64> {
    let vars: Vec<f64> = stats.iter().filter_map(|s| s.variance).collect();
    (!vars.is_empty()).then(|| vars.iter().sum::<f64>() / vars.len() as f64)
}

/// Everything measured for one model on one evaluation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frame_id: usize,
    pub ber: f64,
    /// `None` for joint networks, which expose no equalized signal.
    pub air_symbolwise: Option<f64>,
    pub gmi_bitwise: f64,
    pub ce_nats: Option<f64>,
    pub sigma2_used: Option<f64>,
    pub scatter_stats: Vec<PointStats>,
    pub n_symbols: usize,
    pub n_bits: usize,
}

pub const EVAL_CSV_COLUMNS: [&str; 8] = [
    "frame_id",
    "ber",
    "air_symbolwise",
    "gmi_bitwise",
    "ce_nats",
    "sigma2_used",
    "n_symbols",
    "n_bits",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:?}"))
}

impl EvalReport {
    /// Flat `key = value` record, one field per line.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frame_id = {}", self.frame_id);
        let _ = writeln!(s, "ber = {:?}", self.ber);
        let _ = writeln!(s, "air_symbolwise = {}", opt(self.air_symbolwise));
        let _ = writeln!(s, "gmi_bitwise = {:?}", self.gmi_bitwise);
        let _ = writeln!(s, "ce_nats = {}", opt(self.ce_nats));
        let _ = writeln!(s, "sigma2_used = {}", opt(self.sigma2_used));
        let _ = writeln!(s, "n_symbols = {}", self.n_symbols);
        let _ = writeln!(s, "n_bits = {}", self.n_bits);
        for (k, st) in self.scatter_stats.iter().enumerate() {
            let _ = writeln!(s, "scatter.{k}.point = {:?}", st.point);
            let _ = writeln!(s, "scatter.{k}.count = {}", st.count);
            let _ = writeln!(s, "scatter.{k}.mean = {}", opt(st.mean));
            let _ = writeln!(s, "scatter.{k}.variance = {}", opt(st.variance));
        }
        s
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{},{:?},{},{},{},{}",
            self.frame_id,
            self.ber,
            opt(self.air_symbolwise),
            self.gmi_bitwise,
            opt(self.ce_nats),
            opt(self.sigma2_used),
            self.n_symbols,
            self.n_bits
        )
    }

    pub fn mean_conditional_variance(&self) -> Option<f64> {
        mean_conditional_variance(&self.scatter_stats)
    }
}

/// Soft outputs of the Gaussian demapper over a whole frame.
#[derive(Debug, Clone)]
pub struct DemappedFrame {
    /// Row-major `(n, m)`.
    pub llrs: Vec<f64>,
    pub ce_nats: f64,
}

/// Run the Gaussian demapper over every sample.
pub fn demap(equalized: &[f64], targets: &[f64], params: &DemapperParams) -> Result<DemappedFrame> {
    if equalized.len() != targets.len() || equalized.is_empty() {
        return Err(Error::invalid("equalized and target arrays must be non-empty and equal length"));
    }
    let c = params.constellation();
    let m = c.bits_per_symbol();
    let mut joint = vec![0.0; c.len()];
    let mut llrs = vec![0.0; equalized.len() * m];
    let mut ce = 0.0;
    for (k, (&y, &x)) in equalized.iter().zip(targets).enumerate() {
        let t = c
            .index_of(x)
            .ok_or_else(|| Error::invalid(format!("target {x} is not a constellation point")))?;
        params.log_joint_into(y, &mut joint);
        ce += logsumexp(&joint) - joint[t];
        params.llrs_from_log_joint(&joint, &mut llrs[k * m..(k + 1) * m]);
    }
    Ok(DemappedFrame {
        llrs,
        ce_nats: ce / equalized.len() as f64,
    })
}

fn bit_priors(c: &Constellation) -> Vec<f64> {
    (0..c.bits_per_symbol()).map(|i| c.bit_one_probability(i)).collect()
}

/// Report for an equalizer output: σ² is estimated data-aided on this frame
/// and fed to the Gaussian demapper.
pub fn report_from_equalized(
    frame_id: usize,
    equalized: &[f64],
    targets: &[f64],
    labels: &[u32],
    c: &Constellation,
) -> Result<EvalReport> {
    let sigma2 = estimate_sigma2(equalized, targets)?;
    let params = DemapperParams::new(c, sigma2)?;
    let demapped = demap(equalized, targets, &params)?;
    let bits = labels_to_bits(labels, c.bits_per_symbol());
    Ok(EvalReport {
        frame_id,
        ber: ber(&demapped.llrs, &bits)?,
        air_symbolwise: Some(air_symbolwise(demapped.ce_nats, c.entropy())),
        gmi_bitwise: gmi_bitwise(&demapped.llrs, &bits, &bit_priors(c))?,
        ce_nats: Some(demapped.ce_nats),
        sigma2_used: Some(sigma2),
        scatter_stats: scatter_stats(equalized, targets, c)?,
        n_symbols: equalized.len(),
        n_bits: bits.len(),
    })
}

/// Report for a joint network emitting per-bit probabilities of a one
/// (row-major `(n, m)`).
pub fn report_from_bit_probabilities(
    frame_id: usize,
    p_one: &[f64],
    labels: &[u32],
    c: &Constellation,
) -> Result<EvalReport> {
    let bits = labels_to_bits(labels, c.bits_per_symbol());
    let llrs = bit_probabilities_to_llrs(p_one);
    Ok(EvalReport {
        frame_id,
        ber: ber(&llrs, &bits)?,
        air_symbolwise: None,
        gmi_bitwise: gmi_bitwise(&llrs, &bits, &bit_priors(c))?,
        ce_nats: None,
        sigma2_used: None,
        scatter_stats: Vec::new(),
        n_symbols: labels.len(),
        n_bits: bits.len(),
    })
}
