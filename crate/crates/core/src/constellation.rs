//! Real-valued amplitude alphabets with bit labels and priors.
//!
//! Bit `i` of a label is counted from the most significant end: bit 0 is the
//! leftmost bit of the m-bit label. Every module that touches labels uses this
//! convention.

use crate::error::{Error, Result};

const PRIOR_TOLERANCE: f64 = 1e-12;
const POWER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<f64>,
    labels: Vec<u32>,
    prior: Vec<f64>,
    bits_per_symbol: usize,
}

/// Binary-reflected Gray code.
#[inline]
pub fn gray_code(k: u32) -> u32 {
    k ^ (k >> 1)
}

impl Constellation {
    /// Equally spaced 2^m-ASK with unit average power, binary-reflected Gray
    /// labels (descending amplitude order) and a uniform prior.
    pub fn make_ask(bits_per_symbol: usize) -> Result<Self> {
        if !(1..=6).contains(&bits_per_symbol) {
            return Err(Error::invalid(format!(
                "bits per symbol must be in 1..=6, got {bits_per_symbol}"
            )));
        }
        let size = 1usize << bits_per_symbol;
        // Levels -(M-1), ..., -1, 1, ..., M-1 have mean square (M^2 - 1) / 3.
        let scale = (((size * size - 1) as f64) / 3.0).sqrt();
        let points = (0..size)
            .map(|k| (2.0 * k as f64 - (size as f64 - 1.0)) / scale)
            .collect();
        // Highest amplitude carries label 0, so for BPSK bit 0 maps to +1.
        let labels = (0..size as u32).rev().map(gray_code).collect();
        let prior = vec![1.0 / size as f64; size];
        Self::new(points, labels, prior, bits_per_symbol)
    }

    /// Build a constellation and check every invariant, including unit
    /// average power.
    pub fn new(
        points: Vec<f64>,
        labels: Vec<u32>,
        prior: Vec<f64>,
        bits_per_symbol: usize,
    ) -> Result<Self> {
        if bits_per_symbol == 0 {
            return Err(Error::invalid("bits per symbol must be at least 1"));
        }
        let c = Self::unnormalized(points, labels, prior, bits_per_symbol)?;
        let power = c.average_power();
        if (power - 1.0).abs() > POWER_TOLERANCE {
            return Err(Error::invalid(format!(
                "average power must be 1, got {power}"
            )));
        }
        Ok(c)
    }

    /// Like [`Constellation::new`] but without the unit-power requirement, and
    /// allowing `bits_per_symbol == 0` (a single-point alphabet). Useful for
    /// degenerate demapper checks.
    pub fn unnormalized(
        points: Vec<f64>,
        labels: Vec<u32>,
        prior: Vec<f64>,
        bits_per_symbol: usize,
    ) -> Result<Self> {
        if bits_per_symbol > 16 {
            return Err(Error::invalid("bits per symbol must be at most 16"));
        }
        let size = 1usize << bits_per_symbol;
        if points.len() != size || labels.len() != size || prior.len() != size {
            return Err(Error::invalid(format!(
                "expected {size} points, labels and prior entries, got {}, {}, {}",
                points.len(),
                labels.len(),
                prior.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("constellation points must be finite"));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("points must be strictly increasing"));
        }
        let mut seen = vec![false; size];
        for &label in &labels {
            let idx = label as usize;
            if idx >= size {
                return Err(Error::invalid(format!(
                    "label {label} does not fit in {bits_per_symbol} bits"
                )));
            }
            if seen[idx] {
                return Err(Error::invalid(format!("duplicate label {label}")));
            }
            seen[idx] = true;
        }
        if prior.iter().any(|&p| p <= 0.0 || !p.is_finite()) {
            return Err(Error::invalid("every prior entry must be positive"));
        }
        let total: f64 = prior.iter().sum();
        if (total - 1.0).abs() > PRIOR_TOLERANCE {
            return Err(Error::invalid(format!("prior must sum to 1, got {total}")));
        }
        Ok(Self {
            points,
            labels,
            prior,
            bits_per_symbol,
        })
    }

    /// Same alphabet and labels with a different prior.
    pub fn with_prior(&self, prior: Vec<f64>) -> Result<Self> {
        let c = Self::unnormalized(
            self.points.clone(),
            self.labels.clone(),
            prior,
            self.bits_per_symbol,
        )?;
        Ok(c)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn average_power(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.prior)
            .map(|(x, p)| p * x * x)
            .sum()
    }

    /// Bit `bit` (0 = most significant) of the label of point `index`.
    #[inline]
    pub fn label_bit(&self, index: usize, bit: usize) -> u8 {
        bit_of(self.labels[index], bit, self.bits_per_symbol)
    }

    /// Indices of the points whose label has bit `bit` equal to `value`.
    pub fn bit_subset(&self, bit: usize, value: u8) -> Result<Vec<usize>> {
        if bit >= self.bits_per_symbol {
            return Err(Error::invalid(format!(
                "bit index {bit} out of range for {} bits per symbol",
                self.bits_per_symbol
            )));
        }
        if value > 1 {
            return Err(Error::invalid(format!("bit value must be 0 or 1, got {value}")));
        }
        Ok((0..self.len())
            .filter(|&k| self.label_bit(k, bit) == value)
            .collect())
    }

    /// Source entropy H(X) in bits.
    pub fn entropy(&self) -> f64 {
        -self
            .prior
            .iter()
            .map(|&p| p * p.log2())
            .sum::<f64>()
    }

    /// Marginal probability that bit `bit` equals 1.
    pub fn bit_one_probability(&self, bit: usize) -> f64 {
        (0..self.len())
            .filter(|&k| self.label_bit(k, bit) == 1)
            .map(|k| self.prior[k])
            .sum()
    }

    /// Index of the point exactly matching `x` (within 1e-9).
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let (idx, dist) = self.nearest(x);
        (dist <= 1e-9).then_some(idx)
    }

    /// Index of the point closest to `x` and its distance.
    pub fn nearest(&self, x: f64) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, &p) in self.points.iter().enumerate() {
            let d = (p - x).abs();
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// Index of the point carrying `label`.
    pub fn index_of_label(&self, label: u32) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }
}

#[inline]
pub fn bit_of(label: u32, bit: usize, bits_per_symbol: usize) -> u8 {
    ((label >> (bits_per_symbol - 1 - bit)) & 1) as u8
}
