//! Log-domain helpers.

/// `ln Σ exp(x)` over the slice, stabilized by the maximum.
#[inline]
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// `ln Σ exp(xs[k])` over the given indices.
#[inline]
pub fn logsumexp_indexed(xs: &[f64], indices: &[usize]) -> f64 {
    let m = indices.iter().map(|&k| xs[k]).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = indices.iter().map(|&k| (xs[k] - m).exp()).sum();
    m + s.ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary entropy in bits.
pub fn binary_entropy_bits(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}
