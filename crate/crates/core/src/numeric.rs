//! Small numerical helpers shared across modules.

/// Exponents more negative than this (relative to the leading term) are flushed to zero.
pub const FLUSH_EXPONENT: f64 = -700.0;

/// `ln(sum_i exp(x_i))` without overflow. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `exp(x)`, but exactly zero once `x` drops below [`FLUSH_EXPONENT`].
pub fn flushed_exp(x: f64) -> f64 {
    if x < FLUSH_EXPONENT {
        0.0
    } else {
        x.exp()
    }
}

/// Median of a non-empty slice (mean of the two central values for even length).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
