//! Log-domain helpers shared by the strategy and dynamics code.

/// `log(exp(a) + exp(b))` without overflow. Handles `-inf` operands.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(v)))` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes unnormalized log weights in place so that `exp` of the result
/// sums to one. Returns the log normalizer.
pub fn log_normalize(log_weights: &mut [f64]) -> f64 {
    let lse = log_sum_exp(log_weights);
    for w in log_weights.iter_mut() {
        *w -= lse;
    }
    lse
}

/// Softmax of log weights into `out`.
pub fn softmax_into(log_weights: &[f64], out: &mut [f64]) {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &w) in out.iter_mut().zip(log_weights) {
        *o = (w - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Index of the strict maximum, or `None` when the maximum is shared.
pub fn strict_argmax(values: &[f64]) -> Option<usize> {
    let mut best = 0;
    let mut tied = false;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
            tied = false;
        } else if v == values[best] {
            tied = true;
        }
    }
    if tied {
        None
    } else {
        Some(best)
    }
}
