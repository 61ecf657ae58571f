//! Small log-domain helpers.

/// `log Σ exp(x_i)`, shifted by the maximum. Empty input gives `-inf`.
#[inline]
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Same as [`logsumexp`] over an iterator, without allocating.
#[inline]
pub fn logsumexp_iter<I>(xs: I) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// Softmax of `xs` into `out`, computed with the maximum subtracted.
pub fn softmax_into(xs: &[f64], out: &mut [f64]) {
    debug_assert_eq!(xs.len(), out.len());
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Index of the first maximal entry.
pub fn first_argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
