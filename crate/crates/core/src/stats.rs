//! Upper confidence bounds on rare-event rates.

/// Poisson cumulative probability `P[X <= k]` for mean `lambda`.
pub fn poisson_cdf(k: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    // Sum the terms in log space so large means do not underflow.
    let ln_lambda = lambda.ln();
    let mut ln_term = -lambda;
    let mut max = ln_term;
    let mut terms = Vec::with_capacity(k as usize + 1);
    terms.push(ln_term);
    for i in 1..=k {
        ln_term += ln_lambda - (i as f64).ln();
        max = max.max(ln_term);
        terms.push(ln_term);
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}

/// Exact one-sided upper bound on the mean of a Poisson count: the `lambda`
/// at which observing `k` or fewer events has probability `1 - confidence`.
pub fn poisson_upper_mean(k: u64, confidence: f64) -> f64 {
    assert!(confidence > 0.0 && confidence < 1.0, "confidence must lie in (0, 1)");
    let target = 1.0 - confidence;
    let mut hi = (k as f64 + 1.0).max(1.0);
    while poisson_cdf(k, hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if poisson_cdf(k, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Upper bound on the per-trial event rate after observing `k` events in `n`
/// trials. Callers wanting the "one additional observed error" convention
/// pass `k + 1`.
pub fn poisson_upper_rate(k: u64, n: u64, confidence: f64) -> f64 {
    assert!(n >= 1, "need at least one trial");
    poisson_upper_mean(k, confidence) / n as f64
}

/// Format a rate as an upper-bounded percentage rounded up to one
/// significant digit, e.g. `2.9957e-6` becomes `"<0.0003 %"`.
pub fn format_percent_bound(rate: f64) -> String {
    let pct = rate * 100.0;
    if pct.is_nan() || pct <= 0.0 || pct.is_infinite() {
        return format!("<{pct} %");
    }
    let mut exp = pct.log10().floor() as i32;
    let mut digit = (pct / 10f64.powi(exp) - 1e-9).ceil() as i64;
    if digit >= 10 {
        digit = 1;
        exp += 1;
    }
    let decimals = (-exp).max(0) as usize;
    format!("<{:.*} %", decimals, digit as f64 * 10f64.powi(exp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_count_closed_form() {
        let lambda = poisson_upper_mean(0, 0.95);
        assert!((lambda - 20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cdf_small_values() {
        assert!((poisson_cdf(0, 1.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((poisson_cdf(2, 2.0) - 5.0 * (-2f64).exp()).abs() < 1e-14);
        assert_eq!(poisson_cdf(3, 0.0), 1.0);
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent_bound(2.9957e-6), "<0.0003 %");
        assert_eq!(format_percent_bound(4.7439e-6), "<0.0005 %");
        assert_eq!(format_percent_bound(0.0951), "<10 %");
        assert_eq!(format_percent_bound(3e-5), "<0.003 %");
    }
}
