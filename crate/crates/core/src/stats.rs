//! Summary statistics over independent repetitions.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; NaN for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Half-width of the two-sided 95% Student-t interval for the mean.
/// NaN when fewer than two values are given.
pub fn ci95_halfwidth(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    t * (sample_variance(xs) / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sequence_has_zero_width() {
        assert_eq!(ci95_halfwidth(&[0.25; 10]), 0.0);
    }

    #[test]
    fn known_t_quantile() {
        // t_{0.975, 9} = 2.262157...; sd of 0..=9 is sqrt(55/6).
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let expect = 2.262_157_162_740_992 * (55.0_f64 / 6.0 / 10.0).sqrt();
        assert!((ci95_halfwidth(&xs) - expect).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(ci95_halfwidth(&[1.0]).is_nan());
        assert!(mean(&[]).is_nan());
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
