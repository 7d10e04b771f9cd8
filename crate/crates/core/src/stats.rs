//! Distribution helpers and resampling summaries.

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Quantile of the χ² distribution with `df` degrees of freedom.
pub fn chi2_quantile(prob: f64, df: usize) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) || df == 0 {
        return Err(Error::InvalidInput(format!(
            "chi-square quantile needs prob in (0,1) and df >= 1, got prob = {prob}, df = {df}"
        )));
    }
    let dist = ChiSquared::new(df as f64)
        .map_err(|e| Error::InvalidInput(format!("chi-square distribution: {e}")))?;
    Ok(dist.inverse_cdf(prob))
}

pub fn chi2_cdf(x: f64, df: usize) -> f64 {
    ChiSquared::new(df as f64)
        .map(|d| d.cdf(x))
        .unwrap_or(f64::NAN)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - mu).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Percentile-bootstrap interval for `mean(a) - mean(b)` with independent
/// resampling of both samples.
pub fn bootstrap_mean_diff_ci<R: Rng>(
    a: &[f64],
    b: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let mut diffs: Vec<f64> = (0..resamples)
        .map(|_| resample_mean(a, rng) - resample_mean(b, rng))
        .collect();
    diffs.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    (quantile(&diffs, tail), quantile(&diffs, 1.0 - tail))
}

/// Percentile-bootstrap interval for `mean(a) - mean(b)` on paired samples.
pub fn bootstrap_paired_diff_ci<R: Rng>(
    a: &[f64],
    b: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "paired bootstrap needs equal lengths");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut means: Vec<f64> = (0..resamples).map(|_| resample_mean(&d, rng)).collect();
    means.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    (quantile(&means, tail), quantile(&means, 1.0 - tail))
}

fn resample_mean<R: Rng>(xs: &[f64], rng: &mut R) -> f64 {
    let n = xs.len();
    (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn chi2_quantiles_match_reference_values() {
        // reference values from an independent incomplete-gamma implementation
        let cases = [
            (0.95, 7, 14.067140449340169),
            (0.9, 7, 12.017036623780532),
            (0.15, 7, 3.3582843792081403),
            (0.5, 1, 0.454936423119572),
            (0.95, 1, 3.841458820694124),
            (0.99, 3, 11.344866730144373),
            (0.05, 2, 0.10258658877510106),
            (0.9, 15, 22.307129581578693),
            (0.2, 3, 1.0051740130523492),
        ];
        for (p, df, want) in cases {
            let got = chi2_quantile(p, df).unwrap();
            assert!((got - want).abs() <= 1e-8 * want, "p={p} df={df}: {got} vs {want}");
        }
    }

    #[test]
    fn chi2_quantile_rejects_bad_args() {
        assert!(chi2_quantile(0.0, 3).is_err());
        assert!(chi2_quantile(1.0, 3).is_err());
        assert!(chi2_quantile(0.5, 0).is_err());
    }

    #[test]
    fn summaries() {
        let xs = [210.0, 190.0, 260.0];
        assert_eq!(mean(&xs), 220.0);
        assert!((std_dev(&xs) - 36.05551275463989).abs() < 1e-12);
        assert_eq!(median(&xs), 210.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
    }

    #[test]
    fn bootstrap_brackets_clear_difference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..200).map(|i| 10.0 + (i % 7) as f64).collect();
        let b: Vec<f64> = (0..200).map(|i| 20.0 + (i % 5) as f64).collect();
        let (lo, hi) = bootstrap_mean_diff_ci(&a, &b, 0.95, 1000, &mut rng);
        assert!(lo < -9.0 && hi < -8.0 && lo < hi, "{lo} {hi}");
        let (lo, hi) = bootstrap_paired_diff_ci(&a, &b, 0.95, 1000, &mut rng);
        assert!(hi < 0.0 && lo < hi);
    }
}
