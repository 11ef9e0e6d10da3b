//! Small statistics helpers for seed-level comparisons.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, StudentsT};

/// Sample mean and standard error of the mean. A single value has zero
/// standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for `mean(a − b) > 0`.
    pub p_greater: f64,
    pub p_two_sided: f64,
}

/// Paired t-test on `a − b`.
///
/// # Panics
/// If the slices differ in length or hold fewer than two pairs.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> TTest {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    assert!(a.len() >= 2, "paired t-test needs at least two pairs");
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, se) = mean_se(&diffs);
    let df = (diffs.len() - 1) as f64;
    if se == 0.0 {
        let p = if mean > 0.0 { 0.0 } else { 1.0 };
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return TTest {
            mean_diff: mean,
            t,
            p_greater: p,
            p_two_sided: if mean == 0.0 { 1.0 } else { 0.0 },
        };
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    TTest {
        mean_diff: mean,
        t,
        p_greater: dist.sf(t),
        p_two_sided: 2.0 * dist.sf(t.abs()),
    }
}

/// One-sided sign test: probability of at least `successes` heads in
/// `trials` fair coin flips.
pub fn sign_test(successes: u64, trials: u64) -> f64 {
    if successes == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, trials).expect("valid binomial");
    b.sf(successes - 1)
}

/// Pearson chi-square goodness-of-fit p-value.
///
/// # Panics
/// If lengths differ, fewer than two cells are given, or any expected count
/// is not positive.
pub fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    assert!(observed.len() >= 2);
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| {
            assert!(*e > 0.0, "expected counts must be positive");
            (o - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).expect("df > 0");
    dist.sf(stat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn t_test_reference_value() {
        // diffs 1, 2, 3: mean 2, se 1/√3, t = 2√3 ≈ 3.4641 on 2 df.
        let r = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]);
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // scipy.stats.t.sf(3.4641016, 2) = 0.0370
        assert!((r.p_greater - 0.0370).abs() < 1e-3);
    }

    #[test]
    fn sign_test_reference_values() {
        assert!((sign_test(15, 20) - 0.020694732666015625).abs() < 1e-12);
        assert_eq!(sign_test(0, 5), 1.0);
        assert!((sign_test(5, 5) - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn chi_square_reference_value() {
        // stat = 4 on 1 df
        let p = chi_square_p(&[60.0, 40.0], &[50.0, 50.0]);
        assert!((p - 0.04550026389635857).abs() < 1e-9);
    }
}
