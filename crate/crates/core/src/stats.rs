//! Statistical analyses over fitted interest values: lognormal maximum
//! likelihood with normal-theory confidence intervals, a parametric
//! bootstrap Kolmogorov-Smirnov test that refits on every replicate (the
//! fit-then-test correction), permutation tests for correlations, and
//! simple error metrics.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, LogNormal};
use thiserror::Error;

use crate::montecarlo::substream_seed;
use crate::special::norm_cdf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} values, have {have}")]
    TooFewValues { needed: usize, have: usize },
    #[error("value at index {index} is not a positive finite number: {value}")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("all values identical: dispersion is zero")]
    ZeroDispersion,
    #[error("observed value at index {index} is zero; relative error undefined")]
    ZeroObserved { index: usize },
}

const Z_975: f64 = 1.959_963_984_540_054;

/// Lognormal fit of a positive sample, with goodness-of-fit fields filled
/// by [`lognormal_fit_with_gof`].
#[derive(Debug, Clone, PartialEq)]
pub struct LognormalFit {
    /// Mean of the log values.
    pub mu_ln: f64,
    /// Standard deviation of the log values (MLE, divisor n).
    pub sigma_ln: f64,
    pub ci95_mu: (f64, f64),
    pub ci95_sigma: (f64, f64),
    pub ks_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub n: usize,
}

fn checked_logs(values: &[f64], needed: usize) -> Result<Vec<f64>, StatsError> {
    if values.len() < needed {
        return Err(StatsError::TooFewValues {
            needed,
            have: values.len(),
        });
    }
    values
        .iter()
        .enumerate()
        .map(|(index, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(StatsError::NonPositiveValue { index, value: v })
            }
        })
        .collect()
}

/// Chi-square quantile by the Wilson-Hilferty cube approximation; ample
/// for the confidence intervals at the sample sizes used here.
fn chi_square_quantile(p: f64, dof: f64) -> f64 {
    let z = if p >= 0.5 { Z_975 } else { -Z_975 };
    debug_assert!((p - 0.975).abs() < 1e-9 || (p - 0.025).abs() < 1e-9);
    let a = 2.0 / (9.0 * dof);
    dof * (1.0 - a + z * a.sqrt()).powi(3)
}

/// Maximum likelihood lognormal fit (`ks_stat`/`p_value` left empty).
pub fn lognormal_mle(values: &[f64]) -> Result<LognormalFit, StatsError> {
    let logs = checked_logs(values, 2)?;
    let n = logs.len();
    let nf = n as f64;
    let mu = logs.iter().sum::<f64>() / nf;
    let sigma = (logs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / nf).sqrt();
    if sigma == 0.0 {
        return Err(StatsError::ZeroDispersion);
    }
    let ci95_mu = (mu - Z_975 * sigma / nf.sqrt(), mu + Z_975 * sigma / nf.sqrt());
    let dof = nf - 1.0;
    let ci95_sigma = (
        sigma * (nf / chi_square_quantile(0.975, dof)).sqrt(),
        sigma * (nf / chi_square_quantile(0.025, dof)).sqrt(),
    );
    Ok(LognormalFit {
        mu_ln: mu,
        sigma_ln: sigma,
        ci95_mu,
        ci95_sigma,
        ks_stat: None,
        p_value: None,
        n,
    })
}

/// One-sample Kolmogorov-Smirnov statistic of `sorted` against `cdf`
/// (maximum of both one-sided gaps).
fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

fn lognormal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        norm_cdf((x.ln() - mu) / sigma)
    }
}

/// Parametric bootstrap KS test against the lognormal family.
///
/// Each of the `n_synthetic` replicates draws a fresh sample of the same
/// size from the fitted lognormal, refits it, and computes its own KS
/// statistic, so the returned p-value accounts for the parameters having
/// been estimated from the data. The p-value is the fraction of replicate
/// statistics strictly exceeding the observed one.
pub fn ks_randomization_test(
    values: &[f64],
    n_synthetic: usize,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    let fit = {
        checked_logs(values, 8)?;
        lognormal_mle(values)?
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let observed = ks_statistic(&sorted, |x| lognormal_cdf(x, fit.mu_ln, fit.sigma_ln));

    let n = values.len();
    let mut exceed = 0usize;
    for b in 0..n_synthetic {
        let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(seed, b as u64));
        let dist = LogNormal::new(fit.mu_ln, fit.sigma_ln).expect("sigma > 0");
        let mut sample: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let refit = match lognormal_mle(&sample) {
            Ok(f) => f,
            // Zero-dispersion replicate has probability zero; count it as
            // non-exceeding rather than failing the whole test.
            Err(_) => continue,
        };
        sample.sort_by(|a, b| a.total_cmp(b));
        let d = ks_statistic(&sample, |x| lognormal_cdf(x, refit.mu_ln, refit.sigma_ln));
        if d > observed {
            exceed += 1;
        }
    }
    Ok((observed, exceed as f64 / n_synthetic as f64))
}

/// [`lognormal_mle`] plus the parametric bootstrap goodness-of-fit fields.
pub fn lognormal_fit_with_gof(
    values: &[f64],
    n_synthetic: usize,
    seed: u64,
) -> Result<LognormalFit, StatsError> {
    let mut fit = lognormal_mle(values)?;
    let (ks, p) = ks_randomization_test(values, n_synthetic, seed)?;
    fit.ks_stat = Some(ks);
    fit.p_value = Some(p);
    Ok(fit)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Pearson correlation with a two-sided permutation p-value obtained by
/// shuffling `y` `n_perm` times. Uses the add-one estimator, so the
/// smallest reportable p is 1/(n_perm + 1).
pub fn correlation_permutation_test(
    x: &[f64],
    y: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewValues {
            needed: 3,
            have: x.len(),
        });
    }
    let observed = pearson(x, y).ok_or(StatsError::ZeroDispersion)?;
    let mut shuffled = y.to_vec();
    let mut exceed = 0usize;
    for b in 0..n_perm {
        let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(seed, b as u64));
        shuffle(&mut shuffled, &mut rng);
        if let Some(r) = pearson(x, &shuffled) {
            if r.abs() >= observed.abs() {
                exceed += 1;
            }
        }
    }
    Ok((observed, (exceed + 1) as f64 / (n_perm + 1) as f64))
}

fn shuffle<R: Rng>(values: &mut [f64], rng: &mut R) {
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
}

/// Paired comparison of two predictors of the same truth.
///
/// Returns the observed correlation gap `corr(a, truth) - corr(b, truth)`
/// and a one-sided p-value from randomly swapping the paired predictions
/// story by story (sign-flip null of exchangeable predictors). Both
/// predictors are standardized before swapping so the null is not
/// distorted by scale differences; Pearson correlations are affine
/// invariant, so the observed gap is unaffected.
pub fn paired_correlation_test(
    pred_a: &[f64],
    pred_b: &[f64],
    truth: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    if pred_a.len() != pred_b.len() || pred_a.len() != truth.len() {
        return Err(StatsError::LengthMismatch {
            left: pred_a.len(),
            right: pred_b.len().max(truth.len()),
        });
    }
    if pred_a.len() < 3 {
        return Err(StatsError::TooFewValues {
            needed: 3,
            have: pred_a.len(),
        });
    }
    let gap = |a: &[f64], b: &[f64]| -> Option<f64> {
        Some(pearson(a, truth)? - pearson(b, truth)?)
    };
    let observed = gap(pred_a, pred_b).ok_or(StatsError::ZeroDispersion)?;

    let standardize = |values: &[f64]| -> Result<Vec<f64>, StatsError> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        if sd == 0.0 {
            return Err(StatsError::ZeroDispersion);
        }
        Ok(values.iter().map(|v| (v - mean) / sd).collect())
    };
    let za = standardize(pred_a)?;
    let zb = standardize(pred_b)?;

    let n = pred_a.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut exceed = 0usize;
    for rep in 0..n_perm {
        let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(seed, rep as u64));
        for i in 0..n {
            if rng.random::<bool>() {
                a[i] = zb[i];
                b[i] = za[i];
            } else {
                a[i] = za[i];
                b[i] = zb[i];
            }
        }
        if let Some(g) = gap(&a, &b) {
            if g >= observed {
                exceed += 1;
            }
        }
    }
    Ok((observed, (exceed + 1) as f64 / (n_perm + 1) as f64))
}

/// RMS error metrics between predictions and observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMetrics {
    /// sqrt(mean((predicted - observed)^2)).
    pub rms_abs: f64,
    /// sqrt(mean(((predicted - observed)/observed)^2)).
    pub rms_rel: f64,
    /// Pearson correlation; `None` when either side has zero variance.
    pub pearson: Option<f64>,
}

pub fn error_metrics(predicted: &[f64], observed: &[f64]) -> Result<ErrorMetrics, StatsError> {
    if predicted.len() != observed.len() {
        return Err(StatsError::LengthMismatch {
            left: predicted.len(),
            right: observed.len(),
        });
    }
    if predicted.is_empty() {
        return Err(StatsError::TooFewValues { needed: 1, have: 0 });
    }
    let mut sq = 0.0;
    let mut rel_sq = 0.0;
    for (index, (&p, &o)) in predicted.iter().zip(observed).enumerate() {
        if o == 0.0 {
            return Err(StatsError::ZeroObserved { index });
        }
        let d = p - o;
        sq += d * d;
        rel_sq += (d / o) * (d / o);
    }
    let n = predicted.len() as f64;
    Ok(ErrorMetrics {
        rms_abs: (sq / n).sqrt(),
        rms_rel: (rel_sq / n).sqrt(),
        pearson: pearson(predicted, observed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mle_two_point_sample() {
        let fit = lognormal_mle(&[1.0, std::f64::consts::E.powi(2)]).unwrap();
        assert!((fit.mu_ln - 1.0).abs() < 1e-12);
        assert!((fit.sigma_ln - 1.0).abs() < 1e-12);
        assert_eq!(fit.n, 2);
    }

    #[test]
    fn mle_rejects_degenerate_and_nonpositive() {
        let e = std::f64::consts::E;
        assert!(matches!(
            lognormal_mle(&[1.0 / e, 1.0 / e, 1.0 / e]),
            Err(StatsError::ZeroDispersion)
        ));
        assert!(matches!(
            lognormal_mle(&[0.5, -1.0, 0.2]),
            Err(StatsError::NonPositiveValue { index: 1, .. })
        ));
        assert!(lognormal_mle(&[0.5]).is_err());
    }

    #[test]
    fn mle_ci_widths_at_paper_scale() {
        // At n = 510, sigma = 0.47, the normal-theory half widths come out
        // near 0.04 for the mean and 0.03 for the deviation of the logs.
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let dist = LogNormal::new(-1.67, 0.47).unwrap();
        let values: Vec<f64> = (0..510).map(|_| dist.sample(&mut rng)).collect();
        let fit = lognormal_mle(&values).unwrap();
        let mu_half = 0.5 * (fit.ci95_mu.1 - fit.ci95_mu.0);
        let sigma_half = 0.5 * (fit.ci95_sigma.1 - fit.ci95_sigma.0);
        assert!((mu_half - 0.041).abs() < 0.006, "mu half width {mu_half}");
        assert!(
            (sigma_half - 0.029).abs() < 0.006,
            "sigma half width {sigma_half}"
        );
    }

    #[test]
    fn mle_coverage_over_repetitions() {
        let mut mu_covered = 0;
        let mut sigma_covered = 0;
        for rep in 0..100 {
            let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(321, rep));
            let dist = LogNormal::new(-1.67, 0.47).unwrap();
            let values: Vec<f64> = (0..510).map(|_| dist.sample(&mut rng)).collect();
            let fit = lognormal_mle(&values).unwrap();
            if fit.ci95_mu.0 <= -1.67 && -1.67 <= fit.ci95_mu.1 {
                mu_covered += 1;
            }
            if fit.ci95_sigma.0 <= 0.47 && 0.47 <= fit.ci95_sigma.1 {
                sigma_covered += 1;
            }
        }
        assert!(mu_covered >= 90, "mu CI coverage {mu_covered}/100");
        assert!(sigma_covered >= 90, "sigma CI coverage {sigma_covered}/100");
    }

    #[test]
    fn ks_statistic_matches_direct_computation() {
        let sorted = [0.1, 0.4, 0.6, 0.9];
        let cdf = |x: f64| x; // uniform on [0, 1]
        let d = ks_statistic(&sorted, cdf);
        // Direct evaluation of both gaps at every point.
        let mut expected = 0.0f64;
        for (i, &x) in sorted.iter().enumerate() {
            expected = expected
                .max((i as f64 + 1.0) / 4.0 - x)
                .max(x - i as f64 / 4.0);
        }
        assert_eq!(d, expected);
        assert!((d - 0.15).abs() < 1e-12);
    }

    #[test]
    fn ks_test_accepts_lognormal_and_rejects_pareto() {
        // True lognormal data should not be rejected.
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let dist = LogNormal::new(-1.67, 0.47).unwrap();
        let values: Vec<f64> = (0..510).map(|_| dist.sample(&mut rng)).collect();
        let (_, p) = ks_randomization_test(&values, 400, 55).unwrap();
        assert!(p > 0.05, "p = {p}");

        // A Pareto tail is visibly not lognormal at this sample size.
        let mut rejected = 0;
        for rep in 0..10 {
            let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(900, rep));
            let pareto: Vec<f64> = (0..510)
                .map(|_| {
                    let u: f64 = rng.random();
                    0.05 * (1.0 - u).powf(-1.0 / 1.5)
                })
                .collect();
            let (_, p) = ks_randomization_test(&pareto, 300, rep).unwrap();
            if p < 0.05 {
                rejected += 1;
            }
        }
        assert!(rejected >= 8, "rejected {rejected}/10");
    }

    #[test]
    fn permutation_test_extremes() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let (r, p) = correlation_permutation_test(&x, &x, 999, 3).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(p <= 1.0 / 1000.0 + 1e-12);

        let (r, _) =
            correlation_permutation_test(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], 100, 3).unwrap();
        assert!((r + 1.0).abs() < 1e-12);

        assert!(matches!(
            correlation_permutation_test(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 10, 3),
            Err(StatsError::ZeroDispersion)
        ));
    }

    #[test]
    fn permutation_p_uniform_under_null() {
        let mut ps = Vec::new();
        for rep in 0..100 {
            let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(42, rep));
            let x: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
            let (_, p) = correlation_permutation_test(&x, &y, 199, rep).unwrap();
            ps.push(p);
        }
        ps.sort_by(|a, b| a.total_cmp(b));
        let d = ks_statistic(&ps, |x| x.clamp(0.0, 1.0));
        assert!(d < 0.15, "permutation p-values not uniform: D = {d}");
    }

    #[test]
    fn paired_test_detects_better_predictor() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let truth: Vec<f64> = (0..80).map(|_| rng.random::<f64>() * 100.0).collect();
        let good: Vec<f64> = truth
            .iter()
            .map(|&t| t + 2.0 * rng.random::<f64>())
            .collect();
        let bad: Vec<f64> = truth
            .iter()
            .map(|&t| t + 60.0 * rng.random::<f64>())
            .collect();
        let (gap, p) = paired_correlation_test(&good, &bad, &truth, 999, 11).unwrap();
        assert!(gap > 0.0);
        assert!(p < 0.05, "p = {p}");
    }

    #[test]
    fn error_metric_examples() {
        let m = error_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(m.rms_abs, 0.0);
        assert_eq!(m.rms_rel, 0.0);

        let obs = [10.0, 20.0, 40.0];
        let pred: Vec<f64> = obs.iter().map(|o| 1.1 * o).collect();
        let m = error_metrics(&pred, &obs).unwrap();
        assert!((m.rms_rel - 0.1).abs() < 1e-12);
        assert!((m.pearson.unwrap() - 1.0).abs() < 1e-12);

        let m = error_metrics(&[889.0], &[780.0]).unwrap();
        assert!((m.rms_abs - 109.0).abs() < 1e-12);
        assert!((m.rms_rel - 109.0 / 780.0).abs() < 1e-12);
        assert_eq!(m.pearson, None); // single point has no variance

        assert!(matches!(
            error_metrics(&[1.0], &[0.0]),
            Err(StatsError::ZeroObserved { index: 0 })
        ));
    }

    proptest! {
        #[test]
        fn mle_scale_equivariant(
            seed in 0u64..500,
            scale in 0.01f64..100.0,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let dist = LogNormal::new(-1.0, 0.8).unwrap();
            let values: Vec<f64> = (0..40).map(|_| dist.sample(&mut rng)).collect();
            let base = lognormal_mle(&values).unwrap();
            let scaled_values: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let scaled = lognormal_mle(&scaled_values).unwrap();
            prop_assert!((scaled.mu_ln - base.mu_ln - scale.ln()).abs() < 1e-9);
            prop_assert!((scaled.sigma_ln - base.sigma_ln).abs() < 1e-9);
        }

        #[test]
        fn correlation_affine_invariant(
            seed in 0u64..200,
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let base = pearson(&x, &y).unwrap();
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let yt: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let transformed = pearson(&xt, &yt).unwrap();
            prop_assert!((base - transformed).abs() < 1e-9);
        }
    }

    #[test]
    fn ks_p_scale_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let dist = LogNormal::new(-1.0, 0.5).unwrap();
        let values: Vec<f64> = (0..60).map(|_| dist.sample(&mut rng)).collect();
        let (d1, p1) = ks_randomization_test(&values, 200, 9).unwrap();
        let scaled_values: Vec<f64> = values.iter().map(|v| v * 37.5).collect();
        let (d2, p2) = ks_randomization_test(&scaled_values, 200, 9).unwrap();
        assert!((d1 - d2).abs() < 1e-9);
        assert_eq!(p1, p2);
    }
}
