//! One-sided Welch t-test for "method beats baseline" over per-seed scores.

use ldguid_core::metrics::mean_std;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// p-value for H₁: mean(`method`) > mean(`baseline`), unequal variances.
///
/// When both samples have zero variance the statistic is undefined; the
/// p-value is then 0.5 for equal means and 0 or 1 according to the sign of
/// the difference.
pub fn welch_one_sided(method: &[f64], baseline: &[f64]) -> Result<f64> {
    let got = method.len().min(baseline.len());
    if got < 2 {
        return Err(Error::TooFewSamples { needed: 2, got });
    }
    if method.iter().chain(baseline).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite score in significance test".into()));
    }
    let (ma, sa) = mean_std(method);
    let (mb, sb) = mean_std(baseline);
    let (na, nb) = (method.len() as f64, baseline.len() as f64);
    let (qa, qb) = (sa * sa / na, sb * sb / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            0.5
        } else if ma > mb {
            0.0
        } else {
            1.0
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(dist.sf(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_scipy_reference() {
        // scipy.stats.ttest_ind(a, b, equal_var=False, alternative="greater")
        let a = [0.81, 0.84, 0.79];
        let b = [0.70, 0.75, 0.72];
        let p = welch_one_sided(&a, &b).unwrap();
        assert!((p - 0.0059376).abs() < 1e-5, "{p}");
    }

    #[test]
    fn clear_separation_either_way() {
        let (a, b) = ([0.90, 0.91, 0.92], [0.50, 0.51, 0.52]);
        // t = 0.4 / sqrt(2 · 1e-4 / 3) ≈ 48.99 on 4 df; scipy: 5.1939e-7
        let p = welch_one_sided(&a, &b).unwrap();
        assert!(p < 0.001 && (p - 5.193897e-7).abs() < 1e-11, "{p}");
        assert!(welch_one_sided(&b, &a).unwrap() > 0.99);
    }

    #[test]
    fn degenerate_variances() {
        assert_eq!(welch_one_sided(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(welch_one_sided(&[2.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(welch_one_sided(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(welch_one_sided(&[1.0], &[1.0, 2.0]), Err(Error::TooFewSamples { needed: 2, got: 1 })));
    }

    proptest! {
        #[test]
        fn complementary(a in prop::collection::vec(0.0f64..1.0, 2..6), b in prop::collection::vec(0.0f64..1.0, 2..6)) {
            let p = welch_one_sided(&a, &b).unwrap();
            let q = welch_one_sided(&b, &a).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((p + q - 1.0).abs() < 1e-9);
            prop_assert!((welch_one_sided(&a, &a).unwrap() - 0.5).abs() < 1e-12);
        }
    }
}
