use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::MetricError;

/// Simple regression of `y` on `x` with an intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OlsResult {
    pub slope: f64,
    pub intercept: f64,
    pub se: f64,
    pub t: f64,
    /// Two-sided tail probability of Student's t with `n - 2` degrees of
    /// freedom.
    pub p: f64,
    pub n: usize,
    pub rss: f64,
}

/// Least-squares slope with its classical standard error.
///
/// With a perfect fit (`rss = 0`) the standard error is 0; `t` is then
/// infinite (p = 0) for a non-zero slope and 0 (p = 1) for a zero slope.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<OlsResult, MetricError> {
    let n = x.len();
    if n != y.len() {
        return Err(MetricError::Empty(format!("x has {n} values, y has {}", y.len())));
    }
    if n < 3 {
        return Err(MetricError::TooFew { needed: 3, got: n });
    }
    let nf = n as f64;
    let x_bar = x.iter().sum::<f64>() / nf;
    let y_bar = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - x_bar;
        sxx += dx * dx;
        sxy += dx * (yi - y_bar);
    }
    if sxx <= 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let r = yi - intercept - slope * xi;
            r * r
        })
        .sum();
    let df = nf - 2.0;
    let se = (rss / df / sxx).sqrt();
    let (t, p) = if se > 0.0 {
        let t = slope / se;
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    } else if slope == 0.0 {
        (0.0, 1.0)
    } else {
        (f64::INFINITY.copysign(slope), 0.0)
    };
    Ok(OlsResult {
        slope,
        intercept,
        se,
        t,
        p,
        n,
        rss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_point_hand_fit() {
        // x̄ = 2, ȳ = 1/3, Sxy = (-1)(-1/3) + 0 + (1)(2/3) = 1, Sxx = 2
        let r = ols_slope(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0]).unwrap();
        assert!((r.slope - 0.5).abs() < 1e-15);
        // residuals (1/6, -1/3, 1/6): rss = 1/6, se = sqrt(1/6 / 1 / 2)
        assert!((r.rss - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.se - (1.0f64 / 12.0).sqrt()).abs() < 1e-15);
        // t = sqrt(3) with 1 df: p = 1 - 2 atan(sqrt 3)/pi = 1/3
        assert!((r.p - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn constant_y_has_zero_slope() {
        let r = ols_slope(&[1.0, 2.0, 5.0, 9.0], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.slope, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn perfect_fit() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = ols_slope(&x, &x).unwrap();
        assert!((r.slope - 1.0).abs() < 1e-15);
        assert!(r.rss < 1e-25);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(ols_slope(&[2.0; 5], &[0.0, 1.0, 0.0, 1.0, 1.0]).unwrap_err(), MetricError::ZeroVariance);
        assert!(matches!(ols_slope(&[1.0, 2.0], &[0.0, 1.0]), Err(MetricError::TooFew { .. })));
    }

    #[test]
    fn large_sample_p_matches_normal_tail() {
        // t distribution with many df approaches the normal: p(|t| > 1.96) ≈ 0.05
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64).collect();
        let r = ols_slope(&x, &y).unwrap();
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        assert!((r.p - 2.0 * normal.sf(r.t.abs())).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn shift_and_scale(
            pts in prop::collection::vec((-50i32..50, 0u8..2), 3..60),
            shift in -100i32..100,
            scale in prop::sample::select(vec![0.5f64, 2.0, 10.0, 0.1]),
        ) {
            let x: Vec<f64> = pts.iter().map(|(a, _)| *a as f64).collect();
            let y: Vec<f64> = pts.iter().map(|(_, b)| *b as f64).collect();
            prop_assume!(x.iter().any(|v| *v != x[0]));
            let base = ols_slope(&x, &y).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + shift as f64).collect();
            prop_assert!((ols_slope(&shifted, &y).unwrap().slope - base.slope).abs() < 1e-12);
            let scaled: Vec<f64> = x.iter().map(|v| v * scale).collect();
            let s = ols_slope(&scaled, &y).unwrap().slope;
            prop_assert!((s - base.slope / scale).abs() < 1e-12 * (1.0 + base.slope.abs() / scale));
        }
    }
}
