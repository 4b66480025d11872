use statrs::distribution::{ContinuousCDF, StudentsT};

/// z-value of a two-sided 99% Normal interval.
pub const Z99: f64 = 2.576;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
    /// Half-width of the 99% Normal confidence interval, `2.576·sd/√n`.
    pub ci99: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = if n == 0 { f64::NAN } else { xs.iter().sum::<f64>() / n as f64 };
        let sd = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        let ci99 = if n == 0 { f64::NAN } else { Z99 * sd / (n as f64).sqrt() };
        Self { n, mean, sd, ci99 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Welch's unequal-variance two-sample t-test of `mean(a) − mean(b)`.
///
/// Panics unless both samples have at least two values.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> WelchTest {
    assert!(a.len() >= 2 && b.len() >= 2, "welch test needs two values per sample");
    let (sa, sb) = (Summary::of(a), Summary::of(b));
    let (va, vb) = (sa.sd.powi(2) / a.len() as f64, sb.sd.powi(2) / b.len() as f64);
    let diff = sa.mean - sb.mean;
    let se2 = va + vb;
    if se2 == 0.0 {
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        return WelchTest { t, df: (a.len() + b.len() - 2) as f64, p };
    }
    let t = diff / se2.sqrt();
    let df = se2.powi(2) / (va.powi(2) / (a.len() - 1) as f64 + vb.powi(2) / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    WelchTest { t, df, p }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_recomputes_ci() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        let s = Summary::of(&xs);
        assert_eq!(s.mean, 5.0);
        let sd = (32.0f64 / 7.0).sqrt();
        assert!((s.sd - sd).abs() < 1e-12);
        assert!((s.ci99 - 2.576 * sd / 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn welch_reference_values() {
        // Reference computed with scipy.stats.ttest_ind(a, b, equal_var=False).
        let a = [19.8, 20.4, 19.6, 17.8, 18.5, 18.9, 18.3, 18.9, 19.5, 22.0];
        let b = [28.2, 26.6, 20.1, 23.3, 25.2, 22.1, 17.7, 27.6, 20.6, 13.7, 23.2, 17.5, 20.6, 18.0, 23.9, 21.6, 24.3, 20.4, 24.0, 13.2];
        let w = welch_t_test(&a, &b);
        assert!((w.t - (-2.219240915823623)).abs() < 1e-9, "{w:?}");
        assert!((w.df - 24.496223124201244).abs() < 1e-9, "{w:?}");
        assert!((w.p - 0.03597227102979685).abs() < 1e-9, "{w:?}");
    }

    #[test]
    fn swapping_samples_negates_t() {
        let a = [1.0, 2.0, 3.5, 0.2];
        let b = [2.0, 2.5, 4.0, 3.1, 2.2];
        let (x, y) = (welch_t_test(&a, &b), welch_t_test(&b, &a));
        assert_eq!(x.t, -y.t);
        assert_eq!(x.p, y.p);
        assert_eq!(welch_t_test(&[1.0, 1.0], &[1.0, 1.0]).p, 1.0);
    }
}
