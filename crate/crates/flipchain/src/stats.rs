//! Small statistics toolbox: deterministic summation, moments, jackknife,
//! and least-squares line fits.
//!
//! All ensemble reductions in this crate go through [`pairwise_sum`] so that
//! results are bit-identical for a fixed input order, independent of how the
//! values were produced (serially or by a worker pool that writes into
//! pre-indexed slots).

/// Pairwise (cascade) summation. Error grows like `O(log n · ε)` instead of
/// `O(n · ε)` for naive left-to-right accumulation, and the bracketing is a
/// pure function of the slice length, so the result is reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (divisor n − 1).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn stderr_of_mean(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Delete-one jackknife estimate of (mean, stderr of the mean).
///
/// For plain means the jackknife reproduces the classical standard error; it
/// is used here so that nested designs (disorder draw → trajectory average)
/// get a between-draw uncertainty that does not lean on normality within
/// draws.
pub fn jackknife_mean(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n < 2 {
        return (mean(xs), f64::NAN);
    }
    let total = pairwise_sum(xs);
    let full_mean = total / n as f64;
    let mut dev_sq = Vec::with_capacity(n);
    for &x in xs {
        let loo = (total - x) / (n - 1) as f64;
        dev_sq.push((loo - full_mean) * (loo - full_mean));
    }
    let var = (n - 1) as f64 / n as f64 * pairwise_sum(&dev_sq);
    (full_mean, var.sqrt())
}

/// Ordinary least-squares fit y = intercept + slope·x.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    assert!(n >= 2, "need at least two points for a line fit");
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let mut ssr = 0.0;
        for i in 0..n {
            let r = y[i] - intercept - slope * x[i];
            ssr += r * r;
        }
        (ssr / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    LineFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// Pearson correlation coefficient.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn pairwise_is_order_of_evaluation_independent() {
        // Same slice, summed twice: bitwise identical.
        let xs: Vec<f64> = (0..997).map(|i| (i as f64).sin() * 1e-3).collect();
        assert_eq!(pairwise_sum(&xs).to_bits(), pairwise_sum(&xs).to_bits());
    }

    #[test]
    fn jackknife_matches_classical_stderr_for_means() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let (m, se) = jackknife_mean(&xs);
        assert!((m - 6.2).abs() < 1e-12);
        let classical = stderr_of_mean(&xs);
        assert!((se - classical).abs() < 1e-12);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = fit_line(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!(f.slope_stderr.abs() < 1e-10);
    }

    #[test]
    fn correlation_of_anticorrelated_is_minus_one() {
        let x = [1.0, 2.0, 3.0];
        let y = [3.0, 2.0, 1.0];
        assert!((correlation(&x, &y) + 1.0).abs() < 1e-12);
    }
}
