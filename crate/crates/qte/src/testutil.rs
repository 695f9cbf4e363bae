//! Shared helpers for in-crate unit tests.

/// Adaptive Simpson quadrature with absolute tolerance `tol`. Starts
/// from a uniform 64-panel split so narrow features that vanish at the
/// initial sample points are not missed.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let panels = 64;
    let mut total = 0.0;
    for i in 0..panels {
        let lo = a + (b - a) * i as f64 / panels as f64;
        let hi = a + (b - a) * (i + 1) as f64 / panels as f64;
        total += integrate_panel(f, lo, hi, tol / panels as f64);
    }
    total
}

fn integrate_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb) = (f(a), f(b));
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 40)
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut pt = x.to_vec();
    for i in 0..x.len() {
        pt[i] = x[i] + h;
        let up = f(&pt);
        pt[i] = x[i] - h;
        let down = f(&pt);
        pt[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Kolmogorov-Smirnov statistic of `xs` against a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let c = cdf(*x);
        d = d.max((c - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - c).abs());
    }
    d
}

/// Asymptotic Kolmogorov-Smirnov p-value with the small-sample
/// correction lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) * d.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_is_exact_for_cubics() {
        let v = integrate(&|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-12);
        assert!((v - (4.0 - 4.0 + 2.0)).abs() < 1e-10);
    }

    #[test]
    fn quadrature_handles_kinks() {
        let v = integrate(&|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1e-12);
        assert!((v - (0.09 + 0.49) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn ks_p_is_large_for_exact_quantiles() {
        // Deterministic uniform quantiles against the uniform CDF.
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic(&xs, |x| x);
        assert!(d < 0.001);
        assert!(ks_pvalue(d, 1000) > 0.99);
    }
}
