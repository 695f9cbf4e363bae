//! Second-order M-spline densities and their I-spline integrals on [0, 1].
//!
//! A basis of size `K` places knots at 0, 0, 1/(K-1), ..., (K-2)/(K-1),
//! 1, 1: equally spaced breakpoints with the boundary knots duplicated
//! once. Each M-spline is a piecewise-linear tent normalized to
//! integrate to one, so any convex combination is itself a density on
//! [0, 1]; the matching I-splines are the corresponding CDFs.

use crate::{Error, Result};

/// M-spline basis of a fixed size on the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    size: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Builds the basis with `size` functions. Needs `size >= 2`.
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::BasisTooSmall(size));
        }
        let h = 1.0 / (size - 1) as f64;
        let mut knots = Vec::with_capacity(size + 2);
        knots.push(0.0);
        for i in 1..=size {
            knots.push((i - 1) as f64 * h);
        }
        knots.push(1.0);
        Ok(Self { size, knots })
    }

    /// Number of basis functions.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Full knot vector, boundary knots duplicated once.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn check_point(&self, y: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::OutsideUnitInterval(y));
        }
        Ok(())
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.size {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.size,
            });
        }
        Ok(())
    }

    /// Density basis function `k` (0-based) at `y`.
    pub fn m(&self, k: usize, y: f64) -> Result<f64> {
        self.check_index(k)?;
        self.check_point(y)?;
        Ok(self.m_unchecked(k, y))
    }

    /// CDF basis function `k` (0-based) at `y`.
    pub fn i(&self, k: usize, y: f64) -> Result<f64> {
        self.check_index(k)?;
        self.check_point(y)?;
        Ok(self.i_unchecked(k, y))
    }

    pub(crate) fn m_unchecked(&self, k: usize, y: f64) -> f64 {
        let (a, b, c) = (self.knots[k], self.knots[k + 1], self.knots[k + 2]);
        let span = c - a;
        if y < a || y > c {
            0.0
        } else if y < b {
            2.0 * (y - a) / ((b - a) * span)
        } else if y < c {
            2.0 * (c - y) / ((c - b) * span)
        } else if c > b {
            0.0
        } else {
            // y == b == c: top of the final ramp.
            2.0 / span
        }
    }

    pub(crate) fn i_unchecked(&self, k: usize, y: f64) -> f64 {
        let (a, b, c) = (self.knots[k], self.knots[k + 1], self.knots[k + 2]);
        let span = c - a;
        if y <= a {
            0.0
        } else if y >= c {
            1.0
        } else if y < b {
            (y - a) * (y - a) / ((b - a) * span)
        } else {
            let w2 = c - b;
            (b - a) / span + (w2 * w2 - (c - y) * (c - y)) / (w2 * span)
        }
    }

    /// Writes all density basis values at `y` into `row`.
    pub fn m_row(&self, y: f64, row: &mut [f64]) -> Result<()> {
        self.check_point(y)?;
        if row.len() != self.size {
            return Err(Error::ShapeMismatch(format!(
                "basis row needs length {}, got {}",
                self.size,
                row.len()
            )));
        }
        for (k, r) in row.iter_mut().enumerate() {
            *r = self.m_unchecked(k, y);
        }
        Ok(())
    }

    /// Writes all CDF basis values at `y` into `row`.
    pub fn i_row(&self, y: f64, row: &mut [f64]) -> Result<()> {
        self.check_point(y)?;
        if row.len() != self.size {
            return Err(Error::ShapeMismatch(format!(
                "basis row needs length {}, got {}",
                self.size,
                row.len()
            )));
        }
        for (k, r) in row.iter_mut().enumerate() {
            *r = self.i_unchecked(k, y);
        }
        Ok(())
    }

    /// Mixture density at `y` under weights `theta`.
    pub fn pdf(&self, theta: &MixtureWeights, y: f64) -> Result<f64> {
        self.check_point(y)?;
        self.check_theta(theta)?;
        Ok(self.pdf_unchecked(theta.as_slice(), y))
    }

    /// Mixture CDF at `y` under weights `theta`.
    pub fn cdf(&self, theta: &MixtureWeights, y: f64) -> Result<f64> {
        self.check_point(y)?;
        self.check_theta(theta)?;
        Ok(self.cdf_unchecked(theta.as_slice(), y))
    }

    pub(crate) fn pdf_unchecked(&self, theta: &[f64], y: f64) -> f64 {
        theta
            .iter()
            .enumerate()
            .map(|(k, t)| t * self.m_unchecked(k, y))
            .sum()
    }

    pub(crate) fn cdf_unchecked(&self, theta: &[f64], y: f64) -> f64 {
        theta
            .iter()
            .enumerate()
            .map(|(k, t)| t * self.i_unchecked(k, y))
            .sum()
    }

    fn check_theta(&self, theta: &MixtureWeights) -> Result<()> {
        if theta.len() != self.size {
            return Err(Error::ShapeMismatch(format!(
                "mixture has {} weights but basis has {} functions",
                theta.len(),
                self.size
            )));
        }
        Ok(())
    }
}

/// A probability vector of mixture weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    /// Validates that `theta` is a probability vector: finite,
    /// nonnegative, summing to one within 1e-8.
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidWeights("non-finite weight".into()));
        }
        if let Some(t) = theta.iter().find(|t| **t < 0.0) {
            return Err(Error::InvalidWeights(format!("negative weight {t}")));
        }
        let sum: f64 = theta.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self(theta))
    }

    /// Uniform weights of the given length.
    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        Ok(Self(vec![1.0 / len as f64; len]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::integrate;

    #[test]
    fn knot_layout_duplicates_boundaries_once() {
        let b = SplineBasis::new(2).unwrap();
        assert_eq!(b.knots(), &[0.0, 0.0, 1.0, 1.0]);
        let b = SplineBasis::new(5).unwrap();
        assert_eq!(b.knots(), &[0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0]);
    }

    #[test]
    fn rejects_basis_smaller_than_two() {
        assert!(matches!(SplineBasis::new(0), Err(Error::BasisTooSmall(0))));
        assert!(matches!(SplineBasis::new(1), Err(Error::BasisTooSmall(1))));
    }

    #[test]
    fn two_function_basis_closed_forms() {
        // With K = 2 the basis is M_0(y) = 2(1-y), M_1(y) = 2y with
        // integrals I_0(y) = 2y - y^2, I_1(y) = y^2.
        let b = SplineBasis::new(2).unwrap();
        for i in 0..=100 {
            let y = i as f64 / 100.0;
            assert!((b.m(0, y).unwrap() - 2.0 * (1.0 - y)).abs() < 1e-12);
            assert!((b.m(1, y).unwrap() - 2.0 * y).abs() < 1e-12);
            assert!((b.i(0, y).unwrap() - (2.0 * y - y * y)).abs() < 1e-12);
            assert!((b.i(1, y).unwrap() - y * y).abs() < 1e-12);
        }
        assert_eq!(b.m(0, 0.5).unwrap(), 1.0);
        assert_eq!(b.i(0, 0.5).unwrap(), 0.75);
        assert_eq!(b.i(1, 0.5).unwrap(), 0.25);
    }

    #[test]
    fn each_density_integrates_to_one() {
        for size in [2usize, 3, 8, 10, 12] {
            let b = SplineBasis::new(size).unwrap();
            for k in 0..size {
                let total = integrate(&|y| b.m_unchecked(k, y), 0.0, 1.0, 1e-11);
                assert!(
                    (total - 1.0).abs() < 1e-8,
                    "size {size} basis {k} integrates to {total}"
                );
            }
        }
    }

    #[test]
    fn integral_matches_quadrature_of_density() {
        let b = SplineBasis::new(8).unwrap();
        for k in 0..8 {
            for y in [0.05, 0.21, 0.43, 0.5, 0.77, 0.99] {
                let num = integrate(&|u| b.m_unchecked(k, u), 0.0, y, 1e-11);
                assert!(
                    (b.i(k, y).unwrap() - num).abs() < 1e-8,
                    "basis {k} at {y}"
                );
            }
        }
    }

    #[test]
    fn integral_boundary_values_exact() {
        for size in [2usize, 8, 12] {
            let b = SplineBasis::new(size).unwrap();
            for k in 0..size {
                assert_eq!(b.i(k, 0.0).unwrap(), 0.0);
                assert_eq!(b.i(k, 1.0).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn integral_is_nondecreasing() {
        let b = SplineBasis::new(10).unwrap();
        let mut state = 0x2545f491_4f6cdd1du64;
        let mut next = || {
            // xorshift is plenty for test point generation
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10_000 {
            let (mut lo, mut hi) = (next(), next());
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            let k = (next() * 10.0) as usize % 10;
            assert!(b.i(k, hi).unwrap() >= b.i(k, lo).unwrap() - 1e-12);
        }
    }

    #[test]
    fn uniform_mixture_is_uniform_density() {
        let b = SplineBasis::new(2).unwrap();
        let theta = MixtureWeights::new(vec![0.5, 0.5]).unwrap();
        for i in 0..=50 {
            let y = i as f64 / 50.0;
            assert!((b.pdf(&theta, y).unwrap() - 1.0).abs() < 1e-12);
            assert!((b.cdf(&theta, y).unwrap() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_slope_matches_pdf_between_knots() {
        let b = SplineBasis::new(8).unwrap();
        let theta =
            MixtureWeights::new(vec![0.05, 0.1, 0.2, 0.25, 0.15, 0.1, 0.1, 0.05]).unwrap();
        let h = 1e-6;
        for i in 1..140 {
            let y = i as f64 / 141.0;
            let near_knot = b
                .knots()
                .iter()
                .any(|t| (y - t).abs() < 10.0 * h);
            if near_knot {
                continue;
            }
            let slope =
                (b.cdf(&theta, y + h).unwrap() - b.cdf(&theta, y - h).unwrap()) / (2.0 * h);
            assert!(
                (slope - b.pdf(&theta, y).unwrap()).abs() < 1e-5,
                "slope mismatch at {y}"
            );
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let b = SplineBasis::new(4).unwrap();
        assert!(matches!(
            b.m(4, 0.5),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
        assert!(matches!(b.m(0, -0.1), Err(Error::OutsideUnitInterval(_))));
        assert!(matches!(b.i(0, 1.5), Err(Error::OutsideUnitInterval(_))));
        assert!(b.m(0, f64::NAN).is_err());

        assert!(MixtureWeights::new(vec![]).is_err());
        assert!(MixtureWeights::new(vec![0.5, 0.6]).is_err());
        assert!(MixtureWeights::new(vec![1.2, -0.2]).is_err());
        assert!(MixtureWeights::new(vec![f64::NAN, 1.0]).is_err());

        let theta = MixtureWeights::uniform(3).unwrap();
        assert!(matches!(b.pdf(&theta, 0.5), Err(Error::ShapeMismatch(_))));
    }
}
