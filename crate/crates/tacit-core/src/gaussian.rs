//! 2D Gaussian and Gaussian-mixture position distributions.
//!
//! Prediction models emit these over agent positions, and the planner's
//! per-step plan distribution is a narrow Gaussian around each planned
//! state. Densities are evaluated over position only.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Covariance eigenvalue floor; anything thinner is rejected as singular.
pub const MIN_COV_EIGENVALUE: f64 = 1e-9;

const LN_2PI: f64 = 1.8378770664093453;

/// Smallest eigenvalue of a symmetric 2x2 matrix.
fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let diff = m[(0, 0)] - m[(1, 1)];
    let disc = (diff * diff + 4.0 * m[(0, 1)] * m[(1, 0)]).max(0.0).sqrt();
    0.5 * (tr - disc)
}

/// A single 2D Gaussian over position.
#[derive(Debug, Clone, Serialize)]
pub struct GaussianDist {
    #[serde(with = "serde_vec2")]
    mean: Vector2<f64>,
    #[serde(with = "serde_mat2")]
    cov: Matrix2<f64>,
    #[serde(skip)]
    cached: CovCache,
}

impl PartialEq for GaussianDist {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl<'de> Deserialize<'de> for GaussianDist {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(with = "serde_vec2")]
            mean: Vector2<f64>,
            #[serde(with = "serde_mat2")]
            cov: Matrix2<f64>,
        }
        let raw = Raw::deserialize(d)?;
        GaussianDist::new(raw.mean, raw.cov).map_err(serde::de::Error::custom)
    }
}

/// Precomputed inverse and log-determinant, filled on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CovCache {
    inv: Matrix2<f64>,
    ln_det: f64,
}

fn cov_cache(cov: &Matrix2<f64>) -> Result<CovCache> {
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) {
        return Err(Error::invalid_distribution(format!(
            "covariance has non-positive determinant {det}"
        )));
    }
    let inv = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    Ok(CovCache { inv, ln_det: det.ln() })
}

impl GaussianDist {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self> {
        if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_distribution("non-finite mean or covariance"));
        }
        if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 {
            return Err(Error::invalid_distribution(format!(
                "covariance not symmetric: {} vs {}",
                cov[(0, 1)],
                cov[(1, 0)]
            )));
        }
        if min_eigenvalue(&cov) < MIN_COV_EIGENVALUE {
            return Err(Error::invalid_distribution(format!(
                "covariance min eigenvalue {} below floor {MIN_COV_EIGENVALUE}",
                min_eigenvalue(&cov)
            )));
        }
        let cached = cov_cache(&cov)?;
        Ok(Self { mean, cov, cached })
    }

    pub fn isotropic(mean: Vector2<f64>, variance: f64) -> Result<Self> {
        Self::new(mean, Matrix2::from_diagonal_element(variance))
    }

    pub fn mean(&self) -> Vector2<f64> {
        self.mean
    }

    pub fn cov(&self) -> Matrix2<f64> {
        self.cov
    }

    pub fn cov_inv(&self) -> Matrix2<f64> {
        self.cached.inv
    }

    pub fn ln_det_cov(&self) -> f64 {
        self.cached.ln_det
    }

    /// log N(x; mean, cov).
    pub fn log_density(&self, x: Vector2<f64>) -> f64 {
        let c = &self.cached;
        let d = x - self.mean;
        let quad = d.dot(&(c.inv * d));
        -LN_2PI - 0.5 * c.ln_det - 0.5 * quad
    }

    /// Differential entropy of a 2D Gaussian: ln(2*pi*e) + 0.5 ln det(cov).
    pub fn entropy(&self) -> f64 {
        LN_2PI + 1.0 + 0.5 * self.cached.ln_det
    }

    /// Draw one sample via the Cholesky factor of the covariance.
    pub fn sample(&self, rng: &mut RngStream) -> Vector2<f64> {
        let l00 = self.cov[(0, 0)].sqrt();
        let l10 = self.cov[(1, 0)] / l00;
        let l11 = (self.cov[(1, 1)] - l10 * l10).max(0.0).sqrt();
        let z0 = rng.normal();
        let z1 = rng.normal();
        Vector2::new(
            self.mean.x + l00 * z0,
            self.mean.y + l10 * z0 + l11 * z1,
        )
    }

    /// Largest standard deviation along any axis, used for tail cutoffs.
    pub fn max_std(&self) -> f64 {
        let tr = self.cov[(0, 0)] + self.cov[(1, 1)];
        let diff = self.cov[(0, 0)] - self.cov[(1, 1)];
        let disc = (diff * diff + 4.0 * self.cov[(0, 1)] * self.cov[(1, 0)]).max(0.0).sqrt();
        (0.5 * (tr + disc)).sqrt()
    }
}

/// Weighted mixture of [`GaussianDist`] components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureDist {
    components: Vec<(f64, GaussianDist)>,
}

impl GaussianMixtureDist {
    pub fn new(components: Vec<(f64, GaussianDist)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid_distribution("mixture must have at least one component"));
        }
        if components.iter().any(|(w, _)| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid_distribution("mixture weights must be finite and nonnegative"));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_distribution(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { components })
    }

    pub fn single(component: GaussianDist) -> Self {
        Self { components: vec![(1.0, component)] }
    }

    pub fn components(&self) -> &[(f64, GaussianDist)] {
        &self.components
    }

    pub fn is_single(&self) -> bool {
        self.components.len() == 1
    }

    /// Overall mixture mean, sum of weighted component means.
    pub fn mean(&self) -> Vector2<f64> {
        self.components
            .iter()
            .fold(Vector2::zeros(), |acc, (w, c)| acc + *w * c.mean())
    }

    /// log sum_i w_i N(x; mu_i, cov_i), evaluated with log-sum-exp.
    pub fn log_density(&self, x: Vector2<f64>) -> f64 {
        let mut terms = [0.0f64; 8];
        let mut heap;
        let logs: &mut [f64] = if self.components.len() <= 8 {
            &mut terms[..self.components.len()]
        } else {
            heap = vec![0.0; self.components.len()];
            &mut heap
        };
        let mut max = f64::NEG_INFINITY;
        for (i, (w, c)) in self.components.iter().enumerate() {
            let lw = if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
            logs[i] = lw + c.log_density(x);
            if logs[i] > max {
                max = logs[i];
            }
        }
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        max + sum.ln()
    }

    /// Draw one sample: pick a component by weight, then sample it.
    pub fn sample(&self, rng: &mut RngStream) -> Vector2<f64> {
        let idx = self.sample_component(rng);
        self.components[idx].1.sample(rng)
    }

    /// Component index drawn by weight; consumes exactly one uniform.
    pub fn sample_component(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, (w, _)) in self.components.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }
}

/// Free-function forms of the two densities. The methods above are what the
/// rest of the crate calls; these exist for symmetry with the operation
/// names used in tests.
pub fn gaussian_log_density(x: Vector2<f64>, g: &GaussianDist) -> f64 {
    g.log_density(x)
}

pub fn mixture_log_density(x: Vector2<f64>, m: &GaussianMixtureDist) -> f64 {
    m.log_density(x)
}

pub(crate) mod serde_vec2 {
    use nalgebra::Vector2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector2<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector2<f64>, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Vector2::new(x, y))
    }
}

pub(crate) mod serde_mat2 {
    use nalgebra::Matrix2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix2<f64>, s: S) -> Result<S::Ok, S::Error> {
        [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix2<f64>, D::Error> {
        let rows = <[[f64; 2]; 2]>::deserialize(d)?;
        Ok(Matrix2::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamKey};
    use proptest::prelude::*;

    fn standard() -> GaussianDist {
        GaussianDist::isotropic(Vector2::zeros(), 1.0).unwrap()
    }

    #[test]
    fn log_density_at_mean_of_standard_normal() {
        let g = standard();
        assert!((g.log_density(Vector2::zeros()) + LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn log_density_one_std_from_mean() {
        let g = standard();
        let expected = -LN_2PI - 0.5;
        assert!((g.log_density(Vector2::new(1.0, 0.0)) - expected).abs() < 1e-12);
    }

    #[test]
    fn mode_is_at_mean() {
        let g = GaussianDist::new(
            Vector2::new(1.5, -2.0),
            Matrix2::new(2.0, 0.3, 0.3, 0.5),
        )
        .unwrap();
        let at_mean = g.log_density(g.mean());
        let mut s = RngStream::new(StreamKey::new(5, 0, 0, 0));
        for _ in 0..200 {
            let x = g.mean() + Vector2::new(s.normal() * 3.0, s.normal() * 3.0);
            assert!(g.log_density(x) <= at_mean + 1e-12);
        }
    }

    #[test]
    fn rejects_asymmetric_and_singular_covariances() {
        let asym = Matrix2::new(1.0, 0.5, -0.5, 1.0);
        assert!(GaussianDist::new(Vector2::zeros(), asym).is_err());
        let singular = Matrix2::new(1.0, 1.0, 1.0, 1.0);
        assert!(GaussianDist::new(Vector2::zeros(), singular).is_err());
        assert!(GaussianDist::isotropic(Vector2::zeros(), 1e-12).is_err());
    }

    #[test]
    fn density_integrates_to_one_over_six_sigma_box() {
        // Monte-Carlo integral of exp(log_density) over a 6-sigma box,
        // within 2% for a handful of random SPD covariances.
        let mut s = RngStream::new(StreamKey::new(99, 0, 0, 0));
        for trial in 0..5u64 {
            let a = 0.3 + 2.0 * s.uniform();
            let b = 0.3 + 2.0 * s.uniform();
            let c = (a * b).sqrt() * (s.uniform() - 0.5);
            let cov = Matrix2::new(a, c, c, b);
            let g = GaussianDist::new(Vector2::new(1.0, -2.0), cov).unwrap();
            let half = 6.0 * g.max_std();
            let lo = g.mean() - Vector2::new(half, half);
            let area = (2.0 * half) * (2.0 * half);
            let n = 200_000;
            let mut sum = 0.0;
            let mut mc = RngStream::new(StreamKey::new(100 + trial, 0, 0, 0));
            for _ in 0..n {
                let x = Vector2::new(
                    lo.x + 2.0 * half * mc.uniform(),
                    lo.y + 2.0 * half * mc.uniform(),
                );
                sum += g.log_density(x).exp();
            }
            let integral = area * sum / n as f64;
            assert!(
                (integral - 1.0).abs() < 0.02,
                "integral {integral} off by more than 2% (trial {trial})"
            );
        }
    }

    #[test]
    fn mixture_with_single_component_equals_gaussian() {
        let g = standard();
        let m = GaussianMixtureDist::single(g.clone());
        let x = Vector2::new(0.3, -0.7);
        assert!((m.log_density(x) - g.log_density(x)).abs() < 1e-12);
    }

    #[test]
    fn mixture_of_identical_components_collapses() {
        let g = standard();
        let m = GaussianMixtureDist::new(vec![(0.5, g.clone()), (0.5, g.clone())]).unwrap();
        let x = Vector2::new(1.1, 0.4);
        assert!((m.log_density(x) - g.log_density(x)).abs() < 1e-12);
    }

    #[test]
    fn two_mode_mixture_log_density_hand_value() {
        // log(0.7/(2pi) + 0.3/(2pi) * exp(-50)) at the origin; the second
        // term is ~1e-22 of the first, invisible at f64 precision.
        let near = standard();
        let far = GaussianDist::isotropic(Vector2::new(10.0, 0.0), 1.0).unwrap();
        let m = GaussianMixtureDist::new(vec![(0.7, near), (0.3, far)]).unwrap();
        let expected = 0.7f64.ln() - LN_2PI;
        assert!((m.log_density(Vector2::zeros()) - expected).abs() < 1e-12);
        assert!((expected + 2.1946).abs() < 1e-4);
    }

    #[test]
    fn empty_mixture_rejected() {
        assert!(GaussianMixtureDist::new(vec![]).is_err());
    }

    #[test]
    fn unnormalized_weights_rejected() {
        let g = standard();
        assert!(GaussianMixtureDist::new(vec![(0.6, g.clone()), (0.5, g)]).is_err());
    }

    proptest! {
        #[test]
        fn mixture_log_density_log_sum_exp_lower_bound(
            x in -20.0f64..20.0,
            y in -20.0f64..20.0,
            w in 0.05f64..0.95,
            m1 in -5.0f64..5.0,
            m2 in -5.0f64..5.0,
            v1 in 0.1f64..4.0,
            v2 in 0.1f64..4.0,
        ) {
            let c1 = GaussianDist::isotropic(Vector2::new(m1, 0.0), v1).unwrap();
            let c2 = GaussianDist::isotropic(Vector2::new(0.0, m2), v2).unwrap();
            let mix = GaussianMixtureDist::new(vec![(w, c1.clone()), (1.0 - w, c2.clone())]).unwrap();
            let pt = Vector2::new(x, y);
            let min_w = w.min(1.0 - w);
            let min_comp = c1.log_density(pt).min(c2.log_density(pt));
            prop_assert!(mix.log_density(pt) >= min_w.ln() + min_comp - 1e-9);
        }

        #[test]
        fn sampling_stays_deterministic(seed in 0u64..1000) {
            let g = GaussianDist::new(
                Vector2::new(0.5, 1.0),
                Matrix2::new(1.0, 0.4, 0.4, 2.0),
            ).unwrap();
            let mut a = RngStream::new(StreamKey::new(seed, 1, 2, 3));
            let mut b = RngStream::new(StreamKey::new(seed, 1, 2, 3));
            prop_assert_eq!(g.sample(&mut a), g.sample(&mut b));
        }
    }
}
