//! Gaussian kernel density estimation with Silverman or fixed bandwidth.

use crate::error::{Error, Result};
use crate::model::ParticleEnsemble;

/// Bandwidth selection rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BandwidthRule {
    /// h = sigma_hat * (4 / ((d + 2) B))^(1 / (d + 4)) with sigma_hat the mean
    /// per-coordinate sample standard deviation.
    Silverman,
    Fixed { h: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KdeKernel {
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdeConfig {
    pub bandwidth_rule: BandwidthRule,
    pub kernel: KdeKernel,
}

impl KdeConfig {
    pub fn silverman() -> Self {
        Self { bandwidth_rule: BandwidthRule::Silverman, kernel: KdeKernel::Gaussian }
    }

    pub fn fixed(h: f64) -> Self {
        Self { bandwidth_rule: BandwidthRule::Fixed { h }, kernel: KdeKernel::Gaussian }
    }
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self::silverman()
    }
}

/// Fitted Gaussian-mixture density over one ensemble.
pub struct Kde<'a> {
    points: &'a ParticleEnsemble,
    h: f64,
    norm: f64,
}

impl<'a> Kde<'a> {
    pub fn fit(points: &'a ParticleEnsemble, cfg: &KdeConfig) -> Result<Self> {
        let d = points.dim();
        let b = points.count();
        let h = match cfg.bandwidth_rule {
            BandwidthRule::Fixed { h } => {
                if !(h > 0.0) {
                    return Err(Error::KdeBandwidth(h));
                }
                h
            }
            BandwidthRule::Silverman => {
                let sigma: f64 = if b < 2 {
                    0.0
                } else {
                    points.variance().iter().map(|v| v.sqrt()).sum::<f64>() / d as f64
                };
                let h = sigma * (4.0 / ((d as f64 + 2.0) * b as f64)).powf(1.0 / (d as f64 + 4.0));
                if !(h > 0.0) {
                    return Err(Error::KdeDegenerate);
                }
                h
            }
        };
        let norm = (2.0 * std::f64::consts::PI * h * h).powf(-(d as f64) / 2.0);
        Ok(Self { points, h, norm })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// (1/B) sum_b (2 pi h^2)^(-d/2) exp(-||q - X_b||^2 / (2 h^2)).
    pub fn density(&self, query: &[f64]) -> f64 {
        debug_assert_eq!(query.len(), self.points.dim());
        let inv2h2 = 1.0 / (2.0 * self.h * self.h);
        let mut acc = 0.0;
        for b in 0..self.points.count() {
            let row = self.points.row(b);
            let row = row.as_slice().unwrap();
            let sq: f64 = row.iter().zip(query).map(|(p, q)| (q - p) * (q - p)).sum();
            acc += (-sq * inv2h2).exp();
        }
        self.norm * acc / self.points.count() as f64
    }

    /// Density and its gradient in the query point.
    pub fn density_and_grad(&self, query: &[f64]) -> (f64, Vec<f64>) {
        let d = self.points.dim();
        let inv_h2 = 1.0 / (self.h * self.h);
        let inv2h2 = 0.5 * inv_h2;
        let mut acc = 0.0;
        let mut grad = vec![0.0; d];
        for b in 0..self.points.count() {
            let row = self.points.row(b);
            let row = row.as_slice().unwrap();
            let sq: f64 = row.iter().zip(query).map(|(p, q)| (q - p) * (q - p)).sum();
            let w = (-sq * inv2h2).exp();
            acc += w;
            for c in 0..d {
                grad[c] += w * (row[c] - query[c]) * inv_h2;
            }
        }
        let scale = self.norm / self.points.count() as f64;
        for g in grad.iter_mut() {
            *g *= scale;
        }
        (scale * acc, grad)
    }

    /// Score estimate grad log rho_hat(query).
    pub fn log_density_grad(&self, query: &[f64]) -> Vec<f64> {
        let (rho, mut grad) = self.density_and_grad(query);
        let rho = rho.max(1e-300);
        for g in grad.iter_mut() {
            *g /= rho;
        }
        grad
    }
}

/// One-shot density evaluation.
pub fn kde_density(points: &ParticleEnsemble, cfg: &KdeConfig, query: &[f64]) -> Result<f64> {
    if query.len() != points.dim() {
        return Err(Error::Shape(format!(
            "query has length {}, ensemble dimension is {}",
            query.len(),
            points.dim()
        )));
    }
    Ok(Kde::fit(points, cfg)?.density(query))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_gaussian_kernel_peak() {
        // B=1 at origin, fixed h=1, d=2: peak value 1/(2 pi).
        let e = ParticleEnsemble::point(&[0.0, 0.0]).unwrap();
        let v = kde_density(&e, &KdeConfig::fixed(1.0), &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v, 1.0 / (2.0 * std::f64::consts::PI), epsilon = 1e-12);
    }

    #[test]
    fn far_query_is_negligible() {
        let e = ParticleEnsemble::point(&[0.0]).unwrap();
        let v = kde_density(&e, &KdeConfig::fixed(0.5), &[50.0]).unwrap();
        assert!(v < 1e-12);
    }

    #[test]
    fn silverman_matches_standard_normal_density_at_zero() {
        // Oracle: true N(0,1) density at 0 is 1/sqrt(2 pi) = 0.39894.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> =
            (0..5000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let e = ParticleEnsemble::from_rows(&rows).unwrap();
        let v = kde_density(&e, &KdeConfig::silverman(), &[0.0]).unwrap();
        let truth = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((v - truth).abs() / truth < 0.10, "kde {v} vs {truth}");
    }

    #[test]
    fn degenerate_ensemble_needs_fixed_bandwidth() {
        let e = ParticleEnsemble::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            kde_density(&e, &KdeConfig::silverman(), &[1.0]),
            Err(Error::KdeDegenerate)
        ));
        assert!(matches!(
            kde_density(&e, &KdeConfig::fixed(0.0), &[1.0]),
            Err(Error::KdeBandwidth(_))
        ));
    }

    #[test]
    fn integrates_to_one_on_a_grid() {
        // Trapezoid quadrature over +/- 6 bandwidths around the support.
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64) * 0.05 - 1.0]).collect();
        let e = ParticleEnsemble::from_rows(&rows).unwrap();
        let cfg = KdeConfig::silverman();
        let kde = Kde::fit(&e, &cfg).unwrap();
        let h = kde.bandwidth();
        let (lo, hi) = (-1.0 - 6.0 * h, 1.0 + 6.0 * h);
        let n = 4000;
        let dx = (hi - lo) / n as f64;
        let mut mass = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * dx;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            mass += w * kde.density(&[x]) * dx;
        }
        assert_abs_diff_eq!(mass, 1.0, epsilon = 0.01);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rows: Vec<Vec<f64>> =
            vec![vec![0.0, 0.3], vec![1.0, -0.2], vec![-0.4, 0.8], vec![0.2, 0.1]];
        let e = ParticleEnsemble::from_rows(&rows).unwrap();
        let cfg = KdeConfig::fixed(0.7);
        let kde = Kde::fit(&e, &cfg).unwrap();
        let q = [0.15, 0.25];
        let (_, grad) = kde.density_and_grad(&q);
        let h = 1e-6;
        for c in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[c] += h;
            qm[c] -= h;
            let fd = (kde.density(&qp) - kde.density(&qm)) / (2.0 * h);
            assert_abs_diff_eq!(grad[c], fd, epsilon = 1e-7);
        }
    }
}
