//! Training-set density estimators used to build rebalancing weights.
//!
//! Three classical estimators share the [`LogDensity`] interface: a smoothed
//! histogram on a [`BinGrid`](crate::BinGrid), a Gaussian KDE with per-kernel
//! truncation to the unit square, and an isotropic GMM fitted by EM and
//! renormalised over the square. Log-densities are floored at
//! `ln(DENSITY_FLOOR)` so inverse-density weights stay finite.

mod gmm;
mod histogram;
mod kde;

use serde::{Deserialize, Serialize};

use crate::domain::Point2;

pub use gmm::{fit_gmm, GmmConfig, GmmDensity, GmmTrace};
pub use histogram::{fit_histogram, HistogramDensity};
pub use kde::{fit_kde, scott_bandwidth, KdeDensity};

pub const DENSITY_FLOOR: f64 = 1e-12;

pub trait LogDensity {
    /// Natural log of the density at `p`, never below `ln(DENSITY_FLOOR)`.
    fn log_density(&self, p: Point2) -> f64;

    fn density(&self, p: Point2) -> f64 {
        self.log_density(p).exp()
    }
}

#[inline]
pub(crate) fn floored(log_d: f64) -> f64 {
    let floor = DENSITY_FLOOR.ln();
    if log_d.is_nan() || log_d < floor {
        floor
    } else {
        log_d
    }
}

/// A fitted estimator of any kind, serialisable for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DensityModel {
    Histogram(HistogramDensity),
    Kde(KdeDensity),
    Gmm(GmmDensity),
}

impl LogDensity for DensityModel {
    fn log_density(&self, p: Point2) -> f64 {
        match self {
            DensityModel::Histogram(m) => m.log_density(p),
            DensityModel::Kde(m) => m.log_density(p),
            DensityModel::Gmm(m) => m.log_density(p),
        }
    }
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn log_density(&self, p: Point2) -> f64 {
        (**self).log_density(p)
    }
}

/// Free-function form of [`LogDensity::log_density`].
pub fn log_density(model: &impl LogDensity, p: Point2) -> f64 {
    model.log_density(p)
}

/// Which estimator to fit, with its hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DensityChoice {
    Histogram { cells_per_axis: usize, pseudocount: f64 },
    /// `bandwidth: None` selects Scott's rule.
    Kde { bandwidth: Option<f64> },
    Gmm(GmmConfig),
}

impl Default for DensityChoice {
    fn default() -> Self {
        DensityChoice::Gmm(GmmConfig::default())
    }
}

impl DensityChoice {
    pub fn fit(&self, points: &[Point2], seed: u64) -> crate::Result<DensityModel> {
        Ok(match self {
            DensityChoice::Histogram {
                cells_per_axis,
                pseudocount,
            } => DensityModel::Histogram(fit_histogram(points, crate::BinGrid::new(*cells_per_axis)?, *pseudocount)?),
            DensityChoice::Kde { bandwidth } => {
                let h = match bandwidth {
                    Some(h) => *h,
                    None => scott_bandwidth(points)?,
                };
                DensityModel::Kde(fit_kde(points, h)?)
            }
            DensityChoice::Gmm(cfg) => DensityModel::Gmm(fit_gmm(points, &GmmConfig { seed, ..cfg.clone() })?.0),
        })
    }
}

#[cfg(test)]
pub(crate) mod quadrature {
    use super::LogDensity;
    use crate::domain::Point2;

    /// Midpoint rule on an `res × res` grid over the square.
    pub fn integrate(model: &impl LogDensity, res: usize) -> f64 {
        let h = 1.0 / res as f64;
        let mut acc = 0.0;
        for j in 0..res {
            for i in 0..res {
                acc += model.density(Point2::clamped((i as f64 + 0.5) * h, (j as f64 + 0.5) * h));
            }
        }
        acc * h * h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{true_density_truncated_gaussian, truncated_gaussian_points, REJECTION_BUDGET};
    use crate::BinGrid;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn estimators_track_the_analytic_truncated_gaussian() {
        let sigma = 0.2;
        let pts = truncated_gaussian_points(10_000, sigma, 21, REJECTION_BUDGET).unwrap();
        let truth: Vec<f64> = pts.iter().map(|p| true_density_truncated_gaussian(*p, sigma).ln()).collect();
        let models = [
            DensityModel::Histogram(fit_histogram(&pts, BinGrid::new(10).unwrap(), 1.0).unwrap()),
            DensityModel::Kde(fit_kde(&pts[..2000], scott_bandwidth(&pts[..2000]).unwrap()).unwrap()),
            DensityModel::Gmm(fit_gmm(&pts, &GmmConfig::default()).unwrap().0),
        ];
        for m in &models {
            let est: Vec<f64> = pts.iter().map(|p| m.log_density(*p)).collect();
            let rho = pearson(&est, &truth);
            assert!(rho > 0.9, "{m:?}: {rho}");
        }
    }

    #[test]
    fn corners_are_finite_for_every_kind() {
        let pts = truncated_gaussian_points(500, 0.05, 2, REJECTION_BUDGET).unwrap();
        for choice in [
            DensityChoice::Histogram { cells_per_axis: 20, pseudocount: 0.0 },
            DensityChoice::Kde { bandwidth: Some(0.01) },
            DensityChoice::Gmm(GmmConfig::default()),
        ] {
            let m = choice.fit(&pts, 1).unwrap();
            for c in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                let v = m.log_density(Point2::new(c.0, c.1).unwrap());
                assert!(v.is_finite() && v >= DENSITY_FLOOR.ln(), "{choice:?} {v}");
            }
        }
    }

    #[test]
    fn model_json_round_trip() {
        let pts = truncated_gaussian_points(300, 0.3, 2, REJECTION_BUDGET).unwrap();
        let m = DensityChoice::default().fit(&pts, 4).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: DensityModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(s.contains("\"kind\":\"gmm\""));
    }
}
