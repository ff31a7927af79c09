use serde::{Deserialize, Serialize};

use super::{floored, LogDensity};
use crate::domain::Point2;
use crate::error::{Error, Result};
use crate::gauss;

/// Isotropic Gaussian KDE. Each kernel is divided by its own mass on the
/// unit square, so the estimate integrates to one over the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeDensity {
    pub bandwidth: f64,
    points: Vec<Point2>,
    log_kernel_mass: Vec<f64>,
}

/// Scott's rule in two dimensions, `σ̂ · n^(−1/6)`, with `σ̂` the pooled
/// per-axis standard deviation.
pub fn scott_bandwidth(points: &[Point2]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("points", "need at least two points for a bandwidth"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x()).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y()).sum::<f64>() / n;
    let var = points.iter().map(|p| (p.x() - mx).powi(2) + (p.y() - my).powi(2)).sum::<f64>() / (2.0 * (n - 1.0));
    let h = var.sqrt() * n.powf(-1.0 / 6.0);
    Ok(h.max(1e-4))
}

pub fn fit_kde(points: &[Point2], bandwidth: f64) -> Result<KdeDensity> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid("bandwidth", "must be positive and finite"));
    }
    let log_kernel_mass = points
        .iter()
        .map(|p| gauss::unit_square_mass(*p, bandwidth).ln())
        .collect();
    Ok(KdeDensity {
        bandwidth,
        points: points.to_vec(),
        log_kernel_mass,
    })
}

impl LogDensity for KdeDensity {
    fn log_density(&self, p: Point2) -> f64 {
        let var = self.bandwidth * self.bandwidth;
        let terms: Vec<f64> = self
            .points
            .iter()
            .zip(&self.log_kernel_mass)
            .map(|(c, lm)| gauss::log_pdf_2d(p, *c, var) - lm)
            .collect();
        floored(gauss::log_sum_exp(&terms) - (self.points.len() as f64).ln())
    }
}
