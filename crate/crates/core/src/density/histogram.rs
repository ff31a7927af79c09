use serde::{Deserialize, Serialize};

use super::{floored, LogDensity};
use crate::domain::{BinGrid, Point2};
use crate::error::{Error, Result};

/// Piecewise-constant density: `(c_b + a) / ((m + K·a) · cell_area)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramDensity {
    pub grid: BinGrid,
    pub pseudocount: f64,
    /// Log-density per bin, already floored.
    log_density: Vec<f64>,
}

impl HistogramDensity {
    /// Probability mass per bin; sums to 1 up to rounding.
    pub fn bin_masses(&self) -> Vec<f64> {
        let a = self.grid.cell_area();
        self.log_density.iter().map(|l| l.exp() * a).collect()
    }
}

pub fn fit_histogram(points: &[Point2], grid: BinGrid, pseudocount: f64) -> Result<HistogramDensity> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    if !(pseudocount >= 0.0) || !pseudocount.is_finite() {
        return Err(Error::invalid("pseudocount", "must be finite and non-negative"));
    }
    let k2 = grid.total_bins();
    let mut counts = vec![0.0f64; k2];
    for p in points {
        counts[grid.bin_index(*p)] += 1.0;
    }
    let denom = (points.len() as f64 + k2 as f64 * pseudocount) * grid.cell_area();
    let log_density = counts
        .into_iter()
        .map(|c| floored(((c + pseudocount) / denom).ln()))
        .collect();
    Ok(HistogramDensity {
        grid,
        pseudocount,
        log_density,
    })
}

impl LogDensity for HistogramDensity {
    fn log_density(&self, p: Point2) -> f64 {
        self.log_density[self.grid.bin_index(p)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::quadrature::integrate;
    use crate::rng::rng_for;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn uniform_mass_gives_unit_density() {
        let g = BinGrid::new(8).unwrap();
        let pts: Vec<Point2> = (0..g.total_bins()).flat_map(|b| [g.bin_center(b); 3]).collect();
        let h = fit_histogram(&pts, g, 0.0).unwrap();
        for b in 0..g.total_bins() {
            assert_abs_diff_eq!(h.log_density(g.bin_center(b)), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pseudocount_floor_on_empty_bins() {
        let g = BinGrid::new(10).unwrap();
        let pts = vec![Point2::CENTER; 40];
        let h = fit_histogram(&pts, g, 1.0).unwrap();
        let corner = Point2::new(0.0, 0.0).unwrap();
        assert!(h.density(corner) > 0.0);
        let floor = (1.0f64 / (40.0 + 100.0)).ln() - g.cell_area().ln();
        assert!(h.log_density(corner) >= floor - 1e-12);
    }

    #[test]
    fn masses_sum_to_one() {
        let g = BinGrid::new(17).unwrap();
        let mut rng = rng_for(1, 0);
        let pts: Vec<Point2> = (0..500).map(|_| Point2::clamped(rng.gen::<f64>().powi(3), rng.gen())).collect();
        for a in [0.0, 0.5, 2.0] {
            let h = fit_histogram(&pts, g, a).unwrap();
            assert_abs_diff_eq!(h.bin_masses().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            // The midpoint rule on a grid aligned with the bins is exact.
            assert_abs_diff_eq!(integrate(&h, 17 * 4), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let g = BinGrid::new(4).unwrap();
        assert!(fit_histogram(&[], g, 1.0).is_err());
        assert!(fit_histogram(&[Point2::CENTER], g, -1.0).is_err());
    }
}
