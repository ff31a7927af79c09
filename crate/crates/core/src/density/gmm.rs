//! Isotropic 2-D Gaussian mixture fitted by expectation–maximisation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{floored, LogDensity};
use crate::domain::Point2;
use crate::error::{Error, Result};
use crate::gauss;
use crate::rng::{rng_for, stream};

pub const VARIANCE_FLOOR: f64 = 1e-6;
/// A component whose total responsibility falls below this fraction of the
/// data is treated as starved and reseeded.
const STARVED_FRACTION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iters: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: 8,
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Point2,
    /// Per-axis variance.
    pub variance: f64,
}

/// Fitted mixture. The density is renormalised by the mixture's mass on the
/// unit square: `p(x) = Σ π_k N(x; μ_k, σ_k²) / Σ π_k M_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDensity {
    pub components: Vec<GmmComponent>,
    log_square_mass: f64,
}

/// Per-iteration record of an EM run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GmmTrace {
    /// Mean per-point log-likelihood of the untruncated mixture, evaluated
    /// at the parameters entering each iteration.
    pub log_likelihoods: Vec<f64>,
    /// Iterations whose M-step reseeded a starved component; the
    /// likelihood transition out of these is not covered by the EM guarantee.
    pub reseeded_at: Vec<usize>,
    pub converged: bool,
}

impl GmmTrace {
    /// True if every transition not caused by a reseed is non-decreasing
    /// up to `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.log_likelihoods.windows(2).enumerate().all(|(i, w)| {
            self.reseeded_at.contains(&i) || w[1] >= w[0] - slack
        })
    }
}

impl GmmDensity {
    fn from_components(components: Vec<GmmComponent>) -> Self {
        let mass: f64 = components
            .iter()
            .map(|c| c.weight * gauss::unit_square_mass(c.mean, c.variance.sqrt()))
            .sum();
        Self {
            components,
            log_square_mass: mass.max(f64::MIN_POSITIVE).ln(),
        }
    }

    /// Log-density of the untruncated mixture on the plane.
    pub fn log_density_unnormalized(&self, p: Point2) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + gauss::log_pdf_2d(p, c.mean, c.variance))
            .collect();
        gauss::log_sum_exp(&terms)
    }
}

impl LogDensity for GmmDensity {
    fn log_density(&self, p: Point2) -> f64 {
        floored(self.log_density_unnormalized(p) - self.log_square_mass)
    }
}

fn pooled_variance(points: &[Point2]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x()).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y()).sum::<f64>() / n;
    let v = points.iter().map(|p| (p.x() - mx).powi(2) + (p.y() - my).powi(2)).sum::<f64>() / (2.0 * n);
    v.max(VARIANCE_FLOOR)
}

/// k-means++ seeding: first center uniform over the data, each next one
/// drawn with probability proportional to squared distance to the nearest
/// chosen center.
fn kmeans_pp(points: &[Point2], k: usize, rng: &mut impl Rng) -> Vec<Point2> {
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist_sq(centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            points[rng.gen_range(0..points.len())]
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            points[pick]
        };
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist_sq(next));
        }
        centers.push(next);
    }
    centers
}

/// Fit an isotropic GMM by EM. Returns the renormalised density and the
/// per-iteration likelihood trace.
pub fn fit_gmm(points: &[Point2], cfg: &GmmConfig) -> Result<(GmmDensity, GmmTrace)> {
    let k = cfg.components;
    if k == 0 {
        return Err(Error::invalid("components", "must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::invalid("points", format!("{} points cannot support {k} components", points.len())));
    }
    if !(cfg.tol >= 0.0) {
        return Err(Error::invalid("tol", "must be non-negative"));
    }
    let n = points.len();
    let mut rng = rng_for(cfg.seed, stream::GMM);
    let global_var = pooled_variance(points);
    let mut comps: Vec<GmmComponent> = kmeans_pp(points, k, &mut rng)
        .into_iter()
        .map(|mean| GmmComponent {
            weight: 1.0 / k as f64,
            mean,
            variance: global_var,
        })
        .collect();

    let mut trace = GmmTrace::default();
    let mut resp = vec![0.0f64; n * k];
    let mut log_terms = vec![0.0f64; k];

    for iter in 0..cfg.max_iters.max(1) {
        // E-step
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            for (t, c) in log_terms.iter_mut().zip(&comps) {
                *t = c.weight.ln() + gauss::log_pdf_2d(*p, c.mean, c.variance);
            }
            let lse = gauss::log_sum_exp(&log_terms);
            ll += lse;
            for (r, t) in resp[i * k..(i + 1) * k].iter_mut().zip(&log_terms) {
                *r = (t - lse).exp();
            }
        }
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return Err(Error::invalid("points", "EM produced a non-finite log-likelihood"));
        }
        if let Some(prev) = trace.log_likelihoods.last() {
            if ll - prev < cfg.tol && !trace.reseeded_at.contains(&(iter - 1)) {
                trace.log_likelihoods.push(ll);
                trace.converged = true;
                break;
            }
        }
        trace.log_likelihoods.push(ll);
        if iter + 1 == cfg.max_iters {
            break;
        }

        // M-step
        let mut reseeded = false;
        for (j, c) in comps.iter_mut().enumerate() {
            let mut nk = 0.0;
            let (mut sx, mut sy) = (0.0, 0.0);
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * k + j];
                nk += r;
                sx += r * p.x();
                sy += r * p.y();
            }
            if nk < STARVED_FRACTION * n as f64 {
                *c = GmmComponent {
                    weight: 1.0 / k as f64,
                    mean: points[rng.gen_range(0..n)],
                    variance: global_var,
                };
                reseeded = true;
                continue;
            }
            let mean = Point2::clamped(sx / nk, sy / nk);
            let mut ss = 0.0;
            for (i, p) in points.iter().enumerate() {
                ss += resp[i * k + j] * p.dist_sq(mean);
            }
            *c = GmmComponent {
                weight: nk / n as f64,
                mean,
                variance: (ss / (2.0 * nk)).max(VARIANCE_FLOOR),
            };
        }
        let wsum: f64 = comps.iter().map(|c| c.weight).sum();
        for c in &mut comps {
            c.weight /= wsum;
        }
        if reseeded {
            trace.reseeded_at.push(iter);
        }
    }
    Ok((GmmDensity::from_components(comps), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::quadrature::integrate;
    use crate::tasks::{truncated_gaussian_points, REJECTION_BUDGET};
    use approx::assert_abs_diff_eq;
    use rand_distr::StandardNormal;

    fn two_blobs(n: usize, seed: u64) -> Vec<Point2> {
        let mut rng = rng_for(seed, 0);
        (0..n)
            .map(|i| {
                let (cx, cy) = if i % 2 == 0 { (0.3, 0.3) } else { (0.7, 0.65) };
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                Point2::clamped(cx + 0.05 * zx, cy + 0.05 * zy)
            })
            .collect()
    }

    #[test]
    fn single_component_equals_sample_moments() {
        let pts = truncated_gaussian_points(1000, 0.2, 1, REJECTION_BUDGET).unwrap();
        let (g, _) = fit_gmm(&pts, &GmmConfig { components: 1, ..Default::default() }).unwrap();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.x()).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.y()).sum::<f64>() / n;
        let c = g.components[0];
        assert_abs_diff_eq!(c.mean.x(), mx, epsilon = 1e-12);
        assert_abs_diff_eq!(c.mean.y(), my, epsilon = 1e-12);
        assert_abs_diff_eq!(c.variance, pooled_variance(&pts), epsilon = 1e-12);
        assert_abs_diff_eq!(c.weight, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn recovers_two_component_means() {
        let pts = two_blobs(5000, 4);
        let (g, trace) = fit_gmm(&pts, &GmmConfig { components: 2, seed: 9, ..Default::default() }).unwrap();
        assert!(trace.converged);
        let mut means: Vec<Point2> = g.components.iter().map(|c| c.mean).collect();
        means.sort_by(|a, b| a.x().total_cmp(&b.x()));
        assert!(means[0].dist_sq(Point2::new(0.3, 0.3).unwrap()).sqrt() < 0.05);
        assert!(means[1].dist_sq(Point2::new(0.7, 0.65).unwrap()).sqrt() < 0.05);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        for seed in 0..5 {
            let pts = truncated_gaussian_points(800, 0.15, seed, REJECTION_BUDGET).unwrap();
            let (_, trace) = fit_gmm(&pts, &GmmConfig { seed, ..Default::default() }).unwrap();
            assert!(trace.log_likelihoods.len() >= 2);
            assert!(trace.is_monotone(1e-9), "{:?}", trace.log_likelihoods);
        }
    }

    #[test]
    fn integrates_to_one_over_the_square() {
        let pts = truncated_gaussian_points(2000, 0.3, 3, REJECTION_BUDGET).unwrap();
        let (g, _) = fit_gmm(&pts, &GmmConfig::default()).unwrap();
        assert_abs_diff_eq!(integrate(&g, 400), 1.0, epsilon = 0.01);
    }

    #[test]
    fn deterministic_given_seed() {
        let pts = two_blobs(600, 1);
        let cfg = GmmConfig { components: 4, seed: 3, ..Default::default() };
        assert_eq!(fit_gmm(&pts, &cfg).unwrap(), fit_gmm(&pts, &cfg).unwrap());
    }

    #[test]
    fn duplicate_points_hit_the_variance_floor() {
        let pts = vec![Point2::CENTER; 20];
        let (g, _) = fit_gmm(&pts, &GmmConfig { components: 2, ..Default::default() }).unwrap();
        assert!(g.components.iter().all(|c| c.variance >= VARIANCE_FLOOR));
        assert!(g.log_density(Point2::new(0.0, 0.0).unwrap()).is_finite());
    }

    #[test]
    fn rejects_bad_config() {
        let pts = two_blobs(10, 0);
        assert!(fit_gmm(&pts, &GmmConfig { components: 0, ..Default::default() }).is_err());
        assert!(fit_gmm(&pts, &GmmConfig { components: 11, ..Default::default() }).is_err());
    }
}
