//! Synthetic mixture-of-Gaussians classification tasks and the training
//! distributions drawn from them.
//!
//! A task is four isotropic Gaussians with means uniform on the unit square.
//! Components 0 and 1 carry the positive class, 2 and 3 the negative class,
//! and a point is positive when the positive mixture's likelihood strictly
//! exceeds the negative one's.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{Classifier, Dataset, Label, LabeledSample, Point2};
use crate::error::{Error, Result};
use crate::gauss;
use crate::rng::{child_seed, rng_for, stream};

pub const DEFAULT_COMPONENT_STD: f64 = 0.15;
/// Resolution of the grid used to reject single-class tasks.
pub const DEGENERACY_GRID: usize = 200;
const MAX_TASK_ATTEMPTS: u32 = 1000;
/// Draws allowed per accepted point before the truncated sampler gives up.
pub const REJECTION_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureTask {
    pub means: [Point2; 4],
    pub component_std: f64,
    pub class_of_component: [Label; 4],
    /// Seed the task was requested with.
    pub seed: u64,
    /// Number of degenerate draws skipped before this one was accepted.
    pub attempt: u32,
}

impl GaussianMixtureTask {
    /// Build a task from explicit means; components 0,1 positive and 2,3 negative.
    pub fn from_means(means: [Point2; 4], component_std: f64) -> Result<Self> {
        if !(component_std > 0.0) || !component_std.is_finite() {
            return Err(Error::invalid("component_std", "must be positive and finite"));
        }
        Ok(Self {
            means,
            component_std,
            class_of_component: [Label::Positive, Label::Positive, Label::Negative, Label::Negative],
            seed: 0,
            attempt: 0,
        })
    }

    /// Ground-truth labeling function. Ties go to the negative class.
    pub fn true_label(&self, p: Point2) -> Label {
        let inv = 1.0 / (2.0 * self.component_std * self.component_std);
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (m, c) in self.means.iter().zip(self.class_of_component) {
            let k = (-p.dist_sq(*m) * inv).exp();
            match c {
                Label::Positive => pos += k,
                Label::Negative => neg += k,
            }
        }
        Label::from(pos > neg)
    }

    /// True when both classes occur among the centers of an `res × res` grid.
    pub fn has_both_classes(&self, res: usize) -> bool {
        let mut seen = [false; 2];
        for j in 0..res {
            for i in 0..res {
                let p = Point2::clamped((i as f64 + 0.5) / res as f64, (j as f64 + 0.5) / res as f64);
                seen[self.true_label(p).index()] = true;
                if seen[0] && seen[1] {
                    return true;
                }
            }
        }
        false
    }
}

impl Classifier for GaussianMixtureTask {
    fn classify(&self, p: Point2) -> Label {
        self.true_label(p)
    }
}

/// Free-function form of [`GaussianMixtureTask::true_label`].
pub fn true_label(task: &GaussianMixtureTask, p: Point2) -> Label {
    task.true_label(p)
}

/// Task with the default component std.
pub fn sample_task(seed: u64) -> Result<GaussianMixtureTask> {
    sample_task_with_std(seed, DEFAULT_COMPONENT_STD)
}

/// Draw four means uniformly on the square. Draws whose labeling is
/// single-class on the degeneracy grid are skipped.
pub fn sample_task_with_std(seed: u64, component_std: f64) -> Result<GaussianMixtureTask> {
    for attempt in 0..MAX_TASK_ATTEMPTS {
        let mut rng = rng_for(child_seed(seed, attempt as u64), stream::TASK);
        let mut means = [Point2::CENTER; 4];
        for m in &mut means {
            *m = Point2::clamped(rng.gen::<f64>(), rng.gen::<f64>());
        }
        let mut task = GaussianMixtureTask::from_means(means, component_std)?;
        task.seed = seed;
        task.attempt = attempt;
        if task.has_both_classes(DEGENERACY_GRID) {
            return Ok(task);
        }
    }
    Err(Error::DegenerateTask {
        seed,
        attempts: MAX_TASK_ATTEMPTS,
    })
}

fn label_points(task: &GaussianMixtureTask, points: Vec<Point2>, seed: u64) -> Result<Dataset> {
    let samples = points
        .into_iter()
        .map(|point| LabeledSample {
            point,
            label: task.true_label(point),
        })
        .collect();
    Dataset::new(samples, seed)
}

/// `n` points uniform on the square, labeled by the task.
pub fn sample_uniform(task: &GaussianMixtureTask, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let mut rng = rng_for(seed, stream::TRAIN_DATA);
    let pts = (0..n)
        .map(|_| Point2::clamped(rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();
    label_points(task, pts, seed)
}

/// `n` points from N((0.5, 0.5), σ²I) conditioned on the square.
pub fn sample_truncated_gaussian(
    task: &GaussianMixtureTask,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    let pts = truncated_gaussian_points(n, sigma, seed, REJECTION_BUDGET)?;
    label_points(task, pts, seed)
}

/// Unlabeled rejection sampler with an explicit per-point draw budget.
pub fn truncated_gaussian_points(n: usize, sigma: f64, seed: u64, budget: u64) -> Result<Vec<Point2>> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", "must be positive and finite"));
    }
    let mut rng = rng_for(seed, stream::TRAIN_DATA);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut draws = 0u64;
        loop {
            if draws >= budget {
                return Err(Error::RejectionBudget { sigma, budget });
            }
            draws += 1;
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            let (x, y) = (0.5 + sigma * zx, 0.5 + sigma * zy);
            if let Ok(p) = Point2::new(x, y) {
                out.push(p);
                break;
            }
        }
    }
    Ok(out)
}

/// Density of the truncated training Gaussian: the isotropic normal at the
/// center divided by its mass on the square.
pub fn true_density_truncated_gaussian(p: Point2, sigma: f64) -> f64 {
    let var = sigma * sigma;
    let log_pdf = gauss::log_pdf_2d(p, Point2::CENTER, var);
    log_pdf.exp() / gauss::unit_square_mass(Point2::CENTER, sigma)
}

/// Fraction of an `res × res` midpoint grid where `model` disagrees with
/// `truth`; a quadrature estimate of the uniform expected risk.
pub fn grid_uniform_risk(model: &impl Classifier, truth: &impl Classifier, res: usize) -> f64 {
    let mut wrong = 0usize;
    for j in 0..res {
        for i in 0..res {
            let p = Point2::clamped((i as f64 + 0.5) / res as f64, (j as f64 + 0.5) / res as f64);
            if model.classify(p) != truth.classify(p) {
                wrong += 1;
            }
        }
    }
    wrong as f64 / (res * res) as f64
}
