//! Inverse-density rebalancing and importance-weighted risk estimates.
//!
//! Training samples get weights `w_i = min(p̂(x_i)^(−τ), β)`, where `β` is an
//! empirical quantile of the uncapped weights. The density `p̂` must come
//! from data the weights are not applied to; [`rebalance_cross_fitted`]
//! handles that by fitting on one half and weighting the other, both ways.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::bounds::l1_to_uniform;
use crate::density::{LogDensity, DENSITY_FLOOR};
use crate::domain::{zero_one_loss, BinGrid, Dataset, Label, Point2};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    /// Density exponent; 0 switches rebalancing off, 1 is full inverse density.
    pub tau: f64,
    /// Quantile of the uncapped weights used as the cap `β`.
    pub beta_quantile: f64,
    /// Rescale weights to mean 1.
    pub normalize: bool,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            beta_quantile: 0.99,
            normalize: true,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau", format!("{} is not in [0, 1]", self.tau)));
        }
        if !(self.beta_quantile > 0.0 && self.beta_quantile < 1.0) {
            return Err(Error::invalid("beta_quantile", format!("{} is not in (0, 1)", self.beta_quantile)));
        }
        Ok(())
    }
}

/// How the density used for weighting relates to the weighted samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoldOut {
    /// Two-fold cross-fitting: every sample is weighted by a density fitted
    /// on the other half.
    #[default]
    CrossFit,
    /// Fit and weight on the same samples (ablation only).
    SameSet,
}

/// Dataset with one non-negative weight per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDataset {
    base: Dataset,
    weights: Vec<f64>,
    /// The cap applied, if any.
    pub beta: Option<f64>,
    /// Number of samples whose raw weight exceeded the cap.
    pub clipped: usize,
}

impl WeightedDataset {
    pub fn new(base: Dataset, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != base.len() {
            return Err(Error::LengthMismatch {
                what: "weights",
                got: weights.len(),
                expected: base.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights", "must be finite and non-negative"));
        }
        Ok(Self {
            base,
            weights,
            beta: None,
            clipped: 0,
        })
    }

    /// Every sample with weight 1.
    pub fn unweighted(base: Dataset) -> Self {
        let weights = vec![1.0; base.len()];
        Self {
            base,
            weights,
            beta: None,
            clipped: 0,
        }
    }

    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean_weight(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }

    pub fn l1_to_uniform(&self, grid: BinGrid) -> Result<f64> {
        l1_to_uniform(&self.base.points(), &self.weights, grid)
    }

    /// Read `x,y,label,weight` rows (any column order).
    pub fn read_csv<R: std::io::Read>(input: R, seed: u64) -> Result<Self> {
        let (samples, mut extra) = crate::domain::read_sample_rows(input, &["weight"])?;
        WeightedDataset::new(Dataset::new(samples, seed)?, extra.remove(0))
    }

    /// `x,y,label,weight` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "label", "weight"])?;
        for (s, wt) in self.base.samples().iter().zip(&self.weights) {
            w.write_record([
                s.point.x().to_string(),
                s.point.y().to_string(),
                s.label.index().to_string(),
                wt.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear-interpolation quantile (numpy's default) of `values`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn capped_weights(log_densities: &[f64], cfg: &WeightConfig) -> Result<(Vec<f64>, f64, usize)> {
    cfg.validate()?;
    let floor = DENSITY_FLOOR.ln();
    if log_densities.iter().all(|l| *l <= floor) {
        return Err(Error::DensityFailure);
    }
    let raw: Vec<f64> = log_densities.iter().map(|l| (-cfg.tau * l).exp()).collect();
    let beta = quantile(&raw, cfg.beta_quantile);
    let clipped = raw.iter().filter(|w| **w > beta).count();
    let mut w: Vec<f64> = raw.into_iter().map(|w| w.min(beta)).collect();
    if cfg.normalize {
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        for x in &mut w {
            *x /= mean;
        }
    }
    Ok((w, beta, clipped))
}

/// Capped inverse-density weights for `data` under a density fitted
/// elsewhere. `beta` in the result is reported before normalisation.
pub fn rebalance_weights(data: &Dataset, model: &impl LogDensity, cfg: &WeightConfig) -> Result<WeightedDataset> {
    let logs: Vec<f64> = data.samples().iter().map(|s| model.log_density(s.point)).collect();
    let (weights, beta, clipped) = capped_weights(&logs, cfg)?;
    let mut wd = WeightedDataset::new(data.clone(), weights)?;
    wd.beta = Some(beta);
    wd.clipped = clipped;
    Ok(wd)
}

/// Weights from densities fitted without the weighted samples.
///
/// With [`HoldOut::CrossFit`] the data is split in two halves by a seeded
/// shuffle; a density is fitted on each half and evaluated on the other,
/// then the cap and normalisation are applied to all raw weights together.
pub fn rebalance_cross_fitted<M, F>(
    data: &Dataset,
    mut fit: F,
    cfg: &WeightConfig,
    hold_out: HoldOut,
    seed: u64,
) -> Result<WeightedDataset>
where
    M: LogDensity,
    F: FnMut(&[Point2], u64) -> Result<M>,
{
    let points = data.points();
    let logs: Vec<f64> = match hold_out {
        HoldOut::SameSet => {
            let m = fit(&points, seed)?;
            points.iter().map(|p| m.log_density(*p)).collect()
        }
        HoldOut::CrossFit => {
            if points.len() < 2 {
                return Err(Error::invalid("data", "cross-fitting needs at least two samples"));
            }
            let mut idx: Vec<usize> = (0..points.len()).collect();
            idx.shuffle(&mut rng_for(seed, stream::SPLIT));
            let (a, b) = idx.split_at(points.len() / 2);
            let pa: Vec<Point2> = a.iter().map(|&i| points[i]).collect();
            let pb: Vec<Point2> = b.iter().map(|&i| points[i]).collect();
            let ma = fit(&pa, seed)?;
            let mb = fit(&pb, seed ^ 1)?;
            let mut logs = vec![0.0; points.len()];
            for &i in a {
                logs[i] = mb.log_density(points[i]);
            }
            for &i in b {
                logs[i] = ma.log_density(points[i]);
            }
            logs
        }
    };
    let (weights, beta, clipped) = capped_weights(&logs, cfg)?;
    let mut wd = WeightedDataset::new(data.clone(), weights)?;
    wd.beta = Some(beta);
    wd.clipped = clipped;
    Ok(wd)
}

/// `(1/n) Σ w_i · loss_i`.
pub fn weighted_mean_loss(weights: &[f64], losses: &[f64]) -> Result<f64> {
    if weights.len() != losses.len() {
        return Err(Error::LengthMismatch {
            what: "losses",
            got: losses.len(),
            expected: weights.len(),
        });
    }
    if weights.is_empty() {
        return Err(Error::Empty("weights"));
    }
    Ok(weights.iter().zip(losses).map(|(w, l)| w * l).sum::<f64>() / weights.len() as f64)
}

/// Weighted zero-one empirical risk of `predictions` against the dataset's labels.
pub fn weighted_empirical_risk(wd: &WeightedDataset, predictions: &[Label]) -> Result<f64> {
    if predictions.len() != wd.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            got: predictions.len(),
            expected: wd.len(),
        });
    }
    let losses: Vec<f64> = wd
        .base
        .samples()
        .iter()
        .zip(predictions)
        .map(|(s, p)| zero_one_loss(*p, s.label))
        .collect();
    weighted_mean_loss(&wd.weights, &losses)
}

/// Self-normalised importance-sampling estimate of the uniform expected
/// risk from samples drawn with known density `density_at`:
/// `Σ loss_i / p(x_i) ÷ Σ 1 / p(x_i)`.
pub fn is_uniform_risk(
    data: &Dataset,
    predictions: &[Label],
    density_at: impl Fn(Point2) -> f64,
) -> Result<f64> {
    if predictions.len() != data.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            got: predictions.len(),
            expected: data.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (s, pred)) in data.samples().iter().zip(predictions).enumerate() {
        let d = density_at(s.point);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NonPositiveDensity { index: i, density: d });
        }
        let inv = 1.0 / d;
        num += inv * zero_one_loss(*pred, s.label);
        den += inv;
    }
    Ok(num / den)
}
