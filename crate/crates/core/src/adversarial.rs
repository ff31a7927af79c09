//! Greedy worst-case test distributions under an entropy constraint.
//!
//! A pool of uniform test points is split into the points the model gets
//! wrong and the rest. The adversarial selection starts from every wrong
//! point and keeps adding correct points, each time the one that raises the
//! binned entropy of the selection most, until the entropy gap to uniform is
//! at most `γ`. The mislabeled fraction of the final selection approximates
//! the DD risk.
//!
//! Adding one point to bin `b` changes `Σ c log c` by `(c_b+1) log(c_b+1) −
//! c_b log c_b`, which grows with `c_b`; so the best addition is any point in
//! the emptiest bin that still has candidates.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::dd_risk_bound;
use crate::domain::{BinGrid, Classifier, Label, Point2};
use crate::entropy::EntropyAccumulator;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

pub const DEFAULT_POOL_SIZE: usize = 10_000;

/// Uniform test points with ground truth, predictions and the error split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialPool {
    pub points: Vec<Point2>,
    pub truth: Vec<Label>,
    pub predictions: Vec<Label>,
    /// Indices the model mislabels, in pool order.
    pub mislabeled: Vec<usize>,
    /// Indices the model gets right, in pool order.
    pub correct: Vec<usize>,
    pub seed: u64,
}

impl AdversarialPool {
    /// Split pre-labeled points into mislabeled and correct sets.
    pub fn from_parts(points: Vec<Point2>, truth: Vec<Label>, predictions: Vec<Label>, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("pool"));
        }
        for (what, got) in [("truth", truth.len()), ("predictions", predictions.len())] {
            if got != points.len() {
                return Err(Error::LengthMismatch {
                    what,
                    got,
                    expected: points.len(),
                });
            }
        }
        let (mislabeled, correct) = (0..points.len()).partition(|&i| truth[i] != predictions[i]);
        Ok(Self {
            points,
            truth,
            predictions,
            mislabeled,
            correct,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mislabeled fraction of the whole pool.
    pub fn uniform_risk(&self) -> f64 {
        self.mislabeled.len() as f64 / self.points.len() as f64
    }
}

/// Draw `m` uniform points and label them with `truth` and `model`.
pub fn build_pool(model: &impl Classifier, truth: &impl Classifier, m: usize, seed: u64) -> Result<AdversarialPool> {
    if m == 0 {
        return Err(Error::invalid("m", "pool needs at least one point"));
    }
    let mut rng = rng_for(seed, stream::POOL);
    let points: Vec<Point2> = (0..m).map(|_| Point2::clamped(rng.gen(), rng.gen())).collect();
    let t = points.iter().map(|p| truth.classify(*p)).collect();
    let pr = points.iter().map(|p| model.classify(*p)).collect();
    AdversarialPool::from_parts(points, t, pr, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialResult {
    pub gamma: f64,
    /// Pool indices in the order they entered the selection.
    pub selected: Vec<usize>,
    /// Entropy gap of the final selection; `None` when nothing was mislabeled.
    pub achieved_gap: Option<f64>,
    /// Mislabeled fraction of the selection.
    pub risk: f64,
    /// The correct points ran out before the gap reached `γ`.
    pub exhausted: bool,
}

/// Greedy entropy-constrained selection on `grid`.
pub fn greedy_adversarial(pool: &AdversarialPool, gamma: f64, grid: BinGrid) -> Result<AdversarialResult> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid("gamma", format!("{gamma} must be non-negative")));
    }
    if pool.mislabeled.is_empty() {
        return Ok(AdversarialResult {
            gamma,
            selected: Vec::new(),
            achieved_gap: None,
            risk: 0.0,
            exhausted: false,
        });
    }
    let bins = grid.total_bins();
    let bin_of = |i: usize| grid.bin_index(pool.points[i]);
    let mut acc = EntropyAccumulator::new(bins);
    let mut selected = Vec::with_capacity(pool.len());
    for &i in &pool.mislabeled {
        acc.add(bin_of(i));
        selected.push(i);
    }
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); bins];
    for &i in &pool.correct {
        queues[bin_of(i)].push_back(i);
    }
    let mut frontier: BTreeSet<(u64, usize)> = (0..bins)
        .filter(|&b| !queues[b].is_empty())
        .map(|b| (acc.count(b), b))
        .collect();
    let max_h = grid.max_entropy();
    let mut gap = (max_h - acc.entropy()).max(0.0);
    while gap > gamma {
        let Some((count, bin)) = frontier.pop_first() else {
            break;
        };
        let i = queues[bin].pop_front().expect("frontier bins have candidates");
        acc.add(bin);
        selected.push(i);
        if !queues[bin].is_empty() {
            frontier.insert((count + 1, bin));
        }
        gap = (max_h - acc.entropy()).max(0.0);
    }
    Ok(AdversarialResult {
        gamma,
        risk: pool.mislabeled.len() as f64 / selected.len() as f64,
        selected,
        achieved_gap: Some(gap),
        exhausted: gap > gamma,
    })
}

/// `(γ, γ̂, risk, |selection|)` rows with a header. A missing `γ̂` is empty.
pub fn write_results_csv<W: Write>(results: &[AdversarialResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma", "gamma_hat", "risk", "selection_size"])?;
    for r in results {
        w.write_record([
            r.gamma.to_string(),
            r.achieved_gap.map(|g| g.to_string()).unwrap_or_default(),
            r.risk.to_string(),
            r.selected.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdCurve {
    pub pool_risk: f64,
    pub results: Vec<AdversarialResult>,
}

impl DdCurve {
    /// Analytic upper bound at the pool risk for each `γ`, aligned with `results`.
    pub fn bounds(&self) -> Result<Vec<f64>> {
        self.results.iter().map(|r| dd_risk_bound(self.pool_risk, r.gamma)).collect()
    }
}

/// Greedy DD risk for each `γ` on one shared pool. Gammas must be sorted
/// ascending; the risks then never decrease.
pub fn dd_curve(
    model: &impl Classifier,
    truth: &impl Classifier,
    gammas: &[f64],
    m: usize,
    seed: u64,
    grid: BinGrid,
) -> Result<DdCurve> {
    let pool = build_pool(model, truth, m, seed)?;
    dd_curve_on_pool(&pool, gammas, grid)
}

pub fn dd_curve_on_pool(pool: &AdversarialPool, gammas: &[f64], grid: BinGrid) -> Result<DdCurve> {
    if gammas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("gammas", "must be sorted ascending"));
    }
    let results = gammas
        .iter()
        .map(|&g| greedy_adversarial(pool, g, grid))
        .collect::<Result<Vec<_>>>()?;
    debug_assert!(results.windows(2).all(|w| w[0].risk <= w[1].risk));
    Ok(DdCurve {
        pool_risk: pool.uniform_risk(),
        results,
    })
}
