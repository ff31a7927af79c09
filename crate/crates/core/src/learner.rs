//! Fully connected ReLU classifier trained on a weighted cross-entropy
//! objective, plus weight-distance-to-initialization (WDL2) selection.
//!
//! Parameters live in one flat vector. Layer `l` stores its weight matrix
//! row-major (`out × in`) followed by its bias. Inputs are mapped from the
//! unit square to `[-1, 1]²` before the first layer.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{Classifier, Label, Point2};
use crate::error::{Error, Result};
use crate::rebalance::WeightedDataset;
use crate::rng::{rng_for, stream};
use crate::tasks::grid_uniform_risk;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    /// Heavy-ball momentum: `v ← μv + g`, `θ ← θ − η v`.
    Momentum { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutInit {
    #[default]
    Random,
    /// Last layer starts at exactly zero, so the untrained model is constant.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over the whole run.
    #[default]
    Cosine,
}

impl LrSchedule {
    fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    pub readout_init: ReadoutInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 0.05,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::Momentum { mu: 0.9 },
            schedule: LrSchedule::Cosine,
            readout_init: ReadoutInit::Random,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer sizes must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", "must be positive and finite"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs/batch_size", "must be positive"));
        }
        if let Optimizer::Momentum { mu } = self.optimizer {
            if !(0.0..1.0).contains(&mu) {
                return Err(Error::invalid("mu", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Epoch count giving at least `steps` minibatch updates on `n` samples.
    pub fn epochs_for_steps(&self, n: usize, steps: usize) -> usize {
        let per_epoch = n.div_ceil(self.batch_size).max(1);
        steps.div_ceil(per_epoch).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    init: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Scratch buffers for one forward/backward pass.
struct Workspace {
    /// Post-activation values per layer; `acts[0]` is the standardized input.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(sizes: &[usize]) -> Self {
        let widest = *sizes.iter().max().unwrap();
        Self {
            acts: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }
}

impl Mlp {
    /// Random model: He-normal hidden weights, zero biases.
    pub fn new(hidden: &[usize], readout: ReadoutInit, seed: u64) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer sizes must be positive"));
        }
        let mut sizes = vec![2];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let mut rng = rng_for(seed, stream::INIT);
        let mut params = Vec::with_capacity(param_count(&sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let zero = l + 1 == layers && readout == ReadoutInit::Zero;
            let std = (2.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = rng.sample(StandardNormal);
                params.push(if zero { 0.0 } else { std * z });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            sizes,
            init: params.clone(),
            params,
        })
    }

    /// Rebuild from stored parameters, checking them against the architecture.
    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>, init: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes[0] != 2 || *sizes.last().unwrap() != 2 || sizes.contains(&0) {
            return Err(Error::invalid("sizes", "expected 2 → hidden… → 2 with positive widths"));
        }
        let expected = param_count(&sizes);
        for (what, v) in [("params", &params), ("init", &init)] {
            if v.len() != expected {
                return Err(Error::LengthMismatch {
                    what,
                    got: v.len(),
                    expected,
                });
            }
        }
        Ok(Self { sizes, params, init })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn init_params(&self) -> &[f64] {
        &self.init
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Distance of the current parameters from their initial values.
    pub fn wdl2(&self) -> f64 {
        self.params
            .iter()
            .zip(&self.init)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn forward_with(&self, params: &[f64], p: Point2, ws: &mut Workspace) {
        ws.acts[0][0] = 2.0 * p.x() - 1.0;
        ws.acts[0][1] = 2.0 * p.y() - 1.0;
        let layers = self.sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    z += wi * xi;
                }
                out[o] = if l + 1 < layers { z.max(0.0) } else { z };
            }
            off += n_in * n_out + n_out;
        }
    }

    /// Output logits for one point.
    pub fn logits(&self, p: Point2) -> [f64; 2] {
        let mut ws = Workspace::new(&self.sizes);
        self.forward_with(&self.params, p, &mut ws);
        let out = ws.acts.last().unwrap();
        [out[0], out[1]]
    }

    /// Argmax of the logits; ties go to label 0.
    pub fn predict(&self, p: Point2) -> Label {
        let [a, b] = self.logits(p);
        Label::from(b > a)
    }

    pub fn predict_batch(&self, points: &[Point2]) -> Vec<Label> {
        let mut ws = Workspace::new(&self.sizes);
        points
            .iter()
            .map(|p| {
                self.forward_with(&self.params, *p, &mut ws);
                let out = ws.acts.last().unwrap();
                Label::from(out[1] > out[0])
            })
            .collect()
    }

    fn loss_with(&self, params: &[f64], batch: &Batch<'_>, ws: &mut Workspace) -> f64 {
        let mut total = 0.0;
        for i in 0..batch.len() {
            let w = batch.weights[i];
            if w == 0.0 {
                continue;
            }
            self.forward_with(params, batch.points[i], ws);
            total += w * cross_entropy(ws.acts.last().unwrap(), batch.labels[i]);
        }
        total / batch.len() as f64
    }

    /// Loss plus the on/off state of every hidden unit for every weighted point.
    fn loss_and_mask(&self, params: &[f64], batch: &Batch<'_>, ws: &mut Workspace, mask: &mut Vec<bool>) -> f64 {
        mask.clear();
        let hidden = &self.sizes[1..self.sizes.len() - 1];
        let mut total = 0.0;
        for i in 0..batch.len() {
            let w = batch.weights[i];
            if w == 0.0 {
                continue;
            }
            self.forward_with(params, batch.points[i], ws);
            total += w * cross_entropy(ws.acts.last().unwrap(), batch.labels[i]);
            for (l, _) in hidden.iter().enumerate() {
                mask.extend(ws.acts[l + 1].iter().map(|&a| a > 0.0));
            }
        }
        total / batch.len() as f64
    }

    /// `(1/|B|) Σ w_i CE_i` and its gradient, accumulated into `grad`.
    fn loss_and_grad_into(&self, batch: &Batch<'_>, grad: &mut [f64], ws: &mut Workspace) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch.len() as f64;
        let layers = self.sizes.len() - 1;
        let mut total = 0.0;
        for i in 0..batch.len() {
            let w = batch.weights[i];
            if w == 0.0 {
                continue;
            }
            self.forward_with(&self.params, batch.points[i], ws);
            let out = ws.acts.last().unwrap();
            let y = batch.labels[i].index();
            total += w * cross_entropy(out, batch.labels[i]);
            let probs = softmax2(out);
            let c = w * scale;
            ws.delta[0] = c * (probs[0] - if y == 0 { 1.0 } else { 0.0 });
            ws.delta[1] = c * (probs[1] - if y == 1 { 1.0 } else { 0.0 });
            let mut off = self.params.len();
            for l in (0..layers).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                off -= n_in * n_out + n_out;
                let input = &ws.acts[l];
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = ws.delta[o];
                    gb[o] += d;
                    if d != 0.0 {
                        for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input.iter()) {
                            *g += d * x;
                        }
                    }
                }
                if l == 0 {
                    break;
                }
                let wmat = &self.params[off..off + n_in * n_out];
                ws.delta_prev[..n_in].iter_mut().for_each(|v| *v = 0.0);
                for o in 0..n_out {
                    let d = ws.delta[o];
                    if d != 0.0 {
                        for (dp, wv) in ws.delta_prev[..n_in].iter_mut().zip(&wmat[o * n_in..(o + 1) * n_in]) {
                            *dp += wv * d;
                        }
                    }
                }
                // ReLU derivative; the stored activation is zero iff inactive.
                for ((d, &a), &dp) in ws.delta[..n_in].iter_mut().zip(input.iter()).zip(&ws.delta_prev[..n_in]) {
                    *d = if a > 0.0 { dp } else { 0.0 };
                }
            }
        }
        total * scale
    }
}

impl Classifier for Mlp {
    fn classify(&self, p: Point2) -> Label {
        self.predict(p)
    }
}

fn softmax2(z: &[f64]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let (a, b) = ((z[0] - m).exp(), (z[1] - m).exp());
    [a / (a + b), b / (a + b)]
}

fn cross_entropy(z: &[f64], y: Label) -> f64 {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[y.index()]
}

/// Borrowed view of weighted training examples.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub points: &'a [Point2],
    pub labels: &'a [Label],
    pub weights: &'a [f64],
}

impl<'a> Batch<'a> {
    pub fn new(points: &'a [Point2], labels: &'a [Label], weights: &'a [f64]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("batch"));
        }
        for (what, got) in [("labels", labels.len()), ("weights", weights.len())] {
            if got != points.len() {
                return Err(Error::LengthMismatch {
                    what,
                    got,
                    expected: points.len(),
                });
            }
        }
        Ok(Self { points, labels, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Weighted mean cross-entropy of `model` on `batch`.
pub fn weighted_loss(model: &Mlp, batch: &Batch<'_>) -> f64 {
    let mut ws = Workspace::new(&model.sizes);
    model.loss_with(&model.params, batch, &mut ws)
}

/// Loss and analytic gradient with respect to the flat parameter vector.
pub fn gradient(model: &Mlp, batch: &Batch<'_>) -> (f64, Vec<f64>) {
    let mut ws = Workspace::new(&model.sizes);
    let mut g = vec![0.0; model.params.len()];
    let loss = model.loss_and_grad_into(batch, &mut g, &mut ws);
    (loss, g)
}

/// Finite-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;
/// Smallest step tried when the default one straddles a ReLU kink.
pub const FD_MIN_STEP: f64 = 1e-8;
/// Coordinates compared by [`gradient_check`].
pub const FD_COORDS: usize = 100;
/// Denominator floor in the relative error of [`gradient_check`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative error between backprop and central differences over a
/// seeded random subset of coordinates. Relative error is
/// `|a − n| / max(|a|, |n|, 1e-6)`. Central differences at this step carry
/// absolute rounding noise near 1e-11, so the floor stops coordinates with a
/// vanishing gradient from reporting that noise as a large relative error.
///
/// When `θ ± h` put some hidden unit on opposite sides of zero the step is
/// divided by 10 (down to [`FD_MIN_STEP`]); coordinates still straddling a
/// kink at that step have no derivative and are skipped.
pub fn gradient_check(model: &Mlp, batch: &Batch<'_>, seed: u64) -> f64 {
    let (_, analytic) = gradient(model, batch);
    let mut idx: Vec<usize> = (0..model.params.len()).collect();
    idx.shuffle(&mut rng_for(seed, stream::SHUFFLE));
    idx.truncate(FD_COORDS);
    let mut ws = Workspace::new(&model.sizes);
    let mut params = model.params.clone();
    let (mut up_mask, mut down_mask) = (Vec::new(), Vec::new());
    let mut worst: f64 = 0.0;
    for &i in &idx {
        let orig = params[i];
        // A stencil that flips a ReLU is not differentiating one smooth
        // piece; shrink it until both sides share an activation pattern.
        let mut h = FD_STEP;
        let numeric = loop {
            params[i] = orig + h;
            let up = model.loss_and_mask(&params, batch, &mut ws, &mut up_mask);
            params[i] = orig - h;
            let down = model.loss_and_mask(&params, batch, &mut ws, &mut down_mask);
            if up_mask == down_mask {
                break Some((up - down) / (2.0 * h));
            }
            h /= 10.0;
            if h < FD_MIN_STEP {
                break None;
            }
        };
        params[i] = orig;
        // No smooth neighbourhood at all: the parameter sits on a kink.
        let Some(numeric) = numeric else { continue };
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max(rel);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Weighted cross-entropy on the full training set after the epoch.
    pub weighted_loss: f64,
    pub wdl2: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Grid uniform risk against the ground truth, when recorded.
    pub final_eval: Option<f64>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::INFINITY, |e| e.weighted_loss)
    }

    /// Fraction of epoch transitions where the loss did not increase.
    pub fn non_increasing_fraction(&self) -> f64 {
        if self.epochs.len() < 2 {
            return 1.0;
        }
        let ok = self.epochs.windows(2).filter(|w| w[1].weighted_loss <= w[0].weighted_loss).count();
        ok as f64 / (self.epochs.len() - 1) as f64
    }
}

/// Record the grid uniform risk of `model` against `truth` in the trace.
pub fn record_final_eval(model: &Mlp, truth: &impl Classifier, res: usize, trace: &mut TrainTrace) -> f64 {
    let r = grid_uniform_risk(model, truth, res);
    trace.final_eval = Some(r);
    r
}

/// Minibatch training on the weighted cross-entropy objective.
pub fn train(wd: &WeightedDataset, cfg: &TrainConfig) -> Result<(Mlp, TrainTrace)> {
    cfg.validate()?;
    if wd.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut model = Mlp::new(&cfg.hidden, cfg.readout_init, cfg.seed)?;
    let trace = fit(&mut model, wd, cfg)?;
    Ok((model, trace))
}

/// Continue training an existing model in place.
pub fn fit(model: &mut Mlp, wd: &WeightedDataset, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let points = wd.base().points();
    let labels = wd.base().labels();
    let weights = wd.weights();
    let full = Batch::new(&points, &labels, weights)?;
    let n = points.len();
    let bs = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(cfg.seed, stream::SHUFFLE);
    let mut ws = Workspace::new(&model.sizes);
    let mut grad = vec![0.0; model.params.len()];
    let mut velocity = vec![0.0; model.params.len()];
    let (mut bp, mut bl, mut bw) = (Vec::with_capacity(bs), Vec::with_capacity(bs), Vec::with_capacity(bs));
    let mut trace = TrainTrace::default();
    let total_steps = cfg.epochs * n.div_ceil(bs);
    let mut t = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            bp.clear();
            bl.clear();
            bw.clear();
            for &i in chunk {
                bp.push(points[i]);
                bl.push(labels[i]);
                bw.push(weights[i]);
            }
            let batch = Batch {
                points: &bp,
                labels: &bl,
                weights: &bw,
            };
            model.loss_and_grad_into(&batch, &mut grad, &mut ws);
            let lr = cfg.schedule.rate(cfg.learning_rate, t, total_steps);
            step(&mut model.params, &grad, &mut velocity, cfg.optimizer, lr);
            t += 1;
        }
        let loss = model.loss_with(&model.params, &full, &mut ws);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        trace.epochs.push(EpochRecord {
            epoch,
            weighted_loss: loss,
            wdl2: model.wdl2(),
        });
    }
    Ok(trace)
}

fn step(params: &mut [f64], grad: &[f64], velocity: &mut [f64], optimizer: Optimizer, lr: f64) {
    match optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::Momentum { mu } => {
            for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

/// Outcome of [`select_by_wdl2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// Set when no candidate met the loss ceiling and the minimum-loss
    /// candidate was returned instead.
    pub fallback: bool,
}

/// Pick the candidate closest to its initialization among those whose final
/// training loss is at most `loss_ceiling` (default: 1.1 × the best loss).
/// Returns `None` only for an empty candidate list.
pub fn select_by_wdl2(candidates: &[(Mlp, TrainTrace)], loss_ceiling: Option<f64>) -> Option<Selection> {
    let losses: Vec<f64> = candidates.iter().map(|(_, t)| t.final_loss()).collect();
    let best = (0..candidates.len()).min_by(|&a, &b| losses[a].total_cmp(&losses[b]))?;
    let ceiling = loss_ceiling.unwrap_or(1.1 * losses[best]);
    let chosen = (0..candidates.len())
        .filter(|&i| losses[i] <= ceiling)
        .min_by(|&a, &b| candidates[a].0.wdl2().total_cmp(&candidates[b].0.wdl2()));
    Some(match chosen {
        Some(index) => Selection { index, fallback: false },
        None => Selection {
            index: best,
            fallback: true,
        },
    })
}
