//! Seeded experiment sweeps: DD risk against training-set size, and against
//! training-distribution width with and without rebalancing.
//!
//! Every run is a pure function of its config and seed. Runs execute on the
//! rayon pool and come back in job order, so the CSV is byte-identical
//! regardless of scheduling. Each data row repeats the config fields that
//! produced it; summary rows carry across-seed percentiles.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::{build_pool, dd_curve_on_pool, DEFAULT_POOL_SIZE};
use crate::bounds::dd_risk_bound;
use crate::density::DensityChoice;
use crate::domain::BinGrid;
use crate::error::{Error, Result};
use crate::learner::{train, TrainConfig};
use crate::rebalance::{quantile, rebalance_cross_fitted, HoldOut, WeightConfig, WeightedDataset};
use crate::rng::child_seed;
use crate::tasks::{sample_task_with_std, sample_truncated_gaussian, sample_uniform, DEFAULT_COMPONENT_STD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    #[default]
    Fig1,
    Fig3,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Number of tasks; task `i` uses seed `base_seed + i`.
    pub seeds: u64,
    pub base_seed: u64,
    pub n_grid: Vec<usize>,
    pub sigma_grid: Vec<f64>,
    /// Ascending.
    pub gamma_grid: Vec<f64>,
    /// Training-set sizes for the rebalancing sweep.
    pub fig3_n_grid: Vec<usize>,
    pub fig3_gamma: f64,
    pub pool_size: usize,
    /// Grid for the adversarial entropy.
    pub cells_per_axis: usize,
    /// Grid for the L1 distance of the training set to uniform.
    pub l1_cells_per_axis: usize,
    /// Minibatch updates per training run, independent of `n`.
    pub train_steps: usize,
    pub component_std: f64,
    pub weighting: WeightConfig,
    pub hold_out: HoldOut,
    pub density: DensityChoice,
    pub learner: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Fig1,
            seeds: 35,
            base_seed: 0,
            n_grid: vec![100, 316, 1000, 3162, 10_000],
            sigma_grid: vec![0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 10.0],
            gamma_grid: vec![0.25, 0.5, 0.99, 2.0],
            fig3_n_grid: vec![500],
            fig3_gamma: 0.99,
            pool_size: DEFAULT_POOL_SIZE,
            cells_per_axis: 100,
            l1_cells_per_axis: 10,
            train_steps: 4000,
            component_std: DEFAULT_COMPONENT_STD,
            weighting: WeightConfig::default(),
            hold_out: HoldOut::CrossFit,
            density: DensityChoice::default(),
            learner: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::invalid("seeds", "must be at least 1"));
        }
        for (name, empty) in [
            ("n_grid", self.n_grid.is_empty()),
            ("sigma_grid", self.sigma_grid.is_empty()),
            ("gamma_grid", self.gamma_grid.is_empty()),
            ("fig3_n_grid", self.fig3_n_grid.is_empty()),
        ] {
            if empty {
                return Err(Error::invalid(name, "must not be empty"));
            }
        }
        if self.n_grid.iter().chain(&self.fig3_n_grid).any(|&n| n < 2) {
            return Err(Error::invalid("n_grid", "sizes must be at least 2"));
        }
        if self.sigma_grid.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("sigma_grid", "must be positive and finite"));
        }
        if self.gamma_grid.iter().chain([&self.fig3_gamma]).any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::invalid("gamma_grid", "must be non-negative and finite"));
        }
        if self.gamma_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("gamma_grid", "must be sorted ascending"));
        }
        if self.pool_size == 0 || self.train_steps == 0 {
            return Err(Error::invalid("pool_size/train_steps", "must be positive"));
        }
        BinGrid::new(self.cells_per_axis)?;
        BinGrid::new(self.l1_cells_per_axis)?;
        self.weighting.validate()?;
        self.learner.validate()
    }

    pub fn task_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.seeds).map(|i| self.base_seed + i)
    }

    /// Learner config for one run: the task seed and a step-based epoch count.
    pub fn learner_for(&self, seed: u64, n: usize) -> TrainConfig {
        let mut cfg = TrainConfig {
            seed,
            ..self.learner.clone()
        };
        cfg.epochs = cfg.epochs_for_steps(n, self.train_steps);
        cfg
    }

    fn hidden_label(&self) -> String {
        self.learner.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-")
    }
}

/// Seed of the training sample for `(task seed, n)`.
pub fn train_data_seed(seed: u64, n: usize) -> u64 {
    child_seed(seed, n as u64)
}

/// Seed of the truncated-Gaussian sample for `(task seed, n, σ)`.
pub fn gaussian_data_seed(seed: u64, n: usize, sigma: f64) -> u64 {
    child_seed(child_seed(seed, n as u64), sigma.to_bits())
}

pub const STATUS_OK: &str = "ok";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Row {
    /// `run` for a single run, `p05`/`p50`/`p95` for summaries.
    pub row: String,
    pub seed: Option<u64>,
    pub n: usize,
    pub gamma: f64,
    pub pool_size: usize,
    pub cells_per_axis: usize,
    pub train_steps: usize,
    pub hidden: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub component_std: f64,
    pub uniform_risk: f64,
    pub dd_risk_greedy: f64,
    pub dd_bound: f64,
    pub gamma_hat: Option<f64>,
    pub exhausted: Option<bool>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub row: String,
    pub seed: Option<u64>,
    pub sigma: f64,
    pub n: usize,
    pub gamma: f64,
    pub rebalanced: bool,
    pub density: String,
    pub tau: f64,
    pub beta_quantile: f64,
    pub hold_out: String,
    pub pool_size: usize,
    pub cells_per_axis: usize,
    pub l1_cells_per_axis: usize,
    pub train_steps: usize,
    pub hidden: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub component_std: f64,
    pub uniform_risk: f64,
    pub dd_risk: f64,
    pub l1_to_uniform_weighted: f64,
    pub clipped: Option<usize>,
    pub status: String,
}

/// Result of a sweep: per-run rows followed by percentile rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep<R> {
    pub rows: Vec<R>,
    pub summaries: Vec<R>,
    pub elapsed_secs: f64,
}

impl<R: Serialize> Sweep<R> {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in self.rows.iter().chain(&self.summaries) {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

impl<R> Sweep<R> {
    pub fn failures(&self) -> usize
    where
        R: HasStatus,
    {
        self.rows.iter().filter(|r| r.status() != STATUS_OK).count()
    }
}

pub trait HasStatus {
    fn status(&self) -> &str;
}

impl HasStatus for Fig1Row {
    fn status(&self) -> &str {
        &self.status
    }
}

impl HasStatus for Fig3Row {
    fn status(&self) -> &str {
        &self.status
    }
}

/// Linear-interpolation percentile, `q` in `[0, 1]`. NaN for empty input.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    quantile(values, q)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

const PERCENTILES: [(&str, f64); 3] = [("p05", 0.05), ("p50", 0.5), ("p95", 0.95)];

struct Fig1Run {
    uniform_risk: f64,
    per_gamma: Vec<(f64, f64, Option<f64>, bool)>,
}

fn fig1_run(cfg: &ExperimentConfig, seed: u64, n: usize) -> Result<Fig1Run> {
    let task = sample_task_with_std(seed, cfg.component_std)?;
    let data = sample_uniform(&task, n, train_data_seed(seed, n))?;
    let (model, _) = train(&WeightedDataset::unweighted(data), &cfg.learner_for(seed, n))?;
    let pool = build_pool(&model, &task, cfg.pool_size, seed)?;
    let grid = BinGrid::new(cfg.cells_per_axis)?;
    let curve = dd_curve_on_pool(&pool, &cfg.gamma_grid, grid)?;
    let per_gamma = curve
        .results
        .iter()
        .map(|r| Ok((r.risk, dd_risk_bound(curve.pool_risk, r.gamma)?, r.achieved_gap, r.exhausted)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Fig1Run {
        uniform_risk: curve.pool_risk,
        per_gamma,
    })
}

/// Uniform-trained models across seeds and training-set sizes: pool uniform
/// risk, greedy DD risk and the analytic bound per `γ`.
pub fn run_fig1(cfg: &ExperimentConfig) -> Result<Sweep<Fig1Row>> {
    cfg.validate()?;
    let start = Instant::now();
    let jobs: Vec<(u64, usize)> = cfg.task_seeds().flat_map(|s| cfg.n_grid.iter().map(move |&n| (s, n))).collect();
    let outcomes: Vec<Result<Fig1Run>> = jobs.par_iter().map(|&(s, n)| fig1_run(cfg, s, n)).collect();
    let base = |seed: Option<u64>, n: usize, gamma: f64| Fig1Row {
        row: "run".into(),
        seed,
        n,
        gamma,
        pool_size: cfg.pool_size,
        cells_per_axis: cfg.cells_per_axis,
        train_steps: cfg.train_steps,
        hidden: cfg.hidden_label(),
        learning_rate: cfg.learner.learning_rate,
        batch_size: cfg.learner.batch_size,
        component_std: cfg.component_std,
        uniform_risk: f64::NAN,
        dd_risk_greedy: f64::NAN,
        dd_bound: f64::NAN,
        gamma_hat: None,
        exhausted: None,
        status: STATUS_OK.into(),
    };
    let mut rows = Vec::new();
    for (&(seed, n), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(run) => {
                for (&gamma, &(risk, bound, gap, exhausted)) in cfg.gamma_grid.iter().zip(&run.per_gamma) {
                    rows.push(Fig1Row {
                        uniform_risk: run.uniform_risk,
                        dd_risk_greedy: risk,
                        dd_bound: bound,
                        gamma_hat: gap,
                        exhausted: Some(exhausted),
                        ..base(Some(seed), n, gamma)
                    });
                }
            }
            Err(e) => {
                for &gamma in &cfg.gamma_grid {
                    rows.push(Fig1Row {
                        status: format!("error: {e}"),
                        ..base(Some(seed), n, gamma)
                    });
                }
            }
        }
    }
    let mut summaries = Vec::new();
    for &n in &cfg.n_grid {
        for &gamma in &cfg.gamma_grid {
            let ok: Vec<&Fig1Row> = rows.iter().filter(|r| r.n == n && r.gamma == gamma && r.status == STATUS_OK).collect();
            let col = |f: fn(&Fig1Row) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (u, d, b) = (col(|r| r.uniform_risk), col(|r| r.dd_risk_greedy), col(|r| r.dd_bound));
            for (label, q) in PERCENTILES {
                summaries.push(Fig1Row {
                    row: label.into(),
                    uniform_risk: percentile(&u, q),
                    dd_risk_greedy: percentile(&d, q),
                    dd_bound: percentile(&b, q),
                    ..base(None, n, gamma)
                });
            }
        }
    }
    Ok(Sweep {
        rows,
        summaries,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

struct Fig3Arm {
    uniform_risk: f64,
    dd_risk: f64,
    l1: f64,
    clipped: Option<usize>,
}

fn fig3_run(cfg: &ExperimentConfig, seed: u64, sigma: f64, n: usize) -> Result<[Fig3Arm; 2]> {
    let task = sample_task_with_std(seed, cfg.component_std)?;
    let data = sample_truncated_gaussian(&task, n, sigma, gaussian_data_seed(seed, n, sigma))?;
    let l1_grid = BinGrid::new(cfg.l1_cells_per_axis)?;
    let grid = BinGrid::new(cfg.cells_per_axis)?;
    let plain = WeightedDataset::unweighted(data.clone());
    let weighted = rebalance_cross_fitted(&data, |pts, s| cfg.density.fit(pts, s), &cfg.weighting, cfg.hold_out, seed)?;
    let learner = cfg.learner_for(seed, n);
    let arm = |wd: &WeightedDataset, clipped: Option<usize>| -> Result<Fig3Arm> {
        let (model, _) = train(wd, &learner)?;
        let pool = build_pool(&model, &task, cfg.pool_size, seed)?;
        let curve = dd_curve_on_pool(&pool, &[cfg.fig3_gamma], grid)?;
        Ok(Fig3Arm {
            uniform_risk: curve.pool_risk,
            dd_risk: curve.results[0].risk,
            l1: wd.l1_to_uniform(l1_grid)?,
            clipped,
        })
    };
    Ok([arm(&plain, None)?, arm(&weighted, Some(weighted.clipped))?])
}

fn density_label(d: &DensityChoice) -> String {
    match d {
        DensityChoice::Histogram { .. } => "histogram",
        DensityChoice::Kde { .. } => "kde",
        DensityChoice::Gmm(_) => "gmm",
    }
    .into()
}

/// Truncated-Gaussian training sets of varying width, each trained without
/// and with rebalancing; uniform risk and greedy DD risk at one `γ`.
pub fn run_fig3(cfg: &ExperimentConfig) -> Result<Sweep<Fig3Row>> {
    cfg.validate()?;
    let start = Instant::now();
    let mut jobs = Vec::new();
    for s in cfg.task_seeds() {
        for &n in &cfg.fig3_n_grid {
            for &sigma in &cfg.sigma_grid {
                jobs.push((s, sigma, n));
            }
        }
    }
    let outcomes: Vec<Result<[Fig3Arm; 2]>> = jobs.par_iter().map(|&(s, sigma, n)| fig3_run(cfg, s, sigma, n)).collect();
    let hold_out = match cfg.hold_out {
        HoldOut::CrossFit => "cross-fit",
        HoldOut::SameSet => "same-set",
    };
    let base = |seed: Option<u64>, sigma: f64, n: usize, rebalanced: bool| Fig3Row {
        row: "run".into(),
        seed,
        sigma,
        n,
        gamma: cfg.fig3_gamma,
        rebalanced,
        density: density_label(&cfg.density),
        tau: cfg.weighting.tau,
        beta_quantile: cfg.weighting.beta_quantile,
        hold_out: hold_out.into(),
        pool_size: cfg.pool_size,
        cells_per_axis: cfg.cells_per_axis,
        l1_cells_per_axis: cfg.l1_cells_per_axis,
        train_steps: cfg.train_steps,
        hidden: cfg.hidden_label(),
        learning_rate: cfg.learner.learning_rate,
        batch_size: cfg.learner.batch_size,
        component_std: cfg.component_std,
        uniform_risk: f64::NAN,
        dd_risk: f64::NAN,
        l1_to_uniform_weighted: f64::NAN,
        clipped: None,
        status: STATUS_OK.into(),
    };
    let mut rows = Vec::new();
    for (&(seed, sigma, n), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(arms) => {
                for (rebalanced, a) in [false, true].into_iter().zip(arms) {
                    rows.push(Fig3Row {
                        uniform_risk: a.uniform_risk,
                        dd_risk: a.dd_risk,
                        l1_to_uniform_weighted: a.l1,
                        clipped: a.clipped,
                        ..base(Some(seed), sigma, n, rebalanced)
                    });
                }
            }
            Err(e) => {
                for rebalanced in [false, true] {
                    rows.push(Fig3Row {
                        status: format!("error: {e}"),
                        ..base(Some(seed), sigma, n, rebalanced)
                    });
                }
            }
        }
    }
    let mut summaries = Vec::new();
    for &n in &cfg.fig3_n_grid {
        for &sigma in &cfg.sigma_grid {
            for rebalanced in [false, true] {
                let ok: Vec<&Fig3Row> = rows
                    .iter()
                    .filter(|r| r.n == n && r.sigma == sigma && r.rebalanced == rebalanced && r.status == STATUS_OK)
                    .collect();
                let col = |f: fn(&Fig3Row) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
                let (u, d, l) = (col(|r| r.uniform_risk), col(|r| r.dd_risk), col(|r| r.l1_to_uniform_weighted));
                for (label, q) in PERCENTILES {
                    summaries.push(Fig3Row {
                        row: label.into(),
                        uniform_risk: percentile(&u, q),
                        dd_risk: percentile(&d, q),
                        l1_to_uniform_weighted: percentile(&l, q),
                        ..base(None, sigma, n, rebalanced)
                    });
                }
            }
        }
    }
    Ok(Sweep {
        rows,
        summaries,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Commit of the working tree, when run inside a git checkout.
pub fn git_hash() -> Option<String> {
    let out = Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    if !out.status.success() {
        return None;
    }
    Some(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub git_hash: Option<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub started_unix: u64,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub failures: usize,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::invalid("config", e.to_string()))?;
        let started_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            git_hash: git_hash(),
            seed,
            config,
            started_unix,
            timings: BTreeMap::new(),
            outputs: Vec::new(),
            failures: 0,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
