use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ddrisk::adversarial::{build_pool, dd_curve_on_pool, greedy_adversarial, write_results_csv, DEFAULT_POOL_SIZE};
use ddrisk::bounds::{dd_risk_bound_detail, dd_risk_exact};
use ddrisk::density::{DensityChoice, LogDensity};
use ddrisk::harness::{run_fig1, run_fig3, ExperimentConfig, RunManifest};
use ddrisk::learner::{record_final_eval, train, Mlp, TrainConfig, TrainTrace};
use ddrisk::rebalance::{rebalance_cross_fitted, HoldOut, WeightConfig, WeightedDataset};
use ddrisk::tasks::{
    grid_uniform_risk, sample_task_with_std, sample_truncated_gaussian, sample_uniform, GaussianMixtureTask,
    DEFAULT_COMPONENT_STD,
};
use ddrisk::{BinGrid, Dataset, Point2};

#[derive(Parser)]
#[command(name = "ddrisk", version, about = "Entropy-constrained worst-case risk experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random draw in the command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML or JSON config file, chosen by extension.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a mixture task, optionally with a training set.
    GenTask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        component_std: Option<f64>,
        /// Also draw a training set of this size.
        #[arg(long)]
        n: Option<usize>,
        /// Truncated-Gaussian width for the training set; uniform if omitted.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train a classifier, with or without rebalancing.
    Train {
        #[command(flatten)]
        common: Common,
        /// Task JSON; sampled from the seed if omitted.
        #[arg(long)]
        task: Option<PathBuf>,
        /// Training CSV (x,y,label); sampled if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        rebalance: bool,
    },
    /// Uniform and DD risk of a saved model.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        task: Option<PathBuf>,
        /// Training trace to replay the recorded final risk against.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Exact DD risk and its bound for an error volume and entropy gap.
    Bound {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        gamma: f64,
    },
    /// Greedy adversarial selection for a saved model.
    Adversarial {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<f64>,
    },
    /// Fit a density model to a training set.
    DensityFit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// DD risk against training-set size.
    Fig1 {
        #[command(flatten)]
        common: Common,
    },
    /// DD risk against training-distribution width, with and without rebalancing.
    Fig3 {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct GenTaskConfig {
    component_std: f64,
    n: Option<usize>,
    sigma: Option<f64>,
}

impl Default for GenTaskConfig {
    fn default() -> Self {
        Self {
            component_std: DEFAULT_COMPONENT_STD,
            n: None,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct TrainCmdConfig {
    component_std: f64,
    n: usize,
    sigma: Option<f64>,
    rebalance: bool,
    weighting: WeightConfig,
    density: DensityChoice,
    hold_out: HoldOut,
    learner: TrainConfig,
    /// Overrides `learner.epochs` with a step budget when set.
    train_steps: Option<usize>,
    eval_resolution: usize,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            component_std: DEFAULT_COMPONENT_STD,
            n: 1000,
            sigma: None,
            rebalance: false,
            weighting: WeightConfig::default(),
            density: DensityChoice::default(),
            hold_out: HoldOut::CrossFit,
            learner: TrainConfig::default(),
            train_steps: Some(4000),
            eval_resolution: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct EvalConfig {
    component_std: f64,
    eval_resolution: usize,
    gammas: Vec<f64>,
    pool_size: usize,
    cells_per_axis: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            component_std: DEFAULT_COMPONENT_STD,
            eval_resolution: 200,
            gammas: vec![0.25, 0.5, 0.99, 2.0],
            pool_size: DEFAULT_POOL_SIZE,
            cells_per_axis: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct DensityFitConfig {
    component_std: f64,
    n: usize,
    sigma: f64,
    density: DensityChoice,
    /// Resolution of the log-density grid written alongside the model.
    grid_resolution: usize,
}

impl Default for DensityFitConfig {
    fn default() -> Self {
        Self {
            component_std: DEFAULT_COMPONENT_STD,
            n: 500,
            sigma: 0.2,
            density: DensityChoice::default(),
            grid_resolution: 50,
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).with_context(|| format!("parsing TOML config {}", path.display())),
        Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing JSON config {}", path.display())),
        _ => bail!("config {} must end in .toml or .json", path.display()),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn out_dir(common: &Common) -> Result<Option<PathBuf>> {
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(common.out.clone())
}

fn load_task(path: Option<&PathBuf>, seed: u64, component_std: f64) -> Result<GaussianMixtureTask> {
    match path {
        Some(p) => read_json(p),
        None => Ok(sample_task_with_std(seed, component_std)?),
    }
}

fn sample_data(task: &GaussianMixtureTask, n: usize, sigma: Option<f64>, seed: u64) -> Result<Dataset> {
    Ok(match sigma {
        Some(s) => sample_truncated_gaussian(task, n, s, seed)?,
        None => sample_uniform(task, n, seed)?,
    })
}

/// Records timings and outputs, then writes `manifest.json` into the output directory.
struct Recorder {
    manifest: RunManifest,
    start: Instant,
    dir: Option<PathBuf>,
}

impl Recorder {
    fn new(command: &str, common: &Common, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            manifest: RunManifest::new(command, common.seed, config)?,
            start: Instant::now(),
            dir: out_dir(common)?,
        })
    }

    fn path(&mut self, name: &str) -> Option<PathBuf> {
        let p = self.dir.as_ref()?.join(name);
        self.manifest.outputs.push(name.to_string());
        Some(p)
    }

    fn finish(mut self) -> Result<()> {
        self.manifest
            .timings
            .insert("total_secs".into(), self.start.elapsed().as_secs_f64());
        if let Some(dir) = &self.dir {
            self.manifest.write(&dir.join("manifest.json"))?;
        }
        Ok(())
    }
}

fn gen_task(common: &Common, component_std: Option<f64>, n: Option<usize>, sigma: Option<f64>) -> Result<()> {
    let mut cfg: GenTaskConfig = load_config(common.config.as_deref())?;
    cfg.component_std = component_std.unwrap_or(cfg.component_std);
    cfg.n = n.or(cfg.n);
    cfg.sigma = sigma.or(cfg.sigma);
    let mut rec = Recorder::new("gen-task", common, &cfg)?;
    let task = sample_task_with_std(common.seed, cfg.component_std)?;
    match rec.path("task.json") {
        Some(p) => write_json(&p, &task)?,
        None => println!("{}", serde_json::to_string_pretty(&task)?),
    }
    if let Some(n) = cfg.n {
        let data = sample_data(&task, n, cfg.sigma, common.seed)?;
        match rec.path("data.csv") {
            Some(p) => data.write_csv(fs::File::create(p)?)?,
            None => data.write_csv(std::io::stdout())?,
        }
    }
    rec.finish()
}

fn train_cmd(
    common: &Common,
    task_path: Option<&PathBuf>,
    data_path: Option<&PathBuf>,
    n: Option<usize>,
    sigma: Option<f64>,
    rebalance: bool,
) -> Result<()> {
    let mut cfg: TrainCmdConfig = load_config(common.config.as_deref())?;
    cfg.n = n.unwrap_or(cfg.n);
    cfg.sigma = sigma.or(cfg.sigma);
    cfg.rebalance |= rebalance;
    cfg.learner.seed = common.seed;
    let mut rec = Recorder::new("train", common, &cfg)?;
    let task = load_task(task_path, common.seed, cfg.component_std)?;
    let data = match data_path {
        Some(p) => Dataset::read_csv(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?, common.seed)?,
        None => sample_data(&task, cfg.n, cfg.sigma, common.seed)?,
    };
    let wd = if cfg.rebalance {
        rebalance_cross_fitted(&data, |pts, s| cfg.density.fit(pts, s), &cfg.weighting, cfg.hold_out, common.seed)?
    } else {
        WeightedDataset::unweighted(data)
    };
    let mut learner = cfg.learner.clone();
    if let Some(steps) = cfg.train_steps {
        learner.epochs = learner.epochs_for_steps(wd.len(), steps);
    }
    let t0 = Instant::now();
    let (model, mut trace) = train(&wd, &learner)?;
    rec.manifest.timings.insert("train_secs".into(), t0.elapsed().as_secs_f64());
    let risk = record_final_eval(&model, &task, cfg.eval_resolution, &mut trace);
    println!("final_weighted_loss\t{}", trace.final_loss());
    println!("uniform_risk\t{risk}");
    println!("wdl2\t{}", model.wdl2());
    if let Some(p) = rec.path("model.json") {
        write_json(&p, &model)?;
    }
    if let Some(p) = rec.path("trace.json") {
        write_json(&p, &trace)?;
    }
    if let Some(p) = rec.path("task.json") {
        write_json(&p, &task)?;
    }
    if let Some(p) = rec.path("train_data.csv") {
        wd.write_csv(fs::File::create(p)?)?;
    }
    rec.finish()
}

fn evaluate_cmd(common: &Common, model_path: &Path, task_path: Option<&PathBuf>, trace_path: Option<&PathBuf>) -> Result<()> {
    let cfg: EvalConfig = load_config(common.config.as_deref())?;
    let mut rec = Recorder::new("evaluate", common, &cfg)?;
    let model: Mlp = read_json(model_path)?;
    let task = load_task(task_path, common.seed, cfg.component_std)?;
    let risk = grid_uniform_risk(&model, &task, cfg.eval_resolution);
    println!("uniform_risk\t{risk}");
    if let Some(tp) = trace_path {
        let trace: TrainTrace = read_json(tp)?;
        match trace.final_eval {
            Some(recorded) if recorded == risk => println!("replay\tmatch"),
            Some(recorded) => bail!("replayed risk {risk} differs from recorded {recorded}"),
            None => println!("replay\tno recorded risk"),
        }
    }
    let mut gammas = cfg.gammas.clone();
    gammas.sort_by(f64::total_cmp);
    let pool = build_pool(&model, &task, cfg.pool_size, common.seed)?;
    let curve = dd_curve_on_pool(&pool, &gammas, BinGrid::new(cfg.cells_per_axis)?)?;
    let bounds = curve.bounds()?;
    println!("gamma\tdd_risk_greedy\tdd_bound");
    for (r, b) in curve.results.iter().zip(&bounds) {
        println!("{}\t{}\t{}", r.gamma, r.risk, b);
    }
    if let Some(p) = rec.path("evaluate.csv") {
        let mut w = csv_writer(&p)?;
        w.write_record(["gamma", "grid_uniform_risk", "pool_uniform_risk", "dd_risk_greedy", "dd_bound", "gamma_hat", "exhausted"])?;
        for (r, b) in curve.results.iter().zip(&bounds) {
            w.write_record([
                r.gamma.to_string(),
                risk.to_string(),
                curve.pool_risk.to_string(),
                r.risk.to_string(),
                b.to_string(),
                r.achieved_gap.map(|g| g.to_string()).unwrap_or_default(),
                r.exhausted.to_string(),
            ])?;
        }
        w.flush()?;
    }
    rec.finish()
}

fn csv_writer(p: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(p).with_context(|| format!("creating {}", p.display()))
}

fn bound_cmd(common: &Common, r: f64, gamma: f64) -> Result<()> {
    #[derive(Serialize)]
    struct BoundArgs {
        r: f64,
        gamma: f64,
    }
    let mut rec = Recorder::new("bound", common, &BoundArgs { r, gamma })?;
    let exact = dd_risk_exact(r, gamma)?;
    let detail = dd_risk_bound_detail(r, gamma)?;
    println!("dd_risk_exact\t{exact}");
    println!("dd_risk_bound\t{}", detail.value);
    println!("additive_branch\t{}", detail.additive);
    if let (Some(a), Some(v)) = (detail.alpha, detail.alpha_branch) {
        println!("alpha\t{a}");
        println!("alpha_branch\t{v}");
    }
    if let Some(p) = rec.path("bound.csv") {
        let mut w = csv_writer(&p)?;
        w.write_record(["r", "gamma", "dd_risk_exact", "dd_risk_bound", "additive_branch", "alpha", "alpha_branch"])?;
        w.write_record([
            r.to_string(),
            gamma.to_string(),
            exact.to_string(),
            detail.value.to_string(),
            detail.additive.to_string(),
            detail.alpha.map(|a| a.to_string()).unwrap_or_default(),
            detail.alpha_branch.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
        w.flush()?;
    }
    rec.finish()
}

fn adversarial_cmd(common: &Common, model_path: &Path, task_path: Option<&PathBuf>, gammas: &[f64]) -> Result<()> {
    let mut cfg: EvalConfig = load_config(common.config.as_deref())?;
    if !gammas.is_empty() {
        cfg.gammas = gammas.to_vec();
    }
    let mut rec = Recorder::new("adversarial", common, &cfg)?;
    let model: Mlp = read_json(model_path)?;
    let task = load_task(task_path, common.seed, cfg.component_std)?;
    let pool = build_pool(&model, &task, cfg.pool_size, common.seed)?;
    let grid = BinGrid::new(cfg.cells_per_axis)?;
    let results = cfg
        .gammas
        .iter()
        .map(|&g| greedy_adversarial(&pool, g, grid))
        .collect::<ddrisk::Result<Vec<_>>>()?;
    match rec.path("adversarial.csv") {
        Some(p) => write_results_csv(&results, fs::File::create(p)?)?,
        None => write_results_csv(&results, std::io::stdout())?,
    }
    if results.iter().any(|r| r.exhausted) {
        eprintln!("warning: candidates exhausted before reaching the entropy constraint for some gamma");
    }
    rec.finish()
}

fn density_fit_cmd(common: &Common, data_path: Option<&PathBuf>, n: Option<usize>, sigma: Option<f64>) -> Result<()> {
    let mut cfg: DensityFitConfig = load_config(common.config.as_deref())?;
    cfg.n = n.unwrap_or(cfg.n);
    cfg.sigma = sigma.unwrap_or(cfg.sigma);
    let mut rec = Recorder::new("density-fit", common, &cfg)?;
    let points: Vec<Point2> = match data_path {
        Some(p) => Dataset::read_csv(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?, common.seed)?.points(),
        None => {
            let task = sample_task_with_std(common.seed, cfg.component_std)?;
            sample_truncated_gaussian(&task, cfg.n, cfg.sigma, common.seed)?.points()
        }
    };
    let model = cfg.density.fit(&points, common.seed)?;
    let mean_ll = points.iter().map(|p| model.log_density(*p)).sum::<f64>() / points.len() as f64;
    println!("mean_log_density\t{mean_ll}");
    match rec.path("density.json") {
        Some(p) => write_json(&p, &model)?,
        None => println!("{}", serde_json::to_string_pretty(&model)?),
    }
    if let Some(p) = rec.path("density_grid.csv") {
        let mut w = csv_writer(&p)?;
        w.write_record(["x", "y", "log_density"])?;
        let res = cfg.grid_resolution.max(1);
        for j in 0..res {
            for i in 0..res {
                let q = Point2::clamped((i as f64 + 0.5) / res as f64, (j as f64 + 0.5) / res as f64);
                w.write_record([q.x().to_string(), q.y().to_string(), model.log_density(q).to_string()])?;
            }
        }
        w.flush()?;
    }
    rec.finish()
}

fn sweep_cmd(common: &Common, fig3: bool) -> Result<()> {
    let mut cfg: ExperimentConfig = load_config(common.config.as_deref())?;
    cfg.base_seed = common.seed;
    cfg.experiment = if fig3 {
        ddrisk::harness::Experiment::Fig3
    } else {
        ddrisk::harness::Experiment::Fig1
    };
    let name = if fig3 { "fig3" } else { "fig1" };
    let mut rec = Recorder::new(name, common, &cfg)?;
    let file = format!("{name}.csv");
    let (failures, elapsed) = if fig3 {
        let s = run_fig3(&cfg)?;
        match rec.path(&file) {
            Some(p) => s.write_csv_file(&p)?,
            None => s.write_csv(std::io::stdout())?,
        }
        (s.failures(), s.elapsed_secs)
    } else {
        let s = run_fig1(&cfg)?;
        match rec.path(&file) {
            Some(p) => s.write_csv_file(&p)?,
            None => s.write_csv(std::io::stdout())?,
        }
        (s.failures(), s.elapsed_secs)
    };
    rec.manifest.timings.insert("sweep_secs".into(), elapsed);
    rec.manifest.failures = failures;
    rec.finish()?;
    if failures > 0 {
        bail!("{failures} runs failed; their rows are marked in the CSV status column");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Cmd::GenTask {
            common,
            component_std,
            n,
            sigma,
        } => gen_task(common, *component_std, *n, *sigma),
        Cmd::Train {
            common,
            task,
            data,
            n,
            sigma,
            rebalance,
        } => train_cmd(common, task.as_ref(), data.as_ref(), *n, *sigma, *rebalance),
        Cmd::Evaluate {
            common,
            model,
            task,
            trace,
        } => evaluate_cmd(common, model, task.as_ref(), trace.as_ref()),
        Cmd::Bound { common, r, gamma } => bound_cmd(common, *r, *gamma),
        Cmd::Adversarial {
            common,
            model,
            task,
            gamma,
        } => adversarial_cmd(common, model, task.as_ref(), gamma),
        Cmd::DensityFit { common, data, n, sigma } => density_fit_cmd(common, data.as_ref(), *n, *sigma),
        Cmd::Fig1 { common } => sweep_cmd(common, false),
        Cmd::Fig3 { common } => sweep_cmd(common, true),
    }
}
