use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LayerSpec};
use super::experiment::{prepare_run, train_sequence, HeadInit, Pools, RunResult};
use crate::error::{Error, Result, ResultExt};
use crate::metrics::{self, ridge_sign_fit};
use crate::output_head::HeadConfig;

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean and sample standard deviation of a metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: std_dev(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAblationRow {
    pub n_blocks: usize,
    pub block_size: usize,
    pub acc: Stat,
    pub bwt: Stat,
    pub fwt: Stat,
    pub runs: Vec<RunResult>,
}

/// Runs the experiment once per first-layer layout in `grid`; rows come
/// back sorted by mean ACC, best first.
pub fn run_ablation_node_blocks(config: &ExperimentConfig, grid: &[(usize, usize)]) -> Result<Vec<BlockAblationRow>> {
    let Some(&(n0, s0)) = grid.first() else {
        return Err(Error::Argument("node-block grid is empty".into()));
    };
    if let Some(&(n, s)) = grid.iter().find(|&&(n, s)| n * s != n0 * s0 || n * s == 0) {
        return Err(Error::Argument(format!(
            "grid entry ({n}, {s}) has width {}, expected {}",
            n * s,
            n0 * s0
        )));
    }
    config.validate()?;
    let pools = Pools::load(config)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &(n_blocks, block_size) in grid {
        let mut cfg = config.clone();
        cfg.layers[0] = LayerSpec { n_blocks, block_size };
        let runs = super::experiment::run_variants_on(&cfg, &pools, &[cfg.variant])
            .context(|| format!("node blocks ({n_blocks}, {block_size})"))?;
        let pick = |f: fn(&RunResult) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(f).collect() };
        rows.push(BlockAblationRow {
            n_blocks,
            block_size,
            acc: Stat::of(&pick(|r| Some(r.acc))),
            bwt: Stat::of(&pick(|r| r.bwt)),
            fwt: Stat::of(&pick(|r| r.fwt)),
            runs,
        });
    }
    rows.sort_by(|a, b| b.acc.mean.total_cmp(&a.acc.mean));
    Ok(rows)
}

/// One initialization strategy at one learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSetting {
    /// `None` for random initialization, otherwise the analytic batch size.
    pub analytic_rows: Option<usize>,
    pub eta: f64,
}

impl InitSetting {
    pub fn label(&self) -> String {
        match self.analytic_rows {
            None => "random".into(),
            Some(n) => format!("analytic-{n}"),
        }
    }
}

/// The settings compared by default: random init at two rates and analytic
/// init on three batch sizes.
pub fn default_init_settings() -> Vec<InitSetting> {
    vec![
        InitSetting { analytic_rows: None, eta: 0.02 },
        InitSetting { analytic_rows: None, eta: 0.002 },
        InitSetting { analytic_rows: Some(1000), eta: 0.002 },
        InitSetting { analytic_rows: Some(1000), eta: 0.0002 },
        InitSetting { analytic_rows: Some(2500), eta: 0.0002 },
        InitSetting { analytic_rows: Some(5000), eta: 0.0002 },
    ]
}

pub const INIT_ABLATION_EPOCHS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitAblationRow {
    pub setting: String,
    pub analytic_rows: Option<usize>,
    pub eta: f64,
    pub epochs: usize,
    /// Task-1 training loss right after task 1.
    pub task1_loss: Stat,
    /// Task-1 test accuracy right after task 1.
    pub task1_acc: Stat,
    /// Final ACC over all tasks.
    pub acc_all: Stat,
}

/// Compares task-1 initializations using `config.variant`'s training rule.
pub fn run_ablation_init(
    config: &ExperimentConfig,
    settings: &[InitSetting],
    epochs: &[usize],
) -> Result<Vec<InitAblationRow>> {
    config.validate()?;
    let pools = Pools::load(config)?;
    let cfg = ExperimentConfig {
        independent_models: false,
        ..config.clone()
    };
    let prepared: Vec<_> = (0..cfg.runs)
        .map(|r| prepare_run(&cfg, &pools, r).context(|| format!("run {r}")))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for setting in settings {
        for &e in epochs {
            let head = HeadConfig {
                eta: setting.eta,
                epochs: e,
                ..cfg.head
            };
            let init = match setting.analytic_rows {
                Some(rows) => HeadInit::Analytic { rows },
                None => HeadInit::Random,
            };
            let (mut loss, mut t1, mut all) = (Vec::new(), Vec::new(), Vec::new());
            for p in &prepared {
                let trained = train_sequence(cfg.variant, &p.reps, &head, init, p.seeds.shuffle_seed)
                    .context(|| format!("{} at eta {} for {e} epochs", setting.label(), setting.eta))?;
                loss.push(trained.task1_loss);
                t1.push(trained.accuracy.rows()[0][0]);
                all.push(metrics::acc(&trained.accuracy)?);
            }
            rows.push(InitAblationRow {
                setting: setting.label(),
                analytic_rows: setting.analytic_rows,
                eta: setting.eta,
                epochs: e,
                task1_loss: Stat::of(&loss),
                task1_acc: Stat::of(&t1),
                acc_all: Stat::of(&all),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherCurve {
    pub run_index: usize,
    pub label_seed: u64,
    pub per_task: Vec<f64>,
    /// Running sum after each training session.
    pub accumulated: Vec<f64>,
}

/// Accumulated Rademacher estimate over the training sessions of each run,
/// using the training representations of every task seen so far.
pub fn run_rademacher_curve(config: &ExperimentConfig) -> Result<Vec<RademacherCurve>> {
    config.validate()?;
    let pools = Pools::load(config)?;
    let cfg = ExperimentConfig {
        independent_models: false,
        ..config.clone()
    };
    let mut curves = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let p = prepare_run(&cfg, &pools, run).context(|| format!("run {run}"))?;
        let views: Vec<_> = p.reps.iter().map(|r| r.v_train.view()).collect();
        let label_seed = cfg.seeds.label_seed.wrapping_add(run as u64);
        let est = metrics::rademacher_estimate(ridge_sign_fit(cfg.head.mu), &views, cfg.rademacher_draws, label_seed)?;
        curves.push(RademacherCurve {
            run_index: run,
            label_seed,
            accumulated: est.accumulated(),
            per_task: est.per_task_values,
        });
    }
    Ok(curves)
}

/// The node-block grid with 100 units in the first layer.
pub const DEFAULT_BLOCK_GRID: [(usize, usize); 6] = [(100, 1), (50, 2), (25, 4), (10, 10), (5, 20), (1, 100)];

