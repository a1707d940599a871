//! Sweeps over `(n, seed)` cells: generate data, run a sampler, score the
//! draw and posterior-mean estimators, and write CSV/JSON results.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SamplerKind, TeacherConfig};
use crate::datagen::{sample_dataset, teacher_network, TeacherSpec};
use crate::error::{Error, Result};
use crate::estimators::default_lambda;
use crate::mala::{self, MalaConfig};
use crate::net::{Forward, ParamVector};
use crate::numeric::{mean_and_stderr, median, pairwise_sum, quantile};
use crate::objective::NetworkRisk;
use crate::prior::MixturePrior;
use crate::risk::{Dataset, EvalGrid};
use crate::rjmcmc;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "GSN_THREADS";

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: usize,
    pub seed: u64,
    pub sampler: String,
    /// `draw` (theta^(b)), `mean` (posterior mean of the kept draws) or
    /// `kept_draws` (average over the kept draws of their own excess risk).
    pub estimator: String,
    pub excess_risk: f64,
    pub excess_risk_stderr: f64,
    pub empirical_risk: f64,
    pub acceptance_rate: f64,
    pub median_cardinality: f64,
    pub wall_ms: u64,
}

/// Per-cell detail not carried by the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDetail {
    pub n: usize,
    pub seed: u64,
    pub lambda: f64,
    pub gamma: f64,
    pub proposal_std: f64,
    pub kept_cardinalities: Vec<usize>,
    pub draw_cardinality: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryGroup {
    pub sampler: String,
    pub estimator: String,
    pub n: usize,
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
    pub median_cardinality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub groups: Vec<SummaryGroup>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub teacher: TeacherSpec,
    pub rows: Vec<ResultRow>,
    pub details: Vec<CellDetail>,
    pub summary: Summary,
}

/// SplitMix64 finaliser; derives independent stream seeds from
/// `(seed, n, stream)`.
pub fn derive_seed(seed: u64, n: usize, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(n as u64 + 1))
        .wrapping_add(stream.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const DATA_STREAM: u64 = 1;
const CHAIN_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

/// Seed of the dataset drawn for cell `(n, seed)`.
pub fn data_seed(seed: u64, n: usize) -> u64 {
    derive_seed(seed, n, DATA_STREAM)
}

/// Generator for the chain's starting point in cell `(n, seed)`.
pub fn init_rng(seed: u64, n: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, n, INIT_STREAM))
}

pub fn build_teacher(cfg: &ExperimentConfig) -> Result<TeacherSpec> {
    let spec = match &cfg.teacher {
        TeacherConfig::Network { sparsity, seed } => teacher_network(&cfg.arch, *sparsity, *seed)?,
        TeacherConfig::Builtin { id } => TeacherSpec::hierarchical(id, cfg.arch.input_dim, cfg.noise)?,
    };
    Ok(TeacherSpec {
        clip: cfg.arch.clip,
        ..spec.with_noise(cfg.noise).with_input(cfg.input)
    })
}

/// Inverse temperature used for a dataset of size `n`.
pub fn resolve_lambda(cfg: &ExperimentConfig, n: usize) -> Result<f64> {
    match cfg.chain.lambda {
        Some(l) => Ok(l),
        None => {
            let (sigma, gamma_noise) = cfg.noise.moment_constants();
            Ok(default_lambda(n, cfg.arch.clip, sigma, gamma_noise)? * cfg.chain.lambda_scale)
        }
    }
}

pub fn chain_config(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<MalaConfig> {
    let c = &cfg.chain;
    let mc = MalaConfig {
        lambda: resolve_lambda(cfg, n)?,
        gamma: c.gamma,
        proposal_std: c.proposal_std,
        box_bound: cfg.arch.box_bound,
        burn_in: c.burn_in,
        gap: c.gap,
        n_keep: c.n_keep,
        seed: derive_seed(seed, n, CHAIN_STREAM),
        pilot: c.pilot,
    };
    mc.validate()?;
    Ok(mc)
}

/// Evaluation inputs shared by every cell of an experiment.
pub fn eval_grid(cfg: &ExperimentConfig, teacher: &TeacherSpec) -> Result<EvalGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval_seed);
    let p = cfg.arch.input_dim;
    let mut x = vec![0.0; cfg.eval_points * p];
    for row in x.chunks_exact_mut(p) {
        teacher.input.sample(&mut rng, row);
    }
    EvalGrid::new(p, x, teacher.truth())
}

struct ChainOutput {
    draw: ParamVector,
    draw_cardinality: usize,
    kept: Vec<ParamVector>,
    kept_cardinalities: Vec<usize>,
    acceptance_rate: f64,
    gamma: f64,
    proposal_std: f64,
}

fn run_chain(cfg: &ExperimentConfig, data: &Dataset, n: usize, seed: u64) -> Result<ChainOutput> {
    let arch = &cfg.arch;
    let model = NetworkRisk::new(arch, data)?;
    let mc = chain_config(cfg, n, seed)?;
    let mut init_rng = init_rng(seed, n);
    let dim = arch.param_count();
    match cfg.sampler {
        SamplerKind::Mala => {
            let init = mala::default_init(dim, arch.box_bound, &mut init_rng);
            let out = mala::run(&mc, &model, init)?;
            let nnz = |t: &ParamVector| t.iter().filter(|v| **v != 0.0).count();
            Ok(ChainOutput {
                draw_cardinality: nnz(&out.draw),
                kept_cardinalities: out.kept.iter().map(nnz).collect(),
                draw: out.draw,
                kept: out.kept,
                acceptance_rate: out.diagnostics.acceptance_rate,
                gamma: out.diagnostics.gamma,
                proposal_std: out.diagnostics.proposal_std,
            })
        }
        SamplerKind::Rjmcmc => {
            let prior = MixturePrior::with_base(dim, arch.box_bound, cfg.sparsity_base)?;
            let (init, active) = rjmcmc::default_init(&prior, cfg.chain.init_support, &mut init_rng);
            let out = rjmcmc::run(&mc, &prior, &model, init, active)?;
            Ok(ChainOutput {
                draw_cardinality: out.draw.1.len(),
                kept_cardinalities: out.kept.iter().map(|(_, a)| a.len()).collect(),
                draw: out.draw.0,
                kept: out.kept.into_iter().map(|(t, _)| t).collect(),
                acceptance_rate: out.diagnostics.acceptance_rate,
                gamma: out.diagnostics.gamma,
                proposal_std: out.diagnostics.proposal_std,
            })
        }
    }
}

/// Runs one `(n, seed)` cell and returns its three result rows.
pub fn run_cell(
    cfg: &ExperimentConfig,
    teacher: &TeacherSpec,
    grid: &EvalGrid,
    n: usize,
    seed: u64,
) -> Result<(Vec<ResultRow>, CellDetail)> {
    let start = Instant::now();
    let arch = &cfg.arch;
    let data = sample_dataset(teacher, n, data_seed(seed, n))?;
    let chain = run_chain(cfg, &data, n, seed)?;

    let mut fw = Forward::new(arch);
    let draw_pred = grid.predict(|x| fw.clipped(arch, &chain.draw, x));
    let kept_preds: Vec<Vec<f64>> = chain
        .kept
        .iter()
        .map(|t| grid.predict(|x| fw.clipped(arch, t, x)))
        .collect();
    let k = kept_preds.len() as f64;
    let mean_pred: Vec<f64> = (0..grid.len())
        .map(|i| kept_preds.iter().map(|p| p[i]).sum::<f64>() / k)
        .collect();
    // Per-point average of the kept draws' squared errors.
    let kept_sq: Vec<f64> = (0..grid.len())
        .map(|i| {
            let t = grid.truth()[i];
            kept_preds.iter().map(|p| (p[i] - t) * (p[i] - t)).sum::<f64>() / k
        })
        .collect();

    let (draw_excess, draw_se) = grid.excess_risk_of(&draw_pred)?;
    let (mean_excess, mean_se) = grid.excess_risk_of(&mean_pred)?;
    let (kept_excess, kept_se) = mean_and_stderr(&kept_sq);

    let draw_emp = arch.empirical_risk(&chain.draw, &data)?;
    let data_preds: Vec<Vec<f64>> = chain
        .kept
        .iter()
        .map(|t| data.rows().map(|(x, _)| fw.clipped(arch, t, x)).collect())
        .collect();
    let mean_sq: Vec<f64> = data
        .y()
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let f = data_preds.iter().map(|p| p[i]).sum::<f64>() / k;
            (f - y) * (f - y)
        })
        .collect();
    let mean_emp = pairwise_sum(&mean_sq) / data.len() as f64;
    let kept_emp = chain
        .kept
        .iter()
        .map(|t| arch.empirical_risk(t, &data))
        .sum::<Result<f64>>()?
        / k;

    let card: Vec<f64> = chain.kept_cardinalities.iter().map(|c| *c as f64).collect();
    let median_card = median(&card);
    let wall_ms = if cfg.output.wall_time {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let row = |estimator: &str, excess: f64, se: f64, emp: f64| ResultRow {
        n,
        seed,
        sampler: cfg.sampler.as_str().to_string(),
        estimator: estimator.to_string(),
        excess_risk: excess,
        excess_risk_stderr: se,
        empirical_risk: emp,
        acceptance_rate: chain.acceptance_rate,
        median_cardinality: median_card,
        wall_ms,
    };
    let rows = vec![
        row("draw", draw_excess, draw_se, draw_emp),
        row("mean", mean_excess, mean_se, mean_emp),
        row("kept_draws", kept_excess, kept_se, kept_emp),
    ];
    let detail = CellDetail {
        n,
        seed,
        lambda: resolve_lambda(cfg, n)?,
        gamma: chain.gamma,
        proposal_std: chain.proposal_std,
        kept_cardinalities: chain.kept_cardinalities,
        draw_cardinality: chain.draw_cardinality,
    };
    Ok((rows, detail))
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(Error::config(format!("{THREADS_ENV} must be positive")));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))
}

/// Runs every `(n, seed)` cell. Cells run in a worker pool; results are
/// returned in grid order (n-major, then seed).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let teacher = build_teacher(cfg)?;
    let grid = eval_grid(cfg, &teacher)?;
    let cells: Vec<(usize, u64)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let pool = worker_pool()?;
    let outputs: Vec<Result<(Vec<ResultRow>, CellDetail)>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, seed)| run_cell(cfg, &teacher, &grid, n, seed))
            .collect()
    });
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for out in outputs {
        let (r, d) = out?;
        rows.extend(r);
        details.push(d);
    }
    let summary = Summary {
        config: cfg.clone(),
        groups: summarize(&rows),
    };
    Ok(ExperimentResult {
        teacher,
        rows,
        details,
        summary,
    })
}

/// Median, quartiles and mean of the excess risk per
/// `(sampler, estimator, n)`, in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryGroup> {
    let mut keys: Vec<(String, String, usize)> = Vec::new();
    for r in rows {
        let key = (r.sampler.clone(), r.estimator.clone(), r.n);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(sampler, estimator, n)| {
            let sel: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.sampler == sampler && r.estimator == estimator && r.n == n)
                .collect();
            let ex: Vec<f64> = sel.iter().map(|r| r.excess_risk).collect();
            let card: Vec<f64> = sel.iter().map(|r| r.median_cardinality).collect();
            SummaryGroup {
                count: sel.len(),
                median: median(&ex),
                q1: quantile(&ex, 0.25),
                q3: quantile(&ex, 0.75),
                mean: ex.iter().sum::<f64>() / ex.len() as f64,
                median_cardinality: median(&card),
                sampler,
                estimator,
                n,
            }
        })
        .collect()
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(input: R) -> std::result::Result<Vec<ResultRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Sidecar metadata written next to every CSV artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunHeader<C> {
    pub tool: String,
    pub version: String,
    pub config: C,
}

impl<C: Serialize> RunHeader<C> {
    pub fn new(config: C) -> Self {
        RunHeader {
            tool: "gsn".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
        }
    }
}

/// `<path>.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_sidecar<C: Serialize>(config: C, csv_path: &Path) -> Result<()> {
    write_json(&RunHeader::new(config), &sidecar_path(csv_path))
}

/// Resolved config plus the per-cell lambda and tuned step sizes.
#[derive(Serialize)]
struct RunRecord<'a> {
    config: &'a ExperimentConfig,
    cells: &'a [CellDetail],
}

/// Writes `results.csv` (+ sidecar) and `summary.json` into the configured
/// output directory and returns their paths.
pub fn write_outputs(cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<(PathBuf, PathBuf)> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("results.csv");
    let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_rows(&result.rows, std::io::BufWriter::new(f)).map_err(|e| Error::csv(&csv_path, e))?;
    write_sidecar(
        RunRecord {
            config: cfg,
            cells: &result.details,
        },
        &csv_path,
    )?;
    let json_path = dir.join("summary.json");
    write_json(&result.summary, &json_path)?;
    Ok((csv_path, json_path))
}
