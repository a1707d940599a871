//! `gsn`: run experiments, single chains, self-checks and dataset export.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsn_core::datagen::{self, NoiseLaw};
use gsn_core::harness::checks::{self, Suite};
use gsn_core::harness::experiment::{self, RunHeader};
use gsn_core::harness::{ChainSettings, ExperimentConfig, OutputConfig, SamplerKind, TeacherConfig};
use gsn_core::net::Forward;
use gsn_core::{mala, rjmcmc, MixturePrior, NetworkArch, NetworkRisk};

#[derive(Parser)]
#[command(
    name = "gsn",
    version,
    about = "Gibbs-posterior sampling for sparse clipped ReLU networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock time per cell (makes output non-reproducible).
        #[arg(long)]
        wall_time: bool,
    },
    /// Run one chain and write its trace.
    Sample {
        /// Optional base config; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Sample size (defaults to the first entry of the config's n grid).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use this dataset instead of generating one.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Trace CSV.
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the kept draws as JSON.
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Check closed forms and sampler identities on random instances.
    Check {
        /// kl, dv, lipschitz, balance or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export a synthetic dataset as CSV.
    Gen {
        /// builtin:<a|b|c> or network:<sparsity>[:<seed>].
        #[arg(long)]
        teacher: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        arch: ArchArgs,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args, Default)]
struct ArchArgs {
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    box_bound: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
}

impl ArchArgs {
    fn apply(&self, arch: &mut NetworkArch) {
        if let Some(v) = self.input_dim {
            arch.input_dim = v;
        }
        if let Some(v) = self.hidden_layers {
            arch.hidden_layers = v;
        }
        if let Some(v) = self.width {
            arch.width = v;
        }
        if let Some(v) = self.box_bound {
            arch.box_bound = v;
        }
        if let Some(v) = self.clip {
            arch.clip = v;
        }
    }
}

#[derive(Args, Default)]
struct NoiseArgs {
    /// Gaussian noise standard deviation.
    #[arg(long, conflicts_with = "noise_uniform")]
    noise_sigma: Option<f64>,
    /// Uniform noise on [-a, a].
    #[arg(long)]
    noise_uniform: Option<f64>,
}

impl NoiseArgs {
    fn resolve(&self) -> Option<NoiseLaw> {
        match (self.noise_sigma, self.noise_uniform) {
            (Some(sigma), _) => Some(NoiseLaw::Gaussian { sigma }),
            (None, Some(half_width)) => Some(NoiseLaw::Uniform { half_width }),
            (None, None) => None,
        }
    }
}

#[derive(Args, Default)]
struct Overrides {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long)]
    teacher: Option<String>,
    #[arg(long)]
    sampler: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_scale: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    gap: Option<usize>,
    #[arg(long)]
    n_keep: Option<usize>,
    /// Skip pilot tuning of the step size.
    #[arg(long)]
    no_pilot: bool,
    #[arg(long)]
    eval_points: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> gsn_core::Result<()> {
        self.arch.apply(&mut cfg.arch);
        if let Some(noise) = self.noise.resolve() {
            cfg.noise = noise;
        }
        if let Some(t) = &self.teacher {
            cfg.teacher = t.parse()?;
        }
        if let Some(s) = &self.sampler {
            cfg.sampler = s.parse()?;
        }
        if let Some(v) = &self.n_grid {
            cfg.n_grid = v.clone();
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        let c = &mut cfg.chain;
        if self.lambda.is_some() {
            c.lambda = self.lambda;
        }
        if let Some(v) = self.lambda_scale {
            c.lambda_scale = v;
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.burn_in {
            c.burn_in = v;
        }
        if let Some(v) = self.gap {
            c.gap = v;
        }
        if let Some(v) = self.n_keep {
            c.n_keep = v;
        }
        if self.no_pilot {
            c.pilot = None;
        }
        if let Some(v) = self.eval_points {
            cfg.eval_points = v;
        }
        cfg.validate()
    }
}

/// Settings used by `sample` when no config file is given.
fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        name: "sample".into(),
        arch: NetworkArch {
            input_dim: 3,
            hidden_layers: 1,
            width: 4,
            box_bound: 1.0,
            clip: 1.0,
        },
        teacher: TeacherConfig::Builtin { id: "a".into() },
        noise: NoiseLaw::Gaussian { sigma: 0.1 },
        input: datagen::InputLaw::Uniform,
        sampler: SamplerKind::Mala,
        sparsity_base: 2.0,
        chain: ChainSettings {
            burn_in: 1000,
            gap: 10,
            ..ChainSettings::default()
        },
        n_grid: vec![200],
        seeds: vec![0],
        eval_points: 20_000,
        eval_seed: 0x5eed,
        output: OutputConfig::default(),
    }
}

fn run(config: PathBuf, overrides: Overrides, out: Option<PathBuf>, wall_time: bool) -> gsn_core::Result<()> {
    let mut cfg = ExperimentConfig::from_file(&config)?;
    overrides.apply(&mut cfg)?;
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    cfg.output.wall_time |= wall_time;
    let result = experiment::run_experiment(&cfg)?;
    let (csv, json) = experiment::write_outputs(&cfg, &result)?;
    println!(
        "{:<8} {:<11} {:>6} {:>12} {:>12} {:>12} {:>8}",
        "sampler", "estimator", "n", "median", "q1", "q3", "card"
    );
    for g in &result.summary.groups {
        println!(
            "{:<8} {:<11} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.1}",
            g.sampler, g.estimator, g.n, g.median, g.q1, g.q3, g.median_cardinality
        );
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct SampleRecord<'a> {
    config: &'a ExperimentConfig,
    n: usize,
    seed: u64,
    data: Option<&'a PathBuf>,
    lambda: f64,
}

#[allow(clippy::too_many_arguments)]
fn sample(
    config: Option<PathBuf>,
    overrides: Overrides,
    n: Option<usize>,
    seed: u64,
    data_path: Option<PathBuf>,
    output: PathBuf,
    draws_path: Option<PathBuf>,
) -> gsn_core::Result<()> {
    let mut cfg = match &config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => default_config(),
    };
    overrides.apply(&mut cfg)?;
    let teacher = experiment::build_teacher(&cfg)?;
    let data = match &data_path {
        Some(p) => datagen::read_dataset_file(p)?,
        None => {
            let n = n.unwrap_or(cfg.n_grid[0]);
            datagen::sample_dataset(&teacher, n, experiment::data_seed(seed, n))?
        }
    };
    let n = data.len();
    let arch = cfg.arch;
    let model = NetworkRisk::new(&arch, &data)?;
    let mc = experiment::chain_config(&cfg, n, seed)?;
    let mut init_rng = experiment::init_rng(seed, n);

    let (draw, kept, acceptance) = match cfg.sampler {
        SamplerKind::Mala => {
            let init = mala::default_init(arch.param_count(), arch.box_bound, &mut init_rng);
            let out = mala::run(&mc, &model, init)?;
            mala::write_trace_file(&out.diagnostics.trace, &output)?;
            (out.draw, out.kept, out.diagnostics.acceptance_rate)
        }
        SamplerKind::Rjmcmc => {
            let prior = MixturePrior::with_base(arch.param_count(), arch.box_bound, cfg.sparsity_base)?;
            let (init, active) = rjmcmc::default_init(&prior, cfg.chain.init_support, &mut init_rng);
            let out = rjmcmc::run(&mc, &prior, &model, init, active)?;
            rjmcmc::write_sparsity_trace_file(&out.sparsity_trace, &output)?;
            (
                out.draw.0,
                out.kept.into_iter().map(|(t, _)| t).collect(),
                out.diagnostics.acceptance_rate,
            )
        }
    };
    experiment::write_sidecar(
        SampleRecord {
            config: &cfg,
            n,
            seed,
            data: data_path.as_ref(),
            lambda: mc.lambda,
        },
        &output,
    )?;
    if let Some(p) = &draws_path {
        experiment::write_json(&RunHeader::new(&kept), p)?;
    }

    let grid = experiment::eval_grid(&cfg, &teacher)?;
    let mut fw = Forward::new(&arch);
    let (draw_excess, _) = grid.excess_risk(|x| fw.clipped(&arch, &draw, x))?;
    let mean = gsn_core::estimators::PosteriorMean::new(&arch, kept)?;
    let (mean_excess, _) = grid.excess_risk(mean.predictor(&arch))?;
    println!(
        "sampler={} n={} lambda={:.4} acceptance={:.3} empirical_risk={:.6} excess_draw={:.6} excess_mean={:.6}",
        cfg.sampler.as_str(),
        n,
        mc.lambda,
        acceptance,
        arch.empirical_risk(&draw, &data)?,
        draw_excess,
        mean_excess
    );
    Ok(())
}

fn check(suite: &str, cases: usize, seed: u64) -> gsn_core::Result<bool> {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![suite.parse()?]
    };
    let mut ok = true;
    for s in suites {
        let r = checks::run_suite(s, cases, seed)?;
        println!(
            "{:<10} cases={:<5} max_deviation={:.3e} {}",
            s.as_str(),
            r.cases,
            r.max_deviation,
            if r.passed() { "ok" } else { "FAIL" }
        );
        ok &= r.passed();
    }
    Ok(ok)
}

#[derive(serde::Serialize)]
struct GenRecord<'a> {
    teacher: &'a datagen::TeacherSpec,
    n: usize,
    seed: u64,
}

fn gen(
    teacher: &str,
    n: usize,
    seed: u64,
    arch_args: ArchArgs,
    noise: NoiseArgs,
    output: PathBuf,
) -> gsn_core::Result<()> {
    let noise = noise.resolve().unwrap_or(NoiseLaw::Gaussian { sigma: 0.1 });
    let spec = match teacher.parse::<TeacherConfig>()? {
        TeacherConfig::Builtin { id } => {
            let p = arch_args
                .input_dim
                .unwrap_or(datagen::Builtin::from_id(&id)?.min_input_dim());
            datagen::TeacherSpec::hierarchical(&id, p, noise)?
        }
        TeacherConfig::Network { sparsity, seed: tseed } => {
            let mut arch = default_config().arch;
            arch_args.apply(&mut arch);
            arch.validate()?;
            datagen::teacher_network(&arch, sparsity, tseed)?.with_noise(noise)
        }
    };
    let data = datagen::sample_dataset(&spec, n, seed)?;
    datagen::write_dataset_file(&data, &output)?;
    experiment::write_sidecar(
        GenRecord {
            teacher: &spec,
            n,
            seed,
        },
        &output,
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            overrides,
            out,
            wall_time,
        } => run(config, overrides, out, wall_time).map(|_| true),
        Command::Sample {
            config,
            overrides,
            n,
            seed,
            data,
            output,
            draws,
        } => sample(config, overrides, n, seed, data, output, draws).map(|_| true),
        Command::Check { suite, cases, seed } => check(&suite, cases, seed),
        Command::Gen {
            teacher,
            n,
            seed,
            arch,
            noise,
            output,
        } => gen(&teacher, n, seed, arch, noise, output).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
