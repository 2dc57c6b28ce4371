use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use polyirt_core::eval::{self, BenchmarkResult};
use polyirt_core::infotools::{self, DEFAULT_RESOLUTION};
use polyirt_core::rng::derive_seed;
use polyirt_core::sampler::{self, PosteriorSummary};
use polyirt_core::{
    synthgen, AcceptanceMode, Error, FitConfig, Hyperparams, Initialization, ModelKind, ModelParams, ResponseMatrix,
    SpriteParams,
};

#[derive(Parser)]
#[command(name = "polyirt", version, about = "Bayesian polytomous item response models")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "POLYIRT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write the posterior summary and trace.
    Fit(FitArgs),
    /// Hold out a random share of responses, fit, and score the imputations.
    Predict(PredictArgs),
    /// Compare models over repeated random holdouts.
    Benchmark(BenchmarkArgs),
    /// Draw a synthetic SPRITE data set.
    Simulate(SimulateArgs),
    /// Mutual information of each SPRITE question.
    Mi(MiArgs),
    /// Tabulate category response curves of one SPRITE question.
    Icrf(IcrfArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Long-format CSV with columns respondent,question,category.
    #[arg(long)]
    data: PathBuf,
    /// JSON sidecar; defaults to the data path with a .json extension, if present.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON file with optional `hyper` and `fit` objects, or a previous manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<AcceptanceMode>,
    #[arg(long, value_parser = parse_init)]
    init: Option<Initialization>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: ModelKind,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: ModelKind,
    #[arg(long, default_value_t = 0.2)]
    rate: f64,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated model tags.
    #[arg(long, value_delimiter = ',', default_value = "sprite,ord,lord,nrm,gpcm")]
    models: Vec<ModelKind>,
    #[arg(long, default_value_t = 0.2)]
    rate: f64,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    q: usize,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file whose `hyper` object overrides the default priors.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MiArgs {
    /// posterior.json from `fit` or truth.json from `simulate`.
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    #[arg(long)]
    prior_mean: Option<f64>,
    #[arg(long)]
    prior_var: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IcrfArgs {
    #[arg(long)]
    params: PathBuf,
    /// Question ID or 1-based index; defaults to the first question.
    #[arg(long)]
    question: Option<String>,
    #[arg(long, default_value_t = -4.0, allow_hyphen_values = true)]
    zmin: f64,
    #[arg(long, default_value_t = 4.0, allow_hyphen_values = true)]
    zmax: f64,
    #[arg(long, default_value_t = 201)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<AcceptanceMode, String> {
    serde_json::from_value(Value::String(s.to_lowercase())).map_err(|_| "expected blockwise or joint".to_string())
}

fn parse_init(s: &str) -> Result<Initialization, String> {
    serde_json::from_value(Value::String(s.to_lowercase())).map_err(|_| "expected deterministic or random".to_string())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ConfigFile {
    #[serde(default)]
    hyper: Hyperparams,
    #[serde(default)]
    fit: FitConfig,
}

fn read_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    // a manifest stores the resolved config under "config"
    if let Some(inner) = value.get_mut("config") {
        value = inner.take();
    }
    serde_json::from_value(value).with_context(|| format!("parsing config {}", path.display()))
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<ConfigFile> {
        let mut cfg = read_config(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.fit.rng_seed = s;
        }
        if let Some(b) = self.burn_in {
            cfg.fit.burn_in_iterations = b;
        }
        if let Some(s) = self.samples {
            cfg.fit.sample_iterations = s;
        }
        if let Some(m) = self.mode {
            cfg.fit.acceptance_mode = m;
        }
        if let Some(i) = self.init {
            cfg.fit.initialization = i;
        }
        cfg.hyper.validate()?;
        cfg.fit.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: Value,
    inputs: Vec<InputDigest>,
    seed: u64,
    version: &'static str,
    duration_seconds: f64,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

fn digest(path: &Path) -> anyhow::Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

struct Run {
    command: &'static str,
    started: Instant,
    inputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Run { command, started: Instant::now(), inputs: Vec::new() }
    }

    fn finish(self, out: &Path, config: Value, seed: u64) -> anyhow::Result<()> {
        let inputs = self.inputs.iter().map(|p| digest(p)).collect::<anyhow::Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            inputs,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_json(&out.join("manifest.json"), &manifest)
    }
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_data(args: &DataArgs, run: &mut Run) -> anyhow::Result<ResponseMatrix> {
    let data = ResponseMatrix::load(&args.data, args.sidecar.as_deref())
        .with_context(|| format!("loading {}", args.data.display()))?;
    run.inputs.push(args.data.clone());
    let side = args.sidecar.clone().or_else(|| {
        let auto = args.data.with_extension("json");
        auto.exists().then_some(auto)
    });
    run.inputs.extend(side);
    Ok(data)
}

fn config_value(cfg: &ConfigFile, extra: Value) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let (Value::Object(map), Value::Object(more)) = (&mut v, extra) {
        map.extend(more);
    }
    v
}

fn write_fit_outputs(out: &Path, output: &sampler::ChainOutput) -> anyhow::Result<()> {
    write_json(&out.join("posterior.json"), &output.summary)?;
    let file = fs::File::create(out.join("trace.csv")).context("writing trace.csv")?;
    sampler::write_trace_csv(&output.trace, std::io::BufWriter::new(file))?;
    Ok(())
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<()> {
    let mut run = Run::new("fit");
    let cfg = args.config.resolve()?;
    run.inputs.extend(args.config.config.clone());
    let data = load_data(&args.data, &mut run)?;
    let output = sampler::run_chain(args.model, &data, &cfg.hyper, &cfg.fit)?;
    create_out(&args.out)?;
    write_fit_outputs(&args.out, &output)?;
    run.finish(&args.out, config_value(&cfg, json!({ "model": args.model })), cfg.fit.rng_seed)
}

fn cmd_predict(args: PredictArgs) -> anyhow::Result<()> {
    let mut run = Run::new("predict");
    let cfg = args.config.resolve()?;
    run.inputs.extend(args.config.config.clone());
    let data = load_data(&args.data, &mut run)?;
    let seed = cfg.fit.rng_seed;
    let (train, holdout) = eval::puncture(&data, args.rate, derive_seed(seed, "cli/predict"))?;
    let output = sampler::run_chain(args.model, &train, &cfg.hyper, &cfg.fit)?;
    let error = eval::prediction_error(&holdout, &output.summary.imputed_modes)?;
    create_out(&args.out)?;
    write_fit_outputs(&args.out, &output)?;
    write_json(
        &args.out.join("prediction.json"),
        &json!({
            "model": args.model,
            "rate": args.rate,
            "holdout_cells": holdout.len(),
            "prediction_error": error,
        }),
    )?;
    println!("{} prediction error {:.4} on {} held-out cells", args.model, error, holdout.len());
    run.finish(
        &args.out,
        config_value(&cfg, json!({ "model": args.model, "rate": args.rate })),
        seed,
    )
}

fn cmd_benchmark(args: BenchmarkArgs) -> anyhow::Result<()> {
    let mut run = Run::new("benchmark");
    if !(0.0..1.0).contains(&args.rate) {
        return Err(Error::InvalidConfig(format!("--rate must lie in [0, 1), got {}", args.rate)).into());
    }
    if args.reps == 0 {
        return Err(Error::InvalidConfig("--reps must be at least 1".into()).into());
    }
    let cfg = args.config.resolve()?;
    run.inputs.extend(args.config.config.clone());
    let data = load_data(&args.data, &mut run)?;
    let seed = cfg.fit.rng_seed;
    let results: Vec<BenchmarkResult> =
        eval::run_benchmark(&data, &args.models, args.rate, args.reps, seed, &cfg.hyper, &cfg.fit)?;
    create_out(&args.out)?;
    let file = fs::File::create(args.out.join("benchmark.csv")).context("writing benchmark.csv")?;
    eval::write_benchmark_csv(&results, file)?;
    let table = eval::format_benchmark_table(&results);
    fs::write(args.out.join("benchmark.txt"), &table).context("writing benchmark.txt")?;
    write_json(&args.out.join("benchmark.json"), &results)?;
    print!("{table}");
    run.finish(
        &args.out,
        config_value(
            &cfg,
            json!({
                "models": args.models,
                "rate": args.rate,
                "repetitions": args.reps,
                "std": "sample standard deviation over repetitions (n - 1 denominator)",
            }),
        ),
        seed,
    )
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    truth: SpriteParams,
    respondent_ids: Vec<String>,
    question_ids: Vec<String>,
    hyper: Hyperparams,
    seed: u64,
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let mut run = Run::new("simulate");
    let cfg = read_config(args.config.as_deref())?;
    run.inputs.extend(args.config.clone());
    let inst = synthgen::generate(args.n, args.q, args.m, &cfg.hyper, args.seed)?;
    create_out(&args.out)?;
    let csv_path = args.out.join("responses.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    inst.data.write_long_csv(std::io::BufWriter::new(file))?;
    write_json(&args.out.join("responses.json"), &inst.data.sidecar())?;
    write_json(
        &args.out.join("truth.json"),
        &TruthFile {
            truth: inst.truth.clone(),
            respondent_ids: inst.data.respondent_ids().to_vec(),
            question_ids: inst.data.question_ids().to_vec(),
            hyper: inst.hyper,
            seed: inst.seed,
        },
    )?;
    run.finish(
        &args.out,
        json!({ "hyper": cfg.hyper, "n": args.n, "q": args.q, "m": args.m }),
        args.seed,
    )
}

/// SPRITE parameters, question IDs and the trait prior stored in a parameter file.
fn load_sprite(path: &Path) -> anyhow::Result<(SpriteParams, Vec<String>, Option<Hyperparams>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("question_params").is_some() {
        let summary: PosteriorSummary =
            serde_json::from_value(value).with_context(|| format!("parsing posterior {}", path.display()))?;
        let params = summary
            .sprite_estimate()
            .ok_or_else(|| Error::InvalidParameter(format!("{} is not a SPRITE posterior", path.display())))?;
        Ok((params, summary.question_ids, None))
    } else if value.get("truth").is_some() {
        let truth: TruthFile =
            serde_json::from_value(value).with_context(|| format!("parsing truth file {}", path.display()))?;
        Ok((truth.truth, truth.question_ids, Some(truth.hyper)))
    } else {
        match serde_json::from_value::<ModelParams>(value) {
            Ok(ModelParams::Sprite(p)) => {
                let ids = (1..=p.n_questions()).map(|j| format!("q{j}")).collect();
                Ok((p, ids, None))
            }
            _ => Err(Error::Parse(format!("{}: expected SPRITE parameters", path.display())).into()),
        }
    }
}

fn cmd_mi(args: MiArgs) -> anyhow::Result<()> {
    let mut run = Run::new("mi");
    let (params, ids, hyper) = load_sprite(&args.params)?;
    run.inputs.push(args.params.clone());
    let hyper = hyper.unwrap_or_default();
    let prior_mean = args.prior_mean.unwrap_or(hyper.prior_trait_mean);
    let prior_var = args.prior_var.unwrap_or(hyper.prior_trait_var);
    let infos = infotools::question_information(&params, prior_mean, prior_var, args.resolution)?;
    create_out(&args.out)?;
    let mut csv = String::from("question,mi_bits,estimated_error\n");
    for info in &infos {
        csv.push_str(&format!("{},{:.12},{:.3e}\n", ids[info.question], info.mi_bits, info.estimated_error));
    }
    fs::write(args.out.join("mi.csv"), csv).context("writing mi.csv")?;
    run.finish(
        &args.out,
        json!({ "resolution": args.resolution, "prior_mean": prior_mean, "prior_var": prior_var }),
        0,
    )
}

fn cmd_icrf(args: IcrfArgs) -> anyhow::Result<()> {
    let mut run = Run::new("icrf");
    let (params, ids, _) = load_sprite(&args.params)?;
    run.inputs.push(args.params.clone());
    let j = match &args.question {
        None => 0,
        Some(q) => match ids.iter().position(|id| id == q) {
            Some(j) => j,
            None => match q.parse::<usize>() {
                Ok(k) if (1..=ids.len()).contains(&k) => k - 1,
                _ => bail!(Error::InvalidParameter(format!("unknown question {q}"))),
            },
        },
    };
    let grid = infotools::linear_grid(args.zmin, args.zmax, args.points)?;
    let rows = infotools::tabulate_icrf(&params.means[j], &params.variances[j], &grid)?;
    create_out(&args.out)?;
    let mut csv = String::from("z,category,density,probability\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{:.12e},{:.12e}\n", r.z, r.category, r.density, r.probability));
    }
    fs::write(args.out.join("icrf.csv"), csv).context("writing icrf.csv")?;
    run.finish(
        &args.out,
        json!({ "question": ids[j], "zmin": args.zmin, "zmax": args.zmax, "points": args.points }),
        0,
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Mi(a) => cmd_mi(a),
        Command::Icrf(a) => cmd_icrf(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let core = e.chain().find_map(|c| c.downcast_ref::<Error>());
            eprintln!("error: {e:#}");
            match core {
                Some(c) if c.is_numeric() => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
