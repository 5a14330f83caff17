use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use trajcf_core::demo::run_demo;
use trajcf_core::eval::evaluate;
use trajcf_core::experiment::{
    expected_from_checkpoint, fit_ncf, load_data, ranking_csv, run_experiment, score_expected, score_with, summary,
    DataSource, ExperimentConfig, ModelChoice,
};
use trajcf_core::matrix::{build_matrix, MatrixMode, SvdMethod};
use trajcf_core::ncf::{load_checkpoint, save_checkpoint, ExpectedScale, Optimizer};
use trajcf_core::scoring::{Aggregation, AnomalyReport, SurpriseVariant};
use trajcf_core::synthgen::{read_labels, write_labels, AnomalyKind, Intensity, Scenario};
use trajcf_core::trajectory::{
    extract_staypoints, parse_dataset, parse_gps_fixes, write_dataset, Schema, TrajectoryDataset,
};

/// Collaborative-filtering anomaly detection over semantic trajectories.
#[derive(Parser)]
#[command(name = "trajcf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a staypoint file (or extract staypoints from raw GPS fixes),
    /// normalize it and export the train visit matrix.
    Ingest(IngestArgs),
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Train the NCF model and save a checkpoint.
    Train(PipelineArgs),
    /// Score users with a saved checkpoint or the configured model.
    Score(ScoreArgs),
    /// Evaluate a saved report against labels.
    Eval(EvalArgs),
    /// Factorize the bundled five-user demo matrix and show the surprise.
    DemoSvd(DemoArgs),
    /// Full pipeline: data, model, scores, evaluation.
    Run(PipelineArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Staypoint file, or raw GPS fixes with --gps.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Input holds raw fixes (UserId, Latitude, Longitude, Time).
    #[arg(long)]
    gps: bool,
    /// Staypoint radius in metres.
    #[arg(long, default_value_t = 200.0)]
    dist_m: f64,
    /// Minimum staypoint duration in minutes.
    #[arg(long, default_value_t = 20)]
    time_min: i64,
    /// Split time (ISO-8601); defaults to the train fraction.
    #[arg(long)]
    t_split: Option<String>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value = "binary")]
    matrix_mode: MatrixMode,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    n_agents: Option<usize>,
    #[arg(long)]
    n_pois: Option<usize>,
    #[arg(long)]
    train_days: Option<usize>,
    #[arg(long)]
    test_days: Option<usize>,
    #[arg(long)]
    anomalous_fraction: Option<f64>,
    /// Comma-separated anomaly kinds (hunger, work, social).
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<AnomalyKind>>,
    #[arg(long)]
    intensity: Option<Intensity>,
    #[arg(long)]
    imposter_pairs: Option<usize>,
}

impl ScenarioArgs {
    fn apply(&self, s: &mut Scenario) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    s.$field = v.clone();
                }
            )*};
        }
        set!(n_agents, n_pois, train_days, test_days, anomalous_fraction, kinds, intensity, imposter_pairs);
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scenario settings (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    scenario: ScenarioArgs,
}

/// Experiment settings: a TOML config file plus flag overrides.
#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelChoice>,
    /// Comma-separated cut-offs for top-k hits.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Read trajectories from this staypoint file instead of generating them.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    #[arg(long, requires = "trajectories")]
    labels: Option<PathBuf>,
    #[arg(long, requires = "trajectories")]
    t_split: Option<String>,
    #[arg(long, requires = "trajectories")]
    train_fraction: Option<f64>,
    #[arg(long)]
    variant: Option<SurpriseVariant>,
    #[arg(long)]
    aggregation: Option<Aggregation>,
    #[arg(long)]
    matrix_mode: Option<MatrixMode>,
    #[arg(long)]
    svd_rank: Option<usize>,
    #[arg(long)]
    svd_method: Option<SvdMethod>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    fusion_alpha: Option<f64>,
    /// Use Adam instead of plain SGD.
    #[arg(long)]
    adam: bool,
    /// Score NCF on raw fused logits instead of visit probabilities.
    #[arg(long)]
    logit_scale: bool,
    #[arg(long)]
    n_trees: Option<usize>,
    #[command(flatten)]
    scenario: ScenarioArgs,
}

impl PipelineArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(out) = &self.out {
            c.output_dir = Some(out.clone());
        }
        if let Some(model) = self.model {
            c.model = model;
        }
        if let Some(ks) = &self.ks {
            c.ks = ks.clone();
        }
        if let Some(path) = &self.trajectories {
            c.data = DataSource::Files {
                trajectories: path.clone(),
                labels: self.labels.clone(),
                t_split: self.t_split.clone(),
                train_fraction: self.train_fraction.unwrap_or(0.8),
                delimiter: ',',
            };
        }
        if let DataSource::Synth(s) = &mut c.data {
            self.scenario.apply(s);
        }
        if let Some(v) = self.variant {
            c.scoring.variant = v;
        }
        if let Some(a) = self.aggregation {
            c.scoring.aggregation = a;
        }
        if let Some(m) = self.matrix_mode {
            c.scoring.matrix_mode = m;
        }
        if let Some(k) = self.svd_rank {
            c.svd.rank = k;
        }
        if let Some(m) = self.svd_method {
            c.svd.method = m;
        }
        if let Some(e) = self.epochs {
            c.ncf.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            c.ncf.learning_rate = lr;
        }
        if let Some(d) = self.embed_dim {
            c.ncf.embed_dim = d;
        }
        if let Some(a) = self.fusion_alpha {
            c.ncf.fusion_alpha = a;
        }
        if self.adam {
            c.ncf.optimizer = Optimizer::adam();
        }
        if self.logit_scale {
            c.ncf.expected_scale = ExpectedScale::Logit;
        }
        if let Some(n) = self.n_trees {
            c.iforest.n_trees = n;
        }
        c.validate()?;
        Ok(c.seeded())
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Score with this NCF checkpoint instead of fitting a model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// `report.json` written by `score` or `run`.
    #[arg(long)]
    report: PathBuf,
    /// Labels file (user_id,kind,intensity).
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,100,150")]
    ks: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value = "deterministic")]
    method: SvdMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn output_dir(config: &ExperimentConfig) -> Result<&Path> {
    let dir = config.output_dir.as_deref().context("an output directory is required (--out)")?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let delimiter = u8::try_from(args.delimiter).context("delimiter must be a single-byte character")?;
    let file = fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let (dataset, skipped) = if args.gps {
        let (fixes, skipped) = parse_gps_fixes(file, delimiter)?;
        let mut records = Vec::new();
        for (user, fixes) in &fixes {
            records.extend(extract_staypoints(user, fixes, args.dist_m, args.time_min * 60)?);
        }
        (TrajectoryDataset::from_records(records), skipped)
    } else {
        let report = parse_dataset(file, &Schema::default().with_delimiter(delimiter))?;
        (report.dataset, report.skipped)
    };
    for row in &skipped {
        eprintln!("skipped line {}: {}", row.line, row.reason);
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let trajectories = args.out.join("trajectories.csv");
    write_dataset(fs::File::create(&trajectories)?, &dataset, b',')?;

    let t_split = match &args.t_split {
        Some(s) => trajcf_core::trajectory::parse_timestamp(s).with_context(|| format!("invalid t_split `{s}`"))?,
        None => trajcf_core::experiment::split_time_at_fraction(&dataset, args.train_fraction)?,
    };
    let split = dataset.split(t_split);
    let matrix = build_matrix(&split.train, args.matrix_mode);
    let mut coo = Vec::new();
    matrix.write_coo(&mut coo)?;
    fs::write(args.out.join("train_matrix.coo"), coo)?;
    write(&args.out, "train_matrix.json", &serde_json::to_string_pretty(&matrix.sidecar())?)?;

    println!("records: {}", dataset.n_records());
    println!("users: {}", dataset.n_users());
    println!("pois: {}", dataset.poi_catalog().len());
    println!("skipped rows: {}", skipped.len());
    println!("t_split: {}", trajcf_core::trajectory::format_timestamp(t_split));
    println!("train records: {}  test records: {}", split.train.n_records(), split.test.n_records());
    println!("cold-start users: {}", split.cold_start.len());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut scenario = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => Scenario::default(),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    args.scenario.apply(&mut scenario);
    let data = scenario.write(&args.out)?;
    println!(
        "wrote {} records for {} agents ({} anomalous) to {}",
        data.split.train.n_records() + data.split.test.n_records(),
        data.labels.len(),
        data.anomalous().len(),
        args.out.display()
    );
    Ok(())
}

fn train(args: &PipelineArgs) -> Result<()> {
    let config = args.config()?;
    if config.model != ModelChoice::Ncf {
        bail!("only the ncf model has a trainable checkpoint; use `score` or `run` for {}", config.model.as_str());
    }
    let dir = output_dir(&config)?;
    let data = load_data(&config.data)?;
    let fit = fit_ncf(&data.split, &config.ncf, config.scoring.matrix_mode)?;
    save_checkpoint(&dir.join("model.json"), &fit.checkpoint)?;
    write(dir, "training.json", &serde_json::to_string_pretty(&fit.training)?)?;
    let last = fit.training.epoch_loss.last().copied().unwrap_or(f64::NAN);
    println!("trained {} epochs, final loss {last:.4}", fit.training.epoch_loss.len());
    Ok(())
}

fn score(args: &ScoreArgs) -> Result<()> {
    let config = args.pipeline.config()?;
    let dir = output_dir(&config)?;
    let data = load_data(&config.data)?;
    let report = match &args.checkpoint {
        Some(path) => {
            let checkpoint = load_checkpoint(path)?;
            let expected = expected_from_checkpoint(&checkpoint, &data.split)?;
            score_expected(&config.scoring, &data.split, &expected, "ncf")?
        }
        None => score_with(&config, &data)?.0,
    };
    write(dir, "report.json", &serde_json::to_string_pretty(&report)?)?;
    write(dir, "ranking.csv", &ranking_csv(&report, data.labels.as_ref()))?;
    if let Some(labels) = &data.labels {
        write_labels(fs::File::create(dir.join("labels.csv"))?, labels)?;
    }
    print!("{}", summary(&report, None));
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let text = fs::read_to_string(&args.report).with_context(|| format!("reading {}", args.report.display()))?;
    let report: AnomalyReport = serde_json::from_str(&text).context("parsing the report")?;
    let labels = read_labels(fs::File::open(&args.labels).with_context(|| format!("opening {}", args.labels.display()))?)?;
    let categories: BTreeMap<String, String> = labels
        .iter()
        .filter_map(|(u, l)| l.category().map(|c| (u.clone(), c)))
        .collect();
    let result = evaluate(&report.ranking, &categories, &args.ks)?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        write(dir, "eval.json", &serde_json::to_string_pretty(&result)?)?;
    }
    print!("{}", summary(&report, Some(&result)));
    Ok(())
}

fn demo(args: &DemoArgs) -> Result<()> {
    let result = run_demo(args.method, args.seed)?;
    if let Some(dir) = &args.out {
        result.write(dir)?;
    }
    print!("{}", result.render());
    Ok(())
}

fn run(args: &PipelineArgs) -> Result<()> {
    let config = args.config()?;
    let output = run_experiment(&config)?;
    print!("{}", summary(&output.report, output.eval.as_ref()));
    if let Some(dir) = &config.output_dir {
        println!("artifacts: {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::DemoSvd(a) => demo(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
