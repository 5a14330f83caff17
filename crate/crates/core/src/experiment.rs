//! End-to-end experiment: load or generate data, fit a model, score users
//! and evaluate the ranking against ground-truth labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{ecod_score, featurize_users, iforest_fit_score, IForestParams};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalResult};
use crate::matrix::{build_matrix, reconstruct, truncated_svd, ExpectedMatrix, MatrixMode, SvdMethod};
use crate::ncf::{
    build_training_set, init_model, predict_expected_matrix, save_checkpoint, train, Catalogs, Checkpoint,
    FeatureContext, HyperParams, TrainingReport,
};
use crate::scoring::{score_users, Aggregation, AnomalyReport, SurpriseVariant};
use crate::synthgen::{read_labels, Label, Scenario};
use crate::trajectory::{parse_dataset, parse_timestamp, Schema, SplitDataset, TrajectoryDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Ncf,
    Svd,
    Iforest,
    Ecod,
}

impl ModelChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelChoice::Ncf => "ncf",
            ModelChoice::Svd => "svd",
            ModelChoice::Iforest => "iforest",
            ModelChoice::Ecod => "ecod",
        }
    }
}

impl std::str::FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ncf" => Ok(Self::Ncf),
            "svd" => Ok(Self::Svd),
            "iforest" => Ok(Self::Iforest),
            "ecod" => Ok(Self::Ecod),
            other => Err(Error::InvalidParameter(format!("unknown model `{other}`"))),
        }
    }
}

/// Where the trajectories come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synth(Scenario),
    Files {
        trajectories: PathBuf,
        /// Optional labels document; evaluation is skipped without it.
        labels: Option<PathBuf>,
        /// Split time; when absent, the check-in time below which
        /// `train_fraction` of all records fall.
        t_split: Option<String>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
        #[serde(default = "default_delimiter")]
        delimiter: char,
    },
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_delimiter() -> char {
    ','
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(Scenario::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub variant: SurpriseVariant,
    pub aggregation: Aggregation,
    pub matrix_mode: MatrixMode,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            variant: SurpriseVariant::Abs,
            aggregation: Aggregation::Sum,
            matrix_mode: MatrixMode::Binary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvdConfig {
    pub rank: usize,
    pub method: SvdMethod,
}

impl Default for SvdConfig {
    fn default() -> Self {
        Self {
            rank: 10,
            method: SvdMethod::Deterministic,
        }
    }
}

/// Everything needed to reproduce one run. `seed` overrides the seeds of
/// the data source and of every model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelChoice,
    pub seed: u64,
    pub ks: Vec<usize>,
    pub output_dir: Option<PathBuf>,
    pub data: DataSource,
    pub scoring: ScoringConfig,
    pub ncf: HyperParams,
    pub svd: SvdConfig,
    pub iforest: IForestParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::Ncf,
            seed: 42,
            ks: vec![10, 100, 150],
            output_dir: None,
            data: DataSource::default(),
            scoring: ScoringConfig::default(),
            ncf: HyperParams::default(),
            svd: SvdConfig::default(),
            iforest: IForestParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be a non-empty list of positive integers".into()));
        }
        if self.model == ModelChoice::Ncf {
            self.ncf.validate()?;
        }
        if let DataSource::Files { train_fraction, .. } = &self.data {
            if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }

    /// Copy with the master seed pushed into every seeded component.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.ncf.seed = self.seed;
        if let DataSource::Synth(s) = &mut c.data {
            s.seed = self.seed;
        }
        c
    }
}

/// Split data plus optional ground truth.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub split: SplitDataset,
    pub labels: Option<BTreeMap<String, Label>>,
}

impl LoadedData {
    pub fn categories(&self) -> Option<BTreeMap<String, String>> {
        self.labels.as_ref().map(|labels| {
            labels
                .iter()
                .filter_map(|(u, l)| l.category().map(|c| (u.clone(), c)))
                .collect()
        })
    }
}

/// Check-in time at or below which `fraction` of the records fall.
pub fn split_time_at_fraction(dataset: &TrajectoryDataset, fraction: f64) -> Result<i64> {
    let mut times: Vec<i64> = dataset.records().map(|r| r.checkin).collect();
    if times.is_empty() {
        return Err(Error::InvalidParameter("cannot split an empty dataset".into()));
    }
    times.sort_unstable();
    let idx = ((fraction * times.len() as f64).ceil() as usize).clamp(1, times.len()) - 1;
    Ok(times[idx])
}

pub fn load_data(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Synth(scenario) => {
            let (_, data) = scenario.generate()?;
            Ok(LoadedData {
                split: data.split,
                labels: Some(data.labels),
            })
        }
        DataSource::Files {
            trajectories,
            labels,
            t_split,
            train_fraction,
            delimiter,
        } => {
            let file = std::fs::File::open(trajectories).map_err(|e| Error::io(trajectories, e))?;
            let delimiter = u8::try_from(*delimiter)
                .map_err(|_| Error::Config("delimiter must be a single-byte character".into()))?;
            let dataset = parse_dataset(file, &Schema::default().with_delimiter(delimiter))?.dataset;
            let t_split = match t_split {
                Some(s) => parse_timestamp(s).ok_or_else(|| Error::Config(format!("invalid t_split `{s}`")))?,
                None => split_time_at_fraction(&dataset, *train_fraction)?,
            };
            let labels = match labels {
                Some(path) => {
                    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
                    let mut labels = read_labels(file)?;
                    for user in dataset.user_ids() {
                        labels.entry(user.to_string()).or_insert(Label::Normal);
                    }
                    Some(labels)
                }
                None => None,
            };
            Ok(LoadedData {
                split: dataset.split(t_split),
                labels,
            })
        }
    }
}

/// Output of a fitted NCF model.
pub struct NcfFit {
    pub checkpoint: Checkpoint,
    pub training: TrainingReport,
    pub expected: ExpectedMatrix,
}

/// Trains NCF on the train half and predicts the expected visit matrix.
pub fn fit_ncf(split: &SplitDataset, hp: &HyperParams, mode: MatrixMode) -> Result<NcfFit> {
    let matrix = build_matrix(&split.train, mode);
    let catalogs = Catalogs::from_matrix(&matrix, &split.train);
    let data = build_training_set(&split.train, &catalogs, hp)?;
    let state = init_model(hp, catalogs.users.len(), catalogs.pois.len(), catalogs.types.len())?;
    let (state, training) = train(state, &data)?;
    let contexts = FeatureContext::per_user(&split.train, hp.distance_buckets);
    let expected = predict_expected_matrix(&state, &catalogs, matrix.column_types(), &contexts)?;
    Ok(NcfFit {
        checkpoint: Checkpoint::new(&state, &catalogs, matrix.column_types()),
        training,
        expected,
    })
}

/// Rank-`k` SVD reconstruction of the train matrix.
pub fn fit_svd(split: &SplitDataset, config: &SvdConfig, mode: MatrixMode, seed: u64) -> Result<ExpectedMatrix> {
    let matrix = build_matrix(&split.train, mode);
    Ok(reconstruct(&truncated_svd(&matrix, config.rank, config.method, seed)?))
}

/// Matrix and type surprise of every user of `split` against `expected`.
pub fn score_expected(
    config: &ScoringConfig,
    split: &SplitDataset,
    expected: &ExpectedMatrix,
    method: &str,
) -> Result<AnomalyReport> {
    let observed = build_matrix(&split.test, config.matrix_mode);
    score_users(split, expected, &observed, config.variant, config.aggregation, method)
}

/// Expected matrix of a saved NCF model. The split's user and POI
/// catalogs must be the ones the model was trained on.
pub fn expected_from_checkpoint(checkpoint: &Checkpoint, split: &SplitDataset) -> Result<ExpectedMatrix> {
    let matrix = build_matrix(&split.train, MatrixMode::Binary);
    if matrix.users().ids() != checkpoint.users.as_slice() || matrix.pois().ids() != checkpoint.pois.as_slice() {
        return Err(Error::Checkpoint(
            "the model was trained on different users or POIs than this dataset".into(),
        ));
    }
    let contexts = FeatureContext::per_user(&split.train, checkpoint.state.hp.distance_buckets);
    predict_expected_matrix(&checkpoint.state, &checkpoint.catalogs(), &checkpoint.column_types, &contexts)
}

/// Scores every user of `data` with the configured model.
pub fn score_with(config: &ExperimentConfig, data: &LoadedData) -> Result<(AnomalyReport, Option<NcfFit>)> {
    let split = &data.split;
    let score = |expected: &ExpectedMatrix, method: &str| score_expected(&config.scoring, split, expected, method);
    match config.model {
        ModelChoice::Ncf => {
            let fit = fit_ncf(split, &config.ncf, config.scoring.matrix_mode)?;
            let report = score(&fit.expected, "ncf")?;
            Ok((report, Some(fit)))
        }
        ModelChoice::Svd => {
            let expected = fit_svd(split, &config.svd, config.scoring.matrix_mode, config.seed)?;
            Ok((score(&expected, "svd")?, None))
        }
        ModelChoice::Iforest => {
            let scores = iforest_fit_score(&featurize_users(split)?, &config.iforest, config.seed)?;
            Ok((AnomalyReport::from_scores("iforest", &scores, &split.cold_start), None))
        }
        ModelChoice::Ecod => {
            let scores = ecod_score(&featurize_users(split)?)?;
            Ok((AnomalyReport::from_scores("ecod", &scores, &split.cold_start), None))
        }
    }
}

/// Artifacts of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub report: AnomalyReport,
    pub eval: Option<EvalResult>,
    pub training: Option<TrainingReport>,
}

/// Reproducibility record written next to the reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub t_split: i64,
    pub n_users: usize,
    pub n_pois: usize,
    pub n_train_records: usize,
    pub n_test_records: usize,
}

/// Runs the whole pipeline and, when `output_dir` is set, writes
/// `report.json`, `eval.json`, `ranking.csv`, `summary.txt`,
/// `manifest.json` (and `model.json` plus `training.json` for NCF).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let config = config.seeded();
    let data = load_data(&config.data)?;
    let (report, fit) = score_with(&config, &data)?;
    let eval = match data.categories() {
        Some(categories) if !categories.is_empty() && categories.len() < report.ranking.len() => {
            Some(evaluate(&report.ranking, &categories, &config.ks)?)
        }
        _ => None,
    };

    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        write("report.json", serde_json::to_string_pretty(&report)?)?;
        if let Some(eval) = &eval {
            write("eval.json", serde_json::to_string_pretty(eval)?)?;
        }
        write("ranking.csv", ranking_csv(&report, data.labels.as_ref()))?;
        write("summary.txt", summary(&report, eval.as_ref()))?;
        if let Some(fit) = &fit {
            save_checkpoint(&dir.join("model.json"), &fit.checkpoint)?;
            write("training.json", serde_json::to_string_pretty(&fit.training)?)?;
        }
        let manifest = Manifest {
            tool: "trajcf".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            t_split: data.split.t_split,
            n_users: data.split.train.n_users(),
            n_pois: data.split.train.poi_catalog().len(),
            n_train_records: data.split.train.n_records(),
            n_test_records: data.split.test.n_records(),
        };
        write("manifest.json", serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(ExperimentOutput {
        report,
        eval,
        training: fit.map(|f| f.training),
    })
}

/// `rank,user_id,score,label` rows, label 1 for anomalous users.
pub fn ranking_csv(report: &AnomalyReport, labels: Option<&BTreeMap<String, Label>>) -> String {
    let mut out = String::from("rank,user_id,score,label\n");
    for r in &report.ranking {
        let label = match labels.and_then(|l| l.get(&r.user_id)) {
            Some(l) if l.is_anomalous() => "1",
            Some(_) => "0",
            None => "",
        };
        let _ = writeln!(out, "{},{},{},{}", r.rank, r.user_id, r.score, label);
    }
    out
}

pub fn summary(report: &AnomalyReport, eval: Option<&EvalResult>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method: {}", report.method);
    let _ = writeln!(out, "users: {}", report.ranking.len());
    if let Some(e) = eval {
        let _ = writeln!(out, "anomalous: {}", e.n_anomalous);
        let _ = writeln!(out, "auc: {:.4}", e.auc);
        for (k, hits) in &e.top_k_hits {
            let _ = writeln!(out, "top-{k} hits: {hits}");
        }
        for (category, recall) in &e.recall_by_category {
            let _ = writeln!(out, "recall {category}: {recall:.3}");
        }
    }
    let _ = writeln!(out, "top users:");
    for r in report.ranking.iter().take(10) {
        let _ = writeln!(out, "  {:>4}  {}  {:.4}", r.rank, r.user_id, r.score);
    }
    out
}
