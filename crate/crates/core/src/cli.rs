//! Command-line pipeline: configuration, subcommands and artifact layout.
//!
//! Every artifact is written under the output directory with a fixed name:
//!
//! | stage      | files                                                            |
//! |------------|------------------------------------------------------------------|
//! | synth      | `<name>.csv` per modality, `test_ids.txt`, `synth_config.toml`   |
//! | univariate | `univariate_<mod>.csv`                                           |
//! | train      | `model_<mod>_<kind>.json`, `folds_*.csv`, `ranking_*.csv`, `elbow_*.svg` |
//! | evaluate   | `scores_<mod>_<kind>.csv`, `metrics_*.csv`, `roc_*.svg`, `confusion_*.svg` |
//! | fuse       | `scores_fused_<kind>_<rule>.csv`, `fused_*.csv`, `metrics_fusion_<kind>.csv`, plots |
//! | report     | `summary_metrics.csv`, `summary_roc.svg`                         |

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, ClassLabel, DataError, FeatureTable, Schema, SplitSpec};
use crate::error::ModelError;
use crate::forest::{self, ForestDocument, ForestParams};
use crate::fusion::{self, FusionRule, ModalityScores};
use crate::logreg::{self, LogRegDocument};
use crate::metrics::{self, MetricsRow};
use crate::mrcv::{self, FoldDetail, LrMrcvOptions, ProportionalOrder, RfGrid, RfMrcvOptions, ThresholdSubset};
use crate::preprocess::{self, MissingnessFilter, PreprocessError, ScalerSet};
use crate::report::{self, fmt_f64};
use crate::synth::{self, SynthSpec};
use crate::univariate;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("no features left after preprocessing ({0})")]
    EmptyFeatures(String),
    #[error("model and data do not match: {0}")]
    Mismatch(String),
    #[error("modalities share no test samples")]
    EmptyFusion,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput(_) => 2,
            CliError::EmptyFeatures(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::EmptyFusion => 5,
            CliError::Config(_) | CliError::Failed(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::UnknownFeature(_) | DataError::MissingValue { .. } => CliError::Mismatch(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::AllFeaturesDropped => CliError::EmptyFeatures(e.to_string()),
            PreprocessError::Data(d) => d.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Data(d) => d.into(),
            crate::Error::Preprocess(p) => p.into(),
            crate::Error::Predict(p) => CliError::Mismatch(p.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Rf,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Rf => "rf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityConfig {
    /// Feature table holding training (and possibly test) samples.
    pub table: PathBuf,
    /// Ids held out of training and used as the test set.
    #[serde(default)]
    pub test_ids: Option<PathBuf>,
    /// Separate test table; takes precedence over `test_ids` for evaluation.
    #[serde(default)]
    pub test_table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// `benign`, `malignant` or `none`.
    pub scaler_reference: String,
    pub per_cohort: bool,
    pub max_missing_fraction: f64,
    /// Absolute Spearman cutoff; values above 1 disable pruning.
    pub correlation_cutoff: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            scaler_reference: "benign".into(),
            per_cohort: false,
            max_missing_fraction: 0.2,
            correlation_cutoff: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnivariateConfig {
    pub alpha: f64,
}

impl Default for UnivariateConfig {
    fn default() -> Self {
        UnivariateConfig { alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrConfig {
    pub repeats: usize,
    pub validation_fraction: f64,
    pub delta_bic_stop: f64,
    pub threshold_subset: ThresholdSubset,
    pub proportional_order: ProportionalOrder,
}

impl Default for LrConfig {
    fn default() -> Self {
        let d = LrMrcvOptions::default();
        LrConfig {
            repeats: d.repeats,
            validation_fraction: d.validation_fraction,
            delta_bic_stop: d.delta_bic_stop,
            threshold_subset: d.threshold_subset,
            proportional_order: ProportionalOrder::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfConfig {
    pub repeats: usize,
    pub validation_fraction: f64,
    pub mtry: Vec<usize>,
    pub ntree: Vec<usize>,
    pub min_leaf: usize,
    pub class_weighting: bool,
    pub threshold_subset: ThresholdSubset,
}

impl Default for RfConfig {
    fn default() -> Self {
        let d = RfMrcvOptions::default();
        RfConfig {
            repeats: d.repeats,
            validation_fraction: d.validation_fraction,
            mtry: d.grid.mtry,
            ntree: d.grid.ntree,
            min_leaf: d.min_leaf,
            class_weighting: d.class_weighting,
            threshold_subset: d.threshold_subset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub rules: Vec<FusionRule>,
    /// The two modalities to fuse; defaults to the first two by name.
    pub modalities: Option<[String; 2]>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { rules: FusionRule::ALL.to_vec(), modalities: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub schema: Schema,
    pub modalities: BTreeMap<String, ModalityConfig>,
    pub preprocess: PreprocessConfig,
    pub univariate: UnivariateConfig,
    pub lr: LrConfig,
    pub rf: RfConfig,
    pub fusion: FusionConfig,
}

impl RunConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for m in cfg.modalities.values_mut() {
            resolve(&mut m.table);
            m.test_ids.as_mut().map(resolve);
            m.test_table.as_mut().map(resolve);
        }
        cfg.output_dir.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|_| CliError::MissingInput(path.to_path_buf()))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("fusionscreen-out"))
    }

    /// Fails with the first referenced file that does not exist.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        for m in self.modalities.values() {
            for p in std::iter::once(&m.table).chain(&m.test_ids).chain(&m.test_table) {
                if !p.is_file() {
                    return Err(CliError::MissingInput(p.clone()));
                }
            }
        }
        Ok(())
    }

    fn modality(&self, name: &str) -> Result<&ModalityConfig, CliError> {
        self.modalities
            .get(name)
            .ok_or_else(|| CliError::Config(format!("unknown modality `{name}`")))
    }

    fn selected_modalities(&self, only: &Option<String>) -> Result<Vec<String>, CliError> {
        match only {
            Some(m) => self.modality(m).map(|_| vec![m.clone()]),
            None if self.modalities.is_empty() => Err(CliError::Config("no modalities configured".into())),
            None => Ok(self.modalities.keys().cloned().collect()),
        }
    }

    fn fusion_pair(&self) -> Result<[String; 2], CliError> {
        if let Some(pair) = &self.fusion.modalities {
            for m in pair {
                self.modality(m)?;
            }
            return Ok(pair.clone());
        }
        let mut names = self.modalities.keys();
        match (names.next(), names.next()) {
            (Some(a), Some(b)) => Ok([a.clone(), b.clone()]),
            _ => Err(CliError::Config("fusion needs two modalities".into())),
        }
    }
}

/// Fitted preprocessing chain: missingness filter, robust scaling, then
/// correlation pruning. Stored with every model so test data is treated
/// exactly like training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub missingness: MissingnessFilter,
    pub scalers: Option<ScalerSet>,
    pub features: Vec<String>,
    pub dropped_correlated: Vec<String>,
}

fn reference_label(cfg: &PreprocessConfig) -> Result<Option<ClassLabel>, CliError> {
    match cfg.scaler_reference.to_ascii_lowercase().as_str() {
        "none" => Ok(None),
        other => other.parse().map(Some).map_err(|_| {
            CliError::Config(format!("scaler_reference must be benign, malignant or none, got `{other}`"))
        }),
    }
}

impl Preprocessing {
    pub fn fit(train: &FeatureTable, cfg: &PreprocessConfig) -> Result<(Self, FeatureTable), CliError> {
        let missingness = MissingnessFilter::fit(train, cfg.max_missing_fraction)?;
        let mut t = missingness.apply(train)?;
        let scalers = match reference_label(cfg)? {
            Some(label) => {
                let s = preprocess::fit_robust_scaler(&t, label, cfg.per_cohort)?;
                t = preprocess::apply_scaler(&s, &t)?;
                Some(s)
            }
            None => None,
        };
        if t.n_features() == 0 {
            return Err(CliError::EmptyFeatures("every feature has zero spread in the reference class".into()));
        }
        let mut dropped_correlated = Vec::new();
        if cfg.correlation_cutoff <= 1.0 {
            let rho = preprocess::spearman_matrix(&t);
            let (pruned, dropped) = preprocess::drop_correlated(&t, &rho, cfg.correlation_cutoff);
            t = pruned;
            dropped_correlated = dropped;
        }
        let p = Preprocessing { missingness, scalers, features: t.feature_names().to_vec(), dropped_correlated };
        Ok((p, t))
    }

    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable, CliError> {
        let mut t = self.missingness.apply(table)?;
        if let Some(s) = &self.scalers {
            t = preprocess::apply_scaler(s, &t)?;
        }
        Ok(t.select_features(&self.features)?)
    }
}

pub const BUNDLE_FORMAT: &str = "fusionscreen-model";

/// A trained model with everything needed to score raw test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub modality: String,
    pub kind: ModelKind,
    pub threshold: f64,
    pub preprocessing: Preprocessing,
    pub logreg: Option<LogRegDocument>,
    pub forest: Option<ForestDocument>,
}

impl ModelBundle {
    pub fn predict(&self, table: &FeatureTable) -> Result<(FeatureTable, Vec<f64>), CliError> {
        let t = self.preprocessing.apply(table)?;
        let scores = match (self.kind, &self.logreg, &self.forest) {
            (ModelKind::Lr, Some(doc), _) => {
                let m: logreg::FittedLogReg = doc.clone().try_into().map_err(failed)?;
                logreg::predict_proba(&m, &t).map_err(|e| CliError::Mismatch(e.to_string()))?
            }
            (ModelKind::Rf, _, Some(doc)) => {
                let f: forest::Forest = doc.clone().try_into().map_err(failed)?;
                forest::predict_proba(&f, &t).map_err(|e| CliError::Mismatch(e.to_string()))?
            }
            _ => return Err(CliError::Failed("model document has no fitted model".into())),
        };
        Ok((t, scores))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|_| CliError::MissingInput(path.to_path_buf()))?;
        let b: ModelBundle = serde_json::from_str(&text).map_err(failed)?;
        if b.format != BUNDLE_FORMAT || b.version != 1 {
            return Err(failed(format!("unsupported model document {} v{}", b.format, b.version)));
        }
        Ok(b)
    }
}

#[derive(Debug, Parser)]
#[command(name = "fusionscreen", version, about = "Two-modality screening, model building and late fusion")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank-based screening of every feature.
    Univariate {
        #[arg(long)]
        modality: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Repeated cross-validation, ranking, elbow cut and final fit.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        modality: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Score the test set with trained models.
    Evaluate {
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        #[arg(long)]
        modality: Option<String>,
        /// Explicit model document; overrides the default location.
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// Explicit test table; overrides the configured test set.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Fuse evaluated modalities under each rule.
    Fuse {
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        #[arg(long, value_delimiter = ',')]
        rules: Vec<FusionRule>,
    },
    /// Write synthetic tables plus a matching config.
    Synth {
        #[arg(long, default_value_t = 250)]
        n_benign: usize,
        #[arg(long, default_value_t = 250)]
        n_malignant: usize,
        #[arg(long, default_value_t = 100)]
        features: usize,
        /// Comma list of `index:shift` with 0-based feature indices.
        #[arg(long, default_value = "0:1.0,1:0.8,2:0.6")]
        planted: String,
        /// Comma list of `size:rho` correlation blocks.
        #[arg(long, default_value = "")]
        blocks: String,
        #[arg(long, default_value_t = 1.0)]
        common_fraction: f64,
        #[arg(long, default_value_t = 0.0)]
        complementarity: f64,
        /// Test samples drawn per class from the shared samples.
        #[arg(long, default_value_t = 20)]
        test_per_class: usize,
        /// Generate a single modality instead of a pair.
        #[arg(long)]
        single: bool,
    },
    /// Collect every metrics table and ROC curve into one summary.
    Report,
}

fn parse_pairs<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<(T, f64)>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("{what} entry `{item}` is not `a:b`")))?;
            let a = a.trim().parse().map_err(|_| CliError::Config(format!("bad {what} entry `{item}`")))?;
            let b = b.trim().parse().map_err(|_| CliError::Config(format!("bad {what} entry `{item}`")))?;
            Ok((a, b))
        })
        .collect()
}

/// Resolves configuration (file, then flags) and runs the command inside a
/// pool of the requested size.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.output_dir.is_some() {
        cfg.output_dir = cli.output_dir.clone();
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(failed)?;
    pool.install(|| dispatch(cli.command, cfg))
}

fn dispatch(command: Command, mut cfg: RunConfig) -> Result<(), CliError> {
    match command {
        Command::Synth {
            n_benign,
            n_malignant,
            features,
            planted,
            blocks,
            common_fraction,
            complementarity,
            test_per_class,
            single,
        } => {
            let spec = SynthSpec {
                n_benign,
                n_malignant,
                n_features: features,
                planted: parse_pairs(&planted, "planted")?,
                correlation_blocks: parse_pairs(&blocks, "blocks")?,
                common_fraction,
                complementarity,
                seed: cfg.seed()?,
            };
            cmd_synth(&cfg, &spec, test_per_class, single)
        }
        Command::Univariate { modality, alpha } => {
            if let Some(a) = alpha {
                cfg.univariate.alpha = a;
            }
            for m in cfg.selected_modalities(&modality)? {
                cmd_univariate(&cfg, &m)?;
            }
            Ok(())
        }
        Command::Train { model, modality, repeats } => {
            if let Some(r) = repeats {
                cfg.lr.repeats = r;
                cfg.rf.repeats = r;
            }
            for m in cfg.selected_modalities(&modality)? {
                cmd_train(&cfg, &m, model)?;
            }
            Ok(())
        }
        Command::Evaluate { model, modality, model_file, test } => {
            let kinds = model.map(|k| vec![k]).unwrap_or_else(|| vec![ModelKind::Lr, ModelKind::Rf]);
            for m in cfg.selected_modalities(&modality)? {
                for &k in &kinds {
                    let file = model_file.clone().unwrap_or_else(|| model_path(&cfg, &m, k));
                    if model.is_none() && model_file.is_none() && !file.exists() {
                        continue;
                    }
                    cmd_evaluate(&cfg, &m, k, &file, test.as_deref())?;
                }
            }
            Ok(())
        }
        Command::Fuse { model, rules } => {
            if !rules.is_empty() {
                cfg.fusion.rules = rules;
            }
            let kinds = model.map(|k| vec![k]).unwrap_or_else(|| vec![ModelKind::Lr, ModelKind::Rf]);
            let [a, b] = cfg.fusion_pair()?;
            let mut any = false;
            for k in kinds {
                let (pa, pb) = (scores_path(&cfg, &a, k), scores_path(&cfg, &b, k));
                if model.is_none() && !(pa.exists() && pb.exists()) {
                    continue;
                }
                cmd_fuse(&cfg, k)?;
                any = true;
            }
            if !any {
                return Err(CliError::MissingInput(scores_path(&cfg, &a, ModelKind::Lr)));
            }
            Ok(())
        }
        Command::Report => cmd_report(&cfg),
    }
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    Ok(dir.join(name))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn model_path(cfg: &RunConfig, modality: &str, kind: ModelKind) -> PathBuf {
    cfg.output_dir().join(format!("model_{modality}_{}.json", kind.name()))
}

fn scores_path(cfg: &RunConfig, modality: &str, kind: ModelKind) -> PathBuf {
    cfg.output_dir().join(format!("scores_{modality}_{}.csv", kind.name()))
}

fn load_table(path: &Path, schema: &Schema) -> Result<FeatureTable, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingInput(path.to_path_buf()));
    }
    Ok(data::load_feature_table(path, schema)?)
}

fn test_spec(m: &ModalityConfig, seed: u64) -> Result<Option<SplitSpec>, CliError> {
    match &m.test_ids {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::MissingInput(p.clone()));
            }
            Ok(Some(SplitSpec::new(data::load_id_list(p)?, seed)))
        }
        None => Ok(None),
    }
}

/// Training rows of a modality: the table minus configured test ids.
fn training_table(cfg: &RunConfig, name: &str) -> Result<FeatureTable, CliError> {
    let m = cfg.modality(name)?;
    let table = load_table(&m.table, &cfg.schema)?;
    match test_spec(m, cfg.seed()?)? {
        Some(spec) => {
            let ids: Vec<&String> = spec.test_sample_ids.iter().filter(|id| table.sample_ids().contains(id)).collect();
            let spec = SplitSpec::new(ids.into_iter().cloned(), spec.seed);
            Ok(data::partition(&table, &spec)?.0)
        }
        None => Ok(table),
    }
}

fn test_table(cfg: &RunConfig, name: &str, explicit: Option<&Path>) -> Result<FeatureTable, CliError> {
    let m = cfg.modality(name)?;
    if let Some(p) = explicit.or(m.test_table.as_deref()) {
        return load_table(p, &cfg.schema);
    }
    let table = load_table(&m.table, &cfg.schema)?;
    match test_spec(m, cfg.seed()?)? {
        Some(spec) => {
            let ids: Vec<&String> = spec.test_sample_ids.iter().filter(|id| table.sample_ids().contains(id)).collect();
            let spec = SplitSpec::new(ids.into_iter().cloned(), spec.seed);
            Ok(data::partition(&table, &spec)?.1)
        }
        None => Err(CliError::Config(format!("modality `{name}` has neither test_ids nor test_table"))),
    }
}

pub fn cmd_synth(cfg: &RunConfig, spec: &SynthSpec, test_per_class: usize, single: bool) -> Result<(), CliError> {
    let schema = Schema::default();
    let (tables, common): (Vec<(&str, FeatureTable)>, Vec<String>) = if single {
        let t = synth::generate(spec).map_err(CliError::Config)?;
        let ids = t.sample_ids().to_vec();
        (vec![("table", t)], ids)
    } else {
        let p = synth::generate_pair(spec).map_err(CliError::Config)?;
        (vec![("modality_a", p.a), ("modality_b", p.b)], p.common_ids)
    };
    let test_ids = synth::choose_test_ids(&tables[0].1, &common, test_per_class, spec.seed);
    let mut modalities = BTreeMap::new();
    for (name, t) in &tables {
        let file = format!("{name}.csv");
        data::save_feature_table(t, &schema, out_file(cfg, &file)?)?;
        let key = name.trim_start_matches("modality_").to_string();
        modalities.insert(
            key,
            ModalityConfig { table: PathBuf::from(file), test_ids: Some(PathBuf::from("test_ids.txt")), test_table: None },
        );
    }
    let mut ids_text = String::new();
    for id in &test_ids {
        ids_text.push_str(id);
        ids_text.push('\n');
    }
    fs::write(out_file(cfg, "test_ids.txt")?, ids_text)?;
    let generated = RunConfig {
        seed: Some(spec.seed),
        output_dir: Some(PathBuf::from("results")),
        modalities,
        ..cfg.clone()
    };
    let text = toml::to_string(&generated).map_err(failed)?;
    fs::write(out_file(cfg, "synth_config.toml")?, text)?;
    info!("wrote {} synthetic table(s) to {}", tables.len(), cfg.output_dir().display());
    Ok(())
}

pub fn cmd_univariate(cfg: &RunConfig, modality: &str) -> Result<(), CliError> {
    cfg.check_inputs()?;
    let train = training_table(cfg, modality)?;
    let (_, t) = Preprocessing::fit(&train, &cfg.preprocess)?;
    let report = univariate::univariate_screen(&t, cfg.univariate.alpha).map_err(failed)?;
    info!(
        "{modality}: {} of {} features significant at FDR {}",
        report.significant,
        t.n_features(),
        cfg.univariate.alpha
    );
    univariate::write_screen_csv(&report, create(&out_file(cfg, &format!("univariate_{modality}.csv"))?)?)?;
    Ok(())
}

fn lr_options(cfg: &RunConfig) -> Result<LrMrcvOptions, CliError> {
    Ok(LrMrcvOptions {
        repeats: cfg.lr.repeats,
        validation_fraction: cfg.lr.validation_fraction,
        base_seed: cfg.seed()?,
        delta_bic_stop: cfg.lr.delta_bic_stop,
        threshold_subset: cfg.lr.threshold_subset,
    })
}

fn rf_options(cfg: &RunConfig) -> Result<RfMrcvOptions, CliError> {
    Ok(RfMrcvOptions {
        repeats: cfg.rf.repeats,
        validation_fraction: cfg.rf.validation_fraction,
        base_seed: cfg.seed()?,
        grid: RfGrid { mtry: cfg.rf.mtry.clone(), ntree: cfg.rf.ntree.clone() },
        min_leaf: cfg.rf.min_leaf,
        class_weighting: cfg.rf.class_weighting,
        threshold_subset: cfg.rf.threshold_subset,
    })
}

/// Grid point kept most often across repeats; earlier grid points win ties.
fn modal_params(outcomes: &[mrcv::FoldOutcome], grid: &[(usize, usize)]) -> Option<(usize, usize)> {
    let mut counts: Vec<usize> = vec![0; grid.len()];
    for o in outcomes {
        if let FoldDetail::Rf { params, .. } = &o.detail {
            if let Some(k) = grid.iter().position(|&(m, t)| m == params.mtry && t == params.ntree) {
                counts[k] += 1;
            }
        }
    }
    let best = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (*best.1 > 0).then(|| grid[best.0])
}

pub fn cmd_train(cfg: &RunConfig, modality: &str, kind: ModelKind) -> Result<(), CliError> {
    cfg.check_inputs()?;
    let seed = cfg.seed()?;
    let raw = training_table(cfg, modality)?;
    let (prep, train) = Preprocessing::fit(&raw, &cfg.preprocess)?;
    let candidates = train.feature_names().to_vec();
    let tag = format!("{modality}_{}", kind.name());

    let (outcomes, ranking) = match kind {
        ModelKind::Lr => {
            let o = mrcv::run_mrcv_lr(&train, &candidates, &lr_options(cfg)?)?;
            let r = mrcv::rank_features_lr_with(&o, &candidates, cfg.lr.proportional_order);
            (o, r)
        }
        ModelKind::Rf => {
            let o = mrcv::run_mrcv_rf(&train, &candidates, &rf_options(cfg)?)?;
            let r = mrcv::rank_features_rf(&o, &candidates);
            (o, r)
        }
    };
    let failures = outcomes.iter().filter(|o| o.failed()).count();
    if failures > 0 {
        log::warn!("{tag}: {failures} of {} repeats failed", outcomes.len());
    }
    let selected = match mrcv::elbow_cut(&ranking) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("{tag}: {e}; keeping every feature with a positive score");
            ranking.entries.iter().filter(|(_, s)| *s > 0.0).map(|(f, _)| f.clone()).collect()
        }
    };
    if selected.is_empty() {
        return Err(CliError::EmptyFeatures(format!("{tag}: ranking selected no features")));
    }
    info!("{tag}: elbow kept {} feature(s): {}", selected.len(), selected.join(", "));

    mrcv::write_outcomes_csv(&outcomes, create(&out_file(cfg, &format!("folds_{tag}.csv"))?)?)?;
    mrcv::write_ranking_csv(&ranking, selected.len(), create(&out_file(cfg, &format!("ranking_{tag}.csv"))?)?)?;
    fs::write(
        out_file(cfg, &format!("elbow_{tag}.svg"))?,
        report::elbow_svg(&format!("Feature ranking {modality} {}", kind.name()), &ranking.scores(), selected.len()),
    )?;

    let final_train = train.select_features(&selected)?;
    let prep = Preprocessing { features: selected.clone(), ..prep };
    let (threshold, logreg_doc, forest_doc) = match kind {
        ModelKind::Lr => {
            let m = logreg::fit(&final_train, &selected)?;
            let p = logreg::predict_proba(&m, &final_train).map_err(failed)?;
            let (t, _) = metrics::best_threshold_bacc(&p, final_train.labels()).map_err(failed)?;
            (t, Some(LogRegDocument::from(&m)), None)
        }
        ModelKind::Rf => {
            let opts = rf_options(cfg)?;
            let p = final_train.n_features();
            let grid: Vec<(usize, usize)> = opts.grid.points().into_iter().map(|(m, t)| (m.min(p), t)).collect();
            let (mtry, ntree) = modal_params(&outcomes, &grid).unwrap_or(grid[0]);
            let params = ForestParams {
                mtry: mtry.min(p),
                ntree,
                min_leaf: opts.min_leaf,
                seed,
                class_weighting: opts.class_weighting,
            };
            let f = forest::fit_forest(&final_train, &params)?;
            let s = forest::predict_proba(&f, &final_train).map_err(failed)?;
            let (t, _) = metrics::best_threshold_bacc(&s, final_train.labels()).map_err(failed)?;
            (t, None, Some(ForestDocument::from(&f)))
        }
    };
    let bundle = ModelBundle {
        format: BUNDLE_FORMAT.into(),
        version: 1,
        modality: modality.to_string(),
        kind,
        threshold,
        preprocessing: prep,
        logreg: logreg_doc,
        forest: forest_doc,
    };
    let json = serde_json::to_string_pretty(&bundle).map_err(failed)?;
    fs::write(model_path(cfg, modality, kind), json + "\n")?;
    Ok(())
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Data(d) => d.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn write_scores(
    path: &Path,
    ids: &[String],
    labels: &[ClassLabel],
    scores: &[f64],
    threshold: f64,
) -> Result<(), CliError> {
    let mut w = report::csv_writer(create(path)?, "scores")?;
    w.write_record(["sample_id", "label", "score", "threshold"])?;
    for i in 0..ids.len() {
        w.write_record([ids[i].clone(), labels[i].as_str().to_string(), fmt_f64(scores[i]), fmt_f64(threshold)])?;
    }
    w.flush()?;
    Ok(())
}

/// (ids, labels, scores, threshold) from a scores CSV.
pub type ScoreFile = (Vec<String>, Vec<ClassLabel>, Vec<f64>, f64);

pub fn read_scores(path: &Path) -> Result<ScoreFile, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(failed)?;
    let (mut ids, mut labels, mut scores) = (Vec::new(), Vec::new(), Vec::new());
    let mut threshold = f64::NAN;
    for rec in r.records() {
        let rec = rec.map_err(failed)?;
        let field = |k: usize| rec.get(k).ok_or_else(|| failed(format!("{}: short row", path.display())));
        ids.push(field(0)?.to_string());
        labels.push(field(1)?.parse().map_err(failed)?);
        scores.push(field(2)?.parse().map_err(failed)?);
        threshold = field(3)?.parse().map_err(failed)?;
    }
    Ok((ids, labels, scores, threshold))
}

fn evaluate_scores(scores: &[f64], labels: &[ClassLabel], threshold: f64) -> Result<(MetricsRow, metrics::Confusion, metrics::RocCurve), CliError> {
    let c = metrics::confusion(scores, labels, threshold).map_err(failed)?;
    let roc = metrics::roc_curve(scores, labels).map_err(failed)?;
    let row = metrics::metrics_from_confusion(&c).map_err(failed)?.with_auc(roc.auc());
    Ok((row, c, roc))
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    modality: &str,
    kind: ModelKind,
    model_file: &Path,
    explicit_test: Option<&Path>,
) -> Result<(), CliError> {
    let bundle = ModelBundle::load(model_file)?;
    let test = test_table(cfg, modality, explicit_test)?;
    let (t, scores) = bundle.predict(&test)?;
    let tag = format!("{modality}_{}", kind.name());
    let label = format!("{modality}/{}", kind.name());
    write_scores(&scores_path(cfg, modality, kind), t.sample_ids(), t.labels(), &scores, bundle.threshold)?;
    let (row, c, roc) = evaluate_scores(&scores, t.labels(), bundle.threshold)?;
    metrics::write_metrics_csv(&[(label.clone(), row)], create(&out_file(cfg, &format!("metrics_{tag}.csv"))?)?)?;
    fs::write(
        out_file(cfg, &format!("roc_{tag}.svg"))?,
        report::roc_svg(&format!("ROC {label}"), &[(label.clone(), roc.xy(), roc.auc())]),
    )?;
    fs::write(
        out_file(cfg, &format!("confusion_{tag}.svg"))?,
        report::confusion_svg(&format!("Confusion {label}"), &[(label, c.as_matrix())]),
    )?;
    Ok(())
}

pub fn cmd_fuse(cfg: &RunConfig, kind: ModelKind) -> Result<(), CliError> {
    let [a, b] = cfg.fusion_pair()?;
    let (ids_a, labels_a, scores_a, thr_a) = read_scores(&scores_path(cfg, &a, kind))?;
    let (ids_b, labels_b, scores_b, thr_b) = read_scores(&scores_path(cfg, &b, kind))?;
    let index_b: BTreeMap<&str, usize> = ids_b.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut common = Vec::new();
    for (i, id) in ids_a.iter().enumerate() {
        if let Some(&j) = index_b.get(id.as_str()) {
            if labels_a[i] != labels_b[j] {
                return Err(CliError::Mismatch(format!("sample `{id}` is labelled differently in {a} and {b}")));
            }
            common.push((i, j));
        }
    }
    if common.is_empty() {
        return Err(CliError::EmptyFusion);
    }
    let ids: Vec<String> = common.iter().map(|&(i, _)| ids_a[i].clone()).collect();
    let labels: Vec<ClassLabel> = common.iter().map(|&(i, _)| labels_a[i]).collect();
    let ma = ModalityScores { sample_ids: ids.clone(), scores: common.iter().map(|&(i, _)| scores_a[i]).collect(), threshold: thr_a };
    let mb = ModalityScores { sample_ids: ids.clone(), scores: common.iter().map(|&(_, j)| scores_b[j]).collect(), threshold: thr_b };

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut panels = Vec::new();
    for (name, m) in [(&a, &ma), (&b, &mb)] {
        let label = format!("{name}/{}", kind.name());
        let (row, c, roc) = evaluate_scores(&m.scores, &labels, m.threshold)?;
        curves.push((label.clone(), roc.xy(), roc.auc()));
        panels.push((label.clone(), c.as_matrix()));
        rows.push((label, row));
    }
    for &rule in &cfg.fusion.rules {
        let fused = fusion::fuse_modalities(&ma, &mb, rule).map_err(failed)?;
        let tag = format!("{}_{}", kind.name(), rule.name());
        fusion::write_fused_csv(&fused, create(&out_file(cfg, &format!("fused_{tag}.csv"))?)?)?;
        write_scores(
            &out_file(cfg, &format!("scores_fused_{tag}.csv"))?,
            &ids,
            &labels,
            &fused.fused_probability,
            fused.fused_threshold,
        )?;
        let label = format!("{}/{}", kind.name(), rule.name());
        let (row, c, roc) = evaluate_scores(&fused.fused_probability, &labels, fused.fused_threshold)?;
        curves.push((label.clone(), roc.xy(), roc.auc()));
        panels.push((label.clone(), c.as_matrix()));
        rows.push((label, row));
    }
    let k = kind.name();
    metrics::write_metrics_csv(&rows, create(&out_file(cfg, &format!("metrics_fusion_{k}.csv"))?)?)?;
    fs::write(out_file(cfg, &format!("roc_fusion_{k}.svg"))?, report::roc_svg(&format!("ROC fusion {k}"), &curves))?;
    fs::write(
        out_file(cfg, &format!("confusion_fusion_{k}.svg"))?,
        report::confusion_svg(&format!("Confusion fusion {k}"), &panels),
    )?;
    Ok(())
}

fn sorted_outputs(cfg: &RunConfig, prefix: &str) -> Result<Vec<PathBuf>, CliError> {
    let dir = cfg.output_dir();
    if !dir.is_dir() {
        return Err(CliError::MissingInput(dir));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with(prefix) && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_report(cfg: &RunConfig) -> Result<(), CliError> {
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for path in sorted_outputs(cfg, "metrics_")? {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path).map_err(failed)?;
        for rec in r.records() {
            let rec = rec.map_err(failed)?;
            if seen.insert(rec.get(0).unwrap_or("").to_string()) {
                rows.push(rec);
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::MissingInput(cfg.output_dir().join("metrics_*.csv")));
    }
    let mut w = report::csv_writer(create(&out_file(cfg, "summary_metrics.csv")?)?, "summary_metrics")?;
    let mut header = vec!["model"];
    header.extend(metrics::METRIC_NAMES);
    w.write_record(&header)?;
    for rec in &rows {
        w.write_record(rec)?;
    }
    w.flush()?;

    let mut curves = Vec::new();
    for path in sorted_outputs(cfg, "scores_")? {
        let (_, labels, scores, _) = read_scores(&path)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").trim_start_matches("scores_").to_string();
        if let Ok(roc) = metrics::roc_curve(&scores, &labels) {
            curves.push((name, roc.xy(), roc.auc()));
        }
    }
    fs::write(out_file(cfg, "summary_roc.svg")?, report::roc_svg("ROC summary", &curves))?;
    Ok(())
}

/// Runs synth-free stages end to end for every configured modality:
/// univariate, train (lr and rf), evaluate, fuse and report.
pub fn run_pipeline(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.check_inputs()?;
    let modalities: Vec<String> = cfg.modalities.keys().cloned().collect();
    for m in &modalities {
        cmd_univariate(cfg, m)?;
        for kind in [ModelKind::Lr, ModelKind::Rf] {
            cmd_train(cfg, m, kind)?;
            cmd_evaluate(cfg, m, kind, &model_path(cfg, m, kind), None)?;
        }
    }
    if modalities.len() >= 2 {
        for kind in [ModelKind::Lr, ModelKind::Rf] {
            cmd_fuse(cfg, kind)?;
        }
    }
    cmd_report(cfg)
}
