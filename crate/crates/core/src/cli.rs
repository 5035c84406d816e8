//! Command-line front end: `synth`, `preprocess`, `select`, `evaluate`,
//! `report` and `run` (all three pipeline stages).
//!
//! Every command reads one JSON [`PipelineConfig`]; `--set dotted.path=value`
//! overrides any field. Relative paths in the config resolve against the
//! config file's directory. Every artifact carries the config hash and seed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::boruta::{BorutaConfig, TreeCount};
use crate::classifiers::{train, ClassifierSpec};
use crate::dataset::{
    compute_partition_stats, filter_low_expression, load_dataset, log_transform, ExpressionDataset,
    DEFAULT_FILTER_THRESHOLD,
};
use crate::ensemble::{fuse, Fusion};
use crate::error::Error;
use crate::eval::{stratified_folds, CvReport, FoldPlan, FoldPrediction};
use crate::forest::ForestConfig;
use crate::fsfsp::{apply_feature_set, default_depths, ranking_fsfsp, RankedFeatureSets, SweepConfig};
use crate::proba::ProbabilityMatrix;
use crate::testkit::{generate, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub preprocess: PreprocessConfig,
    pub sweep: SweepSettings,
    pub classifiers: Vec<ClassifierSpec>,
    pub ensemble: EnsembleSettings,
    pub cv: CvSettings,
    pub report: ReportSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: PathsConfig::default(),
            preprocess: PreprocessConfig::default(),
            sweep: SweepSettings::default(),
            classifiers: ClassifierSpec::all_defaults(),
            ensemble: EnsembleSettings::default(),
            cv: CvSettings::default(),
            report: ReportSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub matrix: PathBuf,
    pub labels: PathBuf,
    pub feature_types: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            matrix: "matrix.csv".into(),
            labels: "labels.csv".into(),
            feature_types: "feature_types.csv".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Features whose every value is below this are dropped (raw scale).
    pub filter_threshold: f64,
    pub log_transform: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            filter_threshold: DEFAULT_FILTER_THRESHOLD,
            log_transform: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub depths: Vec<usize>,
    pub alpha: f64,
    pub max_iter: usize,
    pub n_estimators: TreeCount,
    /// Boruta forest settings; `max_depth` is replaced by each sweep depth.
    pub forest: ForestConfig,
}

impl Default for SweepSettings {
    fn default() -> Self {
        let b = BorutaConfig::default();
        Self {
            depths: default_depths(),
            alpha: b.alpha,
            max_iter: b.max_iter,
            n_estimators: b.n_estimators,
            forest: b.forest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSettings {
    pub members: Vec<ClassifierSpec>,
    pub fusions: Vec<Fusion>,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        Self {
            members: vec![
                ClassifierSpec::softmax_lr(),
                ClassifierSpec::linear_svm(),
                ClassifierSpec::gradient_boost(),
            ],
            fusions: vec![Fusion::MaxVote, Fusion::AverageVote],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub k: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    /// `all` or `rank_N`.
    pub feature_sets: Vec<String>,
    pub roc_grid_points: usize,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self {
            feature_sets: vec!["all".into(), "rank_1".into()],
            roc_grid_points: 101,
        }
    }
}

impl PipelineConfig {
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            depths: self.sweep.depths.clone(),
            boruta: BorutaConfig {
                max_iter: self.sweep.max_iter,
                alpha: self.sweep.alpha,
                forest: self.sweep.forest,
                n_estimators: self.sweep.n_estimators,
                seed: self.seed,
            },
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if !(self.preprocess.filter_threshold >= 0.0) {
            return usage("preprocess.filter_threshold must be >= 0".into());
        }
        self.sweep_config().validate()?;
        if self.classifiers.is_empty() && self.ensemble.fusions.is_empty() {
            return usage("no classifiers or ensembles requested".into());
        }
        self.classifiers.iter().try_for_each(ClassifierSpec::validate)?;
        if !self.ensemble.fusions.is_empty() {
            if self.ensemble.members.is_empty() {
                return usage("ensemble.members is empty".into());
            }
            self.ensemble.members.iter().try_for_each(ClassifierSpec::validate)?;
        }
        if self.cv.k < 2 {
            return usage("cv.k must be >= 2".into());
        }
        if self.report.roc_grid_points < 2 {
            return usage("report.roc_grid_points must be >= 2".into());
        }
        for set in &self.report.feature_sets {
            FeatureSetName::parse(set)?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the config's canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Sets `path` (dot-separated; numeric segments index arrays) in a JSON
/// document. The value is parsed as JSON when possible, else kept as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not of the form path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut at = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        at = match at {
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| CliError::Usage(format!("`{seg}` in `{path}` must be an array index")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Usage(format!("index {idx} out of range ({len} items) in `{path}`")))?
            }
            Value::Object(map) => map.entry(seg.to_string()).or_insert(if last { Value::Null } else { Value::Object(Default::default()) }),
            _ => return Err(CliError::Usage(format!("`{path}` descends into a scalar"))),
        };
        if last {
            *at = value;
            return Ok(());
        }
    }
    Err(CliError::Usage("empty override path".into()))
}

/// Reads the config (or the defaults), applies overrides, validates, and
/// resolves relative paths against the config file's directory. Returns the
/// config with its hash, taken before path resolution so the hash identifies
/// the document as written rather than where it was found.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<(PipelineConfig, String), CliError> {
    let (mut doc, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
            (doc, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (serde_json::to_value(PipelineConfig::default())?, PathBuf::new()),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let mut cfg: PipelineConfig =
        serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    cfg.validate()?;
    let hash = cfg.hash();
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    resolve(&mut cfg.paths.matrix);
    resolve(&mut cfg.paths.labels);
    resolve(&mut cfg.paths.feature_types);
    resolve(&mut cfg.paths.output_dir);
    Ok((cfg, hash))
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] Error),
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl CliError {
    /// 2 for usage, configuration and missing-input errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Pipeline(Error::Config(_)) => 2,
            CliError::Pipeline(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 2,
            CliError::Pipeline(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rankfs", version, about = "Partitioned Boruta feature ranking and voting-ensemble evaluation")]
pub struct Cli {
    /// Worker threads for depth- and fold-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// Pipeline config (JSON). Defaults apply to omitted fields.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set sweep.depths=[5,10]`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted informative features.
    Synth(SynthArgs),
    /// Filter low-expression features, log-transform and summarize.
    Preprocess(ConfigArgs),
    /// Run the depth sweep and write the ranked feature sets.
    Select(ConfigArgs),
    /// Cross-validate classifiers and ensembles on the requested feature sets.
    Evaluate(ConfigArgs),
    /// Re-render the summary tables from the written JSON reports.
    Report(ConfigArgs),
    /// preprocess, select and evaluate in sequence.
    Run(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for the generated files and a starter config.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Full generator spec as JSON; the flags below are ignored when given.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub informative: usize,
    #[arg(long, default_value_t = 180)]
    pub noise: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

struct Progress {
    start: Instant,
    quiet: bool,
}

impl Progress {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[{:>8.1}s] {}", self.start.elapsed().as_secs_f64(), msg.as_ref());
        }
    }
}

/// Stamp written into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub tool: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    pub data: T,
}

struct Context {
    cfg: PipelineConfig,
    provenance: Provenance,
    progress: Progress,
}

impl Context {
    fn comment(&self) -> String {
        format!(
            "config_hash={}; seed={}",
            self.provenance.config_hash, self.provenance.seed
        )
    }

    fn dir(&self, sub: &str) -> Result<PathBuf, CliError> {
        let d = self.cfg.paths.output_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    fn write_json<T: Serialize>(&self, path: &Path, data: &T) -> Result<(), CliError> {
        let artifact = Artifact {
            provenance: self.provenance.clone(),
            data,
        };
        let text = serde_json::to_string_pretty(&artifact)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    fn write_text(&self, path: &Path, body: &str) -> Result<(), CliError> {
        let text = format!("# {}\n{body}", self.comment());
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    fn processed_paths(&self) -> (PathBuf, PathBuf, PathBuf) {
        let d = self.cfg.paths.output_dir.join("processed");
        (d.join("matrix.csv"), d.join("labels.csv"), d.join("feature_types.csv"))
    }

    fn load_processed(&self) -> Result<ExpressionDataset, CliError> {
        let (m, l, t) = self.processed_paths();
        if !m.exists() {
            return Err(CliError::Usage(format!(
                "{} not found; run `rankfs preprocess` first",
                m.display()
            )));
        }
        let (ds, _) = load_dataset(&m, &l, &t)?;
        Ok(if self.cfg.preprocess.log_transform {
            ds.assume_log_transformed()
        } else {
            ds
        })
    }

    fn ranking_path(&self) -> PathBuf {
        self.cfg.paths.output_dir.join("selection").join("ranking.json")
    }
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Runs a parsed command, inside a dedicated thread pool when `--workers`
/// is given.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.workers {
        Some(0) => Err(CliError::Usage("--workers must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?;
            pool.install(|| dispatch(&cli))
        }
        None => dispatch(&cli),
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let progress = Progress {
        start: Instant::now(),
        quiet: cli.quiet,
    };
    let args = match &cli.command {
        Command::Synth(a) => return cmd_synth(a, &progress),
        Command::Preprocess(a)
        | Command::Select(a)
        | Command::Evaluate(a)
        | Command::Report(a)
        | Command::Run(a) => a,
    };
    let (cfg, config_hash) = load_config(args.config.as_deref(), &args.overrides)?;
    let provenance = Provenance {
        config_hash,
        seed: cfg.seed,
        tool: format!("rankfs {}", env!("CARGO_PKG_VERSION")),
    };
    let ctx = Context {
        cfg,
        provenance,
        progress,
    };
    match &cli.command {
        Command::Preprocess(_) => cmd_preprocess(&ctx),
        Command::Select(_) => cmd_select(&ctx),
        Command::Evaluate(_) => cmd_evaluate(&ctx),
        Command::Report(_) => cmd_report(&ctx),
        Command::Run(_) => {
            cmd_preprocess(&ctx)?;
            cmd_select(&ctx)?;
            cmd_evaluate(&ctx)
        }
        Command::Synth(_) => unreachable!(),
    }
}

fn cmd_synth(args: &SynthArgs, progress: &Progress) -> Result<(), CliError> {
    let spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec {
            n_samples: args.samples,
            n_classes: args.classes,
            n_informative: args.informative,
            n_noise: args.noise,
            class_separation: args.separation,
            seed: args.seed,
            ..SynthSpec::default()
        },
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let synth = generate(&spec)?;
    synth.write_to(&args.out, &spec, Some(&format!("synthetic; seed={}", spec.seed)))?;
    let cfg = PipelineConfig {
        seed: spec.seed,
        ..PipelineConfig::default()
    };
    let path = args.out.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg)? + "\n").map_err(|e| Error::io(&path, e))?;
    progress.log(format!(
        "wrote {} samples x {} features ({} informative) to {}",
        spec.n_samples,
        spec.n_informative + spec.n_noise,
        synth.informative.len(),
        args.out.display()
    ));
    Ok(())
}

fn cmd_preprocess(ctx: &Context) -> Result<(), CliError> {
    let p = &ctx.cfg.paths;
    ctx.progress.log(format!("loading {}", p.matrix.display()));
    let (raw, mut report) = load_dataset(&p.matrix, &p.labels, &p.feature_types)?;
    let filtered = filter_low_expression(&raw, ctx.cfg.preprocess.filter_threshold)?;
    report.filtered_features = raw.n_features() - filtered.n_features();
    let ds = if ctx.cfg.preprocess.log_transform {
        log_transform(&filtered)?
    } else {
        filtered
    };
    ctx.progress.log(format!(
        "{} samples, {} of {} features kept",
        ds.n_samples(),
        ds.n_features(),
        raw.n_features()
    ));
    let stats = compute_partition_stats(&ds);
    let dir = ctx.dir("processed")?;
    let (m, l, t) = ctx.processed_paths();
    ds.write_files(&m, &l, &t, Some(&ctx.comment()))?;
    ctx.write_json(&dir.join("stats.json"), &stats)?;
    ctx.write_json(&dir.join("load_report.json"), &report)?;
    ctx.progress.log(format!("preprocess done -> {}", dir.display()));
    Ok(())
}

fn rank_table(r: &RankedFeatureSets) -> String {
    let mut out = String::from("set      features\n");
    for (n, rank) in r.ranks.iter().enumerate() {
        let _ = writeln!(out, "{:<8} {:>8}", format!("Rank_{}", n + 1), rank.len());
    }
    out.push_str("\ndepth    selected\n");
    for (d, set) in r.depths.iter().zip(&r.per_depth) {
        let _ = writeln!(out, "{d:<8} {:>8}", set.len());
    }
    out
}

fn cmd_select(ctx: &Context) -> Result<(), CliError> {
    let ds = ctx.load_processed()?;
    let sweep = ctx.cfg.sweep_config();
    ctx.progress.log(format!(
        "ranking sweep over depths {:?} on {} features",
        sweep.depths,
        ds.n_features()
    ));
    let ranked = ranking_fsfsp(&ds, &sweep)?;
    let dir = ctx.dir("selection")?;
    ctx.write_json(&ctx.ranking_path(), &ranked)?;
    ctx.write_text(&dir.join("rank_sizes.txt"), &rank_table(&ranked))?;
    ctx.progress.log(format!("rank sizes {:?}", ranked.rank_sizes()));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum FeatureSetName {
    All,
    Rank(usize),
}

impl FeatureSetName {
    fn parse(s: &str) -> Result<Self, CliError> {
        if s == "all" {
            return Ok(Self::All);
        }
        s.strip_prefix("rank_")
            .and_then(|n| n.parse().ok())
            .filter(|&n| n >= 1)
            .map(Self::Rank)
            .ok_or_else(|| CliError::Usage(format!("feature set `{s}` is neither `all` nor `rank_N`")))
    }
}

/// One cross-validated model, as written to `<set>/<model>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub feature_set: String,
    pub n_features: usize,
    pub members: Vec<ClassifierSpec>,
    pub fusion: Option<Fusion>,
    pub stratified: bool,
    /// Folds in which an iterative solver hit its iteration cap.
    pub non_converged_folds: usize,
    /// Samples resolved by the max-vote tie fallback, over all folds.
    pub vote_ties: usize,
    pub cv: CvReport,
    pub confusion_row_normalized: Vec<Vec<f64>>,
}

/// Unique file stems per model: `lr`, `svm`, ..., with `_2`, `_3` suffixes
/// for repeated kinds.
fn model_names(cfg: &PipelineConfig) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    let base = cfg
        .classifiers
        .iter()
        .map(|c| c.name().to_string())
        .chain(cfg.ensemble.fusions.iter().map(|f| f.name().to_string()));
    for b in base {
        let mut name = b.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{b}_{k}");
            k += 1;
        }
        names.push(name);
    }
    names
}

struct MemberRun {
    spec: ClassifierSpec,
    probas: Vec<ProbabilityMatrix>,
    non_converged: usize,
}

fn cv_member(
    ds: &ExpressionDataset,
    plan: &FoldPlan,
    spec: &ClassifierSpec,
) -> Result<MemberRun, CliError> {
    use rayon::prelude::*;
    let per_fold = (0..plan.k)
        .into_par_iter()
        .map(|f| -> crate::Result<(ProbabilityMatrix, bool)> {
            let tr = ds.select_rows(&plan.train_indices(f))?;
            let te = ds.select_rows(plan.test_indices(f))?;
            let model = train(spec, &tr)?;
            Ok((model.predict_proba(&te)?, model.converged))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(MemberRun {
        spec: *spec,
        non_converged: per_fold.iter().filter(|(_, c)| !c).count(),
        probas: per_fold.into_iter().map(|(p, _)| p).collect(),
    })
}

fn confusion_csv(cv: &CvReport, class_names: &[String]) -> String {
    let mut out = String::from("true\\predicted");
    for c in class_names {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (i, row) in cv.confusion.counts().rows().into_iter().enumerate() {
        out.push_str(&class_names[i]);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn roc_csv(cv: &CvReport, truth: &[usize], class_names: &[String], grid: usize) -> String {
    let curves = cv.mean_roc(truth, grid);
    let mut out = String::from("class,fpr,tpr\n");
    for c in &curves {
        for (x, y) in c.fpr.iter().zip(&c.tpr) {
            let _ = writeln!(out, "{},{x},{y}", class_names[c.class]);
        }
    }
    if !curves.is_empty() {
        let fpr = &curves[0].fpr;
        for (i, x) in fpr.iter().enumerate() {
            let mean = curves.iter().map(|c| c.tpr[i]).sum::<f64>() / curves.len() as f64;
            let _ = writeln!(out, "macro,{x},{mean}");
        }
    }
    out
}

fn write_model(ctx: &Context, dir: &Path, name: &str, report: &ModelReport, ds: &ExpressionDataset) -> Result<(), CliError> {
    let stem = name.to_lowercase();
    ctx.write_json(&dir.join(format!("{stem}.json")), report)?;
    ctx.write_text(
        &dir.join(format!("{stem}_confusion.csv")),
        &confusion_csv(&report.cv, ds.class_names()),
    )?;
    ctx.write_text(
        &dir.join(format!("{stem}_roc.csv")),
        &roc_csv(&report.cv, ds.labels(), ds.class_names(), ctx.cfg.report.roc_grid_points),
    )?;
    Ok(())
}

fn cmd_evaluate(ctx: &Context) -> Result<(), CliError> {
    let full = ctx.load_processed()?;
    let cfg = &ctx.cfg;
    let sets: Vec<(String, FeatureSetName)> = cfg
        .report
        .feature_sets
        .iter()
        .map(|s| FeatureSetName::parse(s).map(|n| (s.clone(), n)))
        .collect::<Result<_, _>>()?;
    let ranking = if sets.iter().any(|(_, n)| matches!(n, FeatureSetName::Rank(_))) {
        let path = ctx.ranking_path();
        let text = std::fs::read_to_string(&path).map_err(|_| {
            CliError::Usage(format!("{} not found; run `rankfs select` first", path.display()))
        })?;
        let a: Artifact<RankedFeatureSets> = serde_json::from_str(&text)?;
        Some(a.data)
    } else {
        None
    };
    let plan = stratified_folds(full.labels(), cfg.cv.k, cfg.seed, full.class_names())?;
    let names = model_names(cfg);
    let eval_dir = ctx.dir("evaluation")?;

    for (set_name, set) in &sets {
        let ds = match set {
            FeatureSetName::All => full.clone(),
            FeatureSetName::Rank(n) => {
                let ranking = ranking.as_ref().expect("loaded above");
                match ranking.rank(*n) {
                    Some(ids) if !ids.is_empty() => apply_feature_set(&full, ids)?,
                    Some(_) => {
                        ctx.progress.log(format!("{set_name} is empty; skipped"));
                        continue;
                    }
                    None => {
                        return Err(CliError::Usage(format!(
                            "{set_name} requested but the sweep has {} depths",
                            ranking.ranks.len()
                        )))
                    }
                }
            }
        };
        let dir = ctx.dir(&format!("evaluation/{set_name}"))?;
        let mut cache: Vec<MemberRun> = Vec::new();
        let run_of = |spec: &ClassifierSpec, cache: &mut Vec<MemberRun>| -> Result<usize, CliError> {
            if let Some(i) = cache.iter().position(|m| m.spec == *spec) {
                return Ok(i);
            }
            let t = Instant::now();
            let run = cv_member(&ds, &plan, spec)?;
            ctx.progress.log(format!(
                "{set_name}: {} cross-validated in {:.1}s",
                spec.name(),
                t.elapsed().as_secs_f64()
            ));
            cache.push(run);
            Ok(cache.len() - 1)
        };

        let mut name_iter = names.iter();
        for spec in &cfg.classifiers {
            let name = name_iter.next().expect("one name per model");
            let i = run_of(spec, &mut cache)?;
            let run = &cache[i];
            let preds = run
                .probas
                .iter()
                .map(|p| FoldPrediction {
                    labels: p.argmax(),
                    proba: Some(p.clone()),
                })
                .collect();
            let cv = CvReport::from_predictions(ds.labels(), ds.n_classes(), &plan, preds)?;
            let report = ModelReport {
                model: name.clone(),
                feature_set: set_name.clone(),
                n_features: ds.n_features(),
                members: vec![*spec],
                fusion: None,
                stratified: true,
                non_converged_folds: run.non_converged,
                vote_ties: 0,
                confusion_row_normalized: rows_of(&cv),
                cv,
            };
            write_model(ctx, &dir, name, &report, &ds)?;
            ctx.progress.log(format!("{set_name}: {name} accuracy {:.4}", report.cv.aggregate.accuracy));
        }

        if !cfg.ensemble.fusions.is_empty() {
            let idx: Vec<usize> = cfg
                .ensemble
                .members
                .iter()
                .map(|s| run_of(s, &mut cache))
                .collect::<Result<_, _>>()?;
            for &fusion in &cfg.ensemble.fusions {
                let name = name_iter.next().expect("one name per model");
                let mut ties = 0;
                let preds = (0..plan.k)
                    .map(|f| {
                        let members: Vec<ProbabilityMatrix> = idx.iter().map(|&i| cache[i].probas[f].clone()).collect();
                        let fused = fuse(fusion, &members)?;
                        ties += fused.ties.len();
                        Ok(FoldPrediction {
                            labels: fused.labels,
                            proba: Some(fused.proba),
                        })
                    })
                    .collect::<crate::Result<Vec<_>>>()?;
                let cv = CvReport::from_predictions(ds.labels(), ds.n_classes(), &plan, preds)?;
                let report = ModelReport {
                    model: name.clone(),
                    feature_set: set_name.clone(),
                    n_features: ds.n_features(),
                    members: cfg.ensemble.members.clone(),
                    fusion: Some(fusion),
                    stratified: true,
                    non_converged_folds: idx.iter().map(|&i| cache[i].non_converged).sum(),
                    vote_ties: ties,
                    confusion_row_normalized: rows_of(&cv),
                    cv,
                };
                write_model(ctx, &dir, name, &report, &ds)?;
                ctx.progress.log(format!("{set_name}: {name} accuracy {:.4}", report.cv.aggregate.accuracy));
            }
        }
    }
    write_summary(ctx, &eval_dir)?;
    Ok(())
}

fn rows_of(cv: &CvReport) -> Vec<Vec<f64>> {
    cv.confusion
        .row_normalized()
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect()
}

/// Reads every per-model report under `eval_dir` named by the config and
/// writes `summary.csv` and the models x feature-sets accuracy table
/// `summary.txt`. Returns the table text.
fn write_summary(ctx: &Context, eval_dir: &Path) -> Result<String, CliError> {
    let names = model_names(&ctx.cfg);
    let mut reports: Vec<Vec<Option<ModelReport>>> = Vec::new();
    for set in &ctx.cfg.report.feature_sets {
        let row = names
            .iter()
            .map(|name| {
                let path = eval_dir.join(set).join(format!("{}.json", name.to_lowercase()));
                match std::fs::read_to_string(&path) {
                    Ok(text) => serde_json::from_str::<Artifact<ModelReport>>(&text)
                        .map(|a| Some(a.data))
                        .map_err(CliError::from),
                    Err(_) => Ok(None),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        reports.push(row);
    }

    let mut csv = String::from(
        "model,feature_set,n_features,accuracy,accuracy_sd,macro_precision,macro_recall,macro_f1,weighted_f1,kappa,auc_macro,auc_weighted\n",
    );
    for (name_idx, name) in names.iter().enumerate() {
        for (set_idx, set) in ctx.cfg.report.feature_sets.iter().enumerate() {
            if let Some(r) = &reports[set_idx][name_idx] {
                let a = &r.cv.aggregate;
                let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
                let _ = writeln!(
                    csv,
                    "{name},{set},{},{},{},{},{},{},{},{},{},{}",
                    r.n_features,
                    a.accuracy,
                    a.accuracy_sd,
                    a.macro_avg.precision,
                    a.macro_avg.recall,
                    a.macro_avg.f1,
                    a.weighted_avg.f1,
                    a.kappa,
                    opt(a.auc_macro),
                    opt(a.auc_weighted)
                );
            }
        }
    }

    let mut table = format!("{:<10}", "model");
    for (set_idx, set) in ctx.cfg.report.feature_sets.iter().enumerate() {
        let width = reports[set_idx].iter().flatten().map(|r| r.n_features).next();
        let head = width.map_or(set.clone(), |w| format!("{set}({w})"));
        let _ = write!(table, " {head:>14}");
    }
    table.push('\n');
    for (name_idx, name) in names.iter().enumerate() {
        let _ = write!(table, "{name:<10}");
        for row in &reports {
            let cell = row[name_idx]
                .as_ref()
                .map_or("-".to_string(), |r| format!("{:.2}", 100.0 * r.cv.aggregate.accuracy));
            let _ = write!(table, " {cell:>14}");
        }
        table.push('\n');
    }
    ctx.write_text(&eval_dir.join("summary.csv"), &csv)?;
    ctx.write_text(&eval_dir.join("summary.txt"), &table)?;
    Ok(table)
}

fn cmd_report(ctx: &Context) -> Result<(), CliError> {
    let ranking_path = ctx.ranking_path();
    if let Ok(text) = std::fs::read_to_string(&ranking_path) {
        let a: Artifact<RankedFeatureSets> = serde_json::from_str(&text)?;
        let table = rank_table(&a.data);
        ctx.write_text(&ctx.dir("selection")?.join("rank_sizes.txt"), &table)?;
        println!("{table}");
    }
    let eval_dir = ctx.cfg.paths.output_dir.join("evaluation");
    if !eval_dir.exists() {
        return Err(CliError::Usage(format!(
            "{} not found; run `rankfs evaluate` first",
            eval_dir.display()
        )));
    }
    print!("{}", write_summary(ctx, &eval_dir)?);
    Ok(())
}
