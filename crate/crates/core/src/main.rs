//! Pipeline driver. Each subcommand runs one stage, writes an immutable
//! output directory, and seals it with a run manifest; downstream stages
//! verify their inputs' content hashes before consuming them.
//!
//! Exit codes: 0 success, 1 validation error (arguments, configs,
//! malformed input data), 2 runtime failure (I/O, hash mismatches,
//! training errors).

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use impairdetect::data::{ingest_cohort, Task};
use impairdetect::eval::{aggregate, aggregate_multiclass, regression_eval, EvalReport};
use impairdetect::features::{FeatureCatalog, FeatureModality, MissingPolicy};
use impairdetect::linear::{coefficient_family_report, LambdaSpec, LassoConfig};
use impairdetect::manifest::{self, InputRef, ManifestError};
use impairdetect::neural::{save_checkpoint, TrainConfig};
use impairdetect::pipeline as pl;
use impairdetect::pipeline::{CnnLosoConfig, CnnOutput, LrLosoConfig, NormScope, PreprocessConfig};
use impairdetect::preprocess::ArousalModel;
use impairdetect::synth::{generate_cohort, SynthConfig};
use impairdetect::window::{WindowSpec, SWEEP_LENGTHS_S};

#[derive(Parser)]
#[command(
    name = "impairdetect",
    version,
    about = "Smartwatch-signal impairment detection pipeline",
    arg_required_else_help = true
)]
struct Cli {
    /// Cap worker parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic study cohort.
    Synth(SynthArgs),
    /// Clean signals, normalize, and estimate 1 Hz arousal.
    Preprocess(PreprocessArgs),
    /// Cut phase-respecting sliding windows onto fixed grids.
    Window(WindowArgs),
    /// Compute the per-window feature matrix.
    Featurize(FeaturizeArgs),
    /// Fit the L1 logistic model, one fold per held-out participant.
    TrainLr(TrainLrArgs),
    /// Train the two-tower CNN, one fold per held-out participant.
    TrainCnn(TrainCnnArgs),
    /// Recompute metrics, curves, and smoothed AUROC from predictions.
    Evaluate(EvaluateArgs),
    /// Run an effect-size or window-length sweep end to end.
    Sweep(SweepArgs),
    /// Consolidate reports into comparison tables.
    Report(ReportArgs),
}

// ---------------------------------------------------------------------------
// Errors and small helpers
// ---------------------------------------------------------------------------

enum CliError {
    Validation(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

fn validation(e: impl Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Output directories must not exist unless forced; that is an argument
/// problem, not a runtime one.
fn prepare_out(dir: &Path, force: bool) -> CliResult<()> {
    manifest::prepare_out_dir(dir, force).map_err(|e| match e {
        ManifestError::OutputNotEmpty(_) => validation(e),
        other => runtime(other),
    })
}

/// Pins an upstream directory: sealed inputs are re-hashed and must match
/// their manifest; unsealed ones (hand-assembled data) are pinned by raw
/// content hash.
fn pin_input(dir: &Path) -> CliResult<InputRef> {
    match manifest::input_ref(dir) {
        Ok(r) => Ok(r),
        Err(ManifestError::MissingManifest(_)) => Ok(InputRef {
            path: dir.to_string_lossy().into_owned(),
            sha256: manifest::hash_dir(dir).map_err(runtime)?,
        }),
        Err(e) => Err(runtime(e)),
    }
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var("IMPAIRDETECT_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|e| validation(format!("IMPAIRDETECT_SEED {v:?}: {e}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(validation(format!("IMPAIRDETECT_SEED: {e}"))),
    }
}

/// Seed precedence: explicit flag, then the environment default, then the
/// built-in fallback. Configs that carry their own seed take it between
/// flag and environment (handled at the call sites that load configs).
fn effective_seed(flag: Option<u64>, fallback: u64) -> CliResult<u64> {
    Ok(flag.or(env_seed()?).unwrap_or(fallback))
}

fn parse_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let json = serde_json::to_string_pretty(value).map_err(runtime)?;
    fs::write(path, json + "\n").map_err(runtime)?;
    Ok(())
}

fn stage_error(e: pl::PipelineError) -> CliError {
    use pl::PipelineError as E;
    match e {
        // malformed user-supplied data or impossible requests
        E::Data(_) | E::Preprocess(_) | E::Window(_) | E::Unsupported(_) => validation(e),
        other => runtime(other),
    }
}

// ---------------------------------------------------------------------------
// Flag value enums
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Early,
    Above,
    Phase,
    Bac,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Early => Task::EarlyWarning,
            TaskArg::Above => Task::AboveLimit,
            TaskArg::Phase => Task::PhaseCategorical,
            TaskArg::Bac => Task::BacRegression,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BinaryTaskArg {
    Early,
    Above,
}

impl From<BinaryTaskArg> for Task {
    fn from(t: BinaryTaskArg) -> Task {
        match t {
            BinaryTaskArg::Early => Task::EarlyWarning,
            BinaryTaskArg::Above => Task::AboveLimit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormScopeArg {
    Participant,
    ParticipantPhase,
}

impl From<NormScopeArg> for NormScope {
    fn from(s: NormScopeArg) -> NormScope {
        match s {
            NormScopeArg::Participant => NormScope::Participant,
            NormScopeArg::ParticipantPhase => NormScope::ParticipantPhase,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SpecArg {
    /// 180 s / 45 s step, coverage >= 0.5 (feature pipeline).
    Feature,
    /// 180 s / 15 s step, coverage >= 1/3 (network pipeline).
    Cnn,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModalityArg {
    Arousal,
    Accel,
}

impl From<ModalityArg> for FeatureModality {
    fn from(m: ModalityArg) -> FeatureModality {
        match m {
            ModalityArg::Arousal => FeatureModality::Arousal,
            ModalityArg::Accel => FeatureModality::Accel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MissingArg {
    Median,
    Drop,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Lr,
    Cnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Treatment,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    Effect,
    Window,
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SynthArgs {
    /// Cohort configuration JSON; omitted = the default cohort.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let mut config: SynthConfig = match &a.config {
        Some(p) => parse_json_file(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    } else if a.config.is_none() {
        if let Some(s) = env_seed()? {
            config.seed = s;
        }
    }
    prepare_out(&a.out, a.force)?;
    let manifest_data = generate_cohort(&config, &a.out).map_err(|e| {
        use impairdetect::synth::SynthError;
        match e {
            SynthError::InvalidConfig(_) => validation(e),
            other => runtime(other),
        }
    })?;
    manifest::seal_dir(&a.out, "synth", &config, config.seed, vec![]).map_err(runtime)?;
    println!(
        "wrote cohort of {} participants to {}",
        manifest_data.participants.len(),
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PreprocessArgs {
    /// The cohort's data manifest (manifest.json).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Arousal surrogate model JSON; omitted = bundled weights.
    #[arg(long)]
    arousal_model: Option<PathBuf>,
    /// z-normalization scope for IBI, HR, and acceleration magnitude.
    #[arg(long, value_enum, default_value_t = NormScopeArg::Participant)]
    scope: NormScopeArg,
    #[arg(long)]
    force: bool,
}

fn cmd_preprocess(a: PreprocessArgs) -> CliResult<()> {
    let root = a
        .manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let input = pin_input(&root)?;
    let cohort = ingest_cohort(&root).map_err(validation)?;

    let model = match &a.arousal_model {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| validation(format!("{}: {e}", p.display())))?;
            ArousalModel::from_json(&text).map_err(validation)?
        }
        None => ArousalModel::bundled(),
    };
    let config = PreprocessConfig {
        norm_scope: a.scope.into(),
        ..PreprocessConfig::default()
    };
    let pres = pl::preprocess_cohort(&cohort, &model, &config).map_err(stage_error)?;

    prepare_out(&a.out, a.force)?;
    pl::write_preprocessed(&a.out, &pres).map_err(runtime)?;

    #[derive(Serialize)]
    struct Snapshot<'a> {
        preprocess: &'a PreprocessConfig,
        arousal_model: &'a ArousalModel,
    }
    let snap = Snapshot { preprocess: &config, arousal_model: &model };
    manifest::seal_dir(&a.out, "preprocess", &snap, 0, vec![input]).map_err(runtime)?;
    println!(
        "preprocessed {} participants to {}",
        pres.len(),
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// window
// ---------------------------------------------------------------------------

#[derive(Args)]
struct WindowArgs {
    /// Preprocess stage directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Window preset; individual values can be overridden below.
    #[arg(long, value_enum, default_value_t = SpecArg::Feature)]
    spec: SpecArg,
    /// Window length in seconds.
    #[arg(long)]
    length: Option<f64>,
    /// Step between window starts in seconds.
    #[arg(long)]
    step: Option<f64>,
    /// Minimum per-modality fraction of expected samples in [0, 1].
    #[arg(long)]
    min_coverage: Option<f64>,
    /// Label tasks attached to every window.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t =
        vec![TaskArg::Early, TaskArg::Above, TaskArg::Phase, TaskArg::Bac])]
    tasks: Vec<TaskArg>,
    #[arg(long)]
    force: bool,
}

fn cmd_window(a: WindowArgs) -> CliResult<()> {
    let input = pin_input(&a.input)?;
    let pres = pl::read_preprocessed(&a.input).map_err(runtime)?;

    let mut spec = match a.spec {
        SpecArg::Feature => WindowSpec::feature_default(),
        SpecArg::Cnn => WindowSpec::cnn_default(),
    };
    if let Some(l) = a.length {
        spec.length_s = l;
    }
    if let Some(s) = a.step {
        spec.step_s = s;
    }
    if let Some(c) = a.min_coverage {
        spec.min_coverage = c;
    }
    if !(spec.length_s > 0.0) || !(spec.step_s > 0.0) {
        return Err(validation("window length and step must be positive"));
    }
    if !(0.0..=1.0).contains(&spec.min_coverage) {
        return Err(validation("min coverage must lie in [0, 1]"));
    }
    let mut tasks: Vec<Task> = Vec::new();
    for t in &a.tasks {
        let t = Task::from(*t);
        if !tasks.contains(&t) {
            tasks.push(t);
        }
    }

    let records = pl::window_cohort(&pres, &spec, &tasks).map_err(stage_error)?;
    prepare_out(&a.out, a.force)?;
    pl::write_windows(&a.out, &records).map_err(runtime)?;

    #[derive(Serialize)]
    struct Snapshot<'a> {
        spec: &'a WindowSpec,
        tasks: Vec<&'static str>,
    }
    let snap = Snapshot { spec: &spec, tasks: tasks.iter().map(|t| pl::task_name(*t)).collect() };
    manifest::seal_dir(&a.out, "window", &snap, 0, vec![input]).map_err(runtime)?;
    println!("cut {} windows to {}", records.len(), a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// featurize
// ---------------------------------------------------------------------------

#[derive(Args)]
struct FeaturizeArgs {
    /// Window stage directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn cmd_featurize(a: FeaturizeArgs) -> CliResult<()> {
    let input = pin_input(&a.input)?;
    let records = pl::read_windows(&a.input).map_err(runtime)?;
    let catalog = FeatureCatalog::standard();
    let rows = pl::featurize_all(&records, &catalog);
    prepare_out(&a.out, a.force)?;
    pl::write_features(&a.out, &rows, &catalog).map_err(runtime)?;

    #[derive(Serialize)]
    struct Snapshot {
        catalog_version: u32,
        n_features_per_modality: usize,
    }
    let snap = Snapshot { catalog_version: catalog.version, n_features_per_modality: catalog.len() };
    manifest::seal_dir(&a.out, "featurize", &snap, 0, vec![input]).map_err(runtime)?;
    println!(
        "featurized {} windows x {} columns to {}",
        rows.len(),
        2 * catalog.len(),
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-lr
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainLrArgs {
    /// Featurize stage directory.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    task: BinaryTaskArg,
    /// L1 strength: auto (= rel:0.01), rel:<f> of lambda_max, or fixed:<f>.
    #[arg(long, default_value = "auto")]
    lambda: String,
    /// Cross-validation plan; leave-one-subject-out is the only plan.
    #[arg(long, default_value = "loso")]
    folds: String,
    /// Feature modalities entering the design matrix.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t =
        vec![ModalityArg::Arousal, ModalityArg::Accel])]
    modalities: Vec<ModalityArg>,
    /// Missing-value policy for feature columns.
    #[arg(long, value_enum, default_value_t = MissingArg::Median)]
    missing: MissingArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

fn parse_lambda(s: &str) -> CliResult<LambdaSpec> {
    let bad = || validation(format!("lambda {s:?}: expected auto, rel:<f>, or fixed:<f>"));
    if s == "auto" {
        return Ok(LambdaSpec::RelativeToMax(0.01));
    }
    if let Some(rest) = s.strip_prefix("rel:") {
        let f: f64 = rest.parse().map_err(|_| bad())?;
        if !(f > 0.0) {
            return Err(validation("relative lambda must be positive"));
        }
        return Ok(LambdaSpec::RelativeToMax(f));
    }
    if let Some(rest) = s.strip_prefix("fixed:") {
        let f: f64 = rest.parse().map_err(|_| bad())?;
        if !(f >= 0.0) {
            return Err(validation("fixed lambda must be non-negative"));
        }
        return Ok(LambdaSpec::Fixed(f));
    }
    Err(bad())
}

fn cmd_train_lr(a: TrainLrArgs) -> CliResult<()> {
    if a.folds != "loso" {
        return Err(validation(format!("unknown fold plan {:?}", a.folds)));
    }
    if a.modalities.is_empty() {
        return Err(validation("at least one modality is required"));
    }
    let input = pin_input(&a.features)?;
    let (rows, catalog) = pl::read_features(&a.features).map_err(runtime)?;
    let seed = effective_seed(a.seed, 0)?;

    let mut modalities: Vec<FeatureModality> = Vec::new();
    for m in &a.modalities {
        let m = FeatureModality::from(*m);
        if !modalities.contains(&m) {
            modalities.push(m);
        }
    }
    let config = LrLosoConfig {
        task: a.task.into(),
        modalities,
        policy: match a.missing {
            MissingArg::Median => MissingPolicy::Median,
            MissingArg::Drop => MissingPolicy::Drop,
        },
        lasso: LassoConfig { lambda: parse_lambda(&a.lambda)?, seed, ..LassoConfig::default() },
        loso_seed: seed,
    };
    let outcome = pl::run_lr_loso(&rows, &catalog, &config).map_err(stage_error)?;

    prepare_out(&a.out, a.force)?;
    pl::write_predictions(&a.out.join(pl::PREDICTIONS_FILE), &outcome.predictions)
        .map_err(runtime)?;
    write_json(&a.out.join("report.json"), &outcome.report)?;

    let models_dir = a.out.join("models");
    fs::create_dir_all(&models_dir).map_err(runtime)?;
    for fold in &outcome.folds {
        write_json(&models_dir.join(format!("fold_{}.json", fold.held_out)), &fold.model)?;
        write_json(
            &models_dir.join(format!("fold_{}_transform.json", fold.held_out)),
            &fold.transform,
        )?;
    }

    // family table over the folds that share the first fold's columns
    let lead_hash = &outcome.folds[0].model.column_metadata_hash;
    let shared: Vec<&impairdetect::linear::LassoLogitModel> = outcome
        .folds
        .iter()
        .filter(|f| &f.model.column_metadata_hash == lead_hash)
        .map(|f| &f.model)
        .collect();
    let families = coefficient_family_report(&shared, &outcome.folds[0].transform);
    fs::write(a.out.join("family_coefficients.csv"), pl::family_report_csv(&families))
        .map_err(runtime)?;

    #[derive(Serialize)]
    struct FoldLine<'a> {
        held_out: &'a str,
        converged: bool,
        kkt_residual: f64,
        n_sweeps: usize,
        lambda: f64,
        n_active: usize,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        task: &'static str,
        plan: &'a impairdetect::eval::LosoPlan,
        n_rows: usize,
        folds: Vec<FoldLine<'a>>,
    }
    let summary = Summary {
        task: pl::task_name(config.task),
        plan: &outcome.plan,
        n_rows: rows.len(),
        folds: outcome
            .folds
            .iter()
            .map(|f| FoldLine {
                held_out: &f.held_out,
                converged: f.model.converged,
                kkt_residual: f.model.kkt_residual,
                n_sweeps: f.model.n_sweeps,
                lambda: f.model.lambda,
                n_active: f.model.weights.iter().filter(|w| **w != 0.0).count(),
            })
            .collect(),
    };
    write_json(&a.out.join("summary.json"), &summary)?;

    manifest::seal_dir(&a.out, "train-lr", &config, seed, vec![input]).map_err(runtime)?;
    print_binary_report(&outcome.report, &a.out);
    Ok(())
}

fn print_binary_report(report: &EvalReport, out: &Path) {
    let macro_line = report
        .macro_auroc
        .as_ref()
        .map(|m| format!("{:.3} +/- {:.3}", m.mean, m.std))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "{}: macro AUROC {} | pooled treatment {:.3} | pooled all {:.3} -> {}",
        pl::task_name(report.task),
        macro_line,
        report.pooled_treatment.auroc,
        report.pooled_all.auroc,
        out.display()
    );
}

// ---------------------------------------------------------------------------
// train-cnn
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainCnnArgs {
    /// Window stage directory (use the cnn window preset).
    #[arg(long)]
    windows: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Training hyper-parameter JSON; omitted = defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the epoch cap.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the minibatch size.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    force: bool,
}

fn cmd_train_cnn(a: TrainCnnArgs) -> CliResult<()> {
    let input = pin_input(&a.windows)?;
    let records = pl::read_windows(&a.windows).map_err(runtime)?;

    let mut train: TrainConfig = match &a.config {
        Some(p) => parse_json_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        train.seed = s;
    } else if a.config.is_none() {
        if let Some(s) = env_seed()? {
            train.seed = s;
        }
    }
    if let Some(e) = a.epochs {
        train.max_epochs = e;
    }
    if let Some(b) = a.batch {
        if b == 0 {
            return Err(validation("batch size must be positive"));
        }
        train.batch_size = b;
    }
    let config = CnnLosoConfig { task: a.task.into(), train, loso_seed: 0 };
    let outcome = pl::run_cnn_loso(&records, &config).map_err(stage_error)?;

    prepare_out(&a.out, a.force)?;
    for (fold, model) in outcome.folds.iter().zip(&outcome.models) {
        let mut per_fold = config.train.clone();
        per_fold.seed = fold.seed;
        save_checkpoint(
            &a.out.join("folds").join(&fold.held_out),
            model,
            Some(&per_fold),
        )
        .map_err(runtime)?;
    }
    match &outcome.output {
        CnnOutput::Binary { predictions, report } => {
            pl::write_predictions(&a.out.join(pl::PREDICTIONS_FILE), predictions)
                .map_err(runtime)?;
            write_json(&a.out.join("report.json"), report)?;
        }
        CnnOutput::Phase { predictions, report } => {
            pl::write_multiclass_predictions(&a.out.join(pl::PREDICTIONS_FILE), predictions)
                .map_err(runtime)?;
            write_json(&a.out.join("report.json"), report)?;
        }
        CnnOutput::Bac { predictions, metrics } => {
            pl::write_bac_predictions(&a.out.join(pl::PREDICTIONS_FILE), predictions)
                .map_err(runtime)?;
            write_json(&a.out.join("report.json"), metrics)?;
        }
    }
    write_json(&a.out.join("history.json"), &outcome.folds)?;

    manifest::seal_dir(&a.out, "train-cnn", &config, config.train.seed, vec![input])
        .map_err(runtime)?;
    match &outcome.output {
        CnnOutput::Binary { report, .. } => print_binary_report(report, &a.out),
        CnnOutput::Phase { report, .. } => {
            let groups: Vec<String> = report
                .group_macro_auroc
                .iter()
                .map(|(g, v)| format!("{g} {v:.3}"))
                .collect();
            println!(
                "phase: macro one-vs-rest AUROC by group [{}] | pooled accuracy {:.3} -> {}",
                groups.join(", "),
                report.pooled_accuracy,
                a.out.display()
            );
        }
        CnnOutput::Bac { metrics, .. } => println!(
            "bac: MAE {:.4} g/dL | r {:.3} | AUROC at limit {:.3} -> {}",
            metrics.mae,
            metrics.pearson_r,
            metrics.auroc_at_limit,
            a.out.display()
        ),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvaluateArgs {
    /// A train-lr or train-cnn output directory.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Pooled scope whose ROC/PR curves are exported.
    #[arg(long, value_enum, default_value_t = ScopeArg::Treatment)]
    scope: ScopeArg,
    /// Window length in seconds behind each prediction; sets the time
    /// axis of the smoothed AUROC curve.
    #[arg(long, default_value_t = 180.0)]
    window_length_s: f64,
    #[arg(long)]
    force: bool,
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    if a.model == ModelArg::Lr && !matches!(a.task, TaskArg::Early | TaskArg::Above) {
        return Err(validation("the linear model only produces early|above predictions"));
    }
    let input = pin_input(&a.predictions)?;
    // refuse task/model labels that contradict the producing run
    if let Ok(m) = manifest::read_manifest(&a.predictions) {
        if let Some(t) = m.config.get("task").and_then(|v| v.as_str()) {
            let requested = pl::task_name(Task::from(a.task));
            if t != requested {
                return Err(validation(format!(
                    "predictions were produced for task {t:?}, not {requested:?}"
                )));
            }
        }
        let expected = match a.model {
            ModelArg::Lr => "train-lr",
            ModelArg::Cnn => "train-cnn",
        };
        if m.command != expected {
            return Err(validation(format!(
                "directory was produced by {:?}, not {expected:?}",
                m.command
            )));
        }
    }

    let task = Task::from(a.task);
    let pred_path = a.predictions.join(pl::PREDICTIONS_FILE);
    prepare_out(&a.out, a.force)?;

    let mut summary = String::new();
    match task {
        Task::EarlyWarning | Task::AboveLimit => {
            let preds = pl::read_predictions(&pred_path).map_err(runtime)?;
            let report = aggregate(&preds, task).map_err(runtime)?;
            write_json(&a.out.join("report.json"), &report)?;

            let pooled = match a.scope {
                ScopeArg::Treatment => &report.pooled_treatment,
                ScopeArg::All => &report.pooled_all,
            };
            let mut roc = String::from("threshold,fpr,tpr\n");
            for p in &pooled.roc {
                roc.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
            }
            fs::write(a.out.join("roc.csv"), roc).map_err(runtime)?;
            let mut pr = String::from("threshold,recall,precision\n");
            for p in &pooled.pr {
                pr.push_str(&format!("{},{},{}\n", p.threshold, p.recall, p.precision));
            }
            fs::write(a.out.join("pr.csv"), pr).map_err(runtime)?;

            let cma = pl::smooth_predictions(&preds, a.window_length_s).map_err(runtime)?;
            fs::write(a.out.join("auroc_vs_time.csv"), pl::cma_csv(&cma)).map_err(runtime)?;

            let name = format!(
                "{} {}",
                match a.model {
                    ModelArg::Lr => "lr",
                    ModelArg::Cnn => "cnn",
                },
                pl::task_name(task)
            );
            let labeled = [pl::LabeledReport { name, report }];
            let (_, text) = pl::render_tables(&labeled);
            summary = text;
        }
        Task::PhaseCategorical => {
            let preds = pl::read_multiclass_predictions(&pred_path).map_err(runtime)?;
            let report = aggregate_multiclass(&preds, 3).map_err(runtime)?;
            write_json(&a.out.join("report.json"), &report)?;
            summary.push_str("phase classification, one-vs-rest macro AUROC by group\n");
            for (g, v) in &report.group_macro_auroc {
                summary.push_str(&format!("  {g}: {v:.3}\n"));
            }
            summary.push_str(&format!("pooled accuracy: {:.3}\n", report.pooled_accuracy));
        }
        Task::BacRegression => {
            let preds = pl::read_bac_predictions(&pred_path).map_err(runtime)?;
            let predicted: Vec<f64> = preds.iter().map(|p| p.predicted_g_per_dl).collect();
            let reference: Vec<f64> = preds.iter().map(|p| p.reference_g_per_dl).collect();
            let metrics = regression_eval(&predicted, &reference).map_err(runtime)?;
            write_json(&a.out.join("report.json"), &metrics)?;
            summary.push_str(&format!(
                "bac regression: MAE {:.4} g/dL, r {:.3}, AUROC at limit {:.3}\n",
                metrics.mae, metrics.pearson_r, metrics.auroc_at_limit
            ));
        }
    }
    fs::write(a.out.join("summary.txt"), &summary).map_err(runtime)?;

    #[derive(Serialize)]
    struct Snapshot {
        model: &'static str,
        task: &'static str,
        scope: &'static str,
        window_length_s: f64,
    }
    let snap = Snapshot {
        model: match a.model {
            ModelArg::Lr => "lr",
            ModelArg::Cnn => "cnn",
        },
        task: pl::task_name(task),
        scope: match a.scope {
            ScopeArg::Treatment => "treatment",
            ScopeArg::All => "all",
        },
        window_length_s: a.window_length_s,
    };
    manifest::seal_dir(&a.out, "evaluate", &snap, 0, vec![input]).map_err(runtime)?;
    print!("{summary}");
    println!("wrote report to {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    kind: SweepKind,
    #[arg(long)]
    out: PathBuf,
    /// Synthetic cohort configuration JSON (effect sweep); omitted = default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Effect multipliers, each scaling the planted effect (effect sweep).
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
    scales: Vec<f64>,
    /// Preprocess stage directory (window sweep).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Window lengths in seconds (window sweep); step = length / 4.
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<f64>>,
    /// Tasks tabulated by the window sweep.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t =
        vec![BinaryTaskArg::Early, BinaryTaskArg::Above])]
    tasks: Vec<BinaryTaskArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

fn cmd_sweep(a: SweepArgs) -> CliResult<()> {
    let catalog = FeatureCatalog::standard();
    match a.kind {
        SweepKind::Effect => {
            let mut base: SynthConfig = match &a.config {
                Some(p) => parse_json_file(p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = a.seed {
                base.seed = s;
            } else if a.config.is_none() {
                if let Some(s) = env_seed()? {
                    base.seed = s;
                }
            }
            if a.scales.len() < 2 || !a.scales.contains(&0.0) {
                return Err(validation("effect sweep needs >= 2 scales including 0"));
            }
            let points = pl::effect_sweep(
                &base,
                &a.scales,
                &PreprocessConfig::default(),
                &WindowSpec::feature_default(),
                &catalog,
                &LrLosoConfig::default(),
            )
            .map_err(stage_error)?;
            prepare_out(&a.out, a.force)?;
            let csv = pl::effect_sweep_csv(&points);
            fs::write(a.out.join("effect_sweep.csv"), &csv).map_err(runtime)?;
            write_json(&a.out.join("points.json"), &points)?;

            #[derive(Serialize)]
            struct Snapshot<'a> {
                base: &'a SynthConfig,
                scales: &'a [f64],
            }
            let snap = Snapshot { base: &base, scales: &a.scales };
            manifest::seal_dir(&a.out, "sweep", &snap, base.seed, vec![]).map_err(runtime)?;
            print!("{csv}");
        }
        SweepKind::Window => {
            let Some(input_dir) = &a.input else {
                return Err(validation("window sweep requires --input <preprocess dir>"));
            };
            let input = pin_input(input_dir)?;
            let pres = pl::read_preprocessed(input_dir).map_err(runtime)?;
            let lengths = a.lengths.clone().unwrap_or_else(|| SWEEP_LENGTHS_S.to_vec());
            if lengths.iter().any(|l| !(*l > 0.0)) {
                return Err(validation("window lengths must be positive"));
            }
            let tasks: Vec<Task> = a.tasks.iter().map(|t| Task::from(*t)).collect();
            let seed = effective_seed(a.seed, 0)?;
            let lr = LrLosoConfig {
                lasso: LassoConfig { seed, ..LassoConfig::default() },
                loso_seed: seed,
                ..LrLosoConfig::default()
            };
            let points =
                pl::window_sweep(&pres, &lengths, &tasks, &catalog, &lr).map_err(stage_error)?;
            prepare_out(&a.out, a.force)?;
            let csv = pl::window_sweep_csv(&points);
            fs::write(a.out.join("window_sweep.csv"), &csv).map_err(runtime)?;
            write_json(&a.out.join("points.json"), &points)?;

            #[derive(Serialize)]
            struct Snapshot<'a> {
                lengths: &'a [f64],
                tasks: Vec<&'static str>,
                seed: u64,
            }
            let snap = Snapshot {
                lengths: &lengths,
                tasks: tasks.iter().map(|t| pl::task_name(*t)).collect(),
                seed,
            };
            manifest::seal_dir(&a.out, "sweep", &snap, seed, vec![input]).map_err(runtime)?;
            print!("{csv}");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ReportArgs {
    /// Stage directories with a report.json from a binary task; repeat
    /// the flag to compare runs side by side.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn cmd_report(a: ReportArgs) -> CliResult<()> {
    let mut labeled = Vec::new();
    let mut pins = Vec::new();
    for dir in &a.inputs {
        pins.push(pin_input(dir)?);
        let m = manifest::read_manifest(dir).map_err(|e| {
            validation(format!("{}: {e}; pass train or evaluate output directories", dir.display()))
        })?;
        let model = match m.command.as_str() {
            "train-lr" => "lr".to_string(),
            "train-cnn" => "cnn".to_string(),
            "evaluate" => m
                .config
                .get("model")
                .and_then(|v| v.as_str())
                .unwrap_or("?")
                .to_string(),
            other => {
                return Err(validation(format!(
                    "{}: stage {other:?} does not produce reports",
                    dir.display()
                )))
            }
        };
        let report: EvalReport = parse_json_file(&dir.join("report.json")).map_err(|_| {
            validation(format!(
                "{}: report.json is not a binary-task report",
                dir.display()
            ))
        })?;
        if labeled
            .iter()
            .any(|l: &pl::LabeledReport| l.name == model && l.report.task == report.task)
        {
            return Err(validation(format!(
                "two inputs both claim model {model:?} on task {:?}",
                pl::task_name(report.task)
            )));
        }
        labeled.push(pl::LabeledReport { name: model, report });
    }

    let (csv, text) = pl::render_tables(&labeled);
    prepare_out(&a.out, a.force)?;
    fs::write(a.out.join("tables.csv"), &csv).map_err(runtime)?;
    fs::write(a.out.join("tables.txt"), &text).map_err(runtime)?;

    #[derive(Serialize)]
    struct Snapshot {
        reports: Vec<String>,
    }
    let snap = Snapshot { reports: labeled.iter().map(|l| l.name.clone()).collect() };
    manifest::seal_dir(&a.out, "report", &snap, 0, pins).map_err(runtime)?;
    print!("{text}");
    println!("wrote tables to {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// entry
// ---------------------------------------------------------------------------

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Window(a) => cmd_window(a),
        Command::Featurize(a) => cmd_featurize(a),
        Command::TrainLr(a) => cmd_train_lr(a),
        Command::TrainCnn(a) => cmd_train_cnn(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1, // unknown subcommands/flags print usage and fail
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        // build_global fails only if a pool already exists; fine to ignore
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.threads;

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
