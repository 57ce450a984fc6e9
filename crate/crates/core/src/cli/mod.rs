//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Results go to stdout, diagnostics to stderr.

pub mod config;
pub mod run_manifest;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use crate::audio_io::{load_pair, load_wav, resample_to_48k, AudioError, SignalPair, TARGET_RATE};
use crate::gammatone::{write_features, Compression, FeatureError, Filterbank};
use crate::inference_eval::{
    evaluate, ground_truth_metrics, predict, write_outputs, EvalError, EvalOptions, Model, DEFAULT_LISTENERS,
};
use crate::network::gradcheck::{gradcheck, GradcheckOptions};
use crate::network::NetworkError;
use crate::prob_beta::{BetaError, LossHead};
use crate::synth_data::{build_dataset, condition_grid, generate_sources, GroundTruth, ListenerModel, SynthError};
use crate::trainer::{default_cache_dir, load_manifest, train, FeatureStore, Split, TrainError};

pub use config::{apply_settings, CliConfig, Setting};
pub use run_manifest::{RunManifest, RUN_MANIFEST_NAME};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Level difference between reference and test above which a warning is
/// printed; levels are taken as calibrated and never normalised.
pub const RMS_WARN_DB: f64 = 6.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BetaError> for CliError {
    fn from(e: BetaError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            TrainError::NonFinite { .. } | TrainError::Beta(_) => CliError::Numerical(e.to_string()),
            TrainError::Network(n) => n.into(),
            TrainError::Eval(v) => v.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ZeroVariance | EvalError::NonFinite | EvalError::Beta(_) => CliError::Numerical(e.to_string()),
            EvalError::InvalidLevel(_) => CliError::Usage(e.to_string()),
            EvalError::Pipeline(t) => (*t).into(),
            EvalError::Network(n) => n.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Invalid(_) => CliError::Usage(e.to_string()),
            SynthError::Beta(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gml2", version, about = "Reference-based audio quality model predicting Beta distributions over MUSHRA scores")]
pub struct Cli {
    /// Worker threads; defaults to the number of available processors.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// `key = value` configuration file (flags take precedence).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.learning_rate=1e-3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Reject inputs not at 48 kHz instead of resampling them.
    #[arg(long, global = true)]
    pub strict_rate: bool,
    /// Feature compression: log or linear.
    #[arg(long, global = true)]
    pub feature_compression: Option<Compression>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the feature stack of one reference/test pair.
    Features(FeaturesArgs),
    /// Generate a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Train a model on a JSONL manifest.
    Train(TrainArgs),
    /// Predict the MUSHRA score of one pair.
    Predict(PredictArgs),
    /// Evaluate a model on a manifest.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub items: usize,
    #[arg(long, default_value_t = 6)]
    pub conditions: usize,
    #[arg(long, default_value_t = 10)]
    pub listeners: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Length of generated sources.
    #[arg(long, default_value_t = 3.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 20.0)]
    pub kappa: f64,
    /// Vary the panel concentration from 6 to 40 across conditions.
    #[arg(long)]
    pub heteroscedastic: bool,
    /// Trailing items marked as the test split.
    #[arg(long, default_value_t = 2)]
    pub test_items: usize,
    /// Use the WAV files in this directory as sources instead of generating them.
    #[arg(long)]
    pub source_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Network preset: default, toy or gradcheck_toy.
    #[arg(long)]
    pub net: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub valid_every: Option<usize>,
    /// Training seed (sampling, crops and split).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initialisation seed.
    #[arg(long)]
    pub net_seed: Option<u64>,
    #[arg(long)]
    pub loss_head: Option<LossHead>,
    #[arg(long)]
    pub crop_seconds: Option<f64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Feature cache directory; defaults to $GML2_CACHE_DIR or <out>/cache.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Listener count for the confidence interval.
    #[arg(long, default_value_t = DEFAULT_LISTENERS)]
    pub listeners: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitFilter {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitFilter::Test)]
    pub split: SplitFilter,
    /// Ground-truth sidecar written by `synth`.
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    /// Listener count for model intervals; defaults to each group's panel size.
    #[arg(long)]
    pub listeners: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = LossHead::Beta)]
    pub head: LossHead,
    /// Network preset; defaults to gradcheck_toy.
    #[arg(long, default_value = "gradcheck_toy")]
    pub net: String,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    /// Directory for the JSON report and run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Pass/fail bound on the gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

fn setting(key: &str, value: impl ToString) -> Setting {
    Setting { key: key.into(), value: value.to_string(), origin: "command line".into() }
}

fn resolve_config(cli: &Cli) -> Result<CliConfig, CliError> {
    let mut settings = Vec::new();
    if let Some(path) = &cli.config {
        settings.extend(config::load_config_file(path)?);
    }
    if let Command::Train(t) = &cli.command {
        let named: [(&str, Option<String>); 10] = [
            ("network.preset", t.net.clone()),
            ("train.max_steps", t.steps.map(|v| v.to_string())),
            ("train.batch_size", t.batch_size.map(|v| v.to_string())),
            ("train.learning_rate", t.lr.map(|v| v.to_string())),
            ("train.valid_every", t.valid_every.map(|v| v.to_string())),
            ("train.seed", t.seed.map(|v| v.to_string())),
            ("network.seed", t.net_seed.map(|v| v.to_string())),
            ("train.loss_head", t.loss_head.map(|v| v.name().to_string())),
            ("train.crop_seconds", t.crop_seconds.map(|v| v.to_string())),
            ("train.log_every", t.log_every.map(|v| v.to_string())),
        ];
        settings.extend(named.into_iter().filter_map(|(k, v)| v.map(|v| setting(k, v))));
    }
    for s in &cli.set {
        settings.push(config::parse_assignment(s)?);
    }
    if let Some(c) = cli.feature_compression {
        settings.push(setting("gammatone.compression", if c == Compression::Log { "log" } else { "linear" }));
    }
    apply_settings(&CliConfig::default(), &settings)
}

fn warn_levels(pair: &SignalPair) {
    let d = pair.rms_difference_db();
    if d.abs() > RMS_WARN_DB {
        eprintln!("warning: reference and test RMS differ by {d:.1} dB; levels are not normalised");
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn config_json(cfg: &CliConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Parse `argv` (including the program name) and run it.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let jobs = match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Features(a) => cmd_features(cli, &cfg, a, argv),
        Command::Synth(a) => cmd_synth(a, argv),
        Command::Train(a) => cmd_train(cli, &cfg, a, argv),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Eval(a) => cmd_eval(cli, &cfg, a, argv),
        Command::Gradcheck(a) => cmd_gradcheck(a, argv),
    })
}

fn cmd_features(cli: &Cli, cfg: &CliConfig, a: &FeaturesArgs, argv: &[String]) -> Result<(), CliError> {
    let pair = load_pair(&a.reference, &a.test, cli.strict_rate)?;
    warn_levels(&pair);
    let f = Filterbank::new(&cfg.gammatone)?.build_features(&pair)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_features(&a.out, &f)?;
    let params = json!({ "strict_rate": cli.strict_rate });
    let run = RunManifest::new(
        "features",
        argv,
        json!({}),
        json!({ "gammatone": cfg.gammatone }),
        params,
        &[a.reference.clone(), a.test.clone()],
    )?;
    let mut name = a.out.as_os_str().to_owned();
    name.push(".run.json");
    run.write(Path::new(&name))?;
    println!("{}", json!({ "features": a.out, "planes": f.planes, "frames": f.frames, "bands": f.bands }));
    Ok(())
}

type Sources = Vec<(String, crate::audio_io::Waveform)>;

/// WAV files of `dir` in name order, resampled to 48 kHz, with their paths.
fn load_source_dir(dir: &Path) -> Result<(Sources, Vec<PathBuf>), CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    let sources = paths
        .iter()
        .map(|p| {
            let w = load_wav(p)?;
            let w = if w.sample_rate() == TARGET_RATE { w } else { resample_to_48k(&w) };
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, w))
        })
        .collect::<Result<_, CliError>>()?;
    Ok((sources, paths))
}

fn cmd_synth(a: &SynthArgs, argv: &[String]) -> Result<(), CliError> {
    if !(a.seconds > 0.0) {
        return Err(CliError::Usage("--seconds must be positive".into()));
    }
    let lm = ListenerModel { kappa: a.kappa, n_listeners: a.listeners };
    let grid = condition_grid(a.conditions, &lm, a.heteroscedastic)?;
    let (sources, inputs) = match &a.source_dir {
        Some(d) => load_source_dir(d)?,
        None => (generate_sources(a.items, a.seconds, a.seed, TARGET_RATE), Vec::new()),
    };
    create_dir(&a.out)?;
    let summary = build_dataset(&sources, &grid, a.seed, a.test_items, &a.out)?;
    let params = json!({
        "items": a.items, "conditions": a.conditions, "listeners": a.listeners, "seconds": a.seconds,
        "kappa": a.kappa, "heteroscedastic": a.heteroscedastic, "test_items": a.test_items,
        "source_dir": a.source_dir,
    });
    RunManifest::new("synth", argv, json!({ "synth": a.seed }), json!({}), params, &inputs)?
        .write(&a.out.join(RUN_MANIFEST_NAME))?;
    println!(
        "{}",
        json!({ "manifest": summary.manifest, "groundtruth": summary.groundtruth, "rows": summary.rows,
                "items": summary.items, "conditions": summary.conditions })
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Model::load(path).map_err(|e| match CliError::from(e) {
        CliError::Data(m) if !m.contains(&*path.to_string_lossy()) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn cache_dir(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| default_cache_dir(out))
}

fn cmd_train(cli: &Cli, cfg: &CliConfig, a: &TrainArgs, argv: &[String]) -> Result<(), CliError> {
    let entries = load_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    let store = FeatureStore::new(&cfg.gammatone, Some(cache_dir(&a.cache_dir, &a.out)), cli.strict_rate)?;
    let mut inputs = vec![a.manifest.clone()];
    let mut audio: Vec<PathBuf> = entries.iter().flat_map(|e| [e.ref_path.clone(), e.test_path.clone()]).collect();
    audio.sort();
    audio.dedup();
    inputs.extend(audio);
    let run = RunManifest::new(
        "train",
        argv,
        json!({ "train": cfg.train.seed, "network": cfg.network.seed }),
        config_json(cfg),
        json!({ "strict_rate": cli.strict_rate }),
        &inputs,
    )?;
    run.write(&a.out.join(RUN_MANIFEST_NAME))?;
    let outcome = train(&entries, &cfg.train, &cfg.network, &store, &a.out)?;
    let r = &outcome.report;
    let best = r.best_step.and_then(|s| r.validations.iter().find(|v| v.step == s));
    let line = json!({
        "steps": r.steps, "final_loss": r.final_loss, "best_step": r.best_step,
        "best_rp": best.and_then(|v| v.rp), "best_rs": best.and_then(|v| v.rs),
        "best_checkpoint": r.best_checkpoint_path, "last_checkpoint": r.last_checkpoint_path,
        "skipped_updates": r.skipped_updates, "config_hash": run.config_hash,
    });
    if std::io::stdout().is_terminal() {
        println!("steps            {}", r.steps);
        println!("final loss       {:.4}", r.final_loss);
        println!("best step        {}", r.best_step.map_or("-".into(), |s| s.to_string()));
        if let Some(p) = &r.best_checkpoint_path {
            println!("best checkpoint  {}", p.display());
        }
    } else {
        println!("{line}");
    }
    Ok(())
}

fn cmd_predict(cli: &Cli, a: &PredictArgs) -> Result<(), CliError> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::Usage(format!("--level {} outside (0, 1)", a.level)));
    }
    let model = load_model(&a.model)?;
    let pair = load_pair(&a.reference, &a.test, cli.strict_rate)?;
    warn_levels(&pair);
    let p = predict(&model, &pair, &model.meta.gammatone, a.listeners, a.level)?;
    let (alpha, beta) = p.beta_params.map_or((None, None), |b| (Some(b.alpha()), Some(b.beta())));
    println!("{}", json!({ "mushra": p.mushra, "ci_low": p.ci_low, "ci_high": p.ci_high, "alpha": alpha, "beta": beta }));
    Ok(())
}

fn cmd_eval(cli: &Cli, cfg: &CliConfig, a: &EvalArgs, argv: &[String]) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let entries: Vec<_> = load_manifest(&a.manifest)?
        .into_iter()
        .filter(|e| match a.split {
            SplitFilter::All => true,
            SplitFilter::Train => e.split == Split::Train,
            SplitFilter::Valid => e.split == Split::Valid,
            SplitFilter::Test => e.split == Split::Test,
        })
        .collect();
    if entries.is_empty() {
        return Err(CliError::Data(format!("no manifest rows in the {:?} split", a.split)));
    }
    create_dir(&a.out)?;
    // the model defines its own front end
    let store = FeatureStore::new(&model.meta.gammatone, Some(cache_dir(&a.cache_dir, &a.out)), cli.strict_rate)?;
    let opts = EvalOptions { level: a.level, n_listeners: a.listeners, score_eps: model.meta.score_eps };
    let mut out = evaluate(&model, &entries, &store, &opts)?;
    if let Some(gt) = &a.groundtruth {
        let truth = GroundTruth::load(gt)?;
        out.summary.ground_truth = Some(ground_truth_metrics(&out.records, &truth.means())?);
        out.summary.ground_truth_mode = Some(ground_truth_metrics(&out.records, &truth.modes())?);
    }
    write_outputs(&a.out, &out)?;
    let mut inputs = vec![a.model.clone(), a.manifest.clone()];
    inputs.extend(a.groundtruth.clone());
    let params = json!({ "split": format!("{:?}", a.split).to_lowercase(), "listeners": a.listeners, "level": a.level,
                         "strict_rate": cli.strict_rate });
    RunManifest::new("eval", argv, json!({}), json!({ "gammatone": model.meta.gammatone, "requested": config_json(cfg) }), params, &inputs)?
        .write(&a.out.join(RUN_MANIFEST_NAME))?;
    let s = &out.summary;
    if std::io::stdout().is_terminal() {
        println!("points         {}", s.n_points);
        println!("Rp             {:.4}", s.rp);
        println!("Rs             {:.4}", s.rs);
        println!("outlier ratio  {:.4}", s.outlier_ratio);
        println!("mean NLL       {:.4}", s.mean_nll);
        if let Some(g) = &s.ground_truth {
            println!("truth Rp/Rs    {:.4} / {:.4}", g.rp, g.rs);
            println!("truth MAE      {:.2}", g.mae);
        }
    } else {
        println!("{}", serde_json::to_string(s).expect("summary serializes"));
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, argv: &[String]) -> Result<(), CliError> {
    let net = config::network_preset(&a.net)?;
    if a.draws == 0 || !(a.step > 0.0) {
        return Err(CliError::Usage("--draws and --step must be positive".into()));
    }
    let report = gradcheck(&net, &GradcheckOptions { draws: a.draws, step: a.step, seed: a.seed, head: a.head })?;
    let pass = report.max_rel_error < GRADCHECK_TOLERANCE;
    if let Some(out) = &a.out {
        create_dir(out)?;
        let path = out.join("gradcheck.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&report).expect("report serializes"))
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let params = json!({ "draws": a.draws, "head": a.head, "net": a.net, "step": a.step });
            RunManifest::new("gradcheck", argv, json!({ "gradcheck": a.seed }), json!({ "network": net }), params, &[])?
            .write(&out.join(RUN_MANIFEST_NAME))?;
    }
    println!("{}", json!({ "max_rel_error": report.max_rel_error, "max_abs_error": report.max_abs_error,
                           "checked": report.checked, "skipped_kinks": report.skipped_kinks, "pass": pass }));
    if pass {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: max relative error {:.3e} >= {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}
