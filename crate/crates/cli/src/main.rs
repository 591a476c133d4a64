//! `vitalcast` command-line front end.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data or
//! contract error.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vitalcast::analysis::{ablation_csv, occlusion_csv, occlusion_report, OcclusionTarget};
use vitalcast::cohort::{apply_inclusion_criteria, extract_all, load_dir, Horizon};
use vitalcast::dataset::{read_jsonl, samples_from_windows, write_jsonl, Sample};
use vitalcast::metrics::Metrics;
use vitalcast::models::{Architecture, Checkpoint, ModelConfig};
use vitalcast::preprocess::{fit_normalizer, NormStats};
use vitalcast::synth::{generate_cohort, CohortSpec};
use vitalcast::training::{cross_validate, score_samples, MetricsReport, TrainConfig};
use vitalcast::Error;

const NORM_STATS_FILE: &str = "norm_stats.json";
const EVAL_BATCH: usize = 256;

#[derive(Parser)]
#[command(name = "vitalcast", version, about = "Deterioration forecasting from routine vital signs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort (encounters.csv, vitals.csv, events.csv).
    Synth(SynthArgs),
    /// Cut, normalize and resample windows for one horizon into JSON lines.
    Preprocess(PreprocessArgs),
    /// Cross-validate one architecture.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Occlusion sensitivity of a checkpoint.
    Occlude(OccludeArgs),
    /// Cross-validate all three architectures on the same folds.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    prevalence: Option<f64>,
    /// JSON cohort specification; `--n`, `--seed` and `--prevalence` override it.
    #[arg(long)]
    spec: Option<PathBuf>,
}

fn parse_horizon(s: &str) -> Result<Horizon, String> {
    let h: u32 = s.parse().map_err(|_| format!("'{s}' is not a whole number of hours"))?;
    Horizon::new(h).map_err(|e| e.to_string())
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, value_parser = parse_horizon)]
    horizon: Horizon,
    /// Output JSON-lines file; rejects.csv and norm_stats.json go beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainOverrides {
    /// JSON training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Per-layer LSTM dilations, e.g. `1,2,4`.
    #[arg(long, value_delimiter = ',')]
    dilations: Option<Vec<usize>>,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    Architecture::parse(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_arch)]
    arch: Architecture,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
}

#[derive(Args)]
struct OccludeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Subset of targets; all ten by default.
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<String>>,
}

#[derive(Args)]
struct AblateArgs {
    /// One dataset per horizon; repeat for several horizons.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

type CliResult<T> = Result<T, Error>;

/// Writes through a temporary sibling so readers never see partial files.
fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn beside(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

fn read_samples(path: &Path) -> CliResult<Vec<Sample>> {
    let f = fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let samples = read_jsonl(BufReader::new(f))?;
    if samples.is_empty() {
        return Err(Error::Contract(format!("{}: no samples", path.display())));
    }
    Ok(samples)
}

fn read_norm_stats(data: &Path) -> CliResult<Option<NormStats>> {
    let p = beside(data, NORM_STATS_FILE);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(p)?)?))
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => CohortSpec::default(),
    };
    spec.n_patients = a.n;
    spec.seed = a.seed;
    if let Some(p) = a.prevalence {
        spec.prevalence = p;
    }
    spec.validate()?;
    let tables = generate_cohort(&spec)?;
    write_file(&a.out_dir.join("encounters.csv"), tables.encounters.as_bytes())?;
    write_file(&a.out_dir.join("vitals.csv"), tables.vitals.as_bytes())?;
    write_file(&a.out_dir.join("events.csv"), tables.events.as_bytes())?;
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> CliResult<()> {
    let (encounters, mut rejects) = load_dir(&a.data_dir)?;
    let included = apply_inclusion_criteria(encounters);
    let windows = extract_all(&included, a.horizon, &mut rejects);
    if windows.is_empty() {
        return Err(Error::Contract("no encounter produced a window".into()));
    }
    let stats = fit_normalizer(&windows)?;
    let samples = samples_from_windows(&windows, &stats)?;
    let mut buf = Vec::new();
    write_jsonl(&samples, &mut buf)?;
    write_file(&a.out, &buf)?;
    write_file(&beside(&a.out, "rejects.csv"), rejects.to_csv()?.as_bytes())?;
    write_json(&beside(&a.out, NORM_STATS_FILE), &stats)?;
    Ok(())
}

fn configs(o: &TrainOverrides, horizon: Horizon) -> CliResult<(TrainConfig, ModelConfig)> {
    let mut cfg = match &o.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(e) = o.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = o.batch_size {
        cfg.batch_size = b;
    }
    cfg.horizon_hours = horizon;
    cfg.validate()?;
    let mut model = ModelConfig::default();
    if let Some(h) = o.hidden {
        model.hidden = h;
    }
    if let Some(d) = &o.dilations {
        model.dilations = d.clone();
    }
    model.validate()?;
    if o.jobs == 0 {
        return Err(Error::Config("--jobs must be positive".into()));
    }
    Ok((cfg, model))
}

fn train(a: TrainArgs) -> CliResult<()> {
    let samples = read_samples(&a.data)?;
    let horizon = samples[0].horizon;
    let (cfg, model) = configs(&a.overrides, horizon)?;
    let norm_stats = read_norm_stats(&a.data)?;
    let cv = cross_validate(&samples, a.arch, &model, &cfg, a.overrides.jobs)?;
    for f in &cv.folds {
        let dir = a.out_dir.join(format!("fold_{}", f.fold));
        let ck = Checkpoint::new(&f.params, Some(horizon), norm_stats);
        write_file(&dir.join("checkpoint.json"), serde_json::to_string(&ck)?.as_bytes())?;
        write_file(&dir.join("history.csv"), f.history.to_csv().as_bytes())?;
    }
    write_json(&a.out_dir.join("metrics.json"), &cv.report())?;
    Ok(())
}

fn load_model(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| Error::Contract(format!("{}: {e}", path.display())))
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let ck = load_model(&a.model)?;
    let params = ck.to_params()?;
    let samples = read_samples(&a.data)?;
    let (_, average): (Vec<f64>, Metrics) = score_samples(&params, &samples, EVAL_BATCH)?;
    let report = MetricsReport {
        horizon: samples[0].horizon,
        architecture: params.arch,
        per_fold: vec![],
        average,
    };
    write_json(&a.out, &report)
}

fn occlude(a: OccludeArgs) -> CliResult<()> {
    let targets = match &a.targets {
        Some(names) => names.iter().map(|n| OcclusionTarget::parse(n)).collect::<CliResult<Vec<_>>>()?,
        None => OcclusionTarget::all().to_vec(),
    };
    let params = load_model(&a.model)?.to_params()?;
    let samples = read_samples(&a.data)?;
    let report = occlusion_report(&params, &samples, &targets, EVAL_BATCH)?;
    write_file(&a.out, occlusion_csv(&[report])?.as_bytes())
}

fn ablate(a: AblateArgs) -> CliResult<()> {
    let datasets = a.data.iter().map(|p| read_samples(p)).collect::<CliResult<Vec<_>>>()?;
    let (base_cfg, model) = configs(&a.overrides, datasets[0][0].horizon)?;
    let mut per_arch = Vec::new();
    for arch in Architecture::ALL {
        let mut row = Vec::new();
        for samples in &datasets {
            let cfg = TrainConfig {
                horizon_hours: samples[0].horizon,
                ..base_cfg.clone()
            };
            row.push(cross_validate(samples, arch, &model, &cfg, a.overrides.jobs)?);
        }
        per_arch.push(row);
    }
    let reports: Vec<MetricsReport> = per_arch.iter().flatten().map(|o| o.report()).collect();
    write_file(&a.out_dir.join("ablation.csv"), ablation_csv(&per_arch)?.as_bytes())?;
    write_json(&a.out_dir.join("ablation_metrics.json"), &reports)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Occlude(a) => occlude(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
