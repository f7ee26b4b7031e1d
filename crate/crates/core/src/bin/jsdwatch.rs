//! `jsdwatch` command-line interface.
//!
//! Exit codes: 0 success, 1 data or model error, 2 usage error.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use jsdwatch::cohort::{bucket_hourly, patient_mean_impute, prepare_reference};
use jsdwatch::detector::{score_patient, HourOutcome, ScoreRecord, ScorerState};
use jsdwatch::io::{
    load_reference, parse_observations, parse_scores, read_labels, save_reference, score_header, score_line,
    write_observations, write_scores,
};
use jsdwatch::reference::{PipelineConfig, ReferenceModel};
use jsdwatch::registry::FeatureRegistry;
use jsdwatch::report::write_report;
use jsdwatch::synth::{generate_cohort, SynthConfig};
use jsdwatch::Error;

#[derive(Parser)]
#[command(name = "jsdwatch", version, about = "Sliding-window Jensen-Shannon divergence scoring against a reference cohort")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic control/treatment cohort as observation CSV.
    Synth(SynthArgs),
    /// Build a reference model from the control patients of an observation CSV.
    BuildReference(BuildArgs),
    /// Batch-score every patient of an observation CSV.
    Score(ScoreArgs),
    /// Score hourly observations read from standard input.
    Stream(StreamArgs),
    /// Write plot-ready CSVs summarizing a score file.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file with a full generator configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    control: Option<usize>,
    #[arg(long)]
    treatment: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    onset: Option<usize>,
    /// Step shift of the drifted features, in feature standard deviations.
    #[arg(long)]
    shift_sds: Option<f64>,
    /// Comma-separated feature ids to shift after onset.
    #[arg(long, value_delimiter = ',')]
    shifted: Option<Vec<String>>,
    /// Per-cell missingness rate applied to every feature.
    #[arg(long)]
    missingness: Option<f64>,
    /// Use the reported treatment-cohort moments for the post-onset generator.
    #[arg(long)]
    reported_treatment_moments: bool,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RegistryArg {
    /// Feature registry CSV (`id,display_name,unit`); defaults to the built-in 27 features.
    #[arg(long)]
    registry: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    grid_points: usize,
    /// Leave a patient out of the reference (repeatable).
    #[arg(long = "exclude-patient")]
    exclude_patient: Vec<String>,
    #[arg(long, default_value_t = 48)]
    horizon: usize,
    #[arg(long, default_value_t = 0.25)]
    dataset_missing_threshold: f64,
    #[arg(long, default_value_t = 0.25)]
    patient_min_present: f64,
    #[arg(long, default_value_t = 0.75)]
    cohort_sparse_threshold: f64,
    #[command(flatten)]
    registry: RegistryArg,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hours per patient; defaults to the horizon the model was built with.
    #[arg(long)]
    horizon: Option<usize>,
    /// Fill gaps with each patient's own column mean before scoring (retrospective mode).
    #[arg(long)]
    patient_impute: bool,
    /// Ignore input features the model does not know instead of failing.
    #[arg(long)]
    ignore_extra_features: bool,
    #[command(flatten)]
    registry: RegistryArg,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    model: PathBuf,
    /// When set, observations at or past this hour are rejected and every
    /// patient is padded with empty hours up to it at end of input.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// CSV with `patient_id` and `cohort` columns (an observation file works).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Patients to include in the trajectory file; all when omitted.
    #[arg(long, value_delimiter = ',')]
    patients: Vec<String>,
}

#[derive(Debug)]
struct CliError(String);

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_registry(arg: &RegistryArg) -> CliResult<FeatureRegistry> {
    match &arg.registry {
        Some(path) => Ok(FeatureRegistry::from_csv(open(path)?)?),
        None => Ok(FeatureRegistry::default()),
    }
}

fn load_model(path: &Path) -> CliResult<ReferenceModel> {
    load_reference(open(path)?).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let mut config = match &args.config {
        Some(path) => {
            let mut text = String::new();
            open(path)?.read_to_string(&mut text)?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| CliError(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    if args.reported_treatment_moments {
        config = config.with_reported_treatment_moments();
    }
    if let Some(rate) = args.missingness {
        config = config.with_missingness(rate);
    }
    config.n_control = args.control.unwrap_or(config.n_control);
    config.n_treatment = args.treatment.unwrap_or(config.n_treatment);
    config.seed = args.seed.unwrap_or(config.seed);
    config.horizon = args.horizon.unwrap_or(config.horizon);
    config.drift.onset_hour = args.onset.unwrap_or(config.drift.onset_hour);
    config.drift.shift_sds = args.shift_sds.unwrap_or(config.drift.shift_sds);
    if let Some(shifted) = args.shifted {
        config.drift.shifted_features = shifted;
    }

    let table = generate_cohort(&config)?;
    write_observations(&table, output(args.out.as_deref())?)?;
    eprintln!(
        "wrote {} rows for {} patients ({} control, {} treatment)",
        table.len(),
        config.n_control + config.n_treatment,
        config.n_control,
        config.n_treatment
    );
    Ok(())
}

fn cmd_build_reference(args: BuildArgs) -> CliResult<()> {
    let registry = load_registry(&args.registry)?;
    let obs = parse_observations(open(&args.input)?, &registry)?;
    let config = PipelineConfig {
        horizon: args.horizon,
        dataset_missing_threshold: args.dataset_missing_threshold,
        patient_min_present: args.patient_min_present,
        cohort_sparse_threshold: args.cohort_sparse_threshold,
        grid_points: args.grid_points,
    };
    let (model, report) = prepare_reference(&obs, &registry, &config, &args.exclude_patient)?;
    for d in &report.dropped {
        warn!(
            "dropped feature `{}`: {:.1}% missing exceeds the {} threshold of {:.1}%",
            d.feature_id,
            100.0 * d.missing_fraction,
            d.stage,
            100.0 * d.threshold
        );
    }
    let mut out = create(&args.out)?;
    save_reference(&model, &mut out)?;
    out.flush()?;
    info!(
        "reference with {} features from {} control patients written to {}",
        model.len(),
        model.metadata().control_patients,
        args.out.display()
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> CliResult<()> {
    let model = Arc::new(load_model(&args.model)?);
    let registry = load_registry(&args.registry)?;
    let obs = parse_observations(open(&args.input)?, &registry)?;

    let extra: Vec<&str> = obs.features().into_iter().filter(|f| model.position(f).is_none()).collect();
    if !extra.is_empty() {
        if args.ignore_extra_features {
            warn!("ignoring features absent from the model: {}", extra.join(", "));
        } else {
            return Err(CliError(format!(
                "input features absent from the model: {}",
                extra.join(", ")
            )));
        }
    }
    let present = obs.features();
    let unobserved: Vec<&str> = model.feature_ids().filter(|f| !present.contains(f)).collect();
    if !unobserved.is_empty() {
        warn!("model features with no observations: {}", unobserved.join(", "));
    }

    let horizon = args.horizon.unwrap_or(model.metadata().thresholds.horizon);
    let min_present = model.metadata().thresholds.patient_min_present;
    let features: Vec<String> = model.feature_ids().map(str::to_string).collect();
    let patients: Vec<&str> = obs.patients().collect();
    let scored = patients
        .par_iter()
        .map(|p| {
            let mut matrix = bucket_hourly(&obs, p, &features, horizon)?;
            if args.patient_impute {
                matrix = patient_mean_impute(&matrix, min_present);
            }
            score_patient(&model, &matrix)
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let mut records: Vec<ScoreRecord> = Vec::new();
    for (p, rows) in patients.iter().zip(scored) {
        if rows.is_empty() {
            warn!("patient `{p}` produced no scores (fewer than two hours of data)");
        }
        records.extend(rows);
    }
    let mut out = output(args.out.as_deref())?;
    write_scores(&records, &features, &mut out)?;
    out.flush()?;
    info!("scored {} patients, {} rows", patients.len(), records.len());
    Ok(())
}

/// Per-patient streaming state: the scorer plus observations for hours not
/// yet pushed, keyed by hour bucket then feature (latest timestamp wins).
struct StreamPatient {
    scorer: ScorerState,
    pending: BTreeMap<usize, HashMap<String, (f64, f64)>>,
}

struct Stream<W: Write> {
    model: Arc<ReferenceModel>,
    features: Vec<String>,
    horizon: Option<usize>,
    patients: BTreeMap<String, StreamPatient>,
    out: W,
}

impl<W: Write> Stream<W> {
    fn patient(&mut self, id: &str) -> &mut StreamPatient {
        let model = &self.model;
        self.patients.entry(id.to_string()).or_insert_with(|| StreamPatient {
            scorer: ScorerState::new(Arc::clone(model), id),
            pending: BTreeMap::new(),
        })
    }

    fn observe(&mut self, line: &str) -> Result<(), String> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [patient, hour, feature, value] = fields.as_slice() else {
            return Err(format!("expected `patient_id,hour,feature,value`, got `{line}`"));
        };
        let hour: f64 = hour
            .parse()
            .ok()
            .filter(|h: &f64| h.is_finite() && *h >= 0.0)
            .ok_or_else(|| format!("{patient}: invalid hour `{hour}`"))?;
        let value: f64 = value
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| format!("{patient}: invalid value `{value}`"))?;
        if self.model.position(feature).is_none() {
            return Err(format!("{patient}: unknown feature `{feature}`"));
        }
        let bucket = hour.floor() as usize;
        if let Some(h) = self.horizon {
            if bucket >= h {
                return Err(format!("{patient}: hour {hour} is past the horizon of {h}"));
            }
        }
        let state = self.patient(patient);
        let last = state.scorer.last_hour_index();
        if bucket as i64 <= last {
            return Err(format!(
                "{patient}: observation at hour {hour} is out of order (hour {last} already scored)"
            ));
        }
        let slot = state.pending.entry(bucket).or_default();
        match slot.get(*feature) {
            Some((stamp, _)) if *stamp > hour => {}
            _ => {
                slot.insert(feature.to_string(), (hour, value));
            }
        }
        Ok(())
    }

    /// Pushes every pending hour of `id`, filling skipped hours with empty ones.
    fn flush_patient(&mut self, id: &str, through: Option<usize>) -> io::Result<()> {
        let Some(state) = self.patients.get_mut(id) else {
            return Ok(());
        };
        let pending = std::mem::take(&mut state.pending);
        let last_pending = pending.keys().next_back().copied();
        let target = match (last_pending, through) {
            (Some(a), Some(b)) => a.max(b),
            (a, b) => match a.or(b) {
                Some(t) => t,
                None => return Ok(()),
            },
        };
        let mut pending = pending;
        let start = (state.scorer.last_hour_index() + 1) as usize;
        for hour in start..=target {
            let values: Vec<(String, Option<f64>)> = pending
                .remove(&hour)
                .unwrap_or_default()
                .into_iter()
                .map(|(f, (_, v))| (f, Some(v)))
                .collect();
            match state.scorer.push_hour(hour, values) {
                Ok(Some(HourOutcome::Scored(record))) => {
                    let line = score_line(&record, &self.features).map_err(io::Error::other)?;
                    writeln!(self.out, "{line}")?;
                }
                Ok(Some(HourOutcome::NoFeaturesAvailable { .. })) | Ok(None) => {}
                Err(e) => eprintln!("error: {id}: {e}"),
            }
        }
        self.out.flush()
    }

    fn flush_all(&mut self) -> io::Result<()> {
        let ids: Vec<String> = self
            .patients
            .iter()
            .filter(|(_, p)| !p.pending.is_empty())
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            self.flush_patient(&id, None)?;
        }
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        let ids: Vec<String> = self.patients.keys().cloned().collect();
        for id in ids {
            let through = self.horizon.map(|h| h - 1);
            self.flush_patient(&id, through)?;
        }
        Ok(())
    }
}

const END_OF_HOUR: &str = "end-of-hour";

fn cmd_stream(args: StreamArgs) -> CliResult<()> {
    let model = Arc::new(load_model(&args.model)?);
    let features: Vec<String> = model.feature_ids().map(str::to_string).collect();
    let stdout = io::stdout();
    let mut stream = Stream {
        model,
        horizon: args.horizon,
        patients: BTreeMap::new(),
        out: stdout.lock(),
        features,
    };
    writeln!(stream.out, "{}", score_header(&stream.features))?;
    stream.out.flush()?;

    for (n, line) in io::stdin().lock().lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("patient_id,")) {
            continue;
        }
        if line == END_OF_HOUR {
            stream.flush_all()?;
        } else if let Some(patient) = line.strip_suffix(END_OF_HOUR).and_then(|p| p.strip_suffix(',')) {
            stream.flush_patient(patient.trim(), None)?;
        } else if let Err(msg) = stream.observe(line) {
            eprintln!("error: line {}: {msg}", n + 1);
        }
    }
    stream.finish()?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CliResult<()> {
    let table = parse_scores(open(&args.scores)?)?;
    if table.rows.is_empty() {
        return Err(CliError(format!("{}: no score rows", args.scores.display())));
    }
    let labels = match &args.labels {
        Some(path) => read_labels(open(path)?)?,
        None => BTreeMap::new(),
    };
    let files = write_report(&table, &labels, &args.patients, &args.out)?;
    info!("wrote {} to {}", files.join(", "), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::BuildReference(a) => cmd_build_reference(a),
        Command::Score(a) => cmd_score(a),
        Command::Stream(a) => cmd_stream(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
