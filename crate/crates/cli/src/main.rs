//! Command-line front end. Each command reads only files written by an
//! earlier command, so stages can be rerun independently.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use morphobp::bp_model::Target;
use morphobp::config::RunConfig;
use morphobp::eval_reporting::{
    aggregate_runs, bland_altman_from_rows, read_reports_json, summary, write_reports_csv,
    write_reports_json,
};
use morphobp::io::{parse_record, read_labels, write_labels, write_record, LabelRow};
use morphobp::morpho_grid::{pulse_pressure, MorphoTemporalGrid};
use morphobp::pipeline::represent;
use morphobp::signal_prep::{preprocess, CuffDeflationRecord, PreparedWaveform};
use morphobp::synth_oscillometry::{generate_cohort, write_truth_csv};
use morphobp::trainer::{read_predictions, run_experiment, write_predictions, LabeledGrid};

#[derive(Parser)]
#[command(name = "morphobp", version, about = "Oscillometric blood-pressure estimation")]
struct Cli {
    /// Run configuration in key = value form.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Sbp,
    Dbp,
    Both,
}

impl TargetArg {
    fn targets(self) -> Vec<Target> {
        match self {
            TargetArg::Sbp => vec![Target::Sbp],
            TargetArg::Dbp => vec![Target::Dbp],
            TargetArg::Both => Target::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum Variant {
    Cnn,
    #[value(name = "cnn_lstm1")]
    CnnLstm1,
    #[value(name = "cnn_lstm2")]
    CnnLstm2,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Cnn => "cnn",
            Variant::CnnLstm1 => "cnn_lstm1",
            Variant::CnnLstm2 => "cnn_lstm2",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: records/ and truth.csv.
    Simulate,
    /// Preprocess records: pulses/ tables and qc.csv.
    Preprocess {
        /// Directory of record files.
        #[arg(long)]
        input: PathBuf,
    },
    /// Build grids: grids/ and labels.csv.
    Represent {
        /// Directory of record files.
        #[arg(long)]
        input: PathBuf,
    },
    /// Leave-one-subject-out training: checkpoints/, history/, predictions.csv.
    Train {
        /// Output directory of `represent`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        target: TargetArg,
        /// Overrides the configured number of recurrent layers.
        #[arg(long, value_enum)]
        variant: Option<Variant>,
    },
    /// Score a prediction table: report.json, report.csv, bland_altman_*.csv.
    Evaluate {
        /// predictions.csv, or a directory containing it.
        #[arg(long)]
        input: PathBuf,
    },
    /// Print a readable summary of report.json.
    Report {
        /// report.json, or a directory containing it.
        #[arg(long)]
        input: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

/// Files with the given extension directly inside `dir`, sorted by name.
fn files_in(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == ext));
    files.sort();
    if files.is_empty() {
        bail!("no .{ext} files in {}", dir.display());
    }
    Ok(files)
}

/// Accepts either the file itself or a directory holding it.
fn resolve(input: &Path, name: &str) -> PathBuf {
    if input.is_dir() {
        input.join(name)
    } else {
        input.to_path_buf()
    }
}

fn stem(subject_id: &str, record_id: &str) -> String {
    format!("{subject_id}_{record_id}")
}

fn read_records(dir: &Path, config: &RunConfig) -> Result<Vec<CuffDeflationRecord>> {
    files_in(dir, "csv")?
        .iter()
        .map(|p| {
            parse_record(p, config.prep.working_rate_hz).with_context(|| format!("in {}", p.display()))
        })
        .collect()
}

fn write_config(out: &Path, config: &RunConfig) -> Result<()> {
    let mut w = create(&out.join("run_config.txt"))?;
    w.write_all(config.to_text().as_bytes())?;
    Ok(w.flush()?)
}

fn simulate(config: &RunConfig, out: &Path) -> Result<()> {
    let cohort = generate_cohort(&config.synth)?;
    for record in &cohort.records {
        let path = out
            .join("records")
            .join(format!("{}.csv", stem(&record.subject_id, &record.record_id)));
        let mut w = create(&path)?;
        write_record(&mut w, record)?;
        w.flush()?;
    }
    let mut w = create(&out.join("truth.csv"))?;
    write_truth_csv(&mut w, &cohort.truth)?;
    w.flush()?;
    write_config(out, config)?;
    println!("wrote {} records to {}", cohort.records.len(), out.display());
    Ok(())
}

fn write_pulse_table(path: &Path, prepared: &PreparedWaveform) -> Result<()> {
    let mut w = create(path)?;
    writeln!(
        w,
        "pulse,start_index,end_index,peak_index,pulse_amp,duration_s,pressure_mmHg,is_outlier,trough_fallback"
    )?;
    for (i, p) in prepared.pulses.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{},{},{},{},{}",
            p.start_index,
            p.end_index,
            p.peak_index,
            p.pulse_amp,
            p.duration,
            pulse_pressure(p, &prepared.omw.slow_component),
            p.is_outlier,
            p.trough_fallback
        )?;
    }
    Ok(w.flush()?)
}

fn preprocess_cmd(config: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let records = read_records(input, config)?;
    let mut qc = create(&out.join("qc.csv"))?;
    writeln!(qc, "subject_id,record_id,peaks,pulses,outliers")?;
    let (mut pulses, mut outliers) = (0, 0);
    for record in &records {
        let prepared = preprocess(record, &config.prep)
            .with_context(|| format!("record {}/{}", record.subject_id, record.record_id))?;
        let name = format!("{}.csv", stem(&record.subject_id, &record.record_id));
        write_pulse_table(&out.join("pulses").join(name), &prepared)?;
        writeln!(
            qc,
            "{},{},{},{},{}",
            record.subject_id,
            record.record_id,
            prepared.peaks.len(),
            prepared.pulses.len(),
            prepared.outlier_count()
        )?;
        pulses += prepared.pulses.len();
        outliers += prepared.outlier_count();
    }
    qc.flush()?;
    write_config(out, config)?;
    println!(
        "{} records, {pulses} pulses, {outliers} flagged as outliers",
        records.len()
    );
    Ok(())
}

fn represent_cmd(config: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let records = read_records(input, config)?;
    let mut labels = Vec::new();
    for record in &records {
        let (_, grid) = represent(record, &config.prep, &config.grid)
            .with_context(|| format!("record {}/{}", record.subject_id, record.record_id))?;
        let name = format!("{}.csv", stem(&record.subject_id, &record.record_id));
        let mut w = create(&out.join("grids").join(name))?;
        grid.write_csv(&mut w, &record.subject_id, &record.record_id)?;
        w.flush()?;
        labels.push(LabelRow {
            subject_id: record.subject_id.clone(),
            record_id: record.record_id.clone(),
            sbp: record.ref_sbp,
            dbp: record.ref_dbp,
        });
    }
    let mut w = create(&out.join("labels.csv"))?;
    write_labels(&mut w, &labels)?;
    w.flush()?;
    write_config(out, config)?;
    println!("wrote {} grids to {}", records.len(), out.join("grids").display());
    Ok(())
}

fn read_labeled_grids(input: &Path) -> Result<Vec<LabeledGrid>> {
    let labels = read_labels(open(&input.join("labels.csv"))?)?;
    labels
        .into_iter()
        .map(|l| {
            let path = input
                .join("grids")
                .join(format!("{}.csv", stem(&l.subject_id, &l.record_id)));
            let (subject_id, record_id, grid): (String, String, MorphoTemporalGrid) =
                MorphoTemporalGrid::read_csv(open(&path)?).with_context(|| format!("in {}", path.display()))?;
            if subject_id != l.subject_id || record_id != l.record_id {
                bail!("{} holds {subject_id}/{record_id}", path.display());
            }
            Ok(LabeledGrid {
                subject_id,
                record_id,
                sbp: l.sbp,
                dbp: l.dbp,
                grid,
            })
        })
        .collect()
}

fn train_cmd(
    config: &RunConfig,
    input: &Path,
    out: &Path,
    target: TargetArg,
    variant: Option<Variant>,
) -> Result<()> {
    let data = read_labeled_grids(input)?;
    let mut model_config = config.model.clone();
    if let Some(v) = variant {
        model_config = model_config.variant(v.name())?;
    }
    let exp = run_experiment(&data, &model_config, &config.train, &target.targets(), config.n_runs)?;
    for fr in &exp.folds {
        let name = format!("run{}_fold{:02}_{}", fr.run, fr.fold.fold_id, fr.target);
        let mut w = create(&out.join("checkpoints").join(format!("{name}.mbpm")))?;
        fr.model.save(&mut w, fr.target)?;
        w.flush()?;
        let mut w = create(&out.join("history").join(format!("{name}.csv")))?;
        fr.history.write_csv(&mut w)?;
        w.flush()?;
    }
    let mut w = create(&out.join("predictions.csv"))?;
    write_predictions(&mut w, &exp.predictions)?;
    w.flush()?;
    write_config(out, config)?;
    println!(
        "trained {} fold models, {} predictions",
        exp.folds.len(),
        exp.predictions.len()
    );
    Ok(())
}

fn evaluate_cmd(input: &Path, out: &Path) -> Result<()> {
    let path = resolve(input, "predictions.csv");
    let rows = read_predictions(open(&path)?).with_context(|| format!("in {}", path.display()))?;
    let n_runs = rows.iter().map(|r| r.run + 1).max().unwrap_or(0);
    let reports = aggregate_runs(&rows, n_runs)?;
    let mut w = create(&out.join("report.json"))?;
    write_reports_json(&mut w, &reports)?;
    w.flush()?;
    let mut w = create(&out.join("report.csv"))?;
    write_reports_csv(&mut w, &reports)?;
    w.flush()?;
    for r in &reports {
        let ba = bland_altman_from_rows(&rows, r.target)?;
        let name = format!("bland_altman_{}.csv", r.target.to_string().to_lowercase());
        let mut w = create(&out.join(name))?;
        ba.write_csv(&mut w)?;
        w.flush()?;
    }
    print!("{}", summary(&reports));
    Ok(())
}

fn report_cmd(input: &Path) -> Result<()> {
    let path = resolve(input, "report.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let reports = read_reports_json(&text).with_context(|| format!("in {}", path.display()))?;
    print!("{}", summary(&reports));
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate => simulate(&config, out),
        Command::Preprocess { input } => preprocess_cmd(&config, input, out),
        Command::Represent { input } => represent_cmd(&config, input, out),
        Command::Train {
            input,
            target,
            variant,
        } => train_cmd(&config, input, out, *target, *variant),
        Command::Evaluate { input } => evaluate_cmd(input, out),
        Command::Report { input } => report_cmd(input),
    }
}
