//! Command-line surface: argument definitions and one function per
//! subcommand. Each command reads its inputs, writes its outputs and returns
//! a short summary for the terminal; failures carry an exit code and a JSON
//! payload.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adaptation::{self, AdaptError, CandidateGrid};
use crate::fitting::{self, CurveKind, FitError, NormalizedCurve, SequenceFit, ShapeFit, ShapeFitOptions};
use crate::io::{self, IoError, ParamsFile, PredictionRow, Provenance};
use crate::model::{self, Factors, ModelError, References, SequenceParams, ShapeConstants};
use crate::pipeline::{self, Action, MosTable, PipelineConfig, PipelineError, RescaleConfig, StarLabel};
use crate::stats::{self, AnovaTable, StatsError};
use crate::synth::{self, Campaign};

#[derive(Debug, Parser)]
#[command(name = "qstar", version, about = "Perceptual quality of frame-size, frame-rate and quantization scaled video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screen raw ratings and aggregate them into a MOS table
    Process(ProcessArgs),
    /// Fit per-sequence model parameters to a MOS table
    Fit(FitArgs),
    /// Evaluate fitted models on a grid of operating points
    Predict(PredictArgs),
    /// Sample each model component for plotting
    Curves(CurvesArgs),
    /// Compare predictions with measured MOS
    Validate(ValidateArgs),
    /// Three-way ANOVA of the per-viewer scores behind a MOS table
    Anova(AnovaArgs),
    /// Best operating point under a rate budget
    Adapt(AdaptArgs),
    /// Generate a synthetic rating campaign from model parameters
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProcessArgs {
    pub ratings: PathBuf,
    /// Pipeline thresholds (TOML)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "mos.csv")]
    pub mos: PathBuf,
    #[arg(long, default_value = "screening_report.json")]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    pub mos: PathBuf,
    #[arg(long, default_value = "params.json")]
    pub params: PathBuf,
    #[arg(long, default_value = "fit_report.json")]
    pub report: PathBuf,
    /// Only fit these sequences
    #[arg(long = "sequence")]
    pub sequences: Vec<String>,
    /// Reference frame size, e.g. 704x576 (default: largest in the table)
    #[arg(long, value_parser = parse_size)]
    pub ref_size: Option<(u32, u32)>,
    /// Reference frame rate (default: highest in the table)
    #[arg(long)]
    pub ref_fps: Option<f64>,
    /// Reference QP (default: lowest in the table)
    #[arg(long)]
    pub ref_qp: Option<i32>,
    /// Refine the three parameters jointly after the component-wise fit
    #[arg(long)]
    pub joint: bool,
    /// Also fit the shared spatial constants across all sequences
    #[arg(long)]
    pub fit_constants: bool,
    /// Omit the fit timestamp so that reruns are byte-identical
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    pub params: PathBuf,
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
    #[arg(long = "sequence")]
    pub sequences: Vec<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_size, default_value = "176x144,352x288,704x576")]
    pub sizes: Vec<(u32, u32)>,
    #[arg(long, value_delimiter = ',', default_value = "7.5,15,30")]
    pub fps: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "28,36,44")]
    pub qp: Vec<i32>,
}

#[derive(Debug, Clone, Args)]
pub struct CurvesArgs {
    pub params: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Samples per curve
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(50..))]
    pub points: u32,
    /// QPs at which the frame-size curves are drawn
    #[arg(long, value_delimiter = ',', default_value = "28,36,44")]
    pub qp: Vec<i32>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    pub predictions: PathBuf,
    pub mos: PathBuf,
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
    /// Compare against MOS as is instead of normalizing by each sequence's top cell
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnovaArgs {
    pub mos: PathBuf,
    #[arg(long, default_value = "anova.json")]
    pub out: PathBuf,
    #[arg(long = "sequence")]
    pub sequences: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct AdaptArgs {
    pub params: PathBuf,
    pub rates: PathBuf,
    /// Rate budget in the units of the rate table; `inf` for no limit
    #[arg(long)]
    pub budget: f64,
    /// Sequence to adapt (optional when the parameter file has only one)
    #[arg(long)]
    pub sequence: Option<String>,
    #[arg(long, default_value = "selection.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "ratings.csv")]
    pub out: PathBuf,
    /// Generating parameters (default: the built-in reference sequences)
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long = "sequence")]
    pub sequences: Vec<String>,
    #[arg(long, default_value_t = 24)]
    pub viewers: usize,
    /// Per-rating noise on the 1..10 scale
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "1")]
    pub test_id: String,
}

pub fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.trim().split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u32>().ok().filter(|v| *v > 0);
    match (parse(w), parse(h)) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(format!("expected positive WIDTHxHEIGHT, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Data,
    Numerical,
}

/// A failed command: exit code 1 for bad input, 2 for numerical failure.
#[derive(Debug, Clone)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
    pub details: Value,
}

impl CliError {
    pub fn data(message: impl Into<String>) -> CliError {
        CliError { kind: ErrorKind::Data, message: message.into(), details: Value::Null }
    }

    pub fn numerical(message: impl Into<String>) -> CliError {
        CliError { kind: ErrorKind::Numerical, message: message.into(), details: Value::Null }
    }

    pub fn with_details(mut self, details: Value) -> CliError {
        self.details = details;
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Data => 1,
            ErrorKind::Numerical => 2,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": self.kind, "exit_code": self.exit_code(), "message": self.message, "details": self.details })
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

macro_rules! data_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> CliError {
                CliError::data(e.to_string())
            }
        }
    )*};
}
data_error_from!(IoError, PipelineError, ModelError, StatsError);

impl From<FitError> for CliError {
    fn from(e: FitError) -> CliError {
        CliError::data(e.to_string())
    }
}

impl From<AdaptError> for CliError {
    fn from(e: AdaptError) -> CliError {
        let details = match &e {
            AdaptError::Infeasible { budget, min_rate } => json!({ "budget": budget, "min_rate": min_rate }),
            _ => Value::Null,
        };
        CliError::data(e.to_string()).with_details(details)
    }
}

/// Runs a parsed command and returns the lines to print on success.
pub fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    match cli.command {
        Command::Process(a) => process(&a),
        Command::Fit(a) => fit(&a).map(|o| o.summary()),
        Command::Predict(a) => predict(&a),
        Command::Curves(a) => curves(&a),
        Command::Validate(a) => validate(&a),
        Command::Anova(a) => anova(&a),
        Command::Adapt(a) => adapt(&a),
        Command::Simulate(a) => simulate(&a),
    }
}

// ---------------------------------------------------------------- process

#[derive(Debug, Serialize)]
struct ProcessReport<'a> {
    input_sha256: String,
    ratings_in: usize,
    cells_out: usize,
    config: &'a PipelineConfig,
    rescale: RescaleConfig,
    actions: &'a [Action],
}

pub fn read_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let Some(path) = path else { return Ok(PipelineConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| CliError::data(format!("{}: {}", path.display(), e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn process(args: &ProcessArgs) -> Result<Vec<String>, CliError> {
    let cfg = read_config(args.config.as_deref())?;
    let records = io::read_ratings(&args.ratings)?;
    if records.is_empty() {
        return Err(CliError::data(format!("{}: no ratings", args.ratings.display())));
    }
    let (table, screening) = pipeline::run_pipeline(&records, &cfg)?;
    let rescale = match &cfg.rescale {
        Some(r) => r.clone(),
        None => RescaleConfig::from_raw(&records)?,
    };
    io::write_mos(&args.mos, &table)?;
    let report = ProcessReport {
        input_sha256: io::file_sha256(&args.ratings)?,
        ratings_in: records.len(),
        cells_out: table.len(),
        config: &cfg,
        rescale,
        actions: &screening.actions,
    };
    io::write_json(&args.report, &report)?;
    Ok(vec![format!(
        "{} ratings -> {} MOS cells ({} screening actions) -> {}",
        records.len(),
        table.len(),
        screening.removals_and_adjustments().count(),
        args.mos.display()
    )])
}

// -------------------------------------------------------------------- fit

/// One line of the fit report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub sequence_id: String,
    pub alpha_q: f64,
    pub alpha_s_hat: f64,
    pub alpha_t: f64,
    pub pcc: Option<f64>,
    pub rmse: f64,
    /// Mean 95% CI half-width of the sequence's MOS cells.
    pub ci: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub sequence_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportFile {
    pub references: References,
    pub constants: ShapeConstants,
    pub shape_fit: Option<ShapeFit>,
    pub rows: Vec<FitRow>,
    /// Column means over `rows`.
    pub average: Option<FitRow>,
    pub failures: Vec<FitFailure>,
    pub details: BTreeMap<String, SequenceFit>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: Option<ParamsFile>,
    pub report: FitReportFile,
}

impl FitOutcome {
    fn summary(&self) -> Vec<String> {
        let mut lines = vec![format!(
            "{:<12} {:>9} {:>9} {:>9} {:>7} {:>7}",
            "sequence", "alpha_q", "alpha_s", "alpha_t", "PCC", "RMSE"
        )];
        for r in self.report.rows.iter().chain(&self.report.average) {
            lines.push(format!(
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7.4}",
                r.sequence_id,
                r.alpha_q,
                r.alpha_s_hat,
                r.alpha_t,
                r.pcc.map_or("-".to_string(), |p| format!("{p:.4}")),
                r.rmse
            ));
        }
        lines
    }
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let xs: Vec<f64> = v.collect();
    (!xs.is_empty()).then(|| stats::mean(&xs))
}

fn average_row(rows: &[FitRow]) -> Option<FitRow> {
    if rows.is_empty() {
        return None;
    }
    Some(FitRow {
        sequence_id: "average".into(),
        alpha_q: mean_of(rows.iter().map(|r| r.alpha_q))?,
        alpha_s_hat: mean_of(rows.iter().map(|r| r.alpha_s_hat))?,
        alpha_t: mean_of(rows.iter().map(|r| r.alpha_t))?,
        pcc: mean_of(rows.iter().filter_map(|r| r.pcc)),
        rmse: mean_of(rows.iter().map(|r| r.rmse))?,
        ci: mean_of(rows.iter().filter_map(|r| r.ci)),
        converged: rows.iter().all(|r| r.converged),
    })
}

fn fit_references(table: &MosTable, args: &FitArgs) -> Result<References, CliError> {
    let mut refs = pipeline::references_of(table.cells().map(|c| &c.star))
        .ok_or_else(|| CliError::data(format!("{}: empty MOS table", args.mos.display())))?;
    if let Some((w, h)) = args.ref_size {
        refs.s_max = f64::from(w) * f64::from(h);
    }
    if let Some(fps) = args.ref_fps {
        refs.t_max = fps;
    }
    if let Some(qp) = args.ref_qp {
        refs.q_min = model::qs_from_qp(f64::from(qp))?;
    }
    refs.validate()?;
    Ok(refs)
}

fn shape_datasets(
    table: &MosTable,
    sequences: &[String],
    refs: &References,
) -> Result<BTreeMap<String, Vec<NormalizedCurve>>, FitError> {
    sequences
        .iter()
        .map(|s| {
            let curves = fitting::derive_curves(table, s, refs)?;
            Ok((s.clone(), curves.into_iter().filter(|c| c.kind == CurveKind::Nqs).collect()))
        })
        .collect()
}

/// Fits every selected sequence, writes `params` and `report`. Sequences that
/// fail or do not converge are listed in the report and left out of the
/// parameter file; the error then reflects the worst outcome.
pub fn fit(args: &FitArgs) -> Result<FitOutcome, CliError> {
    let table = io::read_mos(&args.mos)?;
    let refs = fit_references(&table, args)?;
    let available = table.sequences();
    let sequences: Vec<String> = if args.sequences.is_empty() {
        available.clone()
    } else {
        for s in &args.sequences {
            if !available.contains(s) {
                return Err(FitError::UnknownSequence(s.clone()).into());
            }
        }
        args.sequences.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    };

    let mut consts = ShapeConstants::default();
    let mut shape_fit = None;
    let mut failures = Vec::new();
    if args.fit_constants {
        let sf = fitting::fit_shape_constants(&shape_datasets(&table, &sequences, &refs)?, &consts, &ShapeFitOptions::default())?;
        if sf.converged {
            consts = sf.constants;
        } else {
            failures.push(FitFailure { sequence_id: "*".into(), error: format!("constant fit: {}", sf.warnings.join("; ")) });
        }
        shape_fit = Some(sf);
    }

    let mut rows = Vec::new();
    let mut details = BTreeMap::new();
    let mut fitted = BTreeMap::new();
    let mut input_error = false;
    for seq in &sequences {
        let result = fitting::fit_sequence(&table, seq, &refs, &consts)
            .and_then(|f| if args.joint { fitting::refine_joint(&table, &f, &refs, &consts) } else { Ok(f) });
        match result {
            Ok(f) => {
                let cells: Vec<f64> = table.sequence(seq).filter_map(|c| c.ci_halfwidth).collect();
                rows.push(FitRow {
                    sequence_id: seq.clone(),
                    alpha_q: f.params.alpha_q,
                    alpha_s_hat: f.params.alpha_s_hat,
                    alpha_t: f.params.alpha_t,
                    pcc: f.report.pcc,
                    rmse: f.report.rmse,
                    ci: (!cells.is_empty()).then(|| stats::mean(&cells)),
                    converged: f.report.converged,
                });
                if f.report.converged {
                    fitted.insert(seq.clone(), f.params);
                } else {
                    failures.push(FitFailure { sequence_id: seq.clone(), error: f.report.warnings.join("; ") });
                }
                details.insert(seq.clone(), f);
            }
            Err(e) => {
                input_error = true;
                failures.push(FitFailure { sequence_id: seq.clone(), error: e.to_string() });
            }
        }
    }

    let params = (!fitted.is_empty()).then(|| ParamsFile {
        references: refs,
        constants: consts,
        sequences: fitted,
        provenance: Provenance {
            fit_timestamp: (!args.deterministic)
                .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())),
            input_sha256: io::file_sha256(&args.mos).ok(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        },
    });
    let report = FitReportFile {
        references: refs,
        constants: consts,
        shape_fit,
        average: average_row(&rows),
        rows,
        failures,
        details,
    };
    if let Some(p) = &params {
        io::write_params(&args.params, p)?;
    }
    io::write_json(&args.report, &report)?;

    if report.failures.is_empty() {
        return Ok(FitOutcome { params, report });
    }
    let payload = serde_json::to_value(&report.failures).unwrap_or(Value::Null);
    let n = report.failures.len();
    let err = if input_error {
        CliError::data(format!("{n} fit(s) failed"))
    } else {
        CliError::numerical(format!("{n} fit(s) did not converge"))
    };
    Err(err.with_details(payload))
}

// ---------------------------------------------------------------- predict

fn selected(params: &ParamsFile, wanted: &[String]) -> Result<Vec<(String, SequenceParams)>, CliError> {
    if wanted.is_empty() {
        return Ok(params.sequences.iter().map(|(k, v)| (k.clone(), *v)).collect());
    }
    let set: BTreeSet<&String> = wanted.iter().collect();
    set.into_iter()
        .map(|s| {
            params
                .sequences
                .get(s)
                .map(|p| (s.clone(), *p))
                .ok_or_else(|| CliError::data(format!("sequence {s} not in the parameter file")))
        })
        .collect()
}

pub const OUTSIDE_RANGE: &str = "outside_reference_range";

/// One prediction row; points the references cannot normalize are flagged.
pub fn prediction_row(
    sequence_id: &str,
    label: StarLabel,
    params: &SequenceParams,
    file: &ParamsFile,
) -> Result<PredictionRow, CliError> {
    let factors: Option<Factors> = match label.to_point(file.references) {
        Ok(p) => Some(model::qstar_factors(&p, params, &file.constants)?),
        Err(_) => None,
    };
    Ok(PredictionRow {
        sequence_id: sequence_id.to_string(),
        width: label.width,
        height: label.height,
        fps: label.fps,
        qp: label.qp,
        s: label.pixels() as f64,
        t: label.fps,
        q: label.stepsize(),
        nqq: factors.map(|f| f.nqq),
        nqs: factors.map(|f| f.nqs),
        nqt: factors.map(|f| f.nqt),
        quality: factors.map(|f| f.quality),
        flag: if factors.is_some() { String::new() } else { OUTSIDE_RANGE.into() },
    })
}

pub fn predict(args: &PredictArgs) -> Result<Vec<String>, CliError> {
    let file = io::read_params(&args.params)?;
    if args.fps.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(CliError::data("frame rates must be positive"));
    }
    let grid: BTreeSet<StarLabel> = args
        .sizes
        .iter()
        .flat_map(|&(w, h)| args.fps.iter().flat_map(move |&f| args.qp.iter().map(move |&q| StarLabel::new(w, h, f, q))))
        .collect();
    let mut rows = Vec::new();
    for (name, p) in selected(&file, &args.sequences)? {
        for l in &grid {
            rows.push(prediction_row(&name, *l, &p, &file)?);
        }
    }
    io::write_predictions(&args.out, &rows)?;
    let flagged = rows.iter().filter(|r| !r.flag.is_empty()).count();
    let mut out = vec![format!("{} predictions -> {}", rows.len(), args.out.display())];
    if flagged > 0 {
        out.push(format!("warning: {flagged} grid point(s) outside the reference range were flagged"));
    }
    Ok(out)
}

// ----------------------------------------------------------------- curves

fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string())).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Writes `nqq.csv`, `nqs.csv` and `nqt.csv`; `x` is the normalized
/// variable (`q_min/q`, `s/s_max`, `t/t_max`) sampled at `i/N`, `i = 1..=N`.
pub fn curves(args: &CurvesArgs) -> Result<Vec<String>, CliError> {
    let file = io::read_params(&args.params)?;
    let r = file.references;
    let c = &file.constants;
    let n = args.points;
    let xs: Vec<f64> = (1..=n).map(|i| if i == n { 1.0 } else { f64::from(i) / f64::from(n) }).collect();
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::data(format!("{}: {e}", args.out_dir.display())))?;
    let seqs: Vec<(&String, &SequenceParams)> = file.sequences.iter().collect();

    let mut header = vec!["x".to_string(), "q".to_string()];
    header.extend(seqs.iter().map(|(s, _)| s.to_string()));
    let mut rows = Vec::new();
    for &x in &xs {
        let q = r.q_min / x;
        let mut row = vec![x, q];
        for (_, p) in &seqs {
            row.push(model::mnqq(q, r.q_min, p.alpha_q, c)?);
        }
        rows.push(row);
    }
    write_table(&args.out_dir.join("nqq.csv"), &header, &rows)?;

    let mut header = vec!["x".to_string(), "t".to_string()];
    header.extend(seqs.iter().map(|(s, _)| s.to_string()));
    let mut rows = Vec::new();
    for &x in &xs {
        let t = if x == 1.0 { r.t_max } else { x * r.t_max };
        let mut row = vec![x, t];
        for (_, p) in &seqs {
            row.push(model::mnqt(t, r.t_max, p.alpha_t, c)?);
        }
        rows.push(row);
    }
    write_table(&args.out_dir.join("nqt.csv"), &header, &rows)?;

    let qps: BTreeSet<i32> = args.qp.iter().copied().collect();
    let mut header = vec!["x".to_string(), "s".to_string()];
    for (s, _) in &seqs {
        header.extend(qps.iter().map(|qp| format!("{s}@qp{qp}")));
    }
    let mut rows = Vec::new();
    for &x in &xs {
        let s = if x == 1.0 { r.s_max } else { x * r.s_max };
        let mut row = vec![x, s];
        for (_, p) in &seqs {
            for &qp in &qps {
                let q = model::qs_from_qp(f64::from(qp))?;
                row.push(model::mnqs(s, r.s_max, q, p.alpha_s_hat, c)?);
            }
        }
        rows.push(row);
    }
    write_table(&args.out_dir.join("nqs.csv"), &header, &rows)?;
    Ok(vec![format!("3 curve files with {n} samples each -> {}", args.out_dir.display())])
}

// --------------------------------------------------------------- validate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub n: usize,
    pub pcc: Option<f64>,
    pub rmse: f64,
}

impl Agreement {
    fn of(pairs: &[(f64, f64)]) -> Result<Agreement, CliError> {
        let (p, m): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        Ok(Agreement { n: pairs.len(), pcc: stats::pcc(&p, &m).ok(), rmse: stats::rmse(&p, &m)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub normalized: bool,
    pub overall: Agreement,
    pub sequences: BTreeMap<String, Agreement>,
    /// Prediction rows with no MOS cell.
    pub unmatched_predictions: Vec<String>,
}

/// Measured value per MOS cell: raw MOS, or MOS over the sequence's top cell
/// (largest frame size, highest frame rate, lowest QP present).
fn measured_values(table: &MosTable, raw: bool) -> Result<BTreeMap<(String, StarLabel), f64>, CliError> {
    let mut out = BTreeMap::new();
    for seq in table.sequences() {
        let cells: Vec<_> = table.sequence(&seq).collect();
        let scale = if raw {
            1.0
        } else {
            let refs = pipeline::references_of(cells.iter().map(|c| &c.star)).expect("non-empty sequence");
            let top = cells
                .iter()
                .filter(|c| c.star.pixels() as f64 == refs.s_max && c.star.fps == refs.t_max)
                .min_by_key(|c| c.star.qp)
                .filter(|c| c.star.stepsize() == refs.q_min)
                .ok_or_else(|| CliError::data(format!("sequence {seq}: no cell at the largest size, highest rate and lowest QP")))?;
            if !(top.mos > 0.0) {
                return Err(CliError::data(format!("sequence {seq}: top cell MOS {} cannot normalize", top.mos)));
            }
            top.mos
        };
        for c in cells {
            out.insert((seq.clone(), c.star), c.mos / scale);
        }
    }
    Ok(out)
}

pub fn validate(args: &ValidateArgs) -> Result<Vec<String>, CliError> {
    let predictions = io::read_predictions(&args.predictions)?;
    let table = io::read_mos(&args.mos)?;
    let measured = measured_values(&table, args.raw)?;
    let mut predicted = BTreeMap::new();
    for p in &predictions {
        if predicted.insert((p.sequence_id.clone(), p.label()), p.quality).is_some() {
            return Err(CliError::data(format!("duplicate prediction for {} {}", p.sequence_id, p.label())));
        }
    }
    let missing: Vec<String> = measured
        .keys()
        .filter(|k| !matches!(predicted.get(*k), Some(Some(_))))
        .map(|(s, l)| format!("{s} {l}"))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::data(format!("{} MOS cell(s) have no usable prediction", missing.len()))
            .with_details(json!({ "missing_predictions": missing })));
    }
    let unmatched_predictions =
        predicted.keys().filter(|k| !measured.contains_key(*k)).map(|(s, l)| format!("{s} {l}")).collect();

    let mut per_seq: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (k, m) in &measured {
        let p = predicted[k].expect("checked above");
        per_seq.entry(k.0.clone()).or_default().push((p, *m));
    }
    let all: Vec<(f64, f64)> = per_seq.values().flatten().copied().collect();
    let metrics = Metrics {
        normalized: !args.raw,
        overall: Agreement::of(&all)?,
        sequences: per_seq.iter().map(|(s, v)| Ok((s.clone(), Agreement::of(v)?))).collect::<Result<_, CliError>>()?,
        unmatched_predictions,
    };
    io::write_json(&args.out, &metrics)?;
    Ok(vec![format!(
        "{} cells: PCC {} RMSE {:.4} -> {}",
        metrics.overall.n,
        metrics.overall.pcc.map_or("-".into(), |p| format!("{p:.4}")),
        metrics.overall.rmse,
        args.out.display()
    )])
}

// ------------------------------------------------------------------ anova

/// Factor level ordered by numeric value.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Level(f64);

impl Eq for Level {}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Per-sequence ANOVA with factors QS (QP), SR (pixels) and TR (fps);
/// replicates are the per-viewer scores of each cell.
pub fn anova_tables(table: &MosTable, sequences: &[String]) -> Result<BTreeMap<String, AnovaTable>, CliError> {
    let available = table.sequences();
    let chosen: Vec<String> = if sequences.is_empty() { available.clone() } else { sequences.to_vec() };
    let mut out = BTreeMap::new();
    for seq in chosen {
        if !available.contains(&seq) {
            return Err(CliError::data(format!("sequence {seq} not in the MOS table")));
        }
        let mut cells = BTreeMap::new();
        for c in table.sequence(&seq) {
            if c.scores.is_empty() {
                return Err(CliError::data(format!("sequence {seq}: cell {} has no per-viewer scores", c.star)));
            }
            let key = (Level(f64::from(c.star.qp)), Level(c.star.pixels() as f64), Level(c.star.fps));
            cells.insert(key, c.scores.clone());
        }
        let t = stats::anova3(&cells, ["QS", "SR", "TR"]).map_err(|e| CliError::data(format!("sequence {seq}: {e}")))?;
        out.insert(seq, t);
    }
    Ok(out)
}

pub fn anova(args: &AnovaArgs) -> Result<Vec<String>, CliError> {
    let table = io::read_mos(&args.mos)?;
    let tables = anova_tables(&table, &args.sequences)?;
    io::write_json(&args.out, &tables)?;
    let mut lines = Vec::new();
    for (seq, t) in &tables {
        lines.push(format!("== {seq}"));
        lines.extend(t.to_string().lines().map(str::to_string));
    }
    Ok(lines)
}

// ------------------------------------------------------------------ adapt

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub sequence_id: String,
    /// `None` for an unlimited budget.
    pub budget: Option<f64>,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub qp: i32,
    pub quality: f64,
    pub rate: f64,
    pub factors: Factors,
}

pub fn adapt(args: &AdaptArgs) -> Result<Vec<String>, CliError> {
    let file = io::read_params(&args.params)?;
    let rates = io::read_rates(&args.rates)?;
    let sequence = match &args.sequence {
        Some(s) => s.clone(),
        None if file.sequences.len() == 1 => file.sequences.keys().next().expect("one").clone(),
        None => return Err(CliError::data("--sequence is required when the parameter file has several sequences")),
    };
    let params = file
        .sequences
        .get(&sequence)
        .ok_or_else(|| CliError::data(format!("sequence {sequence} not in the parameter file")))?;
    if rates.is_empty() {
        return Err(CliError::data(format!("{}: empty rate table", args.rates.display())));
    }
    let grid = CandidateGrid::from_labels(rates.labels(), Some(file.references))?;
    let sel = adaptation::select_star(&grid, params, &file.constants, |s, t, q| rates.rate(s, t, q), args.budget)?;
    let qp = model::qp_from_qs(sel.point.q)?.round() as i32;
    let label = rates
        .labels()
        .find(|l| l.pixels() as f64 == sel.point.s && l.fps == sel.point.t && l.qp == qp)
        .copied()
        .expect("selection comes from the rate table");
    let out = SelectionFile {
        sequence_id: sequence,
        budget: args.budget.is_finite().then_some(args.budget),
        width: label.width,
        height: label.height,
        fps: label.fps,
        qp: label.qp,
        quality: sel.quality,
        rate: sel.rate,
        factors: sel.factors,
    };
    io::write_json(&args.out, &out)?;
    Ok(vec![format!("{label}: quality {:.4} at rate {} -> {}", out.quality, out.rate, args.out.display())])
}

// --------------------------------------------------------------- simulate

pub fn simulate(args: &SimulateArgs) -> Result<Vec<String>, CliError> {
    let (pool, refs, consts) = match &args.params {
        Some(p) => {
            let f = io::read_params(p)?;
            (f.sequences.into_iter().collect::<Vec<_>>(), f.references, f.constants)
        }
        None => (
            model::REFERENCE_SEQUENCES.iter().map(|(n, p)| (n.to_string(), *p)).collect(),
            References::default(),
            ShapeConstants::default(),
        ),
    };
    let sequences: Vec<(String, SequenceParams)> = if args.sequences.is_empty() {
        pool
    } else {
        let wanted: BTreeSet<&String> = args.sequences.iter().collect();
        let found: Vec<_> = pool.into_iter().filter(|(n, _)| wanted.contains(n)).collect();
        if found.len() != wanted.len() {
            return Err(CliError::data("unknown sequence requested"));
        }
        found
    };
    if args.viewers == 0 {
        return Err(CliError::data("--viewers must be at least 1"));
    }
    let campaign = Campaign {
        references: refs,
        constants: consts,
        test_id: args.test_id.clone(),
        ..Campaign::new(sequences, args.viewers, args.sigma, args.seed)
    };
    let ratings = campaign.ratings()?;
    io::write_ratings(&args.out, &ratings)?;
    Ok(vec![format!(
        "{} ratings ({} viewers, {} sequences, {} cells each) -> {}",
        ratings.len(),
        args.viewers,
        campaign.sequences.len(),
        synth::paper_grid().len(),
        args.out.display()
    )])
}
