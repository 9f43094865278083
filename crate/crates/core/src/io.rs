//! CSV and JSON formats read and written by the command-line tool.
//!
//! | file | columns / shape |
//! |------|-----------------|
//! | ratings | `viewer_id,test_id,sequence_id,width,height,fps,qp,raw_score` |
//! | MOS | `sequence_id,width,height,fps,qp,mos,n,ci_halfwidth,scores` (`scores` `;`-separated) |
//! | predictions | `sequence_id,width,height,fps,qp,s,t,q,nqq,nqs,nqt,quality,flag` |
//! | rates | `width,height,fps,qp,rate` |
//! | parameters | JSON [`ParamsFile`] |
//!
//! Floats are written in shortest round-trip form, so every reader/writer
//! pair is lossless.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adaptation::RateTable;
use crate::model::{References, SequenceParams, ShapeConstants};
use crate::pipeline::{MosCell, MosTable, RatingRecord, StarLabel};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, row {row}: {message}")]
    Row { path: PathBuf, row: u64, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(file_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(file_err(path))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String, IoError> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(file_err(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Deserialize every row of a headed CSV, checking required columns first.
/// Rows are numbered by file line (header is line 1).
fn read_rows<T: DeserializeOwned>(path: &Path, required: &[&str]) -> Result<Vec<(u64, T)>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let headers = rdr
        .headers()
        .map_err(|e| IoError::Format { path: path.into(), message: e.to_string() })?
        .clone();
    let missing: Vec<&str> = required.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
    if !missing.is_empty() {
        return Err(IoError::Format {
            path: path.into(),
            message: format!("missing column(s): {}", missing.join(", ")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let fallback = i as u64 + 2;
        let rec = rec.map_err(|e| IoError::Row {
            path: path.into(),
            row: e.position().map_or(fallback, |p| p.line()),
            message: e.to_string(),
        })?;
        let row = rec.position().map_or(fallback, |p| p.line());
        let value = rec
            .deserialize(Some(&headers))
            .map_err(|e| IoError::Row { path: path.into(), row, message: deserialize_message(&e) })?;
        out.push((row, value));
    }
    Ok(out)
}

fn deserialize_message(e: &csv::Error) -> String {
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(f) => format!("field {}: {}", f + 1, err.kind()),
            None => err.kind().to_string(),
        },
        _ => e.to_string(),
    }
}

fn check_label(l: &StarLabel) -> Result<(), String> {
    if l.is_valid() {
        Ok(())
    } else {
        Err(format!("invalid operating point {l}: width, height and fps must be positive"))
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let fmt = |e: csv::Error| IoError::Format { path: path.into(), message: e.to_string() };
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(file_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| IoError::Format { path: path.into(), message: e.to_string() })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(file_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_reader(open(path)?).map_err(|e| IoError::Format { path: path.into(), message: e.to_string() })
}

#[derive(Debug, Serialize, Deserialize)]
struct RatingRow {
    viewer_id: String,
    test_id: String,
    sequence_id: String,
    width: u32,
    height: u32,
    fps: f64,
    qp: i32,
    raw_score: f64,
}

const RATING_COLUMNS: [&str; 8] = ["viewer_id", "test_id", "sequence_id", "width", "height", "fps", "qp", "raw_score"];

pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>, IoError> {
    read_rows::<RatingRow>(path, &RATING_COLUMNS)?
        .into_iter()
        .map(|(row, r)| {
            let star = StarLabel::new(r.width, r.height, r.fps, r.qp);
            check_label(&star)
                .and_then(|_| {
                    if r.raw_score.is_finite() {
                        Ok(())
                    } else {
                        Err(format!("raw_score {} is not finite", r.raw_score))
                    }
                })
                .map_err(|message| IoError::Row { path: path.into(), row, message })?;
            Ok(RatingRecord {
                viewer_id: r.viewer_id,
                test_id: r.test_id,
                sequence_id: r.sequence_id,
                star,
                raw_score: r.raw_score,
            })
        })
        .collect()
}

pub fn write_ratings(path: &Path, records: &[RatingRecord]) -> Result<(), IoError> {
    write_csv(
        path,
        records.iter().map(|r| RatingRow {
            viewer_id: r.viewer_id.clone(),
            test_id: r.test_id.clone(),
            sequence_id: r.sequence_id.clone(),
            width: r.star.width,
            height: r.star.height,
            fps: r.star.fps,
            qp: r.star.qp,
            raw_score: r.raw_score,
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct MosRow {
    sequence_id: String,
    width: u32,
    height: u32,
    fps: f64,
    qp: i32,
    mos: f64,
    n: usize,
    ci_halfwidth: Option<f64>,
    scores: String,
}

const MOS_COLUMNS: [&str; 7] = ["sequence_id", "width", "height", "fps", "qp", "mos", "n"];

/// Reads a MOS table. `ci_halfwidth` and `scores` may be empty (or absent).
pub fn read_mos(path: &Path) -> Result<MosTable, IoError> {
    #[derive(Deserialize)]
    struct Row {
        sequence_id: String,
        width: u32,
        height: u32,
        fps: f64,
        qp: i32,
        mos: f64,
        n: usize,
        #[serde(default)]
        ci_halfwidth: Option<f64>,
        #[serde(default)]
        scores: Option<String>,
    }
    let mut table = MosTable::new();
    for (row, r) in read_rows::<Row>(path, &MOS_COLUMNS)? {
        let err = |message: String| IoError::Row { path: path.into(), row, message };
        let star = StarLabel::new(r.width, r.height, r.fps, r.qp);
        check_label(&star).map_err(err)?;
        let scores: Vec<f64> = match r.scores.as_deref().map(str::trim) {
            None | Some("") => Vec::new(),
            Some(s) => s
                .split(';')
                .map(|v| v.trim().parse::<f64>().map_err(|e| err(format!("score {v:?}: {e}"))))
                .collect::<Result<_, _>>()?,
        };
        if !scores.is_empty() && scores.len() != r.n {
            return Err(err(format!("n = {} but {} scores listed", r.n, scores.len())));
        }
        if !r.mos.is_finite() || r.n == 0 {
            return Err(err("mos must be finite and n at least 1".into()));
        }
        let cell = MosCell { sequence_id: r.sequence_id, star, mos: r.mos, n: r.n, ci_halfwidth: r.ci_halfwidth, scores };
        if let Some(prev) = table.insert(cell) {
            return Err(err(format!("duplicate cell {} {}", prev.sequence_id, prev.star)));
        }
    }
    Ok(table)
}

pub fn write_mos(path: &Path, table: &MosTable) -> Result<(), IoError> {
    write_csv(
        path,
        table.cells().map(|c| MosRow {
            sequence_id: c.sequence_id.clone(),
            width: c.star.width,
            height: c.star.height,
            fps: c.star.fps,
            qp: c.star.qp,
            mos: c.mos,
            n: c.n,
            ci_halfwidth: c.ci_halfwidth,
            scores: c.scores.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(";"),
        }),
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Unix seconds; absent in deterministic runs.
    pub fit_timestamp: Option<u64>,
    /// SHA-256 of the input MOS file.
    pub input_sha256: Option<String>,
    pub tool_version: String,
}

/// Fitted parameters of a set of sequences with everything needed to
/// evaluate the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub references: References,
    pub constants: ShapeConstants,
    pub sequences: BTreeMap<String, SequenceParams>,
    pub provenance: Provenance,
}

impl ParamsFile {
    pub fn validate(&self) -> Result<(), String> {
        self.references.validate().map_err(|e| e.to_string())?;
        self.constants.validate().map_err(|e| e.to_string())?;
        for (name, p) in &self.sequences {
            p.validate().map_err(|e| format!("sequence {name}: {e}"))?;
        }
        Ok(())
    }
}

pub fn read_params(path: &Path) -> Result<ParamsFile, IoError> {
    let p: ParamsFile = read_json(path)?;
    p.validate().map_err(|message| IoError::Format { path: path.into(), message })?;
    Ok(p)
}

pub fn write_params(path: &Path, params: &ParamsFile) -> Result<(), IoError> {
    write_json(path, params)
}

/// One row of a predictions file. Factor columns are empty for points
/// outside the reference range, which carry a flag instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sequence_id: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub qp: i32,
    pub s: f64,
    pub t: f64,
    pub q: f64,
    pub nqq: Option<f64>,
    pub nqs: Option<f64>,
    pub nqt: Option<f64>,
    pub quality: Option<f64>,
    pub flag: String,
}

impl PredictionRow {
    pub fn label(&self) -> StarLabel {
        StarLabel::new(self.width, self.height, self.fps, self.qp)
    }
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<(), IoError> {
    write_csv(path, rows)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, IoError> {
    let required = ["sequence_id", "width", "height", "fps", "qp", "quality"];
    read_rows::<PredictionRow>(path, &required)?
        .into_iter()
        .map(|(row, r)| {
            check_label(&r.label()).map_err(|message| IoError::Row { path: path.into(), row, message })?;
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct RateRow {
    width: u32,
    height: u32,
    fps: f64,
    qp: i32,
    rate: f64,
}

pub fn read_rates(path: &Path) -> Result<RateTable, IoError> {
    let mut table = RateTable::new();
    for (row, r) in read_rows::<RateRow>(path, &["width", "height", "fps", "qp", "rate"])? {
        let err = |message: String| IoError::Row { path: path.into(), row, message };
        let label = StarLabel::new(r.width, r.height, r.fps, r.qp);
        check_label(&label).map_err(err)?;
        if !(r.rate >= 0.0 && r.rate.is_finite()) {
            return Err(err(format!("rate {} must be finite and non-negative", r.rate)));
        }
        table.insert(label, r.rate).map_err(|e| err(e.to_string()))?;
    }
    Ok(table)
}

pub fn write_rates(path: &Path, table: &RateTable) -> Result<(), IoError> {
    write_csv(
        path,
        table.labels().map(|l| RateRow {
            width: l.width,
            height: l.height,
            fps: l.fps,
            qp: l.qp,
            rate: table.rate(l.pixels() as f64, l.fps, l.stepsize()).expect("own label"),
        }),
    )
}
