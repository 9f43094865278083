//! Subjective rating processing: per-viewer standardization, observer
//! screening, cross-test mapping, rescaling and MOS aggregation.
//!
//! The stages run in this order:
//!
//! 1. [`zscore`] standardizes each viewer's raw ratings.
//! 2. [`screen_bt500`] rejects observers outside the majority in the z domain.
//! 3. [`screen_ratio_average`] checks ordering consistency on raw scores of
//!    adjacent grid cells, removing or averaging.
//! 4. [`map_dataset`] (optional) maps other tests onto a reference test.
//! 5. [`rescale`] maps each viewer's z range onto a common score range.
//! 6. [`aggregate_mos`] averages per processed sequence and attaches a CI.

mod aggregate;
mod mapping;
mod rescale;
mod screening;
mod zscore;

pub use aggregate::{aggregate_mos, CellKey, CiMethod, MosCell, MosTable};
pub use mapping::{apply_mapping, map_dataset, LinearMap, Mapping};
pub use rescale::{rescale, RescaleConfig, ScaledRecord};
pub use screening::{screen_bt500, screen_ratio_average, Bt500Config, Bt500Scope, RatioConfig};
pub use zscore::{restandardize, zscore, StdDenominator, ViewerStats, ZScores};

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, ModelError, References, StarPoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("score {score} from viewer {viewer} is outside the scale [{min}, {max}]")]
    ScoreOutOfRange {
        viewer: String,
        score: f64,
        min: f64,
        max: f64,
    },
    #[error("mapping {src} -> {tgt}: {reason}")]
    Mapping {
        src: String,
        tgt: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no ratings survived processing")]
    Empty,
}

/// Operating point as carried in rating files: frame size, frame rate and
/// integer QP.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StarLabel {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub qp: i32,
}

impl StarLabel {
    pub fn new(width: u32, height: u32, fps: f64, qp: i32) -> Self {
        StarLabel { width, height, fps, qp }
    }

    pub fn pixels(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub fn stepsize(&self) -> f64 {
        ((f64::from(self.qp) - 4.0) / 6.0).exp2()
    }

    pub fn to_point(&self, refs: References) -> Result<StarPoint, ModelError> {
        refs.point(self.pixels() as f64, self.fps, self.stepsize())
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0 && self.height > 0 && self.fps.is_finite() && self.fps > 0.0
    }
}

impl PartialEq for StarLabel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for StarLabel {}

impl PartialOrd for StarLabel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for StarLabel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.pixels()
            .cmp(&other.pixels())
            .then(self.width.cmp(&other.width))
            .then(self.fps.total_cmp(&other.fps))
            .then(self.qp.cmp(&other.qp))
    }
}

impl std::fmt::Display for StarLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}@{}Hz/QP{}", self.width, self.height, self.fps, self.qp)
    }
}

/// Reference point implied by a set of labels: largest frame, highest rate,
/// lowest QP.
pub fn references_of<'a>(labels: impl IntoIterator<Item = &'a StarLabel>) -> Option<References> {
    let mut it = labels.into_iter().peekable();
    it.peek()?;
    let (mut s, mut t, mut qp) = (0u64, 0f64, i32::MAX);
    for l in it {
        s = s.max(l.pixels());
        t = t.max(l.fps);
        qp = qp.min(l.qp);
    }
    Some(References {
        s_max: s as f64,
        t_max: t,
        q_min: model::qs_from_qp(f64::from(qp)).ok()?,
    })
}

/// One raw rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub viewer_id: String,
    pub test_id: String,
    pub sequence_id: String,
    pub star: StarLabel,
    pub raw_score: f64,
}

/// Standardization is per viewer within a test session.
pub type ViewerKey = (String, String);

impl RatingRecord {
    pub fn viewer_key(&self) -> ViewerKey {
        (self.test_id.clone(), self.viewer_id.clone())
    }
}

/// A rating with its z-score. The raw score travels along because the
/// ratio screen works in the raw domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreRecord {
    pub viewer_id: String,
    pub test_id: String,
    pub sequence_id: String,
    pub star: StarLabel,
    pub raw_score: f64,
    pub z: f64,
}

impl ZScoreRecord {
    pub fn viewer_key(&self) -> ViewerKey {
        (self.test_id.clone(), self.viewer_id.clone())
    }
}

/// One entry of the screening log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Action {
    /// Viewer dropped because a per-viewer statistic is degenerate.
    ViewerExcluded {
        test_id: String,
        viewer_id: String,
        stage: String,
        reason: String,
    },
    Bt500Rejected {
        test_id: String,
        viewer_id: String,
        /// `None` when screening ran over the whole test.
        sequence_id: Option<String>,
        p: usize,
        q: usize,
        n: usize,
    },
    RatioOutlierRemoved {
        test_id: String,
        viewer_id: String,
        sequence_id: String,
        outliers: usize,
        ratings_removed: usize,
    },
    RatioOutlierCounted {
        test_id: String,
        viewer_id: String,
        sequence_id: String,
        sweep: String,
        lower: StarLabel,
        higher: StarLabel,
        ratio: f64,
    },
    PairAveraged {
        test_id: String,
        viewer_id: String,
        sequence_id: String,
        sweep: String,
        lower: StarLabel,
        higher: StarLabel,
        before: [f64; 2],
        after: f64,
    },
    Mapped {
        src_test: String,
        tgt_test: String,
        sequence_id: Option<String>,
        gain: f64,
        offset: f64,
        points: usize,
    },
    Warning {
        stage: String,
        message: String,
    },
}

/// Everything the pipeline did, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub actions: Vec<Action>,
}

impl ScreeningReport {
    pub fn extend(&mut self, actions: impl IntoIterator<Item = Action>) {
        self.actions.extend(actions);
    }

    /// Actions other than warnings and mapping records.
    pub fn removals_and_adjustments(&self) -> impl Iterator<Item = &Action> {
        self.actions
            .iter()
            .filter(|a| !matches!(a, Action::Warning { .. } | Action::Mapped { .. }))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    /// Test the others are mapped onto. No mapping when unset.
    pub reference_test: Option<String>,
    /// Tests that get one map per source sequence instead of a single map.
    pub per_sequence_tests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub score_min: f64,
    pub score_max: f64,
    pub std_denominator: StdDenominator,
    pub ci_method: CiMethod,
    pub bt500: Bt500Config,
    pub ratio: RatioConfig,
    pub mapping: MappingConfig,
    /// Overrides the medians of per-viewer extremes when set.
    pub rescale: Option<RescaleConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            score_min: 1.0,
            score_max: 10.0,
            std_denominator: StdDenominator::Sample,
            ci_method: CiMethod::StudentT,
            bt500: Bt500Config::default(),
            ratio: RatioConfig::default(),
            mapping: MappingConfig::default(),
            rescale: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.score_min < self.score_max) {
            return Err(PipelineError::Config("score_min must be below score_max".into()));
        }
        if !(self.ratio.threshold >= 1.0) {
            return Err(PipelineError::Config("ratio.threshold must be >= 1".into()));
        }
        if let Some(r) = &self.rescale {
            r.validate()?;
        }
        Ok(())
    }
}

/// Full processing chain from raw ratings to a MOS table.
pub fn run_pipeline(
    records: &[RatingRecord],
    cfg: &PipelineConfig,
) -> Result<(MosTable, ScreeningReport), PipelineError> {
    cfg.validate()?;
    for r in records {
        if !(r.raw_score >= cfg.score_min && r.raw_score <= cfg.score_max) {
            return Err(PipelineError::ScoreOutOfRange {
                viewer: r.viewer_id.clone(),
                score: r.raw_score,
                min: cfg.score_min,
                max: cfg.score_max,
            });
        }
    }
    let mut report = ScreeningReport::default();
    let rescale_cfg = match &cfg.rescale {
        Some(r) => r.clone(),
        None => RescaleConfig::from_raw(records)?,
    };

    let z = zscore(records, cfg.std_denominator);
    report.extend(z.actions.iter().cloned());

    let (survivors, actions) = screen_bt500(z.records, &cfg.bt500);
    report.extend(actions);

    let (survivors, actions) = screen_ratio_average(survivors, &cfg.ratio);
    report.extend(actions);
    let mut survivors = restandardize(survivors, &z.stats);

    if let Some(reference) = &cfg.mapping.reference_test {
        let tests: BTreeSet<String> = survivors.iter().map(|r| r.test_id.clone()).collect();
        let tgt: Vec<ZScoreRecord> = survivors
            .iter()
            .filter(|r| &r.test_id == reference)
            .cloned()
            .collect();
        for src_test in tests.iter().filter(|t| *t != reference) {
            let src: Vec<ZScoreRecord> = survivors
                .iter()
                .filter(|r| &r.test_id == src_test)
                .cloned()
                .collect();
            let per_seq = cfg.mapping.per_sequence_tests.contains(src_test);
            let mapping = map_dataset(&src, &tgt, per_seq)?;
            report.extend(mapping.actions(src_test, reference));
            survivors = apply_mapping(survivors, src_test, &mapping);
        }
    } else {
        let tests: BTreeSet<&str> = survivors.iter().map(|r| r.test_id.as_str()).collect();
        if tests.len() > 1 {
            report.actions.push(Action::Warning {
                stage: "mapping".into(),
                message: format!(
                    "{} test sessions combined without a reference_test mapping",
                    tests.len()
                ),
            });
        }
    }

    let (scaled, actions) = rescale(&survivors, &rescale_cfg);
    report.extend(actions);
    if scaled.is_empty() {
        return Err(PipelineError::Empty);
    }
    Ok((aggregate_mos(&scaled, cfg.ci_method), report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_ordering_and_references() {
        let a = StarLabel::new(176, 144, 30.0, 28);
        let b = StarLabel::new(704, 576, 7.5, 44);
        let c = StarLabel::new(352, 288, 15.0, 36);
        assert!(a < c && c < b);
        assert_eq!(a, StarLabel::new(176, 144, 30.0, 28));
        let refs = references_of([&a, &b, &c]).unwrap();
        assert_eq!(refs.s_max, 704.0 * 576.0);
        assert_eq!(refs.t_max, 30.0);
        assert_eq!(refs.q_min, 16.0);
        assert!(references_of(std::iter::empty()).is_none());
        assert_eq!(StarLabel::new(1, 1, 1.0, 28).stepsize(), 16.0);
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            std_denominator = "population"
            ci_method = "normal"
            [bt500]
            scope = "global"
            [ratio]
            threshold = 1.2
            outlier_cap = 3
            [mapping]
            reference_test = "2"
            per_sequence_tests = ["3"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.std_denominator, StdDenominator::Population);
        assert_eq!(cfg.ci_method, CiMethod::Normal);
        assert_eq!(cfg.bt500.scope, Bt500Scope::Global);
        assert_eq!(cfg.ratio.threshold, 1.2);
        assert_eq!(cfg.ratio.outlier_cap, 3);
        assert_eq!(cfg.mapping.reference_test.as_deref(), Some("2"));
        assert!(toml::from_str::<PipelineConfig>("bogus = 1").is_err());
    }

    #[test]
    fn rejects_out_of_scale_scores() {
        let r = RatingRecord {
            viewer_id: "v".into(),
            test_id: "t".into(),
            sequence_id: "s".into(),
            star: StarLabel::new(176, 144, 30.0, 28),
            raw_score: 11.0,
        };
        assert!(matches!(
            run_pipeline(&[r], &PipelineConfig::default()),
            Err(PipelineError::ScoreOutOfRange { .. })
        ));
    }
}
