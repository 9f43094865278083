use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Action, PipelineError, RatingRecord, StarLabel, ViewerKey, ZScoreRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescaleConfig {
    pub target_min: f64,
    pub target_max: f64,
}

impl RescaleConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.target_min.is_finite() && self.target_max.is_finite() && self.target_max > self.target_min {
            Ok(())
        } else {
            Err(PipelineError::Config(format!(
                "rescale target [{}, {}] is not an increasing finite range",
                self.target_min, self.target_max
            )))
        }
    }

    /// Medians of the per-viewer minimum and maximum raw ratings.
    pub fn from_raw(records: &[RatingRecord]) -> Result<RescaleConfig, PipelineError> {
        let mut extremes: BTreeMap<ViewerKey, (f64, f64)> = BTreeMap::new();
        for r in records {
            let e = extremes
                .entry(r.viewer_key())
                .or_insert((f64::INFINITY, f64::NEG_INFINITY));
            e.0 = e.0.min(r.raw_score);
            e.1 = e.1.max(r.raw_score);
        }
        if extremes.is_empty() {
            return Err(PipelineError::Empty);
        }
        let mut mins: Vec<f64> = extremes.values().map(|e| e.0).collect();
        let mut maxs: Vec<f64> = extremes.values().map(|e| e.1).collect();
        let cfg = RescaleConfig { target_min: median(&mut mins), target_max: median(&mut maxs) };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledRecord {
    pub viewer_id: String,
    pub test_id: String,
    pub sequence_id: String,
    pub star: StarLabel,
    pub score: f64,
}

/// Map each viewer's z range linearly onto `[target_min, target_max]`.
/// The viewer's extreme ratings land exactly on the endpoints.
pub fn rescale(records: &[ZScoreRecord], cfg: &RescaleConfig) -> (Vec<ScaledRecord>, Vec<Action>) {
    let mut range: BTreeMap<ViewerKey, (f64, f64)> = BTreeMap::new();
    for r in records {
        let e = range.entry(r.viewer_key()).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.min(r.z);
        e.1 = e.1.max(r.z);
    }
    let mut actions = Vec::new();
    range.retain(|key, (lo, hi)| {
        let ok = hi > lo;
        if !ok {
            actions.push(Action::ViewerExcluded {
                test_id: key.0.clone(),
                viewer_id: key.1.clone(),
                stage: "rescale".into(),
                reason: "z-scores have no spread".into(),
            });
        }
        ok
    });

    let span = cfg.target_max - cfg.target_min;
    let out = records
        .iter()
        .filter_map(|r| {
            let (lo, hi) = *range.get(&r.viewer_key())?;
            let score = if r.z == hi {
                cfg.target_max
            } else {
                span * ((r.z - lo) / (hi - lo)) + cfg.target_min
            };
            Some(ScaledRecord {
                viewer_id: r.viewer_id.clone(),
                test_id: r.test_id.clone(),
                sequence_id: r.sequence_id.clone(),
                star: r.star,
                score,
            })
        })
        .collect();
    (out, actions)
}
