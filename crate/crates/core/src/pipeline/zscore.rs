use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Action, RatingRecord, ViewerKey, ZScoreRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdDenominator {
    /// `n − 1`
    Sample,
    /// `n`
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewerStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ZScores {
    pub records: Vec<ZScoreRecord>,
    pub stats: BTreeMap<ViewerKey, ViewerStats>,
    pub actions: Vec<Action>,
}

/// Standardize each viewer's ratings by that viewer's own mean and standard
/// deviation. Viewers with fewer than two ratings or no spread are dropped.
pub fn zscore(records: &[RatingRecord], denom: StdDenominator) -> ZScores {
    let mut by_viewer: BTreeMap<ViewerKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_viewer.entry(r.viewer_key()).or_default().push(r.raw_score);
    }

    let mut out = ZScores::default();
    for (key, scores) in &by_viewer {
        let n = scores.len();
        let reject = |reason: String| Action::ViewerExcluded {
            test_id: key.0.clone(),
            viewer_id: key.1.clone(),
            stage: "zscore".into(),
            reason,
        };
        if n < 2 {
            out.actions.push(reject(format!("only {n} rating")));
            continue;
        }
        let mean = scores.iter().sum::<f64>() / n as f64;
        let ss: f64 = scores.iter().map(|x| (x - mean).powi(2)).sum();
        let dof = match denom {
            StdDenominator::Sample => n - 1,
            StdDenominator::Population => n,
        };
        let std = (ss / dof as f64).sqrt();
        if !(std > 0.0) {
            out.actions.push(reject("all ratings equal (zero spread)".into()));
            continue;
        }
        out.stats.insert(key.clone(), ViewerStats { mean, std, count: n });
    }

    for r in records {
        if let Some(st) = out.stats.get(&r.viewer_key()) {
            out.records.push(ZScoreRecord {
                viewer_id: r.viewer_id.clone(),
                test_id: r.test_id.clone(),
                sequence_id: r.sequence_id.clone(),
                star: r.star,
                raw_score: r.raw_score,
                z: (r.raw_score - st.mean) / st.std,
            });
        }
    }
    out
}

/// Recompute z from (possibly adjusted) raw scores using each viewer's
/// original statistics.
pub fn restandardize(
    records: Vec<ZScoreRecord>,
    stats: &BTreeMap<ViewerKey, ViewerStats>,
) -> Vec<ZScoreRecord> {
    records
        .into_iter()
        .filter_map(|mut r| {
            let st = stats.get(&r.viewer_key())?;
            r.z = (r.raw_score - st.mean) / st.std;
            Some(r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::StarLabel;

    fn rec(viewer: &str, qp: i32, score: f64) -> RatingRecord {
        RatingRecord {
            viewer_id: viewer.into(),
            test_id: "t".into(),
            sequence_id: "s".into(),
            star: StarLabel::new(352, 288, 30.0, qp),
            raw_score: score,
        }
    }

    #[test]
    fn standard_scores() {
        let rs = [rec("a", 28, 2.0), rec("a", 36, 4.0), rec("a", 44, 6.0)];
        let z = zscore(&rs, StdDenominator::Sample);
        let zs: Vec<f64> = z.records.iter().map(|r| r.z).collect();
        assert_eq!(zs, vec![-1.0, 0.0, 1.0]);
        assert!(z.actions.is_empty());
    }

    #[test]
    fn population_denominator() {
        let rs = [rec("a", 28, 2.0), rec("a", 36, 4.0), rec("a", 44, 6.0)];
        let z = zscore(&rs, StdDenominator::Population);
        let expected = 2.0 / (8.0f64 / 3.0).sqrt();
        assert!((z.records[2].z - expected).abs() < 1e-15);
    }

    #[test]
    fn flat_viewer_is_excluded() {
        let rs = [
            rec("a", 28, 2.0),
            rec("a", 36, 4.0),
            rec("b", 28, 5.0),
            rec("b", 36, 5.0),
            rec("c", 28, 5.0),
        ];
        let z = zscore(&rs, StdDenominator::Sample);
        assert_eq!(z.records.len(), 2);
        assert_eq!(z.actions.len(), 2);
        assert!(z.records.iter().all(|r| r.viewer_id == "a"));
    }

    #[test]
    fn per_viewer_standardization_holds() {
        let scores = [3.0, 7.5, 1.0, 9.0, 4.4, 6.1];
        let rs: Vec<_> = scores.iter().enumerate().map(|(i, s)| rec("a", 20 + i as i32, *s)).collect();
        let z = zscore(&rs, StdDenominator::Sample);
        let zs: Vec<f64> = z.records.iter().map(|r| r.z).collect();
        let m = zs.iter().sum::<f64>() / zs.len() as f64;
        let v = zs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (zs.len() - 1) as f64;
        assert!(m.abs() < 1e-9);
        assert!((v.sqrt() - 1.0).abs() < 1e-9);
    }
}
