//! Cross-test linear mapping of z-scores.
//!
//! Mean z-scores of processed sequences shared by two tests are regressed
//! (ordinary least squares) target-on-source; the fitted line is then applied
//! to every z-score of the source test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Action, PipelineError, StarLabel, ZScoreRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    pub gain: f64,
    pub offset: f64,
    /// Number of common points the map was fitted on.
    pub points: usize,
}

impl LinearMap {
    pub const IDENTITY: LinearMap = LinearMap { gain: 1.0, offset: 0.0, points: 0 };

    /// OLS of `y` on `x`. Fails on fewer than two points, no spread in `x`,
    /// or a non-positive slope.
    pub fn fit(pairs: &[(f64, f64)]) -> Result<LinearMap, String> {
        let n = pairs.len();
        if n < 2 {
            return Err(format!("{n} common point(s), need at least 2"));
        }
        let nf = n as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for (x, y) in pairs {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
        }
        if !(sxx > 0.0) {
            return Err("source scores have no spread".into());
        }
        let gain = sxy / sxx;
        if !(gain > 0.0) {
            return Err(format!("fitted gain {gain} is not positive"));
        }
        Ok(LinearMap { gain, offset: my - gain * mx, points: n })
    }

    pub fn apply(&self, z: f64) -> f64 {
        self.gain * z + self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mapping {
    Global(LinearMap),
    PerSequence(BTreeMap<String, LinearMap>),
}

impl Mapping {
    pub fn for_sequence(&self, sequence_id: &str) -> Option<&LinearMap> {
        match self {
            Mapping::Global(m) => Some(m),
            Mapping::PerSequence(maps) => maps.get(sequence_id),
        }
    }

    pub fn actions(&self, src_test: &str, tgt_test: &str) -> Vec<Action> {
        let mk = |seq: Option<&String>, m: &LinearMap| Action::Mapped {
            src_test: src_test.to_string(),
            tgt_test: tgt_test.to_string(),
            sequence_id: seq.cloned(),
            gain: m.gain,
            offset: m.offset,
            points: m.points,
        };
        match self {
            Mapping::Global(m) => vec![mk(None, m)],
            Mapping::PerSequence(maps) => maps.iter().map(|(s, m)| mk(Some(s), m)).collect(),
        }
    }
}

fn mean_z(records: &[ZScoreRecord]) -> BTreeMap<(&str, StarLabel), f64> {
    let mut acc: BTreeMap<(&str, StarLabel), (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry((r.sequence_id.as_str(), r.star)).or_default();
        e.0 += r.z;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Fit the map(s) taking `src` scores onto the scale of `tgt`, using the
/// processed sequences rated in both.
pub fn map_dataset(
    src: &[ZScoreRecord],
    tgt: &[ZScoreRecord],
    per_sequence: bool,
) -> Result<Mapping, PipelineError> {
    let name = |rs: &[ZScoreRecord]| rs.first().map(|r| r.test_id.clone()).unwrap_or_default();
    let err = |reason: String| PipelineError::Mapping { src: name(src), tgt: name(tgt), reason };
    let src_means = mean_z(src);
    let tgt_means = mean_z(tgt);
    let mut common: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (key, x) in &src_means {
        common.entry(key.0).or_default();
        if let Some(y) = tgt_means.get(key) {
            common.get_mut(key.0).expect("inserted").push((*x, *y));
        }
    }

    if per_sequence {
        let mut maps = BTreeMap::new();
        for (seq, pairs) in common {
            let m = LinearMap::fit(&pairs).map_err(|e| err(format!("sequence {seq}: {e}")))?;
            maps.insert(seq.to_string(), m);
        }
        Ok(Mapping::PerSequence(maps))
    } else {
        let pairs: Vec<(f64, f64)> = common.into_values().flatten().collect();
        LinearMap::fit(&pairs).map(Mapping::Global).map_err(err)
    }
}

/// Replace the z-scores of `src_test` records by their mapped values.
pub fn apply_mapping(
    records: Vec<ZScoreRecord>,
    src_test: &str,
    mapping: &Mapping,
) -> Vec<ZScoreRecord> {
    records
        .into_iter()
        .map(|mut r| {
            if r.test_id == src_test {
                if let Some(m) = mapping.for_sequence(&r.sequence_id) {
                    r.z = m.apply(r.z);
                }
            }
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zr(test: &str, seq: &str, qp: i32, z: f64) -> ZScoreRecord {
        ZScoreRecord {
            viewer_id: "v".into(),
            test_id: test.into(),
            sequence_id: seq.into(),
            star: StarLabel::new(352, 288, 30.0, qp),
            raw_score: 5.0,
            z,
        }
    }

    #[test]
    fn identical_scores_give_identity() {
        let pairs: Vec<(f64, f64)> = [-1.2, 0.3, 0.8, 1.9].iter().map(|x| (*x, *x)).collect();
        let m = LinearMap::fit(&pairs).unwrap();
        assert!((m.gain - 1.0).abs() < 1e-12);
        assert!(m.offset.abs() < 1e-12);
    }

    #[test]
    fn exact_linear_relation() {
        let pairs: Vec<(f64, f64)> = [-1.0, -0.2, 0.4, 1.1, 2.0].iter().map(|x| (*x, 2.0 * x - 0.5)).collect();
        let m = LinearMap::fit(&pairs).unwrap();
        assert!((m.gain - 2.0).abs() < 1e-9);
        assert!((m.offset + 0.5).abs() < 1e-9);
    }

    #[test]
    fn matches_normal_equations() {
        let xs = [-1.3, -0.7, -0.1, 0.2, 0.6, 0.9, 1.4, 2.2];
        let noise = [0.05, -0.11, 0.02, 0.08, -0.04, 0.13, -0.09, 0.01];
        let pairs: Vec<(f64, f64)> = xs.iter().zip(&noise).map(|(x, e)| (*x, 0.8 * x + 0.3 + e)).collect();
        // [n Σx; Σx Σx²] [b; a] = [Σy; Σxy], solved by Cramer's rule
        let n = pairs.len() as f64;
        let sx: f64 = pairs.iter().map(|p| p.0).sum();
        let sy: f64 = pairs.iter().map(|p| p.1).sum();
        let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        let gain = (n * sxy - sx * sy) / det;
        let offset = (sxx * sy - sx * sxy) / det;
        let m = LinearMap::fit(&pairs).unwrap();
        assert!((m.gain - gain).abs() < 1e-9);
        assert!((m.offset - offset).abs() < 1e-9);
    }

    #[test]
    fn rejects_degenerate_fits() {
        assert!(LinearMap::fit(&[(0.0, 1.0)]).is_err());
        assert!(LinearMap::fit(&[(1.0, 0.0), (1.0, 2.0)]).is_err());
        assert!(LinearMap::fit(&[(0.0, 1.0), (1.0, 0.0)]).is_err());
    }

    #[test]
    fn global_and_per_sequence_maps() {
        let src = vec![
            zr("1", "a", 28, 1.0),
            zr("1", "a", 36, 0.0),
            zr("1", "b", 28, 1.0),
            zr("1", "b", 36, -1.0),
            zr("1", "c", 44, 0.5),
        ];
        let tgt = vec![
            zr("2", "a", 28, 3.0),
            zr("2", "a", 36, 1.0),
            zr("2", "b", 28, 0.5),
            zr("2", "b", 36, -0.5),
        ];
        let Mapping::PerSequence(maps) = map_dataset(&src[..4], &tgt, true).unwrap() else {
            panic!("expected per-sequence maps")
        };
        assert!((maps["a"].gain - 2.0).abs() < 1e-12 && (maps["a"].offset - 1.0).abs() < 1e-12);
        assert!((maps["b"].gain - 0.5).abs() < 1e-12 && maps["b"].offset.abs() < 1e-12);
        // sequence c has no common cells
        assert!(map_dataset(&src, &tgt, true).is_err());
        let global = map_dataset(&src, &tgt, false).unwrap();
        let mapped = apply_mapping(src.clone(), "1", &global);
        let Mapping::Global(m) = global else { panic!() };
        assert_eq!(m.points, 4);
        assert_eq!(mapped[4].z, m.apply(0.5));
        // other tests are untouched
        assert_eq!(apply_mapping(tgt.clone(), "1", &Mapping::Global(m)), tgt);
    }
}
