use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ScaledRecord, StarLabel};
use crate::stats::t_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// `t(0.975, n−1)·sd/√n`
    StudentT,
    /// `1.96·sd/√n`
    Normal,
}

const Z_975: f64 = 1.959_963_984_540_054;

impl CiMethod {
    /// 95% half-width; `None` for fewer than two scores.
    pub fn halfwidth(self, scores: &[f64]) -> Option<f64> {
        let n = scores.len();
        if n < 2 {
            return None;
        }
        let nf = n as f64;
        let m = scores.iter().sum::<f64>() / nf;
        let sd = (scores.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        let k = match self {
            CiMethod::StudentT => t_quantile(0.975, nf - 1.0).ok()?,
            CiMethod::Normal => Z_975,
        };
        Some(k * sd / nf.sqrt())
    }
}

pub type CellKey = (String, StarLabel);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosCell {
    pub sequence_id: String,
    pub star: StarLabel,
    pub mos: f64,
    pub n: usize,
    pub ci_halfwidth: Option<f64>,
    /// Individual scaled scores, kept as ANOVA replicates.
    pub scores: Vec<f64>,
}

impl MosCell {
    pub fn from_scores(sequence_id: &str, star: StarLabel, scores: Vec<f64>, ci: CiMethod) -> MosCell {
        let n = scores.len();
        MosCell {
            sequence_id: sequence_id.to_string(),
            star,
            mos: scores.iter().sum::<f64>() / n as f64,
            n,
            ci_halfwidth: ci.halfwidth(&scores),
            scores,
        }
    }

    pub fn key(&self) -> CellKey {
        (self.sequence_id.clone(), self.star)
    }
}

/// MOS per (sequence, operating point), iterated in key order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MosTable {
    cells: BTreeMap<CellKey, MosCell>,
}

impl MosTable {
    pub fn new() -> MosTable {
        MosTable::default()
    }

    /// Adds a cell; returns the previous cell under the same key, if any.
    pub fn insert(&mut self, cell: MosCell) -> Option<MosCell> {
        self.cells.insert(cell.key(), cell)
    }

    pub fn get(&self, sequence_id: &str, star: &StarLabel) -> Option<&MosCell> {
        self.cells.get(&(sequence_id.to_string(), *star))
    }

    pub fn cells(&self) -> impl Iterator<Item = &MosCell> {
        self.cells.values()
    }

    pub fn sequence(&self, sequence_id: &str) -> impl Iterator<Item = &MosCell> {
        let id = sequence_id.to_string();
        self.cells.values().filter(move |c| c.sequence_id == id)
    }

    pub fn sequences(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.cells.keys().map(|k| k.0.clone()).collect();
        ids.dedup();
        ids
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Mean CI half-width over cells that have one.
    pub fn average_ci(&self) -> Option<f64> {
        let cis: Vec<f64> = self.cells.values().filter_map(|c| c.ci_halfwidth).collect();
        (!cis.is_empty()).then(|| cis.iter().sum::<f64>() / cis.len() as f64)
    }
}

impl FromIterator<MosCell> for MosTable {
    fn from_iter<I: IntoIterator<Item = MosCell>>(iter: I) -> Self {
        let mut t = MosTable::new();
        for c in iter {
            t.insert(c);
        }
        t
    }
}

/// Average scaled scores per processed sequence.
pub fn aggregate_mos(records: &[ScaledRecord], ci: CiMethod) -> MosTable {
    let mut grouped: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.sequence_id.clone(), r.star)).or_default().push(r.score);
    }
    grouped
        .into_iter()
        .map(|((seq, star), scores)| MosCell::from_scores(&seq, star, scores, ci))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sr(viewer: &str, qp: i32, score: f64) -> ScaledRecord {
        ScaledRecord {
            viewer_id: viewer.into(),
            test_id: "t".into(),
            sequence_id: "s".into(),
            star: StarLabel::new(352, 288, 30.0, qp),
            score,
        }
    }

    #[test]
    fn mean_and_singleton() {
        let t = aggregate_mos(&[sr("a", 28, 4.0), sr("b", 28, 6.0), sr("a", 36, 3.5)], CiMethod::StudentT);
        assert_eq!(t.len(), 2);
        let c = t.get("s", &StarLabel::new(352, 288, 30.0, 28)).unwrap();
        assert_eq!((c.mos, c.n), (5.0, 2));
        assert_eq!(c.scores, vec![4.0, 6.0]);
        let c = t.get("s", &StarLabel::new(352, 288, 30.0, 36)).unwrap();
        assert_eq!((c.mos, c.n, c.ci_halfwidth), (3.5, 1, None));
    }

    #[test]
    fn student_t_interval() {
        // 20 draws from N(5, 0.5²); reference t(0.975, 19) = 2.093024054408263
        let scores = [
            4.599, 4.338, 4.876, 5.21, 5.568, 5.055, 4.724, 4.608, 5.374, 5.817, 5.136, 4.383, 4.521,
            5.8, 5.101, 4.134, 4.958, 4.418, 4.685, 4.756,
        ];
        let cell = MosCell::from_scores("s", StarLabel::new(1, 1, 1.0, 28), scores.to_vec(), CiMethod::StudentT);
        assert!((cell.mos - 4.90305).abs() < 1e-12);
        assert!((cell.ci_halfwidth.unwrap() - 0.224_231_397_660_876_8).abs() < 1e-6);
        let normal = CiMethod::Normal.halfwidth(&scores).unwrap();
        assert!((normal / cell.ci_halfwidth.unwrap() - Z_975 / 2.093_024_054_408_263).abs() < 1e-9);
    }
}
