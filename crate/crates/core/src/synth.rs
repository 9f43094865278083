//! Seeded synthetic rating campaigns generated from known model parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::model::{self, ModelError, References, SequenceParams, ShapeConstants};
use crate::pipeline::{MosCell, MosTable, RatingRecord, StarLabel};

/// The 3 frame sizes x 3 frame rates x 3 QPs used throughout the tests.
pub fn paper_grid() -> Vec<StarLabel> {
    let mut out = Vec::with_capacity(27);
    for (w, h) in [(176, 144), (352, 288), (704, 576)] {
        for fps in [7.5, 15.0, 30.0] {
            for qp in [28, 36, 44] {
                out.push(StarLabel::new(w, h, fps, qp));
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub sequences: Vec<(String, SequenceParams)>,
    pub grid: Vec<StarLabel>,
    pub references: References,
    pub constants: ShapeConstants,
    pub viewers: usize,
    /// Per-rating Gaussian noise, in score units.
    pub sigma: f64,
    pub score_min: f64,
    pub score_max: f64,
    pub test_id: String,
    pub seed: u64,
}

impl Campaign {
    pub fn new(sequences: Vec<(String, SequenceParams)>, viewers: usize, sigma: f64, seed: u64) -> Campaign {
        Campaign {
            sequences,
            grid: paper_grid(),
            references: References::default(),
            constants: ShapeConstants::default(),
            viewers,
            sigma,
            score_min: 1.0,
            score_max: 10.0,
            test_id: "1".into(),
            seed,
        }
    }

    /// Model quality of every (sequence, grid point).
    pub fn truth(&self) -> Result<Vec<(String, StarLabel, f64)>, ModelError> {
        let mut out = Vec::new();
        for (name, p) in &self.sequences {
            for l in &self.grid {
                let q = model::qstar(&l.to_point(self.references)?, p, &self.constants)?;
                out.push((name.clone(), *l, q));
            }
        }
        Ok(out)
    }

    /// Each rating is `score_max * quality` plus noise, clamped to the scale.
    pub fn ratings(&self) -> Result<Vec<RatingRecord>, ModelError> {
        let truth = self.truth()?;
        let noise = Normal::new(0.0, self.sigma).map_err(|_| ModelError::Domain {
            name: "sigma",
            value: self.sigma,
            rule: "finite and >= 0",
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let width = self.viewers.to_string().len().max(3);
        let mut out = Vec::with_capacity(self.viewers * truth.len());
        for v in 0..self.viewers {
            let viewer_id = format!("v{v:0width$}");
            for (seq, l, q) in &truth {
                let raw = (self.score_max * q + noise.sample(&mut rng)).clamp(self.score_min, self.score_max);
                out.push(RatingRecord {
                    viewer_id: viewer_id.clone(),
                    test_id: self.test_id.clone(),
                    sequence_id: seq.clone(),
                    star: *l,
                    raw_score: raw,
                });
            }
        }
        Ok(out)
    }

    /// Noiseless MOS table (`quality * scale`), one synthetic score per cell.
    pub fn noiseless_mos(&self, scale: f64) -> Result<MosTable, ModelError> {
        Ok(self
            .truth()?
            .into_iter()
            .map(|(seq, l, q)| MosCell {
                sequence_id: seq,
                star: l,
                mos: q * scale,
                n: 1,
                ci_halfwidth: None,
                scores: vec![q * scale],
            })
            .collect())
    }
}
