//! Rate-constrained choice of operating point: the best-quality grid point
//! whose rate fits the budget.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, Factors, ModelError, References, SequenceParams, ShapeConstants, StarPoint};
use crate::pipeline::StarLabel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdaptError {
    #[error("no grid point fits budget {budget}; the lowest rate is {min_rate}")]
    Infeasible { budget: f64, min_rate: f64 },
    #[error("no rate for s={s}, t={t}, q={q}")]
    MissingRate { s: f64, t: f64, q: f64 },
    #[error("rate {rate} at s={s}, t={t}, q={q} is not a finite non-negative number")]
    InvalidRate { s: f64, t: f64, q: f64, rate: f64 },
    #[error("budget must be positive, got {0}")]
    InvalidBudget(f64),
    #[error("invalid candidate grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    pub s_levels: Vec<f64>,
    pub t_levels: Vec<f64>,
    pub q_levels: Vec<f64>,
    pub references: References,
}

impl CandidateGrid {
    pub fn new(
        s_levels: Vec<f64>,
        t_levels: Vec<f64>,
        q_levels: Vec<f64>,
        references: References,
    ) -> Result<CandidateGrid, AdaptError> {
        let g = CandidateGrid { s_levels, t_levels, q_levels, references };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), AdaptError> {
        self.references.validate()?;
        let r = &self.references;
        let axes: [(&str, &[f64], &dyn Fn(f64) -> bool); 3] = [
            ("s", &self.s_levels, &|v| v > 0.0 && v <= r.s_max),
            ("t", &self.t_levels, &|v| v > 0.0 && v <= r.t_max),
            ("q", &self.q_levels, &|v| v >= r.q_min && v.is_finite()),
        ];
        for (name, levels, ok) in axes {
            if levels.is_empty() {
                return Err(AdaptError::Grid(format!("no {name} levels")));
            }
            if levels.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(AdaptError::Grid(format!("{name} levels must be strictly ascending")));
            }
            if let Some(v) = levels.iter().find(|v| !ok(**v)) {
                return Err(AdaptError::Grid(format!("{name} level {v} is outside the reference range")));
            }
        }
        Ok(())
    }

    /// Grid spanned by the distinct levels of `labels`, normalized by
    /// `refs` or, when absent, by the labels' own extremes.
    pub fn from_labels<'a>(
        labels: impl IntoIterator<Item = &'a StarLabel> + Clone,
        refs: Option<References>,
    ) -> Result<CandidateGrid, AdaptError> {
        let own = crate::pipeline::references_of(labels.clone()).ok_or_else(|| AdaptError::Grid("no labels".into()))?;
        let refs = refs.unwrap_or(own);
        let mut s: Vec<f64> = labels.clone().into_iter().map(|l| l.pixels() as f64).collect();
        let mut t: Vec<f64> = labels.clone().into_iter().map(|l| l.fps).collect();
        let mut q: Vec<f64> = labels.into_iter().map(|l| l.stepsize()).collect();
        for v in [&mut s, &mut t, &mut q] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        CandidateGrid::new(s, t, q, refs)
    }

    pub fn points(&self) -> impl Iterator<Item = StarPoint> + '_ {
        let r = self.references;
        self.s_levels.iter().flat_map(move |&s| {
            self.t_levels.iter().flat_map(move |&t| {
                self.q_levels.iter().map(move |&q| StarPoint { s, t, q, s_max: r.s_max, t_max: r.t_max, q_min: r.q_min })
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub point: StarPoint,
    pub quality: f64,
    pub rate: f64,
    pub factors: Factors,
}

/// Ordering of candidates: better first. Higher quality, then lower rate,
/// larger `s`, larger `t`, smaller `q`.
fn preference(a: &Selection, b: &Selection) -> Ordering {
    b.quality
        .total_cmp(&a.quality)
        .then(a.rate.total_cmp(&b.rate))
        .then(b.point.s.total_cmp(&a.point.s))
        .then(b.point.t.total_cmp(&a.point.t))
        .then(a.point.q.total_cmp(&b.point.q))
}

/// Exhaustive search for the highest-quality point with `rate_of(s, t, q) ≤ budget`.
pub fn select_star<R>(
    grid: &CandidateGrid,
    params: &SequenceParams,
    consts: &ShapeConstants,
    rate_of: R,
    budget: f64,
) -> Result<Selection, AdaptError>
where
    R: Fn(f64, f64, f64) -> Option<f64>,
{
    if !(budget > 0.0) {
        return Err(AdaptError::InvalidBudget(budget));
    }
    grid.validate()?;
    let mut best: Option<Selection> = None;
    let mut min_rate = f64::INFINITY;
    for point in grid.points() {
        let (s, t, q) = (point.s, point.t, point.q);
        let rate = rate_of(s, t, q).ok_or(AdaptError::MissingRate { s, t, q })?;
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(AdaptError::InvalidRate { s, t, q, rate });
        }
        min_rate = min_rate.min(rate);
        if rate > budget {
            continue;
        }
        let factors = model::qstar_factors(&point, params, consts)?;
        let cand = Selection { point, quality: factors.quality, rate, factors };
        if best.as_ref().is_none_or(|b| preference(&cand, b) == Ordering::Less) {
            best = Some(cand);
        }
    }
    best.ok_or(AdaptError::Infeasible { budget, min_rate })
}

/// Rates keyed by operating point, as read from a rate table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    rates: BTreeMap<StarLabel, f64>,
}

impl RateTable {
    pub fn new() -> RateTable {
        RateTable::default()
    }

    /// Adds an entry; fails on a second entry with the same pixel count,
    /// frame rate and QP.
    pub fn insert(&mut self, label: StarLabel, rate: f64) -> Result<(), AdaptError> {
        if let Some(other) = self.find(label.pixels() as f64, label.fps, f64::from(label.qp)) {
            return Err(AdaptError::Grid(format!("duplicate rate entries {other} and {label}")));
        }
        self.rates.insert(label, rate);
        Ok(())
    }

    fn find(&self, s: f64, t: f64, qp: f64) -> Option<StarLabel> {
        self.rates
            .keys()
            .find(|l| l.pixels() as f64 == s && l.fps == t && (f64::from(l.qp) - qp).abs() < 1e-6)
            .copied()
    }

    pub fn labels(&self) -> impl Iterator<Item = &StarLabel> + Clone {
        self.rates.keys()
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Rate at a stepsize-valued point; the stepsize is matched through its QP.
    pub fn rate(&self, s: f64, t: f64, q: f64) -> Option<f64> {
        let qp = model::qp_from_qs(q).ok()?;
        self.find(s, t, qp).map(|l| self.rates[&l])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::REFERENCE_SEQUENCES;

    fn paper_grid() -> CandidateGrid {
        let q: Vec<f64> = [28.0, 36.0, 44.0].iter().map(|&qp| model::qs_from_qp(qp).unwrap()).collect();
        CandidateGrid::new(
            vec![176.0 * 144.0, 352.0 * 288.0, 704.0 * 576.0],
            vec![7.5, 15.0, 30.0],
            q,
            References::default(),
        )
        .unwrap()
    }

    fn monotone_rate(s: f64, t: f64, q: f64) -> Option<f64> {
        Some(s * t / q / 1000.0)
    }

    #[test]
    fn generous_budget_picks_maximal_point() {
        let g = paper_grid();
        let city = REFERENCE_SEQUENCES[0].1;
        let c = ShapeConstants::default();
        let sel = select_star(&g, &city, &c, monotone_rate, f64::INFINITY).unwrap();
        assert_eq!(sel.quality, 1.0);
        assert_eq!((sel.point.s, sel.point.t, sel.point.q), (704.0 * 576.0, 30.0, 16.0));
        let top = monotone_rate(704.0 * 576.0, 30.0, 16.0).unwrap();
        assert_eq!(select_star(&g, &city, &c, monotone_rate, top).unwrap().quality, 1.0);
    }

    #[test]
    fn infeasible_budget_reports_minimum() {
        let g = paper_grid();
        let min = monotone_rate(176.0 * 144.0, 7.5, model::qs_from_qp(44.0).unwrap()).unwrap();
        match select_star(&g, &REFERENCE_SEQUENCES[0].1, &ShapeConstants::default(), monotone_rate, min * 0.5) {
            Err(AdaptError::Infeasible { min_rate, .. }) => assert_eq!(min_rate, min),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            select_star(&g, &REFERENCE_SEQUENCES[0].1, &ShapeConstants::default(), monotone_rate, 0.0),
            Err(AdaptError::InvalidBudget(_))
        ));
    }

    #[test]
    fn tie_breaks_prefer_lower_rate() {
        // identical quality everywhere when all levels sit at the references
        let g = CandidateGrid::new(vec![100.0], vec![30.0], vec![16.0], References { s_max: 100.0, t_max: 30.0, q_min: 16.0 })
            .unwrap();
        let sel = select_star(&g, &REFERENCE_SEQUENCES[1].1, &ShapeConstants::default(), |_, _, _| Some(3.0), 5.0).unwrap();
        assert_eq!(sel.rate, 3.0);
        let a = Selection { rate: 2.0, ..sel };
        let b = Selection { rate: 3.0, ..sel };
        assert_eq!(preference(&a, &b), Ordering::Less);
        let bigger = Selection { point: StarPoint { s: 200.0, ..sel.point }, ..sel };
        assert_eq!(preference(&bigger, &sel), Ordering::Less);
    }

    #[test]
    fn missing_rates_are_errors() {
        let g = paper_grid();
        let r = select_star(&g, &REFERENCE_SEQUENCES[0].1, &ShapeConstants::default(), |_, t, _| (t > 10.0).then_some(1.0), 10.0);
        assert!(matches!(r, Err(AdaptError::MissingRate { t, .. }) if t == 7.5));
    }

    #[test]
    fn rate_table_lookup() {
        let mut table = RateTable::new();
        table.insert(StarLabel::new(352, 288, 15.0, 36), 120.0).unwrap();
        assert!(table.insert(StarLabel::new(288, 352, 15.0, 36), 1.0).is_err());
        let q = model::qs_from_qp(36.0).unwrap();
        assert_eq!(table.rate(352.0 * 288.0, 15.0, q), Some(120.0));
        assert_eq!(table.rate(352.0 * 288.0, 30.0, q), None);
        let g = CandidateGrid::from_labels(table.labels(), None).unwrap();
        assert_eq!(g.points().count(), 1);
    }

    #[test]
    fn grid_validation() {
        let r = References::default();
        assert!(CandidateGrid::new(vec![], vec![30.0], vec![16.0], r).is_err());
        assert!(CandidateGrid::new(vec![2.0, 1.0], vec![30.0], vec![16.0], r).is_err());
        assert!(CandidateGrid::new(vec![1.0], vec![60.0], vec![16.0], r).is_err());
        assert!(CandidateGrid::new(vec![1.0], vec![30.0], vec![8.0], r).is_err());
    }
}
