//! Least-squares estimation of model parameters from MOS tables.
//!
//! [`derive_curves`] turns a sequence's MOS table into empirical normalized
//! curves (MOS divided by the MOS of the anchor cell). Each decay parameter is
//! then fitted by one-dimensional minimization of the squared error over the
//! pooled curve points, with every point weighted equally.

pub mod minimize;
mod shape;

pub use shape::{fit_shape_constants, ShapeFit, ShapeFitOptions};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, inverse_exponential, ModelError, References, SequenceParams, ShapeConstants};
use crate::pipeline::{MosTable, StarLabel};
use crate::stats;
use minimize::{minimize_bracketed, nelder_mead};

/// Search interval for every decay parameter.
pub const ALPHA_BOUNDS: (f64, f64) = (1e-3, 100.0);
/// Interval tolerance of the scalar fits.
pub const ALPHA_XTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("sequence {sequence_id}: anchor cell {missing} needed by {needed_by} is missing")]
    MissingAnchor {
        sequence_id: String,
        missing: String,
        needed_by: StarLabel,
    },
    #[error("sequence {0} not found in the MOS table")]
    UnknownSequence(String),
    #[error("no information below anchor: {0}")]
    NoInformation(String),
    #[error("expected {expected:?} curves, got {got:?}")]
    WrongKind { expected: CurveKind, got: CurveKind },
    #[error("invalid fit input: {0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    /// Versus `s / s_max` at fixed frame rate and QP.
    Nqs,
    /// Versus `t / t_max` at fixed frame size and QP.
    Nqt,
    /// Versus `q_min / q` at fixed frame size and frame rate.
    Nqq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub at: StarLabel,
}

/// Empirical normalized quality along one axis, other two coordinates held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCurve {
    pub kind: CurveKind,
    pub sequence_id: String,
    /// The cell at `x = 1`; also carries the held coordinates.
    pub anchor: StarLabel,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub at: StarLabel,
    /// Normalized coordinate for one-dimensional fits.
    pub x: Option<f64>,
    pub measured: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: BTreeMap<String, f64>,
    /// Absent when either series is constant.
    pub pcc: Option<f64>,
    pub rmse: f64,
    pub sse: f64,
    pub residuals: Vec<Residual>,
    pub iterations: usize,
    /// Tolerance met at an interior point of the search interval.
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FitReport {
    fn from_residuals(
        params: BTreeMap<String, f64>,
        residuals: Vec<Residual>,
        iterations: usize,
        converged: bool,
        warnings: Vec<String>,
    ) -> FitReport {
        let measured: Vec<f64> = residuals.iter().map(|r| r.measured).collect();
        let predicted: Vec<f64> = residuals.iter().map(|r| r.predicted).collect();
        let sse = measured.iter().zip(&predicted).map(|(m, p)| (m - p).powi(2)).sum();
        FitReport {
            params,
            pcc: stats::pcc(&predicted, &measured).ok(),
            rmse: stats::rmse(&predicted, &measured).unwrap_or(0.0),
            sse,
            residuals,
            iterations,
            converged,
            warnings,
        }
    }
}

/// Outcome of fitting a single decay parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarFit {
    pub alpha: f64,
    pub report: FitReport,
}

struct Sample {
    x: f64,
    y: f64,
    /// Multiplier on the fitted parameter (`L(QP)` for `α̂_s`, else 1).
    scale: f64,
    at: StarLabel,
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Labels matching the reference maxima/minimum, as (pixels, fps, qp) tests.
struct AnchorLevels {
    refs: References,
    qp_min: f64,
}

impl AnchorLevels {
    fn new(refs: &References) -> Result<Self, FitError> {
        refs.validate()?;
        Ok(AnchorLevels { refs: *refs, qp_min: model::qp_from_qs(refs.q_min)? })
    }
    fn s(&self, l: &StarLabel) -> bool {
        approx_eq(l.pixels() as f64, self.refs.s_max)
    }
    fn t(&self, l: &StarLabel) -> bool {
        approx_eq(l.fps, self.refs.t_max)
    }
    fn q(&self, l: &StarLabel) -> bool {
        (f64::from(l.qp) - self.qp_min).abs() < 1e-6
    }
    fn contains(&self, l: &StarLabel) -> bool {
        (l.pixels() as f64) <= self.refs.s_max * (1.0 + 1e-12)
            && l.fps <= self.refs.t_max * (1.0 + 1e-12)
            && f64::from(l.qp) >= self.qp_min - 1e-6
    }
}

type CellIndex = BTreeMap<(u64, u64, i32), (StarLabel, f64)>;

fn index_cells(mos: &MosTable, sequence_id: &str, levels: &AnchorLevels) -> Result<CellIndex, FitError> {
    let mut index = CellIndex::new();
    for c in mos.sequence(sequence_id).filter(|c| levels.contains(&c.star)) {
        let key = (c.star.pixels(), c.star.fps.to_bits(), c.star.qp);
        if let Some((other, _)) = index.insert(key, (c.star, c.mos)) {
            return Err(FitError::Input(format!(
                "sequence {sequence_id}: cells {other} and {} share pixel count, frame rate and QP",
                c.star
            )));
        }
    }
    if index.is_empty() {
        return Err(FitError::UnknownSequence(sequence_id.to_string()));
    }
    Ok(index)
}

/// Empirical NQS, NQT and NQQ curves of one sequence. Cells outside the
/// reference bounds are ignored. Each point is `MOS(cell) / MOS(anchor)`.
pub fn derive_curves(
    mos: &MosTable,
    sequence_id: &str,
    refs: &References,
) -> Result<Vec<NormalizedCurve>, FitError> {
    let levels = AnchorLevels::new(refs)?;
    let index = index_cells(mos, sequence_id, &levels)?;
    let find = |pred: &dyn Fn(&StarLabel) -> bool| index.values().find(|(l, _)| pred(l)).copied();

    let mut curves: BTreeMap<(CurveKind, StarLabel), Vec<CurvePoint>> = BTreeMap::new();
    for (label, m) in index.values() {
        let l = *label;
        let q = l.stepsize();
        let specs: [(CurveKind, f64, Option<(StarLabel, f64)>, String); 3] = [
            (
                CurveKind::Nqs,
                l.pixels() as f64 / refs.s_max,
                find(&|a| levels.s(a) && a.fps == l.fps && a.qp == l.qp),
                format!("(s={}, t={}, qp={})", refs.s_max, l.fps, l.qp),
            ),
            (
                CurveKind::Nqt,
                l.fps / refs.t_max,
                find(&|a| a.pixels() == l.pixels() && levels.t(a) && a.qp == l.qp),
                format!("(s={}, t={}, qp={})", l.pixels(), refs.t_max, l.qp),
            ),
            (
                CurveKind::Nqq,
                refs.q_min / q,
                find(&|a| a.pixels() == l.pixels() && a.fps == l.fps && levels.q(a)),
                format!("(s={}, t={}, qp={})", l.pixels(), l.fps, levels.qp_min),
            ),
        ];
        for (kind, x, anchor, missing) in specs {
            let Some((anchor, anchor_mos)) = anchor else {
                return Err(FitError::MissingAnchor {
                    sequence_id: sequence_id.to_string(),
                    missing,
                    needed_by: l,
                });
            };
            if !(anchor_mos > 0.0) {
                return Err(FitError::Input(format!("anchor {anchor} has non-positive MOS {anchor_mos}")));
            }
            // exact x = 1 at the anchor itself
            let x = if anchor == l { 1.0 } else { x.min(1.0) };
            curves.entry((kind, anchor)).or_default().push(CurvePoint { x, y: m / anchor_mos, at: l });
        }
    }
    Ok(curves
        .into_iter()
        .map(|((kind, anchor), mut points)| {
            points.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.at.cmp(&b.at)));
            NormalizedCurve { kind, sequence_id: sequence_id.to_string(), anchor, points }
        })
        .collect())
}

fn check_kind(curves: &[NormalizedCurve], expected: CurveKind) -> Result<(), FitError> {
    match curves.iter().find(|c| c.kind != expected) {
        Some(c) => Err(FitError::WrongKind { expected, got: c.kind }),
        None => Ok(()),
    }
}

fn fit_samples(samples: &[Sample], beta: f64, name: &str) -> Result<ScalarFit, FitError> {
    if samples.iter().any(|s| !(s.x > 0.0 && s.x <= 1.0 && s.y.is_finite() && s.scale > 0.0)) {
        return Err(FitError::Input(format!("{name}: points need x in (0, 1] and finite y")));
    }
    if !samples.iter().any(|s| s.x < 1.0) {
        return Err(FitError::NoInformation(format!("{name}: every point is at x = 1")));
    }
    let sse = |alpha: f64| -> f64 {
        samples
            .iter()
            .map(|s| (inverse_exponential(s.x, alpha * s.scale, beta) - s.y).powi(2))
            .sum()
    };
    let (lo, hi) = ALPHA_BOUNDS;
    let m = minimize_bracketed(sse, lo, hi, ALPHA_XTOL);
    let mut warnings = Vec::new();
    let pinned = m.x - lo < 1e-6 * lo || hi - m.x < 1e-6 * hi;
    if pinned {
        warnings.push(format!("{name} = {} is at the search bound [{lo}, {hi}]", m.x));
    }
    let residuals = samples
        .iter()
        .map(|s| Residual {
            at: s.at,
            x: Some(s.x),
            measured: s.y,
            predicted: inverse_exponential(s.x, m.x * s.scale, beta),
        })
        .collect();
    let params = BTreeMap::from([(name.to_string(), m.x)]);
    Ok(ScalarFit {
        alpha: m.x,
        report: FitReport::from_residuals(params, residuals, m.evaluations, m.converged && !pinned, warnings),
    })
}

fn samples_of(curves: &[NormalizedCurve], scale: impl Fn(&NormalizedCurve) -> f64) -> Vec<Sample> {
    curves
        .iter()
        .flat_map(|c| {
            let k = scale(c);
            c.points.iter().map(move |p| Sample { x: p.x, y: p.y, scale: k, at: p.at })
        })
        .collect()
}

/// `α_t` from NQT curves pooled over frame sizes and QPs.
pub fn fit_alpha_t(curves: &[NormalizedCurve], consts: &ShapeConstants) -> Result<ScalarFit, FitError> {
    check_kind(curves, CurveKind::Nqt)?;
    fit_samples(&samples_of(curves, |_| 1.0), consts.beta_t, "alpha_t")
}

/// `α_q` from NQQ curves of one frame size, pooled over frame rates.
pub fn fit_alpha_q(curves: &[NormalizedCurve], consts: &ShapeConstants) -> Result<ScalarFit, FitError> {
    check_kind(curves, CurveKind::Nqq)?;
    if curves.windows(2).any(|w| w[0].anchor.pixels() != w[1].anchor.pixels()) {
        return Err(FitError::Input("alpha_q: curves span several frame sizes".into()));
    }
    fit_samples(&samples_of(curves, |_| 1.0), consts.beta_q, "alpha_q")
}

/// `α_s` of a single QP from NQS curves pooled over frame rates.
pub fn fit_alpha_s_per_qp(curves: &[NormalizedCurve], consts: &ShapeConstants) -> Result<ScalarFit, FitError> {
    check_kind(curves, CurveKind::Nqs)?;
    if curves.windows(2).any(|w| w[0].anchor.qp != w[1].anchor.qp) {
        return Err(FitError::Input("alpha_s: curves span several QPs".into()));
    }
    fit_samples(&samples_of(curves, |_| 1.0), consts.beta_s, "alpha_s")
}

/// `α̂_s` from NQS curves at all QPs, with `α_s = α̂_s · L(QP)`.
pub fn fit_alpha_s_hat(curves: &[NormalizedCurve], consts: &ShapeConstants) -> Result<ScalarFit, FitError> {
    check_kind(curves, CurveKind::Nqs)?;
    let samples = samples_of(curves, |c| consts.l_of_qp(f64::from(c.anchor.qp)));
    fit_samples(&samples, consts.beta_s, "alpha_s_hat")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceFit {
    pub sequence_id: String,
    pub params: SequenceParams,
    /// Model predictions against MOS normalized by the maximal cell.
    pub report: FitReport,
    /// Per-parameter fits keyed `alpha_q`, `alpha_s_hat`, `alpha_t`.
    pub components: BTreeMap<String, FitReport>,
}

/// MOS of every in-range cell divided by the MOS of the cell at
/// `(s_max, t_max, q_min)`.
pub fn normalized_mos(
    mos: &MosTable,
    sequence_id: &str,
    refs: &References,
) -> Result<Vec<(StarLabel, f64)>, FitError> {
    let levels = AnchorLevels::new(refs)?;
    let index = index_cells(mos, sequence_id, &levels)?;
    let top = index
        .values()
        .find(|(l, _)| levels.s(l) && levels.t(l) && levels.q(l))
        .copied()
        .ok_or_else(|| FitError::MissingAnchor {
            sequence_id: sequence_id.to_string(),
            missing: format!("(s={}, t={}, qp={})", refs.s_max, refs.t_max, levels.qp_min),
            needed_by: index.values().next().expect("non-empty").0,
        })?;
    Ok(index.values().map(|(l, m)| (*l, m / top.1)).collect())
}

fn sequence_report(
    cells: &[(StarLabel, f64)],
    params: &SequenceParams,
    refs: &References,
    consts: &ShapeConstants,
    iterations: usize,
    converged: bool,
    warnings: Vec<String>,
) -> Result<FitReport, FitError> {
    let mut residuals = Vec::with_capacity(cells.len());
    for (l, y) in cells {
        let p = clamp_point(l, refs)?;
        residuals.push(Residual { at: *l, x: None, measured: *y, predicted: model::qstar(&p, params, consts)? });
    }
    let names = BTreeMap::from([
        ("alpha_q".to_string(), params.alpha_q),
        ("alpha_s_hat".to_string(), params.alpha_s_hat),
        ("alpha_t".to_string(), params.alpha_t),
    ]);
    Ok(FitReport::from_residuals(names, residuals, iterations, converged, warnings))
}

/// Point for a label already known to lie inside `refs` (up to rounding).
fn clamp_point(l: &StarLabel, refs: &References) -> Result<model::StarPoint, ModelError> {
    refs.point(
        (l.pixels() as f64).min(refs.s_max),
        l.fps.min(refs.t_max),
        l.stepsize().max(refs.q_min),
    )
}

/// Component-wise fit of one sequence: `α_q` from NQQ at the largest frame
/// size, `α̂_s` from all NQS curves, `α_t` from all NQT curves.
pub fn fit_sequence(
    mos: &MosTable,
    sequence_id: &str,
    refs: &References,
    consts: &ShapeConstants,
) -> Result<SequenceFit, FitError> {
    consts.validate()?;
    let curves = derive_curves(mos, sequence_id, refs)?;
    let levels = AnchorLevels::new(refs)?;
    let of_kind = |k: CurveKind| -> Vec<NormalizedCurve> { curves.iter().filter(|c| c.kind == k).cloned().collect() };
    let nqq: Vec<NormalizedCurve> = of_kind(CurveKind::Nqq).into_iter().filter(|c| levels.s(&c.anchor)).collect();
    let q = fit_alpha_q(&nqq, consts)?;
    let s = fit_alpha_s_hat(&of_kind(CurveKind::Nqs), consts)?;
    let t = fit_alpha_t(&of_kind(CurveKind::Nqt), consts)?;
    let params = SequenceParams::new(q.alpha, s.alpha, t.alpha)?;

    let cells = normalized_mos(mos, sequence_id, refs)?;
    let components = BTreeMap::from([
        ("alpha_q".to_string(), q.report),
        ("alpha_s_hat".to_string(), s.report),
        ("alpha_t".to_string(), t.report),
    ]);
    let iterations = components.values().map(|r| r.iterations).sum();
    let converged = components.values().all(|r| r.converged);
    let warnings = components.values().flat_map(|r| r.warnings.iter().cloned()).collect();
    let report = sequence_report(&cells, &params, refs, consts, iterations, converged, warnings)?;
    Ok(SequenceFit { sequence_id: sequence_id.to_string(), params, report, components })
}

/// Optional post-pass: refine all three parameters jointly against the
/// normalized MOS of every cell, starting from a component-wise fit.
pub fn refine_joint(
    mos: &MosTable,
    start: &SequenceFit,
    refs: &References,
    consts: &ShapeConstants,
) -> Result<SequenceFit, FitError> {
    let cells = normalized_mos(mos, &start.sequence_id, refs)?;
    let points: Vec<(model::StarPoint, f64)> = cells
        .iter()
        .map(|(l, y)| Ok((clamp_point(l, refs)?, *y)))
        .collect::<Result<_, ModelError>>()?;
    let (lo, hi) = (ALPHA_BOUNDS.0.ln(), ALPHA_BOUNDS.1.ln());
    let sse = |v: &[f64]| -> f64 {
        if v.iter().any(|x| !(lo..=hi).contains(x)) {
            return f64::INFINITY;
        }
        let p = SequenceParams { alpha_q: v[0].exp(), alpha_s_hat: v[1].exp(), alpha_t: v[2].exp() };
        points
            .iter()
            .map(|(pt, y)| model::qstar(pt, &p, consts).map_or(f64::INFINITY, |q| (q - y).powi(2)))
            .sum()
    };
    let p0 = start.params;
    let x0 = [p0.alpha_q.ln(), p0.alpha_s_hat.ln(), p0.alpha_t.ln()];
    let m = nelder_mead(sse, &x0, &[0.05; 3], 1e-15, 1e-10, 5000);
    let params = SequenceParams::new(m.x[0].exp(), m.x[1].exp(), m.x[2].exp())?;
    let mut warnings = Vec::new();
    if !m.converged {
        warnings.push("joint refinement hit its iteration cap".to_string());
    }
    let report = sequence_report(&cells, &params, refs, consts, m.iterations, m.converged, warnings)?;
    Ok(SequenceFit { sequence_id: start.sequence_id.clone(), params, report, components: start.components.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::REFERENCE_SEQUENCES;
    use crate::pipeline::{CiMethod, MosCell};

    pub(crate) fn paper_grid() -> Vec<StarLabel> {
        let mut out = Vec::new();
        for (w, h) in [(176, 144), (352, 288), (704, 576)] {
            for fps in [7.5, 15.0, 30.0] {
                for qp in [28, 36, 44] {
                    out.push(StarLabel::new(w, h, fps, qp));
                }
            }
        }
        out
    }

    fn synthetic(params: &SequenceParams, scale: f64) -> MosTable {
        let refs = References::default();
        let consts = ShapeConstants::default();
        paper_grid()
            .into_iter()
            .map(|l| {
                let q = model::qstar(&l.to_point(refs).unwrap(), params, &consts).unwrap();
                MosCell::from_scores("x", l, vec![scale * q], CiMethod::StudentT)
            })
            .collect()
    }

    #[test]
    fn constant_table_gives_unit_curves() {
        let table: MosTable = paper_grid()
            .into_iter()
            .map(|l| MosCell::from_scores("x", l, vec![5.0], CiMethod::StudentT))
            .collect();
        let curves = derive_curves(&table, "x", &References::default()).unwrap();
        assert_eq!(curves.len(), 27);
        assert!(curves.iter().all(|c| c.points.len() == 3 && c.points.iter().all(|p| p.y == 1.0)));
    }

    #[test]
    fn curve_ratio_definition() {
        let mut table = MosTable::new();
        let big = StarLabel::new(704, 576, 30.0, 28);
        let small = StarLabel::new(352, 288, 30.0, 28);
        table.insert(MosCell::from_scores("x", big, vec![8.0], CiMethod::StudentT));
        table.insert(MosCell::from_scores("x", small, vec![4.0], CiMethod::StudentT));
        let curves = derive_curves(&table, "x", &References::default()).unwrap();
        let nqs = curves.iter().find(|c| c.kind == CurveKind::Nqs).unwrap();
        assert_eq!(nqs.points[0].x, 0.25);
        assert_eq!(nqs.points[0].y, 0.5);
    }

    #[test]
    fn synthetic_curves_follow_model() {
        let city = REFERENCE_SEQUENCES[0].1;
        let consts = ShapeConstants::default();
        let refs = References::default();
        for c in derive_curves(&synthetic(&city, 7.0), "x", &refs).unwrap() {
            for p in &c.points {
                let model = match c.kind {
                    CurveKind::Nqs => model::mnqs(p.at.pixels() as f64, refs.s_max, p.at.stepsize(), city.alpha_s_hat, &consts),
                    CurveKind::Nqt => model::mnqt(p.at.fps, refs.t_max, city.alpha_t, &consts),
                    CurveKind::Nqq => {
                        // NQQ away from the largest frame size picks up the
                        // QP dependence of the spatial factor
                        let s = p.at.pixels() as f64;
                        let at = |q: f64| -> f64 {
                            model::mnqq(q, refs.q_min, city.alpha_q, &consts).unwrap()
                                * model::mnqs(s, refs.s_max, q, city.alpha_s_hat, &consts).unwrap()
                        };
                        Ok(at(p.at.stepsize()) / at(refs.q_min))
                    }
                }
                .unwrap();
                assert!((p.y - model).abs() < 1e-12, "{:?} {p:?} {model}", c.kind);
            }
        }
    }

    #[test]
    fn missing_anchor_is_named() {
        let mut table = synthetic(&REFERENCE_SEQUENCES[0].1, 1.0);
        let mut cells: Vec<MosCell> = table.cells().cloned().collect();
        cells.retain(|c| c.star != StarLabel::new(704, 576, 15.0, 36));
        table = cells.into_iter().collect();
        match derive_curves(&table, "x", &References::default()) {
            Err(FitError::MissingAnchor { missing, .. }) => {
                assert!(missing.contains("405504") && missing.contains("t=15") && missing.contains("qp=36"), "{missing}")
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(fit_sequence(&table, "x", &References::default(), &ShapeConstants::default()), Err(FitError::MissingAnchor { .. })));
    }

    fn curve(kind: CurveKind, anchor: StarLabel, pts: &[(f64, f64)]) -> NormalizedCurve {
        NormalizedCurve {
            kind,
            sequence_id: "x".into(),
            anchor,
            points: pts.iter().map(|&(x, y)| CurvePoint { x, y, at: anchor }).collect(),
        }
    }

    #[test]
    fn recovers_noiseless_alpha_t() {
        let consts = ShapeConstants::default();
        let pts: Vec<(f64, f64)> = [0.25, 0.5, 1.0].iter().map(|&x| (x, inverse_exponential(x, 3.0, 0.63))).collect();
        let fit = fit_alpha_t(&[curve(CurveKind::Nqt, StarLabel::new(1, 1, 30.0, 28), &pts)], &consts).unwrap();
        assert!((fit.alpha - 3.0).abs() < 1e-6);
        assert!(fit.report.converged);
        assert!(fit.report.rmse < 1e-9);
    }

    #[test]
    fn single_interior_point_identifies_alpha_q() {
        let consts = ShapeConstants::default();
        let y = inverse_exponential(0.5, 5.0, 1.0);
        let fit = fit_alpha_q(&[curve(CurveKind::Nqq, StarLabel::new(1, 1, 30.0, 28), &[(0.5, y)])], &consts).unwrap();
        assert!((fit.alpha - 5.0).abs() < 1e-6);
    }

    #[test]
    fn inconsistent_data_still_fits() {
        let consts = ShapeConstants::default();
        let fit = fit_alpha_q(
            &[curve(CurveKind::Nqq, StarLabel::new(1, 1, 30.0, 28), &[(0.25, 1.3), (0.5, 1.2), (1.0, 1.0)])],
            &consts,
        )
        .unwrap();
        assert!(fit.report.rmse > 0.1);
        assert!(!fit.report.converged);
        assert!(!fit.report.warnings.is_empty());
    }

    #[test]
    fn anchor_only_data_is_rejected() {
        let consts = ShapeConstants::default();
        let c = curve(CurveKind::Nqt, StarLabel::new(1, 1, 30.0, 28), &[(1.0, 1.0)]);
        assert!(matches!(fit_alpha_t(std::slice::from_ref(&c), &consts), Err(FitError::NoInformation(_))));
        assert!(matches!(fit_alpha_q(&[c], &consts), Err(FitError::WrongKind { .. })));
    }

    #[test]
    fn alpha_s_from_golden_point() {
        let consts = ShapeConstants::default();
        let c = curve(CurveKind::Nqs, StarLabel::new(704, 576, 7.5, 36), &[(1.0 / 16.0, 0.353_818_944_954_042_4), (1.0, 1.0)]);
        let per_qp = fit_alpha_s_per_qp(std::slice::from_ref(&c), &consts).unwrap();
        assert!((per_qp.alpha - 3.231_36).abs() < 1e-6);
        let hat = fit_alpha_s_hat(&[c], &consts).unwrap();
        assert!((hat.alpha - per_qp.alpha / consts.l_of_qp(36.0)).abs() < 1e-9);
        assert!((hat.alpha - 3.52).abs() < 1e-6);
    }

    #[test]
    fn fit_sequence_recovers_city() {
        let city = REFERENCE_SEQUENCES[0].1;
        let fit = fit_sequence(&synthetic(&city, 8.0), "x", &References::default(), &ShapeConstants::default()).unwrap();
        assert!((fit.params.alpha_q / city.alpha_q - 1.0).abs() < 1e-5);
        assert!((fit.params.alpha_s_hat / city.alpha_s_hat - 1.0).abs() < 1e-5);
        assert!((fit.params.alpha_t / city.alpha_t - 1.0).abs() < 1e-5);
        assert!(fit.report.rmse < 1e-9);
        assert!(fit.report.pcc.unwrap() > 1.0 - 1e-12);
        assert!(fit.report.converged);
        let joint = refine_joint(&synthetic(&city, 8.0), &fit, &References::default(), &ShapeConstants::default()).unwrap();
        assert!(joint.report.sse <= fit.report.sse + 1e-15);
    }

    #[test]
    fn constant_table_does_not_converge() {
        let table: MosTable = paper_grid()
            .into_iter()
            .map(|l| MosCell::from_scores("x", l, vec![5.0], CiMethod::StudentT))
            .collect();
        let fit = fit_sequence(&table, "x", &References::default(), &ShapeConstants::default()).unwrap();
        assert!(!fit.report.converged);
    }
}
