//! Joint fit of the shared spatial constants (`β_s`, `υ1`, `υ2`) together
//! with one `α̂_s` per sequence.
//!
//! `α̂_s` and `L` only appear as a product, so the overall scale of `L` is not
//! identifiable. The fit pins `L(qp_knee)` at its value under the starting
//! constants and estimates the slope `υ1`; `υ2` follows.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::minimize::{brent_bounded, nelder_mead};
use super::{check_kind, fit_alpha_s_hat, CurveKind, FitError, NormalizedCurve, ALPHA_BOUNDS, ALPHA_XTOL};
use crate::model::{inverse_exponential, ShapeConstants};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFitOptions {
    /// Outer alternation rounds per start.
    pub max_rounds: usize,
    /// Stop when a round improves the pooled SSE by less than this.
    pub tol: f64,
    /// Starting `(β_s, υ1)` pairs; the starting constants are always tried.
    pub starts: Vec<(f64, f64)>,
}

impl Default for ShapeFitOptions {
    fn default() -> Self {
        ShapeFitOptions { max_rounds: 500, tol: 1e-10, starts: vec![(0.5, -0.02), (1.0, -0.05)] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFit {
    pub constants: ShapeConstants,
    pub alpha_s_hat: BTreeMap<String, f64>,
    /// `L` at every QP present in the data.
    pub l_values: BTreeMap<i32, f64>,
    pub sse: f64,
    pub rounds: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

fn pooled_sse(
    datasets: &BTreeMap<String, Vec<NormalizedCurve>>,
    alphas: &BTreeMap<String, f64>,
    c: &ShapeConstants,
) -> f64 {
    datasets
        .iter()
        .map(|(seq, curves)| {
            let a = alphas[seq];
            curves
                .iter()
                .flat_map(|cv| {
                    let alpha = a * c.l_of_qp(f64::from(cv.anchor.qp));
                    cv.points.iter().map(move |p| (inverse_exponential(p.x, alpha, c.beta_s) - p.y).powi(2))
                })
                .sum::<f64>()
        })
        .sum()
}

/// Warm-started `α̂_s` update near the previous round's value.
fn refit_alpha(curves: &[NormalizedCurve], c: &ShapeConstants, prev: f64) -> f64 {
    let sse = |a: f64| -> f64 {
        curves
            .iter()
            .flat_map(|cv| {
                let alpha = a * c.l_of_qp(f64::from(cv.anchor.qp));
                cv.points.iter().map(move |p| (inverse_exponential(p.x, alpha, c.beta_s) - p.y).powi(2))
            })
            .sum()
    };
    let (lo, hi) = ALPHA_BOUNDS;
    brent_bounded(sse, (prev / 2.0).max(lo), (prev * 2.0).min(hi), ALPHA_XTOL, 500).x
}

fn with_slope(base: &ShapeConstants, l_knee: f64, beta_s: f64, upsilon1: f64) -> ShapeConstants {
    ShapeConstants { beta_s, upsilon1, upsilon2: l_knee - upsilon1 * base.qp_knee, ..*base }
}

struct Run {
    constants: ShapeConstants,
    alphas: BTreeMap<String, f64>,
    sse: f64,
    rounds: usize,
    converged: bool,
}

fn alternate(
    datasets: &BTreeMap<String, Vec<NormalizedCurve>>,
    start: ShapeConstants,
    l_knee: f64,
    opts: &ShapeFitOptions,
) -> Result<Run, FitError> {
    let mut consts = start;
    let mut alphas = BTreeMap::new();
    let mut prev = f64::INFINITY;
    for round in 1..=opts.max_rounds {
        for (seq, curves) in datasets {
            let alpha = match alphas.get(seq) {
                Some(&prev) => refit_alpha(curves, &consts, prev),
                None => fit_alpha_s_hat(curves, &consts)?.alpha,
            };
            alphas.insert(seq.clone(), alpha);
        }
        let objective = |v: &[f64]| -> f64 {
            let c = with_slope(&consts, l_knee, v[0], v[1]);
            if !(0.01..=5.0).contains(&v[0]) || c.validate().is_err() {
                return f64::INFINITY;
            }
            pooled_sse(datasets, &alphas, &c)
        };
        let m = nelder_mead(objective, &[consts.beta_s, consts.upsilon1], &[0.05, 0.002], 1e-16, 1e-10, 1000);
        if m.fx.is_finite() && m.fx <= pooled_sse(datasets, &alphas, &consts) {
            consts = with_slope(&consts, l_knee, m.x[0], m.x[1]);
        }
        let sse = pooled_sse(datasets, &alphas, &consts);
        if prev - sse < opts.tol {
            return Ok(Run { constants: consts, alphas, sse, rounds: round, converged: true });
        }
        prev = sse;
    }
    Ok(Run { constants: consts, alphas, sse: prev, rounds: opts.max_rounds, converged: false })
}

/// Least-squares `β_s`, `υ1`, `υ2` and per-sequence `α̂_s` from the NQS curves
/// of several sequences. Each start alternates between per-sequence `α̂_s`
/// fits and a simplex search over the constants; the best start wins.
///
/// Needs at least two sequences, each with at least two distinct QPs at or
/// above the knee; otherwise the result is reported as not converged.
pub fn fit_shape_constants(
    datasets: &BTreeMap<String, Vec<NormalizedCurve>>,
    start: &ShapeConstants,
    opts: &ShapeFitOptions,
) -> Result<ShapeFit, FitError> {
    start.validate()?;
    if datasets.is_empty() {
        return Err(FitError::Input("no sequences".into()));
    }
    for curves in datasets.values() {
        check_kind(curves, CurveKind::Nqs)?;
    }
    let mut warnings = Vec::new();
    if datasets.len() < 2 {
        warnings.push("fewer than two sequences; constants are under-identified".to_string());
    }
    for (seq, curves) in datasets {
        let levels: BTreeSet<i32> = curves.iter().map(|c| c.anchor.qp.max(start.qp_knee.ceil() as i32)).collect();
        if levels.len() < 2 {
            warnings.push(format!("sequence {seq} has fewer than two QPs above the knee; slope is under-identified"));
        }
    }

    let l_knee = start.l_of_qp(start.qp_knee);
    let mut starts = vec![*start];
    for &(b, u) in &opts.starts {
        let c = with_slope(start, l_knee, b, u);
        if c.validate().is_ok() {
            starts.push(c);
        }
    }
    let mut best: Option<Run> = None;
    for s in starts {
        let run = alternate(datasets, s, l_knee, opts)?;
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one start");
    let qps: BTreeSet<i32> = datasets.values().flatten().map(|c| c.anchor.qp).collect();
    let l_values = qps.into_iter().map(|qp| (qp, run.constants.l_of_qp(f64::from(qp)))).collect();
    if !run.converged {
        warnings.push(format!("no convergence within {} rounds", opts.max_rounds));
    }
    Ok(ShapeFit {
        constants: run.constants,
        alpha_s_hat: run.alphas,
        l_values,
        sse: run.sse,
        rounds: run.rounds,
        converged: run.converged && warnings.is_empty(),
        warnings,
    })
}
