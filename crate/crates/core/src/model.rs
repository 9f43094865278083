//! Quality model for a coded video as a function of its spatial, temporal and
//! amplitude resolution (STAR).
//!
//! Overall quality is the product of three normalized factors, each an inverse
//! exponential in its own normalized coordinate:
//!
//! ```text
//! f(x; α, β) = (1 − exp(−α·x^β)) / (1 − exp(−α)),   x ∈ (0, 1]
//! ```
//!
//! * quantization factor, `x = q_min / q`, with decay `α_q`
//! * spatial factor, `x = s / s_max`, with decay `α_s(q) = α̂_s · L(QP(q))`
//! * temporal factor, `x = t / t_max`, with decay `α_t`
//!
//! Every function here is pure and allocation free.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest QP the H.264 family can signal; validity of `L` is checked up to here.
pub const MAX_QP: f64 = 51.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} = {value} is outside its domain ({rule})")]
    Domain {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },
    #[error("invalid shape constants: {0}")]
    InvalidConstants(String),
}

fn domain(name: &'static str, value: f64, rule: &'static str) -> ModelError {
    ModelError::Domain { name, value, rule }
}

/// One operating point together with the reference maxima/minimum that
/// normalize it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarPoint {
    /// Pixels per frame (width × height).
    pub s: f64,
    /// Frame rate in Hz.
    pub t: f64,
    /// Quantization stepsize.
    pub q: f64,
    pub s_max: f64,
    pub t_max: f64,
    pub q_min: f64,
}

impl StarPoint {
    pub fn new(s: f64, t: f64, q: f64, refs: References) -> Result<Self, ModelError> {
        let p = StarPoint {
            s,
            t,
            q,
            s_max: refs.s_max,
            t_max: refs.t_max,
            q_min: refs.q_min,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.references().validate()?;
        if !(self.s > 0.0 && self.s <= self.s_max) {
            return Err(domain("s", self.s, "0 < s <= s_max"));
        }
        if !(self.t > 0.0 && self.t <= self.t_max) {
            return Err(domain("t", self.t, "0 < t <= t_max"));
        }
        if !(self.q >= self.q_min && self.q.is_finite()) {
            return Err(domain("q", self.q, "q >= q_min"));
        }
        Ok(())
    }

    pub fn references(&self) -> References {
        References {
            s_max: self.s_max,
            t_max: self.t_max,
            q_min: self.q_min,
        }
    }

    /// Normalized coordinates `(s/s_max, t/t_max, q_min/q)`.
    pub fn normalized(&self) -> (f64, f64, f64) {
        (self.s / self.s_max, self.t / self.t_max, self.q_min / self.q)
    }
}

/// Reference point of a test grid: largest frame size, highest frame rate,
/// finest stepsize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub s_max: f64,
    pub t_max: f64,
    pub q_min: f64,
}

impl References {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("s_max", self.s_max), ("t_max", self.t_max), ("q_min", self.q_min)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain(name, v, "positive and finite"));
            }
        }
        Ok(())
    }

    pub fn point(&self, s: f64, t: f64, q: f64) -> Result<StarPoint, ModelError> {
        StarPoint::new(s, t, q, *self)
    }
}

impl Default for References {
    /// 4CIF, 30 Hz, QP 28.
    fn default() -> Self {
        References {
            s_max: 704.0 * 576.0,
            t_max: 30.0,
            q_min: 16.0,
        }
    }
}

/// Content-independent constants shared by all sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeConstants {
    pub beta_s: f64,
    pub beta_t: f64,
    pub beta_q: f64,
    /// Slope of `L` per QP unit.
    pub upsilon1: f64,
    /// Intercept of `L`.
    pub upsilon2: f64,
    /// Below this QP, `L` is held at its value at the knee.
    pub qp_knee: f64,
}

impl Default for ShapeConstants {
    fn default() -> Self {
        ShapeConstants {
            beta_s: 0.74,
            beta_t: 0.63,
            beta_q: 1.0,
            upsilon1: -0.037,
            upsilon2: 2.25,
            qp_knee: 28.0,
        }
    }
}

impl ShapeConstants {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("beta_s", self.beta_s), ("beta_t", self.beta_t), ("beta_q", self.beta_q)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidConstants(format!("{name} = {v} must be > 0")));
            }
        }
        if !(self.upsilon1.is_finite() && self.upsilon2.is_finite() && self.qp_knee.is_finite()) {
            return Err(ModelError::InvalidConstants("non-finite L coefficients".into()));
        }
        // L is linear above the knee, so checking both ends covers the range.
        let hi = self.qp_knee.max(MAX_QP);
        for qp in [self.qp_knee, hi] {
            let l = self.l_of_qp(qp);
            if l <= 0.0 {
                return Err(ModelError::InvalidConstants(format!(
                    "L({qp}) = {l} is not positive"
                )));
            }
        }
        Ok(())
    }

    /// QP-dependent multiplier of the spatial decay parameter.
    pub fn l_of_qp(&self, qp: f64) -> f64 {
        let qp = qp.max(self.qp_knee);
        self.upsilon1 * qp + self.upsilon2
    }

    /// Spatial decay parameter at stepsize `q` for a given `α̂_s`.
    pub fn alpha_s(&self, alpha_s_hat: f64, q: f64) -> Result<f64, ModelError> {
        Ok(alpha_s_hat * self.l_of_qp(qp_from_qs(q)?))
    }
}

/// Content-dependent decay parameters of one source sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub alpha_q: f64,
    pub alpha_s_hat: f64,
    pub alpha_t: f64,
}

impl SequenceParams {
    pub fn new(alpha_q: f64, alpha_s_hat: f64, alpha_t: f64) -> Result<Self, ModelError> {
        let p = SequenceParams {
            alpha_q,
            alpha_s_hat,
            alpha_t,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("alpha_q", self.alpha_q),
            ("alpha_s_hat", self.alpha_s_hat),
            ("alpha_t", self.alpha_t),
        ] {
            check_alpha(name, v)?;
        }
        Ok(())
    }
}

/// Parameters fitted for the seven test sequences (city, crew, harbour, ice,
/// soccer, flowergarden, foreman) of the original subjective study.
pub const REFERENCE_SEQUENCES: [(&str, SequenceParams); 7] = [
    ("city", SequenceParams { alpha_q: 7.25, alpha_s_hat: 3.52, alpha_t: 4.10 }),
    ("crew", SequenceParams { alpha_q: 4.51, alpha_s_hat: 4.07, alpha_t: 3.09 }),
    ("harbour", SequenceParams { alpha_q: 9.65, alpha_s_hat: 4.58, alpha_t: 2.83 }),
    ("ice", SequenceParams { alpha_q: 5.61, alpha_s_hat: 3.68, alpha_t: 3.00 }),
    ("soccer", SequenceParams { alpha_q: 6.31, alpha_s_hat: 4.55, alpha_t: 2.23 }),
    ("fg", SequenceParams { alpha_q: 10.68, alpha_s_hat: 4.83, alpha_t: 2.80 }),
    ("foreman", SequenceParams { alpha_q: 4.57, alpha_s_hat: 5.94, alpha_t: 3.80 }),
];

fn check_alpha(name: &'static str, v: f64) -> Result<(), ModelError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(name, v, "positive and finite"))
    }
}

/// QP for a (real-valued) stepsize: `4 + 6·log2(q)`.
pub fn qp_from_qs(q: f64) -> Result<f64, ModelError> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(domain("q", q, "q > 0"));
    }
    Ok(4.0 + 6.0 * q.log2())
}

/// Stepsize for a (real-valued) QP: `2^((qp − 4)/6)`.
pub fn qs_from_qp(qp: f64) -> Result<f64, ModelError> {
    if !qp.is_finite() {
        return Err(domain("qp", qp, "finite"));
    }
    Ok(((qp - 4.0) / 6.0).exp2())
}

/// `(1 − e^(−α·x^β)) / (1 − e^(−α))` without domain checks.
///
/// Uses `expm1` so that small `α·x^β` keeps full relative precision. At
/// `x = 1` numerator and denominator are the same expression, so the result is
/// exactly 1.
#[inline]
pub fn inverse_exponential(x: f64, alpha: f64, beta: f64) -> f64 {
    let num = -(-alpha * x.powf(beta)).exp_m1();
    let den = -(-alpha).exp_m1();
    num / den
}

/// Normalized quality versus frame rate.
pub fn mnqt(t: f64, t_max: f64, alpha_t: f64, consts: &ShapeConstants) -> Result<f64, ModelError> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(domain("t_max", t_max, "positive and finite"));
    }
    if !(t > 0.0 && t <= t_max) {
        return Err(domain("t", t, "0 < t <= t_max"));
    }
    check_alpha("alpha_t", alpha_t)?;
    Ok(inverse_exponential(t / t_max, alpha_t, consts.beta_t))
}

/// Normalized quality versus frame size, with the decay `α_s` given directly.
pub fn mnqs_raw(s: f64, s_max: f64, alpha_s: f64, beta_s: f64) -> Result<f64, ModelError> {
    if !(s_max > 0.0 && s_max.is_finite()) {
        return Err(domain("s_max", s_max, "positive and finite"));
    }
    if !(s > 0.0 && s <= s_max) {
        return Err(domain("s", s, "0 < s <= s_max"));
    }
    check_alpha("alpha_s", alpha_s)?;
    if !(beta_s > 0.0 && beta_s.is_finite()) {
        return Err(domain("beta_s", beta_s, "positive and finite"));
    }
    Ok(inverse_exponential(s / s_max, alpha_s, beta_s))
}

/// Normalized quality versus frame size at stepsize `q`, with
/// `α_s = α̂_s · L(QP(q))`.
pub fn mnqs(
    s: f64,
    s_max: f64,
    q: f64,
    alpha_s_hat: f64,
    consts: &ShapeConstants,
) -> Result<f64, ModelError> {
    check_alpha("alpha_s_hat", alpha_s_hat)?;
    let alpha_s = consts.alpha_s(alpha_s_hat, q)?;
    mnqs_raw(s, s_max, alpha_s, consts.beta_s)
}

/// Normalized quality versus stepsize (evaluated at the largest frame size).
pub fn mnqq(q: f64, q_min: f64, alpha_q: f64, consts: &ShapeConstants) -> Result<f64, ModelError> {
    if !(q_min > 0.0 && q_min.is_finite()) {
        return Err(domain("q_min", q_min, "positive and finite"));
    }
    if !(q >= q_min && q.is_finite()) {
        return Err(domain("q", q, "q >= q_min"));
    }
    check_alpha("alpha_q", alpha_q)?;
    Ok(inverse_exponential(q_min / q, alpha_q, consts.beta_q))
}

/// The three model factors at one operating point and their product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub nqq: f64,
    pub nqs: f64,
    pub nqt: f64,
    pub quality: f64,
}

pub fn qstar_factors(
    point: &StarPoint,
    params: &SequenceParams,
    consts: &ShapeConstants,
) -> Result<Factors, ModelError> {
    point.validate()?;
    params.validate()?;
    let nqq = mnqq(point.q, point.q_min, params.alpha_q, consts)?;
    let nqs = mnqs(point.s, point.s_max, point.q, params.alpha_s_hat, consts)?;
    let nqt = mnqt(point.t, point.t_max, params.alpha_t, consts)?;
    Ok(Factors {
        nqq,
        nqs,
        nqt,
        quality: nqq * nqs * nqt,
    })
}

/// Overall normalized quality `MNQQ(q) · MNQS(s; q) · MNQT(t)`.
pub fn qstar(
    point: &StarPoint,
    params: &SequenceParams,
    consts: &ShapeConstants,
) -> Result<f64, ModelError> {
    qstar_factors(point, params, consts).map(|f| f.quality)
}
