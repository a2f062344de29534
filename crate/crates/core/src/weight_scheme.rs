//! Weight schemes for weighted quorums.
//!
//! A scheme assigns every node a distinct positive weight. A decision is
//! reached once the acknowledging weight exceeds the consensus threshold
//! (half of the total weight). For a failure threshold `t` a scheme is
//! usable when the `t + 1` heaviest weights exceed the threshold while the
//! `t` heaviest do not:
//!
//! ```text
//! sum(w[0..t]) < ct = sum(w) / 2 < sum(w[0..=t])
//! ```
//!
//! Generated schemes are geometric, `w_i = r^(n - i)`, so the lightest node
//! always weighs exactly 1.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Relative tolerance used for the threshold equality and for both margins.
pub const REL_TOLERANCE: f64 = 1e-9;

/// Absolute tolerance of the ratio bisection.
pub const RATIO_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("failure threshold t={t} outside 1..={max} for n={n}")]
    BadThresholdRange { n: usize, t: usize, max: usize },
    #[error("no feasible ratio in (1, 2) for n={n}, t={t}")]
    InfeasibleRatio { n: usize, t: usize },
    #[error("invalid weight scheme: {0}")]
    Invalid(Violation),
    #[error("scheme json: {0}")]
    Json(String),
}

/// Largest failure threshold a cluster of `n` nodes can be configured with.
pub fn max_threshold(n: usize) -> usize {
    n.saturating_sub(1) / 2
}

fn check_range(n: usize, t: usize) -> Result<(), SchemeError> {
    let max = max_threshold(n);
    if n < 3 || t < 1 || t > max {
        return Err(SchemeError::BadThresholdRange { n, t, max });
    }
    Ok(())
}

/// A validated weight scheme. Weights are stored heaviest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScheme", into = "RawScheme")]
pub struct WeightScheme {
    n: usize,
    t: usize,
    ratio: f64,
    weights: Vec<f64>,
    ct: f64,
}

#[derive(Serialize, Deserialize)]
struct RawScheme {
    n: usize,
    t: usize,
    r: f64,
    weights: Vec<f64>,
    ct: f64,
}

impl TryFrom<RawScheme> for WeightScheme {
    type Error = SchemeError;

    fn try_from(raw: RawScheme) -> Result<Self, Self::Error> {
        WeightScheme::from_parts(raw.t, raw.r, raw.weights, raw.ct).and_then(|s| {
            if s.n != raw.n {
                Err(SchemeError::Json(format!(
                    "n={} does not match {} weights",
                    raw.n, s.n
                )))
            } else {
                Ok(s)
            }
        })
    }
}

impl From<WeightScheme> for RawScheme {
    fn from(s: WeightScheme) -> Self {
        RawScheme {
            n: s.n,
            t: s.t,
            r: s.ratio,
            weights: s.weights,
            ct: s.ct,
        }
    }
}

impl WeightScheme {
    /// Builds a scheme from explicit parts, rejecting anything that is not
    /// strictly descending or fails validation.
    pub fn from_parts(
        t: usize,
        ratio: f64,
        weights: Vec<f64>,
        ct: f64,
    ) -> Result<Self, SchemeError> {
        let verdict = validate_scheme(&weights, ct, t);
        if !verdict.valid {
            return Err(SchemeError::Invalid(verdict.violated));
        }
        if weights.windows(2).any(|w| w[0] <= w[1]) {
            return Err(SchemeError::Json(
                "weights must be strictly descending".to_string(),
            ));
        }
        Ok(WeightScheme {
            n: weights.len(),
            t,
            ratio,
            weights,
            ct,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Weights, heaviest first.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight held by the node ranked `rank` (0 is the leader's slot).
    pub fn weight_at(&self, rank: usize) -> f64 {
        self.weights[rank]
    }

    pub fn ct(&self) -> f64 {
        self.ct
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Number of nodes whose agreement is sufficient in the best case.
    pub fn cabinet_size(&self) -> usize {
        self.t + 1
    }

    pub fn verdict(&self) -> SchemeVerdict {
        validate_scheme(&self.weights, self.ct, self.t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scheme serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SchemeError> {
        serde_json::from_str(text).map_err(|e| SchemeError::Json(e.to_string()))
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} t={} r={:.4} ct={:.4} [", self.n, self.t, self.ratio, self.ct)?;
        for (i, w) in self.weights.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{w:.2}")?;
        }
        f.write_str("]")
    }
}

/// First violated rule, in the order they are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    None,
    BadThresholdRange,
    NonpositiveWeight,
    CtMismatch,
    #[serde(rename = "liveness_I2")]
    LivenessI2,
    #[serde(rename = "safety_I1")]
    SafetyI1,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Violation::None => "none",
            Violation::BadThresholdRange => "bad_threshold_range",
            Violation::NonpositiveWeight => "nonpositive_weight",
            Violation::CtMismatch => "ct_mismatch",
            Violation::LivenessI2 => "liveness_I2",
            Violation::SafetyI1 => "safety_I1",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeVerdict {
    pub valid: bool,
    pub violated: Violation,
    /// `(ct - sum of top t, sum of top t+1 - ct)`.
    pub margins: (f64, f64),
}

/// Checks a weight list against a threshold. Total: never panics, reports the
/// first failing rule. The weights may be given in any order.
pub fn validate_scheme(weights: &[f64], ct: f64, t: usize) -> SchemeVerdict {
    let n = weights.len();
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let margins = if t < n {
        let top_t: f64 = sorted[..t].iter().sum();
        let top_t1 = top_t + sorted[t];
        (ct - top_t, top_t1 - ct)
    } else {
        (f64::NAN, f64::NAN)
    };
    let verdict = |violated| SchemeVerdict {
        valid: violated == Violation::None,
        violated,
        margins,
    };

    if t < 1 || t > max_threshold(n) || !ct.is_finite() {
        return verdict(Violation::BadThresholdRange);
    }
    if sorted.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return verdict(Violation::NonpositiveWeight);
    }
    let total: f64 = sorted.iter().sum();
    let half = total / 2.0;
    if (ct - half).abs() > REL_TOLERANCE * half {
        return verdict(Violation::CtMismatch);
    }
    let tol = REL_TOLERANCE * total;
    if margins.0 <= tol {
        return verdict(Violation::LivenessI2);
    }
    if margins.1 <= tol {
        return verdict(Violation::SafetyI1);
    }
    verdict(Violation::None)
}

/// Left-hand condition on the ratio: `r^(n-t-1) < (r^n + 1) / 2`.
fn lower_holds(r: f64, n: usize, t: usize) -> bool {
    r.powi((n - t - 1) as i32) < (r.powi(n as i32) + 1.0) / 2.0
}

/// Right-hand condition on the ratio: `(r^n + 1) / 2 < r^(n-t)`.
fn upper_holds(r: f64, n: usize, t: usize) -> bool {
    (r.powi(n as i32) + 1.0) / 2.0 < r.powi((n - t) as i32)
}

/// Both strict inequalities on the geometric ratio, evaluated in `f64`.
pub fn ratio_feasible(r: f64, n: usize, t: usize) -> bool {
    n >= 3 && t >= 1 && t < n && lower_holds(r, n, t) && upper_holds(r, n, t)
}

/// Locates the open interval of ratios in (1, 2) satisfying both conditions.
///
/// On (1, 2) the lower condition fails then holds, the upper condition holds
/// then fails, so each boundary is found by bisecting a monotone predicate.
pub fn feasible_ratio_interval(n: usize, t: usize) -> Result<(f64, f64), SchemeError> {
    check_range(n, t)?;
    let lo = bisect(|r| lower_holds(r, n, t));
    let hi = bisect(|r| !upper_holds(r, n, t));
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(SchemeError::InfeasibleRatio { n, t })
    }
}

/// Smallest `r` in (1, 2) where `pred` switches from false to true.
fn bisect(pred: impl Fn(f64) -> bool) -> f64 {
    let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
    while hi - lo > RATIO_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Geometric weights `r^(n-1), ..., r, 1` with `ct` at half the total.
pub fn geometric_weights(r: f64, n: usize) -> (Vec<f64>, f64) {
    let weights: Vec<f64> = (1..=n).map(|i| r.powi((n - i) as i32)).collect();
    let ct = weights.iter().sum::<f64>() / 2.0;
    (weights, ct)
}

/// Generates the geometric scheme for `(n, t)` using the geometric midpoint
/// of the feasible ratio interval.
pub fn generate_scheme(n: usize, t: usize) -> Result<WeightScheme, SchemeError> {
    let (lo, hi) = feasible_ratio_interval(n, t)?;
    let ratio = (lo * hi).sqrt();
    let (weights, ct) = geometric_weights(ratio, n);
    match WeightScheme::from_parts(t, ratio, weights, ct) {
        Ok(s) => Ok(s),
        Err(SchemeError::Invalid(_)) => Err(SchemeError::InfeasibleRatio { n, t }),
        Err(e) => Err(e),
    }
}
