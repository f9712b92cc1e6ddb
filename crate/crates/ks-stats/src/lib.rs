//! Two-sample Kolmogorov–Smirnov machinery.
//!
//! A monitored window of counter samples is compared against a reference
//! window by the supremum distance between their empirical CDFs,
//!
//! ```text
//! D = sup_x | F_M(x) - F_R(x) |
//! ```
//!
//! and rejected when D exceeds the asymptotic critical value
//!
//! ```text
//! D_alpha = sqrt((n_M + n_R) / (n_M * n_R)) * sqrt(-0.5 * ln(alpha / 2))
//! ```
//!
//! Counter readings are small integers, so ties are the common case; the
//! supremum is therefore evaluated at every distinct sample point using both
//! the CDF value and its left limit, which resolves ties exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KsError {
    #[error("sample window must contain at least 2 values, got {0}")]
    WindowTooShort(usize),
    #[error("sample value at index {0} is not finite")]
    NonFiniteValue(usize),
    #[error("sample value at index {0} is negative")]
    NegativeValue(usize),
    #[error("empty input")]
    Empty,
    #[error("sample counts must be >= 1, got n_m={0}, n_r={1}")]
    BadSampleCount(usize, usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Reference,
    Monitored,
}

/// A fixed-length run of counter samples from the protected VM, one value per
/// sub-window (e.g. LLC accesses per 10 ms).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleWindow {
    pub values: Vec<f64>,
    pub kind: WindowKind,
    /// Simulated time at which collection finished, in ms.
    pub collected_at_ms: f64,
}

impl SampleWindow {
    pub fn new(values: Vec<f64>, kind: WindowKind, collected_at_ms: f64) -> Result<Self, KsError> {
        if values.len() < 2 {
            return Err(KsError::WindowTooShort(values.len()));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(KsError::NonFiniteValue(i));
            }
            if *v < 0.0 {
                return Err(KsError::NegativeValue(i));
            }
        }
        Ok(SampleWindow { values, kind, collected_at_ms })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

/// Outcome of one two-sample test: the statistic, the threshold it was held
/// against, and the verdict.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KsDecision {
    pub statistic: f64,
    pub critical: f64,
    pub alpha: f64,
    pub verdict: Verdict,
}

/// An empirical distribution function: F(x) = (# samples <= x) / n.
#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(values: &[f64]) -> Result<Self, KsError> {
        if values.is_empty() {
            return Err(KsError::Empty);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
        Ok(Ecdf { sorted })
    }

    /// F(x), right-continuous.
    pub fn eval(&self, x: f64) -> f64 {
        // partition_point gives the count of samples <= x.
        let le = self.sorted.partition_point(|v| *v <= x);
        le as f64 / self.sorted.len() as f64
    }

    /// Left limit F(x-) = (# samples < x) / n.
    pub fn eval_left(&self, x: f64) -> f64 {
        let lt = self.sorted.partition_point(|v| *v < x);
        lt as f64 / self.sorted.len() as f64
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }
}

/// Builds the empirical CDF of `values`.
pub fn ecdf(values: &[f64]) -> Result<Ecdf, KsError> {
    Ecdf::new(values)
}

/// The two-sample KS statistic D = sup |F_M - F_R|, evaluated by a merge walk
/// over both sorted samples. At each distinct value the gap is taken both just
/// before (left limits) and at the value itself, so tied and discrete data are
/// handled exactly.
pub fn ks_statistic(monitored: &SampleWindow, reference: &SampleWindow) -> f64 {
    let mut m = monitored.values.clone();
    let mut r = reference.values.clone();
    m.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    r.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));

    let (nm, nr) = (m.len() as f64, r.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;

    while i < m.len() || j < r.len() {
        let x = match (m.get(i), r.get(j)) {
            (Some(a), Some(b)) => a.min(*b),
            (Some(a), None) => *a,
            (None, Some(b)) => *b,
            (None, None) => unreachable!(),
        };
        // Gap just below x (left limits on both sides).
        d = d.max((i as f64 / nm - j as f64 / nr).abs());
        // Advance past every sample equal to x on both sides.
        while i < m.len() && m[i] == x {
            i += 1;
        }
        while j < r.len() && r[j] == x {
            j += 1;
        }
        // Gap at x itself.
        d = d.max((i as f64 / nm - j as f64 / nr).abs());
    }
    d
}

/// Critical value for rejecting the same-distribution hypothesis at
/// confidence 1 - alpha (asymptotic two-sample form).
pub fn ks_critical(n_m: usize, n_r: usize, alpha: f64) -> Result<f64, KsError> {
    if n_m == 0 || n_r == 0 {
        return Err(KsError::BadSampleCount(n_m, n_r));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(KsError::BadAlpha(alpha));
    }
    let (nm, nr) = (n_m as f64, n_r as f64);
    Ok(((nm + nr) / (nm * nr)).sqrt() * (-0.5 * (alpha / 2.0).ln()).sqrt())
}

/// Runs the complete test: statistic, critical value, verdict.
pub fn ks_decide(
    monitored: &SampleWindow,
    reference: &SampleWindow,
    alpha: f64,
) -> Result<KsDecision, KsError> {
    let statistic = ks_statistic(monitored, reference);
    let critical = ks_critical(monitored.len(), reference.len(), alpha)?;
    let verdict = if statistic > critical { Verdict::Reject } else { Verdict::Accept };
    Ok(KsDecision { statistic, critical, alpha, verdict })
}
