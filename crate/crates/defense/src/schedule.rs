use serde::{Deserialize, Serialize};

use crate::DefenseError;

/// Which per-VM counter feeds the sub-window distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorMetric {
    #[default]
    LlcAccesses,
    BytesTransferred,
}

/// Timing and sensitivity knobs for the monitor loop.
///
/// Both sampling windows are cut into `sub_windows` equal slices; each slice
/// contributes one counter delta to the empirical distribution handed to the
/// two-sample test. All intervals are in simulated milliseconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorSchedule {
    /// Length of one reference-collection window.
    pub reference_window_ms: u64,
    /// Length of one monitored window.
    pub monitor_window_ms: u64,
    /// Spacing between the starts of consecutive monitored windows.
    pub monitor_interval_ms: u64,
    /// Maximum age of the reference before it is re-collected.
    pub reference_interval_ms: u64,
    /// Sub-windows (samples) per window.
    pub sub_windows: u32,
    /// Significance level of the distribution test.
    pub alpha: f64,
    /// Rejections in a row required before escalating.
    pub consecutive_rejects: u32,
    /// Duty ratio (sixteenths) imposed on co-tenants while the reference is
    /// collected, and on identified attackers afterwards.
    pub reference_throttle: u8,
    /// Fraction of the monitor interval randomized away per round to make the
    /// sampling instants unpredictable. Zero keeps the cadence fixed.
    pub jitter_fraction: f64,
    /// Counter sampled per sub-window.
    pub metric: MonitorMetric,
}

impl Default for MonitorSchedule {
    fn default() -> Self {
        MonitorSchedule {
            reference_window_ms: 1000,
            monitor_window_ms: 1000,
            monitor_interval_ms: 2000,
            reference_interval_ms: 30_000,
            sub_windows: 100,
            alpha: 0.001,
            consecutive_rejects: 4,
            reference_throttle: 1,
            jitter_fraction: 0.0,
            metric: MonitorMetric::LlcAccesses,
        }
    }
}

impl MonitorSchedule {
    /// Idle time between a duty-ratio change and any window that should
    /// reflect it: cache and bank-buffer residue of the previous regime needs
    /// time to drain (or rebuild) before sampling. Equal to the think time
    /// the normal cadence already has between windows.
    pub fn settle_ms(&self) -> u64 {
        self.monitor_interval_ms - self.monitor_window_ms
    }

    /// Checks internal consistency; every sampling routine assumes this passed.
    pub fn validate(&self) -> Result<(), DefenseError> {
        let bad = |msg: String| Err(DefenseError::InvalidSchedule(msg));
        if self.sub_windows < 2 {
            return bad(format!("need at least 2 sub-windows, got {}", self.sub_windows));
        }
        let n = u64::from(self.sub_windows);
        for (name, ms) in [
            ("reference_window_ms", self.reference_window_ms),
            ("monitor_window_ms", self.monitor_window_ms),
        ] {
            if ms == 0 {
                return bad(format!("{name} must be nonzero"));
            }
            if ms % n != 0 {
                return bad(format!("{name} = {ms} is not divisible by {n} sub-windows"));
            }
        }
        if self.monitor_interval_ms < self.monitor_window_ms {
            return bad(format!(
                "monitor_interval_ms = {} is shorter than the {} ms window",
                self.monitor_interval_ms, self.monitor_window_ms
            ));
        }
        if self.reference_interval_ms < self.monitor_interval_ms {
            return bad(format!(
                "reference_interval_ms = {} is shorter than monitor_interval_ms = {}",
                self.reference_interval_ms, self.monitor_interval_ms
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.consecutive_rejects == 0 {
            return bad("consecutive_rejects must be at least 1".into());
        }
        if !(1..=16).contains(&self.reference_throttle) {
            return bad(format!(
                "reference_throttle must be 1..=16 sixteenths, got {}",
                self.reference_throttle
            ));
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return bad(format!("jitter_fraction must lie in [0, 1), got {}", self.jitter_fraction));
        }
        Ok(())
    }
}
