use serde::{Deserialize, Serialize};

use super::{FootstepSummary, RolloutTrace};
use crate::error::{Error, Result};

/// Windowed variation limits for admitting a steady gait.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeriodicityCriteria {
    pub stride_range: f64,
    pub height_range: f64,
    pub pitch_range: f64,
    pub window: usize,
}

impl Default for PeriodicityCriteria {
    fn default() -> Self {
        Self {
            stride_range: 0.02,
            height_range: 0.03,
            pitch_range: 0.1,
            window: 4,
        }
    }
}

impl PeriodicityCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.stride_range > 0.0 && self.height_range > 0.0 && self.pitch_range > 0.0) {
            return Err(Error::config("gait.stride_range", "thresholds must be positive"));
        }
        if self.window < 1 {
            return Err(Error::config("gait.window", "must be at least 1"));
        }
        Ok(())
    }

    pub fn qualifies(&self, window: &[FootstepSummary]) -> bool {
        window.len() == self.window
            && range(window.iter().map(|s| s.stride)) < self.stride_range
            && range(window.iter().map(|s| s.mean_height)) < self.height_range
            && range(window.iter().map(|s| s.mean_pitch)) < self.pitch_range
    }
}

fn range(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaitMetrics {
    /// Index into the trace's footstep list of the window's first step.
    pub first_step: usize,
    pub mean_stride: f64,
    pub mean_speed: f64,
    /// Torque cost per footstep over the window.
    pub cost: f64,
}

/// Σ uᵀu over the window's simulation steps, per footstep.
pub fn episode_cost(window: &[FootstepSummary]) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    window.iter().map(|s| s.torque_sq).sum::<f64>() / window.len() as f64
}

/// Last qualifying window of consecutive footsteps, if any.
pub fn extract_periodic_gait(trace: &RolloutTrace, crit: &PeriodicityCriteria) -> Option<GaitMetrics> {
    extract_from_steps(&trace.footsteps, crit)
}

pub(crate) fn extract_from_steps(steps: &[FootstepSummary], crit: &PeriodicityCriteria) -> Option<GaitMetrics> {
    if steps.len() < crit.window {
        return None;
    }
    (0..=steps.len() - crit.window).rev().find_map(|i| {
        let w = &steps[i..i + crit.window];
        crit.qualifies(w).then(|| GaitMetrics {
            first_step: i,
            mean_stride: w.iter().map(|s| s.stride).sum::<f64>() / w.len() as f64,
            mean_speed: w.iter().map(|s| s.speed()).sum::<f64>() / w.len() as f64,
            cost: episode_cost(w),
        })
    })
}
