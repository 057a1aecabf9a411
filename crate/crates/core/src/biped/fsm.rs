use serde::{Deserialize, Serialize};

use super::Leg;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsmSchedule {
    pub single_support: f64,
    pub double_support: f64,
}

impl Default for FsmSchedule {
    fn default() -> Self {
        Self {
            single_support: 0.35,
            double_support: 0.0,
        }
    }
}

impl FsmSchedule {
    pub fn step_duration(&self) -> f64 {
        self.single_support + self.double_support
    }

    /// Stance leg of footstep `k`. Step 0 stands on the left leg.
    pub fn stance_leg(step_index: usize) -> Leg {
        if step_index.is_multiple_of(2) {
            Leg::Left
        } else {
            Leg::Right
        }
    }

    /// Start time of footstep `k`.
    pub fn step_start(&self, step_index: usize) -> f64 {
        step_index as f64 * self.step_duration()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FsmMode {
    LeftSupport,
    RightSupport,
    DoubleSupport,
}

impl FsmMode {
    pub fn stance_leg(self) -> Option<Leg> {
        match self {
            FsmMode::LeftSupport => Some(Leg::Left),
            FsmMode::RightSupport => Some(Leg::Right),
            FsmMode::DoubleSupport => None,
        }
    }

    fn single(leg: Leg) -> Self {
        match leg {
            Leg::Left => FsmMode::LeftSupport,
            Leg::Right => FsmMode::RightSupport,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FsmState {
    pub mode: FsmMode,
    /// Normalized progress through the current mode, in `[0, 1)`.
    pub phase: f64,
    pub time_in_mode: f64,
    pub step_index: usize,
}

const TIME_EPS: f64 = 1e-9;

/// Gait phase at time `t` (seconds since walking started). Each footstep is
/// single support on one leg followed by an optional double-support interval.
pub fn fsm_state(t: f64, schedule: &FsmSchedule) -> FsmState {
    let period = schedule.step_duration();
    let t = t.max(0.0);
    // Nudge by an epsilon so exact multiples of the period land on the new step.
    let step_index = ((t + TIME_EPS) / period).floor() as usize;
    let local = (t - step_index as f64 * period).max(0.0);
    let leg = FsmSchedule::stance_leg(step_index);
    if local < schedule.single_support - TIME_EPS || schedule.double_support <= 0.0 {
        FsmState {
            mode: FsmMode::single(leg),
            phase: (local / schedule.single_support).clamp(0.0, 1.0 - f64::EPSILON),
            time_in_mode: local,
            step_index,
        }
    } else {
        let in_ds = (local - schedule.single_support).max(0.0);
        FsmState {
            mode: FsmMode::DoubleSupport,
            phase: (in_ds / schedule.double_support).clamp(0.0, 1.0 - f64::EPSILON),
            time_in_mode: in_ds,
            step_index,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_support_alternation() {
        let s = FsmSchedule::default();
        let a = fsm_state(0.0, &s);
        assert_eq!(a.mode, FsmMode::LeftSupport);
        assert_eq!(a.step_index, 0);
        let b = fsm_state(0.35, &s);
        assert_eq!(b.mode, FsmMode::RightSupport);
        assert_eq!(b.step_index, 1);
        assert!(b.phase.abs() < 1e-9);
        let c = fsm_state(0.7 - 1e-12, &s);
        assert_eq!(c.step_index, 2);
        let d = fsm_state(0.5, &s);
        assert!((d.phase - 0.15 / 0.35).abs() < 1e-12);
        // accumulated float time still lands on the right step
        let mut t = 0.0;
        for _ in 0..350 {
            t += 0.001;
        }
        assert_eq!(fsm_state(t, &s).step_index, 1);
    }

    #[test]
    fn double_support_interval() {
        let s = FsmSchedule {
            single_support: 0.3,
            double_support: 0.1,
        };
        assert_eq!(fsm_state(0.29, &s).mode, FsmMode::LeftSupport);
        let ds = fsm_state(0.35, &s);
        assert_eq!(ds.mode, FsmMode::DoubleSupport);
        assert!((ds.phase - 0.5).abs() < 1e-9);
        assert_eq!(fsm_state(0.41, &s).mode, FsmMode::RightSupport);
    }
}
