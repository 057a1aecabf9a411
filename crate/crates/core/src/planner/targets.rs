use serde::{Deserialize, Serialize};

use crate::biped::Leg;
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub kp: f64,
    pub kd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputKind {
    /// World CoM position (2).
    Com,
    /// World swing-foot position (2).
    Foot(Leg),
    /// Torso pitch (1).
    TorsoPitch,
    /// Leg length (1).
    LegLength(Leg),
}

impl OutputKind {
    pub fn dim(self) -> usize {
        match self {
            OutputKind::Com | OutputKind::Foot(_) => 2,
            OutputKind::TorsoPitch | OutputKind::LegLength(_) => 1,
        }
    }
}

/// One output tracked by the OSC. Only the first `kind.dim()` entries of
/// each array are used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackedOutput {
    pub kind: OutputKind,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub acc: [f64; 2],
    pub gains: Gains,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DesiredOutputs {
    pub outputs: Vec<TrackedOutput>,
}

/// `a_ff + Kp (p_des − p) + Kd (v_des − v)`.
pub fn pd_desired_accel(pos_des: f64, vel_des: f64, acc_ff: f64, pos: f64, vel: f64, gains: Gains) -> f64 {
    acc_ff + gains.kp * (pos_des - pos) + gains.kd * (vel_des - vel)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizationTargets {
    pub torso_pitch: f64,
    pub stance_leg_length: f64,
    pub swing_leg_length: f64,
}

impl Default for RegularizationTargets {
    fn default() -> Self {
        Self {
            torso_pitch: 0.0,
            stance_leg_length: 0.8,
            swing_leg_length: 0.75,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetargetOverrides {
    pub torso_pitch: Option<f64>,
    pub stance_leg_length: Option<f64>,
    pub swing_leg_length: Option<f64>,
}

/// Regularization targets for the task, with any overrides applied. The
/// torso is held level regardless of incline.
pub fn regularization_targets(
    _task: &Task,
    base: &RegularizationTargets,
    overrides: Option<&RetargetOverrides>,
) -> RegularizationTargets {
    let mut out = *base;
    if let Some(o) = overrides {
        if let Some(v) = o.torso_pitch {
            out.torso_pitch = v;
        }
        if let Some(v) = o.stance_leg_length {
            out.stance_leg_length = v;
        }
        if let Some(v) = o.swing_leg_length {
            out.swing_leg_length = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pd_examples() {
        let g = Gains { kp: 100.0, kd: 10.0 };
        assert_eq!(pd_desired_accel(0.3, 0.1, 2.0, 0.3, 0.1, g), 2.0);
        assert!((pd_desired_accel(0.01, 0.0, 0.0, 0.0, 0.0, g) - 1.0).abs() < 1e-15);
        let zero = Gains { kp: 0.0, kd: 0.0 };
        assert_eq!(pd_desired_accel(5.0, 3.0, -1.5, 0.0, 0.0, zero), -1.5);
    }

    #[test]
    fn overrides_are_stateless() {
        let task = Task::new(0.1, 0.0);
        let base = RegularizationTargets::default();
        assert_eq!(regularization_targets(&task, &base, None).torso_pitch, 0.0);
        let o = RetargetOverrides {
            torso_pitch: Some(0.3),
            ..Default::default()
        };
        let t = regularization_targets(&task, &base, Some(&o));
        assert_eq!(t.torso_pitch, 0.3);
        assert_eq!(t.stance_leg_length, base.stance_leg_length);
        assert_eq!(regularization_targets(&task, &base, None), base);
    }
}
