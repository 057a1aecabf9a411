use serde::{Deserialize, Serialize};

/// Walking command: stride length (m) on a uniform incline (rad).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub stride_length: f64,
    pub ground_incline: f64,
}

impl Task {
    pub fn new(stride_length: f64, ground_incline: f64) -> Self {
        Self {
            stride_length,
            ground_incline,
        }
    }

    /// Commanded walking speed along the ground.
    pub fn speed(&self, step_duration: f64) -> f64 {
        self.stride_length / step_duration
    }

    pub fn tangent(&self) -> [f64; 2] {
        [self.ground_incline.cos(), self.ground_incline.sin()]
    }
}
