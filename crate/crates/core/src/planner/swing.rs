/// Swing-foot sample in ground coordinates `(along, height)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingSample {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub acc: [f64; 2],
}

fn smoothstep3(t: f64) -> [f64; 3] {
    [t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t), 6.0 - 12.0 * t]
}

/// Swing trajectory from `start` to `target` (ground coordinates).
/// Derivatives are with respect to phase; pass `duration` > 0 to get time
/// derivatives instead.
///
/// The along-ground motion is a minimum-jerk quintic; the height rises to
/// `apex_height` at mid-phase and lands with zero vertical velocity.
pub fn swing_foot_trajectory(
    start: [f64; 2],
    target: [f64; 2],
    apex_height: f64,
    phase: f64,
    duration: Option<f64>,
) -> SwingSample {
    let s = phase.clamp(0.0, 1.0);
    let (s2, s3) = (s * s, s * s * s);
    let blend = [
        s3 * (10.0 - 15.0 * s + 6.0 * s2),
        30.0 * s2 * (1.0 - s) * (1.0 - s),
        60.0 * s - 180.0 * s2 + 120.0 * s3,
    ];
    let dx = target[0] - start[0];
    let (h0, h1, scale) = if s < 0.5 {
        (start[1], apex_height, 2.0 * s)
    } else {
        (apex_height, target[1], 2.0 * s - 1.0)
    };
    let b = smoothstep3(scale);
    let dh = h1 - h0;
    let mut out = SwingSample {
        pos: [start[0] + dx * blend[0], h0 + dh * b[0]],
        vel: [dx * blend[1], 2.0 * dh * b[1]],
        acc: [dx * blend[2], 4.0 * dh * b[2]],
    };
    if let Some(t) = duration {
        for i in 0..2 {
            out.vel[i] /= t;
            out.acc[i] /= t * t;
        }
    }
    out
}
