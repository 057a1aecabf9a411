//! CSV writers for rollout traces and cost landscapes.

use std::io::Write;

use crate::biped::FsmMode;
use crate::error::Result;
use crate::rollout::{LandscapeGrid, RolloutTrace};

pub fn trace_header() -> Vec<String> {
    let mut h = vec!["tick".to_string(), "t".to_string()];
    h.extend((0..7).map(|i| format!("q{i}")));
    h.extend((0..7).map(|i| format!("v{i}")));
    h.extend((0..4).map(|i| format!("u{i}")));
    h.extend(["lambda_x", "lambda_z", "fsm_mode", "stride", "h", "r"].map(String::from));
    h
}

fn mode_name(m: FsmMode) -> &'static str {
    match m {
        FsmMode::LeftSupport => "left",
        FsmMode::RightSupport => "right",
        FsmMode::DoubleSupport => "double",
    }
}

pub fn write_trace_csv<W: Write>(out: W, trace: &RolloutTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header())?;
    for t in &trace.ticks {
        let mut row = vec![t.tick.to_string(), t.t.to_string()];
        row.extend(t.state.q.iter().map(|v| v.to_string()));
        row.extend(t.state.v.iter().map(|v| v.to_string()));
        row.extend(t.u.u.iter().map(|v| v.to_string()));
        row.push(t.force[0].to_string());
        row.push(t.force[1].to_string());
        row.push(mode_name(t.mode).to_string());
        row.push(t.achieved[0].to_string());
        row.push(t.h.to_string());
        row.push(t.reward.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_landscape_csv<W: Write>(out: W, grid: &LandscapeGrid) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stride", "incline", "cost_a", "cost_b", "ratio", "label"])?;
    for c in &grid.cells {
        w.write_record([
            c.task.stride_length.to_string(),
            c.task.ground_incline.to_string(),
            opt(c.cost_a),
            opt(c.cost_b),
            opt(c.ratio),
            c.label.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
