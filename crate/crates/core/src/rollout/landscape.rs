use rayon::prelude::*;

use super::{extract_periodic_gait, rollout, PeriodicityCriteria, RolloutSetup, RolloutTrace};
use crate::rom::RomParams;
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellLabel {
    Both,
    GainedByA,
    LostByA,
    Neither,
}

impl CellLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CellLabel::Both => "both",
            CellLabel::GainedByA => "gained_by_a",
            CellLabel::LostByA => "lost_by_a",
            CellLabel::Neither => "neither",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeCell {
    pub task: Task,
    pub cost_a: Option<f64>,
    pub cost_b: Option<f64>,
    pub ratio: Option<f64>,
    pub label: CellLabel,
}

impl LandscapeCell {
    pub fn classify(task: Task, cost_a: Option<f64>, cost_b: Option<f64>) -> Self {
        let (label, ratio) = match (cost_a, cost_b) {
            (Some(a), Some(b)) => (CellLabel::Both, Some(a / b)),
            (Some(_), None) => (CellLabel::GainedByA, None),
            (None, Some(_)) => (CellLabel::LostByA, None),
            (None, None) => (CellLabel::Neither, None),
        };
        Self {
            task,
            cost_a,
            cost_b,
            ratio,
            label,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    pub cells: Vec<LandscapeCell>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeSummary {
    pub mean_ratio: Option<f64>,
    pub region_a: usize,
    pub region_b: usize,
    pub gained: usize,
    pub lost: usize,
    /// `(|A| − |B|) / |B|`.
    pub region_change: Option<f64>,
}

impl LandscapeGrid {
    pub fn summary(&self) -> LandscapeSummary {
        let ratios: Vec<f64> = self.cells.iter().filter_map(|c| c.ratio).collect();
        let count = |l: CellLabel| self.cells.iter().filter(|c| c.label == l).count();
        let both = count(CellLabel::Both);
        let gained = count(CellLabel::GainedByA);
        let lost = count(CellLabel::LostByA);
        let region_a = both + gained;
        let region_b = both + lost;
        LandscapeSummary {
            mean_ratio: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
            region_a,
            region_b,
            gained,
            lost,
            region_change: (region_b > 0).then(|| (region_a as f64 - region_b as f64) / region_b as f64),
        }
    }
}

/// Gait cost of a trace, present only for completed episodes with a
/// qualifying periodic window.
pub fn gait_cost(trace: &RolloutTrace, crit: &PeriodicityCriteria) -> Option<f64> {
    if !trace.completed() {
        return None;
    }
    extract_periodic_gait(trace, crit).map(|g| g.cost)
}

/// Compares two models cell by cell under the same episode settings.
pub fn cost_landscape(
    params_a: &RomParams,
    params_b: &RomParams,
    grid: &[Task],
    setup: &RolloutSetup,
    crit: &PeriodicityCriteria,
) -> LandscapeGrid {
    let cells = grid
        .par_iter()
        .map(|task| {
            let a = gait_cost(&rollout(params_a, *task, setup), crit);
            let b = if params_a == params_b {
                a
            } else {
                gait_cost(&rollout(params_b, *task, setup), crit)
            };
            LandscapeCell::classify(*task, a, b)
        })
        .collect();
    LandscapeGrid { cells }
}
