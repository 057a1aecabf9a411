//! Discretized task set that grows around successful tasks.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;

/// Integer grid coordinates `(stride index, incline index)`.
pub type Cell = (i64, i64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub stride_step: f64,
    pub incline_step: f64,
    pub stride_bounds: [f64; 2],
    pub incline_bounds: [f64; 2],
    pub initial_strides: Vec<f64>,
    pub initial_inclines: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            stride_step: 0.1,
            incline_step: 0.1,
            stride_bounds: [-0.2, 0.5],
            incline_bounds: [-0.3, 0.3],
            initial_strides: vec![-0.1, 0.0, 0.1, 0.2],
            initial_inclines: vec![0.0],
        }
    }
}

const SNAP: f64 = 1e-6;

fn snap(value: f64, step: f64, field: &str) -> Result<i64> {
    let k = (value / step).round();
    if (k * step - value).abs() > SNAP * step.max(1.0) {
        return Err(Error::config(
            field,
            format!("{value} is not a multiple of the grid step {step}"),
        ));
    }
    Ok(k as i64)
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, step) in [("stride_step", self.stride_step), ("incline_step", self.incline_step)] {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {step}")));
            }
        }
        for (name, b) in [
            ("stride_bounds", self.stride_bounds),
            ("incline_bounds", self.incline_bounds),
        ] {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] <= b[1]) {
                return Err(Error::config(
                    name,
                    format!("expected [low, high] with low <= high, got {b:?}"),
                ));
            }
        }
        if self.initial_strides.is_empty() || self.initial_inclines.is_empty() {
            return Err(Error::config("initial_strides", "initial task set is empty"));
        }
        for &s in &self.initial_strides {
            snap(s, self.stride_step, "initial_strides")?;
            if !within(s, self.stride_bounds, self.stride_step) {
                return Err(Error::config(
                    "initial_strides",
                    format!("{s} lies outside the stride bounds"),
                ));
            }
        }
        for &g in &self.initial_inclines {
            snap(g, self.incline_step, "initial_inclines")?;
            if !within(g, self.incline_bounds, self.incline_step) {
                return Err(Error::config(
                    "initial_inclines",
                    format!("{g} lies outside the incline bounds"),
                ));
            }
        }
        Ok(())
    }
}

fn within(value: f64, bounds: [f64; 2], step: f64) -> bool {
    value >= bounds[0] - SNAP * step && value <= bounds[1] + SNAP * step
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGrid {
    pub spec: GridSpec,
    pub active: BTreeSet<Cell>,
    /// Cells whose most recent evaluation succeeded.
    pub successful: BTreeSet<Cell>,
}

impl TaskGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let mut active = BTreeSet::new();
        for &s in &spec.initial_strides {
            for &g in &spec.initial_inclines {
                active.insert((
                    snap(s, spec.stride_step, "initial_strides")?,
                    snap(g, spec.incline_step, "initial_inclines")?,
                ));
            }
        }
        Ok(Self {
            spec,
            active,
            successful: BTreeSet::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn task(&self, cell: Cell) -> Task {
        Task::new(
            cell.0 as f64 * self.spec.stride_step,
            cell.1 as f64 * self.spec.incline_step,
        )
    }

    pub fn cell_of(&self, task: Task) -> Result<Cell> {
        Ok((
            snap(task.stride_length, self.spec.stride_step, "stride_length")?,
            snap(task.ground_incline, self.spec.incline_step, "ground_incline")?,
        ))
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        let t = self.task(cell);
        within(t.stride_length, self.spec.stride_bounds, self.spec.stride_step)
            && within(t.ground_incline, self.spec.incline_bounds, self.spec.incline_step)
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.active.iter().map(|&c| self.task(c)).collect()
    }

    /// Records the outcome of the latest evaluation of `cell`.
    pub fn record(&mut self, cell: Cell, success: bool) {
        if success {
            self.successful.insert(cell);
        } else {
            self.successful.remove(&cell);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.active.is_empty() {
            return Err(Error::Parse("task grid has no active cells".into()));
        }
        if let Some(c) = self.active.iter().find(|&&c| !self.in_bounds(c)) {
            return Err(Error::Parse(format!("active cell {c:?} lies outside the grid bounds")));
        }
        if !self.successful.is_subset(&self.active) {
            return Err(Error::Parse("success flags refer to inactive cells".into()));
        }
        Ok(())
    }
}

/// Number of tasks drawn per iteration: `max(1, floor(ρ |Γ|))`.
pub fn task_count(rho: f64, grid_size: usize) -> usize {
    // The small slack keeps products like 0.1 * 30 from rounding down to 2.
    ((rho * grid_size as f64 + 1e-9).floor() as usize).clamp(1, grid_size.max(1))
}

/// Distinct active cells drawn uniformly without replacement, in grid order.
pub fn sample_cells<R: Rng + ?Sized>(grid: &TaskGrid, rho: f64, rng: &mut R) -> Vec<Cell> {
    let cells: Vec<Cell> = grid.active.iter().cloned().collect();
    let n = task_count(rho, cells.len());
    let mut picked = rand::seq::index::sample(rng, cells.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| cells[i]).collect()
}

pub fn sample_tasks<R: Rng + ?Sized>(grid: &TaskGrid, rho: f64, rng: &mut R) -> Vec<Task> {
    sample_cells(grid, rho, rng).into_iter().map(|c| grid.task(c)).collect()
}

/// Adds the in-bounds axis neighbours of every successful cell.
pub fn curriculum_expand(grid: &TaskGrid) -> TaskGrid {
    let mut out = grid.clone();
    for &(i, j) in &grid.successful {
        for n in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
            if grid.in_bounds(n) {
                out.active.insert(n);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn initial_grid() {
        let g = TaskGrid::new(GridSpec::default()).unwrap();
        let strides: Vec<f64> = g.tasks().iter().map(|t| t.stride_length).collect();
        assert_eq!(g.len(), 4);
        for (a, b) in strides.iter().zip([-0.1, 0.0, 0.1, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(g.tasks().iter().all(|t| t.ground_incline == 0.0));
    }

    #[test]
    fn counts() {
        assert_eq!(task_count(0.1, 40), 4);
        assert_eq!(task_count(0.1, 5), 1);
        assert_eq!(task_count(0.1, 30), 3);
        assert_eq!(task_count(1.0, 7), 7);
    }

    #[test]
    fn full_sampling_returns_each_cell_once() {
        let g = TaskGrid::new(GridSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cells = sample_cells(&g, 1.0, &mut rng);
        assert_eq!(cells, g.active.iter().cloned().collect::<Vec<_>>());
    }

    #[test]
    fn expansion_adds_neighbours() {
        let mut g = TaskGrid::new(GridSpec {
            initial_inclines: vec![0.0],
            incline_bounds: [0.0, 0.0],
            ..GridSpec::default()
        })
        .unwrap();
        let cells: Vec<Cell> = g.active.iter().cloned().collect();
        for c in cells {
            g.record(c, true);
        }
        let e = curriculum_expand(&g);
        let strides: Vec<i64> = e.active.iter().map(|c| c.0).collect();
        assert_eq!(strides, vec![-2, -1, 0, 1, 2, 3]);

        let none = TaskGrid::new(GridSpec::default()).unwrap();
        assert_eq!(curriculum_expand(&none), none);
    }

    #[test]
    fn bound_clipping() {
        let mut g = TaskGrid::new(GridSpec {
            initial_strides: vec![0.5],
            initial_inclines: vec![0.3],
            ..GridSpec::default()
        })
        .unwrap();
        g.record((5, 3), true);
        let e = curriculum_expand(&g);
        let expected: BTreeSet<Cell> = [(5, 3), (4, 3), (5, 2)].into_iter().collect();
        assert_eq!(e.active, expected);
    }

    #[test]
    fn off_grid_values_rejected() {
        let spec = GridSpec {
            initial_strides: vec![0.05],
            ..GridSpec::default()
        };
        assert!(TaskGrid::new(spec).is_err());
        let spec = GridSpec {
            stride_step: 0.0,
            ..GridSpec::default()
        };
        assert!(TaskGrid::new(spec).is_err());
    }
}
