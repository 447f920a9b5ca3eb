// SPDX-License-Identifier: Apache-2.0

//! Power-distribution network: a uniform 2-D resistive mesh whose perimeter
//! nodes are tied to the external supply, plus a first-order per-node
//! inductive term for current steps.
//!
//! The solver works on node drops `d = v_supply - v`, so a network with no
//! load converges in zero sweeps and returns `v_supply` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Node {
    pub row: usize,
    pub col: usize,
}

impl Node {
    pub const fn new(row: usize, col: usize) -> Self {
        Node { row, col }
    }

    pub fn manhattan(self, other: Node) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    pub fn euclidean(self, other: Node) -> f64 {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        dr.hypot(dc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Resistance between adjacent nodes (ohm).
    #[serde(default = "GridSpec::default_r_mesh")]
    pub r_mesh: f64,
    /// Resistance from each perimeter node to the supply (ohm).
    #[serde(default = "GridSpec::default_r_supply")]
    pub r_supply: f64,
    /// Effective inductance per node (henry).
    #[serde(default = "GridSpec::default_l_node")]
    pub l_node: f64,
    #[serde(default = "GridSpec::default_v_supply")]
    pub v_supply: f64,
}

impl GridSpec {
    fn default_r_mesh() -> f64 {
        0.05
    }
    fn default_r_supply() -> f64 {
        0.1
    }
    fn default_l_node() -> f64 {
        0.5e-9
    }
    fn default_v_supply() -> f64 {
        1.33
    }

    /// Grid with the default calibration constants.
    pub fn with_defaults(rows: usize, cols: usize) -> Self {
        GridSpec {
            rows,
            cols,
            r_mesh: Self::default_r_mesh(),
            r_supply: Self::default_r_supply(),
            l_node: Self::default_l_node(),
            v_supply: Self::default_v_supply(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::input(format!(
                "grid must have rows >= 1 and cols >= 1, got {}x{}",
                self.rows, self.cols
            )));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::input(format!("grid.{name} must be > 0, got {v}")))
            }
        };
        positive("r_mesh", self.r_mesh)?;
        positive("r_supply", self.r_supply)?;
        positive("v_supply", self.v_supply)?;
        if !(self.l_node.is_finite() && self.l_node >= 0.0) {
            return Err(Error::input(format!("grid.l_node must be >= 0, got {}", self.l_node)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, node: Node) -> usize {
        node.row * self.cols + node.col
    }

    pub fn node(&self, index: usize) -> Node {
        Node::new(index / self.cols, index % self.cols)
    }

    pub fn contains(&self, node: Node) -> bool {
        node.row < self.rows && node.col < self.cols
    }

    /// Perimeter nodes carry one supply tap each.
    pub fn is_boundary(&self, node: Node) -> bool {
        node.row == 0 || node.col == 0 || node.row + 1 == self.rows || node.col + 1 == self.cols
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = (i / self.cols, i % self.cols);
        let up = (r > 0).then(|| i - self.cols);
        let down = (r + 1 < self.rows).then(|| i + self.cols);
        let left = (c > 0).then(|| i - 1);
        let right = (c + 1 < self.cols).then(|| i + 1);
        [up, down, left, right].into_iter().flatten()
    }
}

/// Per-node drawn current (ampere), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentMap {
    pub rows: usize,
    pub cols: usize,
    pub currents: Vec<f64>,
}

impl CurrentMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CurrentMap { rows, cols, currents: vec![0.0; rows * cols] }
    }

    pub fn for_grid(grid: &GridSpec) -> Self {
        Self::zeros(grid.rows, grid.cols)
    }

    pub fn get(&self, node: Node) -> f64 {
        self.currents[node.row * self.cols + node.col]
    }

    pub fn add_at(&mut self, node: Node, amps: f64) {
        self.currents[node.row * self.cols + node.col] += amps;
    }

    pub fn total(&self) -> f64 {
        self.currents.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.currents.iter().all(|&i| i == 0.0)
    }

    /// Element-wise sum; stimuli superpose linearly.
    pub fn accumulate(&mut self, other: &CurrentMap) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.currents.iter_mut().zip(&other.currents) {
            *a += b;
        }
    }

    pub fn scaled(&self, k: f64) -> CurrentMap {
        CurrentMap { rows: self.rows, cols: self.cols, currents: self.currents.iter().map(|i| i * k).collect() }
    }

    fn check(&self, grid: &GridSpec) -> Result<()> {
        if self.rows != grid.rows || self.cols != grid.cols || self.currents.len() != grid.len() {
            return Err(Error::input(format!(
                "current map is {}x{} but grid is {}x{}",
                self.rows, self.cols, grid.rows, grid.cols
            )));
        }
        if let Some((i, v)) = self.currents.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::input(format!(
                "load current at node {:?} must be finite and >= 0, got {v}",
                grid.node(i)
            )));
        }
        Ok(())
    }
}

/// Node voltages at one simulation instant.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageField {
    pub rows: usize,
    pub cols: usize,
    pub voltages: Vec<f64>,
    pub timestamp: f64,
}

impl VoltageField {
    pub fn uniform(grid: &GridSpec, v: f64) -> Self {
        VoltageField { rows: grid.rows, cols: grid.cols, voltages: vec![v; grid.len()], timestamp: 0.0 }
    }

    pub fn at(&self, node: Node) -> f64 {
        self.voltages[node.row * self.cols + node.col]
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.timestamp = t;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop when `max|residual| / max|load|` falls to this level.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Successive over-relaxation factor in (0, 2); `None` picks one from the grid size.
    pub relaxation: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tolerance: 1e-12, max_iterations: 100_000, relaxation: None }
    }
}

/// Steady-state node voltages for the given loads.
pub fn solve_dc(grid: &GridSpec, loads: &CurrentMap) -> Result<VoltageField> {
    solve_dc_with(grid, loads, &SolverConfig::default())
}

pub fn solve_dc_with(grid: &GridSpec, loads: &CurrentMap, cfg: &SolverConfig) -> Result<VoltageField> {
    grid.validate()?;
    loads.check(grid)?;
    let drops = solve_drops(grid, &loads.currents, cfg)?;
    Ok(VoltageField {
        rows: grid.rows,
        cols: grid.cols,
        voltages: drops.iter().map(|d| grid.v_supply - d).collect(),
        timestamp: 0.0,
    })
}

/// Gauss-Seidel with over-relaxation on `A d = I`, where `A` is the nodal
/// conductance matrix of the mesh plus supply taps.
fn solve_drops(grid: &GridSpec, loads: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
    let n = grid.len();
    let g_mesh = 1.0 / grid.r_mesh;
    let g_tap = 1.0 / grid.r_supply;
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let taps = if grid.is_boundary(grid.node(i)) { g_tap } else { 0.0 };
            grid.neighbours(i).count() as f64 * g_mesh + taps
        })
        .collect();
    let neighbours: Vec<Vec<usize>> = (0..n).map(|i| grid.neighbours(i).collect()).collect();

    let scale = loads.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut d = vec![0.0; n];
    if scale == 0.0 {
        return Ok(d);
    }
    let omega = cfg.relaxation.unwrap_or_else(|| {
        let span = grid.rows.max(grid.cols) as f64;
        2.0 / (1.0 + (std::f64::consts::PI / (span + 1.0)).sin())
    });

    let residual = |d: &[f64]| {
        (0..n)
            .map(|i| {
                let coupled: f64 = neighbours[i].iter().map(|&j| d[j]).sum();
                (loads[i] + g_mesh * coupled - diag[i] * d[i]).abs()
            })
            .fold(0.0f64, f64::max)
            / scale
    };

    let mut res = f64::INFINITY;
    for iteration in 0..cfg.max_iterations {
        for i in 0..n {
            let coupled: f64 = neighbours[i].iter().map(|&j| d[j]).sum();
            let gs = (loads[i] + g_mesh * coupled) / diag[i];
            d[i] += omega * (gs - d[i]);
        }
        // The residual sweep costs as much as a relaxation sweep; check every fourth.
        if iteration % 4 == 3 {
            res = residual(&d);
            if res <= cfg.tolerance {
                return Ok(d);
            }
        }
    }
    res = res.min(residual(&d));
    if res <= cfg.tolerance {
        return Ok(d);
    }
    Err(Error::Convergence { iterations: cfg.max_iterations, residual: res })
}

/// DC solve for `new_loads` plus an inductive drop `l_node * di/dt` per node,
/// clamped at 0 V.
pub fn transient_step(
    grid: &GridSpec,
    prev_loads: &CurrentMap,
    new_loads: &CurrentMap,
    dt: f64,
) -> Result<VoltageField> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::input(format!("transient step dt must be > 0, got {dt}")));
    }
    prev_loads.check(grid)?;
    let mut field = solve_dc(grid, new_loads)?;
    if grid.l_node > 0.0 {
        for ((v, new), prev) in field.voltages.iter_mut().zip(&new_loads.currents).zip(&prev_loads.currents) {
            let di = new - prev;
            if di != 0.0 {
                *v = (*v - grid.l_node * di / dt).max(0.0);
            }
        }
    }
    Ok(field)
}

/// Drop at every node per ampere drawn uniformly over `region`.
pub fn transfer_drops(grid: &GridSpec, region: &[Node]) -> Result<Vec<f64>> {
    if region.is_empty() {
        return Err(Error::input("transfer region is empty"));
    }
    let mut unit = CurrentMap::for_grid(grid);
    let share = 1.0 / region.len() as f64;
    for &node in region {
        if !grid.contains(node) {
            return Err(Error::input(format!("region node {node:?} outside grid")));
        }
        unit.add_at(node, share);
    }
    let field = solve_dc(grid, &unit)?;
    Ok(field.voltages.iter().map(|v| grid.v_supply - v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> GridSpec {
        GridSpec { rows: 3, cols: 3, r_mesh: 1.0, r_supply: 1.0, l_node: 0.0, v_supply: 1.0 }
    }

    #[test]
    fn zero_load_is_exact_supply() {
        let g = GridSpec::with_defaults(9, 4);
        let f = solve_dc(&g, &CurrentMap::for_grid(&g)).unwrap();
        assert!(f.voltages.iter().all(|&v| v == g.v_supply));
    }

    #[test]
    fn center_of_3x3_matches_hand_solution() {
        // Corners and edges are tapped; the centre is not. By symmetry every
        // edge midpoint has drop e, every corner drop c, centre drop m:
        //   centre: 4m - 4e = 0.1
        //   edge:   3e + e - m - 2c = 0   (3 mesh links + 1 tap)
        //   corner: 2c + c - 2e = 0       (2 mesh links + 1 tap)
        // => c = 2e/3, 4e - m - 4e/3 = 0 => m = 8e/3, 4(8e/3) - 4e = 0.1
        let e = 0.1 / (32.0 / 3.0 - 4.0);
        let m = 8.0 * e / 3.0;
        let mut loads = CurrentMap::zeros(3, 3);
        loads.add_at(Node::new(1, 1), 0.1);
        let f = solve_dc(&grid3(), &loads).unwrap();
        assert!((f.at(Node::new(1, 1)) - (1.0 - m)).abs() < 1e-12);
        assert!((f.at(Node::new(0, 1)) - (1.0 - e)).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let err = solve_dc(&grid3(), &CurrentMap::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn negative_current_rejected() {
        let mut loads = CurrentMap::zeros(3, 3);
        loads.currents[0] = -1.0;
        assert!(matches!(solve_dc(&grid3(), &loads), Err(Error::Input(_))));
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let g = GridSpec::with_defaults(20, 20);
        let mut loads = CurrentMap::for_grid(&g);
        loads.add_at(Node::new(10, 10), 1.0);
        let cfg = SolverConfig { tolerance: 1e-15, max_iterations: 3, relaxation: Some(1.0) };
        match solve_dc_with(&g, &loads, &cfg) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-15);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn transient_identity_when_loads_unchanged() {
        let g = GridSpec::with_defaults(4, 4);
        let mut loads = CurrentMap::for_grid(&g);
        loads.add_at(Node::new(1, 2), 0.3);
        let dc = solve_dc(&g, &loads).unwrap();
        let tr = transient_step(&g, &loads, &loads, 1e-9).unwrap();
        assert_eq!(dc.voltages, tr.voltages);
    }

    #[test]
    fn transient_step_adds_l_di_dt() {
        let g = GridSpec { l_node: 1e-9, ..GridSpec::with_defaults(2, 2) };
        let prev = CurrentMap::for_grid(&g);
        let mut new = CurrentMap::for_grid(&g);
        new.add_at(Node::new(0, 0), 0.010);
        let dc = solve_dc(&g, &new).unwrap();
        let tr = transient_step(&g, &prev, &new, 1e-9).unwrap();
        let extra = dc.at(Node::new(0, 0)) - tr.at(Node::new(0, 0));
        assert!((extra - 0.010).abs() < 1e-12, "extra drop {extra}");
        assert_eq!(dc.at(Node::new(1, 1)), tr.at(Node::new(1, 1)));
    }

    #[test]
    fn transient_clamps_at_zero() {
        let g = GridSpec { l_node: 1e-6, ..GridSpec::with_defaults(2, 2) };
        let prev = CurrentMap::for_grid(&g);
        let mut new = CurrentMap::for_grid(&g);
        new.add_at(Node::new(0, 0), 1.0);
        let tr = transient_step(&g, &prev, &new, 1e-9).unwrap();
        assert_eq!(tr.at(Node::new(0, 0)), 0.0);
    }

    #[test]
    fn transient_rejects_non_positive_dt() {
        let g = GridSpec::with_defaults(2, 2);
        let m = CurrentMap::for_grid(&g);
        assert!(matches!(transient_step(&g, &m, &m, 0.0), Err(Error::Input(_))));
        assert!(matches!(transient_step(&g, &m, &m, -1.0), Err(Error::Input(_))));
    }

    #[test]
    fn single_node_grid_is_tapped() {
        let g = GridSpec { rows: 1, cols: 1, r_mesh: 1.0, r_supply: 0.5, l_node: 0.0, v_supply: 1.0 };
        let mut loads = CurrentMap::zeros(1, 1);
        loads.currents[0] = 0.2;
        let f = solve_dc(&g, &loads).unwrap();
        assert!((f.voltages[0] - 0.9).abs() < 1e-12);
    }
}
