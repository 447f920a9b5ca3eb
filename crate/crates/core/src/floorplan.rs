// SPDX-License-Identifier: Apache-2.0

//! Sensor placement on the power grid.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdn::{GridSpec, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProPlacement {
    pub id: usize,
    pub row: usize,
    pub col: usize,
}

impl ProPlacement {
    pub fn node(&self) -> Node {
        Node::new(self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Left,
    Right,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Left => "left",
            Region::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChipFloorplan {
    pub rows: usize,
    pub cols: usize,
    pub placements: Vec<ProPlacement>,
}

impl ChipFloorplan {
    /// One sensor per grid node, ids in row-major order.
    pub fn full_grid(rows: usize, cols: usize) -> Self {
        let placements = (0..rows * cols).map(|id| ProPlacement { id, row: id / cols, col: id % cols }).collect();
        ChipFloorplan { rows, cols, placements }
    }

    /// 36 sensors in 9 rows of 4.
    pub fn reference() -> Self {
        Self::full_grid(9, 4)
    }

    pub fn from_placements(grid: &GridSpec, placements: Vec<ProPlacement>) -> Result<Self> {
        let plan = ChipFloorplan { rows: grid.rows, cols: grid.cols, placements };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.placements.is_empty() {
            return Err(Error::Validation("floorplan has no PRO placements".into()));
        }
        let mut ids = BTreeSet::new();
        let mut nodes = BTreeSet::new();
        for p in &self.placements {
            if p.row >= self.rows || p.col >= self.cols {
                return Err(Error::Validation(format!(
                    "PRO {} placed at ({}, {}) outside the {}x{} grid",
                    p.id, p.row, p.col, self.rows, self.cols
                )));
            }
            if !ids.insert(p.id) {
                return Err(Error::Validation(format!("duplicate PRO id {}", p.id)));
            }
            if !nodes.insert(p.node()) {
                return Err(Error::Validation(format!("two PROs placed on node ({}, {})", p.row, p.col)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    /// Region of a column; the middle column of an odd-width grid belongs to neither.
    pub fn region_of(&self, col: usize) -> Option<Region> {
        let twice = 2 * col + 1;
        match twice.cmp(&self.cols) {
            std::cmp::Ordering::Less => Some(Region::Left),
            std::cmp::Ordering::Greater => Some(Region::Right),
            std::cmp::Ordering::Equal => None,
        }
    }

    /// Rows that hold at least one sensor, ascending.
    pub fn occupied_rows(&self) -> Vec<usize> {
        self.placements.iter().map(|p| p.row).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.placements.iter().position(|p| p.id == id)
    }
}

/// Nodes of a rectangular block, inclusive bounds.
pub fn block(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> Vec<Node> {
    rows.flat_map(|r| cols.clone().map(move |c| Node::new(r, c))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_layout() {
        let f = ChipFloorplan::reference();
        assert_eq!(f.len(), 36);
        f.validate().unwrap();
        assert_eq!(f.placements[5].node(), Node::new(1, 1));
        let left = f.placements.iter().filter(|p| f.region_of(p.col) == Some(Region::Left)).count();
        assert_eq!(left, 18);
    }

    #[test]
    fn odd_width_middle_column() {
        let f = ChipFloorplan::full_grid(5, 5);
        assert_eq!(f.region_of(1), Some(Region::Left));
        assert_eq!(f.region_of(2), None);
        assert_eq!(f.region_of(3), Some(Region::Right));
    }

    #[test]
    fn out_of_bounds_placement() {
        let grid = GridSpec::with_defaults(9, 4);
        let err = ChipFloorplan::from_placements(&grid, vec![ProPlacement { id: 0, row: 9, col: 0 }]).unwrap_err();
        assert!(err.to_string().contains("(9, 0)"));
    }

    #[test]
    fn duplicate_nodes_rejected() {
        let grid = GridSpec::with_defaults(2, 2);
        let p = vec![ProPlacement { id: 0, row: 0, col: 0 }, ProPlacement { id: 1, row: 0, col: 0 }];
        assert!(ChipFloorplan::from_placements(&grid, p).is_err());
    }
}
