//! Initial cluster approximation: a uniform square grid over the surface.
//!
//! The cell side is `λ = min(Λth_S-S, Λth_M-S) / √2`, so any two points of one
//! cell are at most one threshold length apart in the surface plane. Every
//! occupied cell (extended through the full tissue depth) seeds one cluster.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{effective_threshold, ChannelError};
use crate::model::{ClusterState, NodeId, NodeSpec, RelayPlacement, ScenarioConfig, TissueStack};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcapError {
    #[error("no nodes")]
    NoNodes,
    #[error("node out of volume: {0}")]
    NodeOutOfVolume(NodeId),
    #[error("grid size must be positive and finite, got {0}")]
    InvalidGridSize(f64),
    #[error("{node}: {source}")]
    Threshold { node: NodeId, source: ChannelError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cell side `λ`, cm.
    pub lambda: f64,
    /// `X1 + aλ` for `a = 0..=⌈(X2 − X1)/λ⌉`.
    pub x_splits: Vec<f64>,
    /// `Y1 + bλ` for `b = 0..=⌈(Y2 − Y1)/λ⌉`.
    pub y_splits: Vec<f64>,
    /// Cuboid height, the total tissue depth.
    pub height: f64,
    /// Occupied cells, i.e. the initial cluster count.
    pub occupied: usize,
}

impl GridSpec {
    pub fn new(stack: &TissueStack, lambda: f64) -> Result<Self, IcapError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(IcapError::InvalidGridSize(lambda));
        }
        let splits = |lo: f64, hi: f64| -> Vec<f64> {
            let count = ((hi - lo) / lambda).ceil().max(1.0) as usize;
            (0..=count).map(|a| lo + a as f64 * lambda).collect()
        };
        Ok(Self {
            lambda,
            x_splits: splits(stack.x_range[0], stack.x_range[1]),
            y_splits: splits(stack.y_range[0], stack.y_range[1]),
            height: stack.depth(),
            occupied: 0,
        })
    }

    pub fn cells_x(&self) -> usize {
        self.x_splits.len() - 1
    }

    pub fn cells_y(&self) -> usize {
        self.y_splits.len() - 1
    }

    /// Geometric cell count `(|a| − 1)(|b| − 1)`, occupied or not.
    pub fn cell_count(&self) -> usize {
        self.cells_x() * self.cells_y()
    }

    /// Cell holding surface point `(x, y)`. Cells are half-open `[x, x + λ)`
    /// except the last in each direction, which also takes its upper edge.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        Some((
            Self::index(&self.x_splits, self.lambda, x)?,
            Self::index(&self.y_splits, self.lambda, y)?,
        ))
    }

    fn index(splits: &[f64], lambda: f64, v: f64) -> Option<usize> {
        let lo = splits[0];
        let cells = splits.len() - 1;
        if !(v >= lo) || v > splits[cells] {
            return None;
        }
        let mut i = ((v - lo) / lambda).floor() as usize;
        // floating division can land one cell off near a split
        if i > 0 && v < splits[i.min(cells)] {
            i -= 1;
        }
        if i < cells && v >= splits[i + 1] {
            i += 1;
        }
        Some(i.min(cells - 1))
    }

    pub fn cell_bounds(&self, ix: usize, iy: usize) -> ([f64; 2], [f64; 2]) {
        (
            [self.x_splits[ix], self.x_splits[ix + 1]],
            [self.y_splits[iy], self.y_splits[iy + 1]],
        )
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> RelayPlacement {
        let (xs, ys) = self.cell_bounds(ix, iy);
        RelayPlacement::new(0.5 * (xs[0] + xs[1]), 0.5 * (ys[0] + ys[1]))
    }
}

/// `λ = min(Λth_S-S, Λth_M-S) / √2`.
pub fn grid_size(threshold_ss: f64, threshold_ms: f64) -> f64 {
    threshold_ss.min(threshold_ms) / SQRT_2
}

/// Network-wide threshold lengths `(S-S, M-S)`: the minimum over surface nodes
/// and over implants respectively. A path with no nodes reports infinity.
pub fn network_thresholds(nodes: &[NodeSpec], config: &ScenarioConfig) -> Result<(f64, f64), IcapError> {
    let mut ss = f64::INFINITY;
    let mut ms = f64::INFINITY;
    for n in nodes {
        let th = effective_threshold(config, n).map_err(|source| IcapError::Threshold { node: n.id, source })?;
        if n.is_implant() {
            ms = ms.min(th);
        } else {
            ss = ss.min(th);
        }
    }
    Ok((ss, ms))
}

/// Assigns every node to its enclosing cell. Empty cells produce no cluster;
/// each cluster's relay starts at its cell centre and `NL` ends empty.
pub fn partition(
    nodes: &[NodeSpec],
    stack: &TissueStack,
    lambda: f64,
) -> Result<(GridSpec, ClusterState), IcapError> {
    let mut grid = GridSpec::new(stack, lambda)?;
    let mut cells: BTreeMap<(usize, usize), Vec<NodeId>> = BTreeMap::new();
    for n in nodes {
        if !stack.contains_surface(n.x, n.y) {
            return Err(IcapError::NodeOutOfVolume(n.id));
        }
        let (ix, iy) = grid.cell_of(n.x, n.y).ok_or(IcapError::NodeOutOfVolume(n.id))?;
        // row-major order: y then x
        cells.entry((iy, ix)).or_default().push(n.id);
    }
    let mut state = ClusterState::new();
    for ((iy, ix), members) in cells {
        state.push_cluster(members, grid.cell_center(ix, iy));
    }
    grid.occupied = state.k();
    Ok((grid, state))
}

/// Convenience wrapper: thresholds, grid size and partition in one call.
pub fn run_icap(
    nodes: &[NodeSpec],
    stack: &TissueStack,
    config: &ScenarioConfig,
) -> Result<(GridSpec, ClusterState), IcapError> {
    if nodes.is_empty() {
        return Err(IcapError::NoNodes);
    }
    let (ss, ms) = network_thresholds(nodes, config)?;
    partition(nodes, stack, grid_size(ss, ms))
}
