use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{CapeError, Result};
use crate::grid::{round_half_down, BinaryMask, Connectivity, GridIndex, Point, ScalarGrid};

/// Per-cell cost `|v|^p`; `p == 2` is evaluated as `v * v`.
#[inline]
pub fn cell_cost(v: f64, exponent: f64) -> f64 {
    if exponent == 2.0 {
        v * v
    } else {
        v.abs().powf(exponent)
    }
}

/// Derivative of [`cell_cost`] with respect to `v`.
#[inline]
pub fn cell_cost_derivative(v: f64, exponent: f64) -> f64 {
    if exponent == 2.0 {
        2.0 * v
    } else if exponent == 1.0 {
        v.signum()
    } else {
        exponent * v.abs().powf(exponent - 1.0) * v.signum()
    }
}

/// Cell sequence through the prediction together with its cost.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelPath {
    pub cells: Vec<GridIndex>,
    pub cost: f64,
}

/// `Σ pred(n)^exponent` over the given cells.
pub fn path_cost(pred: &ScalarGrid, cells: &[GridIndex], exponent: f64) -> f64 {
    cells
        .iter()
        .map(|&c| cell_cost(pred.get(c), exponent))
        .sum()
}

/// Cell with the smallest prediction inside the `(2r+1)^d` window centred on
/// the rounded position of `v` (clipped to the grid). Ties go to the smallest
/// linear index.
pub fn project_vertex(pred: &ScalarGrid, v: &Point, window_radius: usize) -> GridIndex {
    let shape = pred.shape();
    let dims = shape.dims();
    let r = window_radius as i64;
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let c = round_half_down(v[a]).clamp(0, dims[a] as i64 - 1);
        lo[a] = (c - r).max(0) as usize;
        hi[a] = (c + r).min(dims[a] as i64 - 1) as usize;
    }
    let mut best = GridIndex(lo);
    let mut best_v = f64::INFINITY;
    for z in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            for x in lo[2]..=hi[2] {
                let idx = GridIndex([z, y, x]);
                let val = pred.get(idx);
                if val < best_v {
                    best_v = val;
                    best = idx;
                }
            }
        }
    }
    best
}

/// Nearest set cell of `mask` (Euclidean, ties to the smallest linear index).
pub(crate) fn snap_into_mask(mask: &BinaryMask, idx: GridIndex) -> Option<GridIndex> {
    if mask.get(idx) {
        return Some(idx);
    }
    let shape = mask.shape();
    let c = idx.0;
    mask.ones()
        .map(|i| {
            let o = shape.index(i).0;
            let d2: usize = (0..3).map(|a| c[a].abs_diff(o[a]).pow(2)).sum();
            (d2, i)
        })
        .min()
        .map(|(_, i)| shape.index(i))
}

#[derive(PartialEq)]
struct Frontier {
    cost: f64,
    cell: usize,
    seq: u64,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // BinaryHeap is a max-heap: reverse every key for (cost, cell, seq) ascending.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.cell.cmp(&self.cell))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Node-weighted shortest path restricted to the cells of `mask`.
///
/// Entering a cell costs `pred(cell)^exponent`; the start cell is charged
/// once. Endpoints outside the mask are first snapped to the nearest mask
/// cell.
pub fn masked_grid_dijkstra(
    pred: &ScalarGrid,
    mask: &BinaryMask,
    start: GridIndex,
    end: GridIndex,
    exponent: f64,
    connectivity: Connectivity,
) -> Result<PixelPath> {
    let shape = pred.shape();
    mask.ensure_same_shape(shape)?;
    let disconnected = || CapeError::MaskDisconnection {
        start: start.coords(shape.ndim()),
        end: end.coords(shape.ndim()),
    };
    let start = snap_into_mask(mask, start).ok_or_else(disconnected)?;
    let end = snap_into_mask(mask, end).ok_or_else(disconnected)?;

    let offsets = shape.neighbor_offsets(connectivity);
    let n = shape.len();
    let (s, t) = (shape.linear(start), shape.linear(end));
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    dist[s] = cell_cost(pred.data()[s], exponent);
    heap.push(Frontier {
        cost: dist[s],
        cell: s,
        seq,
    });
    while let Some(Frontier { cost, cell, .. }) = heap.pop() {
        if settled[cell] {
            continue;
        }
        settled[cell] = true;
        if cell == t {
            break;
        }
        let c = shape.index(cell).signed();
        for d in &offsets {
            let nb = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
            if !shape.contains(nb) {
                continue;
            }
            let j = shape.linear(GridIndex([nb[0] as usize, nb[1] as usize, nb[2] as usize]));
            if settled[j] || !mask.get_linear(j) {
                continue;
            }
            let nd = cost + cell_cost(pred.data()[j], exponent);
            if nd < dist[j] {
                dist[j] = nd;
                prev[j] = cell;
                seq += 1;
                heap.push(Frontier {
                    cost: nd,
                    cell: j,
                    seq,
                });
            }
        }
    }
    if !settled[t] {
        return Err(disconnected());
    }
    let mut linear = vec![t];
    while *linear.last().unwrap() != s {
        linear.push(prev[*linear.last().unwrap()]);
    }
    linear.reverse();
    let cells: Vec<GridIndex> = linear.into_iter().map(|i| shape.index(i)).collect();
    let cost = path_cost(pred, &cells, exponent);
    Ok(PixelPath { cells, cost })
}
