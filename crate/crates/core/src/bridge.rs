//! Flat-buffer entry points for host-language bindings.
//!
//! Inputs are a row-major `f32` prediction with its shape, node coordinates
//! flattened `ndim` per node (caller axis order), and edges flattened as
//! index pairs. Nothing is cached between calls.

use crate::cape_loss::{cape_backward, evaluate_plan, plan_paths, CapeConfig, PathPlan};
use crate::error::{CapeError, Result};
use crate::grid::{ScalarGrid, Shape};
use crate::gt_graph::GroundTruthGraph;

pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Builds a graph from flattened node coordinates and edge index pairs.
pub fn graph_from_arrays(ndim: usize, nodes: &[f64], edges: &[u64]) -> Result<GroundTruthGraph> {
    if ndim != 2 && ndim != 3 {
        return Err(CapeError::UnsupportedDimensionality(ndim));
    }
    if nodes.len() % ndim != 0 {
        return Err(CapeError::InvalidGraph(format!(
            "{} node coordinates do not split into {ndim}-tuples",
            nodes.len()
        )));
    }
    if edges.len() % 2 != 0 {
        return Err(CapeError::InvalidGraph(format!(
            "{} edge indices do not split into pairs",
            edges.len()
        )));
    }
    let coords: Vec<Vec<f64>> = nodes.chunks(ndim).map(<[f64]>::to_vec).collect();
    let pairs: Vec<(usize, usize)> = edges
        .chunks(2)
        .map(|e| (e[0] as usize, e[1] as usize))
        .collect();
    GroundTruthGraph::from_coords(ndim, &coords, &pairs)
}

fn grid_from_buffer(pred: &[f32], shape: &[usize]) -> Result<ScalarGrid> {
    let shape = Shape::new(shape)?;
    if pred.len() != shape.len() {
        return Err(CapeError::InvalidGrid(format!(
            "buffer holds {} values but shape {:?} needs {}",
            pred.len(),
            shape.extents(),
            shape.len()
        )));
    }
    ScalarGrid::new(shape, pred.iter().map(|&v| f64::from(v)).collect())
}

/// Paths sampled once and reused across calls, e.g. between the forward
/// and backward halves of an autodiff node.
#[derive(Clone, Debug)]
pub struct PathSet {
    plan: PathPlan,
    cfg: CapeConfig,
}

impl PathSet {
    pub fn new(
        shape: &[usize],
        nodes: &[f64],
        edges: &[u64],
        cfg: &CapeConfig,
        seed: u64,
    ) -> Result<Self> {
        let shape = Shape::new(shape)?;
        let g = graph_from_arrays(shape.ndim(), nodes, edges)?;
        let cfg = CapeConfig {
            seed,
            ..cfg.clone()
        };
        cfg.validate()?;
        Ok(PathSet {
            plan: plan_paths(&g, shape, &cfg)?,
            cfg,
        })
    }

    pub fn len(&self) -> usize {
        self.plan.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plan.paths.is_empty()
    }

    pub fn forward_backward(&self, pred: &[f32], shape: &[usize]) -> Result<(f64, Vec<f32>)> {
        let pred = grid_from_buffer(pred, shape)?;
        let result = evaluate_plan(&self.plan, &pred, &self.cfg)?;
        let grad = cape_backward(&result, &pred, &self.cfg);
        Ok((result.total_loss, grad.data().iter().map(|&g| g as f32).collect()))
    }
}

/// Loss and gradient for one prediction buffer. `seed` replaces `cfg.seed`.
pub fn forward_backward(
    pred: &[f32],
    shape: &[usize],
    nodes: &[f64],
    edges: &[u64],
    cfg: &CapeConfig,
    seed: u64,
) -> Result<(f64, Vec<f32>)> {
    PathSet::new(shape, nodes, edges, cfg, seed)?.forward_backward(pred, shape)
}
