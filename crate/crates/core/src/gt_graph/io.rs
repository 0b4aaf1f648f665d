//! Graph JSON: `{"ndim":2,"nodes":[[y,x],...],"edges":[[i,j],...]}`.
//!
//! Weights are never stored; they are recomputed from node coordinates on
//! load. Graphs with curved edges are densified before writing so every
//! file edge is a straight segment.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GroundTruthGraph;
use crate::error::{CapeError, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    ndim: usize,
    nodes: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
}

pub fn to_json_string(g: &GroundTruthGraph) -> String {
    let g = g.densify();
    let ndim = g.ndim();
    let file = GraphFile {
        ndim,
        nodes: g.nodes().iter().map(|p| p[3 - ndim..].to_vec()).collect(),
        edges: g.edges().iter().map(|e| [e.a, e.b]).collect(),
    };
    serde_json::to_string(&file).expect("graph serialization cannot fail")
}

pub fn from_json_str(text: &str, origin: &str) -> Result<GroundTruthGraph> {
    let file: GraphFile =
        serde_json::from_str(text).map_err(|e| CapeError::format(origin, e.to_string()))?;
    let edges: Vec<(usize, usize)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
    GroundTruthGraph::from_coords(file.ndim, &file.nodes, &edges)
        .map_err(|e| CapeError::format(origin, e.to_string()))
}

pub fn read_graph_json(path: impl AsRef<Path>) -> Result<GroundTruthGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CapeError::io(path, e))?;
    from_json_str(&text, &path.display().to_string())
}

pub fn write_graph_json(path: impl AsRef<Path>, g: &GroundTruthGraph) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json_string(g)).map_err(|e| CapeError::io(path, e))
}
