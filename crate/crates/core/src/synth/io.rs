//! Sample directories: `graph.json`, `gt_mask.cgrd`, `gt_map.cgrd`,
//! `corrupted.cgrd` and `meta.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GapRecord, SynthParams, SynthSample};
use crate::error::{CapeError, Result};
use crate::grid::io::{read_cgrd, read_mask_cgrd, write_cgrd, write_mask_cgrd};
use crate::gt_graph::io::{read_graph_json, write_graph_json};

#[derive(Serialize, Deserialize)]
struct Meta {
    seed: u64,
    shape: Vec<usize>,
    #[serde(flatten)]
    params: SynthParams,
    corruption_log: Vec<GapRecord>,
}

pub fn write_sample(dir: impl AsRef<Path>, sample: &SynthSample) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CapeError::io(dir, e))?;
    write_graph_json(dir.join("graph.json"), &sample.graph)?;
    write_mask_cgrd(dir.join("gt_mask.cgrd"), &sample.gt_mask)?;
    write_cgrd(dir.join("gt_map.cgrd"), &sample.gt_map)?;
    write_cgrd(dir.join("corrupted.cgrd"), &sample.corrupted_map)?;
    let meta = Meta {
        seed: sample.seed,
        shape: sample.gt_map.shape().extents().to_vec(),
        params: sample.params.clone(),
        corruption_log: sample.corruption_log.clone(),
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("metadata serialization cannot fail");
    fs::write(&path, text).map_err(|e| CapeError::io(&path, e))
}

pub fn read_sample(dir: impl AsRef<Path>) -> Result<SynthSample> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| CapeError::io(&meta_path, e))?;
    let meta: Meta =
        serde_json::from_str(&text).map_err(|e| CapeError::format(meta_path.display().to_string(), e.to_string()))?;
    let graph = read_graph_json(dir.join("graph.json"))?;
    let gt_mask = read_mask_cgrd(dir.join("gt_mask.cgrd"))?;
    let gt_map = read_cgrd(dir.join("gt_map.cgrd"))?;
    let corrupted_map = read_cgrd(dir.join("corrupted.cgrd"))?;
    gt_map.ensure_same_shape(gt_mask.shape())?;
    corrupted_map.ensure_same_shape(gt_mask.shape())?;
    graph.check_within(gt_mask.shape())?;
    Ok(SynthSample {
        seed: meta.seed,
        params: meta.params,
        graph,
        gt_mask,
        gt_map,
        corrupted_map,
        corruption_log: meta.corruption_log,
    })
}
