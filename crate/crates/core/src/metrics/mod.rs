//! Pixel and graph metrics for comparing a predicted distance map with the
//! ground truth.

mod graph;

use serde::{Deserialize, Serialize};

use crate::error::{CapeError, Result};
use crate::grid::{distance_transform, squared_distance_transform, BinaryMask, ScalarGrid, DEFAULT_D_MAX};
use crate::gt_graph::GroundTruthGraph;

pub use graph::{
    apls, control_nodes, fill_small_holes, graph_from_prediction, graph_scores, prediction_centerline, tlts,
    GraphScores, PairOutcome, SMALL_HOLE_CELLS,
};

/// `2|P∩G| / (|P|+|G|)`, 1.0 when both masks are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.ensure_same_shape(gt.shape())?;
    let (p, g) = (pred.count(), gt.count());
    if p + g == 0 {
        return Ok(1.0);
    }
    let both = pred
        .bits()
        .iter()
        .zip(gt.bits())
        .filter(|(a, b)| **a && **b)
        .count();
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// Relaxed correctness, completeness and quality with their raw tallies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ccq {
    pub correctness: f64,
    pub completeness: f64,
    pub quality: f64,
    pub pred_pixels: usize,
    pub gt_pixels: usize,
    pub matched_pred: usize,
    pub matched_gt: usize,
}

fn ratio(num: usize, den: usize, other_empty: bool) -> f64 {
    if den == 0 {
        if other_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Pixels count as matched when they lie within `tolerance` (Euclidean) of
/// the other mask. Quality is `corr·comp / (corr + comp − corr·comp)`.
pub fn ccq(pred: &BinaryMask, gt: &BinaryMask, tolerance: f64) -> Result<Ccq> {
    pred.ensure_same_shape(gt.shape())?;
    if !(tolerance > 0.0) {
        return Err(CapeError::InvalidConfig(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    let tol2 = tolerance * tolerance;
    let near_gt = squared_distance_transform(gt);
    let near_pred = squared_distance_transform(pred);
    let matched_pred = pred.ones().filter(|&i| near_gt[i] <= tol2).count();
    let matched_gt = gt.ones().filter(|&i| near_pred[i] <= tol2).count();
    let (p, g) = (pred.count(), gt.count());
    let correctness = ratio(matched_pred, p, g == 0);
    let completeness = ratio(matched_gt, g, p == 0);
    let quality = if p == 0 && g == 0 {
        1.0
    } else {
        let denom = correctness + completeness - correctness * completeness;
        if denom > 0.0 {
            correctness * completeness / denom
        } else {
            0.0
        }
    };
    Ok(Ccq {
        correctness,
        completeness,
        quality,
        pred_pixels: p,
        gt_pixels: g,
        matched_pred,
        matched_gt,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Cells with a predicted distance below this are foreground.
    pub threshold: f64,
    pub ccq_tolerance: f64,
    pub snap_radius: f64,
    pub num_pairs: usize,
    /// Relative length error under which a pair counts as correct.
    pub tlts_tolerance: f64,
    /// Node pairs closer than this along the ground truth are not sampled.
    pub min_path_length: f64,
    /// Arc-length spacing of chain nodes used as pair endpoints; 0 uses
    /// every node.
    pub control_spacing: f64,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            threshold: 1.5,
            ccq_tolerance: 3.0,
            snap_radius: 5.0,
            num_pairs: 200,
            tlts_tolerance: 0.15,
            min_path_length: 10.0,
            control_spacing: 20.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricCounts {
    pub pred_pixels: usize,
    pub gt_pixels: usize,
    pub matched_pred_pixels: usize,
    pub matched_gt_pixels: usize,
    pub pairs_sampled: usize,
    pub pairs_connected: usize,
    pub pairs_within_tolerance: usize,
    pub unsnapped_nodes: usize,
    pub pred_graph_nodes: usize,
    pub pred_graph_edges: usize,
}

/// All metrics for one prediction, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub dice: f64,
    pub correctness: f64,
    pub completeness: f64,
    pub quality: f64,
    pub apls: f64,
    pub tlts: f64,
    pub counts: MetricCounts,
}

fn percent(v: f64) -> f64 {
    (v * 1000.0).round() / 10.0
}

impl MetricReport {
    /// JSON with the metrics as percentages rounded to one decimal.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Percentages<'a> {
            dice: f64,
            correctness: f64,
            completeness: f64,
            quality: f64,
            apls: f64,
            tlts: f64,
            counts: &'a MetricCounts,
        }
        serde_json::to_string(&Percentages {
            dice: percent(self.dice),
            correctness: percent(self.correctness),
            completeness: percent(self.completeness),
            quality: percent(self.quality),
            apls: percent(self.apls),
            tlts: percent(self.tlts),
            counts: &self.counts,
        })
        .expect("report serialization cannot fail")
    }

    pub fn to_text(&self) -> String {
        format!(
            "dice {:.1}\ncorrectness {:.1}\ncompleteness {:.1}\nquality {:.1}\napls {:.1}\ntlts {:.1}\n",
            percent(self.dice),
            percent(self.correctness),
            percent(self.completeness),
            percent(self.quality),
            percent(self.apls),
            percent(self.tlts),
        )
    }
}

/// Scores `pred` against the ground truth.
///
/// Dice compares the thresholded prediction with the same threshold applied
/// to the ground-truth distance map. CCQ compares the extracted centerline
/// (2D) or the thresholded band (3D) with the ground-truth centerline mask.
pub fn evaluate(
    pred: &ScalarGrid,
    gt_mask: &BinaryMask,
    gt_graph: &GroundTruthGraph,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    pred.ensure_same_shape(gt_mask.shape())?;
    gt_graph.check_within(pred.shape())?;
    let pred_band = pred.below(cfg.threshold);
    let gt_band = if gt_mask.is_empty() {
        BinaryMask::empty(gt_mask.shape())
    } else {
        distance_transform(gt_mask, DEFAULT_D_MAX)?.below(cfg.threshold)
    };
    let dice = dice(&pred_band, &gt_band)?;
    let centerline = prediction_centerline(pred, cfg.threshold)?;
    let ccq = ccq(&centerline, gt_mask, cfg.ccq_tolerance)?;
    let pred_graph = if centerline.is_empty() {
        GroundTruthGraph::empty(pred.shape().ndim())
    } else {
        crate::gt_graph::graph_from_mask(&centerline)?
    };
    let scores = graph_scores(gt_graph, &pred_graph, cfg)?;
    Ok(MetricReport {
        dice,
        correctness: ccq.correctness,
        completeness: ccq.completeness,
        quality: ccq.quality,
        apls: scores.apls,
        tlts: scores.tlts,
        counts: MetricCounts {
            pred_pixels: ccq.pred_pixels,
            gt_pixels: ccq.gt_pixels,
            matched_pred_pixels: ccq.matched_pred,
            matched_gt_pixels: ccq.matched_gt,
            pairs_sampled: scores.pairs.len(),
            pairs_connected: scores.pairs.iter().filter(|p| p.pred_len.is_some()).count(),
            pairs_within_tolerance: scores.within_tolerance(),
            unsnapped_nodes: scores.unsnapped,
            pred_graph_nodes: pred_graph.node_count(),
            pred_graph_edges: pred_graph.edge_count(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridIndex, Shape};

    fn bar(shape: Shape, y0: usize, x0: usize, h: usize, w: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(shape);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                m.set(GridIndex([0, y, x]), true);
            }
        }
        m
    }

    #[test]
    fn dice_examples() {
        let s = Shape::new2(10, 10);
        let a = bar(s, 0, 0, 1, 10);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &bar(s, 5, 0, 1, 10)).unwrap(), 0.0);
        assert_eq!(dice(&a, &bar(s, 0, 5, 2, 5)).unwrap(), 0.5);
        let e = BinaryMask::empty(s);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&a, &BinaryMask::empty(Shape::new2(10, 9))).is_err());
    }

    #[test]
    fn ccq_identity_and_small_shift() {
        let s = Shape::new2(20, 20);
        let g = bar(s, 5, 2, 1, 16);
        let c = ccq(&g, &g, 3.0).unwrap();
        assert_eq!((c.correctness, c.completeness, c.quality), (1.0, 1.0, 1.0));
        let c = ccq(&bar(s, 7, 2, 1, 16), &g, 3.0).unwrap();
        assert_eq!((c.correctness, c.completeness), (1.0, 1.0));
    }

    fn brute_ccq(p: &BinaryMask, g: &BinaryMask, tol: f64) -> (f64, f64) {
        let s = p.shape();
        let near = |i: usize, other: &BinaryMask| {
            let a = s.index(i).0;
            other.ones().any(|j| {
                let b = s.index(j).0;
                let d2: usize = (0..3).map(|k| a[k].abs_diff(b[k]).pow(2)).sum();
                (d2 as f64) <= tol * tol
            })
        };
        let tp = p.ones().filter(|&i| near(i, g)).count();
        let tg = g.ones().filter(|&i| near(i, p)).count();
        (tp as f64 / p.count() as f64, tg as f64 / g.count() as f64)
    }

    #[test]
    fn ccq_matches_brute_force_on_shifted_bar() {
        let s = Shape::new2(20, 20);
        let g = bar(s, 4, 3, 3, 12);
        for shift in 0..8 {
            let p = bar(s, 4 + shift, 3 + shift / 2, 3, 12);
            let c = ccq(&p, &g, 3.0).unwrap();
            let (corr, comp) = brute_ccq(&p, &g, 3.0);
            assert_eq!(c.correctness, corr, "shift {shift}");
            assert_eq!(c.completeness, comp, "shift {shift}");
            assert!(c.quality <= corr.min(comp) + 1e-12);
        }
        let far = ccq(&bar(s, 13, 3, 3, 12), &g, 3.0).unwrap();
        assert_eq!(far.correctness, 0.0);
    }

    #[test]
    fn ccq_degrades_with_shift() {
        let s = Shape::new2(30, 30);
        let g = bar(s, 2, 2, 1, 26);
        let mut last = 1.0;
        for shift in 0..20 {
            let c = ccq(&bar(s, 2 + shift, 2, 1, 26), &g, 3.0).unwrap();
            assert!(c.quality <= last);
            last = c.quality;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn ccq_empty_conventions() {
        let s = Shape::new2(5, 5);
        let e = BinaryMask::empty(s);
        let c = ccq(&e, &e, 3.0).unwrap();
        assert_eq!((c.correctness, c.completeness, c.quality), (1.0, 1.0, 1.0));
        let c = ccq(&e, &bar(s, 1, 1, 1, 3), 3.0).unwrap();
        assert_eq!((c.correctness, c.completeness, c.quality), (0.0, 0.0, 0.0));
    }

    #[test]
    fn report_json_uses_percentages_in_fixed_order() {
        let s = Shape::new2(40, 40);
        let mut gt_mask = BinaryMask::empty(s);
        for x in 5..35 {
            gt_mask.set(GridIndex([0, 20, x]), true);
        }
        let gt_map = distance_transform(&gt_mask, 20.0).unwrap();
        let graph = crate::gt_graph::graph_from_mask(&gt_mask).unwrap();
        let r = evaluate(&gt_map, &gt_mask, &graph, &MetricConfig::default()).unwrap();
        assert_eq!(r.dice, 1.0);
        assert_eq!(r.apls, 1.0);
        assert_eq!(r.tlts, 1.0);
        let text = r.to_json();
        assert!(text.starts_with(r#"{"dice":100.0,"correctness":100.0,"#), "{text}");
        assert!(text.contains(r#""apls":100.0,"tlts":100.0,"counts""#));
    }
}
