use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MetricConfig;
use crate::error::Result;
use crate::grid::{BinaryMask, Point, ScalarGrid};
use crate::gt_graph::{graph_from_mask, shortest_distances, skeletonize_2d_by, GroundTruthGraph};

/// Enclosed background regions up to this many cells are treated as
/// foreground before thinning.
pub const SMALL_HOLE_CELLS: usize = 16;

/// Fills 4-connected background components of at most `max_cells` cells
/// that do not touch the border of a 2D mask.
pub fn fill_small_holes(mask: &mut BinaryMask, max_cells: usize) {
    let [_, h, w] = mask.shape().dims();
    let mut seen = vec![false; h * w];
    for start in 0..h * w {
        if seen[start] || mask.get_linear(start) {
            continue;
        }
        seen[start] = true;
        let mut component = vec![start];
        let mut open = false;
        let mut k = 0;
        while k < component.len() {
            let i = component[k];
            k += 1;
            let (y, x) = (i / w, i % w);
            open |= y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            let steps = [
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
            ];
            for j in steps.into_iter().flatten() {
                if !seen[j] && !mask.get_linear(j) {
                    seen[j] = true;
                    component.push(j);
                }
            }
        }
        if !open && component.len() <= max_cells {
            for i in component {
                mask.set_linear(i, true);
            }
        }
    }
}

/// Foreground of a predicted distance map (cells below `threshold`). In 2D
/// small enclosed holes are filled and the band is thinned along the
/// predicted centerline.
pub fn prediction_centerline(pred: &ScalarGrid, threshold: f64) -> Result<BinaryMask> {
    let mut band = pred.below(threshold);
    if pred.shape().ndim() == 2 {
        fill_small_holes(&mut band, SMALL_HOLE_CELLS);
        skeletonize_2d_by(&band, pred)
    } else {
        Ok(band)
    }
}

/// Graph of the structure predicted by a distance map.
pub fn graph_from_prediction(pred: &ScalarGrid, threshold: f64) -> Result<GroundTruthGraph> {
    let mask = prediction_centerline(pred, threshold)?;
    if mask.is_empty() {
        return Ok(GroundTruthGraph::empty(pred.shape().ndim()));
    }
    graph_from_mask(&mask)
}

/// Ground-truth length of a sampled node pair and the length of the
/// corresponding predicted path, if one exists.
#[derive(Clone, Debug, PartialEq)]
pub struct PairOutcome {
    pub a: usize,
    pub b: usize,
    pub gt_len: f64,
    pub pred_len: Option<f64>,
}

impl PairOutcome {
    /// `min(1, |L_gt − L_pred| / L_gt)`; 1 when no predicted path exists.
    pub fn apls_penalty(&self) -> f64 {
        match self.pred_len {
            Some(l) => ((self.gt_len - l).abs() / self.gt_len).min(1.0),
            None => 1.0,
        }
    }

    pub fn within(&self, tol: f64) -> bool {
        self.pred_len
            .is_some_and(|l| (l - self.gt_len).abs() / self.gt_len < tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphScores {
    pub apls: f64,
    pub tlts: f64,
    pub pairs: Vec<PairOutcome>,
    /// Ground-truth nodes with no predicted location inside the snap radius.
    pub unsnapped: usize,
    tlts_tolerance: f64,
}

impl GraphScores {
    pub fn within_tolerance(&self) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.within(self.tlts_tolerance))
            .count()
    }
}

// Graphs up to this size have every eligible pair enumerated before sampling.
const ENUMERATE_LIMIT: usize = 400;

fn cmp_points(a: &Point, b: &Point) -> Ordering {
    (0..3).map(|k| a[k].total_cmp(&b[k])).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Node ids sorted by coordinates, so choices made in this order do not
/// depend on how the graph happens to be indexed.
fn geometric_order(g: &GroundTruthGraph) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.node_count()).collect();
    order.sort_by(|&a, &b| cmp_points(&g.nodes()[a], &g.nodes()[b]).then(a.cmp(&b)));
    order
}

/// Nodes eligible as pair endpoints, in coordinate order: every node whose
/// degree is not 2, one anchor per pure cycle, and chain nodes spaced at
/// least `spacing` apart along the graph. A spacing of 0 keeps every node.
pub fn control_nodes(g: &GroundTruthGraph, spacing: f64) -> Vec<usize> {
    let order = geometric_order(g);
    if spacing <= 0.0 {
        return order;
    }
    let mut rank = vec![0; order.len()];
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
    }
    let mut keep: Vec<bool> = (0..g.node_count()).map(|v| g.neighbors(v).len() != 2).collect();
    let mut walked = vec![false; g.edge_count()];
    let walk_from = |start: usize, keep: &mut Vec<bool>, walked: &mut Vec<bool>| {
        let mut firsts = g.neighbors(start).to_vec();
        firsts.sort_by_key(|&(w, _)| rank[w]);
        for (first, e0) in firsts {
            if walked[e0] {
                continue;
            }
            let (mut prev, mut cur, mut e) = (start, first, e0);
            let mut acc = 0.0;
            loop {
                walked[e] = true;
                acc += g.edges()[e].weight;
                if keep[cur] {
                    break;
                }
                if acc >= spacing {
                    keep[cur] = true;
                    acc = 0.0;
                }
                let Some(&(next, ne)) = g.neighbors(cur).iter().find(|&&(w, ne)| w != prev || ne != e) else {
                    break;
                };
                if walked[ne] {
                    break;
                }
                (prev, cur, e) = (cur, next, ne);
            }
        }
    };
    for &v in &order {
        if keep[v] {
            walk_from(v, &mut keep, &mut walked);
        }
    }
    // Whatever is left unwalked belongs to pure cycles.
    for &v in &order {
        if g.neighbors(v).iter().any(|&(_, e)| !walked[e]) {
            keep[v] = true;
            walk_from(v, &mut keep, &mut walked);
        }
    }
    order.into_iter().filter(|&v| keep[v]).collect()
}

/// Connected pairs `(a, b, length)` of control nodes at least
/// `min_path_length` apart, with `a` before `b` in coordinate order.
fn sample_gt_pairs<R: Rng>(gt: &GroundTruthGraph, cfg: &MetricConfig, rng: &mut R) -> Vec<(usize, usize, f64)> {
    let candidates = control_nodes(gt, cfg.control_spacing);
    let n = candidates.len();
    let eligible = |d: f64| d.is_finite() && d > 0.0 && d >= cfg.min_path_length;
    let mut pairs = Vec::new();
    if n <= ENUMERATE_LIMIT {
        for (i, &a) in candidates.iter().enumerate() {
            let dist = shortest_distances(gt, a, None);
            pairs.extend(candidates[i + 1..].iter().filter(|&&b| eligible(dist[b])).map(|&b| (a, b, dist[b])));
        }
        if pairs.len() > cfg.num_pairs {
            let mut keep = sample(rng, pairs.len(), cfg.num_pairs).into_vec();
            keep.sort_unstable();
            pairs = keep.into_iter().map(|i| pairs[i]).collect();
        }
        return pairs;
    }
    // Large graphs: draw a source, then one eligible target from it.
    let mut seen = BTreeMap::new();
    for _ in 0..cfg.num_pairs * 4 {
        if seen.len() == cfg.num_pairs {
            break;
        }
        let i = rng.gen_range(0..n);
        let dist = shortest_distances(gt, candidates[i], None);
        let targets: Vec<usize> = (0..n).filter(|&j| j != i && eligible(dist[candidates[j]])).collect();
        if targets.is_empty() {
            continue;
        }
        let j = targets[rng.gen_range(0..targets.len())];
        seen.entry((i.min(j), i.max(j))).or_insert(dist[candidates[j]]);
    }
    seen.into_iter()
        .map(|((i, j), d)| (candidates[i], candidates[j], d))
        .collect()
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

// Snap location, then the segment's endpoints in coordinate order.
type SegmentKey = (Point, (Point, Point));

fn cmp_key(a: &SegmentKey, b: &SegmentKey) -> Ordering {
    cmp_points(&a.0, &b.0)
        .then_with(|| cmp_points(&a.1 .0, &b.1 .0))
        .then_with(|| cmp_points(&a.1 .1, &b.1 .1))
}

/// Straight-segment graph that ground-truth nodes are inserted into.
struct SnapGraph {
    nodes: Vec<Point>,
    edges: Vec<(usize, usize)>,
    alive: Vec<bool>,
}

impl SnapGraph {
    fn new(g: &GroundTruthGraph) -> Self {
        let g = g.densify();
        SnapGraph {
            nodes: g.nodes().to_vec(),
            edges: g.edges().iter().map(|e| (e.a, e.b)).collect(),
            alive: vec![true; g.edge_count()],
        }
    }

    fn segment_key(&self, e: usize) -> (Point, Point) {
        let (a, b) = self.edges[e];
        let (pa, pb) = (self.nodes[a], self.nodes[b]);
        if cmp_points(&pa, &pb).is_le() {
            (pa, pb)
        } else {
            (pb, pa)
        }
    }

    /// Node at the nearest location within `radius` of `p`, splitting an
    /// edge when that location is interior to it.
    fn snap(&mut self, p: &Point, radius: f64) -> Option<usize> {
        const EPS: f64 = 1e-9;
        let mut best_node = None;
        for (i, q) in self.nodes.iter().enumerate() {
            let d = dist2(p, q);
            let closer = best_node.is_none_or(|(bd, bi): (f64, usize)| {
                d < bd || (d == bd && cmp_points(q, &self.nodes[bi]).is_lt())
            });
            if closer {
                best_node = Some((d, i));
            }
        }
        let mut best_edge: Option<(f64, usize, f64, SegmentKey)> = None;
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            if !self.alive[e] {
                continue;
            }
            let (pa, pb) = (self.nodes[a], self.nodes[b]);
            let dir: Vec<f64> = (0..3).map(|k| pb[k] - pa[k]).collect();
            let len2: f64 = dir.iter().map(|d| d * d).sum();
            let t = ((0..3).map(|k| (p[k] - pa[k]) * dir[k]).sum::<f64>() / len2).clamp(0.0, 1.0);
            let q: Point = std::array::from_fn(|k| pa[k] + t * dir[k]);
            let d = dist2(p, &q);
            let key = (q, self.segment_key(e));
            let closer = best_edge.as_ref().is_none_or(|(bd, _, _, bkey)| {
                d < *bd || (d == *bd && cmp_key(&key, bkey).is_lt())
            });
            if closer {
                best_edge = Some((d, e, t, key));
            }
        }
        let r2 = radius * radius;
        match (best_node, best_edge) {
            (Some((dn, i)), Some((de, _, _, _))) if dn <= de + EPS => (dn <= r2).then_some(i),
            (Some((dn, i)), None) => (dn <= r2).then_some(i),
            (_, Some((de, e, t, _))) => {
                if de > r2 {
                    return None;
                }
                let (a, b) = self.edges[e];
                let len = dist2(&self.nodes[a], &self.nodes[b]).sqrt();
                if t * len <= EPS {
                    return Some(a);
                }
                if (1.0 - t) * len <= EPS {
                    return Some(b);
                }
                let (pa, pb) = (self.nodes[a], self.nodes[b]);
                let id = self.nodes.len();
                self.nodes.push(std::array::from_fn(|k| pa[k] + t * (pb[k] - pa[k])));
                self.alive[e] = false;
                self.edges.push((a, id));
                self.edges.push((id, b));
                self.alive.extend([true, true]);
                Some(id)
            }
            (None, None) => None,
        }
    }

    fn into_graph(self, ndim: usize) -> Result<GroundTruthGraph> {
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .map(|(&e, _)| e)
            .collect();
        GroundTruthGraph::new(ndim, self.nodes, &edges)
    }
}

/// Samples ground-truth node pairs and measures each pair's path length in
/// both graphs, then aggregates APLS and TLTS.
///
/// APLS is one-directional: pairs come from the ground truth only. An empty
/// prediction scores 0; a ground truth with no eligible pairs scores 1.
pub fn graph_scores(
    gt: &GroundTruthGraph,
    pred: &GroundTruthGraph,
    cfg: &MetricConfig,
) -> Result<GraphScores> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sampled = sample_gt_pairs(gt, cfg, &mut rng);
    let finish = |pairs: Vec<PairOutcome>, unsnapped: usize, empty_score: f64| {
        let (apls, tlts) = if pairs.is_empty() {
            (empty_score, empty_score)
        } else {
            let n = pairs.len() as f64;
            (
                1.0 - pairs.iter().map(PairOutcome::apls_penalty).sum::<f64>() / n,
                pairs.iter().filter(|p| p.within(cfg.tlts_tolerance)).count() as f64 / n,
            )
        };
        GraphScores {
            apls,
            tlts,
            pairs,
            unsnapped,
            tlts_tolerance: cfg.tlts_tolerance,
        }
    };
    if pred.node_count() == 0 {
        let pairs = sampled
            .iter()
            .map(|&(a, b, l)| PairOutcome {
                a,
                b,
                gt_len: l,
                pred_len: None,
            })
            .collect();
        return Ok(finish(pairs, 0, 0.0));
    }

    let used: BTreeSet<usize> = sampled.iter().flat_map(|&(a, b, _)| [a, b]).collect();
    let mut used: Vec<usize> = used.into_iter().collect();
    used.sort_by(|&a, &b| cmp_points(&gt.nodes()[a], &gt.nodes()[b]).then(a.cmp(&b)));
    let mut snap = SnapGraph::new(pred);
    let mut snapped = vec![None; gt.node_count()];
    for &v in &used {
        snapped[v] = snap.snap(&gt.nodes()[v], cfg.snap_radius);
    }
    let unsnapped = used.iter().filter(|&&v| snapped[v].is_none()).count();
    let pred_graph = snap.into_graph(pred.ndim())?;

    let mut pairs = Vec::with_capacity(sampled.len());
    let mut cached: Option<(usize, Vec<f64>)> = None;
    for &(a, b, gt_len) in &sampled {
        let pred_len = match (snapped[a], snapped[b]) {
            (Some(sa), Some(sb)) => {
                if cached.as_ref().is_none_or(|(s, _)| *s != sa) {
                    cached = Some((sa, shortest_distances(&pred_graph, sa, None)));
                }
                let d = cached.as_ref().unwrap().1[sb];
                d.is_finite().then_some(d)
            }
            _ => None,
        };
        pairs.push(PairOutcome {
            a,
            b,
            gt_len,
            pred_len,
        });
    }
    Ok(finish(pairs, unsnapped, 1.0))
}

pub fn apls(gt: &GroundTruthGraph, pred: &GroundTruthGraph, cfg: &MetricConfig) -> Result<f64> {
    Ok(graph_scores(gt, pred, cfg)?.apls)
}

pub fn tlts(gt: &GroundTruthGraph, pred: &GroundTruthGraph, cfg: &MetricConfig) -> Result<f64> {
    Ok(graph_scores(gt, pred, cfg)?.tlts)
}
