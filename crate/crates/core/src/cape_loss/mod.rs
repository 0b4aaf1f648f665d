//! Connectivity-aware path loss over a predicted distance map.
//!
//! The ground-truth graph is consumed by repeatedly sampling a connected
//! vertex pair, taking its shortest graph path, and charging the prediction
//! for the cheapest pixel path between the projected endpoints inside a
//! corridor around that graph path. Traversed edges are retired until none
//! remain.

mod search;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CapeError, Result};
use crate::grid::{dilate, rasterize_polyline, BinaryMask, Connectivity, GridIndex, Point, ScalarGrid, Shape};
use crate::gt_graph::{
    graph_dijkstra, graph_dijkstra_within, remove_path_edges, sample_pair, GraphPath,
    GroundTruthGraph, LiveEdges,
};

pub use search::{
    cell_cost, cell_cost_derivative, masked_grid_dijkstra, path_cost, project_vertex, PixelPath,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapeConfig {
    /// Half-width of the endpoint projection window (3 gives 7×7 or 7×7×7).
    pub window_radius: usize,
    /// Radius of the corridor grown around each rendered graph path.
    pub dilation_radius: f64,
    pub cost_exponent: f64,
    pub connectivity: Connectivity,
    /// Weight of the path term against the per-pixel MSE term.
    pub alpha: f64,
    pub seed: u64,
    /// When false the pixel search may use the whole grid instead of the corridor.
    pub masked: bool,
}

impl Default for CapeConfig {
    fn default() -> Self {
        CapeConfig {
            window_radius: 3,
            dilation_radius: 10.0,
            cost_exponent: 2.0,
            connectivity: Connectivity::Full,
            alpha: 1.0,
            seed: 0,
            masked: true,
        }
    }
}

impl CapeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dilation_radius > 0.0 && self.dilation_radius.is_finite()) {
            return Err(CapeError::InvalidConfig(format!(
                "dilation_radius must be positive, got {}",
                self.dilation_radius
            )));
        }
        if !(self.cost_exponent > 0.0 && self.cost_exponent.is_finite()) {
            return Err(CapeError::InvalidConfig(format!(
                "cost_exponent must be positive, got {}",
                self.cost_exponent
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CapeError::InvalidConfig(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One sampled pair and the pixel path charged for it.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub v1: usize,
    pub v2: usize,
    pub v1_proj: GridIndex,
    pub v2_proj: GridIndex,
    pub graph_path: GraphPath,
    pub pixel_path: PixelPath,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapeResult {
    pub total_loss: f64,
    pub records: Vec<PathRecord>,
    pub gradient: ScalarGrid,
}

/// A sampled pair with its graph path and search corridor.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedPath {
    pub v1: usize,
    pub v2: usize,
    pub v1_point: Point,
    pub v2_point: Point,
    pub graph_path: GraphPath,
    pub mask: BinaryMask,
}

/// Everything the sampling loop decides; independent of the prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPlan {
    pub shape: Shape,
    pub paths: Vec<PlannedPath>,
}

/// Search corridor for a graph path: the rendered path dilated by the
/// configured radius, or the whole grid when masking is disabled.
pub fn corridor_mask(
    g: &GroundTruthGraph,
    path: &GraphPath,
    shape: Shape,
    cfg: &CapeConfig,
) -> Result<BinaryMask> {
    if !cfg.masked {
        return Ok(BinaryMask::full(shape));
    }
    let rendered = rasterize_polyline(&g.path_polyline(path), shape)?;
    dilate(&rendered, cfg.dilation_radius)
}

/// Runs the sampling loop: pick a connected pair among live edges, take its
/// shortest graph path, retire the traversed edges, repeat until no live
/// edge remains. Corridors are built afterwards in parallel.
pub fn plan_paths(g: &GroundTruthGraph, shape: Shape, cfg: &CapeConfig) -> Result<PathPlan> {
    cfg.validate()?;
    g.check_within(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut live = LiveEdges::all(g);
    let mut picks = Vec::new();
    while !live.is_empty() {
        let (v1, v2) = sample_pair(g, &live, &mut rng)?;
        let path = graph_dijkstra_within(g, Some(&live), v1, v2)?;
        live = remove_path_edges(&live, &path);
        picks.push((v1, v2, path));
    }
    let paths = picks
        .into_par_iter()
        .map(|(v1, v2, graph_path)| {
            let mask = corridor_mask(g, &graph_path, shape, cfg)?;
            Ok(PlannedPath {
                v1,
                v2,
                v1_point: g.nodes()[v1],
                v2_point: g.nodes()[v2],
                graph_path,
                mask,
            })
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(PathPlan { shape, paths })
}

fn evaluate_one(planned: &PlannedPath, pred: &ScalarGrid, cfg: &CapeConfig) -> Result<PathRecord> {
    let v1_proj = project_vertex(pred, &planned.v1_point, cfg.window_radius);
    let v2_proj = project_vertex(pred, &planned.v2_point, cfg.window_radius);
    let pixel_path = masked_grid_dijkstra(
        pred,
        &planned.mask,
        v1_proj,
        v2_proj,
        cfg.cost_exponent,
        cfg.connectivity,
    )?;
    Ok(PathRecord {
        v1: planned.v1,
        v2: planned.v2,
        v1_proj,
        v2_proj,
        graph_path: planned.graph_path.clone(),
        loss: pixel_path.cost,
        pixel_path,
    })
}

/// Charges `pred` for every planned path. Paths are searched in parallel;
/// the loss and gradient are reduced in plan order.
pub fn evaluate_plan(plan: &PathPlan, pred: &ScalarGrid, cfg: &CapeConfig) -> Result<CapeResult> {
    cfg.validate()?;
    pred.ensure_same_shape(plan.shape)?;
    let records = plan
        .paths
        .par_iter()
        .map(|p| evaluate_one(p, pred, cfg))
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let total_loss = records.iter().map(|r| r.loss).sum();
    let mut result = CapeResult {
        total_loss,
        records,
        gradient: ScalarGrid::zeros(pred.shape()),
    };
    result.gradient = cape_backward(&result, pred, cfg);
    Ok(result)
}

pub fn cape_forward(g: &GroundTruthGraph, pred: &ScalarGrid, cfg: &CapeConfig) -> Result<CapeResult> {
    let plan = plan_paths(g, pred.shape(), cfg)?;
    evaluate_plan(&plan, pred, cfg)
}

/// Gradient of the path loss with each selected pixel path held fixed.
pub fn cape_backward(result: &CapeResult, pred: &ScalarGrid, cfg: &CapeConfig) -> ScalarGrid {
    let shape = pred.shape();
    let mut grad = ScalarGrid::zeros(shape);
    for record in &result.records {
        for &cell in &record.pixel_path.cells {
            let i = shape.linear(cell);
            grad.data_mut()[i] += cell_cost_derivative(pred.data()[i], cfg.cost_exponent);
        }
    }
    grad
}

/// The loss for a single pair over the full graph, as one loop iteration
/// would compute it.
pub fn path_loss(
    g: &GroundTruthGraph,
    pred: &ScalarGrid,
    v1: usize,
    v2: usize,
    cfg: &CapeConfig,
) -> Result<PathRecord> {
    cfg.validate()?;
    g.check_within(pred.shape())?;
    let graph_path = graph_dijkstra(g, v1, v2)?;
    let mask = corridor_mask(g, &graph_path, pred.shape(), cfg)?;
    let planned = PlannedPath {
        v1,
        v2,
        v1_point: g.nodes()[v1],
        v2_point: g.nodes()[v2],
        graph_path,
        mask,
    };
    evaluate_one(&planned, pred, cfg)
}

/// Per-pixel MSE plus `alpha` times the path loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TotalLoss {
    pub total: f64,
    pub mse: f64,
    pub cape: f64,
    pub gradient: ScalarGrid,
}

pub fn mse(gt_map: &ScalarGrid, pred: &ScalarGrid) -> Result<(f64, ScalarGrid)> {
    gt_map.ensure_same_shape(pred.shape())?;
    let n = pred.shape().len() as f64;
    let mut sum = 0.0;
    let grad: Vec<f64> = gt_map
        .data()
        .iter()
        .zip(pred.data())
        .map(|(&y, &p)| {
            let d = p - y;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((sum / n, ScalarGrid::new(pred.shape(), grad)?))
}

pub fn total_loss(
    gt_map: &ScalarGrid,
    pred: &ScalarGrid,
    g: &GroundTruthGraph,
    cfg: &CapeConfig,
) -> Result<TotalLoss> {
    let (mse, mut gradient) = mse(gt_map, pred)?;
    let cape = cape_forward(g, pred, cfg)?;
    add_scaled(&mut gradient, &cape.gradient, cfg.alpha);
    Ok(TotalLoss {
        total: mse + cfg.alpha * cape.total_loss,
        mse,
        cape: cape.total_loss,
        gradient,
    })
}

pub(crate) fn add_scaled(gradient: &mut ScalarGrid, other: &ScalarGrid, alpha: f64) {
    if alpha == 0.0 {
        return;
    }
    for (g, c) in gradient.data_mut().iter_mut().zip(other.data()) {
        *g += alpha * c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::distance_transform;

    fn line_graph(len: usize) -> GroundTruthGraph {
        GroundTruthGraph::new(
            2,
            vec![[0.0, 10.0, 5.0], [0.0, 10.0, (5 + len) as f64]],
            &[(0, 1)],
        )
        .unwrap()
    }

    fn perfect_map(g: &GroundTruthGraph, shape: Shape) -> ScalarGrid {
        let mut mask = BinaryMask::empty(shape);
        for e in 0..g.edge_count() {
            let pts = g.edge_polyline(e, g.edges()[e].a);
            crate::grid::rasterize_into(&mut mask, &pts).unwrap();
        }
        distance_transform(&mask, 20.0).unwrap()
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let g = line_graph(20);
        let shape = Shape::new2(21, 31);
        let pred = perfect_map(&g, shape);
        let r = cape_forward(&g, &pred, &CapeConfig::default()).unwrap();
        assert_eq!(r.total_loss, 0.0);
        assert!(r.gradient.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_edge_yields_one_record() {
        let g = line_graph(20);
        let pred = perfect_map(&g, Shape::new2(21, 31));
        let r = cape_forward(&g, &pred, &CapeConfig::default()).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].graph_path.edges, vec![0]);
    }

    fn gapped(k: usize, value: f64) -> (GroundTruthGraph, ScalarGrid) {
        let g = line_graph(20);
        let shape = Shape::new2(21, 31);
        let mut pred = perfect_map(&g, shape);
        for x in 12..12 + k {
            for y in 0..21 {
                let i = GridIndex([0, y, x]);
                pred.set(i, pred.get(i).max(value));
            }
        }
        (g, pred)
    }

    #[test]
    fn wider_gap_costs_more() {
        let cfg = CapeConfig::default();
        let (g, p3) = gapped(3, 5.0);
        let (_, p6) = gapped(6, 5.0);
        let l3 = cape_forward(&g, &p3, &cfg).unwrap().total_loss;
        let l6 = cape_forward(&g, &p6, &cfg).unwrap().total_loss;
        assert!(l3 > 0.0);
        assert!(l6 > l3);
        assert_eq!(l3, 3.0 * 25.0);
    }

    #[test]
    fn backward_examples() {
        let (g, pred) = gapped(1, 3.0);
        let cfg = CapeConfig::default();
        let r = cape_forward(&g, &pred, &cfg).unwrap();
        let crossing = r.records[0]
            .pixel_path
            .cells
            .iter()
            .find(|c| c.0[2] == 12)
            .copied()
            .unwrap();
        assert_eq!(r.gradient.get(crossing), 6.0);
        let zero = ScalarGrid::zeros(pred.shape());
        assert!(cape_backward(&r, &zero, &cfg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_lives_on_path_cells() {
        let (g, pred) = gapped(4, 2.0);
        let r = cape_forward(&g, &pred, &CapeConfig::default()).unwrap();
        let shape = pred.shape();
        let mut on_path = vec![false; shape.len()];
        for rec in &r.records {
            for &c in &rec.pixel_path.cells {
                on_path[shape.linear(c)] = true;
            }
        }
        for (i, &v) in r.gradient.data().iter().enumerate() {
            if v != 0.0 {
                assert!(on_path[i]);
            }
        }
        let sum: f64 = r.records.iter().map(|r| r.loss).sum();
        assert_eq!(r.total_loss, sum);
    }

    #[test]
    fn empty_graph_is_free() {
        let pred = ScalarGrid::filled(Shape::new2(4, 4), 2.0);
        let r = cape_forward(&GroundTruthGraph::empty(2), &pred, &CapeConfig::default()).unwrap();
        assert_eq!(r.total_loss, 0.0);
        assert!(r.records.is_empty());
    }

    #[test]
    fn total_loss_parts() {
        let (g, pred) = gapped(3, 4.0);
        let gt = perfect_map(&g, pred.shape());
        let mut cfg = CapeConfig {
            alpha: 0.0,
            ..CapeConfig::default()
        };
        let plain = total_loss(&gt, &pred, &g, &cfg).unwrap();
        let (mse_only, mse_grad) = mse(&gt, &pred).unwrap();
        assert_eq!(plain.total, mse_only);
        assert_eq!(plain.gradient, mse_grad);

        cfg.alpha = 1.0;
        let both = total_loss(&gt, &pred, &g, &cfg).unwrap();
        let n = pred.shape().len() as f64;
        let manual_mse: f64 = gt
            .data()
            .iter()
            .zip(pred.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let manual_cape = cape_forward(&g, &pred, &cfg).unwrap().total_loss;
        assert!((both.total - (manual_mse + manual_cape)).abs() < 1e-9);

        let same = total_loss(&gt, &gt, &g, &cfg).unwrap();
        assert_eq!(same.total, 0.0);
        assert!(same.gradient.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let g = line_graph(5);
        let gt = ScalarGrid::zeros(Shape::new2(21, 31));
        let pred = ScalarGrid::zeros(Shape::new2(21, 30));
        assert!(matches!(
            total_loss(&gt, &pred, &g, &CapeConfig::default()),
            Err(CapeError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = CapeConfig {
            dilation_radius: 0.0,
            ..CapeConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = CapeConfig {
            cost_exponent: -1.0,
            ..CapeConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = CapeConfig {
            seed: 7,
            connectivity: Connectivity::Face,
            ..CapeConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<CapeConfig>(&text).unwrap(), cfg);
        let partial: CapeConfig = serde_json::from_str(r#"{"alpha":0.5}"#).unwrap();
        assert_eq!(partial.window_radius, 3);
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use crate::grid::distance_transform;
    use crate::test_support::random_graph;
    use proptest::prelude::*;
    use rand::Rng;

    fn line_loss(start: usize, k: usize, c: f64) -> f64 {
        let shape = Shape::new2(15, 60);
        let g = GroundTruthGraph::new(2, vec![[0.0, 7.0, 3.0], [0.0, 7.0, 56.0]], &[(0, 1)]).unwrap();
        let line = rasterize_polyline(g.nodes(), shape).unwrap();
        let mut pred = distance_transform(&line, 20.0).unwrap();
        for x in start..start + k {
            pred.set(GridIndex([0, 7, x]), c);
        }
        cape_forward(&g, &pred, &CapeConfig::default()).unwrap().total_loss
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sampled_paths_partition_the_edges(seed in any::<u64>(), n in 2usize..=30, density in 0.03f64..0.3) {
            let g = random_graph(seed, n, density, 40.0);
            let cfg = CapeConfig { dilation_radius: 2.0, seed, ..CapeConfig::default() };
            let plan = plan_paths(&g, Shape::new2(40, 40), &cfg).unwrap();
            let mut used: Vec<usize> = plan.paths.iter().flat_map(|p| p.graph_path.edges.iter().copied()).collect();
            used.sort_unstable();
            prop_assert_eq!(used, (0..g.edge_count()).collect::<Vec<_>>());
            prop_assert!(plan.paths.len() <= g.edge_count());
        }

        #[test]
        fn loss_is_non_negative_and_zero_only_on_zero_paths(seed in any::<u64>(), n in 2usize..=12) {
            let g = random_graph(seed, n, 0.3, 32.0);
            let shape = Shape::new2(32, 32);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..shape.len())
                .map(|_| if rng.gen_bool(0.7) { 0.0 } else { rng.gen_range(0.0..3.0) })
                .collect();
            let pred = ScalarGrid::new(shape, data).unwrap();
            let cfg = CapeConfig { seed, ..CapeConfig::default() };
            let r = cape_forward(&g, &pred, &cfg).unwrap();
            prop_assert!(r.total_loss >= 0.0);
            let on_zero = r.records.iter().all(|rec| rec.pixel_path.cells.iter().all(|&c| pred.get(c) == 0.0));
            prop_assert_eq!(r.total_loss == 0.0, on_zero);
            let mut support = BinaryMask::empty(shape);
            for rec in &r.records {
                for &c in &rec.pixel_path.cells {
                    support.set(c, true);
                }
            }
            for (i, &v) in r.gradient.data().iter().enumerate() {
                prop_assert!(v == 0.0 || support.get_linear(i));
            }
            prop_assert_eq!(&r, &cape_forward(&g, &pred, &cfg).unwrap());
        }

        #[test]
        fn raising_a_gap_never_lowers_the_loss(
            start in 10usize..30,
            k1 in 1usize..16,
            dk in 0usize..8,
            c1 in 0.1f64..10.0,
            dc in 0.0f64..5.0,
        ) {
            let base = line_loss(start, k1, c1);
            prop_assert!(base <= line_loss(start, k1 + dk, c1));
            prop_assert!(base <= line_loss(start, k1, c1 + dc));
        }
    }
}
