//! Synthetic curvilinear structures with exact distance maps and
//! controllably broken predictions.

mod io;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CapeError, Result};
use crate::grid::{
    dilate, distance_transform, rasterize_polyline, squared_distance_transform, BinaryMask,
    GridIndex, Point, ScalarGrid, Shape, DEFAULT_D_MAX,
};
use crate::metrics::{fill_small_holes, SMALL_HOLE_CELLS};
use crate::gt_graph::{
    graph_dijkstra_within, graph_from_mask, skeletonize_2d, Edge, GroundTruthGraph, LiveEdges,
};

pub use io::{read_sample, write_sample};

const STEP: f64 = 2.0;
const MAX_TURN: f64 = 0.25;
const SEPARATION: f64 = 8.0;
const MARGIN: f64 = 3.0;
const ATTEMPTS: usize = 40;
// Sine of the shallowest angle at which a branch may leave its parent.
const BRANCH_SPREAD: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_curves: usize,
    pub loop_prob: f64,
    pub n_gaps: usize,
    pub gap_len: usize,
    pub gap_value: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_curves: 3,
            loop_prob: 0.2,
            n_gaps: 1,
            gap_len: 8,
            gap_value: 5.0,
        }
    }
}

/// One run of centerline cells raised to at least `value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub cells: Vec<Vec<usize>>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub seed: u64,
    pub params: SynthParams,
    pub graph: GroundTruthGraph,
    pub gt_mask: BinaryMask,
    pub gt_map: ScalarGrid,
    pub corrupted_map: ScalarGrid,
    pub corruption_log: Vec<GapRecord>,
}

fn norm(v: &Point) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn dot(a: &Point, b: &Point) -> f64 {
    (0..3).map(|k| a[k] * b[k]).sum()
}

fn scale(v: &Point, s: f64) -> Point {
    std::array::from_fn(|k| v[k] * s)
}

fn add(a: &Point, b: &Point) -> Point {
    std::array::from_fn(|k| a[k] + b[k])
}

fn sub(a: &Point, b: &Point) -> Point {
    std::array::from_fn(|k| a[k] - b[k])
}

fn normalize(v: &Point) -> Point {
    scale(v, 1.0 / norm(v))
}

/// Uniform random unit vector; `z == 0` for 2D.
fn random_direction<R: Rng>(rng: &mut R, ndim: usize) -> Point {
    loop {
        let mut v: Point = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        if ndim == 2 {
            v[0] = 0.0;
        }
        let n = norm(&v);
        if n > 0.1 && n <= 1.0 {
            return scale(&v, 1.0 / n);
        }
    }
}

/// Unit vector perpendicular to the unit vector `h`.
fn random_perpendicular<R: Rng>(rng: &mut R, h: &Point, ndim: usize) -> Point {
    loop {
        let v = random_direction(rng, ndim);
        let p = sub(&v, &scale(h, dot(&v, h)));
        if norm(&p) > 0.1 {
            return normalize(&p);
        }
    }
}

/// Rotates `h` toward `target` by at most `max_angle`.
fn turn_toward(h: &Point, target: &Point, max_angle: f64) -> Point {
    let c = dot(h, target).clamp(-1.0, 1.0);
    if c.acos() <= max_angle {
        return *target;
    }
    let perp = sub(target, &scale(h, c));
    let u = if norm(&perp) < 1e-9 {
        // Opposite directions: any perpendicular works.
        let alt = if h[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] };
        normalize(&sub(&alt, &scale(h, dot(&alt, h))))
    } else {
        normalize(&perp)
    };
    add(&scale(h, max_angle.cos()), &scale(&u, max_angle.sin()))
}

struct Canvas {
    shape: Shape,
    mask: BinaryMask,
    // Squared distance to the curves placed so far.
    clearance: Vec<f64>,
}

impl Canvas {
    fn inside(&self, p: &Point) -> bool {
        let dims = self.shape.dims();
        (3 - self.shape.ndim()..3)
            .all(|k| p[k] >= MARGIN && p[k] <= dims[k] as f64 - 1.0 - MARGIN)
    }

    fn near_border(&self, p: &Point, reach: f64) -> bool {
        let dims = self.shape.dims();
        (3 - self.shape.ndim()..3)
            .any(|k| p[k] < MARGIN + reach || p[k] > dims[k] as f64 - 1.0 - MARGIN - reach)
    }

    /// Whether `p` keeps the minimum separation from placed curves. A branch
    /// grown from `origin` may be closer near its root, as long as it moves
    /// away at a sufficient angle.
    fn clear_of_others(&self, p: &Point, origin: Option<&Point>) -> bool {
        let c: [i64; 3] = std::array::from_fn(|k| p[k].round() as i64);
        if !self.shape.contains(c) {
            return false;
        }
        let idx = GridIndex(std::array::from_fn(|k| c[k] as usize));
        let need = origin.map_or(SEPARATION, |o| SEPARATION.min(BRANCH_SPREAD * norm(&sub(p, o))));
        self.clearance[self.shape.linear(idx)] >= need * need
    }

    fn center(&self) -> Point {
        let dims = self.shape.dims();
        std::array::from_fn(|k| if dims[k] == 1 { 0.0 } else { (dims[k] as f64 - 1.0) / 2.0 })
    }

    fn commit(&mut self, points: &[Point]) -> Result<()> {
        let curve = rasterize_polyline(points, self.shape)?;
        for i in curve.ones() {
            self.mask.set_linear(i, true);
        }
        self.clearance = squared_distance_transform(&self.mask);
        Ok(())
    }
}

fn self_clear(points: &[Point], p: &Point) -> bool {
    let recent = (SEPARATION / STEP).ceil() as usize + 2;
    let older = points.len().saturating_sub(recent);
    points[..older]
        .iter()
        .all(|q| norm(&sub(p, q)) >= SEPARATION)
}

/// Heading random walk from `start`; `None` if it ends up too short.
fn walk<R: Rng>(
    canvas: &Canvas,
    rng: &mut R,
    start: Point,
    heading: Point,
    origin: Option<&Point>,
    target_len: f64,
) -> Option<Vec<Point>> {
    let ndim = canvas.shape.ndim();
    let mut points = vec![start];
    let mut h = heading;
    let mut travelled = 0.0;
    while travelled < target_len {
        let cur = *points.last().unwrap();
        if canvas.near_border(&cur, 4.0 * STEP) {
            let to_center = normalize(&sub(&canvas.center(), &cur));
            h = turn_toward(&h, &to_center, MAX_TURN);
        } else {
            let angle = rng.gen_range(-MAX_TURN..MAX_TURN);
            let u = random_perpendicular(rng, &h, ndim);
            h = normalize(&add(&scale(&h, angle.cos()), &scale(&u, angle.sin())));
        }
        let next = add(&cur, &scale(&h, STEP));
        if !canvas.inside(&next)
            || !canvas.clear_of_others(&next, origin)
            || !self_clear(&points, &next)
        {
            break;
        }
        points.push(next);
        travelled += STEP;
    }
    (travelled >= (0.5 * target_len).max(24.0).min(target_len)).then_some(points)
}

fn open_curve<R: Rng>(canvas: &Canvas, rng: &mut R, branch: bool) -> Option<Vec<Point>> {
    let ndim = canvas.shape.ndim();
    let extent = canvas.shape.extents().iter().copied().max().unwrap() as f64;
    let target_len = rng.gen_range(0.6..1.2) * extent;
    if branch && !canvas.mask.is_empty() {
        let cells: Vec<usize> = canvas.mask.ones().collect();
        let start = canvas.shape.index(cells[rng.gen_range(0..cells.len())]).as_point();
        let heading = random_direction(rng, ndim);
        return walk(canvas, rng, start, heading, Some(&start), target_len);
    }
    let dims = canvas.shape.dims();
    let start: Point = std::array::from_fn(|k| {
        if dims[k] == 1 {
            0.0
        } else {
            rng.gen_range(MARGIN + 4.0..dims[k] as f64 - 5.0 - MARGIN)
        }
    });
    if !canvas.clear_of_others(&start, None) {
        return None;
    }
    let heading = random_direction(rng, ndim);
    walk(canvas, rng, start, heading, None, target_len)
}

/// Closed curve with a smoothly varying radius in a random plane.
fn closed_curve<R: Rng>(canvas: &Canvas, rng: &mut R) -> Option<Vec<Point>> {
    let ndim = canvas.shape.ndim();
    let min_extent = canvas.shape.extents().iter().copied().min().unwrap() as f64;
    let radius = rng.gen_range(0.15..0.3) * min_extent;
    let center = add(
        &canvas.center(),
        &scale(&random_direction(rng, ndim), rng.gen_range(0.0..0.25) * min_extent),
    );
    let (e1, e2) = if ndim == 2 {
        ([0.0, 1.0, 0.0], [0.0, 0.0, 1.0])
    } else {
        let a = random_direction(rng, 3);
        let b = random_perpendicular(rng, &a, 3);
        (a, b)
    };
    let (a1, a2) = (rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.1));
    let (p1, p2) = (
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
    );
    let n = ((std::f64::consts::TAU * radius) / STEP).ceil().max(12.0) as usize;
    let mut points = Vec::with_capacity(n + 1);
    for i in 0..n {
        let t = std::f64::consts::TAU * i as f64 / n as f64;
        let r = radius * (1.0 + a1 * (t + p1).cos() + a2 * (2.0 * t + p2).cos());
        let p = add(&center, &add(&scale(&e1, r * t.cos()), &scale(&e2, r * t.sin())));
        if !canvas.inside(&p) || !canvas.clear_of_others(&p, None) {
            return None;
        }
        points.push(p);
    }
    points.push(points[0]);
    Some(points)
}

/// Random smooth curves rasterized onto `shape`, with the graph of their
/// centerlines. Each curve is closed with probability `loop_prob`; later
/// open curves may branch off earlier ones. Curves that cannot be placed
/// after a bounded number of attempts are skipped.
pub fn gen_structure<R: Rng>(
    rng: &mut R,
    shape: Shape,
    n_curves: usize,
    loop_prob: f64,
) -> Result<(GroundTruthGraph, BinaryMask)> {
    if shape.extents().iter().any(|&e| e < 32) {
        return Err(CapeError::InvalidGrid(format!(
            "synthetic grids need at least 32 cells per axis, got {:?}",
            shape.extents()
        )));
    }
    if n_curves == 0 {
        return Err(CapeError::InvalidConfig("n_curves must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&loop_prob) {
        return Err(CapeError::InvalidConfig(format!(
            "loop_prob must lie in [0, 1], got {loop_prob}"
        )));
    }
    let mut canvas = Canvas {
        shape,
        mask: BinaryMask::empty(shape),
        clearance: vec![f64::INFINITY; shape.len()],
    };
    for i in 0..n_curves {
        let closed = rng.gen_bool(loop_prob);
        let branch = i > 0 && rng.gen_bool(0.5);
        for _ in 0..ATTEMPTS {
            let curve = if closed {
                closed_curve(&canvas, rng)
            } else {
                open_curve(&canvas, rng, branch)
            };
            if let Some(points) = curve {
                canvas.commit(&points)?;
                break;
            }
        }
    }
    if canvas.mask.is_empty() {
        return Err(CapeError::InvalidGrid(
            "no curve could be placed on this grid".into(),
        ));
    }
    // Drop the redundant corner pixels that appear where raster segments
    // meet, and the pinholes left where curves touch.
    let mask = if shape.ndim() == 2 {
        let mut m = canvas.mask;
        fill_small_holes(&mut m, SMALL_HOLE_CELLS);
        skeletonize_2d(&m)?
    } else {
        canvas.mask
    };
    let graph = graph_from_mask(&mask)?.densify();
    Ok((graph, mask))
}

fn to_f32_grid(mut g: ScalarGrid) -> ScalarGrid {
    for v in g.data_mut() {
        *v = *v as f32 as f64;
    }
    g
}

/// Exact distance map of the centerline mask, truncated at the default cap.
/// Values are rounded to `f32` so they survive a file round trip unchanged.
pub fn gt_distance_map(gt_mask: &BinaryMask) -> Result<ScalarGrid> {
    Ok(to_f32_grid(distance_transform(gt_mask, DEFAULT_D_MAX)?))
}

/// Raises `n_gaps` runs of `gap_len` centerline cells, plus everything
/// within two cells of each run, to at least `gap_value`.
///
/// Runs follow the chains of the centerline graph and are placed in the
/// middle half of a chain when it is long enough. Chains whose removal
/// disconnects the structure are preferred, since a gap on a cycle can be
/// routed around.
pub fn corrupt<R: Rng>(
    gt_map: &ScalarGrid,
    gt_mask: &BinaryMask,
    rng: &mut R,
    n_gaps: usize,
    gap_len: usize,
    gap_value: f64,
) -> Result<(ScalarGrid, Vec<GapRecord>)> {
    gt_map.ensure_same_shape(gt_mask.shape())?;
    let mut out = gt_map.clone();
    if n_gaps == 0 {
        return Ok((out, Vec::new()));
    }
    if gap_len == 0 || !(gap_value.is_finite() && gap_value >= 0.0) {
        return Err(CapeError::InvalidConfig(format!(
            "gaps need a positive length and a finite non-negative value, got {gap_len} and {gap_value}"
        )));
    }
    let shape = gt_mask.shape();
    let skeleton = graph_from_mask(gt_mask)?;
    let chains: Vec<Vec<GridIndex>> = (0..skeleton.edge_count())
        .map(|e| {
            skeleton
                .edge_polyline(e, skeleton.edges()[e].a)
                .iter()
                .map(|p| GridIndex(std::array::from_fn(|k| p[k].round() as usize)))
                .collect()
        })
        .collect();
    let longest = chains.iter().map(Vec::len).max().unwrap_or(0);
    if gap_len > longest {
        return Err(CapeError::GapTooLong { gap_len, longest });
    }
    let long_enough: Vec<usize> = (0..chains.len()).filter(|&e| chains[e].len() >= gap_len).collect();
    let bridges: Vec<usize> = long_enough
        .iter()
        .copied()
        .filter(|&e| is_bridge(&skeleton, e))
        .collect();
    let candidates: Vec<&Vec<GridIndex>> = if bridges.is_empty() { &long_enough } else { &bridges }
        .iter()
        .map(|&e| &chains[e])
        .collect();
    let value = gap_value as f32 as f64;
    let mut log = Vec::with_capacity(n_gaps);
    for _ in 0..n_gaps {
        let chain = candidates[rng.gen_range(0..candidates.len())];
        let n = chain.len();
        let (lo, hi) = (n / 4, (3 * n / 4).saturating_sub(gap_len));
        let start = if lo <= hi {
            rng.gen_range(lo..=hi)
        } else {
            rng.gen_range(0..=n - gap_len)
        };
        let run = &chain[start..start + gap_len];
        let mut run_mask = BinaryMask::empty(shape);
        for &c in run {
            run_mask.set(c, true);
        }
        for i in dilate(&run_mask, 2.0)?.ones() {
            let v = &mut out.data_mut()[i];
            *v = v.max(value);
        }
        log.push(GapRecord {
            cells: run.iter().map(|c| c.coords(shape.ndim())).collect(),
            value,
        });
    }
    Ok((out, log))
}

fn is_bridge(g: &GroundTruthGraph, e: usize) -> bool {
    let Edge { a, b, .. } = g.edges()[e];
    if a == b {
        return false;
    }
    let live = LiveEdges::from_ids((0..g.edge_count()).filter(|&o| o != e));
    graph_dijkstra_within(g, Some(&live), a, b).is_err()
}

/// Full sample for `seed`: structure, distance map and corrupted map.
pub fn make_sample(seed: u64, shape: Shape, params: &SynthParams) -> Result<SynthSample> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (graph, gt_mask) = gen_structure(&mut rng, shape, params.n_curves, params.loop_prob)?;
    let gt_map = gt_distance_map(&gt_mask)?;
    let (corrupted_map, corruption_log) = corrupt(
        &gt_map,
        &gt_mask,
        &mut rng,
        params.n_gaps,
        params.gap_len,
        params.gap_value,
    )?;
    Ok(SynthSample {
        seed,
        params: params.clone(),
        graph,
        gt_mask,
        gt_map,
        corrupted_map,
        corruption_log,
    })
}
