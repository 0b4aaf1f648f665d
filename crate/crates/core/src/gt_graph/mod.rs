//! Geometric graphs of curvilinear structures: construction, shortest
//! paths, the pair sampling and edge bookkeeping used by the loss loop, and
//! extraction of graphs from thin masks.

pub mod io;
mod skeleton;

pub use skeleton::{count_components, graph_from_mask, skeletonize_2d, skeletonize_2d_by};

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use rand::Rng;

use crate::error::{CapeError, Result};
use crate::grid::{Point, Shape};

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Length of the polyline `a -> waypoints -> b`.
    pub weight: f64,
    /// Interior geometry, ordered from `a` to `b`. Empty for straight edges.
    pub waypoints: Vec<Point>,
}

impl Edge {
    pub fn other(&self, v: usize) -> usize {
        if v == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Undirected geometric graph with Euclidean edge lengths.
///
/// Nodes are padded `(z, y, x)` points. An edge either is a straight
/// segment between its endpoints or carries interior waypoints (graphs
/// extracted from skeletons keep their pixel chains); its weight is always
/// the length of that polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthGraph {
    ndim: usize,
    nodes: Vec<Point>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

fn polyline_length(points: &[Point]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let d: f64 = (0..3).map(|a| (w[0][a] - w[1][a]).powi(2)).sum();
            d.sqrt()
        })
        .sum()
}

impl GroundTruthGraph {
    pub fn empty(ndim: usize) -> Self {
        GroundTruthGraph {
            ndim,
            nodes: Vec::new(),
            edges: Vec::new(),
            adjacency: Vec::new(),
        }
    }

    /// Straight-edge graph from padded node points and index pairs.
    pub fn new(ndim: usize, nodes: Vec<Point>, edges: &[(usize, usize)]) -> Result<Self> {
        let geometry = edges.iter().map(|&(a, b)| (a, b, Vec::new())).collect();
        Self::with_geometry(ndim, nodes, geometry)
    }

    /// Straight-edge graph from caller-order coordinates (`[y, x]` or `[z, y, x]`).
    pub fn from_coords(ndim: usize, nodes: &[Vec<f64>], edges: &[(usize, usize)]) -> Result<Self> {
        if ndim != 2 && ndim != 3 {
            return Err(CapeError::UnsupportedDimensionality(ndim));
        }
        let mut padded = Vec::with_capacity(nodes.len());
        for (i, c) in nodes.iter().enumerate() {
            if c.len() != ndim {
                return Err(CapeError::InvalidGraph(format!(
                    "node {i} has {} coordinates, expected {ndim}",
                    c.len()
                )));
            }
            let mut p = [0.0; 3];
            p[3 - ndim..].copy_from_slice(c);
            padded.push(p);
        }
        Self::new(ndim, padded, edges)
    }

    pub fn with_geometry(
        ndim: usize,
        nodes: Vec<Point>,
        edges: Vec<(usize, usize, Vec<Point>)>,
    ) -> Result<Self> {
        if ndim != 2 && ndim != 3 {
            return Err(CapeError::UnsupportedDimensionality(ndim));
        }
        if let Some(i) = nodes
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()) || (ndim == 2 && p[0] != 0.0))
        {
            return Err(CapeError::InvalidGraph(format!("node {i} has invalid coordinates")));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut out = Vec::with_capacity(edges.len());
        for (a, b, waypoints) in edges {
            if a >= nodes.len() || b >= nodes.len() {
                return Err(CapeError::InvalidGraph(format!(
                    "edge ({a}, {b}) references a missing node ({} nodes)",
                    nodes.len()
                )));
            }
            if a == b {
                return Err(CapeError::InvalidGraph(format!("self-loop at node {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(CapeError::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
            let mut poly = Vec::with_capacity(waypoints.len() + 2);
            poly.push(nodes[a]);
            poly.extend_from_slice(&waypoints);
            poly.push(nodes[b]);
            let weight = polyline_length(&poly);
            if !(weight > 0.0) {
                return Err(CapeError::InvalidGraph(format!(
                    "edge ({a}, {b}) has zero length"
                )));
            }
            let id = out.len();
            adjacency[a].push((b, id));
            adjacency[b].push((a, id));
            out.push(Edge {
                a,
                b,
                weight,
                waypoints,
            });
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(GroundTruthGraph {
            ndim,
            nodes,
            edges: out,
            adjacency,
        })
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(neighbour, edge id)` pairs sorted by neighbour index.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn edge_between(&self, u: usize, v: usize) -> Option<usize> {
        self.adjacency[u]
            .binary_search_by(|&(w, _)| w.cmp(&v))
            .ok()
            .map(|k| self.adjacency[u][k].1)
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn has_waypoints(&self) -> bool {
        self.edges.iter().any(|e| !e.waypoints.is_empty())
    }

    /// Fails if any node or waypoint rounds to a cell outside `shape`.
    pub fn check_within(&self, shape: Shape) -> Result<()> {
        if shape.ndim() != self.ndim {
            return Err(CapeError::ShapeMismatch {
                left: vec![self.ndim],
                right: shape.extents().to_vec(),
            });
        }
        let points = self
            .nodes
            .iter()
            .chain(self.edges.iter().flat_map(|e| e.waypoints.iter()));
        for (index, p) in points.enumerate() {
            if !shape.contains_point(p) {
                return Err(CapeError::PointOutOfBounds {
                    index,
                    coords: shape.unpad_point(p),
                    shape: shape.extents().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Geometry of an edge walked starting from node `from`.
    pub fn edge_polyline(&self, edge: usize, from: usize) -> Vec<Point> {
        let e = &self.edges[edge];
        let mut pts = Vec::with_capacity(e.waypoints.len() + 2);
        pts.push(self.nodes[e.a]);
        pts.extend_from_slice(&e.waypoints);
        pts.push(self.nodes[e.b]);
        if from == e.b {
            pts.reverse();
        }
        pts
    }

    /// Polyline through every node (and edge waypoint) of a path.
    pub fn path_polyline(&self, path: &GraphPath) -> Vec<Point> {
        let mut pts = vec![self.nodes[path.nodes[0]]];
        for (k, &e) in path.edges.iter().enumerate() {
            let seg = self.edge_polyline(e, path.nodes[k]);
            pts.extend_from_slice(&seg[1..]);
        }
        pts
    }

    /// Converts every waypoint into a node so all edges become straight.
    pub fn densify(&self) -> GroundTruthGraph {
        if !self.has_waypoints() {
            return self.clone();
        }
        let mut nodes = self.nodes.clone();
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let mut prev = e.a;
            for w in &e.waypoints {
                nodes.push(*w);
                let id = nodes.len() - 1;
                edges.push((prev, id));
                prev = id;
            }
            edges.push((prev, e.b));
        }
        GroundTruthGraph::new(self.ndim, nodes, &edges)
            .expect("densifying a valid graph yields a valid graph")
    }

    /// Connected-component label per node (labels are dense, in node order).
    pub fn component_labels(&self) -> Vec<usize> {
        component_labels_of(self.node_count(), self.edges.iter().map(|e| (e.a, e.b)))
    }

    pub fn component_count(&self) -> usize {
        self.component_labels().iter().max().map_or(0, |m| m + 1)
    }
}

fn component_labels_of(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    let mut root_label = vec![usize::MAX; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        if root_label[r] == usize::MAX {
            root_label[r] = next;
            next += 1;
        }
        labels[v] = root_label[r];
    }
    labels
}

/// Node sequence through the graph plus the edges it traverses.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphPath {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
    pub length: f64,
}

/// The set of edges not yet covered by a sampled path.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LiveEdges(BTreeSet<usize>);

impl LiveEdges {
    pub fn all(g: &GroundTruthGraph) -> Self {
        LiveEdges((0..g.edge_count()).collect())
    }

    pub fn from_ids(ids: impl IntoIterator<Item = usize>) -> Self {
        LiveEdges(ids.into_iter().collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, e: usize) -> bool {
        self.0.contains(&e)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest distances, optionally restricted to live edges.
pub fn shortest_distances(
    g: &GroundTruthGraph,
    source: usize,
    live: Option<&LiveEdges>,
) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.node_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapEntry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(w, e) in g.neighbors(node) {
            if live.is_some_and(|l| !l.contains(e)) {
                continue;
            }
            let nd = d + g.edges[e].weight;
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(HeapEntry { dist: nd, node: w });
            }
        }
    }
    dist
}

/// Minimum-length path between two nodes over the whole graph.
///
/// Among equally short paths the lexicographically smallest node sequence
/// is returned.
pub fn graph_dijkstra(g: &GroundTruthGraph, v1: usize, v2: usize) -> Result<GraphPath> {
    graph_dijkstra_within(g, None, v1, v2)
}

/// [`graph_dijkstra`] restricted to the edges in `live` (all edges if `None`).
pub fn graph_dijkstra_within(
    g: &GroundTruthGraph,
    live: Option<&LiveEdges>,
    v1: usize,
    v2: usize,
) -> Result<GraphPath> {
    let n = g.node_count();
    if v1 >= n || v2 >= n {
        return Err(CapeError::InvalidGraph(format!(
            "node id out of range: ({v1}, {v2}) with {n} nodes"
        )));
    }
    if v1 == v2 {
        return Err(CapeError::InvalidGraph(format!(
            "path endpoints must differ (both {v1})"
        )));
    }
    // Distances to the target; the forward walk then greedily takes the
    // smallest neighbour that stays on some shortest path.
    let to_target = shortest_distances(g, v2, live);
    if !to_target[v1].is_finite() {
        return Err(CapeError::Unreachable { from: v1, to: v2 });
    }
    let mut nodes = vec![v1];
    let mut edges = Vec::new();
    let mut length = 0.0;
    let mut cur = v1;
    while cur != v2 {
        let here = to_target[cur];
        let tol = 1e-9 * here.max(1.0);
        let (next, e) = g
            .neighbors(cur)
            .iter()
            .copied()
            .filter(|&(_, e)| live.is_none_or(|l| l.contains(e)))
            .find(|&(w, e)| {
                to_target[w] < here && (g.edges[e].weight + to_target[w] - here).abs() <= tol
            })
            .expect("shortest-path tree always offers a successor");
        length += g.edges[e].weight;
        nodes.push(next);
        edges.push(e);
        cur = next;
    }
    Ok(GraphPath {
        nodes,
        edges,
        length,
    })
}

const PAIR_RETRIES: usize = 64;

/// Draws two distinct vertices that are connected through live edges.
///
/// Vertices are drawn uniformly from those incident to a live edge and
/// redrawn (at most 64 times) until both fall in the same live component;
/// after that the endpoints of a uniformly drawn live edge are returned.
pub fn sample_pair<R: Rng + ?Sized>(
    g: &GroundTruthGraph,
    live: &LiveEdges,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if live.is_empty() {
        return Err(CapeError::InvalidGraph("no live edges to sample from".into()));
    }
    let incident: Vec<usize> = live
        .iter()
        .flat_map(|e| [g.edges[e].a, g.edges[e].b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = component_labels_of(
        g.node_count(),
        live.iter().map(|e| (g.edges[e].a, g.edges[e].b)),
    );
    let n = incident.len();
    for _ in 0..PAIR_RETRIES {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (incident[i], incident[j]);
        if labels[a] == labels[b] {
            return Ok((a, b));
        }
    }
    let pick = rng.gen_range(0..live.len());
    let e = live.iter().nth(pick).expect("index within live set");
    Ok((g.edges[e].a, g.edges[e].b))
}

/// Live edges minus every edge traversed by `path`.
pub fn remove_path_edges(live: &LiveEdges, path: &GraphPath) -> LiveEdges {
    let mut out = live.clone();
    for e in &path.edges {
        out.0.remove(e);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(y: f64, x: f64) -> Point {
        [0.0, y, x]
    }

    fn triangle() -> GroundTruthGraph {
        // 0-1 and 1-2 have length 1 (bent), 0-2 is a detour of length 4.
        GroundTruthGraph::with_geometry(
            2,
            vec![p(0.0, 0.0), p(0.0, 1.0), p(1.0, 1.0)],
            vec![
                (0, 1, vec![]),
                (1, 2, vec![]),
                (0, 2, vec![p(0.0, -1.0), p(1.0, -1.0)]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        let nodes = vec![p(0.0, 0.0), p(0.0, 1.0)];
        assert!(GroundTruthGraph::new(2, nodes.clone(), &[(0, 0)]).is_err());
        assert!(GroundTruthGraph::new(2, nodes.clone(), &[(0, 1), (1, 0)]).is_err());
        assert!(GroundTruthGraph::new(2, nodes, &[(0, 2)]).is_err());
    }

    #[test]
    fn weights_are_polyline_lengths() {
        let g = triangle();
        assert_eq!(g.edges()[0].weight, 1.0);
        assert!((g.edges()[2].weight - 4.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_prefers_two_hops() {
        let path = graph_dijkstra(&triangle(), 0, 2).unwrap();
        assert_eq!(path.nodes, vec![0, 1, 2]);
        assert_eq!(path.length, 2.0);
    }

    #[test]
    fn neighbour_query_is_single_edge() {
        let path = graph_dijkstra(&triangle(), 1, 2).unwrap();
        assert_eq!(path.nodes, vec![1, 2]);
        assert_eq!(path.edges.len(), 1);
    }

    #[test]
    fn ties_pick_lexicographically_smallest_sequence() {
        // Square 0-1-3 and 0-2-3 both of length 2.
        let g = GroundTruthGraph::new(
            2,
            vec![p(0.0, 0.0), p(0.0, 1.0), p(1.0, 0.0), p(1.0, 1.0)],
            &[(0, 2), (2, 3), (0, 1), (1, 3)],
        )
        .unwrap();
        assert_eq!(graph_dijkstra(&g, 0, 3).unwrap().nodes, vec![0, 1, 3]);
        assert_eq!(graph_dijkstra(&g, 3, 0).unwrap().nodes, vec![3, 1, 0]);
    }

    #[test]
    fn unreachable_components() {
        let g = GroundTruthGraph::new(
            2,
            vec![p(0.0, 0.0), p(0.0, 1.0), p(5.0, 5.0), p(5.0, 6.0)],
            &[(0, 1), (2, 3)],
        )
        .unwrap();
        assert!(matches!(
            graph_dijkstra(&g, 0, 3),
            Err(CapeError::Unreachable { from: 0, to: 3 })
        ));
    }

    #[test]
    fn single_live_edge_forces_its_endpoints() {
        let g = triangle();
        let live = LiveEdges::from_ids([1]);
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = sample_pair(&g, &live, &mut rng).unwrap();
            assert_eq!((a.min(b), a.max(b)), (1, 2));
        }
    }

    #[test]
    fn disjoint_live_components_never_mix() {
        let g = GroundTruthGraph::new(
            2,
            vec![
                p(0.0, 0.0),
                p(0.0, 1.0),
                p(0.0, 2.0),
                p(9.0, 0.0),
                p(9.0, 1.0),
                p(9.0, 2.0),
            ],
            &[(0, 1), (1, 2), (3, 4), (4, 5)],
        )
        .unwrap();
        let live = LiveEdges::all(&g);
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = sample_pair(&g, &live, &mut rng).unwrap();
            assert_ne!(a, b);
            assert_eq!(a < 3, b < 3, "seed {seed} mixed components: {a} {b}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = triangle();
        let live = LiveEdges::all(&g);
        let draw = |s| sample_pair(&g, &live, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn edge_removal() {
        let g = GroundTruthGraph::new(
            2,
            (0..6).map(|i| p(0.0, i as f64)).collect(),
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)],
        )
        .unwrap();
        let live = LiveEdges::all(&g);
        let whole = graph_dijkstra(&g, 0, 5).unwrap();
        assert!(remove_path_edges(&live, &whole).is_empty());
        let part = graph_dijkstra(&g, 0, 2).unwrap();
        let rest = remove_path_edges(&live, &part);
        assert_eq!(rest.len(), 3);
        assert_eq!(remove_path_edges(&rest, &part), rest);
    }

    #[test]
    fn densify_preserves_lengths_and_polylines() {
        let g = triangle();
        let d = g.densify();
        assert_eq!(d.node_count(), 5);
        assert_eq!(d.edge_count(), 5);
        assert!((d.total_length() - g.total_length()).abs() < 1e-12);
        assert!(!d.has_waypoints());
    }

    #[test]
    fn path_polyline_follows_waypoints() {
        let g = triangle();
        let live = LiveEdges::from_ids([2]);
        let path = graph_dijkstra_within(&g, Some(&live), 2, 0).unwrap();
        assert_eq!(
            g.path_polyline(&path),
            vec![p(1.0, 1.0), p(1.0, -1.0), p(0.0, -1.0), p(0.0, 0.0)]
        );
    }
}
