//! Thinning and skeleton-to-graph conversion.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet, VecDeque};

use super::GroundTruthGraph;
use crate::error::{CapeError, Result};
use crate::grid::{squared_distance_transform, BinaryMask, Connectivity, GridIndex, Point, ScalarGrid, Shape};

/// Number of 8-connected (2D) / 26-connected (3D) foreground components.
pub fn count_components(mask: &BinaryMask) -> usize {
    let shape = mask.shape();
    let offsets = shape.neighbor_offsets(Connectivity::Full);
    let mut seen = vec![false; shape.len()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in mask.ones() {
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let c = shape.index(i).signed();
            for d in &offsets {
                let n = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
                if !shape.contains(n) {
                    continue;
                }
                let j = shape.linear(GridIndex([n[0] as usize, n[1] as usize, n[2] as usize]));
                if mask.get_linear(j) && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    count
}

/// Ring of the 8 neighbours of `(y, x)` starting north, clockwise;
/// outside cells read as 0.
fn ring(mask: &BinaryMask, y: usize, x: usize) -> [bool; 8] {
    const RING: [(i64, i64); 8] = [
        (-1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
        (1, 0),
        (1, -1),
        (0, -1),
        (-1, -1),
    ];
    let shape = mask.shape();
    let mut out = [false; 8];
    for (k, (dy, dx)) in RING.iter().enumerate() {
        let c = [0, y as i64 + dy, x as i64 + dx];
        out[k] = shape.contains(c) && mask.get(GridIndex([0, c[1] as usize, c[2] as usize]));
    }
    out
}

/// Whether deleting the centre of `p` keeps 8-connected foreground and
/// 4-connected background topology unchanged (ring order N, NE, E, SE, S,
/// SW, W, NW).
fn is_simple(p: &[bool; 8]) -> bool {
    let set: Vec<usize> = (0..8).filter(|&k| p[k]).collect();
    if set.is_empty() || set.len() == 8 {
        return false;
    }
    let adjacent = |i: usize, j: usize| {
        let d = (i + 8 - j) % 8;
        d == 1 || d == 7 || (i % 2 == 0 && j % 2 == 0 && (d == 2 || d == 6))
    };
    let mut seen = vec![set[0]];
    let mut stack = vec![set[0]];
    while let Some(i) = stack.pop() {
        for &j in &set {
            if !seen.contains(&j) && adjacent(i, j) {
                seen.push(j);
                stack.push(j);
            }
        }
    }
    if seen.len() != set.len() {
        return false;
    }
    // Background runs around the ring that touch the centre through an edge.
    let first_set = set[0];
    let mut runs = 0;
    let mut in_run = false;
    let mut touches = false;
    for step in 1..=8 {
        let k = (first_set + step) % 8;
        if !p[k] {
            in_run = true;
            touches |= k % 2 == 0;
        } else if in_run {
            runs += usize::from(touches);
            in_run = false;
            touches = false;
        }
    }
    runs == 1
}

fn thin_ordered(mask: &BinaryMask, priority: &[f64]) -> BinaryMask {
    #[derive(PartialEq)]
    struct Entry(f64, usize);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        // Highest priority first, then lowest index.
        fn cmp(&self, other: &Self) -> Ordering {
            self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
        }
    }

    let shape = mask.shape();
    let [_, h, w] = shape.dims();
    let mut img = mask.clone();
    let mut heap: BinaryHeap<Entry> = mask.ones().map(|i| Entry(priority[i], i)).collect();
    // A cell is re-queued whenever a neighbour is deleted, since that is the
    // only way it can become deletable.
    while let Some(Entry(_, i)) = heap.pop() {
        if !img.get_linear(i) {
            continue;
        }
        let (y, x) = (i / w, i % w);
        let r = ring(&img, y, x);
        if r.iter().filter(|&&v| v).count() < 2 || !is_simple(&r) {
            continue;
        }
        img.set_linear(i, false);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if (dy, dx) != (0, 0) && ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    let j = ny as usize * w + nx as usize;
                    if img.get_linear(j) {
                        heap.push(Entry(priority[j], j));
                    }
                }
            }
        }
    }
    img
}

/// Thins a 2D mask to a one-pixel-wide 8-connected skeleton.
///
/// Simple, non-end pixels are deleted one at a time, closest to the
/// background first, so topology is preserved and the skeleton runs along
/// the middle of thick regions.
pub fn skeletonize_2d(mask: &BinaryMask) -> Result<BinaryMask> {
    let shape = mask.shape();
    if shape.ndim() != 2 {
        return Err(CapeError::UnsupportedDimensionality(shape.ndim()));
    }
    let background = BinaryMask::new(shape, mask.bits().iter().map(|b| !b).collect())?;
    let depth: Vec<f64> = squared_distance_transform(&background)
        .into_iter()
        .map(|d| -d)
        .collect();
    Ok(thin_ordered(mask, &depth))
}

/// Like [`skeletonize_2d`], but pixels with larger `priority` are deleted
/// first. Passing a predicted distance map keeps the skeleton on the
/// predicted centerline.
pub fn skeletonize_2d_by(mask: &BinaryMask, priority: &ScalarGrid) -> Result<BinaryMask> {
    let shape = mask.shape();
    if shape.ndim() != 2 {
        return Err(CapeError::UnsupportedDimensionality(shape.ndim()));
    }
    priority.ensure_same_shape(shape)?;
    Ok(thin_ordered(mask, priority.data()))
}

/// Foreground adjacency without redundant diagonal links.
///
/// Two cells that touch through an edge or corner are linked only if no
/// foreground cell lies "between" them (a cell reached by a strict subset
/// of the axis steps). This removes the spurious triangles that plain
/// 8/26-adjacency creates at corners of digital curves.
pub(crate) struct MinimalAdjacency {
    pub(crate) cells: Vec<usize>,
    pub(crate) slot: Vec<usize>,
    pub(crate) neighbors: Vec<Vec<usize>>,
}

impl MinimalAdjacency {
    pub(crate) fn build(mask: &BinaryMask) -> Self {
        let shape = mask.shape();
        let offsets = shape.neighbor_offsets(Connectivity::Full);
        let cells: Vec<usize> = mask.ones().collect();
        let mut slot = vec![usize::MAX; shape.len()];
        for (k, &c) in cells.iter().enumerate() {
            slot[c] = k;
        }
        let fg = |c: [i64; 3]| -> bool {
            shape.contains(c)
                && mask.get(GridIndex([c[0] as usize, c[1] as usize, c[2] as usize]))
        };
        let mut neighbors = Vec::with_capacity(cells.len());
        for &cell in &cells {
            let c = shape.index(cell).signed();
            let mut list = Vec::new();
            for d in &offsets {
                let n = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
                if !fg(n) {
                    continue;
                }
                let axes: Vec<usize> = (0..3).filter(|&a| d[a] != 0).collect();
                let k = axes.len();
                let mut redundant = false;
                // strict, non-empty subsets of the moving axes
                for subset in 1..(1u32 << k) - 1 {
                    let mut m = c;
                    for (bit, &a) in axes.iter().enumerate() {
                        if subset & (1 << bit) != 0 {
                            m[a] += d[a];
                        }
                    }
                    if fg(m) {
                        redundant = true;
                        break;
                    }
                }
                if !redundant {
                    list.push(shape.linear(GridIndex([n[0] as usize, n[1] as usize, n[2] as usize])));
                }
            }
            list.sort_unstable();
            neighbors.push(list);
        }
        MinimalAdjacency {
            cells,
            slot,
            neighbors,
        }
    }

    fn of(&self, cell: usize) -> &[usize] {
        &self.neighbors[self.slot[cell]]
    }
}

fn cell_point(shape: Shape, cell: usize) -> Point {
    shape.index(cell).as_point()
}

/// Converts a thin mask into a graph.
///
/// Nodes are the foreground cells whose (minimal) neighbour count differs
/// from 2, i.e. endpoints, junctions and isolated cells, plus one anchor
/// per pure cycle (its smallest linear index). Edges follow the degree-2
/// chains between nodes and keep the chain cells as waypoints, so the edge
/// weight is the accumulated step length (1, √2 or √3 per step).
///
/// Chains that would form a self-loop or repeat an existing node pair are
/// split at interior cells, which become extra nodes.
pub fn graph_from_mask(mask: &BinaryMask) -> Result<GroundTruthGraph> {
    if mask.is_empty() {
        return Err(CapeError::EmptyForeground);
    }
    let shape = mask.shape();
    let adj = MinimalAdjacency::build(mask);
    let is_node = |cell: usize| adj.of(cell).len() != 2;

    let mut chains: Vec<Vec<usize>> = Vec::new();
    let mut visited: HashSet<(usize, usize)> = HashSet::new();
    let mut covered = vec![false; adj.cells.len()];

    for &n in adj.cells.iter().filter(|&&c| is_node(c)) {
        covered[adj.slot[n]] = true;
        for &m in adj.of(n) {
            if visited.contains(&(n, m)) {
                continue;
            }
            visited.insert((n, m));
            let mut chain = vec![n];
            let (mut prev, mut cur) = (n, m);
            while !is_node(cur) {
                chain.push(cur);
                covered[adj.slot[cur]] = true;
                let next = *adj
                    .of(cur)
                    .iter()
                    .find(|&&x| x != prev)
                    .expect("degree-2 cell has a second neighbour");
                prev = cur;
                cur = next;
            }
            visited.insert((cur, prev));
            chain.push(cur);
            chains.push(chain);
        }
    }

    // whatever is left consists of pure cycles
    for k in 0..adj.cells.len() {
        if covered[k] {
            continue;
        }
        let anchor = adj.cells[k];
        let mut chain = vec![anchor];
        covered[k] = true;
        let (mut prev, mut cur) = (anchor, adj.of(anchor)[0]);
        while cur != anchor {
            chain.push(cur);
            covered[adj.slot[cur]] = true;
            let next = *adj
                .of(cur)
                .iter()
                .find(|&&x| x != prev)
                .expect("cycle cell has a second neighbour");
            prev = cur;
            cur = next;
        }
        chain.push(anchor);
        chains.push(chain);
    }

    let mut node_of_cell = std::collections::HashMap::new();
    let mut nodes: Vec<Point> = Vec::new();
    let mut node_id = |cell: usize, nodes: &mut Vec<Point>| -> usize {
        *node_of_cell.entry(cell).or_insert_with(|| {
            nodes.push(cell_point(shape, cell));
            nodes.len() - 1
        })
    };
    // Degree != 2 cells first, in linear order, so ids are stable.
    for &c in adj.cells.iter().filter(|&&c| is_node(c)) {
        node_id(c, &mut nodes);
    }

    let mut pieces: Vec<Vec<usize>> = Vec::with_capacity(chains.len());
    let key = |c: &[usize]| {
        let (first, last) = (c[0], c[c.len() - 1]);
        (first.min(last), first.max(last))
    };
    // adjacent nodes joined directly cannot be split, so parallel chains yield
    let direct: HashSet<(usize, usize)> = chains.iter().filter(|c| c.len() == 2).map(|c| key(c)).collect();
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    for chain in chains {
        let (first, last) = (chain[0], *chain.last().unwrap());
        let m = chain.len() - 1;
        if m == 1 {
            pairs.insert(key(&chain));
            pieces.push(chain);
        } else if first == last {
            let (i1, i2) = (m / 3, (2 * m) / 3);
            let (i1, i2) = (i1.max(1), i2.max(i1.max(1) + 1));
            pieces.push(chain[..=i1].to_vec());
            pieces.push(chain[i1..=i2].to_vec());
            pieces.push(chain[i2..].to_vec());
        } else if direct.contains(&key(&chain)) || !pairs.insert(key(&chain)) {
            let mid = m / 2;
            pieces.push(chain[..=mid].to_vec());
            pieces.push(chain[mid..].to_vec());
        } else {
            pieces.push(chain);
        }
    }

    let mut edges = Vec::with_capacity(pieces.len());
    for piece in &pieces {
        let a = node_id(piece[0], &mut nodes);
        let b = node_id(*piece.last().unwrap(), &mut nodes);
        let waypoints = piece[1..piece.len() - 1]
            .iter()
            .map(|&c| cell_point(shape, c))
            .collect();
        edges.push((a, b, waypoints));
    }
    GroundTruthGraph::with_geometry(shape.ndim(), nodes, edges)
}
