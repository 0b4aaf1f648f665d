//! Exact Euclidean distance transform via separable lower envelopes of
//! parabolas (one 1D pass per axis).

use super::{BinaryMask, ScalarGrid, Shape};
use crate::error::{CapeError, Result};

/// Squared distance from every cell to the nearest set cell of `mask`.
///
/// Values are exact integers stored as `f64`; cells in a grid without any
/// set cell are `+inf`.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let shape = mask.shape();
    let mut f: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let [d, h, w] = shape.dims();
    let longest = d.max(h).max(w);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut scratch = Envelope::with_capacity(longest);

    // x, then y, then z.
    let strides = [h * w, w, 1];
    for axis in (0..3).rev() {
        let n = shape.dims()[axis];
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        for start in line_starts(shape, axis) {
            for (k, slot) in line[..n].iter_mut().enumerate() {
                *slot = f[start + k * stride];
            }
            scratch.transform(&line[..n], &mut out[..n]);
            for (k, v) in out[..n].iter().enumerate() {
                f[start + k * stride] = *v;
            }
        }
    }
    f
}

fn line_starts(shape: Shape, axis: usize) -> Vec<usize> {
    let [d, h, w] = shape.dims();
    let mut starts = Vec::new();
    match axis {
        2 => {
            for z in 0..d {
                for y in 0..h {
                    starts.push((z * h + y) * w);
                }
            }
        }
        1 => {
            for z in 0..d {
                for x in 0..w {
                    starts.push(z * h * w + x);
                }
            }
        }
        _ => {
            for y in 0..h {
                for x in 0..w {
                    starts.push(y * w + x);
                }
            }
        }
    }
    starts
}

struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            sites: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    fn transform(&mut self, f: &[f64], out: &mut [f64]) {
        self.sites.clear();
        self.bounds.clear();
        let mut finite = (0..f.len()).filter(|&q| f[q].is_finite());
        let Some(first) = finite.next() else {
            out.fill(f64::INFINITY);
            return;
        };
        self.sites.push(first);
        self.bounds.push(f64::NEG_INFINITY);
        self.bounds.push(f64::INFINITY);
        for q in finite {
            let mut s = intersect(f, q, *self.sites.last().unwrap());
            while s <= self.bounds[self.sites.len() - 1] {
                self.sites.pop();
                self.bounds.pop();
                s = intersect(f, q, *self.sites.last().unwrap());
            }
            let k = self.sites.len();
            self.sites.push(q);
            self.bounds[k] = s;
            self.bounds.push(f64::INFINITY);
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            while self.bounds[k + 1] < q as f64 {
                k += 1;
            }
            let v = self.sites[k];
            let dq = q as f64 - v as f64;
            *o = dq * dq + f[v];
        }
    }
}

#[inline]
fn intersect(f: &[f64], q: usize, r: usize) -> f64 {
    let (qf, rf) = (q as f64, r as f64);
    ((f[q] + qf * qf) - (f[r] + rf * rf)) / (2.0 * (qf - rf))
}

/// Euclidean distance to the nearest foreground cell, clipped at `d_max`.
pub fn distance_transform(mask: &BinaryMask, d_max: f64) -> Result<ScalarGrid> {
    if !(d_max > 0.0) {
        return Err(CapeError::InvalidConfig(format!(
            "d_max must be positive, got {d_max}"
        )));
    }
    if mask.is_empty() {
        return Err(CapeError::EmptyForeground);
    }
    let data = squared_distance_transform(mask)
        .into_iter()
        .map(|sq| sq.sqrt().min(d_max))
        .collect();
    ScalarGrid::new(mask.shape(), data)
}

/// Morphological dilation with a Euclidean ball of the given radius.
///
/// The transform only runs inside the foreground bounding box grown by
/// `radius`; no cell outside that box can be within reach.
pub fn dilate(mask: &BinaryMask, radius: f64) -> Result<BinaryMask> {
    if !(radius > 0.0) {
        return Err(CapeError::InvalidConfig(format!(
            "dilation radius must be positive, got {radius}"
        )));
    }
    let shape = mask.shape();
    let dims = shape.dims();
    let mut lo = dims;
    let mut hi = [0usize; 3];
    let mut any = false;
    for i in mask.ones() {
        let c = shape.index(i).0;
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
        any = true;
    }
    if !any {
        return Ok(BinaryMask::empty(shape));
    }
    let reach = if radius.is_finite() {
        radius.floor() as usize
    } else {
        usize::MAX / 4
    };
    let mut sub_extents = [1usize; 3];
    for a in 0..3 {
        lo[a] = lo[a].saturating_sub(reach);
        hi[a] = hi[a].saturating_add(reach).min(dims[a] - 1);
        sub_extents[a] = hi[a] - lo[a] + 1;
    }
    let sub_shape = if shape.ndim() == 2 {
        Shape::new2(sub_extents[1], sub_extents[2])
    } else {
        Shape::new3(sub_extents[0], sub_extents[1], sub_extents[2])
    };
    let mut sub = BinaryMask::empty(sub_shape);
    for i in mask.ones() {
        let c = shape.index(i).0;
        let local = super::GridIndex([c[0] - lo[0], c[1] - lo[1], c[2] - lo[2]]);
        sub.set(local, true);
    }
    let sq = squared_distance_transform(&sub);
    let r2 = radius * radius;
    let mut out = BinaryMask::empty(shape);
    for (li, &d2) in sq.iter().enumerate() {
        if d2 <= r2 {
            let c = sub_shape.index(li).0;
            out.set(super::GridIndex([c[0] + lo[0], c[1] + lo[1], c[2] + lo[2]]), true);
        }
    }
    Ok(out)
}
