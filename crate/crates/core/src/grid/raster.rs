use super::{BinaryMask, Point, Shape};
use crate::error::{CapeError, Result};

/// Rounds to the nearest integer with ties going toward negative infinity.
#[inline]
pub fn round_half_down(x: f64) -> i64 {
    (x - 0.5).ceil() as i64
}

#[inline]
pub(crate) fn round_point(p: &Point) -> [i64; 3] {
    [
        round_half_down(p[0]),
        round_half_down(p[1]),
        round_half_down(p[2]),
    ]
}

/// Renders a polyline into a fresh mask.
pub fn rasterize_polyline(points: &[Point], shape: Shape) -> Result<BinaryMask> {
    let mut mask = BinaryMask::empty(shape);
    rasterize_into(&mut mask, points)?;
    Ok(mask)
}

/// Renders a polyline into an existing mask (cells are only ever set).
///
/// Each segment is walked along its dominant axis with the other axes
/// rounded to the nearest cell, which gives a Chebyshev-adjacent chain
/// (8-connected in 2D, 26-connected in 3D).
pub fn rasterize_into(mask: &mut BinaryMask, points: &[Point]) -> Result<()> {
    if points.len() < 2 {
        return Err(CapeError::InvalidGrid(format!(
            "a polyline needs at least 2 points, got {}",
            points.len()
        )));
    }
    let shape = mask.shape();
    let mut cells = Vec::with_capacity(points.len());
    for (index, p) in points.iter().enumerate() {
        let c = round_point(p);
        if !shape.contains(c) || (shape.ndim() == 2 && p[0] != 0.0) {
            return Err(CapeError::PointOutOfBounds {
                index,
                coords: shape.unpad_point(p),
                shape: shape.extents().to_vec(),
            });
        }
        cells.push(c);
    }
    for pair in cells.windows(2) {
        for c in line_cells(pair[0], pair[1]) {
            let idx = super::GridIndex([c[0] as usize, c[1] as usize, c[2] as usize]);
            mask.set(idx, true);
        }
    }
    Ok(())
}

/// Integer cells of the segment `a -> b`, both endpoints included.
pub(crate) fn line_cells(a: [i64; 3], b: [i64; 3]) -> impl Iterator<Item = [i64; 3]> {
    let delta = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let steps = delta.iter().map(|d| d.abs()).max().unwrap_or(0);
    (0..=steps).map(move |t| {
        if steps == 0 {
            return a;
        }
        let mut c = a;
        for axis in 0..3 {
            // a + round(delta * t / steps), half-up, in exact integer arithmetic
            let num = 2 * delta[axis] * t + steps;
            c[axis] += num.div_euclid(2 * steps);
        }
        c
    })
}
