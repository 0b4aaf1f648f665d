//! Dense 2D/3D grids and the raster operations shared by the loss, the
//! metrics and the synthetic generator.
//!
//! Every grid is stored as a padded 3D volume `(z, y, x)`. A 2D grid of
//! extent `(h, w)` is a volume of extent `(1, h, w)`, so neighbourhood and
//! sweep code is written once; [`Shape::ndim`] remembers which view the
//! caller asked for and all externally visible coordinates use it.

mod edt;
pub mod io;
mod raster;

pub use edt::{dilate, distance_transform, squared_distance_transform};
pub use raster::{rasterize_into, rasterize_polyline, round_half_down};

use crate::error::{CapeError, Result};

/// Real-valued coordinate in padded `(z, y, x)` order.
pub type Point = [f64; 3];

/// Default truncation of distance maps.
pub const DEFAULT_D_MAX: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; 3],
    ndim: usize,
}

impl Shape {
    /// Builds a shape from 2 or 3 extents, slowest axis first.
    pub fn new(extents: &[usize]) -> Result<Self> {
        let ndim = extents.len();
        if ndim != 2 && ndim != 3 {
            return Err(CapeError::UnsupportedDimensionality(ndim));
        }
        if extents.iter().any(|&e| e == 0) {
            return Err(CapeError::InvalidGrid(format!(
                "extents must be positive, got {extents:?}"
            )));
        }
        let mut dims = [1; 3];
        dims[3 - ndim..].copy_from_slice(extents);
        Ok(Shape { dims, ndim })
    }

    pub fn new2(h: usize, w: usize) -> Self {
        Self::new(&[h, w]).expect("positive 2D extents")
    }

    pub fn new3(d: usize, h: usize, w: usize) -> Self {
        Self::new(&[d, h, w]).expect("positive 3D extents")
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    /// Extents in caller order (2 or 3 entries).
    pub fn extents(&self) -> &[usize] {
        &self.dims[3 - self.ndim..]
    }

    /// Padded `(z, y, x)` extents.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, idx: GridIndex) -> usize {
        let [z, y, x] = idx.0;
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn index(&self, linear: usize) -> GridIndex {
        let x = linear % self.dims[2];
        let rest = linear / self.dims[2];
        GridIndex([rest / self.dims[1], rest % self.dims[1], x])
    }

    #[inline]
    pub fn contains(&self, c: [i64; 3]) -> bool {
        (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < self.dims[a])
    }

    /// Converts caller-order coordinates into a padded point.
    pub fn pad_point(&self, coords: &[f64]) -> Result<Point> {
        if coords.len() != self.ndim {
            return Err(CapeError::InvalidGrid(format!(
                "expected {}-dimensional coordinates, got {}",
                self.ndim,
                coords.len()
            )));
        }
        let mut p = [0.0; 3];
        p[3 - self.ndim..].copy_from_slice(coords);
        Ok(p)
    }

    pub fn unpad_point(&self, p: &Point) -> Vec<f64> {
        p[3 - self.ndim..].to_vec()
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        let c = raster::round_point(p);
        self.contains(c)
    }

    /// Neighbour offsets under the given connectivity, restricted to the
    /// axes that exist for this dimensionality.
    pub fn neighbor_offsets(&self, connectivity: Connectivity) -> Vec<[i64; 3]> {
        let zr: &[i64] = if self.ndim == 2 { &[0] } else { &[-1, 0, 1] };
        let mut out = Vec::with_capacity(26);
        for &dz in zr {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let nonzero = [dz, dy, dx].iter().filter(|&&d| d != 0).count();
                    if nonzero == 0 {
                        continue;
                    }
                    if connectivity == Connectivity::Face && nonzero > 1 {
                        continue;
                    }
                    out.push([dz, dy, dx]);
                }
            }
        }
        out
    }
}

/// Cell neighbourhood used by grid searches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// 8-connected in 2D, 26-connected in 3D.
    #[default]
    Full,
    /// 4-connected in 2D, 6-connected in 3D.
    Face,
}

/// Integer cell position in padded `(z, y, x)` order; `z == 0` for 2D grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridIndex(pub [usize; 3]);

impl GridIndex {
    /// Coordinates in caller order for a grid of dimensionality `ndim`.
    pub fn coords(&self, ndim: usize) -> Vec<usize> {
        self.0[3 - ndim..].to_vec()
    }

    pub fn as_point(&self) -> Point {
        [self.0[0] as f64, self.0[1] as f64, self.0[2] as f64]
    }

    pub fn signed(&self) -> [i64; 3] {
        [self.0[0] as i64, self.0[1] as i64, self.0[2] as i64]
    }

    /// Chebyshev distance between two cells.
    pub fn chebyshev(&self, other: &GridIndex) -> usize {
        (0..3).map(|a| self.0[a].abs_diff(other.0[a])).max().unwrap_or(0)
    }
}

/// Dense scalar field, e.g. a predicted or ground-truth distance map.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    shape: Shape,
    data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(CapeError::InvalidGrid(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape.extents()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CapeError::InvalidGrid(format!(
                "non-finite value at linear index {i}"
            )));
        }
        Ok(ScalarGrid { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        ScalarGrid {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, idx: GridIndex) -> f64 {
        self.data[self.shape.linear(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: GridIndex, v: f64) {
        let i = self.shape.linear(idx);
        self.data[i] = v;
    }

    /// Cells whose value is strictly below `threshold`.
    pub fn below(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            shape: self.shape,
            bits: self.data.iter().map(|&v| v < threshold).collect(),
        }
    }

    pub fn is_non_negative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    pub fn ensure_same_shape(&self, other: Shape) -> Result<()> {
        if self.shape != other {
            return Err(CapeError::ShapeMismatch {
                left: self.shape.extents().to_vec(),
                right: other.extents().to_vec(),
            });
        }
        Ok(())
    }
}

/// One boolean per cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Shape,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(shape: Shape, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != shape.len() {
            return Err(CapeError::InvalidGrid(format!(
                "bit count {} does not match shape {:?}",
                bits.len(),
                shape.extents()
            )));
        }
        Ok(BinaryMask { shape, bits })
    }

    pub fn empty(shape: Shape) -> Self {
        BinaryMask {
            shape,
            bits: vec![false; shape.len()],
        }
    }

    pub fn full(shape: Shape) -> Self {
        BinaryMask {
            shape,
            bits: vec![true; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, idx: GridIndex) -> bool {
        self.bits[self.shape.linear(idx)]
    }

    #[inline]
    pub fn get_linear(&self, i: usize) -> bool {
        self.bits[i]
    }

    #[inline]
    pub fn set(&mut self, idx: GridIndex, v: bool) {
        let i = self.shape.linear(idx);
        self.bits[i] = v;
    }

    #[inline]
    pub fn set_linear(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Linear indices of set cells, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    /// `true` when every set cell of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape == other.shape && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn to_grid(&self) -> ScalarGrid {
        ScalarGrid {
            shape: self.shape,
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn ensure_same_shape(&self, other: Shape) -> Result<()> {
        if self.shape != other {
            return Err(CapeError::ShapeMismatch {
                left: self.shape.extents().to_vec(),
                right: other.extents().to_vec(),
            });
        }
        Ok(())
    }
}
