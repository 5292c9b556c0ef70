//! Dense 3D scalar volumes, overlapped tiling, and the on-disk formats.
//!
//! Samples are stored with the time/depth index fastest, then crossline,
//! then inline: `index = t + T * (x + X * y)`. Every other module depends on
//! this order.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SVOL_MAGIC: &[u8; 4] = b"SVOL";
pub const SVOL_VERSION: u32 = 1;
const SVOL_HEADER_LEN: usize = 4 + 4 + 12 + 4;

/// Smallest cube side accepted by [`tile_plan`].
pub const MIN_CUBE_SIDE: usize = 4;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("data length {got} does not match dims {dims} ({} voxels)", dims.len())]
    LengthMismatch { dims: Dims, got: usize },
    #[error("dimensions must be positive, got {0}")]
    EmptyDims(Dims),
    #[error("non-finite sample at flat index {0}")]
    NonFinite(usize),
    #[error("cube side {0} is below the minimum of {MIN_CUBE_SIDE}")]
    CubeTooSmall(usize),
    #[error("cube side {n} does not fit in volume {dims}")]
    DimensionTooSmall { n: usize, dims: Dims },
    #[error("stride {stride} violates the overlap rule for cube side {n} (need 1 <= stride <= n/2)")]
    OverlapViolation { stride: usize, n: usize },
    #[error("tile at {origin:?} with side {n} leaves volume {dims}")]
    OutOfBounds { origin: [usize; 3], n: usize, dims: Dims },
    #[error("tile holds {got} values, expected {expected}")]
    TileLength { got: usize, expected: usize },
    #[error("index {index} out of range for axis {axis} (length {len})")]
    IndexOutOfRange { axis: Axis, index: usize, len: usize },
    #[error("dims mismatch: {0} vs {1}")]
    DimsMismatch(Dims, Dims),
    #[error("malformed volume file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Volume extent as (T, X, Y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub t: usize,
    pub x: usize,
    pub y: usize,
}

impl Dims {
    pub const fn new(t: usize, x: usize, y: usize) -> Self {
        Self { t, x, y }
    }

    pub const fn cube(n: usize) -> Self {
        Self { t: n, x: n, y: n }
    }

    pub const fn len(&self) -> usize {
        self.t * self.x * self.y
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, t: usize, x: usize, y: usize) -> usize {
        t + self.t * (x + self.x * y)
    }

    /// Inverse of [`Dims::index`].
    #[inline]
    pub const fn coords(&self, idx: usize) -> [usize; 3] {
        let t = idx % self.t;
        let rest = idx / self.t;
        [t, rest % self.x, rest / self.x]
    }

    pub const fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::T => self.t,
            Axis::X => self.x,
            Axis::Y => self.y,
        }
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.t, self.x, self.y]
    }

    pub fn min_side(&self) -> usize {
        self.t.min(self.x).min(self.y)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.t, self.x, self.y)
    }
}

impl FromStr for Dims {
    type Err = String;

    /// Parses `T,X,Y` (or `TxXxY`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([',', 'x']).map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("expected T,X,Y, got {s:?}"));
        }
        let mut vals = [0usize; 3];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p.parse().map_err(|_| format!("bad dimension {p:?}"))?;
        }
        Ok(Dims::new(vals[0], vals[1], vals[2]))
    }
}

/// The three volume axes: time/depth, crossline, inline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    T,
    X,
    Y,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::T, Axis::X, Axis::Y];

    pub const fn as_str(&self) -> &'static str {
        match self {
            Axis::T => "t",
            Axis::X => "x",
            Axis::Y => "y",
        }
    }

    pub const fn position(&self) -> usize {
        match self {
            Axis::T => 0,
            Axis::X => 1,
            Axis::Y => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t" | "time" | "depth" => Ok(Axis::T),
            "x" | "crossline" | "xline" => Ok(Axis::X),
            "y" | "inline" | "iline" => Ok(Axis::Y),
            other => Err(format!("unknown axis {other:?} (expected t, x or y)")),
        }
    }
}

pub fn default_axis_labels() -> [String; 3] {
    ["time".to_string(), "crossline".to_string(), "inline".to_string()]
}

/// Dense scalar field over (t, x, y).
///
/// All samples are finite; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    data: Vec<f32>,
    pub axis_labels: [String; 3],
    pub sample_interval_ms: Option<f32>,
    /// First inline, first crossline, first sample.
    pub origin_indices: [i64; 3],
}

impl Volume3D {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self, VolumeError> {
        if dims.is_empty() {
            return Err(VolumeError::EmptyDims(dims));
        }
        if data.len() != dims.len() {
            return Err(VolumeError::LengthMismatch { dims, got: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self {
            dims,
            data,
            axis_labels: default_axis_labels(),
            sample_interval_ms: None,
            origin_indices: [0; 3],
        })
    }

    pub fn zeros(dims: Dims) -> Result<Self, VolumeError> {
        Self::new(dims, vec![0.0; dims.len()])
    }

    /// Builds a volume by evaluating `f(t, x, y)` in storage order.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self, VolumeError> {
        let mut data = Vec::with_capacity(dims.len());
        for y in 0..dims.y {
            for x in 0..dims.x {
                for t in 0..dims.t {
                    data.push(f(t, x, y));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, t: usize, x: usize, y: usize) -> f32 {
        self.data[self.dims.index(t, x, y)]
    }

    /// Copies axis labels, sample interval and origin from `other`.
    pub fn with_metadata_of(mut self, other: &Volume3D) -> Self {
        self.axis_labels = other.axis_labels.clone();
        self.sample_interval_ms = other.sample_interval_ms;
        self.origin_indices = other.origin_indices;
        self
    }

    /// Applies `f` to every sample, rejecting non-finite results.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self, VolumeError> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Ok(Self::new(self.dims, data)?.with_metadata_of(self))
    }

    /// Copies the `n`³ cube at `origin` into `out` in storage order.
    pub fn read_cube(&self, origin: [usize; 3], n: usize, out: &mut [f64]) -> Result<(), VolumeError> {
        check_tile(self.dims, origin, n)?;
        if out.len() != n * n * n {
            return Err(VolumeError::TileLength { got: out.len(), expected: n * n * n });
        }
        let [t0, x0, y0] = origin;
        let mut k = 0;
        for y in y0..y0 + n {
            for x in x0..x0 + n {
                let row = self.dims.index(t0, x, y);
                for v in &self.data[row..row + n] {
                    out[k] = f64::from(*v);
                    k += 1;
                }
            }
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Flat index of the largest sample (first occurrence).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

pub fn ensure_same_dims(a: &Volume3D, b: &Volume3D) -> Result<(), VolumeError> {
    if a.dims() != b.dims() {
        return Err(VolumeError::DimsMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

fn check_tile(dims: Dims, origin: [usize; 3], n: usize) -> Result<(), VolumeError> {
    let fits = origin
        .iter()
        .zip(dims.as_array())
        .all(|(&o, d)| o.checked_add(n).is_some_and(|end| end <= d));
    if fits {
        Ok(())
    } else {
        Err(VolumeError::OutOfBounds { origin, n, dims })
    }
}

/// Placement of overlapping `n`³ windows over a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub dims: Dims,
    pub cube_side: usize,
    pub stride: usize,
    /// Window corners, t fastest, then x, then y.
    pub origins: Vec<[usize; 3]>,
    pub coverage: Vec<u32>,
}

impl TileGrid {
    pub fn coverage_at(&self, t: usize, x: usize, y: usize) -> u32 {
        self.coverage[self.dims.index(t, x, y)]
    }
}

fn axis_origins(len: usize, n: usize, stride: usize) -> Vec<usize> {
    let mut origins: Vec<usize> = (0..).step_by(stride).take_while(|o| o + n <= len).collect();
    let last = *origins.last().expect("n <= len guarantees one origin");
    if last + n < len {
        origins.push(len - n);
    }
    origins
}

/// Plans `n`³ windows advancing by `stride`; the last window on each axis is
/// clamped to end at the boundary.
pub fn tile_plan(dims: Dims, n: usize, stride: usize) -> Result<TileGrid, VolumeError> {
    if n < MIN_CUBE_SIDE {
        return Err(VolumeError::CubeTooSmall(n));
    }
    if n > dims.min_side() {
        return Err(VolumeError::DimensionTooSmall { n, dims });
    }
    if stride == 0 || 2 * stride > n {
        return Err(VolumeError::OverlapViolation { stride, n });
    }
    let ot = axis_origins(dims.t, n, stride);
    let ox = axis_origins(dims.x, n, stride);
    let oy = axis_origins(dims.y, n, stride);

    let mut origins = Vec::with_capacity(ot.len() * ox.len() * oy.len());
    for &y in &oy {
        for &x in &ox {
            for &t in &ot {
                origins.push([t, x, y]);
            }
        }
    }

    // Coverage factorises per axis.
    let per_axis = |len: usize, os: &[usize]| -> Vec<u32> {
        let mut c = vec![0u32; len];
        for &o in os {
            c[o..o + n].iter_mut().for_each(|v| *v += 1);
        }
        c
    };
    let (ct, cx, cy) = (per_axis(dims.t, &ot), per_axis(dims.x, &ox), per_axis(dims.y, &oy));
    let mut coverage = Vec::with_capacity(dims.len());
    for &vy in &cy {
        for &vx in &cx {
            coverage.extend(ct.iter().map(|&vt| vt * vx * vy));
        }
    }

    Ok(TileGrid { dims, cube_side: n, stride, origins, coverage })
}

/// Sums overlapping tile contributions and averages them by coverage.
#[derive(Debug, Clone)]
pub struct TileAccumulator {
    dims: Dims,
    sum: Vec<f64>,
    coverage: Vec<u32>,
}

impl TileAccumulator {
    pub fn new(dims: Dims) -> Self {
        Self { dims, sum: vec![0.0; dims.len()], coverage: vec![0; dims.len()] }
    }

    /// Adds an `n`³ tile (storage order) at `origin`.
    pub fn accumulate_tile(&mut self, origin: [usize; 3], n: usize, values: &[f32]) -> Result<(), VolumeError> {
        check_tile(self.dims, origin, n)?;
        if values.len() != n * n * n {
            return Err(VolumeError::TileLength { got: values.len(), expected: n * n * n });
        }
        let mut vals = values.iter();
        self.for_footprint(origin, n, |sum, cov| {
            *sum += f64::from(*vals.next().expect("length checked"));
            *cov += 1;
        });
        Ok(())
    }

    /// Adds a tile whose every voxel carries `value`.
    pub fn accumulate_constant(&mut self, origin: [usize; 3], n: usize, value: f64) -> Result<(), VolumeError> {
        check_tile(self.dims, origin, n)?;
        self.for_footprint(origin, n, |sum, cov| {
            *sum += value;
            *cov += 1;
        });
        Ok(())
    }

    fn for_footprint(&mut self, origin: [usize; 3], n: usize, mut f: impl FnMut(&mut f64, &mut u32)) {
        let [t0, x0, y0] = origin;
        for y in y0..y0 + n {
            for x in x0..x0 + n {
                let row = self.dims.index(t0, x, y);
                for i in row..row + n {
                    f(&mut self.sum[i], &mut self.coverage[i]);
                }
            }
        }
    }

    pub fn coverage(&self) -> &[u32] {
        &self.coverage
    }

    /// Divides every voxel by its coverage count; uncovered voxels become 0.
    pub fn normalize(self) -> Result<Volume3D, VolumeError> {
        let data = self
            .sum
            .iter()
            .zip(&self.coverage)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { (s / f64::from(c)) as f32 })
            .collect();
        Volume3D::new(self.dims, data)
    }
}

/// Affine map onto [0, 1]. A constant volume maps to all zeros.
pub fn minmax_normalize(v: &Volume3D) -> Volume3D {
    let (lo, hi) = v.min_max();
    let (lo, hi) = (f64::from(lo), f64::from(hi));
    let range = hi - lo;
    let data = if range > 0.0 {
        v.data().iter().map(|&s| ((f64::from(s) - lo) / range) as f32).collect()
    } else {
        vec![0.0; v.data().len()]
    };
    Volume3D::new(v.dims(), data)
        .expect("normalized samples are finite")
        .with_metadata_of(v)
}

/// Row-major 2D cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Slice2D {
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

/// Cross-section at `index` along `axis`.
///
/// Rows follow the first remaining axis: a time slice is (x, y), a crossline
/// slice is (t, y) and an inline slice is (t, x).
pub fn extract_slice(v: &Volume3D, axis: Axis, index: usize) -> Result<Slice2D, VolumeError> {
    let dims = v.dims();
    let len = dims.extent(axis);
    if index >= len {
        return Err(VolumeError::IndexOutOfRange { axis, index, len });
    }
    let (rows, cols) = match axis {
        Axis::T => (dims.x, dims.y),
        Axis::X => (dims.t, dims.y),
        Axis::Y => (dims.t, dims.x),
    };
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let s = match axis {
                Axis::T => v.get(index, r, c),
                Axis::X => v.get(r, index, c),
                Axis::Y => v.get(r, c, index),
            };
            data.push(s);
        }
    }
    Ok(Slice2D { rows, cols, data })
}

/// Binary 8-bit PGM; samples are clamped to [0, 1] and scaled to 0..=255.
pub fn encode_pgm(slice: &Slice2D) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", slice.cols, slice.rows).into_bytes();
    out.extend(slice.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, slice: &Slice2D) -> Result<(), VolumeError> {
    fs::write(path, encode_pgm(slice))?;
    Ok(())
}

/// JSON sidecar stored next to an `.svol` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvolSidecar {
    pub axis_labels: [String; 3],
    pub origin_indices: [i64; 3],
    #[serde(default)]
    pub provenance: String,
}

pub fn encode_svol(v: &Volume3D) -> Vec<u8> {
    let dims = v.dims();
    let mut out = Vec::with_capacity(SVOL_HEADER_LEN + 4 * dims.len());
    out.extend_from_slice(SVOL_MAGIC);
    out.extend_from_slice(&SVOL_VERSION.to_le_bytes());
    for d in dims.as_array() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&v.sample_interval_ms.unwrap_or(0.0).to_le_bytes());
    for s in v.data() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn decode_svol(bytes: &[u8]) -> Result<Volume3D, VolumeError> {
    let fmt_err = |m: &str| VolumeError::Format(m.to_string());
    if bytes.len() < SVOL_HEADER_LEN {
        return Err(fmt_err("truncated header"));
    }
    if &bytes[..4] != SVOL_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != SVOL_VERSION {
        return Err(VolumeError::Format(format!("unsupported version {}", word(4))));
    }
    let dims = Dims::new(word(8) as usize, word(12) as usize, word(16) as usize);
    let interval = f32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes"));
    let payload = &bytes[SVOL_HEADER_LEN..];
    if payload.len() != 4 * dims.len() {
        return Err(VolumeError::Format(format!(
            "payload holds {} bytes, dims {dims} need {}",
            payload.len(),
            4 * dims.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut v = Volume3D::new(dims, data)?;
    v.sample_interval_ms = (interval > 0.0).then_some(interval);
    Ok(v)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` and its JSON sidecar.
pub fn write_svol(path: impl AsRef<Path>, v: &Volume3D, provenance: &str) -> Result<(), VolumeError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_svol(v))?;
    f.flush()?;
    let sidecar = SvolSidecar {
        axis_labels: v.axis_labels.clone(),
        origin_indices: v.origin_indices,
        provenance: provenance.to_string(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| VolumeError::Format(e.to_string()))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads `path`; the sidecar is optional.
pub fn read_svol(path: impl AsRef<Path>) -> Result<Volume3D, VolumeError> {
    let path = path.as_ref();
    let mut v = decode_svol(&fs::read(path)?)?;
    if let Ok(json) = fs::read_to_string(sidecar_path(path)) {
        let sc: SvolSidecar =
            serde_json::from_str(&json).map_err(|e| VolumeError::Format(format!("sidecar: {e}")))?;
        v.axis_labels = sc.axis_labels;
        v.origin_indices = sc.origin_indices;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_coverage(grid: &TileGrid) -> Vec<u32> {
        let d = grid.dims;
        let n = grid.cube_side;
        let mut cov = vec![0u32; d.len()];
        for o in &grid.origins {
            for y in o[2]..o[2] + n {
                for x in o[1]..o[1] + n {
                    for t in o[0]..o[0] + n {
                        cov[d.index(t, x, y)] += 1;
                    }
                }
            }
        }
        cov
    }

    #[test]
    fn index_roundtrip() {
        let d = Dims::new(3, 5, 7);
        for i in 0..d.len() {
            let [t, x, y] = d.coords(i);
            assert_eq!(d.index(t, x, y), i);
        }
    }

    #[test]
    fn single_tile_fits_exactly() {
        let g = tile_plan(Dims::cube(8), 8, 4).unwrap();
        assert_eq!(g.origins, vec![[0, 0, 0]]);
        assert!(g.coverage.iter().all(|&c| c == 1));
    }

    #[test]
    fn clamped_origins_along_t() {
        let g = tile_plan(Dims::new(12, 8, 8), 8, 4).unwrap();
        let ts: Vec<usize> = g.origins.iter().map(|o| o[0]).collect();
        assert_eq!(ts, vec![0, 4]);
        for t in 4..8 {
            assert_eq!(g.coverage_at(t, 3, 3), 2);
        }
        assert_eq!(g.coverage_at(0, 0, 0), 1);
        assert_eq!(g.coverage_at(11, 0, 0), 1);
    }

    #[test]
    fn clamp_adds_final_origin() {
        let g = tile_plan(Dims::new(13, 8, 8), 8, 4).unwrap();
        let ts: Vec<usize> = g.origins.iter().map(|o| o[0]).collect();
        assert_eq!(ts, vec![0, 4, 5]);
    }

    #[test]
    fn plan_64_cube() {
        let g = tile_plan(Dims::cube(64), 16, 8).unwrap();
        assert_eq!(g.origins.len(), 343);
        let brute = brute_coverage(&g);
        assert_eq!(brute, g.coverage);
        assert!(brute.iter().all(|&c| c >= 1));
        for t in 8..56 {
            assert_eq!(g.coverage_at(t, 20, 33), 8);
        }
    }

    #[test]
    fn plan_errors() {
        assert!(matches!(
            tile_plan(Dims::new(8, 8, 6), 8, 4),
            Err(VolumeError::DimensionTooSmall { .. })
        ));
        assert!(matches!(
            tile_plan(Dims::cube(16), 8, 5),
            Err(VolumeError::OverlapViolation { .. })
        ));
        assert!(matches!(tile_plan(Dims::cube(16), 8, 0), Err(VolumeError::OverlapViolation { .. })));
        assert!(matches!(tile_plan(Dims::cube(16), 3, 1), Err(VolumeError::CubeTooSmall(3))));
    }

    #[test]
    fn accumulate_equal_tiles() {
        let mut acc = TileAccumulator::new(Dims::cube(4));
        let ones = vec![1.0f32; 64];
        acc.accumulate_tile([0, 0, 0], 4, &ones).unwrap();
        acc.accumulate_tile([0, 0, 0], 4, &ones).unwrap();
        let v = acc.normalize().unwrap();
        assert!(v.data().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn accumulate_overlap_mean() {
        let mut acc = TileAccumulator::new(Dims::new(6, 4, 4));
        acc.accumulate_tile([0, 0, 0], 4, &[2.0; 64]).unwrap();
        acc.accumulate_tile([2, 0, 0], 4, &[4.0; 64]).unwrap();
        let v = acc.normalize().unwrap();
        assert_eq!(v.get(0, 1, 1), 2.0);
        assert_eq!(v.get(2, 1, 1), 3.0);
        assert_eq!(v.get(3, 3, 3), 3.0);
        assert_eq!(v.get(5, 0, 0), 4.0);
    }

    #[test]
    fn accumulate_out_of_bounds() {
        let mut acc = TileAccumulator::new(Dims::cube(8));
        let err = acc.accumulate_tile([5, 0, 0], 4, &[0.0; 64]).unwrap_err();
        assert!(matches!(err, VolumeError::OutOfBounds { .. }));
        assert!(acc.accumulate_tile([0, 0, 0], 4, &[0.0; 8]).is_err());
    }

    #[test]
    fn accumulate_matches_brute_force_mean() {
        let dims = Dims::cube(16);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 6;
        let tiles: Vec<([usize; 3], Vec<f32>)> = (0..25)
            .map(|_| {
                let o = [rng.random_range(0..=10), rng.random_range(0..=10), rng.random_range(0..=10)];
                (o, (0..n * n * n).map(|_| rng.random_range(-1.0..1.0)).collect())
            })
            .collect();
        let mut acc = TileAccumulator::new(dims);
        for (o, vals) in &tiles {
            acc.accumulate_tile(*o, n, vals).unwrap();
        }
        let v = acc.normalize().unwrap();
        for idx in 0..dims.len() {
            let [t, x, y] = dims.coords(idx);
            let mut covering = Vec::new();
            for (o, vals) in &tiles {
                let inside = |p: usize, a: usize| p >= o[a] && p < o[a] + n;
                if inside(t, 0) && inside(x, 1) && inside(y, 2) {
                    let local = (t - o[0]) + n * ((x - o[1]) + n * (y - o[2]));
                    covering.push(f64::from(vals[local]));
                }
            }
            let expected = if covering.is_empty() {
                0.0
            } else {
                covering.iter().sum::<f64>() / covering.len() as f64
            };
            assert!((f64::from(v.data()[idx]) - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_examples() {
        let v = Volume3D::new(Dims::new(3, 1, 1), vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(minmax_normalize(&v).data(), &[0.0, 0.5, 1.0]);
        let c = Volume3D::new(Dims::cube(2), vec![5.0; 8]).unwrap();
        assert!(minmax_normalize(&c).data().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn slices_match_indexing() {
        let dims = Dims::new(4, 4, 4);
        let v = Volume3D::from_fn(dims, |t, _, _| t as f32).unwrap();
        let s = extract_slice(&v, Axis::T, 0).unwrap();
        assert!(s.data.iter().all(|&p| p == 0.0));

        let v = Volume3D::from_fn(dims, |t, x, y| (t * 100 + x * 10 + y) as f32).unwrap();
        let s = extract_slice(&v, Axis::Y, 2).unwrap();
        assert_eq!((s.rows, s.cols), (4, 4));
        for t in 0..4 {
            for x in 0..4 {
                assert_eq!(s.get(t, x), v.get(t, x, 2));
            }
        }
        assert!(matches!(
            extract_slice(&v, Axis::X, 4),
            Err(VolumeError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn slice_probes() {
        let dims = Dims::new(7, 5, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Volume3D::from_fn(dims, |_, _, _| rng.random()).unwrap();
        for _ in 0..100 {
            let (t, x, y) = (rng.random_range(0..7), rng.random_range(0..5), rng.random_range(0..6));
            assert_eq!(extract_slice(&v, Axis::T, t).unwrap().get(x, y), v.get(t, x, y));
            assert_eq!(extract_slice(&v, Axis::X, x).unwrap().get(t, y), v.get(t, x, y));
            assert_eq!(extract_slice(&v, Axis::Y, y).unwrap().get(t, x), v.get(t, x, y));
        }
    }

    #[test]
    fn rejects_bad_data() {
        assert!(matches!(
            Volume3D::new(Dims::cube(2), vec![0.0; 7]),
            Err(VolumeError::LengthMismatch { .. })
        ));
        let mut d = vec![0.0; 8];
        d[3] = f32::NAN;
        assert!(matches!(Volume3D::new(Dims::cube(2), d), Err(VolumeError::NonFinite(3))));
    }

    #[test]
    fn svol_layout() {
        let mut v = Volume3D::from_fn(Dims::new(2, 1, 1), |t, _, _| t as f32 + 0.5).unwrap();
        v.sample_interval_ms = Some(4.0);
        let b = encode_svol(&v);
        assert_eq!(&b[..4], b"SVOL");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..20], &[2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[20..24], &4.0f32.to_le_bytes());
        assert_eq!(&b[24..28], &0.5f32.to_le_bytes());
        assert_eq!(decode_svol(&b).unwrap(), v);
        assert!(decode_svol(&b[..b.len() - 1]).is_err());
        assert!(decode_svol(b"SVOX").is_err());
    }

    #[test]
    fn svol_file_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.svol");
        let mut v = Volume3D::from_fn(Dims::new(3, 2, 2), |t, x, y| (t + x + y) as f32).unwrap();
        v.origin_indices = [100, 5, 0];
        write_svol(&path, &v, "unit test").unwrap();
        let back = read_svol(&path).unwrap();
        assert_eq!(back, v);
        assert!(dir.path().join("v.json").exists());
    }

    #[test]
    fn pgm_header_and_pixels() {
        let s = Slice2D { rows: 1, cols: 3, data: vec![0.0, 0.5, 1.0] };
        let b = encode_pgm(&s);
        assert!(b.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&b[b.len() - 3..], &[0, 128, 255]);
    }

    proptest! {
        #[test]
        fn coverage_invariants(n in 4usize..12, frac in 0.0f64..1.0, mult in (1usize..4, 1usize..4, 1usize..4)) {
            let stride = 1 + ((n / 2 - 1) as f64 * frac) as usize;
            let dims = Dims::new(n.max(stride * (mult.0 + 2)), n.max(stride * (mult.1 + 2)), n.max(stride * (mult.2 + 2)));
            let g = tile_plan(dims, n, stride).unwrap();
            prop_assert!(g.coverage.iter().all(|&c| c >= 1));
            prop_assert_eq!(brute_coverage(&g), g.coverage.clone());
        }

        #[test]
        fn interior_coverage_when_divisible(s in 2usize..5, k in 2usize..4, m in 3usize..6) {
            let n = s * k;
            let dims = Dims::cube(s * m + n);
            let g = tile_plan(dims, n, s).unwrap();
            let expected = (k * k * k) as u32;
            let mid = dims.t / 2;
            prop_assert_eq!(g.coverage_at(mid, mid, mid), expected);
        }

        #[test]
        fn normalize_idempotent(vals in proptest::collection::vec(-100.0f32..100.0, 8)) {
            let v = Volume3D::new(Dims::cube(2), vals).unwrap();
            let once = minmax_normalize(&v);
            let (lo, hi) = once.min_max();
            prop_assert!(lo >= 0.0 && hi <= 1.0);
            if hi > 0.0 {
                let twice = minmax_normalize(&once);
                prop_assert_eq!(twice.data(), once.data());
            }
            prop_assert_eq!(once.argmax(), v.argmax());
        }

        #[test]
        fn constant_field_reconstructs(c in -10.0f32..10.0, n in 4usize..7) {
            let dims = Dims::new(2 * n + 1, n + 2, n);
            let g = tile_plan(dims, n, n / 2).unwrap();
            let mut acc = TileAccumulator::new(dims);
            let tile = vec![c; n * n * n];
            for o in &g.origins {
                acc.accumulate_tile(*o, n, &tile).unwrap();
            }
            prop_assert!(acc.normalize().unwrap().data().iter().all(|&v| v == c));
        }
    }
}
