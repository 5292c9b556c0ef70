//! Directional center-surround (DCS) comparison.
//!
//! Each voxel of an energy volume is compared against a set of weighted
//! neighbours picked by a [`DirectionalWindow`]:
//!
//! ```text
//! S[p] = (1/Q) * sum_q | E[p] - w_q * E[clamp(p + o_q)] |
//! ```
//!
//! Neighbour indices are clamped to the volume (replicate-edge), and `Q`
//! always counts every offset of the window, even where clamping makes two
//! neighbours coincide.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::spectral::EnergyVolumes;
use crate::volume::{ensure_same_dims, minmax_normalize, Volume3D, VolumeError};

#[derive(Debug, Error)]
pub enum DcsError {
    #[error("unknown orientation {0:?}")]
    UnknownOrientation(String),
    #[error("window radius must be >= 1, got {0}")]
    InvalidRadius(i64),
    #[error("sigma must be > 0, got {0}")]
    InvalidSigma(f64),
    #[error("template line {line}: {msg}")]
    Template { line: usize, msg: String },
    #[error("template has no offsets")]
    EmptyTemplate,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    AxisT,
    AxisX,
    AxisY,
    DiagTx,
    DiagTy,
    DiagXy,
    Full,
}

impl Orientation {
    pub const ALL: [Orientation; 7] = [
        Orientation::AxisT,
        Orientation::AxisX,
        Orientation::AxisY,
        Orientation::DiagTx,
        Orientation::DiagTy,
        Orientation::DiagXy,
        Orientation::Full,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Orientation::AxisT => "axis-t",
            Orientation::AxisX => "axis-x",
            Orientation::AxisY => "axis-y",
            Orientation::DiagTx => "diag-tx",
            Orientation::DiagTy => "diag-ty",
            Orientation::DiagXy => "diag-xy",
            Orientation::Full => "full",
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Orientation {
    type Err = DcsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Orientation::ALL
            .into_iter()
            .find(|o| o.tag() == s)
            .ok_or_else(|| DcsError::UnknownOrientation(s.to_string()))
    }
}

/// Where the Gaussian weight enters the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `|E[p] - w * E[q]|`
    #[default]
    Inner,
    /// `w * |E[p] - E[q]|`
    Outer,
}

impl Weighting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Weighting::Inner => "inner",
            Weighting::Outer => "outer",
        }
    }
}

impl FromStr for Weighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inner" => Ok(Weighting::Inner),
            "outer" => Ok(Weighting::Outer),
            other => Err(format!("unknown weighting {other:?} (expected inner or outer)")),
        }
    }
}

/// Neighbour offsets `(dt, dx, dy)` with one weight each.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalWindow {
    pub name: String,
    offsets: Vec<[i64; 3]>,
    weights: Vec<f64>,
}

pub fn gaussian_weight(offset: [i64; 3], sigma: f64) -> f64 {
    let d2: i64 = offset.iter().map(|o| o * o).sum();
    (-(d2 as f64) / (2.0 * sigma * sigma)).exp()
}

impl DirectionalWindow {
    /// Builds a window from explicit offsets and weights.
    pub fn from_parts(name: impl Into<String>, offsets: Vec<[i64; 3]>, weights: Vec<f64>) -> Result<Self, DcsError> {
        let bad = |line: usize, msg: String| DcsError::Template { line, msg };
        if offsets.is_empty() {
            return Err(DcsError::EmptyTemplate);
        }
        assert_eq!(offsets.len(), weights.len(), "one weight per offset");
        let mut seen = HashSet::new();
        for (line, (o, w)) in offsets.iter().zip(&weights).enumerate() {
            if *o == [0, 0, 0] {
                return Err(bad(line + 1, "offset (0,0,0) is the center".into()));
            }
            if !seen.insert(*o) {
                return Err(bad(line + 1, format!("duplicate offset {o:?}")));
            }
            if !(*w > 0.0 && *w <= 1.0) {
                return Err(bad(line + 1, format!("weight {w} outside (0, 1]")));
            }
        }
        Ok(Self { name: name.into(), offsets, weights })
    }

    /// Parses a template: one `i0 j0 r0 w` per line, `#` starts a comment.
    pub fn parse_template(text: &str) -> Result<Self, DcsError> {
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| DcsError::Template { line: ln + 1, msg };
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, got {}", fields.len())));
            }
            let mut o = [0i64; 3];
            for (slot, f) in o.iter_mut().zip(&fields[..3]) {
                *slot = f.parse().map_err(|_| err(format!("bad offset {f:?}")))?;
            }
            let w: f64 = fields[3].parse().map_err(|_| err(format!("bad weight {:?}", fields[3])))?;
            offsets.push(o);
            weights.push(w);
        }
        Self::from_parts("custom", offsets, weights)
    }

    pub fn offsets(&self) -> &[[i64; 3]] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of compared neighbours (Q).
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Chebyshev radius of the farthest offset.
    pub fn reach(&self) -> i64 {
        self.offsets.iter().flat_map(|o| o.iter().map(|v| v.abs())).max().unwrap_or(0)
    }
}

/// Standard window for `orientation` with Chebyshev radius `r` and
/// Gaussian weights of width `sigma`. `sigma = inf` gives unit weights.
pub fn make_window(orientation: Orientation, r: i64, sigma: f64) -> Result<DirectionalWindow, DcsError> {
    if r < 1 {
        return Err(DcsError::InvalidRadius(r));
    }
    if !(sigma > 0.0) {
        return Err(DcsError::InvalidSigma(sigma));
    }
    let steps = || (-r..=r).filter(|&s| s != 0);
    let offsets: Vec<[i64; 3]> = match orientation {
        Orientation::AxisT => steps().map(|s| [s, 0, 0]).collect(),
        Orientation::AxisX => steps().map(|s| [0, s, 0]).collect(),
        Orientation::AxisY => steps().map(|s| [0, 0, s]).collect(),
        Orientation::DiagTx => steps().map(|s| [s, s, 0]).collect(),
        Orientation::DiagTy => steps().map(|s| [s, 0, s]).collect(),
        Orientation::DiagXy => steps().map(|s| [0, s, s]).collect(),
        Orientation::Full => {
            let mut v = Vec::with_capacity(((2 * r + 1).pow(3) - 1) as usize);
            for dy in -r..=r {
                for dx in -r..=r {
                    for dt in -r..=r {
                        if (dt, dx, dy) != (0, 0, 0) {
                            v.push([dt, dx, dy]);
                        }
                    }
                }
            }
            v
        }
    };
    let weights = offsets.iter().map(|&o| gaussian_weight(o, sigma)).collect();
    Ok(DirectionalWindow { name: orientation.tag().to_string(), offsets, weights })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcsConfig {
    pub window: DirectionalWindow,
    pub weighting: Weighting,
}

impl DcsConfig {
    pub fn new(window: DirectionalWindow) -> Self {
        Self { window, weighting: Weighting::Inner }
    }

    pub fn standard(orientation: Orientation, r: i64, sigma: f64) -> Result<Self, DcsError> {
        Ok(Self::new(make_window(orientation, r, sigma)?))
    }
}

impl Default for DcsConfig {
    /// Full window, radius 2, sigma 1.
    fn default() -> Self {
        Self::standard(Orientation::Full, 2, 1.0).expect("valid default window")
    }
}

#[inline]
fn clamp_add(p: usize, d: i64, len: usize) -> usize {
    (p as i64 + d).clamp(0, len as i64 - 1) as usize
}

fn dcs_slab(e: &Volume3D, cfg: &DcsConfig, y: usize, out: &mut [f32]) {
    let dims = e.dims();
    let data = e.data();
    let q = cfg.window.len() as f64;
    let pairs: Vec<([i64; 3], f64)> =
        cfg.window.offsets().iter().copied().zip(cfg.window.weights().iter().copied()).collect();
    for x in 0..dims.x {
        for t in 0..dims.t {
            let center = f64::from(data[dims.index(t, x, y)]);
            let mut acc = 0.0;
            for &([dt, dx, dy], w) in &pairs {
                let nb = f64::from(
                    data[dims.index(clamp_add(t, dt, dims.t), clamp_add(x, dx, dims.x), clamp_add(y, dy, dims.y))],
                );
                acc += match cfg.weighting {
                    Weighting::Inner => (center - w * nb).abs(),
                    Weighting::Outer => w * (center - nb).abs(),
                };
            }
            out[t + dims.t * x] = (acc / q) as f32;
        }
    }
}

/// Raw (unnormalized) DCS saliency of one energy volume.
pub fn dcs_saliency(e: &Volume3D, cfg: &DcsConfig) -> Volume3D {
    let dims = e.dims();
    let slab = dims.t * dims.x;
    let mut out = vec![0.0f32; dims.len()];

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(slab).enumerate().for_each(|(y, chunk)| dcs_slab(e, cfg, y, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(slab).enumerate().for_each(|(y, chunk)| dcs_slab(e, cfg, y, chunk));

    Volume3D::new(dims, out).expect("finite energies give finite saliency").with_metadata_of(e)
}

/// DCS per axis, each result min-max normalized.
pub fn dcs_all(energies: &EnergyVolumes, cfgs: [&DcsConfig; 3]) -> Result<[Volume3D; 3], DcsError> {
    ensure_same_dims(&energies.t, &energies.x)?;
    ensure_same_dims(&energies.t, &energies.y)?;
    let [ct, cx, cy] = cfgs;
    Ok([
        minmax_normalize(&dcs_saliency(&energies.t, ct)),
        minmax_normalize(&dcs_saliency(&energies.x, cx)),
        minmax_normalize(&dcs_saliency(&energies.y, cy)),
    ])
}
