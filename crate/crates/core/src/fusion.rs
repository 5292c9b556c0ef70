//! Fusion of the three directional saliency maps into one map.
//!
//! The combined map is the per-voxel dot product of a 1×3 weight vector
//! with `(S_t, S_x, S_y)`, min-max normalized. Weights are equal, set by
//! hand, or adapted toward a desired map with LMS, NLMS or RLS. Weights are
//! three scalars for the whole volume (or per block of sections when
//! re-adaptation is scheduled), never per-voxel fields.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::volume::{ensure_same_dims, minmax_normalize, Axis, Dims, Volume3D, VolumeError};

pub const DEFAULT_LMS_MU: f64 = 0.05;
pub const DEFAULT_NLMS_MU: f64 = 0.5;
pub const DEFAULT_NLMS_EPSILON: f64 = 1e-6;
pub const DEFAULT_RLS_LAMBDA: f64 = 0.999;
pub const DEFAULT_RLS_DELTA: f64 = 0.01;
/// Samples per point of the reported MSE curve.
pub const MSE_WINDOW: usize = 1000;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("training section is empty")]
    EmptyTrainingSection,
    #[error("desired map value {value} at index {index} is outside [0, 1]")]
    DesiredOutOfRange { index: usize, value: f32 },
    #[error("invalid trainer parameter: {0}")]
    InvalidParameter(String),
    #[error("weights became non-finite: {0:?}")]
    NonFiniteWeights([f64; 3]),
}

pub type Mat3 = [[f64; 3]; 3];

#[inline]
pub fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn mat_vec(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

/// Weight-update rule and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trainer {
    None,
    Lms { mu: f64 },
    Nlms { mu: f64, epsilon: f64 },
    Rls { lambda: f64, delta: f64 },
}

impl Trainer {
    pub fn lms() -> Self {
        Trainer::Lms { mu: DEFAULT_LMS_MU }
    }

    pub fn nlms() -> Self {
        Trainer::Nlms { mu: DEFAULT_NLMS_MU, epsilon: DEFAULT_NLMS_EPSILON }
    }

    pub fn rls() -> Self {
        Trainer::Rls { lambda: DEFAULT_RLS_LAMBDA, delta: DEFAULT_RLS_DELTA }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Trainer::None => "none",
            Trainer::Lms { .. } => "lms",
            Trainer::Nlms { .. } => "nlms",
            Trainer::Rls { .. } => "rls",
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: String| Err(FusionError::InvalidParameter(m));
        match *self {
            Trainer::None => Ok(()),
            Trainer::Lms { mu } if !(mu > 0.0) => bad(format!("LMS mu must be > 0, got {mu}")),
            Trainer::Nlms { mu, .. } if !(mu > 0.0 && mu < 2.0) => bad(format!("NLMS mu must be in (0, 2), got {mu}")),
            Trainer::Nlms { epsilon, .. } if !(epsilon >= 0.0) => bad(format!("NLMS epsilon must be >= 0, got {epsilon}")),
            Trainer::Rls { lambda, .. } if !(lambda > 0.9 && lambda <= 1.0) => {
                bad(format!("RLS lambda must be in (0.9, 1], got {lambda}"))
            }
            Trainer::Rls { delta, .. } if !(delta > 0.0) => bad(format!("RLS delta must be > 0, got {delta}")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Trainer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Trainer {
    type Err = String;

    /// Parses a trainer name with default parameters.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Trainer::None),
            "lms" => Ok(Trainer::lms()),
            "nlms" => Ok(Trainer::nlms()),
            "rls" => Ok(Trainer::rls()),
            other => Err(format!("unknown trainer {other:?} (expected lms, nlms or rls)")),
        }
    }
}

/// One step of LMS: `e = d - w.s`, `w += mu * e * s`.
pub fn lms_step(w: [f64; 3], s: [f64; 3], d: f64, mu: f64) -> ([f64; 3], f64) {
    let e = d - dot(&w, &s);
    (std::array::from_fn(|m| w[m] + mu * e * s[m]), e)
}

/// One step of NLMS: the LMS step divided by `epsilon + |s|^2`.
pub fn nlms_step(w: [f64; 3], s: [f64; 3], d: f64, mu: f64, epsilon: f64) -> ([f64; 3], f64) {
    let e = d - dot(&w, &s);
    let power = epsilon + dot(&s, &s);
    if power == 0.0 {
        return (w, e);
    }
    let g = mu * e / power;
    (std::array::from_fn(|m| w[m] + g * s[m]), e)
}

/// One step of exponentially weighted RLS with inverse-correlation state `p`.
pub fn rls_step(w: [f64; 3], p: &Mat3, s: [f64; 3], d: f64, lambda: f64) -> ([f64; 3], Mat3, f64) {
    let ps = mat_vec(p, &s);
    let k_den = lambda + dot(&s, &ps);
    let k: [f64; 3] = std::array::from_fn(|m| ps[m] / k_den);
    let e = d - dot(&w, &s);
    let w_new = std::array::from_fn(|m| w[m] + k[m] * e);
    // sT P, which equals (P s)T while P is symmetric
    let sp: [f64; 3] = std::array::from_fn(|c| (0..3).map(|r| s[r] * p[r][c]).sum());
    let mut next: Mat3 = std::array::from_fn(|r| std::array::from_fn(|c| (p[r][c] - k[r] * sp[c]) / lambda));
    #[allow(clippy::needless_range_loop)]
    for r in 0..3 {
        for c in r + 1..3 {
            let avg = 0.5 * (next[r][c] + next[c][r]);
            next[r][c] = avg;
            next[c][r] = avg;
        }
    }
    (w_new, next, e)
}

/// A trainer with its running state.
#[derive(Debug, Clone)]
pub struct AdaptiveFilter {
    trainer: Trainer,
    weights: [f64; 3],
    p: Mat3,
}

impl AdaptiveFilter {
    pub fn new(trainer: Trainer, initial: [f64; 3]) -> Result<Self, FusionError> {
        trainer.validate()?;
        let p0 = match trainer {
            Trainer::Rls { delta, .. } => 1.0 / delta,
            _ => 0.0,
        };
        let p = std::array::from_fn(|r| std::array::from_fn(|c| if r == c { p0 } else { 0.0 }));
        Ok(Self { trainer, weights: initial, p })
    }

    pub fn weights(&self) -> [f64; 3] {
        self.weights
    }

    /// RLS inverse-correlation state (zero for the other trainers).
    pub fn state(&self) -> &Mat3 {
        &self.p
    }

    /// Updates the weights toward `d` and returns the a-priori error.
    pub fn step(&mut self, s: [f64; 3], d: f64) -> f64 {
        let w = self.weights;
        let (w, e) = match self.trainer {
            Trainer::None => (w, d - dot(&w, &s)),
            Trainer::Lms { mu } => lms_step(w, s, d, mu),
            Trainer::Nlms { mu, epsilon } => nlms_step(w, s, d, mu, epsilon),
            Trainer::Rls { lambda, .. } => {
                let (w, p, e) = rls_step(w, &self.p, s, d, lambda);
                self.p = p;
                (w, e)
            }
        };
        self.weights = w;
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsePoint {
    /// Number of samples consumed when the window closed.
    pub iteration: usize,
    pub mse: f64,
}

/// Block-windowed mean of squared errors.
#[derive(Debug, Clone)]
pub struct MseTracker {
    window: usize,
    sum: f64,
    count: usize,
    seen: usize,
    points: Vec<MsePoint>,
}

impl MseTracker {
    pub fn new(window: usize) -> Self {
        Self { window: window.max(1), sum: 0.0, count: 0, seen: 0, points: Vec::new() }
    }

    pub fn push(&mut self, e: f64) {
        self.sum += e * e;
        self.count += 1;
        self.seen += 1;
        if self.count == self.window {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.count > 0 {
            self.points.push(MsePoint { iteration: self.seen, mse: self.sum / self.count as f64 });
            self.sum = 0.0;
            self.count = 0;
        }
    }

    /// Closes the curve. A trailing partial window is kept only when no full
    /// window was seen.
    pub fn finish(mut self) -> Vec<MsePoint> {
        if self.points.is_empty() {
            self.flush();
        }
        self.points
    }
}

/// First sample count at which the trailing `window`-sample mean of the
/// squared errors drops to `threshold` or below.
pub fn samples_to_threshold(sq_errors: &[f64], window: usize, threshold: f64) -> Option<usize> {
    let window = window.max(1);
    let mut sum = 0.0;
    for (i, &e2) in sq_errors.iter().enumerate() {
        sum += e2;
        if i >= window {
            sum -= sq_errors[i - window];
        }
        if i + 1 >= window && sum.max(0.0) / window as f64 <= threshold {
            return Some(i + 1);
        }
    }
    None
}

/// Fusion weights plus how they were obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionWeights {
    pub weights: [f64; 3],
    pub trainer: Trainer,
    pub history: Vec<MsePoint>,
}

impl FusionWeights {
    pub fn equal() -> Self {
        Self::manual([1.0 / 3.0; 3])
    }

    pub fn manual(weights: [f64; 3]) -> Self {
        Self { weights, trainer: Trainer::None, history: Vec::new() }
    }

    pub fn has_negative(&self) -> bool {
        self.weights.iter().any(|&w| w < 0.0)
    }
}

/// Result of running a trainer over a sample stream.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub weights: [f64; 3],
    pub sq_errors: Vec<f64>,
    pub history: Vec<MsePoint>,
}

/// Runs `trainer` from zero weights over `(s, d)` pairs.
pub fn train_stream(
    trainer: Trainer,
    samples: impl IntoIterator<Item = ([f64; 3], f64)>,
) -> Result<TrainingRun, FusionError> {
    let mut filter = AdaptiveFilter::new(trainer, [0.0; 3])?;
    let mut tracker = MseTracker::new(MSE_WINDOW);
    let mut sq_errors = Vec::new();
    for (s, d) in samples {
        let e = filter.step(s, d);
        tracker.push(e);
        sq_errors.push(e * e);
    }
    Ok(TrainingRun { weights: filter.weights(), sq_errors, history: tracker.finish() })
}

fn check_maps(maps: [&Volume3D; 3]) -> Result<Dims, FusionError> {
    ensure_same_dims(maps[0], maps[1])?;
    ensure_same_dims(maps[0], maps[2])?;
    Ok(maps[0].dims())
}

fn check_weights(w: &[f64; 3]) -> Result<(), FusionError> {
    if w.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FusionError::NonFiniteWeights(*w))
    }
}

/// `W_t*S_t + W_x*S_x + W_y*S_y`, min-max normalized.
pub fn combine(maps: [&Volume3D; 3], weights: &[f64; 3]) -> Result<Volume3D, FusionError> {
    let dims = check_maps(maps)?;
    check_weights(weights)?;
    let [a, b, c] = maps.map(Volume3D::data);
    let data = (0..dims.len())
        .map(|i| dot(weights, &[f64::from(a[i]), f64::from(b[i]), f64::from(c[i])]) as f32)
        .collect();
    Ok(minmax_normalize(&Volume3D::new(dims, data)?.with_metadata_of(maps[0])))
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesiredSource {
    /// A labeled (or otherwise prepared) target map with values in [0, 1].
    Labeled(Volume3D),
    /// Adapt toward one of the directional maps.
    SelectAxis(Axis),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesiredMap {
    pub source: DesiredSource,
    /// Re-adapt every N sections along [`Schedule::section_axis`].
    pub section_stride: Option<usize>,
}

impl DesiredMap {
    pub fn select_axis(axis: Axis) -> Self {
        Self { source: DesiredSource::SelectAxis(axis), section_stride: None }
    }

    pub fn labeled(d: Volume3D) -> Self {
        Self { source: DesiredSource::Labeled(d), section_stride: None }
    }

    fn resolve<'a>(&'a self, maps: [&'a Volume3D; 3]) -> Result<&'a Volume3D, FusionError> {
        match &self.source {
            DesiredSource::SelectAxis(a) => Ok(maps[a.position()]),
            DesiredSource::Labeled(d) => {
                ensure_same_dims(maps[0], d)?;
                if let Some((index, &value)) = d.data().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                    return Err(FusionError::DesiredOutOfRange { index, value });
                }
                Ok(d)
            }
        }
    }
}

/// Which sections are scanned during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    /// Axis whose slices count as "sections"; inline by default.
    pub section_axis: Axis,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { section_axis: Axis::Y }
    }
}

/// Weights valid for sections `start..end` along the schedule axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionWeights {
    pub start: usize,
    pub end: usize,
    pub weights: FusionWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adaptation {
    pub section_axis: Axis,
    pub blocks: Vec<SectionWeights>,
}

impl Adaptation {
    /// Weights of the first block; the only block when re-adaptation is off.
    pub fn primary(&self) -> &FusionWeights {
        &self.blocks[0].weights
    }
}

/// Voxel indices of section `index` along `axis`, in raster order.
fn section_indices(dims: Dims, axis: Axis, index: usize) -> impl Iterator<Item = usize> {
    let (a, b) = match axis {
        Axis::T => (dims.x, dims.y),
        Axis::X => (dims.t, dims.y),
        Axis::Y => (dims.t, dims.x),
    };
    (0..b).flat_map(move |j| {
        (0..a).map(move |i| match axis {
            Axis::T => dims.index(index, i, j),
            Axis::X => dims.index(i, index, j),
            Axis::Y => dims.index(i, j, index),
        })
    })
}

/// Adapts fusion weights toward `desired`.
///
/// Without a section stride the trainer makes one raster-order pass over
/// the whole volume. With stride `N`, the trainer (carrying its state
/// forward) is run on section `k*N`, and the resulting weights apply to
/// sections `k*N .. (k+1)*N`.
pub fn adapt_weights(
    maps: [&Volume3D; 3],
    desired: &DesiredMap,
    trainer: Trainer,
    schedule: Schedule,
) -> Result<Adaptation, FusionError> {
    let dims = check_maps(maps)?;
    let target = desired.resolve(maps)?;
    let [a, b, c] = maps.map(Volume3D::data);
    let d = target.data();
    let sample = |i: usize| ([f64::from(a[i]), f64::from(b[i]), f64::from(c[i])], f64::from(d[i]));
    let mut filter = AdaptiveFilter::new(trainer, [0.0; 3])?;

    let mut run = |indices: &mut dyn Iterator<Item = usize>| -> Result<FusionWeights, FusionError> {
        let mut tracker = MseTracker::new(MSE_WINDOW);
        let mut any = false;
        for i in indices {
            let (s, dv) = sample(i);
            tracker.push(filter.step(s, dv));
            any = true;
        }
        if !any {
            return Err(FusionError::EmptyTrainingSection);
        }
        let w = filter.weights();
        check_weights(&w)?;
        Ok(FusionWeights { weights: w, trainer, history: tracker.finish() })
    };

    let axis = schedule.section_axis;
    let sections = dims.extent(axis);
    let blocks = match desired.section_stride {
        None | Some(0) => {
            vec![SectionWeights { start: 0, end: sections, weights: run(&mut (0..dims.len()))? }]
        }
        Some(stride) => {
            let mut blocks = Vec::new();
            for start in (0..sections).step_by(stride) {
                let weights = run(&mut section_indices(dims, axis, start))?;
                blocks.push(SectionWeights { start, end: (start + stride).min(sections), weights });
            }
            blocks
        }
    };
    Ok(Adaptation { section_axis: axis, blocks })
}

/// Applies block-wise weights, then min-max normalizes the whole volume.
pub fn combine_adapted(maps: [&Volume3D; 3], adaptation: &Adaptation) -> Result<Volume3D, FusionError> {
    let dims = check_maps(maps)?;
    let axis = adaptation.section_axis;
    let mut section_weights = vec![None; dims.extent(axis)];
    for block in &adaptation.blocks {
        check_weights(&block.weights.weights)?;
        for slot in &mut section_weights[block.start..block.end] {
            *slot = Some(block.weights.weights);
        }
    }
    let [a, b, c] = maps.map(Volume3D::data);
    let data = (0..dims.len())
        .map(|i| {
            let sec = dims.coords(i)[axis.position()];
            let w = section_weights[sec].unwrap_or([0.0; 3]);
            dot(&w, &[f64::from(a[i]), f64::from(b[i]), f64::from(c[i])]) as f32
        })
        .collect();
    Ok(minmax_normalize(&Volume3D::new(dims, data)?.with_metadata_of(maps[0])))
}
