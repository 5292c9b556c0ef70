//! Synthetic seismic volumes with planted structures, ground-truth masks,
//! and rank-based detection metrics.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::volume::{ensure_same_dims, Dims, Volume3D, VolumeError};

/// Periods (samples) and amplitudes of the background reflectivity.
const LAYER_PERIODS: [f64; 3] = [9.0, 14.0, 23.0];
const LAYER_AMPLITUDES: [f64; 3] = [1.0, 0.6, 0.4];
/// Largest vertical jitter inside a chaotic patch, in samples.
const CHAOTIC_JITTER: i64 = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("structure does not fit the volume: {0}")]
    DoesNotFit(String),
    #[error("mask has a single class; AUC needs both structure and background voxels")]
    SingleClassMask,
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    Layered,
    /// Plane striking along the inline axis through the volume center,
    /// dipping `dip_deg` from horizontal; the side with larger crossline
    /// index is shifted down by `throw` samples.
    Fault { dip_deg: f64, throw: usize },
    /// Spherical blanked body; reflectors around it are bent upward.
    Dome { center: [f64; 3], radius: f64 },
    /// Box `lo..hi` (per axis) with vertically jittered reflectors.
    ChaoticPatch { lo: [usize; 3], hi: [usize; 3] },
}

impl Scenario {
    pub fn tag(&self) -> &'static str {
        match self {
            Scenario::Layered => "layered",
            Scenario::Fault { .. } => "layered+fault",
            Scenario::Dome { .. } => "layered+dome",
            Scenario::ChaoticPatch { .. } => "chaotic-patch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Layered,
    Fault,
    Dome,
    ChaoticPatch,
}

impl FromStr for ScenarioKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "layered" => Ok(ScenarioKind::Layered),
            "layered+fault" | "fault" => Ok(ScenarioKind::Fault),
            "layered+dome" | "dome" => Ok(ScenarioKind::Dome),
            "chaotic-patch" | "chaotic" => Ok(ScenarioKind::ChaoticPatch),
            other => Err(SynthError::UnknownScenario(other.to_string())),
        }
    }
}

impl ScenarioKind {
    /// The scenario with structure sized for `dims`: fault dip 75° and
    /// throw 3, dome centered with radius a quarter of the shortest side,
    /// chaotic patch over the middle half of each axis.
    pub fn default_for(self, dims: Dims) -> Scenario {
        let a = dims.as_array();
        match self {
            ScenarioKind::Layered => Scenario::Layered,
            ScenarioKind::Fault => Scenario::Fault { dip_deg: 75.0, throw: 3 },
            ScenarioKind::Dome => Scenario::Dome {
                center: a.map(|n| (n as f64 - 1.0) / 2.0),
                radius: dims.min_side() as f64 / 4.0,
            },
            ScenarioKind::ChaoticPatch => Scenario::ChaoticPatch { lo: a.map(|n| n / 4), hi: a.map(|n| n - n / 4) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub dims: Dims,
    pub scenario: Scenario,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The 64³ faulted benchmark: dip 75°, throw 3, noise 0.05, seed 7.
    pub fn fault_benchmark() -> Self {
        Self {
            dims: Dims::cube(64),
            scenario: Scenario::Fault { dip_deg: 75.0, throw: 3 },
            noise_sigma: 0.05,
            seed: 7,
        }
    }
}

/// Horizontally layered background trace.
#[derive(Debug, Clone)]
struct Layering {
    phases: [f64; 3],
}

impl Layering {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        Self { phases: std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI)) }
    }

    fn at(&self, t: f64) -> f64 {
        LAYER_PERIODS
            .iter()
            .zip(&LAYER_AMPLITUDES)
            .zip(&self.phases)
            .map(|((p, a), ph)| a * (2.0 * PI * t / p + ph).sin())
            .sum()
    }
}

struct Fault {
    cot: f64,
    sin: f64,
    tc: f64,
    xc: f64,
    throw: f64,
}

impl Fault {
    fn plane_x(&self, t: f64) -> f64 {
        self.xc + (t - self.tc) * self.cot
    }

    fn distance(&self, t: f64, x: f64) -> f64 {
        ((x - self.plane_x(t)) * self.sin).abs()
    }
}

fn validate(spec: &SyntheticSpec) -> Result<(), SynthError> {
    let d = spec.dims;
    if d.is_empty() {
        return Err(SynthError::DoesNotFit(format!("empty dims {d}")));
    }
    if !(spec.noise_sigma >= 0.0) || !spec.noise_sigma.is_finite() {
        return Err(SynthError::DoesNotFit(format!("noise sigma {} must be >= 0", spec.noise_sigma)));
    }
    match &spec.scenario {
        Scenario::Layered => Ok(()),
        Scenario::Fault { dip_deg, throw } => {
            if !(*dip_deg > 0.0 && *dip_deg <= 90.0) {
                return Err(SynthError::DoesNotFit(format!("dip {dip_deg} must be in (0, 90]")));
            }
            if *throw >= d.t {
                return Err(SynthError::DoesNotFit(format!("throw {throw} >= T = {}", d.t)));
            }
            if d.x < 3 {
                return Err(SynthError::DoesNotFit("fault needs at least 3 crosslines".into()));
            }
            Ok(())
        }
        Scenario::Dome { center, radius } => {
            let ext = d.as_array();
            let inside = center.iter().zip(ext).all(|(&c, e)| c - radius >= 0.0 && c + radius <= (e - 1) as f64);
            if !(*radius >= 1.0) || !inside {
                return Err(SynthError::DoesNotFit(format!("dome at {center:?} radius {radius} leaves {d}")));
            }
            Ok(())
        }
        Scenario::ChaoticPatch { lo, hi } => {
            let ext = d.as_array();
            let ok = (0..3).all(|a| lo[a] < hi[a] && hi[a] <= ext[a]);
            if !ok {
                return Err(SynthError::DoesNotFit(format!("patch {lo:?}..{hi:?} leaves {d}")));
            }
            Ok(())
        }
    }
}

/// Distance from `p` to the surface of the box spanning `lo..=hi`.
fn box_surface_distance(p: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let inside = (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]);
    if inside {
        (0..3).map(|a| (p[a] - lo[a]).min(hi[a] - p[a])).fold(f64::INFINITY, f64::min)
    } else {
        (0..3)
            .map(|a| (lo[a] - p[a]).max(0.0).max(p[a] - hi[a]))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Builds one inline slice (fixed y) of the volume and of the mask.
fn generate_slab(spec: &SyntheticSpec, layers: &Layering, jitter: &[i64], y: usize, vol: &mut [f32], mask: &mut [f32]) {
    let d = spec.dims;
    let mut noise = ChaCha8Rng::seed_from_u64(spec.seed);
    noise.set_stream(y as u64);
    let fault = match spec.scenario {
        Scenario::Fault { dip_deg, throw } => {
            let dip = dip_deg.to_radians();
            Some(Fault {
                cot: if dip_deg == 90.0 { 0.0 } else { dip.cos() / dip.sin() },
                sin: dip.sin(),
                tc: (d.t - 1) as f64 / 2.0,
                xc: (d.x - 1) as f64 / 2.0,
                throw: throw as f64,
            })
        }
        _ => None,
    };

    for x in 0..d.x {
        for t in 0..d.t {
            let (tf, xf, yf) = (t as f64, x as f64, y as f64);
            let (value, on_structure) = match &spec.scenario {
                Scenario::Layered => (layers.at(tf), false),
                Scenario::Fault { .. } => {
                    let f = fault.as_ref().expect("fault geometry");
                    let shifted = if xf > f.plane_x(tf) { tf - f.throw } else { tf };
                    (layers.at(shifted), f.distance(tf, xf) <= 1.0)
                }
                Scenario::Dome { center, radius } => {
                    let dist = ((tf - center[0]).powi(2) + (xf - center[1]).powi(2) + (yf - center[2]).powi(2)).sqrt();
                    let rho2 = (xf - center[1]).powi(2) + (yf - center[2]).powi(2);
                    let uplift = radius * (-rho2 / (2.0 * (1.5 * radius).powi(2))).exp();
                    let v = if dist < *radius { 0.0 } else { layers.at(tf + uplift) };
                    (v, (dist - radius).abs() <= 1.0)
                }
                Scenario::ChaoticPatch { lo, hi } => {
                    let inside = (lo[0]..hi[0]).contains(&t) && (lo[1]..hi[1]).contains(&x) && (lo[2]..hi[2]).contains(&y);
                    let shift = if inside { jitter[x + d.x * y] as f64 } else { 0.0 };
                    let lo_f = lo.map(|v| v as f64);
                    let hi_f = hi.map(|v| (v - 1) as f64);
                    (layers.at(tf + shift), box_surface_distance([tf, xf, yf], lo_f, hi_f) <= 1.0)
                }
            };
            let eps: f64 = noise.sample(StandardNormal);
            let i = t + d.t * x;
            vol[i] = (value + spec.noise_sigma * eps) as f32;
            mask[i] = if on_structure { 1.0 } else { 0.0 };
        }
    }
}

/// Generates the volume and its ground-truth mask (1 on the structure
/// surface, within distance 1; 0 elsewhere). Deterministic in `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<(Volume3D, Volume3D), SynthError> {
    validate(spec)?;
    let d = spec.dims;
    let layers = Layering::new(spec.seed);
    let jitter: Vec<i64> = match spec.scenario {
        Scenario::ChaoticPatch { .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(u64::MAX - 1);
            (0..d.x * d.y).map(|_| rng.random_range(-CHAOTIC_JITTER..=CHAOTIC_JITTER)).collect()
        }
        _ => Vec::new(),
    };
    let slab = d.t * d.x;
    let mut vol = vec![0.0f32; d.len()];
    let mut mask = vec![0.0f32; d.len()];

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        vol.par_chunks_mut(slab)
            .zip(mask.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(y, (v, m))| generate_slab(spec, &layers, &jitter, y, v, m));
    }
    #[cfg(not(feature = "parallel"))]
    vol.chunks_mut(slab)
        .zip(mask.chunks_mut(slab))
        .enumerate()
        .for_each(|(y, (v, m))| generate_slab(spec, &layers, &jitter, y, v, m));

    Ok((Volume3D::new(d, vol)?, Volume3D::new(d, mask)?))
}

/// Planted-weights training stream: inputs uniform on [0, 1]³ and
/// `d = weights . s`.
pub fn planted_stream(len: usize, weights: [f64; 3], seed: u64) -> Vec<([f64; 3], f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let s: [f64; 3] = std::array::from_fn(|_| rng.random());
            (s, weights[0] * s[0] + weights[1] * s[1] + weights[2] * s[2])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionReport {
    pub auc: f64,
    pub mean_in: f64,
    pub mean_out: f64,
    pub contrast_ratio: f64,
}

/// Area under the ROC curve of `saliency` against `mask` (voxels > 0.5 are
/// structure), via rank sums with tied values sharing their mean rank.
pub fn auc(saliency: &Volume3D, mask: &Volume3D) -> Result<DetectionReport, SynthError> {
    ensure_same_dims(saliency, mask)?;
    let s = saliency.data();
    let positive: Vec<bool> = mask.data().iter().map(|&m| m > 0.5).collect();
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SynthError::SingleClassMask);
    }

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && s[order[j + 1]] == s[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_run = order[i..=j].iter().filter(|&&k| positive[k]).count();
        rank_sum_pos += mean_rank * pos_in_run as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let auc = (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);

    let (mut sum_in, mut sum_out) = (0.0, 0.0);
    for (&v, &p) in s.iter().zip(&positive) {
        if p {
            sum_in += f64::from(v);
        } else {
            sum_out += f64::from(v);
        }
    }
    let (mean_in, mean_out) = (sum_in / np, sum_out / nn);
    Ok(DetectionReport { auc, mean_in, mean_out, contrast_ratio: mean_in / mean_out })
}
