//! End-to-end orchestration: flat key=value config, the one-shot saliency
//! run, slice export and the run report.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::dcs::{dcs_all, make_window, DcsConfig, DirectionalWindow, Orientation, Weighting};
use crate::fusion::{
    adapt_weights, combine, combine_adapted, Adaptation, DesiredMap, DesiredSource, MsePoint, Schedule, Trainer,
};
use crate::segy::{self, LoadOptions, LoadReport};
use crate::spectral::{energy_volumes, EnergyVolumes, Taper};
use crate::synth::{auc, DetectionReport};
use crate::volume::{
    extract_slice, minmax_normalize, read_svol, sidecar_path, tile_plan, write_pgm, write_svol, Axis, Volume3D,
    VolumeError, SVOL_MAGIC,
};
use crate::{Error, Result, Stage};

pub const DEFAULT_CUBE_SIDE: usize = 16;
pub const DEFAULT_STRIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TilingConfig {
    pub cube_side: usize,
    pub stride: usize,
    pub taper: Taper,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self { cube_side: DEFAULT_CUBE_SIDE, stride: DEFAULT_STRIDE, taper: Taper::None }
    }
}

/// DCS settings for one axis. A template file, when set, replaces the
/// orientation/radius/sigma window.
#[derive(Debug, Clone, PartialEq)]
pub struct DcsAxisConfig {
    pub orientation: Orientation,
    pub radius: i64,
    pub sigma: f64,
    pub weighting: Weighting,
    pub template: Option<PathBuf>,
}

impl Default for DcsAxisConfig {
    fn default() -> Self {
        Self { orientation: Orientation::Full, radius: 2, sigma: 1.0, weighting: Weighting::Inner, template: None }
    }
}

impl DcsAxisConfig {
    pub fn build(&self) -> Result<DcsConfig> {
        let window = match &self.template {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::config(format!("template {}: {e}", path.display())))?;
                DirectionalWindow::parse_template(&text)?
            }
            None => make_window(self.orientation, self.radius, self.sigma)
                .map_err(|e| Error::config(e.to_string()))?,
        };
        Ok(DcsConfig { window, weighting: self.weighting })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionMode {
    Equal,
    Manual([f64; 3]),
    Adapt,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::Equal => f.write_str("equal"),
            FusionMode::Manual([a, b, c]) => write!(f, "manual:{a},{b},{c}"),
            FusionMode::Adapt => f.write_str("adapt"),
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(FusionMode::Equal),
            "adapt" => Ok(FusionMode::Adapt),
            _ => {
                let list = s
                    .strip_prefix("manual:")
                    .ok_or_else(|| Error::config(format!("fusion mode {s:?}: expected equal, manual:Wt,Wx,Wy or adapt")))?;
                let w: Vec<f64> = list
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::config(format!("manual weights {list:?}: {e}")))?;
                match w[..] {
                    [a, b, c] if w.iter().all(|v| v.is_finite()) => Ok(FusionMode::Manual([a, b, c])),
                    _ => Err(Error::config(format!("manual weights {list:?}: need three finite numbers"))),
                }
            }
        }
    }
}

/// Where the adaptation target comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DesiredSpec {
    Axis(Axis),
    File(PathBuf),
}

impl fmt::Display for DesiredSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesiredSpec::Axis(a) => write!(f, "axis:{a}"),
            DesiredSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for DesiredSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("axis:") {
            Some(a) => a.parse().map(DesiredSpec::Axis).map_err(|e| Error::config(format!("desired: {e}"))),
            None if s.is_empty() => Err(Error::config("desired map path is empty")),
            None => Ok(DesiredSpec::File(PathBuf::from(s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub trainer: Trainer,
    pub desired: DesiredSpec,
    pub readapt_every: Option<usize>,
    pub section_axis: Axis,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Equal,
            trainer: Trainer::nlms(),
            desired: DesiredSpec::Axis(Axis::T),
            readapt_every: None,
            section_axis: Axis::Y,
        }
    }
}

/// A slice position: a plain index, or a time in milliseconds (t axis only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SliceRef {
    Index(usize),
    Millis(f64),
}

impl fmt::Display for SliceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SliceRef::Index(i) => write!(f, "{i}"),
            SliceRef::Millis(ms) => write!(f, "{ms}ms"),
        }
    }
}

impl FromStr for SliceRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |e: &dyn fmt::Display| Error::config(format!("slice {s:?}: {e}"));
        match s.strip_suffix("ms") {
            Some(ms) => {
                let v: f64 = ms.trim().parse().map_err(|e| bad(&e))?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(bad(&"time must be finite and non-negative"));
                }
                Ok(SliceRef::Millis(v))
            }
            None => s.parse().map(SliceRef::Index).map_err(|e| bad(&e)),
        }
    }
}

impl SliceRef {
    /// Index along `axis`; times map to `round(ms / interval)`.
    pub fn resolve(&self, v: &Volume3D, axis: Axis) -> Result<usize> {
        let len = v.dims().extent(axis);
        let index = match *self {
            SliceRef::Index(i) => i,
            SliceRef::Millis(ms) => {
                if axis != Axis::T {
                    return Err(Error::config(format!("slice {self}: times only apply to the t axis")));
                }
                let dt = v
                    .sample_interval_ms
                    .ok_or_else(|| Error::config(format!("slice {self}: volume has no sample interval")))?;
                (ms / f64::from(dt)).round() as usize
            }
        };
        if index >= len {
            return Err(VolumeError::IndexOutOfRange { axis, index, len }.into());
        }
        Ok(index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportConfig {
    /// Slice and intermediate directory; defaults to the output's directory.
    pub dir: Option<PathBuf>,
    pub axis: Axis,
    pub slices: Vec<SliceRef>,
    /// Also export the matching input slices under `<dir>/input/`.
    pub input_slices: bool,
    /// Persist `energy_<axis>.svol` and `saliency_<axis>.svol`.
    pub intermediates: bool,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { dir: None, axis: Axis::T, slices: Vec::new(), input_slices: false, intermediates: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threads {
    #[default]
    Auto,
    Count(usize),
}

impl fmt::Display for Threads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threads::Auto => f.write_str("auto"),
            Threads::Count(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Threads {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Threads::Auto),
            _ => match s.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(Threads::Count(n)),
                _ => Err(Error::config(format!("threads {s:?}: expected auto or a positive integer"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Ground-truth mask; when set the report carries detection metrics.
    pub mask: Option<PathBuf>,
    pub tiling: TilingConfig,
    /// Per axis, in (t, x, y) order.
    pub dcs: [DcsAxisConfig; 3],
    pub fusion: FusionConfig,
    pub export: ExportConfig,
    pub segy: LoadOptions,
    pub threads: Threads,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output: PathBuf::new(),
            mask: None,
            tiling: TilingConfig::default(),
            dcs: Default::default(),
            fusion: FusionConfig::default(),
            export: ExportConfig::default(),
            segy: LoadOptions::default(),
            threads: Threads::Auto,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| Error::config(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key} = {value:?}: expected true or false"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    /// Parses a config file: `key = value` lines, `#` comment lines, blank
    /// lines ignored. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", ln + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        // trainer kind first so its parameter keys apply regardless of order
        pairs.sort_by_key(|(k, _)| k != "fusion.trainer");
        let mut cfg = Self::default();
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key. Used both by the file parser and for command-line
    /// overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(rest) = key.strip_prefix("dcs.") {
            let (axis, field) =
                rest.split_once('.').ok_or_else(|| Error::config(format!("unknown key {key:?}")))?;
            let axis: Axis = parse_value(key, axis)?;
            let d = &mut self.dcs[axis.position()];
            match field {
                "orientation" => d.orientation = parse_value(key, value)?,
                "radius" => d.radius = parse_value(key, value)?,
                "sigma" => d.sigma = parse_value(key, value)?,
                "weighting" => d.weighting = parse_value(key, value)?,
                "template" => d.template = opt_path(value),
                _ => return Err(Error::config(format!("unknown key {key:?}"))),
            }
            return Ok(());
        }
        let f = &mut self.fusion;
        match key {
            "input" => self.input = PathBuf::from(value),
            "output" => self.output = PathBuf::from(value),
            "mask" => self.mask = opt_path(value),
            "tiling.cube_side" => self.tiling.cube_side = parse_value(key, value)?,
            "tiling.stride" => self.tiling.stride = parse_value(key, value)?,
            "tiling.taper" => self.tiling.taper = parse_value(key, value)?,
            "fusion.mode" => f.mode = value.parse()?,
            "fusion.trainer" => f.trainer = parse_value(key, value)?,
            "fusion.mu" => match &mut f.trainer {
                Trainer::Lms { mu } | Trainer::Nlms { mu, .. } => *mu = parse_value(key, value)?,
                t => return Err(Error::config(format!("{key} does not apply to trainer {t}"))),
            },
            "fusion.epsilon" => match &mut f.trainer {
                Trainer::Nlms { epsilon, .. } => *epsilon = parse_value(key, value)?,
                t => return Err(Error::config(format!("{key} does not apply to trainer {t}"))),
            },
            "fusion.lambda" => match &mut f.trainer {
                Trainer::Rls { lambda, .. } => *lambda = parse_value(key, value)?,
                t => return Err(Error::config(format!("{key} does not apply to trainer {t}"))),
            },
            "fusion.delta" => match &mut f.trainer {
                Trainer::Rls { delta, .. } => *delta = parse_value(key, value)?,
                t => return Err(Error::config(format!("{key} does not apply to trainer {t}"))),
            },
            "fusion.desired" => f.desired = value.parse()?,
            "fusion.readapt_every" => {
                let n: usize = parse_value(key, value)?;
                f.readapt_every = (n > 0).then_some(n);
            }
            "fusion.section_axis" => f.section_axis = parse_value(key, value)?,
            "export.dir" => self.export.dir = opt_path(value),
            "export.axis" => self.export.axis = parse_value(key, value)?,
            "export.slices" => {
                self.export.slices = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(SliceRef::from_str)
                    .collect::<Result<_>>()?
            }
            "export.input_slices" => self.export.input_slices = parse_bool(key, value)?,
            "export.intermediates" => self.export.intermediates = parse_bool(key, value)?,
            "segy.inline_byte" => self.segy.inline_byte = parse_value(key, value)?,
            "segy.xline_byte" => self.segy.xline_byte = parse_value(key, value)?,
            "segy.fill_missing" => self.segy.fill_missing = parse_bool(key, value)?,
            "threads" => self.threads = value.parse()?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// All keys with their effective values, in file order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("input", self.input.display().to_string());
        put("output", self.output.display().to_string());
        put("mask", path_str(&self.mask));
        put("tiling.cube_side", self.tiling.cube_side.to_string());
        put("tiling.stride", self.tiling.stride.to_string());
        put("tiling.taper", self.tiling.taper.as_str().to_string());
        for axis in Axis::ALL {
            let d = &self.dcs[axis.position()];
            put(&format!("dcs.{axis}.orientation"), d.orientation.tag().to_string());
            put(&format!("dcs.{axis}.radius"), d.radius.to_string());
            put(&format!("dcs.{axis}.sigma"), d.sigma.to_string());
            put(&format!("dcs.{axis}.weighting"), d.weighting.as_str().to_string());
            put(&format!("dcs.{axis}.template"), path_str(&d.template));
        }
        let f = &self.fusion;
        put("fusion.mode", f.mode.to_string());
        put("fusion.trainer", f.trainer.name().to_string());
        match f.trainer {
            Trainer::None => {}
            Trainer::Lms { mu } => put("fusion.mu", mu.to_string()),
            Trainer::Nlms { mu, epsilon } => {
                put("fusion.mu", mu.to_string());
                put("fusion.epsilon", epsilon.to_string());
            }
            Trainer::Rls { lambda, delta } => {
                put("fusion.lambda", lambda.to_string());
                put("fusion.delta", delta.to_string());
            }
        }
        put("fusion.desired", f.desired.to_string());
        put("fusion.readapt_every", f.readapt_every.unwrap_or(0).to_string());
        put("fusion.section_axis", f.section_axis.to_string());
        put("export.dir", path_str(&self.export.dir));
        put("export.axis", self.export.axis.to_string());
        put(
            "export.slices",
            self.export.slices.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        put("export.input_slices", self.export.input_slices.to_string());
        put("export.intermediates", self.export.intermediates.to_string());
        put("segy.inline_byte", self.segy.inline_byte.to_string());
        put("segy.xline_byte", self.segy.xline_byte.to_string());
        put("segy.fill_missing", self.segy.fill_missing.to_string());
        put("threads", self.threads.to_string());
        out
    }

    pub fn serialize(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Checks everything that does not need the input volume.
    pub fn validate(&self) -> Result<()> {
        if self.input.as_os_str().is_empty() {
            return Err(Error::config("input path is not set"));
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::config("output path is not set"));
        }
        let t = &self.tiling;
        if t.cube_side < crate::volume::MIN_CUBE_SIDE || t.stride == 0 || 2 * t.stride > t.cube_side {
            return Err(Error::config(format!(
                "tiling: cube_side {} / stride {} (need cube_side >= {} and 1 <= stride <= cube_side/2)",
                t.cube_side,
                t.stride,
                crate::volume::MIN_CUBE_SIDE
            )));
        }
        self.fusion.trainer.validate().map_err(|e| Error::config(e.to_string()))?;
        if self.fusion.mode == FusionMode::Adapt && self.fusion.trainer == Trainer::None {
            return Err(Error::config("fusion.mode = adapt needs a trainer"));
        }
        for d in &self.dcs {
            if d.template.is_none() {
                make_window(d.orientation, d.radius, d.sigma).map_err(|e| Error::config(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Provenance written into output sidecars: everything that affects the
    /// numbers, nothing about paths or threads.
    fn provenance(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| {
                k.starts_with("tiling.") || k.starts_with("dcs.") || (k.starts_with("fusion.") && k != "fusion.desired")
            })
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Outcome of fusing the three directional maps.
#[derive(Debug, Clone)]
pub struct FusedMap {
    pub saliency: Volume3D,
    /// Weights of the first (or only) block.
    pub weights: [f64; 3],
    pub adaptation: Option<Adaptation>,
}

impl FusedMap {
    pub fn has_negative_weight(&self) -> bool {
        match &self.adaptation {
            Some(a) => a.blocks.iter().any(|b| b.weights.has_negative()),
            None => self.weights.iter().any(|&w| w < 0.0),
        }
    }
}

/// Spectral energies of `v` over the configured tiling.
pub fn compute_energies(v: &Volume3D, tiling: &TilingConfig) -> Result<EnergyVolumes> {
    let plan = tile_plan(v.dims(), tiling.cube_side, tiling.stride).map_err(|e| Error::config(e.to_string()))?;
    Ok(energy_volumes(v, &plan, tiling.taper)?)
}

/// Fuses `maps`; `desired` is only consulted in adapt mode.
pub fn fuse_maps(
    maps: [&Volume3D; 3],
    mode: FusionMode,
    trainer: Trainer,
    desired: &DesiredMap,
    schedule: Schedule,
) -> Result<FusedMap> {
    let fixed = |w: [f64; 3]| -> Result<FusedMap> {
        Ok(FusedMap { saliency: combine(maps, &w)?, weights: w, adaptation: None })
    };
    match mode {
        FusionMode::Equal => fixed([1.0 / 3.0; 3]),
        FusionMode::Manual(w) => fixed(w),
        FusionMode::Adapt => {
            let adaptation = adapt_weights(maps, desired, trainer, schedule)?;
            let saliency = combine_adapted(maps, &adaptation)?;
            let weights = adaptation.primary().weights;
            Ok(FusedMap { saliency, weights, adaptation: Some(adaptation) })
        }
    }
}

/// All in-memory products of one run.
#[derive(Debug, Clone)]
pub struct SaliencyProducts {
    pub energies: EnergyVolumes,
    /// Normalized directional maps `S_t, S_x, S_y`.
    pub maps: [Volume3D; 3],
    pub fused: FusedMap,
}

/// Energies, directional maps and fused map, without any file I/O.
pub fn saliency_maps(
    v: &Volume3D,
    tiling: &TilingConfig,
    dcs: [&DcsConfig; 3],
    mode: FusionMode,
    trainer: Trainer,
    desired: &DesiredMap,
    schedule: Schedule,
) -> Result<SaliencyProducts> {
    let energies = compute_energies(v, tiling).map_err(|e| e.in_stage(Stage::Energy))?;
    let maps = dcs_all(&energies, dcs).map_err(|e| Error::from(e).in_stage(Stage::Dcs))?;
    let fused = fuse_maps([&maps[0], &maps[1], &maps[2]], mode, trainer, desired, schedule)
        .map_err(|e| e.in_stage(Stage::Fusion))?;
    Ok(SaliencyProducts { energies, maps, fused })
}

/// Writes one PGM per index, named `<axis>_<index>.pgm`, after min-max
/// normalization. Every index is checked before anything is written.
pub fn export_slices(v: &Volume3D, axis: Axis, indices: &[usize], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let len = v.dims().extent(axis);
    if let Some(&index) = indices.iter().find(|&&i| i >= len) {
        return Err(VolumeError::IndexOutOfRange { axis, index, len }.into());
    }
    fs::create_dir_all(dir)?;
    let norm = minmax_normalize(v);
    let mut written = Vec::with_capacity(indices.len());
    for &i in indices {
        let path = dir.join(format!("{axis}_{i}.pgm"));
        write_pgm(&path, &extract_slice(&norm, axis, i)?)?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a `.svol` or SEG-Y file, telling them apart by magic bytes.
pub fn load_input(path: &Path, opts: &LoadOptions) -> Result<(Volume3D, Option<LoadReport>)> {
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        let mut f = fs::File::open(path)?;
        let got = f.read(&mut magic)?;
        if got == 4 && &magic == SVOL_MAGIC {
            return Ok((read_svol(path)?, None));
        }
    }
    let (v, report) = segy::load_volume(path, opts)?;
    Ok((v, Some(report)))
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputSummary {
    pub path: String,
    pub dims: [usize; 3],
    pub sample_interval_ms: Option<f32>,
    pub load: Option<LoadReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockWeights {
    pub start: usize,
    pub end: usize,
    pub weights: [f64; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: BTreeMap<String, String>,
    pub input: InputSummary,
    pub stages: Vec<StageTiming>,
    pub weights: [f64; 3],
    pub trainer: Option<String>,
    pub weight_blocks: Option<Vec<BlockWeights>>,
    /// Windowed MSE, present when adaptation ran.
    pub mse_curve: Option<Vec<MsePoint>>,
    pub detection: Option<DetectionReport>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
}

/// Deletes everything it tracked unless disarmed.
struct OutputGuard {
    paths: Vec<PathBuf>,
    armed: bool,
}

impl OutputGuard {
    fn track(&mut self, p: PathBuf) {
        self.paths.push(p);
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.armed {
            for p in &self.paths {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn mse_curve(a: &Adaptation) -> Vec<MsePoint> {
    let mut offset = 0;
    let mut curve = Vec::new();
    for b in &a.blocks {
        let h = &b.weights.history;
        curve.extend(h.iter().map(|p| MsePoint { iteration: offset + p.iteration, mse: p.mse }));
        offset += h.last().map_or(0, |p| p.iteration);
    }
    curve
}

fn timed<T>(stages: &mut Vec<StageTiming>, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage))?;
    stages.push(StageTiming { stage: stage.as_str(), seconds: start.elapsed().as_secs_f64() });
    Ok(out)
}

/// Load, energies, DCS, fusion, export. On error every file written so far
/// is removed.
pub fn run_saliency(cfg: &PipelineConfig) -> Result<(Volume3D, RunReport)> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Threads::Count(n) = cfg.threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| run_inner(cfg))
    }
    #[cfg(not(feature = "parallel"))]
    run_inner(cfg)
}

fn run_inner(cfg: &PipelineConfig) -> Result<(Volume3D, RunReport)> {
    let dcs: Vec<DcsConfig> = cfg.dcs.iter().map(DcsAxisConfig::build).collect::<Result<_>>()?;
    let mut stages = Vec::new();
    let mut warnings = Vec::new();
    let mut guard = OutputGuard { paths: Vec::new(), armed: true };

    let (input, load_report) = timed(&mut stages, Stage::Load, || load_input(&cfg.input, &cfg.segy))?;
    if let Some(r) = &load_report {
        if r.zeroed_samples > 0 {
            warnings.push(format!("{} non-finite or absurd samples zeroed on load", r.zeroed_samples));
        }
        if r.filled_traces > 0 {
            warnings.push(format!("{} missing traces zero-filled", r.filled_traces));
        }
    }
    let desired = match (&cfg.fusion.mode, &cfg.fusion.desired) {
        (FusionMode::Adapt, DesiredSpec::File(p)) => {
            timed(&mut stages, Stage::Load, || Ok(DesiredMap::labeled(read_svol(p)?)))?
        }
        (_, DesiredSpec::File(_)) => DesiredMap::select_axis(Axis::T),
        (_, DesiredSpec::Axis(a)) => DesiredMap::select_axis(*a),
    };
    let desired = DesiredMap { section_stride: cfg.fusion.readapt_every, ..desired };
    let mask = match &cfg.mask {
        Some(p) => Some(timed(&mut stages, Stage::Load, || Ok(read_svol(p)?))?),
        None => None,
    };

    let energies = timed(&mut stages, Stage::Energy, || compute_energies(&input, &cfg.tiling))?;
    let maps = timed(&mut stages, Stage::Dcs, || Ok(dcs_all(&energies, [&dcs[0], &dcs[1], &dcs[2]])?))?;
    let schedule = Schedule { section_axis: cfg.fusion.section_axis };
    let fused = timed(&mut stages, Stage::Fusion, || {
        fuse_maps([&maps[0], &maps[1], &maps[2]], cfg.fusion.mode, cfg.fusion.trainer, &desired, schedule)
    })?;
    if fused.has_negative_weight() {
        warnings.push(format!("negative fusion weight: {:?}", fused.weights));
    }
    let detection = match &mask {
        Some(m) => Some(auc(&fused.saliency, m).map_err(|e| Error::from(e).in_stage(Stage::Fusion))?),
        None => None,
    };

    let provenance = cfg.provenance();
    timed(&mut stages, Stage::Export, || {
        if let Some(parent) = cfg.output.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        guard.track(cfg.output.clone());
        guard.track(sidecar_path(&cfg.output));
        write_svol(&cfg.output, &fused.saliency, &provenance)?;
        let dir = cfg
            .export
            .dir
            .clone()
            .or_else(|| cfg.output.parent().map(Path::to_path_buf))
            .unwrap_or_default();
        let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
        if cfg.export.intermediates {
            fs::create_dir_all(&dir)?;
            for axis in Axis::ALL {
                let i = axis.position();
                for (name, vol) in [("energy", energies.get(axis)), ("saliency", &maps[i])] {
                    let p = dir.join(format!("{name}_{axis}.svol"));
                    guard.track(p.clone());
                    guard.track(sidecar_path(&p));
                    write_svol(&p, vol, &provenance)?;
                }
            }
        }
        let indices: Vec<usize> = cfg
            .export
            .slices
            .iter()
            .map(|s| s.resolve(&input, cfg.export.axis))
            .collect::<Result<_>>()?;
        if !indices.is_empty() {
            let axis = cfg.export.axis;
            // register names before writing so a failure midway still cleans up
            for &i in &indices {
                guard.track(dir.join(format!("{axis}_{i}.pgm")));
                if cfg.export.input_slices {
                    guard.track(dir.join("input").join(format!("{axis}_{i}.pgm")));
                }
            }
            export_slices(&fused.saliency, axis, &indices, &dir)?;
            if cfg.export.input_slices {
                export_slices(&input, axis, &indices, dir.join("input"))?;
            }
        }
        Ok(())
    })?;

    let (weight_blocks, mse, trainer) = match &fused.adaptation {
        Some(a) => (
            Some(a.blocks.iter().map(|b| BlockWeights { start: b.start, end: b.end, weights: b.weights.weights }).collect()),
            Some(mse_curve(a)),
            Some(cfg.fusion.trainer.name().to_string()),
        ),
        None => (None, None, None),
    };
    let report = RunReport {
        config: cfg.entries().into_iter().collect(),
        input: InputSummary {
            path: cfg.input.display().to_string(),
            dims: input.dims().as_array(),
            sample_interval_ms: input.sample_interval_ms,
            load: load_report,
        },
        stages,
        weights: fused.weights,
        trainer,
        weight_blocks,
        mse_curve: mse,
        detection,
        warnings,
        outputs: guard.paths.iter().map(|p| p.display().to_string()).collect(),
    };
    guard.armed = false;
    Ok((fused.saliency, report))
}

/// `iteration,windowed_mse` lines with a header.
pub fn mse_csv(curve: &[MsePoint]) -> String {
    let mut out = String::from("iteration_index,windowed_mse\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.iteration, p.mse));
    }
    out
}

pub fn adaptation_curve(a: &Adaptation) -> Vec<MsePoint> {
    mse_curve(a)
}

impl DesiredSpec {
    /// Resolves to a [`DesiredMap`], reading the file if needed.
    pub fn load(&self, readapt_every: Option<usize>) -> Result<DesiredMap> {
        let source = match self {
            DesiredSpec::Axis(a) => DesiredSource::SelectAxis(*a),
            DesiredSpec::File(p) => DesiredSource::Labeled(read_svol(p)?),
        };
        Ok(DesiredMap { source, section_stride: readapt_every })
    }
}
