use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use seisal_core::fusion::{Schedule, Trainer};
use seisal_core::pipeline::{
    adaptation_curve, export_slices, fuse_maps, load_input, mse_csv, run_saliency, DesiredSpec, FusionMode,
    PipelineConfig, SliceRef,
};
use seisal_core::segy::{self, LoadOptions};
use seisal_core::synth::{generate, Scenario, ScenarioKind, SyntheticSpec};
use seisal_core::volume::{read_svol, sidecar_path, write_svol, Axis, Dims, Volume3D};
use seisal_core::{Error, Result};

#[derive(Parser)]
#[command(name = "seisal", version, about = "Attention-model saliency for 3D seismic volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a SEG-Y file to .svol and print the load report.
    Convert(ConvertArgs),
    /// Generate a synthetic volume and its structure mask.
    Synth(SynthArgs),
    /// Run the full pipeline: energies, DCS, fusion, export.
    Saliency(SaliencyArgs),
    /// Re-fuse saved directional maps without recomputing energies.
    Fuse(FuseArgs),
    /// Write PGM slices of a volume.
    Export(ExportArgs),
    /// Print dimensions, sampling and value range of a volume.
    Info(InfoArgs),
}

#[derive(Args)]
struct SegyArgs {
    /// 1-based trace-header byte of the inline number.
    #[arg(long = "inline-bytes")]
    inline_bytes: Option<usize>,
    /// 1-based trace-header byte of the crossline number.
    #[arg(long = "xline-bytes")]
    xline_bytes: Option<usize>,
    /// Zero-fill grid positions that have no trace.
    #[arg(long)]
    fill_missing: bool,
}

impl SegyArgs {
    fn options(&self) -> LoadOptions {
        let d = LoadOptions::default();
        LoadOptions {
            inline_byte: self.inline_bytes.unwrap_or(d.inline_byte),
            xline_byte: self.xline_bytes.unwrap_or(d.xline_byte),
            fill_missing: self.fill_missing,
        }
    }
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    output: PathBuf,
    #[command(flatten)]
    segy: SegyArgs,
    /// Write the JSON load report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// layered, layered+fault, layered+dome or chaotic-patch.
    #[arg(long, default_value = "layered+fault")]
    scenario: String,
    /// T,X,Y
    #[arg(long, default_value = "64,64,64")]
    dims: String,
    /// Fault dip from horizontal, degrees.
    #[arg(long)]
    dip: Option<f64>,
    /// Fault throw, samples.
    #[arg(long)]
    throw: Option<usize>,
    /// Dome center as t,x,y.
    #[arg(long)]
    center: Option<String>,
    /// Dome radius, voxels.
    #[arg(long)]
    radius: Option<f64>,
    /// Chaotic patch box as t0,x0,y0:t1,x1,y1 (end exclusive).
    #[arg(long)]
    patch: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Sample interval recorded in the output, milliseconds (0 = unknown).
    #[arg(long, default_value_t = 4.0)]
    interval_ms: f32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args)]
struct FusionArgs {
    /// equal, manual:Wt,Wx,Wy or adapt.
    #[arg(long)]
    weights: Option<String>,
    /// lms, nlms or rls.
    #[arg(long)]
    trainer: Option<String>,
    /// Target for adaptation: a .svol path or axis:t|x|y.
    #[arg(long)]
    desired: Option<String>,
    /// Re-adapt every N sections (0 disables).
    #[arg(long)]
    readapt_every: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Write the windowed MSE curve as CSV.
    #[arg(long)]
    mse_out: Option<PathBuf>,
}

impl FusionArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        put("fusion.mode", self.weights.clone());
        put("fusion.trainer", self.trainer.clone());
        put("fusion.desired", self.desired.clone());
        put("fusion.readapt_every", self.readapt_every.map(|n| n.to_string()));
        put("fusion.mu", self.mu.map(|v| v.to_string()));
        put("fusion.epsilon", self.epsilon.map(|v| v.to_string()));
        put("fusion.lambda", self.lambda.map(|v| v.to_string()));
        put("fusion.delta", self.delta.map(|v| v.to_string()));
        out
    }
}

#[derive(Args)]
struct SaliencyArgs {
    /// Input .svol or SEG-Y file.
    input: Option<PathBuf>,
    /// Plain-text key = value config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Ground-truth mask (.svol) for detection metrics.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    cube_side: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// none or hann.
    #[arg(long)]
    taper: Option<String>,
    /// DCS orientation for all three axes.
    #[arg(long)]
    orientation: Option<String>,
    /// DCS radius for all three axes.
    #[arg(long = "dcs-radius")]
    dcs_radius: Option<i64>,
    /// DCS Gaussian sigma for all three axes.
    #[arg(long)]
    sigma: Option<f64>,
    /// inner or outer.
    #[arg(long)]
    weighting: Option<String>,
    #[command(flatten)]
    fusion: FusionArgs,
    /// Axis of exported slices.
    #[arg(long)]
    slice_axis: Option<String>,
    /// Slice indices or times, e.g. 40,1600ms.
    #[arg(long)]
    slices: Option<String>,
    #[arg(long)]
    export_dir: Option<PathBuf>,
    /// Also export matching input slices under <export-dir>/input/.
    #[arg(long)]
    input_slices: bool,
    /// Persist energy_<axis>.svol and saliency_<axis>.svol.
    #[arg(long)]
    keep_intermediates: bool,
    #[command(flatten)]
    segy: SegyArgs,
    /// Worker threads: auto or a count.
    #[arg(long)]
    threads: Option<String>,
    /// Any config key, repeatable: --set dcs.t.orientation=axis-t
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write the effective config and exit.
    #[arg(long)]
    print_config: bool,
    /// Write the JSON run report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl SaliencyArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("input", path(&self.input));
        put("output", path(&self.output));
        put("mask", path(&self.mask));
        put("tiling.cube_side", self.cube_side.map(|v| v.to_string()));
        put("tiling.stride", self.stride.map(|v| v.to_string()));
        put("tiling.taper", self.taper.clone());
        for axis in Axis::ALL {
            put(&format!("dcs.{axis}.orientation"), self.orientation.clone());
            put(&format!("dcs.{axis}.radius"), self.dcs_radius.map(|v| v.to_string()));
            put(&format!("dcs.{axis}.sigma"), self.sigma.map(|v| v.to_string()));
            put(&format!("dcs.{axis}.weighting"), self.weighting.clone());
        }
        put("export.axis", self.slice_axis.clone());
        put("export.slices", self.slices.clone());
        put("export.dir", path(&self.export_dir));
        put("export.input_slices", self.input_slices.then(|| "true".into()));
        put("export.intermediates", self.keep_intermediates.then(|| "true".into()));
        put("segy.inline_byte", self.segy.inline_bytes.map(|v| v.to_string()));
        put("segy.xline_byte", self.segy.xline_bytes.map(|v| v.to_string()));
        put("segy.fill_missing", self.segy.fill_missing.then(|| "true".into()));
        put("threads", self.threads.clone());
        kv.extend(self.fusion.overrides().into_iter().map(|(k, v)| (k.to_string(), v)));
        // trainer first so its parameters land on the right variant
        kv.sort_by_key(|(k, _)| k != "fusion.trainer");
        for (k, v) in kv {
            cfg.set(&k, &v)?;
        }
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::config(format!("--set {item:?}: expected KEY=VALUE")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct FuseArgs {
    /// Directory holding saliency_t.svol, saliency_x.svol, saliency_y.svol.
    #[arg(long)]
    maps: PathBuf,
    #[command(flatten)]
    fusion: FusionArgs,
    /// inline (y), crossline (x) or t: the axis re-adaptation steps along.
    #[arg(long, default_value = "y")]
    section_axis: String,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    input: PathBuf,
    #[arg(long, default_value = "t")]
    axis: String,
    /// Slice indices or times, e.g. 0,10,1600ms.
    #[arg(long)]
    slices: String,
    #[arg(long, default_value = ".")]
    dir: PathBuf,
    #[command(flatten)]
    segy: SegyArgs,
}

#[derive(Args)]
struct InfoArgs {
    input: PathBuf,
    #[command(flatten)]
    segy: SegyArgs,
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_line(text: &str) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit_json(value: &serde_json::Value, to: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    match to {
        Some(p) => fs::write(p, text + "\n")?,
        None => print_line(&text)?,
    }
    Ok(())
}

fn convert(a: &ConvertArgs) -> Result<()> {
    let (v, report) = segy::load_volume(&a.input, &a.segy.options()).map_err(|e| Error::from(e).in_stage(seisal_core::Stage::Load))?;
    write_svol(&a.output, &v, &format!("converted from {}", a.input.display()))?;
    emit_json(&json!(report), a.report.as_deref())
}

fn parse_triple<T: std::str::FromStr>(s: &str, what: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config(format!("{what} {s:?}: expected three comma-separated numbers")))?;
    parts.try_into().map_err(|_| Error::config(format!("{what} {s:?}: expected three comma-separated numbers")))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let dims: Dims = a.dims.parse().map_err(|e| Error::config(format!("--dims: {e}")))?;
    let kind: ScenarioKind = a.scenario.parse().map_err(|e| Error::config(format!("--scenario: {e}")))?;
    let mut scenario = kind.default_for(dims);
    match &mut scenario {
        Scenario::Fault { dip_deg, throw } => {
            *dip_deg = a.dip.unwrap_or(*dip_deg);
            *throw = a.throw.unwrap_or(*throw);
        }
        Scenario::Dome { center, radius } => {
            if let Some(c) = &a.center {
                *center = parse_triple(c, "--center")?;
            }
            *radius = a.radius.unwrap_or(*radius);
        }
        Scenario::ChaoticPatch { lo, hi } => {
            if let Some(p) = &a.patch {
                let (l, h) = p.split_once(':').ok_or_else(|| Error::config("--patch: expected lo:hi"))?;
                *lo = parse_triple(l, "--patch")?;
                *hi = parse_triple(h, "--patch")?;
            }
        }
        Scenario::Layered => {}
    }
    if a.noise.is_nan() || a.noise < 0.0 {
        return Err(Error::config("--noise must be >= 0"));
    }
    let spec = SyntheticSpec { dims, scenario, noise_sigma: a.noise, seed: a.seed };
    let (mut v, mut mask) = generate(&spec)?;
    if a.interval_ms > 0.0 {
        v.sample_interval_ms = Some(a.interval_ms);
        mask.sample_interval_ms = Some(a.interval_ms);
    }
    let provenance = serde_json::to_string(&spec).expect("spec serializes");
    write_svol(&a.out, &v, &provenance)?;
    if let Some(m) = &a.mask {
        write_svol(m, &mask, &provenance)?;
    }
    Ok(())
}

fn saliency(a: &SaliencyArgs) -> Result<()> {
    let cfg = a.config()?;
    if a.print_config {
        print!("{}", cfg.serialize());
        return Ok(());
    }
    let (_, report) = run_saliency(&cfg)?;
    if let (Some(path), Some(curve)) = (&a.fusion.mse_out, &report.mse_curve) {
        fs::write(path, mse_csv(curve))?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    emit_json(&json!(report), a.report.as_deref())
}

fn fuse(a: &FuseArgs) -> Result<()> {
    let mut cfg = PipelineConfig::default();
    for (k, v) in a.fusion.overrides() {
        if k == "fusion.trainer" {
            cfg.set(k, &v)?;
        }
    }
    for (k, v) in a.fusion.overrides() {
        cfg.set(k, &v)?;
    }
    cfg.set("fusion.section_axis", &a.section_axis)?;
    let f = &cfg.fusion;
    f.trainer.validate().map_err(|e| Error::config(e.to_string()))?;
    if f.mode == FusionMode::Adapt && f.trainer == Trainer::None {
        return Err(Error::config("--weights adapt needs a trainer"));
    }
    let load = |axis: Axis| -> Result<Volume3D> {
        read_svol(a.maps.join(format!("saliency_{axis}.svol"))).map_err(|e| Error::from(e).in_stage(seisal_core::Stage::Load))
    };
    let maps = [load(Axis::T)?, load(Axis::X)?, load(Axis::Y)?];
    let desired = match (&f.mode, &f.desired) {
        (FusionMode::Adapt, d) => d.load(f.readapt_every).map_err(|e| e.in_stage(seisal_core::Stage::Load))?,
        _ => DesiredSpec::Axis(Axis::T).load(None)?,
    };
    let fused = fuse_maps(
        [&maps[0], &maps[1], &maps[2]],
        f.mode,
        f.trainer,
        &desired,
        Schedule { section_axis: f.section_axis },
    )
    .map_err(|e| e.in_stage(seisal_core::Stage::Fusion))?;
    write_svol(&a.out, &fused.saliency, &format!("fused {} {}", f.mode, f.trainer.name()))?;
    let curve = fused.adaptation.as_ref().map(adaptation_curve);
    if let (Some(path), Some(c)) = (&a.fusion.mse_out, &curve) {
        fs::write(path, mse_csv(c))?;
    }
    if fused.has_negative_weight() {
        eprintln!("warning: negative fusion weight {:?}", fused.weights);
    }
    let blocks = fused.adaptation.as_ref().map(|ad| {
        ad.blocks.iter().map(|b| json!({"start": b.start, "end": b.end, "weights": b.weights.weights})).collect::<Vec<_>>()
    });
    emit_json(
        &json!({
            "mode": f.mode.to_string(),
            "trainer": f.trainer,
            "weights": fused.weights,
            "weight_blocks": blocks,
            "mse_curve": curve,
            "output": a.out.display().to_string(),
        }),
        a.report.as_deref(),
    )
}

fn export(a: &ExportArgs) -> Result<()> {
    let axis: Axis = a.axis.parse().map_err(|e| Error::config(format!("--axis: {e}")))?;
    let (v, _) = load_input(&a.input, &a.segy.options()).map_err(|e| e.in_stage(seisal_core::Stage::Load))?;
    let indices: Vec<usize> = a
        .slices
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<SliceRef>()?.resolve(&v, axis))
        .collect::<Result<_>>()?;
    for p in export_slices(&v, axis, &indices, &a.dir)? {
        print_line(&p.display().to_string())?;
    }
    Ok(())
}

fn info(a: &InfoArgs) -> Result<()> {
    let (v, load) = load_input(&a.input, &a.segy.options()).map_err(|e| e.in_stage(seisal_core::Stage::Load))?;
    let (lo, hi) = v.min_max();
    let provenance = fs::read_to_string(sidecar_path(&a.input))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|j| j.get("provenance").cloned());
    emit_json(
        &json!({
            "path": a.input.display().to_string(),
            "dims": v.dims(),
            "axis_labels": v.axis_labels,
            "origin_indices": v.origin_indices,
            "sample_interval_ms": v.sample_interval_ms,
            "min": lo,
            "max": hi,
            "mean": v.mean(),
            "provenance": provenance,
            "load": load,
        }),
        None,
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Convert(a) => convert(a),
        Command::Synth(a) => synth(a),
        Command::Saliency(a) => saliency(a),
        Command::Fuse(a) => fuse(a),
        Command::Export(a) => export(a),
        Command::Info(a) => info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
