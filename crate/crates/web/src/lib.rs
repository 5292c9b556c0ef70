//! Browser bindings for the saliency demo page in `www/`.
//!
//! Three operations are exposed: synthesize a volume and view slices of its
//! saliency maps, inspect a DCS window, and compare LMS/NLMS/RLS
//! convergence curves. Wrappers stay thin; logic lives in plain functions
//! so it can be tested natively.

use wasm_bindgen::prelude::*;

use seisal_core::dcs::{make_window, DcsConfig, Orientation, Weighting};
use seisal_core::fusion::{samples_to_threshold, train_stream, DesiredMap, Schedule, Trainer, MSE_WINDOW};
use seisal_core::pipeline::{saliency_maps, FusionMode, SaliencyProducts, TilingConfig};
use seisal_core::spectral::Taper;
use seisal_core::synth::{auc, generate, planted_stream, DetectionReport, ScenarioKind, SyntheticSpec};
use seisal_core::volume::{extract_slice, minmax_normalize, Axis, Dims, Volume3D};

/// Largest cube side the page may request; keeps a run under a few seconds
/// single-threaded.
pub const MAX_DEMO_SIDE: usize = 64;

fn err(e: impl ToString) -> String {
    e.to_string()
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| format!("{what}: {e}"))
}

/// Grayscale RGBA bytes of one slice, rows along the first remaining axis.
pub fn slice_rgba(v: &Volume3D, axis: Axis, index: usize) -> Result<(usize, usize, Vec<u8>), String> {
    let s = extract_slice(&minmax_normalize(v), axis, index).map_err(err)?;
    let mut rgba = Vec::with_capacity(4 * s.data.len());
    for &p in &s.data {
        let g = (p.clamp(0.0, 1.0) * 255.0).round() as u8;
        rgba.extend_from_slice(&[g, g, g, 255]);
    }
    Ok((s.cols, s.rows, rgba))
}

/// Run parameters collected from the page.
#[derive(Debug, Clone)]
pub struct RunParams {
    pub cube_side: usize,
    pub stride: usize,
    pub orientation: Orientation,
    pub radius: i64,
    pub sigma: f64,
    pub weighting: Weighting,
    /// "equal" or "adapt-t|x|y".
    pub fusion: String,
}

pub struct Session {
    volume: Volume3D,
    mask: Volume3D,
    products: Option<SaliencyProducts>,
}

impl Session {
    pub fn synthesize(scenario: &str, side: usize, noise: f64, seed: u64) -> Result<Self, String> {
        if !(16..=MAX_DEMO_SIDE).contains(&side) {
            return Err(format!("side must be in 16..={MAX_DEMO_SIDE}"));
        }
        let dims = Dims::cube(side);
        let kind: ScenarioKind = parse(scenario, "scenario")?;
        let spec = SyntheticSpec { dims, scenario: kind.default_for(dims), noise_sigma: noise, seed };
        let (volume, mask) = generate(&spec).map_err(err)?;
        Ok(Self { volume, mask, products: None })
    }

    pub fn run(&mut self, p: &RunParams) -> Result<(), String> {
        let tiling = TilingConfig { cube_side: p.cube_side, stride: p.stride, taper: Taper::None };
        let window = make_window(p.orientation, p.radius, p.sigma).map_err(err)?;
        let dcs = DcsConfig { window, weighting: p.weighting };
        let (mode, desired) = match p.fusion.strip_prefix("adapt-") {
            Some(a) => (FusionMode::Adapt, DesiredMap::select_axis(parse(a, "adapt axis")?)),
            None if p.fusion == "equal" => (FusionMode::Equal, DesiredMap::select_axis(Axis::T)),
            None => return Err(format!("fusion {:?}: expected equal or adapt-t|x|y", p.fusion)),
        };
        let products = saliency_maps(
            &self.volume,
            &tiling,
            [&dcs, &dcs, &dcs],
            mode,
            Trainer::nlms(),
            &desired,
            Schedule::default(),
        )
        .map_err(err)?;
        self.products = Some(products);
        Ok(())
    }

    /// `input`, `mask`, `saliency`, `s_t`, `s_x`, `s_y`, `e_t`, `e_x` or `e_y`.
    pub fn layer(&self, which: &str) -> Result<&Volume3D, String> {
        let products = || self.products.as_ref().ok_or_else(|| "run the pipeline first".to_string());
        Ok(match which {
            "input" => &self.volume,
            "mask" => &self.mask,
            "saliency" => &products()?.fused.saliency,
            "s_t" => &products()?.maps[0],
            "s_x" => &products()?.maps[1],
            "s_y" => &products()?.maps[2],
            "e_t" => &products()?.energies.t,
            "e_x" => &products()?.energies.x,
            "e_y" => &products()?.energies.y,
            other => return Err(format!("unknown layer {other:?}")),
        })
    }

    pub fn detection(&self) -> Result<DetectionReport, String> {
        auc(self.layer("saliency")?, &self.mask).map_err(err)
    }

    pub fn weights(&self) -> Option<[f64; 3]> {
        self.products.as_ref().map(|p| p.fused.weights)
    }
}

/// Flat `[dt, dx, dy, w]` quadruples of a window.
pub fn window_quads(orientation: &str, radius: i64, sigma: f64) -> Result<Vec<f64>, String> {
    let w = make_window(parse(orientation, "orientation")?, radius, sigma).map_err(err)?;
    Ok(w.offsets()
        .iter()
        .zip(w.weights())
        .flat_map(|(o, &wt)| [o[0] as f64, o[1] as f64, o[2] as f64, wt])
        .collect())
}

/// Windowed MSE curves of the three trainers on one planted-weights stream.
pub struct Curves {
    pub names: [&'static str; 3],
    pub mse: [Vec<f64>; 3],
    /// Samples until the trailing-window MSE reaches 1e-6, if it does.
    pub to_threshold: [Option<usize>; 3],
}

pub fn convergence_curves(len: usize, seed: u64, trainers: [Trainer; 3]) -> Result<Curves, String> {
    let stream = planted_stream(len, [0.5, 0.3, 0.2], seed);
    let mut mse: [Vec<f64>; 3] = Default::default();
    let mut to_threshold = [None; 3];
    for (i, t) in trainers.iter().enumerate() {
        let run = train_stream(*t, stream.iter().copied()).map_err(err)?;
        mse[i] = run.history.iter().map(|p| p.mse).collect();
        to_threshold[i] = samples_to_threshold(&run.sq_errors, MSE_WINDOW, 1e-6);
    }
    Ok(Curves { names: trainers.map(|t| t.name()), mse, to_threshold })
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// Synthetic volume plus its latest pipeline run.
#[wasm_bindgen]
pub struct Demo {
    session: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(scenario: &str, side: usize, noise: f64, seed: u64) -> Result<Demo, JsError> {
        Session::synthesize(scenario, side, noise, seed).map(|session| Demo { session }).map_err(js)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &mut self,
        cube_side: usize,
        stride: usize,
        orientation: &str,
        radius: i32,
        sigma: f64,
        weighting: &str,
        fusion: &str,
    ) -> Result<(), JsError> {
        let params = RunParams {
            cube_side,
            stride,
            orientation: parse(orientation, "orientation").map_err(js)?,
            radius: i64::from(radius),
            sigma,
            weighting: parse(weighting, "weighting").map_err(js)?,
            fusion: fusion.to_string(),
        };
        self.session.run(&params).map_err(js)
    }

    pub fn side(&self) -> usize {
        self.session.volume.dims().t
    }

    /// RGBA pixels of a slice; width and height both equal [`Demo::side`].
    pub fn slice(&self, layer: &str, axis: &str, index: usize) -> Result<Vec<u8>, JsError> {
        let axis: Axis = parse(axis, "axis").map_err(js)?;
        let v = self.session.layer(layer).map_err(js)?;
        slice_rgba(v, axis, index).map(|(_, _, px)| px).map_err(js)
    }

    /// `[auc, contrast_ratio, mean_in, mean_out]`.
    pub fn detection(&self) -> Result<Vec<f64>, JsError> {
        let r = self.session.detection().map_err(js)?;
        Ok(vec![r.auc, r.contrast_ratio, r.mean_in, r.mean_out])
    }

    pub fn weights(&self) -> Vec<f64> {
        self.session.weights().map(|w| w.to_vec()).unwrap_or_default()
    }
}

/// DCS window as flat `[dt, dx, dy, w, ...]`.
#[wasm_bindgen(js_name = windowOffsets)]
pub fn window_offsets(orientation: &str, radius: i32, sigma: f64) -> Result<Vec<f64>, JsError> {
    window_quads(orientation, i64::from(radius), sigma).map_err(js)
}

#[wasm_bindgen]
pub struct TrainerCurves {
    curves: Curves,
}

#[wasm_bindgen]
impl TrainerCurves {
    pub fn mse(&self, i: usize) -> Vec<f64> {
        self.curves.mse.get(i).cloned().unwrap_or_default()
    }

    pub fn name(&self, i: usize) -> String {
        self.curves.names.get(i).map(|s| s.to_string()).unwrap_or_default()
    }

    /// Samples to reach MSE 1e-6, or -1 if never reached.
    #[wasm_bindgen(js_name = toThreshold)]
    pub fn to_threshold(&self, i: usize) -> i64 {
        self.curves.to_threshold.get(i).copied().flatten().map_or(-1, |n| n as i64)
    }

    pub fn window(&self) -> usize {
        MSE_WINDOW
    }
}

/// LMS, NLMS and RLS on the same planted-weights stream.
#[wasm_bindgen(js_name = trainerCurves)]
pub fn trainer_curves(
    len: usize,
    seed: u64,
    lms_mu: f64,
    nlms_mu: f64,
    rls_lambda: f64,
    rls_delta: f64,
) -> Result<TrainerCurves, JsError> {
    let trainers = [
        Trainer::Lms { mu: lms_mu },
        Trainer::Nlms { mu: nlms_mu, epsilon: seisal_core::fusion::DEFAULT_NLMS_EPSILON },
        Trainer::Rls { lambda: rls_lambda, delta: rls_delta },
    ];
    for t in &trainers {
        t.validate().map_err(|e| js(e.to_string()))?;
    }
    convergence_curves(len.min(1 << 18), seed, trainers).map(|curves| TrainerCurves { curves }).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> RunParams {
        RunParams {
            cube_side: 8,
            stride: 4,
            orientation: Orientation::Full,
            radius: 1,
            sigma: 1.0,
            weighting: Weighting::Inner,
            fusion: "equal".into(),
        }
    }

    #[test]
    fn session_layers() {
        let mut s = Session::synthesize("layered+fault", 16, 0.0, 1).unwrap();
        assert!(s.layer("saliency").is_err());
        s.run(&params()).unwrap();
        for layer in ["input", "mask", "saliency", "s_t", "s_x", "s_y", "e_t", "e_x", "e_y"] {
            let (w, h, px) = slice_rgba(s.layer(layer).unwrap(), Axis::Y, 3).unwrap();
            assert_eq!((w, h, px.len()), (16, 16, 16 * 16 * 4), "{layer}");
            assert!(px.chunks(4).all(|c| c[0] == c[1] && c[1] == c[2] && c[3] == 255));
        }
        assert!(s.detection().unwrap().auc > 0.5);
        assert!(s.layer("other").is_err());
        assert!(Session::synthesize("layered", 8, 0.0, 1).is_err());
    }

    #[test]
    fn adapt_fusion_modes() {
        let mut s = Session::synthesize("layered+dome", 16, 0.05, 2).unwrap();
        s.run(&RunParams { fusion: "adapt-x".into(), ..params() }).unwrap();
        let w = s.weights().unwrap();
        assert!((w[1] - 1.0).abs() < 0.05, "{w:?}");
        assert!(s.run(&RunParams { fusion: "adapt-q".into(), ..params() }).is_err());
        assert!(s.run(&RunParams { fusion: "mean".into(), ..params() }).is_err());
    }

    #[test]
    fn window_layout() {
        let q = window_quads("axis-t", 2, 1.0).unwrap();
        assert_eq!(q.len(), 16);
        assert_eq!(&q[..4], &[-2.0, 0.0, 0.0, (-2.0f64).exp()]);
        assert!(window_quads("sideways", 2, 1.0).is_err());
    }

    #[test]
    fn curves_order() {
        let c = convergence_curves(20_000, 3, [Trainer::lms(), Trainer::nlms(), Trainer::rls()]).unwrap();
        assert_eq!(c.mse[0].len(), 20);
        let [l, n, r] = c.to_threshold.map(Option::unwrap);
        assert!(r <= n && n <= l, "{l} {n} {r}");
    }
}
