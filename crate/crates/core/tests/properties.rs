use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seisal_core::dcs::{dcs_saliency, DcsConfig, Orientation};
use seisal_core::fusion::{adapt_weights, combine, DesiredMap, Schedule, Trainer};
use seisal_core::pipeline::{saliency_maps, FusionMode, TilingConfig};
use seisal_core::spectral::{energy_volumes, Taper};
use seisal_core::synth::{generate, SyntheticSpec};
use seisal_core::volume::{minmax_normalize, tile_plan, Axis, Dims, Volume3D};

fn transpose_tx(v: &Volume3D) -> Volume3D {
    let d = v.dims();
    Volume3D::from_fn(Dims::new(d.x, d.t, d.y), |t, x, y| v.get(x, t, y)).unwrap()
}

fn max_rel_diff(a: &Volume3D, b: &Volume3D) -> f64 {
    let scale = a.data().iter().fold(0f32, |m, v| m.max(v.abs())) as f64;
    a.data().iter().zip(b.data()).map(|(p, q)| f64::from((p - q).abs())).fold(0.0, f64::max) / scale
}

#[test]
fn energy_commutes_with_t_x_transposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dims = Dims::cube(24);
    let v = Volume3D::from_fn(dims, |_, _, _| rng.random_range(-1.0f32..1.0)).unwrap();
    let plan = tile_plan(dims, 8, 4).unwrap();
    let e = energy_volumes(&v, &plan, Taper::None).unwrap();
    let et = energy_volumes(&transpose_tx(&v), &plan, Taper::None).unwrap();
    assert!(max_rel_diff(&transpose_tx(&e.t), &et.x) <= 1e-6);
    assert!(max_rel_diff(&transpose_tx(&e.x), &et.t) <= 1e-6);
    assert!(max_rel_diff(&transpose_tx(&e.y), &et.y) <= 1e-6);
}

#[test]
fn time_only_variation_loads_lateral_energies() {
    // Layering along t puts spectral mass on the t frequency axis, where the
    // t projection factor vanishes; the x and y projections carry it.
    let dims = Dims::cube(32);
    let v = Volume3D::from_fn(dims, |t, _, _| (t as f32 * 0.7).sin() + 0.5 * (t as f32 * 0.23).cos()).unwrap();
    let plan = tile_plan(dims, 16, 8).unwrap();
    let e = energy_volumes(&v, &plan, Taper::None).unwrap();
    assert!(e.x.mean() > 5.0 * e.t.mean());
    assert!(e.y.mean() > 5.0 * e.t.mean());
}

#[test]
fn saliency_argmax_marks_planted_discontinuity() {
    let dims = Dims::cube(20);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let planted = (11, 7, 9);
    let e = Volume3D::from_fn(dims, |t, x, y| {
        let base = 1.0 + 0.01 * rng.random::<f32>();
        if (t, x, y) == planted {
            base + 5.0
        } else {
            base
        }
    })
    .unwrap();
    for orientation in Orientation::ALL {
        let cfg = DcsConfig::standard(orientation, 2, 1.0).unwrap();
        let s = dcs_saliency(&e, &cfg);
        let scaled = dcs_saliency(&e.map(|v| 3.5 * v).unwrap(), &cfg);
        assert_eq!(dims.coords(s.argmax()), [planted.0, planted.1, planted.2], "{orientation}");
        assert_eq!(scaled.argmax(), s.argmax(), "{orientation}");
    }
}

fn benchmark_maps() -> [Volume3D; 3] {
    let (v, _) = generate(&SyntheticSpec::fault_benchmark()).unwrap();
    let d = DcsConfig::default();
    saliency_maps(
        &v,
        &TilingConfig::default(),
        [&d, &d, &d],
        FusionMode::Equal,
        Trainer::None,
        &DesiredMap::select_axis(Axis::T),
        Schedule::default(),
    )
    .unwrap()
    .maps
}

#[test]
fn adapting_to_axis_reproduces_that_map() {
    let maps = benchmark_maps();
    let refs = [&maps[0], &maps[1], &maps[2]];
    let a = adapt_weights(refs, &DesiredMap::select_axis(Axis::T), Trainer::nlms(), Schedule::default()).unwrap();
    let fused = combine(refs, &a.primary().weights).unwrap();
    let target = minmax_normalize(&maps[0]);
    let mse = fused
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, q)| f64::from(p - q).powi(2))
        .sum::<f64>()
        / fused.dims().len() as f64;
    assert!(mse <= 1e-4, "mse {mse}");
}

#[test]
fn adapting_to_labeled_mixture_recovers_weights() {
    let maps = benchmark_maps();
    let refs = [&maps[0], &maps[1], &maps[2]];
    let planted = [0.5, 0.3, 0.2];
    let desired = Volume3D::from_fn(maps[0].dims(), |t, x, y| {
        (planted[0] * f64::from(maps[0].get(t, x, y))
            + planted[1] * f64::from(maps[1].get(t, x, y))
            + planted[2] * f64::from(maps[2].get(t, x, y))) as f32
    })
    .unwrap()
    .map(|v| v.clamp(0.0, 1.0))
    .unwrap();
    let a = adapt_weights(refs, &DesiredMap::labeled(desired), Trainer::nlms(), Schedule::default()).unwrap();
    let w = a.primary().weights;
    for (got, want) in w.iter().zip(planted) {
        assert!((got - want).abs() < 1e-2, "weights {w:?}");
    }
}
