//! Local 3D spectra, multi-dimensional spectral projection, and the
//! per-axis spectral-energy feature volumes.
//!
//! A [`SpectralCube`] stores its bins in centered order: the bin for
//! frequency `(i, j, k)` with each component in `[-n/2, ceil(n/2) - 1]` sits
//! at storage position `(i + h) + n * ((j + h) + n * (k + h))`, `h = n / 2`.
//! `i` pairs with the time axis, `j` with crossline, `k` with inline.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::volume::{Axis, TileAccumulator, TileGrid, Volume3D, VolumeError};

/// Largest side the O(n⁶) Kronecker oracle accepts.
pub const ORACLE_MAX_SIDE: usize = 16;
/// Largest side the fast path accepts.
pub const FFT_MAX_SIDE: usize = 256;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("cube side {0} is not a supported transform size (2..={FFT_MAX_SIDE})")]
    UnsupportedSize(usize),
    #[error("cube side {0} exceeds the oracle limit of {ORACLE_MAX_SIDE}")]
    OracleTooLarge(usize),
    #[error("cube holds {got} samples, side {n} needs {}", n * n * n)]
    CubeLength { n: usize, got: usize },
    #[error("tile plan is for {plan}, volume is {volume}")]
    PlanMismatch { plan: crate::volume::Dims, volume: crate::volume::Dims },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Centered frequency of raw DFT index `u`.
#[inline]
pub fn centered_freq(u: usize, n: usize) -> i64 {
    let half_up = n - n / 2;
    if u < half_up {
        u as i64
    } else {
        u as i64 - n as i64
    }
}

/// Complex local spectrum of an `n`³ cube.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    n: usize,
    bins: Vec<Complex64>,
}

impl SpectralCube {
    pub fn zeros(n: usize) -> Self {
        Self { n, bins: vec![Complex64::new(0.0, 0.0); n * n * n] }
    }

    /// Wraps bins already in centered order.
    pub fn from_centered(n: usize, bins: Vec<Complex64>) -> Result<Self, SpectralError> {
        if bins.len() != n * n * n {
            return Err(SpectralError::CubeLength { n, got: bins.len() });
        }
        Ok(Self { n, bins })
    }

    /// Reorders a raw (unshifted) transform into centered order.
    fn from_raw(n: usize, raw: &[Complex64]) -> Self {
        let h = (n / 2) as i64;
        let pos = |u: usize| (centered_freq(u, n) + h) as usize;
        let mut bins = vec![Complex64::new(0.0, 0.0); n * n * n];
        for uk in 0..n {
            for uj in 0..n {
                for ui in 0..n {
                    bins[pos(ui) + n * (pos(uj) + n * pos(uk))] = raw[ui + n * (uj + n * uk)];
                }
            }
        }
        Self { n, bins }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    /// Lowest and highest centered frequency.
    pub fn freq_range(&self) -> (i64, i64) {
        let h = (self.n / 2) as i64;
        (-h, self.n as i64 - h - 1)
    }

    fn offset(&self, i: i64, j: i64, k: i64) -> Option<usize> {
        let (lo, hi) = self.freq_range();
        let ok = |f: i64| (lo..=hi).contains(&f);
        if !(ok(i) && ok(j) && ok(k)) {
            return None;
        }
        let p = |f: i64| (f - lo) as usize;
        Some(p(i) + self.n * (p(j) + self.n * p(k)))
    }

    pub fn get(&self, i: i64, j: i64, k: i64) -> Option<Complex64> {
        self.offset(i, j, k).map(|o| self.bins[o])
    }

    pub fn set(&mut self, i: i64, j: i64, k: i64, value: Complex64) {
        let o = self.offset(i, j, k).expect("frequency inside cube");
        self.bins[o] = value;
    }

    /// Centered frequency triple of every storage position, in order.
    pub fn frequencies(&self) -> impl Iterator<Item = (i64, i64, i64)> + '_ {
        let (lo, _) = self.freq_range();
        let n = self.n;
        (0..n * n * n).map(move |p| {
            let i = (p % n) as i64 + lo;
            let j = ((p / n) % n) as i64 + lo;
            let k = (p / (n * n)) as i64 + lo;
            (i, j, k)
        })
    }

    pub fn total_power(&self) -> f64 {
        self.bins.iter().map(|b| b.norm_sqr()).sum()
    }
}

fn check_cube(cube: &[f64], n: usize) -> Result<(), SpectralError> {
    if cube.len() != n * n * n {
        return Err(SpectralError::CubeLength { n, got: cube.len() });
    }
    Ok(())
}

fn dft_matrix(n: usize) -> Vec<Complex64> {
    let mut d = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let phase = -2.0 * PI * ((a * b) % n) as f64 / n as f64;
            d.push(Complex64::from_polar(1.0, phase));
        }
    }
    d
}

/// Reference transform: the cube, flattened in storage order, multiplied by
/// the Kronecker product of three `n`×`n` DFT matrices. O(n⁶); the product
/// is evaluated entry by entry rather than materialised.
pub fn local_dft_oracle(cube: &[f64], n: usize) -> Result<SpectralCube, SpectralError> {
    if n > ORACLE_MAX_SIDE {
        return Err(SpectralError::OracleTooLarge(n));
    }
    if n == 0 {
        return Err(SpectralError::UnsupportedSize(n));
    }
    check_cube(cube, n)?;
    let d = dft_matrix(n);
    let len = n * n * n;
    let digits = |r: usize| (r % n, (r / n) % n, r / (n * n));
    let kron = |row: usize, col: usize| {
        let (r0, r1, r2) = digits(row);
        let (c0, c1, c2) = digits(col);
        d[r2 * n + c2] * d[r1 * n + c1] * d[r0 * n + c0]
    };
    let raw: Vec<Complex64> = (0..len)
        .map(|row| (0..len).map(|col| kron(row, col) * cube[col]).sum())
        .collect();
    Ok(SpectralCube::from_raw(n, &raw))
}

/// Reusable 3D transform of side `n`.
#[derive(Clone)]
pub struct Fft3d {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for Fft3d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3d").field("n", &self.n).finish()
    }
}

impl Fft3d {
    pub fn new(n: usize) -> Result<Self, SpectralError> {
        if !(2..=FFT_MAX_SIDE).contains(&n) {
            return Err(SpectralError::UnsupportedSize(n));
        }
        let fft = FftPlanner::new().plan_fft_forward(n);
        let zero = Complex64::new(0.0, 0.0);
        Ok(Self {
            n,
            scratch: vec![zero; fft.get_inplace_scratch_len()],
            fft,
            buf: vec![zero; n * n * n],
            line: vec![zero; n],
        })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn transform(&mut self, cube: &[f64]) -> Result<SpectralCube, SpectralError> {
        let n = self.n;
        check_cube(cube, n)?;
        for (b, &v) in self.buf.iter_mut().zip(cube) {
            *b = Complex64::new(v, 0.0);
        }
        // t lines are contiguous
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for stride in [n, n * n] {
            for base in 0..n * n {
                // base enumerates the two axes other than the one being transformed
                let start = if stride == n { (base % n) + n * n * (base / n) } else { base };
                for (m, l) in self.line.iter_mut().enumerate() {
                    *l = self.buf[start + m * stride];
                }
                self.fft.process_with_scratch(&mut self.line, &mut self.scratch);
                for (m, l) in self.line.iter().enumerate() {
                    self.buf[start + m * stride] = *l;
                }
            }
        }
        Ok(SpectralCube::from_raw(n, &self.buf))
    }
}

/// Fast 3D DFT of an `n`³ cube (storage order), same contract as
/// [`local_dft_oracle`].
pub fn local_fft(cube: &[f64], n: usize) -> Result<SpectralCube, SpectralError> {
    Fft3d::new(n)?.transform(cube)
}

/// Share of bin `(i, j, k)` assigned to `axis`: the distance from that
/// axis's frequency line divided by the distance from DC. Zero at DC.
pub fn projection_factor(axis: Axis, i: i64, j: i64, k: i64) -> f64 {
    let (i2, j2, k2) = ((i * i) as f64, (j * j) as f64, (k * k) as f64);
    let r2 = i2 + j2 + k2;
    if r2 == 0.0 {
        return 0.0;
    }
    let p2 = match axis {
        Axis::T => j2 + k2,
        Axis::X => i2 + k2,
        Axis::Y => i2 + j2,
    };
    (p2 / r2).sqrt()
}

/// Precomputed projection factors for one axis and cube side.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionField {
    pub axis: Axis,
    pub n: usize,
    factors: Vec<f64>,
}

impl ProjectionField {
    pub fn new(axis: Axis, n: usize) -> Self {
        let proto = SpectralCube::zeros(n);
        let factors = proto.frequencies().map(|(i, j, k)| projection_factor(axis, i, j, k)).collect();
        Self { axis, n, factors }
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn apply(&self, spec: &SpectralCube) -> SpectralCube {
        assert_eq!(spec.n, self.n, "projection field side mismatch");
        let bins = spec.bins.iter().zip(&self.factors).map(|(b, &f)| b * f).collect();
        SpectralCube { n: self.n, bins }
    }
}

/// Splits a spectrum into its t, x and y projections.
pub fn project_spectrum(spec: &SpectralCube) -> [SpectralCube; 3] {
    Axis::ALL.map(|a| ProjectionField::new(a, spec.n).apply(spec))
}

/// Mean bin magnitude of a (projected) spectrum.
pub fn spectral_energy(projected: &SpectralCube) -> f64 {
    projected.bins.iter().map(|b| b.norm()).sum::<f64>() / projected.bins.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Taper {
    #[default]
    None,
    Hann,
}

impl Taper {
    pub fn as_str(&self) -> &'static str {
        match self {
            Taper::None => "none",
            Taper::Hann => "hann",
        }
    }

    fn weights(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            Taper::None => None,
            Taper::Hann => {
                let w1: Vec<f64> = (0..n)
                    .map(|m| 0.5 - 0.5 * (2.0 * PI * (m as f64 + 0.5) / n as f64).cos())
                    .collect();
                let mut w = Vec::with_capacity(n * n * n);
                for c in &w1 {
                    for b in &w1 {
                        w.extend(w1.iter().map(|a| a * b * c));
                    }
                }
                Some(w)
            }
        }
    }
}

impl FromStr for Taper {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Taper::None),
            "hann" => Ok(Taper::Hann),
            other => Err(format!("unknown taper {other:?} (expected none or hann)")),
        }
    }
}

/// The three per-axis spectral-energy feature volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyVolumes {
    pub t: Volume3D,
    pub x: Volume3D,
    pub y: Volume3D,
}

impl EnergyVolumes {
    pub fn get(&self, axis: Axis) -> &Volume3D {
        match axis {
            Axis::T => &self.t,
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }
}

struct TileWorker {
    fft: Fft3d,
    cube: Vec<f64>,
}

fn tile_energies(
    v: &Volume3D,
    origin: [usize; 3],
    worker: &mut TileWorker,
    fields: &[ProjectionField; 3],
    taper: Option<&[f64]>,
) -> Result<[f64; 3], SpectralError> {
    let n = worker.fft.side();
    v.read_cube(origin, n, &mut worker.cube)?;
    // Removing the tile mean zeroes only the DC bin, which every projection
    // discards anyway; it makes the result exactly invariant to offsets.
    let mean = worker.cube.iter().sum::<f64>() / worker.cube.len() as f64;
    worker.cube.iter_mut().for_each(|s| *s -= mean);
    if let Some(w) = taper {
        worker.cube.iter_mut().zip(w).for_each(|(s, w)| *s *= w);
    }
    let spec = worker.fft.transform(&worker.cube)?;
    let cells = spec.bins.len() as f64;
    Ok(fields.each_ref().map(|field| {
        spec.bins
            .iter()
            .zip(field.factors())
            .map(|(b, &f)| (b * f).norm())
            .sum::<f64>()
            / cells
    }))
}

/// Spectral energies of every tile in `plan`, splatted over each tile's
/// footprint and averaged where tiles overlap.
pub fn energy_volumes(v: &Volume3D, plan: &TileGrid, taper: Taper) -> Result<EnergyVolumes, SpectralError> {
    if plan.dims != v.dims() {
        return Err(SpectralError::PlanMismatch { plan: plan.dims, volume: v.dims() });
    }
    let n = plan.cube_side;
    let proto = Fft3d::new(n)?;
    let fields = Axis::ALL.map(|a| ProjectionField::new(a, n));
    let taper_w = taper.weights(n);
    let new_worker = || TileWorker { fft: proto.clone(), cube: vec![0.0; n * n * n] };

    #[cfg(feature = "parallel")]
    let per_tile: Vec<[f64; 3]> = {
        use rayon::prelude::*;
        plan.origins
            .par_iter()
            .map_init(new_worker, |w, &o| tile_energies(v, o, w, &fields, taper_w.as_deref()))
            .collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per_tile: Vec<[f64; 3]> = {
        let mut w = new_worker();
        plan.origins
            .iter()
            .map(|&o| tile_energies(v, o, &mut w, &fields, taper_w.as_deref()))
            .collect::<Result<_, _>>()?
    };

    let mut accs = Axis::ALL.map(|_| TileAccumulator::new(v.dims()));
    for (origin, energies) in plan.origins.iter().zip(&per_tile) {
        for (acc, &e) in accs.iter_mut().zip(energies) {
            acc.accumulate_constant(*origin, n, e)?;
        }
    }
    let [t, x, y] = accs;
    let finish = |acc: TileAccumulator| -> Result<Volume3D, SpectralError> {
        Ok(acc.normalize()?.with_metadata_of(v))
    };
    Ok(EnergyVolumes { t: finish(t)?, x: finish(x)?, y: finish(y)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{tile_plan, Dims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cube(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n * n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct triple sum over centered frequencies.
    fn triple_sum_dft(cube: &[f64], n: usize) -> SpectralCube {
        let mut out = SpectralCube::zeros(n);
        let (lo, hi) = out.freq_range();
        for k in lo..=hi {
            for j in lo..=hi {
                for i in lo..=hi {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for y in 0..n {
                        for x in 0..n {
                            for t in 0..n {
                                let ph = -2.0 * PI * (i * t as i64 + j * x as i64 + k * y as i64) as f64 / n as f64;
                                acc += Complex64::from_polar(cube[t + n * (x + n * y)], ph);
                            }
                        }
                    }
                    out.set(i, j, k, acc);
                }
            }
        }
        out
    }

    fn max_abs_diff(a: &SpectralCube, b: &SpectralCube) -> f64 {
        a.bins().iter().zip(b.bins()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn centered_ranges() {
        assert_eq!(SpectralCube::zeros(8).freq_range(), (-4, 3));
        assert_eq!(SpectralCube::zeros(5).freq_range(), (-2, 2));
        assert_eq!((0..8).map(|u| centered_freq(u, 8)).collect::<Vec<_>>(), vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert_eq!((0..5).map(|u| centered_freq(u, 5)).collect::<Vec<_>>(), vec![0, 1, 2, -2, -1]);
    }

    #[test]
    fn oracle_impulse_is_flat() {
        let mut cube = vec![0.0; 64];
        cube[0] = 1.0;
        let s = local_dft_oracle(&cube, 4).unwrap();
        assert!(s.bins().iter().all(|b| (b.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn oracle_constant_is_dc_only() {
        let c = 2.5;
        let s = local_dft_oracle(&[c; 64], 4).unwrap();
        assert!((s.get(0, 0, 0).unwrap() - Complex64::new(64.0 * c, 0.0)).norm() < 1e-10);
        for ((i, j, k), b) in s.frequencies().zip(s.bins()) {
            if (i, j, k) != (0, 0, 0) {
                assert!(b.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn oracle_matches_triple_sum() {
        for (n, seed) in [(4, 1), (5, 2), (3, 3)] {
            let cube = random_cube(n, seed);
            let a = local_dft_oracle(&cube, n).unwrap();
            let b = triple_sum_dft(&cube, n);
            assert!(max_abs_diff(&a, &b) <= 1e-10, "n={n}");
        }
    }

    #[test]
    fn oracle_size_limit() {
        assert!(matches!(
            local_dft_oracle(&vec![0.0; 17 * 17 * 17], 17),
            Err(SpectralError::OracleTooLarge(17))
        ));
        assert!(matches!(local_dft_oracle(&[0.0; 10], 4), Err(SpectralError::CubeLength { .. })));
    }

    #[test]
    fn fft_matches_oracle() {
        for n in [4, 6, 8] {
            let cube = random_cube(n, 40 + n as u64);
            let fast = local_fft(&cube, n).unwrap();
            let slow = local_dft_oracle(&cube, n).unwrap();
            assert!(max_abs_diff(&fast, &slow) <= 1e-8, "n={n}");
        }
    }

    #[test]
    fn fft_zero_and_offset() {
        let z = local_fft(&[0.0; 512], 8).unwrap();
        assert!(z.bins().iter().all(|b| b.norm() == 0.0));

        let cube = random_cube(8, 9);
        let shifted: Vec<f64> = cube.iter().map(|v| v + 3.0).collect();
        let a = local_fft(&cube, 8).unwrap();
        let b = local_fft(&shifted, 8).unwrap();
        for ((f, p), q) in a.frequencies().zip(a.bins()).zip(b.bins()) {
            if f == (0, 0, 0) {
                assert!((q - p - Complex64::new(512.0 * 3.0, 0.0)).norm() < 1e-9);
            } else {
                assert!((p - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn fft_sizes() {
        assert!(matches!(Fft3d::new(1), Err(SpectralError::UnsupportedSize(1))));
        assert!(matches!(Fft3d::new(FFT_MAX_SIDE + 1), Err(SpectralError::UnsupportedSize(_))));
    }

    #[test]
    fn hermitian_symmetry() {
        for n in [5, 8] {
            let s = local_fft(&random_cube(n, 77), n).unwrap();
            let (lo, _) = s.freq_range();
            let scale = s.bins().iter().map(|b| b.norm()).fold(0.0, f64::max);
            for (i, j, k) in s.frequencies() {
                // -n/2 has no positive mirror for even n
                if i == lo && n % 2 == 0 || j == lo && n % 2 == 0 || k == lo && n % 2 == 0 {
                    continue;
                }
                let a = s.get(i, j, k).unwrap();
                let b = s.get(-i, -j, -k).unwrap().conj();
                assert!((a - b).norm() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn factor_examples() {
        assert_eq!(projection_factor(Axis::T, 0, 3, 4), 1.0);
        for a in Axis::ALL {
            assert_eq!(projection_factor(a, 0, 0, 0), 0.0);
        }
        assert!((projection_factor(Axis::X, 1, 2, 2) - 5f64.sqrt() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn projection_shares_of_single_bin() {
        let mut s = SpectralCube::zeros(10);
        s.set(0, 3, 4, Complex64::new(2.0, -1.0));
        let [ft, fx, fy] = project_spectrum(&s);
        let p = s.total_power();
        assert!((ft.total_power() / p - 1.0).abs() < 1e-12);
        assert!((fx.total_power() / p - 16.0 / 25.0).abs() < 1e-12);
        assert!((fy.total_power() / p - 9.0 / 25.0).abs() < 1e-12);
    }

    #[test]
    fn projection_field_invariants() {
        for n in [4, 5, 8] {
            let fields = Axis::ALL.map(|a| ProjectionField::new(a, n));
            let proto = SpectralCube::zeros(n);
            for (p, f) in proto.frequencies().enumerate() {
                let sum: f64 = fields.iter().map(|fl| fl.factors()[p].powi(2)).sum();
                if f == (0, 0, 0) {
                    assert!(fields.iter().all(|fl| fl.factors()[p] == 0.0));
                } else {
                    assert!((sum - 2.0).abs() < 1e-12);
                    assert!(fields.iter().all(|fl| (0.0..=1.0).contains(&fl.factors()[p])));
                }
            }
        }
    }

    #[test]
    fn energy_examples() {
        assert_eq!(spectral_energy(&SpectralCube::zeros(4)), 0.0);
        let s = local_fft(&[1.7; 64], 4).unwrap();
        for p in project_spectrum(&s) {
            assert!(spectral_energy(&p) < 1e-12);
        }
        // oracle path by hand: mean |F_m| over all bins
        let cube = random_cube(4, 5);
        let fast = project_spectrum(&local_fft(&cube, 4).unwrap());
        let slow = local_dft_oracle(&cube, 4).unwrap();
        for (axis, proj) in Axis::ALL.iter().zip(&fast) {
            let brute: f64 = slow
                .frequencies()
                .zip(slow.bins())
                .map(|((i, j, k), b)| b.norm() * projection_factor(*axis, i, j, k))
                .sum::<f64>()
                / 64.0;
            assert!((spectral_energy(proj) - brute).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_volumes_constant_is_zero() {
        let v = Volume3D::new(Dims::cube(16), vec![4.2; 4096]).unwrap();
        let plan = tile_plan(v.dims(), 8, 4).unwrap();
        let e = energy_volumes(&v, &plan, Taper::None).unwrap();
        for a in Axis::ALL {
            assert!(e.get(a).data().iter().all(|&s| s.abs() < 1e-6));
        }
    }

    #[test]
    fn energy_volumes_plan_mismatch() {
        let v = Volume3D::zeros(Dims::cube(16)).unwrap();
        let plan = tile_plan(Dims::cube(20), 8, 4).unwrap();
        assert!(matches!(energy_volumes(&v, &plan, Taper::None), Err(SpectralError::PlanMismatch { .. })));
    }

    #[test]
    fn hann_taper_runs_and_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = Volume3D::from_fn(Dims::cube(16), |_, _, _| rng.random()).unwrap();
        let plan = tile_plan(v.dims(), 8, 4).unwrap();
        let e = energy_volumes(&v, &plan, Taper::Hann).unwrap();
        assert!(e.t.data().iter().all(|&s| s >= 0.0));
        assert_ne!(e, energy_volumes(&v, &plan, Taper::None).unwrap());
    }
}
