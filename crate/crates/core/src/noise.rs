//! Spatially smoothed complex Wiener process on the torus, per-step increment
//! objects and the iterated Itô integrals the schemes consume.
//!
//! Convention: every mode `W_k` is complex with independent real and imaginary
//! parts, each a standard Brownian motion, so `E|W_k(t)|² = 2t`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::spectral::{
    conjugate_field, pointwise_product, Multiplier, SpectralField, SpectralTransform, TorusGrid, Wavevector, C64,
};

/// Minimum number of fine steps inside one coarse step for the fine-path
/// aggregates (`∫ s dW`, `∫ W ds`) to be meaningful.
pub const MIN_FINE_PER_COARSE: usize = 4;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th Monte Carlo sample derived from a master seed.
///
/// `sample_seed(m, i) = splitmix64(splitmix64(m) ^ splitmix64(i + 1))`, so samples are
/// independent streams and can be generated in any order.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_add(1)))
}

/// Fourier-diagonal Hilbert–Schmidt operator `Φ e^{ikx} = Φ_k e^{ikx}`.
#[derive(Clone, Debug)]
pub struct SmoothingOperator {
    grid: Arc<TorusGrid>,
    coeffs: Vec<C64>,
    trace: f64,
    trace_squared: C64,
    trace_lap: f64,
    trace_bilap: f64,
}

impl SmoothingOperator {
    pub fn new(grid: &Arc<TorusGrid>, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != grid.n_modes() {
            return Err(Error::InvalidGrid(format!(
                "{} smoothing coefficients for {} modes",
                coeffs.len(),
                grid.n_modes()
            )));
        }
        if coeffs.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("smoothing operator"));
        }
        let mut trace = 0.0;
        let mut trace_squared = C64::new(0.0, 0.0);
        let mut trace_lap = 0.0;
        let mut trace_bilap = 0.0;
        for (k, phi) in grid.modes().iter().zip(&coeffs) {
            let a = phi.norm_sqr();
            let k2 = k.norm_sq() as f64;
            trace += a;
            trace_squared += phi * phi;
            trace_lap += a * k2 * k2;
            trace_bilap += a * k2.powi(4);
        }
        Ok(SmoothingOperator { grid: grid.clone(), coeffs, trace, trace_squared, trace_lap, trace_bilap })
    }

    pub fn from_fn(grid: &Arc<TorusGrid>, f: impl Fn(&Wavevector) -> C64) -> Result<Self> {
        Self::new(grid, grid.modes().iter().map(f).collect())
    }

    /// `Φ_k = (1+|k|²)^{-σ/2}`.
    pub fn sobolev_profile(grid: &Arc<TorusGrid>, sigma: f64) -> Result<Self> {
        Self::from_fn(grid, |k| C64::new((1.0 + k.norm_sq() as f64).powf(-0.5 * sigma), 0.0))
    }

    pub fn zero(grid: &Arc<TorusGrid>) -> Self {
        Self::new(grid, vec![C64::new(0.0, 0.0); grid.n_modes()]).expect("zero operator is valid")
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    /// `Tr(ΦΦ*) = Σ |Φ_k|²`.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// `Tr(Φ²) = Σ Φ_k²`, complex in general.
    pub fn trace_squared(&self) -> C64 {
        self.trace_squared
    }

    /// True when `Tr(Φ²)` and `Tr(ΦΦ*)` disagree, i.e. some `Φ_k` is not real.
    pub fn traces_differ(&self) -> bool {
        (self.trace_squared - self.trace).norm() > 1e-12 * self.trace.max(1e-300)
    }

    /// `Tr((ΔΦ)²) = Σ |Φ_k|² |k|⁴`.
    pub fn trace_lap(&self) -> f64 {
        self.trace_lap
    }

    /// `Tr((Δ²Φ)²) = Σ |Φ_k|² |k|⁸`.
    pub fn trace_bilap(&self) -> f64 {
        self.trace_bilap
    }

    pub fn is_zero(&self) -> bool {
        self.trace == 0.0
    }

    /// `Φ` applied to per-mode values: `out_k = Φ_k w_k`.
    pub fn apply(&self, w: &[C64]) -> SpectralField {
        let data = self.coeffs.iter().zip(w).map(|(p, x)| p * x).collect();
        SpectralField::from_coeffs(&self.grid, 1, data).expect("length matches grid")
    }
}

/// `Σ_k m(k) |Φ_k|²`, real part.
pub fn weighted_trace(phi: &SmoothingOperator, m: &Multiplier) -> f64 {
    phi.grid().modes().iter().zip(phi.coeffs()).map(|(k, p)| (m.eval(k) * p.norm_sqr()).re).sum()
}

fn complex_normal(rng: &mut ChaCha8Rng, scale: f64) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * scale, im * scale)
}

/// Per-mode complex Brownian increments on a fine uniform time grid, plus the
/// three real scalar noises of the Manakov system.
#[derive(Clone, Debug)]
pub struct BrownianPath {
    grid: Arc<TorusGrid>,
    horizon: f64,
    n_fine: usize,
    seed: u64,
    increments: Vec<C64>,
    scalar: Vec<[f64; 3]>,
}

impl BrownianPath {
    /// Deterministic in `(grid, horizon, n_fine, seed)`.
    pub fn sample(grid: &Arc<TorusGrid>, horizon: f64, n_fine: usize, seed: u64) -> Result<Self> {
        if n_fine == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!("path needs n_fine > 0 and T > 0 (got {n_fine}, {horizon})")));
        }
        let dt = horizon / n_fine as f64;
        let scale = dt.sqrt();
        let n_modes = grid.n_modes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let increments = (0..n_fine * n_modes).map(|_| complex_normal(&mut rng, scale)).collect();
        let mut scalar_rng = ChaCha8Rng::seed_from_u64(seed);
        scalar_rng.set_stream(1);
        let scalar = (0..n_fine)
            .map(|_| {
                let mut x = [0.0; 3];
                for v in x.iter_mut() {
                    let z: f64 = scalar_rng.sample(StandardNormal);
                    *v = z * scale;
                }
                x
            })
            .collect();
        Ok(BrownianPath { grid: grid.clone(), horizon, n_fine, seed, increments, scalar })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt_fine(&self) -> f64 {
        self.horizon / self.n_fine as f64
    }

    /// Complex increments of all modes over fine step `j`.
    pub fn fine_increments(&self, j: usize) -> &[C64] {
        let n = self.grid.n_modes();
        &self.increments[j * n..(j + 1) * n]
    }

    /// Scalar increments `ΔW_{1,2,3}` over fine step `j`.
    pub fn fine_scalar(&self, j: usize) -> [f64; 3] {
        self.scalar[j]
    }

    /// Number of fine steps per coarse step; errors unless `n_coarse | n_fine`.
    pub fn ratio(&self, n_coarse: usize) -> Result<usize> {
        if n_coarse == 0 || self.n_fine % n_coarse != 0 {
            return Err(Error::NotDivisible { n_fine: self.n_fine, n_coarse });
        }
        Ok(self.n_fine / n_coarse)
    }

    fn check_step(&self, step: usize, n_coarse: usize) -> Result<usize> {
        let ratio = self.ratio(n_coarse)?;
        if step >= n_coarse {
            return Err(Error::StepOutOfRange { index: step, steps: n_coarse });
        }
        Ok(ratio)
    }

    /// `W_k(t_{ℓ+1}) - W_k(t_ℓ)` for every mode: exact sum of covered fine increments.
    pub fn coarse_increment(&self, step: usize, n_coarse: usize) -> Result<Vec<C64>> {
        let ratio = self.check_step(step, n_coarse)?;
        let mut acc = vec![C64::new(0.0, 0.0); self.grid.n_modes()];
        for j in step * ratio..(step + 1) * ratio {
            for (a, dw) in acc.iter_mut().zip(self.fine_increments(j)) {
                *a += dw;
            }
        }
        Ok(acc)
    }

    /// Scalar Manakov increments over a coarse step.
    pub fn coarse_scalar(&self, step: usize, n_coarse: usize) -> Result<[f64; 3]> {
        let ratio = self.check_step(step, n_coarse)?;
        let mut acc = [0.0; 3];
        for j in step * ratio..(step + 1) * ratio {
            let dw = self.scalar[j];
            for n in 0..3 {
                acc[n] += dw[n];
            }
        }
        Ok(acc)
    }

    /// `W_k(T) - W_k(0)`.
    pub fn total_increment(&self) -> Vec<C64> {
        self.coarse_increment(0, 1).expect("one coarse step always divides")
    }

    /// Per mode over coarse step `ℓ` of length `t`:
    /// `(ΔW_k, ∫ (s - t_ℓ) dW_k(s), ∫ (W_k(s) - W_k(t_ℓ)) ds)` with left-endpoint Itô
    /// sums and trapezoidal time quadrature on the fine grid.
    pub fn step_aggregates(&self, step: usize, n_coarse: usize) -> Result<(Vec<C64>, Vec<C64>, Vec<C64>)> {
        let ratio = self.check_step(step, n_coarse)?;
        if ratio < MIN_FINE_PER_COARSE {
            return Err(Error::FinePathTooCoarse { per_step: ratio, min: MIN_FINE_PER_COARSE });
        }
        let n = self.grid.n_modes();
        let dt = self.dt_fine();
        let mut w = vec![C64::new(0.0, 0.0); n];
        let mut weighted = vec![C64::new(0.0, 0.0); n];
        let mut average = vec![C64::new(0.0, 0.0); n];
        for (i, j) in (step * ratio..(step + 1) * ratio).enumerate() {
            let s = i as f64 * dt;
            for (m, dw) in self.fine_increments(j).iter().enumerate() {
                weighted[m] += s * dw;
                let next = w[m] + dw;
                average[m] += 0.5 * dt * (w[m] + next);
                w[m] = next;
            }
        }
        Ok((w, weighted, average))
    }

    /// All stochastic objects for coarse step `step` of `n_coarse`.
    pub fn step_noise(&self, step: usize, n_coarse: usize, with_aggregates: bool) -> Result<StepNoise> {
        let dt = self.horizon / n_coarse as f64;
        let scalar = self.coarse_scalar(step, n_coarse)?;
        if with_aggregates {
            let (dw, weighted, average) = self.step_aggregates(step, n_coarse)?;
            Ok(StepNoise { index: step, dt, dw, time_weighted: Some(weighted), time_average: Some(average), scalar })
        } else {
            let dw = self.coarse_increment(step, n_coarse)?;
            Ok(StepNoise { index: step, dt, dw, time_weighted: None, time_average: None, scalar })
        }
    }
}

/// Stochastic data for one coarse step `[t_ℓ, t_ℓ + t]`. All per-mode vectors are
/// raw (not yet multiplied by `Φ_k`).
#[derive(Clone, Debug)]
pub struct StepNoise {
    pub index: usize,
    pub dt: f64,
    /// `ΔW_k`
    pub dw: Vec<C64>,
    /// `∫ (s - t_ℓ) dW_k(s)`
    pub time_weighted: Option<Vec<C64>>,
    /// `∫ (W_k(s) - W_k(t_ℓ)) ds`
    pub time_average: Option<Vec<C64>>,
    /// Manakov `ΔW_{1,2,3}`
    pub scalar: [f64; 3],
}

impl StepNoise {
    /// Zero noise with all optional objects present.
    pub fn zero(grid: &TorusGrid, index: usize, dt: f64) -> Self {
        let z = vec![C64::new(0.0, 0.0); grid.n_modes()];
        StepNoise {
            index,
            dt,
            dw: z.clone(),
            time_weighted: Some(z.clone()),
            time_average: Some(z),
            scalar: [0.0; 3],
        }
    }

    /// Exact joint sampling without a fine path. Per real component
    /// `(ΔW, ∫ s dW)` is Gaussian with covariance `[[t, t²/2], [t²/2, t³/3]]` and
    /// `∫ (W(s) - W(0)) ds = t ΔW - ∫ s dW`.
    pub fn sample_exact(grid: &TorusGrid, index: usize, dt: f64, rng: &mut impl Rng) -> Self {
        let n = grid.n_modes();
        let a = dt.sqrt();
        let b = 0.5 * dt.powf(1.5);
        let c = (dt.powi(3) / 12.0).sqrt();
        let joint = |rng: &mut dyn rand::RngCore| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            (a * z1, b * z1 + c * z2)
        };
        let mut dw = Vec::with_capacity(n);
        let mut weighted = Vec::with_capacity(n);
        let mut average = Vec::with_capacity(n);
        for _ in 0..n {
            let (wr, sr) = joint(rng);
            let (wi, si) = joint(rng);
            let w = C64::new(wr, wi);
            let s = C64::new(sr, si);
            dw.push(w);
            weighted.push(s);
            average.push(dt * w - s);
        }
        let mut scalar = [0.0; 3];
        for v in scalar.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = a * z;
        }
        StepNoise { index, dt, dw, time_weighted: Some(weighted), time_average: Some(average), scalar }
    }

    /// `Φχ_ℓ` with `(Φχ_ℓ)_k = Φ_k ΔW_k / √t`.
    pub fn chi(&self, phi: &SmoothingOperator) -> SpectralField {
        let inv = 1.0 / self.dt.sqrt();
        phi.apply(&self.dw).scale(C64::new(inv, 0.0))
    }

    /// `∫ (s - t_ℓ) m(k) Φ_k dW_k(s)` as a field.
    pub fn time_weighted(&self, phi: &SmoothingOperator, m: &Multiplier) -> Result<SpectralField> {
        let w = self.time_weighted.as_ref().ok_or(Error::MissingNoise("time-weighted integral"))?;
        let grid = phi.grid();
        let data = grid
            .modes()
            .iter()
            .zip(phi.coeffs())
            .zip(w)
            .map(|((k, p), x)| m.eval(k) * p * x)
            .collect();
        SpectralField::from_coeffs(grid, 1, data)
    }

    /// Field of `∫ Φ (W(s) - W(t_ℓ)) ds`.
    pub fn time_average(&self, phi: &SmoothingOperator) -> Result<SpectralField> {
        let w = self.time_average.as_ref().ok_or(Error::MissingNoise("time-averaged increment"))?;
        Ok(phi.apply(w))
    }

    /// Field of `∫ Φ (W̄(s) - W̄(t_ℓ)) ds`, the pointwise conjugate of [`Self::time_average`]
    /// for real `Φ_k`.
    pub fn time_average_conj(&self, phi: &SmoothingOperator) -> Result<SpectralField> {
        Ok(conjugate_field(&self.time_average(phi)?))
    }

    /// `χ_{n,ℓ} = ΔW_n / √t`.
    pub fn manakov_chi(&self) -> [f64; 3] {
        let inv = 1.0 / self.dt.sqrt();
        [self.scalar[0] * inv, self.scalar[1] * inv, self.scalar[2] * inv]
    }
}

/// `(t/2)((Φχ)² - Tr(ΦΦ*))` with the square taken pointwise in physical space.
pub fn double_ito(phi_chi: &SpectralField, t: f64, phi: &SmoothingOperator) -> Result<SpectralField> {
    let mut sq = pointwise_product(&[phi_chi, phi_chi], true)?;
    add_constant(&mut sq, C64::new(-phi.trace(), 0.0));
    Ok(sq.scale(C64::new(0.5 * t, 0.0)))
}

/// `t^{3/2}((1/6)(Φχ)³ - (1/2) Tr(ΦΦ*) Φχ)`.
///
/// `Tr(Φ Dχ Φ*)` is read as the field `Tr(ΦΦ*)·Φχ`; for one real mode this is the
/// Hermite identity `∫∫∫ dW dW dW = (W³ - 3tW)/6`.
pub fn triple_ito(phi_chi: &SpectralField, t: f64, phi: &SmoothingOperator) -> Result<SpectralField> {
    let mut cube = pointwise_product(&[phi_chi, phi_chi, phi_chi], true)?.scale(C64::new(1.0 / 6.0, 0.0));
    cube.axpy(C64::new(-0.5 * phi.trace(), 0.0), phi_chi)?;
    Ok(cube.scale(C64::new(t.powf(1.5), 0.0)))
}

/// Same as [`double_ito`] but on a caller-supplied transform (for steppers that cache it).
pub fn double_ito_with(
    transform: &SpectralTransform,
    phi_chi: &SpectralField,
    t: f64,
    phi: &SmoothingOperator,
) -> Result<SpectralField> {
    let x = transform.synthesize(phi_chi.data());
    let vals: Vec<C64> = x.iter().map(|z| 0.5 * t * (z * z - phi.trace())).collect();
    SpectralField::from_coeffs(phi_chi.grid(), 1, transform.analyze(&vals))
}

fn add_constant(f: &mut SpectralField, c: C64) {
    let zero = f.grid().index_of(&Wavevector::default()).expect("k = 0 is always retained");
    f.data_mut()[zero] += c;
}

/// `Σ_{n<m} [(1/2)(χ_n² - 1) + χ_n χ_m]`.
pub fn manakov_cross(chi: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for n in 0..3 {
        for m in (n + 1)..3 {
            acc += 0.5 * (chi[n] * chi[n] - 1.0) + chi[n] * chi[m];
        }
    }
    acc
}

/// Residual of `∫W_m dW_n + ∫W_n dW_m = W_m W_n` over `[0, T]` computed with left
/// Itô sums on the fine scalar path, for the pair `(n, m)`.
pub fn symmetrized_identity_residual(path: &BrownianPath, n: usize, m: usize) -> f64 {
    let (mut wn, mut wm) = (0.0, 0.0);
    let mut lhs = 0.0;
    for j in 0..path.n_fine() {
        let dw = path.fine_scalar(j);
        lhs += wm * dw[n] + wn * dw[m];
        wn += dw[n];
        wm += dw[m];
    }
    (lhs - wn * wm).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{sobolev_norm, to_physical};

    fn grid1(k: usize) -> Arc<TorusGrid> {
        TorusGrid::new(1, k).unwrap()
    }

    #[test]
    fn seeds_are_split() {
        assert_ne!(sample_seed(1, 0), sample_seed(1, 1));
        assert_ne!(sample_seed(1, 0), sample_seed(2, 0));
        assert_eq!(sample_seed(7, 3), sample_seed(7, 3));
    }

    #[test]
    fn path_is_reproducible_and_telescopes() {
        let g = grid1(3);
        let a = BrownianPath::sample(&g, 1.0, 64, 9).unwrap();
        let b = BrownianPath::sample(&g, 1.0, 64, 9).unwrap();
        assert_eq!(a.increments, b.increments);
        assert_eq!(a.scalar, b.scalar);
        let total = a.total_increment();
        let mut sum = vec![C64::new(0.0, 0.0); g.n_modes()];
        for n_coarse in [1, 2, 8, 64] {
            sum.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            for l in 0..n_coarse {
                for (s, d) in sum.iter_mut().zip(a.coarse_increment(l, n_coarse).unwrap()) {
                    *s += d;
                }
            }
            for (s, t) in sum.iter().zip(&total) {
                assert!((s - t).norm() < 1e-12);
            }
        }
        assert!(matches!(a.ratio(3), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn coarse_aggregation_is_exact_sum() {
        let g = grid1(2);
        let p = BrownianPath::sample(&g, 0.5, 32, 1).unwrap();
        let d = p.coarse_increment(3, 8).unwrap();
        for m in 0..g.n_modes() {
            let direct: C64 = (12..16).map(|j| p.fine_increments(j)[m]).sum();
            assert_eq!(d[m], direct);
        }
        let s = p.coarse_scalar(3, 8).unwrap();
        let direct: f64 = (12..16).map(|j| p.fine_scalar(j)[1]).sum();
        assert_eq!(s[1], direct);
    }

    #[test]
    fn fine_path_too_coarse_is_rejected() {
        let g = grid1(1);
        let p = BrownianPath::sample(&g, 1.0, 8, 1).unwrap();
        assert!(matches!(p.step_noise(0, 4, true), Err(Error::FinePathTooCoarse { .. })));
        assert!(p.step_noise(0, 2, true).is_ok());
        assert!(p.step_noise(0, 4, false).is_ok());
    }

    #[test]
    fn chi_is_scaled_increment() {
        let g = grid1(2);
        let phi = SmoothingOperator::sobolev_profile(&g, 2.0).unwrap();
        let p = BrownianPath::sample(&g, 1.0, 16, 4).unwrap();
        let noise = p.step_noise(1, 4, false).unwrap();
        let chi = noise.chi(&phi);
        let t: f64 = 0.25;
        for (i, z) in chi.data().iter().enumerate() {
            assert!((z * t.sqrt() - phi.coeffs()[i] * noise.dw[i]).norm() < 1e-15);
        }
        let zero = SmoothingOperator::zero(&g);
        assert_eq!(noise.chi(&zero).l2_coeff_norm(), 0.0);
    }

    #[test]
    fn traces() {
        let g = grid1(8);
        let phi = SmoothingOperator::from_fn(&g, |k| C64::new((-(k.norm_sq() as f64)).exp(), 0.0)).unwrap();
        let oracle: f64 = (-8i64..=8).map(|k| (-2.0 * (k * k) as f64).exp()).sum();
        assert!((phi.trace() - oracle).abs() < 1e-15);
        assert!((weighted_trace(&phi, &Multiplier::identity()) - oracle).abs() < 1e-15);
        assert!(!phi.traces_differ());
        let rotated = SmoothingOperator::from_fn(&g, |_| C64::new(0.0, 1.0)).unwrap();
        assert!(rotated.traces_differ());
        assert_eq!(weighted_trace(&SmoothingOperator::zero(&g), &Multiplier::identity()), 0.0);
    }

    #[test]
    fn lap_trace_converges_in_k() {
        let vals: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&k| {
                let g = grid1(k);
                let phi = SmoothingOperator::from_fn(&g, |k| C64::new((1.0 + k.norm_sq() as f64).powi(-2), 0.0)).unwrap();
                weighted_trace(&phi, &Multiplier::new("k^4", |k| C64::new((k.norm_sq() as f64).powi(2), 0.0)))
            })
            .collect();
        // the tail beyond K is ≈ 2/(3K³)
        let oracle = |k: i64| -> f64 { (-k..=k).map(|j| ((j * j) as f64).powi(2) / (1.0 + (j * j) as f64).powi(4)).sum() };
        assert!((vals[2] - oracle(64)).abs() < 1e-13);
        assert!(((vals[2] - vals[1]) / vals[2]).abs() < 1e-4);
    }

    #[test]
    fn double_ito_of_zero_is_constant() {
        let g = grid1(4);
        let phi = SmoothingOperator::sobolev_profile(&g, 2.0).unwrap();
        let z = SpectralField::zeros(&g, 1);
        let d = double_ito(&z, 0.3, &phi).unwrap();
        for (k, v) in g.modes().iter().zip(d.data()) {
            let expect = if k.norm_sq() == 0 { -0.15 * phi.trace() } else { 0.0 };
            assert!((v.re - expect).abs() < 1e-14 && v.im.abs() < 1e-14);
        }
        let t = triple_ito(&z, 0.3, &phi).unwrap();
        assert_eq!(t.l2_coeff_norm(), 0.0);
    }

    #[test]
    fn scalar_mode_formulas() {
        let g = grid1(3);
        let phi0 = 0.7;
        let phi = SmoothingOperator::from_fn(&g, |k| if k.norm_sq() == 0 { C64::new(phi0, 0.0) } else { C64::new(0.0, 0.0) }).unwrap();
        let (t, chi0) = (0.2, 1.3);
        let field = SpectralField::single_mode(&g, Wavevector::default(), C64::new(phi0 * chi0, 0.0)).unwrap();
        let d = double_ito(&field, t, &phi).unwrap();
        let expect = 0.5 * t * (phi0 * phi0 * chi0 * chi0 - phi0 * phi0);
        assert!((d.coeff(&Wavevector::default()).re - expect).abs() < 1e-14);
        let tr = triple_ito(&field, t, &phi).unwrap();
        let x = phi0 * chi0;
        let expect = t.powf(1.5) * (x.powi(3) / 6.0 - 0.5 * phi0 * phi0 * x);
        assert!((tr.coeff(&Wavevector::default()).re - expect).abs() < 1e-14);
        let cached = double_ito_with(&SpectralTransform::dealiased(&g, 2).unwrap(), &field, t, &phi).unwrap();
        assert!(cached.sub(&d).unwrap().l2_coeff_norm() < 1e-14);
    }

    #[test]
    fn double_ito_synthesizes_square() {
        let g = grid1(4);
        let phi = SmoothingOperator::sobolev_profile(&g, 1.0).unwrap();
        let p = BrownianPath::sample(&g, 1.0, 8, 2).unwrap();
        let chi = p.step_noise(0, 2, false).unwrap().chi(&phi);
        let d = double_ito(&chi, 0.5, &phi).unwrap();
        // compare at k = 0 with the exact convolution Σ_j χ_j χ_{-j}
        let conv: C64 = g.modes().iter().map(|k| chi.coeff(k) * chi.coeff(&-*k)).sum();
        let expect = 0.25 * (conv - phi.trace());
        assert!((d.coeff(&Wavevector::default()) - expect).norm() < 1e-13);
        assert!(sobolev_norm(&d, 0.0, 2.0).unwrap().is_finite());
        assert_eq!(to_physical(&d).unwrap().points(), 9);
    }

    #[test]
    fn manakov_cross_at_zero() {
        assert_eq!(manakov_cross([0.0; 3]), -1.5);
        // (1/2)(1-1)·2 + (1/2)(4-1) ... direct enumeration
        let chi = [1.0, 2.0, -1.0];
        let direct = 0.5 * 0.0 + 2.0 + 0.5 * 0.0 - 1.0 + 0.5 * 3.0 - 2.0;
        assert!((manakov_cross(chi) - direct).abs() < 1e-15);
    }

    #[test]
    fn exact_sampling_moments() {
        let g = grid1(0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 0.5;
        let m = 20000;
        let (mut sw, mut ss, mut sws) = (0.0, 0.0, 0.0);
        for _ in 0..m {
            let n = StepNoise::sample_exact(&g, 0, t, &mut rng);
            let w = n.dw[0].re;
            let s = n.time_weighted.as_ref().unwrap()[0].re;
            let a = n.time_average.as_ref().unwrap()[0].re;
            assert!((a + s - t * w).abs() < 1e-14);
            sw += w * w;
            ss += s * s;
            sws += w * s;
        }
        let m = m as f64;
        let tol = |v: f64| 4.0 * v * (2.0 / m).sqrt();
        assert!((sw / m - t).abs() < tol(t));
        assert!((ss / m - t.powi(3) / 3.0).abs() < tol(t.powi(3) / 3.0));
        assert!((sws / m - t * t / 2.0).abs() < tol(t * t));
    }

    #[test]
    fn symmetrized_residual_is_sum_of_products() {
        let g = grid1(0);
        let p = BrownianPath::sample(&g, 1.0, 128, 3).unwrap();
        let direct: f64 = (0..128).map(|j| p.fine_scalar(j)[0] * p.fine_scalar(j)[2]).sum();
        assert!((symmetrized_identity_residual(&p, 0, 2) - direct.abs()).abs() < 1e-12);
    }
}
