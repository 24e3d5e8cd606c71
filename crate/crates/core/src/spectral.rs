//! Fourier pseudospectral machinery on the torus 𝕋^d.
//!
//! Fields are stored as truncated Fourier coefficients `u_k`, `|k_i| <= K`, and
//! synthesized as `u(x) = Σ_k u_k e^{ik·x}` on a uniform grid of `M >= 2K+1`
//! points per axis. Products are formed pointwise on a padded grid so that the
//! retained band equals the exact truncated convolution.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Integer frequency in ℤ^d, padded with zeros up to three components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Wavevector(pub [i64; 3]);

impl Wavevector {
    pub fn new1(k: i64) -> Self {
        Wavevector([k, 0, 0])
    }

    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn dot(&self, other: &Wavevector) -> i64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn x(&self) -> i64 {
        self.0[0]
    }
}

impl std::ops::Add for Wavevector {
    type Output = Wavevector;
    fn add(self, rhs: Wavevector) -> Wavevector {
        Wavevector([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1], self.0[2] + rhs.0[2]])
    }
}

impl std::ops::Sub for Wavevector {
    type Output = Wavevector;
    fn sub(self, rhs: Wavevector) -> Wavevector {
        Wavevector([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1], self.0[2] - rhs.0[2]])
    }
}

impl std::ops::Neg for Wavevector {
    type Output = Wavevector;
    fn neg(self) -> Wavevector {
        Wavevector([-self.0[0], -self.0[1], -self.0[2]])
    }
}

/// Symmetric frequency band `{k ∈ ℤ^d : |k_i| <= K}`.
#[derive(Debug, PartialEq, Eq)]
pub struct TorusGrid {
    dim: usize,
    k_max: i64,
    modes: Vec<Wavevector>,
}

impl TorusGrid {
    pub fn new(dim: usize, k_max: usize) -> Result<Arc<Self>> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        let k_max = k_max as i64;
        let side = (2 * k_max + 1) as usize;
        let total = side.pow(dim as u32);
        let mut modes = Vec::with_capacity(total);
        for lin in 0..total {
            let mut rest = lin;
            let mut k = [0i64; 3];
            for c in k.iter_mut().take(dim) {
                *c = (rest % side) as i64 - k_max;
                rest /= side;
            }
            modes.push(Wavevector(k));
        }
        Ok(Arc::new(TorusGrid { dim, k_max, modes }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_max(&self) -> usize {
        self.k_max as usize
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Wavevector] {
        &self.modes
    }

    pub fn mode(&self, idx: usize) -> Wavevector {
        self.modes[idx]
    }

    /// Minimal number of points per axis for an exact transform pair.
    pub fn min_points(&self) -> usize {
        2 * self.k_max as usize + 1
    }

    pub fn index_of(&self, k: &Wavevector) -> Option<usize> {
        let side = 2 * self.k_max + 1;
        let mut lin = 0i64;
        let mut stride = 1i64;
        for (axis, &c) in k.0.iter().enumerate() {
            if axis >= self.dim {
                if c != 0 {
                    return None;
                }
                continue;
            }
            if c.abs() > self.k_max {
                return None;
            }
            lin += (c + self.k_max) * stride;
            stride *= side;
        }
        Some(lin as usize)
    }

    /// Index of `-k` for the mode at `idx`. The band is symmetric so this always exists.
    pub fn neg_index(&self, idx: usize) -> usize {
        self.modes.len() - 1 - idx
    }

    pub fn same_as(&self, other: &TorusGrid) -> bool {
        self.dim == other.dim && self.k_max == other.k_max
    }
}

/// Truncated Fourier coefficients of a (possibly two-component) field.
///
/// Data layout is component-major: component `c` occupies
/// `data[c * n_modes .. (c + 1) * n_modes]`.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<TorusGrid>,
    components: usize,
    data: Vec<C64>,
}

impl SpectralField {
    pub fn zeros(grid: &Arc<TorusGrid>, components: usize) -> Self {
        let n = grid.n_modes() * components;
        SpectralField { grid: grid.clone(), components, data: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn from_coeffs(grid: &Arc<TorusGrid>, components: usize, data: Vec<C64>) -> Result<Self> {
        let expected = grid.n_modes() * components;
        if data.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "coefficient array has length {}, expected {expected}",
                data.len()
            )));
        }
        Ok(SpectralField { grid: grid.clone(), components, data })
    }

    pub fn from_fn(grid: &Arc<TorusGrid>, f: impl FnMut(&Wavevector) -> C64) -> Self {
        let data = grid.modes().iter().map(f).collect();
        SpectralField { grid: grid.clone(), components: 1, data }
    }

    pub fn single_mode(grid: &Arc<TorusGrid>, k: Wavevector, amplitude: C64) -> Result<Self> {
        let idx = grid
            .index_of(&k)
            .ok_or_else(|| Error::InvalidGrid(format!("mode {:?} outside the band", k.0)))?;
        let mut f = Self::zeros(grid, 1);
        f.data[idx] = amplitude;
        Ok(f)
    }

    /// Stack scalar fields into one multi-component field.
    pub fn stack(parts: &[&SpectralField]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InvalidGrid("empty stack".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * parts.len());
        for p in parts {
            if !p.grid.same_as(&first.grid) {
                return Err(Error::GridMismatch);
            }
            if p.components != 1 {
                return Err(Error::ComponentMismatch { expected: 1, found: p.components });
            }
            data.extend_from_slice(&p.data);
        }
        Ok(SpectralField { grid: first.grid.clone(), components: parts.len(), data })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[C64] {
        let n = self.grid.n_modes();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [C64] {
        let n = self.grid.n_modes();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn component_field(&self, c: usize) -> SpectralField {
        SpectralField { grid: self.grid.clone(), components: 1, data: self.component(c).to_vec() }
    }

    /// Coefficient of mode `k` in component 0.
    pub fn coeff(&self, k: &Wavevector) -> C64 {
        self.grid.index_of(k).map(|i| self.data[i]).unwrap_or_default()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn ensure_finite(self, what: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn check_compatible(&self, other: &SpectralField) -> Result<()> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch);
        }
        if self.components != other.components {
            return Err(Error::ComponentMismatch { expected: self.components, found: other.components });
        }
        Ok(())
    }

    pub fn scale(mut self, s: C64) -> Self {
        self.data.iter_mut().for_each(|z| *z *= s);
        self
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: C64, x: &SpectralField) -> Result<()> {
        self.check_compatible(x)?;
        for (y, xv) in self.data.iter_mut().zip(&x.data) {
            *y += a * xv;
        }
        Ok(())
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other)?;
        Ok(out)
    }

    /// Plain ℓ² norm of the coefficient vector.
    pub fn l2_coeff_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn map_modes(&mut self, f: impl Fn(&Wavevector, C64) -> C64) {
        let n = self.grid.n_modes();
        for c in 0..self.components {
            for i in 0..n {
                let k = self.grid.modes[i];
                let z = self.data[c * n + i];
                self.data[c * n + i] = f(&k, z);
            }
        }
    }
}

/// Samples of a field on a uniform grid of `points^d` nodes, axis 0 fastest.
#[derive(Clone, Debug)]
pub struct PhysicalField {
    grid: Arc<TorusGrid>,
    points: usize,
    components: usize,
    data: Vec<C64>,
}

impl PhysicalField {
    pub fn from_values(grid: &Arc<TorusGrid>, points: usize, data: Vec<C64>) -> Result<Self> {
        let n = points.pow(grid.dim() as u32);
        if data.len() % n != 0 || data.is_empty() {
            return Err(Error::InvalidGrid(format!("{} samples do not fit {points}^{}", data.len(), grid.dim())));
        }
        Ok(PhysicalField { grid: grid.clone(), points, components: data.len() / n, data })
    }

    /// Sample a function of the node coordinates on the minimal exact grid.
    pub fn from_fn(grid: &Arc<TorusGrid>, f: impl Fn(&[f64]) -> C64) -> Self {
        let m = grid.min_points();
        let d = grid.dim();
        let total = m.pow(d as u32);
        let h = 2.0 * PI / m as f64;
        let mut x = vec![0.0; d];
        let data = (0..total)
            .map(|lin| {
                let mut rest = lin;
                for xi in x.iter_mut() {
                    *xi = (rest % m) as f64 * h;
                    rest /= m;
                }
                f(&x)
            })
            .collect();
        PhysicalField { grid: grid.clone(), points: m, components: 1, data }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }
}

/// Forward/inverse FFT pair for a grid at a fixed number of points per axis.
#[derive(Clone)]
pub struct SpectralTransform {
    grid: Arc<TorusGrid>,
    points: usize,
    positions: Vec<usize>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralTransform")
            .field("dim", &self.grid.dim())
            .field("k_max", &self.grid.k_max())
            .field("points", &self.points)
            .finish()
    }
}

fn is_smooth_size(mut n: usize) -> bool {
    for p in [2, 3, 5] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

impl SpectralTransform {
    pub fn new(grid: &Arc<TorusGrid>, points: usize) -> Result<Self> {
        if points < grid.min_points() {
            return Err(Error::InvalidGrid(format!(
                "{points} points per axis cannot resolve K = {}",
                grid.k_max()
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(points);
        let inverse = planner.plan_fft_inverse(points);
        let m = points as i64;
        let positions = grid
            .modes()
            .iter()
            .map(|k| {
                let mut pos = 0usize;
                let mut stride = 1usize;
                for axis in 0..grid.dim() {
                    pos += (k.0[axis].rem_euclid(m) as usize) * stride;
                    stride *= points;
                }
                pos
            })
            .collect();
        Ok(SpectralTransform { grid: grid.clone(), points, positions, forward, inverse })
    }

    /// Transform on the minimal grid `M = 2K+1`.
    pub fn exact(grid: &Arc<TorusGrid>) -> Result<Self> {
        Self::new(grid, grid.min_points())
    }

    /// Transform on a grid large enough that a pointwise product of `degree`
    /// band-limited factors is alias-free on the retained band.
    pub fn dealiased(grid: &Arc<TorusGrid>, degree: usize) -> Result<Self> {
        let mut m = (degree.max(1) + 1) * grid.k_max() + 1;
        while !is_smooth_size(m) {
            m += 1;
        }
        Self::new(grid, m)
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    fn total_points(&self) -> usize {
        self.points.pow(self.grid.dim() as u32)
    }

    fn fft_nd(&self, buf: &mut [C64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        let m = self.points;
        let d = self.grid.dim();
        fft.process(buf);
        let mut line = vec![C64::new(0.0, 0.0); m];
        for axis in 1..d {
            let stride = m.pow(axis as u32);
            let block = stride * m;
            for outer in (0..buf.len()).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = buf[base + j * stride];
                    }
                    fft.process(&mut line);
                    for (j, v) in line.iter().enumerate() {
                        buf[base + j * stride] = *v;
                    }
                }
            }
        }
    }

    /// `Σ_k c_k e^{ik·x_j}` for one component.
    pub fn synthesize(&self, coeffs: &[C64]) -> Vec<C64> {
        let mut buf = vec![C64::new(0.0, 0.0); self.total_points()];
        for (&pos, &c) in self.positions.iter().zip(coeffs) {
            buf[pos] = c;
        }
        self.fft_nd(&mut buf, true);
        buf
    }

    /// Retained-band Fourier coefficients of one component of samples.
    pub fn analyze(&self, values: &[C64]) -> Vec<C64> {
        let mut buf = values.to_vec();
        self.fft_nd(&mut buf, false);
        let norm = 1.0 / self.total_points() as f64;
        self.positions.iter().map(|&p| buf[p] * norm).collect()
    }

    pub fn to_physical(&self, f: &SpectralField) -> Result<PhysicalField> {
        if !f.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch);
        }
        let mut data = Vec::with_capacity(self.total_points() * f.components());
        for c in 0..f.components() {
            data.extend(self.synthesize(f.component(c)));
        }
        Ok(PhysicalField { grid: self.grid.clone(), points: self.points, components: f.components(), data })
    }

    pub fn to_spectral(&self, g: &PhysicalField) -> Result<SpectralField> {
        if !g.grid.same_as(&self.grid) || g.points != self.points {
            return Err(Error::GridMismatch);
        }
        let n = self.total_points();
        let mut data = Vec::with_capacity(self.grid.n_modes() * g.components);
        for c in 0..g.components {
            data.extend(self.analyze(&g.data[c * n..(c + 1) * n]));
        }
        SpectralField::from_coeffs(&self.grid, g.components, data)
    }
}

/// Synthesize on the minimal exact grid.
pub fn to_physical(f: &SpectralField) -> Result<PhysicalField> {
    SpectralTransform::exact(f.grid())?.to_physical(f)
}

/// Analyze samples; modes beyond the band are truncated.
pub fn to_spectral(g: &PhysicalField) -> Result<SpectralField> {
    SpectralTransform::new(g.grid(), g.points())?.to_spectral(g)
}

type MultiplierFn = dyn Fn(&Wavevector) -> C64 + Send + Sync;

/// A Fourier-diagonal operator `k ↦ m(k)` with a tag for logs.
#[derive(Clone)]
pub struct Multiplier {
    tag: String,
    map: Arc<MultiplierFn>,
}

impl fmt::Debug for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Multiplier({})", self.tag)
    }
}

/// `(e^{iθ} - 1) / (iθ)` with the removable singularity filled in.
pub fn phi1_imag(theta: f64) -> C64 {
    if theta.abs() < 1e-6 {
        // 1 + iθ/2 - θ²/6
        return C64::new(1.0 - theta * theta / 6.0, theta / 2.0);
    }
    let half = 0.5 * theta;
    let num = C64::new(-2.0 * half.sin().powi(2), theta.sin());
    num / C64::new(0.0, theta)
}

impl Multiplier {
    pub fn new(tag: impl Into<String>, f: impl Fn(&Wavevector) -> C64 + Send + Sync + 'static) -> Self {
        Multiplier { tag: tag.into(), map: Arc::new(f) }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn eval(&self, k: &Wavevector) -> C64 {
        (self.map)(k)
    }

    pub fn identity() -> Self {
        Multiplier::new("1", |_| C64::new(1.0, 0.0))
    }

    /// Pointwise product of two multipliers.
    pub fn then(&self, other: &Multiplier) -> Multiplier {
        let (a, b) = (self.map.clone(), other.map.clone());
        Multiplier::new(format!("{}*{}", self.tag, other.tag), move |k| a(k) * b(k))
    }

    /// `e^{itΔ}`: `k ↦ e^{-it|k|²}`.
    pub fn free_propagator(t: f64) -> Self {
        Multiplier::new(format!("exp(i*{t}*Lap)"), move |k| {
            let theta = -t * k.norm_sq() as f64;
            C64::new(theta.cos(), theta.sin())
        })
    }

    /// `f₁` resonance factor: `k ↦ (e^{2i|k|²t} - 1)/(2i|k|²t)`, equal to 1 at `k = 0`.
    pub fn phi1(t: f64) -> Self {
        Multiplier::new(format!("phi1({t})"), move |k| phi1_imag(2.0 * t * k.norm_sq() as f64))
    }

    /// Bounded filter `k ↦ ((e^{itk} - 1)/(itk))^p` (one space dimension).
    pub fn filter_psi(p: u32, t: f64, dim: usize) -> Result<Self> {
        if dim != 1 {
            return Err(Error::UnsupportedDimension { dim, what: "filter functions" });
        }
        Ok(Multiplier::new(format!("psi{p}({t})"), move |k| phi1_imag(t * k.x() as f64).powu(p)))
    }

    /// Filtered derivative `Ψ_p(it∇)`: `k ↦ ((e^{itk} - 1)/(it))^p ≈ (ik)^p`.
    pub fn filtered_derivative(p: u32, t: f64, dim: usize) -> Result<Self> {
        if dim != 1 {
            return Err(Error::UnsupportedDimension { dim, what: "filter functions" });
        }
        Ok(Multiplier::new(format!("Psi{p}(i{t}grad)"), move |k| {
            let kx = k.x() as f64;
            (I * kx * phi1_imag(t * kx)).powu(p)
        }))
    }

    /// Partial derivative `∂_axis^order`: `k ↦ (i k_axis)^order`.
    pub fn derivative(axis: usize, order: u32) -> Self {
        Multiplier::new(format!("d{axis}^{order}"), move |k| (I * k.0[axis] as f64).powu(order))
    }

    /// `Δ`: `k ↦ -|k|²`.
    pub fn laplacian() -> Self {
        Multiplier::new("Lap", |k| C64::new(-(k.norm_sq() as f64), 0.0))
    }
}

pub fn apply_multiplier(f: &SpectralField, m: &Multiplier) -> Result<SpectralField> {
    let grid = f.grid().clone();
    let mut values = Vec::with_capacity(grid.n_modes());
    for k in grid.modes() {
        let v = m.eval(k);
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFiniteMultiplier { tag: m.tag().to_string(), mode: k.0 });
        }
        values.push(v);
    }
    let mut out = f.clone();
    let n = grid.n_modes();
    for c in 0..f.components() {
        for (z, v) in out.data_mut()[c * n..(c + 1) * n].iter_mut().zip(&values) {
            *z *= v;
        }
    }
    Ok(out)
}

/// `(out)_k = conj(f_{-k})`, the coefficients of the pointwise conjugate.
pub fn conjugate_field(f: &SpectralField) -> SpectralField {
    let grid = f.grid().clone();
    let n = grid.n_modes();
    let mut out = f.clone();
    for c in 0..f.components() {
        let src = f.component(c);
        let dst = &mut out.data_mut()[c * n..(c + 1) * n];
        for (i, z) in dst.iter_mut().enumerate() {
            *z = src[grid.neg_index(i)].conj();
        }
    }
    out
}

/// Coefficients of the pointwise product of scalar fields.
pub fn pointwise_product(factors: &[&SpectralField], dealias: bool) -> Result<SpectralField> {
    let first = factors.first().ok_or_else(|| Error::InvalidGrid("empty product".into()))?;
    for f in factors {
        if !f.grid().same_as(first.grid()) {
            return Err(Error::GridMismatch);
        }
        if f.components() != 1 {
            return Err(Error::ComponentMismatch { expected: 1, found: f.components() });
        }
    }
    let transform = if dealias {
        SpectralTransform::dealiased(first.grid(), factors.len())?
    } else {
        SpectralTransform::exact(first.grid())?
    };
    let mut acc = transform.synthesize(first.data());
    for f in &factors[1..] {
        let vals = transform.synthesize(f.data());
        acc.iter_mut().zip(vals).for_each(|(a, b)| *a *= b);
    }
    SpectralField::from_coeffs(first.grid(), 1, transform.analyze(&acc))
}

pub fn pointwise_mul(a: &SpectralField, b: &SpectralField, dealias: bool) -> Result<SpectralField> {
    pointwise_product(&[a, b], dealias)
}

fn multi_indices(dim: usize, order: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    match dim {
        1 => out.push([order, 0, 0]),
        2 => (0..=order).for_each(|a| out.push([a, order - a, 0])),
        _ => {
            for a in 0..=order {
                for b in 0..=(order - a) {
                    out.push([a, b, order - a - b]);
                }
            }
        }
    }
    out
}

/// Sobolev norm `W^{s,p}`.
///
/// For `p = 2` the Fourier-weighted form `(Σ (1+|k|²)^s |f_k|²)^{1/2}` is used for any
/// real `s >= 0`. Otherwise `s` must be an integer and the norm is
/// `(Σ_{|α|<=s} ‖D^α f‖_p^p)^{1/p}` with trapezoidal quadrature of cell weight `(2π/M)^d`.
pub fn sobolev_norm(f: &SpectralField, s: f64, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidNorm(format!("integrability index p = {p} < 1")));
    }
    if !(s >= 0.0) {
        return Err(Error::InvalidNorm(format!("regularity index s = {s} < 0")));
    }
    let grid = f.grid();
    if p == 2.0 {
        let n = grid.n_modes();
        let weights: Vec<f64> = grid.modes().iter().map(|k| (1.0 + k.norm_sq() as f64).powf(s)).collect();
        let mut sum = 0.0;
        for c in 0..f.components() {
            sum += f.data()[c * n..(c + 1) * n]
                .iter()
                .zip(&weights)
                .map(|(z, w)| w * z.norm_sqr())
                .sum::<f64>();
        }
        return Ok(sum.sqrt());
    }
    if s.fract() != 0.0 {
        return Err(Error::InvalidNorm(format!("fractional s = {s} requires p = 2")));
    }
    let transform = SpectralTransform::exact(grid)?;
    let cell = (2.0 * PI / transform.points() as f64).powi(grid.dim() as i32);
    let mut sum = 0.0;
    for order in 0..=(s as u32) {
        for alpha in multi_indices(grid.dim(), order) {
            let mut m = Multiplier::identity();
            for (axis, &a) in alpha.iter().enumerate().take(grid.dim()) {
                if a > 0 {
                    m = m.then(&Multiplier::derivative(axis, a));
                }
            }
            let deriv = apply_multiplier(f, &m)?;
            for c in 0..f.components() {
                sum += transform.synthesize(deriv.component(c)).iter().map(|z| z.norm().powf(p)).sum::<f64>() * cell;
            }
        }
    }
    Ok(sum.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Arc<TorusGrid>, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpectralField::from_fn(grid, |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn rel_err(a: &SpectralField, b: &SpectralField) -> f64 {
        a.sub(b).unwrap().l2_coeff_norm() / b.l2_coeff_norm().max(1e-300)
    }

    #[test]
    fn single_mode_zero_is_constant() {
        let grid = TorusGrid::new(1, 4).unwrap();
        let f = SpectralField::single_mode(&grid, Wavevector::new1(0), C64::new(1.0, 0.0)).unwrap();
        let g = to_physical(&f).unwrap();
        assert!(g.data().iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn mode_one_samples_exponential() {
        let grid = TorusGrid::new(1, 4).unwrap();
        let f = SpectralField::single_mode(&grid, Wavevector::new1(1), C64::new(1.0, 0.0)).unwrap();
        let g = to_physical(&f).unwrap();
        assert_eq!(g.points(), 9);
        for (j, z) in g.data().iter().enumerate() {
            let x = 2.0 * PI * j as f64 / 9.0;
            assert!((z - C64::new(x.cos(), x.sin())).norm() < 1e-13);
        }
    }

    #[test]
    fn constant_field_analyzes_to_mode_zero() {
        let grid = TorusGrid::new(2, 3).unwrap();
        let c = C64::new(0.3, -1.2);
        let g = PhysicalField::from_fn(&grid, |_| c);
        let f = to_spectral(&g).unwrap();
        for (i, k) in grid.modes().iter().enumerate() {
            let expect = if k.norm_sq() == 0 { c } else { C64::new(0.0, 0.0) };
            assert!((f.data()[i] - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn transform_pair_roundtrip_all_dims() {
        for dim in 1..=3 {
            let grid = TorusGrid::new(dim, 3).unwrap();
            let f = random_field(&grid, dim as u64);
            for transform in [SpectralTransform::exact(&grid).unwrap(), SpectralTransform::dealiased(&grid, 3).unwrap()] {
                let back = transform.to_spectral(&transform.to_physical(&f).unwrap()).unwrap();
                assert!(rel_err(&back, &f) < 1e-12, "dim {dim}");
            }
        }
    }

    #[test]
    fn grid_indexing_is_symmetric() {
        let grid = TorusGrid::new(2, 2).unwrap();
        for (i, k) in grid.modes().iter().enumerate() {
            assert_eq!(grid.index_of(k), Some(i));
            assert_eq!(grid.mode(grid.neg_index(i)), -*k);
        }
        assert_eq!(grid.index_of(&Wavevector([3, 0, 0])), None);
    }

    #[test]
    fn free_propagator_values() {
        let m = Multiplier::free_propagator(PI);
        assert!((m.eval(&Wavevector::new1(1)) - C64::new(-1.0, 0.0)).norm() < 1e-15);
        let id = Multiplier::free_propagator(0.0);
        assert_eq!(id.eval(&Wavevector::new1(5)), C64::new(1.0, 0.0));
    }

    #[test]
    fn propagator_forward_backward_is_identity() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let f = random_field(&grid, 3);
        let g = apply_multiplier(&f, &Multiplier::free_propagator(0.37)).unwrap();
        let back = apply_multiplier(&g, &Multiplier::free_propagator(-0.37)).unwrap();
        assert!(rel_err(&back, &f) < 1e-14);
        for s in [0.0, 1.0, 2.5] {
            let a = sobolev_norm(&f, s, 2.0).unwrap();
            let b = sobolev_norm(&g, s, 2.0).unwrap();
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn phi1_values() {
        let m = Multiplier::phi1(0.1);
        assert_eq!(m.eval(&Wavevector::new1(0)), C64::new(1.0, 0.0));
        let expect = (C64::new(0.0, 0.2).exp() - 1.0) / C64::new(0.0, 0.2);
        assert!((m.eval(&Wavevector::new1(1)) - expect).norm() < 1e-15);
        // -it·m(k) = -(e^{2ik²t} - 1)/(2k²)
        for k in 1..20 {
            let t = 0.037;
            let k2 = (k * k) as f64;
            let lhs = -I * t * m_at(t, k);
            let rhs = -(C64::new(0.0, 2.0 * k2 * t).exp() - 1.0) / (2.0 * k2);
            assert!((lhs - rhs).norm() < 1e-15 * (1.0 + rhs.norm()));
        }
        fn m_at(t: f64, k: i64) -> C64 {
            Multiplier::phi1(t).eval(&Wavevector::new1(k))
        }
    }

    #[test]
    fn filter_values_and_bounds() {
        let m2 = Multiplier::filter_psi(2, 0.05, 1).unwrap();
        let z = C64::new(0.0, 0.15);
        let expect = ((z.exp() - 1.0) / z).powu(2);
        assert!((m2.eval(&Wavevector::new1(3)) - expect).norm() < 1e-15);
        assert_eq!(m2.eval(&Wavevector::new1(0)), C64::new(1.0, 0.0));
        assert!(Multiplier::filter_psi(1, 0.1, 2).is_err());
        let d1 = Multiplier::filtered_derivative(1, 1e-4, 1).unwrap();
        let k = Wavevector::new1(7);
        assert!((d1.eval(&k) - C64::new(0.0, 7.0)).norm() < 1e-2);
    }

    #[test]
    fn product_with_one_and_single_modes() {
        let grid = TorusGrid::new(1, 6).unwrap();
        let a = random_field(&grid, 11);
        let one = SpectralField::single_mode(&grid, Wavevector::new1(0), C64::new(1.0, 0.0)).unwrap();
        let p = pointwise_mul(&a, &one, true).unwrap();
        assert!(rel_err(&p, &a) < 1e-13);

        let e1 = SpectralField::single_mode(&grid, Wavevector::new1(1), C64::new(0.5, 1.0)).unwrap();
        let sq = pointwise_mul(&e1, &e1, true).unwrap();
        let expect = SpectralField::single_mode(&grid, Wavevector::new1(2), C64::new(0.5, 1.0).powu(2)).unwrap();
        assert!(rel_err(&sq, &expect) < 1e-13);
    }

    #[test]
    fn conjugation() {
        let grid = TorusGrid::new(1, 3).unwrap();
        let f = SpectralField::single_mode(&grid, Wavevector::new1(1), I).unwrap();
        let g = conjugate_field(&f);
        assert_eq!(g.coeff(&Wavevector::new1(-1)), C64::new(0.0, -1.0));
        assert_eq!(g.coeff(&Wavevector::new1(1)), C64::new(0.0, 0.0));
        // a real synthesized field is a fixed point
        let real = to_spectral(&PhysicalField::from_fn(&grid, |x| C64::new(x[0].cos() + 0.3 * (2.0 * x[0]).sin(), 0.0))).unwrap();
        assert!(rel_err(&conjugate_field(&real), &real) < 1e-13);
    }

    #[test]
    fn sobolev_norms() {
        let grid = TorusGrid::new(1, 4).unwrap();
        let zero = SpectralField::zeros(&grid, 1);
        assert_eq!(sobolev_norm(&zero, 1.0, 2.0).unwrap(), 0.0);
        let e1 = SpectralField::single_mode(&grid, Wavevector::new1(1), C64::new(1.0, 0.0)).unwrap();
        assert!((sobolev_norm(&e1, 1.0, 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let f = random_field(&grid, 5);
        assert!((sobolev_norm(&f, 0.0, 2.0).unwrap() - f.l2_coeff_norm()).abs() < 1e-14);
        assert!(sobolev_norm(&f, 1.0, 0.5).is_err());
        // quadrature form with p = 2: ‖f‖_2² = 2π Σ|f_k|², ‖f'‖_2² = 2π Σ k²|f_k|²
        let quad = sobolev_norm(&f, 1.0, 2.0000000001).unwrap();
        let exact = (2.0 * PI * f.grid().modes().iter().zip(f.data()).map(|(k, z)| (1.0 + k.norm_sq() as f64) * z.norm_sqr()).sum::<f64>()).sqrt();
        assert!((quad - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn non_finite_multiplier_is_rejected() {
        let grid = TorusGrid::new(1, 2).unwrap();
        let f = SpectralField::zeros(&grid, 1);
        let bad = Multiplier::new("1/k", |k| C64::new(1.0 / k.x() as f64, 0.0));
        assert!(matches!(apply_multiplier(&f, &bad), Err(Error::NonFiniteMultiplier { .. })));
    }
}
