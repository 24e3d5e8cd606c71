//! Time steppers for stochastic cubic NLS and the stochastic Manakov system.
//!
//! Every step is pseudospectral: linear multipliers act on Fourier coefficients,
//! all products are formed on a physical grid large enough that the truncated
//! result is alias-free, and the propagator `e^{itΔ}` is applied last.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::noise::{BrownianPath, SmoothingOperator, StepNoise};
use crate::spectral::{
    conjugate_field, Multiplier, SpectralField, SpectralTransform, TorusGrid, Wavevector, C64, I,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    /// Resonance scheme with multiplicative noise, strong order 1/2.
    Low,
    /// Resonance scheme for additive noise.
    Additive,
    /// Resonance scheme with multiplicative noise, strong order 1.
    High,
    /// Filtered scheme for the Manakov system.
    Manakov,
    /// Exponential Euler with Milstein correction: `Low` without the resonance factor.
    ExpEuler,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [SchemeId::Low, SchemeId::Additive, SchemeId::High, SchemeId::Manakov, SchemeId::ExpEuler];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Low => "low",
            SchemeId::Additive => "additive",
            SchemeId::High => "high",
            SchemeId::Manakov => "manakov",
            SchemeId::ExpEuler => "exp-euler",
        }
    }

    pub fn noise_mode(self) -> NoiseMode {
        match self {
            SchemeId::Additive => NoiseMode::Additive,
            SchemeId::Manakov => NoiseMode::Manakov,
            _ => NoiseMode::Multiplicative,
        }
    }

    pub fn components(self) -> usize {
        if self == SchemeId::Manakov {
            2
        } else {
            1
        }
    }

    /// Highest polynomial degree among the products the step forms.
    fn degree(self) -> usize {
        match self {
            SchemeId::High => 4,
            _ => 3,
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}' (expected low, additive, high, manakov, exp-euler)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    Additive,
    Multiplicative,
    Manakov,
}

/// Which reading of the order-one multiplicative scheme to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HighForm {
    /// Term by term as usually displayed.
    #[default]
    Display,
    /// Coefficients re-derived from the Fourier-space Duhamel iteration.
    Duhamel,
}

impl FromStr for HighForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "display" => Ok(HighForm::Display),
            "duhamel" => Ok(HighForm::Duhamel),
            _ => Err(Error::Config(format!("unknown high_form '{s}' (expected display, duhamel)"))),
        }
    }
}

impl fmt::Display for HighForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HighForm::Display => "display",
            HighForm::Duhamel => "duhamel",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ManakovNonlinearity {
    /// `(|u₁|² + |u₂|²) u`
    #[default]
    Coupled,
    /// `|u_j|² u_j`
    Componentwise,
}

impl FromStr for ManakovNonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(ManakovNonlinearity::Coupled),
            "componentwise" => Ok(ManakovNonlinearity::Componentwise),
            _ => Err(Error::Config(format!("unknown manakov_nonlinearity '{s}' (expected coupled, componentwise)"))),
        }
    }
}

impl fmt::Display for ManakovNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ManakovNonlinearity::Coupled => "coupled",
            ManakovNonlinearity::Componentwise => "componentwise",
        })
    }
}

/// Model for `i∂ₜu + Δu + λ|u|²u = σ(u)Φξ`.
#[derive(Clone, Debug)]
pub struct ModelParams {
    /// Focusing sign `λ ∈ {-1, +1}`.
    pub lambda: f64,
    /// Cubic term switch; off gives the linear stochastic equation.
    pub cubic: bool,
    /// Manakov noise strength `γ >= 0`.
    pub gamma: f64,
    pub phi: SmoothingOperator,
    pub high_form: HighForm,
    pub manakov_nonlinearity: ManakovNonlinearity,
}

impl ModelParams {
    pub fn new(lambda: f64, phi: SmoothingOperator) -> Result<Self> {
        if lambda != 1.0 && lambda != -1.0 {
            return Err(Error::Config(format!("lambda must be -1 or 1, got {lambda}")));
        }
        Ok(ModelParams {
            lambda,
            cubic: true,
            gamma: 0.0,
            phi,
            high_form: HighForm::default(),
            manakov_nonlinearity: ManakovNonlinearity::default(),
        })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be finite and nonnegative, got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// `C_γ = i + 3γ/2`
    pub fn c_gamma(&self) -> C64 {
        C64::new(1.5 * self.gamma, 1.0)
    }

    /// `λ` when the cubic term is on, else 0.
    pub fn effective_lambda(&self) -> f64 {
        if self.cubic {
            self.lambda
        } else {
            0.0
        }
    }
}

/// `u_ℓ` after `step` steps of size `dt`.
#[derive(Clone, Debug)]
pub struct StepState {
    pub u: SpectralField,
    pub step: usize,
    pub dt: f64,
}

/// Pauli matrices, row-major.
pub const PAULI: [[[C64; 2]; 2]; 3] = {
    const O: C64 = C64 { re: 0.0, im: 0.0 };
    const ONE: C64 = C64 { re: 1.0, im: 0.0 };
    const MI: C64 = C64 { re: 0.0, im: -1.0 };
    const PI: C64 = C64 { re: 0.0, im: 1.0 };
    const M1: C64 = C64 { re: -1.0, im: 0.0 };
    [[[O, ONE], [ONE, O]], [[O, MI], [PI, O]], [[ONE, O], [O, M1]]]
};

type Mat2 = [[C64; 2]; 2];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn values_of(grid: &TorusGrid, m: &Multiplier) -> Result<Vec<C64>> {
    grid.modes()
        .iter()
        .map(|k| {
            let v = m.eval(k);
            if v.re.is_finite() && v.im.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteMultiplier { tag: m.tag().to_string(), mode: k.0 })
            }
        })
        .collect()
}

/// One scheme at a fixed step size, with its multipliers and transform cached.
#[derive(Debug)]
pub struct Stepper {
    scheme: SchemeId,
    params: ModelParams,
    grid: Arc<TorusGrid>,
    dt: f64,
    transform: SpectralTransform,
    propagator: Vec<C64>,
    phi1: Vec<C64>,
    grad_filter: Vec<C64>,
    manakov_linear: Vec<ManakovMode>,
}

/// Per-mode `C_γ Ψ₁(itk) σ_n` and `Ψ₂(itk)`.
#[derive(Clone, Copy, Debug)]
struct ManakovMode {
    sigma: [Mat2; 3],
    psi2: C64,
}

impl Stepper {
    pub fn new(scheme: SchemeId, params: ModelParams, grid: &Arc<TorusGrid>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {dt}")));
        }
        if !params.phi.grid().same_as(grid) {
            return Err(Error::GridMismatch);
        }
        if matches!(scheme, SchemeId::High | SchemeId::Manakov) && grid.dim() != 1 {
            return Err(Error::UnsupportedDimension { dim: grid.dim(), what: "filtered gradient schemes" });
        }
        let transform = SpectralTransform::dealiased(grid, scheme.degree())?;
        let propagator = values_of(grid, &Multiplier::free_propagator(dt))?;
        let phi1 = values_of(grid, &Multiplier::phi1(dt))?;
        let grad_filter = if grid.dim() == 1 {
            values_of(grid, &Multiplier::filtered_derivative(1, dt, 1)?)?
        } else {
            vec![]
        };
        let manakov_linear = if scheme == SchemeId::Manakov {
            let psi2 = values_of(grid, &Multiplier::filtered_derivative(2, dt, 1)?)?;
            grad_filter
                .iter()
                .zip(&psi2)
                .map(|(&p1, &p2)| manakov_mode_matrices(&params, p1, p2))
                .collect()
        } else {
            vec![]
        };
        Ok(Stepper { scheme, params, grid: grid.clone(), dt, transform, propagator, phi1, grad_filter, manakov_linear })
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    /// Whether the step consumes time-weighted and time-averaged noise integrals.
    pub fn needs_aggregates(&self) -> bool {
        self.scheme == SchemeId::High
    }

    /// `u_{ℓ+1} = S_t(u_ℓ)`.
    pub fn step(&self, u: &SpectralField, noise: &StepNoise) -> Result<SpectralField> {
        if !u.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch);
        }
        let want = self.scheme.components();
        if u.components() != want {
            return Err(Error::ComponentMismatch { expected: want, found: u.components() });
        }
        if (noise.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::Incompatible(format!("noise for step {} but stepper uses {}", noise.dt, self.dt)));
        }
        if noise.dw.len() != self.grid.n_modes() {
            return Err(Error::GridMismatch);
        }
        let out = match self.scheme {
            SchemeId::Low | SchemeId::ExpEuler | SchemeId::Additive => self.step_low(u, noise)?,
            SchemeId::High => self.step_high(u, noise)?,
            SchemeId::Manakov => self.step_manakov(u, noise)?,
        };
        out.ensure_finite("scheme step")
    }

    fn synth(&self, f: &[C64]) -> Vec<C64> {
        self.transform.synthesize(f)
    }

    fn finish(&self, values: &[C64]) -> Result<SpectralField> {
        let mut coeffs = self.transform.analyze(values);
        coeffs.iter_mut().zip(&self.propagator).for_each(|(c, e)| *c *= e);
        SpectralField::from_coeffs(&self.grid, 1, coeffs)
    }

    fn step_low(&self, u: &SpectralField, noise: &StepNoise) -> Result<SpectralField> {
        let t = self.dt;
        let lam = self.params.effective_lambda();
        let phi = &self.params.phi;
        let ubar = conjugate_field(u);
        let mut ubar_f = ubar.data().to_vec();
        if self.scheme != SchemeId::ExpEuler {
            ubar_f.iter_mut().zip(&self.phi1).for_each(|(c, f)| *c *= f);
        }
        let uu = self.synth(u.data());
        let ub = self.synth(&ubar_f);
        let z = self.synth(phi.apply(&noise.dw).data());
        let tr = phi.trace();
        let cubic = I * lam * t;
        let values: Vec<C64> = match self.scheme {
            SchemeId::Additive => {
                uu.iter().zip(&ub).zip(&z).map(|((&u, &b), &z)| u + cubic * u * u * b - I * z).collect()
            }
            _ => uu
                .iter()
                .zip(&ub)
                .zip(&z)
                .map(|((&u, &b), &z)| u + cubic * u * u * b - I * u * z - 0.5 * u * (z * z - t * tr))
                .collect(),
        };
        self.finish(&values)
    }

    fn step_high(&self, u: &SpectralField, noise: &StepNoise) -> Result<SpectralField> {
        let t = self.dt;
        let lam = self.params.effective_lambda();
        let phi = &self.params.phi;
        let tr = phi.trace();
        let lap = noise.time_weighted(phi, &Multiplier::laplacian())?;
        let grad = noise.time_weighted(phi, &Multiplier::derivative(0, 1))?;
        let weighted = noise.time_weighted(phi, &Multiplier::identity())?;
        let average = noise.time_average(phi)?;
        let mut gu = u.data().to_vec();
        gu.iter_mut().zip(&self.grad_filter).for_each(|(c, f)| *c *= f);

        let uu = self.synth(u.data());
        let z = self.synth(phi.apply(&noise.dw).data());
        let a_lap = self.synth(lap.data());
        let a_grad = self.synth(grad.data());
        let g = self.synth(&gu);
        let iw = self.synth(weighted.data());
        let j = self.synth(average.data());

        let values: Vec<C64> = (0..uu.len())
            .map(|x| {
                let (u, z, al, ag, g, iw, j) = (uu[x], z[x], a_lap[x], a_grad[x], g[x], iw[x], j[x]);
                let ub = u.conj();
                let cubic = u * u * ub;
                let base = u + I * lam * t * cubic - I * u * z - 0.5 * u * (z * z - t * tr)
                    + I * u * (z * z * z / 6.0 - 0.5 * t * tr * z);
                let gradient = u * al + 2.0 * g * ag;
                match self.params.high_form {
                    HighForm::Display => {
                        base + gradient + lam * C64::new(1.0, 2.0) * t * cubic * z - lam * I * u * ub * ub * j.conj()
                    }
                    HighForm::Duhamel => base - gradient + lam * cubic * (iw + 2.0 * j - j.conj()),
                }
            })
            .collect();
        self.finish(&values)
    }

    fn step_manakov(&self, u: &SpectralField, noise: &StepNoise) -> Result<SpectralField> {
        let t = self.dt;
        let lam = self.params.effective_lambda();
        let n = self.grid.n_modes();
        let u1 = self.synth(u.component(0));
        let u2 = self.synth(u.component(1));
        let mut v1 = Vec::with_capacity(u1.len());
        let mut v2 = Vec::with_capacity(u1.len());
        for (&a, &b) in u1.iter().zip(&u2) {
            let (wa, wb) = match self.params.manakov_nonlinearity {
                ManakovNonlinearity::Coupled => {
                    let m = a.norm_sqr() + b.norm_sqr();
                    (m, m)
                }
                ManakovNonlinearity::Componentwise => (a.norm_sqr(), b.norm_sqr()),
            };
            v1.push(I * lam * t * wa * a);
            v2.push(I * lam * t * wb * b);
        }
        let n1 = self.transform.analyze(&v1);
        let n2 = self.transform.analyze(&v2);

        let chi = noise.manakov_chi();
        let sqrt_t = t.sqrt();
        let first = [-I * sqrt_t * chi[0], -I * sqrt_t * chi[1], -I * sqrt_t * chi[2]];
        let mut cross = [0.0; 3];
        let mut p = 0;
        for a in 0..3 {
            for b in (a + 1)..3 {
                cross[p] = 0.5 * (chi[a] * chi[a] - 1.0) + chi[a] * chi[b];
                p += 1;
            }
        }
        let mut data = vec![C64::new(0.0, 0.0); 2 * n];
        for m in 0..n {
            let mode = &self.manakov_linear[m];
            let mut lin = [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]];
            for (s, c) in mode.sigma.iter().zip(first) {
                for i in 0..2 {
                    for j in 0..2 {
                        lin[i][j] += c * s[i][j];
                    }
                }
            }
            let pair_mats = manakov_pair_terms(&self.params, t, mode.psi2, &cross);
            for i in 0..2 {
                for j in 0..2 {
                    lin[i][j] += pair_mats[i][j];
                }
            }
            let (a, b) = (u.component(0)[m], u.component(1)[m]);
            let e = self.propagator[m];
            data[m] = e * (lin[0][0] * a + lin[0][1] * b + n1[m]);
            data[n + m] = e * (lin[1][0] * a + lin[1][1] * b + n2[m]);
        }
        SpectralField::from_coeffs(&self.grid, 2, data)
    }

}

fn manakov_mode_matrices(params: &ModelParams, psi1: C64, psi2: C64) -> ManakovMode {
    let c = params.c_gamma();
    let scale = |s: &Mat2| {
        let mut out = *s;
        out.iter_mut().flatten().for_each(|z| *z *= c * psi1);
        out
    };
    ManakovMode { sigma: [scale(&PAULI[0]), scale(&PAULI[1]), scale(&PAULI[2])], psi2 }
}

/// `(t/2) C_γ² Ψ₂ Σ_{n<m} σ_m σ_n c_{nm}` with `c_{nm}` in the order (1,2), (1,3), (2,3).
fn manakov_pair_terms(params: &ModelParams, t: f64, psi2: C64, cross: &[f64; 3]) -> Mat2 {
    let c = params.c_gamma();
    let pref = 0.5 * t * c * c * psi2;
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    let mut p = 0;
    for n in 0..3 {
        for m in (n + 1)..3 {
            let prod = mat_mul(&PAULI[m], &PAULI[n]);
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] += pref * cross[p] * prod[i][j];
                }
            }
            p += 1;
        }
    }
    out
}

/// `N` steps on the coarse grid of `path`, calling `observe(ℓ, u_ℓ)` for
/// `ℓ = 0..=N`. Returns `u_N`.
pub fn evolve_observed(
    stepper: &Stepper,
    v: &SpectralField,
    path: &BrownianPath,
    n_steps: usize,
    mut observe: impl FnMut(usize, &SpectralField),
) -> Result<SpectralField> {
    path.ratio(n_steps)?;
    let dt = path.horizon() / n_steps as f64;
    if (dt - stepper.dt()).abs() > 1e-12 * dt {
        return Err(Error::Incompatible(format!("path step {dt} differs from stepper step {}", stepper.dt())));
    }
    let mut u = v.clone();
    observe(0, &u);
    for l in 0..n_steps {
        let noise = path.step_noise(l, n_steps, stepper.needs_aggregates())?;
        u = stepper.step(&u, &noise)?;
        observe(l + 1, &u);
    }
    Ok(u)
}

/// `N` steps with noise derived from `path`; records every state when `record`
/// is set, else only the final one.
pub fn evolve(stepper: &Stepper, v: &SpectralField, path: &BrownianPath, n_steps: usize, record: bool) -> Result<Vec<StepState>> {
    let dt = stepper.dt();
    let mut states = Vec::new();
    let last = evolve_observed(stepper, v, path, n_steps, |l, u| {
        if record {
            states.push(StepState { u: u.clone(), step: l, dt });
        }
    })?;
    if !record {
        states.push(StepState { u: last, step: n_steps, dt });
    }
    Ok(states)
}

/// Exact plane wave `c e^{ik₀·x} e^{i(-|k₀|² + λ|c|²)t}` of the deterministic equation.
pub fn plane_wave(grid: &Arc<TorusGrid>, k0: Wavevector, c: C64, lambda: f64, t: f64) -> Result<SpectralField> {
    let phase = (-(k0.norm_sq() as f64) + lambda * c.norm_sqr()) * t;
    SpectralField::single_mode(grid, k0, c * C64::from_polar(1.0, phase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{sobolev_norm, TorusGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(k: usize) -> Arc<TorusGrid> {
        TorusGrid::new(1, k).unwrap()
    }

    fn params(g: &Arc<TorusGrid>, sigma: f64) -> ModelParams {
        ModelParams::new(-1.0, SmoothingOperator::sobolev_profile(g, sigma).unwrap()).unwrap()
    }

    fn random_field(g: &Arc<TorusGrid>, c: usize, seed: u64) -> SpectralField {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<SpectralField> = (0..c)
            .map(|_| {
                SpectralField::from_fn(g, |k| {
                    let a = 0.5 / (1.0 + k.norm_sq() as f64);
                    C64::from_polar(a, rng.gen::<f64>() * std::f64::consts::TAU)
                })
            })
            .collect();
        SpectralField::stack(&parts.iter().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn scheme_names_round_trip() {
        for id in SchemeId::ALL {
            assert_eq!(id.name().parse::<SchemeId>().unwrap(), id);
        }
        assert!("rk4".parse::<SchemeId>().is_err());
        assert_eq!(ModelParams::new(1.0, SmoothingOperator::zero(&grid(2))).unwrap().c_gamma(), I);
        assert!(ModelParams::new(0.5, SmoothingOperator::zero(&grid(2))).is_err());
    }

    #[test]
    fn zero_is_fixed_point() {
        let g = grid(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = StepNoise::sample_exact(&g, 0, 0.01, &mut rng);
        for id in [SchemeId::Low, SchemeId::High, SchemeId::Manakov, SchemeId::ExpEuler] {
            let p = params(&g, 3.0).with_gamma(0.5).unwrap();
            let s = Stepper::new(id, p, &g, 0.01).unwrap();
            let u = SpectralField::zeros(&g, id.components());
            assert_eq!(s.step(&u, &noise).unwrap().l2_coeff_norm(), 0.0, "{id}");
        }
    }

    #[test]
    fn linear_noise_free_steps_are_isometries() {
        let g = grid(8);
        let noise = StepNoise::zero(&g, 0, 0.05);
        // Manakov is excluded: its pair terms keep the -1/2 Itô constant at χ = 0
        for id in [SchemeId::Low, SchemeId::Additive, SchemeId::High, SchemeId::ExpEuler] {
            let mut p = ModelParams::new(1.0, SmoothingOperator::zero(&g)).unwrap();
            p.cubic = false;
            let s = Stepper::new(id, p, &g, 0.05).unwrap();
            let u = random_field(&g, id.components(), 3);
            let v = s.step(&u, &noise).unwrap();
            for sob in [0.0, 1.0, 2.0] {
                let a = sobolev_norm(&u, sob, 2.0).unwrap();
                let b = sobolev_norm(&v, sob, 2.0).unwrap();
                assert!((a - b).abs() < 1e-12 * a, "{id} s={sob}");
            }
        }
    }

    #[test]
    fn scalar_mode_low_step() {
        let g = grid(4);
        let phi = SmoothingOperator::from_fn(&g, |k| C64::new(if k.x() == 0 { 0.7 } else { 0.0 }, 0.0)).unwrap();
        let p = ModelParams::new(-1.0, phi).unwrap();
        let t = 0.04;
        let s = Stepper::new(SchemeId::Low, p, &g, t).unwrap();
        let c = C64::new(0.3, -0.2);
        let u = SpectralField::single_mode(&g, Wavevector::new1(0), c).unwrap();
        let mut noise = StepNoise::zero(&g, 0, t);
        let z0 = C64::new(0.11, -0.05);
        let idx = g.index_of(&Wavevector::new1(0)).unwrap();
        noise.dw[idx] = z0;
        let out = s.step(&u, &noise).unwrap();
        let chi = z0 / t.sqrt();
        let phi0 = 0.7;
        let lam = -1.0;
        let expect = c + I * lam * t * c * c.norm_sqr() - I * t.sqrt() * c * phi0 * chi
            - 0.5 * t * c * (phi0 * phi0 * chi * chi - phi0 * phi0);
        assert!((out.coeff(&Wavevector::new1(0)) - expect).norm() < 1e-14);
        let other: f64 = out.data().iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, z)| z.norm()).sum();
        assert!(other < 1e-14);
    }

    #[test]
    fn plane_wave_local_error_is_second_order() {
        let g = grid(16);
        let k0 = Wavevector::new1(3);
        let c = C64::new(0.8, 0.3);
        let mut errs = Vec::new();
        for t in [0.02, 0.01, 0.005] {
            let p = ModelParams::new(-1.0, SmoothingOperator::zero(&g)).unwrap();
            let s = Stepper::new(SchemeId::Low, p, &g, t).unwrap();
            let u0 = plane_wave(&g, k0, c, -1.0, 0.0).unwrap();
            let u1 = s.step(&u0, &StepNoise::zero(&g, 0, t)).unwrap();
            errs.push(u1.sub(&plane_wave(&g, k0, c, -1.0, t).unwrap()).unwrap().l2_coeff_norm());
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((rate - 2.0).abs() < 0.2, "{errs:?}");
        }
    }

    #[test]
    fn high_without_noise_is_twisted_step() {
        let g = grid(8);
        let t = 0.03;
        let u = random_field(&g, 1, 9);
        for form in [HighForm::Display, HighForm::Duhamel] {
            let mut p = params(&g, 3.0);
            p.high_form = form;
            let high = Stepper::new(SchemeId::High, p.clone(), &g, t).unwrap();
            let euler = Stepper::new(SchemeId::ExpEuler, ModelParams { phi: SmoothingOperator::zero(&g), ..p }, &g, t).unwrap();
            let a = high.step(&u, &StepNoise::zero(&g, 0, t)).unwrap();
            // the trace constant still enters through -½u(0 - tTr) and the triple term is zero
            let mut b = euler.step(&u, &StepNoise::zero(&g, 0, t)).unwrap();
            let tr = high.params().phi.trace();
            let ex = apply_propagated(&u, t, 0.5 * t * tr);
            b.axpy(C64::new(1.0, 0.0), &ex).unwrap();
            assert!(a.sub(&b).unwrap().l2_coeff_norm() < 1e-13);
        }
    }

    fn apply_propagated(u: &SpectralField, t: f64, s: f64) -> SpectralField {
        let mut out = u.clone();
        out.map_modes(|k, z| z * s * C64::from_polar(1.0, -t * k.norm_sq() as f64));
        out
    }

    #[test]
    fn high_scalar_mode_matches_formula() {
        let g = grid(4);
        let phi = SmoothingOperator::from_fn(&g, |k| C64::new(if k.x() == 0 { 0.6 } else { 0.0 }, 0.0)).unwrap();
        let t = 0.01;
        let c = C64::new(0.4, 0.1);
        let u = SpectralField::single_mode(&g, Wavevector::new1(0), c).unwrap();
        let idx = g.index_of(&Wavevector::new1(0)).unwrap();
        let mut noise = StepNoise::zero(&g, 0, t);
        let (dw, sw, av) = (C64::new(0.08, 0.02), C64::new(0.0003, -0.0002), C64::new(0.0005, 0.0004));
        noise.dw[idx] = dw;
        noise.time_weighted.as_mut().unwrap()[idx] = sw;
        noise.time_average.as_mut().unwrap()[idx] = av;
        let lam = -1.0;
        let (z, iw, j) = (0.6 * dw, 0.6 * sw, 0.6 * av);
        let tr = 0.36;
        let cu = c * c.norm_sqr();
        let base = c + I * lam * t * cu - I * c * z - 0.5 * c * (z * z - t * tr) + I * c * (z * z * z / 6.0 - 0.5 * t * tr * z);
        let display = base + lam * C64::new(1.0, 2.0) * t * cu * z - lam * I * c * c.conj() * c.conj() * j.conj();
        let duhamel = base + lam * cu * (iw + 2.0 * j - j.conj());
        for (form, expect) in [(HighForm::Display, display), (HighForm::Duhamel, duhamel)] {
            let mut p = ModelParams::new(lam, phi.clone()).unwrap();
            p.high_form = form;
            let s = Stepper::new(SchemeId::High, p, &g, t).unwrap();
            let out = s.step(&u, &noise).unwrap();
            assert!((out.coeff(&Wavevector::new1(0)) - expect).norm() < 1e-14, "{form}");
        }
    }

    #[test]
    fn additive_from_zero() {
        let g = grid(6);
        let t = 0.02;
        let p = params(&g, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = StepNoise::sample_exact(&g, 0, t, &mut rng);
        let s = Stepper::new(SchemeId::Additive, p.clone(), &g, t).unwrap();
        let out = s.step(&SpectralField::zeros(&g, 1), &noise).unwrap();
        let z = noise.chi(&p.phi).scale(C64::new(t.sqrt(), 0.0));
        let mut expect = z.clone();
        expect.map_modes(|k, v| -I * v * C64::from_polar(1.0, -t * k.norm_sq() as f64));
        assert!(out.sub(&expect).unwrap().l2_coeff_norm() < 1e-14);
    }

    #[test]
    fn manakov_single_mode_first_order_term() {
        let g = grid(4);
        let t = 0.01;
        let p = ModelParams::new(-1.0, SmoothingOperator::zero(&g)).unwrap().with_gamma(1.0).unwrap();
        let mut q = p.clone();
        q.cubic = false;
        let s = Stepper::new(SchemeId::Manakov, q.clone(), &g, t).unwrap();
        let k = Wavevector::new1(2);
        let a = SpectralField::single_mode(&g, k, C64::new(0.5, 0.1)).unwrap();
        let b = SpectralField::single_mode(&g, k, C64::new(-0.2, 0.3)).unwrap();
        let u = SpectralField::stack(&[&a, &b]).unwrap();
        let mut noise1 = StepNoise::zero(&g, 0, t);
        noise1.scalar = [t.sqrt(), 0.0, 0.0];
        let mut noise0 = noise1.clone();
        noise0.scalar = [0.0; 3];
        // the pair terms differ between χ = (1,0,0) and χ = 0 only through (1,2) and (1,3)
        let d1 = s.step(&u, &noise1).unwrap();
        let d0 = s.step(&u, &noise0).unwrap();
        let psi1 = (C64::new(0.0, t * 2.0).exp() - 1.0) / t;
        let psi2 = psi1 * psi1;
        let e = C64::from_polar(1.0, -t * 4.0);
        let c = q.c_gamma();
        let (ua, ub) = (C64::new(0.5, 0.1), C64::new(-0.2, 0.3));
        // first-order: -i√t C σ₁ Ψ₁ u χ₁ swaps components
        let first = [-I * t.sqrt() * c * psi1 * ub, -I * t.sqrt() * c * psi1 * ua];
        // pair change: (1,2) and (1,3) gain χ₁²/2 = 1/2 each
        let s21 = mat_mul(&PAULI[1], &PAULI[0]);
        let s31 = mat_mul(&PAULI[2], &PAULI[0]);
        let pref = 0.5 * t * c * c * psi2 * 0.5;
        let pair = [
            pref * (s21[0][0] * ua + s21[0][1] * ub + s31[0][0] * ua + s31[0][1] * ub),
            pref * (s21[1][0] * ua + s21[1][1] * ub + s31[1][0] * ua + s31[1][1] * ub),
        ];
        let idx = g.index_of(&k).unwrap();
        let n = g.n_modes();
        for comp in 0..2 {
            let diff = d1.data()[comp * n + idx] - d0.data()[comp * n + idx];
            let expect = e * (first[comp] + pair[comp]);
            assert!((diff - expect).norm() < 1e-14, "{diff} vs {expect}");
        }
    }

    #[test]
    fn manakov_gamma_zero_carries_factor_i() {
        let g = grid(6);
        let t = 0.02;
        let mut p = ModelParams::new(1.0, SmoothingOperator::zero(&g)).unwrap();
        p.cubic = false;
        assert_eq!(p.c_gamma(), I);
        let s = Stepper::new(SchemeId::Manakov, p, &g, t).unwrap();
        let u = random_field(&g, 2, 5);
        let mut noise = StepNoise::zero(&g, 0, t);
        noise.scalar = [0.03, -0.01, 0.02];
        let out = s.step(&u, &noise).unwrap();
        let chi = noise.manakov_chi();
        let n = g.n_modes();
        for (m, k) in g.modes().iter().enumerate() {
            let kx = k.x() as f64;
            let psi1 = I * kx * crate::spectral::phi1_imag(t * kx);
            let psi2 = psi1 * psi1;
            let mut lin = [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]];
            for q in 0..3 {
                for i in 0..2 {
                    for j in 0..2 {
                        lin[i][j] += -I * t.sqrt() * I * psi1 * chi[q] * PAULI[q][i][j];
                    }
                }
            }
            let pair = manakov_pair_terms(&ModelParams::new(1.0, SmoothingOperator::zero(&g)).unwrap(), t, psi2, &{
                let mut c = [0.0; 3];
                let mut p = 0;
                for a in 0..3 {
                    for b in (a + 1)..3 {
                        c[p] = 0.5 * (chi[a] * chi[a] - 1.0) + chi[a] * chi[b];
                        p += 1;
                    }
                }
                c
            });
            let e = C64::from_polar(1.0, -t * kx * kx);
            let (a, b) = (u.data()[m], u.data()[n + m]);
            for i in 0..2 {
                let expect = e * ((lin[i][0] + pair[i][0]) * a + (lin[i][1] + pair[i][1]) * b);
                assert!((out.data()[i * n + m] - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn wrong_components_rejected() {
        let g = grid(4);
        let s = Stepper::new(SchemeId::Low, params(&g, 2.0), &g, 0.1).unwrap();
        let u = SpectralField::zeros(&g, 2);
        assert!(matches!(
            s.step(&u, &StepNoise::zero(&g, 0, 0.1)),
            Err(Error::ComponentMismatch { expected: 1, found: 2 })
        ));
        let g2 = TorusGrid::new(2, 3).unwrap();
        let p2 = ModelParams::new(1.0, SmoothingOperator::zero(&g2)).unwrap();
        assert!(Stepper::new(SchemeId::High, p2.clone(), &g2, 0.1).is_err());
        assert!(Stepper::new(SchemeId::Low, p2, &g2, 0.1).is_ok());
    }

    #[test]
    fn evolve_single_step_and_determinism() {
        let g = grid(8);
        let p = params(&g, 3.0);
        let path = BrownianPath::sample(&g, 0.2, 64, 11).unwrap();
        let u0 = random_field(&g, 1, 2);
        let s = Stepper::new(SchemeId::High, p.clone(), &g, 0.2).unwrap();
        let a = evolve(&s, &u0, &path, 1, false).unwrap();
        let b = s.step(&u0, &path.step_noise(0, 1, true).unwrap()).unwrap();
        assert_eq!(a[0].u.data(), b.data());
        let s8 = Stepper::new(SchemeId::High, p, &g, 0.2 / 8.0).unwrap();
        let x = evolve(&s8, &u0, &path, 8, true).unwrap();
        let y = evolve(&s8, &u0, &path, 8, true).unwrap();
        assert_eq!(x.len(), 9);
        assert_eq!(x.last().unwrap().u.data(), y.last().unwrap().u.data());
        assert!(evolve(&s8, &u0, &path, 3, false).is_err());
    }
}
