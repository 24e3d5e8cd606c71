//! Experiment engine: rough initial data, coupled Monte Carlo convergence
//! studies against a fine reference, slope fits, stability probes, the T₄
//! obstruction probe and noise self-checks.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::{sample_seed, symmetrized_identity_residual, BrownianPath, SmoothingOperator, StepNoise};
use crate::schemes::{evolve_observed, plane_wave, HighForm, ManakovNonlinearity, ModelParams, SchemeId, Stepper};
use crate::spectral::{sobolev_norm, SpectralField, TorusGrid, Wavevector, C64};
use crate::trees::{pi_discrete, pi_exact, NamedTree, Order, TreeIntegralContext};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataMode {
    RandomPhase,
    Deterministic,
}

impl std::str::FromStr for DataMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-phase" => Ok(DataMode::RandomPhase),
            "deterministic" => Ok(DataMode::Deterministic),
            _ => Err(Error::Config(format!("unknown data_mode '{s}' (expected random-phase, deterministic)"))),
        }
    }
}

impl std::fmt::Display for DataMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataMode::RandomPhase => "random-phase",
            DataMode::Deterministic => "deterministic",
        })
    }
}

/// `v_k = A (1+|k|²)^{-(n + d/2 + ε)/2} η_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialDataSpec {
    pub n: f64,
    pub eps: f64,
    pub amplitude: f64,
    pub mode: DataMode,
    pub seed: u64,
}

impl Default for InitialDataSpec {
    fn default() -> Self {
        InitialDataSpec { n: 1.0, eps: 0.1, amplitude: 1.0, mode: DataMode::RandomPhase, seed: 1 }
    }
}

pub fn make_initial_data(init: &InitialDataSpec, grid: &Arc<TorusGrid>, components: usize) -> Result<SpectralField> {
    if !(init.eps > 0.0) || !init.n.is_finite() || !init.amplitude.is_finite() {
        return Err(Error::Config(format!("initial data needs eps > 0 and finite n, amplitude (got {init:?})")));
    }
    let exponent = -(init.n + grid.dim() as f64 / 2.0 + init.eps) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    let parts: Vec<SpectralField> = (0..components)
        .map(|_| {
            SpectralField::from_fn(grid, |k| {
                let a = init.amplitude * (1.0 + k.norm_sq() as f64).powf(exponent);
                match init.mode {
                    DataMode::RandomPhase => C64::from_polar(a, rng.gen::<f64>() * std::f64::consts::TAU),
                    DataMode::Deterministic => C64::new(a, 0.0),
                }
            })
        })
        .collect();
    SpectralField::stack(&parts.iter().collect::<Vec<_>>())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// `log₁₀` residual per point.
    pub residuals: Vec<f64>,
    pub reliable: bool,
}

pub const MAX_LOG10_RESIDUAL: f64 = 0.2;

/// Least squares on `(log t, log err)`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::Incompatible(format!("slope fit needs at least 2 points, got {}", points.len())));
    }
    if points.iter().any(|&(t, e)| !(t > 0.0 && e > 0.0 && t.is_finite() && e.is_finite())) {
        return Err(Error::Incompatible("slope fit needs positive finite data".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Incompatible("slope fit needs distinct step sizes".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> =
        xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x) / std::f64::consts::LN_10).collect();
    let reliable = residuals.iter().all(|r| r.abs() <= MAX_LOG10_RESIDUAL);
    Ok(SlopeFit { slope, intercept, residuals, reliable })
}

/// Everything a convergence study needs.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub scheme: SchemeId,
    pub reference: SchemeId,
    pub dim: usize,
    pub k_max: usize,
    pub lambda: f64,
    pub cubic: bool,
    pub gamma: f64,
    pub sigma_phi: f64,
    pub phi_amplitude: f64,
    pub high_form: HighForm,
    pub manakov_nonlinearity: ManakovNonlinearity,
    pub horizon: f64,
    pub n_steps: Vec<usize>,
    pub n_fine: usize,
    /// Brownian increments per reference step.
    pub path_substeps: usize,
    pub samples: usize,
    pub seed: u64,
    pub norm_s: f64,
    pub norm_p: f64,
    pub initial: InitialDataSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scheme: SchemeId::Low,
            reference: SchemeId::High,
            dim: 1,
            k_max: 32,
            lambda: 1.0,
            cubic: true,
            gamma: 0.1,
            sigma_phi: 4.0,
            phi_amplitude: 1.0,
            high_form: HighForm::Display,
            manakov_nonlinearity: ManakovNonlinearity::Coupled,
            horizon: 1.0,
            n_steps: vec![16, 32, 64, 128, 256, 512],
            n_fine: 4096,
            path_substeps: 4,
            samples: 64,
            seed: 2024,
            norm_s: 1.0,
            norm_p: 2.0,
            initial: InitialDataSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps.is_empty() {
            return Err(Error::Config("at least one coarse step count is required".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.samples == 0 || self.path_substeps == 0 {
            return Err(Error::Config("samples and path_substeps must be positive".into()));
        }
        if self.scheme.components() != self.reference.components() {
            return Err(Error::Config(format!("scheme {} and reference {} solve different models", self.scheme, self.reference)));
        }
        for &n in &self.n_steps {
            if n == 0 || self.n_fine % n != 0 {
                return Err(Error::NotDivisible { n_fine: self.n_fine, n_coarse: n });
            }
        }
        let n_max = *self.n_steps.iter().max().expect("non-empty");
        if self.n_fine / n_max < 8 {
            return Err(Error::Config(format!("n_fine / max N = {} must be at least 8", self.n_fine / n_max)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<TorusGrid>> {
        TorusGrid::new(self.dim, self.k_max)
    }

    pub fn smoothing(&self, grid: &Arc<TorusGrid>) -> Result<SmoothingOperator> {
        let profile = SmoothingOperator::sobolev_profile(grid, self.sigma_phi)?;
        SmoothingOperator::new(grid, profile.coeffs().iter().map(|p| p * self.phi_amplitude).collect())
    }

    pub fn model(&self, grid: &Arc<TorusGrid>) -> Result<ModelParams> {
        let phi = if self.scheme == SchemeId::Manakov { SmoothingOperator::zero(grid) } else { self.smoothing(grid)? };
        let mut p = ModelParams::new(self.lambda, phi)?.with_gamma(self.gamma)?;
        p.cubic = self.cubic;
        p.high_form = self.high_form;
        p.manakov_nonlinearity = self.manakov_nonlinearity;
        Ok(p)
    }

    pub fn path_steps(&self) -> usize {
        self.n_fine * self.path_substeps
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub n: usize,
    pub t: f64,
    pub strong_err: f64,
    pub strong_se: f64,
    pub pathwise_median: f64,
    pub pathwise_max: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    /// Strong error of the reference at `n_fine/2` against `n_fine`.
    pub reference_floor: f64,
    /// Step counts whose strong error exceeds ten times its Monte Carlo standard error.
    pub fitted: Vec<usize>,
    pub strong_fit: Option<SlopeFit>,
    pub median_fit: Option<SlopeFit>,
    pub max_fit: Option<SlopeFit>,
    /// `(N_j, N_{j+1})` pairs where the error grew by more than two standard errors.
    pub monotone_violations: Vec<(usize, usize)>,
}

/// `(sup_ℓ errors per N_j, floor sup error)` for one sample.
fn sample_errors(
    cfg: &ExperimentConfig,
    grid: &Arc<TorusGrid>,
    v: &SpectralField,
    steppers: &[Stepper],
    reference: &Stepper,
    half_reference: &Stepper,
    index: usize,
) -> Result<(Vec<f64>, f64)> {
    let path = BrownianPath::sample(grid, cfg.horizon, cfg.path_steps(), sample_seed(cfg.seed, index as u64))?;
    let n_max = *cfg.n_steps.iter().max().expect("validated");
    let stride = cfg.n_fine / n_max;
    let mut ref_states = Vec::with_capacity(n_max + 1);
    evolve_observed(reference, v, &path, cfg.n_fine, |l, u| {
        if l % stride == 0 {
            ref_states.push(u.clone());
        }
    })?;
    let norm = |a: &SpectralField, b: &SpectralField| -> Result<f64> { sobolev_norm(&a.sub(b)?, cfg.norm_s, cfg.norm_p) };
    let mut floor = 0.0f64;
    let mut failure = None;
    evolve_observed(half_reference, v, &path, cfg.n_fine / 2, |l, u| {
        if (2 * l) % stride == 0 {
            match norm(u, &ref_states[2 * l / stride]) {
                Ok(e) => floor = floor.max(e),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    let mut errs = Vec::with_capacity(steppers.len());
    for (stepper, &n) in steppers.iter().zip(&cfg.n_steps) {
        let jump = n_max / n;
        let mut sup = 0.0f64;
        evolve_observed(stepper, v, &path, n, |l, u| match norm(u, &ref_states[l * jump]) {
            Ok(e) => sup = sup.max(e),
            Err(e) => failure = Some(e),
        })?;
        errs.push(sup);
    }
    match failure {
        Some(e) => Err(e),
        None => Ok((errs, floor)),
    }
}

fn rms_with_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let sq: Vec<f64> = values.iter().map(|x| x * x).collect();
    let mean = sq.iter().sum::<f64>() / m;
    let var = if values.len() > 1 { sq.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
    let rms = mean.sqrt();
    let se = if rms > 0.0 { (var / m).sqrt() / (2.0 * rms) } else { 0.0 };
    (rms, se)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Strong and pathwise global errors, sup over the coarse grid inside the
/// expectation, `E[sup‖·‖²]^{1/2}` estimated over `samples` coupled paths.
pub fn strong_error(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let model = cfg.model(&grid)?;
    let v = make_initial_data(&cfg.initial, &grid, cfg.scheme.components())?;
    let steppers: Vec<Stepper> = cfg
        .n_steps
        .iter()
        .map(|&n| Stepper::new(cfg.scheme, model.clone(), &grid, cfg.horizon / n as f64))
        .collect::<Result<_>>()?;
    let reference = Stepper::new(cfg.reference, model.clone(), &grid, cfg.horizon / cfg.n_fine as f64)?;
    let half_reference = Stepper::new(cfg.reference, model, &grid, 2.0 * cfg.horizon / cfg.n_fine as f64)?;
    let per_sample: Vec<(Vec<f64>, f64)> = (0..cfg.samples)
        .into_par_iter()
        .map(|m| sample_errors(cfg, &grid, &v, &steppers, &reference, &half_reference, m))
        .collect::<Result<_>>()?;

    let floors: Vec<f64> = per_sample.iter().map(|s| s.1).collect();
    let reference_floor = rms_with_se(&floors).0;
    let mut rows = Vec::new();
    for (j, &n) in cfg.n_steps.iter().enumerate() {
        let errs: Vec<f64> = per_sample.iter().map(|s| s.0[j]).collect();
        let (strong_err, strong_se) = rms_with_se(&errs);
        rows.push(ReportRow {
            n,
            t: cfg.horizon / n as f64,
            strong_err,
            strong_se,
            pathwise_median: median(&errs),
            pathwise_max: errs.iter().cloned().fold(0.0, f64::max),
        });
    }
    rows.sort_by_key(|r| r.n);
    let monotone_violations = rows
        .windows(2)
        .filter(|w| w[1].strong_err > w[0].strong_err + 2.0 * (w[0].strong_se + w[1].strong_se))
        .map(|w| (w[0].n, w[1].n))
        .collect();
    let above: Vec<&ReportRow> = rows.iter().filter(|r| r.strong_err > 10.0 * r.strong_se).collect();
    let fitted = above.iter().map(|r| r.n).collect();
    let fit = |f: fn(&ReportRow) -> f64| {
        if above.len() < 2 {
            None
        } else {
            fit_slope(&above.iter().map(|r| (r.t, f(r))).collect::<Vec<_>>()).ok()
        }
    };
    Ok(ConvergenceReport {
        strong_fit: fit(|r| r.strong_err),
        median_fit: fit(|r| r.pathwise_median),
        max_fit: fit(|r| r.pathwise_max),
        rows,
        reference_floor,
        fitted,
        monotone_violations,
    })
}

pub const CONVERGENCE_HEADER: &str = "scheme,d,K,n,sigma_phi,N,t,strong_err,strong_se,pathwise_median,pathwise_max,M,seed";

fn fit_line(label: &str, fit: &Option<SlopeFit>) -> String {
    match fit {
        Some(f) => {
            let res: Vec<String> = f.residuals.iter().map(|r| format!("{r:.4}")).collect();
            format!(
                "# {label}_slope = {:.6} reliable = {} log10_residuals = [{}]",
                f.slope,
                f.reliable,
                res.join(" ")
            )
        }
        None => format!("# {label}_slope = none (fewer than two points above 10x Monte Carlo error)"),
    }
}

/// CSV body of a convergence report: config echo, header, one row per `N_j`, slope summary.
pub fn convergence_csv(cfg: &ExperimentConfig, report: &ConvergenceReport, echo: &[String]) -> String {
    let mut out = String::new();
    for line in echo {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "{CONVERGENCE_HEADER}");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{}",
            cfg.scheme,
            cfg.dim,
            cfg.k_max,
            cfg.initial.n,
            cfg.sigma_phi,
            r.n,
            r.t,
            r.strong_err,
            r.strong_se,
            r.pathwise_median,
            r.pathwise_max,
            cfg.samples,
            cfg.seed
        );
    }
    let _ = writeln!(out, "# reference_floor = {:.9e}", report.reference_floor);
    let smallest = report.rows.iter().map(|r| r.strong_err).fold(f64::INFINITY, f64::min);
    let _ = writeln!(out, "# reference_floor_over_min_error = {:.4}", report.reference_floor / smallest);
    let fitted: Vec<String> = report.fitted.iter().map(|n| n.to_string()).collect();
    let _ = writeln!(out, "# fitted_N = [{}]", fitted.join(" "));
    let _ = writeln!(out, "{}", fit_line("strong", &report.strong_fit));
    let _ = writeln!(out, "{}", fit_line("pathwise_median", &report.median_fit));
    let _ = writeln!(out, "{}", fit_line("pathwise_max", &report.max_fit));
    for (a, b) in &report.monotone_violations {
        let _ = writeln!(out, "# monotone_violation = {a} -> {b}");
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRow {
    pub delta: f64,
    pub n: usize,
    pub ratio_mean: f64,
    pub ratio_max: f64,
    pub diff_mean: f64,
}

/// Paired trajectories from `v` and `v + δw`, `‖w‖ = 1`, on the same path:
/// `‖S^N(v) - S^N(v+δw)‖ / δ` per `δ` and per `N` in `cfg.n_steps`.
pub fn stability_probe(cfg: &ExperimentConfig, deltas: &[f64]) -> Result<Vec<StabilityRow>> {
    if cfg.samples == 0 || cfg.n_steps.is_empty() {
        return Err(Error::Config("stability probe needs samples and step counts".into()));
    }
    let grid = cfg.grid()?;
    let model = cfg.model(&grid)?;
    let c = cfg.scheme.components();
    let v = make_initial_data(&cfg.initial, &grid, c)?;
    let dir_spec = InitialDataSpec { seed: splitmix(cfg.initial.seed), amplitude: 1.0, ..cfg.initial };
    let w = make_initial_data(&dir_spec, &grid, c)?;
    let wn = sobolev_norm(&w, cfg.norm_s, cfg.norm_p)?;
    let w = w.scale(C64::new(1.0 / wn, 0.0));
    let mut rows = Vec::new();
    for &n in &cfg.n_steps {
        let stepper = Stepper::new(cfg.scheme, model.clone(), &grid, cfg.horizon / n as f64)?;
        let substeps = cfg.path_substeps.max(if stepper.needs_aggregates() { 4 } else { 1 });
        let per_sample: Vec<Vec<f64>> = (0..cfg.samples)
            .into_par_iter()
            .map(|m| -> Result<Vec<f64>> {
                let path = BrownianPath::sample(&grid, cfg.horizon, n * substeps, sample_seed(cfg.seed, m as u64))?;
                let base = evolve_observed(&stepper, &v, &path, n, |_, _| {})?;
                deltas
                    .iter()
                    .map(|&d| {
                        let mut v2 = v.clone();
                        v2.axpy(C64::new(d, 0.0), &w)?;
                        let out = evolve_observed(&stepper, &v2, &path, n, |_, _| {})?;
                        sobolev_norm(&out.sub(&base)?, cfg.norm_s, cfg.norm_p)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (i, &d) in deltas.iter().enumerate() {
            let diffs: Vec<f64> = per_sample.iter().map(|s| s[i]).collect();
            let m = diffs.len() as f64;
            let diff_mean = diffs.iter().sum::<f64>() / m;
            let (ratio_mean, ratio_max) = if d > 0.0 {
                (diff_mean / d, diffs.iter().cloned().fold(0.0, f64::max) / d)
            } else {
                (f64::NAN, f64::NAN)
            };
            rows.push(StabilityRow { delta: d, n, ratio_mean, ratio_max, diff_mean });
        }
    }
    Ok(rows)
}

fn splitmix(x: u64) -> u64 {
    crate::noise::splitmix64(x)
}

pub fn stability_csv(rows: &[StabilityRow], echo: &[String]) -> String {
    let mut out = String::new();
    for line in echo {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "delta,N,ratio_mean,ratio_max,diff_mean");
    for r in rows {
        let _ = writeln!(out, "{:.3e},{},{:.9e},{:.9e},{:.9e}", r.delta, r.n, r.ratio_mean, r.ratio_max, r.diff_mean);
    }
    out
}

/// T₄ obstruction probe settings.
#[derive(Clone, Debug)]
pub struct ProbeConfig {
    /// `(k₁, k₂, k₃, k₄)`, one-dimensional.
    pub leaves: [i64; 4],
    pub r: Order,
    pub ts: Vec<f64>,
    pub k3_ladder: Vec<i64>,
    /// Step size at which the `k₃` ladder is measured.
    pub k3_t: f64,
    pub fine_steps: usize,
    pub samples: usize,
    pub sigma_phi: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            leaves: [1, 2, 3, 1],
            r: Order(4),
            ts: (4..=9).map(|e| 2f64.powi(-e)).collect(),
            k3_ladder: vec![2, 4, 8],
            k3_t: 2f64.powi(-6),
            fine_steps: 256,
            samples: 200,
            sigma_phi: 2.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    /// `(t, RMS |Π T₄ - Π^{n,r} T₄|)`
    pub t_rows: Vec<(f64, f64)>,
    pub t_fit: SlopeFit,
    /// `(k₃, RMS error at k3_t)`
    pub k3_rows: Vec<(i64, f64)>,
    pub k3_fit: SlopeFit,
}

/// RMS over samples of `|Π T₄ - Π^{n,r} T₄|` at step `t`.
pub fn t4_error(cfg: &ProbeConfig, leaves: [i64; 4], t: f64, salt: u64) -> Result<f64> {
    let k_max = leaves.iter().map(|k| k.unsigned_abs()).max().unwrap_or(0).max(1) as usize;
    let grid = TorusGrid::new(1, k_max)?;
    let phi = SmoothingOperator::sobolev_profile(&grid, cfg.sigma_phi)?;
    let ks: Vec<Wavevector> = leaves.iter().map(|&k| Wavevector::new1(k)).collect();
    let tree = NamedTree::T4.tree();
    let errs: Vec<f64> = (0..cfg.samples)
        .into_par_iter()
        .map(|m| -> Result<f64> {
            let seed = sample_seed(cfg.seed ^ salt, m as u64);
            let path = BrownianPath::sample(&grid, t, cfg.fine_steps, seed)?;
            let ctx = TreeIntegralContext { leaves: &ks, path: &path, phi: &phi };
            Ok((pi_exact(&tree, &ctx)? - pi_discrete(NamedTree::T4, &ctx, 2, cfg.r)?).norm())
        })
        .collect::<Result<_>>()?;
    Ok(rms_with_se(&errs).0)
}

pub fn probe_t4(cfg: &ProbeConfig) -> Result<ProbeReport> {
    let mut t_rows = Vec::new();
    for (i, &t) in cfg.ts.iter().enumerate() {
        t_rows.push((t, t4_error(cfg, cfg.leaves, t, i as u64 + 1)?));
    }
    let t_fit = fit_slope(&t_rows)?;
    let mut k3_rows = Vec::new();
    for (i, &k3) in cfg.k3_ladder.iter().enumerate() {
        let mut leaves = cfg.leaves;
        leaves[2] = k3;
        k3_rows.push((k3, t4_error(cfg, leaves, cfg.k3_t, 1000 + i as u64)?));
    }
    let k3_fit = fit_slope(&k3_rows.iter().map(|&(k, e)| (k as f64, e)).collect::<Vec<_>>())?;
    Ok(ProbeReport { t_rows, t_fit, k3_rows, k3_fit })
}

pub fn probe_csv(report: &ProbeReport, echo: &[String]) -> String {
    let mut out = String::new();
    for line in echo {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "ladder,value,rms_err");
    for (t, e) in &report.t_rows {
        let _ = writeln!(out, "t,{t:.9e},{e:.9e}");
    }
    for (k, e) in &report.k3_rows {
        let _ = writeln!(out, "k3,{k},{e:.9e}");
    }
    let _ = writeln!(out, "{}", fit_line("t", &Some(report.t_fit.clone())));
    let _ = writeln!(out, "{}", fit_line("k3", &Some(report.k3_fit.clone())));
    out
}

/// Noise self-check settings.
#[derive(Clone, Debug)]
pub struct NoiseCheckConfig {
    pub t: f64,
    pub moment_samples: usize,
    pub moment_fine_steps: usize,
    pub identity_samples: usize,
    /// Fine step counts for the discrepancy ladders (each a doubling of the last).
    pub fine_ladder: Vec<usize>,
    pub phi0: f64,
    pub seed: u64,
}

impl Default for NoiseCheckConfig {
    fn default() -> Self {
        NoiseCheckConfig {
            t: 0.5,
            moment_samples: 10_000,
            moment_fine_steps: 1024,
            identity_samples: 400,
            fine_ladder: vec![64, 128, 256, 512],
            phi0: 1.0,
            seed: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentRow {
    pub quantity: &'static str,
    pub source: &'static str,
    pub empirical: f64,
    pub theory: f64,
    pub se: f64,
}

impl MomentRow {
    pub fn z_score(&self) -> f64 {
        (self.empirical - self.theory) / self.se
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderRow {
    pub quantity: &'static str,
    pub dt_fine: f64,
    pub mean: f64,
}

#[derive(Clone, Debug)]
pub struct NoiseCheckReport {
    pub moments: Vec<MomentRow>,
    pub ladders: Vec<LadderRow>,
    /// Exponent of the Manakov symmetrized-identity residual in `dt_fine`.
    pub manakov_exponent: SlopeFit,
    /// Exponent of the real-projection double-Itô discrepancy in `dt_fine`.
    pub real_exponent: SlopeFit,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Sample variance, sample covariance and their standard errors from pairs.
fn moment_rows(source: &'static str, pairs: &[(f64, f64)], t: f64) -> Vec<MomentRow> {
    let w2: Vec<f64> = pairs.iter().map(|p| p.0 * p.0).collect();
    let s2: Vec<f64> = pairs.iter().map(|p| p.1 * p.1).collect();
    let ws: Vec<f64> = pairs.iter().map(|p| p.0 * p.1).collect();
    let (a, ase) = mean_se(&w2);
    let (b, bse) = mean_se(&s2);
    let (c, cse) = mean_se(&ws);
    vec![
        MomentRow { quantity: "var_increment", source, empirical: a, theory: t, se: ase },
        MomentRow { quantity: "var_time_weighted", source, empirical: b, theory: t.powi(3) / 3.0, se: bse },
        MomentRow { quantity: "cov_increment_time_weighted", source, empirical: c, theory: t * t / 2.0, se: cse },
    ]
}

/// Increment and time-weighted moments (fine path and exact sampler), double-Itô
/// discrepancies along a `dt_fine` ladder, and the Manakov symmetrized identity.
pub fn noise_check(cfg: &NoiseCheckConfig) -> Result<NoiseCheckReport> {
    let grid = TorusGrid::new(1, 1)?;
    let zero = grid.index_of(&Wavevector::new1(0)).expect("k = 0 retained");
    let t = cfg.t;

    let path_pairs: Vec<[(f64, f64); 2]> = (0..cfg.moment_samples)
        .into_par_iter()
        .map(|m| -> Result<[(f64, f64); 2]> {
            let path = BrownianPath::sample(&grid, t, cfg.moment_fine_steps, sample_seed(cfg.seed, m as u64))?;
            let (dw, sw, _) = path.step_aggregates(0, 1)?;
            Ok([(dw[zero].re, sw[zero].re), (dw[zero].im, sw[zero].im)])
        })
        .collect::<Result<_>>()?;
    let path_pairs: Vec<(f64, f64)> = path_pairs.into_iter().flatten().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, u64::MAX));
    let mut exact_pairs = Vec::with_capacity(2 * cfg.moment_samples);
    for l in 0..cfg.moment_samples {
        let s = StepNoise::sample_exact(&grid, l, t, &mut rng);
        let w = s.time_weighted.as_ref().expect("exact sampler fills time-weighted integrals");
        exact_pairs.push((s.dw[zero].re, w[zero].re));
        exact_pairs.push((s.dw[zero].im, w[zero].im));
    }
    let mut moments = moment_rows("fine-path", &path_pairs, t);
    moments.extend(moment_rows("exact", &exact_pairs, t));

    let mut ladders = Vec::new();
    let mut real_points = Vec::new();
    let mut manakov_points = Vec::new();
    let phi2 = cfg.phi0 * cfg.phi0;
    for (level, &nf) in cfg.fine_ladder.iter().enumerate() {
        let per: Vec<[f64; 3]> = (0..cfg.identity_samples)
            .into_par_iter()
            .map(|m| -> Result<[f64; 3]> {
                let seed = sample_seed(cfg.seed ^ (0x5eed + level as u64), m as u64);
                let path = BrownianPath::sample(&grid, t, nf, seed)?;
                let (mut w, mut sum_c, mut sum_r) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), 0.0);
                for j in 0..nf {
                    let d = path.fine_increments(j)[zero];
                    sum_c += w * d;
                    sum_r += w.re * d.re;
                    w += d;
                }
                // (t/2)((Φχ)² - Tr) at one point with Φ supported on k = 0
                let formula_c = 0.5 * (phi2 * w * w - t * phi2);
                let formula_r = 0.5 * (phi2 * w.re * w.re - t * phi2);
                let manakov = (0..3)
                    .flat_map(|n| ((n + 1)..3).map(move |m| (n, m)))
                    .map(|(n, m)| symmetrized_identity_residual(&path, n, m))
                    .sum::<f64>()
                    / 3.0;
                Ok([(formula_r - phi2 * sum_r).abs(), (formula_c - phi2 * sum_c).norm(), manakov])
            })
            .collect::<Result<_>>()?;
        let dt = t / nf as f64;
        let mean = |i: usize| per.iter().map(|p| p[i]).sum::<f64>() / per.len() as f64;
        let (r, c, mk) = (mean(0), mean(1), mean(2));
        ladders.push(LadderRow { quantity: "double_ito_real_projection", dt_fine: dt, mean: r });
        ladders.push(LadderRow { quantity: "double_ito_complex", dt_fine: dt, mean: c });
        ladders.push(LadderRow { quantity: "manakov_symmetrized_identity", dt_fine: dt, mean: mk });
        real_points.push((dt, r));
        manakov_points.push((dt, mk));
    }
    Ok(NoiseCheckReport {
        moments,
        ladders,
        manakov_exponent: fit_slope(&manakov_points)?,
        real_exponent: fit_slope(&real_points)?,
    })
}

pub fn noise_check_csv(report: &NoiseCheckReport, echo: &[String]) -> String {
    let mut out = String::new();
    for line in echo {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "kind,quantity,source_or_dt,value,theory,se,z");
    for m in &report.moments {
        let _ = writeln!(
            out,
            "moment,{},{},{:.9e},{:.9e},{:.9e},{:.4}",
            m.quantity,
            m.source,
            m.empirical,
            m.theory,
            m.se,
            m.z_score()
        );
    }
    for l in &report.ladders {
        let _ = writeln!(out, "ladder,{},{:.9e},{:.9e},,,", l.quantity, l.dt_fine, l.mean);
    }
    let _ = writeln!(out, "{}", fit_line("manakov_identity_dt", &Some(report.manakov_exponent.clone())));
    let _ = writeln!(out, "{}", fit_line("double_ito_real_dt", &Some(report.real_exponent.clone())));
    out
}

#[derive(Clone, Debug)]
pub struct PlaneWaveReport {
    /// `(N, t, sup_ℓ error, one-step error)`
    pub rows: Vec<(usize, f64, f64, f64)>,
    pub global_fit: SlopeFit,
    pub local_fit: SlopeFit,
}

/// Noise-free plane-wave study: global error sup over the grid and the error of
/// one step from exact data, both in the `L²` coefficient norm.
pub fn plane_wave_study(
    scheme: SchemeId,
    k_max: usize,
    k0: i64,
    c: C64,
    lambda: f64,
    horizon: f64,
    ns: &[usize],
) -> Result<PlaneWaveReport> {
    let grid = TorusGrid::new(1, k_max)?;
    let k = Wavevector::new1(k0);
    let params = ModelParams::new(lambda, SmoothingOperator::zero(&grid))?;
    let mut rows = Vec::new();
    for &n in ns {
        let dt = horizon / n as f64;
        let stepper = Stepper::new(scheme, params.clone(), &grid, dt)?;
        let v = plane_wave(&grid, k, c, lambda, 0.0)?;
        let zero_noise = |l: usize| StepNoise::zero(&grid, l, dt);
        let mut sup = 0.0f64;
        let mut u = v.clone();
        for l in 0..n {
            u = stepper.step(&u, &zero_noise(l))?;
            let exact = plane_wave(&grid, k, c, lambda, (l + 1) as f64 * dt)?;
            sup = sup.max(u.sub(&exact)?.l2_coeff_norm());
        }
        let one = stepper.step(&v, &zero_noise(0))?;
        let local = one.sub(&plane_wave(&grid, k, c, lambda, dt)?)?.l2_coeff_norm();
        rows.push((n, dt, sup, local));
    }
    let global_fit = fit_slope(&rows.iter().map(|r| (r.1, r.2)).collect::<Vec<_>>())?;
    let local_fit = fit_slope(&rows.iter().map(|r| (r.1, r.3)).collect::<Vec<_>>())?;
    Ok(PlaneWaveReport { rows, global_fit, local_fit })
}

/// Standalone trajectory with exactly sampled step noise: per-step `(t, ‖u‖_{H^s})`
/// for each requested `s`.
pub fn simulate(cfg: &ExperimentConfig, n: usize, norms: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
    let grid = cfg.grid()?;
    let model = cfg.model(&grid)?;
    let dt = cfg.horizon / n as f64;
    let stepper = Stepper::new(cfg.scheme, model, &grid, dt)?;
    let mut u = make_initial_data(&cfg.initial, &grid, cfg.scheme.components())?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, 0));
    let record = |u: &SpectralField, l: usize| -> Result<(f64, Vec<f64>)> {
        Ok((l as f64 * dt, norms.iter().map(|&s| sobolev_norm(u, s, cfg.norm_p)).collect::<Result<_>>()?))
    };
    let mut out = vec![record(&u, 0)?];
    for l in 0..n {
        let noise = StepNoise::sample_exact(&grid, l, dt, &mut rng);
        u = stepper.step(&u, &noise)?;
        out.push(record(&u, l + 1)?);
    }
    Ok(out)
}
