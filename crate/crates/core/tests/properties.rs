use num_complex::Complex64 as C64;
use proptest::prelude::*;

use resonance_spde::config::RunConfig;
use resonance_spde::harness::fit_slope;
use resonance_spde::noise::{BrownianPath, SmoothingOperator, StepNoise};
use resonance_spde::schemes::{ModelParams, SchemeId, Stepper};
use resonance_spde::spectral::{
    apply_multiplier, conjugate_field, sobolev_norm, Multiplier, SpectralField, SpectralTransform, TorusGrid,
    Wavevector,
};
use resonance_spde::trees::{generate, Order, Rule};

fn field(grid: &std::sync::Arc<TorusGrid>, coeffs: &[(f64, f64)]) -> SpectralField {
    let mut it = coeffs.iter().cycle();
    SpectralField::from_fn(grid, |_| {
        let (a, b) = *it.next().expect("non-empty");
        C64::new(a, b)
    })
}

fn coeffs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_trees_have_consistent_frequencies(seed in prop::collection::vec(-6i64..=6, 8)) {
        for tree in generate(&Rule::cubic_nls(), Order(3)).unwrap() {
            let leaves: Vec<Wavevector> = (0..tree.leaf_count()).map(|i| Wavevector::new1(seed[i % seed.len()])).collect();
            let freqs = tree.node_frequencies(&leaves).unwrap();
            prop_assert!(tree.frequencies_consistent(&freqs));
            prop_assert!(tree.order() <= Order(3));
            let f = tree.flipped();
            prop_assert_eq!(f.flipped(), tree.clone());
        }
    }

    #[test]
    fn synthesis_round_trips(c in coeffs(), k in 2usize..12) {
        let grid = TorusGrid::new(1, k).unwrap();
        let f = field(&grid, &c);
        let tr = SpectralTransform::dealiased(&grid, 3).unwrap();
        let back = tr.analyze(&tr.synthesize(f.data()));
        for (a, b) in back.iter().zip(f.data()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn propagator_is_an_isometry(c in coeffs(), t in -2.0f64..2.0, s in 0.0f64..3.0) {
        let grid = TorusGrid::new(1, 10).unwrap();
        let f = field(&grid, &c);
        let g = apply_multiplier(&f, &Multiplier::free_propagator(t)).unwrap();
        let (a, b) = (sobolev_norm(&f, s, 2.0).unwrap(), sobolev_norm(&g, s, 2.0).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn conjugation_is_an_involution(c in coeffs()) {
        let grid = TorusGrid::new(1, 7).unwrap();
        let f = field(&grid, &c);
        let back = conjugate_field(&conjugate_field(&f));
        prop_assert_eq!(back.data(), f.data());
    }

    #[test]
    fn zero_is_a_fixed_point(seed in any::<u64>(), dt in 1e-3f64..0.1, which in 0usize..4) {
        let scheme = [SchemeId::Low, SchemeId::High, SchemeId::ExpEuler, SchemeId::Manakov][which];
        let grid = TorusGrid::new(1, 8).unwrap();
        let phi = SmoothingOperator::sobolev_profile(&grid, 3.0).unwrap();
        let params = ModelParams::new(1.0, phi).unwrap().with_gamma(0.5).unwrap();
        let stepper = Stepper::new(scheme, params, &grid, dt).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let noise = StepNoise::sample_exact(&grid, 0, dt, &mut rng);
        let zero = SpectralField::zeros(&grid, scheme.components());
        let out = stepper.step(&zero, &noise).unwrap();
        prop_assert!(out.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn coarse_increments_aggregate_fine_ones(seed in any::<u64>(), ratio_pow in 0u32..4) {
        let grid = TorusGrid::new(1, 3).unwrap();
        let path = BrownianPath::sample(&grid, 1.0, 32, seed).unwrap();
        let n = 32 >> ratio_pow;
        let r = path.ratio(n).unwrap();
        for step in 0..n {
            let coarse = path.coarse_increment(step, n).unwrap();
            for (m, c) in coarse.iter().enumerate() {
                let sum: C64 = (step * r..(step + 1) * r).map(|j| path.fine_increments(j)[m]).sum();
                prop_assert_eq!(*c, sum);
            }
        }
    }

    #[test]
    fn slope_fit_recovers_power_laws(p in -1.0f64..3.0, c in 0.01f64..100.0, n in 3usize..9) {
        let pts: Vec<(f64, f64)> = (0..n).map(|i| {
            let t = 2f64.powi(-(i as i32) - 2);
            (t, c * t.powf(p))
        }).collect();
        let fit = fit_slope(&pts).unwrap();
        prop_assert!((fit.slope - p).abs() < 1e-9);
        prop_assert!(fit.reliable);
    }

    #[test]
    fn config_echo_round_trips(
        samples in 1usize..500,
        seed in any::<u64>(),
        scheme in prop::sample::select(vec!["low", "additive", "high", "manakov", "exp-euler"]),
        horizon in 0.01f64..4.0,
    ) {
        let text = format!("scheme = {scheme}\nsamples = {samples}\nseed = {seed}\nhorizon = {horizon}\n");
        let cfg = RunConfig::parse(&text).unwrap();
        let again = RunConfig::parse(&cfg.canonical().join("\n")).unwrap();
        prop_assert_eq!(again.canonical(), cfg.canonical());
        let (a, b) = (cfg.experiment().unwrap(), again.experiment().unwrap());
        prop_assert_eq!(a.samples, b.samples);
        prop_assert_eq!(a.seed, b.seed);
        prop_assert_eq!(a.horizon, b.horizon);
    }
}
