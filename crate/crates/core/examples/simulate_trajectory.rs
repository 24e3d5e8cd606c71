//! One trajectory of the multiplicative-noise NLS with exactly sampled step
//! noise, compared across the available schemes.

use resonance_spde::config::RunConfig;
use resonance_spde::harness::simulate;

fn main() -> resonance_spde::Result<()> {
    for scheme in ["low", "additive", "high", "exp-euler"] {
        let mut cfg = RunConfig::default();
        cfg.set("scheme", scheme)?;
        cfg.set("norm_s", "1")?;
        let rows = simulate(&cfg.experiment()?, 128, &[0.0, 1.0])?;
        print!("{scheme:<10}");
        for (t, n) in rows.iter().step_by(32) {
            print!("  t={t:.2} L2={:.4} H1={:.4}", n[0], n[1]);
        }
        println!();
    }
    Ok(())
}
