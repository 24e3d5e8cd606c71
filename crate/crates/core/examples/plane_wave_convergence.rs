//! Noise-free plane wave against its exact solution: global and one-step errors
//! of the low-regularity scheme.

use num_complex::Complex64 as C64;
use resonance_spde::harness::plane_wave_study;
use resonance_spde::schemes::SchemeId;

fn main() -> resonance_spde::Result<()> {
    let ns = [8, 16, 32, 64, 128, 256];
    let report = plane_wave_study(SchemeId::Low, 32, 1, C64::new(1.0, 0.0), 1.0, 1.0, &ns)?;
    println!("{:>5} {:>12} {:>14} {:>14}", "N", "t", "global", "one step");
    for (n, t, global, local) in &report.rows {
        println!("{n:>5} {t:>12.4e} {global:>14.6e} {local:>14.6e}");
    }
    println!("global slope {:.3}, local slope {:.3}", report.global_fit.slope, report.local_fit.slope);
    Ok(())
}
