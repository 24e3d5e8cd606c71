//! Moments of the Brownian increments and time-weighted integrals, and the
//! discrepancy ladders of the iterated Itô identities.

use resonance_spde::harness::{noise_check, NoiseCheckConfig};

fn main() -> resonance_spde::Result<()> {
    let report = noise_check(&NoiseCheckConfig::default())?;
    for m in &report.moments {
        println!("{:<28} {:<9} {:.5e} vs {:.5e}  z = {:+.2}", m.quantity, m.source, m.empirical, m.theory, m.z_score());
    }
    for l in &report.ladders {
        println!("{:<30} dt {:.3e}  mean {:.4e}", l.quantity, l.dt_fine, l.mean);
    }
    println!("Manakov identity exponent {:.3}", report.manakov_exponent.slope);
    println!("real double Itô exponent {:.3}", report.real_exponent.slope);
    Ok(())
}
