//! The iterated integral of T4 cannot be discretised at low regularity: its
//! strong error scales like t^{5/2} and grows like k3^2 at order r = 2.

use resonance_spde::harness::{probe_t4, ProbeConfig};

fn main() -> resonance_spde::Result<()> {
    let report = probe_t4(&ProbeConfig::default())?;
    for (t, e) in &report.t_rows {
        println!("t {t:.4e}  error {e:.4e}");
    }
    println!("t-slope {:.3}", report.t_fit.slope);
    for (k3, e) in &report.k3_rows {
        println!("k3 {k3:>2}  error {e:.4e}");
    }
    println!("k3 exponent {:.3}", report.k3_fit.slope);
    Ok(())
}
