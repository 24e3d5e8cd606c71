//! Strong and pathwise convergence of both NLS schemes against a fine coupled
//! reference. Pass a sample count as the first argument (default 16).

use resonance_spde::config::RunConfig;
use resonance_spde::harness::strong_error;

fn main() -> resonance_spde::Result<()> {
    let samples = std::env::args().nth(1).unwrap_or_else(|| "16".into());
    for scheme in ["low", "high"] {
        let mut cfg = RunConfig::default();
        cfg.set("scheme", scheme)?;
        cfg.set("samples", &samples)?;
        let exp = cfg.experiment()?;
        let report = strong_error(&exp)?;
        println!("{scheme}: H^{} error, M = {}", exp.norm_s, exp.samples);
        for r in &report.rows {
            println!("  N {:>4}  strong {:.4e} ± {:.1e}  median {:.4e}  max {:.4e}", r.n, r.strong_err, r.strong_se, r.pathwise_median, r.pathwise_max);
        }
        match (&report.strong_fit, &report.median_fit) {
            (Some(s), Some(m)) => println!("  slopes: strong {:.3}, pathwise median {:.3}", s.slope, m.slope),
            _ => println!("  too few rows above the Monte Carlo floor to fit"),
        }
    }
    Ok(())
}
