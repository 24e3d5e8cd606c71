//! Paired trajectories from v and v + δw on the same noise path: the
//! amplification ratio stays bounded and independent of δ.

use resonance_spde::config::RunConfig;
use resonance_spde::harness::stability_probe;

fn main() -> resonance_spde::Result<()> {
    let cfg = RunConfig::parse("horizon = 0.5\ndata_amplitude = 0.2\nn_steps = 32,64,128\nsamples = 16\n")?;
    for r in stability_probe(&cfg.experiment()?, &[1e-2, 1e-4, 1e-6])? {
        println!("δ {:.0e}  N {:>4}  ratio mean {:.5}  max {:.5}  |Δ| {:.3e}", r.delta, r.n, r.ratio_mean, r.ratio_max, r.diff_mean);
    }
    Ok(())
}
