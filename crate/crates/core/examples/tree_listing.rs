//! Decorated trees of the cubic NLS expansion up to order 3/2, with their
//! symmetry factors, elementary differentials and frequency decorations.

use resonance_spde::spectral::Wavevector;
use resonance_spde::trees::{listing, resonance_split, Order};

fn main() -> resonance_spde::Result<()> {
    for (label, tree) in listing(Order(3))? {
        let leaves: Vec<Wavevector> = (1..=tree.leaf_count() as i64).map(Wavevector::new1).collect();
        let freqs = tree.node_frequencies(&leaves)?;
        let upsilon = if tree.is_leaf() { "v_k".to_string() } else { tree.children[0].upsilon_pattern()?.to_string() };
        println!(
            "{label:<7} order {:<4} S {:<2} Υ {upsilon:<26} root frequency {}",
            tree.order().to_string(),
            tree.symmetry().to_string(),
            freqs[0].x()
        );
    }
    // dominant and lower-order parts of the T1 phase for k = (1, 2, 3)
    let (k1, k2, k3) = (Wavevector::new1(1), Wavevector::new1(2), Wavevector::new1(3));
    let (dom, low) = resonance_split(k1, k2, k3);
    println!("T1 phase split at (1,2,3): dominant {dom}, remainder {low}");
    Ok(())
}
