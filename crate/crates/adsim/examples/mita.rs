//! Multi-item template auctions (MITA): text ladder vs. a single image ad.
//!
//! One page either shows a ladder of text ads (template 0) or a single
//! image ad (template 1). For this two-template structure an equilibrium
//! of the template-considerate GSP always exists and is constructible in
//! closed form: either the image ad wins outright at truthful bids, or the
//! text side plays a lowest-equilibrium ladder lifted just high enough to
//! hold the template against the image bid. The construction reproduces
//! the truthful allocation — equilibrium play implements the optimum here,
//! in contrast to the general counterexamples.
//!
//! Run with: cargo run --example mita

use adsim::templates::{mita_allocate, mita_gsp_payments, mita_sne_construct, mita_verify, MitaInstance};
use adsim::valuations::ObjectiveWeights;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Three text slots vs. one image slot; the text side is collectively
    // strong, so the text template should win and the ladder must defend it.
    let inst = MitaInstance::new(
        vec![1.0, 0.55, 0.3],            // text slot effects
        0.8,                             // image slot effect
        vec![(6.0, 1.2), (4.5, 0.9), (2.0, 1.5)], // text (value, effect)
        vec![(5.0, 1.0), (3.0, 1.1)],    // image (value, effect)
        ObjectiveWeights::welfare(),
        None,
    )?;

    // Templates 0..k-1 are text ladders using the first 1..k text slots;
    // the last template is the single image ad.
    let truthful = mita_allocate(&inst, &inst.types())?;
    println!(
        "truthful outcome: template {} of 0..=3 (0..=2 = text ladders of 1..=3 slots, 3 = image)",
        truthful.template
    );
    println!("  per-template objectives: {:?}", truthful.template_values);

    let bids = mita_sne_construct(&inst)?;
    println!("\nconstructed equilibrium bids (text first, then image): {bids:?}");
    let verdict = mita_verify(&inst, &bids, 1000)?;
    println!("equilibrium check (grid 1000): {verdict}");

    let out = mita_gsp_payments(&inst, &bids)?;
    assert_eq!(out.template, truthful.template);
    assert_eq!(out.assignment, truthful.assignment);
    println!("\nGSP outcome at the equilibrium (same template and assignment as truthful):");
    println!("   bidder   value     bid       price");
    for (i, t) in inst.types().iter().enumerate() {
        let price = match out.prices[i] {
            Some(p) => format!("{p:>10.4}"),
            None => format!("{:>10}", "—"),
        };
        println!("   {:>6} {:>7.2} {:>7.3} {price}", i, t, bids[i]);
    }

    // Flip the balance: a dominant image bidder wins at truthful bids and
    // the construction degenerates to truthful bidding.
    let image_heavy = MitaInstance::new(
        vec![1.0, 0.4],
        1.0,
        vec![(2.0, 1.0), (1.0, 1.0)],
        vec![(9.0, 1.3)],
        ObjectiveWeights::welfare(),
        None,
    )?;
    let bids2 = mita_sne_construct(&image_heavy)?;
    let out2 = mita_gsp_payments(&image_heavy, &bids2)?;
    println!(
        "\nimage-dominant instance: the image template ({} of 0..=2) wins at bids {bids2:?} — \
         truthful bids already form the equilibrium",
        out2.template
    );
    Ok(())
}
