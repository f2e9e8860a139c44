//! Virtual valuations, objective-weighted scores, and optimal reserves.
//!
//! For a bidder with value distribution F, the virtual valuation is
//! `phi(z) = z - (1 - F(z)) / f(z)`, and an objective mixing revenue,
//! welfare, and clicks with weights (alpha, beta, gamma) scores a value `z`
//! as `psi(z) = alpha*phi(z) + beta*z + gamma`. The optimal mechanism
//! excludes values with negative scores, so the reserve price is the root
//! of psi. This example prints reserves for several distributions and
//! objective mixes, including the classic `1/2` for revenue on uniform(0,1).
//!
//! Run with: cargo run --example myerson_reserves

use adsim::valuations::{
    psi, psi_inverse_zero, regularity_check, virtual_value, ObjectiveWeights, ValueDistribution,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dists: Vec<(&str, ValueDistribution)> = vec![
        ("uniform(0,1)", ValueDistribution::uniform(0.0, 1.0)?),
        ("uniform(2,10)", ValueDistribution::uniform(2.0, 10.0)?),
        ("lognormal(0,0.5)", ValueDistribution::lognormal(0.0, 0.5)?),
        ("beta(2,5)", ValueDistribution::beta(2.0, 5.0)?),
        (
            "empirical",
            ValueDistribution::empirical(&[0.8, 1.1, 1.4, 2.0, 2.2, 3.1, 4.5, 5.0])?,
        ),
    ];

    let objectives: Vec<(&str, ObjectiveWeights)> = vec![
        ("revenue (1,0,0)", ObjectiveWeights::revenue()),
        ("rev+welf (1,1,0)", ObjectiveWeights::new(1.0, 1.0, 0.0)?),
        ("rev+clicks (1,0,1)", ObjectiveWeights::new(1.0, 0.0, 1.0)?),
        ("welfare (0,1,0)", ObjectiveWeights::welfare()),
    ];

    println!("optimal reserves: the root of psi(z) = alpha*phi(z) + beta*z + gamma\n");
    println!(
        "{:<18} {:>8} {:>20} {:>20} {:>20} {:>20}",
        "distribution", "regular", objectives[0].0, objectives[1].0, objectives[2].0, objectives[3].0
    );
    for (name, dist) in &dists {
        let regular = regularity_check(dist, 512);
        print!("{name:<18} {regular:>8}");
        for (_, weights) in &objectives {
            let r = psi_inverse_zero(weights, dist, 1e-10)?;
            let mark = if r.clamped { "*" } else { " " };
            print!(" {:>19.6}{mark}", r.value);
        }
        println!();
    }
    println!("\n(* = psi is non-negative on the whole support; nobody is excluded)");

    // A closer look at uniform(0,1): phi(z) = 2z - 1, so the revenue
    // reserve is 1/2, and adding welfare with equal weight moves the root
    // to 1/3 (psi(z) = 3z - 1).
    let u = ValueDistribution::uniform(0.0, 1.0)?;
    println!("\nuniform(0,1) in detail:");
    for z in [0.25, 0.5, 0.75] {
        println!(
            "  z = {z:.2}: phi = {:+.4}, psi_rev = {:+.4}, psi_rev+welf = {:+.4}",
            virtual_value(&u, z)?,
            psi(&ObjectiveWeights::revenue(), &u, z)?,
            psi(&ObjectiveWeights::new(1.0, 1.0, 0.0)?, &u, z)?,
        );
    }
    Ok(())
}
