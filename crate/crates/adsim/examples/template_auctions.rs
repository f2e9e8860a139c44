//! Auctions that also choose the page layout (template).
//!
//! A template decides how many slots each ad class gets and how prominent
//! they are; the auction picks the template and the per-class assignment
//! maximizing the objective. Pricing comes in two flavours:
//! template-considerate GSP (deviation payoffs account for the template a
//! deviation would induce) and template-indifferent GSP (each class is
//! priced within its own slate, optionally capped by the bid). This example
//! allocates one instance under both and prints assignments, prices, and
//! per-template objective values.
//!
//! Run with: cargo run --example template_auctions

use adsim::templates::{
    allocate_templates, template_considerate_gsp, template_indifferent_gsp, ClassedBidder,
    TemplateSet,
};
use adsim::valuations::ObjectiveWeights;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Template 0: text-heavy (three text slots, no image).
    // Template 1: one prominent image slot plus a single weaker text slot.
    // Class 0 = text ads, class 1 = image ads.
    let templates = TemplateSet::new(vec![
        vec![vec![1.0, 0.6, 0.36], vec![]],
        vec![vec![0.5], vec![1.0]],
    ])?;

    let bidders = vec![
        ClassedBidder::truthful(0, 7.0, 1.0)?,
        ClassedBidder::truthful(0, 5.0, 1.2)?,
        ClassedBidder::truthful(0, 3.0, 0.9)?,
        ClassedBidder::truthful(1, 6.0, 1.1)?,
        ClassedBidder::truthful(1, 4.5, 1.0)?,
    ];
    let weights = ObjectiveWeights::welfare();
    let bids: Vec<f64> = bidders.iter().map(|b| b.bid).collect();

    let truthful = allocate_templates(&weights, &[], &bidders, &templates)?;
    println!("truthful welfare-optimal outcome:");
    println!("  chosen template: {}", truthful.template);
    println!("  per-template objective values: {:?}", truthful.template_values);

    for (name, out) in [
        (
            "considerate GSP",
            template_considerate_gsp(&weights, &[], &bidders, &bids, &templates)?,
        ),
        (
            "indifferent GSP (capped)",
            template_indifferent_gsp(&weights, &[], &bidders, &bids, &templates, true)?,
        ),
    ] {
        println!("\n{name} at truthful bids — template {}:", out.template);
        println!("   bidder  class   value   slot-effect       price     utility");
        for (i, b) in bidders.iter().enumerate() {
            let effect = match out.assignment[i] {
                Some(_) => format!("{:>11.3}", out.effects[i]),
                None => format!("{:>11}", "—"),
            };
            let price = match out.prices[i] {
                Some(p) => format!("{p:>11.4}"),
                None => format!("{:>11}", "—"),
            };
            println!(
                "   {:>6} {:>6} {:>7.2} {} {} {:>11.4}",
                i,
                b.class,
                b.value,
                effect,
                price,
                out.utility(i, &bidders),
            );
        }
    }
    Ok(())
}
