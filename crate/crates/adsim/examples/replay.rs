//! Replaying a bid log against counterfactual reserve levels.
//!
//! Given a log of historical auctions (one bid and ad effect per bidder),
//! replay answers "what would delivery and revenue have been under a
//! different reserve?" without any distributional assumptions. The bundled
//! log is synthetic and deliberately places bids at a few mass points
//! (1.0, 2.0, 3.5): delivery as a function of the reserve is a step
//! function, dropping exactly when the reserve crosses a mass of bids —
//! the characteristic threshold behaviour of reserve tuning on real logs.
//! Revenue is piecewise linear rather than piecewise constant, because on
//! the stretches between bid clusters the reserve itself sets the price
//! paid by reserve-bound winners.
//!
//! Run with: cargo run --example replay

use adsim::harness::{parse_replay_log, run_replay, RuleFamily};
use adsim::position_auction::SlotLayout;
use std::fs::File;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/replay_synthetic.csv");
    let log = parse_replay_log(File::open(path)?)?;
    println!(
        "replaying {} auctions from {path}\n(log is synthetic, with bid mass points at 1.0, 2.0, 3.5)\n",
        log.auctions.len()
    );

    let slots = SlotLayout::new(vec![1.0, 0.5])?;
    let grid: Vec<f64> = (0..=16).map(|i| i as f64 * 0.25).collect();
    let rows = run_replay(&log, RuleFamily::Standard, &grid, &slots)?;

    println!(
        "   {:>5} {:>10} {:>8} {:>12} {:>12}",
        "r", "revenue", "skipped", "impressions", "clicks"
    );
    let mut last_imp = f64::NAN;
    for row in &rows {
        let drop = last_imp - row.impressions;
        let jump = if last_imp.is_finite() && drop > 0.2 {
            "  <- reserve crossed a mass point"
        } else if last_imp.is_finite() && drop > 1e-12 {
            "  <- small step (scattered bid)"
        } else {
            ""
        };
        println!(
            "   {:>5.2} {:>10.4} {:>8} {:>12.4} {:>12.4}{jump}",
            row.r, row.revenue, row.skipped, row.impressions, row.clicks
        );
        last_imp = row.impressions;
    }
    println!(
        "\nThe three large delivery drops line up with the reserve crossing the bid \
         mass points at 1.0, 2.0, and 3.5; the small steps come from the few \
         scattered filler bids. Revenue mixes those steps with linear ramps on the \
         stretches where the reserve itself sets the price paid."
    );
    Ok(())
}
