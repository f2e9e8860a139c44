//! The revenue/welfare Pareto frontier of objective-optimal auctions.
//!
//! Sweeping the objective mix (alpha, 1-alpha, 0) from pure welfare to pure
//! revenue and running the psi-optimal auction for each mix traces the
//! frontier of achievable (revenue, welfare) pairs. The frontier is concave:
//! interior objective mixes are never dominated by randomizing between
//! neighbouring mixes. `concavity_check` verifies this on the estimated
//! points up to sampling noise.
//!
//! Run with: cargo run --example pareto_frontier

use adsim::constrained::concavity_check;
use adsim::harness::{load_scenario, run_frontier};
use adsim::objectives::EstimatorConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let loaded = load_scenario("uniform8x3")?;
    let est = EstimatorConfig { samples: 40_000, seed: 7, threads: 0 };
    let alphas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();

    let points = run_frontier(&loaded, &alphas, &est)?;

    println!("psi-optimal frontier on uniform8x3 (40k samples per mix):\n");
    println!("   {:>6} {:>6} {:>12} {:>12}", "alpha", "beta", "revenue", "welfare");
    for p in &points {
        println!(
            "   {:>6.2} {:>6.2} {:>12.5} {:>12.5}",
            p.alpha, p.beta, p.metrics.revenue, p.metrics.welfare
        );
    }

    // Concavity up to 3-sigma sampling noise.
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.metrics.revenue, p.metrics.welfare)).collect();
    let sigma = points
        .iter()
        .map(|p| p.metrics.revenue_se.max(p.metrics.welfare_se))
        .fold(0.0f64, f64::max);
    let report = concavity_check(&xy, 3.0 * sigma);
    println!(
        "\nconcavity check (slack 3*max SE = {:.2e}): ok = {}, worst slope increase {:.2e} \
         over {} comparisons",
        3.0 * sigma,
        report.ok,
        report.worst_violation,
        report.checked
    );
    Ok(())
}
