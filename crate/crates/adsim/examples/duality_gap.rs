//! Weak duality for constrained auction design on a tiny discrete instance.
//!
//! Two bidders with discrete value distributions induce finitely many
//! "priority policies" (orderings of type chains with an exclusion cutoff).
//! Maximizing a linear objective subject to linear metric constraints has a
//! Lagrangian dual; `duality_gap_check` enumerates every policy for the
//! primal, evaluates the dual at candidate multipliers (plus a local
//! refinement), and reports the gap. Weak duality guarantees
//! `dual >= primal` always. Because the policy space here is finite and
//! deterministic, a cap strictly between two attainable delivery levels can
//! leave a genuine positive gap (closing it would take randomizing between
//! neighbouring policies); a cap aligned with some multiplier's optimal
//! policy closes the gap exactly. The example shows all three regimes.
//!
//! Run with: cargo run --example duality_gap

use adsim::constrained::{
    duality_gap_check, DiscreteBidder, DiscreteValue, DualityInstance, LinearConstraint,
    MetricVector,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let inst = DualityInstance::new(
        vec![
            DiscreteBidder {
                weight: 1.0,
                dist: DiscreteValue::new(vec![1.0, 2.5, 4.0], vec![0.5, 0.3, 0.2])?,
            },
            DiscreteBidder {
                weight: 1.4,
                dist: DiscreteValue::new(vec![0.8, 3.0], vec![0.6, 0.4])?,
            },
        ],
        0.7,
    )?;

    // Maximize welfare plus some revenue...
    let objective =
        MetricVector { revenue: 0.4, welfare: 1.0, clicks: 0.0, impressions: 0.0 };
    // ...subject to a cap on delivery: -impressions >= -cap, i.e.
    // impressions <= cap.
    let cap = 0.55;
    let constraints = vec![LinearConstraint {
        coeffs: MetricVector { revenue: 0.0, welfare: 0.0, clicks: 0.0, impressions: -1.0 },
        min_value: -cap,
    }];
    let candidates: Vec<Vec<f64>> = (0..=60).map(|i| vec![i as f64 * 0.05]).collect();

    let report = duality_gap_check(&inst, &objective, &constraints, &candidates)?;

    println!("misaligned cap {cap} (between attainable delivery levels):");
    println!("  policies enumerated: {} ({} feasible)", report.policies, report.feasible);
    println!("  primal (best feasible policy): {:.6}", report.primal);
    println!("  dual   (best multiplier bound): {:.6} at lambda = {:?}", report.dual, report.lambda);
    println!("  gap: {:.3e}  (weak duality: gap >= 0 up to 1e-9)", report.gap);
    assert!(report.gap >= -1e-9);

    // A cap aligned with a multiplier's optimal policy closes the gap: the
    // delivery of the policy maximizing `objective + lambda0 * coeffs` is
    // the derivative of the unconstrained maximum in lambda0, recoverable
    // by finite differences through the public API alone.
    let mut lambda0 = 1.0;
    let h = 1e-5;
    let unconstrained = |lam: f64| -> Result<f64, Box<dyn std::error::Error>> {
        let combined = MetricVector {
            revenue: objective.revenue,
            welfare: objective.welfare,
            clicks: objective.clicks,
            impressions: -lam,
        };
        Ok(duality_gap_check(&inst, &combined, &[], &[])?.primal)
    };
    let aligned_level = loop {
        let g0 = unconstrained(lambda0)?;
        let s_plus = (unconstrained(lambda0 + h)? - g0) / h;
        let s_minus = (g0 - unconstrained(lambda0 - h)?) / h;
        if (s_plus - s_minus).abs() <= 1e-7 * (1.0 + s_plus.abs()) {
            break 0.5 * (s_plus + s_minus);
        }
        lambda0 += 0.0137; // landed on a kink of the piecewise-linear max
    };
    let aligned = vec![LinearConstraint {
        coeffs: MetricVector { revenue: 0.0, welfare: 0.0, clicks: 0.0, impressions: -1.0 },
        min_value: aligned_level,
    }];
    let mut with_lambda0 = candidates.clone();
    with_lambda0.push(vec![lambda0]);
    let exact = duality_gap_check(&inst, &objective, &aligned, &with_lambda0)?;
    println!(
        "\naligned cap {:.6}: primal {:.6}, dual {:.6}, gap {:.3e}, lambda {:?}",
        -aligned_level, exact.primal, exact.dual, exact.gap, exact.lambda
    );
    assert!(exact.gap.abs() <= 1e-6 * exact.primal.abs().max(1.0));

    // Loosening the cap until it no longer binds also closes the gap, with
    // multiplier zero.
    let loose = vec![LinearConstraint {
        coeffs: MetricVector { revenue: 0.0, welfare: 0.0, clicks: 0.0, impressions: -1.0 },
        min_value: -10.0,
    }];
    let relaxed = duality_gap_check(&inst, &objective, &loose, &candidates)?;
    println!(
        "non-binding cap 10: primal {:.6}, dual {:.6}, gap {:.3e}, lambda {:?}",
        relaxed.primal, relaxed.dual, relaxed.gap, relaxed.lambda
    );
    Ok(())
}
