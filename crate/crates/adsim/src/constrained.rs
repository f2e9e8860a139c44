//! Constrained auction design: expected-impression caps, the
//! revenue/welfare frontier, and Lagrangian duality diagnostics.
//!
//! Three groups of tools live here:
//!
//! - **Ad-cap solver** ([`solve_ad_cap`]): across many search terms, show
//!   the top psi-scored ad on term `j` only when its score clears a
//!   threshold `lambda / s_j`. The multiplier `lambda` prices expected
//!   impressions; bisection on the (Monte Carlo, common-random-number)
//!   impression curve finds the smallest multiplier that meets the cap.
//! - **Frontier** ([`build_frontier`], [`concavity_check`]): sweep the
//!   objective mix between pure welfare and pure revenue and trace the
//!   achievable (welfare, revenue) pairs, which should form a concave
//!   Pareto frontier.
//! - **Duality check** ([`duality_gap_check`]): on small discrete-type
//!   instances, enumerate every deterministic *priority policy* (a fixed
//!   ranking of bidder-type pairs, consistent with each bidder's own type
//!   order, plus a cutoff below which nobody is served), evaluate the
//!   constrained primal exactly, and compare against the Lagrangian dual,
//!   whose inner maximization is solved pointwise per type profile. The
//!   dual bounds the primal from above for every non-negative multiplier;
//!   the reported gap must never be negative.

use crate::objectives::{sample_seed, splitmix64, EstimatorConfig, MetricsRecord, Scenario};
use crate::position_auction::AuctionError;
use crate::valuations::{psi, ObjectiveWeights, ValueDistribution, VirtualSpec};
use itertools::Itertools;

/// Bisection tolerance on the cap multiplier.
const LAMBDA_TOL: f64 = 1e-10;

/// Guard on the duality enumeration size: total type-pair count.
const MAX_CHAIN_ITEMS: usize = 16;

// ---------------------------------------------------------------------------
// Discrete value distributions
// ---------------------------------------------------------------------------

/// A finite value distribution on strictly increasing support points.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiscreteValue {
    points: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteValue {
    /// # Errors
    ///
    /// Rejects empty support, non-increasing points, non-positive masses,
    /// or masses that do not sum to 1 within `1e-6` (they are renormalized
    /// exactly afterwards).
    pub fn new(points: Vec<f64>, probs: Vec<f64>) -> Result<Self, AuctionError> {
        if points.is_empty() || points.len() != probs.len() {
            return Err(AuctionError::InvalidInput(
                "need matching, non-empty support and probability lists".into(),
            ));
        }
        for w in points.windows(2) {
            if !(w[1] > w[0]) {
                return Err(AuctionError::InvalidInput(format!(
                    "support points must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if points.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(AuctionError::InvalidInput("support points must be finite and >= 0".into()));
        }
        if probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(AuctionError::InvalidInput("probabilities must be positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(AuctionError::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let probs = probs.iter().map(|p| p / total).collect();
        Ok(Self { points, probs })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Discrete virtual values: `phi(t^m) = t^m - (1 - F^m) * (t^{m+1} -
    /// t^m) / f^m` with `F^m` cumulative through `m`, and `phi` at the top
    /// point equal to the point itself.
    pub fn virtual_values(&self) -> Vec<f64> {
        let n = self.points.len();
        let mut cum = 0.0;
        let mut out = Vec::with_capacity(n);
        for m in 0..n {
            cum += self.probs[m];
            if m + 1 == n {
                out.push(self.points[m]);
            } else {
                let gap = self.points[m + 1] - self.points[m];
                out.push(self.points[m] - (1.0 - cum) * gap / self.probs[m]);
            }
        }
        out
    }

    /// Regular iff the virtual values are non-decreasing.
    pub fn is_regular(&self) -> bool {
        self.virtual_values().windows(2).all(|w| w[1] >= w[0] - 1e-12)
    }
}

// ---------------------------------------------------------------------------
// Ad cap
// ---------------------------------------------------------------------------

/// One bidder in the ad-cap market.
#[derive(Debug, Clone, PartialEq)]
pub struct CapBidder {
    pub weight: f64,
    pub value_dist: ValueDistribution,
}

/// One search term: query volume and the slot's click effect.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdCapTerm {
    pub volume: f64,
    pub slot_effect: f64,
}

/// Maximize the psi objective across terms subject to a cap on expected
/// ad impressions per query.
#[derive(Debug, Clone, PartialEq)]
pub struct AdCapProblem {
    pub bidders: Vec<CapBidder>,
    pub terms: Vec<AdCapTerm>,
    pub weights: ObjectiveWeights,
    /// Upper bound on expected impressions, `sum_j q_j * P(term j shows an ad)`.
    pub theta: f64,
}

impl AdCapProblem {
    pub fn validate(&self) -> Result<(), AuctionError> {
        if self.bidders.is_empty() || self.terms.is_empty() {
            return Err(AuctionError::InvalidInput("need at least one bidder and one term".into()));
        }
        for (i, b) in self.bidders.iter().enumerate() {
            if !(b.weight > 0.0 && b.weight.is_finite()) {
                return Err(AuctionError::InvalidInput(format!(
                    "bidder {i} weight must be positive, got {}",
                    b.weight
                )));
            }
        }
        for (j, t) in self.terms.iter().enumerate() {
            if !(t.volume > 0.0 && t.slot_effect > 0.0)
                || !t.volume.is_finite()
                || !t.slot_effect.is_finite()
            {
                return Err(AuctionError::InvalidInput(format!(
                    "term {j} needs positive volume and slot effect"
                )));
            }
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(AuctionError::InvalidInput(format!(
                "impression cap must be >= 0, got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

/// Solution of the capped problem.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdCapSolution {
    /// Shadow price of the impression cap.
    pub lambda: f64,
    /// Per-term score thresholds `lambda / s_j`.
    pub thresholds: Vec<f64>,
    /// Expected impressions at the solution.
    pub expected_impressions: f64,
    /// Expected objective at the solution.
    pub achieved_obj: f64,
    /// Whether the cap binds (`lambda > 0`).
    pub binding: bool,
    /// Cap slack `theta - expected_impressions` (non-negative up to noise).
    pub slack: f64,
}

/// The per-(term, sample) top scores `max_i w_i psi_i(t_i)`, drawn once and
/// reused for every multiplier so the impression curve is exactly monotone.
struct ScorePanel {
    /// `scores[j]` holds one top score per sample for term `j`.
    scores: Vec<Vec<f64>>,
}

fn term_seed(seed: u64, j: usize) -> u64 {
    splitmix64(seed ^ 0xA24B_AED4_963E_E407u64.wrapping_mul(j as u64 + 1))
}

impl ScorePanel {
    fn draw(problem: &AdCapProblem, config: &EstimatorConfig) -> Result<Self, AuctionError> {
        use rand::{Rng, SeedableRng};
        let n = config.samples as usize;
        if n == 0 {
            return Err(AuctionError::InvalidInput("sample count must be positive".into()));
        }
        let mut scores = Vec::with_capacity(problem.terms.len());
        for j in 0..problem.terms.len() {
            let base = term_seed(config.seed, j);
            let one = |idx: usize| -> Result<f64, AuctionError> {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sample_seed(base, idx as u64));
                let mut best = f64::NEG_INFINITY;
                for b in &problem.bidders {
                    let u: f64 = rng.gen();
                    let t = b.value_dist.quantile(u.clamp(1e-15, 1.0 - 1e-15))?;
                    let s = b.weight * psi(&problem.weights, &b.value_dist, t)?;
                    best = best.max(s);
                }
                Ok(best)
            };
            let col: Result<Vec<f64>, AuctionError> = if config.threads == 1 {
                (0..n).map(one).collect()
            } else {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(one).collect()
            };
            scores.push(col?);
        }
        Ok(Self { scores })
    }

    /// Expected impressions at multiplier `lambda` (exact over the panel).
    fn impressions(&self, problem: &AdCapProblem, lambda: f64) -> f64 {
        let n = self.scores[0].len() as f64;
        problem
            .terms
            .iter()
            .zip(&self.scores)
            .map(|(term, col)| {
                let cut = lambda / term.slot_effect;
                let count = col.iter().filter(|&&s| s >= cut).count();
                term.volume * count as f64 / n
            })
            .sum()
    }

    /// Expected objective at multiplier `lambda`.
    fn objective(&self, problem: &AdCapProblem, lambda: f64) -> f64 {
        let n = self.scores[0].len() as f64;
        problem
            .terms
            .iter()
            .zip(&self.scores)
            .map(|(term, col)| {
                let cut = lambda / term.slot_effect;
                let sum: f64 = col.iter().filter(|&&s| s >= cut).sum();
                term.volume * term.slot_effect * sum / n
            })
            .sum()
    }

    fn max_score(&self) -> f64 {
        self.scores
            .iter()
            .flat_map(|c| c.iter())
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }
}

/// Monte Carlo estimate of expected impressions when term `j` shows its top
/// ad iff the top psi score clears `lambda / s_j`.
pub fn expected_impressions(
    problem: &AdCapProblem,
    lambda: f64,
    config: &EstimatorConfig,
) -> Result<f64, AuctionError> {
    problem.validate()?;
    if !(lambda >= 0.0) {
        return Err(AuctionError::InvalidInput(format!("multiplier must be >= 0, got {lambda}")));
    }
    let panel = ScorePanel::draw(problem, config)?;
    Ok(panel.impressions(problem, lambda))
}

/// The per-(term, sample) top psi scores the solver prices against:
/// `out[j][i]` is sample `i`'s best score `max_b w_b psi_b(t_b)` for term
/// `j`. Exposed so callers can evaluate arbitrary per-term threshold
/// policies on exactly the draw [`solve_ad_cap`] uses.
pub fn ad_cap_panel(
    problem: &AdCapProblem,
    config: &EstimatorConfig,
) -> Result<Vec<Vec<f64>>, AuctionError> {
    problem.validate()?;
    Ok(ScorePanel::draw(problem, config)?.scores)
}

/// Finds the smallest multiplier whose thresholds satisfy the impression
/// cap, and reports the thresholds, achieved objective, and slack.
///
/// With the cap already slack at `lambda = 0` the solver returns the
/// unconstrained policy. Otherwise it bisects on the common-random-number
/// impression curve, which is exactly non-increasing, so the solution is
/// deterministic for a given seed and thread count does not change it.
pub fn solve_ad_cap(
    problem: &AdCapProblem,
    config: &EstimatorConfig,
) -> Result<AdCapSolution, AuctionError> {
    problem.validate()?;
    let panel = ScorePanel::draw(problem, config)?;
    let e0 = panel.impressions(problem, 0.0);
    let lambda = if e0 <= problem.theta {
        0.0
    } else {
        let smax = panel.max_score().max(0.0);
        let mut hi = problem.terms.iter().map(|t| t.slot_effect).fold(1.0f64, f64::max) * smax + 1.0;
        let mut lo = 0.0;
        debug_assert!(panel.impressions(problem, hi) <= problem.theta);
        while hi - lo > LAMBDA_TOL * (1.0 + hi.abs()) {
            let mid = 0.5 * (lo + hi);
            if panel.impressions(problem, mid) <= problem.theta {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let expected = panel.impressions(problem, lambda);
    Ok(AdCapSolution {
        lambda,
        thresholds: problem.terms.iter().map(|t| lambda / t.slot_effect).collect(),
        expected_impressions: expected,
        achieved_obj: panel.objective(problem, lambda),
        binding: lambda > 0.0,
        slack: problem.theta - expected,
    })
}

// ---------------------------------------------------------------------------
// Frontier
// ---------------------------------------------------------------------------

/// One point on the welfare/revenue frontier.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrontierPoint {
    pub alpha: f64,
    pub beta: f64,
    pub metrics: MetricsRecord,
}

/// Sweeps the objective mix `(alpha, 1 - alpha, 0)` over `alphas`, running
/// the psi-optimal auction for each mix on `scenario`, and returns the
/// estimated metrics per mix.
pub fn build_frontier(
    scenario: &Scenario,
    alphas: &[f64],
    config: &EstimatorConfig,
) -> Result<Vec<FrontierPoint>, AuctionError> {
    use crate::objectives::{estimate_metrics, PaymentRule};
    use crate::position_auction::RankingRule;
    if alphas.is_empty() {
        return Err(AuctionError::InvalidInput("need at least one objective mix".into()));
    }
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(AuctionError::InvalidInput(format!(
                "objective mix must lie in [0, 1], got {alpha}"
            )));
        }
        let weights = ObjectiveWeights::new(alpha, 1.0 - alpha, 0.0)?;
        let virtuals: Vec<VirtualSpec> = scenario
            .bidders
            .iter()
            .map(|b| VirtualSpec::Distribution(b.value_dist.clone()))
            .collect();
        let rule = RankingRule::OptimalPsi { weights, virtuals };
        let metrics = estimate_metrics(&rule, scenario, PaymentRule::Truthful, config)?;
        out.push(FrontierPoint { alpha, beta: 1.0 - alpha, metrics });
    }
    Ok(out)
}

/// Outcome of a concavity scan along a frontier.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConcavityReport {
    pub ok: bool,
    /// Largest increase between consecutive slopes (0 when concave).
    pub worst_violation: f64,
    /// Number of slope pairs compared.
    pub checked: usize,
}

/// Checks that `(x, y)` points, sorted by `x`, have non-increasing
/// consecutive slopes up to `tol`. Near-duplicate `x` values (within
/// `1e-12` relative) are collapsed to their best `y`.
pub fn concavity_check(points: &[(f64, f64)], tol: f64) -> ConcavityReport {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        match merged.last_mut() {
            Some(last) if (p.0 - last.0).abs() <= 1e-12 * (1.0 + last.0.abs()) => {
                last.1 = last.1.max(p.1);
            }
            _ => merged.push(p),
        }
    }
    if merged.len() < 3 {
        return ConcavityReport { ok: true, worst_violation: 0.0, checked: 0 };
    }
    let slopes: Vec<f64> =
        merged.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    let mut worst = 0.0f64;
    for w in slopes.windows(2) {
        worst = worst.max(w[1] - w[0]);
    }
    ConcavityReport { ok: worst <= tol, worst_violation: worst, checked: slopes.len() - 1 }
}

/// `a` dominates `b` when it is at least as good in both coordinates and
/// better than `tol` in at least one.
pub fn dominates(a: (f64, f64), b: (f64, f64), tol: f64) -> bool {
    a.0 >= b.0 - tol && a.1 >= b.1 - tol && (a.0 > b.0 + tol || a.1 > b.1 + tol)
}

// ---------------------------------------------------------------------------
// Duality on discrete instances
// ---------------------------------------------------------------------------

/// One bidder with a finite type distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBidder {
    pub weight: f64,
    pub dist: DiscreteValue,
}

/// A two-bidder, single-slot discrete instance for exact enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityInstance {
    pub bidders: Vec<DiscreteBidder>,
    pub slot_effect: f64,
}

impl DualityInstance {
    pub fn new(bidders: Vec<DiscreteBidder>, slot_effect: f64) -> Result<Self, AuctionError> {
        if bidders.len() != 2 {
            return Err(AuctionError::InvalidInput(format!(
                "exact enumeration supports exactly 2 bidders, got {}",
                bidders.len()
            )));
        }
        let items: usize = bidders.iter().map(|b| b.dist.len()).sum();
        if items > MAX_CHAIN_ITEMS {
            return Err(AuctionError::InvalidInput(format!(
                "enumeration budget allows at most {MAX_CHAIN_ITEMS} total types, got {items}"
            )));
        }
        if !(slot_effect > 0.0 && slot_effect.is_finite()) {
            return Err(AuctionError::InvalidInput("slot effect must be positive".into()));
        }
        if bidders.iter().any(|b| !(b.weight > 0.0) || !b.weight.is_finite()) {
            return Err(AuctionError::InvalidInput("bidder weights must be positive".into()));
        }
        Ok(Self { bidders, slot_effect })
    }
}

/// Linear functional over the four outcome metrics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricVector {
    pub revenue: f64,
    pub welfare: f64,
    pub clicks: f64,
    pub impressions: f64,
}

impl MetricVector {
    pub fn zero() -> Self {
        Self { revenue: 0.0, welfare: 0.0, clicks: 0.0, impressions: 0.0 }
    }

    pub fn dot(&self, other: &MetricVector) -> f64 {
        self.revenue * other.revenue
            + self.welfare * other.welfare
            + self.clicks * other.clicks
            + self.impressions * other.impressions
    }
}

/// A lower-bound constraint `coeffs . metrics >= min_value`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearConstraint {
    pub coeffs: MetricVector,
    pub min_value: f64,
}

/// Result of the primal/dual comparison.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DualityReport {
    /// Best feasible objective over enumerated priority policies.
    pub primal: f64,
    /// Smallest dual bound found.
    pub dual: f64,
    /// `dual - primal` (non-negative by weak duality).
    pub gap: f64,
    /// Multiplier attaining the reported dual bound.
    pub lambda: Vec<f64>,
    /// Number of policies enumerated.
    pub policies: usize,
    /// Number of feasible policies.
    pub feasible: usize,
}

/// Exact metric vector of one priority policy.
///
/// A policy is an interleaving of the two bidders' type chains into one
/// priority order plus a cutoff rank; on each profile the highest-priority
/// type at or above the cutoff is served. Revenue is measured through the
/// discrete virtual values (the revenue of the threshold-payment
/// implementation of the policy).
fn policy_metrics(
    inst: &DualityInstance,
    interleave: &[usize],
    cutoff: usize,
) -> MetricVector {
    let (b0, b1) = (&inst.bidders[0], &inst.bidders[1]);
    let phi0 = b0.dist.virtual_values();
    let phi1 = b1.dist.virtual_values();
    // rank[i][m] = global priority (position in `interleave`) of bidder i's
    // m-th type.
    let mut rank = [vec![0usize; b0.dist.len()], vec![0usize; b1.dist.len()]];
    let mut seen = [0usize; 2];
    for (pos, &who) in interleave.iter().enumerate() {
        rank[who][seen[who]] = pos;
        seen[who] += 1;
    }
    let s = inst.slot_effect;
    let mut out = MetricVector::zero();
    for m0 in 0..b0.dist.len() {
        for m1 in 0..b1.dist.len() {
            let p = b0.dist.probs()[m0] * b1.dist.probs()[m1];
            let (r0, r1) = (rank[0][m0], rank[1][m1]);
            let winner = match (r0 >= cutoff, r1 >= cutoff) {
                (false, false) => None,
                (true, false) => Some(0),
                (false, true) => Some(1),
                (true, true) => Some(if r0 > r1 { 0 } else { 1 }),
            };
            if let Some(i) = winner {
                let (w, t, phi) = if i == 0 {
                    (b0.weight, b0.dist.points()[m0], phi0[m0])
                } else {
                    (b1.weight, b1.dist.points()[m1], phi1[m1])
                };
                out.revenue += p * s * w * phi;
                out.welfare += p * s * w * t;
                out.clicks += p * s * w;
                out.impressions += p;
            }
        }
    }
    out
}

/// Dual value `h(lambda)`: the unconstrained maximum of the shifted
/// objective, solved pointwise per type profile, minus `lambda . theta`.
fn dual_value(
    inst: &DualityInstance,
    objective: &MetricVector,
    constraints: &[LinearConstraint],
    lambda: &[f64],
) -> f64 {
    let mut shifted = *objective;
    for (l, c) in lambda.iter().zip(constraints) {
        shifted.revenue += l * c.coeffs.revenue;
        shifted.welfare += l * c.coeffs.welfare;
        shifted.clicks += l * c.coeffs.clicks;
        shifted.impressions += l * c.coeffs.impressions;
    }
    let (b0, b1) = (&inst.bidders[0], &inst.bidders[1]);
    let phi0 = b0.dist.virtual_values();
    let phi1 = b1.dist.virtual_values();
    let s = inst.slot_effect;
    let contrib = |w: f64, t: f64, phi: f64| {
        shifted.revenue * s * w * phi
            + shifted.welfare * s * w * t
            + shifted.clicks * s * w
            + shifted.impressions
    };
    let mut h = 0.0;
    for m0 in 0..b0.dist.len() {
        for m1 in 0..b1.dist.len() {
            let p = b0.dist.probs()[m0] * b1.dist.probs()[m1];
            let c0 = contrib(b0.weight, b0.dist.points()[m0], phi0[m0]);
            let c1 = contrib(b1.weight, b1.dist.points()[m1], phi1[m1]);
            h += p * c0.max(c1).max(0.0);
        }
    }
    for (l, c) in lambda.iter().zip(constraints) {
        h -= l * c.min_value;
    }
    h
}

/// Enumerates priority policies, solves the constrained primal exactly over
/// that class, minimizes the dual bound over the supplied multiplier
/// candidates (plus a coordinate-wise convex refinement), and reports the
/// gap.
///
/// # Errors
///
/// Fails when the instance shape is unsupported, when no enumerated policy
/// is feasible, or when a multiplier candidate has the wrong arity or a
/// negative entry.
pub fn duality_gap_check(
    inst: &DualityInstance,
    objective: &MetricVector,
    constraints: &[LinearConstraint],
    lambda_candidates: &[Vec<f64>],
) -> Result<DualityReport, AuctionError> {
    let (n0, n1) = (inst.bidders[0].dist.len(), inst.bidders[1].dist.len());
    let total = n0 + n1;
    if total > MAX_CHAIN_ITEMS {
        return Err(AuctionError::InvalidInput(format!(
            "enumeration budget allows at most {MAX_CHAIN_ITEMS} total types, got {total}"
        )));
    }
    for cand in lambda_candidates {
        if cand.len() != constraints.len() {
            return Err(AuctionError::InvalidInput(format!(
                "multiplier candidate has {} entries for {} constraints",
                cand.len(),
                constraints.len()
            )));
        }
        if cand.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(AuctionError::InvalidInput("multipliers must be >= 0 and finite".into()));
        }
    }

    // Primal: every interleaving x every cutoff.
    let mut primal = f64::NEG_INFINITY;
    let mut policies = 0usize;
    let mut feasible = 0usize;
    let scale = 1.0
        + constraints.iter().map(|c| c.min_value.abs()).fold(0.0f64, f64::max);
    for positions in (0..total).combinations(n0) {
        let mut interleave = vec![1usize; total];
        for &p in &positions {
            interleave[p] = 0;
        }
        for cutoff in 0..=total {
            policies += 1;
            let m = policy_metrics(inst, &interleave, cutoff);
            let ok = constraints
                .iter()
                .all(|c| c.coeffs.dot(&m) >= c.min_value - 1e-9 * scale);
            if ok {
                feasible += 1;
                primal = primal.max(objective.dot(&m));
            }
        }
    }
    if feasible == 0 {
        return Err(AuctionError::InvalidInput(
            "no enumerated policy satisfies the constraints".into(),
        ));
    }

    // Dual: candidates, then coordinate-wise ternary refinement (the dual
    // is convex in the multipliers).
    let k = constraints.len();
    let zero = vec![0.0; k];
    let mut best_lambda = zero.clone();
    let mut best_dual = dual_value(inst, objective, constraints, &zero);
    for cand in lambda_candidates {
        let v = dual_value(inst, objective, constraints, cand);
        if v < best_dual {
            best_dual = v;
            best_lambda = cand.clone();
        }
    }
    if k > 0 {
        let hi_bound = 2.0
            * lambda_candidates
                .iter()
                .flat_map(|c| c.iter())
                .fold(1.0f64, |a, &b| a.max(b))
            + 1.0;
        for _ in 0..4 {
            for dim in 0..k {
                let mut lo = 0.0f64;
                let mut hi = hi_bound;
                for _ in 0..120 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    let mut l1 = best_lambda.clone();
                    l1[dim] = m1;
                    let mut l2 = best_lambda.clone();
                    l2[dim] = m2;
                    if dual_value(inst, objective, constraints, &l1)
                        <= dual_value(inst, objective, constraints, &l2)
                    {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                let mut cand = best_lambda.clone();
                cand[dim] = 0.5 * (lo + hi);
                let v = dual_value(inst, objective, constraints, &cand);
                if v < best_dual {
                    best_dual = v;
                    best_lambda = cand;
                }
            }
        }
    }

    Ok(DualityReport {
        primal,
        dual: best_dual,
        gap: best_dual - primal,
        lambda: best_lambda,
        policies,
        feasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn uniform4() -> DiscreteValue {
        DiscreteValue::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.25; 4]).unwrap()
    }

    #[test]
    fn discrete_virtual_values_oracle() {
        let vv = uniform4().virtual_values();
        let expected = [-2.0, 0.0, 2.0, 4.0];
        for (a, b) in vv.iter().zip(expected) {
            assert!(close(*a, b, 1e-12), "{vv:?}");
        }
        assert!(uniform4().is_regular());

        let d = DiscreteValue::new(vec![0.0, 0.5, 1.0], vec![1.0 / 3.0; 3]).unwrap();
        let vv = d.virtual_values();
        for (a, b) in vv.iter().zip([-1.0, 0.0, 1.0]) {
            assert!(close(*a, b, 1e-12), "{vv:?}");
        }

        let irregular =
            DiscreteValue::new(vec![1.0, 2.0, 3.0], vec![0.45, 0.10, 0.45]).unwrap();
        assert!(!irregular.is_regular());
    }

    #[test]
    fn discrete_validation() {
        assert!(DiscreteValue::new(vec![], vec![]).is_err());
        assert!(DiscreteValue::new(vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(DiscreteValue::new(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
    }

    fn unit_cap_problem(theta: f64) -> AdCapProblem {
        AdCapProblem {
            bidders: vec![CapBidder {
                weight: 1.0,
                value_dist: ValueDistribution::uniform(0.0, 1.0).unwrap(),
            }],
            terms: vec![AdCapTerm { volume: 1.0, slot_effect: 1.0 }],
            weights: ObjectiveWeights::welfare(),
            theta,
        }
    }

    #[test]
    fn ad_cap_uniform_closed_form() {
        // One uniform bidder, welfare objective: the top score is t, so
        // E(lambda) = 1 - lambda, theta = 0.5 gives lambda = 0.5 and
        // objective E[t 1(t >= 1/2)] = 0.375.
        let cfg = EstimatorConfig { samples: 40_000, seed: 9, threads: 0 };
        let problem = unit_cap_problem(0.5);
        let sol = solve_ad_cap(&problem, &cfg).unwrap();
        assert!(close(sol.lambda, 0.5, 0.02), "{sol:?}");
        assert!(sol.binding);
        assert!(close(sol.achieved_obj, 0.375, 0.02), "{sol:?}");
        assert!(close(sol.expected_impressions, 0.5, 0.02), "{sol:?}");
        assert!(sol.expected_impressions <= problem.theta + 1e-12, "cap respected");
        assert_eq!(sol.thresholds, vec![sol.lambda]);

        let e = expected_impressions(&problem, 0.25, &cfg).unwrap();
        assert!(close(e, 0.75, 0.02), "E(0.25) = {e}");
    }

    #[test]
    fn ad_cap_slack_cap_is_free() {
        let cfg = EstimatorConfig { samples: 20_000, seed: 4, threads: 0 };
        let sol = solve_ad_cap(&unit_cap_problem(2.0), &cfg).unwrap();
        assert_eq!(sol.lambda, 0.0);
        assert!(!sol.binding);
        assert!(sol.slack > 0.5);
    }

    #[test]
    fn impression_curve_exactly_monotone() {
        let cfg = EstimatorConfig { samples: 5_000, seed: 13, threads: 0 };
        let problem = AdCapProblem {
            bidders: vec![
                CapBidder {
                    weight: 1.0,
                    value_dist: ValueDistribution::uniform(0.0, 1.0).unwrap(),
                },
                CapBidder {
                    weight: 0.7,
                    value_dist: ValueDistribution::uniform(0.2, 1.4).unwrap(),
                },
            ],
            terms: vec![
                AdCapTerm { volume: 2.0, slot_effect: 1.0 },
                AdCapTerm { volume: 1.0, slot_effect: 0.5 },
            ],
            weights: ObjectiveWeights::new(0.5, 0.5, 0.0).unwrap(),
            theta: 1.0,
        };
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let lambda = i as f64 * 0.05;
            let e = expected_impressions(&problem, lambda, &cfg).unwrap();
            assert!(e <= prev + 1e-15, "E({lambda}) = {e} rose above {prev}");
            prev = e;
        }
        let sol = solve_ad_cap(&problem, &cfg).unwrap();
        assert!(sol.expected_impressions <= problem.theta + 1e-12);
        // Complementary slackness: the cap binds and is met nearly exactly
        // (up to the sample-level granularity of the empirical curve).
        assert!(sol.binding);
        assert!(sol.slack >= -1e-12 && sol.slack < 0.01, "{sol:?}");
    }

    #[test]
    fn ad_cap_solution_deterministic() {
        let cfg1 = EstimatorConfig { samples: 10_000, seed: 21, threads: 1 };
        let cfg4 = EstimatorConfig { samples: 10_000, seed: 21, threads: 4 };
        let p = unit_cap_problem(0.3);
        let a = solve_ad_cap(&p, &cfg1).unwrap();
        let b = solve_ad_cap(&p, &cfg4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn concavity_and_dominance() {
        let concave = [(0.0, 0.0), (1.0, 1.0), (2.0, 1.5), (3.0, 1.75)];
        let rep = concavity_check(&concave, 1e-12);
        assert!(rep.ok, "{rep:?}");
        let convex = [(0.0, 0.0), (1.0, 0.1), (2.0, 1.0)];
        let rep = concavity_check(&convex, 1e-12);
        assert!(!rep.ok);
        assert!(close(rep.worst_violation, 0.8, 1e-12), "{rep:?}");

        assert!(dominates((1.0, 1.0), (0.5, 1.0), 1e-9));
        assert!(!dominates((1.0, 0.5), (0.5, 1.0), 1e-9));
        assert!(!dominates((1.0, 1.0), (1.0, 1.0), 1e-9));
    }

    #[test]
    fn frontier_ends_match_pure_objectives() {
        use crate::objectives::{ScenarioBidder, WeightModel};
        use crate::position_auction::SlotLayout;
        let bidder = || ScenarioBidder {
            value_dist: ValueDistribution::uniform(0.0, 1.0).unwrap(),
            weight: WeightModel::Fixed(1.0),
        };
        let scenario =
            Scenario::new(vec![bidder(), bidder()], SlotLayout::new(vec![1.0]).unwrap()).unwrap();
        let cfg = EstimatorConfig { samples: 30_000, seed: 17, threads: 0 };
        let pts = build_frontier(&scenario, &[0.0, 0.5, 1.0], &cfg).unwrap();
        // alpha = 0 is the efficient auction: welfare 2/3, revenue 1/3.
        let p0 = &pts[0].metrics;
        assert!(close(p0.welfare, 2.0 / 3.0, 4.0 * p0.welfare_se), "{p0:?}");
        assert!(close(p0.revenue, 1.0 / 3.0, 4.0 * p0.revenue_se), "{p0:?}");
        // alpha = 1 is the revenue-optimal auction: revenue 5/12, welfare 7/12.
        let p1 = &pts[2].metrics;
        assert!(close(p1.revenue, 5.0 / 12.0, 4.0 * p1.revenue_se), "{p1:?}");
        assert!(close(p1.welfare, 7.0 / 12.0, 4.0 * p1.welfare_se), "{p1:?}");
        assert!(p1.revenue > p0.revenue && p0.welfare > p1.welfare);
    }

    fn iid_instance() -> DualityInstance {
        let d = DiscreteValue::new(vec![1.0, 2.0], vec![0.5, 0.5]).unwrap();
        DualityInstance::new(
            vec![
                DiscreteBidder { weight: 1.0, dist: d.clone() },
                DiscreteBidder { weight: 1.0, dist: d },
            ],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn duality_unconstrained_gap_zero() {
        // Revenue-optimal on iid {1, 2} types: virtual values (0, 2), so
        // always serve the higher type; E[rev] = 0.75 * 2 = 1.5.
        let obj = MetricVector { revenue: 1.0, welfare: 0.0, clicks: 0.0, impressions: 0.0 };
        let rep = duality_gap_check(&iid_instance(), &obj, &[], &[]).unwrap();
        assert!(close(rep.primal, 1.5, 1e-12), "{rep:?}");
        assert!(close(rep.dual, 1.5, 1e-12), "{rep:?}");
        assert!(rep.gap.abs() <= 1e-12);
        // C(4, 2) interleavings x 5 cutoff ranks.
        assert_eq!(rep.policies, 6 * 5);
    }

    #[test]
    fn duality_with_nonbinding_constraint() {
        let obj = MetricVector { revenue: 1.0, welfare: 0.0, clicks: 0.0, impressions: 0.0 };
        let cons = [LinearConstraint {
            coeffs: MetricVector { revenue: 0.0, welfare: 1.0, clicks: 0.0, impressions: 0.0 },
            min_value: 1.6,
        }];
        let rep =
            duality_gap_check(&iid_instance(), &obj, &cons, &[vec![0.0], vec![0.5]]).unwrap();
        assert!(close(rep.primal, 1.5, 1e-12), "{rep:?}");
        assert!(rep.gap >= -1e-9 && rep.gap <= 1e-6, "{rep:?}");
    }

    #[test]
    fn duality_infeasible_errors() {
        let obj = MetricVector { revenue: 1.0, welfare: 0.0, clicks: 0.0, impressions: 0.0 };
        let cons = [LinearConstraint {
            coeffs: MetricVector { revenue: 0.0, welfare: 1.0, clicks: 0.0, impressions: 0.0 },
            min_value: 5.0,
        }];
        assert!(duality_gap_check(&iid_instance(), &obj, &cons, &[]).is_err());
    }

    #[test]
    fn weak_duality_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..60 {
            // Random regular instance: resample until virtual values are
            // non-decreasing.
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| loop {
                let n = rng.gen_range(2..=4);
                let mut pts: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..5.0)).collect();
                pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                pts.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
                if pts.len() < 2 {
                    continue;
                }
                let raw: Vec<f64> = (0..pts.len()).map(|_| rng.gen_range(0.2..1.0)).collect();
                let tot: f64 = raw.iter().sum();
                let d = DiscreteValue::new(pts, raw.iter().map(|p| p / tot).collect()).unwrap();
                if d.is_regular() {
                    return d;
                }
            };
            let inst = DualityInstance::new(
                vec![
                    DiscreteBidder { weight: rng.gen_range(0.5..2.0), dist: mk(&mut rng) },
                    DiscreteBidder { weight: rng.gen_range(0.5..2.0), dist: mk(&mut rng) },
                ],
                1.0,
            )
            .unwrap();
            let obj = MetricVector { revenue: 1.0, welfare: 0.2, clicks: 0.0, impressions: 0.0 };
            let coeffs =
                MetricVector { revenue: 0.0, welfare: 1.0, clicks: 0.0, impressions: 0.0 };
            // Feasible by construction: bound by the welfare of a real policy
            // (bidder 0's whole chain below bidder 1's, everyone active).
            let mut il = vec![0usize; inst.bidders[0].dist.len()];
            il.extend(std::iter::repeat(1).take(inst.bidders[1].dist.len()));
            let probe = policy_metrics(&inst, &il, 0);
            let cons = [LinearConstraint { coeffs, min_value: coeffs.dot(&probe) - 0.1 }];
            let lambda = vec![rng.gen_range(0.0..1.5)];
            let rep = duality_gap_check(&inst, &obj, &cons, &[lambda.clone()]).unwrap();
            assert!(rep.gap >= -1e-9, "trial {trial}: {rep:?}");
            let h = dual_value(&inst, &obj, &cons, &lambda);
            assert!(h >= rep.primal - 1e-9, "trial {trial}: h={h} < primal={}", rep.primal);
        }
    }
}
