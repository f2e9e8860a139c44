//! Auction metrics and Monte Carlo estimation of expected outcomes.
//!
//! A [`MetricsRecord`] aggregates the four quantities the designer trades
//! off — impressions, clicks, welfare, revenue — and [`obj_value`] collapses
//! them through objective weights `alpha*revenue + beta*welfare +
//! gamma*clicks`.
//!
//! [`estimate_metrics`] samples bidder profiles from a [`Scenario`]
//! (independent value draws, optionally weight draws correlated with values
//! through a Gaussian copula), runs the auction truthfully (or under GSP at
//! truthful bids), and averages. Estimation is deterministic: sample `i`
//! uses its own counter-derived RNG stream, samples are accumulated in
//! fixed-size batches summed in index order, and batch partials are folded
//! sequentially — so results are bit-identical for a given seed regardless
//! of the number of worker threads.

use crate::position_auction::{
    allocate_scored, gsp_prices_scored, truthful_prices_scored, AuctionError, AuctionOutcome,
    BidderProfile, RankingRule, SlotLayout,
};
use crate::valuations::{ObjectiveWeights, ValueDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Samples per accumulation batch. Batches are the unit of parallelism;
/// sums inside a batch and across batches are always taken in index order.
const BATCH: u64 = 4096;

/// Aggregated auction outcome quantities with standard errors.
///
/// For a single resolved auction the standard errors are zero and
/// `samples` is 1; estimators fill them from the sample variance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub impressions: f64,
    pub impressions_se: f64,
    pub clicks: f64,
    pub clicks_se: f64,
    pub welfare: f64,
    pub welfare_se: f64,
    pub revenue: f64,
    pub revenue_se: f64,
    pub samples: u64,
}

impl MetricsRecord {
    pub fn zero() -> Self {
        Self {
            impressions: 0.0,
            impressions_se: 0.0,
            clicks: 0.0,
            clicks_se: 0.0,
            welfare: 0.0,
            welfare_se: 0.0,
            revenue: 0.0,
            revenue_se: 0.0,
            samples: 0,
        }
    }

    /// The designer's objective at the given weights.
    pub fn objective(&self, weights: ObjectiveWeights) -> f64 {
        obj_value(weights, self)
    }
}

/// `alpha*revenue + beta*welfare + gamma*clicks`.
pub fn obj_value(weights: ObjectiveWeights, metrics: &MetricsRecord) -> f64 {
    weights.alpha * metrics.revenue + weights.beta * metrics.welfare + weights.gamma * metrics.clicks
}

/// Combined standard error of the objective, treating the three metric
/// estimates as independent.
pub fn obj_se(weights: ObjectiveWeights, metrics: &MetricsRecord) -> f64 {
    let a = weights.alpha * metrics.revenue_se;
    let b = weights.beta * metrics.welfare_se;
    let c = weights.gamma * metrics.clicks_se;
    (a * a + b * b + c * c).sqrt()
}

/// Computes metrics for one resolved auction.
///
/// - impressions: number of allocated bidders
/// - clicks: `sum_k s_k * w_(k)`
/// - welfare: `sum_k s_k * w_(k) * value_(k)`
/// - revenue: `sum_k s_k * w_(k) * price_(k)` (unpriced winners count 0)
pub fn outcome_metrics(
    outcome: &AuctionOutcome,
    bidders: &[BidderProfile],
    slots: &SlotLayout,
) -> MetricsRecord {
    let mut m = MetricsRecord::zero();
    m.samples = 1;
    for (k, &i) in outcome.by_slot.iter().enumerate() {
        let s = slots.effect(k);
        let w = bidders[i].weight;
        m.impressions += 1.0;
        m.clicks += s * w;
        m.welfare += s * w * bidders[i].value;
        if let Some(p) = outcome.prices[i] {
            m.revenue += s * w * p;
        }
    }
    m
}

/// How a bidder's ad effect (weight) is drawn.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum WeightModel {
    /// Constant weight.
    Fixed(f64),
    /// `w ~ Uniform[lo, hi]`, independent of the value.
    Uniform { lo: f64, hi: f64 },
    /// `ln w ~ Normal(mu, sigma^2)`, with Gaussian-copula correlation
    /// `corr` between the value's uniform rank and `ln w`.
    Lognormal { mu: f64, sigma: f64, corr: f64 },
}

/// One bidder's generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBidder {
    pub value_dist: ValueDistribution,
    pub weight: WeightModel,
}

/// A market to simulate: per-bidder generative models plus the slot layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub bidders: Vec<ScenarioBidder>,
    pub slots: SlotLayout,
}

impl Scenario {
    pub fn new(bidders: Vec<ScenarioBidder>, slots: SlotLayout) -> Result<Self, AuctionError> {
        if bidders.is_empty() {
            return Err(AuctionError::InvalidInput("scenario needs at least one bidder".into()));
        }
        for (i, b) in bidders.iter().enumerate() {
            match &b.weight {
                WeightModel::Fixed(w) => {
                    if !(*w > 0.0 && w.is_finite()) {
                        return Err(AuctionError::InvalidInput(format!(
                            "bidder {i}: fixed weight must be positive, got {w}"
                        )));
                    }
                }
                WeightModel::Uniform { lo, hi } => {
                    if !(*lo >= 0.0 && *hi >= *lo && *hi > 0.0) || !hi.is_finite() {
                        return Err(AuctionError::InvalidInput(format!(
                            "bidder {i}: uniform weight needs 0 <= lo <= hi with hi > 0, got [{lo}, {hi}]"
                        )));
                    }
                }
                WeightModel::Lognormal { mu, sigma, corr } => {
                    if !mu.is_finite() || !(*sigma >= 0.0) || !sigma.is_finite() {
                        return Err(AuctionError::InvalidInput(format!(
                            "bidder {i}: lognormal weight needs finite mu and sigma >= 0"
                        )));
                    }
                    if !(corr.abs() <= 1.0) {
                        return Err(AuctionError::InvalidInput(format!(
                            "bidder {i}: correlation must lie in [-1, 1], got {corr}"
                        )));
                    }
                }
            }
        }
        Ok(Self { bidders, slots })
    }

    /// Draws one (value, weight) profile from the per-sample RNG stream.
    pub fn sample(&self, stream_seed: u64) -> Result<Vec<(f64, f64)>, AuctionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal is valid");
        let mut out = Vec::with_capacity(self.bidders.len());
        for b in &self.bidders {
            let u: f64 = rng.gen();
            let u = u.clamp(1e-15, 1.0 - 1e-15);
            let value = b.value_dist.quantile(u)?;
            let weight = match &b.weight {
                WeightModel::Fixed(w) => *w,
                WeightModel::Uniform { lo, hi } => {
                    // Clamp away from 0 so the drawn weight stays strictly
                    // positive even when the range starts at 0.
                    let u2: f64 = rng.gen();
                    lo + (hi - lo) * u2.clamp(1e-15, 1.0 - 1e-15)
                }
                WeightModel::Lognormal { mu, sigma, corr } => {
                    let z1 = normal.inverse_cdf(u);
                    let u2: f64 = rng.gen();
                    let z2 = normal.inverse_cdf(u2.clamp(1e-15, 1.0 - 1e-15));
                    let z = corr * z1 + (1.0 - corr * corr).max(0.0).sqrt() * z2;
                    (mu + sigma * z).exp()
                }
            };
            out.push((value, weight));
        }
        Ok(out)
    }
}

/// Which payment rule the estimator applies to the sampled truthful bids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaymentRule {
    /// Truthful threshold payments (the mechanism's own prices).
    Truthful,
    /// GSP prices charged at truthful bids.
    Gsp,
}

/// Monte Carlo settings. `threads == 0` uses the ambient thread pool,
/// `1` runs inline, anything else builds a dedicated pool; the estimate is
/// bit-identical in all cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EstimatorConfig {
    pub samples: u64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { samples: 10_000, seed: 0, threads: 0 }
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the RNG stream of sample `index` under master `seed`.
pub(crate) fn sample_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1))))
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    n: u64,
    sum: [f64; 4],
    sumsq: [f64; 4],
}

impl Accumulator {
    fn add(&mut self, m: &MetricsRecord) {
        let xs = [m.impressions, m.clicks, m.welfare, m.revenue];
        for (i, x) in xs.iter().enumerate() {
            self.sum[i] += x;
            self.sumsq[i] += x * x;
        }
        self.n += 1;
    }

    fn merge(&mut self, other: &Accumulator) {
        for i in 0..4 {
            self.sum[i] += other.sum[i];
            self.sumsq[i] += other.sumsq[i];
        }
        self.n += other.n;
    }

    fn finish(&self) -> MetricsRecord {
        let n = self.n as f64;
        let mean = |i: usize| self.sum[i] / n;
        let se = |i: usize| {
            if self.n < 2 {
                return 0.0;
            }
            let var = (self.sumsq[i] - self.sum[i] * self.sum[i] / n) / (n - 1.0);
            (var.max(0.0) / n).sqrt()
        };
        MetricsRecord {
            impressions: mean(0),
            impressions_se: se(0),
            clicks: mean(1),
            clicks_se: se(1),
            welfare: mean(2),
            welfare_se: se(2),
            revenue: mean(3),
            revenue_se: se(3),
            samples: self.n,
        }
    }
}

/// Estimates expected metrics for truthful play of `rule` on `scenario`.
///
/// # Errors
///
/// Propagates scenario sampling and auction evaluation failures; rejects a
/// zero sample count.
pub fn estimate_metrics(
    rule: &RankingRule,
    scenario: &Scenario,
    payment: PaymentRule,
    config: &EstimatorConfig,
) -> Result<MetricsRecord, AuctionError> {
    if config.samples == 0 {
        return Err(AuctionError::InvalidInput("sample count must be positive".into()));
    }
    let n_batches = config.samples.div_ceil(BATCH);
    let run_batch = |b: u64| -> Result<Accumulator, AuctionError> {
        let lo = b * BATCH;
        let hi = (lo + BATCH).min(config.samples);
        let mut acc = Accumulator::default();
        for idx in lo..hi {
            let profile = scenario.sample(sample_seed(config.seed, idx))?;
            let bidders: Vec<BidderProfile> = profile
                .iter()
                .map(|&(v, w)| BidderProfile::truthful(v, w))
                .collect::<Result<_, _>>()?;
            let weights: Vec<f64> = bidders.iter().map(|x| x.weight).collect();
            let scorers = rule.scorers(&weights)?;
            let mut out = allocate_scored(&scorers, &bidders, &scenario.slots)?;
            match payment {
                PaymentRule::Truthful => truthful_prices_scored(&scorers, &mut out, &scenario.slots)?,
                PaymentRule::Gsp => gsp_prices_scored(&scorers, &mut out)?,
            }
            acc.add(&outcome_metrics(&out, &bidders, &scenario.slots));
        }
        Ok(acc)
    };

    let partials: Result<Vec<Accumulator>, AuctionError> = if config.threads == 1 {
        (0..n_batches).map(run_batch).collect()
    } else {
        let work = || {
            use rayon::prelude::*;
            (0..n_batches).into_par_iter().map(run_batch).collect()
        };
        if config.threads == 0 {
            work()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| AuctionError::InvalidInput(format!("thread pool: {e}")))?;
            pool.install(work)
        }
    };
    let mut total = Accumulator::default();
    for p in &partials? {
        total.merge(p);
    }
    Ok(total.finish())
}
