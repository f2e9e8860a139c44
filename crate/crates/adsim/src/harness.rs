//! Scenario configuration, batch runners, and CSV emission for the CLI.
//!
//! This module is the plumbing behind the `adsim` binary: JSON scenario
//! configs (plus two built-in presets), deterministic parameter sweeps
//! written as fixed-layout CSV, replay of historical bid logs under
//! alternative ranking rules, the ad-cap solver front end, template
//! equilibrium searches, and the packaged counterexample scenarios.
//!
//! Everything here is deliberately deterministic: a `(config, seed)` pair
//! produces byte-identical CSV regardless of thread count, and floats are
//! emitted with 17 significant digits so rows reparse to the exact values.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::constrained::{
    build_frontier, solve_ad_cap, AdCapProblem, AdCapSolution, AdCapTerm, CapBidder,
    FrontierPoint,
};
use crate::objectives::{
    estimate_metrics, sample_seed, EstimatorConfig, MetricsRecord, PaymentRule, Scenario,
    ScenarioBidder, WeightModel,
};
use crate::position_auction::{
    gsp_payments, AuctionError, BidderProfile, RankingRule, SlotLayout,
};
use crate::templates::{
    check_counterexample, counterexample, sne_grid_search, verify_template_sne, ClassedBidder,
    Counterexample, CounterexampleKind, CounterexampleReport, GridSearchConfig, SneSearchResult,
    TemplateAllocation, TemplatePayment, TemplateSet,
};
use crate::valuations::{ObjectiveWeights, ValuationError, ValueDistribution, VirtualSpec};

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

/// Harness-level failures, each mapped to a process exit code:
/// usage errors exit 1, data/config errors exit 2, and a counterexample
/// whose claim did not reproduce exits 3. Success is exit 0.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// The invocation itself is malformed (unknown rule, bad flag value).
    #[error("usage: {0}")]
    Usage(String),
    /// Inputs were readable as an invocation but unusable as data.
    #[error("{0}")]
    Data(String),
    /// A counterexample re-check did not reproduce the packaged claim.
    #[error("claim not reproduced: {0}")]
    ClaimNotReproduced(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::ClaimNotReproduced(_) => 3,
        }
    }
}

impl From<AuctionError> for HarnessError {
    fn from(e: AuctionError) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<ValuationError> for HarnessError {
    fn from(e: ValuationError) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Data(format!("io: {e}"))
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Data(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Data(format!("json: {e}"))
    }
}

// ---------------------------------------------------------------------------
// Scenario configuration schema
// ---------------------------------------------------------------------------

/// A value distribution in scenario JSON, tagged by `"dist"`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistSpec {
    Uniform { lo: f64, hi: f64 },
    Lognormal { mu: f64, sigma: f64 },
    Beta { a: f64, b: f64 },
    Empirical { values: Vec<f64> },
    /// Degenerate point mass: the bidder's value is exactly `value` in
    /// every sample. Unlike `empirical` (which kernel-smooths its sample so
    /// virtual valuations exist), this reproduces the value bit-exactly.
    Point { value: f64 },
}

impl DistSpec {
    pub fn build(&self) -> Result<ValueDistribution, HarnessError> {
        let built = match self {
            DistSpec::Uniform { lo, hi } => ValueDistribution::uniform(*lo, *hi),
            DistSpec::Lognormal { mu, sigma } => ValueDistribution::lognormal(*mu, *sigma),
            DistSpec::Beta { a, b } => ValueDistribution::beta(*a, *b),
            DistSpec::Empirical { values } => ValueDistribution::empirical(values),
            DistSpec::Point { value } => ValueDistribution::point(*value),
        };
        built.map_err(|e| HarnessError::Data(format!("value distribution: {e}")))
    }
}

/// How a bidder group's ad effect (weight) is drawn: either a fixed number
/// (`"weight": 0.8`) or a tagged distribution object.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Fixed(f64),
    Dist(WeightDistSpec),
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Fixed(1.0)
    }
}

/// Weight distributions supported in scenario JSON.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum WeightDistSpec {
    Uniform { lo: f64, hi: f64 },
    Lognormal { mu: f64, sigma: f64 },
}

fn default_count() -> usize {
    1
}

/// One group of identically distributed bidders.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidderGroup {
    /// Number of bidders drawn from this model.
    #[serde(default = "default_count")]
    pub count: usize,
    /// Value (type) distribution.
    pub value: DistSpec,
    /// Ad-effect model; fixed 1.0 when omitted.
    #[serde(default)]
    pub weight: WeightSpec,
    /// Gaussian-copula correlation between the value's rank and `ln w`;
    /// only meaningful (and only allowed nonzero) for lognormal weights.
    #[serde(default)]
    pub correlation: f64,
    /// Ad class, used when the scenario carries a templates block.
    #[serde(default)]
    pub class: usize,
}

/// A scenario file: named bidder groups, slot effects, and optionally a
/// multi-class templates block (`templates[j][c]` lists template `j`'s slot
/// effects for class `c`, non-increasing per class).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub bidders: Vec<BidderGroup>,
    pub slots: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<Vec<Vec<Vec<f64>>>>,
}

/// A scenario config resolved into runnable domain objects.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
    /// Per-bidder class labels (all zero unless the config set them).
    pub classes: Vec<usize>,
    pub templates: Option<TemplateSet>,
}

impl ScenarioConfig {
    pub fn into_loaded(self) -> Result<LoadedScenario, HarnessError> {
        let mut bidders = Vec::new();
        let mut classes = Vec::new();
        for (gi, g) in self.bidders.iter().enumerate() {
            if g.count == 0 {
                return Err(HarnessError::Data(format!(
                    "bidders[{gi}].count must be at least 1"
                )));
            }
            let value_dist = g.value.build().map_err(|e| match e {
                HarnessError::Data(msg) => HarnessError::Data(format!("bidders[{gi}].value: {msg}")),
                other => other,
            })?;
            let weight = match &g.weight {
                WeightSpec::Fixed(w) => {
                    require_zero_corr(gi, g.correlation)?;
                    WeightModel::Fixed(*w)
                }
                WeightSpec::Dist(WeightDistSpec::Uniform { lo, hi }) => {
                    require_zero_corr(gi, g.correlation)?;
                    WeightModel::Uniform { lo: *lo, hi: *hi }
                }
                WeightSpec::Dist(WeightDistSpec::Lognormal { mu, sigma }) => {
                    WeightModel::Lognormal { mu: *mu, sigma: *sigma, corr: g.correlation }
                }
            };
            for _ in 0..g.count {
                bidders.push(ScenarioBidder { value_dist: value_dist.clone(), weight: weight.clone() });
                classes.push(g.class);
            }
        }
        let slots = SlotLayout::new(self.slots.clone())
            .map_err(|e| HarnessError::Data(format!("slots: {e}")))?;
        let scenario = Scenario::new(bidders, slots)
            .map_err(|e| HarnessError::Data(format!("bidders: {e}")))?;
        let templates = match &self.templates {
            Some(raw) => {
                let t = TemplateSet::new(raw.clone())
                    .map_err(|e| HarnessError::Data(format!("templates: {e}")))?;
                for (i, &c) in classes.iter().enumerate() {
                    if c >= t.class_count() {
                        return Err(HarnessError::Data(format!(
                            "bidder {i} has class {c} but the templates block defines {} classes",
                            t.class_count()
                        )));
                    }
                }
                Some(t)
            }
            None => None,
        };
        Ok(LoadedScenario { config: self, scenario, classes, templates })
    }
}

fn require_zero_corr(group: usize, corr: f64) -> Result<(), HarnessError> {
    if corr != 0.0 {
        return Err(HarnessError::Data(format!(
            "bidders[{group}].correlation: nonzero correlation needs a lognormal weight"
        )));
    }
    Ok(())
}

/// Built-in named scenarios.
///
/// - `uniform8x3`: eight bidders with values and weights independently
///   uniform on `[0, 1]`, slots `(1, 0.6, 0.36)` (geometric decay 0.6 — the
///   slot curve is a configuration choice, not an empirical calibration).
/// - `lahaie-pennock`: the correlated lognormal benchmark of Lahaie and
///   Pennock — `ln t ~ N(0, 1)`, `ln w ~ N(0, 0.25)`, rank correlation 0.4
///   between value and log-weight; same slot curve, eight bidders.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    match name {
        "uniform8x3" => Some(ScenarioConfig {
            name: "uniform8x3".into(),
            bidders: vec![BidderGroup {
                count: 8,
                value: DistSpec::Uniform { lo: 0.0, hi: 1.0 },
                weight: WeightSpec::Dist(WeightDistSpec::Uniform { lo: 0.0, hi: 1.0 }),
                correlation: 0.0,
                class: 0,
            }],
            slots: vec![1.0, 0.6, 0.36],
            seed: 0,
            templates: None,
        }),
        "lahaie-pennock" => Some(ScenarioConfig {
            name: "lahaie-pennock".into(),
            bidders: vec![BidderGroup {
                count: 8,
                value: DistSpec::Lognormal { mu: 0.0, sigma: 1.0 },
                weight: WeightSpec::Dist(WeightDistSpec::Lognormal { mu: 0.0, sigma: 0.5 }),
                correlation: 0.4,
                class: 0,
            }],
            slots: vec![1.0, 0.6, 0.36],
            seed: 0,
            templates: None,
        }),
        _ => None,
    }
}

/// Loads a scenario by preset name or JSON file path (preset names win).
pub fn load_scenario(spec: &str) -> Result<LoadedScenario, HarnessError> {
    let config = match preset(spec) {
        Some(c) => c,
        None => {
            let text = std::fs::read_to_string(spec)
                .map_err(|e| HarnessError::Data(format!("cannot read scenario '{spec}': {e}")))?;
            serde_json::from_str::<ScenarioConfig>(&text)
                .map_err(|e| HarnessError::Data(format!("scenario '{spec}': {e}")))?
        }
    };
    config.into_loaded()
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// The ranking-rule families the CLI can sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleFamily {
    /// Rank by `w*b`, eligible iff `b >= r`; grid values are `r`.
    Standard,
    /// Rank by `w*(b - r)`, eligible iff `b >= r`; grid values are `r`.
    Subtractive,
    /// Rank by `w*b`, eligible iff `w*b >= rho`; grid values are `rho`.
    Impression,
    /// Rank by `w*(b - r)` with score floor `rho`; the grid is crossed
    /// with itself (`r` outer, `rho` inner).
    TwoParam,
    /// Objective-optimal psi ranking; takes no scalar grid.
    Psi,
}

impl RuleFamily {
    pub fn parse(name: &str) -> Result<Self, HarnessError> {
        match name.to_ascii_lowercase().as_str() {
            "standard" | "gsp" => Ok(RuleFamily::Standard),
            "subtractive" => Ok(RuleFamily::Subtractive),
            "impression" | "impression-reserve" => Ok(RuleFamily::Impression),
            "two-param" | "twoparam" | "two_param" => Ok(RuleFamily::TwoParam),
            "psi" | "optimal-psi" => Ok(RuleFamily::Psi),
            other => Err(HarnessError::Usage(format!(
                "unknown rule '{other}' (expected standard, subtractive, impression, two-param, or psi)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RuleFamily::Standard => "standard",
            RuleFamily::Subtractive => "subtractive",
            RuleFamily::Impression => "impression",
            RuleFamily::TwoParam => "two-param",
            RuleFamily::Psi => "psi",
        }
    }
}

/// Expands a rule family and grid into `(r, rho)` evaluation points.
pub fn sweep_points(family: RuleFamily, grid: &[f64]) -> Result<Vec<(f64, f64)>, HarnessError> {
    if family != RuleFamily::Psi && grid.is_empty() {
        return Err(HarnessError::Usage(format!(
            "rule '{}' needs a non-empty --grid of parameter values",
            family.name()
        )));
    }
    Ok(match family {
        RuleFamily::Standard | RuleFamily::Subtractive => {
            grid.iter().map(|&r| (r, 0.0)).collect()
        }
        RuleFamily::Impression => grid.iter().map(|&rho| (0.0, rho)).collect(),
        RuleFamily::TwoParam => {
            let mut out = Vec::with_capacity(grid.len() * grid.len());
            for &r in grid {
                for &rho in grid {
                    out.push((r, rho));
                }
            }
            out
        }
        RuleFamily::Psi => vec![(0.0, 0.0)],
    })
}

/// What to run at each grid point.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub family: RuleFamily,
    pub grid: Vec<f64>,
    /// Objective weights, used (and recorded) only by the psi family.
    pub weights: ObjectiveWeights,
    pub pricing: PaymentRule,
}

/// One emitted sweep row; `error` is empty on success, and a failed point
/// keeps its parameters but zeroes the metrics (samples 0).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rule: String,
    pub r: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub metrics: MetricsRecord,
    pub seed: u64,
    pub error: String,
}

/// Fixed CSV column order for sweep output.
pub const SWEEP_HEADER: [&str; 17] = [
    "rule",
    "r",
    "rho",
    "alpha",
    "beta",
    "gamma",
    "impressions",
    "impressions_se",
    "clicks",
    "clicks_se",
    "welfare",
    "welfare_se",
    "revenue",
    "revenue_se",
    "samples",
    "seed",
    "error",
];

/// Runs the estimator at every grid point. Point-level failures (an
/// unsupported rule/pricing combination, a parameter the rule rejects) are
/// recorded in that row's `error` column instead of aborting the sweep.
pub fn run_sweep(
    loaded: &LoadedScenario,
    spec: &SweepSpec,
    est: &EstimatorConfig,
) -> Result<Vec<SweepRow>, HarnessError> {
    let points = sweep_points(spec.family, &spec.grid)?;
    let (alpha, beta, gamma) = if spec.family == RuleFamily::Psi {
        (spec.weights.alpha, spec.weights.beta, spec.weights.gamma)
    } else {
        (0.0, 0.0, 0.0)
    };
    let mut rows = Vec::with_capacity(points.len());
    for (r, rho) in points {
        let rule = match spec.family {
            RuleFamily::Standard => RankingRule::Standard { reserve: r },
            RuleFamily::Subtractive => RankingRule::Subtractive { reserve: r },
            RuleFamily::Impression => RankingRule::ImpressionReserve { score_reserve: rho },
            RuleFamily::TwoParam => RankingRule::TwoParam { reserve: r, score_reserve: rho },
            RuleFamily::Psi => RankingRule::OptimalPsi {
                weights: spec.weights,
                virtuals: loaded
                    .scenario
                    .bidders
                    .iter()
                    .map(|b| VirtualSpec::Distribution(b.value_dist.clone()))
                    .collect(),
            },
        };
        let (metrics, error) = match estimate_metrics(&rule, &loaded.scenario, spec.pricing, est) {
            Ok(m) => (m, String::new()),
            Err(e) => (MetricsRecord::zero(), e.to_string()),
        };
        rows.push(SweepRow {
            rule: spec.family.name().to_string(),
            r,
            rho,
            alpha,
            beta,
            gamma,
            metrics,
            seed: est.seed,
            error,
        });
    }
    Ok(rows)
}

/// Formats a float with 17 significant digits, enough for an exact f64
/// round trip and stable across platforms and runs.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for row in rows {
        let m = &row.metrics;
        w.write_record(&[
            row.rule.clone(),
            fmt_float(row.r),
            fmt_float(row.rho),
            fmt_float(row.alpha),
            fmt_float(row.beta),
            fmt_float(row.gamma),
            fmt_float(m.impressions),
            fmt_float(m.impressions_se),
            fmt_float(m.clicks),
            fmt_float(m.clicks_se),
            fmt_float(m.welfare),
            fmt_float(m.welfare_se),
            fmt_float(m.revenue),
            fmt_float(m.revenue_se),
            m.samples.to_string(),
            row.seed.to_string(),
            row.error.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses sweep CSV back into rows (the round-trip counterpart of
/// [`write_sweep_csv`]).
pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(SWEEP_HEADER.iter().copied()) {
        return Err(HarnessError::Data(format!(
            "unexpected sweep header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let field = |rec: &csv::StringRecord, i: usize| -> Result<f64, HarnessError> {
        rec[i].parse::<f64>().map_err(|e| {
            HarnessError::Data(format!("column {}: {e}", SWEEP_HEADER[i]))
        })
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != SWEEP_HEADER.len() {
            return Err(HarnessError::Data(format!("row has {} fields", rec.len())));
        }
        rows.push(SweepRow {
            rule: rec[0].to_string(),
            r: field(&rec, 1)?,
            rho: field(&rec, 2)?,
            alpha: field(&rec, 3)?,
            beta: field(&rec, 4)?,
            gamma: field(&rec, 5)?,
            metrics: MetricsRecord {
                impressions: field(&rec, 6)?,
                impressions_se: field(&rec, 7)?,
                clicks: field(&rec, 8)?,
                clicks_se: field(&rec, 9)?,
                welfare: field(&rec, 10)?,
                welfare_se: field(&rec, 11)?,
                revenue: field(&rec, 12)?,
                revenue_se: field(&rec, 13)?,
                samples: rec[14]
                    .parse::<u64>()
                    .map_err(|e| HarnessError::Data(format!("column samples: {e}")))?,
            },
            seed: rec[15]
                .parse::<u64>()
                .map_err(|e| HarnessError::Data(format!("column seed: {e}")))?,
            error: rec[16].to_string(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Frontier
// ---------------------------------------------------------------------------

/// Fixed CSV column order for frontier output.
pub const FRONTIER_HEADER: [&str; 11] = [
    "alpha",
    "beta",
    "impressions",
    "impressions_se",
    "clicks",
    "clicks_se",
    "welfare",
    "welfare_se",
    "revenue",
    "revenue_se",
    "samples",
];

/// Sweeps the revenue/welfare mix `(alpha, 1 - alpha, 0)` over the grid
/// values (each must lie in `[0, 1]`).
pub fn run_frontier(
    loaded: &LoadedScenario,
    alphas: &[f64],
    est: &EstimatorConfig,
) -> Result<Vec<FrontierPoint>, HarnessError> {
    build_frontier(&loaded.scenario, alphas, est).map_err(Into::into)
}

pub fn write_frontier_csv<W: Write>(points: &[FrontierPoint], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FRONTIER_HEADER)?;
    for p in points {
        let m = &p.metrics;
        w.write_record(&[
            fmt_float(p.alpha),
            fmt_float(p.beta),
            fmt_float(m.impressions),
            fmt_float(m.impressions_se),
            fmt_float(m.clicks),
            fmt_float(m.clicks_se),
            fmt_float(m.welfare),
            fmt_float(m.welfare_se),
            fmt_float(m.revenue),
            fmt_float(m.revenue_se),
            m.samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

/// One auction reconstructed from a bid log. Types are unknown in logs, so
/// each bidder's value is set to their bid; welfare is therefore never
/// reported from replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayAuction {
    pub id: String,
    pub bidders: Vec<BidderProfile>,
}

/// A parsed replay log plus the count of malformed lines skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub auctions: Vec<ReplayAuction>,
    pub skipped: u64,
}

const REPLAY_INPUT_HEADER: [&str; 4] = ["auction_id", "bidder_id", "bid", "weight"];

/// Parses a replay log (`auction_id,bidder_id,bid,weight`). Lines that do
/// not parse — wrong field count, non-numeric or out-of-range bid/weight —
/// are skipped and counted. Auctions keep first-appearance order.
pub fn parse_replay_log<R: Read>(input: R) -> Result<ReplayLog, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() == 0 || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(ReplayLog { auctions: Vec::new(), skipped: 0 });
    }
    if headers.iter().ne(REPLAY_INPUT_HEADER.iter().copied()) {
        return Err(HarnessError::Data(format!(
            "replay log must start with header {:?}, found {:?}",
            REPLAY_INPUT_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut order: Vec<ReplayAuction> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut skipped = 0u64;
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        if rec.len() != 4 {
            skipped += 1;
            continue;
        }
        let bid = rec[2].trim().parse::<f64>();
        let weight = rec[3].trim().parse::<f64>();
        let (bid, weight) = match (bid, weight) {
            (Ok(b), Ok(w)) if b >= 0.0 && b.is_finite() && w > 0.0 && w.is_finite() => (b, w),
            _ => {
                skipped += 1;
                continue;
            }
        };
        // Types are unknown; value := bid keeps the profile well-formed.
        let profile = match BidderProfile::truthful(bid, weight) {
            Ok(p) => p,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let id = rec[0].to_string();
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(ReplayAuction { id: id.clone(), bidders: Vec::new() });
            order.len() - 1
        });
        order[slot].bidders.push(profile);
    }
    Ok(ReplayLog { auctions: order, skipped })
}

/// One replay output row: per-auction GSP outcomes averaged over the log.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    pub rule: String,
    pub r: f64,
    pub rho: f64,
    pub auctions: u64,
    pub skipped: u64,
    pub impressions: f64,
    pub clicks: f64,
    pub revenue: f64,
}

/// Fixed CSV column order for replay output.
pub const REPLAY_HEADER: [&str; 8] =
    ["rule", "r", "rho", "auctions", "skipped", "impressions", "clicks", "revenue"];

/// Replays every auction in the log under each grid point of the rule
/// family, charging GSP prices at the logged bids, and averages the
/// per-auction metrics. An empty log yields an empty report.
pub fn run_replay(
    log: &ReplayLog,
    family: RuleFamily,
    grid: &[f64],
    slots: &SlotLayout,
) -> Result<Vec<ReplayRow>, HarnessError> {
    if family == RuleFamily::Psi {
        return Err(HarnessError::Usage(
            "replay supports the classic rule families; psi ranking needs value \
             distributions a bid log cannot supply"
                .into(),
        ));
    }
    if log.auctions.is_empty() {
        return Ok(Vec::new());
    }
    let points = sweep_points(family, grid)?;
    let mut rows = Vec::with_capacity(points.len());
    for (r, rho) in points {
        let rule = match family {
            RuleFamily::Standard => RankingRule::Standard { reserve: r },
            RuleFamily::Subtractive => RankingRule::Subtractive { reserve: r },
            RuleFamily::Impression => RankingRule::ImpressionReserve { score_reserve: rho },
            RuleFamily::TwoParam => RankingRule::TwoParam { reserve: r, score_reserve: rho },
            RuleFamily::Psi => unreachable!("rejected above"),
        };
        let mut impressions = 0.0;
        let mut clicks = 0.0;
        let mut revenue = 0.0;
        for auction in &log.auctions {
            let out = gsp_payments(&rule, &auction.bidders, slots)?;
            impressions += out.metrics.impressions;
            clicks += out.metrics.clicks;
            revenue += out.metrics.revenue;
        }
        let n = log.auctions.len() as f64;
        rows.push(ReplayRow {
            rule: family.name().to_string(),
            r,
            rho,
            auctions: log.auctions.len() as u64,
            skipped: log.skipped,
            impressions: impressions / n,
            clicks: clicks / n,
            revenue: revenue / n,
        });
    }
    Ok(rows)
}

pub fn write_replay_csv<W: Write>(rows: &[ReplayRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPLAY_HEADER)?;
    for row in rows {
        w.write_record(&[
            row.rule.clone(),
            fmt_float(row.r),
            fmt_float(row.rho),
            row.auctions.to_string(),
            row.skipped.to_string(),
            fmt_float(row.impressions),
            fmt_float(row.clicks),
            fmt_float(row.revenue),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ad cap
// ---------------------------------------------------------------------------

/// One bidder in an ad-cap problem file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdCapBidderConfig {
    #[serde(default = "default_weight")]
    pub weight: f64,
    pub value: DistSpec,
}

fn default_weight() -> f64 {
    1.0
}

/// JSON schema for an ad-cap problem.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdCapConfig {
    pub bidders: Vec<AdCapBidderConfig>,
    pub terms: Vec<AdCapTerm>,
    pub weights: ObjectiveWeights,
    pub theta: f64,
}

impl AdCapConfig {
    pub fn build(&self) -> Result<AdCapProblem, HarnessError> {
        // theta == 0 forces the degenerate never-show policy; reject it here
        // so the CLI reports a data error instead of a vacuous solution.
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(HarnessError::Data(format!(
                "impression cap theta must be strictly positive, got {}",
                self.theta
            )));
        }
        let weights = ObjectiveWeights::new(self.weights.alpha, self.weights.beta, self.weights.gamma)?;
        let bidders = self
            .bidders
            .iter()
            .map(|b| Ok(CapBidder { weight: b.weight, value_dist: b.value.build()? }))
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let problem = AdCapProblem { bidders, terms: self.terms.clone(), weights, theta: self.theta };
        problem.validate()?;
        Ok(problem)
    }
}

pub fn load_adcap(path: &str) -> Result<AdCapConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Data(format!("cannot read ad-cap config '{path}': {e}")))?;
    serde_json::from_str::<AdCapConfig>(&text)
        .map_err(|e| HarnessError::Data(format!("ad-cap config '{path}': {e}")))
}

/// Solves the capped problem; the report serializes to JSON.
pub fn run_adcap(
    config: &AdCapConfig,
    est: &EstimatorConfig,
) -> Result<AdCapSolution, HarnessError> {
    let problem = config.build()?;
    solve_ad_cap(&problem, est).map_err(Into::into)
}

// ---------------------------------------------------------------------------
// Template equilibrium search
// ---------------------------------------------------------------------------

/// Options for a CLI-driven equilibrium search on a template scenario.
#[derive(Debug, Clone)]
pub struct SneSearchSpec {
    pub weights: ObjectiveWeights,
    pub payment: TemplatePayment,
    pub allocation: TemplateAllocation,
    pub config: GridSearchConfig,
    /// Deviation-grid resolution used to re-verify a found profile.
    pub verify_grid: usize,
}

/// Serializable search outcome.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SneSearchReport {
    pub scenario: String,
    pub found: bool,
    /// Bid profile of the first equilibrium found (lexicographic grid
    /// order), when there is one.
    pub bids: Option<Vec<f64>>,
    /// Profiles scanned before exhausting the grid, when none was found.
    pub profiles: Option<u64>,
    /// Grid points per bidder.
    pub resolution: usize,
    /// Whether the found profile also passed the independent verifier.
    pub verified: Option<bool>,
    /// The concrete types/weights the search ran on (drawn once,
    /// deterministically, from the scenario's distributions and seed).
    pub types: Vec<f64>,
    pub weights: Vec<f64>,
    pub classes: Vec<usize>,
}

pub fn parse_payment(name: &str) -> Result<TemplatePayment, HarnessError> {
    match name.to_ascii_lowercase().as_str() {
        "considerate" => Ok(TemplatePayment::Considerate),
        "indifferent" => Ok(TemplatePayment::Indifferent { cap: false }),
        "indifferent-cap" => Ok(TemplatePayment::Indifferent { cap: true }),
        other => Err(HarnessError::Usage(format!(
            "unknown payment style '{other}' (expected considerate, indifferent, or indifferent-cap)"
        ))),
    }
}

pub fn parse_allocation(name: &str) -> Result<TemplateAllocation, HarnessError> {
    match name.to_ascii_lowercase().as_str() {
        "standard" => Ok(TemplateAllocation::Standard),
        "second-highest" => Ok(TemplateAllocation::SecondHighest),
        other => Err(HarnessError::Usage(format!(
            "unknown allocation style '{other}' (expected standard or second-highest)"
        ))),
    }
}

/// Draws one concrete bidder instance from the scenario (seeded by its
/// config) and searches the bid grid for a symmetric Nash equilibrium.
pub fn run_sne_search(
    loaded: &LoadedScenario,
    spec: &SneSearchSpec,
) -> Result<SneSearchReport, HarnessError> {
    let templates = loaded.templates.as_ref().ok_or_else(|| {
        HarnessError::Data(format!(
            "scenario '{}' has no templates block; the equilibrium search needs one",
            loaded.config.name
        ))
    })?;
    let drawn = loaded.scenario.sample(sample_seed(loaded.config.seed, 0))?;
    let bidders: Vec<ClassedBidder> = drawn
        .iter()
        .zip(&loaded.classes)
        .map(|(&(t, w), &c)| ClassedBidder::truthful(c, t, w))
        .collect::<Result<_, _>>()?;
    let result = sne_grid_search(
        &spec.weights,
        &[],
        &bidders,
        templates,
        spec.payment,
        spec.allocation,
        &spec.config,
    )?;
    let (found, bids, profiles, verified) = match result {
        SneSearchResult::Found { bids, .. } => {
            let with_bids: Vec<ClassedBidder> = bidders
                .iter()
                .zip(&bids)
                .map(|(b, &bid)| ClassedBidder::new(b.class, b.value, b.weight, bid))
                .collect::<Result<_, _>>()?;
            let verdict = verify_template_sne(
                &spec.weights,
                &[],
                &with_bids,
                templates,
                spec.payment,
                spec.allocation,
                spec.verify_grid,
                spec.config.conservative,
                &spec.config.anchors,
            )?;
            (true, Some(bids), None, Some(verdict.is_ok()))
        }
        SneSearchResult::None { profiles, .. } => (false, None, Some(profiles), None),
    };
    Ok(SneSearchReport {
        scenario: loaded.config.name.clone(),
        found,
        bids,
        profiles,
        resolution: spec.config.grid,
        verified,
        types: bidders.iter().map(|b| b.value).collect(),
        weights: bidders.iter().map(|b| b.weight).collect(),
        classes: bidders.iter().map(|b| b.class).collect(),
    })
}

// ---------------------------------------------------------------------------
// Counterexamples
// ---------------------------------------------------------------------------

/// Resolves a counterexample name plus optional parameter overrides.
pub fn parse_counterexample(
    name: &str,
    m: Option<usize>,
    eps: Option<f64>,
    delta: Option<f64>,
) -> Result<CounterexampleKind, HarnessError> {
    let kind = match name.to_ascii_lowercase().as_str() {
        "non-implementation" => {
            CounterexampleKind::NonImplementation { eps: eps.unwrap_or(1e-3) }
        }
        "tc-nonexistence" => CounterexampleKind::TcNonexistence { eps: eps.unwrap_or(0.01) },
        "tc-unoptimal" => {
            CounterexampleKind::TcUnoptimal { m: m.unwrap_or(6), eps: eps.unwrap_or(1e-4) }
        }
        "ti-nonexistence" => CounterexampleKind::TiNonexistence {
            delta: delta.unwrap_or(0.1),
            eps: eps.unwrap_or(1e-4),
        },
        other => {
            return Err(HarnessError::Usage(format!(
                "unknown counterexample '{other}' (expected non-implementation, \
                 tc-nonexistence, tc-unoptimal, or ti-nonexistence)"
            )))
        }
    };
    Ok(kind)
}

/// Builds and re-checks a packaged counterexample. The report is returned
/// even when the claim fails to reproduce; callers decide the exit code
/// from `reproduced`.
pub fn run_counterexample(
    kind: CounterexampleKind,
) -> Result<(Counterexample, CounterexampleReport), HarnessError> {
    let cx = counterexample(kind)?;
    let report = check_counterexample(&cx)?;
    Ok((cx, report))
}

/// Exports a counterexample as a scenario config (point-mass value
/// distributions, fixed weights, the counterexample's templates block) so
/// it can be inspected or fed back through `sne-search`.
pub fn counterexample_scenario(cx: &Counterexample) -> ScenarioConfig {
    let slots: Vec<f64> = {
        let head = cx.templates.effects(0, 0);
        if !head.is_empty() && head.iter().all(|&e| e > 0.0) {
            head.to_vec()
        } else {
            vec![1.0]
        }
    };
    ScenarioConfig {
        name: cx.name.clone(),
        bidders: cx
            .bidders
            .iter()
            .map(|b| BidderGroup {
                count: 1,
                value: DistSpec::Point { value: b.value },
                weight: WeightSpec::Fixed(b.weight),
                correlation: 0.0,
                class: b.class,
            })
            .collect(),
        slots,
        seed: 0,
        templates: Some(cx.templates.clone().into()),
    }
}

/// Parses a comma-separated list of floats (CLI `--grid` and `--slots`).
pub fn parse_float_list(s: &str) -> Result<Vec<f64>, HarnessError> {
    let trimmed = s.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|e| HarnessError::Usage(format!("bad number '{}': {e}", tok.trim())))
        })
        .collect()
}
