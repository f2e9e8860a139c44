//! Single-template position auctions.
//!
//! Bidders are ranked by a score that is increasing in their bid; the top
//! scores fill the slots in order. Two payment rules are provided:
//!
//! - **Truthful (Myerson threshold) payments**: the bidder in slot `k` pays
//!   the averaged thresholds at which their allocation would change,
//!   `p_k = (1/s_k) * sum_{m=k..K} (s_m - s_{m+1}) * tau_m`, where `tau_m`
//!   is the minimum bid to reach slot `m` or better against the other
//!   bidders' fixed bids.
//! - **GSP payments**: each winner pays the minimum bid that retains their
//!   slot, i.e. the inverse score (in their own bid space) of the next
//!   eligible score below them, floored at their eligibility threshold.
//!
//! The two coincide in the *lowest symmetric Nash equilibrium*:
//! [`lowest_sne_bids`] constructs the bid profile in which GSP charges
//! exactly the truthful prices, and [`verify_sne`] checks the equilibrium
//! conditions (no profitable unilateral deviation on a bid grid, and exact
//! envy-freeness between every ordered pair of bidders).
//!
//! The construction requires scores affine in the bid (the four classic
//! rules, or the psi-ranking with a fitted linear virtual valuation);
//! nonlinear psi scores are refused rather than guessed at.

use crate::objectives::MetricsRecord;
use crate::valuations::{psi_spec, ObjectiveWeights, ValuationError, ValueDistribution, VirtualSpec};
use thiserror::Error;

/// Relative slack for eligibility comparisons at floating-point boundaries.
const ELIG_SLACK: f64 = 1e-9;

/// Errors from auction evaluation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum AuctionError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported rule: {0}")]
    UnsupportedRule(String),
    #[error("score could not be inverted: {0}")]
    NonInvertibleScore(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error(transparent)]
    Valuation(#[from] ValuationError),
}

/// Slot click-probability multipliers `s_1 >= s_2 >= ... >= s_K > 0`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SlotLayout {
    effects: Vec<f64>,
}

impl SlotLayout {
    pub fn new(effects: Vec<f64>) -> Result<Self, AuctionError> {
        if effects.is_empty() {
            return Err(AuctionError::InvalidInput("need at least one slot".into()));
        }
        for w in effects.windows(2) {
            if w[1] > w[0] {
                return Err(AuctionError::InvalidInput(format!(
                    "slot effects must be non-increasing, got {} before {}",
                    w[0], w[1]
                )));
            }
        }
        if effects.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(AuctionError::InvalidInput(
                "slot effects must be positive and finite".into(),
            ));
        }
        Ok(Self { effects })
    }

    pub fn effects(&self) -> &[f64] {
        &self.effects
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    /// Effect of slot `k` (0-based), with slots past the end counting as 0.
    pub fn effect(&self, k: usize) -> f64 {
        self.effects.get(k).copied().unwrap_or(0.0)
    }
}

/// One bidder: per-click value, ad effect (weight), and current bid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BidderProfile {
    pub value: f64,
    pub weight: f64,
    pub bid: f64,
}

impl BidderProfile {
    pub fn new(value: f64, weight: f64, bid: f64) -> Result<Self, AuctionError> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(AuctionError::InvalidInput(format!("value must be >= 0, got {value}")));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(AuctionError::InvalidInput(format!("weight must be > 0, got {weight}")));
        }
        if !(bid >= 0.0 && bid.is_finite()) {
            return Err(AuctionError::InvalidInput(format!("bid must be >= 0, got {bid}")));
        }
        Ok(Self { value, weight, bid })
    }

    /// A truthful bidder: bid equals value.
    pub fn truthful(value: f64, weight: f64) -> Result<Self, AuctionError> {
        Self::new(value, weight, value)
    }
}

/// Scoring and eligibility rule for ranking bidders.
///
/// Writing `b` for the bid, `w` for the ad effect, `r` for a per-click
/// reserve and `rho` for a score (per-impression) reserve:
///
/// | rule               | score        | eligible iff              |
/// |--------------------|--------------|---------------------------|
/// | `Standard`         | `w*b`        | `b >= r`                  |
/// | `Subtractive`      | `w*(b-r)`    | `b >= r`                  |
/// | `ImpressionReserve`| `w*b`        | `w*b >= rho`              |
/// | `TwoParam`         | `w*(b-r)`    | `b >= r` and `w*(b-r) >= rho` |
/// | `OptimalPsi`       | `w*psi(b)`   | `psi(b) >= 0`             |
#[derive(Debug, Clone, PartialEq)]
pub enum RankingRule {
    Standard { reserve: f64 },
    Subtractive { reserve: f64 },
    ImpressionReserve { score_reserve: f64 },
    TwoParam { reserve: f64, score_reserve: f64 },
    OptimalPsi { weights: ObjectiveWeights, virtuals: Vec<VirtualSpec> },
}

impl RankingRule {
    /// Optimal psi-ranking with one virtual-valuation spec shared by every
    /// bidder.
    pub fn optimal_psi_shared(weights: ObjectiveWeights, spec: VirtualSpec) -> Self {
        RankingRule::OptimalPsi { weights, virtuals: vec![spec] }
    }

    fn validate_reserves(&self) -> Result<(), AuctionError> {
        let ok = match self {
            RankingRule::Standard { reserve } | RankingRule::Subtractive { reserve } => {
                *reserve >= 0.0 && reserve.is_finite()
            }
            RankingRule::ImpressionReserve { score_reserve } => {
                *score_reserve >= 0.0 && score_reserve.is_finite()
            }
            RankingRule::TwoParam { reserve, score_reserve } => {
                *reserve >= 0.0 && *score_reserve >= 0.0
                    && reserve.is_finite()
                    && score_reserve.is_finite()
            }
            RankingRule::OptimalPsi { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(AuctionError::InvalidInput("reserves must be non-negative and finite".into()))
        }
    }

    /// True when the rule's score is affine in the bid for every bidder.
    pub fn is_linear_in_bid(&self) -> bool {
        match self {
            RankingRule::OptimalPsi { virtuals, .. } => virtuals.iter().all(|v| v.is_linear()),
            _ => true,
        }
    }

    pub(crate) fn scorers<'a>(
        &'a self,
        weights_of: &[f64],
    ) -> Result<Vec<Scorer<'a>>, AuctionError> {
        self.validate_reserves()?;
        let n = weights_of.len();
        if let RankingRule::OptimalPsi { virtuals, .. } = self {
            if virtuals.len() != 1 && virtuals.len() != n {
                return Err(AuctionError::InvalidInput(format!(
                    "need 1 or {n} virtual-valuation specs, got {}",
                    virtuals.len()
                )));
            }
        }
        (0..n).map(|i| Scorer::build(self, i, weights_of[i])).collect()
    }
}

/// Evaluates one public [`score`] query. For `OptimalPsi` the rule must hold
/// a single shared virtual-valuation spec (per-bidder specs need an index,
/// which allocation-level calls supply internally).
pub fn score(rule: &RankingRule, bid: f64, weight: f64) -> Result<(f64, bool), AuctionError> {
    if !(weight > 0.0) || !bid.is_finite() || !weight.is_finite() {
        return Err(AuctionError::InvalidInput(format!(
            "need finite bid and positive weight, got b={bid}, w={weight}"
        )));
    }
    if let RankingRule::OptimalPsi { virtuals, .. } = rule {
        if virtuals.len() != 1 {
            return Err(AuctionError::InvalidInput(
                "scoring a lone bid needs a shared virtual-valuation spec".into(),
            ));
        }
    }
    let scorer = Scorer::build(rule, 0, weight)?;
    Ok((scorer.score(bid)?, scorer.eligible(bid)?))
}

/// Per-bidder scoring function: either affine in the bid or a full
/// psi-through-a-distribution evaluation with a linear tail extension.
#[derive(Debug, Clone)]
pub(crate) enum Scorer<'a> {
    Affine {
        slope: f64,
        intercept: f64,
        /// Minimum bid for eligibility (-inf when only a score floor applies).
        min_bid: f64,
        /// Minimum score for eligibility (-inf when only a bid floor applies).
        min_score: f64,
    },
    Psi {
        weight: f64,
        weights: ObjectiveWeights,
        dist: &'a ValueDistribution,
        /// psi at the (slightly inset, if singular) support endpoints.
        psi_lo: f64,
        psi_hi: f64,
        /// Anchor abscissae for the endpoint values above.
        z_lo: f64,
        z_hi: f64,
        /// Secant slope used to extend psi beyond the support.
        ext_slope: f64,
    },
}

impl<'a> Scorer<'a> {
    fn build(rule: &'a RankingRule, index: usize, w: f64) -> Result<Self, AuctionError> {
        Ok(match rule {
            RankingRule::Standard { reserve } => Scorer::Affine {
                slope: w,
                intercept: 0.0,
                min_bid: *reserve,
                min_score: f64::NEG_INFINITY,
            },
            RankingRule::Subtractive { reserve } => Scorer::Affine {
                slope: w,
                intercept: -w * reserve,
                min_bid: *reserve,
                min_score: f64::NEG_INFINITY,
            },
            RankingRule::ImpressionReserve { score_reserve } => Scorer::Affine {
                slope: w,
                intercept: 0.0,
                min_bid: f64::NEG_INFINITY,
                min_score: *score_reserve,
            },
            RankingRule::TwoParam { reserve, score_reserve } => Scorer::Affine {
                slope: w,
                intercept: -w * reserve,
                min_bid: *reserve,
                min_score: *score_reserve,
            },
            RankingRule::OptimalPsi { weights, virtuals } => {
                let spec = if virtuals.len() == 1 { &virtuals[0] } else { &virtuals[index] };
                psi_scorer(weights, spec, w)?
            }
        })
    }

    pub(crate) fn is_affine(&self) -> bool {
        matches!(self, Scorer::Affine { .. })
    }

    fn psi_ext(&self, b: f64) -> Result<f64, AuctionError> {
        match self {
            Scorer::Affine { .. } => unreachable!("psi_ext is only called on Psi scorers"),
            Scorer::Psi { weights, dist, psi_lo, psi_hi, z_lo, z_hi, ext_slope, .. } => {
                if b < *z_lo {
                    Ok(psi_lo + (b - z_lo) * ext_slope)
                } else if b > *z_hi {
                    Ok(psi_hi + (b - z_hi) * ext_slope)
                } else {
                    Ok(crate::valuations::psi(weights, dist, b)?)
                }
            }
        }
    }

    pub(crate) fn score(&self, b: f64) -> Result<f64, AuctionError> {
        match self {
            Scorer::Affine { slope, intercept, .. } => Ok(slope * b + intercept),
            Scorer::Psi { weight, .. } => Ok(weight * self.psi_ext(b)?),
        }
    }

    pub(crate) fn eligible(&self, b: f64) -> Result<bool, AuctionError> {
        match self {
            Scorer::Affine { min_bid, min_score, .. } => {
                let slack_b = ELIG_SLACK * (1.0 + min_bid.abs().min(1e12));
                let slack_s = ELIG_SLACK * (1.0 + min_score.abs().min(1e12));
                Ok(b >= min_bid - slack_b && self.score(b)? >= min_score - slack_s)
            }
            Scorer::Psi { .. } => {
                let v = self.psi_ext(b)?;
                Ok(v >= -ELIG_SLACK * (1.0 + v.abs()))
            }
        }
    }

    /// Bid that achieves the given score (scores are strictly increasing in
    /// the bid, so this is well defined).
    pub(crate) fn invert(&self, target: f64) -> Result<f64, AuctionError> {
        match self {
            Scorer::Affine { slope, intercept, .. } => {
                if !(*slope > 0.0) {
                    return Err(AuctionError::NonInvertibleScore(format!(
                        "score slope {slope} is not positive"
                    )));
                }
                Ok((target - intercept) / slope)
            }
            Scorer::Psi { weight, psi_lo, psi_hi, z_lo, z_hi, ext_slope, .. } => {
                let t = target / weight;
                if t >= *psi_hi {
                    return Ok(z_hi + (t - psi_hi) / ext_slope);
                }
                if t <= *psi_lo {
                    return Ok(z_lo + (t - psi_lo) / ext_slope);
                }
                let (mut a, mut b) = (*z_lo, *z_hi);
                for _ in 0..100 {
                    let mid = 0.5 * (a + b);
                    if self.psi_ext(mid)? < t {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                Ok(0.5 * (a + b))
            }
        }
    }

    /// Minimum eligible bid (clamped at zero: bids are non-negative).
    pub(crate) fn floor_bid(&self) -> Result<f64, AuctionError> {
        let floor = match self {
            Scorer::Affine { min_bid, min_score, .. } => {
                let from_score = if min_score.is_finite() {
                    self.invert(*min_score)?
                } else {
                    f64::NEG_INFINITY
                };
                min_bid.max(from_score)
            }
            Scorer::Psi { .. } => self.invert(0.0)?,
        };
        Ok(floor.max(0.0))
    }
}

/// Builds the scoring function `b -> w * psi(b)` for one bidder under an
/// objective-weighted virtual valuation, with eligibility `psi(b) >= 0`.
pub(crate) fn psi_scorer<'a>(
    weights: &ObjectiveWeights,
    spec: &'a VirtualSpec,
    w: f64,
) -> Result<Scorer<'a>, AuctionError> {
    Ok(match spec {
        VirtualSpec::Linear(lv) => Scorer::Affine {
            slope: w * (weights.alpha * lv.slope + weights.beta),
            intercept: w * (weights.alpha * lv.intercept + weights.gamma),
            min_bid: f64::NEG_INFINITY,
            min_score: 0.0,
        },
        VirtualSpec::Distribution(dist) => {
            let (c, d) = dist.support();
            // Anchor just inside the support if the density vanishes at the
            // very endpoint.
            let mut z_lo = c;
            let mut psi_lo = psi_spec(weights, spec, c);
            for inset in [1e-9, 1e-6, 1e-3] {
                if psi_lo.is_ok() {
                    break;
                }
                z_lo = c + (d - c) * inset;
                psi_lo = psi_spec(weights, spec, z_lo);
            }
            let psi_lo = psi_lo?;
            let mut z_hi = d;
            let mut psi_hi = psi_spec(weights, spec, d);
            for inset in [1e-9, 1e-6, 1e-3] {
                if psi_hi.is_ok() {
                    break;
                }
                z_hi = d - (d - c) * inset;
                psi_hi = psi_spec(weights, spec, z_hi);
            }
            let psi_hi = psi_hi?;
            let ext_slope = ((psi_hi - psi_lo) / (z_hi - z_lo)).max(1e-12);
            Scorer::Psi {
                weight: w,
                weights: *weights,
                dist,
                psi_lo,
                psi_hi,
                z_lo,
                z_hi,
                ext_slope,
            }
        }
    })
}

/// Result of an allocation (and optionally payment) computation.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    /// `by_slot[k]` is the bidder occupying slot `k`; may be shorter than
    /// the layout when too few bidders are eligible.
    pub by_slot: Vec<usize>,
    /// Rank score of every bidder (eligible or not).
    pub scores: Vec<f64>,
    /// Eligibility of every bidder.
    pub eligible: Vec<bool>,
    /// Per-click price per bidder; `Some` only for allocated bidders once a
    /// payment rule has run.
    pub prices: Vec<Option<f64>>,
    /// Aggregate metrics; zeros until computed from prices.
    pub metrics: MetricsRecord,
}

impl AuctionOutcome {
    /// Slot (0-based) occupied by `bidder`, if any.
    pub fn slot_of(&self, bidder: usize) -> Option<usize> {
        self.by_slot.iter().position(|&b| b == bidder)
    }

    /// Slot effect received by `bidder` (0 when unallocated).
    pub fn effect_of(&self, bidder: usize, slots: &SlotLayout) -> f64 {
        self.slot_of(bidder).map_or(0.0, |k| slots.effect(k))
    }
}

fn check_bidders(bidders: &[BidderProfile]) -> Result<(), AuctionError> {
    if bidders.is_empty() {
        return Err(AuctionError::InvalidInput("need at least one bidder".into()));
    }
    for (i, b) in bidders.iter().enumerate() {
        if !(b.weight > 0.0) || !b.bid.is_finite() || b.bid < 0.0 || !b.value.is_finite() {
            return Err(AuctionError::InvalidInput(format!(
                "bidder {i} has invalid fields: value={}, weight={}, bid={}",
                b.value, b.weight, b.bid
            )));
        }
    }
    Ok(())
}

/// Ranks eligible bidders by score (descending, ties to the lower index)
/// and fills slots top-down. Prices are left unset.
pub fn allocate(
    rule: &RankingRule,
    bidders: &[BidderProfile],
    slots: &SlotLayout,
) -> Result<AuctionOutcome, AuctionError> {
    check_bidders(bidders)?;
    let weights: Vec<f64> = bidders.iter().map(|b| b.weight).collect();
    let scorers = rule.scorers(&weights)?;
    allocate_scored(&scorers, bidders, slots)
}

pub(crate) fn allocate_scored(
    scorers: &[Scorer<'_>],
    bidders: &[BidderProfile],
    slots: &SlotLayout,
) -> Result<AuctionOutcome, AuctionError> {
    let n = bidders.len();
    let mut scores = vec![0.0; n];
    let mut eligible = vec![false; n];
    for i in 0..n {
        scores[i] = scorers[i].score(bidders[i].bid)?;
        eligible[i] = scorers[i].eligible(bidders[i].bid)?;
    }
    let mut ranked: Vec<usize> = (0..n).filter(|&i| eligible[i]).collect();
    ranked.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let by_slot: Vec<usize> = ranked.iter().take(slots.len()).copied().collect();
    Ok(AuctionOutcome {
        by_slot,
        scores,
        eligible,
        prices: vec![None; n],
        metrics: MetricsRecord::zero(),
    })
}

/// Truthful (Myerson threshold) per-click payments.
///
/// For the bidder in slot `k` the price averages the bid thresholds at
/// which their allocation would jump: `tau_m` is the larger of the inverse
/// score of the `m`-th best *eligible* competitor score and the bidder's own
/// eligibility floor. Ineligible bidders never enter the thresholds.
pub fn truthful_payments(
    rule: &RankingRule,
    bidders: &[BidderProfile],
    slots: &SlotLayout,
) -> Result<AuctionOutcome, AuctionError> {
    check_bidders(bidders)?;
    let weights: Vec<f64> = bidders.iter().map(|b| b.weight).collect();
    let scorers = rule.scorers(&weights)?;
    let mut outcome = allocate_scored(&scorers, bidders, slots)?;
    truthful_prices_scored(&scorers, &mut outcome, slots)?;
    outcome.metrics = crate::objectives::outcome_metrics(&outcome, bidders, slots);
    Ok(outcome)
}

pub(crate) fn truthful_prices_scored(
    scorers: &[Scorer<'_>],
    outcome: &mut AuctionOutcome,
    slots: &SlotLayout,
) -> Result<(), AuctionError> {
    let k_slots = slots.len();
    for (k, &i) in outcome.by_slot.iter().enumerate() {
        // Eligible competitor scores, best first.
        let mut comp: Vec<f64> = (0..outcome.scores.len())
            .filter(|&j| j != i && outcome.eligible[j])
            .map(|j| outcome.scores[j])
            .collect();
        comp.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        let floor = scorers[i].floor_bid()?;
        let s_k = slots.effect(k);
        let mut acc = 0.0;
        for m in k..k_slots {
            let tau = match comp.get(m) {
                Some(&sc) => scorers[i].invert(sc)?.max(floor),
                None => floor,
            };
            acc += (slots.effect(m) - slots.effect(m + 1)) * tau;
        }
        outcome.prices[i] = Some((acc / s_k).max(0.0));
    }
    Ok(())
}

/// GSP per-click payments: each winner pays the inverse score of the next
/// eligible score below them (their own bid space), floored at their
/// eligibility threshold. A winner with no eligible successor pays the
/// floor; ineligible bidders below them are ignored.
pub fn gsp_payments(
    rule: &RankingRule,
    bidders: &[BidderProfile],
    slots: &SlotLayout,
) -> Result<AuctionOutcome, AuctionError> {
    check_bidders(bidders)?;
    let weights: Vec<f64> = bidders.iter().map(|b| b.weight).collect();
    let scorers = rule.scorers(&weights)?;
    let mut outcome = allocate_scored(&scorers, bidders, slots)?;
    gsp_prices_scored(&scorers, &mut outcome)?;
    outcome.metrics = crate::objectives::outcome_metrics(&outcome, bidders, slots);
    Ok(outcome)
}

pub(crate) fn gsp_prices_scored(
    scorers: &[Scorer<'_>],
    outcome: &mut AuctionOutcome,
) -> Result<(), AuctionError> {
    // Ranking over all eligible bidders (allocated or not): the best
    // unallocated eligible bidder still constrains the last slot's price.
    let mut ranked: Vec<usize> = (0..outcome.scores.len()).filter(|&i| outcome.eligible[i]).collect();
    ranked.sort_by(|&a, &b| {
        outcome.scores[b]
            .partial_cmp(&outcome.scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for (pos, &i) in ranked.iter().enumerate().take(outcome.by_slot.len()) {
        let floor = scorers[i].floor_bid()?;
        let price = match ranked.get(pos + 1) {
            Some(&j) => scorers[i].invert(outcome.scores[j])?.max(floor),
            None => floor,
        };
        outcome.prices[i] = Some(price.max(0.0));
    }
    Ok(())
}

/// Constructs the lowest-SNE bid profile for truthful types.
///
/// Unallocated bidders bid their type; the top allocated bidder bids their
/// type; every other allocated bidder bids the amount that makes the bidder
/// one slot above pay exactly their truthful price under GSP. Requires
/// scores affine in bids (the equivalence construction does not extend to
/// nonlinear psi rankings).
pub fn lowest_sne_bids(
    rule: &RankingRule,
    types: &[(f64, f64)],
    slots: &SlotLayout,
) -> Result<Vec<f64>, AuctionError> {
    if !rule.is_linear_in_bid() {
        return Err(AuctionError::UnsupportedRule(
            "lowest-SNE construction needs scores linear in bids; \
             fit a linear virtual valuation for psi rankings"
                .into(),
        ));
    }
    let bidders: Vec<BidderProfile> = types
        .iter()
        .map(|&(t, w)| BidderProfile::truthful(t, w))
        .collect::<Result<_, _>>()?;
    let weights: Vec<f64> = bidders.iter().map(|b| b.weight).collect();
    let scorers = rule.scorers(&weights)?;
    lowest_sne_scored(&scorers, &bidders, slots)
}

/// Ladder construction behind [`lowest_sne_bids`], reusable with custom
/// scorers. `bidders` must bid their types.
pub(crate) fn lowest_sne_scored(
    scorers: &[Scorer<'_>],
    bidders: &[BidderProfile],
    slots: &SlotLayout,
) -> Result<Vec<f64>, AuctionError> {
    if !scorers.iter().all(Scorer::is_affine) {
        return Err(AuctionError::UnsupportedRule(
            "lowest-SNE construction needs scores linear in bids".into(),
        ));
    }
    let mut outcome = allocate_scored(scorers, bidders, slots)?;
    truthful_prices_scored(scorers, &mut outcome, slots)?;

    let mut bids: Vec<f64> = bidders.iter().map(|b| b.bid).collect();
    for k in (1..outcome.by_slot.len()).rev() {
        let above = outcome.by_slot[k - 1];
        let here = outcome.by_slot[k];
        let target_price = outcome.prices[above].expect("allocated bidders are priced");
        // The bid that makes `above` pay `target_price`: above's price is
        // the inverse of the score below, so the score below must equal
        // above's score at the target price.
        let target_score = scorers[above].score(target_price)?;
        let b = scorers[here].invert(target_score)?;
        bids[here] = b.max(0.0);
    }
    Ok(bids)
}

/// Verdict of an equilibrium check.
#[derive(Debug, Clone, PartialEq)]
pub enum SneVerdict {
    Ok,
    Violation(String),
}

impl SneVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, SneVerdict::Ok)
    }
}

impl std::fmt::Display for SneVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SneVerdict::Ok => write!(f, "ok"),
            SneVerdict::Violation(msg) => write!(f, "violation: {msg}"),
        }
    }
}

/// Checks the symmetric Nash equilibrium conditions for a bid profile under
/// GSP pricing:
///
/// 1. **Nash**: no bidder gains from any unilateral deviation on an
///    equispaced grid of `deviation_grid` bids over `[0, t_i]`.
/// 2. **Envy-freeness** (exact): for every ordered pair `(i, j)`,
///    `x_j * (t_i - (w_j/w_i) * p_j) <= x_i * (t_i - p_i)`.
///
/// With `conservative` set, bids above types are rejected up front.
pub fn verify_sne(
    rule: &RankingRule,
    types: &[(f64, f64)],
    bids: &[f64],
    slots: &SlotLayout,
    deviation_grid: usize,
    conservative: bool,
) -> Result<SneVerdict, AuctionError> {
    if types.len() != bids.len() {
        return Err(AuctionError::InvalidInput(format!(
            "{} types but {} bids",
            types.len(),
            bids.len()
        )));
    }
    let scale = types.iter().map(|&(t, _)| t.abs()).fold(1.0f64, f64::max);
    let tol = 1e-9 * scale;
    if conservative {
        for (i, (&(t, _), &b)) in types.iter().zip(bids).enumerate() {
            if b > t + tol {
                return Ok(SneVerdict::Violation(format!(
                    "bidder {i} bids {b} above their value {t} (conservative check)"
                )));
            }
        }
    }
    let bidders: Vec<BidderProfile> = types
        .iter()
        .zip(bids)
        .map(|(&(t, w), &b)| BidderProfile::new(t, w, b))
        .collect::<Result<_, _>>()?;
    let outcome = gsp_payments(rule, &bidders, slots)?;

    let n = bidders.len();
    let utility = |i: usize, out: &AuctionOutcome| -> f64 {
        match out.slot_of(i) {
            Some(k) => slots.effect(k) * (bidders[i].value - out.prices[i].unwrap_or(0.0)),
            None => 0.0,
        }
    };
    let base: Vec<f64> = (0..n).map(|i| utility(i, &outcome)).collect();

    // Envy-freeness over every ordered pair.
    for i in 0..n {
        let (t_i, w_i) = types[i];
        let rhs = base[i];
        for j in 0..n {
            if i == j {
                continue;
            }
            let x_j = outcome.effect_of(j, slots);
            if x_j == 0.0 {
                continue;
            }
            let p_j = outcome.prices[j].unwrap_or(0.0);
            let w_j = types[j].1;
            let lhs = x_j * (t_i - (w_j / w_i) * p_j);
            if lhs > rhs + tol {
                return Ok(SneVerdict::Violation(format!(
                    "bidder {i} envies bidder {j}'s slot: {lhs:.9} > {rhs:.9}"
                )));
            }
        }
    }

    // Grid Nash deviations.
    if deviation_grid >= 2 {
        let mut work = bidders.clone();
        for i in 0..n {
            let (t_i, _) = types[i];
            for g in 0..deviation_grid {
                let b = t_i * g as f64 / (deviation_grid - 1) as f64;
                work[i].bid = b;
                let dev = gsp_payments(rule, &work, slots)?;
                let u = utility(i, &dev);
                if u > base[i] + tol {
                    return Ok(SneVerdict::Violation(format!(
                        "bidder {i} gains by deviating to bid {b}: {u:.9} > {:.9}",
                        base[i]
                    )));
                }
            }
            work[i].bid = bidders[i].bid;
        }
    }
    Ok(SneVerdict::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuations::LinearVirtual;

    fn slots(effects: &[f64]) -> SlotLayout {
        SlotLayout::new(effects.to_vec()).unwrap()
    }

    fn truthful(ts: &[f64], ws: &[f64]) -> Vec<BidderProfile> {
        ts.iter()
            .zip(ws)
            .map(|(&t, &w)| BidderProfile::truthful(t, w).unwrap())
            .collect()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn score_rules() {
        let (s, e) = score(&RankingRule::Standard { reserve: 0.3 }, 0.5, 2.0).unwrap();
        assert_eq!((s, e), (1.0, true));

        let (s, e) = score(&RankingRule::Subtractive { reserve: 0.5 }, 0.4, 1.0).unwrap();
        assert!(close(s, -0.1, 1e-12));
        assert!(!e);

        let dist = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let rule = RankingRule::optimal_psi_shared(
            ObjectiveWeights::revenue(),
            VirtualSpec::Distribution(dist),
        );
        let (s, e) = score(&rule, 0.75, 1.0).unwrap();
        assert!(close(s, 0.5, 1e-9));
        assert!(e);
    }

    #[test]
    fn allocation_order_and_ties() {
        let sl = slots(&[1.0, 0.5]);
        let rule = RankingRule::Standard { reserve: 0.0 };
        let out = allocate(&rule, &truthful(&[3.0, 2.0, 1.0], &[1.0; 3]), &sl).unwrap();
        assert_eq!(out.by_slot, vec![0, 1]);

        let rule = RankingRule::ImpressionReserve { score_reserve: 2.5 };
        let out = allocate(&rule, &truthful(&[3.0, 2.0, 1.0], &[1.0; 3]), &sl).unwrap();
        assert_eq!(out.by_slot, vec![0]);

        let rule = RankingRule::Standard { reserve: 0.0 };
        let out = allocate(&rule, &truthful(&[2.0, 2.0], &[1.0; 2]), &sl).unwrap();
        assert_eq!(out.by_slot[0], 0, "ties break to the lower index");
    }

    #[test]
    fn truthful_payment_examples() {
        let sl = slots(&[1.0, 0.5]);
        let rule = RankingRule::Standard { reserve: 0.0 };
        let out = truthful_payments(&rule, &truthful(&[3.0, 2.0, 1.0], &[1.0; 3]), &sl).unwrap();
        assert!(close(out.prices[0].unwrap(), 1.5, 1e-12));
        assert!(close(out.prices[1].unwrap(), 1.0, 1e-12));
        assert_eq!(out.prices[2], None);

        let rule = RankingRule::Standard { reserve: 0.4 };
        let out = truthful_payments(&rule, &truthful(&[1.0], &[1.0]), &slots(&[1.0])).unwrap();
        assert!(close(out.prices[0].unwrap(), 0.4, 1e-12));

        // With a score reserve of 1.2, bidder 2 (score 1.0) is ineligible
        // and never enters the thresholds; the floor 1.2 does instead.
        let rule = RankingRule::ImpressionReserve { score_reserve: 1.2 };
        let out = truthful_payments(&rule, &truthful(&[3.0, 2.0, 1.0], &[1.0; 3]), &sl).unwrap();
        assert!(close(out.prices[0].unwrap(), 1.6, 1e-12), "{:?}", out.prices);
        assert!(close(out.prices[1].unwrap(), 1.2, 1e-12));
    }

    #[test]
    fn gsp_payment_examples() {
        let sl = slots(&[1.0, 0.5]);
        let rule = RankingRule::Standard { reserve: 0.0 };
        let out = gsp_payments(&rule, &truthful(&[3.0, 2.0, 1.0], &[1.0; 3]), &sl).unwrap();
        assert!(close(out.prices[0].unwrap(), 2.0, 1e-12));
        assert!(close(out.prices[1].unwrap(), 1.0, 1e-12));

        let rule = RankingRule::Subtractive { reserve: 0.5 };
        let out = gsp_payments(&rule, &truthful(&[3.0, 2.0, 1.0], &[1.0; 3]), &sl).unwrap();
        assert!(close(out.prices[0].unwrap(), 2.0, 1e-12), "{:?}", out.prices);
        assert!(close(out.prices[1].unwrap(), 1.0, 1e-12));

        let rule = RankingRule::Standard { reserve: 0.4 };
        let out = gsp_payments(&rule, &truthful(&[1.0], &[1.0]), &slots(&[1.0])).unwrap();
        assert!(close(out.prices[0].unwrap(), 0.4, 1e-12));
    }

    #[test]
    fn lowest_sne_reproduces_truthful_prices() {
        let sl = slots(&[1.0, 0.5]);
        let rule = RankingRule::Standard { reserve: 0.0 };
        let types = vec![(3.0, 1.0), (2.0, 1.0), (1.0, 1.0)];
        let bids = lowest_sne_bids(&rule, &types, &sl).unwrap();
        assert!(close(bids[0], 3.0, 1e-12));
        assert!(close(bids[1], 1.5, 1e-12));
        assert!(close(bids[2], 1.0, 1e-12));

        let bidders: Vec<BidderProfile> = types
            .iter()
            .zip(&bids)
            .map(|(&(t, w), &b)| BidderProfile::new(t, w, b).unwrap())
            .collect();
        let gsp = gsp_payments(&rule, &bidders, &sl).unwrap();
        let tru = truthful_payments(&rule, &truthful(&[3.0, 2.0, 1.0], &[1.0; 3]), &sl).unwrap();
        for i in 0..2 {
            assert!(close(gsp.prices[i].unwrap(), tru.prices[i].unwrap(), 1e-9));
        }
    }

    #[test]
    fn lowest_sne_single_bidder_and_weighted() {
        let rule = RankingRule::Standard { reserve: 0.0 };
        let bids = lowest_sne_bids(&rule, &[(1.0, 1.0)], &slots(&[1.0])).unwrap();
        assert_eq!(bids, vec![1.0]);

        let sl = slots(&[1.0, 0.5]);
        let types = vec![(3.0, 2.0), (2.0, 1.0), (1.0, 1.0)];
        let bids = lowest_sne_bids(&rule, &types, &sl).unwrap();
        let bidders: Vec<BidderProfile> = types
            .iter()
            .zip(&bids)
            .map(|(&(t, w), &b)| BidderProfile::new(t, w, b).unwrap())
            .collect();
        let gsp = gsp_payments(&rule, &bidders, &sl).unwrap();
        let tru = truthful_payments(
            &rule,
            &types
                .iter()
                .map(|&(t, w)| BidderProfile::truthful(t, w).unwrap())
                .collect::<Vec<_>>(),
            &sl,
        )
        .unwrap();
        for i in 0..3 {
            match (gsp.prices[i], tru.prices[i]) {
                (Some(a), Some(b)) => assert!(close(a, b, 1e-9), "bidder {i}: {a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn nonlinear_psi_is_refused() {
        let dist = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let rule = RankingRule::optimal_psi_shared(
            ObjectiveWeights::revenue(),
            VirtualSpec::Distribution(dist),
        );
        let err = lowest_sne_bids(&rule, &[(0.8, 1.0)], &slots(&[1.0])).unwrap_err();
        assert!(matches!(err, AuctionError::UnsupportedRule(_)));

        // The linear fit of the same (uniform) distribution is accepted.
        let lv = LinearVirtual::new(2.0, -1.0, 0.0).unwrap();
        let rule = RankingRule::optimal_psi_shared(
            ObjectiveWeights::revenue(),
            VirtualSpec::Linear(lv),
        );
        let bids = lowest_sne_bids(&rule, &[(0.8, 1.0)], &slots(&[1.0])).unwrap();
        assert_eq!(bids, vec![0.8]);
    }

    #[test]
    fn verify_sne_accepts_construction_and_flags_envy() {
        let sl = slots(&[1.0, 0.5]);
        let rule = RankingRule::Standard { reserve: 0.0 };
        let types = vec![(3.0, 1.0), (2.0, 1.0), (1.0, 1.0)];
        let bids = lowest_sne_bids(&rule, &types, &sl).unwrap();
        let verdict = verify_sne(&rule, &types, &bids, &sl, 1000, false).unwrap();
        assert!(verdict.is_ok(), "{verdict}");

        // Bidder 0 envies slot 2's bargain: 0.5*(3-1) = 1 > 1*(3-2.9).
        let verdict =
            verify_sne(&rule, &types, &[3.0, 2.9, 1.0], &sl, 0, false).unwrap();
        assert!(!verdict.is_ok());
    }

    #[test]
    fn verify_sne_all_below_reserve() {
        let sl = slots(&[1.0]);
        let rule = RankingRule::Standard { reserve: 2.0 };
        let types = vec![(1.0, 1.0), (0.5, 1.0)];
        let verdict = verify_sne(&rule, &types, &[0.0, 0.0], &sl, 100, true).unwrap();
        assert!(verdict.is_ok(), "{verdict}");
    }

    #[test]
    fn allocation_monotone_in_own_bid() {
        // Randomized probe of allocation monotonicity: raising one bid never
        // lowers that bidder's slot effect.
        let sl = slots(&[1.0, 0.6, 0.36]);
        let rules = [
            RankingRule::Standard { reserve: 0.4 },
            RankingRule::Subtractive { reserve: 0.4 },
            RankingRule::ImpressionReserve { score_reserve: 0.8 },
            RankingRule::TwoParam { reserve: 0.2, score_reserve: 0.5 },
        ];
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for rule in &rules {
            for _ in 0..200 {
                let n = 4;
                let mut bidders: Vec<BidderProfile> = (0..n)
                    .map(|_| {
                        BidderProfile::new(next() * 2.0, 0.5 + next(), next() * 2.0).unwrap()
                    })
                    .collect();
                let i = (next() * n as f64) as usize % n;
                let out1 = allocate(rule, &bidders, &sl).unwrap();
                let x1 = out1.effect_of(i, &sl);
                bidders[i].bid += next();
                let out2 = allocate(rule, &bidders, &sl).unwrap();
                let x2 = out2.effect_of(i, &sl);
                assert!(x2 >= x1 - 1e-12, "raising bid lowered effect: {x1} -> {x2}");
            }
        }
    }

    #[test]
    fn payment_bracketing() {
        let sl = slots(&[1.0, 0.6, 0.36]);
        let rule = RankingRule::TwoParam { reserve: 0.3, score_reserve: 0.4 };
        let bidders = truthful(&[2.0, 1.5, 1.0, 0.8], &[1.0, 0.8, 1.2, 0.9]);
        let out = truthful_payments(&rule, &bidders, &sl).unwrap();
        let weights: Vec<f64> = bidders.iter().map(|b| b.weight).collect();
        let scorers = rule.scorers(&weights).unwrap();
        for (i, b) in bidders.iter().enumerate() {
            if let Some(p) = out.prices[i] {
                let floor = scorers[i].floor_bid().unwrap();
                assert!(p >= floor - 1e-12, "price {p} below floor {floor}");
                assert!(p <= b.bid + 1e-12, "price {p} above bid {}", b.bid);
            }
        }
    }

    #[test]
    fn gsp_score_normalized_prices_decrease_down_slots() {
        let sl = slots(&[1.0, 0.6, 0.36]);
        let rule = RankingRule::Standard { reserve: 0.1 };
        let bidders = truthful(&[2.0, 1.5, 1.0, 0.8], &[1.1, 0.9, 1.3, 1.0]);
        let out = gsp_payments(&rule, &bidders, &sl).unwrap();
        let mut prev = f64::INFINITY;
        for &i in &out.by_slot {
            let wp = bidders[i].weight * out.prices[i].unwrap();
            assert!(wp <= prev + 1e-12);
            prev = wp;
        }
    }
}
