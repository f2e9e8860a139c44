//! Simulation and optimization toolkit for sponsored-search ad auctions.
//!
//! The library models position auctions in which a search engine trades off
//! revenue, advertiser welfare, and user experience (clicks and impressions).
//! The pieces fit together like this:
//!
//! - [`valuations`]: value distributions, Myerson virtual valuations `phi`,
//!   the combined stakeholder score `psi(z) = alpha*phi(z) + beta*z + gamma`,
//!   reserve prices from `psi^{-1}(0)`, and linear approximations of `phi`
//!   for non-regular distributions.
//! - [`position_auction`]: scoring and eligibility rules, slot allocation,
//!   truthful (Myerson threshold) and GSP payments, lowest symmetric Nash
//!   equilibrium bid construction, and SNE verification.
//! - [`objectives`]: per-auction metrics (revenue, welfare, clicks,
//!   impressions), the scalar objective, and deterministic Monte Carlo
//!   estimation over sampled bidder populations.
//! - [`constrained`]: the ad-cap Lagrangian solver (a per-impression reserve
//!   found by bisection on a shadow price), Pareto frontier construction with
//!   concavity checking, and numerical weak-duality checks on discrete-type
//!   instances.
//! - [`templates`]: multi-class, multi-template auctions: truthful template
//!   allocation, template-considerate and template-indifferent GSP pricing,
//!   the monotone image/text allocation (MITA), exhaustive SNE grid search,
//!   and a suite of counterexample instances with machine-checkable claims.
//! - [`harness`]: scenario configuration, parameter sweeps, replay-log
//!   ingestion, and CSV emission; the thin CLI in `src/main.rs` delegates
//!   here.
//!
//! Everything is deterministic for a fixed seed: per-sample RNG streams are
//! derived by hashing (seed, sample index), so results are bit-identical
//! regardless of how many threads evaluate them.

pub mod constrained;
pub mod harness;
pub mod objectives;
pub mod position_auction;
pub mod templates;
pub mod valuations;
