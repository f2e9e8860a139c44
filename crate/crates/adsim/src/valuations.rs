//! Value distributions, virtual valuations, and the combined score function.
//!
//! A bidder's per-click value `t` is drawn from a distribution with compact
//! support `[c, d]`, density `f`, and CDF `F`. The Myerson virtual valuation
//! is `phi(t) = t - (1 - F(t)) / f(t)`; a distribution is *regular* when
//! `phi` is non-decreasing. The stakeholder trade-off is expressed through
//!
//! ```text
//! psi(z) = alpha * phi(z) + beta * z + gamma
//! ```
//!
//! with `alpha, beta, gamma >= 0` and `alpha + beta > 0`. Ranking bidders by
//! `w * psi(bid)` and showing only non-negative scores maximizes
//! `alpha * revenue + beta * welfare + gamma * clicks`; the per-click reserve
//! implied by the ranking is `psi^{-1}(0)`.
//!
//! Non-regular distributions make `psi` non-monotone; the operations here
//! detect that on a probe grid and steer callers to [`linear_fit_virtual`],
//! which replaces `phi` with its least-squares line (exact for uniform
//! distributions, whose `phi` is already linear).

use statrs::distribution::{Beta as BetaDist, Continuous, ContinuousCDF, Normal};
use thiserror::Error;

/// Default number of probe points used for monotonicity scans.
pub const DEFAULT_PROBE_GRID: usize = 1024;

/// Default bisection tolerance, in value units.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Slack allowed when testing "non-decreasing" on a probe grid.
const MONOTONE_SLACK: f64 = 1e-9;

/// Errors from distribution and score evaluations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ValuationError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),
    #[error("point {z} outside support [{lo}, {hi}]")]
    OutOfSupport { z: f64, lo: f64, hi: f64 },
    #[error("density vanishes at {z}; virtual valuation undefined")]
    SingularDensity { z: f64 },
    #[error("psi is not monotone near {at}; fit a linear virtual valuation instead")]
    NonMonotonePsi { at: f64 },
    #[error("linear fit failed: {0}")]
    DegenerateFit(String),
}

/// Objective weights `(alpha, beta, gamma)` for revenue, welfare, and clicks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ObjectiveWeights {
    /// Builds a weight triple. All components must be non-negative and
    /// `alpha + beta` must be strictly positive (a pure click objective
    /// would put no weight on values at all).
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ValuationError> {
        if !(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0) {
            return Err(ValuationError::InvalidParameters(format!(
                "weights must be non-negative, got ({alpha}, {beta}, {gamma})"
            )));
        }
        if alpha + beta <= 0.0 {
            return Err(ValuationError::InvalidParameters(
                "alpha + beta must be positive".into(),
            ));
        }
        if !(alpha.is_finite() && beta.is_finite() && gamma.is_finite()) {
            return Err(ValuationError::InvalidParameters(
                "weights must be finite".into(),
            ));
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// Pure revenue objective (1, 0, 0).
    pub fn revenue() -> Self {
        Self { alpha: 1.0, beta: 0.0, gamma: 0.0 }
    }

    /// Pure welfare objective (0, 1, 0).
    pub fn welfare() -> Self {
        Self { alpha: 0.0, beta: 1.0, gamma: 0.0 }
    }
}

/// A least-squares linear stand-in for a virtual valuation.
///
/// `fit_error` is the largest absolute deviation between the line and the
/// true `phi` over the fit grid, so callers can judge the approximation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearVirtual {
    pub slope: f64,
    pub intercept: f64,
    pub fit_error: f64,
}

impl LinearVirtual {
    pub fn new(slope: f64, intercept: f64, fit_error: f64) -> Result<Self, ValuationError> {
        if !(slope > 0.0) {
            return Err(ValuationError::InvalidParameters(format!(
                "linear virtual valuation needs positive slope, got {slope}"
            )));
        }
        Ok(Self { slope, intercept, fit_error })
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.slope * z + self.intercept
    }
}

/// Either a full distribution or a pre-fitted linear virtual valuation.
///
/// Scoring rules carry one of these per bidder: the linear form keeps rank
/// scores affine in the bid, which the equilibrium-bid construction requires.
#[derive(Debug, Clone, PartialEq)]
pub enum VirtualSpec {
    Distribution(ValueDistribution),
    Linear(LinearVirtual),
}

impl VirtualSpec {
    pub fn is_linear(&self) -> bool {
        matches!(self, VirtualSpec::Linear(_))
    }
}

/// A value distribution with compact support.
///
/// Supported kinds: uniform on `[lo, hi]`, lognormal (truncated to central
/// quantiles so the support is compact), beta on `[0, 1]`, and empirical
/// (a Gaussian-kernel smoothed CDF over a finite sample, so the density is
/// strictly positive and virtual valuations are defined).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDistribution {
    kind: DistKind,
    support: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
enum DistKind {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Lognormal {
        mu: f64,
        sigma: f64,
        q_lo: f64,
        q_hi: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
    Empirical {
        sample: Vec<f64>,
        bandwidth: f64,
        // Raw (untruncated) smoothed CDF mass at the support endpoints,
        // cached for renormalization.
        cdf_lo: f64,
        cdf_hi: f64,
    },
    Point {
        v: f64,
    },
}

/// Default lower truncation quantile for lognormal supports.
pub const LOGNORMAL_Q_LO: f64 = 0.001;
/// Default upper truncation quantile for lognormal supports.
pub const LOGNORMAL_Q_HI: f64 = 0.999;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal is always valid")
}

impl ValueDistribution {
    /// Uniform distribution on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, ValuationError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ValuationError::InvalidParameters(format!(
                "uniform requires lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { kind: DistKind::Uniform { lo, hi }, support: (lo, hi) })
    }

    /// Lognormal distribution truncated to its default central quantiles.
    ///
    /// The underlying lognormal has unbounded support; truncating at the
    /// 0.1% and 99.9% quantiles (and renormalizing) produces the compact
    /// interval the auction theory needs while changing the shape only in
    /// the far tails.
    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self, ValuationError> {
        Self::lognormal_truncated(mu, sigma, LOGNORMAL_Q_LO, LOGNORMAL_Q_HI)
    }

    /// Lognormal truncated at configurable quantiles `0 < q_lo < q_hi < 1`.
    pub fn lognormal_truncated(
        mu: f64,
        sigma: f64,
        q_lo: f64,
        q_hi: f64,
    ) -> Result<Self, ValuationError> {
        if !(sigma > 0.0 && mu.is_finite() && sigma.is_finite()) {
            return Err(ValuationError::InvalidParameters(format!(
                "lognormal requires sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        if !(0.0 < q_lo && q_lo < q_hi && q_hi < 1.0) {
            return Err(ValuationError::InvalidParameters(format!(
                "truncation quantiles must satisfy 0 < q_lo < q_hi < 1, got ({q_lo}, {q_hi})"
            )));
        }
        let n = std_normal();
        let c = (mu + sigma * n.inverse_cdf(q_lo)).exp();
        let d = (mu + sigma * n.inverse_cdf(q_hi)).exp();
        Ok(Self { kind: DistKind::Lognormal { mu, sigma, q_lo, q_hi }, support: (c, d) })
    }

    /// Beta distribution on `[0, 1]` with shape parameters `a, b > 0`.
    pub fn beta(a: f64, b: f64) -> Result<Self, ValuationError> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(ValuationError::InvalidParameters(format!(
                "beta requires a, b > 0, got ({a}, {b})"
            )));
        }
        Ok(Self { kind: DistKind::Beta { a, b }, support: (0.0, 1.0) })
    }

    /// Empirical distribution: Gaussian-kernel smoothed CDF over a sample.
    ///
    /// The bandwidth follows Silverman's rule. Smoothing keeps the density
    /// strictly positive inside the support, which the virtual valuation
    /// needs; the support is the sample range padded by three bandwidths
    /// (clamped below at zero, since values are non-negative).
    pub fn empirical(sample: &[f64]) -> Result<Self, ValuationError> {
        if sample.is_empty() {
            return Err(ValuationError::InvalidParameters("empirical sample is empty".into()));
        }
        if sample.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(ValuationError::InvalidParameters(
                "empirical sample values must be finite and non-negative".into(),
            ));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let sd = if sorted.len() > 1 {
            (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let iqr = interp_quantile(&sorted, 0.75) - interp_quantile(&sorted, 0.25);
        let spread = match (sd > 0.0, iqr > 0.0) {
            (true, true) => sd.min(iqr / 1.34),
            (true, false) => sd,
            (false, true) => iqr / 1.34,
            // Degenerate sample (all values equal): pick a small positive
            // bandwidth relative to the magnitude so the density exists.
            (false, false) => 1e-3 * (1.0 + mean.abs()),
        };
        let bandwidth = 0.9 * spread * n.powf(-0.2);
        let lo = (sorted[0] - 3.0 * bandwidth).max(0.0);
        let hi = sorted[sorted.len() - 1] + 3.0 * bandwidth;
        let cdf_lo = kernel_cdf(&sorted, bandwidth, lo);
        let cdf_hi = kernel_cdf(&sorted, bandwidth, hi);
        Ok(Self {
            kind: DistKind::Empirical { sample: sorted, bandwidth, cdf_lo, cdf_hi },
            support: (lo, hi),
        })
    }

    /// Degenerate point mass at `v >= 0`: every quantile is exactly `v`.
    ///
    /// Useful for replaying a fixed, known value profile through the
    /// scenario machinery (each bidder's "distribution" is their exact
    /// value). A point mass has no density, so virtual valuations — and any
    /// scoring rule that needs them — reject it with a clear error.
    pub fn point(v: f64) -> Result<Self, ValuationError> {
        if !(v.is_finite() && v >= 0.0) {
            return Err(ValuationError::InvalidParameters(format!(
                "point mass requires a finite non-negative value, got {v}"
            )));
        }
        Ok(Self { kind: DistKind::Point { v }, support: (v, v) })
    }

    /// The compact support `[c, d]`.
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    fn check_support(&self, z: f64) -> Result<(), ValuationError> {
        let (lo, hi) = self.support;
        // Allow a hair of floating-point slop at the endpoints.
        let slack = 1e-12 * (1.0 + hi.abs());
        if z < lo - slack || z > hi + slack || !z.is_finite() {
            return Err(ValuationError::OutOfSupport { z, lo, hi });
        }
        Ok(())
    }

    /// Density and CDF at `z`. Errors if `z` is outside the support.
    pub fn density_cdf(&self, z: f64) -> Result<(f64, f64), ValuationError> {
        self.check_support(z)?;
        let (lo, hi) = self.support;
        let z = z.clamp(lo, hi);
        let (f, cdf) = match &self.kind {
            DistKind::Uniform { lo, hi } => {
                let width = hi - lo;
                (1.0 / width, (z - lo) / width)
            }
            DistKind::Lognormal { mu, sigma, q_lo, q_hi } => {
                let n = std_normal();
                let mass = q_hi - q_lo;
                let y = (z.ln() - mu) / sigma;
                let raw_f = n.pdf(y) / (z * sigma);
                let raw_cdf = n.cdf(y);
                (raw_f / mass, ((raw_cdf - q_lo) / mass).clamp(0.0, 1.0))
            }
            DistKind::Beta { a, b } => {
                let dist = BetaDist::new(*a, *b).expect("validated at construction");
                (dist.pdf(z), dist.cdf(z))
            }
            DistKind::Empirical { sample, bandwidth, cdf_lo, cdf_hi } => {
                let mass = cdf_hi - cdf_lo;
                let raw_f = kernel_pdf(sample, *bandwidth, z);
                let raw_cdf = kernel_cdf(sample, *bandwidth, z);
                (raw_f / mass, ((raw_cdf - cdf_lo) / mass).clamp(0.0, 1.0))
            }
            DistKind::Point { v } => {
                return Err(ValuationError::InvalidParameters(format!(
                    "point mass at {v} has no density; virtual valuations and \
                     distribution-backed scoring are undefined for it"
                )));
            }
        };
        Ok((f.max(0.0), cdf))
    }

    /// Inverse CDF; `p` must lie in `[0, 1]`. Used for inverse-transform
    /// sampling so draws are a deterministic function of the uniform input.
    pub fn quantile(&self, p: f64) -> Result<f64, ValuationError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ValuationError::InvalidParameters(format!(
                "quantile probability must be in [0,1], got {p}"
            )));
        }
        let (lo, hi) = self.support;
        let z = match &self.kind {
            DistKind::Uniform { lo, hi } => lo + p * (hi - lo),
            DistKind::Lognormal { mu, sigma, q_lo, q_hi } => {
                let n = std_normal();
                let q = q_lo + p * (q_hi - q_lo);
                (mu + sigma * n.inverse_cdf(q)).exp()
            }
            DistKind::Beta { a, b } => {
                // statrs's generic inverse_cdf bisects on a coarse grid
                // (~2^-15 of the support); bisect the CDF ourselves so the
                // quantile/CDF round trip is tight.
                let dist = BetaDist::new(*a, *b).expect("validated at construction");
                let (mut za, mut zb) = (0.0f64, 1.0f64);
                for _ in 0..60 {
                    let mid = 0.5 * (za + zb);
                    if dist.cdf(mid) < p {
                        za = mid;
                    } else {
                        zb = mid;
                    }
                }
                0.5 * (za + zb)
            }
            DistKind::Empirical { .. } => {
                // Bisection on the smoothed CDF; 60 halvings pin the result
                // to ~2^-60 of the support width.
                let (mut a, mut b) = (lo, hi);
                for _ in 0..60 {
                    let mid = 0.5 * (a + b);
                    let (_, cdf) = self.density_cdf(mid)?;
                    if cdf < p {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                0.5 * (a + b)
            }
            DistKind::Point { v } => *v,
        };
        Ok(z.clamp(lo, hi))
    }
}

fn interp_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let idx = h.floor() as usize;
    let frac = h - idx as f64;
    if idx + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[idx] + frac * (sorted[idx + 1] - sorted[idx])
    }
}

fn kernel_cdf(sample: &[f64], h: f64, z: f64) -> f64 {
    let n = std_normal();
    sample.iter().map(|x| n.cdf((z - x) / h)).sum::<f64>() / sample.len() as f64
}

fn kernel_pdf(sample: &[f64], h: f64, z: f64) -> f64 {
    let n = std_normal();
    sample.iter().map(|x| n.pdf((z - x) / h) / h).sum::<f64>() / sample.len() as f64
}

/// Myerson virtual valuation `phi(z) = z - (1 - F(z)) / f(z)`.
///
/// At the top of the support, where both `1 - F` and possibly `f` vanish,
/// the limit `phi(d) = d` is returned. A vanishing density anywhere else is
/// a genuine singularity and is reported as an error.
pub fn virtual_value(dist: &ValueDistribution, z: f64) -> Result<f64, ValuationError> {
    let (f, cdf) = dist.density_cdf(z)?;
    let tail = 1.0 - cdf;
    if f <= 1e-300 {
        if tail <= 1e-12 {
            return Ok(z);
        }
        return Err(ValuationError::SingularDensity { z });
    }
    Ok(z - tail / f)
}

/// The combined score `psi(z) = alpha*phi(z) + beta*z + gamma`.
///
/// With `alpha = 0` the distribution is never evaluated, so a pure welfare
/// or welfare+clicks objective works even where `phi` is undefined.
pub fn psi(
    weights: &ObjectiveWeights,
    dist: &ValueDistribution,
    z: f64,
) -> Result<f64, ValuationError> {
    if weights.alpha == 0.0 {
        return Ok(weights.beta * z + weights.gamma);
    }
    Ok(weights.alpha * virtual_value(dist, z)? + weights.beta * z + weights.gamma)
}

/// `psi` evaluated through a [`VirtualSpec`]: the full distribution or its
/// linear stand-in.
pub fn psi_spec(
    weights: &ObjectiveWeights,
    spec: &VirtualSpec,
    z: f64,
) -> Result<f64, ValuationError> {
    match spec {
        VirtualSpec::Distribution(dist) => psi(weights, dist, z),
        VirtualSpec::Linear(lv) => {
            Ok(weights.alpha * lv.eval(z) + weights.beta * z + weights.gamma)
        }
    }
}

/// Result of a reserve computation: the root of `psi`, or a support
/// endpoint when `psi` does not change sign on the support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reserve {
    pub value: f64,
    /// True when `psi` had no root inside the support and the nearest
    /// endpoint was returned instead.
    pub clamped: bool,
}

/// Solves `psi(r) = 0` by bisection; `r` is the optimal per-click reserve.
///
/// Requires `psi` monotone on the support (checked on a probe grid; a
/// non-monotone `psi` means the distribution is not regular and callers
/// should fit a [`LinearVirtual`] instead). When `psi` is single-signed on
/// the whole support the clamped endpoint is returned: for instance a pure
/// welfare objective has `psi(z) = z >= 0` everywhere, so the reserve clamps
/// to the bottom of the support.
pub fn psi_inverse_zero(
    weights: &ObjectiveWeights,
    dist: &ValueDistribution,
    tol: f64,
) -> Result<Reserve, ValuationError> {
    if !(tol > 0.0) {
        return Err(ValuationError::InvalidParameters(format!("tolerance must be positive, got {tol}")));
    }
    let (lo, hi) = dist.support();
    let eval = |z: f64| psi(weights, dist, z);

    // Probe for monotonicity. Endpoint singularities (density vanishing at
    // the very edge of the support) evaluate as errors; treat the bottom
    // endpoint as unboundedly negative, which matches the limit.
    let mut prev: Option<(f64, f64)> = None;
    let mut lo_val: Option<f64> = None;
    let mut hi_val: Option<f64> = None;
    for i in 0..DEFAULT_PROBE_GRID {
        let z = lo + (hi - lo) * i as f64 / (DEFAULT_PROBE_GRID - 1) as f64;
        let v = match eval(z) {
            Ok(v) => v,
            Err(ValuationError::SingularDensity { .. }) if i == 0 => continue,
            Err(e) => return Err(e),
        };
        if let Some((pz, pv)) = prev {
            if v < pv - MONOTONE_SLACK {
                let _ = pz;
                return Err(ValuationError::NonMonotonePsi { at: z });
            }
        }
        if i == 0 {
            lo_val = Some(v);
        }
        if i == DEFAULT_PROBE_GRID - 1 {
            hi_val = Some(v);
        }
        prev = Some((z, v));
    }

    let hi_val = hi_val.expect("grid has at least two points");
    if let Some(lv) = lo_val {
        // psi never goes negative: the root sits at (or below) the bottom
        // of the support, so nothing is excluded. A pure welfare objective
        // (psi(z) = z on [0, d]) lands here with psi(lo) = 0 exactly.
        if lv >= 0.0 {
            return Ok(Reserve { value: lo, clamped: true });
        }
    }
    if hi_val < 0.0 {
        return Ok(Reserve { value: hi, clamped: true });
    }

    // Bisection; the bottom endpoint may be singular, in which case psi
    // there is effectively -infinity and the bracket is still valid.
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let v = eval(mid)?;
        if v.abs() <= tol {
            return Ok(Reserve { value: mid, clamped: false });
        }
        if v < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= tol {
            break;
        }
    }
    Ok(Reserve { value: 0.5 * (a + b), clamped: false })
}

/// Least-squares linear fit of the virtual valuation over an equispaced grid.
///
/// Grid points where the density vanishes are excluded; if more than half
/// the grid is singular the fit is refused. The returned `fit_error` is the
/// maximum absolute deviation over the surviving points (for uniform
/// distributions `phi` is exactly linear and the error is ~0).
pub fn linear_fit_virtual(
    dist: &ValueDistribution,
    grid_size: usize,
) -> Result<LinearVirtual, ValuationError> {
    if grid_size < 2 {
        return Err(ValuationError::InvalidParameters(format!(
            "fit grid needs at least 2 points, got {grid_size}"
        )));
    }
    let (lo, hi) = dist.support();
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(grid_size);
    let mut singular = 0usize;
    for i in 0..grid_size {
        let z = lo + (hi - lo) * i as f64 / (grid_size - 1) as f64;
        match virtual_value(dist, z) {
            Ok(v) => pts.push((z, v)),
            Err(ValuationError::SingularDensity { .. }) => singular += 1,
            Err(e) => return Err(e),
        }
    }
    if singular * 2 > grid_size {
        return Err(ValuationError::DegenerateFit(format!(
            "{singular} of {grid_size} grid points have vanishing density"
        )));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(z, _)| z).sum();
    let sy: f64 = pts.iter().map(|(_, v)| v).sum();
    let sxx: f64 = pts.iter().map(|(z, _)| z * z).sum();
    let sxy: f64 = pts.iter().map(|(z, v)| z * v).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(ValuationError::DegenerateFit("degenerate grid".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    if !(slope > 0.0) {
        return Err(ValuationError::DegenerateFit(format!(
            "fitted slope {slope} is not positive; virtual valuation is decreasing on average"
        )));
    }
    let fit_error = pts
        .iter()
        .map(|(z, v)| (v - (slope * z + intercept)).abs())
        .fold(0.0f64, f64::max);
    Ok(LinearVirtual { slope, intercept, fit_error })
}

/// Reports whether the virtual valuation is non-decreasing on a probe grid.
///
/// Endpoint singularities are skipped; interior comparisons allow a slack
/// of 1e-9 for floating-point noise. This is a numerical check, not a
/// proof: a distribution can pass at one resolution and fail at a finer one.
pub fn regularity_check(dist: &ValueDistribution, grid_size: usize) -> bool {
    if grid_size < 2 {
        return true;
    }
    let (lo, hi) = dist.support();
    let mut prev: Option<f64> = None;
    for i in 0..grid_size {
        let z = lo + (hi - lo) * i as f64 / (grid_size - 1) as f64;
        match virtual_value(dist, z) {
            Ok(v) => {
                if let Some(p) = prev {
                    if v < p - MONOTONE_SLACK {
                        return false;
                    }
                }
                prev = Some(v);
            }
            Err(_) => continue,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_density_cdf() {
        let d = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let (f, cdf) = d.density_cdf(0.25).unwrap();
        assert_eq!(f, 1.0);
        assert_eq!(cdf, 0.25);

        let d = ValueDistribution::uniform(2.0, 4.0).unwrap();
        let (f, cdf) = d.density_cdf(3.0).unwrap();
        assert_eq!(f, 0.5);
        assert_eq!(cdf, 0.5);
    }

    #[test]
    fn lognormal_density_cdf_at_median() {
        // Symmetric truncation keeps the median at CDF 1/2 exactly; the
        // density is the raw lognormal density divided by the retained mass.
        let d = ValueDistribution::lognormal(0.0, 1.0).unwrap();
        let (f, cdf) = d.density_cdf(1.0).unwrap();
        assert!(close(cdf, 0.5, 1e-12), "cdf {cdf}");
        let raw = (2.0 * std::f64::consts::PI).sqrt().recip();
        assert!(close(f, raw / 0.998, 1e-9), "f {f}");
        assert!(close(f, 0.3989, 1e-2));
    }

    #[test]
    fn out_of_support_is_an_error() {
        let d = ValueDistribution::uniform(0.0, 1.0).unwrap();
        assert!(matches!(d.density_cdf(1.5), Err(ValuationError::OutOfSupport { .. })));
    }

    #[test]
    fn uniform_virtual_values() {
        let d = ValueDistribution::uniform(0.0, 1.0).unwrap();
        assert!(close(virtual_value(&d, 0.75).unwrap(), 0.5, 1e-12));
        assert!(close(virtual_value(&d, 0.5).unwrap(), 0.0, 1e-12));
    }

    #[test]
    fn beta_virtual_value_matches_closed_form() {
        // For beta(2,2): F(z) = 3z^2 - 2z^3, f(z) = 6z(1-z); at z = 0.6 the
        // virtual value is 0.6 - 0.352/1.44 = 16/45.
        let d = ValueDistribution::beta(2.0, 2.0).unwrap();
        let v = virtual_value(&d, 0.6).unwrap();
        assert!(close(v, 16.0 / 45.0, 1e-8), "phi(0.6) = {v}");
    }

    #[test]
    fn psi_identity_and_revenue_forms() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let w = ObjectiveWeights::welfare();
        assert_eq!(psi(&w, &u, 0.7).unwrap(), 0.7);

        let r = ObjectiveWeights::revenue();
        assert!(close(psi(&r, &u, 0.5).unwrap(), 0.0, 1e-12));

        let rw = ObjectiveWeights::new(1.0, 1.0, 0.0).unwrap();
        assert!(close(psi(&rw, &u, 0.5).unwrap(), 0.5, 1e-12));
    }

    #[test]
    fn psi_with_zero_alpha_skips_distribution() {
        // beta(5, 1) has vanishing density at the bottom of its support;
        // a welfare objective must not trip over that.
        let d = ValueDistribution::beta(5.0, 1.0).unwrap();
        let w = ObjectiveWeights::new(0.0, 1.0, 2.0).unwrap();
        assert_eq!(psi(&w, &d, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn reserves_for_uniform() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let r = psi_inverse_zero(&ObjectiveWeights::revenue(), &u, 1e-12).unwrap();
        assert!(!r.clamped);
        assert!(close(r.value, 0.5, 1e-9), "reserve {}", r.value);

        let rw = ObjectiveWeights::new(1.0, 1.0, 0.0).unwrap();
        let r = psi_inverse_zero(&rw, &u, 1e-12).unwrap();
        assert!(close(r.value, 1.0 / 3.0, 1e-9), "reserve {}", r.value);

        let w = psi_inverse_zero(&ObjectiveWeights::welfare(), &u, 1e-12).unwrap();
        assert!(w.clamped);
        assert_eq!(w.value, 0.0);
    }

    #[test]
    fn reserve_bracket_property() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let weights = ObjectiveWeights::new(2.0, 0.5, 0.1).unwrap();
        let tol = 1e-10;
        let r = psi_inverse_zero(&weights, &u, tol).unwrap();
        assert!(!r.clamped);
        assert!(psi(&weights, &u, r.value - 2.0 * tol).unwrap() <= 0.0);
        assert!(psi(&weights, &u, r.value + 2.0 * tol).unwrap() >= 0.0);
    }

    #[test]
    fn linear_fit_recovers_uniform_exactly() {
        let d = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let lv = linear_fit_virtual(&d, 64).unwrap();
        assert!(close(lv.slope, 2.0, 1e-9));
        assert!(close(lv.intercept, -1.0, 1e-9));
        assert!(lv.fit_error <= 1e-9);

        let d = ValueDistribution::uniform(2.0, 4.0).unwrap();
        let lv = linear_fit_virtual(&d, 64).unwrap();
        assert!(close(lv.slope, 2.0, 1e-9));
        assert!(close(lv.intercept, -4.0, 1e-9));
    }

    #[test]
    fn linear_fit_matches_normal_equations_oracle() {
        // Independent least-squares oracle: accumulate the normal equations
        // directly over the same probe values.
        let d = ValueDistribution::lognormal_truncated(0.0, 0.5, 0.001, 0.99).unwrap();
        let grid = 256;
        let (lo, hi) = d.support();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..grid {
            let z = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
            if let Ok(v) = virtual_value(&d, z) {
                xs.push(z);
                ys.push(v);
            }
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;

        let lv = linear_fit_virtual(&d, grid).unwrap();
        assert!(close(lv.slope, slope, 1e-6), "{} vs {}", lv.slope, slope);
        assert!(close(lv.intercept, intercept, 1e-6));
    }

    #[test]
    fn regularity_uniform_and_beta() {
        let u = ValueDistribution::uniform(0.0, 1.0).unwrap();
        assert!(regularity_check(&u, 256));

        // Fine-grid oracle at 10x resolution must agree with the check.
        let b = ValueDistribution::beta(2.0, 2.0).unwrap();
        let coarse = regularity_check(&b, 200);
        let fine = regularity_check(&b, 2000);
        assert_eq!(coarse, fine);
        assert!(coarse, "beta(2,2) is regular");
    }

    #[test]
    fn empirical_smoothing_and_regularity_oracle() {
        let d = ValueDistribution::empirical(&[1.0, 1.0, 1.0, 100.0]).unwrap();
        let (lo, hi) = d.support();
        assert!(lo >= 0.0 && hi > 100.0);
        // CDF is monotone over the support.
        let mut prev = -1.0;
        for i in 0..200 {
            let z = lo + (hi - lo) * i as f64 / 199.0;
            let (f, cdf) = d.density_cdf(z).unwrap();
            assert!(f > 0.0, "smoothed density must be positive, got {f} at {z}");
            assert!(cdf >= prev - 1e-12);
            prev = cdf;
        }
        // Whatever the coarse check says must match a 10x finer scan.
        assert_eq!(regularity_check(&d, 300), regularity_check(&d, 3000));
    }

    #[test]
    fn quantile_round_trips_cdf() {
        for d in [
            ValueDistribution::uniform(0.5, 2.5).unwrap(),
            ValueDistribution::lognormal(0.0, 1.0).unwrap(),
            ValueDistribution::beta(2.0, 3.0).unwrap(),
            ValueDistribution::empirical(&[0.2, 0.5, 0.9, 1.4, 2.0]).unwrap(),
        ] {
            for p in [0.01, 0.2, 0.5, 0.8, 0.99] {
                let z = d.quantile(p).unwrap();
                let (_, cdf) = d.density_cdf(z).unwrap();
                assert!(close(cdf, p, 1e-6), "p={p} z={z} cdf={cdf}");
            }
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(ValueDistribution::uniform(1.0, 1.0).is_err());
        assert!(ValueDistribution::lognormal(0.0, 0.0).is_err());
        assert!(ValueDistribution::beta(0.0, 1.0).is_err());
        assert!(ValueDistribution::empirical(&[]).is_err());
        assert!(ValueDistribution::empirical(&[-1.0]).is_err());
        assert!(ValueDistribution::point(-1.0).is_err());
        assert!(ValueDistribution::point(f64::NAN).is_err());
        assert!(ObjectiveWeights::new(0.0, 0.0, 1.0).is_err());
        assert!(ObjectiveWeights::new(-1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn point_mass_quantiles_are_exact_and_density_is_refused() {
        let d = ValueDistribution::point(3.0).unwrap();
        assert_eq!(d.support(), (3.0, 3.0));
        for p in [0.0, 0.3, 0.5, 1.0] {
            assert_eq!(d.quantile(p).unwrap(), 3.0);
        }
        assert!(d.density_cdf(3.0).is_err());
        assert!(virtual_value(&d, 3.0).is_err());
        // A zero-alpha objective never touches the density.
        let w = ObjectiveWeights::new(0.0, 1.0, 0.0).unwrap();
        assert_eq!(psi(&w, &d, 3.0).unwrap(), 3.0);
    }
}
