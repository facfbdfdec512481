//! Construction of the dual label distribution.
//!
//! Every sample carries two targets built from its rater records:
//!
//! - a [`RatingDistribution`] over the five integer ratings, obtained by
//!   counting raters and L1-normalizing;
//! - an [`AttractivenessDistribution`] over `n_bins` equal score intervals,
//!   obtained by differencing a Laplace (or Gaussian) CDF centred on the mean
//!   score, then applying an elementwise sigmoid and L1 normalization.
//!
//! The same grid maps an attractiveness distribution back onto ratings (each
//! bin goes to the rating whose half-open interval `[m - 0.5, m + 0.5)`
//! contains the bin midpoint) and regresses a score as the expectation over
//! bin midpoints.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use libm::erfc;

use crate::error::{Error, Result};

/// Number of integer rating levels (1..=5).
pub const N_RATINGS: usize = 5;

/// Lower bound applied to the Laplace scale (and Gaussian std) so that a
/// unanimous panel (sigma = 0) still yields a well-defined CDF.
pub const MIN_SCALE: f64 = 1e-6;

/// Tolerance on the unit-sum invariant of both distribution types.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Parametric family used to discretize the attractiveness distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Family {
    #[default]
    Laplace,
    Gaussian,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Laplace => f.write_str("laplace"),
            Family::Gaussian => f.write_str("gaussian"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "laplace" => Ok(Family::Laplace),
            "gaussian" | "normal" => Ok(Family::Gaussian),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }
}

/// Interval machinery over the score range `[y_min, y_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionGrid {
    y_min: f64,
    y_max: f64,
    delta_l: f64,
    n_bins: usize,
    endpoints: Vec<f64>,
    midpoints: Vec<f64>,
    rating_ranges: [Range<usize>; N_RATINGS],
}

impl Default for DistributionGrid {
    fn default() -> Self {
        Self::new(0.1).expect("default grid is valid")
    }
}

impl DistributionGrid {
    pub const Y_MIN: f64 = 1.0;
    pub const Y_MAX: f64 = 5.0;

    /// Builds the grid over `[1, 5]` with interval length `delta_l`.
    ///
    /// `delta_l` must split the range into a whole number of bins
    /// (0.01, 0.05, 0.1, 0.2 and 0.5 all do).
    pub fn new(delta_l: f64) -> Result<Self> {
        let (y_min, y_max) = (Self::Y_MIN, Self::Y_MAX);
        if !delta_l.is_finite() || delta_l <= 0.0 {
            return Err(Error::InvalidArgument(format!("interval length must be positive, got {delta_l}")));
        }
        let exact = (y_max - y_min) / delta_l;
        let n_bins = exact.round();
        if n_bins < 2.0 || (n_bins - exact).abs() > 1e-9 * exact.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "interval length {delta_l} does not divide [{y_min}, {y_max}] into at least two whole bins"
            )));
        }
        let n_bins = n_bins as usize;

        let mut endpoints: Vec<f64> = (0..=n_bins).map(|k| y_min + k as f64 * delta_l).collect();
        endpoints[n_bins] = y_max;
        let midpoints: Vec<f64> = endpoints.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();

        // Bin j belongs to rating m when its midpoint lies in [m - 0.5, m + 0.5),
        // clipped to the rating scale. Midpoints are increasing, so the
        // assignment is a contiguous partition of 0..n_bins.
        let rating_of = |w: f64| ((w + 0.5 + 1e-9).floor() as i64).clamp(1, N_RATINGS as i64) as usize - 1;
        let mut starts = [n_bins; N_RATINGS];
        let mut ends = [n_bins; N_RATINGS];
        for (j, &w) in midpoints.iter().enumerate() {
            let m = rating_of(w);
            if starts[m] == n_bins {
                starts[m] = j;
            }
            ends[m] = j + 1;
        }
        // Empty ratings (only possible for very coarse grids) get an empty
        // range positioned at the next occupied bin.
        for m in (0..N_RATINGS).rev() {
            if starts[m] == n_bins && ends[m] == n_bins {
                let next = if m + 1 < N_RATINGS { starts[m + 1] } else { n_bins };
                starts[m] = next;
                ends[m] = next;
            }
        }
        let rating_ranges = std::array::from_fn(|m| starts[m]..ends[m]);

        Ok(Self { y_min, y_max, delta_l, n_bins, endpoints, midpoints, rating_ranges })
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn delta_l(&self) -> f64 {
        self.delta_l
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Interval endpoints `s_0 .. s_n`.
    pub fn endpoints(&self) -> &[f64] {
        &self.endpoints
    }

    /// Interval midpoints `w_0 .. w_{n-1}`.
    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    /// Bin index range feeding rating `m` (1-based).
    pub fn rating_range(&self, m: usize) -> Range<usize> {
        assert!((1..=N_RATINGS).contains(&m), "rating {m} outside 1..=5");
        self.rating_ranges[m - 1].clone()
    }

    pub fn rating_ranges(&self) -> &[Range<usize>; N_RATINGS] {
        &self.rating_ranges
    }

    /// Index of the bin containing `score`. Bins are half-open except the
    /// last, which also holds `y_max`.
    pub fn bin_of(&self, score: f64) -> Result<usize> {
        self.check_score(score)?;
        let j = ((score - self.y_min) / self.delta_l).floor() as usize;
        let mut j = j.min(self.n_bins - 1);
        // Correct for representation error right at an endpoint.
        if score < self.endpoints[j] {
            j -= 1;
        } else if j + 1 < self.n_bins && score >= self.endpoints[j + 1] {
            j += 1;
        }
        Ok(j)
    }

    fn check_score(&self, score: f64) -> Result<()> {
        if !score.is_finite() || score < self.y_min || score > self.y_max {
            return Err(Error::OutOfRange { score, min: self.y_min, max: self.y_max });
        }
        Ok(())
    }
}

/// Laplace location/scale pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceParams {
    pub mu: f64,
    pub b: f64,
}

impl LaplaceParams {
    /// Location `y` and scale `sigma / sqrt(2)`, so the law has mean `y` and
    /// standard deviation `sigma`. The scale is clamped to [`MIN_SCALE`].
    pub fn from_moments(y: f64, sigma: f64) -> Self {
        Self { mu: y, b: (sigma / std::f64::consts::SQRT_2).max(MIN_SCALE) }
    }
}

/// Laplace cumulative distribution function.
pub fn laplace_cdf(x: f64, params: LaplaceParams) -> Result<f64> {
    let LaplaceParams { mu, b } = params;
    if !x.is_finite() || !mu.is_finite() || !b.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite input to laplace_cdf (x={x}, mu={mu}, b={b})")));
    }
    if b <= 0.0 {
        return Err(Error::InvalidArgument(format!("Laplace scale must be positive, got {b}")));
    }
    let d = x - mu;
    // 0.5 * [1 + sgn(d) * (1 - exp(-|d|/b))], written per branch to avoid cancellation.
    let tail = 0.5 * (-d.abs() / b).exp();
    Ok(if d > 0.0 {
        1.0 - tail
    } else if d < 0.0 {
        tail
    } else {
        0.5
    })
}

/// Normal cumulative distribution function.
pub fn gaussian_cdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !x.is_finite() || !mu.is_finite() || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite input to gaussian_cdf (x={x}, mu={mu}, sigma={sigma})")));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!("standard deviation must be positive, got {sigma}")));
    }
    Ok(0.5 * erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2)))
}

fn check_unit_mass(probs: &[f64], what: &str) -> Result<()> {
    if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidArgument(format!("{what} entry {bad} is not a nonnegative probability")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidArgument(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Probability vector over the grid's score intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct AttractivenessDistribution(Vec<f64>);

impl AttractivenessDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_unit_mass(&probs, "attractiveness distribution")?;
        Ok(Self(probs))
    }

    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn uniform(n_bins: usize) -> Self {
        Self(vec![1.0 / n_bins as f64; n_bins])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl AsRef<[f64]> for AttractivenessDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Probability of each integer rating 1..=5.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingDistribution([f64; N_RATINGS]);

impl RatingDistribution {
    pub fn new(probs: [f64; N_RATINGS]) -> Result<Self> {
        check_unit_mass(&probs, "rating distribution")?;
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64; N_RATINGS] {
        &self.0
    }

    /// Expected rating, `sum_m m * r_m`.
    pub fn mean(&self) -> f64 {
        self.0.iter().enumerate().map(|(i, r)| (i + 1) as f64 * r).sum()
    }
}

impl AsRef<[f64]> for RatingDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Normalized histogram of integer ratings.
pub fn build_rating_distribution(ratings: &[u8]) -> Result<RatingDistribution> {
    if ratings.is_empty() {
        return Err(Error::NoRaters);
    }
    let mut counts = [0usize; N_RATINGS];
    for &r in ratings {
        if !(1..=N_RATINGS as u8).contains(&r) {
            return Err(Error::InvalidRating { rating: r as i64, line: None });
        }
        counts[r as usize - 1] += 1;
    }
    let total = ratings.len() as f64;
    Ok(RatingDistribution(counts.map(|c| c as f64 / total)))
}

/// Raw interval masses `F(s_{j+1}) - F(s_j)` before the sigmoid step.
pub fn interval_masses(y: f64, sigma: f64, grid: &DistributionGrid, family: Family) -> Result<Vec<f64>> {
    grid.check_score(y)?;
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("standard deviation must be finite and >= 0, got {sigma}")));
    }
    let cdf: Box<dyn Fn(f64) -> Result<f64>> = match family {
        Family::Laplace => {
            let params = LaplaceParams::from_moments(y, sigma);
            Box::new(move |x| laplace_cdf(x, params))
        }
        Family::Gaussian => {
            let std = sigma.max(MIN_SCALE);
            Box::new(move |x| gaussian_cdf(x, y, std))
        }
    };
    let cdfs = grid.endpoints().iter().map(|&s| cdf(s)).collect::<Result<Vec<_>>>()?;
    Ok(cdfs.windows(2).map(|w| w[1] - w[0]).collect())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Attractiveness distribution for a sample with mean score `y` and rating
/// standard deviation `sigma`: CDF differences over the grid, elementwise
/// sigmoid, then L1 normalization.
pub fn build_attractiveness_distribution(
    y: f64,
    sigma: f64,
    grid: &DistributionGrid,
    family: Family,
) -> Result<AttractivenessDistribution> {
    let mut probs = interval_masses(y, sigma, grid, family)?;
    probs.iter_mut().for_each(|p| *p = sigmoid(*p));
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(AttractivenessDistribution(probs))
}

/// Sums attractiveness mass over each rating's bin range.
pub fn derive_rating_distribution(p: &AttractivenessDistribution, grid: &DistributionGrid) -> Result<RatingDistribution> {
    if p.len() != grid.n_bins() {
        return Err(Error::Shape(format!("distribution has {} bins, grid has {}", p.len(), grid.n_bins())));
    }
    Ok(RatingDistribution(rating_mass(p.as_slice(), grid)))
}

pub(crate) fn rating_mass(p: &[f64], grid: &DistributionGrid) -> [f64; N_RATINGS] {
    grid.rating_ranges().clone().map(|range| p[range].iter().sum())
}

/// Expectation of the bin midpoints under `p`.
pub fn regress_score(p: &AttractivenessDistribution, grid: &DistributionGrid) -> Result<f64> {
    if p.len() != grid.n_bins() {
        return Err(Error::Shape(format!("distribution has {} bins, grid has {}", p.len(), grid.n_bins())));
    }
    Ok(expectation(p.as_slice(), grid))
}

pub(crate) fn expectation(p: &[f64], grid: &DistributionGrid) -> f64 {
    p.iter().zip(grid.midpoints()).map(|(p, w)| p * w).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lap(mu: f64, b: f64) -> LaplaceParams {
        LaplaceParams { mu, b }
    }

    #[test]
    fn default_grid_layout() {
        let g = DistributionGrid::default();
        assert_eq!(g.n_bins(), 40);
        assert_eq!(g.endpoints().len(), 41);
        assert_eq!(g.endpoints()[0], 1.0);
        assert_eq!(g.endpoints()[40], 5.0);
        for k in 0..=40 {
            assert_abs_diff_eq!(g.endpoints()[k], 1.0 + 0.1 * k as f64, epsilon = 1e-12);
        }
        assert!(g.endpoints().windows(2).all(|w| w[0] < w[1]));
        assert_abs_diff_eq!(g.midpoints()[0], 1.05, epsilon = 1e-12);
        assert_abs_diff_eq!(g.midpoints()[39], 4.95, epsilon = 1e-12);
    }

    #[test]
    fn default_grid_matches_rating_table() {
        let g = DistributionGrid::default();
        assert_eq!(g.rating_range(1), 0..5);
        assert_eq!(g.rating_range(2), 5..15);
        assert_eq!(g.rating_range(3), 15..25);
        assert_eq!(g.rating_range(4), 25..35);
        assert_eq!(g.rating_range(5), 35..40);
        for m in 2..=4 {
            assert_eq!(g.rating_range(m), (10 * m - 15)..(10 * m - 5));
        }
    }

    #[test]
    fn other_interval_lengths() {
        for (dl, n) in [(0.01, 400), (0.05, 80), (0.2, 20), (0.5, 8)] {
            let g = DistributionGrid::new(dl).unwrap();
            assert_eq!(g.n_bins(), n);
            let covered: usize = g.rating_ranges().iter().map(|r| r.len()).sum();
            assert_eq!(covered, n);
        }
        let g = DistributionGrid::new(0.5).unwrap();
        assert_eq!(g.rating_range(1), 0..1);
        assert_eq!(g.rating_range(5), 7..8);
        assert!(DistributionGrid::new(0.3).is_err());
        assert!(DistributionGrid::new(0.0).is_err());
        assert!(DistributionGrid::new(-0.1).is_err());
    }

    #[test]
    fn bin_lookup_boundaries() {
        let g = DistributionGrid::default();
        assert_eq!(g.bin_of(1.0).unwrap(), 0);
        assert_eq!(g.bin_of(3.0).unwrap(), 20);
        assert_eq!(g.bin_of(3.05).unwrap(), 20);
        assert_eq!(g.bin_of(4.9).unwrap(), 39);
        assert_eq!(g.bin_of(5.0).unwrap(), 39);
        assert!(g.bin_of(5.01).is_err());
        assert!(g.bin_of(0.99).is_err());
    }

    #[test]
    fn laplace_cdf_examples() {
        assert_eq!(laplace_cdf(3.0, lap(3.0, 0.1)).unwrap(), 0.5);
        assert_abs_diff_eq!(laplace_cdf(3.1, lap(3.0, 0.1)).unwrap(), 0.816_060_279_414_278_8, epsilon = 1e-12);
        assert_abs_diff_eq!(laplace_cdf(2.9, lap(3.0, 0.1)).unwrap(), 0.183_939_720_585_721_2, epsilon = 1e-12);
        assert!(laplace_cdf(f64::NAN, lap(3.0, 0.1)).is_err());
        assert!(laplace_cdf(1.0, lap(3.0, f64::INFINITY)).is_err());
        assert!(laplace_cdf(1.0, lap(3.0, 0.0)).is_err());
    }

    #[test]
    fn gaussian_cdf_examples() {
        assert_abs_diff_eq!(gaussian_cdf(2.0, 2.0, 0.3).unwrap(), 0.5, epsilon = 1e-15);
        // Reference values from the standard normal table (16 digits).
        assert_abs_diff_eq!(gaussian_cdf(1.0, 0.0, 1.0).unwrap(), 0.841_344_746_068_542_9, epsilon = 1e-12);
        assert_abs_diff_eq!(gaussian_cdf(-2.0, 0.0, 1.0).unwrap(), 0.022_750_131_948_179_2, epsilon = 1e-12);
        assert!(gaussian_cdf(0.0, 0.0, 0.0).is_err());
        assert!(gaussian_cdf(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn rating_distribution_examples() {
        let r = build_rating_distribution(&[3, 3, 4, 5, 3, 4]).unwrap();
        assert_eq!(r.probs(), &[0.0, 0.0, 0.5, 2.0 / 6.0, 1.0 / 6.0]);
        assert_eq!(build_rating_distribution(&[1, 1, 1]).unwrap().probs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(build_rating_distribution(&[1, 2, 3, 4, 5]).unwrap().probs(), &[0.2; 5]);
        assert!(matches!(build_rating_distribution(&[]), Err(Error::NoRaters)));
        assert!(matches!(build_rating_distribution(&[3, 0]), Err(Error::InvalidRating { rating: 0, .. })));
        assert!(matches!(build_rating_distribution(&[6]), Err(Error::InvalidRating { rating: 6, .. })));
    }

    #[test]
    fn attractiveness_raw_mass_at_location() {
        let g = DistributionGrid::default();
        let sigma = 0.1 * std::f64::consts::SQRT_2;
        let raw = interval_masses(3.0, sigma, &g, Family::Laplace).unwrap();
        assert_abs_diff_eq!(raw[20], 0.5 - 0.5 * (-1.0f64).exp(), epsilon = 1e-12);

        // Sigmoid then L1 normalization, written out independently.
        let p = build_attractiveness_distribution(3.0, sigma, &g, Family::Laplace).unwrap();
        let squashed: Vec<f64> = raw.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let total: f64 = squashed.iter().sum();
        for (a, b) in p.as_slice().iter().zip(&squashed) {
            assert_abs_diff_eq!(*a, b / total, epsilon = 1e-15);
        }
        assert_eq!(p.len(), 40);
        assert_abs_diff_eq!(p.as_slice().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unanimous_panel_at_range_edges() {
        let g = DistributionGrid::default();
        let p = build_attractiveness_distribution(1.0, 0.0, &g, Family::Laplace).unwrap();
        assert_eq!(p.argmax(), 0);
        let p = build_attractiveness_distribution(5.0, 0.0, &g, Family::Laplace).unwrap();
        assert_eq!(p.argmax(), 39);
        let p = build_attractiveness_distribution(3.04, 0.0, &g, Family::Gaussian).unwrap();
        assert_eq!(p.argmax(), 20);
    }

    #[test]
    fn attractiveness_rejects_bad_inputs() {
        let g = DistributionGrid::default();
        assert!(matches!(build_attractiveness_distribution(0.5, 0.3, &g, Family::Laplace), Err(Error::OutOfRange { .. })));
        assert!(matches!(build_attractiveness_distribution(5.5, 0.3, &g, Family::Gaussian), Err(Error::OutOfRange { .. })));
        assert!(build_attractiveness_distribution(3.0, -0.1, &g, Family::Laplace).is_err());
    }

    #[test]
    fn families_differ() {
        let g = DistributionGrid::default();
        let a = build_attractiveness_distribution(3.3, 0.7, &g, Family::Laplace).unwrap();
        let b = build_attractiveness_distribution(3.3, 0.7, &g, Family::Gaussian).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn derived_ratings_and_scores() {
        let g = DistributionGrid::default();
        let uniform = AttractivenessDistribution::uniform(40);
        let r = derive_rating_distribution(&uniform, &g).unwrap();
        for (a, b) in r.probs().iter().zip([0.125, 0.25, 0.25, 0.25, 0.125]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(regress_score(&uniform, &g).unwrap(), 3.0, epsilon = 1e-12);

        let one_hot = |j: usize| {
            let mut v = vec![0.0; 40];
            v[j] = 1.0;
            AttractivenessDistribution::new(v).unwrap()
        };
        assert_eq!(derive_rating_distribution(&one_hot(20), &g).unwrap().probs(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(derive_rating_distribution(&one_hot(4), &g).unwrap().probs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(regress_score(&one_hot(20), &g).unwrap(), 3.05, epsilon = 1e-12);

        let mut v = vec![0.0; 40];
        v[0] = 0.5;
        v[39] = 0.5;
        let two_point = AttractivenessDistribution::new(v).unwrap();
        assert_abs_diff_eq!(regress_score(&two_point, &g).unwrap(), 3.0, epsilon = 1e-12);

        assert!(derive_rating_distribution(&AttractivenessDistribution::uniform(20), &g).is_err());
    }

    #[test]
    fn distribution_constructors_validate() {
        assert!(AttractivenessDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(AttractivenessDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(RatingDistribution::new([0.2; 5]).is_ok());
        assert!(RatingDistribution::new([0.3; 5]).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.into_iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn laplace_cdf_is_monotone(mu in 1.0f64..5.0, b in 1e-3f64..3.0, a in -2.0f64..8.0, d in 0.0f64..3.0) {
            let lo = laplace_cdf(a, lap(mu, b)).unwrap();
            let hi = laplace_cdf(a + d, lap(mu, b)).unwrap();
            prop_assert!(hi >= lo);
            prop_assert!((0.0..=1.0).contains(&lo));
            prop_assert_eq!(laplace_cdf(mu, lap(mu, b)).unwrap(), 0.5);
        }

        #[test]
        fn sigmoid_normalization_preserves_ordering(y in 1.0f64..=5.0, sigma in 0.0f64..2.0, gaussian: bool) {
            let g = DistributionGrid::default();
            let family = if gaussian { Family::Gaussian } else { Family::Laplace };
            let raw = interval_masses(y, sigma, &g, family).unwrap();
            let p = build_attractiveness_distribution(y, sigma, &g, family).unwrap();
            for i in 0..raw.len() {
                for j in 0..raw.len() {
                    if raw[i] < raw[j] {
                        prop_assert!(p.as_slice()[i] <= p.as_slice()[j]);
                    }
                }
            }
            prop_assert_eq!(argmax(&raw), p.argmax());
        }

        #[test]
        fn regressed_score_stays_in_midpoint_range(p in simplex(40)) {
            let g = DistributionGrid::default();
            let p = AttractivenessDistribution::new(p).unwrap();
            let y = regress_score(&p, &g).unwrap();
            prop_assert!((1.05 - 1e-12..=4.95 + 1e-12).contains(&y));
        }

        #[test]
        fn rating_mean_matches_arithmetic_mean(ratings in prop::collection::vec(1u8..=5, 1..200)) {
            let r = build_rating_distribution(&ratings).unwrap();
            let mean = ratings.iter().map(|&x| x as f64).sum::<f64>() / ratings.len() as f64;
            prop_assert!((r.mean() - mean).abs() <= 4.0 * f64::EPSILON * mean);
        }
    }
}
