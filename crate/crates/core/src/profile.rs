//! Throughput→CPU profiles.
//!
//! Each element type carries an affine profile `r = a + b·v` mapping offered
//! throughput `v` (MB/s) to the CPU share `r` it needs to sustain it. The
//! mapping is measured offline per element type; the slope is always
//! positive, while the intercept may come out slightly negative when the
//! fitted line crosses the share axis below zero. Shares are clamped to
//! `[0, 1]` — one full core is the ceiling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("slope must be positive and finite, got {0}")]
    BadSlope(f64),
    #[error("intercept must be finite and below 1, got {0}")]
    BadIntercept(f64),
    #[error("throughput must be finite and non-negative, got {0}")]
    BadThroughput(f64),
    #[error("cpu share {0} is outside the invertible range")]
    UninvertibleShare(f64),
    #[error("need at least two samples with distinct throughputs")]
    DegenerateSamples,
    #[error("fitted slope {0} is not positive; samples do not describe a rising profile")]
    NonPositiveSlope(f64),
}

/// Affine throughput→CPU profile of one element type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementProfile {
    pub label: String,
    /// Share needed at zero throughput (may be slightly negative).
    pub intercept: f64,
    /// Share per MB/s of throughput; strictly positive.
    pub slope: f64,
}

impl ElementProfile {
    pub fn new(label: impl Into<String>, intercept: f64, slope: f64) -> Result<Self, ProfileError> {
        if !slope.is_finite() || slope <= 0.0 {
            return Err(ProfileError::BadSlope(slope));
        }
        if !intercept.is_finite() || intercept >= 1.0 {
            return Err(ProfileError::BadIntercept(intercept));
        }
        Ok(ElementProfile { label: label.into(), intercept, slope })
    }

    /// Classifier element measured at a = 0.00048, b = 0.0042.
    pub fn classifier() -> Self {
        ElementProfile::new("classifier", 0.00048, 0.0042).unwrap()
    }

    /// Sender element measured at a = -0.022, b = 0.0013.
    pub fn sender() -> Self {
        ElementProfile::new("sender", -0.022, 0.0013).unwrap()
    }

    /// CPU share needed to process `v` MB/s, clamped into `[0, 1]`.
    pub fn cpu_for_throughput(&self, v: f64) -> Result<f64, ProfileError> {
        if !v.is_finite() || v < 0.0 {
            return Err(ProfileError::BadThroughput(v));
        }
        Ok((self.intercept + self.slope * v).clamp(0.0, 1.0))
    }

    /// Highest throughput one full core sustains: `(1 - a) / b`.
    pub fn max_throughput(&self) -> f64 {
        (1.0 - self.intercept) / self.slope
    }

    /// Strict inverse of the profile: the throughput a share `r` sustains.
    /// Only defined on `(max(0, a), 1]`, where the affine map is invertible.
    pub fn throughput_for_cpu(&self, r: f64) -> Result<f64, ProfileError> {
        if !r.is_finite() || r <= self.intercept.max(0.0) || r > 1.0 {
            return Err(ProfileError::UninvertibleShare(r));
        }
        Ok((r - self.intercept) / self.slope)
    }

    /// Saturating inverse used by the fluid simulator: shares at or below the
    /// intercept starve the element (zero rate) instead of erroring, and
    /// shares above 1 are treated as a full core.
    pub fn service_rate(&self, r: f64) -> f64 {
        ((r.min(1.0) - self.intercept) / self.slope).max(0.0)
    }
}

/// Result of fitting a profile to measurements.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileFit {
    pub profile: ElementProfile,
    pub r_squared: f64,
}

/// Ordinary least squares over `(v, r)` samples. Samples are sorted before
/// accumulation so any permutation of the same set produces a bit-identical
/// fit.
pub fn fit_profile(label: &str, samples: &[(f64, f64)]) -> Result<ProfileFit, ProfileError> {
    if samples.len() < 2 {
        return Err(ProfileError::DegenerateSamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = sorted.len() as f64;
    let mean_v = sorted.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_r = sorted.iter().map(|s| s.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(v, r) in &sorted {
        sxx += (v - mean_v) * (v - mean_v);
        sxy += (v - mean_v) * (r - mean_r);
    }
    if sxx == 0.0 {
        return Err(ProfileError::DegenerateSamples);
    }
    let slope = sxy / sxx;
    if !slope.is_finite() || slope <= 0.0 {
        return Err(ProfileError::NonPositiveSlope(slope));
    }
    let intercept = mean_r - slope * mean_v;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for &(v, r) in &sorted {
        let pred = intercept + slope * v;
        ss_res += (r - pred) * (r - pred);
        ss_tot += (r - mean_r) * (r - mean_r);
    }
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ProfileFit { profile: ElementProfile::new(label, intercept, slope)?, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn classifier_saturates_near_238() {
        let p = ElementProfile::classifier();
        assert_relative_eq!(p.max_throughput(), (1.0 - 0.00048) / 0.0042, epsilon = 1e-12);
        assert_relative_eq!(p.max_throughput(), 237.98, epsilon = 0.005);
    }

    #[test]
    fn sender_saturates_near_786() {
        let p = ElementProfile::sender();
        assert_relative_eq!(p.max_throughput(), 786.15, epsilon = 0.005);
    }

    #[test]
    fn share_for_100_mbps_classifier() {
        let p = ElementProfile::classifier();
        assert_relative_eq!(p.cpu_for_throughput(100.0).unwrap(), 0.42048, epsilon = 1e-12);
    }

    #[test]
    fn share_clamps_at_one_core() {
        let p = ElementProfile::classifier();
        assert_eq!(p.cpu_for_throughput(500.0).unwrap(), 1.0);
        assert_eq!(p.cpu_for_throughput(p.max_throughput()).unwrap(), 1.0);
    }

    #[test]
    fn negative_intercept_clamps_at_zero() {
        let p = ElementProfile::sender();
        assert_eq!(p.cpu_for_throughput(0.0).unwrap(), 0.0);
    }

    #[test]
    fn negative_throughput_is_an_error() {
        let p = ElementProfile::classifier();
        assert_eq!(p.cpu_for_throughput(-1.0), Err(ProfileError::BadThroughput(-1.0)));
    }

    #[test]
    fn inverse_roundtrips_inside_range() {
        let p = ElementProfile::classifier();
        for v in [1.0, 50.0, 100.0, 200.0, 237.0] {
            let r = p.cpu_for_throughput(v).unwrap();
            assert_relative_eq!(p.throughput_for_cpu(r).unwrap(), v, epsilon = 1e-9);
        }
    }

    #[test]
    fn inverse_rejects_shares_at_or_below_intercept() {
        let p = ElementProfile::classifier();
        assert!(p.throughput_for_cpu(0.0001).is_err());
        assert!(p.throughput_for_cpu(1.2).is_err());
    }

    #[test]
    fn service_rate_saturates_instead_of_erroring() {
        let p = ElementProfile::classifier();
        assert_eq!(p.service_rate(0.0001), 0.0);
        assert_relative_eq!(p.service_rate(2.0), p.max_throughput(), epsilon = 1e-12);
    }

    #[test]
    fn fit_recovers_exact_line() {
        let p = ElementProfile::classifier();
        let samples: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let v = i as f64 * 10.0;
                (v, p.intercept + p.slope * v)
            })
            .collect();
        let fit = fit_profile("fit", &samples).unwrap();
        assert_relative_eq!(fit.profile.intercept, p.intercept, epsilon = 1e-12);
        assert_relative_eq!(fit.profile.slope, p.slope, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_two_points() {
        let fit = fit_profile("fit", &[(0.0, 0.0), (100.0, 0.42)]).unwrap();
        assert_relative_eq!(fit.profile.slope, 0.0042, epsilon = 1e-12);
        assert_relative_eq!(fit.profile.intercept, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_samples() {
        assert_eq!(fit_profile("x", &[(1.0, 0.5)]), Err(ProfileError::DegenerateSamples));
        assert_eq!(
            fit_profile("x", &[(1.0, 0.5), (1.0, 0.6)]),
            Err(ProfileError::DegenerateSamples)
        );
    }

    #[test]
    fn fit_is_permutation_invariant() {
        let a = [(0.0, 0.01), (10.0, 0.05), (20.0, 0.093), (30.0, 0.131)];
        let mut b = a;
        b.reverse();
        b.swap(0, 2);
        let fa = fit_profile("x", &a).unwrap();
        let fb = fit_profile("x", &b).unwrap();
        assert_eq!(fa.profile.slope.to_bits(), fb.profile.slope.to_bits());
        assert_eq!(fa.profile.intercept.to_bits(), fb.profile.intercept.to_bits());
        assert_eq!(fa.r_squared.to_bits(), fb.r_squared.to_bits());
    }
}
