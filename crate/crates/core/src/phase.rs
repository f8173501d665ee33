//! Dispersion relation `φ(ξ) = φ₀(k) - |η|²/k`, `φ₀(k) = |k|^α k`, the
//! modulation `σ = τ - φ(ξ)` and the resonance identity
//!
//! ```text
//! σ₁ + σ₂ - σ = r(k, k₁) + |kη₁ - k₁η|² / (k k₁ k₂),   r = φ₀(k) - φ₀(k₁) - φ₀(k₂).
//! ```
//!
//! For integer `α` everything on the right is a ratio of integers and is also
//! returned exactly.

use alloc::vec::Vec;

use crate::field::FreqPoint;
use crate::{math, Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Dispersion exponent `α ≥ 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DispersionParams {
    pub alpha: f64,
}

impl DispersionParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 2.0 && alpha.is_finite()) {
            return Err(Error::Parameter(alloc::format!("dispersion exponent must be >= 2, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    /// `α` as an integer when it is one.
    pub fn integer_alpha(&self) -> Option<u32> {
        (self.alpha == math::floor(self.alpha) && self.alpha <= 16.0).then_some(self.alpha as u32)
    }

    /// `|k|^α k` without the `k ≠ 0` check (zero at zero).
    #[inline]
    pub fn phi0_unchecked(&self, k: i64) -> f64 {
        match self.integer_alpha() {
            Some(a) => math::powi(k.unsigned_abs() as f64, a) * k as f64,
            None => math::powf(k.unsigned_abs() as f64, self.alpha) * k as f64,
        }
    }

    /// `|k|^α k` in exact integer arithmetic, for integer `α`.
    pub fn phi0_exact(&self, k: i64) -> Option<i128> {
        let a = self.integer_alpha()?;
        (k.unsigned_abs() as i128).checked_pow(a)?.checked_mul(k as i128)
    }

    /// `φ(ξ)` without the `k ≠ 0` check.
    #[inline]
    pub fn phi_unchecked(&self, xi: FreqPoint) -> f64 {
        self.phi0_unchecked(xi.k) - xi.eta_norm2() as f64 / xi.k as f64
    }
}

/// An odd phase `φ₀`. [`DispersionParams`] is the standard family;
/// [`OddPhaseTable`] accepts tabulated values.
pub trait Phase0 {
    fn phi0_value(&self, k: i64) -> f64;

    /// Exact integer value, when available.
    fn phi0_integer(&self, _k: i64) -> Option<i128> {
        None
    }
}

impl Phase0 for DispersionParams {
    fn phi0_value(&self, k: i64) -> f64 {
        self.phi0_unchecked(k)
    }
    fn phi0_integer(&self, k: i64) -> Option<i128> {
        self.phi0_exact(k)
    }
}

/// `φ₀(k) = sign(k) · values[|k| - 1]` for `1 ≤ |k| ≤ values.len()`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct OddPhaseTable {
    pub values: Vec<f64>,
}

impl Phase0 for OddPhaseTable {
    fn phi0_value(&self, k: i64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let v = self.values[k.unsigned_abs() as usize - 1];
        if k > 0 {
            v
        } else {
            -v
        }
    }
}

pub fn phi0(k: i64, p: &DispersionParams) -> Result<f64> {
    if k == 0 {
        return Err(Error::ZeroFrequency("phi0"));
    }
    Ok(p.phi0_unchecked(k))
}

pub fn phi(xi: FreqPoint, p: &DispersionParams) -> Result<f64> {
    if xi.k == 0 {
        return Err(Error::ZeroFrequency("phi"));
    }
    Ok(p.phi_unchecked(xi))
}

pub fn sigma(tau: f64, xi: FreqPoint, p: &DispersionParams) -> Result<f64> {
    Ok(tau - phi(xi, p)?)
}

/// Exact value of the resonance identity's right-hand side as
/// `r + num / den` with `den = k k₁ k₂`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ExactSplit {
    pub r_term: i128,
    pub mixed_num: i128,
    pub mixed_den: i128,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ResonanceSplit {
    pub r_term: f64,
    pub mixed_term: f64,
    pub total: f64,
    pub exact: Option<ExactSplit>,
}

fn check_pair(xi1: FreqPoint, xi2: FreqPoint) -> Result<FreqPoint> {
    if xi1.k == 0 || xi2.k == 0 {
        return Err(Error::ZeroFrequency("interacting frequencies"));
    }
    let xi = xi1 + xi2;
    if xi.k == 0 {
        return Err(Error::NullInteraction);
    }
    Ok(xi)
}

/// `|kη₁ - k₁η|²` as an integer.
pub fn mixed_numerator(xi1: FreqPoint, xi2: FreqPoint) -> i128 {
    let xi = xi1 + xi2;
    let (k, k1) = (xi.k as i128, xi1.k as i128);
    let a = k * xi1.eta[0] as i128 - k1 * xi.eta[0] as i128;
    let b = k * xi1.eta[1] as i128 - k1 * xi.eta[1] as i128;
    a * a + b * b
}

pub fn resonance_decomposition(xi1: FreqPoint, xi2: FreqPoint, p: &impl Phase0) -> Result<ResonanceSplit> {
    let xi = check_pair(xi1, xi2)?;
    let r_term = p.phi0_value(xi.k) - p.phi0_value(xi1.k) - p.phi0_value(xi2.k);
    let num = mixed_numerator(xi1, xi2);
    let den = xi.k as i128 * xi1.k as i128 * xi2.k as i128;
    let mixed_term = num as f64 / den as f64;
    let exact = match (p.phi0_integer(xi.k), p.phi0_integer(xi1.k), p.phi0_integer(xi2.k)) {
        (Some(a), Some(b), Some(c)) => Some(ExactSplit { r_term: a - b - c, mixed_num: num, mixed_den: den }),
        _ => None,
    };
    Ok(ResonanceSplit { r_term, mixed_term, total: r_term + mixed_term, exact })
}

/// `σ₁ + σ₂ - σ` evaluated through the modulation functions, `τ = τ₁ + τ₂`.
pub fn modulation_defect(xi1: FreqPoint, xi2: FreqPoint, tau1: f64, tau2: f64, p: &DispersionParams) -> Result<f64> {
    let xi = check_pair(xi1, xi2)?;
    Ok(sigma(tau1, xi1, p)? + sigma(tau2, xi2, p)? - sigma(tau1 + tau2, xi, p)?)
}

/// Bracket of `|r(k, k₁)| / (|k_max|^α |k_min|)` over a sample, with the
/// extremes taken over `{k, k₁, k₂}` by absolute value.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MagnitudeReport {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub argmin: (i64, i64),
    pub argmax: (i64, i64),
    pub samples: usize,
    pub skipped: usize,
}

pub fn r_term_magnitude_check(sample: &[(i64, i64)], p: &DispersionParams) -> MagnitudeReport {
    let mut rep = MagnitudeReport {
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
        argmin: (0, 0),
        argmax: (0, 0),
        samples: 0,
        skipped: 0,
    };
    for &(k1, k2) in sample {
        let k = k1 + k2;
        if k1 == 0 || k2 == 0 || k == 0 {
            rep.skipped += 1;
            continue;
        }
        let r = p.phi0_unchecked(k) - p.phi0_unchecked(k1) - p.phi0_unchecked(k2);
        let mut mags = [k.unsigned_abs(), k1.unsigned_abs(), k2.unsigned_abs()];
        mags.sort_unstable();
        let ratio = math::abs(r) / (math::powf(mags[2] as f64, p.alpha) * mags[0] as f64);
        rep.samples += 1;
        if ratio < rep.min_ratio {
            rep.min_ratio = ratio;
            rep.argmin = (k1, k2);
        }
        if ratio > rep.max_ratio {
            rep.max_ratio = ratio;
            rep.argmax = (k1, k2);
        }
    }
    rep
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SigmaBound {
    /// `max{|σ|, |σ₁|, |σ₂|}`.
    pub max_sigma: f64,
    /// `(|k_min| |k_max|^α + |kη₁ - k₁η|²/|kk₁k₂|) / 3`.
    pub bound: f64,
    /// `|σ₁ + σ₂ - σ| / 3`, which `max_sigma` always dominates.
    pub third_of_total: f64,
}

pub fn max_sigma_lower_bound(
    xi1: FreqPoint,
    xi2: FreqPoint,
    tau1: f64,
    tau2: f64,
    p: &DispersionParams,
) -> Result<SigmaBound> {
    let split = resonance_decomposition(xi1, xi2, p)?;
    let xi = xi1 + xi2;
    let s1 = sigma(tau1, xi1, p)?;
    let s2 = sigma(tau2, xi2, p)?;
    let s = sigma(tau1 + tau2, xi, p)?;
    let mut mags = [xi.k.unsigned_abs(), xi1.k.unsigned_abs(), xi2.k.unsigned_abs()];
    mags.sort_unstable();
    let kk = math::powf(mags[2] as f64, p.alpha) * mags[0] as f64;
    Ok(SigmaBound {
        max_sigma: math::abs(s).max(math::abs(s1)).max(math::abs(s2)),
        bound: (kk + math::abs(split.mixed_term)) / 3.0,
        third_of_total: math::abs(split.total) / 3.0,
    })
}

/// Summary of an exhaustive check of the resonance identity.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct IdentitySweep {
    pub alpha: f64,
    pub combinations: u64,
    pub max_relative_deviation: f64,
    /// Pairs where the integer `r` differed from `3 k k₁ k₂` (only for `α = 2`).
    pub cubic_violations: u64,
    /// Pairs where `r` and the mixed term had strictly opposite signs.
    pub sign_violations: u64,
}

/// Checks `σ₁ + σ₂ - σ = r + mixed` for all `0 < |k₁|, |k₂| ≤ k_max`,
/// `k₁ + k₂ ≠ 0`, and `η₁, η₂ ∈ [-m, m]²`.
///
/// Each `(k₁, k₂)` gets `taus.len()` time-frequency pairs, assigned to the
/// `η` combinations in rotation. Negating every frequency negates every term
/// exactly in floating point, so only `k₁ > 0` is evaluated. Likewise the
/// symmetries of the square, applied to `η₁` and `η₂` together, leave every
/// term bit-identical, so only `η₁` in the wedge `0 ≤ η₁,₂ ≤ η₁,₁` is
/// evaluated. The relative deviation is measured against
/// `max{|σ|, |σ₁|, |σ₂|, |total|}`.
pub fn identity_sweep(k_max: i64, m: i64, p: &DispersionParams, taus: &[(f64, f64)]) -> IdentitySweep {
    assert!(!taus.is_empty());
    let side = (2 * m + 1) as usize;
    let n_eta = side * side;
    let etas: Vec<[i64; 2]> = (0..n_eta).map(|i| [(i / side) as i64 - m, (i % side) as i64 - m]).collect();
    let norms: Vec<f64> = etas.iter().map(|e| (e[0] * e[0] + e[1] * e[1]) as f64).collect();
    // φ(ξ₁ + ξ₂) depends on η₁ + η₂ only; tabulate it on [-2m, 2m]².
    let wide = 2 * side - 1;
    let offsets: Vec<usize> = (0..n_eta).map(|i| (i / side) * wide + i % side).collect();
    let sum_norms: Vec<f64> = (0..wide * wide)
        .map(|i| {
            let x = (i / wide) as i64 - 2 * m;
            let y = (i % wide) as i64 - 2 * m;
            (x * x + y * y) as f64
        })
        .collect();
    let mut phis = alloc::vec![0.0; wide * wide];
    let mut out = IdentitySweep {
        alpha: p.alpha,
        combinations: 0,
        max_relative_deviation: 0.0,
        cubic_violations: 0,
        sign_violations: 0,
    };
    let mut phis1 = alloc::vec![0.0; n_eta];
    let mut phis2 = alloc::vec![0.0; n_eta];
    for k1 in 1..=k_max {
        for k2 in -k_max..=k_max {
            let k = k1 + k2;
            if k2 == 0 || k == 0 {
                continue;
            }
            let (f0, f1, f2) = (p.phi0_unchecked(k), p.phi0_unchecked(k1), p.phi0_unchecked(k2));
            let r = f0 - f1 - f2;
            if p.integer_alpha() == Some(2) {
                let exact = p.phi0_exact(k).unwrap() - p.phi0_exact(k1).unwrap() - p.phi0_exact(k2).unwrap();
                if exact != 3 * (k as i128) * (k1 as i128) * (k2 as i128) {
                    out.cubic_violations += 1;
                }
            }
            for i in 0..n_eta {
                phis1[i] = f1 - norms[i] / k1 as f64;
                phis2[i] = f2 - norms[i] / k2 as f64;
            }
            for (ph, n) in phis.iter_mut().zip(&sum_norms) {
                *ph = f0 - n / k as f64;
            }
            let den = (k * k1 * k2) as f64;
            let inv_den = 1.0 / den;
            // The mixed term has the sign of k k₁ k₂ wherever it is nonzero.
            let opposed = (r > 0.0 && den < 0.0) || (r < 0.0 && den > 0.0);
            let mut worst = 0.0f64;
            let mut ti = 0usize;
            for (i1, e1) in etas.iter().enumerate() {
                if !(0 <= e1[1] && e1[1] <= e1[0]) {
                    continue;
                }
                let p1 = phis1[i1];
                let o1 = offsets[i1];
                for (i2, e2) in etas.iter().enumerate() {
                    let (t1, t2) = taus[ti];
                    ti += 1;
                    if ti == taus.len() {
                        ti = 0;
                    }
                    let p2 = phis2[i2];
                    let pf = phis[o1 + offsets[i2]];
                    let s1 = t1 - p1;
                    let s2 = t2 - p2;
                    let s = (t1 + t2) - pf;
                    let lhs = s1 + s2 - s;
                    let za = k * e1[0] - k1 * (e1[0] + e2[0]);
                    let zb = k * e1[1] - k1 * (e1[1] + e2[1]);
                    let q = za * za + zb * zb;
                    let total = r + q as f64 * inv_den;
                    let scale = math::abs(s).max(math::abs(s1)).max(math::abs(s2)).max(math::abs(total));
                    let diff = math::abs(lhs - total);
                    if diff > worst * scale {
                        worst = diff / scale;
                    }
                }
            }
            out.combinations += (n_eta * n_eta) as u64;
            out.max_relative_deviation = out.max_relative_deviation.max(worst);
            if opposed {
                // The mixed term vanishes iff k₂η₁ = k₁η₂.
                let line = (-m..=m).filter(|a| (k2 * a) % k1 == 0 && ((k2 * a) / k1).abs() <= m).count() as u64;
                out.sign_violations += (n_eta * n_eta) as u64 - line * line;
            }
        }
    }
    out.combinations *= 2;
    out.sign_violations *= 2;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(k: i64, a: i64, b: i64) -> FreqPoint {
        FreqPoint::new(k, [a, b])
    }

    #[test]
    fn phase_values() {
        let a2 = DispersionParams::new(2.0).unwrap();
        let a35 = DispersionParams::new(3.5).unwrap();
        assert_eq!(phi0(1, &a2).unwrap(), 1.0);
        assert_eq!(phi0(-2, &a2).unwrap(), -8.0);
        assert!((phi0(3, &a35).unwrap() - 140.296).abs() < 1e-3);
        assert!(phi0(0, &a2).is_err());
        assert_eq!(phi(fp(1, 0, 0), &a2).unwrap(), 1.0);
        assert_eq!(phi(fp(2, 1, 1), &a2).unwrap(), 7.0);
        assert_eq!(sigma(0.0, fp(1, 0, 0), &a2).unwrap(), -1.0);
        assert!(DispersionParams::new(1.5).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let a2 = DispersionParams::new(2.0).unwrap();
        let s = resonance_decomposition(fp(1, 1, 0), fp(1, 0, 0), &a2).unwrap();
        assert_eq!((s.r_term, s.mixed_term, s.total), (6.0, 0.5, 6.5));
        let c = resonance_decomposition(fp(1, 1, 1), fp(1, 1, 1), &a2).unwrap();
        assert_eq!(c.mixed_term, 0.0);
        assert_eq!(c.total, 6.0);
        assert_eq!(
            resonance_decomposition(fp(1, 0, 0), fp(-1, 2, 0), &a2),
            Err(Error::NullInteraction)
        );
        assert!(resonance_decomposition(fp(0, 0, 0), fp(1, 2, 0), &a2).is_err());
    }

    #[test]
    fn magnitude_bracket_for_same_sign_cubic() {
        let a2 = DispersionParams::new(2.0).unwrap();
        let mut sample = Vec::new();
        for k1 in 1..=50 {
            for k2 in 1..=50 {
                sample.push((k1, k2));
            }
        }
        let rep = r_term_magnitude_check(&sample, &a2);
        // 3 k k₁ k₂ / (k² k_min) = 3 k_mid / k ∈ [3/2, 3).
        assert!((rep.min_ratio - 1.5).abs() < 1e-12);
        assert!(rep.max_ratio < 3.0 && rep.max_ratio > 2.9);
    }

    #[test]
    fn on_shell_interaction() {
        let a2 = DispersionParams::new(2.0).unwrap();
        let (x1, x2) = (fp(2, 1, -1), fp(3, 0, 2));
        let t1 = phi(x1, &a2).unwrap();
        let t2 = phi(x2, &a2).unwrap();
        let b = max_sigma_lower_bound(x1, x2, t1, t2, &a2).unwrap();
        let s = sigma(t1 + t2, x1 + x2, &a2).unwrap();
        assert!((b.max_sigma - s.abs()).abs() < 1e-12);
        assert!((b.third_of_total * 3.0 - s.abs()).abs() < 1e-9);
    }

    #[test]
    fn small_sweep_is_clean() {
        let a2 = DispersionParams::new(2.0).unwrap();
        let sw = identity_sweep(4, 3, &a2, &[(1.5, -2.25), (100.0, 3.0)]);
        assert!(sw.max_relative_deviation < 1e-12);
        assert_eq!(sw.cubic_violations, 0);
    }
}
