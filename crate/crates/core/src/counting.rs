//! Lattice points in thin annuli `r ≤ |η - δ|² < r + 1` and related counts.
//!
//! Centers with dyadic coordinates (any `δ` with `2^m δ ∈ Z²`, `m ≤ 30`) are
//! handled in exact integer arithmetic after scaling by `4^m`. Other centers
//! use the floating-point test, so that boundary ties follow whatever the
//! rounded comparison gives; the half-open rule is applied to the rounded
//! value.

use alloc::vec::Vec;

use crate::{math, Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Annulus {
    pub r: u64,
    pub delta: [f64; 2],
}

impl Annulus {
    pub fn new(r: u64, delta: [f64; 2]) -> Self {
        Self { r, delta }
    }

    pub fn contains(&self, eta: [i64; 2]) -> bool {
        match Center::of(self.delta) {
            Center::Dyadic { scale, d } => {
                let s = scale as i128;
                let a = s * eta[0] as i128 - d[0];
                let b = s * eta[1] as i128 - d[1];
                let q = a * a + b * b;
                let r = self.r as i128;
                q >= r * s * s && q < (r + 1) * s * s
            }
            Center::Float(c) => {
                let q = sq(eta[0] as f64 - c[0]) + sq(eta[1] as f64 - c[1]);
                q >= self.r as f64 && q < (self.r + 1) as f64
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum RegionKind {
    Disc,
    Square,
}

/// A closed disc of radius `R` or a closed axis-parallel square of half side `R`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Region {
    pub kind: RegionKind,
    pub center: [f64; 2],
    pub radius: f64,
}

impl Region {
    pub fn new(kind: RegionKind, center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Parameter("region size must be positive and finite".into()));
        }
        Ok(Self { kind, center, radius })
    }

    pub fn disc(center: [f64; 2], radius: f64) -> Result<Self> {
        Self::new(RegionKind::Disc, center, radius)
    }

    pub fn square(center: [f64; 2], half_side: f64) -> Result<Self> {
        Self::new(RegionKind::Square, center, half_side)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        match self.kind {
            RegionKind::Disc => dx * dx + dy * dy <= self.radius * self.radius,
            RegionKind::Square => math::abs(dx) <= self.radius && math::abs(dy) <= self.radius,
        }
    }

    /// Integer bounding box `[lo, hi]` per coordinate.
    pub fn bounding_box(&self) -> [[i64; 2]; 2] {
        [0, 1].map(|i| {
            [
                math::ceil(self.center[i] - self.radius) as i64,
                math::floor(self.center[i] + self.radius) as i64,
            ]
        })
    }
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}

#[derive(Clone, Copy, Debug)]
enum Center {
    /// `δ = d / scale` exactly.
    Dyadic { scale: i64, d: [i128; 2] },
    Float([f64; 2]),
}

impl Center {
    fn of(delta: [f64; 2]) -> Self {
        for m in 0..=30 {
            let scale = 1i64 << m;
            let a = delta[0] * scale as f64;
            let b = delta[1] * scale as f64;
            if a == math::floor(a) && b == math::floor(b) && math::abs(a) < 1e15 && math::abs(b) < 1e15 {
                return Center::Dyadic { scale, d: [a as i128, b as i128] };
            }
        }
        Center::Float(delta)
    }
}

/// Largest `s ≥ 0` with `s² < v`, for `v > 0`.
fn isqrt_below(v: i128) -> i128 {
    debug_assert!(v > 0);
    let mut s = math::sqrt(v as f64) as i128;
    while s * s >= v {
        s -= 1;
    }
    while (s + 1) * (s + 1) < v {
        s += 1;
    }
    s
}

/// Integers `m` with `(scale·m - d)² < v`, as an inclusive range (maybe empty).
fn exact_row(scale: i128, d: i128, v: i128) -> Option<(i64, i64)> {
    if v <= 0 {
        return None;
    }
    let s = isqrt_below(v);
    let lo = (d - s).div_euclid(scale) + i128::from((d - s).rem_euclid(scale) != 0);
    let hi = (d + s).div_euclid(scale);
    (lo <= hi).then_some((lo as i64, hi as i64))
}

/// Integers `m` with `a + (m - c)² < t`, as an inclusive range (maybe empty).
fn float_row(a: f64, c: f64, t: f64) -> Option<(i64, i64)> {
    if !(a < t) {
        return None;
    }
    let inside = |m: i64| a + sq(m as f64 - c) < t;
    let w = math::sqrt(t - a);
    let mut lo = math::floor(c - w) as i64 - 1;
    let mut hi = math::ceil(c + w) as i64 + 1;
    while lo <= hi && !inside(lo) {
        lo += 1;
    }
    while hi >= lo && !inside(hi) {
        hi -= 1;
    }
    (lo <= hi).then_some((lo, hi))
}

/// Rows of the annulus: for each `η₁`, at most two inclusive `η₂` ranges.
fn annulus_rows(a: &Annulus, mut visit: impl FnMut(i64, i64, i64)) {
    let r = a.r;
    let mut emit = |row: i64, outer: Option<(i64, i64)>, inner: Option<(i64, i64)>| {
        // Annulus row = outer disc row minus inner disc row.
        match (outer, inner) {
            (None, _) => {}
            (Some((lo, hi)), None) => visit(row, lo, hi),
            (Some((lo, hi)), Some((ilo, ihi))) => {
                if lo < ilo {
                    visit(row, lo, ilo - 1);
                }
                if ihi < hi {
                    visit(row, ihi + 1, hi);
                }
            }
        }
    };
    match Center::of(a.delta) {
        Center::Dyadic { scale, d } => {
            let s = scale as i128;
            let (lo_sq, hi_sq) = (r as i128 * s * s, (r as i128 + 1) * s * s);
            let rows = exact_row(s, d[0], hi_sq);
            if let Some((r0, r1)) = rows {
                for row in r0..=r1 {
                    let t = s * row as i128 - d[0];
                    let a2 = t * t;
                    emit(row, exact_row(s, d[1], hi_sq - a2), exact_row(s, d[1], lo_sq - a2));
                }
            }
        }
        Center::Float(c) => {
            let (lo_sq, hi_sq) = (r as f64, (r + 1) as f64);
            if let Some((r0, r1)) = float_row(0.0, c[0], hi_sq) {
                for row in r0..=r1 {
                    let a2 = sq(row as f64 - c[0]);
                    emit(row, float_row(a2, c[1], hi_sq), float_row(a2, c[1], lo_sq));
                }
            }
        }
    }
}

/// `#{η ∈ Z²: r ≤ |η - δ|² < r + 1}`.
pub fn count_annulus(a: &Annulus) -> u64 {
    // Integer translation invariance: reduce δ to [0, 1)².
    let reduced = Annulus::new(a.r, a.delta.map(|d| d - math::floor(d)));
    let mut n = 0u64;
    annulus_rows(&reduced, |_, lo, hi| n += (hi - lo + 1) as u64);
    n
}

/// Lattice points of the annulus, in row order.
pub fn annulus_points(a: &Annulus) -> Vec<[i64; 2]> {
    let mut pts = Vec::new();
    annulus_rows(a, |row, lo, hi| pts.extend((lo..=hi).map(|m| [row, m])));
    pts
}

/// Annulus points lying in the region `B`.
pub fn count_annulus_in_region(a: &Annulus, b: &Region) -> u64 {
    let [[x0, x1], [y0, y1]] = b.bounding_box();
    let mut n = 0u64;
    annulus_rows(a, |row, lo, hi| {
        if row < x0 || row > x1 {
            return;
        }
        for m in lo.max(y0)..=hi.min(y1) {
            if b.contains([row as f64, m as f64]) {
                n += 1;
            }
        }
    });
    n
}

/// `r₂(n) = #{η ∈ Z²: |η|² = n}` via `4(d₁(n) - d₃(n))`.
pub fn sum_two_squares(n: u64) -> u64 {
    if n == 0 {
        return 1;
    }
    let (mut d1, mut d3) = (0u64, 0u64);
    let mut tally = |d: u64| match d % 4 {
        1 => d1 += 1,
        3 => d3 += 1,
        _ => {}
    };
    let mut i = 1u64;
    while i * i <= n {
        if n % i == 0 {
            tally(i);
            if i * i != n {
                tally(n / i);
            }
        }
        i += 1;
    }
    4 * (d1 - d3)
}

/// Annulus points grouped by `|2η - 2δ|² mod 4`, for half-integer `δ`.
pub fn parity_class_counts(a: &Annulus) -> Result<[u64; 4]> {
    let d = a.delta.map(|x| 2.0 * x);
    if d.iter().any(|x| *x != math::floor(*x) || math::abs(*x) > 1e15) {
        return Err(Error::Parameter("parity classes require 2δ ∈ Z²".into()));
    }
    let d = d.map(|x| x as i128);
    let mut counts = [0u64; 4];
    for p in annulus_points(a) {
        let x = 2 * p[0] as i128 - d[0];
        let y = 2 * p[1] as i128 - d[1];
        counts[((x * x + y * y) % 4) as usize] += 1;
    }
    Ok(counts)
}

/// Result of a dyadic growth fit.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct GrowthFit {
    pub radii: Vec<u64>,
    pub max_counts: Vec<u64>,
    pub exponent: f64,
}

/// Fits the exponent of `max_δ count_annulus(r, δ)` against `r` over
/// `r = 1, 2, 4, …, ≤ r_max`.
pub fn fit_growth_exponent(r_max: u64, deltas: &[[f64; 2]]) -> Result<GrowthFit> {
    if deltas.is_empty() {
        return Err(Error::Parameter("empty center sample".into()));
    }
    if r_max < 100 {
        return Err(Error::Parameter("r_max must be at least 100".into()));
    }
    let mut radii = Vec::new();
    let mut r = 1u64;
    while r <= r_max {
        radii.push(r);
        r *= 2;
    }
    let max_counts: Vec<u64> = radii
        .iter()
        .map(|&r| deltas.iter().map(|d| count_annulus(&Annulus::new(r, *d))).max().unwrap_or(0))
        .collect();
    let exponent = fit_exponent(
        &radii.iter().map(|&r| r as f64).collect::<Vec<_>>(),
        &max_counts.iter().map(|&c| c as f64).collect::<Vec<_>>(),
    )?;
    Ok(GrowthFit { radii, max_counts, exponent })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_exponent(x: &[f64], y: &[f64]) -> Result<f64> {
    math::log_log_slope(x, y).ok_or_else(|| Error::Parameter("need two positive samples".into()))
}

/// The grid `{0, h, 2h, …, 1}²` with `h = 1/steps`.
pub fn delta_grid(steps: u32) -> Vec<[f64; 2]> {
    let h = 1.0 / steps as f64;
    let mut v = Vec::new();
    for i in 0..=steps {
        for j in 0..=steps {
            v.push([i as f64 * h, j as f64 * h]);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(a: &Annulus) -> u64 {
        let b = math::sqrt((a.r + 1) as f64) as i64 + 3;
        let mut n = 0;
        for x in -b - 2..=b + 2 {
            for y in -b - 2..=b + 2 {
                if a.contains([x, y]) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn worked_examples() {
        assert_eq!(count_annulus(&Annulus::new(0, [0.0, 0.0])), 1);
        assert_eq!(count_annulus(&Annulus::new(1, [0.0, 0.0])), 4);
        assert_eq!(count_annulus(&Annulus::new(4, [0.5, 0.5])), 4);
        assert_eq!(sum_two_squares(0), 1);
        assert_eq!(sum_two_squares(3), 0);
        assert_eq!(sum_two_squares(25), 12);
    }

    #[test]
    fn rows_match_brute_force() {
        for r in [0u64, 1, 2, 7, 24, 25, 50, 99] {
            for d in [[0.0, 0.0], [0.5, 0.5], [0.125, 0.875], [0.3, 0.71], [1.0 / 3.0, 0.2]] {
                let a = Annulus::new(r, d);
                assert_eq!(count_annulus(&a), brute(&a), "r={r} δ={d:?}");
                assert_eq!(annulus_points(&a).len() as u64, brute(&a));
            }
        }
    }

    #[test]
    fn parity_classes() {
        assert_eq!(parity_class_counts(&Annulus::new(4, [0.5, 0.5])).unwrap(), [0, 0, 4, 0]);
        assert_eq!(parity_class_counts(&Annulus::new(1, [0.0, 0.0])).unwrap(), [4, 0, 0, 0]);
        let c = parity_class_counts(&Annulus::new(10, [0.0, 0.5])).unwrap();
        assert_eq!(c[0] + c[2] + c[3], 0);
        assert!(parity_class_counts(&Annulus::new(4, [0.3, 0.5])).is_err());
    }

    #[test]
    fn region_counts() {
        let a = Annulus::new(25, [0.0, 0.0]);
        let b = Region::square([5.0, 0.0], 1.5).unwrap();
        let expect = annulus_points(&a).iter().filter(|p| b.contains([p[0] as f64, p[1] as f64])).count();
        assert_eq!(count_annulus_in_region(&a, &b), expect as u64);
        let all = Region::disc([0.0, 0.0], 100.0).unwrap();
        assert_eq!(count_annulus_in_region(&a, &all), count_annulus(&a));
        let far = Region::disc([100.0, 100.0], 2.0).unwrap();
        assert_eq!(count_annulus_in_region(&a, &far), 0);
    }

    #[test]
    fn fitter_calibration() {
        let x: Vec<f64> = (0..10).map(|i| (1u64 << i) as f64).collect();
        assert!(fit_exponent(&x, &vec![3.0; 10]).unwrap().abs() < 1e-12);
        let lin: Vec<f64> = x.iter().map(|r| 5.0 * r).collect();
        assert!((fit_exponent(&x, &lin).unwrap() - 1.0).abs() < 0.05);
        assert!(fit_growth_exponent(1000, &[]).is_err());
    }
}
