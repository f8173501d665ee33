//! Fourier restriction norms on truncated spectra.
//!
//! The weight of a mode `(ξ, τ_j)` is
//! `kw(k)^s ⟨η⟩^ε ⟨σ⟩^b (1 + ⟨σ⟩/⟨k⟩^{α+1})^β`, `σ = τ_j - φ(ξ)`, where `kw`
//! is `|k|` or `⟨k⟩` depending on [`KWeight`]. The `X` norm is the `ℓ²` norm
//! of the weighted coefficients; `Y` replaces `⟨σ⟩^b` by `⟨σ⟩^{-1}` and takes
//! `ℓ¹` in `j` before `ℓ²` in `ξ`. Every `τ_j` carries unit weight (there is
//! no `Δτ` factor in the discrete `ℓ¹`).

use alloc::vec::Vec;

use crate::field::{FreqPoint, FrequencyField, SpaceTimeSpectrum};
use crate::phase::DispersionParams;
use crate::{math, Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum KWeight {
    /// `|k|^s`, defined on the mean-zero sector.
    #[default]
    Homogeneous,
    /// `⟨k⟩^s`.
    Bracket,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NormParams {
    pub s: f64,
    pub eps: f64,
    pub b: f64,
    pub beta: f64,
    pub disp: DispersionParams,
    pub k_weight: KWeight,
}

impl NormParams {
    pub fn new(s: f64, eps: f64, b: f64, beta: f64, disp: DispersionParams) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::Parameter(alloc::format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self { s, eps, b, beta, disp, k_weight: KWeight::Homogeneous })
    }

    /// `X_{s,b}` with `ε = β = 0`.
    pub fn xsb(s: f64, b: f64, disp: DispersionParams) -> Self {
        Self { s, eps: 0.0, b, beta: 0.0, disp, k_weight: KWeight::Homogeneous }
    }

    pub fn with_k_weight(mut self, w: KWeight) -> Self {
        self.k_weight = w;
        self
    }

    pub fn with_b(mut self, b: f64) -> Self {
        self.b = b;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// The part of the weight that depends only on `ξ`.
    #[inline]
    pub fn spatial_weight(&self, xi: FreqPoint) -> f64 {
        let kw = match self.k_weight {
            KWeight::Homogeneous => math::abs_pow(xi.k as f64, self.s),
            KWeight::Bracket => math::powf(math::bracket(xi.k as f64), self.s),
        };
        let ew = if self.eps == 0.0 {
            1.0
        } else {
            math::powf(1.0 + xi.eta_norm2() as f64, 0.5 * self.eps)
        };
        kw * ew
    }

    /// `(1 + ⟨σ⟩/⟨k⟩^{α+1})^β`.
    #[inline]
    pub fn beta_factor(&self, k: i64, bs: f64) -> f64 {
        if self.beta == 0.0 {
            return 1.0;
        }
        let kb = math::powf(math::bracket(k as f64), self.disp.alpha + 1.0);
        math::powf(1.0 + bs / kb, self.beta)
    }

    /// Full weight of `(ξ, τ)` with modulation exponent `b`.
    pub fn weight(&self, xi: FreqPoint, tau: f64) -> f64 {
        let bs = math::bracket(tau - self.disp.phi_unchecked(xi));
        self.spatial_weight(xi) * math::powf(bs, self.b) * self.beta_factor(xi.k, bs)
    }
}

/// General per-mode weight
/// `|k|^{hom} ⟨k⟩^{brk} ⟨η⟩^{eta} ⟨σ⟩^{b} (1 + ⟨σ⟩/⟨k⟩^{α+1})^{beta}`,
/// used for the left-hand sides of the probes (derivatives in `x` fold into
/// `hom`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeWeight {
    pub hom: f64,
    pub brk: f64,
    pub eta: f64,
    pub b: f64,
    pub beta: f64,
    pub disp: DispersionParams,
}

impl ModeWeight {
    pub fn unit(disp: DispersionParams) -> Self {
        Self { hom: 0.0, brk: 0.0, eta: 0.0, b: 0.0, beta: 0.0, disp }
    }

    pub fn of(p: &NormParams) -> Self {
        let (hom, brk) = match p.k_weight {
            KWeight::Homogeneous => (p.s, 0.0),
            KWeight::Bracket => (0.0, p.s),
        };
        Self { hom, brk, eta: p.eps, b: p.b, beta: p.beta, disp: p.disp }
    }

    pub fn with_hom(mut self, extra: f64) -> Self {
        self.hom += extra;
        self
    }

    /// The `ξ`-only factor (0 on `k = 0`).
    pub fn spatial(&self, xi: FreqPoint) -> f64 {
        if xi.k == 0 {
            return 0.0;
        }
        let k = xi.k as f64;
        let mut w = 1.0;
        if self.hom != 0.0 {
            w *= math::abs_pow(k, self.hom);
        }
        if self.brk != 0.0 {
            w *= math::powf(math::bracket(k), self.brk);
        }
        if self.eta != 0.0 {
            w *= math::powf(1.0 + xi.eta_norm2() as f64, 0.5 * self.eta);
        }
        w
    }

    fn is_spatial(&self) -> bool {
        self.b == 0.0 && self.beta == 0.0
    }

    /// `⟨σ⟩`-dependent factor given `⟨σ⟩`.
    #[inline]
    pub fn modulation(&self, k: i64, bs: f64) -> f64 {
        let mut w = if self.b == 0.0 { 1.0 } else { math::powf(bs, self.b) };
        if self.beta != 0.0 {
            let kb = math::powf(math::bracket(k as f64), self.disp.alpha + 1.0);
            w *= math::powf(1.0 + bs / kb, self.beta);
        }
        w
    }

    pub fn eval(&self, xi: FreqPoint, tau: f64) -> f64 {
        let sp = self.spatial(xi);
        if sp == 0.0 || self.is_spatial() {
            return sp;
        }
        sp * self.modulation(xi.k, math::bracket(tau - self.disp.phi_unchecked(xi)))
    }

    /// Weights of every mode of `grid` in storage order.
    pub fn table(&self, grid: &crate::field::GridSpec) -> Vec<f64> {
        let nt = grid.n_time();
        let taus: Vec<f64> = (0..nt).map(|j| grid.tau(j as i64 - grid.j_max as i64)).collect();
        let sg = grid.spatial();
        let mut out = alloc::vec![0.0; grid.len()];
        for s in 0..sg.len() {
            let xi = sg.point(s);
            let sp = self.spatial(xi);
            if sp == 0.0 {
                continue;
            }
            let fib = &mut out[s * nt..(s + 1) * nt];
            if self.is_spatial() {
                fib.iter_mut().for_each(|w| *w = sp);
                continue;
            }
            let ph = self.disp.phi_unchecked(xi);
            for (w, t) in fib.iter_mut().zip(&taus) {
                *w = sp * self.modulation(xi.k, math::bracket(t - ph));
            }
        }
        out
    }
}

/// How fibers are combined after weighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FiberNorm {
    /// `ℓ²_ξ ℓ^q_j`.
    Mixed(f64),
    /// `sup_k ℓ²_{η,j}`.
    SupK,
}

/// Weighted norm of a spectrum, computing weights on the fly and skipping
/// zero coefficients. `k = 0` modes carry weight 0.
pub fn weighted_norm(u: &SpaceTimeSpectrum, w: &ModeWeight, how: FiberNorm) -> f64 {
    let g = u.grid;
    let nt = g.n_time();
    let taus: Vec<f64> = (0..nt).map(|j| g.tau(j as i64 - g.j_max as i64)).collect();
    let sg = g.spatial();
    let per_k = sg.len() / (2 * sg.k_max + 1);
    let mut acc = 0.0;
    let mut per_k_acc = 0.0;
    let mut sup: f64 = 0.0;
    for s in 0..sg.len() {
        let fiber = &u.coeffs[s * nt..(s + 1) * nt];
        let xi = sg.point(s);
        if xi.k != 0 && fiber.iter().any(|c| c.re != 0.0 || c.im != 0.0) {
            let sp = w.spatial(xi);
            let ph = if w.is_spatial() { 0.0 } else { w.disp.phi_unchecked(xi) };
            let mut f = 0.0;
            let q = match how {
                FiberNorm::Mixed(q) => q,
                FiberNorm::SupK => 2.0,
            };
            for (c, t) in fiber.iter().zip(&taus) {
                let m = c.norm();
                if m == 0.0 {
                    continue;
                }
                let ww = if w.is_spatial() { 1.0 } else { w.modulation(xi.k, math::bracket(t - ph)) };
                let x = ww * m;
                f += if q == 2.0 {
                    x * x
                } else if q == 1.0 {
                    x
                } else {
                    math::powf(x, q)
                };
            }
            let f2 = if q == 2.0 {
                f
            } else {
                let r = math::powf(f, 1.0 / q);
                r * r
            };
            acc += sp * sp * f2;
            per_k_acc += sp * sp * f2;
        }
        if (s + 1) % per_k == 0 {
            sup = sup.max(per_k_acc);
            per_k_acc = 0.0;
        }
    }
    match how {
        FiberNorm::Mixed(_) => math::sqrt(acc),
        FiberNorm::SupK => math::sqrt(sup),
    }
}

/// `ℓ²` norm of `weights · coefficients` for a precomputed weight table.
pub fn table_norm(u: &SpaceTimeSpectrum, table: &[f64]) -> f64 {
    math::sqrt(u.coeffs.iter().zip(table).map(|(c, w)| w * w * c.norm_sqr()).sum())
}

fn check_mean_zero(u: &SpaceTimeSpectrum) -> Result<()> {
    if u.k0_mass() != 0.0 {
        return Err(Error::MeanZero("nonzero k = 0 coefficients in a weighted norm".into()));
    }
    Ok(())
}

/// Calls `f(spatial index, ξ, j-slice, σ-weights)` for every `k ≠ 0` fiber,
/// with `bs[j] = ⟨σ_j⟩`.
fn for_each_fiber(u: &SpaceTimeSpectrum, disp: &DispersionParams, mut f: impl FnMut(usize, FreqPoint, &[f64])) {
    let g = u.grid;
    let nt = g.n_time();
    let taus: Vec<f64> = (0..nt).map(|j| g.tau(j as i64 - g.j_max as i64)).collect();
    let mut bs = alloc::vec![0.0; nt];
    let sg = g.spatial();
    for s in 0..sg.len() {
        let xi = sg.point(s);
        if xi.k == 0 {
            continue;
        }
        let ph = disp.phi_unchecked(xi);
        for (b, t) in bs.iter_mut().zip(&taus) {
            *b = math::bracket(t - ph);
        }
        f(s, xi, &bs);
    }
}

/// Per-mode weights in storage order (zero on `k = 0`).
pub fn mode_weights(u: &SpaceTimeSpectrum, p: &NormParams) -> Vec<f64> {
    let nt = u.grid.n_time();
    let mut w = alloc::vec![0.0; u.coeffs.len()];
    for_each_fiber(u, &p.disp, |s, xi, bs| {
        let sw = p.spatial_weight(xi);
        for (j, b) in bs.iter().enumerate() {
            w[s * nt + j] = sw * math::powf(*b, p.b) * p.beta_factor(xi.k, *b);
        }
    });
    w
}

/// Coefficients multiplied by their weights.
pub fn weighted(u: &SpaceTimeSpectrum, p: &NormParams) -> Result<SpaceTimeSpectrum> {
    check_mean_zero(u)?;
    let w = mode_weights(u, p);
    let mut out = u.clone();
    for (c, w) in out.coeffs.iter_mut().zip(&w) {
        *c *= *w;
    }
    Ok(out)
}

/// `‖u‖_{X_{s,ε,b;β}}`.
pub fn xsb_norm(u: &SpaceTimeSpectrum, p: &NormParams) -> Result<f64> {
    check_mean_zero(u)?;
    let nt = u.grid.n_time();
    let mut acc = 0.0;
    for_each_fiber(u, &p.disp, |s, xi, bs| {
        let sw = p.spatial_weight(xi);
        let fiber = &u.coeffs[s * nt..(s + 1) * nt];
        let mut f = 0.0;
        for (c, b) in fiber.iter().zip(bs) {
            if *c != crate::Complex64::new(0.0, 0.0) {
                let w = math::powf(*b, p.b) * p.beta_factor(xi.k, *b);
                f += w * w * c.norm_sqr();
            }
        }
        acc += sw * sw * f;
    });
    Ok(math::sqrt(acc))
}

/// `ℓ²_ξ ℓ^q_j` of the weighted coefficients.
pub fn mixed_norm(u: &SpaceTimeSpectrum, p: &NormParams, q: f64) -> Result<f64> {
    if !(1.0..=2.0).contains(&q) {
        return Err(Error::Parameter(alloc::format!("time exponent must lie in [1, 2], got {q}")));
    }
    check_mean_zero(u)?;
    Ok(fiber_lq(u, p, q, p.b))
}

fn fiber_lq(u: &SpaceTimeSpectrum, p: &NormParams, q: f64, b: f64) -> f64 {
    let nt = u.grid.n_time();
    let mut acc = 0.0;
    for_each_fiber(u, &p.disp, |s, xi, bs| {
        let sw = p.spatial_weight(xi);
        let fiber = &u.coeffs[s * nt..(s + 1) * nt];
        let mut f = 0.0;
        for (c, bb) in fiber.iter().zip(bs) {
            let m = c.norm();
            if m != 0.0 {
                let w = math::powf(*bb, b) * p.beta_factor(xi.k, *bb);
                f += if q == 1.0 { w * m } else { math::powf(w * m, q) };
            }
        }
        let fq = if q == 1.0 { f } else { math::powf(f, 1.0 / q) };
        acc += sw * sw * fq * fq;
    });
    math::sqrt(acc)
}

/// `‖u‖_{Y_{s,ε;β}}`: `⟨σ⟩^{-1}` weight, `ℓ¹` in `j`, `ℓ²` in `ξ`. The `b`
/// field of `p` is ignored.
pub fn y_norm(u: &SpaceTimeSpectrum, p: &NormParams) -> Result<f64> {
    check_mean_zero(u)?;
    Ok(fiber_lq(u, p, 1.0, -1.0))
}

/// `‖u‖_{Z_{s,ε;β}} = ‖u‖_Y + ‖u‖_{X_{s,ε,-1/2;β}}`.
pub fn z_norm(u: &SpaceTimeSpectrum, p: &NormParams) -> Result<f64> {
    Ok(y_norm(u, p)? + xsb_norm(u, &p.with_b(-0.5))?)
}

/// `Λ^b`: multiplication by `⟨σ_j⟩^b` (identity on `k = 0`).
pub fn lambda_b(u: &SpaceTimeSpectrum, b: f64, disp: &DispersionParams) -> SpaceTimeSpectrum {
    let mut out = u.clone();
    let nt = u.grid.n_time();
    for_each_fiber(u, disp, |s, _, bs| {
        for (c, bb) in out.coeffs[s * nt..(s + 1) * nt].iter_mut().zip(bs) {
            *c *= math::powf(*bb, b);
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use crate::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disp2() -> DispersionParams {
        DispersionParams::new(2.0).unwrap()
    }

    #[test]
    fn hand_computed_weight() {
        // k = 2, η = (1, 0): φ = 8 - 1/2; choose τ so that σ = 3.
        let xi = FreqPoint::new(2, [1, 0]);
        let tw = 2.0 * core::f64::consts::PI / (7.5 + 3.0);
        let g = GridSpec::new(2, 1, 1, tw).unwrap();
        let u = SpaceTimeSpectrum::single_mode(g, xi, 1, Complex64::new(1.0, 0.0)).unwrap();
        let p = NormParams::new(0.5, 1.0, 0.5, 0.0, disp2()).unwrap();
        let n = xsb_norm(&u, &p).unwrap();
        assert!((n - 2.0 * 10f64.powf(0.25)).abs() < 1e-12, "{n}");
        assert!((n - 3.5566).abs() < 1e-4);
    }

    #[test]
    fn y_and_mixed_two_modes() {
        let g = GridSpec::cube(2).unwrap();
        let xi = FreqPoint::new(1, [0, 0]);
        // φ(ξ) = 1, so τ_j = j gives σ ∈ {0, 1, ...}. Put mass at j = 0 and 2
        // (σ = -1 and 1) with equal weighted magnitude.
        let mut u = SpaceTimeSpectrum::zeros(g);
        u.set(xi, 0, Complex64::new(1.0, 0.0)).unwrap();
        u.set(xi, 2, Complex64::new(0.0, 1.0)).unwrap();
        let p = NormParams::xsb(0.0, 0.3, disp2());
        let m = 2f64.sqrt().powf(0.3);
        assert!((mixed_norm(&u, &p, 1.0).unwrap() - 2.0 * m).abs() < 1e-12);
        assert!((mixed_norm(&u, &p, 2.0).unwrap() - 2f64.sqrt() * m).abs() < 1e-12);
        assert!((xsb_norm(&u, &p).unwrap() - mixed_norm(&u, &p, 2.0).unwrap()).abs() < 1e-12);
        let my = 2f64.sqrt().powf(-1.0);
        assert!((y_norm(&u, &p).unwrap() - 2.0 * my).abs() < 1e-12);
    }

    #[test]
    fn on_shell_single_mode() {
        let g = GridSpec::cube(2).unwrap();
        let u = SpaceTimeSpectrum::single_mode(g, FreqPoint::new(1, [0, 0]), 1, Complex64::new(0.0, 2.0)).unwrap();
        let p = NormParams::new(0.7, 0.2, 0.6, 0.5, disp2()).unwrap();
        let beta = (1.0 + 1.0 / 2f64.sqrt().powi(3)).powf(0.5);
        assert!((xsb_norm(&u, &p).unwrap() - 2.0 * beta).abs() < 1e-12);
        assert!((z_norm(&u, &p.with_beta(0.0)).unwrap() - 4.0).abs() < 1e-12);
        assert!((y_norm(&u, &p.with_beta(0.0)).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_commutes_with_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GridSpec::cube(2).unwrap();
        let u = SpaceTimeSpectrum::random_gaussian(g, &mut rng);
        let d = disp2();
        let back = lambda_b(&lambda_b(&u, -0.7, &d), 0.7, &d);
        assert!(back.sub(&u).unwrap().l2_norm() < 1e-12 * u.l2_norm());
        let p = NormParams::xsb(0.3, 0.5, d);
        let a = xsb_norm(&lambda_b(&u, 0.5, &d), &p.with_b(0.0)).unwrap();
        assert!((a - xsb_norm(&u, &p).unwrap()).abs() < 1e-12 * a);
    }

    #[test]
    fn mode_weight_agrees_with_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = GridSpec::new(3, 2, 2, 1.7).unwrap();
        let u = crate::field::project_mean_zero(&SpaceTimeSpectrum::random_gaussian(g, &mut rng));
        for kw in [KWeight::Homogeneous, KWeight::Bracket] {
            let p = NormParams::new(0.4, -0.3, 0.6, 0.25, disp2()).unwrap().with_k_weight(kw);
            let w = ModeWeight::of(&p);
            let a = xsb_norm(&u, &p).unwrap();
            assert!((weighted_norm(&u, &w, FiberNorm::Mixed(2.0)) - a).abs() < 1e-12 * a);
            assert!((table_norm(&u, &w.table(&g)) - a).abs() < 1e-12 * a);
            let m = mixed_norm(&u, &p, 1.5).unwrap();
            assert!((weighted_norm(&u, &w, FiberNorm::Mixed(1.5)) - m).abs() < 1e-12 * m);
            let y = y_norm(&u, &p).unwrap();
            assert!((weighted_norm(&u, &ModeWeight { b: -1.0, ..w }, FiberNorm::Mixed(1.0)) - y).abs() < 1e-12 * y);
        }
        // sup over k of the per-k l2 mass.
        let w = ModeWeight::unit(disp2());
        let sup = (-3i64..=3)
            .filter(|k| *k != 0)
            .map(|k| u.modes().filter(|m| m.0.k == k).map(|m| m.2.norm_sqr()).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt();
        assert!((weighted_norm(&u, &w, FiberNorm::SupK) - sup).abs() < 1e-12 * sup);
    }

    #[test]
    fn mean_zero_required() {
        let g = GridSpec::cube(1).unwrap();
        let u = SpaceTimeSpectrum::single_mode(g, FreqPoint::new(0, [1, 0]), 0, Complex64::new(1.0, 0.0)).unwrap();
        assert!(xsb_norm(&u, &NormParams::xsb(0.0, 0.0, disp2())).is_err());
        assert!(NormParams::new(0.0, 0.0, 0.0, -1.0, disp2()).is_err());
    }
}
