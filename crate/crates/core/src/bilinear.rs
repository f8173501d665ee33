//! Products as frequency convolutions, the `M^{-ε}` multiplier, fractional
//! `y`-derivatives and the free flow.
//!
//! Inputs with `k = 0` never interact (the product of mean-zero functions is
//! computed on the mean-zero sector), and output modes with `k = 0` are
//! dropped. A product has band `b_u + b_v` in every direction; the
//! [`Extent::Full`] output grid holds all of it, [`Extent::Truncated`] keeps
//! the input grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::fft::{cis, FftPlanner};
use crate::field::{
    analyze, project_mean_zero, synthesize, FreqPoint, FrequencyField, GridSpec, SpaceTimeSpectrum,
    SpatialSpectrum,
};
use crate::phase::DispersionParams;
use crate::{math, Complex64, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Above this many interacting coefficient pairs the automatic method switches
/// from direct summation to the padded FFT (plain kernel only).
pub const DIRECT_PAIR_LIMIT: u64 = 1 << 22;

/// `(ξ₁, ξ₂, ξ = ξ₁ + ξ₂)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InteractionTriple {
    pub xi1: FreqPoint,
    pub xi2: FreqPoint,
    pub xi: FreqPoint,
}

impl InteractionTriple {
    pub fn new(xi1: FreqPoint, xi2: FreqPoint) -> Self {
        Self { xi1, xi2, xi: xi1 + xi2 }
    }

    pub fn is_consistent(&self) -> bool {
        self.xi1 + self.xi2 == self.xi
    }

    /// `k₁η − kη₁`.
    pub fn mixed_vector(&self) -> [i64; 2] {
        let (k1, k) = (self.xi1.k, self.xi.k);
        [k1 * self.xi.eta[0] - k * self.xi1.eta[0], k1 * self.xi.eta[1] - k * self.xi1.eta[1]]
    }

    pub fn meps_weight(&self, eps: f64) -> f64 {
        let w = self.mixed_vector();
        math::powf(1.0 + (w[0] * w[0] + w[1] * w[1]) as f64, -0.5 * eps)
    }
}

/// `|k₁η₂ − k₂η₁|²`, which equals `|k₁η − kη₁|²`.
#[inline]
pub fn mixed_norm2(xi1: FreqPoint, xi2: FreqPoint) -> i64 {
    let a = xi1.k * xi2.eta[0] - xi2.k * xi1.eta[0];
    let b = xi1.k * xi2.eta[1] - xi2.k * xi1.eta[1];
    a * a + b * b
}

/// `⟨k₁η − kη₁⟩^{-ε}`.
pub fn meps_weight(xi1: FreqPoint, xi2: FreqPoint, eps: f64) -> f64 {
    math::powf(1.0 + mixed_norm2(xi1, xi2) as f64, -0.5 * eps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel {
    Plain,
    /// `⟨k₁η − kη₁⟩^{-ε}` with `ε ≥ 0`.
    MEps(f64),
}

impl Kernel {
    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::MEps(e) if !(e >= 0.0) => {
                Err(Error::Parameter(alloc::format!("M^-eps needs eps >= 0, got {e}")))
            }
            _ => Ok(()),
        }
    }

    fn is_plain(&self) -> bool {
        matches!(self, Kernel::Plain) || matches!(self, Kernel::MEps(e) if *e == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extent {
    /// Output on the input grid.
    Truncated,
    /// Output on [`full_grid`], holding every product mode.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Auto,
    Direct,
    Fft,
}

/// Grid with doubled bands and the same time window.
pub fn full_grid(g: &GridSpec) -> GridSpec {
    GridSpec { k_max: 2 * g.k_max, m_max: 2 * g.m_max, j_max: 2 * g.j_max, t_window: g.t_window }
}

fn same_window(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a.t_window != b.t_window {
        return Err(Error::Shape("spectra live on different time windows".into()));
    }
    Ok(())
}

/// Nonzero fibers with `k ≠ 0`, stored sparsely in `j`.
pub(crate) struct SparseFibers {
    pub(crate) fibers: Vec<(FreqPoint, Vec<(i64, Complex64)>)>,
    pub(crate) nnz: u64,
}

impl SparseFibers {
    pub(crate) fn of(u: &SpaceTimeSpectrum) -> Self {
        let nt = u.grid.n_time();
        let jm = u.grid.j_max as i64;
        let sg = u.grid.spatial();
        let mut fibers = Vec::new();
        let mut nnz = 0u64;
        for s in 0..sg.len() {
            let xi = sg.point(s);
            if xi.k == 0 {
                continue;
            }
            let f: Vec<(i64, Complex64)> = u.coeffs[s * nt..(s + 1) * nt]
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != ZERO)
                .map(|(j, c)| (j as i64 - jm, *c))
                .collect();
            if !f.is_empty() {
                nnz += f.len() as u64;
                fibers.push((xi, f));
            }
        }
        Self { fibers, nnz }
    }
}

/// `⟨w⟩^{-ε}` looked up by `|w|²`.
struct WeightTable {
    eps: f64,
    table: Vec<f64>,
}

impl WeightTable {
    const MAX_LEN: i64 = 1 << 22;

    fn new(kernel: Kernel, max_w2: i64) -> Self {
        match kernel {
            Kernel::MEps(eps) if eps != 0.0 => {
                let table = if max_w2 < Self::MAX_LEN {
                    (0..=max_w2).map(|w2| math::powf(1.0 + w2 as f64, -0.5 * eps)).collect()
                } else {
                    Vec::new()
                };
                Self { eps, table }
            }
            _ => Self { eps: 0.0, table: Vec::new() },
        }
    }

    #[inline]
    fn get(&self, xi1: FreqPoint, xi2: FreqPoint) -> f64 {
        if self.eps == 0.0 {
            return 1.0;
        }
        let w2 = mixed_norm2(xi1, xi2);
        match self.table.get(w2 as usize) {
            Some(w) => *w,
            None => math::powf(1.0 + w2 as f64, -0.5 * self.eps),
        }
    }
}

fn max_mixed(a: &GridSpec, b: &GridSpec) -> i64 {
    let c = (a.k_max * b.m_max + b.k_max * a.m_max) as i64;
    2 * c * c
}

/// `Σ K(ξ₁,ξ₂) û(ξ₁,τ₁) v̂(ξ₂,τ₂)` on `out`, `k₁, k₂, k ≠ 0`.
pub fn convolve(
    u: &SpaceTimeSpectrum,
    v: &SpaceTimeSpectrum,
    kernel: Kernel,
    out: GridSpec,
    method: Method,
) -> Result<SpaceTimeSpectrum> {
    kernel.validate()?;
    same_window(&u.grid, &v.grid)?;
    same_window(&u.grid, &out)?;
    let use_fft = match method {
        Method::Direct => false,
        Method::Fft => {
            if !kernel.is_plain() {
                return Err(Error::Parameter("the FFT path only handles the plain product".into()));
            }
            true
        }
        Method::Auto => {
            kernel.is_plain() && {
                let (a, b) = (SparseFibers::of(u).nnz, SparseFibers::of(v).nnz);
                a.saturating_mul(b) > DIRECT_PAIR_LIMIT
            }
        }
    };
    if use_fft {
        fft_convolve(u, v, out)
    } else {
        Ok(direct_convolve(&SparseFibers::of(u), &SparseFibers::of(v), kernel, u.grid, v.grid, out))
    }
}

pub(crate) fn direct_convolve(
    fu: &SparseFibers,
    fv: &SparseFibers,
    kernel: Kernel,
    gu: GridSpec,
    gv: GridSpec,
    out: GridSpec,
) -> SpaceTimeSpectrum {
    let table = WeightTable::new(kernel, max_mixed(&gu, &gv));
    let mut res = SpaceTimeSpectrum::zeros(out);
    let nt = out.n_time();
    let jo = out.j_max as i64;
    let so = out.spatial();
    for (x1, f1) in &fu.fibers {
        for (x2, f2) in &fv.fibers {
            let xi = *x1 + *x2;
            if xi.k == 0 {
                continue;
            }
            let Some(s) = so.index(xi) else { continue };
            let w = table.get(*x1, *x2);
            let fiber = &mut res.coeffs[s * nt..(s + 1) * nt];
            for (j1, c1) in f1 {
                let c1 = *c1 * w;
                for (j2, c2) in f2 {
                    let j = j1 + j2;
                    if j.abs() <= jo {
                        fiber[(j + jo) as usize] += c1 * c2;
                    }
                }
            }
        }
    }
    res
}

/// Per-axis sample counts that resolve a product of bands `a` and `b`
/// projected onto band `c` without aliasing.
fn alias_free_shape(a: [usize; 4], b: [usize; 4], c: [usize; 4]) -> [usize; 4] {
    core::array::from_fn(|d| a[d] + b[d] + c[d] + 1)
}

fn zero_k0(u: &mut SpaceTimeSpectrum) {
    let nt = u.grid.n_time();
    let sg = u.grid.spatial();
    let per_k = sg.len() / (2 * sg.k_max + 1);
    let start = sg.k_max * per_k * nt;
    for c in &mut u.coeffs[start..start + per_k * nt] {
        *c = ZERO;
    }
}

fn fft_convolve(u: &SpaceTimeSpectrum, v: &SpaceTimeSpectrum, out: GridSpec) -> Result<SpaceTimeSpectrum> {
    let shape = alias_free_shape(u.grid.bands(), v.grid.bands(), out.bands());
    let mut planner = FftPlanner::new();
    let mut a = synthesize(&project_mean_zero(u).coeffs, &u.grid.bands(), &shape, &mut planner)?;
    {
        let b = synthesize(&project_mean_zero(v).coeffs, &v.grid.bands(), &shape, &mut planner)?;
        for (x, y) in a.iter_mut().zip(&b) {
            *x *= *y;
        }
    }
    let coeffs = analyze(a, &shape, &out.bands(), &mut planner)?;
    let mut res = SpaceTimeSpectrum::from_coeffs(out, coeffs)?;
    zero_k0(&mut res);
    Ok(res)
}

/// Adjoint of `u ↦ convolve(u, v, kernel, g.grid)` with respect to the `ℓ²`
/// pairing: `Σ K(ξ₁,ξ₂) conj(v̂(ξ₂,τ₂)) ĝ(ξ,τ)` evaluated on `u_grid`.
pub fn correlate(
    g: &SpaceTimeSpectrum,
    v: &SpaceTimeSpectrum,
    kernel: Kernel,
    u_grid: GridSpec,
    method: Method,
) -> Result<SpaceTimeSpectrum> {
    kernel.validate()?;
    same_window(&g.grid, &v.grid)?;
    same_window(&g.grid, &u_grid)?;
    let use_fft = match method {
        Method::Direct => false,
        Method::Fft => {
            if !kernel.is_plain() {
                return Err(Error::Parameter("the FFT path only handles the plain product".into()));
            }
            true
        }
        Method::Auto => {
            kernel.is_plain()
                && SparseFibers::of(g).nnz.saturating_mul(SparseFibers::of(v).nnz) > DIRECT_PAIR_LIMIT
        }
    };
    if use_fft {
        let shape = alias_free_shape(g.grid.bands(), v.grid.bands(), u_grid.bands());
        let mut planner = FftPlanner::new();
        let mut a = synthesize(&project_mean_zero(g).coeffs, &g.grid.bands(), &shape, &mut planner)?;
        {
            let b = synthesize(&project_mean_zero(v).coeffs, &v.grid.bands(), &shape, &mut planner)?;
            for (x, y) in a.iter_mut().zip(&b) {
                *x *= y.conj();
            }
        }
        let coeffs = analyze(a, &shape, &u_grid.bands(), &mut planner)?;
        let mut res = SpaceTimeSpectrum::from_coeffs(u_grid, coeffs)?;
        zero_k0(&mut res);
        return Ok(res);
    }
    let fg = SparseFibers::of(g);
    let fv = SparseFibers::of(v);
    let table = WeightTable::new(kernel, max_mixed(&u_grid, &v.grid));
    let mut res = SpaceTimeSpectrum::zeros(u_grid);
    let nt = u_grid.n_time();
    let ju = u_grid.j_max as i64;
    let su = u_grid.spatial();
    for (xg, fgib) in &fg.fibers {
        for (x2, f2) in &fv.fibers {
            let x1 = *xg - *x2;
            if x1.k == 0 {
                continue;
            }
            let Some(s) = su.index(x1) else { continue };
            let w = table.get(x1, *x2);
            let fiber = &mut res.coeffs[s * nt..(s + 1) * nt];
            for (j, cg) in fgib {
                let cg = *cg * w;
                for (j2, c2) in f2 {
                    let j1 = j - j2;
                    if j1.abs() <= ju {
                        fiber[(j1 + ju) as usize] += cg * c2.conj();
                    }
                }
            }
        }
    }
    Ok(res)
}

fn require_same_grid(u: &SpaceTimeSpectrum, v: &SpaceTimeSpectrum) -> Result<()> {
    if u.grid != v.grid {
        return Err(Error::Shape(alloc::format!("grid mismatch: {:?} vs {:?}", u.grid, v.grid)));
    }
    Ok(())
}

/// Product `uv` truncated to the common grid.
pub fn bilinear_product(u: &SpaceTimeSpectrum, v: &SpaceTimeSpectrum) -> Result<SpaceTimeSpectrum> {
    bilinear_product_with(u, v, Method::Auto)
}

pub fn bilinear_product_with(u: &SpaceTimeSpectrum, v: &SpaceTimeSpectrum, method: Method) -> Result<SpaceTimeSpectrum> {
    require_same_grid(u, v)?;
    convolve(u, v, Kernel::Plain, u.grid, method)
}

/// Kernel product of two spectra on a common grid, with the chosen extent.
pub fn product(u: &SpaceTimeSpectrum, v: &SpaceTimeSpectrum, kernel: Kernel, extent: Extent) -> Result<SpaceTimeSpectrum> {
    require_same_grid(u, v)?;
    let out = match extent {
        Extent::Truncated => u.grid,
        Extent::Full => full_grid(&u.grid),
    };
    convolve(u, v, kernel, out, Method::Auto)
}

/// Product `uv` on [`full_grid`].
pub fn product_full(u: &SpaceTimeSpectrum, v: &SpaceTimeSpectrum) -> Result<SpaceTimeSpectrum> {
    product(u, v, Kernel::Plain, Extent::Full)
}

/// `M^{-ε}(u, v)` truncated to the common grid.
pub fn m_eps_apply(u: &SpaceTimeSpectrum, v: &SpaceTimeSpectrum, eps: f64) -> Result<SpaceTimeSpectrum> {
    require_same_grid(u, v)?;
    Kernel::MEps(eps).validate()?;
    if eps == 0.0 {
        return bilinear_product(u, v);
    }
    convolve(u, v, Kernel::MEps(eps), u.grid, Method::Direct)
}

/// `M^{-ε}(u, v)` on [`full_grid`].
pub fn m_eps_full(u: &SpaceTimeSpectrum, v: &SpaceTimeSpectrum, eps: f64) -> Result<SpaceTimeSpectrum> {
    product(u, v, Kernel::MEps(eps), Extent::Full)
}

/// `min(‖û‖₁‖v̂‖₂, ‖û‖₂‖v̂‖₁)` over `k ≠ 0` modes: an upper bound for the `ℓ²`
/// norm of any convolution of `u` and `v` with a kernel bounded by 1.
pub fn convolution_l2_bound(u: &SpaceTimeSpectrum, v: &SpaceTimeSpectrum) -> f64 {
    let norms = |w: &SpaceTimeSpectrum| {
        let f = SparseFibers::of(w);
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for (_, fib) in &f.fibers {
            for (_, c) in fib {
                l1 += c.norm();
                l2 += c.norm_sqr();
            }
        }
        (l1, math::sqrt(l2))
    };
    let (a1, a2) = norms(u);
    let (b1, b2) = norms(v);
    (a1 * b2).min(a2 * b1)
}

/// Multiplication by `⟨η⟩^{exponent}`.
pub fn dy_fractional<F: FrequencyField>(u: &F, exponent: f64) -> F {
    if exponent == 0.0 {
        return u.clone();
    }
    u.apply_multiplier(|xi| math::powf(1.0 + xi.eta_norm2() as f64, 0.5 * exponent))
}

/// Multiplication by `|k|^{exponent}`; the `k = 0` modes are zeroed.
pub fn dx_power<F: FrequencyField>(u: &F, exponent: f64) -> F {
    u.apply_multiplier(|xi| if xi.k == 0 { 0.0 } else { math::abs_pow(xi.k as f64, exponent) })
}

/// `∂_x`: multiplication by `ik`.
pub fn dx<F: FrequencyField>(u: &F) -> F {
    let mut out = u.clone();
    let sg = out.spatial_grid();
    let n = out.fiber_len();
    for (s, fiber) in out.coeffs_mut().chunks_exact_mut(n).enumerate() {
        let k = sg.point(s).k as f64;
        for c in fiber {
            *c = Complex64::new(-k * c.im, k * c.re);
        }
    }
    out
}

fn require_mean_zero(u0: &SpatialSpectrum) -> Result<()> {
    if !u0.is_mean_zero() {
        return Err(Error::MeanZero("free evolution needs mean-zero data".into()));
    }
    Ok(())
}

/// `e^{itφ(D)}u₀`.
pub fn free_evolution_at(u0: &SpatialSpectrum, p: &DispersionParams, t: f64) -> Result<SpatialSpectrum> {
    require_mean_zero(u0)?;
    let mut out = u0.clone();
    let sg = u0.grid;
    for (s, c) in out.coeffs.iter_mut().enumerate() {
        let xi = sg.point(s);
        if xi.k != 0 {
            *c *= cis(t * p.phi_unchecked(xi));
        }
    }
    Ok(out)
}

/// Sample times `t_n = T_w n / (2J + 1)` of a grid.
pub fn sample_times(grid: &GridSpec) -> Vec<f64> {
    let nt = grid.n_time();
    (0..nt).map(|n| grid.t_window * n as f64 / nt as f64).collect()
}

/// The free flow at every sample time of `grid`.
pub fn free_evolution_samples(
    u0: &SpatialSpectrum,
    p: &DispersionParams,
    grid: &GridSpec,
) -> Result<Vec<SpatialSpectrum>> {
    sample_times(grid).into_iter().map(|t| free_evolution_at(u0, p, t)).collect()
}

/// Space-time spectrum of the free flow: the band-limited interpolant in `t`
/// of its values at the sample times.
pub fn free_evolution(u0: &SpatialSpectrum, p: &DispersionParams, grid: GridSpec) -> Result<SpaceTimeSpectrum> {
    require_mean_zero(u0)?;
    if u0.grid != grid.spatial() {
        return Err(Error::Shape("initial datum and grid disagree".into()));
    }
    time_sampled(u0, p, grid, 1, |_| 1.0)
}

/// Smooth bump `exp(1 - 1/(1 - (t/T)²))` on `|t| < T`, with `t` taken modulo
/// the time window in `(-T_w/2, T_w/2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeCutoff {
    pub half_width: f64,
}

impl TimeCutoff {
    pub fn new(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::Parameter("cutoff width must be positive".into()));
        }
        Ok(Self { half_width })
    }

    pub fn eval(&self, t: f64, window: f64) -> f64 {
        let t = t - window * math::round(t / window);
        let x = t / self.half_width;
        if x.abs() >= 1.0 {
            0.0
        } else {
            math::exp(1.0 - 1.0 / (1.0 - x * x))
        }
    }
}

/// `ψ_T(t) e^{itφ(D)}u₀`, sampled `oversample` times finer than the grid
/// and projected onto its time band.
pub fn localized_free_evolution(
    u0: &SpatialSpectrum,
    p: &DispersionParams,
    grid: GridSpec,
    cutoff: TimeCutoff,
    oversample: usize,
) -> Result<SpaceTimeSpectrum> {
    require_mean_zero(u0)?;
    if u0.grid != grid.spatial() {
        return Err(Error::Shape("initial datum and grid disagree".into()));
    }
    if oversample == 0 {
        return Err(Error::Parameter("oversampling factor must be positive".into()));
    }
    time_sampled(u0, p, grid, oversample, |t| cutoff.eval(t, grid.t_window))
}

fn time_sampled(
    u0: &SpatialSpectrum,
    p: &DispersionParams,
    grid: GridSpec,
    oversample: usize,
    envelope: impl Fn(f64) -> f64,
) -> Result<SpaceTimeSpectrum> {
    let nt = grid.n_time();
    let pt = nt * oversample;
    let times: Vec<f64> = (0..pt).map(|n| grid.t_window * n as f64 / pt as f64).collect();
    let env: Vec<f64> = times.iter().map(|t| envelope(*t)).collect();
    let mut planner = FftPlanner::new();
    let mut out = SpaceTimeSpectrum::zeros(grid);
    let sg = grid.spatial();
    let mut buf = vec![ZERO; pt];
    for s in 0..sg.len() {
        let c0 = u0.coeffs[s];
        let xi = sg.point(s);
        if c0 == ZERO || xi.k == 0 {
            continue;
        }
        let ph = p.phi_unchecked(xi);
        for ((b, t), e) in buf.iter_mut().zip(&times).zip(&env) {
            *b = c0 * cis(ph * t) * *e;
        }
        let coeffs = analyze(buf.clone(), &[pt], &[grid.j_max], &mut planner)?;
        out.coeffs[s * nt..(s + 1) * nt].copy_from_slice(&coeffs);
    }
    Ok(out)
}

/// Compares `F_x e^{itφ}u₀(k, ·)` with `e^{itφ₀(k)} e^{i(t/k)Δ_y} F_x u₀(k, ·)`
/// mode by mode and returns the largest deviation.
pub fn schrodinger_factorization_check(u0: &SpatialSpectrum, k: i64, t: f64, p: &DispersionParams) -> Result<f64> {
    if k == 0 {
        return Err(Error::ZeroFrequency("the factorization needs k != 0"));
    }
    if k.unsigned_abs() as usize > u0.grid.k_max {
        return Err(Error::Shape(alloc::format!("k = {k} is off the grid")));
    }
    let mut worst = 0.0f64;
    let m = u0.grid.m_max as i64;
    let outer = cis(t * p.phi0_unchecked(k));
    for e1 in -m..=m {
        for e2 in -m..=m {
            let xi = FreqPoint::new(k, [e1, e2]);
            let c = u0.get(xi);
            let lhs = c * cis(t * p.phi_unchecked(xi));
            // Schrödinger flow in y with time t/k: multiplier e^{-i(t/k)|η|²}.
            let schr = cis(-(t / k as f64) * xi.eta_norm2() as f64);
            let rhs = outer * (schr * c);
            worst = worst.max((lhs - rhs).norm());
        }
    }
    Ok(worst)
}
