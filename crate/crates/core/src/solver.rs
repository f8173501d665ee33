//! Pseudospectral solver for `∂_t u - iφ₀(D_x)u + ∂_x^{-1}Δ_y u + u∂_x u = 0`
//! on `T³`, and the Duhamel–Picard iteration.
//!
//! In Fourier variables `∂_t û = iφ(ξ)û - (ik/2)(u²)^`. The linear part is
//! integrated exactly; the quadratic term is evaluated on a padded physical
//! grid. Solver state holds only `k ≠ 0` modes, so `∂_x^{-1}` never meets the
//! zero mode.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::bilinear::TimeCutoff;
use crate::fft::{cis, FftPlanner};
use crate::field::{analyze, synthesize, FreqPoint, FrequencyField, GridSpec, SpaceTimeSpectrum, SpatialGrid, SpatialSpectrum};
use crate::norms::{weighted_norm, FiberNorm, ModeWeight};
use crate::phase::DispersionParams;
use crate::{math, Complex64, Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scheme {
    #[default]
    IntegratingFactorRk4,
    Etdrk4,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::IntegratingFactorRk4 => "integrating_factor_rk4",
            Scheme::Etdrk4 => "etdrk4",
        }
    }
}

impl core::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integrating_factor_rk4" | "ifrk4" => Ok(Scheme::IntegratingFactorRk4),
            "etdrk4" => Ok(Scheme::Etdrk4),
            _ => Err(Error::Parameter(format!("unknown scheme '{s}'"))),
        }
    }
}

/// Weight of the windowed `X_{s,ε,b}` proxy used in contraction reports.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ProxyNorm {
    pub s: f64,
    pub eps: f64,
    pub b: f64,
}

impl Default for ProxyNorm {
    fn default() -> Self {
        Self { s: 0.0, eps: 0.0, b: 0.55 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SolverConfig {
    pub disp: DispersionParams,
    pub grid: SpatialGrid,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Fraction of the padded physical grid occupied by retained modes;
    /// `2/3` makes the quadratic term alias-free.
    pub dealias: f64,
    pub picard_depth: usize,
    /// Quadrature nodes on `[0, T]` for the Picard iteration.
    pub picard_nodes: usize,
    pub proxy: ProxyNorm,
    /// `false` drops the quadratic term (free flow).
    pub nonlinear: bool,
    /// Record a state every this many steps (0: only the endpoints).
    pub save_every: usize,
}

impl SolverConfig {
    pub fn new(disp: DispersionParams, grid: SpatialGrid, dt: f64, t_end: f64) -> Result<Self> {
        let c = Self {
            disp,
            grid,
            dt,
            t_end,
            scheme: Scheme::default(),
            dealias: 2.0 / 3.0,
            picard_depth: 6,
            picard_nodes: 64,
            proxy: ProxyNorm::default(),
            nonlinear: true,
            save_every: 0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Parameter(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.dealias > 0.0 && self.dealias <= 1.0) {
            return Err(Error::Parameter(format!("dealias fraction must lie in (0, 1], got {}", self.dealias)));
        }
        if self.picard_nodes == 0 {
            return Err(Error::Parameter("picard_nodes must be positive".into()));
        }
        Ok(())
    }
}

/// Largest stable step for data `u`: the RK4 stability interval on the
/// imaginary axis over `K ‖u‖_{L^∞}`, with `‖u‖_{L^∞} ≤ Σ|û|`.
pub fn stability_bound(u: &SpatialSpectrum, cfg: &SolverConfig) -> f64 {
    let sup: f64 = u.coeffs.iter().map(|c| c.norm()).sum();
    let rate = cfg.grid.k_max as f64 * sup;
    if rate == 0.0 || !cfg.nonlinear {
        f64::INFINITY
    } else {
        2.0 * core::f64::consts::SQRT_2 / rate
    }
}

pub fn preflight(u: &SpatialSpectrum, cfg: &SolverConfig) -> Result<f64> {
    cfg.validate()?;
    if u.grid != cfg.grid {
        return Err(Error::Shape(format!("field grid {:?} differs from solver grid {:?}", u.grid, cfg.grid)));
    }
    if !u.is_mean_zero() {
        return Err(Error::MeanZero("the solver acts on mean-zero data only".into()));
    }
    let bound = stability_bound(u, cfg);
    if cfg.dt > bound {
        return Err(Error::Parameter(format!("dt = {} exceeds the stability bound {bound:.3e}", cfg.dt)));
    }
    Ok(bound)
}

// ---------------------------------------------------------------------------
// Mean-zero state

/// Coefficients with the `k = 0` block removed. The grid layout runs `k`
/// outermost, so that block is contiguous.
#[derive(Clone, Debug)]
struct Layout {
    grid: SpatialGrid,
    block: usize,
    start: usize,
}

impl Layout {
    fn new(grid: SpatialGrid) -> Self {
        let block = (2 * grid.m_max + 1) * (2 * grid.m_max + 1);
        Self { grid, block, start: grid.k_max * block }
    }

    fn len(&self) -> usize {
        self.grid.len() - self.block
    }

    fn full_index(&self, i: usize) -> usize {
        if i < self.start {
            i
        } else {
            i + self.block
        }
    }

    fn point(&self, i: usize) -> FreqPoint {
        self.grid.point(self.full_index(i))
    }

    fn pack(&self, u: &SpatialSpectrum) -> Vec<Complex64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&u.coeffs[..self.start]);
        v.extend_from_slice(&u.coeffs[self.start + self.block..]);
        v
    }

    fn unpack(&self, v: &[Complex64]) -> SpatialSpectrum {
        let mut c = Vec::with_capacity(self.grid.len());
        c.extend_from_slice(&v[..self.start]);
        c.extend(core::iter::repeat_n(ZERO, self.block));
        c.extend_from_slice(&v[self.start..]);
        SpatialSpectrum { grid: self.grid, coeffs: c }
    }
}

/// Smallest `n' ≥ n` with no prime factors above 5.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Evaluates `-(ik/2)(u²)^` with the padding adapted to the active support.
struct Quadratic {
    layout: Layout,
    dealias: f64,
    planner: FftPlanner,
}

impl Quadratic {
    fn new(grid: SpatialGrid, dealias: f64) -> Self {
        Self { layout: Layout::new(grid), dealias, planner: FftPlanner::new() }
    }

    fn eval(&mut self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let lay = &self.layout;
        let g = lay.grid;
        let bands = g.bands();
        let mut ext = [0usize; 3];
        let mut any = false;
        for (i, c) in v.iter().enumerate() {
            if *c != ZERO {
                let xi = lay.point(i);
                any = true;
                ext[0] = ext[0].max(xi.k.unsigned_abs() as usize);
                ext[1] = ext[1].max(xi.eta[0].unsigned_abs() as usize);
                ext[2] = ext[2].max(xi.eta[1].unsigned_abs() as usize);
            }
        }
        let mut out = vec![ZERO; lay.len()];
        if !any {
            return Ok(out);
        }
        let out_b: [usize; 3] = core::array::from_fn(|d| (2 * ext[d]).min(bands[d]));
        // Alias-free needs P ≥ 2e + o + 1; `dealias` scales that relative to 2/3.
        let shape: [usize; 3] = core::array::from_fn(|d| {
            let need = (2 * ext[d] + out_b[d] + 1) as f64 * (2.0 / 3.0) / self.dealias;
            smooth_size((math::ceil(need - 1e-9) as usize).max(2 * ext[d] + 1))
        });
        let n = ext.map(|e| 2 * e + 1);
        let mut crop = vec![ZERO; n[0] * n[1] * n[2]];
        let full = lay.unpack(v);
        let (ek, e1, e2) = (ext[0] as i64, ext[1] as i64, ext[2] as i64);
        let mut idx = 0;
        for k in -ek..=ek {
            for a in -e1..=e1 {
                for b in -e2..=e2 {
                    crop[idx] = full.get(FreqPoint::new(k, [a, b]));
                    idx += 1;
                }
            }
        }
        let mut samples = synthesize(&crop, &ext, &shape, &mut self.planner)?;
        for s in samples.iter_mut() {
            *s = *s * *s;
        }
        let sq = analyze(samples, &shape, &out_b, &mut self.planner)?;
        let (ok, o1, o2) = (out_b[0] as i64, out_b[1] as i64, out_b[2] as i64);
        let mut idx = 0;
        for k in -ok..=ok {
            for a in -o1..=o1 {
                for b in -o2..=o2 {
                    let c = sq[idx];
                    idx += 1;
                    if k == 0 {
                        continue;
                    }
                    let s = g.index(FreqPoint::new(k, [a, b])).expect("output band inside grid");
                    let i = if s < lay.start { s } else { s - lay.block };
                    out[i] = Complex64::new(0.0, -0.5 * k as f64) * c;
                }
            }
        }
        Ok(out)
    }
}

/// `-(ik/2)(u²)^`, i.e. the Fourier coefficients of `-u∂_x u`, dealiased and
/// truncated to the grid of `u`.
pub fn rhs_nonlinear(u: &SpatialSpectrum, cfg: &SolverConfig) -> Result<SpatialSpectrum> {
    if !u.is_mean_zero() {
        return Err(Error::MeanZero("the quadratic term is evaluated on mean-zero data".into()));
    }
    let mut q = Quadratic::new(u.grid, cfg.dealias);
    let lay = Layout::new(u.grid);
    let out = q.eval(&lay.pack(u))?;
    Ok(lay.unpack(&out))
}

// ---------------------------------------------------------------------------
// Exponential integrators

/// Evaluates an entire function with a removable singularity at 0 by its
/// mean over a circle of radius 1 around `z` when `|z| < 1`.
fn contour_mean(z: Complex64, f: impl Fn(Complex64) -> Complex64) -> Complex64 {
    if z.norm() >= 1.0 {
        return f(z);
    }
    const M: usize = 32;
    let mut acc = ZERO;
    for j in 0..M {
        let th = core::f64::consts::PI * (j as f64 + 0.5) / M as f64;
        acc += f(z + cis(th)) + f(z + cis(-th));
    }
    acc / (2 * M) as f64
}

fn exp_c(z: Complex64) -> Complex64 {
    cis(z.im) * math::exp(z.re)
}

/// Per-mode coefficients of one step.
struct Coefs {
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

/// One-step propagator with precomputed coefficients.
pub struct Stepper {
    cfg: SolverConfig,
    dt: f64,
    layout: Layout,
    phi: Vec<f64>,
    coefs: Coefs,
    quad: Quadratic,
}

impl Stepper {
    pub fn new(cfg: &SolverConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg.grid);
        let phi: Vec<f64> = (0..layout.len()).map(|i| cfg.disp.phi_unchecked(layout.point(i))).collect();
        let coefs = Self::coefs(&phi, dt, cfg.scheme);
        Ok(Self { cfg: *cfg, dt, layout, phi, coefs, quad: Quadratic::new(cfg.grid, cfg.dealias) })
    }

    fn coefs(phi: &[f64], dt: f64, scheme: Scheme) -> Coefs {
        let e: Vec<Complex64> = phi.iter().map(|p| cis(p * dt)).collect();
        let e2: Vec<Complex64> = phi.iter().map(|p| cis(p * dt / 2.0)).collect();
        let (mut q, mut f1, mut f2, mut f3) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        if scheme == Scheme::Etdrk4 {
            for p in phi {
                let z = Complex64::new(0.0, p * dt);
                q.push(contour_mean(z / 2.0, |w| (exp_c(w) - 1.0) / w) * (dt / 2.0));
                f1.push(
                    contour_mean(z, |w| (-4.0 - w + exp_c(w) * (4.0 - 3.0 * w + w * w)) / (w * w * w)) * dt,
                );
                f2.push(contour_mean(z, |w| (2.0 + w + exp_c(w) * (w - 2.0)) / (w * w * w)) * dt);
                f3.push(contour_mean(z, |w| (-4.0 - 3.0 * w - w * w + exp_c(w) * (4.0 - w)) / (w * w * w)) * dt);
            }
        }
        Coefs { e, e2, q, f1, f2, f3 }
    }

    fn n(&mut self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if self.cfg.nonlinear {
            self.quad.eval(v)
        } else {
            Ok(vec![ZERO; v.len()])
        }
    }

    fn advance(&mut self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        let h = self.dt;
        if !self.cfg.nonlinear {
            return Ok(u.iter().zip(&self.coefs.e).map(|(a, e)| a * e).collect());
        }
        let len = u.len();
        match self.cfg.scheme {
            Scheme::IntegratingFactorRk4 => {
                let a = self.n(u)?;
                let c = &self.coefs;
                let s1: Vec<Complex64> = (0..len).map(|i| c.e2[i] * (u[i] + a[i] * (h / 2.0))).collect();
                let b = self.n(&s1)?;
                let c = &self.coefs;
                let s2: Vec<Complex64> = (0..len).map(|i| c.e2[i] * u[i] + b[i] * (h / 2.0)).collect();
                let cc = self.n(&s2)?;
                let c = &self.coefs;
                let s3: Vec<Complex64> = (0..len).map(|i| c.e[i] * u[i] + c.e2[i] * cc[i] * h).collect();
                let d = self.n(&s3)?;
                let c = &self.coefs;
                Ok((0..len)
                    .map(|i| {
                        c.e[i] * u[i] + (c.e[i] * a[i] + c.e2[i] * (b[i] + cc[i]) * 2.0 + d[i]) * (h / 6.0)
                    })
                    .collect())
            }
            Scheme::Etdrk4 => {
                let nu = self.n(u)?;
                let c = &self.coefs;
                let a: Vec<Complex64> = (0..len).map(|i| c.e2[i] * u[i] + c.q[i] * nu[i]).collect();
                let na = self.n(&a)?;
                let c = &self.coefs;
                let b: Vec<Complex64> = (0..len).map(|i| c.e2[i] * u[i] + c.q[i] * na[i]).collect();
                let nb = self.n(&b)?;
                let c = &self.coefs;
                let cc: Vec<Complex64> =
                    (0..len).map(|i| c.e2[i] * a[i] + c.q[i] * (nb[i] * 2.0 - nu[i])).collect();
                let nc = self.n(&cc)?;
                let c = &self.coefs;
                Ok((0..len)
                    .map(|i| c.e[i] * u[i] + c.f1[i] * nu[i] + c.f2[i] * (na[i] + nb[i]) * 2.0 + c.f3[i] * nc[i])
                    .collect())
            }
        }
    }

    /// One step of size `dt` on a full spectrum (its `k = 0` block must vanish).
    pub fn step(&mut self, u: &SpatialSpectrum) -> Result<SpatialSpectrum> {
        if u.grid != self.cfg.grid {
            return Err(Error::Shape("field grid differs from solver grid".into()));
        }
        if !u.is_mean_zero() {
            return Err(Error::MeanZero("the solver acts on mean-zero data only".into()));
        }
        let v = self.advance(&self.layout.pack(u))?;
        Ok(self.layout.unpack(&v))
    }
}

/// One step of `cfg.scheme` with step `cfg.dt`.
pub fn step(u: &SpatialSpectrum, cfg: &SolverConfig) -> Result<SpatialSpectrum> {
    preflight(u, cfg)?;
    let mut s = Stepper::new(cfg, cfg.dt)?;
    let out = s.step(u)?;
    if out.coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite { step: 1 });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StepDiagnostics {
    pub t: f64,
    pub l2: f64,
    /// `|‖u(t)‖ - ‖u₀‖| / ‖u₀‖` (0 for zero data).
    pub drift: f64,
    /// `Σ (φ(ξ)/k) |û|² / 2`, the quadratic part of the Hamiltonian.
    pub energy: f64,
    pub max_mode: f64,
    pub conj_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpatialSpectrum>,
    /// One row per step, the first at `t = 0`.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn final_state(&self) -> &SpatialSpectrum {
        self.states.last().expect("a trajectory holds at least its initial state")
    }
}

fn l2(v: &[Complex64]) -> f64 {
    math::sqrt(v.iter().map(|c| c.norm_sqr()).sum())
}

fn diagnose(t: f64, u: &SpatialSpectrum, phi: &[f64], lay: &Layout, l2_0: f64) -> StepDiagnostics {
    let v = lay.pack(u);
    let n = l2(&v);
    let energy = v
        .iter()
        .enumerate()
        .map(|(i, c)| phi[i] / lay.point(i).k as f64 * c.norm_sqr() / 2.0)
        .sum();
    let max_mode = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let drift = if l2_0 > 0.0 { math::abs(n - l2_0) / l2_0 } else { 0.0 };
    StepDiagnostics { t, l2: n, drift, energy, max_mode, conj_error: u.conjugate_symmetry_error() }
}

fn check_real(u: &SpatialSpectrum) -> Result<()> {
    let n = u.l2_norm();
    if u.conjugate_symmetry_error() > 1e-12 * n.max(1.0) {
        return Err(Error::Parameter("initial data must be real (conjugate-symmetric coefficients)".into()));
    }
    Ok(())
}

/// Integrates from `u₀` to `t_end`. The last step is shortened when `dt` does
/// not divide `t_end`.
pub fn solve_cauchy(u0: &SpatialSpectrum, cfg: &SolverConfig) -> Result<Trajectory> {
    preflight(u0, cfg)?;
    check_real(u0)?;
    let steps = math::ceil(cfg.t_end / cfg.dt - 1e-9) as usize;
    let last = cfg.t_end - (steps - 1) as f64 * cfg.dt;
    let mut main = Stepper::new(cfg, cfg.dt)?;
    let mut tail = if math::abs(last - cfg.dt) > 1e-12 * cfg.dt { Some(Stepper::new(cfg, last)?) } else { None };
    let lay = main.layout.clone();
    let phi = main.phi.clone();
    let mut v = lay.pack(u0);
    let l2_0 = l2(&v);
    let mut traj = Trajectory { times: vec![0.0], states: vec![u0.clone()], diagnostics: vec![diagnose(0.0, u0, &phi, &lay, l2_0)] };
    for n in 1..=steps {
        let stepper = match (&mut tail, n == steps) {
            (Some(t), true) => t,
            _ => &mut main,
        };
        v = stepper.advance(&v)?;
        if v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite { step: n });
        }
        let t = if n == steps { cfg.t_end } else { n as f64 * cfg.dt };
        let u = lay.unpack(&v);
        traj.diagnostics.push(diagnose(t, &u, &phi, &lay, l2_0));
        if n == steps || (cfg.save_every > 0 && n % cfg.save_every == 0) {
            traj.times.push(t);
            traj.states.push(u);
        }
    }
    Ok(traj)
}

/// `max_t |‖u(t)‖ - ‖u₀‖| / ‖u₀‖`; zero for zero data.
pub fn l2_drift(traj: &Trajectory) -> f64 {
    traj.diagnostics.iter().map(|d| d.drift).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Picard iteration

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PicardReport {
    pub t_final: f64,
    pub nodes: Vec<f64>,
    /// Each iterate `u_0, u_1, ...` at `t = T`; `u_0` is the free evolution.
    pub finals: Vec<SpatialSpectrum>,
    /// `sup_t ‖u_{n+1} - u_n‖_{L²}` for `n ≥ 0`.
    pub diffs_c0l2: Vec<f64>,
    /// The same differences in the windowed `X` proxy.
    pub diffs_x: Vec<f64>,
    /// `ρ_n = ‖u_{n+1} - u_n‖ / ‖u_n - u_{n-1}‖` in `C⁰L²`, `n ≥ 1`.
    pub ratios_c0l2: Vec<Option<f64>>,
    pub ratios_x: Vec<Option<f64>>,
}

impl PicardReport {
    /// Whether the `C⁰L²` ratios are all below 1 and strictly decreasing.
    pub fn contracting(&self) -> bool {
        let r: Vec<f64> = self.ratios_c0l2.iter().map(|r| r.unwrap_or(0.0)).collect();
        r.iter().all(|x| *x < 1.0) && r.windows(2).all(|w| w[1] < w[0])
    }
}

/// Integration weights of `∫₀ʰ e^{(h-r)L} N(r) dr` for `N` linear between the
/// endpoints: `h (w₀ N(0) + w₁ N(h))`.
fn hold_weights(z: Complex64) -> (Complex64, Complex64) {
    let w0 = contour_mean(z, |w| ((w - 1.0) * exp_c(w) + 1.0) / (w * w));
    let w1 = contour_mean(z, |w| (exp_c(w) - 1.0 - w) / (w * w));
    (w0, w1)
}

/// `u_{n+1}(t) = e^{itφ}u₀ - ½∫₀ᵗ e^{i(t-s)φ} ∂_x(u_n²)(s) ds` on
/// `cfg.picard_nodes` equal steps of `[0, T]`, with exponential quadrature
/// exact for piecewise-linear integrands.
pub fn duhamel_picard(u0: &SpatialSpectrum, cfg: &SolverConfig, depth: usize, t_final: f64) -> Result<PicardReport> {
    if depth == 0 {
        return Err(Error::Parameter("Picard depth must be at least 1".into()));
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::Parameter("Picard horizon must be positive".into()));
    }
    cfg.validate()?;
    if u0.grid != cfg.grid {
        return Err(Error::Shape("field grid differs from solver grid".into()));
    }
    if !u0.is_mean_zero() {
        return Err(Error::MeanZero("the Picard map acts on mean-zero data only".into()));
    }
    let m = cfg.picard_nodes;
    let h = t_final / m as f64;
    let lay = Layout::new(cfg.grid);
    let phi: Vec<f64> = (0..lay.len()).map(|i| cfg.disp.phi_unchecked(lay.point(i))).collect();
    let e: Vec<Complex64> = phi.iter().map(|p| cis(p * h)).collect();
    let w: Vec<(Complex64, Complex64)> = phi.iter().map(|p| hold_weights(Complex64::new(0.0, p * h))).collect();
    let mut quad = Quadratic::new(cfg.grid, cfg.dealias);
    let v0 = lay.pack(u0);
    let nodes: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();

    // Free evolution at every node.
    let mut path: Vec<Vec<Complex64>> = nodes
        .iter()
        .map(|t| v0.iter().zip(&phi).map(|(c, p)| c * cis(p * t)).collect())
        .collect();
    let mut finals = vec![lay.unpack(&path[m])];
    let mut diffs_c0l2: Vec<f64> = Vec::new();
    let mut diffs_x: Vec<f64> = Vec::new();
    let mut ratios_c0l2 = Vec::new();
    let mut ratios_x = Vec::new();
    for it in 1..depth {
        let nl: Vec<Vec<Complex64>> = path.iter().map(|v| quad.eval(v)).collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(m + 1);
        next.push(v0.clone());
        for s in 0..m {
            let prev = &next[s];
            let v: Vec<Complex64> = (0..lay.len())
                .map(|i| e[i] * prev[i] + (w[i].0 * nl[s][i] + w[i].1 * nl[s + 1][i]) * h)
                .collect();
            if v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::NonFinite { step: s + 1 });
            }
            next.push(v);
        }
        let (c, x) = path_diff_norms(&next, &path, &lay, cfg, t_final)?;
        if it >= 2 {
            let rc = ratio(c, diffs_c0l2[it - 2]);
            if let Some(r) = rc {
                if r > 10.0 {
                    return Err(Error::Divergence { iterate: it, ratio: r });
                }
            }
            ratios_c0l2.push(rc);
            ratios_x.push(ratio(x, diffs_x[it - 2]));
        }
        diffs_c0l2.push(c);
        diffs_x.push(x);
        finals.push(lay.unpack(&next[m]));
        path = next;
    }
    Ok(PicardReport { t_final, nodes, finals, diffs_c0l2, diffs_x, ratios_c0l2, ratios_x })
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b > 0.0).then(|| a / b)
}

/// `sup_t ‖a - b‖_{L²}` and the windowed `X` proxy of `a - b`: the
/// difference times a smooth bump supported in `(0, T)`, read as a
/// `T`-periodic function of time.
fn path_diff_norms(
    a: &[Vec<Complex64>],
    b: &[Vec<Complex64>],
    lay: &Layout,
    cfg: &SolverConfig,
    t_final: f64,
) -> Result<(f64, f64)> {
    let sup = a
        .iter()
        .zip(b)
        .map(|(x, y)| l2(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    let nt = a.len() - 1;
    let j_max = (nt - 1) / 2;
    let grid = GridSpec::new(cfg.grid.k_max, cfg.grid.m_max, j_max, t_final)?;
    let cut = TimeCutoff::new(t_final / 2.0)?;
    let env: Vec<f64> = (0..nt).map(|i| cut.eval(i as f64 * t_final / nt as f64 - t_final / 2.0, t_final)).collect();
    let mut st = SpaceTimeSpectrum::zeros(grid);
    let mut planner = FftPlanner::new();
    let ntj = grid.n_time();
    for i in 0..lay.len() {
        let samples: Vec<Complex64> = (0..nt).map(|n| (a[n][i] - b[n][i]) * env[n]).collect();
        if samples.iter().all(|c| *c == ZERO) {
            continue;
        }
        let c = analyze(samples, &[nt], &[j_max], &mut planner)?;
        let s = lay.full_index(i);
        st.coeffs[s * ntj..(s + 1) * ntj].copy_from_slice(&c);
    }
    let w = ModeWeight { hom: cfg.proxy.s, eta: cfg.proxy.eps, b: cfg.proxy.b, ..ModeWeight::unit(cfg.disp) };
    Ok((sup, weighted_norm(&st, &w, FiberNorm::Mixed(2.0))))
}

// ---------------------------------------------------------------------------
// Lipschitz dependence

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LipschitzReport {
    /// `sup_{t ≤ T} ‖u(t) - v(t)‖ / ‖u₀ - v₀‖`.
    pub ratio: Option<f64>,
    pub initial_distance: f64,
    pub max_distance: f64,
    pub flag: Option<alloc::string::String>,
}

/// Discrete `H^s_x H^ε_y` norm (`|k|^s ⟨η⟩^ε`) of a mean-zero spectrum.
pub fn sobolev_norm(u: &SpatialSpectrum, s: f64, eps: f64) -> f64 {
    let w = ModeWeight { hom: s, eta: eps, ..ModeWeight::unit(DispersionParams { alpha: 2.0 }) };
    math::sqrt(u.modes().filter(|(xi, _)| xi.k != 0).map(|(xi, c)| (w.spatial(xi) * c.norm()).powi(2)).sum())
}

/// Runs both data to `t_final` and compares the solutions at every step in
/// `H^s_x H^ε_y`.
pub fn lipschitz_probe(
    u0: &SpatialSpectrum,
    v0: &SpatialSpectrum,
    cfg: &SolverConfig,
    t_final: f64,
    s: f64,
    eps: f64,
) -> Result<LipschitzReport> {
    let d0 = sobolev_norm(&u0.sub(v0)?, s, eps);
    if d0 == 0.0 {
        return Ok(LipschitzReport {
            ratio: None,
            initial_distance: 0.0,
            max_distance: 0.0,
            flag: Some("identical data; ratio undefined".into()),
        });
    }
    let c = SolverConfig { t_end: t_final, save_every: 1, ..*cfg };
    let tu = solve_cauchy(u0, &c)?;
    let tv = solve_cauchy(v0, &c)?;
    let mut worst = 0.0f64;
    for (a, b) in tu.states.iter().zip(&tv.states) {
        worst = worst.max(sobolev_norm(&a.sub(b)?, s, eps));
    }
    Ok(LipschitzReport { ratio: Some(worst / d0), initial_distance: d0, max_distance: worst, flag: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, m: usize, dt: f64, t_end: f64) -> SolverConfig {
        SolverConfig::new(DispersionParams::new(2.0).unwrap(), SpatialGrid::new(k, m).unwrap(), dt, t_end).unwrap()
    }

    fn cosine(grid: SpatialGrid, modes: &[(FreqPoint, f64)]) -> SpatialSpectrum {
        let mut u = SpatialSpectrum::zeros(grid);
        for (xi, a) in modes {
            u.set(*xi, Complex64::new(a / 2.0, 0.0)).unwrap();
            u.set(-*xi, Complex64::new(a / 2.0, 0.0)).unwrap();
        }
        u
    }

    #[test]
    fn quadratic_term_of_a_cosine() {
        // u = 2cos x: -u u_x = 2 sin 2x = -i e^{2ix} + i e^{-2ix}.
        let c = cfg(4, 2, 1e-3, 1.0);
        let u = cosine(c.grid, &[(FreqPoint::new(1, [0, 0]), 2.0)]);
        let n = rhs_nonlinear(&u, &c).unwrap();
        for (xi, v) in n.modes() {
            let want = match (xi.k, xi.eta) {
                (2, [0, 0]) => Complex64::new(0.0, -1.0),
                (-2, [0, 0]) => Complex64::new(0.0, 1.0),
                _ => ZERO,
            };
            assert!((v - want).norm() < 1e-14, "{xi:?}: {v}");
        }
        assert!(rhs_nonlinear(&SpatialSpectrum::zeros(c.grid), &c).unwrap().l2_norm() == 0.0);
    }

    #[test]
    fn quadratic_term_matches_direct_convolution() {
        let c = cfg(3, 2, 1e-3, 1.0);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let u = SpatialSpectrum::random_gaussian(c.grid, &mut rng, true);
        let n = rhs_nonlinear(&u, &c).unwrap();
        for (xi, v) in n.modes() {
            let mut acc = ZERO;
            for (x1, a) in u.modes() {
                let x2 = xi - x1;
                if x2.in_box(c.grid.k_max, c.grid.m_max) {
                    acc += a * u.get(x2);
                }
            }
            let want = if xi.k == 0 { ZERO } else { Complex64::new(0.0, -0.5 * xi.k as f64) * acc };
            assert!((v - want).norm() < 1e-12, "{xi:?}");
        }
        assert!(n.conjugate_symmetry_error() < 1e-13);
    }

    #[test]
    fn degenerate_axes_agree_with_full_padding() {
        // Data independent of y₂: the η₂ axis is collapsed to one sample.
        let c = cfg(4, 3, 1e-3, 1.0);
        let u = cosine(c.grid, &[(FreqPoint::new(1, [0, 0]), 0.3), (FreqPoint::new(1, [1, 0]), 0.2)]);
        let n = rhs_nonlinear(&u, &c).unwrap();
        let mut v = u.clone();
        // A negligible η₂ component forces the full three-dimensional grid.
        v.set(FreqPoint::new(1, [0, 3]), Complex64::new(1e-300, 0.0)).unwrap();
        v.set(FreqPoint::new(-1, [0, -3]), Complex64::new(1e-300, 0.0)).unwrap();
        let n3 = rhs_nonlinear(&v, &c).unwrap();
        assert!(n.sub(&n3).unwrap().l2_norm() < 1e-15);
    }

    #[test]
    fn linear_flow_is_exact_phase_rotation() {
        for scheme in [Scheme::IntegratingFactorRk4, Scheme::Etdrk4] {
            let mut c = cfg(3, 3, 0.01, 0.05);
            c.nonlinear = false;
            c.scheme = scheme;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
            let u0 = crate::field::project_mean_zero(&SpatialSpectrum::random_gaussian(c.grid, &mut rng, true));
            let tr = solve_cauchy(&u0, &c).unwrap();
            let exact = crate::bilinear::free_evolution_at(&u0, &c.disp, 0.05).unwrap();
            assert!(tr.final_state().sub(&exact).unwrap().l2_norm() < 1e-12 * u0.l2_norm());
            assert!(l2_drift(&tr) < 1e-12);
            let e0 = tr.diagnostics[0].energy;
            assert!(tr.diagnostics.iter().all(|d| (d.energy - e0).abs() < 1e-12 * e0.abs()));
        }
    }

    #[test]
    fn zero_data_and_input_checks() {
        let c = cfg(2, 2, 0.01, 0.03);
        let z = SpatialSpectrum::zeros(c.grid);
        let tr = solve_cauchy(&z, &c).unwrap();
        assert!(tr.states.iter().all(|s| s.l2_norm() == 0.0));
        assert_eq!(l2_drift(&tr), 0.0);
        let mut bad = z.clone();
        bad.set(FreqPoint::new(0, [1, 0]), Complex64::new(1.0, 0.0)).unwrap();
        assert!(matches!(solve_cauchy(&bad, &c), Err(Error::MeanZero(_))));
        let mut cplx = z.clone();
        cplx.set(FreqPoint::new(1, [0, 0]), Complex64::new(1.0, 0.0)).unwrap();
        assert!(matches!(solve_cauchy(&cplx, &c), Err(Error::Parameter(_))));
        let mut big = cfg(2, 2, 10.0, 20.0);
        big.nonlinear = true;
        let u = cosine(big.grid, &[(FreqPoint::new(1, [0, 0]), 1.0)]);
        assert!(preflight(&u, &big).is_err());
    }

    #[test]
    fn single_step_matches_taylor_expansion() {
        // u₀ = a cos x: û' = iφû + N(û). The step agrees with the second-order
        // Taylor polynomial up to O(dt³), so halving dt divides the gap by ~8.
        let c = cfg(4, 1, 1e-3, 1e-3);
        let u0 = cosine(c.grid, &[(FreqPoint::new(1, [0, 0]), 0.5)]);
        let lay = Layout::new(c.grid);
        let mut q = Quadratic::new(c.grid, c.dealias);
        let phi: Vec<f64> = (0..lay.len()).map(|i| c.disp.phi_unchecked(lay.point(i))).collect();
        let v0 = lay.pack(&u0);
        let f = |v: &[Complex64], q: &mut Quadratic| -> Vec<Complex64> {
            let n = q.eval(v).unwrap();
            v.iter().zip(&n).zip(&phi).map(|((a, b), p)| Complex64::new(0.0, *p) * a + b).collect()
        };
        let f0 = f(&v0, &mut q);
        // u'' = Df(u)·f(u) by a centered difference.
        let d = 1e-5;
        let vp: Vec<Complex64> = v0.iter().zip(&f0).map(|(a, b)| a + b * d).collect();
        let vm: Vec<Complex64> = v0.iter().zip(&f0).map(|(a, b)| a - b * d).collect();
        let fp = f(&vp, &mut q);
        let fm = f(&vm, &mut q);
        for scheme in [Scheme::IntegratingFactorRk4, Scheme::Etdrk4] {
            let mut errs = Vec::new();
            for dt in [1e-3, 5e-4] {
                let taylor: Vec<Complex64> = (0..v0.len())
                    .map(|i| v0[i] + f0[i] * dt + (fp[i] - fm[i]) / (2.0 * d) * (dt * dt / 2.0))
                    .collect();
                let cc = SolverConfig { scheme, dt, ..c };
                let one = step(&u0, &cc).unwrap();
                errs.push(l2(&lay.pack(&one).iter().zip(&taylor).map(|(a, b)| a - b).collect::<Vec<_>>()));
            }
            let order = errs[0] / errs[1];
            assert!(errs[0] < 1e-8 && (6.0..10.0).contains(&order), "{scheme:?}: {errs:?}");
        }
    }

    #[test]
    fn contour_means_match_series() {
        // (e^z - 1)/z at z = 1e-3 i against its Taylor series.
        let z = Complex64::new(0.0, 1e-3);
        let got = contour_mean(z, |w| (exp_c(w) - 1.0) / w);
        let want = Complex64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0 + z * z * z / 24.0;
        assert!((got - want).norm() < 1e-14);
        let (w0, w1) = hold_weights(Complex64::new(0.0, 1e-4));
        assert!((w0 - 0.5).norm() < 1e-4 && (w1 - 0.5).norm() < 1e-4);
    }

    #[test]
    fn picard_depth_one_is_free_flow() {
        let mut c = cfg(3, 2, 1e-3, 0.05);
        c.picard_nodes = 8;
        let u0 = cosine(c.grid, &[(FreqPoint::new(1, [1, 0]), 0.05)]);
        let r = duhamel_picard(&u0, &c, 1, 0.05).unwrap();
        let free = crate::bilinear::free_evolution_at(&u0, &c.disp, 0.05).unwrap();
        assert!(r.finals[0].sub(&free).unwrap().l2_norm() < 1e-15);
        let z = duhamel_picard(&SpatialSpectrum::zeros(c.grid), &c, 3, 0.05).unwrap();
        assert!(z.finals.iter().all(|f| f.l2_norm() == 0.0));
    }

    #[test]
    fn picard_contracts_and_matches_stepper() {
        let mut c = cfg(6, 3, 1e-3, 0.05);
        c.picard_nodes = 32;
        let u0 = cosine(c.grid, &[(FreqPoint::new(1, [1, 0]), 0.05 * core::f64::consts::SQRT_2)]);
        let r = duhamel_picard(&u0, &c, 5, 0.05).unwrap();
        assert_eq!(r.finals.len(), 5);
        assert_eq!(r.ratios_c0l2.len(), 3);
        assert!(r.contracting(), "{:?}", r.ratios_c0l2);
        let tr = solve_cauchy(&u0, &c).unwrap();
        assert!(r.finals[4].sub(tr.final_state()).unwrap().l2_norm() < 1e-9);
    }

    #[test]
    fn lipschitz_identical_and_linear() {
        let mut c = cfg(3, 2, 1e-2, 0.05);
        let u0 = cosine(c.grid, &[(FreqPoint::new(1, [0, 0]), 0.1)]);
        assert!(lipschitz_probe(&u0, &u0, &c, 0.05, 0.0, 0.0).unwrap().flag.is_some());
        c.nonlinear = false;
        let v0 = cosine(c.grid, &[(FreqPoint::new(1, [0, 0]), 0.1), (FreqPoint::new(2, [1, 0]), 1e-3)]);
        let r = lipschitz_probe(&u0, &v0, &c, 0.05, 0.0, 0.0).unwrap();
        assert!((r.ratio.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(49), 50);
        assert_eq!(smooth_size(97), 100);
        assert_eq!(smooth_size(1), 1);
        assert_eq!(smooth_size(7), 8);
    }
}
