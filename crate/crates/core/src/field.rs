//! Truncated Fourier lattices on `T³ × [0, T_w]` and the fields living on them.
//!
//! Coefficients are Fourier-series coefficients: a field is
//! `u(x, y, t) = Σ c(k, η, j) e^{i(kx + η·y + τ_j t)}` with `τ_j = 2πj / T_w`,
//! and all `L^p` norms use the normalized measure on `T³ × [0, T_w]`. With this
//! convention Parseval holds with constant one and a single mode with unit
//! coefficient has every `L^p` norm equal to one.
//!
//! Coefficient arrays are dense and row-major in `(k, η¹, η², j)`, with each
//! axis running from `-band` to `band`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::counting::Region;
use crate::fft::{transform_nd, Complex64, Direction, FftPlanner, Pruning};
use crate::{math, Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// An integer frequency `ξ = (k, η) ∈ Z × Z²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FreqPoint {
    pub k: i64,
    pub eta: [i64; 2],
}

impl FreqPoint {
    pub const fn new(k: i64, eta: [i64; 2]) -> Self {
        Self { k, eta }
    }

    pub fn eta_norm2(&self) -> i64 {
        self.eta[0] * self.eta[0] + self.eta[1] * self.eta[1]
    }

    pub fn in_box(&self, k_max: usize, m_max: usize) -> bool {
        self.k.unsigned_abs() as usize <= k_max
            && self.eta.iter().all(|e| e.unsigned_abs() as usize <= m_max)
    }
}

impl core::ops::Add for FreqPoint {
    type Output = FreqPoint;
    fn add(self, o: FreqPoint) -> FreqPoint {
        FreqPoint::new(self.k + o.k, [self.eta[0] + o.eta[0], self.eta[1] + o.eta[1]])
    }
}

impl core::ops::Sub for FreqPoint {
    type Output = FreqPoint;
    fn sub(self, o: FreqPoint) -> FreqPoint {
        FreqPoint::new(self.k - o.k, [self.eta[0] - o.eta[0], self.eta[1] - o.eta[1]])
    }
}

impl core::ops::Neg for FreqPoint {
    type Output = FreqPoint;
    fn neg(self) -> FreqPoint {
        FreqPoint::new(-self.k, [-self.eta[0], -self.eta[1]])
    }
}

/// Spatial truncation `|k| ≤ K`, `|η_i| ≤ M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SpatialGrid {
    pub k_max: usize,
    pub m_max: usize,
}

impl SpatialGrid {
    pub fn new(k_max: usize, m_max: usize) -> Result<Self> {
        if k_max == 0 || m_max == 0 {
            return Err(Error::Parameter("grid bounds must be at least 1".into()));
        }
        Ok(Self { k_max, m_max })
    }

    pub fn bands(&self) -> [usize; 3] {
        [self.k_max, self.m_max, self.m_max]
    }

    pub fn len(&self) -> usize {
        (2 * self.k_max + 1) * (2 * self.m_max + 1) * (2 * self.m_max + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, xi: FreqPoint) -> Option<usize> {
        if !xi.in_box(self.k_max, self.m_max) {
            return None;
        }
        let (k, m) = (self.k_max as i64, self.m_max as i64);
        let w = 2 * m + 1;
        Some((((xi.k + k) * w + xi.eta[0] + m) * w + xi.eta[1] + m) as usize)
    }

    pub fn point(&self, idx: usize) -> FreqPoint {
        let w = 2 * self.m_max + 1;
        let e2 = idx % w;
        let e1 = (idx / w) % w;
        let k = idx / (w * w);
        FreqPoint::new(
            k as i64 - self.k_max as i64,
            [e1 as i64 - self.m_max as i64, e2 as i64 - self.m_max as i64],
        )
    }

    /// All lattice points in storage order.
    pub fn points(&self) -> impl Iterator<Item = FreqPoint> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }
}

/// Space-time truncation: spatial bounds plus `|j| ≤ J` on the time window `T_w`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct GridSpec {
    pub k_max: usize,
    pub m_max: usize,
    pub j_max: usize,
    pub t_window: f64,
}

impl GridSpec {
    pub fn new(k_max: usize, m_max: usize, j_max: usize, t_window: f64) -> Result<Self> {
        if k_max == 0 || m_max == 0 || j_max == 0 {
            return Err(Error::Parameter("grid bounds must be at least 1".into()));
        }
        if !(t_window > 0.0 && t_window.is_finite()) {
            return Err(Error::Parameter("time window must be positive".into()));
        }
        Ok(Self { k_max, m_max, j_max, t_window })
    }

    /// Cube `K = M = J = n` on the window `2π` (so that `τ_j = j`).
    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n, 2.0 * PI)
    }

    pub fn spatial(&self) -> SpatialGrid {
        SpatialGrid { k_max: self.k_max, m_max: self.m_max }
    }

    pub fn bands(&self) -> [usize; 4] {
        [self.k_max, self.m_max, self.m_max, self.j_max]
    }

    pub fn n_time(&self) -> usize {
        2 * self.j_max + 1
    }

    pub fn len(&self) -> usize {
        self.spatial().len() * self.n_time()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tau(&self, j: i64) -> f64 {
        2.0 * PI * j as f64 / self.t_window
    }

    pub fn index(&self, xi: FreqPoint, j: i64) -> Option<usize> {
        if j.unsigned_abs() as usize > self.j_max {
            return None;
        }
        let s = self.spatial().index(xi)?;
        Some(s * self.n_time() + (j + self.j_max as i64) as usize)
    }

    /// Same spatial/time bounds check, ignoring the window length.
    pub fn same_lattice(&self, other: &GridSpec) -> bool {
        self.bands() == other.bands()
    }
}

/// Per-frequency access shared by spatial and space-time spectra.
pub trait FrequencyField: Clone {
    fn spatial_grid(&self) -> SpatialGrid;
    /// Number of stored coefficients per spatial frequency.
    fn fiber_len(&self) -> usize;
    fn coeffs(&self) -> &[Complex64];
    fn coeffs_mut(&mut self) -> &mut [Complex64];

    fn fiber(&self, s: usize) -> &[Complex64] {
        let n = self.fiber_len();
        &self.coeffs()[s * n..(s + 1) * n]
    }

    fn l2_norm(&self) -> f64 {
        math::sqrt(self.coeffs().iter().map(|c| c.norm_sqr()).sum())
    }

    /// `Σ c conj(d)`.
    fn inner(&self, other: &Self) -> Complex64 {
        self.coeffs().iter().zip(other.coeffs()).map(|(a, b)| a * b.conj()).sum()
    }

    /// Multiplies every fiber by a real spatial multiplier.
    fn apply_multiplier(&self, m: impl Fn(FreqPoint) -> f64) -> Self {
        let mut out = self.clone();
        let g = self.spatial_grid();
        let n = self.fiber_len();
        for (s, chunk) in out.coeffs_mut().chunks_exact_mut(n).enumerate() {
            let w = m(g.point(s));
            if w != 1.0 {
                for c in chunk {
                    *c *= w;
                }
            }
        }
        out
    }

    /// Keeps the fibers whose `η` satisfies `keep`.
    fn project_eta(&self, keep: impl Fn([i64; 2]) -> bool) -> Self {
        self.apply_multiplier(|xi| if keep(xi.eta) { 1.0 } else { 0.0 })
    }

    /// Mass (squared `ℓ²` norm) carried by `k = 0`.
    fn k0_mass(&self) -> f64 {
        let g = self.spatial_grid();
        let w = (2 * g.m_max + 1) * (2 * g.m_max + 1);
        let n = self.fiber_len();
        let start = g.k_max * w * n;
        self.coeffs()[start..start + w * n].iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Coefficients on `(k, η, τ_j)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SpaceTimeSpectrum {
    pub grid: GridSpec,
    pub coeffs: Vec<Complex64>,
}

impl FrequencyField for SpaceTimeSpectrum {
    fn spatial_grid(&self) -> SpatialGrid {
        self.grid.spatial()
    }
    fn fiber_len(&self) -> usize {
        self.grid.n_time()
    }
    fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }
    fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }
}

impl SpaceTimeSpectrum {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, coeffs: vec![ZERO; grid.len()] }
    }

    pub fn from_coeffs(grid: GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Shape(alloc::format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(FreqPoint, i64) -> Complex64) -> Self {
        let sg = grid.spatial();
        let nt = grid.n_time();
        let j0 = grid.j_max as i64;
        let mut coeffs = Vec::with_capacity(grid.len());
        for s in 0..sg.len() {
            let xi = sg.point(s);
            for j in 0..nt {
                coeffs.push(f(xi, j as i64 - j0));
            }
        }
        Self { grid, coeffs }
    }

    /// A single mode with coefficient `c`.
    pub fn single_mode(grid: GridSpec, xi: FreqPoint, j: i64, c: Complex64) -> Result<Self> {
        let mut u = Self::zeros(grid);
        let idx = grid
            .index(xi, j)
            .ok_or_else(|| Error::Shape("mode outside the grid".into()))?;
        u.coeffs[idx] = c;
        Ok(u)
    }

    pub fn get(&self, xi: FreqPoint, j: i64) -> Complex64 {
        self.grid.index(xi, j).map_or(ZERO, |i| self.coeffs[i])
    }

    pub fn set(&mut self, xi: FreqPoint, j: i64, c: Complex64) -> Result<()> {
        let i = self
            .grid
            .index(xi, j)
            .ok_or_else(|| Error::Shape("mode outside the grid".into()))?;
        self.coeffs[i] = c;
        Ok(())
    }

    /// Iterates `(ξ, j, coefficient)` in storage order.
    pub fn modes(&self) -> impl Iterator<Item = (FreqPoint, i64, Complex64)> + '_ {
        let nt = self.grid.n_time();
        let sg = self.grid.spatial();
        let j0 = self.grid.j_max as i64;
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(i, &c)| (sg.point(i / nt), (i % nt) as i64 - j0, c))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == ZERO)
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self { grid: self.grid, coeffs: self.coeffs.iter().map(|c| c * a).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if !self.grid.same_lattice(&other.grid) {
            return Err(Error::Shape("grid mismatch".into()));
        }
        Ok(Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    /// Coefficients of `conj(u)`: `c(ξ, j) ↦ conj(c(-ξ, -j))`.
    pub fn conj_reflect(&self) -> Self {
        let n = self.coeffs.len();
        // The lattice is symmetric, so reflection reverses storage order.
        Self { grid: self.grid, coeffs: (0..n).map(|i| self.coeffs[n - 1 - i].conj()).collect() }
    }

    /// Largest `|c(ξ,j) - conj(c(-ξ,-j))|`; zero for real fields.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        let r = self.conj_reflect();
        self.coeffs.iter().zip(&r.coeffs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn is_mean_zero(&self) -> bool {
        self.k0_mass() == 0.0
    }

    /// Copies the coefficients into another lattice, dropping what does not fit.
    pub fn regrid(&self, grid: GridSpec) -> Self {
        let mut out = Self::zeros(grid);
        let j0 = self.grid.j_max as i64;
        let nt = self.grid.n_time();
        let sg = self.grid.spatial();
        for s in 0..sg.len() {
            let xi = sg.point(s);
            if !xi.in_box(grid.k_max, grid.m_max) {
                continue;
            }
            for jj in 0..nt {
                let j = jj as i64 - j0;
                if let Some(i) = grid.index(xi, j) {
                    out.coeffs[i] = self.coeffs[s * nt + jj];
                }
            }
        }
        out
    }

    /// Independent standard complex Gaussian coefficients on the mean-zero
    /// sector (`E|c|² = 1`).
    pub fn random_gaussian<R: Rng + ?Sized>(grid: GridSpec, rng: &mut R) -> Self {
        let mut u = Self::from_fn(grid, |_, _| ZERO);
        for (i, c) in u.coeffs.iter_mut().enumerate() {
            let s = i / grid.n_time();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            if grid.spatial().point(s).k != 0 {
                *c = Complex64::new(re, im) * core::f64::consts::FRAC_1_SQRT_2;
            }
        }
        u
    }
}

/// Coefficients on `(k, η)` for data at a fixed time.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SpatialSpectrum {
    pub grid: SpatialGrid,
    pub coeffs: Vec<Complex64>,
}

impl FrequencyField for SpatialSpectrum {
    fn spatial_grid(&self) -> SpatialGrid {
        self.grid
    }
    fn fiber_len(&self) -> usize {
        1
    }
    fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }
    fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }
}

impl SpatialSpectrum {
    pub fn zeros(grid: SpatialGrid) -> Self {
        Self { grid, coeffs: vec![ZERO; grid.len()] }
    }

    pub fn from_fn(grid: SpatialGrid, mut f: impl FnMut(FreqPoint) -> Complex64) -> Self {
        Self { grid, coeffs: grid.points().map(&mut f).collect() }
    }

    pub fn from_coeffs(grid: SpatialGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Shape(alloc::format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn get(&self, xi: FreqPoint) -> Complex64 {
        self.grid.index(xi).map_or(ZERO, |i| self.coeffs[i])
    }

    pub fn set(&mut self, xi: FreqPoint, c: Complex64) -> Result<()> {
        let i = self.grid.index(xi).ok_or_else(|| Error::Shape("mode outside the grid".into()))?;
        self.coeffs[i] = c;
        Ok(())
    }

    pub fn modes(&self) -> impl Iterator<Item = (FreqPoint, Complex64)> + '_ {
        self.coeffs.iter().enumerate().map(move |(i, &c)| (self.grid.point(i), c))
    }

    pub fn is_mean_zero(&self) -> bool {
        self.k0_mass() == 0.0
    }

    pub fn conj_reflect(&self) -> Self {
        let n = self.coeffs.len();
        Self { grid: self.grid, coeffs: (0..n).map(|i| self.coeffs[n - 1 - i].conj()).collect() }
    }

    pub fn conjugate_symmetry_error(&self) -> f64 {
        let r = self.conj_reflect();
        self.coeffs.iter().zip(&r.coeffs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self { grid: self.grid, coeffs: self.coeffs.iter().map(|c| c * a).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Shape("grid mismatch".into()));
        }
        Ok(Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn regrid(&self, grid: SpatialGrid) -> Self {
        Self::from_fn(grid, |xi| self.get(xi))
    }

    /// Gaussian mean-zero data with an optional real-field symmetrization.
    pub fn random_gaussian<R: Rng + ?Sized>(grid: SpatialGrid, rng: &mut R, real: bool) -> Self {
        let mut u = Self::from_fn(grid, |xi| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            if xi.k == 0 {
                ZERO
            } else {
                Complex64::new(re, im) * core::f64::consts::FRAC_1_SQRT_2
            }
        });
        if real {
            let r = u.conj_reflect();
            for (a, b) in u.coeffs.iter_mut().zip(&r.coeffs) {
                *a = (*a + b) * 0.5;
            }
        }
        u
    }
}

// ---------------------------------------------------------------------------
// Projections

pub fn project_mean_zero<F: FrequencyField>(u: &F) -> F {
    u.apply_multiplier(|xi| if xi.k == 0 { 0.0 } else { 1.0 })
}

/// `P_l`: keep `|η| ≤ 2^l`.
pub fn project_ball<F: FrequencyField>(u: &F, l: u32) -> F {
    let r2 = 1i64 << (2 * l);
    u.project_eta(|e| e[0] * e[0] + e[1] * e[1] <= r2)
}

/// `P_{Δl} = P_l - P_{l-1}`, with `P_{Δ0} = P_0`.
pub fn project_shell<F: FrequencyField>(u: &F, l: u32) -> F {
    u.project_eta(|e| in_shell(e, l))
}

pub fn in_shell(eta: [i64; 2], l: u32) -> bool {
    let n2 = eta[0] * eta[0] + eta[1] * eta[1];
    let outer = 1i64 << (2 * l);
    if l == 0 {
        n2 <= outer
    } else {
        n2 <= outer && n2 > 1i64 << (2 * (l - 1))
    }
}

/// Membership in the tile `Q^l_α` (side `2^l`, center `2^l α`, half-open per
/// coordinate), or in the doubled tile of side `2^{l+1}` when `widened`.
pub fn in_square(eta: [i64; 2], l: u32, alpha: [i64; 2], widened: bool) -> bool {
    // Work with 2η so that the half side 2^{l-1} stays integral at l = 0.
    let side = 1i64 << l;
    (0..2).all(|i| {
        let c2 = 2 * side * alpha[i];
        let h2 = if widened { 2 * side } else { side };
        let e2 = 2 * eta[i];
        e2 >= c2 - h2 && e2 < c2 + h2
    })
}

/// The unique non-widened tile index containing `η` at scale `l`.
pub fn tile_index(eta: [i64; 2], l: u32) -> [i64; 2] {
    let side = 1i64 << l;
    [0, 1].map(|i| (2 * eta[i] + side).div_euclid(2 * side))
}

pub fn project_square<F: FrequencyField>(u: &F, l: u32, alpha: [i64; 2], widened: bool) -> F {
    u.project_eta(|e| in_square(e, l, alpha, widened))
}

/// `P_B` for a disc or square region in the `η` plane.
pub fn project_region<F: FrequencyField>(u: &F, region: &Region) -> F {
    u.project_eta(|e| region.contains([e[0] as f64, e[1] as f64]))
}

// ---------------------------------------------------------------------------
// Transforms

/// Places band-limited coefficients (row-major, axis `d` running over
/// `-bands[d]..=bands[d]`) into an FFT array of the given shape and
/// synthesizes the physical samples.
pub fn synthesize(
    coeffs: &[Complex64],
    bands: &[usize],
    shape: &[usize],
    planner: &mut FftPlanner,
) -> Result<Vec<Complex64>> {
    check_shape(coeffs.len(), bands, shape)?;
    let mut buf = vec![ZERO; shape.iter().product()];
    let offsets = wrap_offsets(bands, shape);
    scatter(coeffs, &offsets, &mut buf);
    transform_nd(&mut buf, shape, Direction::Inverse, planner, &Pruning::SparseInput(bands.to_vec()));
    Ok(buf)
}

/// Inverse of [`synthesize`]: normalized analysis of physical samples,
/// returning the band-limited coefficients. Consumes the sample buffer.
pub fn analyze(
    mut samples: Vec<Complex64>,
    shape: &[usize],
    bands: &[usize],
    planner: &mut FftPlanner,
) -> Result<Vec<Complex64>> {
    let total: usize = shape.iter().product();
    if samples.len() != total {
        return Err(Error::Shape(alloc::format!(
            "{} samples do not match shape {:?}",
            samples.len(),
            shape
        )));
    }
    let n_coef: usize = bands.iter().map(|b| 2 * b + 1).product();
    check_shape(n_coef, bands, shape)?;
    transform_nd(
        &mut samples,
        shape,
        Direction::Forward,
        planner,
        &Pruning::TruncatedOutput(bands.to_vec()),
    );
    let offsets = wrap_offsets(bands, shape);
    let mut out = vec![ZERO; n_coef];
    gather(&samples, &offsets, &mut out);
    let scale = 1.0 / total as f64;
    for c in out.iter_mut() {
        *c *= scale;
    }
    Ok(out)
}

fn check_shape(n_coef: usize, bands: &[usize], shape: &[usize]) -> Result<()> {
    if bands.len() != shape.len() {
        return Err(Error::Shape("rank mismatch".into()));
    }
    let expect: usize = bands.iter().map(|b| 2 * b + 1).product();
    if expect != n_coef {
        return Err(Error::Shape("coefficient count does not match bands".into()));
    }
    for (b, n) in bands.iter().zip(shape) {
        if *n < 2 * b + 1 {
            return Err(Error::Shape(alloc::format!(
                "sample count {n} cannot resolve band {b} (need at least {})",
                2 * b + 1
            )));
        }
    }
    Ok(())
}

/// Per-axis flat offsets of each band index inside the FFT array.
pub(crate) fn wrap_offsets(bands: &[usize], shape: &[usize]) -> Vec<Vec<usize>> {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    (0..rank)
        .map(|d| {
            let b = bands[d] as i64;
            let n = shape[d] as i64;
            (-b..=b).map(|m| (m.rem_euclid(n) as usize) * strides[d]).collect()
        })
        .collect()
}

fn for_each_offset(offsets: &[Vec<usize>], mut f: impl FnMut(usize, usize)) {
    // The last axis is innermost, matching row-major coefficient order.
    let rank = offsets.len();
    let mut pos = vec![0usize; rank];
    let mut base_stack = vec![0usize; rank + 1];
    let mut idx = 0usize;
    if offsets.iter().any(|o| o.is_empty()) {
        return;
    }
    'outer: loop {
        for d in 0..rank {
            base_stack[d + 1] = base_stack[d] + offsets[d][pos[d]];
        }
        let last = &offsets[rank - 1];
        let base = base_stack[rank - 1];
        for &o in last {
            f(idx, base + o);
            idx += 1;
        }
        let mut d = rank - 1;
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            pos[d] += 1;
            if pos[d] < offsets[d].len() {
                break;
            }
            pos[d] = 0;
        }
    }
}

pub(crate) fn scatter(coeffs: &[Complex64], offsets: &[Vec<usize>], buf: &mut [Complex64]) {
    for_each_offset(offsets, |i, o| buf[o] = coeffs[i]);
}

pub(crate) fn gather(buf: &[Complex64], offsets: &[Vec<usize>], coeffs: &mut [Complex64]) {
    for_each_offset(offsets, |i, o| coeffs[i] = buf[o]);
}

/// Coordinates of sample `n` along an axis of `p` samples: `2πn/p` in space,
/// `T_w n / p` in time.
pub fn sample_coordinate(n: usize, p: usize, period: f64) -> f64 {
    period * n as f64 / p as f64
}

/// Physical samples of `u` on a `(P_x, P_y, P_y', P_t)` grid.
pub fn inverse_transform(u: &SpaceTimeSpectrum, shape: [usize; 4]) -> Result<Vec<Complex64>> {
    synthesize(&u.coeffs, &u.grid.bands(), &shape, &mut FftPlanner::new())
}

/// Fourier coefficients of physical samples on a `(P_x, P_y, P_y', P_t)` grid.
pub fn forward_transform(
    samples: &[Complex64],
    shape: [usize; 4],
    grid: GridSpec,
) -> Result<SpaceTimeSpectrum> {
    let coeffs = analyze(samples.to_vec(), &shape, &grid.bands(), &mut FftPlanner::new())?;
    SpaceTimeSpectrum::from_coeffs(grid, coeffs)
}

/// Minimal sample counts `2·band + 1` for a grid.
pub fn minimal_shape(grid: &GridSpec) -> [usize; 4] {
    grid.bands().map(|b| 2 * b + 1)
}

/// Physical samples of spatial data on a `(P_x, P_y, P_y')` grid.
pub fn spatial_inverse_transform(u: &SpatialSpectrum, shape: [usize; 3]) -> Result<Vec<Complex64>> {
    synthesize(&u.coeffs, &u.grid.bands(), &shape, &mut FftPlanner::new())
}

pub fn spatial_forward_transform(
    samples: &[Complex64],
    shape: [usize; 3],
    grid: SpatialGrid,
) -> Result<SpatialSpectrum> {
    let coeffs = analyze(samples.to_vec(), &shape, &grid.bands(), &mut FftPlanner::new())?;
    SpatialSpectrum::from_coeffs(grid, coeffs)
}

/// `L^p` norm with the default oversampling factor 2.
pub fn lebesgue_norm(u: &SpaceTimeSpectrum, p: f64) -> Result<f64> {
    lebesgue_norm_oversampled(u, p, 2)
}

/// `L^p(T³ × [0, T_w])` norm (normalized measure) from samples on a grid
/// `factor` times finer than the minimal one. `p = f64::INFINITY` gives the
/// maximum over the samples.
///
/// For `p = 2` and `p = 4` with `factor ≥ 2` the quadrature is exact up to
/// rounding, since `|u|^p` is then a trigonometric polynomial resolved by the
/// grid.
pub fn lebesgue_norm_oversampled(u: &SpaceTimeSpectrum, p: f64, factor: usize) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(alloc::format!("L^p requires p >= 1, got {p}")));
    }
    if factor == 0 {
        return Err(Error::Parameter("oversampling factor must be positive".into()));
    }
    if u.is_zero() {
        return Ok(0.0);
    }
    let shape = u.grid.bands().map(|b| factor * (2 * b + 1));
    let samples = inverse_transform(u, shape)?;
    Ok(sample_lp(&samples, p))
}

/// `(mean |f|^p)^{1/p}` over samples, or the maximum for `p = ∞`.
pub fn sample_lp(samples: &[Complex64], p: f64) -> f64 {
    if p.is_infinite() {
        return samples.iter().map(|c| c.norm()).fold(0.0, f64::max);
    }
    let n = samples.len() as f64;
    if p == 2.0 {
        return math::sqrt(samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / n);
    }
    if p == 4.0 {
        let s: f64 = samples.iter().map(|c| {
            let q = c.norm_sqr();
            q * q
        }).sum();
        return math::sqrt(math::sqrt(s / n));
    }
    let s: f64 = samples.iter().map(|c| math::powf(c.norm(), p)).sum();
    math::powf(s / n, 1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::cis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(k: usize, m: usize, j: usize) -> GridSpec {
        GridSpec::new(k, m, j, 2.0 * PI).unwrap()
    }

    #[test]
    fn index_round_trip() {
        let g = grid(2, 3, 1);
        let sg = g.spatial();
        for s in 0..sg.len() {
            assert_eq!(sg.index(sg.point(s)), Some(s));
        }
        assert_eq!(sg.index(FreqPoint::new(3, [0, 0])), None);
    }

    #[test]
    fn constant_field_is_dc_mode() {
        let g = grid(1, 1, 1);
        let shape = minimal_shape(&g);
        let samples = vec![Complex64::new(1.0, 0.0); shape.iter().product()];
        let u = forward_transform(&samples, shape, g).unwrap();
        for (xi, j, c) in u.modes() {
            let expect = if xi == FreqPoint::default() && j == 0 { 1.0 } else { 0.0 };
            assert!((c - Complex64::new(expect, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn plane_wave_has_unit_coefficient() {
        let g = grid(2, 2, 2);
        let shape = [5, 6, 7, 5];
        let eta = [1i64, -2];
        let mut samples = Vec::new();
        for a in 0..shape[0] {
            for b in 0..shape[1] {
                for c in 0..shape[2] {
                    for _t in 0..shape[3] {
                        let x = sample_coordinate(a, shape[0], 2.0 * PI);
                        let y1 = sample_coordinate(b, shape[1], 2.0 * PI);
                        let y2 = sample_coordinate(c, shape[2], 2.0 * PI);
                        samples.push(cis(x + eta[0] as f64 * y1 + eta[1] as f64 * y2));
                    }
                }
            }
        }
        let u = forward_transform(&samples, shape, g).unwrap();
        for (xi, j, c) in u.modes() {
            let expect = if xi == FreqPoint::new(1, eta) && j == 0 { 1.0 } else { 0.0 };
            assert!((c - Complex64::new(expect, 0.0)).norm() < 1e-13, "{xi:?} {j}");
        }
    }

    #[test]
    fn shape_errors() {
        let g = grid(2, 2, 2);
        assert!(forward_transform(&[ZERO; 10], [2, 1, 1, 5], g).is_err());
        assert!(inverse_transform(&SpaceTimeSpectrum::zeros(g), [4, 5, 5, 5]).is_err());
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = grid(3, 2, 4);
        let u = SpaceTimeSpectrum::random_gaussian(g, &mut rng);
        for shape in [minimal_shape(&g), [8, 6, 5, 12]] {
            let samples = inverse_transform(&u, shape).unwrap();
            let back = forward_transform(&samples, shape, g).unwrap();
            let err = back.sub(&u).unwrap().l2_norm() / u.l2_norm();
            assert!(err < 1e-12, "{err}");
            // Direct quadrature of |f|² against the coefficient norm.
            let quad = samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / samples.len() as f64;
            assert!((quad.sqrt() - u.l2_norm()).abs() < 1e-12 * u.l2_norm());
        }
    }

    #[test]
    fn lebesgue_norms_of_single_mode() {
        let g = grid(2, 2, 2);
        let u = SpaceTimeSpectrum::single_mode(g, FreqPoint::new(1, [1, 0]), 1, cis(0.3)).unwrap();
        for p in [1.0, 2.0, 3.0, 4.0, f64::INFINITY] {
            assert!((lebesgue_norm(&u, p).unwrap() - 1.0).abs() < 1e-12, "p={p}");
        }
        assert_eq!(lebesgue_norm(&SpaceTimeSpectrum::zeros(g), 4.0).unwrap(), 0.0);
        assert!(lebesgue_norm(&u, 0.5).is_err());
    }

    #[test]
    fn l4_against_convolution_oracle() {
        // ‖u‖_4^4 = ‖u²‖_2^2 = Σ_ζ |Σ_{ξ1} c(ξ1) c(ζ-ξ1)|².
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(1, 1, 1);
        let u = SpaceTimeSpectrum::random_gaussian(g, &mut rng);
        let modes: Vec<_> = u.modes().filter(|m| m.2 != ZERO).collect();
        let mut acc = alloc::collections::BTreeMap::new();
        for a in &modes {
            for b in &modes {
                let key = (a.0 + b.0, a.1 + b.1);
                *acc.entry(key).or_insert(ZERO) += a.2 * b.2;
            }
        }
        let l4 = acc.values().map(|c: &Complex64| c.norm_sqr()).sum::<f64>().powf(0.25);
        assert!((lebesgue_norm(&u, 4.0).unwrap() - l4).abs() < 1e-10 * l4);
        assert!((lebesgue_norm(&u, 2.0).unwrap() - u.l2_norm()).abs() < 1e-10 * u.l2_norm());
    }

    #[test]
    fn mean_zero_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = grid(2, 2, 1);
        let mut u = SpaceTimeSpectrum::random_gaussian(g, &mut rng);
        u.set(FreqPoint::new(0, [1, 1]), 0, Complex64::new(2.0, 1.0)).unwrap();
        u.set(FreqPoint::new(0, [0, -2]), 1, Complex64::new(-1.0, 0.5)).unwrap();
        let p = project_mean_zero(&u);
        let removed = 5.0 + 1.25;
        assert!((u.l2_norm().powi(2) - p.l2_norm().powi(2) - removed).abs() < 1e-12);
        assert_eq!(project_mean_zero(&p), p);
        let only_k0 = u.sub(&p).unwrap();
        assert!(project_mean_zero(&only_k0).is_zero());
    }

    #[test]
    fn dyadic_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid(1, 6, 1);
        let u = SpaceTimeSpectrum::random_gaussian(g, &mut rng);
        // 2^l ≥ M√2 covers the grid.
        assert_eq!(project_ball(&u, 4), u);
        let mut sum = SpaceTimeSpectrum::zeros(g);
        for l in 0..=2 {
            sum = sum.add(&project_shell(&u, l)).unwrap();
        }
        assert!(sum.sub(&project_ball(&u, 2)).unwrap().l2_norm() < 1e-15);
    }

    #[test]
    fn tile_membership_of_example_point() {
        // η = (3, 0) at l = 1: tiles have side 2 and centers 2α, half-open.
        let eta = [3, 0];
        let mut hits = Vec::new();
        for a in -4..=4 {
            for b in -4..=4 {
                if in_square(eta, 1, [a, b], false) {
                    hits.push([a, b]);
                }
            }
        }
        assert_eq!(hits, vec![[2, 0]]);
        assert_eq!(tile_index(eta, 1), [2, 0]);
        assert!(in_square(eta, 1, [1, 0], true));
    }

    #[test]
    fn conj_reflect_matches_pointwise_conjugate() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = grid(2, 1, 2);
        let u = SpaceTimeSpectrum::random_gaussian(g, &mut rng);
        let shape = minimal_shape(&g);
        let s: Vec<Complex64> = inverse_transform(&u, shape).unwrap().iter().map(|c| c.conj()).collect();
        let v = forward_transform(&s, shape, g).unwrap();
        assert!(v.sub(&u.conj_reflect()).unwrap().l2_norm() < 1e-12);
    }
}
