//! Discrete Fourier transforms.
//!
//! With the `std` feature the one-dimensional kernels come from `rustfft`;
//! without it the portable radix-2/Bluestein implementation in [`portable`]
//! is used. Both follow the same conventions: [`Direction::Forward`] uses the
//! kernel `e^{-2πi jk/n}`, [`Direction::Inverse`] uses `e^{+2πi jk/n}`, and
//! neither normalizes.
//!
//! Multi-dimensional arrays are row-major. [`transform_nd`] can skip lines that
//! are known to vanish (zero-padded input) or whose output is discarded
//! (truncated output); see [`Pruning`].

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

pub use num_complex::Complex64;

use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Forward,
    Inverse,
}

/// A one-dimensional transform of fixed length and direction.
#[derive(Clone)]
pub struct Plan {
    len: usize,
    #[cfg(feature = "std")]
    inner: Arc<dyn rustfft::Fft<f64>>,
    #[cfg(not(feature = "std"))]
    inner: Arc<portable::PortableFft>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Transforms every consecutive chunk of `self.len()` values in `buf`.
    pub fn process(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        debug_assert_eq!(buf.len() % self.len.max(1), 0);
        if self.len <= 1 {
            return;
        }
        #[cfg(feature = "std")]
        {
            let need = self.inner.get_inplace_scratch_len();
            if scratch.len() < need {
                scratch.resize(need, Complex64::new(0.0, 0.0));
            }
            self.inner.process_with_scratch(buf, &mut scratch[..need]);
        }
        #[cfg(not(feature = "std"))]
        {
            for chunk in buf.chunks_exact_mut(self.len) {
                self.inner.process(chunk, scratch);
            }
        }
    }
}

/// Caches plans by `(len, direction)`.
pub struct FftPlanner {
    #[cfg(feature = "std")]
    inner: rustfft::FftPlanner<f64>,
    cache: BTreeMap<(usize, Direction), Plan>,
}

impl Default for FftPlanner {
    fn default() -> Self {
        Self::new()
    }
}

impl FftPlanner {
    pub fn new() -> Self {
        Self {
            #[cfg(feature = "std")]
            inner: rustfft::FftPlanner::new(),
            cache: BTreeMap::new(),
        }
    }

    pub fn plan(&mut self, len: usize, direction: Direction) -> Plan {
        if let Some(p) = self.cache.get(&(len, direction)) {
            return p.clone();
        }
        #[cfg(feature = "std")]
        let inner = match direction {
            Direction::Forward => self.inner.plan_fft_forward(len.max(1)),
            Direction::Inverse => self.inner.plan_fft_inverse(len.max(1)),
        };
        #[cfg(not(feature = "std"))]
        let inner = Arc::new(portable::PortableFft::new(len.max(1), direction));
        let plan = Plan { len, inner };
        self.cache.insert((len, direction), plan.clone());
        plan
    }
}

/// Which lines of a multi-dimensional transform may be skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pruning {
    /// Process every line.
    None,
    /// Input is supported on the given per-axis bands (`band[d] = b` means only
    /// indices `0..=b` and `n-b..n` may be nonzero). Lines that are identically
    /// zero before their axis is transformed are skipped.
    SparseInput(Vec<usize>),
    /// Only output indices inside the per-axis bands are wanted; everything
    /// outside the bands is left with unspecified values.
    TruncatedOutput(Vec<usize>),
}

fn band_indices(n: usize, band: usize) -> Vec<usize> {
    if 2 * band + 1 >= n {
        return (0..n).collect();
    }
    let mut v: Vec<usize> = (0..=band).collect();
    v.extend(n - band..n);
    v
}

/// In-place multi-dimensional transform of a row-major array.
pub fn transform_nd(
    data: &mut [Complex64],
    shape: &[usize],
    direction: Direction,
    planner: &mut FftPlanner,
    pruning: &Pruning,
) {
    let total: usize = shape.iter().product();
    assert_eq!(data.len(), total, "array length does not match shape");
    let rank = shape.len();
    if total == 0 {
        return;
    }
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let full: Vec<Vec<usize>> = shape.iter().map(|&n| (0..n).collect()).collect();
    let banded: Vec<Vec<usize>> = match pruning {
        Pruning::None => full.clone(),
        Pruning::SparseInput(b) | Pruning::TruncatedOutput(b) => {
            assert_eq!(b.len(), rank);
            shape.iter().zip(b).map(|(&n, &k)| band_indices(n, k)).collect()
        }
    };
    let mut scratch = Vec::new();
    let mut buf = Vec::new();

    // Synthesis from sparse input runs axes in order so that untouched axes are
    // still sparse; truncated analysis runs axes in order as well, with the
    // already-processed axes restricted.
    for axis in 0..rank {
        let n = shape[axis];
        if n <= 1 {
            continue;
        }
        let plan = planner.plan(n, direction);
        let allowed: Vec<&[usize]> = (0..rank)
            .map(|d| {
                if d == axis {
                    &full[d][..]
                } else {
                    let restricted = match pruning {
                        Pruning::None => false,
                        Pruning::SparseInput(_) => d > axis,
                        Pruning::TruncatedOutput(_) => d < axis,
                    };
                    if restricted {
                        &banded[d][..]
                    } else {
                        &full[d][..]
                    }
                }
            })
            .collect();
        if axis == rank - 1 {
            for_each_combo(&allowed[..axis], &strides[..axis], |base| {
                plan.process(&mut data[base..base + n], &mut scratch);
            });
        } else {
            // Lines adjacent in the last axis are adjacent in memory; gather
            // them in runs to keep the strided access cache friendly.
            let last = rank - 1;
            let runs = contiguous_runs(allowed[last]);
            let outer: Vec<&[usize]> = (0..last)
                .map(|d| if d == axis { &[0usize][..] } else { allowed[d] })
                .collect();
            let stride = strides[axis];
            for_each_combo(&outer, &strides[..last], |base| {
                for &(start, len) in &runs {
                    let mut off = 0;
                    while off < len {
                        let w = (len - off).min(16);
                        buf.resize(w * n, Complex64::new(0.0, 0.0));
                        let col0 = base + start + off;
                        for i in 0..n {
                            let row = col0 + i * stride;
                            for c in 0..w {
                                buf[c * n + i] = data[row + c];
                            }
                        }
                        plan.process(&mut buf, &mut scratch);
                        for i in 0..n {
                            let row = col0 + i * stride;
                            for c in 0..w {
                                data[row + c] = buf[c * n + i];
                            }
                        }
                        off += w;
                    }
                }
            });
        }
    }
}

fn contiguous_runs(idx: &[usize]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut it = idx.iter().copied();
    if let Some(first) = it.next() {
        let (mut start, mut len) = (first, 1);
        for i in it {
            if i == start + len {
                len += 1;
            } else {
                runs.push((start, len));
                start = i;
                len = 1;
            }
        }
        runs.push((start, len));
    }
    runs
}

fn for_each_combo(lists: &[&[usize]], strides: &[usize], mut f: impl FnMut(usize)) {
    if lists.iter().any(|l| l.is_empty()) {
        return;
    }
    let rank = lists.len();
    let mut pos = vec![0usize; rank];
    loop {
        let base: usize = (0..rank).map(|d| lists[d][pos[d]] * strides[d]).sum();
        f(base);
        let mut d = rank;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            pos[d] += 1;
            if pos[d] < lists[d].len() {
                break;
            }
            pos[d] = 0;
        }
    }
}

/// Unit-modulus complex number `e^{iθ}`.
#[inline]
pub fn cis(theta: f64) -> Complex64 {
    let (s, c) = math::sin_cos(theta);
    Complex64::new(c, s)
}

/// Portable transforms for builds without `std`, also used as an independent
/// check of the `rustfft` backend.
pub mod portable {
    use super::{cis, Complex64, Direction};
    use alloc::vec;
    use alloc::vec::Vec;
    use core::f64::consts::PI;

    pub struct PortableFft {
        n: usize,
        kind: Kind,
    }

    enum Kind {
        Trivial,
        Radix2(Radix2),
        Bluestein(Bluestein),
    }

    struct Radix2 {
        n: usize,
        twiddles: Vec<Complex64>,
    }

    struct Bluestein {
        m: usize,
        chirp: Vec<Complex64>,
        kernel: Vec<Complex64>,
        fwd: Radix2,
        inv: Radix2,
    }

    impl Radix2 {
        fn new(n: usize, direction: Direction) -> Self {
            debug_assert!(n.is_power_of_two());
            let sign = match direction {
                Direction::Forward => -1.0,
                Direction::Inverse => 1.0,
            };
            let twiddles = (0..n / 2)
                .map(|k| cis(sign * 2.0 * PI * k as f64 / n as f64))
                .collect();
            Self { n, twiddles }
        }

        fn process(&self, x: &mut [Complex64]) {
            let n = self.n;
            let bits = n.trailing_zeros();
            for i in 0..n {
                let j = i.reverse_bits() >> (usize::BITS - bits);
                if j > i {
                    x.swap(i, j);
                }
            }
            let mut len = 2;
            while len <= n {
                let step = n / len;
                for start in (0..n).step_by(len) {
                    for k in 0..len / 2 {
                        let w = self.twiddles[k * step];
                        let a = x[start + k];
                        let b = x[start + k + len / 2] * w;
                        x[start + k] = a + b;
                        x[start + k + len / 2] = a - b;
                    }
                }
                len <<= 1;
            }
        }
    }

    impl Bluestein {
        fn new(n: usize, direction: Direction) -> Self {
            let m = (2 * n - 1).next_power_of_two();
            let sign = match direction {
                Direction::Forward => -1.0,
                Direction::Inverse => 1.0,
            };
            // k^2 mod 2n keeps the chirp argument small and exact.
            let chirp: Vec<Complex64> = (0..n)
                .map(|k| {
                    let q = ((k as u128 * k as u128) % (2 * n as u128)) as f64;
                    cis(sign * PI * q / n as f64)
                })
                .collect();
            let mut kernel = vec![Complex64::new(0.0, 0.0); m];
            kernel[0] = chirp[0].conj();
            for k in 1..n {
                kernel[k] = chirp[k].conj();
                kernel[m - k] = chirp[k].conj();
            }
            let fwd = Radix2::new(m, Direction::Forward);
            let inv = Radix2::new(m, Direction::Inverse);
            fwd.process(&mut kernel);
            Self { m, chirp, kernel, fwd, inv }
        }

        fn process(&self, x: &mut [Complex64], scratch: &mut Vec<Complex64>) {
            let n = x.len();
            scratch.clear();
            scratch.resize(self.m, Complex64::new(0.0, 0.0));
            for k in 0..n {
                scratch[k] = x[k] * self.chirp[k];
            }
            self.fwd.process(scratch);
            for (s, k) in scratch.iter_mut().zip(&self.kernel) {
                *s *= k;
            }
            self.inv.process(scratch);
            let scale = 1.0 / self.m as f64;
            for k in 0..n {
                x[k] = scratch[k] * self.chirp[k] * scale;
            }
        }
    }

    impl PortableFft {
        pub fn new(n: usize, direction: Direction) -> Self {
            let kind = if n <= 1 {
                Kind::Trivial
            } else if n.is_power_of_two() {
                Kind::Radix2(Radix2::new(n, direction))
            } else {
                Kind::Bluestein(Bluestein::new(n, direction))
            };
            Self { n, kind }
        }

        pub fn len(&self) -> usize {
            self.n
        }

        pub fn is_empty(&self) -> bool {
            self.n == 0
        }

        pub fn process(&self, x: &mut [Complex64], scratch: &mut Vec<Complex64>) {
            assert_eq!(x.len(), self.n);
            match &self.kind {
                Kind::Trivial => {}
                Kind::Radix2(r) => r.process(x),
                Kind::Bluestein(b) => b.process(x, scratch),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn naive(x: &[Complex64], direction: Direction) -> Vec<Complex64> {
        let n = x.len();
        let sign = if direction == Direction::Forward { -1.0 } else { 1.0 };
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| v * cis(sign * 2.0 * PI * ((j * k) % n) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    fn signal(n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|j| Complex64::new(libm::sin(1.3 * j as f64 + 0.2), libm::cos(0.7 * (j * j) as f64)))
            .collect()
    }

    fn max_dev(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn portable_matches_naive_dft() {
        for n in [1usize, 2, 3, 5, 8, 13, 16, 33, 65, 100] {
            for dir in [Direction::Forward, Direction::Inverse] {
                let x = signal(n);
                let mut y = x.clone();
                portable::PortableFft::new(n, dir).process(&mut y, &mut Vec::new());
                assert!(max_dev(&y, &naive(&x, dir)) < 1e-10 * n as f64, "n={n}");
            }
        }
    }

    #[test]
    fn planner_matches_portable() {
        let mut planner = FftPlanner::new();
        for n in [4usize, 7, 33, 65, 96] {
            let x = signal(n);
            let mut a = x.clone();
            planner.plan(n, Direction::Forward).process(&mut a, &mut Vec::new());
            let mut b = x.clone();
            portable::PortableFft::new(n, Direction::Forward).process(&mut b, &mut Vec::new());
            assert!(max_dev(&a, &b) < 1e-11 * n as f64);
        }
    }

    #[test]
    fn nd_transform_round_trip_and_pruning() {
        let shape = [6usize, 5, 7, 4];
        let total: usize = shape.iter().product();
        let x: Vec<Complex64> = signal(total);
        let mut planner = FftPlanner::new();
        let mut y = x.clone();
        transform_nd(&mut y, &shape, Direction::Forward, &mut planner, &Pruning::None);
        transform_nd(&mut y, &shape, Direction::Inverse, &mut planner, &Pruning::None);
        for v in y.iter_mut() {
            *v /= total as f64;
        }
        assert!(max_dev(&x, &y) < 1e-12);

        // Sparse input: zero everything outside band 1 on each axis.
        let band = vec![1usize; 4];
        let keep = |i: usize, n: usize| i <= 1 || i + 1 >= n;
        let mut sparse = x.clone();
        for (idx, v) in sparse.iter_mut().enumerate() {
            let mut r = idx;
            let mut inside = true;
            for d in (0..4).rev() {
                inside &= keep(r % shape[d], shape[d]);
                r /= shape[d];
            }
            if !inside {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        let mut full = sparse.clone();
        transform_nd(&mut full, &shape, Direction::Inverse, &mut planner, &Pruning::None);
        let mut pruned = sparse.clone();
        transform_nd(&mut pruned, &shape, Direction::Inverse, &mut planner, &Pruning::SparseInput(band.clone()));
        assert!(max_dev(&full, &pruned) < 1e-12);

        // Truncated output agrees on the band.
        let mut a = x.clone();
        transform_nd(&mut a, &shape, Direction::Forward, &mut planner, &Pruning::None);
        let mut b = x.clone();
        transform_nd(&mut b, &shape, Direction::Forward, &mut planner, &Pruning::TruncatedOutput(band));
        for idx in 0..total {
            let mut r = idx;
            let mut inside = true;
            for d in (0..4).rev() {
                inside &= keep(r % shape[d], shape[d]);
                r /= shape[d];
            }
            if inside {
                assert!((a[idx] - b[idx]).norm() < 1e-12);
            }
        }
    }
}
