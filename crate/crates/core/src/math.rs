//! Scalar helpers routed through `libm` so that `std` and `no_std` builds agree
//! bit for bit.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// `x^n` by repeated squaring (exact for small integer inputs).
#[inline]
pub fn powi(x: f64, mut n: u32) -> f64 {
    let mut base = x;
    let mut acc = 1.0;
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub fn sin_cos(x: f64) -> (f64, f64) {
    libm::sincos(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Japanese bracket `⟨x⟩ = (1 + x²)^{1/2}`.
#[inline]
pub fn bracket(x: f64) -> f64 {
    libm::hypot(1.0, x)
}

/// `|x|^p` with `0^p = 0` for `p > 0` and `0^0 = 1`.
#[inline]
pub fn abs_pow(x: f64, p: f64) -> f64 {
    libm::pow(libm::fabs(x), p)
}

/// Ordinary least squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of `ln y` against `ln x`, ignoring non-positive samples.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let (lx, ly): (alloc::vec::Vec<f64>, alloc::vec::Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (ln(*a), ln(*b)))
        .unzip();
    linear_fit(&lx, &ly).map(|(s, _)| s)
}
