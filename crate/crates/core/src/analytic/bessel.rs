//! Modified Bessel functions of the first kind for integer order and
//! complex argument.
//!
//! Power series for `|z| <= 30`; normalized downward (Miller) recurrence
//! beyond, up to the supported range `|z| <= 100`. The scaled variant
//! `e^{-Re z} I_n(z)` stays bounded for positive real arguments and avoids
//! overflow in products with decaying exponential prefactors. Accuracy
//! degrades near the imaginary axis for large moduli; the intended
//! arguments are real-dominant.

use super::AnalyticError;
use crate::linalg::cr;
use crate::Complex64;

/// Largest supported argument modulus.
pub const MAX_ARG: f64 = 100.0;

const SERIES_LIMIT: f64 = 30.0;

/// `I_n(z)` for any integer order (`I_{-n} = I_n`) and `|z| <= 100`.
pub fn bessel_i(n: i64, z: Complex64) -> Result<Complex64, AnalyticError> {
    let scaled = bessel_i_scaled(n, z)?;
    Ok(scaled * Complex64::new(z.re, 0.0).exp())
}

/// Scaled value `e^{-Re z} I_n(z)`.
pub fn bessel_i_scaled(n: i64, z: Complex64) -> Result<Complex64, AnalyticError> {
    let order = n.unsigned_abs() as usize;
    let r = z.norm();
    if !r.is_finite() || r > MAX_ARG {
        return Err(AnalyticError::Range {
            what: "bessel_i argument modulus",
            value: r,
            max: MAX_ARG,
        });
    }
    if r == 0.0 {
        return Ok(cr(if order == 0 { 1.0 } else { 0.0 }));
    }
    if r <= SERIES_LIMIT {
        return Ok(series(order, z) * (-Complex64::new(z.re, 0.0)).exp());
    }
    if z.re < 0.0 {
        // I_n(-z) = (-1)^n I_n(z); keeps the recurrence normalization
        // (a sum against e^z) free of cancellation.
        let flipped = miller_scaled(order, -z);
        let sign = if order.is_multiple_of(2) { 1.0 } else { -1.0 };
        return Ok(flipped * sign * (-2.0 * z.re).exp());
    }
    Ok(miller_scaled(order, z))
}

/// Power series `sum_k (z/2)^{n+2k} / (k! (n+k)!)`, summed to round-off.
fn series(n: usize, z: Complex64) -> Complex64 {
    let half = z * 0.5;
    // leading term (z/2)^n / n! built as a running product to avoid overflow
    let mut term = cr(1.0);
    for j in 1..=n {
        term *= half / j as f64;
    }
    let mut sum = term;
    let half_sq = half * half;
    for k in 1..=600 {
        term *= half_sq / (k as f64 * (n + k) as f64);
        sum += term;
        if term.norm() <= f64::EPSILON * sum.norm().max(f64::MIN_POSITIVE) && k > 4 {
            break;
        }
    }
    sum
}

/// Downward recurrence `I_{k-1}(z) = I_{k+1}(z) + (2k/z) I_k(z)` from a
/// trial order well above both `n` and `|z|`, normalized against
/// `I_0 + 2 sum_{k>=1} I_k = e^z`. Requires `Re z >= 0`; returns the
/// scaled value `e^{-Re z} I_n(z)`.
fn miller_scaled(n: usize, z: Complex64) -> Complex64 {
    let start = n.max((1.8 * z.norm()) as usize) + 60;
    let mut above = Complex64::default(); // trial I_{k+1}
    let mut here = Complex64::new(1e-150, 0.0); // trial I_k, k = start
    let mut sum = here * 2.0;
    let mut wanted = if n == start { here } else { Complex64::default() };
    for k in (1..=start).rev() {
        let below = above + here * (2.0 * k as f64) / z;
        above = here;
        here = below;
        if k - 1 == n {
            wanted = here;
        }
        sum += if k > 1 { here * 2.0 } else { here };
        if here.norm() > 1e200 {
            above *= 1e-200;
            here *= 1e-200;
            sum *= 1e-200;
            wanted *= 1e-200;
        }
    }
    // bring the proportionality scale to order one before dividing, so the
    // quotient of two tiny trial values cannot underflow
    let rescale = 1.0 / sum.norm();
    if !rescale.is_finite() {
        return Complex64::default();
    }
    wanted *= rescale;
    sum *= rescale;
    // trial values are proportional to the true ones, whose weighted sum is
    // e^z; after the e^{-Re z} scaling the target is e^{i Im z}
    wanted * Complex64::new(0.0, z.im).exp() / sum
}
