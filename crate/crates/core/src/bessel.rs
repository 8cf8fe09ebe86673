//! Exponentially scaled modified Bessel functions `e^{-z} I_n(z)` of integer
//! order, evaluated in log space.
//!
//! Regions (order `n`, argument `z >= 0`):
//!
//! * `n >= 50`: Debye uniform asymptotic expansion in `1/n`.
//! * `z <= 30`: ascending power series (positive terms, no cancellation).
//! * `z >= max(60, 4 n^2)`: Hankel large-argument expansion.
//! * otherwise: Miller backward recurrence normalised by
//!   `I_0(z) + 2 sum_k I_k(z) = e^z`.
//!
//! The continuous-time simple random walk kernel in one dimension is
//! `p_a(0, x) = e^{-2a} I_{|x|}(2a)` where `a` is the per-direction jump
//! intensity integrated over time.

use std::sync::LazyLock;

const DEBYE_MIN_ORDER: u64 = 50;
const SERIES_MAX_ARG: f64 = 30.0;
const DEBYE_TERMS: usize = 14;
const EPS: f64 = 1e-17;

static LN_FACTORIAL: LazyLock<[f64; DEBYE_MIN_ORDER as usize + 1]> = LazyLock::new(|| {
    let mut t = [0.0; DEBYE_MIN_ORDER as usize + 1];
    for k in 1..t.len() {
        t[k] = t[k - 1] + (k as f64).ln();
    }
    t
});

/// Coefficients (ascending powers of `p`) of the Debye polynomials `U_k(p)`,
/// generated by `U_{k+1} = p^2 (1 - p^2) U_k' / 2 + (1/8) int_0^p (1 - 5 q^2) U_k(q) dq`.
static DEBYE_POLYS: LazyLock<Vec<Vec<f64>>> = LazyLock::new(|| {
    let mut polys = vec![vec![1.0]];
    for k in 0..DEBYE_TERMS - 1 {
        let u = &polys[k];
        let mut next = vec![0.0; u.len() + 3];
        for (j, &a) in u.iter().enumerate() {
            let jf = j as f64;
            // 1/2 p^2 (1 - p^2) j a p^{j-1}
            next[j + 1] += 0.5 * jf * a;
            next[j + 3] -= 0.5 * jf * a;
            // 1/8 (a p^{j+1} / (j+1) - 5 a p^{j+3} / (j+3))
            next[j + 1] += 0.125 * a / (jf + 1.0);
            next[j + 3] -= 0.625 * a / (jf + 3.0);
        }
        polys.push(next);
    }
    polys
});

fn horner(coeffs: &[f64], p: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * p + c)
}

/// `ln(e^{-z} I_n(z))` for integer order `n` and `z >= 0`.
///
/// Returns `-inf` when the value is exactly zero (`z = 0`, `n > 0`).
pub fn ln_scaled_bessel_i(n: u64, z: f64) -> f64 {
    debug_assert!(z >= 0.0 && z.is_finite() || z == f64::INFINITY);
    if z == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if n >= DEBYE_MIN_ORDER {
        debye(n as f64, z)
    } else if z <= SERIES_MAX_ARG {
        series(n, z)
    } else if z >= (4.0 * (n * n) as f64).max(60.0) {
        hankel(n, z)
    } else {
        miller(n, z)
    }
}

/// `e^{-z} I_n(z)`.
pub fn scaled_bessel_i(n: u64, z: f64) -> f64 {
    ln_scaled_bessel_i(n, z).exp()
}

fn series(n: u64, z: f64) -> f64 {
    let q = 0.25 * z * z;
    let nf = n as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    loop {
        let denom = (k + 1.0) * (nf + k + 1.0);
        term *= q / denom;
        sum += term;
        k += 1.0;
        if denom > q && term < EPS * sum {
            break;
        }
    }
    nf * (0.5 * z).ln() - LN_FACTORIAL[n as usize] - z + sum.ln()
}

fn hankel(n: u64, z: f64) -> f64 {
    let mu = 4.0 * (n * n) as f64;
    let mut term = 1.0f64;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (8.0 * k * z);
        if next.abs() >= term.abs() || next == 0.0 {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < EPS * sum.abs() {
            break;
        }
        k += 1.0;
    }
    -0.5 * (2.0 * std::f64::consts::PI * z).ln() + sum.ln()
}

fn miller(n: u64, z: f64) -> f64 {
    const BIG: f64 = 1e200;
    let start = n + (9.5 * z.sqrt()).ceil() as u64 + 40;
    let two_over_z = 2.0 / z;
    let mut b_next = 0.0; // b_{k+1}
    let mut b = 1e-30; // b_k, k = start
    let mut sum = 0.0; // 2 * sum_{j > k} b_j, accumulated as k descends
    let mut at_n = if start == n { b } else { 0.0 };
    let mut k = start;
    while k > 0 {
        let b_prev = b_next + (k as f64) * two_over_z * b;
        sum += 2.0 * b;
        b_next = b;
        b = b_prev;
        k -= 1;
        if k == n {
            at_n = b;
        }
        if b > BIG {
            b /= BIG;
            b_next /= BIG;
            sum /= BIG;
            at_n /= BIG;
        }
    }
    sum += b; // b_0 counted once
    (at_n / sum).ln()
}

fn debye(nu: f64, z: f64) -> f64 {
    let w = z / nu;
    let s = (1.0 + w * w).sqrt();
    let p = 1.0 / s;
    let exponent = nu / (s + w) - nu * (1.0 / w).asinh();
    let mut sum = 0.0;
    let mut scale = 1.0;
    for poly in DEBYE_POLYS.iter() {
        let term = horner(poly, p) * scale;
        sum += term;
        if term.abs() < EPS * sum.abs() {
            break;
        }
        scale /= nu;
    }
    exponent - 0.5 * (2.0 * std::f64::consts::PI * nu).ln() - 0.5 * s.ln() + sum.ln()
}

/// One-dimensional continuous-time walk kernel `p_a(0, x) = e^{-2a} I_|x|(2a)` in log space,
/// where `a` is the expected number of jumps per direction.
#[inline]
pub fn ln_kernel_1d(a: f64, x: i64) -> f64 {
    ln_scaled_bessel_i(x.unsigned_abs(), 2.0 * a)
}
