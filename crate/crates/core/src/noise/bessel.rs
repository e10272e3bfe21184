//! Modified Bessel functions of the first kind, orders 0 and 1, for x >= 0.
//!
//! Power series below [`ASYMPTOTIC_FROM`], Hankel asymptotic expansion above.
//! The `*_scaled` variants return `exp(-x) I_n(x)` and never overflow.

use std::f64::consts::PI;

const ASYMPTOTIC_FROM: f64 = 25.0;

fn series(order: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = half * half;
    // (x/2)^n / n!
    let mut term = if order == 0 { 1.0 } else { half };
    let mut sum = term;
    let mut m = 0u32;
    loop {
        m += 1;
        term *= q / (m as f64 * (m + order) as f64);
        sum += term;
        if term <= sum * 1e-17 || m > 500 {
            return sum;
        }
    }
}

fn asymptotic_scaled(order: u32, x: f64) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() <= sum.abs() * 1e-17 {
            break;
        }
    }
    sum / (2.0 * PI * x).sqrt()
}

/// `exp(-x) I_0(x)`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < ASYMPTOTIC_FROM {
        series(0, x) * (-x).exp()
    } else {
        asymptotic_scaled(0, x)
    }
}

/// `exp(-x) I_1(x)`.
pub fn bessel_i1_scaled(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < ASYMPTOTIC_FROM {
        series(1, x) * (-x).exp()
    } else {
        asymptotic_scaled(1, x)
    }
}

pub fn bessel_i0(x: f64) -> f64 {
    if x < ASYMPTOTIC_FROM {
        series(0, x)
    } else {
        asymptotic_scaled(0, x) * x.exp()
    }
}

pub fn bessel_i1(x: f64) -> f64 {
    if x < ASYMPTOTIC_FROM {
        series(1, x)
    } else {
        asymptotic_scaled(1, x) * x.exp()
    }
}

/// `I_order(x)` for order 0 or 1.
///
/// # Panics
/// For any other order.
pub fn bessel_i(order: u32, x: f64) -> f64 {
    match order {
        0 => bessel_i0(x),
        1 => bessel_i1(x),
        _ => panic!("bessel_i supports orders 0 and 1, got {order}"),
    }
}
