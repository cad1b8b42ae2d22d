//! Gamma, log-gamma and digamma.
//!
//! Evaluated in `f64` regardless of the caller's scalar type.

use std::f64::consts::PI;

use crate::scalar::Scalar;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum(x: f64) -> f64 {
    LANCZOS[1..]
        .iter()
        .enumerate()
        .fold(LANCZOS[0], |acc, (i, &c)| acc + c / (x + i as f64 + 1.0))
}

pub(crate) fn gamma_f64(x: f64) -> f64 {
    if x < 0.5 {
        PI / ((PI * x).sin() * gamma_f64(1.0 - x))
    } else {
        let x = x - 1.0;
        let t = x + LANCZOS_G + 0.5;
        (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * lanczos_sum(x)
    }
}

pub(crate) fn ln_gamma_f64(x: f64) -> f64 {
    if x < 0.5 {
        (PI / (PI * x).sin()).ln() - ln_gamma_f64(1.0 - x)
    } else {
        let x = x - 1.0;
        let t = x + LANCZOS_G + 0.5;
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + lanczos_sum(x).ln()
    }
}

pub(crate) fn digamma_f64(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Asymptotic series in 1/x^2 with Bernoulli coefficients.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    acc + x.ln() - 0.5 * inv - series
}

/// Γ(x).
pub fn gamma<F: Scalar>(x: F) -> F {
    F::of(gamma_f64(x.as_f64()))
}

/// ln Γ(x) for `x > 0`.
pub fn ln_gamma<F: Scalar>(x: F) -> F {
    F::of(ln_gamma_f64(x.as_f64()))
}

/// ψ(x) = d/dx ln Γ(x) for `x > 0`.
pub fn digamma<F: Scalar>(x: F) -> F {
    F::of(digamma_f64(x.as_f64()))
}
