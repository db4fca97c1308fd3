//! Standard-normal helpers that stay accurate far into the tails.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{PI, SQRT_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

pub fn ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Lower-tail probability Φ(z).
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Upper-tail probability 1 − Φ(z).
pub fn sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// ln(1 − Φ(z)), using the asymptotic Mills-ratio series where `sf` underflows.
pub fn ln_sf(z: f64) -> f64 {
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if z < 30.0 {
        return sf(z).ln();
    }
    let z2 = z * z;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    -0.5 * z2 - z.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

/// Φ⁻¹(p).
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Inverse of the upper tail: z with 1 − Φ(z) = q.
pub fn isf(q: f64) -> f64 {
    if q <= 0.0 {
        return f64::INFINITY;
    }
    if q >= 1.0 {
        return f64::NEG_INFINITY;
    }
    SQRT_2 * erfc_inv(2.0 * q)
}

/// ln P(a ≤ Z ≤ b) for a standard normal Z.
pub fn ln_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        upper_tail_ln_mass(a, b)
    } else if b < 0.0 {
        upper_tail_ln_mass(-b, -a)
    } else {
        (1.0 - sf(-a) - sf(b)).ln()
    }
}

// ln(Q(a) − Q(b)) with 0 < a < b.
fn upper_tail_ln_mass(a: f64, b: f64) -> f64 {
    let la = ln_sf(a);
    let lb = ln_sf(b);
    la + (-(lb - la).exp()).ln_1p()
}

/// Draws z from a standard normal truncated to [a, b] given u ∈ [0, 1).
pub fn truncated_quantile(a: f64, b: f64, u: f64) -> f64 {
    if a > 0.0 {
        upper_tail_quantile(a, b, u)
    } else if b < 0.0 {
        -upper_tail_quantile(-b, -a, 1.0 - u)
    } else {
        let lo = cdf(a);
        let hi = cdf(b);
        quantile(lo + u * (hi - lo)).clamp(a, b)
    }
}

fn upper_tail_quantile(a: f64, b: f64, u: f64) -> f64 {
    let la = ln_sf(a);
    let ratio = (ln_sf(b) - la).exp();
    // target Q(z) = Q(a) * (1 - u (1 - ratio))
    let ln_target = la + (-(u * (1.0 - ratio))).ln_1p();
    let q = ln_target.exp();
    let z = if q > 1e-290 {
        isf(q)
    } else {
        // Newton on ln Q(z) = ln_target; d ln Q / dz = -φ(z)/Q(z).
        let mut z = a;
        for _ in 0..100 {
            let f = ln_sf(z) - ln_target;
            let slope = -(ln_pdf(z) - ln_sf(z)).exp();
            let step = f / slope;
            z -= step;
            if step.abs() <= 1e-14 * z.abs().max(1.0) {
                break;
            }
        }
        z
    };
    z.clamp(a, b)
}
