//! Standard normal distribution helpers.
//!
//! Tail probabilities go through `erfc` so that both `cdf` and `sf` keep full
//! relative precision far from the mean.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// Smallest tail probability handed to the quantile function.
pub const QUANTILE_CLIP: f64 = 1e-15;

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// Φ(x).
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x), computed without cancellation.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Φ⁻¹(p) for p in (0, 1). Arguments are clipped to
/// `[QUANTILE_CLIP, 1 - QUANTILE_CLIP]`.
pub fn quantile(p: f64) -> f64 {
    let p = p.clamp(QUANTILE_CLIP, 1.0 - QUANTILE_CLIP);
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// −Φ⁻¹(q) = Φ⁻¹(1 − q), evaluated from the upper-tail probability `q`.
pub fn quantile_upper(q: f64) -> f64 {
    -quantile(q)
}

/// Maps a (lower, upper) tail-probability pair to a normal score, inverting
/// whichever tail is smaller.
pub fn score_from_tails(lower: f64, upper: f64) -> f64 {
    if lower <= upper {
        quantile(lower)
    } else {
        quantile_upper(upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf_in_both_tails() {
        for i in -790..=790 {
            let x = i as f64 / 100.0;
            let back = score_from_tails(cdf(x), sf(x));
            assert!((back - x).abs() < 1e-10, "x = {x}, back = {back}");
        }
    }

    #[test]
    fn known_quantiles() {
        assert!(quantile(0.5).abs() < 1e-15);
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((quantile(0.05) + 1.644_853_626_951_472_2).abs() < 1e-12);
    }

    #[test]
    fn clipping_keeps_scores_finite() {
        assert!(quantile(0.0).is_finite());
        assert!(quantile(1.0).is_finite());
        assert!((quantile(0.0) + 7.941_345_326_170_997).abs() < 1e-6);
    }
}
