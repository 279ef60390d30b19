//! Complex helpers missing from `num-complex`.

use num_complex::Complex64;

/// `exp(w) - 1` without cancellation for small `|w|`.
pub fn expm1(w: Complex64) -> Complex64 {
    if w.norm() < 1e-5 {
        w * (1.0 + w * (0.5 + w / 6.0))
    } else {
        w.exp() - 1.0
    }
}

/// `ln(1 + w)` (principal branch) without cancellation for small `|w|`.
pub fn ln_1p(w: Complex64) -> Complex64 {
    if w.norm() < 1e-4 {
        // alternating series, truncation error below |w|^6 / 6
        let w2 = w * w;
        w - w2 / 2.0 + w2 * w / 3.0 - w2 * w2 / 4.0 + w2 * w2 * w / 5.0
    } else {
        (1.0 + w).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_arguments_match_direct_evaluation() {
        for w in [
            Complex64::new(3e-6, -2e-6),
            Complex64::new(-5e-5, 7e-5),
            Complex64::new(0.3, 0.4),
        ] {
            assert!((expm1(w) - (w.exp() - 1.0)).norm() <= 1e-10 * w.norm());
            assert!((ln_1p(w) - (1.0 + w).ln()).norm() <= 1e-10 * w.norm());
        }
    }
}
