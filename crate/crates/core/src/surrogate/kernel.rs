//! Matérn 5/2 kernel with one lengthscale per input dimension.

const SQRT5: f64 = 2.236_067_977_499_79;

/// Scaled distance `r = sqrt(sum_d ((a_d - b_d) / l_d)^2)` given inverse lengthscales.
#[inline]
pub fn scaled_distance(a: &[f64], b: &[f64], inv_lengthscales: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((x, y), il) in a.iter().zip(b).zip(inv_lengthscales) {
        let d = (x - y) * il;
        acc += d * d;
    }
    acc.sqrt()
}

/// Unit-variance Matérn 5/2 correlation at scaled distance `r`.
#[inline]
pub fn matern52(r: f64) -> f64 {
    let sr = SQRT5 * r;
    (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
}

/// `-(1/r) d/dr matern52(r)`, finite at `r = 0`.
///
/// With `r^2 = sum_d (delta_d / l_d)^2` this gives
/// `d k / d log l_d = variance * matern52_radial(r) * (delta_d / l_d)^2`.
#[inline]
pub fn matern52_radial(r: f64) -> f64 {
    let sr = SQRT5 * r;
    (5.0 / 3.0) * (1.0 + sr) * (-sr).exp()
}

#[inline]
pub fn covariance(a: &[f64], b: &[f64], inv_lengthscales: &[f64], signal_variance: f64) -> f64 {
    signal_variance * matern52(scaled_distance(a, b, inv_lengthscales))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_at_origin_and_decays() {
        assert_eq!(matern52(0.0), 1.0);
        let mut prev = 1.0;
        for k in 1..50 {
            let v = matern52(k as f64 * 0.1);
            assert!(v < prev && v > 0.0);
            prev = v;
        }
    }

    #[test]
    fn radial_derivative_matches_finite_difference() {
        for &r in &[0.05, 0.3, 1.0, 2.5] {
            let h = 1e-6;
            let fd = (matern52(r + h) - matern52(r - h)) / (2.0 * h);
            assert!((fd + r * matern52_radial(r)).abs() < 1e-8, "r = {r}");
        }
    }
}
