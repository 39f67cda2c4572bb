//! Small dense-vector helpers and numerically stable scalar functions.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `-ln σ(x)`, stable for large |x|.
#[inline]
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        libm::log1p(libm::exp(-x))
    } else {
        -x + libm::log1p(libm::exp(x))
    }
}

/// Binary Shannon entropy in bits; `H(0) = H(1) = 0`.
#[inline]
pub fn binary_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -q * libm::log2(q) - (1.0 - q) * libm::log2(1.0 - q)
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neg_log_sigmoid_matches_direct_form() {
        for &x in &[-30.0, -2.5, -0.1, 0.0, 0.3, 4.0, 40.0] {
            let direct = -libm::log(sigmoid(x));
            assert!((neg_log_sigmoid(x) - direct).abs() < 1e-12, "x={x}");
        }
        assert!((neg_log_sigmoid(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(neg_log_sigmoid(-800.0).is_finite());
    }

    #[test]
    fn entropy_boundaries() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert_eq!(binary_entropy(0.5), 1.0);
    }
}
