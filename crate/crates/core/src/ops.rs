//! Elementary kernels: stable row softmax and the source-latent interpolation.

use crate::error::{MlvError, Result};
use crate::scalar::Scalar;
use crate::tensor::{LatentSequence, Matrix};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<S: Scalar>(m: &Matrix<S>) -> Result<Matrix<S>> {
    if !m.is_finite() {
        return Err(MlvError::NumericDomain(
            "softmax input contains non-finite values".into(),
        ));
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut total = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// `(1 − t)·x_src + t·noise`, the noisy source latent at time `t`.
pub fn lerp_source<S: Scalar>(
    x_src: &LatentSequence<S>,
    noise: &LatentSequence<S>,
    t: S,
) -> Result<LatentSequence<S>> {
    if !(t >= S::zero() && t <= S::one()) {
        return Err(MlvError::OutOfRange(format!(
            "interpolation time {t} outside [0, 1]"
        )));
    }
    x_src.check_same_shape(noise, "lerp_source")?;
    // Endpoints are returned untouched so t = 0 and t = 1 are exact.
    if t == S::zero() {
        return Ok(x_src.clone());
    }
    if t == S::one() {
        return Ok(noise.clone());
    }
    let keep = S::one() - t;
    x_src.zip_map(noise, |x, n| keep * x + t * n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> Matrix<f64> {
        Matrix::from_rows(&[v.to_vec()]).unwrap()
    }

    #[test]
    fn softmax_uniform() {
        assert_eq!(
            softmax_rows(&row(&[0.0, 0.0])).unwrap().as_slice(),
            &[0.5, 0.5]
        );
    }

    #[test]
    fn softmax_large_logits() {
        let s = softmax_rows(&row(&[1000.0, 1000.0])).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_ln3() {
        let s = softmax_rows(&row(&[0.0, 3f64.ln()])).unwrap();
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(
            softmax_rows(&row(&[0.0, f64::NAN])),
            Err(MlvError::NumericDomain(_))
        ));
        assert!(softmax_rows(&row(&[f64::INFINITY])).is_err());
    }

    #[test]
    fn lerp_endpoints_and_midpoint() {
        let x = LatentSequence::filled(2, 2, 1.0).unwrap();
        let n = LatentSequence::filled(2, 2, 0.5).unwrap();
        assert_eq!(lerp_source(&x, &n, 0.0).unwrap(), x);
        assert_eq!(lerp_source(&x, &n, 1.0).unwrap(), n);
        let mid = lerp_source(&x, &n, 0.6).unwrap();
        assert!(mid.as_slice().iter().all(|v: &f64| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn lerp_shape_mismatch() {
        let x = LatentSequence::filled(2, 2, 1.0).unwrap();
        let n = LatentSequence::filled(3, 2, 0.5).unwrap();
        assert!(matches!(
            lerp_source(&x, &n, 0.5),
            Err(MlvError::InvalidShape(_))
        ));
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            vals in prop::collection::vec(-20.0f64..20.0, 1..12),
            shift in -500.0f64..500.0,
        ) {
            let a = softmax_rows(&row(&vals)).unwrap();
            let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            let b = softmax_rows(&row(&shifted)).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let total: f64 = a.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(a.as_slice().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn lerp_is_affine(
            xs in prop::collection::vec(-5.0f64..5.0, 6),
            ns in prop::collection::vec(-5.0f64..5.0, 6),
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let x = LatentSequence::new(3, 2, xs).unwrap();
            let n = LatentSequence::new(3, 2, ns).unwrap();
            let mid = lerp_source(&x, &n, (a + b) / 2.0).unwrap();
            let la = lerp_source(&x, &n, a).unwrap();
            let lb = lerp_source(&x, &n, b).unwrap();
            for ((m, p), q) in mid.as_slice().iter().zip(la.as_slice()).zip(lb.as_slice()) {
                prop_assert!((m - (p + q) / 2.0).abs() < 1e-12);
            }
        }
    }
}
