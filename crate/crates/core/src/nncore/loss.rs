use super::Real;

pub const BCE_EPSILON: f64 = 1e-7;

/// Mean binary cross-entropy with predictions clipped to `[ε, 1-ε]`.
pub fn bce_loss<F: Real>(p: &[F], y: &[F]) -> F {
    assert_eq!(p.len(), y.len(), "prediction and label counts differ");
    let eps = F::lit(BCE_EPSILON);
    let total: F = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.max(eps).min(F::one() - eps);
            -(y * p.ln() + (F::one() - y) * (F::one() - p).ln())
        })
        .sum();
    total / F::lit(p.len() as f64)
}

/// d(mean loss)/d(p_i). Zero where the clip is active.
pub fn bce_grad<F: Real>(p: &[F], y: &[F]) -> Vec<F> {
    assert_eq!(p.len(), y.len(), "prediction and label counts differ");
    let eps = F::lit(BCE_EPSILON);
    let n = F::lit(p.len() as f64);
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            if p < eps || p > F::one() - eps {
                F::zero()
            } else {
                (p - y) / (p * (F::one() - p)) / n
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let l = bce_loss(&[0.5f64], &[1.0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = bce_loss(&[0.9f64, 0.2], &[1.0, 0.0]);
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn clipping_keeps_loss_finite() {
        let l = bce_loss(&[0.0f64, 1.0], &[1.0, 0.0]);
        assert!(l.is_finite());
        assert!((l - -(1e-7f64).ln()).abs() < 1e-6);
        assert_eq!(bce_grad(&[0.0f64], &[1.0]), vec![0.0]);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = [0.3f64, 0.75, 0.6];
        let y = [1.0, 0.0, 1.0];
        let g = bce_grad(&p, &y);
        for i in 0..3 {
            let h = 1e-6;
            let (mut a, mut b) = (p, p);
            a[i] += h;
            b[i] -= h;
            let fd = (bce_loss(&a, &y) - bce_loss(&b, &y)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{fd} vs {}", g[i]);
        }
    }
}
