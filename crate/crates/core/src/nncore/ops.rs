use super::Real;

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<F: Real>(y: &mut [F], alpha: F, x: &[F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[r] = bias[r] + dot(w[r], x)` for a row-major `rows x x.len()` matrix.
pub(crate) fn affine<F: Real>(w: &[F], bias: &[F], x: &[F], out: &mut [F]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = bias[r] + dot(&w[r * n..(r + 1) * n], x);
    }
}

/// `out[r] += dot(w[r], x)`
pub(crate) fn matvec_add<F: Real>(w: &[F], x: &[F], out: &mut [F]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(&w[r * n..(r + 1) * n], x);
    }
}

/// Given `dz` for `z = W x`, accumulate `dW += dz ⊗ x` and `dx += Wᵀ dz`.
pub(crate) fn matvec_backward<F: Real>(
    w: &[F],
    x: &[F],
    dz: &[F],
    dw: &mut [F],
    dx: Option<&mut [F]>,
) {
    let n = x.len();
    for (r, &g) in dz.iter().enumerate() {
        if g != F::zero() {
            axpy(&mut dw[r * n..(r + 1) * n], g, x);
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dz.iter().enumerate() {
            if g != F::zero() {
                axpy(dx, g, &w[r * n..(r + 1) * n]);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
