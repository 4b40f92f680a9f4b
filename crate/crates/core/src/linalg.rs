use num_complex::Complex64;

/// `Σ conj(a_i) b_i`.
#[inline]
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

#[inline]
pub fn norm(a: &[Complex64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(y: &mut [Complex64], alpha: Complex64, x: &[Complex64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}
