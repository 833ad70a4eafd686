use super::Real;

/// `base^(-2i/d)` for `i in 0..d/2`.
pub fn inverse_frequencies(dim: usize, base: f64) -> Vec<f64> {
    (0..dim / 2)
        .map(|i| base.powf(-2.0 * i as f64 / dim as f64))
        .collect()
}

/// Rotates `(x[2i], x[2i+1])` by `position * base^(-2i/d)`.
pub fn rope_rotate<T: Real>(x: &[T], position: f64, base: f64) -> Vec<T> {
    assert!(x.len().is_multiple_of(2), "rotary dimension must be even");
    let mut out = x.to_vec();
    for (i, f) in inverse_frequencies(x.len(), base).into_iter().enumerate() {
        let (sin, cos) = (position * f).sin_cos();
        rope_rotate_pair(&mut out[2 * i..2 * i + 2], T::lit(cos), T::lit(sin));
    }
    out
}

#[inline]
pub fn rope_rotate_pair<T: Real>(pair: &mut [T], cos: T, sin: T) {
    let (a, b) = (pair[0], pair[1]);
    pair[0] = a * cos - b * sin;
    pair[1] = a * sin + b * cos;
}
