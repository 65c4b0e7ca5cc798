//! Flat parameter-vector helpers. All model parameters, gradients and
//! updates are concatenated into one `[f64]`.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Rescales `g` in place so that its Euclidean norm is at most `max_norm`.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) {
    let n = norm(g);
    if n > max_norm && n > 0.0 {
        let scale = max_norm / n;
        g.iter_mut().for_each(|v| *v *= scale);
    }
}
