//! Central finite differences, used as the independent oracle for gradient
//! and Jacobian checks.

/// Central-difference gradient with a coordinate-scaled step.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for c in 0..x.len() {
        let step = h * (1.0 + x[c].abs());
        let orig = xp[c];
        xp[c] = orig + step;
        let fp = f(&xp);
        xp[c] = orig - step;
        let fm = f(&xp);
        xp[c] = orig;
        g[c] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Central-difference Jacobian of a vector map, column per input coordinate.
pub fn central_jacobian(
    f: impl Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    h: f64,
) -> ndarray::Array2<f64> {
    let mut xp = x.to_vec();
    let out_dim = f(x).len();
    let mut jac = ndarray::Array2::zeros((out_dim, x.len()));
    for c in 0..x.len() {
        let step = h * (1.0 + x[c].abs());
        let orig = xp[c];
        xp[c] = orig + step;
        let fp = f(&xp);
        xp[c] = orig - step;
        let fm = f(&xp);
        xp[c] = orig;
        for r in 0..out_dim {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * step);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    #[test]
    fn gradient_of_a_known_function() {
        let g = super::central_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-6);
        assert_abs_diff_eq!(g[0], 4.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], 3.0, epsilon = 1e-8);
    }
}
