//! Gauss-Hermite quadrature for Gaussian expectations.

/// Nodes and weights for ∫ e^{-x²} f(x) dx ≈ Σ wᵢ f(xᵢ).
///
/// Newton iteration on the physicists' Hermite polynomials, largest
/// root first, with the usual asymptotic initial guesses; the second
/// half of the roots follows by symmetry.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    const EPS: f64 = 3e-14;
    const MAX_IT: usize = 60;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..MAX_IT {
            // p1 = H_n(z) / (π^{1/4} √(2^n n!)), the orthonormal form.
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 0..n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= EPS {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// E[f(X)] for X ~ N(mean, diag(std²)) by a tensor Gauss-Hermite grid
/// with `points` nodes per dimension.
pub fn gaussian_expectation(
    mean: &[f64],
    std: &[f64],
    points: usize,
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(mean.len(), std.len());
    let d = mean.len();
    let (x, w) = gauss_hermite(points);
    let norm = std::f64::consts::PI.powf(-(d as f64) / 2.0);
    let mut idx = vec![0usize; d];
    let mut arg = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for k in 0..d {
            weight *= w[idx[k]];
            arg[k] = mean[k] + std::f64::consts::SQRT_2 * std[k] * x[idx[k]];
        }
        total += weight * f(&arg);
        // odometer over the tensor grid
        let mut k = 0;
        loop {
            if k == d {
                return total * norm;
            }
            idx[k] += 1;
            if idx[k] < points {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
