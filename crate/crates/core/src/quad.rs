//! Gauss–Legendre nodes, used wherever a smooth compactly supported
//! integrand must be integrated to near machine precision (transverse
//! slices, exact window averages).

/// Nodes and weights of the k-point Gauss–Legendre rule on [-1, 1],
/// by Newton iteration on the Legendre recurrence. Exact for polynomials
/// of degree <= 2k - 1.
pub(crate) fn gauss_legendre(k: usize) -> Vec<(f64, f64)> {
    assert!(k >= 1, "quadrature order must be positive");
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        // Tricomi's initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=k {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let p = if k == 1 { x } else { p1 };
            let pm1 = if k == 1 { 1.0 } else { p0 };
            dp = k as f64 * (x * p - pm1) / (x * x - 1.0);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// The same rule mapped to [a, b].
pub(crate) fn gauss_legendre_on(k: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    gauss_legendre(k)
        .into_iter()
        .map(|(x, w)| (mid + half * x, half * w))
        .collect()
}
