//! Independent numerical oracles shared by the integration tests.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// `G(0)` of the simple random walk on `Z^3` from its Fourier representation.
/// The `k_3` integral is done in closed form, leaving
/// `(2 pi)^{-2} int int (a^2 - 1/9)^{-1/2}` with `a = 1 - (cos k_1 + cos k_2)/3`,
/// which is evaluated in polar coordinates around the integrable singularity at 0.
pub fn green_origin_z3() -> f64 {
    let nodes = gauss_legendre(160);
    let f = |k1: f64, k2: f64| {
        let a = 1.0 - (k1.cos() + k2.cos()) / 3.0;
        1.0 / (a * a - 1.0 / 9.0).sqrt()
    };
    // Quarter square [0, pi]^2, split along its diagonal into two triangles.
    let mut total = 0.0;
    for (t, wt) in &nodes {
        let theta = PI / 8.0 * (t + 1.0);
        let wtheta = PI / 8.0 * wt;
        for (rmax, c, s) in [
            (PI / theta.cos(), theta.cos(), theta.sin()),
            (PI / theta.cos(), theta.sin(), theta.cos()),
        ] {
            for (u, wu) in &nodes {
                let rho = rmax / 2.0 * (u + 1.0);
                total += wtheta * rmax / 2.0 * wu * rho * f(rho * c, rho * s);
            }
        }
    }
    4.0 * total / (4.0 * PI * PI)
}
