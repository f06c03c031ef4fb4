// SPDX-License-Identifier: Apache-2.0

//! Gauss–Legendre rules.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp;
        loop {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Tensor rule on `[a0, a1] × [b0, b1]`: `Σ w f(x, y)`.
pub fn integrate_rect<F: FnMut(f64, f64) -> f64>(
    rule: &(Vec<f64>, Vec<f64>),
    a: (f64, f64),
    b: (f64, f64),
    mut f: F,
) -> f64 {
    let (xs, ws) = rule;
    let (ha, ca) = ((a.1 - a.0) / 2.0, (a.1 + a.0) / 2.0);
    let (hb, cb) = ((b.1 - b.0) / 2.0, (b.1 + b.0) / 2.0);
    let mut total = 0.0;
    for (xi, wi) in xs.iter().zip(ws) {
        let mut row = 0.0;
        for (yj, wj) in xs.iter().zip(ws) {
            row += wj * f(ca + ha * xi, cb + hb * yj);
        }
        total += wi * row;
    }
    total * ha * hb
}
