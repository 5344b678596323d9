//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix4, Vector4};
use prefix_sls::{
    uniform, BoundedNoise, CostSpec, GaussianNoise, Matrix, ModeDynamics, NoiseSpec, SwitchedModel, SwitchingLanguage,
    SwitchingSignal,
};

pub fn scalar_model(a: f64, b: f64, c: f64, horizon: usize) -> SwitchedModel {
    let m = |v: f64| Matrix::from_element(1, 1, v);
    SwitchedModel::new(vec![ModeDynamics { a: m(a), b: m(b), c: m(c) }], horizon).unwrap()
}

pub fn single_signal(horizon: usize) -> SwitchingLanguage {
    uniform(&SwitchingLanguage::new(vec![SwitchingSignal::constant(1, horizon)], None, 1).unwrap()).unwrap()
}

pub fn unit_gaussian(modes: usize, n: usize, m: usize) -> NoiseSpec {
    NoiseSpec::Gaussian(GaussianNoise::isotropic(modes, n, m, 1.0).unwrap())
}

pub fn bounded(w_bar: f64, v_bar: f64) -> NoiseSpec {
    NoiseSpec::Bounded(BoundedNoise::new(w_bar, v_bar).unwrap())
}

pub fn identity_cost(horizon: usize, n: usize, p: usize, r: f64) -> CostSpec {
    CostSpec::constant(horizon, Matrix::identity(n, n), Matrix::identity(p, p) * r).unwrap()
}

/// Coefficients of each signal over `(w0, w1, v0, v1)` for the scalar loop
/// with horizon one and gains `k00`, `k10`, `k11`.
struct ScalarLoop {
    x0: Vector4<f64>,
    u0: Vector4<f64>,
    x1: Vector4<f64>,
    y0: Vector4<f64>,
    y1: Vector4<f64>,
}

fn scalar_loop(a: f64, b: f64, c: f64, k00: f64) -> ScalarLoop {
    let e = |i: usize| Vector4::from_fn(|j, _| if i == j { 1.0 } else { 0.0 });
    let x0 = e(0);
    let y0 = x0 * c + e(2);
    let u0 = y0 * k00;
    let x1 = x0 * a + u0 * b + e(1);
    let y1 = x1 * c + e(3);
    ScalarLoop { x0, u0, x1, y0, y1 }
}

/// Expected cost `E[x0^2 + r u0^2 + x1^2 + r u1^2]` under unit covariances.
pub fn h2_scalar_cost(a: f64, b: f64, c: f64, r: f64, k: [f64; 3]) -> f64 {
    let l = scalar_loop(a, b, c, k[0]);
    let u1 = l.y0 * k[1] + l.y1 * k[2];
    l.x0.norm_squared() + r * l.u0.norm_squared() + l.x1.norm_squared() + r * u1.norm_squared()
}

/// Cost at `k00` with `(k10, k11)` at their minimizer. The terminal input is
/// penalized and drives nothing inside the horizon, so that minimizer is zero;
/// the brute-force check in the tests confirms it against a grid.
fn h2_profile(a: f64, b: f64, c: f64, r: f64, k00: f64) -> (f64, [f64; 3]) {
    let k = [k00, 0.0, 0.0];
    (h2_scalar_cost(a, b, c, r, k), k)
}

/// Minimum over all three gain entries: dense grid on `k00` followed by
/// golden-section refinement, with the remaining entries solved exactly.
pub fn h2_scalar_oracle(a: f64, b: f64, c: f64, r: f64) -> (f64, [f64; 3]) {
    let f = |k: f64| h2_profile(a, b, c, r, k).0;
    let (lo, hi, steps) = (-20.0, 20.0, 400_000);
    let h = (hi - lo) / steps as f64;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=steps {
        let k = lo + h * i as f64;
        let v = f(k);
        if v < best.0 {
            best = (v, k);
        }
    }
    let (mut x0, mut x1) = (best.1 - h, best.1 + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while x1 - x0 > 1e-13 {
        let (p, q) = (x1 - g * (x1 - x0), x0 + g * (x1 - x0));
        if f(p) < f(q) {
            x1 = q;
        } else {
            x0 = p;
        }
    }
    h2_profile(a, b, c, r, 0.5 * (x0 + x1))
}

/// Linear pieces `coef . (q1, q2, q3) + constant` of the state response
/// entries of the scalar loop with horizon two, in terms of the free
/// parameters `q = (Phi_uy[0,0], Phi_uy[1,0], Phi_uy[1,1])`, each with its
/// noise scale. Rows are `t = 0, 1, 2`.
fn l1_scalar_rows(a: f64, b: f64, c: f64, wb: f64, vb: f64) -> Vec<Vec<([f64; 3], f64, f64)>> {
    vec![
        // Phi_xx[0,0] = 1, Phi_xy[0,0] = 0
        vec![([0.0; 3], 1.0, wb)],
        vec![
            ([b * c, 0.0, 0.0], a, wb), // Phi_xx[1,0] = a + b c q1
            ([0.0; 3], 1.0, wb),        // Phi_xx[1,1]
            ([b, 0.0, 0.0], 0.0, vb),   // Phi_xy[1,0] = b q1
        ],
        vec![
            // Phi_xx[2,0] = a (a + b c q1) + b (a c q3 + c q2)
            ([a * b * c, b * c, a * b * c], a * a, wb),
            ([0.0, 0.0, b * c], a, wb), // Phi_xx[2,1] = a + b c q3
            ([0.0; 3], 1.0, wb),        // Phi_xx[2,2]
            ([a * b, b, 0.0], 0.0, vb), // Phi_xy[2,0] = a b q1 + b q2
            ([0.0, 0.0, b], 0.0, vb),   // Phi_xy[2,1] = b q3
        ],
    ]
}

/// Minimax value of the scalar loop with horizon two by vertex enumeration
/// of the epigraph LP in `(q1, q2, q3, tau)`: every absolute value is
/// expanded into its sign patterns, every 4-subset of the resulting
/// half-spaces is solved, and the feasible vertex with the smallest `tau` wins.
pub fn l1_scalar_oracle(a: f64, b: f64, c: f64, wb: f64, vb: f64) -> f64 {
    // constraints g . (q, tau) <= h
    let mut cons: Vec<([f64; 4], f64)> = Vec::new();
    for row in l1_scalar_rows(a, b, c, wb, vb) {
        let k = row.len();
        for mask in 0..(1u32 << k) {
            let mut g = [0.0, 0.0, 0.0, -1.0];
            let mut h = 0.0;
            for (j, (coef, cst, scale)) in row.iter().enumerate() {
                let s = if mask >> j & 1 == 1 { -1.0 } else { 1.0 };
                for i in 0..3 {
                    g[i] += s * scale * coef[i];
                }
                h -= s * scale * cst;
            }
            if g[..3].iter().all(|v| *v == 0.0) && cons.iter().any(|(g2, h2)| *g2 == g && *h2 == h) {
                continue;
            }
            cons.push((g, h));
        }
    }
    let n = cons.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let idx = [i, j, k, l];
                    let m = Matrix4::from_fn(|r, col| cons[idx[r]].0[col]);
                    let rhs = Vector4::from_fn(|r, _| cons[idx[r]].1);
                    let Some(x) = m.lu().solve(&rhs) else { continue };
                    if (m * x - rhs).amax() > 1e-9 || x.amax() > 1e9 {
                        continue;
                    }
                    let feasible =
                        cons.iter().all(|(g, h)| g.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() <= h + 1e-10);
                    if feasible && x[3] < best {
                        best = x[3];
                    }
                }
            }
        }
    }
    best
}
