//! Solver outputs checked against independent, brute-force references.

use cfjed::eval::l1_chest;
use cfjed::fbs::SolverOptions;
use cfjed::jed::{gradient_f, prox_h, prox_s, run_jed, JedParams, JedProblem};
use cfjed::linalg::{crandn, CMat, C64};
use cfjed::permute::{
    block_energy, csi_permute, is_doubly_stochastic, min_cost_assignment, project_doubly_stochastic, BlockMask,
    PermOptions, PermutationPair,
};
use cfjed::pilots::{Constellation, Modulation};
use nalgebra::{DMatrix, DVector};
use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact LASSO `min 0.5 ||y - M x||^2 + mu ||x||_1` by enumerating supports
/// and sign patterns and keeping the KKT-consistent candidate of least cost.
fn lasso_enumerate(m: &DMatrix<f64>, y: &DVector<f64>, mu: f64) -> DVector<f64> {
    let n = m.ncols();
    let cost = |x: &DVector<f64>| 0.5 * (y - m * x).norm_squared() + mu * x.abs().sum();
    let mut best = DVector::zeros(n);
    let mut best_cost = if (m.transpose() * y).amax() <= mu { cost(&best) } else { f64::INFINITY };
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
        if support.len() > m.nrows() {
            continue;
        }
        for signs in 0u32..(1 << support.len()) {
            let sg: Vec<f64> = (0..support.len()).map(|k| if signs >> k & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let ms = m.select_columns(&support);
            let gram = ms.transpose() * &ms;
            let rhs = ms.transpose() * y - DVector::from_vec(sg.clone()) * mu;
            let Some(xs) = gram.lu().solve(&rhs) else { continue };
            if xs.iter().zip(&sg).any(|(v, s)| v * s <= 0.0) {
                continue;
            }
            let mut x = DVector::zeros(n);
            for (k, &j) in support.iter().enumerate() {
                x[j] = xs[k];
            }
            let corr = m.transpose() * (y - m * &x);
            if (0..n).filter(|j| !support.contains(j)).any(|j| corr[j].abs() > mu + 1e-9) {
                continue;
            }
            let c = cost(&x);
            if c < best_cost {
                best_cost = c;
                best = x;
            }
        }
    }
    best
}

#[test]
fn l1_estimator_matches_support_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        // real 4-slot, 6-UE training problem, three AP rows
        let s_t = Array2::from_shape_simple_fn((6, 4), || C64::new(rng.random::<f64>() * 2.0 - 1.0, 0.0));
        let y_t = Array2::from_shape_simple_fn((3, 4), || C64::new(rng.random::<f64>() * 4.0 - 2.0, 0.0));
        let mu = 0.3;
        let opts = SolverOptions { max_iter: 200_000, tol: 1e-13, ..SolverOptions::default() };
        let h = l1_chest(&y_t.view(), &s_t.view(), mu, &opts).unwrap();
        let m = DMatrix::from_fn(4, 6, |t, u| s_t[[u, t]].re);
        for b in 0..3 {
            let y = DVector::from_fn(4, |t, _| y_t[[b, t]].re);
            let x = lasso_enumerate(&m, &y, mu);
            for u in 0..6 {
                assert!((h[[b, u]].re - x[u]).abs() < 1e-6, "row {b} col {u}: {} vs {}", h[[b, u]], x[u]);
                assert!(h[[b, u]].im.abs() < 1e-12);
            }
        }
    }
}

/// Projection onto the 3x3 Birkhoff polytope by enumerating which entries
/// vanish and solving each equality-constrained least-squares problem.
fn ds_projection_active_set(y: &Array2<f64>) -> Array2<f64> {
    let yv = DVector::from_iterator(9, y.iter().cloned());
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for zeros in 0u32..512 {
        let z: Vec<usize> = (0..9).filter(|k| zeros >> k & 1 == 1).collect();
        let rows = z.len() + 6;
        let mut c = DMatrix::zeros(rows, 9);
        let mut d = DVector::zeros(rows);
        for (r, &k) in z.iter().enumerate() {
            c[(r, k)] = 1.0;
        }
        for i in 0..3 {
            for j in 0..3 {
                c[(z.len() + i, 3 * i + j)] = 1.0;
                c[(z.len() + 3 + j, 3 * i + j)] = 1.0;
            }
            d[z.len() + i] = 1.0;
            d[z.len() + 3 + i] = 1.0;
        }
        let cct = &c * c.transpose();
        let pinv = cct.pseudo_inverse(1e-12).unwrap();
        let x = &yv - c.transpose() * (pinv * (&c * &yv - &d));
        if (&c * &x - &d).norm() > 1e-9 || x.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let dist = (&x - &yv).norm();
        if dist < best_d {
            best_d = dist;
            best = Some(x);
        }
    }
    let x = best.expect("the polytope is nonempty");
    Array2::from_shape_fn((3, 3), |(i, j)| x[3 * i + j])
}

#[test]
fn doubly_stochastic_projection_matches_active_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for scale in [0.2, 1.0, 5.0] {
        for _ in 0..20 {
            let y = Array2::from_shape_simple_fn((3, 3), || scale * (rng.random::<f64>() * 2.0 - 0.5));
            let p = project_doubly_stochastic(&y).unwrap();
            let q = ds_projection_active_set(&y);
            assert!(is_doubly_stochastic(&p, 1e-8));
            let err = p.iter().zip(q.iter()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(err < 1e-7, "scale {scale}: {err}\n{p}\n{q}");
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn hungarian_matches_brute_force_on_5x5() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let c = Array2::from_shape_simple_fn((5, 5), || rng.random::<f64>());
        let got = min_cost_assignment(&c);
        let cost = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>();
        let best = permutations(5).iter().map(|p| cost(p)).fold(f64::INFINITY, f64::min);
        assert!((cost(&got) - best).abs() < 1e-12);
    }
}

#[test]
fn csi_permutation_close_to_exhaustive_on_4x4() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mask = BlockMask::new(2, 4, 4).unwrap();
    let perms = permutations(4);
    for _ in 0..5 {
        let a = Array2::from_shape_simple_fn((4, 4), || rng.random::<f64>().powi(3));
        let mut best = 0.0f64;
        for ap in &perms {
            for ue in &perms {
                let pair = PermutationPair { ap: ap.clone(), ue: ue.clone() };
                best = best.max(block_energy(&a.view(), &pair, &mask));
            }
        }
        let got = csi_permute(&a.view(), 2, &PermOptions::default()).unwrap();
        assert!(block_energy(&a.view(), &got, &mask) >= 0.95 * best);
    }
}

#[test]
fn soft_threshold_satisfies_subgradient_condition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = crandn(6, 5, 2.0, &mut rng);
    let thr = 0.8;
    let z = prox_h(&x, thr);
    for (xv, zv) in x.iter().zip(z.iter()) {
        let r = xv - zv;
        if zv.norm() > 0.0 {
            assert!((r - zv / zv.norm() * thr).norm() < 1e-12);
        } else {
            assert!(xv.norm() <= thr + 1e-12);
        }
    }
}

#[test]
fn box_prox_matches_grid_minimization() {
    let c = Constellation::new(Modulation::Qam16);
    let (tau, gamma) = (0.3, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = crandn(3, 3, 2.0, &mut rng);
    let z = prox_s(&x, tau, gamma, &c).unwrap();
    // the prox separates over real and imaginary parts
    let argmin = |xv: f64, alpha: f64| {
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=200_000 {
            let t = -alpha + 2.0 * alpha * k as f64 / 200_000.0;
            let v = 0.5 * (t - xv).powi(2) - 0.5 * tau * gamma * t * t;
            if v < best.0 {
                best = (v, t);
            }
        }
        best.1
    };
    for (xv, zv) in x.iter().zip(z.iter()) {
        assert!((zv.re - argmin(xv.re, c.alpha_re)).abs() < 1e-4);
        assert!((zv.im - argmin(xv.im, c.alpha_im)).abs() < 1e-4);
    }
}

#[test]
fn unregularized_jed_stops_at_least_squares_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let c = Constellation::new(Modulation::Qpsk);
    let (b, u, t, d) = (10, 4, 4, 12);
    let h = crandn(b, u, 4.0, &mut rng);
    let s_t = cfjed::pilots::make_pilots(&cfjed::pilots::build_mub(4, 1).unwrap());
    let s_d = Array2::from_shape_simple_fn((u, d), || c.points[rng.random_range(0..4)]);
    let s = concatenate(Axis(1), &[s_t.view(), s_d.view()]).unwrap();
    let y = h.dot(&s) + crandn(b, t + d, 0.05, &mut rng);
    let params = JedParams { mu: 0.0, gamma: 0.0 };
    let opts = SolverOptions { max_iter: 50_000, tol: 1e-10, ..SolverOptions::default() };
    let sd0 = CMat::zeros((u, d));
    let out = run_jed(&y.view(), &s_t.view(), CMat::zeros((b, u)), sd0, &c, params, &opts).unwrap();

    // with S fixed, H must be the LS solution Y S^H (S S^H)^-1
    let s_hat = concatenate(Axis(1), &[s_t.view(), out.sd_soft.view()]).unwrap();
    let problem = JedProblem::new(y.view(), s_t.view(), &c, params).unwrap();
    let (gh, gs) = gradient_f(&problem, &out.h, &out.sd_soft).unwrap();
    let scale = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() * s_hat.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let gnorm = gh.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    assert!(gnorm < 1e-6 * scale, "{gnorm} vs {scale}");
    // with H fixed, S_D is a box-constrained LS stationary point
    let step = 1e-3;
    let moved = prox_s(&(&out.sd_soft - &gs.mapv(|v| v * step)), step, 0.0, &c).unwrap();
    let drift = moved.iter().zip(out.sd_soft.iter()).fold(0.0f64, |a, (x, y)| a.max((x - y).norm()));
    assert!(drift < 1e-6, "{drift}");
    assert!(out.trace.is_monotone());
}
