//! CSI-based permutation: relax both permutations to doubly-stochastic
//! matrices, push them towards the corners with an annealed concave term,
//! then round with the Hungarian method.

use std::cell::RefCell;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::assignment::max_weight_assignment;
use super::stochastic::{
    is_doubly_stochastic, project_doubly_stochastic, project_transport_warm, TransportDuals, PROJ_MAX_SWEEPS, PROJ_TOL,
};
use super::{block_energy, BlockMask, PermutationPair};
use crate::error::{Error, Result};
use crate::fbs::{self, SolverOptions, SplitProblem};

/// `-tr(M^T P A Q) - (rho/2)(||P||^2 + ||Q||^2)` over pairs of
/// doubly-stochastic matrices.
#[derive(Debug, Clone)]
pub struct CsiRelaxation {
    pub a: Array2<f64>,
    pub mask: Array2<f64>,
    pub rho: f64,
    /// Projection multipliers from the previous prox, for warm starts.
    warm: RefCell<[TransportDuals; 2]>,
}

impl CsiRelaxation {
    pub fn new(a: Array2<f64>, mask: Array2<f64>, rho: f64) -> Self {
        CsiRelaxation { a, mask, rho, warm: RefCell::default() }
    }

    fn project(&self, x: &Array2<f64>, slot: usize) -> Result<Array2<f64>> {
        let ones = Array1::ones(x.nrows());
        let mut warm = self.warm.borrow_mut();
        if !x.is_square() {
            return project_doubly_stochastic(x);
        }
        project_transport_warm(x, &ones, &ones, PROJ_TOL, PROJ_MAX_SWEEPS, &mut warm[slot])
    }
}

impl SplitProblem for CsiRelaxation {
    type Var = (Array2<f64>, Array2<f64>);

    fn smooth(&self, z: &Self::Var) -> f64 {
        let paq = z.0.dot(&self.a).dot(&z.1);
        -(&self.mask * &paq).sum()
    }

    fn gradient(&self, z: &Self::Var) -> Self::Var {
        let (p, q) = z;
        let gp = -self.mask.dot(&q.t()).dot(&self.a.t());
        let gq = -self.a.t().dot(&p.t()).dot(&self.mask);
        (gp, gq)
    }

    fn prox(&self, z: &Self::Var, tau: f64) -> Result<Self::Var> {
        let r = tau * self.rho;
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidParameter(format!("tau * rho = {r} must lie in [0, 1)")));
        }
        let s = 1.0 / (1.0 - r);
        Ok((self.project(&(&z.0 * s), 0)?, self.project(&(&z.1 * s), 1)?))
    }

    fn nonsmooth(&self, z: &Self::Var) -> f64 {
        if !is_doubly_stochastic(&z.0, 1e-6) || !is_doubly_stochastic(&z.1, 1e-6) {
            return f64::INFINITY;
        }
        let sq = |x: &Array2<f64>| x.iter().map(|v| v * v).sum::<f64>();
        -0.5 * self.rho * (sq(&z.0) + sq(&z.1))
    }
}

#[derive(Debug, Clone)]
pub struct PermOptions {
    /// Concave weight relative to `mean(A)`; annealed upwards.
    pub rho: f64,
    pub anneal_every: usize,
    pub max_stages: usize,
    pub restarts: usize,
    /// Relative size of the random perturbation of the uniform start.
    pub perturbation: f64,
    pub seed: u64,
    /// Polish the rounded pair by alternating exact assignments.
    pub refine: bool,
}

impl Default for PermOptions {
    fn default() -> Self {
        PermOptions {
            rho: 0.1,
            anneal_every: 20,
            max_stages: 24,
            restarts: 2,
            perturbation: 0.1,
            seed: 0,
            refine: true,
        }
    }
}

/// Largest admissible step in units of `1 / L`.
const STEP_CAP: f64 = 10.0;

fn spectral_norm(a: &Array2<f64>) -> f64 {
    let mut v = ndarray::Array1::from_elem(a.ncols(), 1.0 / (a.ncols() as f64).sqrt());
    let mut s = 0.0;
    for _ in 0..100 {
        let w = a.t().dot(&a.dot(&v));
        let nw = w.dot(&w).sqrt();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw.sqrt();
        v = w / nw;
        if (next - s).abs() <= 1e-6 * next {
            return next;
        }
        s = next;
    }
    s
}

fn near_corners(x: &Array2<f64>) -> bool {
    x.axis_iter(Axis(0)).all(|r| r.iter().cloned().fold(0.0, f64::max) > 1.0 - 1e-3)
}

fn perturbed_uniform<R: Rng>(m: usize, eps: f64, rng: &mut R) -> Result<Array2<f64>> {
    let base = 1.0 / m as f64;
    let x = Array2::from_shape_simple_fn((m, m), || base * (1.0 + eps * (rng.random::<f64>() - 0.5)));
    project_doubly_stochastic(&x)
}

/// Block-coordinate ascent on the block energy: with the UE order fixed the
/// best AP order is a linear assignment, and vice versa.
pub fn refine_alternating(a: &ArrayView2<f64>, mask: &BlockMask, pair: PermutationPair) -> PermutationPair {
    let (b, u, n) = (mask.b, mask.u, mask.n);
    let mut pair = pair;
    let mut energy = block_energy(a, &pair, mask);
    for _ in 0..100 {
        // AP slots
        let mut w = Array2::zeros((n, b));
        for (j, &oj) in pair.ue.iter().enumerate() {
            let blk = mask.ue_block(j);
            for oi in 0..b {
                w[[blk, oi]] += a[[oi, oj]];
            }
        }
        let ap = max_weight_assignment(&Array2::from_shape_fn((b, b), |(i, oi)| w[[mask.ap_block(i), oi]]));
        let mut w = Array2::zeros((n, u));
        for (i, &oi) in ap.iter().enumerate() {
            let blk = mask.ap_block(i);
            for oj in 0..u {
                w[[blk, oj]] += a[[oi, oj]];
            }
        }
        let ue = max_weight_assignment(&Array2::from_shape_fn((u, u), |(j, oj)| w[[mask.ue_block(j), oj]]));
        let next = PermutationPair { ap, ue };
        let e = block_energy(a, &next, mask);
        if e <= energy * (1.0 + 1e-12) {
            if e > energy {
                pair = next;
            }
            break;
        }
        pair = next;
        energy = e;
    }
    pair
}

/// CSI-based AP/UE permutation maximizing the energy inside `N` diagonal
/// blocks of `A` (typically `|H|^2`). Never worse than the identity.
pub fn csi_permute(a: &ArrayView2<f64>, n: usize, opts: &PermOptions) -> Result<PermutationPair> {
    let (b, u) = a.dim();
    let mask = BlockMask::new(n, b, u)?;
    if a.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("energy matrix must be finite and nonnegative".into()));
    }
    let identity = PermutationPair::identity(b, u);
    let mean = a.mean().unwrap_or(0.0);
    if mean <= 0.0 {
        return Ok(identity);
    }
    let scaled = a.mapv(|v| v / mean);
    // the bilinear term is L-smooth with L <= ||M|| ||A||; longer steps only
    // blow up the projection inputs
    let lip = ((b / n) as f64 * (u / n) as f64).sqrt() * spectral_norm(&scaled);
    let mut best = identity.clone();
    let mut best_e = block_energy(a, &best, &mask);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts.max(1) {
        let mut z = (perturbed_uniform(b, opts.perturbation, &mut rng)?, perturbed_uniform(u, opts.perturbation, &mut rng)?);
        let mut rho = opts.rho;
        let mut warm = Default::default();
        for _ in 0..opts.max_stages {
            let problem = CsiRelaxation { a: scaled.clone(), mask: mask.matrix(), rho, warm: RefCell::new(warm) };
            let sopts = SolverOptions {
                max_iter: opts.anneal_every,
                tol: 1e-9,
                tau_max: (0.99 / rho).min(STEP_CAP / lip),
                ..SolverOptions::default()
            };
            z = fbs::solve(&problem, z, &sopts)?.0;
            warm = problem.warm.into_inner();
            if near_corners(&z.0) && near_corners(&z.1) {
                break;
            }
            rho *= 2.0;
        }
        let ap = max_weight_assignment(&z.0);
        let ue = max_weight_assignment(&z.1.t().to_owned());
        let mut pair = PermutationPair { ap, ue };
        if opts.refine {
            pair = refine_alternating(a, &mask, pair);
        }
        let e = block_energy(a, &pair, &mask);
        if e > best_e {
            best = pair;
            best_e = e;
        }
    }
    Ok(best)
}
