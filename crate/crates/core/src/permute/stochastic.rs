//! Euclidean projections onto transport polytopes
//! `{X >= 0, X 1 = r, X^T 1 = c}`, of which the doubly-stochastic matrices
//! are the square case with unit marginals.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

pub const PROJ_TOL: f64 = 1e-8;
pub const PROJ_MAX_SWEEPS: usize = 200;
const WARM_SWEEPS: usize = 3;

/// Closed-form projection onto the affine set of matrices with row sums `r`
/// and column sums `c` (requires `sum r == sum c`).
pub fn project_marginals(x: &Array2<f64>, r: &Array1<f64>, c: &Array1<f64>) -> Array2<f64> {
    let (m, n) = x.dim();
    let dr = r - &x.sum_axis(Axis(1));
    let dc = c - &x.sum_axis(Axis(0));
    let shift = (r.sum() - x.sum()) / (m * n) as f64;
    Array2::from_shape_fn((m, n), |(i, j)| x[[i, j]] + dr[i] / n as f64 + dc[j] / m as f64 - shift)
}

fn violation(x: &Array2<f64>, r: &Array1<f64>, c: &Array1<f64>) -> f64 {
    let rv = (&x.sum_axis(Axis(1)) - r).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cv = (&x.sum_axis(Axis(0)) - c).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    rv.max(cv)
}

/// Threshold `t` with `sum_j max(0, z_j - t) = r` for `r >= 0`.
fn simplex_threshold(z: &mut [f64], r: f64) -> f64 {
    z.sort_unstable_by(|a, b| b.total_cmp(a));
    if r <= 0.0 {
        return z[0];
    }
    let mut acc = 0.0;
    let mut t = z[0] - r;
    for (k, &v) in z.iter().enumerate() {
        acc += v;
        let cand = (acc - r) / (k + 1) as f64;
        if cand >= v {
            break;
        }
        t = cand;
    }
    t
}

struct Dual<'a> {
    x: &'a Array2<f64>,
    r: &'a Array1<f64>,
    c: &'a Array1<f64>,
}

impl Dual<'_> {
    fn primal(&self, a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
        Array2::from_shape_fn(self.x.dim(), |(i, j)| (self.x[[i, j]] - a[i] - b[j]).max(0.0))
    }

    /// Convex dual `1/2 ||X(a, b)||^2 + a.r + b.c`, minimized at the projection.
    fn value(&self, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        let p = self.primal(a, b);
        0.5 * p.iter().map(|v| v * v).sum::<f64>() + a.dot(self.r) + b.dot(self.c)
    }

    fn gradient(&self, p: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        (self.r - &p.sum_axis(Axis(1)), self.c - &p.sum_axis(Axis(0)))
    }

    /// One exact row pass and one exact column pass.
    fn sweep(&self, a: &mut Array1<f64>, b: &mut Array1<f64>, buf: &mut Vec<f64>) {
        let (m, n) = self.x.dim();
        for i in 0..m {
            buf.clear();
            buf.extend((0..n).map(|j| self.x[[i, j]] - b[j]));
            a[i] = simplex_threshold(buf, self.r[i]);
        }
        for j in 0..n {
            buf.clear();
            buf.extend((0..m).map(|i| self.x[[i, j]] - a[i]));
            b[j] = simplex_threshold(buf, self.c[j]);
        }
    }
}

/// `(V + eps I) d` for the generalized dual Hessian `V`, the Laplacian-like
/// operator of the bipartite graph of positive entries.
struct ActiveSet {
    mask: Array2<f64>,
    row_deg: Array1<f64>,
    col_deg: Array1<f64>,
}

impl ActiveSet {
    fn new(p: &Array2<f64>, eps: f64) -> Self {
        let mask = p.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let row_deg = mask.sum_axis(Axis(1)) + eps;
        let col_deg = mask.sum_axis(Axis(0)) + eps;
        ActiveSet { mask, row_deg, col_deg }
    }

    fn apply(&self, da: &Array1<f64>, db: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        (&(&self.row_deg * da) + &self.mask.dot(db), &(&self.col_deg * db) + &self.mask.t().dot(da))
    }
}

fn conjugate_gradient(
    active: &ActiveSet,
    ga: &Array1<f64>,
    gb: &Array1<f64>,
    rtol: f64,
) -> (Array1<f64>, Array1<f64>) {
    let mut xa = Array1::zeros(ga.len());
    let mut xb = Array1::zeros(gb.len());
    let (mut ra, mut rb) = (-ga, -gb);
    let (mut pa, mut pb) = (ra.clone(), rb.clone());
    let mut rr = ra.dot(&ra) + rb.dot(&rb);
    let stop = rtol * rtol * rr;
    for _ in 0..(ga.len() + gb.len()).min(500) {
        if rr <= stop {
            break;
        }
        let (qa, qb) = active.apply(&pa, &pb);
        let alpha = rr / (pa.dot(&qa) + pb.dot(&qb));
        xa.scaled_add(alpha, &pa);
        xb.scaled_add(alpha, &pb);
        ra.scaled_add(-alpha, &qa);
        rb.scaled_add(-alpha, &qb);
        let next = ra.dot(&ra) + rb.dot(&rb);
        pa = &ra + &(&pa * (next / rr));
        pb = &rb + &(&pb * (next / rr));
        rr = next;
    }
    (xa, xb)
}

/// Euclidean projection onto `{X >= 0, X 1 = r, X^T 1 = c}` through its dual.
///
/// The primal iterate is `max(0, x_ij - a_i - b_j)`. A few exact
/// block-coordinate sweeps warm-start a semismooth Newton method, which
/// copes with the near-tied rows that stall coordinate ascent. Nonnegativity
/// is exact; the marginals are met to `tol`. `max_iter` bounds the Newton
/// steps.
pub fn project_transport(
    x: &Array2<f64>,
    r: &Array1<f64>,
    c: &Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Array2<f64>> {
    let mut duals = TransportDuals::default();
    project_transport_warm(x, r, c, tol, max_iter, &mut duals)
}

/// Row and column multipliers of a transport projection, reusable as a warm
/// start for a nearby input.
#[derive(Debug, Clone, Default)]
pub struct TransportDuals {
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

/// [`project_transport`] starting from (and updating) `duals`.
pub fn project_transport_warm(
    x: &Array2<f64>,
    r: &Array1<f64>,
    c: &Array1<f64>,
    tol: f64,
    max_iter: usize,
    duals: &mut TransportDuals,
) -> Result<Array2<f64>> {
    let (m, n) = x.dim();
    if r.len() != m || c.len() != n {
        return Err(Error::Dimension(format!("{m}x{n} matrix with {} row and {} column targets", r.len(), c.len())));
    }
    if r.iter().chain(c.iter()).any(|&v| v < 0.0) || (r.sum() - c.sum()).abs() > 1e-9 * r.sum().max(1.0) {
        return Err(Error::InvalidParameter("marginals must be nonnegative with equal totals".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection input".into()));
    }
    let dual = Dual { x, r, c };
    let warm = duals.a.len() == m && duals.b.len() == n;
    let (mut a, mut b) = if warm {
        (duals.a.clone(), duals.b.clone())
    } else {
        (Array1::zeros(m), Array1::zeros(n))
    };
    let mut buf = Vec::with_capacity(m.max(n));
    for _ in 0..if warm { 1 } else { WARM_SWEEPS } {
        dual.sweep(&mut a, &mut b, &mut buf);
    }
    let mut p = dual.primal(&a, &b);
    let mut viol = violation(&p, r, c);
    let mut phi = dual.value(&a, &b);
    for _ in 0..max_iter {
        if viol < tol {
            *duals = TransportDuals { a, b };
            return Ok(p);
        }
        let (ga, gb) = dual.gradient(&p);
        let gnorm = (ga.dot(&ga) + gb.dot(&gb)).sqrt();
        let active = ActiveSet::new(&p, 1e-8 + 1e-3 * gnorm.min(1.0));
        let (da, db) = conjugate_gradient(&active, &ga, &gb, gnorm.min(0.1));
        let slope = ga.dot(&da) + gb.dot(&db);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let na = &a + &(&da * step);
            let nb = &b + &(&db * step);
            let v = dual.value(&na, &nb);
            // near the solution the decrease drops below the rounding of phi
            let flat = -slope * step < 1e-13 * phi.abs().max(1.0);
            let ok = if flat {
                violation(&dual.primal(&na, &nb), r, c) < viol
            } else {
                v <= phi + 1e-4 * step * slope
            };
            if ok {
                a = na;
                b = nb;
                phi = v;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            // numerically flat: fall back to a coordinate sweep
            dual.sweep(&mut a, &mut b, &mut buf);
            phi = dual.value(&a, &b);
        }
        p = dual.primal(&a, &b);
        viol = violation(&p, r, c);
    }
    if viol < tol {
        *duals = TransportDuals { a, b };
        return Ok(p);
    }
    Err(Error::NoConvergence(format!("transport projection after {max_iter} Newton steps (violation {viol:.3e})")))
}

/// Projection onto the doubly-stochastic matrices.
pub fn project_doubly_stochastic(x: &Array2<f64>) -> Result<Array2<f64>> {
    let (m, n) = x.dim();
    if m != n {
        return Err(Error::Dimension(format!("doubly-stochastic projection of a {m}x{n} matrix")));
    }
    let ones = Array1::ones(m);
    project_transport(x, &ones, &ones, PROJ_TOL, PROJ_MAX_SWEEPS)
}

pub fn is_doubly_stochastic(x: &Array2<f64>, tol: f64) -> bool {
    let ones = Array1::ones(x.nrows());
    x.is_square() && x.iter().all(|&v| v >= -tol) && violation(x, &ones, &ones) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_points() {
        let p = Array2::from_shape_fn((4, 4), |(i, j)| if j == (i + 1) % 4 { 1.0 } else { 0.0 });
        assert_eq!(project_doubly_stochastic(&p).unwrap(), p);
        let u = Array2::from_elem((3, 3), 1.0 / 3.0);
        let out = project_doubly_stochastic(&u).unwrap();
        assert!(out.iter().zip(u.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn idempotent_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in [2, 5, 16] {
            let x = Array2::from_shape_simple_fn((m, m), || rng.random::<f64>() * 2.0 - 0.5);
            let p = project_doubly_stochastic(&x).unwrap();
            assert!(is_doubly_stochastic(&p, 1e-8));
            let pp = project_doubly_stochastic(&p).unwrap();
            assert!(pp.iter().zip(p.iter()).all(|(a, b)| (a - b).abs() < 1e-8));
        }
    }

    #[test]
    fn rectangular_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_simple_fn((6, 3), || rng.random::<f64>());
        let r = Array1::ones(6);
        let c = Array1::from_elem(3, 2.0);
        let p = project_transport(&x, &r, &c, 1e-10, 5000).unwrap();
        assert!(violation(&p, &r, &c) < 1e-10);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!(project_doubly_stochastic(&x).is_err());
    }
}
