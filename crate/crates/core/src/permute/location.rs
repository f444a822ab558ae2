//! Location-based permutation: balanced k-means on AP positions, followed by
//! a balanced nearest-centroid assignment of the UEs.

use std::cell::RefCell;

use ndarray::{Array1, Array2};

use super::assignment::max_weight_assignment;
use super::stochastic::{project_transport_warm, TransportDuals, PROJ_MAX_SWEEPS, PROJ_TOL};
use super::PermutationPair;
use crate::error::{Error, Result};
use crate::fbs::{self, SolverOptions, SplitProblem};

#[derive(Debug, Clone)]
pub struct ClusterOptions {
    /// Concave weight relative to the mean squared distance; annealed upwards.
    pub omega: f64,
    pub anneal_every: usize,
    pub max_stages: usize,
    pub max_outer: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions { omega: 0.1, anneal_every: 50, max_stages: 24, max_outer: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct Clustering {
    pub pair: PermutationPair,
    pub ap_labels: Vec<usize>,
    pub ue_labels: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    pub outer_iterations: usize,
}

/// `<D, Q> - (omega/2) ||Q||^2` over `{Q >= 0, Q 1 = 1, Q^T 1 = cap}`.
struct AssignRelaxation {
    dist: Array2<f64>,
    cap: f64,
    omega: f64,
    warm: RefCell<TransportDuals>,
}

impl AssignRelaxation {
    fn project(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let (m, n) = x.dim();
        let (r, c) = (Array1::ones(m), Array1::from_elem(n, self.cap));
        project_transport_warm(x, &r, &c, PROJ_TOL, PROJ_MAX_SWEEPS, &mut self.warm.borrow_mut())
    }
}

impl SplitProblem for AssignRelaxation {
    type Var = Array2<f64>;

    fn smooth(&self, q: &Array2<f64>) -> f64 {
        (&self.dist * q).sum()
    }

    fn gradient(&self, _q: &Array2<f64>) -> Array2<f64> {
        self.dist.clone()
    }

    fn prox(&self, z: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
        let r = tau * self.omega;
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidParameter(format!("tau * omega = {r} must lie in [0, 1)")));
        }
        self.project(&(z / (1.0 - r)))
    }

    fn nonsmooth(&self, q: &Array2<f64>) -> f64 {
        let (m, n) = q.dim();
        let rows_ok = q.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-6);
        let cols_ok = q.columns().into_iter().all(|c| (c.sum() - self.cap).abs() < 1e-6 * m.max(n) as f64);
        if !rows_ok || !cols_ok || q.iter().any(|&v| v < -1e-9) {
            return f64::INFINITY;
        }
        -0.5 * self.omega * q.iter().map(|v| v * v).sum::<f64>()
    }
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Assigns every point to a centroid with exactly `points.len() / N` points
/// per centroid. Returns the cluster label of each point.
pub fn balanced_assign(points: &[[f64; 2]], centroids: &[[f64; 2]], opts: &ClusterOptions) -> Result<Vec<usize>> {
    let (m, n) = (points.len(), centroids.len());
    if n == 0 || m % n != 0 {
        return Err(Error::Divisibility(n, m));
    }
    let cap = m / n;
    let mut dist = Array2::from_shape_fn((m, n), |(i, c)| sq_dist(points[i], centroids[c]));
    let mean = dist.mean().unwrap_or(0.0);
    if mean > 0.0 {
        dist.mapv_inplace(|v| v / mean);
    }
    let mut q = Array2::from_elem((m, n), 1.0 / n as f64);
    let mut omega = opts.omega;
    for _ in 0..opts.max_stages {
        let problem = AssignRelaxation { dist: dist.clone(), cap: cap as f64, omega, warm: RefCell::default() };
        let sopts = SolverOptions {
            max_iter: opts.anneal_every,
            tol: 1e-9,
            tau_max: 0.99 / omega,
            ..SolverOptions::default()
        };
        q = fbs::solve(&problem, q, &sopts)?.0;
        if q.rows().into_iter().all(|r| r.iter().cloned().fold(0.0, f64::max) > 1.0 - 1e-3) {
            break;
        }
        omega *= 2.0;
    }
    // round on replicated slots; distances only break ties
    let w = Array2::from_shape_fn((m, m), |(i, s)| q[[i, s / cap]] - 1e-6 * dist[[i, s / cap]]);
    let slot = max_weight_assignment(&w);
    Ok(slot.iter().map(|&s| s / cap).collect())
}

fn centroids_of(points: &[[f64; 2]], labels: &[usize], n: usize) -> Vec<[f64; 2]> {
    let mut acc = vec![[0.0, 0.0]; n];
    let mut count = vec![0usize; n];
    for (p, &l) in points.iter().zip(labels) {
        acc[l][0] += p[0];
        acc[l][1] += p[1];
        count[l] += 1;
    }
    acc.iter().zip(&count).map(|(a, &c)| [a[0] / c as f64, a[1] / c as f64]).collect()
}

fn order_by_label(labels: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by_key(|&i| (labels[i], i));
    idx
}

/// Balanced clustering from given initial centroids.
pub fn location_cluster_from(
    ap_pos: &[[f64; 2]],
    ue_pos: &[[f64; 2]],
    centroids: Vec<[f64; 2]>,
    opts: &ClusterOptions,
) -> Result<Clustering> {
    let n = centroids.len();
    if n == 0 || ap_pos.len() % n != 0 {
        return Err(Error::Divisibility(n, ap_pos.len()));
    }
    if ue_pos.len() % n != 0 {
        return Err(Error::Divisibility(n, ue_pos.len()));
    }
    let mut centroids = centroids;
    let mut labels: Option<Vec<usize>> = None;
    let mut outer = 0;
    loop {
        if outer == opts.max_outer {
            return Err(Error::NoConvergence(format!("AP clustering after {} outer iterations", opts.max_outer)));
        }
        outer += 1;
        let next = balanced_assign(ap_pos, &centroids, opts)?;
        let stable = labels.as_ref() == Some(&next);
        centroids = centroids_of(ap_pos, &next, n);
        labels = Some(next);
        if stable {
            break;
        }
    }
    let ap_labels = labels.expect("at least one pass");
    let ue_labels = balanced_assign(ue_pos, &centroids, opts)?;
    let pair = PermutationPair { ap: order_by_label(&ap_labels), ue: order_by_label(&ue_labels) };
    Ok(Clustering { pair, ap_labels, ue_labels, centroids, outer_iterations: outer })
}

/// Balanced clustering seeded by farthest-point traversal from AP 0.
pub fn location_cluster(ap_pos: &[[f64; 2]], ue_pos: &[[f64; 2]], n: usize, opts: &ClusterOptions) -> Result<Clustering> {
    if n == 0 || ap_pos.is_empty() || ap_pos.len() % n != 0 {
        return Err(Error::Divisibility(n, ap_pos.len()));
    }
    let mut centroids = vec![ap_pos[0]];
    while centroids.len() < n {
        let far = ap_pos
            .iter()
            .map(|&p| centroids.iter().map(|&c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best })
            .0;
        centroids.push(ap_pos[far]);
    }
    location_cluster_from(ap_pos, ue_pos, centroids, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distant_pairs_are_found() {
        let ap = [[0.0, 0.0], [900.0, 900.0], [5.0, 0.0], [905.0, 910.0]];
        let ue = [[1.0, 1.0], [899.0, 899.0]];
        let c = location_cluster(&ap, &ue, 2, &ClusterOptions::default()).unwrap();
        assert_eq!(c.ap_labels[0], c.ap_labels[2]);
        assert_eq!(c.ap_labels[1], c.ap_labels[3]);
        assert_ne!(c.ap_labels[0], c.ap_labels[1]);
        assert_eq!(c.ue_labels[0], c.ap_labels[0]);
        assert!(c.pair.is_valid());
    }

    #[test]
    fn co_located_nodes_are_balanced() {
        let ap = vec![[3.0, 3.0]; 6];
        let ue = vec![[3.0, 3.0]; 9];
        let c = location_cluster(&ap, &ue, 3, &ClusterOptions::default()).unwrap();
        for k in 0..3 {
            assert_eq!(c.ap_labels.iter().filter(|&&l| l == k).count(), 2);
            assert_eq!(c.ue_labels.iter().filter(|&&l| l == k).count(), 3);
        }
    }

    #[test]
    fn correct_centroids_are_a_fixed_point() {
        let ap = [[0.0, 0.0], [10.0, 0.0], [500.0, 500.0], [510.0, 500.0]];
        let ue = [[0.0, 1.0], [505.0, 505.0]];
        let cent = vec![[5.0, 0.0], [505.0, 500.0]];
        let c = location_cluster_from(&ap, &ue, cent.clone(), &ClusterOptions::default()).unwrap();
        assert_eq!(c.ap_labels, vec![0, 0, 1, 1]);
        assert_eq!(c.centroids, cent);
        assert_eq!(c.outer_iterations, 2);
    }
}
