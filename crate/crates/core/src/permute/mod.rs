//! Virtual-cell construction by reindexing APs and UEs.
//!
//! Permutations are stored as index maps with `ap[new] = old`, so the
//! permuted channel is `H~[i, j] = H[ap[i], ue[j]]`.

mod assignment;
mod csi;
mod location;
mod stochastic;

pub use assignment::{max_weight_assignment, min_cost_assignment};
pub use csi::{csi_permute, refine_alternating, CsiRelaxation, PermOptions};
pub use location::{balanced_assign, location_cluster, location_cluster_from, ClusterOptions, Clustering};
pub use stochastic::{
    is_doubly_stochastic, project_doubly_stochastic, project_marginals, project_transport, project_transport_warm,
    TransportDuals, PROJ_MAX_SWEEPS,
    PROJ_TOL,
};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPair {
    /// `ap[new] = old`.
    pub ap: Vec<usize>,
    /// `ue[new] = old`.
    pub ue: Vec<usize>,
}

pub fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
}

pub fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (new, &old) in p.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

impl PermutationPair {
    pub fn identity(b: usize, u: usize) -> Self {
        PermutationPair { ap: (0..b).collect(), ue: (0..u).collect() }
    }

    pub fn new(ap: Vec<usize>, ue: Vec<usize>) -> Result<Self> {
        if !is_permutation(&ap) || !is_permutation(&ue) {
            return Err(Error::InvalidParameter("index maps are not bijections".into()));
        }
        Ok(PermutationPair { ap, ue })
    }

    pub fn inverse(&self) -> Self {
        PermutationPair { ap: invert(&self.ap), ue: invert(&self.ue) }
    }

    pub fn is_valid(&self) -> bool {
        is_permutation(&self.ap) && is_permutation(&self.ue)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: PermutationPair = serde_json::from_str(s)?;
        Self::new(p.ap, p.ue)
    }
}

/// Block-diagonal mask with `n` blocks of size `(B/N) x (U/N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMask {
    pub n: usize,
    pub b: usize,
    pub u: usize,
}

impl BlockMask {
    pub fn new(n: usize, b: usize, u: usize) -> Result<Self> {
        if n == 0 || b % n != 0 {
            return Err(Error::Divisibility(n, b));
        }
        if u % n != 0 {
            return Err(Error::Divisibility(n, u));
        }
        Ok(BlockMask { n, b, u })
    }

    pub fn ap_block(&self, i: usize) -> usize {
        i / (self.b / self.n)
    }

    pub fn ue_block(&self, j: usize) -> usize {
        j / (self.u / self.n)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.ap_block(i) == self.ue_block(j)
    }

    pub fn matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.b, self.u), |(i, j)| if self.contains(i, j) { 1.0 } else { 0.0 })
    }
}

/// `1^T [M o (P_AP A P_UE)] 1`.
pub fn block_energy(a: &ArrayView2<f64>, pair: &PermutationPair, mask: &BlockMask) -> f64 {
    let mut total = 0.0;
    for (i, &oi) in pair.ap.iter().enumerate() {
        for (j, &oj) in pair.ue.iter().enumerate() {
            if mask.contains(i, j) {
                total += a[[oi, oj]];
            }
        }
    }
    total
}

pub fn permute_rows<T: Clone>(x: &ArrayView2<T>, order: &[usize]) -> Array2<T> {
    Array2::from_shape_fn((order.len(), x.ncols()), |(i, k)| x[[order[i], k]].clone())
}

pub fn permute_cols<T: Clone>(x: &ArrayView2<T>, order: &[usize]) -> Array2<T> {
    Array2::from_shape_fn((x.nrows(), order.len()), |(i, j)| x[[i, order[j]]].clone())
}

/// Permuted-domain quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Permuted {
    pub y: CMat,
    pub h: Option<CMat>,
    pub s: CMat,
}

/// `Y~ = P_AP Y`, `H~ = P_AP H P_UE`, `S~ = P_UE^T S`.
pub fn apply_permutation(
    y: &ArrayView2<C64>,
    h: Option<&ArrayView2<C64>>,
    s: &ArrayView2<C64>,
    pair: &PermutationPair,
) -> Result<Permuted> {
    if y.nrows() != pair.ap.len() || s.nrows() != pair.ue.len() {
        return Err(Error::Dimension(format!(
            "Y {:?} / S {:?} against {} APs and {} UEs",
            y.dim(),
            s.dim(),
            pair.ap.len(),
            pair.ue.len()
        )));
    }
    let h = match h {
        Some(h) => {
            if h.dim() != (pair.ap.len(), pair.ue.len()) {
                return Err(Error::Dimension(format!("H {:?}", h.dim())));
            }
            Some(permute_cols(&permute_rows(h, &pair.ap).view(), &pair.ue))
        }
        None => None,
    };
    Ok(Permuted { y: permute_rows(y, &pair.ap), h, s: permute_rows(s, &pair.ue) })
}

/// Inverse of [`apply_permutation`].
pub fn undo_permutation(p: &Permuted, pair: &PermutationPair) -> Result<Permuted> {
    let inv = pair.inverse();
    apply_permutation(&p.y.view(), p.h.as_ref().map(|h| h.view()).as_ref(), &p.s.view(), &inv)
}
