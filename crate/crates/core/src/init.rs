//! Initializers for the channel and payload estimates.
//!
//! Inputs live in the permuted domain: rows of `Y` and `H` are grouped by
//! virtual cell, and UE block `n` trains with pilot block `T_n`.

use ndarray::{s, Array1, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{herm, scaled_eye, solve_hpd, CMat, C64, ZERO};

/// Per-virtual-cell LS: `H_nn = (1/T) Y_{T_n} T_n^H`, off-diagonal blocks 0.
///
/// `s_t` is the U x T pilot matrix whose `n`th block of `U/N` rows must
/// satisfy `T_n T_n^H = T I`.
pub fn ls_block_chest(y_t: &ArrayView2<C64>, s_t: &ArrayView2<C64>, n_cells: usize) -> Result<CMat> {
    let (b, t) = y_t.dim();
    let u = s_t.nrows();
    if s_t.ncols() != t {
        return Err(Error::Dimension(format!("Y_T has {t} slots, pilots have {}", s_t.ncols())));
    }
    if n_cells == 0 || b % n_cells != 0 {
        return Err(Error::Divisibility(n_cells, b));
    }
    if u % n_cells != 0 {
        return Err(Error::Divisibility(n_cells, u));
    }
    let (bn, un) = (b / n_cells, u / n_cells);
    let mut h = CMat::from_elem((b, u), ZERO);
    let scale = 1.0 / t as f64;
    for n in 0..n_cells {
        let block = s_t.slice(s![n * un..(n + 1) * un, ..]);
        let block_h = herm(&block);
        let gram = block.dot(&block_h);
        let dev = (&gram - &scaled_eye(un, t as f64)).iter().map(|v| v.norm()).fold(0.0, f64::max);
        if dev > 1e-8 * t as f64 {
            return Err(Error::InvalidParameter(format!(
                "pilot block {n} is not orthogonal (deviation {dev:.3e})"
            )));
        }
        let est = y_t.slice(s![n * bn..(n + 1) * bn, ..]).dot(&block_h).mapv(|v| v * scale);
        h.slice_mut(s![n * bn..(n + 1) * bn, n * un..(n + 1) * un]).assign(&est);
    }
    Ok(h)
}

/// Robust noise variance `median(|v|^2) / ln 2`.
pub fn mad_noise_var<'a, I>(v: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a C64>,
{
    let mut p: Vec<f64> = v.into_iter().map(|z| z.norm_sqr()).collect();
    if p.is_empty() {
        return Err(Error::InvalidParameter("median of an empty vector".into()));
    }
    let n = p.len();
    let mid = n / 2;
    let (_, &mut hi, _) = p.select_nth_unstable_by(mid, f64::total_cmp);
    let med = if n % 2 == 1 {
        hi
    } else {
        let lo = p[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    Ok(med / std::f64::consts::LN_2)
}

/// Positive-part complex James-Stein shrinkage
/// `max(0, 1 - (B - 1) n0 / ||h||^2) h`, with `B = h.len()`.
pub fn james_stein(h_ls: &ArrayView1<C64>, n0: f64) -> Result<Array1<C64>> {
    let b = h_ls.len();
    if b < 2 {
        return Err(Error::InvalidParameter(format!("James-Stein needs dimension > 1, got {b}")));
    }
    let energy: f64 = h_ls.iter().map(|v| v.norm_sqr()).sum();
    if energy <= 0.0 {
        return Err(Error::InvalidParameter("James-Stein input has zero norm".into()));
    }
    let factor = (1.0 - (b as f64 - 1.0) * n0 / energy).max(0.0);
    Ok(h_ls.mapv(|v| v * factor))
}

/// `(H^H H + reg I)^-1 H^H Y_D`.
pub fn lmmse(h: &ArrayView2<C64>, y_d: &ArrayView2<C64>, reg: f64) -> Result<CMat> {
    if h.nrows() != y_d.nrows() {
        return Err(Error::Dimension(format!("H is {:?} but Y_D is {:?}", h.dim(), y_d.dim())));
    }
    if reg < 0.0 {
        return Err(Error::InvalidParameter(format!("regularizer {reg} must be nonnegative")));
    }
    let hh = herm(h);
    let gram = hh.dot(h) + scaled_eye(h.ncols(), reg);
    solve_hpd(&gram.view(), &hh.dot(y_d).view())
}

/// L-MMSE payload initializer regularized by the MAD level of `vec(H)`.
///
/// Entries that are exactly zero are structural (blocks that were never
/// estimated) and are left out of the median.
pub fn lmmse_data_init(h: &ArrayView2<C64>, y_d: &ArrayView2<C64>) -> Result<CMat> {
    let reg = mad_noise_var(h.iter().filter(|v| **v != ZERO))?;
    lmmse(h, y_d, reg)
}

/// Block LS, per-column James-Stein with a per-column MAD level, then
/// L-MMSE on the payload.
pub fn assemble_init(y: &ArrayView2<C64>, s_t: &ArrayView2<C64>, n_cells: usize) -> Result<(CMat, CMat)> {
    let t = s_t.ncols();
    if y.ncols() <= t {
        return Err(Error::Dimension(format!("Y has {} slots, pilots take {t}", y.ncols())));
    }
    let mut h = ls_block_chest(&y.slice(s![.., ..t]), s_t, n_cells)?;
    let (bn, un) = (h.nrows() / n_cells, h.ncols() / n_cells);
    for n in 0..n_cells {
        let mut block = h.slice_mut(s![n * bn..(n + 1) * bn, n * un..(n + 1) * un]);
        for mut col in block.axis_iter_mut(Axis(1)) {
            let n0 = mad_noise_var(col.iter())?;
            let js = james_stein(&col.view(), n0)?;
            col.assign(&js);
        }
    }
    let s_d = lmmse_data_init(&h.view(), &y.slice(s![.., t..]))?;
    Ok((h, s_d))
}

/// Minimum-norm LS channel estimate `Y_T (S_T^H S_T)^-1 S_T^H`.
pub fn ls_chest(y_t: &ArrayView2<C64>, s_t: &ArrayView2<C64>) -> Result<CMat> {
    if y_t.ncols() != s_t.ncols() {
        return Err(Error::Dimension(format!("Y_T {:?} vs S_T {:?}", y_t.dim(), s_t.dim())));
    }
    let sh = herm(s_t);
    let right = solve_hpd(&sh.dot(s_t).view(), &sh.view())?;
    Ok(y_t.dot(&right))
}

/// LS channel estimate and L-MMSE payload with a known noise level.
pub fn naive_ls_init(y: &ArrayView2<C64>, s_t: &ArrayView2<C64>, n0: f64) -> Result<(CMat, CMat)> {
    let t = s_t.ncols();
    let h = ls_chest(&y.slice(s![.., ..t]), s_t)?;
    let s_d = lmmse(&h.view(), &y.slice(s![.., t..]), n0)?;
    Ok((h, s_d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{crandn, max_abs_diff};
    use crate::pilots::{build_mub, make_pilots};
    use ndarray::{concatenate, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block_diag(b: usize, u: usize, n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let mut h = crandn(b, u, 1.0, rng);
        let (bn, un) = (b / n, u / n);
        for i in 0..b {
            for j in 0..u {
                if i / bn != j / un {
                    h[[i, j]] = ZERO;
                }
            }
        }
        h
    }

    #[test]
    fn block_ls_noiseless_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s_t = make_pilots(&build_mub(5, 2).unwrap());
        let h = block_diag(6, 10, 2, &mut rng);
        let y_t = h.dot(&s_t);
        let est = ls_block_chest(&y_t.view(), &s_t.view(), 2).unwrap();
        assert!(max_abs_diff(&est.view(), &h.view()) < 1e-12);
    }

    #[test]
    fn block_ls_interference_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = 5;
        let s_t = make_pilots(&build_mub(t, 2).unwrap());
        let t1 = s_t.slice(s![..t, ..]).to_owned();
        let t2 = s_t.slice(s![t.., ..]).to_owned();
        let cross = t2.dot(&herm(&t1.view()));
        assert!(cross.iter().all(|v| (v.norm() - (t as f64).sqrt()).abs() < 1e-10));
        let mut h = block_diag(4, 10, 2, &mut rng);
        let h12 = crandn(2, 5, 0.01, &mut rng);
        h.slice_mut(s![..2, 5..]).assign(&h12);
        let est = ls_block_chest(&h.dot(&s_t).view(), &s_t.view(), 2).unwrap();
        let leak = &est.slice(s![..2, ..5]) - &h.slice(s![..2, ..5]);
        let want = h12.dot(&cross).mapv(|v| v / t as f64);
        assert!(max_abs_diff(&leak.view(), &want.view()) < 1e-12);
    }

    #[test]
    fn block_ls_rejects_non_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s_t = crandn(4, 2, 1.0, &mut rng);
        let y = crandn(4, 2, 1.0, &mut rng);
        assert!(ls_block_chest(&y.view(), &s_t.view(), 2).is_err());
    }

    #[test]
    fn mad_examples() {
        let v = vec![C64::new(std::f64::consts::LN_2.sqrt(), 0.0); 7];
        assert!((mad_noise_var(&v).unwrap() - 1.0).abs() < 1e-15);
        let even: Vec<C64> = [1.0, 2.0, 3.0, 4.0].iter().map(|&x: &f64| C64::new(x.sqrt(), 0.0)).collect();
        assert!((mad_noise_var(&even).unwrap() - 2.5 / std::f64::consts::LN_2).abs() < 1e-12);
        assert!(mad_noise_var(&[] as &[C64]).is_err());
    }

    #[test]
    fn js_examples() {
        let h = Array1::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(1.0, 1.0)]);
        // ||h||^2 = 4 = (B - 1) n0
        assert!(james_stein(&h.view(), 2.0).unwrap().iter().all(|v| *v == ZERO));
        assert_eq!(james_stein(&h.view(), 0.0).unwrap(), h);
        assert!(james_stein(&h.view(), 10.0).unwrap().iter().all(|v| *v == ZERO));
        let z = Array1::from_elem(3, ZERO);
        assert!(james_stein(&z.view(), 1.0).is_err());
    }

    #[test]
    fn lmmse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = crandn(3, 4, 1.0, &mut rng);
        let eye = scaled_eye(3, 1.0);
        let out = lmmse(&eye.view(), &y.view(), 1.0).unwrap();
        assert!(max_abs_diff(&out.view(), &y.mapv(|v| v * 0.5).view()) < 1e-14);

        let h = crandn(8, 4, 1.0, &mut rng);
        let y = crandn(8, 5, 1.0, &mut rng);
        let out = lmmse(&h.view(), &y.view(), 0.3).unwrap();
        // normal equations through nalgebra's LU
        let a = crate::linalg::to_na(&(herm(&h.view()).dot(&h) + scaled_eye(4, 0.3)).view());
        let rhs = crate::linalg::to_na(&herm(&h.view()).dot(&y).view());
        let want = crate::linalg::from_na(&a.lu().solve(&rhs).unwrap());
        assert!(max_abs_diff(&out.view(), &want.view()) < 1e-10);
    }

    #[test]
    fn easy_block_instance_quantizes_to_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = crate::pilots::Constellation::new(crate::pilots::Modulation::Qpsk);
        let (b, u, t, d) = (16, 6, 3, 12);
        let s_t = make_pilots(&build_mub(t, 2).unwrap());
        // sparse cells: two strong links per UE, so the MAD level is ~0
        let dense = block_diag(b, u, 2, &mut rng);
        let mut h = CMat::from_elem((b, u), ZERO);
        for j in 0..u {
            let r0 = (j / 3) * 8;
            h[[r0 + j % 3, j]] = C64::new(2.0, 0.5);
            h[[r0 + 3 + j % 3, j]] = dense[[r0 + 3 + j % 3, j]];
        }
        let idx = Array2::from_shape_fn((u, d), |(i, k)| (i * 7 + k * 3) % 4);
        let s_d = idx.mapv(|i| c.points[i]);
        let y = h.dot(&concatenate(Axis(1), &[s_t.view(), s_d.view()]).unwrap());
        let (_, sd0) = assemble_init(&y.view(), &s_t.view(), 2).unwrap();
        assert_eq!(sd0.mapv(|v| c.nearest(v)), idx);
    }

    #[test]
    fn identity_cells_reduce_to_ls_plus_js() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s_t = make_pilots(&build_mub(5, 1).unwrap());
        let y = crandn(7, 9, 1.0, &mut rng);
        let (h, _) = assemble_init(&y.view(), &s_t.view(), 1).unwrap();
        let ls = ls_chest(&y.slice(s![.., ..5]), &s_t.view()).unwrap();
        for (hc, lc) in h.axis_iter(Axis(1)).zip(ls.axis_iter(Axis(1))) {
            let js = james_stein(&lc, mad_noise_var(lc.iter()).unwrap()).unwrap();
            assert!(hc.iter().zip(js.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
        }
    }
}
