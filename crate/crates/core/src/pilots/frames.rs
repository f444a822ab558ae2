//! Low-coherence pilot frames: near-equiangular tight frames and mutually
//! unbiased bases, plus the coherence certificate used to rule out
//! phase-permutation ambiguities.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gf::{Gf2m, MAX_DEGREE};
use crate::error::{Error, Result};
use crate::linalg::{crandn, herm, hermitian_eigen, CMat, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Etf,
    Mub,
}

/// A `T x U` frame with orthonormal rows and columns of squared norm `T/U`.
#[derive(Debug, Clone)]
pub struct FrameMatrix {
    pub f: CMat,
    pub kind: FrameKind,
    /// Number of orthogonal blocks (MUB); 1 for ETFs.
    pub n_blocks: usize,
}

impl FrameMatrix {
    pub fn t(&self) -> usize {
        self.f.nrows()
    }

    pub fn u(&self) -> usize {
        self.f.ncols()
    }

    pub fn nu(&self) -> f64 {
        self.t() as f64 / self.u() as f64
    }

    /// Columns `n*T .. (n+1)*T` of an MUB frame.
    pub fn block(&self, n: usize) -> ArrayView2<'_, C64> {
        let w = self.u() / self.n_blocks;
        self.f.slice(s![.., n * w..(n + 1) * w])
    }

    /// Writes the frame as CSV, one matrix row per line, `re,im` per entry.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.f.rows() {
            let line: Vec<String> = row
                .iter()
                .map(|z| format!("{:.17e},{:.17e}", z.re, z.im))
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, kind: FrameKind, n_blocks: usize) -> Result<Self> {
        let mut rows: Vec<Vec<C64>> = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Config(format!("bad frame csv: {e}")))?;
            if vals.len() % 2 != 0 {
                return Err(Error::Config("frame csv row has an odd value count".into()));
            }
            rows.push(vals.chunks(2).map(|p| C64::new(p[0], p[1])).collect());
        }
        let t = rows.len();
        let u = rows.first().map_or(0, Vec::len);
        if t == 0 || rows.iter().any(|r| r.len() != u) {
            return Err(Error::Dimension("ragged or empty frame csv".into()));
        }
        let f = Array2::from_shape_fn((t, u), |(i, j)| rows[i][j]);
        Ok(FrameMatrix { f, kind, n_blocks })
    }
}

/// Welch lower bound on the coherence of a `T x U` frame whose columns have
/// squared norm `T/U`.
pub fn welch_bound(t: usize, u: usize) -> Result<f64> {
    if t == 0 || t > u {
        return Err(Error::InvalidParameter(format!("welch bound needs 1 <= T <= U, got T={t}, U={u}")));
    }
    if t == u {
        return Ok(0.0);
    }
    let (t, u) = (t as f64, u as f64);
    Ok((t / u) * ((u - t) / (t * (u - 1.0))).sqrt())
}

/// Maximum absolute inner product between distinct columns.
pub fn coherence(f: &ArrayView2<C64>) -> f64 {
    let gram = herm(f).dot(f);
    let n = gram.nrows();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            best = best.max(gram[[i, j]].norm());
        }
    }
    best
}

/// Largest cross-block column coherence of a block-structured frame.
pub fn cross_block_coherence(frame: &FrameMatrix) -> f64 {
    let gram = herm(&frame.f.view()).dot(&frame.f);
    let w = frame.u() / frame.n_blocks;
    let n = gram.nrows();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i / w != j / w {
                best = best.max(gram[[i, j]].norm());
            }
        }
    }
    best
}

/// Returns `true` iff the frame's coherence is strictly below the common
/// squared column norm, which rules out phase-permutation ambiguities.
pub fn check_ambiguity(f: &ArrayView2<C64>) -> Result<bool> {
    let norms: Vec<f64> = f
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
        .collect();
    let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().cloned().fold(0.0, f64::max);
    if hi - lo > 1e-8 {
        return Err(Error::NonUniformColumns(hi - lo));
    }
    let nu = norms.iter().sum::<f64>() / norms.len() as f64;
    // equality up to rounding counts as the ambiguous boundary case
    Ok(coherence(f) < nu * (1.0 - 1e-12))
}

/// Like [`check_ambiguity`] but turns a failed certificate into an error.
pub fn require_unambiguous(f: &ArrayView2<C64>) -> Result<()> {
    if check_ambiguity(f)? {
        Ok(())
    } else {
        let nu = f.column(0).iter().map(|z| z.norm_sqr()).sum();
        Err(Error::Ambiguous { coherence: coherence(f), nu })
    }
}

/// Pilot matrix `sqrt(U) F^H` of shape `U x T`.
pub fn make_pilots(frame: &FrameMatrix) -> CMat {
    herm(&frame.f.view()).mapv(|z| z * (frame.u() as f64).sqrt())
}

/// Inverse of [`make_pilots`].
pub fn frame_from_pilots(s_t: &ArrayView2<C64>) -> CMat {
    let u = s_t.nrows() as f64;
    herm(s_t).mapv(|z| z / u.sqrt())
}

#[derive(Debug, Clone)]
pub struct EtfOptions {
    /// Alternating-projection sweeps per restart.
    pub max_iter: usize,
    /// Descent steps per stage of the smooth-max refinement.
    pub refine_iter: usize,
    /// Accepted coherence as a multiple of the Welch bound.
    pub slack: f64,
    pub restarts: usize,
}

impl Default for EtfOptions {
    fn default() -> Self {
        EtfOptions { max_iter: 300, refine_iter: 400, slack: 1.1, restarts: 4 }
    }
}

/// Builds a unit-norm tight frame whose coherence is within
/// `opts.slack` of the Welch bound.
///
/// Alternating projections between Gram matrices with bounded off-diagonal
/// magnitude and rank-`T` tight frames give a starting point, which is then
/// refined by descending a p-norm surrogate of the coherence and finally
/// polished onto the set of unit-norm tight frames.
pub fn build_etf<R: Rng + ?Sized>(t: usize, u: usize, rng: &mut R) -> Result<FrameMatrix> {
    build_etf_with(t, u, &EtfOptions::default(), rng)
}

pub fn build_etf_with<R: Rng + ?Sized>(
    t: usize,
    u: usize,
    opts: &EtfOptions,
    rng: &mut R,
) -> Result<FrameMatrix> {
    let welch = welch_bound(t, u)?;
    let nu = t as f64 / u as f64;
    if t == u {
        let f = polar_rows(&crandn(t, u, 1.0, rng))?;
        return Ok(FrameMatrix { f, kind: FrameKind::Etf, n_blocks: 1 });
    }
    // Work with unit-norm columns; the bound for those is welch / nu.
    let target = welch / nu;
    let mut best: Option<(f64, CMat)> = None;
    for _ in 0..opts.restarts.max(1) {
        let mut x = polar_rows(&crandn(t, u, 1.0, rng))?.mapv(|z| z / nu.sqrt());
        for _ in 0..opts.max_iter {
            let mut gram = herm(&x.view()).dot(&x);
            for i in 0..u {
                for j in 0..u {
                    if i == j {
                        gram[[i, j]] = C64::new(1.0, 0.0);
                    } else {
                        let m = gram[[i, j]].norm();
                        if m > target {
                            gram[[i, j]] *= target / m;
                        }
                    }
                }
            }
            let (_, vecs) = hermitian_eigen(&gram.view())?;
            let top = vecs.slice(s![.., u - t..]);
            x = herm(&top).mapv(|z| z / nu.sqrt());
            let c = coherence(&normalize_columns(&x).view());
            if c <= target * (1.0 + 1e-6) {
                break;
            }
        }
        x = descend_coherence(&normalize_columns(&x), opts.refine_iter);
        let f = polish_unit_norm_tight(&x.mapv(|z| z * nu.sqrt()), nu)?;
        let c = coherence(&f.view());
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, f));
        }
        if c <= opts.slack * welch {
            break;
        }
    }
    let (c, f) = best.expect("at least one restart");
    if c > opts.slack * welch {
        return Err(Error::NoConvergence(format!(
            "ETF({t},{u}) coherence {c:.5} above {:.2} x Welch {welch:.5}",
            opts.slack
        )));
    }
    Ok(FrameMatrix { f, kind: FrameKind::Etf, n_blocks: 1 })
}

// Minimizes sum_{i != j} (|<x_i, x_j>| / s)^(2p) over near-tight unit-norm
// frames for increasing p, a smooth surrogate of the max coherence.
fn descend_coherence(x0: &CMat, iters: usize) -> CMat {
    let (t, u) = x0.dim();
    let a = u as f64 / t as f64;
    let mut x = x0.clone();
    let objective = |x: &CMat, p: i32, scale: f64| -> f64 {
        let g = herm(&x.view()).dot(x);
        let mut acc = 0.0;
        for ((i, j), v) in g.indexed_iter() {
            if i != j {
                acc += (v.norm() / scale).powi(2 * p);
            }
        }
        acc
    };
    let mut step = 1e-2;
    for p in [32, 64, 128, 256] {
        for _ in 0..iters {
            let g = herm(&x.view()).dot(&x);
            let scale = g
                .indexed_iter()
                .filter(|((i, j), _)| i != j)
                .map(|(_, v)| v.norm())
                .fold(0.0, f64::max);
            let mut w = g.mapv(|v| v * (v.norm() / scale).powi(2 * p - 2) * (p as f64 / (scale * scale)));
            for i in 0..u {
                w[[i, i]] = ZERO;
            }
            let grad = x.dot(&w);
            let gnorm = grad.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if gnorm < 1e-14 {
                break;
            }
            let f0 = objective(&x, p, scale);
            let mut accepted = false;
            for _ in 0..40 {
                let trial = retract(&(&x - &grad.mapv(|z| z * (step / gnorm))), a);
                if objective(&trial, p, scale) < f0 {
                    x = trial;
                    step *= 1.5;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
    }
    x
}

// A few rounds of alternating tight/equal-norm projections; output has unit
// columns and is close to tight.
fn retract(x: &CMat, a: f64) -> CMat {
    let mut y = normalize_columns(x);
    for _ in 0..4 {
        match polar_rows(&y) {
            Ok(p) => y = normalize_columns(&p.mapv(|z| z * a.sqrt())),
            Err(_) => break,
        }
    }
    y
}

fn normalize_columns(x: &CMat) -> CMat {
    let mut out = x.clone();
    for mut col in out.columns_mut() {
        let n = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 0.0 {
            col.mapv_inplace(|z| z / n);
        }
    }
    out
}

/// Nearest matrix with orthonormal rows: `(X X^H)^(-1/2) X`.
fn polar_rows(x: &CMat) -> Result<CMat> {
    let g = x.dot(&herm(&x.view()));
    let (vals, vecs) = hermitian_eigen(&g.view())?;
    if vals[0] <= 1e-14 * vals[vals.len() - 1].max(1e-300) {
        return Err(Error::Linalg("rank-deficient frame in polar factor".into()));
    }
    let n = vals.len();
    let inv_sqrt = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            C64::new(1.0 / vals[i].sqrt(), 0.0)
        } else {
            ZERO
        }
    });
    Ok(vecs.dot(&inv_sqrt).dot(&herm(&vecs.view())).dot(x))
}

/// Alternates between equal column norms and orthonormal rows until both
/// hold to working precision.
fn polish_unit_norm_tight(x: &CMat, nu: f64) -> Result<CMat> {
    let mut f = polar_rows(x)?;
    for _ in 0..5000 {
        let norms: Vec<f64> = f
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect();
        let spread = norms.iter().map(|n| (n - nu).abs()).fold(0.0, f64::max);
        if spread < 1e-13 {
            return Ok(f);
        }
        let scaled = normalize_columns(&f).mapv(|z| z * nu.sqrt());
        f = polar_rows(&scaled)?;
    }
    Err(Error::NoConvergence("unit-norm tight frame polish".into()))
}

fn is_odd_prime(t: usize) -> bool {
    t >= 3 && t % 2 == 1 && (3..).step_by(2).take_while(|d| d * d <= t).all(|d| t % d != 0)
}

/// `N` mutually unbiased orthogonal blocks of size `T x T`, concatenated and
/// scaled so that columns have squared norm `T/U` with `U = N T`.
///
/// Odd prime `T` uses quadratic-phase (chirp) bases; `T = 2^m` uses the
/// Z4-valued quadratic forms of a Kerdock set over GF(2^m). When
/// `N = T + 1` the last block is the standard basis.
pub fn build_mub(t: usize, n: usize) -> Result<FrameMatrix> {
    if n == 0 || n > t + 1 {
        return Err(Error::InvalidParameter(format!("MUB needs 1 <= N <= T+1, got N={n}, T={t}")));
    }
    let u = n * t;
    let scale = 1.0 / ((t as f64).sqrt() * (n as f64).sqrt());
    let mut f = Array2::from_elem((t, u), ZERO);
    let chirp = |block: usize, row: usize, col: usize| -> C64 {
        let phase = (block * row * row + col * row) % t;
        C64::from_polar(scale, 2.0 * PI * phase as f64 / t as f64)
    };
    if is_odd_prime(t) {
        for b in 0..n.min(t) {
            for row in 0..t {
                for col in 0..t {
                    f[[row, b * t + col]] = chirp(b, row, col);
                }
            }
        }
    } else if t.is_power_of_two() && t >= 2 && t.trailing_zeros() <= MAX_DEGREE {
        let gf = Gf2m::new(t.trailing_zeros()).expect("degree checked");
        for b in 0..n.min(t) {
            let form = gf.trace_form(b as u32);
            for row in 0..t {
                let q = z4_quadratic(&form, row);
                for col in 0..t {
                    let lin = 2 * ((row & col).count_ones() as usize % 2);
                    let k = (q + lin) % 4;
                    f[[row, b * t + col]] = C64::from_polar(scale, PI / 2.0 * k as f64);
                }
            }
        }
    } else {
        return Err(Error::UnsupportedFrame(format!(
            "MUB construction needs T an odd prime or a power of two up to 2^{MAX_DEGREE}, got {t}"
        )));
    }
    if n == t + 1 {
        for row in 0..t {
            f[[row, t * t + row]] = C64::new((t as f64).sqrt() * scale, 0.0);
        }
    }
    Ok(FrameMatrix { f, kind: FrameKind::Mub, n_blocks: n })
}

// x^T A x over the integers, reduced mod 4, with x the bit vector of `x`.
fn z4_quadratic(form: &[Vec<u32>], x: usize) -> usize {
    let m = form.len();
    let mut q = 0usize;
    for i in 0..m {
        if (x >> i) & 1 == 0 {
            continue;
        }
        q += form[i][i] as usize;
        for j in i + 1..m {
            if (x >> j) & 1 == 1 {
                q += 2 * form[i][j] as usize;
            }
        }
    }
    q % 4
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, scaled_eye};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_coherence(f: &CMat) -> f64 {
        let mut best = 0.0f64;
        for i in 0..f.ncols() {
            for j in 0..f.ncols() {
                if i != j {
                    let ip: C64 = f.column(i).iter().zip(f.column(j).iter()).map(|(a, b)| a.conj() * b).sum();
                    best = best.max(ip.norm());
                }
            }
        }
        best
    }

    #[test]
    fn welch_values() {
        assert_eq!(welch_bound(4, 4).unwrap(), 0.0);
        assert!((welch_bound(32, 128).unwrap() - 0.25 * (96.0f64 / 4064.0).sqrt()).abs() < 1e-15);
        assert!((welch_bound(32, 128).unwrap() - 0.03843).abs() < 1e-5);
        assert!((welch_bound(1, 2).unwrap() - 0.5).abs() < 1e-15);
        assert!(welch_bound(3, 2).is_err());
    }

    #[test]
    fn coherence_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = crandn(4, 8, 1.0, &mut rng);
        assert!((coherence(&f.view()) - brute_coherence(&f)).abs() < 1e-14);
        let eye = scaled_eye(3, 1.0);
        assert_eq!(coherence(&eye.view()), 0.0);
    }

    #[test]
    fn duplicated_column_is_ambiguous() {
        let mut f = build_mub(3, 2).unwrap().f;
        let c0 = f.column(0).to_owned();
        f.column_mut(4).assign(&c0);
        let nu = 0.5;
        assert!((coherence(&f.view()) - nu).abs() < 1e-12);
        assert!(!check_ambiguity(&f.view()).unwrap());
        assert!(require_unambiguous(&f.view()).is_err());
    }

    #[test]
    fn orthonormal_square_is_unambiguous() {
        let eye = scaled_eye(4, 1.0);
        assert!(check_ambiguity(&eye.view()).unwrap());
    }

    #[test]
    fn nonuniform_columns_rejected() {
        let mut f = scaled_eye(3, 1.0);
        f[[0, 0]] = C64::new(2.0, 0.0);
        assert!(matches!(check_ambiguity(&f.view()), Err(Error::NonUniformColumns(_))));
    }

    fn assert_frame_invariants(frame: &FrameMatrix) {
        let t = frame.t();
        let ffh = frame.f.dot(&herm(&frame.f.view()));
        assert!(max_abs_diff(&ffh.view(), &scaled_eye(t, 1.0).view()) < 1e-8);
        for c in frame.f.columns() {
            let n: f64 = c.iter().map(|z| z.norm_sqr()).sum();
            assert!((n - frame.nu()).abs() < 1e-8);
        }
    }

    #[test]
    fn mub_prime_blocks() {
        for (t, n) in [(3, 4), (5, 2), (7, 3), (31, 4), (3, 1)] {
            let frame = build_mub(t, n).unwrap();
            assert_frame_invariants(&frame);
            let nu = frame.nu();
            for b in 0..n {
                let blk = frame.block(b);
                let g = herm(&blk).dot(&blk);
                assert!(max_abs_diff(&g.view(), &scaled_eye(t, nu).view()) < 1e-8);
            }
            if n > 1 {
                let want = nu / (t as f64).sqrt();
                assert!((cross_block_coherence(&frame) - want).abs() < 1e-8, "T={t} N={n}");
                assert!(check_ambiguity(&frame.f.view()).unwrap());
            }
        }
    }

    #[test]
    fn mub_t31_n4_value() {
        let frame = build_mub(31, 4).unwrap();
        let want = (31.0 / 124.0) / 31f64.sqrt();
        assert!((coherence(&frame.f.view()) - want).abs() < 1e-8);
    }

    #[test]
    fn mub_power_of_two() {
        for (t, n) in [(2, 2), (2, 3), (4, 4), (8, 4), (16, 8), (32, 4), (64, 2)] {
            let frame = build_mub(t, n).unwrap();
            assert_frame_invariants(&frame);
            let want = frame.nu() / (t as f64).sqrt();
            assert!(
                (cross_block_coherence(&frame) - want).abs() < 1e-8,
                "T={t} N={n}: {} vs {want}",
                cross_block_coherence(&frame)
            );
        }
        let frame = build_mub(2, 2).unwrap();
        assert!((coherence(&frame.f.view()) - 0.5 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mub_rejects_unsupported() {
        assert!(matches!(build_mub(6, 2), Err(Error::UnsupportedFrame(_))));
        assert!(build_mub(3, 5).is_err());
        assert!(build_mub(3, 0).is_err());
    }

    #[test]
    fn etf_small_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sq = build_etf(2, 2, &mut rng).unwrap();
        assert_frame_invariants(&sq);
        assert!(coherence(&sq.f.view()) < 1e-10);
        let f = build_etf(3, 4, &mut rng).unwrap();
        assert_frame_invariants(&f);
        assert!(coherence(&f.f.view()) <= 1.1 * welch_bound(3, 4).unwrap());
        assert!(check_ambiguity(&f.f.view()).unwrap());
    }

    #[test]
    fn pilots_roundtrip_and_energy() {
        let frame = build_mub(5, 3).unwrap();
        let s_t = make_pilots(&frame);
        assert_eq!(s_t.dim(), (15, 5));
        let energy: f64 = s_t.iter().map(|z| z.norm_sqr()).sum();
        assert!((energy - 15.0 * 5.0).abs() < 1e-9);
        let back = frame_from_pilots(&s_t.view());
        assert!(max_abs_diff(&back.view(), &frame.f.view()) < 1e-14);
        let eye = FrameMatrix { f: scaled_eye(4, 1.0), kind: FrameKind::Etf, n_blocks: 1 };
        let p = make_pilots(&eye);
        assert!(max_abs_diff(&p.view(), &scaled_eye(4, 2.0).view()) < 1e-15);
    }

    #[test]
    fn csv_roundtrip() {
        let frame = build_mub(3, 2).unwrap();
        let mut buf = Vec::new();
        frame.write_csv(&mut buf).unwrap();
        let back = FrameMatrix::read_csv(&buf[..], FrameKind::Mub, 2).unwrap();
        assert!(max_abs_diff(&back.f.view(), &frame.f.view()) < 1e-15);
    }
}
