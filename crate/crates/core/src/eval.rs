//! Baselines and per-UE performance metrics.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbs::{self, SolverOptions, SplitProblem};
use crate::jed::prox_h;
use crate::linalg::{frob_sq, herm, l1_norm, CMat, C64, ZERO};

/// `0.5 ||Y_T - H S_T||^2 + mu1 ||H||_1`.
#[derive(Debug, Clone)]
pub struct L1ChannelProblem<'a> {
    pub y_t: ArrayView2<'a, C64>,
    pub s_t: ArrayView2<'a, C64>,
    pub mu1: f64,
}

impl SplitProblem for L1ChannelProblem<'_> {
    type Var = CMat;

    fn smooth(&self, h: &CMat) -> f64 {
        0.5 * frob_sq(&(h.dot(&self.s_t) - self.y_t).view())
    }

    fn gradient(&self, h: &CMat) -> CMat {
        self.smooth_and_gradient(h).1
    }

    fn smooth_and_gradient(&self, h: &CMat) -> (f64, CMat) {
        let r = h.dot(&self.s_t) - self.y_t;
        (0.5 * frob_sq(&r.view()), r.dot(&herm(&self.s_t)))
    }

    fn prox(&self, z: &CMat, tau: f64) -> Result<CMat> {
        Ok(prox_h(z, self.mu1 * tau))
    }

    fn nonsmooth(&self, h: &CMat) -> f64 {
        self.mu1 * l1_norm(&h.view())
    }
}

/// l1-regularized channel estimate from the pilot phase, started at zero.
pub fn l1_chest(y_t: &ArrayView2<C64>, s_t: &ArrayView2<C64>, mu1: f64, opts: &SolverOptions) -> Result<CMat> {
    if mu1 < 0.0 {
        return Err(Error::InvalidParameter(format!("mu1 = {mu1} must be nonnegative")));
    }
    if y_t.ncols() != s_t.ncols() {
        return Err(Error::Dimension(format!("Y_T {:?} vs S_T {:?}", y_t.dim(), s_t.dim())));
    }
    let problem = L1ChannelProblem { y_t: y_t.view(), s_t: s_t.view(), mu1 };
    let h0 = CMat::from_elem((y_t.nrows(), s_t.nrows()), ZERO);
    Ok(fbs::solve(&problem, h0, opts)?.0)
}

/// L-MMSE detection `(H^H H + reg I)^-1 H^H Y_D`.
pub fn lmmse_detect(h: &ArrayView2<C64>, y_d: &ArrayView2<C64>, noise_reg: f64) -> Result<CMat> {
    crate::init::lmmse(h, y_d, noise_reg)
}

/// Genie-aided single-user bound: every other UE's contribution is removed
/// with the true channel and symbols, then a matched filter is applied.
pub fn simo_bound(h: &ArrayView2<C64>, s_d: &ArrayView2<C64>, y_d: &ArrayView2<C64>) -> Result<CMat> {
    if h.ncols() != s_d.nrows() || h.nrows() != y_d.nrows() || s_d.ncols() != y_d.ncols() {
        return Err(Error::Dimension(format!("H {:?}, S_D {:?}, Y_D {:?}", h.dim(), s_d.dim(), y_d.dim())));
    }
    let resid = y_d - &h.dot(s_d);
    let mut out = s_d.to_owned();
    for (u, hu) in h.axis_iter(Axis(1)).enumerate() {
        let e: f64 = hu.iter().map(|v| v.norm_sqr()).sum();
        if e <= 0.0 {
            return Err(Error::ZeroColumn(u));
        }
        // h_u^H (Y - sum_{u' != u} h_u' s_u'^T) = h_u^H (resid + h_u s_u^T)
        let mf = hu.mapv(|v| v.conj()).dot(&resid);
        let mut row = out.row_mut(u);
        row += &mf.mapv(|v| v / e);
    }
    Ok(out)
}

/// `sqrt(sum |s_hat - s|^2 / sum |s|^2)` per UE.
pub fn rmsse_per_ue(sd_hat: &ArrayView2<C64>, sd_true: &ArrayView2<C64>) -> Result<Vec<f64>> {
    if sd_hat.dim() != sd_true.dim() || sd_true.ncols() == 0 {
        return Err(Error::Dimension(format!("{:?} vs {:?}", sd_hat.dim(), sd_true.dim())));
    }
    sd_hat
        .axis_iter(Axis(0))
        .zip(sd_true.axis_iter(Axis(0)))
        .enumerate()
        .map(|(u, (a, b))| {
            let e: f64 = b.iter().map(|v| v.norm_sqr()).sum();
            if e <= 0.0 {
                return Err(Error::ZeroColumn(u));
            }
            let err: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
            Ok((err / e).sqrt())
        })
        .collect()
}

/// Bit-error rate per UE; rows are UEs.
pub fn ber_per_ue(bits_hat: &ArrayView2<u8>, bits_true: &ArrayView2<u8>) -> Result<Vec<f64>> {
    if bits_hat.dim() != bits_true.dim() || bits_true.ncols() == 0 {
        return Err(Error::Dimension(format!("{:?} vs {:?}", bits_hat.dim(), bits_true.dim())));
    }
    let n = bits_true.ncols() as f64;
    Ok(bits_hat
        .axis_iter(Axis(0))
        .zip(bits_true.axis_iter(Axis(0)))
        .map(|(a, b)| a.iter().zip(b.iter()).filter(|(x, y)| x != y).count() as f64 / n)
        .collect())
}

/// `||h_hat_u - h_u||^2 / B` per UE.
pub fn mse_per_ue(h_hat: &ArrayView2<C64>, h_true: &ArrayView2<C64>) -> Result<Vec<f64>> {
    if h_hat.dim() != h_true.dim() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", h_hat.dim(), h_true.dim())));
    }
    let b = h_true.nrows() as f64;
    Ok(h_hat
        .axis_iter(Axis(1))
        .zip(h_true.axis_iter(Axis(1)))
        .map(|(a, t)| a.iter().zip(t.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / b)
        .collect())
}

/// Joint symbol counts per UE, mergeable across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiAccumulator {
    q: usize,
    /// `counts[u][sent * q + detected]`.
    counts: Vec<Vec<u64>>,
}

impl MiAccumulator {
    pub fn new(n_ue: usize, q: usize) -> Self {
        MiAccumulator { q, counts: vec![vec![0; q * q]; n_ue] }
    }

    /// Adds one block of (sent, detected) constellation indices, UEs by rows.
    pub fn add(&mut self, sent: &ArrayView2<usize>, detected: &ArrayView2<usize>) -> Result<()> {
        if sent.dim() != detected.dim() || sent.nrows() != self.counts.len() {
            return Err(Error::Dimension(format!("{:?} vs {:?}", sent.dim(), detected.dim())));
        }
        for (u, (a, b)) in sent.axis_iter(Axis(0)).zip(detected.axis_iter(Axis(0))).enumerate() {
            for (&x, &y) in a.iter().zip(b.iter()) {
                if x >= self.q || y >= self.q {
                    return Err(Error::InvalidParameter(format!("symbol index outside 0..{}", self.q)));
                }
                self.counts[u][x * self.q + y] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MiAccumulator) -> Result<()> {
        if other.q != self.q || other.counts.len() != self.counts.len() {
            return Err(Error::Dimension("accumulator shapes differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// `((K - T) / K) (H(S) - H(S | S_hat))` per UE with plug-in entropies in bits.
    pub fn finalize(&self, k: usize, t: usize) -> Result<Vec<f64>> {
        let q = self.q;
        let frac = (k - t) as f64 / k as f64;
        self.counts
            .iter()
            .map(|c| {
                let n: u64 = c.iter().sum();
                if n == 0 {
                    return Err(Error::InvalidParameter("mutual information of an empty sample".into()));
                }
                let n = n as f64;
                let plogp = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
                let h_s: f64 = (0..q).map(|x| plogp((0..q).map(|y| c[x * q + y]).sum::<u64>() as f64 / n)).sum();
                let h_hat: f64 = (0..q).map(|y| plogp((0..q).map(|x| c[x * q + y]).sum::<u64>() as f64 / n)).sum();
                let h_joint: f64 = c.iter().map(|&v| plogp(v as f64 / n)).sum();
                // H(S | S_hat) = H(S, S_hat) - H(S_hat)
                Ok(frac * (h_s - (h_joint - h_hat)).max(0.0))
            })
            .collect()
    }
}

/// Per-UE MI from a single block of symbols.
pub fn mi_per_ue(sent: &ArrayView2<usize>, detected: &ArrayView2<usize>, q: usize, k: usize, t: usize) -> Result<Vec<f64>> {
    let mut acc = MiAccumulator::new(sent.nrows(), q);
    acc.add(sent, detected)?;
    acc.finalize(k, t)
}

/// Empirical CDF as sorted `(x, Pr[X <= x])` steps, one per distinct value.
pub fn cdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("CDF of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = p,
            _ => out.push((x, p)),
        }
    }
    Ok(out)
}

/// Complementary CDF `(x, Pr[X > x])`, used for MI.
pub fn ccdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    Ok(cdf(values)?.into_iter().map(|(x, p)| (x, 1.0 - p)).collect())
}

/// Fraction of samples `<= x`.
pub fn fraction_at_most(values: &[f64], x: f64) -> f64 {
    values.iter().filter(|&&v| v <= x).count() as f64 / values.len().max(1) as f64
}

/// Fraction of samples strictly below `x`.
pub fn fraction_below(values: &[f64], x: f64) -> f64 {
    values.iter().filter(|&&v| v < x).count() as f64 / values.len().max(1) as f64
}

/// Lower empirical quantile: the smallest sample with at least a fraction `p`
/// of samples at or below it.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let idx = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

pub const METRICS: [&str; 4] = ["rmsse", "ber", "mi", "mse"];

/// Aggregated campaign results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub trials: usize,
    pub failed_trials: usize,
    pub bits_per_symbol: usize,
    pub k: usize,
    pub t: usize,
    /// `values[detector][metric]` holds per-UE samples pooled over trials.
    /// MI has one pooled value per UE index.
    pub values: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    /// JED iterations per successful trial.
    pub iterations: Vec<usize>,
}

impl MetricsReport {
    pub fn get(&self, detector: &str, metric: &str) -> &[f64] {
        self.values.get(detector).and_then(|m| m.get(metric)).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn mi_upper_bound(&self) -> f64 {
        self.bits_per_symbol as f64 * (self.k - self.t) as f64 / self.k as f64
    }

    /// CDF point sets, MI as a complementary CDF.
    pub fn cdf_points(&self, metric: &str) -> Result<Vec<(String, f64, f64)>> {
        let mut rows = Vec::new();
        for (det, metrics) in &self.values {
            if let Some(v) = metrics.get(metric) {
                if v.is_empty() {
                    continue;
                }
                let pts = if metric == "mi" { ccdf(v)? } else { cdf(v)? };
                rows.extend(pts.into_iter().map(|(x, p)| (format!("{det}_{metric}"), x, p)));
            }
        }
        Ok(rows)
    }

    pub fn write_cdf_csv<W: Write>(&self, metric: &str, mut w: W) -> Result<()> {
        writeln!(w, "metric,x,p")?;
        for (m, x, p) in self.cdf_points(metric)? {
            writeln!(w, "{m},{x:.17e},{p:.17e}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
