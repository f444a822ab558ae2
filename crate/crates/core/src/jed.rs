//! Relaxed MAP joint channel estimation and data detection.
//!
//! The channel `H` (B x U) and payload `S_D` (U x D) are estimated together by
//! minimizing
//!
//! ```text
//! 0.5 ||Y - H [S_T, S_D]||_F^2 + mu ||H||_1 - (gamma / 2) ||S_D||_F^2
//! ```
//!
//! with `S_D` restricted to the box spanned by the constellation. Pilots
//! `S_T` are constants and never move.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::fbs::{self, SolverOptions, SplitProblem, Trace};
use crate::linalg::{frob_sq, herm, hermitian_eigen, l1_norm, CMat, C64, ZERO};
use crate::pilots::{frame_from_pilots, require_unambiguous, Constellation};

/// `(H, S_D)`.
pub type JedVar = (CMat, CMat);

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct JedParams {
    /// Sparsity weight on `||H||_1`.
    pub mu: f64,
    /// Weight of the concave push towards the constellation corners.
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct JedProblem<'a> {
    pub y: ArrayView2<'a, C64>,
    pub s_t: ArrayView2<'a, C64>,
    pub constellation: &'a Constellation,
    pub params: JedParams,
}

impl<'a> JedProblem<'a> {
    pub fn new(
        y: ArrayView2<'a, C64>,
        s_t: ArrayView2<'a, C64>,
        constellation: &'a Constellation,
        params: JedParams,
    ) -> Result<Self> {
        if y.ncols() < s_t.ncols() {
            return Err(Error::Dimension(format!(
                "Y has {} slots but there are {} pilots",
                y.ncols(),
                s_t.ncols()
            )));
        }
        if params.mu < 0.0 || params.gamma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mu={} and gamma={} must be nonnegative",
                params.mu, params.gamma
            )));
        }
        Ok(JedProblem { y, s_t, constellation, params })
    }

    pub fn b(&self) -> usize {
        self.y.nrows()
    }

    pub fn u(&self) -> usize {
        self.s_t.nrows()
    }

    pub fn t(&self) -> usize {
        self.s_t.ncols()
    }

    pub fn d(&self) -> usize {
        self.y.ncols() - self.t()
    }

    fn check_shapes(&self, z: &JedVar) -> Result<()> {
        let (h, s_d) = z;
        if h.dim() != (self.b(), self.u()) || s_d.dim() != (self.u(), self.d()) {
            return Err(Error::Dimension(format!(
                "H {:?} / S_D {:?} do not match B={}, U={}, D={}",
                h.dim(),
                s_d.dim(),
                self.b(),
                self.u(),
                self.d()
            )));
        }
        Ok(())
    }

    /// Full `[S_T, S_D]`.
    pub fn full_s(&self, s_d: &CMat) -> CMat {
        concatenate(Axis(1), &[self.s_t, s_d.view()]).expect("row counts agree")
    }

    fn residual(&self, z: &JedVar) -> CMat {
        let s = self.full_s(&z.1);
        z.0.dot(&s) - self.y
    }
}

impl SplitProblem for JedProblem<'_> {
    type Var = JedVar;

    fn smooth(&self, z: &JedVar) -> f64 {
        0.5 * frob_sq(&self.residual(z).view())
    }

    fn gradient(&self, z: &JedVar) -> JedVar {
        self.smooth_and_gradient(z).1
    }

    fn smooth_and_gradient(&self, z: &JedVar) -> (f64, JedVar) {
        let (h, s_d) = z;
        let s = self.full_s(s_d);
        let r = h.dot(&s) - self.y;
        let f = 0.5 * frob_sq(&r.view());
        let g_h = r.dot(&herm(&s.view()));
        // pilot columns are constants, so only the payload block has a gradient
        let g_s = herm(&h.view()).dot(&r.slice(s![.., self.t()..]));
        (f, (g_h, g_s))
    }

    fn prox(&self, z: &JedVar, tau: f64) -> Result<JedVar> {
        Ok((
            prox_h(&z.0, self.params.mu * tau),
            prox_s(&z.1, tau, self.params.gamma, self.constellation)?,
        ))
    }

    fn nonsmooth(&self, z: &JedVar) -> f64 {
        let (h, s_d) = z;
        if s_d.iter().any(|v| !self.constellation.contains(*v, 1e-12)) {
            return f64::INFINITY;
        }
        self.params.mu * l1_norm(&h.view()) - 0.5 * self.params.gamma * frob_sq(&s_d.view())
    }
}

/// Objective `h = f + g` at `(H, S_D)`; `+inf` when `S_D` leaves the box.
pub fn objective(problem: &JedProblem<'_>, h: &CMat, s_d: &CMat) -> Result<f64> {
    let z = (h.clone(), s_d.clone());
    problem.check_shapes(&z)?;
    Ok(problem.objective(&z))
}

/// Gradient blocks `((HS - Y) S^H, H^H (HS - Y)_D)`.
pub fn gradient_f(problem: &JedProblem<'_>, h: &CMat, s_d: &CMat) -> Result<JedVar> {
    let z = (h.clone(), s_d.clone());
    problem.check_shapes(&z)?;
    Ok(problem.gradient(&z))
}

/// Entrywise complex soft-threshold `H / |H| * max(|H| - thr, 0)` with
/// `0 / |0| = 0`.
pub fn prox_h(h: &CMat, thr: f64) -> CMat {
    h.mapv(|v| {
        let m = v.norm();
        if m <= thr || m == 0.0 {
            ZERO
        } else {
            v * ((m - thr) / m)
        }
    })
}

/// Scale by `1 / (1 - tau gamma)` and clamp real and imaginary parts to the
/// constellation box.
pub fn prox_s(s_d: &CMat, tau: f64, gamma: f64, constellation: &Constellation) -> Result<CMat> {
    let rho = tau * gamma;
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("tau * gamma = {rho} must lie in [0, 1)")));
    }
    let scale = 1.0 / (1.0 - rho);
    Ok(s_d.mapv(|v| constellation.clamp(v * scale)))
}

/// Whether the relaxed problem is biconvex at `H`: `lambda_min(H^H H) >= gamma`.
pub fn biconvexity_check(h: &ArrayView2<C64>, gamma: f64) -> Result<bool> {
    let gram = herm(h).dot(h);
    let (vals, _) = hermitian_eigen(&gram.view())?;
    let tol = 1e-9 * vals.last().copied().unwrap_or(0.0).abs().max(1.0);
    Ok(vals[0] >= gamma - tol)
}

#[derive(Debug, Clone)]
pub struct JedOutput {
    pub h: CMat,
    pub sd_soft: CMat,
    pub trace: Trace,
}

/// Solves the relaxed JED problem by forward-backward splitting.
///
/// The pilot matrix must pass the coherence certificate. The payload
/// initializer is projected into the constellation box before the first
/// step. When `gamma > 0` the stepsize is capped at `0.99 / gamma`.
pub fn run_jed(
    y: &ArrayView2<C64>,
    s_t: &ArrayView2<C64>,
    init_h: CMat,
    init_sd: CMat,
    constellation: &Constellation,
    params: JedParams,
    opts: &SolverOptions,
) -> Result<JedOutput> {
    require_unambiguous(&frame_from_pilots(s_t).view())?;
    let problem = JedProblem::new(y.view(), s_t.view(), constellation, params)?;
    let init_sd = init_sd.mapv(|v| constellation.clamp(v));
    let z0 = (init_h, init_sd);
    problem.check_shapes(&z0)?;
    let mut opts = opts.clone();
    if params.gamma > 0.0 {
        opts.tau_max = opts.tau_max.min(0.99 / params.gamma);
    }
    let ((h, sd_soft), trace) = fbs::solve(&problem, z0, &opts)?;
    Ok(JedOutput { h, sd_soft, trace })
}

/// Hard decisions on soft payload estimates.
#[derive(Debug, Clone)]
pub struct Detected {
    /// Constellation indices, U x D.
    pub indices: Array2<usize>,
    pub symbols: CMat,
}

impl Detected {
    /// Bits per UE, `U x (D n_q)`, labels concatenated slot by slot.
    pub fn bits(&self, constellation: &Constellation) -> Array2<u8> {
        symbol_bits(&self.indices, constellation)
    }
}

pub fn symbol_bits(indices: &Array2<usize>, constellation: &Constellation) -> Array2<u8> {
    let nq = constellation.bits_per_symbol();
    let (u, d) = indices.dim();
    Array2::from_shape_fn((u, d * nq), |(i, j)| constellation.labels[indices[[i, j / nq]]][j % nq])
}

/// Nearest-point quantization; ties go to the smaller constellation index.
pub fn quantize(sd_soft: &ArrayView2<C64>, constellation: &Constellation) -> Detected {
    let indices = sd_soft.mapv(|v| constellation.nearest(v));
    let symbols = indices.mapv(|i| constellation.points[i]);
    Detected { indices, symbols }
}
