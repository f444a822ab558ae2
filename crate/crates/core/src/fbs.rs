//! Forward-backward splitting with spectral (Barzilai-Borwein) stepsizes and
//! a backtracking line search.
//!
//! The engine minimizes `h(z) = f(z) + g(z)` where `f` is smooth and `g` has a
//! cheap proximal operator. Every accepted step satisfies
//!
//! ```text
//! f(z+) <= f(z) + <z+ - z, grad f(z)> + ||z+ - z||^2 / (2 tau)
//! ```
//!
//! which makes the objective sequence non-increasing whenever the prox is
//! computed exactly.

use std::io::Write;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::C64;

/// Optimization variable: anything with a real inner product and a flat view
/// onto its real coordinates.
pub trait Variable: Clone {
    /// Real inner product `Re <self, other>`.
    fn re_dot(&self, other: &Self) -> f64;
    /// `self += alpha * x`.
    fn axpy(&mut self, alpha: f64, x: &Self);
    fn all_finite(&self) -> bool;
    /// Number of real coordinates (complex entries count twice).
    fn real_len(&self) -> usize;
    fn real_coord(&self, i: usize) -> f64;
    fn set_real_coord(&mut self, i: usize, v: f64);

    fn norm_sq(&self) -> f64 {
        self.re_dot(self)
    }

    fn minus(&self, other: &Self) -> Self {
        let mut d = self.clone();
        d.axpy(-1.0, other);
        d
    }
}

impl Variable for Array2<f64> {
    fn re_dot(&self, other: &Self) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    fn axpy(&mut self, alpha: f64, x: &Self) {
        self.scaled_add(alpha, x);
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    fn real_len(&self) -> usize {
        self.len()
    }

    fn real_coord(&self, i: usize) -> f64 {
        self.as_slice_memory_order().expect("contiguous")[i]
    }

    fn set_real_coord(&mut self, i: usize, v: f64) {
        self.as_slice_memory_order_mut().expect("contiguous")[i] = v;
    }
}

impl Variable for Array2<C64> {
    fn re_dot(&self, other: &Self) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
    }

    fn axpy(&mut self, alpha: f64, x: &Self) {
        self.zip_mut_with(x, |a, b| *a += b * alpha);
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    fn real_len(&self) -> usize {
        2 * self.len()
    }

    fn real_coord(&self, i: usize) -> f64 {
        let z = self.as_slice_memory_order().expect("contiguous")[i / 2];
        if i % 2 == 0 {
            z.re
        } else {
            z.im
        }
    }

    fn set_real_coord(&mut self, i: usize, v: f64) {
        let z = &mut self.as_slice_memory_order_mut().expect("contiguous")[i / 2];
        if i % 2 == 0 {
            z.re = v;
        } else {
            z.im = v;
        }
    }
}

impl<A: Variable, B: Variable> Variable for (A, B) {
    fn re_dot(&self, other: &Self) -> f64 {
        self.0.re_dot(&other.0) + self.1.re_dot(&other.1)
    }

    fn axpy(&mut self, alpha: f64, x: &Self) {
        self.0.axpy(alpha, &x.0);
        self.1.axpy(alpha, &x.1);
    }

    fn all_finite(&self) -> bool {
        self.0.all_finite() && self.1.all_finite()
    }

    fn real_len(&self) -> usize {
        self.0.real_len() + self.1.real_len()
    }

    fn real_coord(&self, i: usize) -> f64 {
        let n = self.0.real_len();
        if i < n {
            self.0.real_coord(i)
        } else {
            self.1.real_coord(i - n)
        }
    }

    fn set_real_coord(&mut self, i: usize, v: f64) {
        let n = self.0.real_len();
        if i < n {
            self.0.set_real_coord(i, v)
        } else {
            self.1.set_real_coord(i - n, v)
        }
    }
}

/// A composite problem `min f(z) + g(z)`.
///
/// `gradient` returns the steepest-ascent direction of `f` with respect to
/// the real inner product, so that the directional derivative along `d` is
/// `re_dot(d, gradient(z))`.
pub trait SplitProblem {
    type Var: Variable;

    fn smooth(&self, z: &Self::Var) -> f64;

    fn gradient(&self, z: &Self::Var) -> Self::Var;

    /// Value and gradient together; override when they share work.
    fn smooth_and_gradient(&self, z: &Self::Var) -> (f64, Self::Var) {
        (self.smooth(z), self.gradient(z))
    }

    /// `argmin_x tau g(x) + 0.5 ||x - z||^2`.
    fn prox(&self, z: &Self::Var, tau: f64) -> Result<Self::Var>;

    fn nonsmooth(&self, z: &Self::Var) -> f64;

    fn objective(&self, z: &Self::Var) -> f64 {
        self.smooth(z) + self.nonsmooth(z)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop once the current residual falls below this fraction of the
    /// largest residual seen so far.
    pub tol: f64,
    /// Initial stepsize; estimated from a short probe when `None`.
    pub tau0: Option<f64>,
    pub tau_max: f64,
    pub tau_min: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 5000,
            tol: 1e-6,
            tau0: None,
            tau_max: f64::INFINITY,
            tau_min: 1e-12,
            shrink: 0.5,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidParameter(format!("tolerance {} not in (0,1)", self.tol)));
        }
        if !(self.tau_max > 0.0) {
            return Err(Error::InvalidParameter(format!("tau_max {} must be positive", self.tau_max)));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter(format!("shrink {} not in (0,1)", self.shrink)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum StopReason {
    Converged,
    MaxIter,
    /// The line search accepted a step that rounding made non-descending.
    Stagnated,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Trace {
    /// `objective[0]` is `h(z0)`, `objective[t]` is `h` after step `t`.
    pub objective: Vec<f64>,
    pub stepsizes: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub iterations: usize,
    pub backtracks: usize,
    pub stop: StopReason,
}

impl Trace {
    pub fn is_monotone(&self) -> bool {
        self.objective.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("trace has the initial objective")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,objective,stepsize,grad_norm")?;
        writeln!(w, "0,{:.17e},,", self.objective[0])?;
        for t in 0..self.iterations {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e}",
                t + 1,
                self.objective[t + 1],
                self.stepsizes[t],
                self.grad_norms[t]
            )?;
        }
        Ok(())
    }
}

/// The backtracking acceptance test.
pub fn line_search_ok<V: Variable>(
    z_new: &V,
    z_old: &V,
    grad_old: &V,
    f_new: f64,
    f_old: f64,
    tau: f64,
) -> bool {
    let d = z_new.minus(z_old);
    f_new <= f_old + d.re_dot(grad_old) + d.norm_sq() / (2.0 * tau)
}

/// Runs forward-backward splitting from `z0`.
pub fn solve<P: SplitProblem>(
    problem: &P,
    z0: P::Var,
    opts: &SolverOptions,
) -> Result<(P::Var, Trace)> {
    opts.validate()?;
    let mut z = z0;
    let (mut f, mut grad) = problem.smooth_and_gradient(&z);
    let mut h = f + problem.nonsmooth(&z);
    if !h.is_finite() || !grad.all_finite() {
        return Err(Error::NonFinite(format!("initial objective {h}")));
    }
    let mut trace = Trace {
        objective: vec![h],
        stepsizes: Vec::new(),
        grad_norms: Vec::new(),
        iterations: 0,
        backtracks: 0,
        stop: StopReason::MaxIter,
    };

    let mut tau = opts.tau0.unwrap_or_else(|| probe_stepsize(problem, &z, &grad)).min(opts.tau_max);
    let mut max_residual = 0.0f64;

    for it in 0..opts.max_iter {
        // backtracking
        let (z_new, f_new, grad_new) = loop {
            let mut forward = z.clone();
            forward.axpy(-tau, &grad);
            let cand = problem.prox(&forward, tau)?;
            let (f_cand, g_cand) = problem.smooth_and_gradient(&cand);
            if !f_cand.is_finite() {
                return Err(Error::NonFinite(format!("smooth objective at iteration {it}")));
            }
            let slack = 1e-12 * f.abs();
            let d = cand.minus(&z);
            if f_cand <= f + d.re_dot(&grad) + d.norm_sq() / (2.0 * tau) + slack {
                break (cand, f_cand, g_cand);
            }
            tau *= opts.shrink;
            trace.backtracks += 1;
            if tau < opts.tau_min {
                return Err(Error::StepsizeUnderflow { floor: opts.tau_min, iteration: it });
            }
        };
        if !grad_new.all_finite() {
            return Err(Error::NonFinite(format!("gradient at iteration {it}")));
        }
        let h_new = f_new + problem.nonsmooth(&z_new);
        if !h_new.is_finite() {
            return Err(Error::NonFinite(format!("objective at iteration {it}")));
        }
        if h_new > h {
            trace.stop = StopReason::Stagnated;
            break;
        }

        let dz = z_new.minus(&z);
        let dg = grad_new.minus(&grad);
        // an element of the subdifferential of h at z_new
        let mut res = dg.clone();
        res.axpy(-1.0 / tau, &dz);
        let residual = res.norm_sq().sqrt();
        max_residual = max_residual.max(residual);

        trace.objective.push(h_new);
        trace.stepsizes.push(tau);
        trace.grad_norms.push(residual);
        trace.iterations = it + 1;

        z = z_new;
        f = f_new;
        grad = grad_new;
        h = h_new;

        if residual == 0.0 || residual < opts.tol * max_residual {
            trace.stop = StopReason::Converged;
            break;
        }

        tau = spectral_stepsize(&dz, &dg, tau).min(opts.tau_max);
    }
    Ok((z, trace))
}

// Adaptive BB rule: choose between the "steepest descent" and "minimum
// residual" spectral estimates.
fn spectral_stepsize<V: Variable>(dz: &V, dg: &V, prev: f64) -> f64 {
    let zz = dz.norm_sq();
    let zg = dz.re_dot(dg);
    let gg = dg.norm_sq();
    if zg <= 0.0 || zz == 0.0 || gg == 0.0 {
        return prev * 1.5;
    }
    let steep = zz / zg;
    let minres = zg / gg;
    let tau = if 2.0 * minres > steep { minres } else { steep - minres / 2.0 };
    if tau.is_finite() && tau > 0.0 {
        tau
    } else {
        prev
    }
}

fn probe_stepsize<P: SplitProblem>(problem: &P, z: &P::Var, grad: &P::Var) -> f64 {
    let gn = grad.norm_sq().sqrt();
    if gn == 0.0 {
        return 1.0;
    }
    let zn = z.norm_sq().sqrt().max(1.0);
    let mut probe = z.clone();
    probe.axpy(-1e-3 * zn / gn, grad);
    let g2 = problem.gradient(&probe);
    let dz = probe.minus(z);
    let dg = g2.minus(grad);
    let zg = dz.re_dot(&dg);
    if zg > 0.0 && zg.is_finite() {
        dz.norm_sq() / zg
    } else {
        1.0
    }
}

/// Relative error between `gradient` and central finite differences of
/// `smooth`, perturbing every real coordinate independently.
pub fn finite_difference_error<P: SplitProblem>(problem: &P, z: &P::Var, step: f64) -> f64 {
    let grad = problem.gradient(z);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut zp = z.clone();
    for i in 0..z.real_len() {
        let x = z.real_coord(i);
        zp.set_real_coord(i, x + step);
        let fp = problem.smooth(&zp);
        zp.set_real_coord(i, x - step);
        let fm = problem.smooth(&zp);
        zp.set_real_coord(i, x);
        let fd = (fp - fm) / (2.0 * step);
        let g = grad.real_coord(i);
        num += (fd - g).powi(2);
        den += g.powi(2);
    }
    num.sqrt() / den.sqrt().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Quadratic {
        c: Array2<f64>,
    }

    impl SplitProblem for Quadratic {
        type Var = Array2<f64>;
        fn smooth(&self, z: &Array2<f64>) -> f64 {
            0.5 * (z - &self.c).mapv(|v| v * v).sum()
        }
        fn gradient(&self, z: &Array2<f64>) -> Array2<f64> {
            z - &self.c
        }
        fn prox(&self, z: &Array2<f64>, _tau: f64) -> Result<Array2<f64>> {
            Ok(z.clone())
        }
        fn nonsmooth(&self, _z: &Array2<f64>) -> f64 {
            0.0
        }
    }

    #[test]
    fn quadratic_converges_to_center() {
        let p = Quadratic { c: array![[1.0, -2.0], [0.5, 3.0]] };
        let (z, trace) = solve(&p, Array2::zeros((2, 2)), &SolverOptions::default()).unwrap();
        assert!((&z - &p.c).iter().all(|v| v.abs() < 1e-8));
        assert!(trace.iterations <= 50);
        assert!(trace.is_monotone());
    }

    #[test]
    fn optimal_start_terminates_unchanged() {
        let p = Quadratic { c: array![[1.0, 2.0]] };
        let (z, trace) = solve(&p, p.c.clone(), &SolverOptions::default()).unwrap();
        assert_eq!(z, p.c);
        assert_eq!(trace.stop, StopReason::Converged);
        assert!(trace.iterations <= 1);
    }

    #[test]
    fn line_search_cases() {
        let z = array![[1.0, 1.0]];
        let g = array![[2.0, 2.0]];
        assert!(line_search_ok(&z, &z, &g, 3.0, 3.0, 1.0));
        // f(z) = 50 ||z||^2 (L = 100); a unit step from (1,1) overshoots badly
        let f = |v: &Array2<f64>| 50.0 * v.mapv(|x| x * x).sum();
        let grad = z.mapv(|x| 100.0 * x);
        let big = &z - &grad.mapv(|x| x * 1.0);
        assert!(!line_search_ok(&big, &z, &grad, f(&big), f(&z), 1.0));
        let small = &z - &grad.mapv(|x| x * 0.009);
        assert!(line_search_ok(&small, &z, &grad, f(&small), f(&z), 0.009));
    }

    #[test]
    fn options_validation() {
        let bad = SolverOptions { tol: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverOptions { tau_max: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let p = Quadratic { c: array![[1.0, -1.0]] };
        let (_, trace) = solve(&p, array![[4.0, 4.0]], &SolverOptions::default()).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,objective,stepsize,grad_norm\n0,"));
        assert_eq!(text.lines().count(), trace.iterations + 2);
    }

    #[test]
    fn complex_coordinates_interleave() {
        let mut z = Array2::from_elem((1, 2), C64::new(1.0, 2.0));
        assert_eq!(z.real_len(), 4);
        z.set_real_coord(3, -5.0);
        assert_eq!(z[[0, 1]], C64::new(1.0, -5.0));
        assert_eq!(z.real_coord(0), 1.0);
    }
}
