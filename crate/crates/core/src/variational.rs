//! Contracted variational problems: the occupation-side rate of a single
//! density, the constrained Hamiltonian `H(y, x)`, and the contracted path
//! action for instances with zero slow diffusion.
//!
//! `H(y, x)` minimizes the quantity
//!
//! ```text
//! G(m) = int sigma^2 [m'/m - p'/p]^2 m dz
//! ```
//!
//! over densities `m` with `int A(x, z) m(z) dz = y`. The minimization runs
//! over the tilt chart `m_v ~ p exp(2 int v / sigma^2)` (positivity and
//! normalization are then automatic) with `v` parametrized on a coarse
//! control grid, an augmented-Lagrangian treatment of the constraint,
//! finite-difference gradients, and a backtracking line search. The budget
//! is fixed, so the solve is deterministic; `converged` reports whether the
//! tolerances were met. `H` carries no `1/8`; that factor enters once, in
//! the contracted action.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{central_differences, cumulative_trapezoid, trapezoid, uniform_grid};
use crate::invariant::DensityTable;
use crate::model::CoefficientSet;
use crate::path::PathWithDerivative;
use crate::rate::TiltControl;

/// Deterministic optimizer budget and tolerances for [`hxy`].
#[derive(Debug, Clone)]
pub struct OptimizerParams {
    /// Control nodes for the tilt over `support`.
    pub control_points: usize,
    /// Tilt support; must sit inside the invariant density's window.
    pub support: (f64, f64),
    /// Target node spacing of the internal quadrature grid (the density
    /// grid is subsampled down to roughly this step).
    pub quad_step: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub constraint_tol: f64,
    pub grad_tol: f64,
    pub penalty0: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub fd_step: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            control_points: 21,
            support: (-5.0, 5.0),
            quad_step: 0.02,
            max_outer: 10,
            max_inner: 160,
            constraint_tol: 1e-6,
            // FD gradients carry ~1e-16 / fd_step noise; anything tighter
            // than that never flags stationarity.
            grad_tol: 1e-7,
            penalty0: 8.0,
            penalty_growth: 4.0,
            penalty_max: 1e7,
            fd_step: 1e-6,
        }
    }
}

/// Result of a constrained tilt solve.
#[derive(Debug, Clone, Serialize)]
pub struct VariationalResult {
    /// The constrained minimum of `G` (no `1/8`).
    pub value: f64,
    #[serde(skip)]
    pub argmin_tilt: TiltControl,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Occupation-side rate of a single density against the invariant one:
/// `(1/8) int sigma^2 [m'/m - p'/p]^2 m dz` with `m'` by central
/// differences.
pub fn gartner_rate(z: &[f64], m: &[f64], p: &DensityTable, cs: &CoefficientSet) -> f64 {
    assert_eq!(z.len(), m.len());
    let m_prime = central_differences(z, m);
    let ys: Vec<f64> = (0..z.len())
        .map(|j| {
            if m[j] <= 0.0 {
                return 0.0;
            }
            let d = m_prime[j] / m[j] - p.score_at(z[j]);
            cs.fast_diffusion(z[j]).powi(2) * d * d * m[j]
        })
        .collect();
    0.125 * trapezoid(z, &ys)
}

struct TiltObjective<'a> {
    z: Vec<f64>,
    p_vals: Vec<f64>,
    inv_sig2: Vec<f64>,
    a_vals: Vec<f64>,
    sig2: Vec<f64>,
    control_z: Vec<f64>,
    y: f64,
    _p: &'a DensityTable,
}

impl<'a> TiltObjective<'a> {
    fn new(cs: &CoefficientSet, p: &'a DensityTable, x: f64, y: f64, opt: &OptimizerParams) -> Self {
        // Subsample the density grid down to the requested quadrature step.
        let step = p.z[1] - p.z[0];
        let stride = (opt.quad_step / step).round().max(1.0) as usize;
        let mut z: Vec<f64> = p.z.iter().step_by(stride).copied().collect();
        let mut p_vals: Vec<f64> = p.p.iter().step_by(stride).copied().collect();
        if *z.last().unwrap() < *p.z.last().unwrap() {
            z.push(*p.z.last().unwrap());
            p_vals.push(*p.p.last().unwrap());
        }
        let sig2: Vec<f64> = z.iter().map(|&zz| cs.fast_diffusion(zz).powi(2)).collect();
        let inv_sig2: Vec<f64> = sig2.iter().map(|s| 1.0 / s).collect();
        let a_vals: Vec<f64> = z.iter().map(|&zz| cs.slow_drift(x, zz)).collect();
        let control_z = uniform_grid(
            opt.support.0,
            opt.support.1,
            (opt.support.1 - opt.support.0) / (opt.control_points - 1) as f64,
        );
        Self {
            z,
            p_vals,
            inv_sig2,
            a_vals,
            sig2,
            control_z,
            y,
            _p: p,
        }
    }

    fn v_fine(&self, control: &[f64]) -> Vec<f64> {
        self.z
            .iter()
            .map(|&zz| {
                if zz < self.control_z[0] || zz > *self.control_z.last().unwrap() {
                    0.0
                } else {
                    crate::grid::interp_linear(&self.control_z, control, zz)
                }
            })
            .collect()
    }

    /// `(G, constraint)` of the density induced by the control vector.
    fn evaluate(&self, control: &[f64]) -> (f64, f64) {
        let v = self.v_fine(control);
        let ratio: Vec<f64> = v
            .iter()
            .zip(self.inv_sig2.iter())
            .map(|(&vv, &is)| 2.0 * vv * is)
            .collect();
        let w = cumulative_trapezoid(&self.z, &ratio);
        let w_max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut m: Vec<f64> = self
            .p_vals
            .iter()
            .zip(w.iter())
            .map(|(&pv, &ww)| pv * (ww - w_max).exp())
            .collect();
        let norm = trapezoid(&self.z, &m);
        for val in m.iter_mut() {
            *val /= norm;
        }
        // G = int sigma^2 (2v/sigma^2)^2 m = int 4 v^2 / sigma^2 m.
        let g_ys: Vec<f64> = (0..self.z.len())
            .map(|j| 4.0 * v[j] * v[j] * self.inv_sig2[j] * m[j])
            .collect();
        let g = trapezoid(&self.z, &g_ys);
        let c_ys: Vec<f64> = (0..self.z.len()).map(|j| self.a_vals[j] * m[j]).collect();
        let c = trapezoid(&self.z, &c_ys) - self.y;
        (g, c)
    }

    fn feasible_range(&self) -> (f64, f64) {
        let lo = self.a_vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.a_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    fn sig2_max(&self) -> f64 {
        self.sig2.iter().cloned().fold(0.0, f64::max)
    }
}

/// Constrained Hamiltonian `H(y, x)`: minimum of `G` over densities whose
/// `A(x, .)`-average equals `y`. Fails with [`Error::Infeasible`] when `y`
/// lies outside the closure of achievable averages on the window.
pub fn hxy(
    y: f64,
    x: f64,
    cs: &CoefficientSet,
    p: &DensityTable,
    opt: &OptimizerParams,
) -> Result<VariationalResult> {
    let obj = TiltObjective::new(cs, p, x, y, opt);
    let (lo, hi) = obj.feasible_range();
    if y < lo - 1e-9 || y > hi + 1e-9 {
        return Err(Error::Infeasible { y, lo, hi });
    }

    let dim = obj.control_z.len();
    let mut control = vec![0.0; dim];
    let mut mu = 0.0;
    let mut rho = opt.penalty0;
    let mut iterations = 0usize;
    let mut converged_inner = false;
    let mut settled = false;
    let mut c_prev = f64::INFINITY;
    let mut g_prev = f64::INFINITY;
    // Scale of a sensible first step: the optimal tilt for a unit shift of
    // an OU-like family is O(sigma^2/2).
    let step0 = 0.25 * obj.sig2_max().max(1.0);

    for _outer in 0..opt.max_outer {
        let al = |ctrl: &[f64], o: &TiltObjective| -> f64 {
            let (g, c) = o.evaluate(ctrl);
            g + mu * c + 0.5 * rho * c * c
        };
        let grad_of = |ctrl: &[f64], f_at: f64, o: &TiltObjective| -> Vec<f64> {
            let mut grad = vec![0.0; dim];
            let mut probe = ctrl.to_vec();
            for k in 0..dim {
                let orig = probe[k];
                probe[k] = orig + opt.fd_step;
                grad[k] = (al(&probe, o) - f_at) / opt.fd_step;
                probe[k] = orig;
            }
            grad
        };
        let mut f_cur = al(&control, &obj);
        let mut grad = grad_of(&control, f_cur, &obj);
        let mut prev_control: Option<Vec<f64>> = None;
        let mut prev_grad: Option<Vec<f64>> = None;
        converged_inner = false;
        for _inner in 0..opt.max_inner {
            iterations += 1;
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            if gnorm2.sqrt() <= opt.grad_tol * (1.0 + f_cur.abs()) {
                converged_inner = true;
                break;
            }
            // Barzilai-Borwein step from the last displacement/gradient
            // change, clamped and safeguarded by backtracking.
            let mut step = match (&prev_control, &prev_grad) {
                (Some(pc), Some(pg)) => {
                    let mut sy = 0.0;
                    let mut yy = 0.0;
                    for k in 0..dim {
                        let s = control[k] - pc[k];
                        let y = grad[k] - pg[k];
                        sy += s * y;
                        yy += y * y;
                    }
                    if sy > 0.0 && yy > 0.0 {
                        (sy / yy).clamp(1e-8, 1e4)
                    } else {
                        step0
                    }
                }
                _ => step0 / (1.0 + gnorm2.sqrt()),
            };
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = control
                    .iter()
                    .zip(grad.iter())
                    .map(|(c, g)| c - step * g)
                    .collect();
                let f_trial = al(&trial, &obj);
                if f_trial <= f_cur - 1e-14 * (1.0 + f_cur.abs()) {
                    prev_control = Some(std::mem::take(&mut control));
                    prev_grad = Some(std::mem::take(&mut grad));
                    control = trial;
                    f_cur = f_trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                converged_inner = true;
                break;
            }
            grad = grad_of(&control, f_cur, &obj);
        }
        let (g_now, c) = obj.evaluate(&control);
        mu += rho * c;
        // Outer-level stationarity: constraint inside tolerance and the
        // objective no longer moving across rounds (the inner flag alone is
        // too strict once the penalty grows and conditioning degrades).
        let g_settled = (g_now - g_prev).abs() <= 1e-8 * (1.0 + g_now.abs());
        g_prev = g_now;
        if c.abs() <= opt.constraint_tol && (converged_inner || g_settled) {
            settled = true;
            break;
        }
        if c.abs() > 0.25 * c_prev && c.abs() > opt.constraint_tol {
            rho = (rho * opt.penalty_growth).min(opt.penalty_max);
        }
        c_prev = c.abs();
    }

    let (g, c) = obj.evaluate(&control);
    let v_fine = obj.v_fine(&control);
    let tilt = TiltControl::time_constant(1.0, obj.z.clone(), v_fine, opt.support);
    Ok(VariationalResult {
        value: g,
        argmin_tilt: tilt,
        constraint_residual: c.abs(),
        iterations,
        converged: c.abs() <= opt.constraint_tol && (settled || converged_inner),
    })
}

/// Contracted path action for `B = 0` instances:
/// `(1/8) int_0^T H(Xdot_t, X_t) dt`, infinite when the path misses the
/// initial point or some node's velocity is unattainable.
pub fn contracted_action(
    xd: &PathWithDerivative,
    cs: &CoefficientSet,
    p: &DensityTable,
    opt: &OptimizerParams,
) -> Result<f64> {
    if !cs.slow_diffusion_is_zero() {
        return Err(Error::NotDegenerate);
    }
    if (xd.x[0] - cs.x0()).abs() > 1e-9 * (1.0 + cs.x0().abs()) {
        return Ok(f64::INFINITY);
    }
    let mut values = Vec::with_capacity(xd.t.len());
    for k in 0..xd.t.len() {
        match hxy(xd.xdot[k], xd.x[k], cs, p, opt) {
            Ok(res) => values.push(res.value),
            Err(Error::Infeasible { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    Ok(0.125 * trapezoid(&xd.t, &values))
}
