//! Invariant density of the fast component, averaged coefficients, the
//! averaged ODE, and the product reference measure.
//!
//! The fast diffusion `dxi = b(xi)/eps dt + sigma(xi)/sqrt(eps) dV` has the
//! explicit invariant density
//!
//! ```text
//! p(z) = const * exp(2 int_0^z b/sigma^2) / sigma^2(z)
//! ```
//!
//! evaluated here by cumulative trapezoid quadrature on a uniform window and
//! normalized over it. The normalizing constant is fixed numerically, never
//! analytically; the window must be wide enough that the boundary density is
//! below `1e-8` of the peak.

use crate::error::{Error, Result};
use crate::grid::{
    cumulative_trapezoid, integral_of_table, interp_linear, trapezoid, uniform_grid,
};
use crate::model::CoefficientSet;
use crate::occupation::GridMeasure;
use crate::path::PathWithDerivative;

/// Tabulated invariant density with its logarithmic derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    /// `p'(z)/p(z)`, filled from the analytic identity
    /// `(2 b - 2 sigma sigma') / sigma^2`.
    pub score: Vec<f64>,
    /// Estimated truncation mass outside the window (tail-decay
    /// extrapolation at both boundaries plus quadrature slack).
    pub norm_error: f64,
}

impl DensityTable {
    pub fn window(&self) -> (f64, f64) {
        (self.z[0], *self.z.last().unwrap())
    }

    pub fn value_at(&self, z: f64) -> f64 {
        interp_linear(&self.z, &self.p, z)
    }

    pub fn score_at(&self, z: f64) -> f64 {
        interp_linear(&self.z, &self.score, z)
    }

    /// Integral of the density over `[a, b]` (clipped to the window).
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        integral_of_table(&self.z, &self.p, a, b)
    }

    /// CSV `z,p,score`, 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("z,p,score\n");
        for i in 0..self.z.len() {
            s.push_str(&format!(
                "{},{},{}\n",
                crate::grid::fmt_g17(self.z[i]),
                crate::grid::fmt_g17(self.p[i]),
                crate::grid::fmt_g17(self.score[i])
            ));
        }
        s
    }

    pub fn from_csv_str(s: &str) -> std::result::Result<DensityTable, String> {
        let mut z = Vec::new();
        let mut p = Vec::new();
        let mut score = Vec::new();
        for (k, line) in s.lines().enumerate() {
            if k == 0 {
                if line.trim() != "z,p,score" {
                    return Err(format!("unexpected header `{line}`"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(format!("line {}: expected 3 fields", k + 1));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", k + 1));
            z.push(parse(f[0])?);
            p.push(parse(f[1])?);
            score.push(parse(f[2])?);
        }
        Ok(DensityTable { z, p, score, norm_error: 0.0 })
    }
}

/// Evaluates the invariant density on `z_window` with the given step.
///
/// Fails with [`Error::WindowTooSmall`] when either boundary value exceeds
/// `1e-8` of the peak, i.e. when truncation would dominate the reported
/// accuracy.
pub fn invariant_density(
    cs: &CoefficientSet,
    z_window: (f64, f64),
    step: f64,
) -> Result<DensityTable> {
    let z = uniform_grid(z_window.0, z_window.1, step);
    // log of the unnormalized density: 2 int b/sigma^2 - log sigma^2,
    // anchored at the left edge (the anchor is absorbed by normalization).
    let integrand: Vec<f64> = z
        .iter()
        .map(|&zz| {
            let s2 = cs.fast_diffusion(zz).powi(2);
            2.0 * cs.fast_drift(zz) / s2
        })
        .collect();
    let cum = cumulative_trapezoid(&z, &integrand);
    let logs: Vec<f64> = z
        .iter()
        .zip(cum.iter())
        .map(|(&zz, &c)| c - cs.fast_diffusion(zz).powi(2).ln())
        .collect();
    let log_max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - log_max).exp()).collect();
    let norm = trapezoid(&z, &p);
    for v in p.iter_mut() {
        *v /= norm;
    }

    let peak = p.iter().cloned().fold(0.0f64, f64::max);
    let boundary = p[0].max(*p.last().unwrap());
    if boundary > 1e-8 * peak {
        return Err(Error::WindowTooSmall { boundary, peak });
    }

    // Tail-decay extrapolation: fit a local exponential rate at each edge
    // and integrate it outward.
    let h = z[1] - z[0];
    let tail = |p_in: f64, p_edge: f64| -> f64 {
        if p_edge <= 0.0 || p_in <= p_edge {
            return p_edge.max(0.0) * h; // no decay detected; charge one cell
        }
        let rate = (p_in / p_edge).ln() / h;
        p_edge / rate
    };
    let n = p.len();
    let norm_error = tail(p[1], p[0]) + tail(p[n - 2], p[n - 1]);

    let score: Vec<f64> = z
        .iter()
        .map(|&zz| {
            let s = cs.fast_diffusion(zz);
            (2.0 * cs.fast_drift(zz) - 2.0 * s * cs.fast_diffusion_deriv(zz)) / (s * s)
        })
        .collect();

    Ok(DensityTable { z, p, score, norm_error })
}

/// Averaged slow drift `Abar(x) = int A(x, z) p(z) dz`, memoized on an x
/// lattice with linear interpolation; queries outside the lattice fall back
/// to direct quadrature.
#[derive(Debug, Clone)]
pub struct AveragedDrift {
    cs: CoefficientSet,
    z: Vec<f64>,
    p: Vec<f64>,
    x_nodes: Vec<f64>,
    values: Vec<f64>,
}

impl AveragedDrift {
    pub fn new(cs: &CoefficientSet, p: &DensityTable, x_window: (f64, f64), x_step: f64) -> Self {
        let x_nodes = uniform_grid(x_window.0, x_window.1, x_step);
        let mut drift = Self {
            cs: cs.clone(),
            z: p.z.clone(),
            p: p.p.clone(),
            x_nodes: Vec::new(),
            values: Vec::new(),
        };
        let values: Vec<f64> = x_nodes.iter().map(|&x| drift.quadrature(x)).collect();
        drift.x_nodes = x_nodes;
        drift.values = values;
        drift
    }

    fn quadrature(&self, x: f64) -> f64 {
        let ys: Vec<f64> = self
            .z
            .iter()
            .zip(self.p.iter())
            .map(|(&z, &pv)| self.cs.slow_drift(x, z) * pv)
            .collect();
        trapezoid(&self.z, &ys)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < self.x_nodes[0] || x > *self.x_nodes.last().unwrap() {
            return self.quadrature(x);
        }
        interp_linear(&self.x_nodes, &self.values, x)
    }
}

/// Builds the averaged drift on a default lattice around the initial point.
pub fn averaged_drift(cs: &CoefficientSet, p: &DensityTable) -> AveragedDrift {
    let x0 = cs.x0();
    AveragedDrift::new(cs, p, (x0 - 8.0, x0 + 8.0), 1.0 / 128.0)
}

/// Classical fourth-order (RK4) solve of `dXbar = Abar(Xbar) dt` from the
/// instance's initial point, sampled on the uniform grid. The returned
/// derivative table is `Abar(Xbar_t)`, not a finite difference.
pub fn averaged_ode(
    cs: &CoefficientSet,
    p: &DensityTable,
    t_horizon: f64,
    dt: f64,
) -> PathWithDerivative {
    let drift = averaged_drift(cs, p);
    averaged_ode_with(&drift, cs.x0(), t_horizon, dt)
}

/// RK4 solve from an explicit initial point with a prebuilt drift.
pub fn averaged_ode_with(
    drift: &AveragedDrift,
    x0: f64,
    t_horizon: f64,
    dt: f64,
) -> PathWithDerivative {
    assert!(t_horizon > 0.0 && dt > 0.0);
    let t = uniform_grid(0.0, t_horizon, dt);
    let h = t[1] - t[0];
    let mut x = Vec::with_capacity(t.len());
    let mut xdot = Vec::with_capacity(t.len());
    let mut cur = x0;
    x.push(cur);
    xdot.push(drift.eval(cur));
    for _ in 1..t.len() {
        let k1 = drift.eval(cur);
        let k2 = drift.eval(cur + 0.5 * h * k1);
        let k3 = drift.eval(cur + 0.5 * h * k2);
        let k4 = drift.eval(cur + h * k3);
        cur += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        x.push(cur);
        xdot.push(drift.eval(cur));
    }
    PathWithDerivative::new(t, x, xdot)
}

/// Product reference measure `p(z) dt dz` on the requested grid: every time
/// row carries the same kernel, the integral of `p` over each z cell.
pub fn nu_p(p: &DensityTable, t_horizon: f64, t_cells: usize, z_edges: &[f64]) -> GridMeasure {
    assert!(t_cells >= 1);
    let t_edges = uniform_grid(0.0, t_horizon, t_horizon / t_cells as f64);
    let cols = z_edges.len() - 1 + 2;
    let mut kernel = vec![0.0; cols];
    for j in 0..z_edges.len() - 1 {
        kernel[j + 1] = p.mass_between(z_edges[j], z_edges[j + 1]);
    }
    // Truncated mass beyond the measure window (still inside the density
    // window) goes to the overflow cells.
    kernel[0] = p.mass_between(p.window().0, z_edges[0]);
    kernel[cols - 1] = p.mass_between(*z_edges.last().unwrap(), p.window().1);
    let mut mass = Vec::with_capacity(t_cells * cols);
    for i in 0..t_cells {
        let dt = t_edges[i + 1] - t_edges[i];
        mass.extend(kernel.iter().map(|k| k * dt));
    }
    GridMeasure::new(t_edges, z_edges.to_vec(), mass)
}
