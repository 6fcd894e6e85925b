//! Ball-probability estimation, scaling-slope fits, and ergodic diagnostics.
//!
//! The ball event around a target `(X, nu)` at radius `delta` is
//! `{ r_T(X^eps, X) + rho_T(nu^eps, nu) <= delta }` in the uniform metric
//! plus this crate's CDF measure metric; targets without a measure use the
//! path part alone. Estimators run replicas on disjoint RNG streams and
//! reduce in fixed replica order, so estimates are independent of the
//! worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::uniform_grid;
use crate::invariant::{averaged_ode, invariant_density, nu_p, DensityTable};
use crate::model::CoefficientSet;
use crate::occupation::{
    lp_distance, lp_distance_le, occupation_measure, uniform_distance, GridMeasure,
};
use crate::path::PathWithDerivative;
use crate::rate::{density_estimate, v_from_density};
use crate::simulate::{simulate_pair, simulate_tilted_system, TiltedSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Crude,
    Tilted,
}

/// A probability estimate with its Monte Carlo error.
#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub p_hat: f64,
    pub log_p: f64,
    pub stderr: f64,
    pub n: usize,
    pub method: Method,
    pub eps: f64,
    pub delta: f64,
}

impl Estimate {
    /// CSV row `eps,delta,n,p_hat,stderr,log_p` (no header).
    pub fn to_csv_row(&self) -> String {
        use crate::grid::fmt_g17 as g;
        format!(
            "{},{},{},{},{},{}",
            g(self.eps),
            g(self.delta),
            self.n,
            g(self.p_hat),
            g(self.stderr),
            g(self.log_p)
        )
    }
}

/// Ball center: a slow path (with derivative, for tilting) and optionally an
/// occupation-measure target. Without a measure the ball is taken in the
/// path metric alone.
#[derive(Debug, Clone)]
pub struct BallTarget {
    pub path: PathWithDerivative,
    pub measure: Option<GridMeasure>,
}

/// Decides whether a trajectory lands in the `delta` ball around the
/// target: `r + rho <= delta`, short-circuiting on the path part and using
/// the exact threshold comparison on the measure part.
fn within_ball(pp: &crate::simulate::PathPair, target: &BallTarget, delta: f64) -> bool {
    let r = uniform_distance(&pp.slow_path(), &target.path.path());
    if r > delta {
        return false;
    }
    match &target.measure {
        None => true,
        Some(m) => {
            let occ = occupation_measure(pp, m.t_edges(), m.z_edges());
            lp_distance_le(&occ, m, delta - r)
        }
    }
}

/// Crude Monte Carlo estimate of the ball probability. Zero hits yield
/// `p_hat = 0` with `log_p = -inf` (a one-sided CI note for the caller, not
/// an error).
pub fn crude_ball_probability(
    cs: &CoefficientSet,
    eps: f64,
    target: &BallTarget,
    delta: f64,
    n: usize,
    seed: u64,
    dt: f64,
) -> Result<Estimate> {
    assert!(n >= 1);
    let t_horizon = target.path.horizon();
    let hits: Vec<Result<bool>> = (0..n as u64)
        .into_par_iter()
        .map(|replica| {
            let pp = simulate_pair(cs, eps, t_horizon, dt, seed, replica)?;
            Ok(within_ball(&pp, target, delta))
        })
        .collect();
    let mut count = 0usize;
    for h in hits {
        if h? {
            count += 1;
        }
    }
    let p_hat = count as f64 / n as f64;
    let stderr = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    Ok(Estimate {
        p_hat,
        log_p: p_hat.ln(),
        stderr,
        n,
        method: Method::Crude,
        eps,
        delta,
    })
}

/// Options for the tilted estimator.
#[derive(Debug, Clone)]
pub struct TiltedOptions {
    pub dt: f64,
    /// Kernel bandwidth for estimating the target density from the measure.
    pub bandwidth: f64,
    /// Diffusion regularization; required when `B^2_nu` degenerates along
    /// the target.
    pub beta: f64,
}

impl Default for TiltedOptions {
    fn default() -> Self {
        Self { dt: 1e-3, bandwidth: 0.1, beta: 0.0 }
    }
}

/// Importance-sampling estimate of the ball probability under the tilted
/// dynamics, reweighted by the Girsanov derivative. The target must carry a
/// measure (it defines the tilt).
#[allow(clippy::too_many_arguments)]
pub fn is_ball_probability(
    cs: &CoefficientSet,
    p: &DensityTable,
    eps: f64,
    target: &BallTarget,
    delta: f64,
    n: usize,
    seed: u64,
    opts: &TiltedOptions,
) -> Result<Estimate> {
    assert!(n >= 1);
    let m = target
        .measure
        .as_ref()
        .expect("tilted estimator needs a measure target");
    let n_est = density_estimate(m, opts.bandwidth)?;
    let tilt = v_from_density(&n_est, p, cs);
    let t_horizon = target.path.horizon();
    let sys = TiltedSystem::new(cs, p, &tilt, &target.path, opts.beta, t_horizon, opts.dt)?;
    let weights: Vec<Result<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|replica| {
            let (pp, lw) = simulate_tilted_system(&sys, eps, seed, replica)?;
            let hit = within_ball(&pp, target, delta);
            Ok(if hit { lw.log_w.exp() } else { 0.0 })
        })
        .collect();
    let mut w = Vec::with_capacity(n);
    for r in weights {
        w.push(r?);
    }
    let p_hat: f64 = w.iter().sum::<f64>() / n as f64;
    let var = w.iter().map(|x| (x - p_hat).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    let stderr = (var / n as f64).sqrt();
    Ok(Estimate {
        p_hat,
        log_p: p_hat.ln(),
        stderr,
        n,
        method: Method::Tilted,
        eps,
        delta,
    })
}

/// Least-squares fit of `log p_hat = slope / eps + intercept`; `slope` is
/// the fitted limit of `eps log p_hat`. The trend verdict reports whether
/// `eps log p_hat` approaches `-rate_ref` monotonically as `eps` decreases.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub eps_list: Vec<f64>,
    pub log_p: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub rate_ref: f64,
    /// `slope + rate_ref` (zero when the fit matches the reference).
    pub deviation: f64,
    pub trend_toward_rate: bool,
}

/// Fits the leading scaling order. Requires at least three estimates with
/// strictly decreasing `eps`; any zero-hit estimate aborts the fit
/// (continuity corrections would fake exponential decay).
pub fn ldp_slope(estimates: &[Estimate], rate_ref: f64) -> Result<SlopeFit> {
    assert!(estimates.len() >= 3, "need at least three eps values");
    assert!(
        estimates.windows(2).all(|w| w[1].eps < w[0].eps),
        "eps_list must be strictly decreasing"
    );
    for e in estimates {
        if e.p_hat <= 0.0 {
            return Err(Error::ZeroHits(e.eps));
        }
    }
    let u: Vec<f64> = estimates.iter().map(|e| 1.0 / e.eps).collect();
    let y: Vec<f64> = estimates.iter().map(|e| e.log_p).collect();
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = u.iter().map(|x| (x - mu) * (x - mu)).sum();
    let sxy: f64 = u.iter().zip(y.iter()).map(|(x, yy)| (x - mu) * (yy - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mu;
    let gaps: Vec<f64> = estimates
        .iter()
        .map(|e| (e.eps * e.log_p + rate_ref).abs())
        .collect();
    let trend = gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    Ok(SlopeFit {
        eps_list: estimates.iter().map(|e| e.eps).collect(),
        log_p: y,
        slope,
        intercept,
        rate_ref,
        deviation: slope + rate_ref,
        trend_toward_rate: trend,
    })
}

/// Options for the ergodic diagnostic.
#[derive(Debug, Clone)]
pub struct ErgodicOptions {
    pub dt: f64,
    pub t_cells: usize,
    pub z_window: (f64, f64),
    pub z_cells: usize,
    /// Window and step for the invariant density.
    pub density_window: (f64, f64),
    pub density_step: f64,
}

impl Default for ErgodicOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_cells: 10,
            z_window: (-6.0, 6.0),
            z_cells: 60,
            density_window: (-8.0, 8.0),
            density_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErgodicReport {
    pub eps_list: Vec<f64>,
    /// Median over seeds of `r_T(X^eps, Xbar)` per eps.
    pub median_r: Vec<f64>,
    /// Median over seeds of the measure distance to the reference per eps.
    pub median_rho: Vec<f64>,
    /// Both medians strictly decrease along the eps list.
    pub verdict: bool,
    pub note: Option<String>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Per-eps medians of the path and measure deviations from the averaged
/// limit, with a strict-decrease verdict along the (decreasing) eps list.
pub fn ergodic_check(
    cs: &CoefficientSet,
    eps_list: &[f64],
    t_horizon: f64,
    n: usize,
    seed: u64,
    opts: &ErgodicOptions,
) -> Result<ErgodicReport> {
    assert!(!eps_list.is_empty());
    assert!(
        eps_list.windows(2).all(|w| w[1] < w[0]),
        "eps_list must be strictly decreasing"
    );
    let p = invariant_density(cs, opts.density_window, opts.density_step)?;
    let xbar = averaged_ode(cs, &p, t_horizon, opts.dt);
    let z_edges = uniform_grid(
        opts.z_window.0,
        opts.z_window.1,
        (opts.z_window.1 - opts.z_window.0) / opts.z_cells as f64,
    );
    let reference = nu_p(&p, t_horizon, opts.t_cells, &z_edges);
    let xbar_path = xbar.path();

    let mut median_r = Vec::with_capacity(eps_list.len());
    let mut median_rho = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let devs: Vec<Result<(f64, f64)>> = (0..n as u64)
            .into_par_iter()
            .map(|replica| {
                let pp = simulate_pair(cs, eps, t_horizon, opts.dt, seed, replica)?;
                let r = uniform_distance(&pp.slow_path(), &xbar_path);
                let occ = occupation_measure(&pp, reference.t_edges(), reference.z_edges());
                let rho = lp_distance(&occ, &reference);
                Ok((r, rho))
            })
            .collect();
        let mut rs = Vec::with_capacity(n);
        let mut rhos = Vec::with_capacity(n);
        for d in devs {
            let (r, rho) = d?;
            rs.push(r);
            rhos.push(rho);
        }
        median_r.push(median(rs));
        median_rho.push(median(rhos));
    }
    let strict_dec = |xs: &[f64]| xs.windows(2).all(|w| w[1] < w[0]);
    let verdict = eps_list.len() < 2 || (strict_dec(&median_r) && strict_dec(&median_rho));
    let note = (eps_list.len() < 2)
        .then(|| "single eps: monotonicity condition is empty".to_string());
    Ok(ErgodicReport {
        eps_list: eps_list.to_vec(),
        median_r,
        median_rho,
        verdict,
        note,
    })
}
