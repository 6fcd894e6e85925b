//! Explicit one-step integration of the slow/fast pair, its tilted variant,
//! and the noise-regularized variant, with Girsanov log-weights.
//!
//! The slow component advances once per outer step with noise
//! `sqrt(eps * dt) B(X, xi) N(0,1)`; the fast component advances on
//! substeps chosen so that `dt_sub <= 0.1 eps / L_b`, where `L_b` is the
//! instance's finite-difference Lipschitz constant for `b`. Each driver
//! (slow noise, fast noise, extra regularization noise) draws from its own
//! counter-derived stream, so paths are bit-identical for a given
//! `(seed, replica)` regardless of scheduling, and the regularized system
//! couples pathwise to the plain one as `beta -> 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{fmt_g17, trapezoid, uniform_grid};
use crate::invariant::DensityTable;
use crate::model::CoefficientSet;
use crate::path::{Path, PathWithDerivative};
use crate::rate::{density_from_v, TiltControl, DEGENERATE_FLOOR};

/// Independent driver streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    /// `W`, the slow-component noise.
    Slow = 0,
    /// `V`, the fast-component noise.
    Fast = 1,
    /// `W'`, the extra noise of the regularized system.
    Extra = 2,
}

/// Counter-based stream derivation: one ChaCha stream per
/// `(seed, replica, driver)` triple. Replication is order-independent.
pub fn driver_rng(seed: u64, replica: u64, driver: Driver) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica.wrapping_mul(8).wrapping_add(driver as u64));
    rng
}

/// Discretized trajectory of the pair on a uniform outer grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPair {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub eps: f64,
    pub seed: u64,
    pub replica: u64,
    pub substeps: usize,
}

impl PathPair {
    pub fn horizon(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn slow_path(&self) -> Path {
        Path::new(self.t.clone(), self.x.clone())
    }

    /// CSV `t,X,xi`, 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("t,X,xi\n");
        for i in 0..self.t.len() {
            s.push_str(&format!(
                "{},{},{}\n",
                fmt_g17(self.t[i]),
                fmt_g17(self.x[i]),
                fmt_g17(self.xi[i])
            ));
        }
        s
    }

    pub fn from_csv_str(s: &str) -> std::result::Result<PathPair, String> {
        let mut t = Vec::new();
        let mut x = Vec::new();
        let mut xi = Vec::new();
        for (k, line) in s.lines().enumerate() {
            if k == 0 {
                if line.trim() != "t,X,xi" {
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
            t.push(parse(f[0])?);
            x.push(parse(f[1])?);
            xi.push(parse(f[2])?);
        }
        if t.len() < 2 {
            return Err("path needs at least two nodes".into());
        }
        Ok(PathPair { t, x, xi, eps: f64::NAN, seed: 0, replica: 0, substeps: 0 })
    }
}

/// Girsanov log-weight of a tilted trajectory, split into its four terms:
/// `log_w = M^eps_T/sqrt(eps) - <M^eps>_T/(2 eps) + M_T/sqrt(eps) - <M>_T/(2 eps)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LogWeight {
    pub m_eps_term: f64,
    pub qv_eps_term: f64,
    pub m_term: f64,
    pub qv_term: f64,
    pub log_w: f64,
}

/// Substep count enforcing the stiffness gate `dt_sub <= 0.1 eps / L_b`.
pub fn substeps_for(cs: &CoefficientSet, eps: f64, dt: f64) -> usize {
    let lb = cs.fast_drift_lipschitz().max(1e-12);
    (dt * lb / (0.1 * eps)).ceil().max(1.0) as usize
}

fn blowup_bound(cs: &CoefficientSet) -> f64 {
    let (lo, hi) = cs.z_window();
    10.0 * lo.abs().max(hi.abs())
}

/// Euler-Maruyama integration of the plain pair. Deterministic in
/// `(seed, replica, dt)`; fails with [`Error::Unstable`] if the fast
/// component leaves ten times the validated window.
pub fn simulate_pair(
    cs: &CoefficientSet,
    eps: f64,
    t_horizon: f64,
    dt: f64,
    seed: u64,
    replica: u64,
) -> Result<PathPair> {
    assert!(dt > 0.0 && t_horizon > 0.0 && eps > 0.0);
    let substeps = substeps_for(cs, eps, dt);
    let t = uniform_grid(0.0, t_horizon, dt);
    let h = t[1] - t[0];
    let h_sub = h / substeps as f64;
    let bound = blowup_bound(cs);
    let mut w_rng = driver_rng(seed, replica, Driver::Slow);
    let mut v_rng = driver_rng(seed, replica, Driver::Fast);
    let mut x = Vec::with_capacity(t.len());
    let mut xi = Vec::with_capacity(t.len());
    let mut cx = cs.x0();
    let mut cz = cs.z0();
    x.push(cx);
    xi.push(cz);
    let sqrt_eh = (eps * h).sqrt();
    let sqrt_sub = (h_sub / eps).sqrt();
    for k in 1..t.len() {
        let nw: f64 = StandardNormal.sample(&mut w_rng);
        cx += cs.slow_drift(cx, cz) * h + sqrt_eh * cs.slow_diffusion(cx, cz) * nw;
        for _ in 0..substeps {
            let nv: f64 = StandardNormal.sample(&mut v_rng);
            cz += cs.fast_drift(cz) / eps * h_sub + sqrt_sub * cs.fast_diffusion(cz) * nv;
            if cz.abs() > bound {
                return Err(Error::Unstable { t: t[k], xi: cz, bound });
            }
        }
        x.push(cx);
        xi.push(cz);
    }
    Ok(PathPair { t, x, xi, eps, seed, replica, substeps })
}

/// Precomputed target-side quantities of the tilted system: the drift
/// correction `phi(t) = (Xdot_t - A_nu(t, X_t)) / B_nu(t, X_t)` along the
/// target and the tilt itself. Building this once amortizes the kernel
/// averages over replicas.
#[derive(Debug, Clone)]
pub struct TiltedSystem {
    cs: CoefficientSet,
    tilt: TiltControl,
    t: Vec<f64>,
    phi: Vec<f64>,
    beta: f64,
}

impl TiltedSystem {
    /// Fails with [`Error::DegenerateDiffusion`] when `B^2_nu + beta^2`
    /// falls below the floor along the target while the drift mismatch is
    /// nonzero; the caller must then regularize with `beta > 0`.
    pub fn new(
        cs: &CoefficientSet,
        p: &DensityTable,
        tilt: &TiltControl,
        target: &PathWithDerivative,
        beta: f64,
        t_horizon: f64,
        dt: f64,
    ) -> Result<Self> {
        assert!(
            target.horizon() >= t_horizon - 1e-12,
            "target must cover the simulation horizon"
        );
        let n = density_from_v(tilt, p, cs);
        let t = uniform_grid(0.0, t_horizon, dt);
        let mut phi = Vec::with_capacity(t.len());
        for &tk in &t {
            let xt = target.value_at(tk);
            let xdot = target.derivative_at(tk);
            let row = n.row(n_row_for(&n, tk));
            let a_ys: Vec<f64> = n
                .z
                .iter()
                .zip(row.iter())
                .map(|(&z, &nv)| cs.slow_drift(xt, z) * nv)
                .collect();
            let b_ys: Vec<f64> = n
                .z
                .iter()
                .zip(row.iter())
                .map(|(&z, &nv)| cs.slow_diffusion(xt, z).powi(2) * nv)
                .collect();
            let a_nu = trapezoid(&n.z, &a_ys);
            let b2_nu = trapezoid(&n.z, &b_ys) + beta * beta;
            let num = xdot - a_nu;
            if b2_nu < DEGENERATE_FLOOR {
                if num.abs() > 1e-9 * (1.0 + xdot.abs()) {
                    return Err(Error::DegenerateDiffusion { b2: b2_nu, floor: DEGENERATE_FLOOR });
                }
                phi.push(0.0);
            } else {
                phi.push(num / b2_nu.sqrt());
            }
        }
        Ok(Self { cs: cs.clone(), tilt: tilt.clone(), t, phi, beta })
    }

    fn b_eff(&self, x: f64, z: f64) -> f64 {
        let b = self.cs.slow_diffusion(x, z);
        (b * b + self.beta * self.beta).sqrt()
    }
}

fn n_row_for(n: &crate::rate::SmoothDensity, t: f64) -> usize {
    crate::grid::cell_index(&n.t_edges, t).unwrap_or_else(|| {
        if t <= n.t_edges[0] {
            0
        } else {
            n.n_rows() - 1
        }
    })
}

/// One tilted trajectory with its Girsanov log-weight.
pub fn simulate_tilted_system(
    sys: &TiltedSystem,
    eps: f64,
    seed: u64,
    replica: u64,
) -> Result<(PathPair, LogWeight)> {
    let cs = &sys.cs;
    let t = &sys.t;
    let h = t[1] - t[0];
    let substeps = substeps_for(cs, eps, h);
    let h_sub = h / substeps as f64;
    let bound = blowup_bound(cs);
    let mut w_rng = driver_rng(seed, replica, Driver::Slow);
    let mut v_rng = driver_rng(seed, replica, Driver::Fast);
    let mut x = Vec::with_capacity(t.len());
    let mut xi = Vec::with_capacity(t.len());
    let mut cx = cs.x0();
    let mut cz = cs.z0();
    x.push(cx);
    xi.push(cz);
    let sqrt_h = h.sqrt();
    let sqrt_eh = (eps * h).sqrt();
    let sqrt_sub = h_sub.sqrt();
    let sqrt_sub_eps = (h_sub / eps).sqrt();
    let (mut m_eps, mut qv_eps, mut m, mut qv) = (0.0, 0.0, 0.0, 0.0);
    for k in 1..t.len() {
        let tk = t[k - 1];
        let phi = sys.phi[k - 1];
        let nw: f64 = StandardNormal.sample(&mut w_rng);
        let dw = sqrt_h * nw;
        let beff = sys.b_eff(cx, cz);
        let g = phi * beff + cs.slow_drift(cx, cz);
        cx += g * h + sqrt_eh * beff * nw;
        m -= phi * dw;
        qv += phi * phi * h;
        for s in 0..substeps {
            let ts = tk + s as f64 * h_sub;
            let nv: f64 = StandardNormal.sample(&mut v_rng);
            let dv = sqrt_sub * nv;
            let vt = sys.tilt.value_at(ts, cz);
            let sig = cs.fast_diffusion(cz);
            m_eps -= vt / sig * dv;
            qv_eps += (vt / sig).powi(2) * h_sub;
            cz += (cs.fast_drift(cz) + vt) / eps * h_sub + sqrt_sub_eps * sig * nv;
            if cz.abs() > bound {
                return Err(Error::Unstable { t: t[k], xi: cz, bound });
            }
        }
        x.push(cx);
        xi.push(cz);
    }
    let sqrt_eps = eps.sqrt();
    let lw = LogWeight {
        m_eps_term: m_eps / sqrt_eps,
        qv_eps_term: qv_eps / (2.0 * eps),
        m_term: m / sqrt_eps,
        qv_term: qv / (2.0 * eps),
        log_w: m_eps / sqrt_eps - qv_eps / (2.0 * eps) + m / sqrt_eps - qv / (2.0 * eps),
    };
    Ok((
        PathPair {
            t: t.clone(),
            x,
            xi,
            eps,
            seed,
            replica,
            substeps,
        },
        lw,
    ))
}

/// Tilted simulation in one call; see [`TiltedSystem`] for the amortized
/// variant used in replica loops.
#[allow(clippy::too_many_arguments)]
pub fn simulate_tilted(
    cs: &CoefficientSet,
    p: &DensityTable,
    tilt: &TiltControl,
    target: &PathWithDerivative,
    eps: f64,
    t_horizon: f64,
    dt: f64,
    seed: u64,
    replica: u64,
    beta: f64,
) -> Result<(PathPair, LogWeight)> {
    let sys = TiltedSystem::new(cs, p, tilt, target, beta, t_horizon, dt)?;
    simulate_tilted_system(&sys, eps, seed, replica)
}

/// Plain pair plus an independent `sqrt(eps) beta dW'` term on the slow
/// component. Couples pathwise to [`simulate_pair`] under the same seed.
pub fn simulate_regularized(
    cs: &CoefficientSet,
    beta: f64,
    eps: f64,
    t_horizon: f64,
    dt: f64,
    seed: u64,
    replica: u64,
) -> Result<PathPair> {
    if beta == 0.0 {
        return Err(Error::BadParam("beta must be nonzero".into()));
    }
    let substeps = substeps_for(cs, eps, dt);
    let t = uniform_grid(0.0, t_horizon, dt);
    let h = t[1] - t[0];
    let h_sub = h / substeps as f64;
    let bound = blowup_bound(cs);
    let mut w_rng = driver_rng(seed, replica, Driver::Slow);
    let mut v_rng = driver_rng(seed, replica, Driver::Fast);
    let mut e_rng = driver_rng(seed, replica, Driver::Extra);
    let mut x = Vec::with_capacity(t.len());
    let mut xi = Vec::with_capacity(t.len());
    let mut cx = cs.x0();
    let mut cz = cs.z0();
    x.push(cx);
    xi.push(cz);
    let sqrt_eh = (eps * h).sqrt();
    let sqrt_sub = (h_sub / eps).sqrt();
    for k in 1..t.len() {
        let nw: f64 = StandardNormal.sample(&mut w_rng);
        let ne: f64 = StandardNormal.sample(&mut e_rng);
        cx += cs.slow_drift(cx, cz) * h
            + sqrt_eh * (cs.slow_diffusion(cx, cz) * nw + beta * ne);
        for _ in 0..substeps {
            let nv: f64 = StandardNormal.sample(&mut v_rng);
            cz += cs.fast_drift(cz) / eps * h_sub + sqrt_sub * cs.fast_diffusion(cz) * nv;
            if cz.abs() > bound {
                return Err(Error::Unstable { t: t[k], xi: cz, bound });
            }
        }
        x.push(cx);
        xi.push(cz);
    }
    Ok(PathPair { t, x, xi, eps, seed, replica, substeps })
}
