//! Action functionals of the slow/fast pair and their Legendre dualities.
//!
//! For a path `X` and a measure `nu` with kernel density `n(t, z)` the two
//! ingredients of the rate are
//!
//! ```text
//! S_T = int_0^T (Xdot - A_nu)^2 / B^2_nu dt
//! F_T = int_0^T int sigma^2(z) [n_z/n - p'/p]^2 n dz dt
//! L_T = S_T / 2 + F_T / 8
//! ```
//!
//! with the conventions `0/0 = 0` and `L = inf` on the non-absolutely-
//! continuous branches. `S_T` is stored unhalved; the `1/2` enters only in
//! `L_T`.
//!
//! Densities and drift tilts are two charts of the same object: a tilt
//! `v(t, z)` compactly supported in `z` induces the density
//! `n ~ p exp(2 int_0^z v / sigma^2)` per time slice, and conversely
//! `v = sigma^2/2 (n_z/n - p'/p)`. Both directions are implemented and are
//! exact inverses on the grid.

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{central_differences, cumulative_trapezoid, interp_linear, trapezoid};
use crate::invariant::DensityTable;
use crate::model::CoefficientSet;
use crate::occupation::GridMeasure;
use crate::path::{Path, PathWithDerivative};

/// Floor below which an averaged squared diffusion counts as degenerate.
pub const DEGENERATE_FLOOR: f64 = 1e-10;

/// Fraction of a time row's mass that a single z cell may carry (after
/// smoothing at the minimum admissible bandwidth) before the measure is
/// declared non-absolutely-continuous.
pub const NON_AC_CELL_FRACTION: f64 = 0.01;

/// Drift tilt `v(t, z)`: piecewise constant in `t` over the cells of
/// `t_edges`, tabulated in `z`, identically zero outside `support`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltControl {
    pub t_edges: Vec<f64>,
    pub z: Vec<f64>,
    /// Row-major `(t cells) x (z nodes)`.
    pub v: Vec<f64>,
    pub support: (f64, f64),
}

impl TiltControl {
    pub fn new(t_edges: Vec<f64>, z: Vec<f64>, v: Vec<f64>, support: (f64, f64)) -> Self {
        assert!(t_edges.len() >= 2);
        assert_eq!(v.len(), (t_edges.len() - 1) * z.len());
        Self { t_edges, z, v, support }
    }

    /// Single time cell `[0, t_horizon]`.
    pub fn time_constant(t_horizon: f64, z: Vec<f64>, v: Vec<f64>, support: (f64, f64)) -> Self {
        Self::new(vec![0.0, t_horizon], z, v, support)
    }

    pub fn n_rows(&self) -> usize {
        self.t_edges.len() - 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.v[i * self.z.len()..(i + 1) * self.z.len()]
    }

    fn row_for(&self, t: f64) -> usize {
        crate::grid::cell_index(&self.t_edges, t).unwrap_or_else(|| {
            if t <= self.t_edges[0] {
                0
            } else {
                self.n_rows() - 1
            }
        })
    }

    /// `v(t, z)`, linear in `z` inside the grid, zero outside the support.
    pub fn value_at(&self, t: f64, z: f64) -> f64 {
        if z < self.support.0 || z > self.support.1 {
            return 0.0;
        }
        let row = self.row(self.row_for(t));
        interp_linear(&self.z, row, z)
    }
}

/// Positive kernel density `n(t, z)`, piecewise constant in `t` over
/// `t_edges`, with its z derivative and per-row normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothDensity {
    pub t_edges: Vec<f64>,
    pub z: Vec<f64>,
    /// Row-major `(t cells) x (z nodes)`.
    pub n: Vec<f64>,
    pub n_z: Vec<f64>,
    pub per_t_norm: Vec<f64>,
}

impl SmoothDensity {
    pub fn n_rows(&self) -> usize {
        self.t_edges.len() - 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.n[i * self.z.len()..(i + 1) * self.z.len()]
    }

    pub fn row_nz(&self, i: usize) -> &[f64] {
        &self.n_z[i * self.z.len()..(i + 1) * self.z.len()]
    }

    pub fn horizon(&self) -> f64 {
        *self.t_edges.last().unwrap()
    }
}

/// Why a rate component is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfiniteReason {
    NonAcPath,
    NonAcDensity,
    DegenerateDiffusion,
}

/// The rate triple. `l_t = s_t/2 + f_t/8` whenever both parts are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RateBreakdown {
    pub s_t: f64,
    pub f_t: f64,
    pub l_t: f64,
    /// L-weighted change of the quadratures under coarsening the grids by a
    /// factor of two (a Richardson-style error proxy; data-defined grids
    /// cannot be refined).
    pub quad_error: f64,
    pub infinite_reason: Option<InfiniteReason>,
}

impl Serialize for RateBreakdown {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        fn num_or_inf<S: SerializeStruct>(
            st: &mut S,
            key: &'static str,
            x: f64,
        ) -> std::result::Result<(), S::Error> {
            if x.is_infinite() {
                st.serialize_field(key, if x > 0.0 { "inf" } else { "-inf" })
            } else {
                st.serialize_field(key, &x)
            }
        }
        let mut st = serializer.serialize_struct("RateBreakdown", 5)?;
        num_or_inf(&mut st, "S_T", self.s_t)?;
        num_or_inf(&mut st, "F_T", self.f_t)?;
        num_or_inf(&mut st, "L_T", self.l_t)?;
        st.serialize_field("quad_error", &self.quad_error)?;
        st.serialize_field("infinite_reason", &self.infinite_reason)?;
        st.end()
    }
}

/// Averaged coefficients along a path, one value per path node:
/// `A_nu(t_k, X_k)` and `B^2_nu(t_k, X_k) + beta^2` with the kernel taken
/// from the time cell containing `t_k`.
#[derive(Debug, Clone)]
pub struct NodeCoefficients {
    pub t: Vec<f64>,
    pub a_nu: Vec<f64>,
    pub b2_nu: Vec<f64>,
}

pub fn averaged_coeffs(
    cs: &CoefficientSet,
    m: &GridMeasure,
    path: &Path,
    beta: f64,
) -> NodeCoefficients {
    let mut a_nu = Vec::with_capacity(path.t.len());
    let mut b2_nu = Vec::with_capacity(path.t.len());
    for (k, &t) in path.t.iter().enumerate() {
        let i = crate::grid::cell_index(m.t_edges(), t)
            .unwrap_or_else(|| if t <= m.t_edges()[0] { 0 } else { m.n_time_cells() - 1 });
        let kernel = m.kernel_row(i);
        let x = path.x[k];
        let mut a = 0.0;
        let mut b2 = 0.0;
        for (j, w) in kernel.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let z = m.col_z_mid(j);
            a += w * cs.slow_drift(x, z);
            b2 += w * cs.slow_diffusion(x, z).powi(2);
        }
        a_nu.push(a);
        b2_nu.push(b2 + beta * beta);
    }
    NodeCoefficients { t: path.t.clone(), a_nu, b2_nu }
}

fn x0_mismatch(x_start: f64, x0: f64) -> bool {
    (x_start - x0).abs() > 1e-9 * (1.0 + x0.abs())
}

/// Freidlin-Wentzell part along a path with tabulated derivative, with the
/// `0/0 = 0` convention. Returns the integral and an infinity tag when the
/// path misses the initial point or hits a degenerate denominator with a
/// nonzero numerator.
pub fn action_s(
    xd: &PathWithDerivative,
    m: &GridMeasure,
    cs: &CoefficientSet,
    beta: f64,
) -> (f64, Option<InfiniteReason>) {
    if x0_mismatch(xd.x[0], cs.x0()) {
        return (f64::INFINITY, Some(InfiniteReason::NonAcPath));
    }
    let coeffs = averaged_coeffs(cs, m, &xd.path(), beta);
    action_s_nodes(xd, &coeffs, 1)
}

fn action_s_nodes(
    xd: &PathWithDerivative,
    coeffs: &NodeCoefficients,
    stride: usize,
) -> (f64, Option<InfiniteReason>) {
    let idx: Vec<usize> = (0..xd.t.len()).step_by(stride).collect();
    let mut ts = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    for &k in &idx {
        let num = xd.xdot[k] - coeffs.a_nu[k];
        let den = coeffs.b2_nu[k];
        if den < DEGENERATE_FLOOR {
            if num.abs() > 1e-9 * (1.0 + xd.xdot[k].abs()) {
                return (f64::INFINITY, Some(InfiniteReason::DegenerateDiffusion));
            }
            ts.push(xd.t[k]);
            ys.push(0.0);
        } else {
            ts.push(xd.t[k]);
            ys.push(num * num / den);
        }
    }
    if *ts.last().unwrap() < xd.horizon() {
        ts.push(xd.horizon());
        ys.push(*ys.last().unwrap());
    }
    (trapezoid(&ts, &ys), None)
}

/// True when some z cell of some time row holds more than
/// [`NON_AC_CELL_FRACTION`] of the row's mass after smoothing at the
/// minimum admissible bandwidth (one cell width). Such measures are treated
/// as non-absolutely-continuous and get `F = inf`.
pub fn is_non_ac(m: &GridMeasure) -> bool {
    let min_bw = min_bandwidth(m);
    let Ok(n) = density_estimate(m, min_bw) else {
        return true;
    };
    let widths: Vec<f64> = m
        .z_edges()
        .windows(2)
        .map(|w| w[1] - w[0])
        .collect();
    for i in 0..n.n_rows() {
        let row = n.row(i);
        // Mass of each interior cell under the smoothed density.
        for j in 0..widths.len() {
            let zmid = 0.5 * (m.z_edges()[j] + m.z_edges()[j + 1]);
            let dens = interp_linear(&n.z, row, zmid);
            if dens * widths[j] > NON_AC_CELL_FRACTION {
                return true;
            }
        }
    }
    false
}

/// Minimum admissible kernel bandwidth for a measure: one z cell width.
pub fn min_bandwidth(m: &GridMeasure) -> f64 {
    m.z_edges()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// Per-time-row Gaussian kernel smoothing of cell masses into a positive
/// density on the interior midpoint grid, renormalized per row. Overflow
/// mass is folded into the boundary cells first.
pub fn density_estimate(m: &GridMeasure, bandwidth: f64) -> Result<SmoothDensity> {
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    let n_int = m.z_edges().len() - 1;
    let mids: Vec<f64> = (0..n_int)
        .map(|j| 0.5 * (m.z_edges()[j] + m.z_edges()[j + 1]))
        .collect();
    let mut n = Vec::with_capacity(m.n_time_cells() * n_int);
    let mut per_t_norm = Vec::with_capacity(m.n_time_cells());
    let inv_bw2 = 1.0 / (bandwidth * bandwidth);
    for i in 0..m.n_time_cells() {
        let mut weights: Vec<f64> = (0..n_int).map(|j| m.mass_at(i, j + 1)).collect();
        weights[0] += m.mass_at(i, 0);
        weights[n_int - 1] += m.mass_at(i, m.n_z_cols() - 1);
        let mut row = vec![0.0; n_int];
        for (j, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let zj = mids[j];
            for (g, out) in mids.iter().zip(row.iter_mut()) {
                let d = g - zj;
                *out += w * (-0.5 * d * d * inv_bw2).exp();
            }
        }
        let norm = trapezoid(&mids, &row);
        // NaN-aware: any nonpositive (or NaN) node refuses the bandwidth.
        let positive = |v: f64| v.partial_cmp(&0.0) == Some(std::cmp::Ordering::Greater);
        if !positive(norm) || !row.iter().all(|v| positive(*v)) {
            return Err(Error::BandwidthTooSmall(bandwidth));
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
        per_t_norm.push(trapezoid(&mids, &row));
        n.extend_from_slice(&row);
    }
    let mut n_z = Vec::with_capacity(n.len());
    for i in 0..m.n_time_cells() {
        n_z.extend(central_differences(&mids, &n[i * n_int..(i + 1) * n_int]));
    }
    Ok(SmoothDensity {
        t_edges: m.t_edges().to_vec(),
        z: mids,
        n,
        n_z,
        per_t_norm,
    })
}

/// Relative-entropy production rate of a density against the invariant one:
/// `F_T = int_0^T int sigma^2 [n_z/n - p'/p]^2 n dz dt`.
pub fn dv_rate_f(n: &SmoothDensity, p: &DensityTable, cs: &CoefficientSet) -> f64 {
    dv_rate_f_strided(n, p, cs, 1)
}

fn dv_rate_f_strided(n: &SmoothDensity, p: &DensityTable, cs: &CoefficientSet, stride: usize) -> f64 {
    let idx: Vec<usize> = (0..n.z.len()).step_by(stride).collect();
    let zs: Vec<f64> = idx.iter().map(|&j| n.z[j]).collect();
    let mut total = 0.0;
    for i in 0..n.n_rows() {
        let row = n.row(i);
        let row_nz = n.row_nz(i);
        let ys: Vec<f64> = idx
            .iter()
            .map(|&j| {
                let nv = row[j];
                if nv <= 0.0 {
                    return 0.0;
                }
                let d = row_nz[j] / nv - p.score_at(n.z[j]);
                cs.fast_diffusion(n.z[j]).powi(2) * d * d * nv
            })
            .collect();
        let dt = n.t_edges[i + 1] - n.t_edges[i];
        total += dt * trapezoid(&zs, &ys);
    }
    total
}

/// Full rate evaluation: composes [`action_s`] with [`density_estimate`] +
/// [`dv_rate_f`], mapping refused density estimation to `F = inf`. The
/// invariant density is rebuilt on the default window; use [`rate_l_with`]
/// in sweeps.
pub fn rate_l(
    xd: &PathWithDerivative,
    m: &GridMeasure,
    cs: &CoefficientSet,
    beta: f64,
    bandwidth: f64,
) -> RateBreakdown {
    let p = crate::invariant::invariant_density(cs, (-8.0, 8.0), 1e-3)
        .expect("default window is wide enough for the built-in families");
    rate_l_with(xd, m, cs, &p, beta, bandwidth)
}

/// [`rate_l`] with a prebuilt invariant density.
pub fn rate_l_with(
    xd: &PathWithDerivative,
    m: &GridMeasure,
    cs: &CoefficientSet,
    p: &DensityTable,
    beta: f64,
    bandwidth: f64,
) -> RateBreakdown {
    let (s, mut reason) = action_s(xd, m, cs, beta);
    let coeffs = averaged_coeffs(cs, m, &xd.path(), beta);
    let s_half = if s.is_finite() { action_s_nodes(xd, &coeffs, 2).0 } else { s };
    let (f, f_half) = if is_non_ac(m) {
        if reason.is_none() {
            reason = Some(InfiniteReason::NonAcDensity);
        }
        (f64::INFINITY, f64::INFINITY)
    } else {
        match density_estimate(m, bandwidth.max(min_bandwidth(m))) {
            Ok(n) => (dv_rate_f(&n, p, cs), dv_rate_f_strided(&n, p, cs, 2)),
            Err(_) => {
                if reason.is_none() {
                    reason = Some(InfiniteReason::NonAcDensity);
                }
                (f64::INFINITY, f64::INFINITY)
            }
        }
    };
    let l = 0.5 * s + 0.125 * f;
    let quad_error = if l.is_finite() {
        0.5 * (s - s_half).abs() + 0.125 * (f - f_half).abs()
    } else {
        f64::NAN
    };
    RateBreakdown { s_t: s, f_t: f, l_t: l, quad_error, infinite_reason: reason }
}

/// Tilt chart of a density: `v = sigma^2/2 (n_z/n - p'/p)`; the support is
/// the hull of the nodes where `|v|` exceeds `1e-12` and `v` is zeroed
/// outside it.
pub fn v_from_density(n: &SmoothDensity, p: &DensityTable, cs: &CoefficientSet) -> TiltControl {
    let nz = n.z.len();
    let mut v = vec![0.0; n.n_rows() * nz];
    for i in 0..n.n_rows() {
        let row = n.row(i);
        let row_nz = n.row_nz(i);
        for j in 0..nz {
            let nv = row[j];
            if nv > 0.0 {
                let d = row_nz[j] / nv - p.score_at(n.z[j]);
                v[i * nz + j] = 0.5 * cs.fast_diffusion(n.z[j]).powi(2) * d;
            }
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n.n_rows() {
        for j in 0..nz {
            if v[i * nz + j].abs() > 1e-12 {
                lo = lo.min(n.z[j]);
                hi = hi.max(n.z[j]);
            }
        }
    }
    if lo > hi {
        lo = 0.0;
        hi = 0.0;
    }
    for i in 0..n.n_rows() {
        for j in 0..nz {
            if n.z[j] < lo || n.z[j] > hi {
                v[i * nz + j] = 0.0;
            }
        }
    }
    TiltControl::new(n.t_edges.clone(), n.z.clone(), v, (lo, hi))
}

/// Density chart of a tilt: `n(t, .) ~ p exp(2 int_0^z v/sigma^2)`,
/// normalized per time cell on the invariant density's grid. The stored
/// derivative is the analytic `n (p'/p + 2 v / sigma^2)`.
pub fn density_from_v(v: &TiltControl, p: &DensityTable, cs: &CoefficientSet) -> SmoothDensity {
    let z = p.z.clone();
    let nz = z.len();
    let mut n = Vec::with_capacity(v.n_rows() * nz);
    let mut n_z = Vec::with_capacity(v.n_rows() * nz);
    let mut per_t_norm = Vec::with_capacity(v.n_rows());
    for i in 0..v.n_rows() {
        let t_mid = 0.5 * (v.t_edges[i] + v.t_edges[i + 1]);
        let ratio: Vec<f64> = z
            .iter()
            .map(|&zz| 2.0 * v.value_at(t_mid, zz) / cs.fast_diffusion(zz).powi(2))
            .collect();
        let w = cumulative_trapezoid(&z, &ratio);
        let w_max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut row: Vec<f64> = p
            .p
            .iter()
            .zip(w.iter())
            .map(|(&pv, &ww)| pv * (ww - w_max).exp())
            .collect();
        let norm = trapezoid(&z, &row);
        for val in row.iter_mut() {
            *val = (*val / norm).max(f64::MIN_POSITIVE);
        }
        per_t_norm.push(trapezoid(&z, &row));
        for j in 0..nz {
            n_z.push(row[j] * (p.score[j] + ratio[j]));
        }
        n.extend_from_slice(&row);
    }
    SmoothDensity { t_edges: v.t_edges.clone(), z, n, n_z, per_t_norm }
}

/// Scalar drift-generator `Du = b u' + sigma^2/2 (u'' + (u')^2)`.
pub fn d_operator_scalar(cs: &CoefficientSet, z: f64, du: f64, ddu: f64) -> f64 {
    cs.fast_drift(z) * du + 0.5 * cs.fast_diffusion(z).powi(2) * (ddu + du * du)
}

/// Grid evaluation of the drift-generator on a tabulated profile.
pub fn d_operator(z: &[f64], du: &[f64], ddu: &[f64], cs: &CoefficientSet) -> Vec<f64> {
    assert_eq!(z.len(), du.len());
    assert_eq!(z.len(), ddu.len());
    z.iter()
        .zip(du.iter().zip(ddu.iter()))
        .map(|(&zz, (&d1, &d2))| d_operator_scalar(cs, zz, d1, d2))
        .collect()
}

/// Outcome of the path-side duality check.
#[derive(Debug, Clone, Serialize)]
pub struct LegendreSReport {
    /// Grid supremum over piecewise-constant multipliers.
    pub numeric_sup: f64,
    /// Closed form `1/2 int (Xdot - A_nu)^2 / B^2_nu dt`.
    pub closed_form: f64,
    /// `closed_form - numeric_sup` (nonnegative up to rounding).
    pub gap: f64,
    /// Declared bound `(grid step)^2 max B^2_nu / 2 * T`.
    pub gap_bound: f64,
}

/// Grid check of the quadratic duality for `S_T`: the per-node supremum of
/// `lambda (Xdot - A_nu) - lambda^2 B^2_nu / 2` over a finite multiplier
/// grid must match the quadratic vertex value up to the declared gap. The
/// grid must bracket the per-node maximizers `(Xdot - A_nu) / B^2_nu`.
pub fn legendre_s_check(
    xd: &PathWithDerivative,
    m: &GridMeasure,
    cs: &CoefficientSet,
    lambda_grid: &[f64],
) -> LegendreSReport {
    assert!(lambda_grid.len() >= 2);
    let coeffs = averaged_coeffs(cs, m, &xd.path(), 0.0);
    let mut sup_nodes = Vec::with_capacity(xd.t.len());
    let mut closed_nodes = Vec::with_capacity(xd.t.len());
    let mut max_b2 = 0.0f64;
    for k in 0..xd.t.len() {
        let a = xd.xdot[k] - coeffs.a_nu[k];
        let b2 = coeffs.b2_nu[k];
        max_b2 = max_b2.max(b2);
        let mut best = f64::NEG_INFINITY;
        for &l in lambda_grid {
            best = best.max(l * a - 0.5 * l * l * b2);
        }
        sup_nodes.push(best);
        closed_nodes.push(if b2 < DEGENERATE_FLOOR { 0.0 } else { 0.5 * a * a / b2 });
    }
    let numeric_sup = trapezoid(&xd.t, &sup_nodes);
    let closed_form = trapezoid(&xd.t, &closed_nodes);
    let step = lambda_grid
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0f64, f64::max);
    LegendreSReport {
        numeric_sup,
        closed_form,
        gap: closed_form - numeric_sup,
        gap_bound: 0.5 * step * step * max_b2 * xd.horizon() + 1e-9 * (1.0 + closed_form.abs()),
    }
}

/// Outcome of the measure-side duality check.
#[derive(Debug, Clone, Serialize)]
pub struct LegendreFReport {
    pub alphas: Vec<f64>,
    /// `J(alpha)`, the generator integral of the one-parameter test family.
    pub j_values: Vec<f64>,
    pub min_j: f64,
    /// `-F_T / 8`, the value the parabola's vertex must reach.
    pub target: f64,
    /// `|min_j - target|`.
    pub vertex_gap: f64,
}

/// Measure-side duality through the integrated-by-parts quadratic form:
/// for the family `v_alpha = alpha d` with `d = n_z/n - p'/p`,
///
/// ```text
/// J(alpha) = 1/2 int int sigma^2 (v^2 n + v (p'/p n - n_z)) dz dt
/// ```
///
/// which is the parabola `(alpha^2 - alpha) F_T / 2` with roots `{0, 1}` and
/// vertex `-F_T/8` at `alpha = 1/2`.
pub fn legendre_f_check(
    n: &SmoothDensity,
    p: &DensityTable,
    cs: &CoefficientSet,
    alpha_grid: &[f64],
) -> LegendreFReport {
    let f_t = dv_rate_f(n, p, cs);
    let nz = n.z.len();
    // Precompute d, n, and sigma^2 per node once.
    let mut j_values = Vec::with_capacity(alpha_grid.len());
    let mut per_node: Vec<(f64, f64, f64)> = Vec::with_capacity(n.n_rows() * nz); // (d, n, sig2)
    for i in 0..n.n_rows() {
        let row = n.row(i);
        let row_nz = n.row_nz(i);
        for j in 0..nz {
            let nv = row[j];
            let d = if nv > 0.0 { row_nz[j] / nv - p.score_at(n.z[j]) } else { 0.0 };
            per_node.push((d, nv, cs.fast_diffusion(n.z[j]).powi(2)));
        }
    }
    for &alpha in alpha_grid {
        let mut total = 0.0;
        for i in 0..n.n_rows() {
            let ys: Vec<f64> = (0..nz)
                .map(|j| {
                    let (d, nv, sig2) = per_node[i * nz + j];
                    let v = alpha * d;
                    // p'/p n - n_z = -d n by definition of d.
                    0.5 * sig2 * (v * v * nv + v * (-d * nv))
                })
                .collect();
            let dt = n.t_edges[i + 1] - n.t_edges[i];
            total += dt * trapezoid(&n.z, &ys);
        }
        j_values.push(total);
    }
    let min_j = j_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let target = -f_t / 8.0;
    LegendreFReport {
        alphas: alpha_grid.to_vec(),
        j_values,
        min_j,
        target,
        vertex_gap: (min_j - target).abs(),
    }
}

/// Truncates a tilt to `|z| <= k` and mollifies it with a compact
/// (triangular) kernel of the given half-width in `z` (and across time rows
/// when there are several). A width at or below the grid step degenerates
/// to the identity.
pub fn smooth_tilt(v: &TiltControl, k: f64, width: f64) -> TiltControl {
    let nz = v.z.len();
    let rows = v.n_rows();
    let mut truncated = vec![0.0; rows * nz];
    for i in 0..rows {
        for j in 0..nz {
            // Strict inequality so a zero radius clears the grid node at the
            // origin; the boundary node set has measure zero either way.
            if v.z[j].abs() < k {
                truncated[i * nz + j] = v.v[i * nz + j];
            }
        }
    }
    // Triangular kernel weights on the z grid.
    let mut out = vec![0.0; rows * nz];
    for i in 0..rows {
        for j in 0..nz {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            let mut jj = j;
            // walk left
            loop {
                let d = (v.z[j] - v.z[jj]).abs();
                if d > width {
                    break;
                }
                let w = 1.0 - d / width.max(f64::MIN_POSITIVE);
                if w > 0.0 {
                    acc += w * truncated[i * nz + jj];
                    wsum += w;
                }
                if jj == 0 {
                    break;
                }
                jj -= 1;
            }
            jj = j + 1;
            while jj < nz {
                let d = (v.z[jj] - v.z[j]).abs();
                if d > width {
                    break;
                }
                let w = 1.0 - d / width.max(f64::MIN_POSITIVE);
                if w > 0.0 {
                    acc += w * truncated[i * nz + jj];
                    wsum += w;
                }
                jj += 1;
            }
            out[i * nz + j] = if wsum > 0.0 { acc / wsum } else { truncated[i * nz + j] };
        }
    }
    // Time mollification across rows, weighted by row-midpoint distances.
    if rows > 1 {
        let mids: Vec<f64> = (0..rows)
            .map(|i| 0.5 * (v.t_edges[i] + v.t_edges[i + 1]))
            .collect();
        let mut out_t = vec![0.0; rows * nz];
        for i in 0..rows {
            for j in 0..nz {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (ii, &tm) in mids.iter().enumerate() {
                    let d = (mids[i] - tm).abs();
                    if d <= width {
                        let w = 1.0 - d / width.max(f64::MIN_POSITIVE);
                        acc += w * out[ii * nz + j];
                        wsum += w;
                    }
                }
                out_t[i * nz + j] = if wsum > 0.0 { acc / wsum } else { out[i * nz + j] };
            }
        }
        out = out_t;
    }
    let support = ((-k - width).max(v.z[0]), (k + width).min(*v.z.last().unwrap()));
    let mut tilt = TiltControl::new(v.t_edges.clone(), v.z.clone(), out, support);
    for i in 0..rows {
        for j in 0..nz {
            if tilt.z[j] < support.0 || tilt.z[j] > support.1 {
                tilt.v[i * nz + j] = 0.0;
            }
        }
    }
    tilt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_grid;
    use crate::invariant::{invariant_density, nu_p};
    use crate::model::{ou_testbed, register_family};
    use std::collections::BTreeMap;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn ou_density() -> (crate::model::CoefficientSet, DensityTable) {
        let cs = ou_testbed();
        let p = invariant_density(&cs, (-8.0, 8.0), 1e-3).unwrap();
        (cs, p)
    }

    fn fine_edges() -> Vec<f64> {
        uniform_grid(-6.0, 6.0, 0.02)
    }

    /// Density table of a standard normal shifted by theta, as a
    /// time-constant SmoothDensity over [0, horizon] with analytic n_z.
    fn shifted_normal_density(z: &[f64], theta: f64, horizon: f64) -> SmoothDensity {
        let n: Vec<f64> = z
            .iter()
            .map(|&zz| (-0.5 * (zz - theta) * (zz - theta)).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .collect();
        let n_z: Vec<f64> = z.iter().zip(n.iter()).map(|(&zz, &nv)| -(zz - theta) * nv).collect();
        let norm = trapezoid(z, &n);
        SmoothDensity {
            t_edges: vec![0.0, horizon],
            z: z.to_vec(),
            n: n.iter().map(|v| v / norm).collect(),
            n_z: n_z.iter().map(|v| v / norm).collect(),
            per_t_norm: vec![1.0],
        }
    }

    fn point_kernel_measure(t_cells: usize, horizon: f64, z_edges: &[f64], z_at: f64) -> GridMeasure {
        let t_edges = uniform_grid(0.0, horizon, horizon / t_cells as f64);
        let cols = z_edges.len() - 1 + 2;
        let mut mass = vec![0.0; t_cells * cols];
        let j = crate::grid::cell_index(z_edges, z_at).unwrap() + 1;
        for i in 0..t_cells {
            mass[i * cols + j] = 1.0;
        }
        GridMeasure::new(t_edges, z_edges.to_vec(), mass)
    }

    #[test]
    fn averaged_coeffs_zero_mean_kernel() {
        let (cs_base, p) = ou_density();
        // A(x, z) = z.
        let cs = register_family("ou_linear", &params(&[("a1", 1.0), ("a2", 0.0)])).unwrap();
        let m = nu_p(&p, 1.0, 4, &fine_edges());
        let path = crate::path::Path::constant(0.3, 1.0, 0.05);
        let coeffs = averaged_coeffs(&cs, &m, &path, 0.0);
        for a in &coeffs.a_nu {
            assert!(a.abs() < 1e-6, "A_nu = {a}");
        }
        drop(cs_base);
    }

    #[test]
    fn averaged_coeffs_point_kernel_is_exact() {
        let cs = ou_testbed();
        let z_edges = uniform_grid(-2.0, 2.0, 0.25);
        // Cell midpoint at 0.625.
        let m = point_kernel_measure(2, 1.0, &z_edges, 0.625);
        let path = crate::path::Path::constant(0.4, 1.0, 0.1);
        let coeffs = averaged_coeffs(&cs, &m, &path, 0.0);
        let expect = cs.slow_drift(0.4, 0.625);
        for a in &coeffs.a_nu {
            assert!((a - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn averaged_coeffs_beta_floor() {
        // B = 0 and beta = 0.5 gives B^2_nu = 0.25 exactly.
        let cs = register_family("ou_linear", &params(&[("b1", 0.0)])).unwrap();
        let p = invariant_density(&cs, (-8.0, 8.0), 1e-3).unwrap();
        let m = nu_p(&p, 1.0, 2, &fine_edges());
        let path = crate::path::Path::constant(0.0, 1.0, 0.1);
        let coeffs = averaged_coeffs(&cs, &m, &path, 0.5);
        for b2 in &coeffs.b2_nu {
            assert_eq!(*b2, 0.25);
        }
    }

    #[test]
    fn action_vanishes_on_averaged_flow() {
        let (cs, p) = ou_density();
        let m = nu_p(&p, 1.0, 10, &fine_edges());
        let xd = crate::invariant::averaged_ode(&cs, &p, 1.0, 1e-3);
        let (s, reason) = action_s(&xd, &m, &cs, 0.0);
        assert!(reason.is_none());
        assert!(s < 1e-8, "S = {s}");
    }

    #[test]
    fn action_of_unit_mismatch_is_one() {
        // A = 0, B = 1: with X_t = t the integrand is 1 on [0, 1].
        let cs = register_family("ou_linear", &params(&[("a1", 0.0), ("a2", 0.0)])).unwrap();
        let p = invariant_density(&cs, (-8.0, 8.0), 1e-3).unwrap();
        let m = nu_p(&p, 1.0, 5, &fine_edges());
        let t = uniform_grid(0.0, 1.0, 0.01);
        let xd = PathWithDerivative::new(t.clone(), t.clone(), vec![1.0; t.len()]);
        let (s, reason) = action_s(&xd, &m, &cs, 0.0);
        assert!(reason.is_none());
        assert!((s - 1.0).abs() < 1e-12, "S = {s}");
    }

    #[test]
    fn action_degenerate_denominator_is_infinite() {
        let cs = register_family(
            "ou_linear",
            &params(&[("a1", 0.0), ("a2", 0.0), ("b1", 0.0)]),
        )
        .unwrap();
        let p = invariant_density(&cs, (-8.0, 8.0), 1e-3).unwrap();
        let m = nu_p(&p, 1.0, 5, &fine_edges());
        let t = uniform_grid(0.0, 1.0, 0.01);
        let xd = PathWithDerivative::new(t.clone(), t.clone(), vec![1.0; t.len()]);
        let (s, reason) = action_s(&xd, &m, &cs, 0.0);
        assert!(s.is_infinite());
        assert_eq!(reason, Some(InfiniteReason::DegenerateDiffusion));
    }

    #[test]
    fn action_wrong_initial_point_is_infinite() {
        let (cs, p) = ou_density();
        let m = nu_p(&p, 1.0, 5, &fine_edges());
        let t = uniform_grid(0.0, 1.0, 0.01);
        let xd = PathWithDerivative::new(t.clone(), vec![1.0; t.len()], vec![0.0; t.len()]);
        let (s, reason) = action_s(&xd, &m, &cs, 0.0);
        assert!(s.is_infinite());
        assert_eq!(reason, Some(InfiniteReason::NonAcPath));
    }

    #[test]
    fn density_estimate_recovers_invariant_density() {
        // Smoothing oracle: the smoothed reference measure must match the
        // density table within 0.01 sup norm at bandwidth 0.1, grid 0.02.
        let (_, p) = ou_density();
        let m = nu_p(&p, 1.0, 2, &fine_edges());
        let n = density_estimate(&m, 0.1).unwrap();
        let mut worst = 0.0f64;
        for (j, &z) in n.z.iter().enumerate() {
            worst = worst.max((n.row(0)[j] - p.value_at(z)).abs());
        }
        assert!(worst <= 0.01, "sup error {worst}");
        for norm in &n.per_t_norm {
            assert!((norm - 1.0).abs() <= 1e-6);
        }
        // Time-constant measure: identical rows.
        assert_eq!(n.row(0), n.row(1));
    }

    #[test]
    fn density_estimate_rejects_vanishing_bandwidth() {
        // A concentrated measure leaves distant nodes at exactly zero when
        // the kernel is far too narrow.
        let m = point_kernel_measure(1, 1.0, &uniform_grid(-6.0, 6.0, 0.1), 0.05);
        let err = density_estimate(&m, 1e-4).unwrap_err();
        assert!(matches!(err, Error::BandwidthTooSmall(_)));
    }

    #[test]
    fn dv_rate_zero_for_invariant_density() {
        let (cs, p) = ou_density();
        let z = uniform_grid(-6.0, 6.0, 0.01);
        let n_vals: Vec<f64> = z.iter().map(|&zz| p.value_at(zz)).collect();
        let n_z: Vec<f64> = z
            .iter()
            .zip(n_vals.iter())
            .map(|(&zz, &nv)| nv * p.score_at(zz))
            .collect();
        let n = SmoothDensity {
            t_edges: vec![0.0, 1.0],
            z,
            n: n_vals,
            n_z,
            per_t_norm: vec![1.0],
        };
        // Zero up to interpolation rounding of the score between grid nodes.
        assert!(dv_rate_f(&n, &p, &cs) <= 1e-20);
    }

    #[test]
    fn dv_rate_shifted_normal_matches_quadrature_oracle() {
        // d = theta is constant, sigma^2 = 2, so F = 2 theta^2 T. The
        // oracle integrates sigma^2 theta^2 n independently.
        let (cs, p) = ou_density();
        let z = uniform_grid(-6.0, 6.0, 0.005);
        let theta = 1.0;
        let n = shifted_normal_density(&z, theta, 1.0);
        let f = dv_rate_f(&n, &p, &cs);
        let oracle_ys: Vec<f64> = z
            .iter()
            .zip(n.row(0).iter())
            .map(|(_, &nv)| 2.0 * theta * theta * nv)
            .collect();
        let oracle = trapezoid(&z, &oracle_ys);
        assert!((f - oracle).abs() <= 0.01 * oracle, "{f} vs oracle {oracle}");
        assert!((f - 2.0).abs() <= 0.02, "{f}");
    }

    #[test]
    fn dv_rate_scales_linearly_in_sigma_squared() {
        let (_, p) = ou_density();
        let cs1 = ou_testbed(); // sigma^2 = 2
        let cs4 = register_family("ou_linear", &params(&[("s", 2.0 * std::f64::consts::SQRT_2)]))
            .unwrap(); // sigma^2 = 8
        let z = uniform_grid(-6.0, 6.0, 0.01);
        let n = shifted_normal_density(&z, 0.7, 1.0);
        let f1 = dv_rate_f(&n, &p, &cs1);
        let f4 = dv_rate_f(&n, &p, &cs4);
        assert!((f4 - 4.0 * f1).abs() <= 1e-10 * f4.abs().max(1.0));
    }

    #[test]
    fn rate_l_zero_on_null_instance() {
        let (cs, p) = ou_density();
        let m = nu_p(&p, 1.0, 10, &fine_edges());
        let xd = crate::invariant::averaged_ode(&cs, &p, 1.0, 1e-3);
        let rb = rate_l_with(&xd, &m, &cs, &p, 0.0, 0.1);
        assert!(rb.infinite_reason.is_none(), "{:?}", rb.infinite_reason);
        assert!(rb.l_t.abs() <= 1e-4, "L = {}", rb.l_t);
    }

    #[test]
    fn rate_l_wrong_start_infinite() {
        let (cs, p) = ou_density();
        let m = nu_p(&p, 1.0, 10, &fine_edges());
        let t = uniform_grid(0.0, 1.0, 0.01);
        let xd = PathWithDerivative::new(t.clone(), vec![2.0; t.len()], vec![0.0; t.len()]);
        let rb = rate_l_with(&xd, &m, &cs, &p, 0.0, 0.1);
        assert!(rb.s_t.is_infinite() && rb.l_t.is_infinite());
        assert_eq!(rb.infinite_reason, Some(InfiniteReason::NonAcPath));
    }

    #[test]
    fn rate_l_point_kernel_is_non_ac() {
        let (cs, p) = ou_density();
        let m = point_kernel_measure(4, 1.0, &fine_edges(), 0.51);
        let xd = crate::invariant::averaged_ode(&cs, &p, 1.0, 1e-3);
        let rb = rate_l_with(&xd, &m, &cs, &p, 0.0, 0.1);
        assert!(rb.f_t.is_infinite());
        assert_eq!(rb.infinite_reason, Some(InfiniteReason::NonAcDensity));
    }

    #[test]
    fn tilt_chart_of_invariant_density_is_zero() {
        let (cs, p) = ou_density();
        let z = p.z.clone();
        let n_vals = p.p.clone();
        let n_z: Vec<f64> = z
            .iter()
            .zip(n_vals.iter())
            .map(|(&zz, &nv)| nv * p.score_at(zz))
            .collect();
        let n = SmoothDensity {
            t_edges: vec![0.0, 1.0],
            z,
            n: n_vals,
            n_z,
            per_t_norm: vec![1.0],
        };
        let v = v_from_density(&n, &p, &cs);
        assert!(v.v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn tilt_chart_of_shifted_normal_is_constant_theta() {
        // v = sigma^2/2 (n_z/n - p'/p) = theta for sigma^2 = 2.
        let (cs, p) = ou_density();
        let theta = 0.8;
        let n = shifted_normal_density(&p.z, theta, 1.0);
        let v = v_from_density(&n, &p, &cs);
        for (j, &z) in v.z.iter().enumerate() {
            if z.abs() <= 5.0 {
                assert!((v.v[j] - theta).abs() < 1e-9, "v({z}) = {}", v.v[j]);
            }
        }
    }

    #[test]
    fn density_from_constant_tilt_is_shifted_normal() {
        // Completing the square: p exp(theta z) ~ N(theta, 1) for the OU
        // testbed. Quadrature oracle on the closed form.
        let (cs, p) = ou_density();
        let theta = 1.0;
        let v_vals = vec![theta; p.z.len()];
        let tilt = TiltControl::time_constant(1.0, p.z.clone(), v_vals, (-8.0, 8.0));
        let n = density_from_v(&tilt, &p, &cs);
        let mut worst = 0.0f64;
        for (j, &z) in n.z.iter().enumerate() {
            let expect =
                (-0.5 * (z - theta) * (z - theta)).exp() / (2.0 * std::f64::consts::PI).sqrt();
            worst = worst.max((n.row(0)[j] - expect).abs());
        }
        assert!(worst <= 1e-6, "sup error {worst}");
    }

    #[test]
    fn tilt_density_round_trip() {
        let (cs, p) = ou_density();
        // A smooth compactly supported tilt.
        let v_vals: Vec<f64> = p
            .z
            .iter()
            .map(|&z| if z.abs() < 3.0 { 0.5 * (1.0 + (z * std::f64::consts::PI / 3.0).cos()) * z.sin() } else { 0.0 })
            .collect();
        let tilt = TiltControl::time_constant(1.0, p.z.clone(), v_vals, (-3.0, 3.0));
        let n = density_from_v(&tilt, &p, &cs);
        let v_back = v_from_density(&n, &p, &cs);
        let mut worst = 0.0f64;
        for j in 0..p.z.len() {
            worst = worst.max((v_back.v[j] - tilt.v[j]).abs());
        }
        assert!(worst <= 1e-8, "round trip sup {worst}");
        // And the other direction: density -> tilt -> density.
        let n2 = density_from_v(&v_back, &p, &cs);
        let mut worst_n = 0.0f64;
        for j in 0..n.n.len() {
            worst_n = worst_n.max((n.n[j] - n2.n[j]).abs());
        }
        assert!(worst_n <= 1e-8, "{worst_n}");
    }

    #[test]
    fn d_operator_basics() {
        let cs = ou_testbed();
        let z = uniform_grid(-1.0, 1.0, 0.1);
        let zero = vec![0.0; z.len()];
        assert!(d_operator(&z, &zero, &zero, &cs).iter().all(|x| *x == 0.0));
        // u = z^2/2 on |z| <= 1: Du = -z*z + 1*(1 + z^2) = 1.
        let du: Vec<f64> = z.clone();
        let ddu = vec![1.0; z.len()];
        for val in d_operator(&z, &du, &ddu, &cs) {
            assert!((val - 1.0).abs() < 1e-12);
        }
        // Nonlinearity witness: doubling u does not double Du.
        let du2: Vec<f64> = z.iter().map(|zz| 2.0 * zz).collect();
        let ddu2 = vec![2.0; z.len()];
        let once = d_operator_scalar(&cs, 0.5, 0.5, 1.0);
        let twice = d_operator_scalar(&cs, 0.5, 1.0, 2.0);
        assert!((twice - 2.0 * once).abs() > 0.1);
        drop((du2, ddu2));
    }

    #[test]
    fn legendre_s_unit_instance_gap_under_1e6() {
        // Xdot - A_nu = 1, B^2_nu = 1, T = 1: closed form 1/2, vertex at
        // lambda = 1; the grid step 1e-3 around 1 leaves a gap <= 1e-6.
        let cs = register_family("ou_linear", &params(&[("a1", 0.0), ("a2", 0.0)])).unwrap();
        let p = invariant_density(&cs, (-8.0, 8.0), 1e-3).unwrap();
        let m = nu_p(&p, 1.0, 5, &fine_edges());
        let t = uniform_grid(0.0, 1.0, 0.01);
        let xd = PathWithDerivative::new(t.clone(), t.clone(), vec![1.0; t.len()]);
        let lambda = uniform_grid(0.0, 2.0, 1e-3);
        let rep = legendre_s_check(&xd, &m, &cs, &lambda);
        assert!((rep.closed_form - 0.5).abs() < 1e-12);
        assert!(rep.gap.abs() <= 1e-6, "gap {}", rep.gap);
        assert!(rep.gap <= rep.gap_bound);
    }

    #[test]
    fn legendre_s_zero_mismatch_peaks_at_zero() {
        let (cs, p) = ou_density();
        let m = nu_p(&p, 1.0, 5, &fine_edges());
        let xd = crate::invariant::averaged_ode(&cs, &p, 1.0, 0.01);
        let lambda = uniform_grid(-1.0, 1.0, 0.01);
        let rep = legendre_s_check(&xd, &m, &cs, &lambda);
        assert!(rep.numeric_sup.abs() <= 1e-8, "{}", rep.numeric_sup);
        assert!(rep.closed_form <= 1e-8);
    }

    #[test]
    fn legendre_f_parabola_has_roots_and_vertex() {
        let (cs, p) = ou_density();
        let z = uniform_grid(-6.0, 6.0, 0.005);
        let n = shifted_normal_density(&z, 1.0, 1.0);
        let alphas = uniform_grid(0.0, 1.0, 0.5); // {0, 0.5, 1}
        let rep = legendre_f_check(&n, &p, &cs, &alphas);
        let f = -8.0 * rep.target;
        assert!(rep.j_values[0].abs() <= 1e-12 * f.max(1.0), "J(0) = {}", rep.j_values[0]);
        assert!(
            rep.j_values[2].abs() <= 1e-6 * f.max(1.0),
            "J(1) = {}",
            rep.j_values[2]
        );
        assert!(
            rep.vertex_gap <= 1e-6 * f.abs().max(1.0),
            "vertex gap {} (F = {f})",
            rep.vertex_gap
        );
    }

    #[test]
    fn smooth_tilt_identity_when_width_at_grid_step() {
        let (cs, p) = ou_density();
        let theta = 0.6;
        let n = shifted_normal_density(&p.z, theta, 1.0);
        let v = v_from_density(&n, &p, &cs);
        let step = p.z[1] - p.z[0];
        let smoothed = smooth_tilt(&v, 10.0, step);
        let mut worst = 0.0f64;
        for j in 0..v.v.len() {
            worst = worst.max((smoothed.v[j] - v.v[j]).abs());
        }
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn smooth_tilt_truncation_at_zero_kills_the_rate() {
        let (cs, p) = ou_density();
        let n = shifted_normal_density(&p.z, 1.0, 1.0);
        let v = v_from_density(&n, &p, &cs);
        let killed = smooth_tilt(&v, 0.0, 1e-9);
        assert!(killed.v.iter().all(|x| *x == 0.0));
        let n0 = density_from_v(&killed, &p, &cs);
        assert!(dv_rate_f(&n0, &p, &cs) <= 1e-20);
    }

    #[test]
    fn smooth_tilt_rate_recovers_with_support_radius() {
        // F(density_from_v(smooth_tilt(v, k, w))) climbs toward F(v) as the
        // truncation radius grows (quadrature oracle on each k).
        let (cs, p) = ou_density();
        let n_full = shifted_normal_density(&p.z, 1.0, 1.0);
        let v = v_from_density(&n_full, &p, &cs);
        let f_full = dv_rate_f(&density_from_v(&v, &p, &cs), &p, &cs);
        let mut f_ks = Vec::new();
        for &k in &[2.0, 4.0, 6.0] {
            let vk = smooth_tilt(&v, k, 0.05);
            let nk = density_from_v(&vk, &p, &cs);
            f_ks.push(dv_rate_f(&nk, &p, &cs));
        }
        assert!(f_ks[0] < f_ks[1] && f_ks[1] < f_ks[2], "{f_ks:?}");
        assert!((f_ks[2] - f_full).abs() / f_full < 0.01, "{} vs {f_full}", f_ks[2]);
    }

    #[test]
    fn f_is_additive_in_time_for_time_constant_density() {
        let (cs, p) = ou_density();
        let z = uniform_grid(-6.0, 6.0, 0.01);
        let full = shifted_normal_density(&z, 0.5, 1.0);
        let mut first = shifted_normal_density(&z, 0.5, 0.5);
        let mut second = shifted_normal_density(&z, 0.5, 0.5);
        second.t_edges = vec![0.5, 1.0];
        let f_full = dv_rate_f(&full, &p, &cs);
        let f_halves = dv_rate_f(&first, &p, &cs) + dv_rate_f(&second, &p, &cs);
        assert!((f_full - f_halves).abs() <= 1e-10, "{f_full} vs {f_halves}");
        first.t_edges = vec![0.0, 0.5];
    }

    #[test]
    fn rate_breakdown_serializes_inf_as_literal() {
        let rb = RateBreakdown {
            s_t: f64::INFINITY,
            f_t: 1.5,
            l_t: f64::INFINITY,
            quad_error: f64::NAN,
            infinite_reason: Some(InfiniteReason::NonAcPath),
        };
        let js = serde_json::to_string(&rb).unwrap();
        assert!(js.contains("\"S_T\":\"inf\""), "{js}");
        assert!(js.contains("\"F_T\":1.5"));
        assert!(js.contains("non_ac_path"));
    }
}
