//! Problem instances: a closed registry of analytic coefficient families and
//! numerical validation of the standing assumptions.
//!
//! An instance is the coefficient tuple of the slow/fast pair
//!
//! ```text
//! dX  = A(X, xi) dt + sqrt(eps) B(X, xi) dW
//! dxi = b(xi)/eps dt + sigma(xi)/sqrt(eps) dV
//! ```
//!
//! Coefficients come from named parametric families rather than from a
//! runtime expression parser, so every family carries an analytic
//! `sigma'` that is cross-checked against finite differences when the
//! instance is registered.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::uniform_grid;

/// Window on which registration-time finite-difference checks run and from
/// which the simulation stability bound is derived.
pub const DEFAULT_Z_WINDOW: (f64, f64) = (-6.0, 6.0);

/// Finite-window surrogate bound for the `sup_z (|A(0,z)| + |B(0,z)|)`
/// condition. The condition itself has no scale; any window whose sampled
/// sup exceeds this bound is reported as failing.
pub const A1_SUP_BOUND: f64 = 100.0;

const SIGMA_PRIME_CHECK_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    /// `b = -kappa z`, `sigma = s`, `A = a1 z + a2 x + a3`,
    /// `B = b1 + b2 tanh(x) + b3 z`.
    OuLinear {
        kappa: f64,
        s: f64,
        a1: f64,
        a2: f64,
        a3: f64,
        b1: f64,
        b2: f64,
        b3: f64,
    },
    /// `b = z - z^3`, `sigma = s`, slow coefficients as in `ou_linear`
    /// without the `b3 z` term.
    DoubleWellFast {
        s: f64,
        a1: f64,
        a2: f64,
        a3: f64,
        b1: f64,
        b2: f64,
    },
    /// Bounded smooth test forms: `A = a1 tanh(z) + a2 sin(x) + a3`,
    /// `B = b1 + b2 cos(x) / (1 + z^2)`, `b = -kappa z`,
    /// `sigma = s0 + s1 / (1 + z^2)`.
    BoundedSmooth {
        kappa: f64,
        s0: f64,
        s1: f64,
        a1: f64,
        a2: f64,
        a3: f64,
        b1: f64,
        b2: f64,
    },
}

/// A validated problem instance. Cheap to clone and safe to share across
/// threads; all coefficient evaluations are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    family_id: String,
    family: Family,
    x0: f64,
    z0: f64,
    /// Max finite-difference quotient of `b` over the registration window.
    lipschitz_b: f64,
    /// Window used for registration checks; simulations treat ten times its
    /// half-width as the blow-up bound.
    z_window: (f64, f64),
}

impl CoefficientSet {
    /// Slow drift `A(x, z)`.
    pub fn slow_drift(&self, x: f64, z: f64) -> f64 {
        match self.family {
            Family::OuLinear { a1, a2, a3, .. } => a1 * z + a2 * x + a3,
            Family::DoubleWellFast { a1, a2, a3, .. } => a1 * z + a2 * x + a3,
            Family::BoundedSmooth { a1, a2, a3, .. } => a1 * z.tanh() + a2 * x.sin() + a3,
        }
    }

    /// Slow diffusion coefficient `B(x, z)`.
    pub fn slow_diffusion(&self, x: f64, z: f64) -> f64 {
        match self.family {
            Family::OuLinear { b1, b2, b3, .. } => b1 + b2 * x.tanh() + b3 * z,
            Family::DoubleWellFast { b1, b2, .. } => b1 + b2 * x.tanh(),
            Family::BoundedSmooth { b1, b2, .. } => b1 + b2 * x.cos() / (1.0 + z * z),
        }
    }

    /// Fast drift `b(z)`.
    pub fn fast_drift(&self, z: f64) -> f64 {
        match self.family {
            Family::OuLinear { kappa, .. } => -kappa * z,
            Family::DoubleWellFast { .. } => z - z * z * z,
            Family::BoundedSmooth { kappa, .. } => -kappa * z,
        }
    }

    /// Fast diffusion coefficient `sigma(z)`; positive by registration.
    pub fn fast_diffusion(&self, z: f64) -> f64 {
        match self.family {
            Family::OuLinear { s, .. } => s,
            Family::DoubleWellFast { s, .. } => s,
            Family::BoundedSmooth { s0, s1, .. } => s0 + s1 / (1.0 + z * z),
        }
    }

    /// Analytic derivative `sigma'(z)`.
    pub fn fast_diffusion_deriv(&self, z: f64) -> f64 {
        match self.family {
            Family::OuLinear { .. } | Family::DoubleWellFast { .. } => 0.0,
            Family::BoundedSmooth { s1, .. } => {
                let d = 1.0 + z * z;
                -2.0 * s1 * z / (d * d)
            }
        }
    }

    pub fn family_id(&self) -> &str {
        &self.family_id
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    /// Finite-difference Lipschitz estimate for `b` used by the simulation
    /// step-size gate.
    pub fn fast_drift_lipschitz(&self) -> f64 {
        self.lipschitz_b
    }

    pub fn z_window(&self) -> (f64, f64) {
        self.z_window
    }

    /// True when `B` vanishes on the sampled registration windows.
    pub fn slow_diffusion_is_zero(&self) -> bool {
        let (zlo, zhi) = self.z_window;
        for &x in uniform_grid(-5.0, 5.0, 0.5).iter() {
            for &z in uniform_grid(zlo, zhi, 0.5).iter() {
                if self.slow_diffusion(x, z).abs() > 1e-14 {
                    return false;
                }
            }
        }
        true
    }

    /// Max deviation between the analytic `sigma'` and a central difference
    /// over the registration window (interior nodes), scaled by
    /// `1 + |sigma'|`.
    pub fn sigma_prime_deviation(&self, window: (f64, f64), step: f64) -> f64 {
        let grid = uniform_grid(window.0, window.1, step);
        let h = grid[1] - grid[0];
        let mut worst = 0.0f64;
        for i in 1..grid.len() - 1 {
            let z = grid[i];
            let cd = (self.fast_diffusion(z + h) - self.fast_diffusion(z - h)) / (2.0 * h);
            let analytic = self.fast_diffusion_deriv(z);
            let dev = (analytic - cd).abs() / (1.0 + analytic.abs());
            worst = worst.max(dev);
        }
        worst
    }
}

fn take_params(
    params: &BTreeMap<String, f64>,
    known: &[(&str, f64)],
) -> Result<BTreeMap<String, f64>> {
    for key in params.keys() {
        if key != "x0" && key != "z0" && !known.iter().any(|(k, _)| k == key) {
            return Err(Error::BadParam(format!("unknown key `{key}`")));
        }
    }
    let mut out = BTreeMap::new();
    for (k, default) in known {
        out.insert(k.to_string(), *params.get(*k).copied().as_ref().unwrap_or(default));
    }
    Ok(out)
}

/// Builds a [`CoefficientSet`] for one of the built-in families.
///
/// Recognized ids: `ou_linear`, `double_well_fast`, `bounded_smooth`.
/// `params` may carry `x0` / `z0` alongside the family parameters; omitted
/// parameters take documented defaults. Structural violations (nonpositive
/// `sigma`, unknown keys, analytic/numeric `sigma'` mismatch) are rejected
/// here; assumption violations are the job of [`validate_assumptions`].
pub fn register_family(family_id: &str, params: &BTreeMap<String, f64>) -> Result<CoefficientSet> {
    let sqrt2 = std::f64::consts::SQRT_2;
    let family = match family_id {
        "ou_linear" => {
            let p = take_params(
                params,
                &[
                    ("kappa", 1.0),
                    ("s", sqrt2),
                    ("a1", 1.0),
                    ("a2", -1.0),
                    ("a3", 0.0),
                    ("b1", 1.0),
                    ("b2", 0.0),
                    ("b3", 0.0),
                ],
            )?;
            if p["s"] <= 0.0 {
                return Err(Error::BadParam(format!("sigma must be positive, got s = {}", p["s"])));
            }
            Family::OuLinear {
                kappa: p["kappa"],
                s: p["s"],
                a1: p["a1"],
                a2: p["a2"],
                a3: p["a3"],
                b1: p["b1"],
                b2: p["b2"],
                b3: p["b3"],
            }
        }
        "double_well_fast" => {
            let p = take_params(
                params,
                &[
                    ("s", sqrt2),
                    ("a1", 1.0),
                    ("a2", -1.0),
                    ("a3", 0.0),
                    ("b1", 1.0),
                    ("b2", 0.0),
                ],
            )?;
            if p["s"] <= 0.0 {
                return Err(Error::BadParam(format!("sigma must be positive, got s = {}", p["s"])));
            }
            Family::DoubleWellFast {
                s: p["s"],
                a1: p["a1"],
                a2: p["a2"],
                a3: p["a3"],
                b1: p["b1"],
                b2: p["b2"],
            }
        }
        "bounded_smooth" => {
            let p = take_params(
                params,
                &[
                    ("kappa", 1.0),
                    ("s0", 1.0),
                    ("s1", 0.5),
                    ("a1", 1.0),
                    ("a2", 0.5),
                    ("a3", 0.0),
                    ("b1", 1.0),
                    ("b2", 0.5),
                ],
            )?;
            if p["s0"] <= 0.0 || p["s0"] + p["s1"].min(0.0) <= 0.0 {
                return Err(Error::BadParam(format!(
                    "sigma must stay positive: s0 = {}, s1 = {}",
                    p["s0"], p["s1"]
                )));
            }
            Family::BoundedSmooth {
                kappa: p["kappa"],
                s0: p["s0"],
                s1: p["s1"],
                a1: p["a1"],
                a2: p["a2"],
                a3: p["a3"],
                b1: p["b1"],
                b2: p["b2"],
            }
        }
        other => return Err(Error::UnknownFamily(other.to_string())),
    };

    let mut cs = CoefficientSet {
        family_id: family_id.to_string(),
        family,
        x0: params.get("x0").copied().unwrap_or(0.0),
        z0: params.get("z0").copied().unwrap_or(0.0),
        lipschitz_b: 0.0,
        z_window: DEFAULT_Z_WINDOW,
    };

    let dev = cs.sigma_prime_deviation(cs.z_window, SIGMA_PRIME_CHECK_STEP);
    if dev > 1e-6 {
        return Err(Error::BadParam(format!(
            "analytic sigma' deviates from central differences by {dev:.3e}"
        )));
    }

    // Max |b(z+h) - b(z)| / h over the registration window.
    let grid = uniform_grid(cs.z_window.0, cs.z_window.1, SIGMA_PRIME_CHECK_STEP);
    let h = grid[1] - grid[0];
    let mut lip = 0.0f64;
    for i in 1..grid.len() {
        lip = lip.max(((cs.fast_drift(grid[i]) - cs.fast_drift(grid[i - 1])) / h).abs());
    }
    cs.lipschitz_b = lip;
    Ok(cs)
}

/// Pass/fail with the margin by which the check passed (negative when it
/// failed).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Verdicts {
    pub a1: Verdict,
    pub a2: Verdict,
    pub a3: Verdict,
}

/// Numerical report on the standing assumptions over finite windows.
///
/// Lipschitz constants are max finite-difference quotients; they are
/// reported, not asserted against a bound. The confinement check is a
/// finite-window surrogate: `b(z) sign(z)` must decrease strictly across the
/// tail checkpoints of the window.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AssumptionReport {
    #[serde(rename = "lipschitz_A_in_x")]
    pub lipschitz_a_in_x: f64,
    #[serde(rename = "lipschitz_B_in_x")]
    pub lipschitz_b_in_x: f64,
    #[serde(rename = "sup_A0_B0")]
    pub sup_a0_b0: f64,
    pub sigma_bounds: (f64, f64),
    /// `(z, b(z) sign z)` at the tail checkpoints, outermost last.
    pub confinement_profile: Vec<(f64, f64)>,
    pub verdicts: Verdicts,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.a1.pass && self.verdicts.a2.pass && self.verdicts.a3.pass
    }
}

/// Samples the assumption checks on `z_window x x_window` with the given
/// grid step. Failures are reported as verdicts, never as errors.
pub fn validate_assumptions(
    cs: &CoefficientSet,
    z_window: (f64, f64),
    x_window: (f64, f64),
    grid_step: f64,
) -> AssumptionReport {
    assert!(z_window.1 > z_window.0 && x_window.1 > x_window.0, "windows must be nonempty");
    assert!(grid_step > 0.0, "grid_step must be positive");
    let zs = uniform_grid(z_window.0, z_window.1, grid_step);
    let xs = uniform_grid(x_window.0, x_window.1, grid_step);
    let hx = xs[1] - xs[0];

    // Lipschitz quotients of A and B in x, uniformly over sampled z.
    let mut lip_a = 0.0f64;
    let mut lip_b = 0.0f64;
    // Coarsen the z sweep for the x-quotients; the quotient is taken at full
    // x resolution for every retained z.
    let z_stride = (zs.len() / 64).max(1);
    for z in zs.iter().step_by(z_stride) {
        for i in 1..xs.len() {
            let qa = ((cs.slow_drift(xs[i], *z) - cs.slow_drift(xs[i - 1], *z)) / hx).abs();
            let qb = ((cs.slow_diffusion(xs[i], *z) - cs.slow_diffusion(xs[i - 1], *z)) / hx).abs();
            lip_a = lip_a.max(qa);
            lip_b = lip_b.max(qb);
        }
    }

    let mut sup_a0_b0 = 0.0f64;
    for &z in &zs {
        sup_a0_b0 = sup_a0_b0.max(cs.slow_drift(0.0, z).abs() + cs.slow_diffusion(0.0, z).abs());
    }
    let a1_margin = A1_SUP_BOUND - sup_a0_b0;

    let mut sig_min = f64::INFINITY;
    let mut sig_max = f64::NEG_INFINITY;
    for &z in &zs {
        let s = cs.fast_diffusion(z);
        sig_min = sig_min.min(s);
        sig_max = sig_max.max(s);
    }

    // Tail profile: four checkpoints on the outer 10% of each side of the
    // window; b(z) sign z must strictly decrease outward on both sides.
    let mut profile = Vec::new();
    let mut a3_margin = f64::INFINITY;
    for side in [-1.0, 1.0] {
        let edge = if side < 0.0 { z_window.0 } else { z_window.1 };
        let inner = edge * 0.9;
        let pts = 4;
        let mut prev: Option<f64> = None;
        for k in 0..pts {
            let z = inner + (edge - inner) * k as f64 / (pts - 1) as f64;
            let val = cs.fast_drift(z) * side;
            profile.push((z, val));
            if let Some(p) = prev {
                a3_margin = a3_margin.min(p - val);
            }
            prev = Some(val);
        }
    }
    profile.sort_by(|a, b| a.0.abs().partial_cmp(&b.0.abs()).unwrap());

    AssumptionReport {
        lipschitz_a_in_x: lip_a,
        lipschitz_b_in_x: lip_b,
        sup_a0_b0,
        sigma_bounds: (sig_min, sig_max),
        confinement_profile: profile,
        verdicts: Verdicts {
            a1: Verdict { pass: a1_margin >= 0.0 && lip_a.is_finite() && lip_b.is_finite(), margin: a1_margin },
            a2: Verdict { pass: sig_min > 0.0, margin: sig_min },
            a3: Verdict { pass: a3_margin > 0.0, margin: a3_margin },
        },
    }
}

/// The standard testbed: `b = -z`, `sigma = sqrt(2)`, `A = z - x`, `B = 1`.
/// Its fast component has the standard normal as invariant density.
pub fn ou_testbed() -> CoefficientSet {
    register_family("ou_linear", &BTreeMap::new()).expect("default ou_linear is valid")
}
