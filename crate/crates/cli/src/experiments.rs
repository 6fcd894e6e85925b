//! Experiment runners: each consumes the parsed config, writes its output
//! files under the output directory, and returns a one-line summary.

use std::fs;
use std::path::Path as FsPath;

use ldp_core::grid::{trapezoid, uniform_grid};
use ldp_core::invariant::{averaged_ode, invariant_density, nu_p, DensityTable};
use ldp_core::model::{register_family, validate_assumptions, CoefficientSet};
use ldp_core::occupation::{occupation_measure, GridMeasure};
use ldp_core::path::PathWithDerivative;
use ldp_core::rare_event::{
    crude_ball_probability, ergodic_check, is_ball_probability, ldp_slope, BallTarget,
    ErgodicOptions, Estimate, TiltedOptions,
};
use ldp_core::rate::{
    density_from_v, legendre_f_check, legendre_s_check, rate_l_with, smooth_tilt, SmoothDensity,
    TiltControl,
};
use ldp_core::simulate::{simulate_pair, PathPair};
use ldp_core::variational::{hxy, OptimizerParams};
use serde::Serialize;

use crate::config::{ExperimentConfig, GridsConfig, MethodKind, RunConfig, TargetKind};

/// Failure classes mapped to process exit codes by `main`.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: malformed config, unknown names, unreadable files.
    Usage(String),
    /// Exit 2: assumption validation failed under `--strict`.
    Assumptions,
    /// Exit 3: numerical failure inside an experiment.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Assumptions => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) => format!("config error: {m}"),
            CliError::Assumptions => "assumption validation failed (strict mode)".to_string(),
            CliError::Numerical(m) => format!("numerical failure: {m}"),
        }
    }
}

fn numerical(e: ldp_core::Error) -> CliError {
    CliError::Numerical(e.to_string())
}

/// Registration and window errors are config problems, not numerics.
fn usage(e: ldp_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub struct Outcome {
    pub summary: String,
}

fn build_instance(cfg: &RunConfig) -> Result<CoefficientSet, CliError> {
    let mut params = cfg.instance.params.clone();
    if let Some(x0) = cfg.instance.x0 {
        params.insert("x0".to_string(), x0);
    }
    if let Some(z0) = cfg.instance.z0 {
        params.insert("z0".to_string(), z0);
    }
    register_family(&cfg.instance.family, &params).map_err(usage)
}

fn density(cs: &CoefficientSet, grids: &GridsConfig) -> Result<DensityTable, CliError> {
    invariant_density(cs, (grids.z_window[0], grids.z_window[1]), grids.z_step).map_err(numerical)
}

fn measure_edges(grids: &GridsConfig) -> Vec<f64> {
    uniform_grid(
        grids.measure_window[0],
        grids.measure_window[1],
        (grids.measure_window[1] - grids.measure_window[0]) / grids.z_cells as f64,
    )
}

fn write(out_dir: &FsPath, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out_dir.display())))?;
    let path = out_dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(out_dir: &FsPath, name: &str, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Usage(format!("serialization: {e}")))?;
    s.push('\n');
    write(out_dir, name, &s)
}

/// Ball target for the estimate/slope experiments. The `shifted` variant
/// tilts the fast drift by a mollified constant `theta sigma^2/2`, takes the
/// induced kernel as the measure, and follows the tilted averaged flow.
fn build_target(
    cs: &CoefficientSet,
    p: &DensityTable,
    grids: &GridsConfig,
    target: TargetKind,
    theta: f64,
) -> Result<(BallTarget, Option<TiltControl>), CliError> {
    let edges = measure_edges(grids);
    match target {
        TargetKind::Averaged => {
            let xbar = averaged_ode(cs, p, grids.t_horizon, grids.dt);
            let m = nu_p(p, grids.t_horizon, grids.t_cells, &edges);
            Ok((BallTarget { path: xbar, measure: Some(m) }, None))
        }
        TargetKind::Shifted => {
            let support = grids.measure_window[0].max(-4.0)..grids.measure_window[1].min(4.0);
            let raw: Vec<f64> = p
                .z
                .iter()
                .map(|&z| {
                    if z >= support.start && z <= support.end {
                        0.5 * theta * cs.fast_diffusion(z).powi(2)
                    } else {
                        0.0
                    }
                })
                .collect();
            let tilt = smooth_tilt(
                &TiltControl::time_constant(
                    grids.t_horizon,
                    p.z.clone(),
                    raw,
                    (support.start, support.end),
                ),
                support.end,
                0.5,
            );
            let n = density_from_v(&tilt, p, cs);
            let m = measure_from_density(&n, grids.t_horizon, grids.t_cells, &edges);
            let path = tilted_flow(cs, &n, grids.t_horizon, grids.dt);
            Ok((BallTarget { path, measure: Some(m) }, Some(tilt)))
        }
    }
}

/// Grid measure whose every time row carries the cell masses of a
/// (time-constant) kernel density.
fn measure_from_density(
    n: &SmoothDensity,
    t_horizon: f64,
    t_cells: usize,
    z_edges: &[f64],
) -> GridMeasure {
    let row = n.row(0);
    let cols = z_edges.len() - 1 + 2;
    let mut kernel = vec![0.0; cols];
    for j in 0..z_edges.len() - 1 {
        kernel[j + 1] = ldp_core::grid::integral_of_table(&n.z, row, z_edges[j], z_edges[j + 1]);
    }
    let t_edges = uniform_grid(0.0, t_horizon, t_horizon / t_cells as f64);
    let mut mass = Vec::with_capacity(t_cells * cols);
    for i in 0..t_cells {
        let dt = t_edges[i + 1] - t_edges[i];
        mass.extend(kernel.iter().map(|k| k * dt));
    }
    GridMeasure::new(t_edges, z_edges.to_vec(), mass)
}

/// RK4 solve of `Xdot = int A(x, z) n(z) dz` from the instance's initial
/// point, with the analytic drift as the derivative table.
fn tilted_flow(
    cs: &CoefficientSet,
    n: &SmoothDensity,
    t_horizon: f64,
    dt: f64,
) -> PathWithDerivative {
    let row = n.row(0).to_vec();
    let drift = |x: f64| -> f64 {
        let ys: Vec<f64> = n
            .z
            .iter()
            .zip(row.iter())
            .map(|(&z, &nv)| cs.slow_drift(x, z) * nv)
            .collect();
        trapezoid(&n.z, &ys)
    };
    let t = uniform_grid(0.0, t_horizon, dt);
    let h = t[1] - t[0];
    let mut x = Vec::with_capacity(t.len());
    let mut xdot = Vec::with_capacity(t.len());
    let mut cur = cs.x0();
    x.push(cur);
    xdot.push(drift(cur));
    for _ in 1..t.len() {
        let k1 = drift(cur);
        let k2 = drift(cur + 0.5 * h * k1);
        let k3 = drift(cur + 0.5 * h * k2);
        let k4 = drift(cur + h * k3);
        cur += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        x.push(cur);
        xdot.push(drift(cur));
    }
    PathWithDerivative::new(t, x, xdot)
}

#[allow(clippy::too_many_arguments)]
fn estimate_once(
    cs: &CoefficientSet,
    p: &DensityTable,
    grids: &GridsConfig,
    method: MethodKind,
    target: &BallTarget,
    eps: f64,
    delta: f64,
    n: usize,
    seed: u64,
    beta: f64,
    bandwidth: f64,
) -> Result<Estimate, CliError> {
    match method {
        MethodKind::Crude => {
            crude_ball_probability(cs, eps, target, delta, n, seed, grids.dt).map_err(numerical)
        }
        MethodKind::Tilted => {
            let opts = TiltedOptions { dt: grids.dt, bandwidth, beta };
            is_ball_probability(cs, p, eps, target, delta, n, seed, &opts).map_err(numerical)
        }
    }
}

fn estimates_csv(estimates: &[Estimate]) -> String {
    let mut s = String::from("eps,delta,n,p_hat,stderr,log_p\n");
    for e in estimates {
        s.push_str(&e.to_csv_row());
        s.push('\n');
    }
    s
}

fn read_path_file(path: &str) -> Result<PathWithDerivative, CliError> {
    let s = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read path file `{path}`: {e}")))?;
    let pp = PathPair::from_csv_str(&s)
        .map_err(|e| CliError::Usage(format!("path file `{path}`: {e}")))?;
    Ok(PathWithDerivative::from_path(&pp.slow_path()))
}

fn read_measure_file(path: &str) -> Result<GridMeasure, CliError> {
    let s = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read measure file `{path}`: {e}")))?;
    GridMeasure::from_csv_str(&s).map_err(|e| CliError::Usage(format!("measure file `{path}`: {e}")))
}

pub fn run(cfg: &RunConfig, out_dir: &FsPath, strict: bool) -> Result<Outcome, CliError> {
    let cs = build_instance(cfg)?;
    let grids = &cfg.grids;

    if strict {
        let report = validate_assumptions(
            &cs,
            (grids.measure_window[0], grids.measure_window[1]),
            (grids.x_window[0], grids.x_window[1]),
            grids.validation_step,
        );
        if !report.all_pass() {
            write_json(out_dir, "report.json", &report)?;
            return Err(CliError::Assumptions);
        }
    }

    match &cfg.experiment {
        ExperimentConfig::Validate {} => {
            let report = validate_assumptions(
                &cs,
                (grids.measure_window[0], grids.measure_window[1]),
                (grids.x_window[0], grids.x_window[1]),
                grids.validation_step,
            );
            write_json(out_dir, "report.json", &report)?;
            let ok = report.all_pass();
            if strict && !ok {
                return Err(CliError::Assumptions);
            }
            Ok(Outcome {
                summary: format!(
                    "validate: a1={} a2={} a3={} -> report.json",
                    report.verdicts.a1.pass, report.verdicts.a2.pass, report.verdicts.a3.pass
                ),
            })
        }
        ExperimentConfig::Simulate { eps } => {
            let pp = simulate_pair(&cs, *eps, grids.t_horizon, grids.dt, cfg.seed, 0)
                .map_err(numerical)?;
            write(out_dir, "path.csv", &pp.to_csv_string())?;
            let t_edges = uniform_grid(0.0, grids.t_horizon, grids.t_horizon / grids.t_cells as f64);
            let m = occupation_measure(&pp, &t_edges, &measure_edges(grids));
            write(out_dir, "measure.csv", &m.to_csv_string())?;
            let p = density(&cs, grids)?;
            write(out_dir, "density.csv", &p.to_csv_string())?;
            Ok(Outcome {
                summary: format!(
                    "simulate: eps={eps} substeps={} -> path.csv, measure.csv, density.csv",
                    pp.substeps
                ),
            })
        }
        ExperimentConfig::Ergodic { eps_list, n } => {
            let opts = ErgodicOptions {
                dt: grids.dt,
                t_cells: grids.t_cells,
                z_window: (grids.measure_window[0], grids.measure_window[1]),
                z_cells: grids.z_cells,
                density_window: (grids.z_window[0], grids.z_window[1]),
                density_step: grids.z_step,
            };
            let rep = ergodic_check(&cs, eps_list, grids.t_horizon, *n, cfg.seed, &opts)
                .map_err(numerical)?;
            write_json(out_dir, "report.json", &rep)?;
            Ok(Outcome {
                summary: format!("ergodic: verdict={} -> report.json", rep.verdict),
            })
        }
        ExperimentConfig::Rate { path_file, measure_file, bandwidth, beta } => {
            let xd = read_path_file(path_file)?;
            let m = read_measure_file(measure_file)?;
            let p = density(&cs, grids)?;
            let rb = rate_l_with(&xd, &m, &cs, &p, *beta, *bandwidth);
            write_json(out_dir, "rate.json", &rb)?;
            Ok(Outcome {
                summary: format!(
                    "rate: S_T={:.6e} F_T={:.6e} L_T={:.6e} -> rate.json",
                    rb.s_t, rb.f_t, rb.l_t
                ),
            })
        }
        ExperimentConfig::Legendre {
            path_file,
            measure_file,
            bandwidth,
            lambda_step,
            alpha_step,
        } => {
            let xd = read_path_file(path_file)?;
            let m = read_measure_file(measure_file)?;
            let p = density(&cs, grids)?;
            // Multiplier grid bracketing the per-node maximizers.
            let coeffs = ldp_core::rate::averaged_coeffs(&cs, &m, &xd.path(), 0.0);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for k in 0..xd.t.len() {
                if coeffs.b2_nu[k] > 1e-10 {
                    let lam = (xd.xdot[k] - coeffs.a_nu[k]) / coeffs.b2_nu[k];
                    lo = lo.min(lam);
                    hi = hi.max(lam);
                }
            }
            if !lo.is_finite() {
                lo = -1.0;
                hi = 1.0;
            }
            let lambda = uniform_grid(lo - 0.01, hi + 0.01, *lambda_step);
            let s_rep = legendre_s_check(&xd, &m, &cs, &lambda);
            let n = ldp_core::rate::density_estimate(&m, *bandwidth).map_err(numerical)?;
            let alphas = uniform_grid(0.0, 1.0, *alpha_step);
            let f_rep = legendre_f_check(&n, &p, &cs, &alphas);
            #[derive(Serialize)]
            struct Both<'a> {
                s_check: &'a ldp_core::rate::LegendreSReport,
                f_check: &'a ldp_core::rate::LegendreFReport,
            }
            write_json(out_dir, "report.json", &Both { s_check: &s_rep, f_check: &f_rep })?;
            Ok(Outcome {
                summary: format!(
                    "legendre: s_gap={:.3e} f_vertex_gap={:.3e} -> report.json",
                    s_rep.gap, f_rep.vertex_gap
                ),
            })
        }
        ExperimentConfig::Estimate {
            eps,
            delta,
            n,
            method,
            beta,
            bandwidth,
            target,
            theta,
        } => {
            let p = density(&cs, grids)?;
            let (ball, _) = build_target(&cs, &p, grids, *target, *theta)?;
            let est = estimate_once(
                &cs, &p, grids, *method, &ball, *eps, *delta, *n, cfg.seed, *beta, *bandwidth,
            )?;
            write(out_dir, "estimates.csv", &estimates_csv(std::slice::from_ref(&est)))?;
            write_json(out_dir, "report.json", &est)?;
            Ok(Outcome {
                summary: format!(
                    "estimate: p_hat={:.6e} stderr={:.3e} -> estimates.csv, report.json",
                    est.p_hat, est.stderr
                ),
            })
        }
        ExperimentConfig::Slope {
            eps_list,
            delta,
            n,
            method,
            rate_ref,
            beta,
            bandwidth,
            target,
            theta,
        } => {
            let p = density(&cs, grids)?;
            let (ball, _) = build_target(&cs, &p, grids, *target, *theta)?;
            let mut estimates = Vec::with_capacity(eps_list.len());
            for &eps in eps_list {
                estimates.push(estimate_once(
                    &cs, &p, grids, *method, &ball, eps, *delta, *n, cfg.seed, *beta, *bandwidth,
                )?);
            }
            write(out_dir, "estimates.csv", &estimates_csv(&estimates))?;
            let fit = ldp_slope(&estimates, *rate_ref).map_err(numerical)?;
            write_json(out_dir, "slope.json", &fit)?;
            Ok(Outcome {
                summary: format!(
                    "slope: {:.6e} (deviation {:.3e}) -> estimates.csv, slope.json",
                    fit.slope, fit.deviation
                ),
            })
        }
        ExperimentConfig::Hxy { y, x } => {
            let p = density(&cs, grids)?;
            let res = hxy(*y, *x, &cs, &p, &OptimizerParams::default()).map_err(numerical)?;
            #[derive(Serialize)]
            struct HxyReport {
                #[serde(rename = "H")]
                h: f64,
                residual: f64,
                converged: bool,
                iterations: usize,
            }
            write_json(
                out_dir,
                "report.json",
                &HxyReport {
                    h: res.value,
                    residual: res.constraint_residual,
                    converged: res.converged,
                    iterations: res.iterations,
                },
            )?;
            Ok(Outcome {
                summary: format!(
                    "hxy: H={:.6e} converged={} -> report.json",
                    res.value, res.converged
                ),
            })
        }
    }
}

/// Parameter/output documentation for `ldp describe`.
pub fn describe(name: &str) -> Option<&'static str> {
    Some(match name {
        "validate" => {
            "validate: sample the standing assumptions on finite windows.\n\
             parameters: none beyond [instance] and [grids] (x_window,\n\
             measure_window, validation_step).\n\
             outputs: report.json {lipschitz_A_in_x, lipschitz_B_in_x,\n\
             sup_A0_B0, sigma_bounds, confinement_profile, verdicts}.\n\
             with --strict a failed verdict exits with code 2."
        }
        "simulate" => {
            "simulate: one trajectory of the pair.\n\
             parameters: eps (scale separation). Uses seed, t_horizon, dt;\n\
             fast substeps are chosen by the stability gate.\n\
             outputs: path.csv (t,X,xi), measure.csv (occupation),\n\
             density.csv (z,p,score)."
        }
        "ergodic" => {
            "ergodic: medians of path/measure deviations over an eps sweep.\n\
             parameters: eps_list (strictly decreasing), n (seeds per eps).\n\
             outputs: report.json {eps_list, median_r, median_rho, verdict,\n\
             note}."
        }
        "rate" => {
            "rate: the triple (S_T, F_T, L_T) of a stored pair.\n\
             parameters: path_file, measure_file, bandwidth (default 0.1),\n\
             beta (default 0).\n\
             outputs: rate.json {S_T, F_T, L_T, quad_error, infinite_reason}\n\
             with \"inf\" literals for infinite components."
        }
        "legendre" => {
            "legendre: both duality checks on a stored pair.\n\
             parameters: path_file, measure_file, bandwidth (default 0.1),\n\
             lambda_step (default 1e-3), alpha_step (default 0.05).\n\
             outputs: report.json {s_check: {numeric_sup, closed_form, gap,\n\
             gap_bound}, f_check: {alphas, j_values, min_j, target,\n\
             vertex_gap}}."
        }
        "estimate" => {
            "estimate: ball probability around a target pair.\n\
             parameters: eps, delta, n, method (crude|tilted), beta\n\
             (default 0; required when the averaged diffusion degenerates),\n\
             bandwidth (default 0.1), target (averaged|shifted), theta\n\
             (default 1).\n\
             outputs: estimates.csv (eps,delta,n,p_hat,stderr,log_p) and\n\
             report.json."
        }
        "slope" => {
            "slope: estimates across eps_list plus the scaling-slope fit\n\
             log p = slope/eps + intercept.\n\
             parameters: eps_list (strictly decreasing), delta, n, method,\n\
             rate_ref (default 0), beta, bandwidth, target, theta.\n\
             outputs: estimates.csv and slope.json {eps_list, log_p, slope,\n\
             intercept, rate_ref, deviation, trend_toward_rate}.\n\
             any zero-hit estimate aborts with exit code 3."
        }
        "hxy" => {
            "hxy: constrained Hamiltonian H(y, x) by tilt optimization.\n\
             parameters: y (target average), x (slow state).\n\
             outputs: report.json {H, residual, converged, iterations}.\n\
             an unattainable y exits with code 3 (empty constraint set)."
        }
        _ => return None,
    })
}
