//! Continuous-time paths sampled on a time grid.

use crate::grid::interp_linear;

/// A scalar path tabulated on an increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
}

impl Path {
    pub fn new(t: Vec<f64>, x: Vec<f64>) -> Self {
        assert_eq!(t.len(), x.len(), "time grid and values differ in length");
        assert!(t.len() >= 2, "a path needs at least two nodes");
        Self { t, x }
    }

    /// Constant path on a uniform grid.
    pub fn constant(value: f64, t_horizon: f64, dt: f64) -> Self {
        let t = crate::grid::uniform_grid(0.0, t_horizon, dt);
        let x = vec![value; t.len()];
        Self { t, x }
    }

    pub fn horizon(&self) -> f64 {
        *self.t.last().unwrap()
    }

    /// Linear interpolation in time, clamped at the ends.
    pub fn value_at(&self, t: f64) -> f64 {
        interp_linear(&self.t, &self.x, t)
    }

    /// Restriction to `[0, t_max]`; returns the whole path when `t_max` is
    /// beyond the horizon.
    pub fn restricted_to(&self, t_max: f64) -> Path {
        if t_max >= self.horizon() {
            return self.clone();
        }
        let mut t = Vec::new();
        let mut x = Vec::new();
        for i in 0..self.t.len() {
            if self.t[i] <= t_max {
                t.push(self.t[i]);
                x.push(self.x[i]);
            }
        }
        if *t.last().unwrap() < t_max {
            t.push(t_max);
            x.push(self.value_at(t_max));
        }
        Path::new(t, x)
    }
}

/// A path together with a tabulated time derivative.
///
/// The derivative is analytic when the path comes from an ODE solve and a
/// centered finite difference (one-sided at the endpoints) otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PathWithDerivative {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
}

impl PathWithDerivative {
    pub fn new(t: Vec<f64>, x: Vec<f64>, xdot: Vec<f64>) -> Self {
        assert_eq!(t.len(), x.len());
        assert_eq!(t.len(), xdot.len());
        assert!(t.len() >= 2);
        Self { t, x, xdot }
    }

    /// Tabulates the derivative by finite differences.
    pub fn from_path(path: &Path) -> Self {
        let n = path.t.len();
        let mut xdot = vec![0.0; n];
        for i in 0..n {
            if i == 0 {
                xdot[i] = (path.x[1] - path.x[0]) / (path.t[1] - path.t[0]);
            } else if i == n - 1 {
                xdot[i] = (path.x[n - 1] - path.x[n - 2]) / (path.t[n - 1] - path.t[n - 2]);
            } else {
                xdot[i] = (path.x[i + 1] - path.x[i - 1]) / (path.t[i + 1] - path.t[i - 1]);
            }
        }
        Self::new(path.t.clone(), path.x.clone(), xdot)
    }

    pub fn path(&self) -> Path {
        Path::new(self.t.clone(), self.x.clone())
    }

    pub fn horizon(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn value_at(&self, t: f64) -> f64 {
        interp_linear(&self.t, &self.x, t)
    }

    pub fn derivative_at(&self, t: f64) -> f64 {
        interp_linear(&self.t, &self.xdot, t)
    }
}
