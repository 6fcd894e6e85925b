//! Uniform grids, composite trapezoid quadrature, and interpolation helpers.

/// Uniform grid over `[lo, hi]` with node spacing as close to `step` as the
/// interval allows. Both endpoints are included; the actual spacing is
/// `(hi - lo) / n` with `n = round((hi - lo) / step)`.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    assert!(hi > lo, "empty interval [{lo}, {hi}]");
    assert!(step > 0.0, "step must be positive");
    let n = ((hi - lo) / step).round().max(1.0) as usize;
    let h = (hi - lo) / n as f64;
    (0..=n)
        .map(|i| if i == n { hi } else { lo + h * i as f64 })
        .collect()
}

/// Composite trapezoid rule on an arbitrary increasing grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mut acc = 0.0;
    for i in 1..xs.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    acc
}

/// Cumulative trapezoid integral; `out[i] = integral from xs[0] to xs[i]`.
pub fn cumulative_trapezoid(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    assert_eq!(xs.len(), ys.len());
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..xs.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
        out.push(acc);
    }
    out
}

/// Linear interpolation of a tabulated function, clamped at the ends.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let idx = match xs.binary_search_by(|a| a.partial_cmp(&x).unwrap()) {
        Ok(i) => return ys[i],
        Err(i) => i,
    };
    let (x0, x1) = (xs[idx - 1], xs[idx]);
    let w = (x - x0) / (x1 - x0);
    ys[idx - 1] * (1.0 - w) + ys[idx] * w
}

/// Index of the cell `[edges[i], edges[i+1])` containing `x`, or `None` when
/// `x` lies outside `[edges[0], edges[last])`. The final edge belongs to the
/// last cell.
pub fn cell_index(edges: &[f64], x: f64) -> Option<usize> {
    let n = edges.len();
    if n < 2 || x < edges[0] || x > edges[n - 1] {
        return None;
    }
    if x == edges[n - 1] {
        return Some(n - 2);
    }
    let idx = match edges.binary_search_by(|a| a.partial_cmp(&x).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    Some(idx.min(n - 2))
}

/// Integral of the piecewise-linear interpolant of `(xs, ys)` over `[a, b]`,
/// with `[a, b]` clipped to the table range.
pub fn integral_of_table(xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    let n = xs.len();
    let a = a.max(xs[0]);
    let b = b.min(xs[n - 1]);
    if b <= a {
        return 0.0;
    }
    let fa = interp_linear(xs, ys, a);
    let fb = interp_linear(xs, ys, b);
    // Full interior nodes strictly between a and b.
    let lo = xs.partition_point(|&x| x <= a);
    let hi = xs.partition_point(|&x| x < b);
    let mut acc = 0.0;
    let mut prev_x = a;
    let mut prev_y = fa;
    for i in lo..hi {
        acc += 0.5 * (prev_y + ys[i]) * (xs[i] - prev_x);
        prev_x = xs[i];
        prev_y = ys[i];
    }
    acc += 0.5 * (prev_y + fb) * (b - prev_x);
    acc
}

/// Formats a float with 17 significant digits, using `inf` / `-inf` / `nan`
/// literals so every emitted value can be parsed back exactly.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:.16e}")
    }
}


/// Central differences with one-sided stencils at the endpoints.
pub fn central_differences(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    assert!(n >= 2);
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = if i == 0 {
            (ys[1] - ys[0]) / (xs[1] - xs[0])
        } else if i == n - 1 {
            (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2])
        } else {
            (ys[i + 1] - ys[i - 1]) / (xs[i + 1] - xs[i - 1])
        };
    }
    out
}
