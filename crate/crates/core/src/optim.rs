//! Small deterministic optimizers: golden section, log-spaced scan and
//! Nelder-Mead.

use serde::{Deserialize, Serialize};

/// Outcome of a local minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search on `[lo, hi]` until the bracket is below
/// `rel_tol·|x|` (or `rel_tol` near zero). Returns `(x, f(x), iterations)`.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    rel_tol: f64,
    max_iter: usize,
) -> (f64, f64, usize) {
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut it = 0;
    while it < max_iter && (hi - lo) > rel_tol * (0.5 * (lo + hi)).abs().max(1e-300) {
        // NaN compares false, which moves away from the NaN side
        if fc < fd || fd.is_nan() {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
        it += 1;
    }
    if fc <= fd || fd.is_nan() {
        (c, fc, it)
    } else {
        (d, fd, it)
    }
}

/// `count` log-spaced points spanning `[lo, hi]` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| match i {
                0 => lo,
                i if i == count - 1 => hi,
                i => (a + (b - a) * i as f64 / (count - 1) as f64).exp(),
            })
            .collect(),
    }
}

/// Index of the smallest finite value; ties go to the lowest index.
pub fn argmin_finite(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scan on a log grid, then golden section on the bracket around the best
/// grid point. Returns `None` if no grid value is finite.
pub fn scan_then_golden<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    count: usize,
    rel_tol: f64,
) -> Option<(f64, f64, usize)> {
    let grid = log_grid(lo, hi, count);
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let best = argmin_finite(&values)?;
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(grid.len() - 1)];
    let (x, v, it) = golden_section(&mut f, a, b, rel_tol, 500);
    if v.is_finite() && v <= values[best] {
        Some((x, v, it))
    } else {
        Some((grid[best], values[best], it))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when the simplex values span less than this.
    pub f_tol: f64,
    /// ... and the simplex diameter is below this.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_iter: 2000, f_tol: 1e-15, x_tol: 1e-10 }
    }
}

/// Nelder-Mead with standard coefficients, axis-aligned initial simplex.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    step: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum {
    let n = start.len();
    let eval = |f: &mut F, x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += step[i];
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(&mut f, p)).collect();
    let mut it = 0;
    let mut converged = false;
    while it < opts.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.abs() <= opts.f_tol * (1.0 + values[0].abs()) && diameter <= opts.x_tol {
            converged = true;
            break;
        }
        it += 1;

        let centroid: Vec<f64> = (0..n).map(|d| simplex[..n].iter().map(|p| p[d]).sum::<f64>() / n as f64).collect();
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            (0..n).map(|d| centroid[d] + t * (worst[d] - centroid[d])).collect()
        };
        let worst = simplex[n].clone();
        let xr = along(-1.0, &worst);
        let fr = eval(&mut f, &xr);
        if fr < values[0] {
            let xe = along(-2.0, &worst);
            let fe = eval(&mut f, &xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            // outside contraction when the reflection helped at all
            let xc = along(if fr < values[n] { -0.5 } else { 0.5 }, &worst);
            let fc = eval(&mut f, &xc);
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = (0..n).map(|d| best[d] + 0.5 * (simplex[i][d] - best[d])).collect();
                    values[i] = eval(&mut f, &simplex[i]);
                }
            }
        }
    }
    let best = argmin_finite(&values).unwrap_or(0);
    Minimum { x: simplex[best].clone(), value: values[best], iterations: it, converged }
}
