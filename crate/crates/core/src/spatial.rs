//! Minimum-contrast estimation of `(θ₁, η₁, θ₂)` from the quadratic-variation
//! surface on the thinned spatial grid.
//!
//! The limit surface is `a·e^{−κy−ηz}` with `κ = θ₁/θ₂`, `η = η₁/θ₂` and an
//! amplitude `a` that depends on `θ₂` alone, so the contrast is fitted in
//! `(a, κ, η)`: `a` is profiled out in closed form and the remaining 2-D
//! problem is solved by a coarse scan, Nelder-Mead and a Gauss-Newton polish.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FailCode, Result};
use crate::model::NoiseKind;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::qv::{limit_surface, surface_amplitude, theta2_from_amplitude, ThinnedSpaceGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialContrastInput {
    /// `ε⁻²Z_N` at the thinned points, shape `(m1, m2)`.
    pub zvals: Array2<f64>,
    pub grid: ThinnedSpaceGrid,
    pub alpha: f64,
    pub epsilon: f64,
    pub kind: NoiseKind,
}

impl SpatialContrastInput {
    pub fn new(zvals: Array2<f64>, grid: ThinnedSpaceGrid, alpha: f64, epsilon: f64, kind: NoiseKind) -> Result<Self> {
        if zvals.dim() != (grid.m1(), grid.m2()) {
            return Err(Error::Domain(format!(
                "zvals shape {:?} does not match the thinned grid ({}, {})",
                zvals.dim(),
                grid.m1(),
                grid.m2()
            )));
        }
        if zvals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("zvals must be finite and non-negative".into()));
        }
        Ok(SpatialContrastInput { zvals, grid, alpha, epsilon, kind })
    }

    fn observations(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.zvals.len());
        for (a, &y) in self.grid.y.iter().enumerate() {
            for (b, &z) in self.grid.z.iter().enumerate() {
                out.push((y, z, self.zvals[[a, b]]));
            }
        }
        out
    }
}

/// Sum of squared deviations of `ε⁻²Z_N` from the limit surface at `θ`.
pub fn contrast_u(input: &SpatialContrastInput, theta1: f64, eta1: f64, theta2: f64) -> f64 {
    input
        .observations()
        .iter()
        .map(|&(y, z, v)| {
            let r = v - limit_surface(input.kind, input.alpha, theta1, eta1, theta2, y, z);
            r * r
        })
        .sum()
}

/// Closed intervals standing in for the compact parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub theta1: (f64, f64),
    pub eta1: (f64, f64),
    pub theta2: (f64, f64),
}

impl Default for SearchBox {
    fn default() -> Self {
        SearchBox { theta1: (-10.0, 10.0), eta1: (-10.0, 10.0), theta2: (1e-3, 100.0) }
    }
}

impl SearchBox {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(ok(self.theta1) && ok(self.eta1) && ok(self.theta2)) || !(self.theta2.0 > 0.0) {
            return Err(Error::Config(format!("invalid search box {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialOptConfig {
    /// Coarse scan points per axis over `kappa_range × eta_range`.
    pub coarse_points: usize,
    pub kappa_range: (f64, f64),
    pub eta_range: (f64, f64),
    pub nelder_mead: NelderMeadOptions,
    pub polish_iterations: usize,
}

impl Default for SpatialOptConfig {
    fn default() -> Self {
        SpatialOptConfig {
            coarse_points: 21,
            kappa_range: (-10.0, 10.0),
            eta_range: (-10.0, 10.0),
            nelder_mead: NelderMeadOptions::default(),
            polish_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDiagnostics {
    pub kappa: f64,
    pub eta: f64,
    pub amplitude: f64,
    /// Contrast at the reported (possibly clamped) estimate.
    pub contrast: f64,
    pub coarse_seed: (f64, f64),
    /// Coarse cells tied with the seed to within 1e−12.
    pub coarse_ties: usize,
    pub nm_iterations: usize,
    pub polish_steps: usize,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialEstimate {
    pub theta1: f64,
    pub eta1: f64,
    pub theta2: f64,
    pub diagnostics: SpatialDiagnostics,
}

/// Parameters to `(a, κ, η)`.
pub fn to_shape(kind: NoiseKind, alpha: f64, theta1: f64, eta1: f64, theta2: f64) -> (f64, f64, f64) {
    (surface_amplitude(kind, alpha, theta2), theta1 / theta2, eta1 / theta2)
}

/// `(a, κ, η)` back to `(θ₁, η₁, θ₂)`.
pub fn from_shape(kind: NoiseKind, alpha: f64, amplitude: f64, kappa: f64, eta: f64) -> (f64, f64, f64) {
    let theta2 = theta2_from_amplitude(kind, alpha, amplitude);
    (kappa * theta2, eta * theta2, theta2)
}

/// Profiled amplitude `Σzw/Σw²` and the residual sum of squares at it.
fn profile(obs: &[(f64, f64, f64)], kappa: f64, eta: f64) -> (f64, f64) {
    let (mut zw, mut ww) = (0.0, 0.0);
    for &(y, z, v) in obs {
        let w = (-kappa * y - eta * z).exp();
        zw += v * w;
        ww += w * w;
    }
    let a = zw / ww;
    let ssr = obs
        .iter()
        .map(|&(y, z, v)| {
            let r = v - a * (-kappa * y - eta * z).exp();
            r * r
        })
        .sum();
    (a, ssr)
}

fn ssr_full(obs: &[(f64, f64, f64)], p: [f64; 3]) -> f64 {
    obs.iter()
        .map(|&(y, z, v)| {
            let r = v - p[0] * (-p[1] * y - p[2] * z).exp();
            r * r
        })
        .sum()
}

/// Gauss-Newton on `(a, κ, η)`; accepts only decreasing steps.
fn polish(obs: &[(f64, f64, f64)], mut p: [f64; 3], max_steps: usize) -> ([f64; 3], usize) {
    let mut current = ssr_full(obs, p);
    let mut taken = 0;
    for _ in 0..max_steps {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(y, z, v) in obs {
            let w = (-p[1] * y - p[2] * z).exp();
            let r = v - p[0] * w;
            // derivative of the model a·w
            let g = [w, -p[0] * y * w, -p[0] * z * w];
            for i in 0..3 {
                jtr[i] += g[i] * r;
                for j in 0..3 {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let Some(step) = solve3(jtj, jtr) else { break };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let trial = [p[0] + scale * step[0], p[1] + scale * step[1], p[2] + scale * step[2]];
            let v = ssr_full(obs, trial);
            if v < current {
                p = trial;
                current = v;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
        taken += 1;
    }
    (p, taken)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if !(d.abs() > 0.0) || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *xc = det(m) / d;
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn minimize_contrast(
    input: &SpatialContrastInput,
    bounds: &SearchBox,
    opts: &SpatialOptConfig,
) -> Result<SpatialEstimate> {
    bounds.validate()?;
    if input.grid.m1() < 2 || input.grid.m2() < 2 {
        return Err(Error::estimation(
            FailCode::Unidentifiable,
            format!("need at least two thinned points per axis, got {}×{}", input.grid.m1(), input.grid.m2()),
        ));
    }
    let obs = input.observations();
    let points = opts.coarse_points.max(2);
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
    };
    let (kappas, etas) = (axis(opts.kappa_range), axis(opts.eta_range));
    let mut cells = Vec::with_capacity(points * points);
    for &k in &kappas {
        for &e in &etas {
            cells.push((k, e, profile(&obs, k, e).1));
        }
    }
    let best = cells.iter().filter(|c| c.2.is_finite()).map(|c| c.2).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::estimation(FailCode::NonFinite, "contrast is non-finite on the whole coarse grid"));
    }
    let tie_tol = 1e-12 * (1.0 + best.abs());
    // cells are generated in lexicographic (κ, η) order, so the first tie is the smallest
    let ties: Vec<&(f64, f64, f64)> = cells.iter().filter(|c| c.2 - best <= tie_tol).collect();
    let seed = (ties[0].0, ties[0].1);

    let step = [
        (opts.kappa_range.1 - opts.kappa_range.0) / (points - 1) as f64,
        (opts.eta_range.1 - opts.eta_range.0) / (points - 1) as f64,
    ];
    let nm = nelder_mead(|p| profile(&obs, p[0], p[1]).1, &[seed.0, seed.1], &step, &opts.nelder_mead);
    if !nm.converged {
        return Err(Error::estimation(
            FailCode::NotConverged,
            format!("Nelder-Mead stopped after {} iterations", nm.iterations),
        ));
    }
    let (a_nm, _) = profile(&obs, nm.x[0], nm.x[1]);
    let (p, polish_steps) = polish(&obs, [a_nm, nm.x[0], nm.x[1]], opts.polish_iterations);
    // re-profile so the amplitude is optimal for the final shape
    let (amplitude, _) = profile(&obs, p[1], p[2]);
    let (kappa, eta) = (p[1], p[2]);
    if !(amplitude > 0.0) || !amplitude.is_finite() {
        return Err(Error::estimation(
            FailCode::NonPositiveAmplitude,
            format!("profiled amplitude {amplitude} at κ={kappa}, η={eta}"),
        ));
    }
    let (t1, e1, t2) = from_shape(input.kind, input.alpha, amplitude, kappa, eta);
    let clampv = |v: f64, (lo, hi): (f64, f64)| v.clamp(lo, hi);
    let (c1, ce, c2) = (clampv(t1, bounds.theta1), clampv(e1, bounds.eta1), clampv(t2, bounds.theta2));
    let clamped = (c1, ce, c2) != (t1, e1, t2);
    if ![c1, ce, c2].iter().all(|v| v.is_finite()) {
        return Err(Error::estimation(FailCode::NonFinite, "non-finite spatial estimate"));
    }
    Ok(SpatialEstimate {
        theta1: c1,
        eta1: ce,
        theta2: c2,
        diagnostics: SpatialDiagnostics {
            kappa,
            eta,
            amplitude,
            contrast: contrast_u(input, c1, ce, c2),
            coarse_seed: seed,
            coarse_ties: ties.len(),
            nm_iterations: nm.iterations,
            polish_steps,
            clamped,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qv::build_thinned_space_grid;
    use approx::assert_relative_eq;

    fn exact_input(kind: NoiseKind, theta: (f64, f64, f64), m: usize) -> SpatialContrastInput {
        let grid = build_thinned_space_grid(m, m, m, m, 0.05).unwrap();
        let zvals = Array2::from_shape_fn((grid.m1(), grid.m2()), |(a, b)| {
            limit_surface(kind, 0.5, theta.0, theta.1, theta.2, grid.y[a], grid.z[b])
        });
        SpatialContrastInput::new(zvals, grid, 0.5, 0.01, kind).unwrap()
    }

    #[test]
    fn contrast_zero_at_truth() {
        let input = exact_input(NoiseKind::Q1, (0.3, 0.3, 0.3), 10);
        assert!(contrast_u(&input, 0.3, 0.3, 0.3) < 1e-28);
        let off = contrast_u(&input, 0.3, 0.3, 0.4);
        // direct summation over the 9×9 grid
        let mut reference = 0.0;
        for j in 1..=9 {
            for l in 1..=9 {
                let (y, z) = (j as f64 / 10.0, l as f64 / 10.0);
                let d = limit_surface(NoiseKind::Q1, 0.5, 0.3, 0.3, 0.3, y, z)
                    - limit_surface(NoiseKind::Q1, 0.5, 0.3, 0.3, 0.4, y, z);
                reference += d * d;
            }
        }
        assert_relative_eq!(off, reference, max_relative = 1e-13);
        assert!(off > 0.0);
    }

    #[test]
    fn single_point_contrast() {
        let grid = build_thinned_space_grid(2, 2, 2, 2, 0.25).unwrap();
        let input = SpatialContrastInput::new(Array2::from_elem((1, 1), 0.7), grid, 0.5, 0.1, NoiseKind::Q1).unwrap();
        let b = limit_surface(NoiseKind::Q1, 0.5, 0.1, 0.2, 0.5, 0.5, 0.5);
        assert_relative_eq!(contrast_u(&input, 0.1, 0.2, 0.5), (0.7 - b) * (0.7 - b), max_relative = 1e-15);
        assert!(minimize_contrast(&input, &SearchBox::default(), &SpatialOptConfig::default()).is_err());
    }

    #[test]
    fn exact_recovery_both_variants() {
        for kind in [NoiseKind::Q1, NoiseKind::Q2] {
            let input = exact_input(kind, (0.3, 0.3, 0.3), 10);
            let est = minimize_contrast(&input, &SearchBox::default(), &SpatialOptConfig::default()).unwrap();
            assert!((est.theta1 - 0.3).abs() < 1e-8, "{kind}: {est:?}");
            assert!((est.eta1 - 0.3).abs() < 1e-8);
            assert!((est.theta2 - 0.3).abs() < 1e-8);
            assert!(!est.diagnostics.clamped);
        }
    }

    #[test]
    fn flat_surface_gives_zero_shape() {
        let input = exact_input(NoiseKind::Q1, (0.0, 0.0, 0.8), 10);
        let est = minimize_contrast(&input, &SearchBox::default(), &SpatialOptConfig::default()).unwrap();
        assert!(est.diagnostics.kappa.abs() < 1e-10 && est.diagnostics.eta.abs() < 1e-10);
        assert_relative_eq!(est.theta2, 0.8, max_relative = 1e-10);
    }

    #[test]
    fn clamping_is_flagged() {
        let input = exact_input(NoiseKind::Q1, (0.3, 0.3, 0.3), 10);
        let bounds = SearchBox { theta2: (0.5, 1.0), ..Default::default() };
        let est = minimize_contrast(&input, &bounds, &SpatialOptConfig::default()).unwrap();
        assert!(est.diagnostics.clamped);
        assert_eq!(est.theta2, 0.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = build_thinned_space_grid(10, 10, 10, 10, 0.05).unwrap();
        assert!(SpatialContrastInput::new(Array2::zeros((3, 3)), grid.clone(), 0.5, 0.1, NoiseKind::Q1).is_err());
        assert!(SpatialContrastInput::new(Array2::from_elem((9, 9), -1.0), grid, 0.5, 0.1, NoiseKind::Q1).is_err());
        let bad = SearchBox { theta2: (0.0, 1.0), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_surface_is_a_failure() {
        let grid = build_thinned_space_grid(10, 10, 10, 10, 0.05).unwrap();
        let input = SpatialContrastInput::new(Array2::zeros((9, 9)), grid, 0.5, 0.1, NoiseKind::Q1).unwrap();
        let err = minimize_contrast(&input, &SearchBox::default(), &SpatialOptConfig::default()).unwrap_err();
        assert_eq!(err.fail_code(), FailCode::NonPositiveAmplitude);
    }
}
