//! Approximate coordinate process and the adaptive ML-type estimators of
//! `λ₁,₁` (and `μ₁,₁`), with their asymptotic variances.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FailCode, Result};
use crate::model::{theta0_from_lambda, EigenIndex, NoiseKind, TWO_PI_SQ};
use crate::optim::scan_then_golden;
use crate::qv::ThinnedTimeGrid;
use crate::simulate::ObservationGrid;

/// Riemann-sum projection of the field onto `e_{k,ℓ}` on the thinned times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxCoordinatePath {
    pub idx: EigenIndex,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub dt: f64,
    /// `(θ₁, η₁, θ₂)` used in the projection weights.
    pub plugin: (f64, f64, f64),
}

/// `x̂_{k,ℓ}(t̃_i) = (2/(M₁M₂)) Σ_{j₁=1}^{M₁} Σ_{j₂=1}^{M₂} X sin(πky) sin(πℓz) e^{θ̂₁y/(2θ̂₂)} e^{η̂₁z/(2θ̂₂)}`.
///
/// The sums include the boundary indices `M₁`, `M₂`, where the field is zero,
/// so this equals the sum over `1..M₁−1`, `1..M₂−1`.
pub fn approximate_coordinate(
    obs: &ObservationGrid,
    times: &ThinnedTimeGrid,
    plugin: (f64, f64, f64),
    idx: EigenIndex,
) -> Result<ApproxCoordinatePath> {
    let (theta1, eta1, theta2) = plugin;
    if !(theta2 > 0.0) {
        return Err(Error::Domain(format!("plug-in θ₂ must be positive, got {theta2}")));
    }
    let (n1, m1p, m2p) = obs.field.dim();
    let last = times.n * times.stride;
    if last >= n1 {
        return Err(Error::Config(format!("thinned times reach index {last} but the data has {} time points", n1)));
    }
    let (m1, m2) = (m1p - 1, m2p - 1);
    let wy: Vec<f64> = (0..=m1)
        .map(|j| {
            let y = j as f64 / m1 as f64;
            (PI * idx.k as f64 * y).sin() * (theta1 * y / (2.0 * theta2)).exp()
        })
        .collect();
    let wz: Vec<f64> = (0..=m2)
        .map(|j| {
            let z = j as f64 / m2 as f64;
            (PI * idx.l as f64 * z).sin() * (eta1 * z / (2.0 * theta2)).exp()
        })
        .collect();
    let scale = 2.0 / (m1 * m2) as f64;
    let values = times
        .indices()
        .map(|i| {
            let slab = obs.field.index_axis(ndarray::Axis(0), i);
            let mut acc = 0.0;
            for j1 in 1..=m1 {
                let mut row = 0.0;
                for j2 in 1..=m2 {
                    row += slab[[j1, j2]] * wz[j2];
                }
                acc += wy[j1] * row;
            }
            scale * acc
        })
        .collect();
    Ok(ApproxCoordinatePath { idx, times: times.times.clone(), values, dt: times.dt, plugin })
}

/// `F(s) = s/(1 − e^{−s})`, with `F(0) = 1`.
pub fn f_ratio(s: f64) -> f64 {
    if s.abs() < 1e-4 {
        1.0 + s / 2.0 + s * s / 12.0 - s.powi(4) / 720.0
    } else {
        s / -(-s).exp_m1()
    }
}

/// `F′(s)`.
pub fn f_ratio_derivative(s: f64) -> f64 {
    if s.abs() < 1e-3 {
        0.5 + s / 6.0 - s.powi(3) / 180.0
    } else {
        let d = -(-s).exp_m1();
        (d - s * (-s).exp()) / (d * d)
    }
}

/// `S(λ) = Σ (x_i − e^{−λΔ} x_{i−1})²`.
pub fn residual_sum(lambda: f64, values: &[f64], dt: f64) -> f64 {
    let a = (-lambda * dt).exp();
    values.windows(2).map(|w| (w[1] - a * w[0]).powi(2)).sum()
}

fn contrast_with_fn(fnv: f64, lambda: f64, values: &[f64], dt: f64, epsilon: f64) -> f64 {
    let n = (values.len() - 1) as f64;
    fnv * residual_sum(lambda, values, dt) / (epsilon * epsilon * dt) - n * fnv.ln()
}

fn check_contrast_args(values: &[f64], dt: f64, epsilon: f64) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::Domain("contrast needs at least one increment".into()));
    }
    if !(dt > 0.0) || !(epsilon > 0.0) {
        return Err(Error::Domain(format!("need Δ > 0 and ε > 0, got Δ={dt}, ε={epsilon}")));
    }
    Ok(())
}

/// `V⁽¹⁾(λ|x) = F_n S/(ε²Δ) − n log F_n` with `F_n = λ^α F(2λΔ)`.
pub fn contrast_v1(lambda: f64, values: &[f64], dt: f64, epsilon: f64, alpha: f64) -> Result<f64> {
    check_contrast_args(values, dt, epsilon)?;
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("λ must be positive, got {lambda}")));
    }
    Ok(contrast_with_fn(lambda.powf(alpha) * f_ratio(2.0 * lambda * dt), lambda, values, dt, epsilon))
}

/// `V⁽²⁾(λ,μ|x)`, with `F_n = μ^α F(2λΔ)`.
pub fn contrast_v2(lambda: f64, mu: f64, values: &[f64], dt: f64, epsilon: f64, alpha: f64) -> Result<f64> {
    check_contrast_args(values, dt, epsilon)?;
    if !(lambda > 0.0 && mu > 0.0) {
        return Err(Error::Domain(format!("λ and μ must be positive, got λ={lambda}, μ={mu}")));
    }
    Ok(contrast_with_fn(mu.powf(alpha) * f_ratio(2.0 * lambda * dt), lambda, values, dt, epsilon))
}

/// `∂V⁽¹⁾/∂λ`.
pub fn score_v1(lambda: f64, values: &[f64], dt: f64, epsilon: f64, alpha: f64) -> f64 {
    let n = (values.len() - 1) as f64;
    let s = 2.0 * lambda * dt;
    let fnv = lambda.powf(alpha) * f_ratio(s);
    let dfn = alpha * lambda.powf(alpha - 1.0) * f_ratio(s) + lambda.powf(alpha) * 2.0 * dt * f_ratio_derivative(s);
    let a = (-lambda * dt).exp();
    let (mut sum, mut dsum) = (0.0, 0.0);
    for w in values.windows(2) {
        let r = w[1] - a * w[0];
        sum += r * r;
        dsum += 2.0 * r * dt * a * w[0];
    }
    (dfn * sum + fnv * dsum) / (epsilon * epsilon * dt) - n * dfn / fnv
}

/// Profiled `μ^α = nε²Δ/(F(2λΔ)·S)`; `None` when `S = 0`.
pub fn profiled_mu_pow(lambda: f64, values: &[f64], dt: f64, epsilon: f64) -> Option<f64> {
    let n = (values.len() - 1) as f64;
    let s = residual_sum(lambda, values, dt);
    (s > 0.0).then(|| n * epsilon * epsilon * dt / (f_ratio(2.0 * lambda * dt) * s))
}

/// Bounds and resolution of the 1-D λ search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub lambda_box: (f64, f64),
    pub mu_box: (f64, f64),
    pub grid_points: usize,
    pub rel_tol: f64,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        LambdaSearch { lambda_box: (1e-3, 1e3), mu_box: (1e-3, 1e5), grid_points: 128, rel_tol: 1e-10 }
    }
}

impl LambdaSearch {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi > lo && hi.is_finite();
        if !ok(self.lambda_box) || !ok(self.mu_box) || self.grid_points < 3 || !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!("invalid λ search settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub lambda: f64,
    pub mu: Option<f64>,
    /// Contrast value at the optimum (the residual sum when `ε = 0`).
    pub contrast: f64,
    pub iterations: usize,
    pub clamped: bool,
}

fn at_edge(x: f64, (lo, hi): (f64, f64), tol: f64) -> bool {
    x <= lo * (1.0 + tol) || x >= hi * (1.0 - tol)
}

fn minimize_1d<F: FnMut(f64) -> f64>(f: F, search: &LambdaSearch) -> Result<(f64, f64, usize)> {
    let (lo, hi) = search.lambda_box;
    scan_then_golden(f, lo, hi, search.grid_points, search.rel_tol)
        .ok_or_else(|| Error::estimation(FailCode::NonFinite, "contrast is non-finite on the whole λ grid"))
}

fn check_path(values: &[f64], dt: f64, epsilon: f64) -> Result<()> {
    if values.len() < 2 || !(dt > 0.0) || !(epsilon >= 0.0) {
        return Err(Error::Domain(format!(
            "need ≥ 2 observations, Δ > 0 and ε ≥ 0 (got {}, {dt}, {epsilon})",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::estimation(FailCode::NonFinite, "path contains non-finite values"));
    }
    Ok(())
}

/// Minimizer of `V⁽¹⁾` over the λ box. With `ε = 0` the contrast degenerates
/// to its leading term and the residual sum `S(λ)` is minimized instead.
pub fn estimate_lambda_q1(
    values: &[f64],
    dt: f64,
    epsilon: f64,
    alpha: f64,
    search: &LambdaSearch,
) -> Result<LambdaEstimate> {
    search.validate()?;
    check_path(values, dt, epsilon)?;
    let (lambda, contrast, iterations) = if epsilon == 0.0 {
        minimize_1d(|l| residual_sum(l, values, dt), search)?
    } else {
        minimize_1d(|l| contrast_v1(l, values, dt, epsilon, alpha).unwrap_or(f64::NAN), search)?
    };
    Ok(LambdaEstimate { lambda, mu: None, contrast, iterations, clamped: at_edge(lambda, search.lambda_box, 1e-8) })
}

/// Minimizer of `V⁽²⁾`. With `mu_known` only λ is estimated; otherwise `μ`
/// is profiled out, which reduces the problem to minimizing `S(λ)`.
pub fn estimate_lambda_mu_q2(
    values: &[f64],
    dt: f64,
    epsilon: f64,
    alpha: f64,
    search: &LambdaSearch,
    mu_known: Option<f64>,
) -> Result<LambdaEstimate> {
    search.validate()?;
    check_path(values, dt, epsilon)?;
    if let Some(mu) = mu_known {
        if !(mu > 0.0) {
            return Err(Error::Domain(format!("known μ must be positive, got {mu}")));
        }
        let (lambda, contrast, iterations) = if epsilon == 0.0 {
            minimize_1d(|l| residual_sum(l, values, dt), search)?
        } else {
            minimize_1d(|l| contrast_v2(l, mu, values, dt, epsilon, alpha).unwrap_or(f64::NAN), search)?
        };
        return Ok(LambdaEstimate {
            lambda,
            mu: Some(mu),
            contrast,
            iterations,
            clamped: at_edge(lambda, search.lambda_box, 1e-8),
        });
    }
    let (lambda, s_min, iterations) = minimize_1d(|l| residual_sum(l, values, dt), search)?;
    if !(s_min > 0.0) {
        return Err(Error::estimation(FailCode::Unidentifiable, "zero residual sum: μ is not identifiable"));
    }
    if epsilon == 0.0 {
        return Err(Error::estimation(FailCode::Unidentifiable, "μ is not identifiable without noise"));
    }
    let mu_pow = profiled_mu_pow(lambda, values, dt, epsilon).expect("positive residual sum");
    let mu_raw = mu_pow.powf(1.0 / alpha);
    if !mu_raw.is_finite() {
        return Err(Error::estimation(FailCode::NonFinite, format!("profiled μ^α = {mu_pow}")));
    }
    let mu = mu_raw.clamp(search.mu_box.0, search.mu_box.1);
    Ok(LambdaEstimate {
        lambda,
        mu: Some(mu),
        contrast: contrast_v2(lambda, mu, values, dt, epsilon, alpha)?,
        iterations,
        clamped: at_edge(lambda, search.lambda_box, 1e-8) || mu != mu_raw,
    })
}

/// `θ̂₀ = −λ̂₁,₁ + (θ̂₁²+η̂₁²)/(4θ̂₂) + 2π²θ̂₂`.
pub fn recover_theta0(lambda_hat: f64, plugin: (f64, f64, f64)) -> f64 {
    theta0_from_lambda(lambda_hat, plugin.0, plugin.1, plugin.2)
}

/// `μ̂₀ = μ̂₁,₁ − 2π²`.
pub fn recover_mu0(mu_hat: f64) -> f64 {
    mu_hat - TWO_PI_SQ
}

/// Small-noise regime: `nε² → 0` (B1) or `(nε²)⁻¹ → c < ∞` (B2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "lowercase")]
pub enum AsymptoticRegime {
    B1,
    B2 { c: f64 },
}

impl AsymptoticRegime {
    /// Regime implied by a run: B2 with the realized `c = (nε²)⁻¹` when
    /// `nε² ≥ threshold`, B1 otherwise.
    pub fn from_run(n: usize, epsilon: f64, threshold: f64) -> Self {
        let ne2 = n as f64 * epsilon * epsilon;
        if ne2 >= threshold {
            AsymptoticRegime::B2 { c: 1.0 / ne2 }
        } else {
            AsymptoticRegime::B1
        }
    }
}

/// Asymptotic information terms and the implied standard errors.
///
/// For Q1, `se_eps` is the sd of `ε⁻¹(λ̂−λ)` under B1 and `se_sqrtn` the sd
/// of `√n(λ̂−λ)` under B2. For Q2, `se_eps` refers to `ε⁻¹(λ̃−λ)` and
/// `se_sqrtn` to `√n(μ̃−μ)`, in every regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub kind: NoiseKind,
    pub regime: AsymptoticRegime,
    pub g: f64,
    pub h: f64,
    /// `H₁ + cG₁` (Q1, B2 only).
    pub i: Option<f64>,
    pub se_eps: Option<f64>,
    pub se_sqrtn: Option<f64>,
}

impl VarianceReport {
    /// The standard error matching the regime's headline normalization.
    pub fn primary_se(&self) -> Option<f64> {
        match (self.kind, self.regime) {
            (NoiseKind::Q1, AsymptoticRegime::B2 { .. }) => self.se_sqrtn,
            _ => self.se_eps,
        }
    }
}

/// `G₁ = (1−e^{−2λ})/(2λ^{1−α}) x₀²`, `H₁ = α²/(2λ²)`;
/// `G₂ = (1−e^{−2λ})/(2λ) μ^α x₀²`, `H₂ = α²/(2μ²)`.
pub fn asymptotic_variance(
    kind: NoiseKind,
    regime: AsymptoticRegime,
    lambda: f64,
    mu: Option<f64>,
    alpha: f64,
    x0: f64,
) -> Result<VarianceReport> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("λ must be positive, got {lambda}")));
    }
    let decay = -(-2.0 * lambda).exp_m1();
    match kind {
        NoiseKind::Q1 => {
            let g = decay / (2.0 * lambda.powf(1.0 - alpha)) * x0 * x0;
            let h = alpha * alpha / (2.0 * lambda * lambda);
            match regime {
                AsymptoticRegime::B1 => {
                    if x0 == 0.0 {
                        return Err(Error::estimation(FailCode::DegenerateVariance, "x₁,₁(0) = 0 makes G₁ vanish"));
                    }
                    Ok(VarianceReport { kind, regime, g, h, i: None, se_eps: Some(g.powf(-0.5)), se_sqrtn: None })
                }
                AsymptoticRegime::B2 { c } => {
                    if !(c >= 0.0) {
                        return Err(Error::Domain(format!("c must be non-negative, got {c}")));
                    }
                    let i = h + c * g;
                    Ok(VarianceReport {
                        kind,
                        regime,
                        g,
                        h,
                        i: Some(i),
                        se_eps: (g > 0.0).then(|| g.powf(-0.5)),
                        se_sqrtn: Some(i.powf(-0.5)),
                    })
                }
            }
        }
        NoiseKind::Q2 => {
            let mu = mu.ok_or_else(|| Error::Usage("Q2 variances need μ".into()))?;
            if !(mu > 0.0) {
                return Err(Error::Domain(format!("μ must be positive, got {mu}")));
            }
            if x0 == 0.0 {
                return Err(Error::estimation(FailCode::DegenerateVariance, "x₁,₁(0) = 0 makes G₂ vanish"));
            }
            let g = decay / (2.0 * lambda) * mu.powf(alpha) * x0 * x0;
            let h = alpha * alpha / (2.0 * mu * mu);
            Ok(VarianceReport { kind, regime, g, h, i: None, se_eps: Some(g.powf(-0.5)), se_sqrtn: Some(h.powf(-0.5)) })
        }
    }
}
