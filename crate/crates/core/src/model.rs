//! Parameterization of the operator `A_θ`, its eigen-system on the unit
//! square with Dirichlet boundary, the weighted inner product and the
//! driving-noise damping factors.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Default number of Gauss-Legendre points per axis.
pub const DEFAULT_QUADRATURE_ORDER: usize = 64;

pub const TWO_PI_SQ: f64 = 2.0 * PI * PI;

/// Coefficients `(θ₀, θ₁, η₁, θ₂)` of
/// `A_θ = -(θ₂Δ + θ₁∂_y + η₁∂_z + θ₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdeParams {
    pub theta0: f64,
    pub theta1: f64,
    pub eta1: f64,
    pub theta2: f64,
}

impl SpdeParams {
    /// Rejects `θ₂ ≤ 0` and parameter vectors with `λ₁,₁ ≤ 0`.
    pub fn new(theta0: f64, theta1: f64, eta1: f64, theta2: f64) -> Result<Self> {
        let p = SpdeParams { theta0, theta1, eta1, theta2 };
        if !(theta0.is_finite() && theta1.is_finite() && eta1.is_finite() && theta2.is_finite()) {
            return Err(Error::Domain("parameters must be finite".into()));
        }
        if theta2 <= 0.0 {
            return Err(Error::Domain(format!("theta2 must be positive, got {theta2}")));
        }
        let l11 = p.lambda11();
        if l11 <= 0.0 {
            return Err(Error::Domain(format!("lambda(1,1) must be positive, got {l11}")));
        }
        Ok(p)
    }

    /// `(θ₁² + η₁²)/(4θ₂) − θ₀`, the index-free part of every eigenvalue.
    #[inline]
    pub fn eigen_shift(&self) -> f64 {
        -self.theta0 + (self.theta1 * self.theta1 + self.eta1 * self.eta1) / (4.0 * self.theta2)
    }

    #[inline]
    pub fn lambda11(&self) -> f64 {
        self.eigen_shift() + TWO_PI_SQ * self.theta2
    }

    /// `θ₁/θ₂`
    #[inline]
    pub fn kappa(&self) -> f64 {
        self.theta1 / self.theta2
    }

    /// `η₁/θ₂`
    #[inline]
    pub fn eta(&self) -> f64 {
        self.eta1 / self.theta2
    }
}

/// Mode index `(k, ℓ)`, both at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EigenIndex {
    pub k: u32,
    pub l: u32,
}

impl EigenIndex {
    pub const ONE_ONE: EigenIndex = EigenIndex { k: 1, l: 1 };

    pub fn new(k: u32, l: u32) -> Result<Self> {
        if k == 0 || l == 0 {
            return Err(Error::Domain(format!("mode indices start at 1, got ({k},{l})")));
        }
        Ok(EigenIndex { k, l })
    }

    /// `k² + ℓ²`
    #[inline]
    pub fn norm_sq(&self) -> f64 {
        let (k, l) = (self.k as f64, self.l as f64);
        k * k + l * l
    }
}

impl fmt::Display for EigenIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.k, self.l)
    }
}

/// Which of the two Q-Wiener processes drives the equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum NoiseSpec {
    /// Modes damped by `λ_{k,ℓ}^{-α/2}`.
    Q1 { alpha: f64 },
    /// Modes damped by `μ_{k,ℓ}^{-α/2}` with `μ_{k,ℓ} = π²(k²+ℓ²) + μ₀`.
    Q2 { alpha: f64, mu0: f64 },
}

impl NoiseSpec {
    pub fn q1(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(NoiseSpec::Q1 { alpha })
    }

    pub fn q2(alpha: f64, mu0: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(mu0 > -TWO_PI_SQ) {
            return Err(Error::Domain(format!("mu0 must exceed -2π² so that μ(1,1) > 0, got {mu0}")));
        }
        Ok(NoiseSpec::Q2 { alpha, mu0 })
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            NoiseSpec::Q1 { alpha } | NoiseSpec::Q2 { alpha, .. } => alpha,
        }
    }

    pub fn is_q2(&self) -> bool {
        matches!(self, NoiseSpec::Q2 { .. })
    }

    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseSpec::Q1 { .. } => NoiseKind::Q1,
            NoiseSpec::Q2 { .. } => NoiseKind::Q2,
        }
    }
}

/// Noise variant without its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Q1,
    Q2,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Q1 => "q1",
            NoiseKind::Q2 => "q2",
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

/// `λ_{k,ℓ} = −θ₀ + (θ₁²+η₁²)/(4θ₂) + π²(k²+ℓ²)θ₂`.
#[inline]
pub fn eigenvalue(params: &SpdeParams, idx: EigenIndex) -> f64 {
    params.eigen_shift() + PI * PI * idx.norm_sq() * params.theta2
}

/// `e_{k,ℓ}(y,z) = 2 sin(πky) sin(πℓz) e^{−θ₁y/(2θ₂)} e^{−η₁z/(2θ₂)}`.
#[inline]
pub fn eigenfunction_at(params: &SpdeParams, idx: EigenIndex, y: f64, z: f64) -> f64 {
    2.0 * (PI * idx.k as f64 * y).sin()
        * (PI * idx.l as f64 * z).sin()
        * (-0.5 * params.kappa() * y - 0.5 * params.eta() * z).exp()
}

/// `μ_{k,ℓ} = π²(k²+ℓ²) + μ₀`; only defined for the Q2 noise.
pub fn mu_value(noise: &NoiseSpec, idx: EigenIndex) -> Result<f64> {
    match *noise {
        NoiseSpec::Q2 { mu0, .. } => Ok(PI * PI * idx.norm_sq() + mu0),
        NoiseSpec::Q1 { .. } => Err(Error::Usage("mu_value requires the Q2 noise".into())),
    }
}

/// Diffusion coefficient of mode `(k,ℓ)` per unit of ε.
#[inline]
pub fn noise_damping(noise: &NoiseSpec, params: &SpdeParams, idx: EigenIndex) -> f64 {
    match *noise {
        NoiseSpec::Q1 { alpha } => eigenvalue(params, idx).powf(-0.5 * alpha),
        NoiseSpec::Q2 { alpha, mu0 } => (PI * PI * idx.norm_sq() + mu0).powf(-0.5 * alpha),
    }
}

/// Inverse of `eigenvalue(·, (1,1))` in `θ₀`.
#[inline]
pub fn theta0_from_lambda(lambda11: f64, theta1: f64, eta1: f64, theta2: f64) -> f64 {
    -lambda11 + (theta1 * theta1 + eta1 * eta1) / (4.0 * theta2) + TWO_PI_SQ * theta2
}

/// Weighted inner product
/// `⟨f,g⟩_θ = ∫∫ f g e^{θ₁y/θ₂} e^{η₁z/θ₂} dy dz` by tensor Gauss-Legendre.
pub fn inner_product<F, G>(params: &SpdeParams, f: F, g: G, rule: &GaussLegendre) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
    G: Fn(f64, f64) -> f64,
{
    let (kappa, eta) = (params.kappa(), params.eta());
    let mut acc = 0.0;
    for (&y, &wy) in rule.nodes.iter().zip(&rule.weights) {
        let ey = (kappa * y).exp();
        let mut row = 0.0;
        for (&z, &wz) in rule.nodes.iter().zip(&rule.weights) {
            row += wz * f(y, z) * g(y, z) * (eta * z).exp();
        }
        acc += wy * ey * row;
    }
    if acc.is_finite() {
        Ok(acc)
    } else {
        Err(Error::Numeric("non-finite integrand in inner product".into()))
    }
}

type FieldFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Deterministic initial value `ξ` of the field.
#[derive(Clone)]
pub enum InitialField {
    /// `ξ ≡ 0`.
    Zero,
    /// `scale · y(1−y)z(1−z)`; `scale = 30` is the classic test field.
    Polynomial { scale: f64 },
    /// `amplitude · e₁,₁` for a fixed parameter vector, so that
    /// `⟨ξ, e₁,₁⟩_θ = amplitude` at that vector.
    SingleMode { amplitude: f64, params: SpdeParams },
    /// Arbitrary user field.
    Custom { tag: String, f: FieldFn },
}

impl fmt::Debug for InitialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl InitialField {
    pub fn polynomial() -> Self {
        InitialField::Polynomial { scale: 30.0 }
    }

    pub fn single_mode(params: SpdeParams, amplitude: f64) -> Self {
        InitialField::SingleMode { amplitude, params }
    }

    pub fn custom(tag: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        InitialField::Custom { tag: tag.into(), f: Arc::new(f) }
    }

    pub fn describe(&self) -> String {
        match self {
            InitialField::Zero => "zero".into(),
            InitialField::Polynomial { scale } => format!("{scale}*y(1-y)z(1-z)"),
            InitialField::SingleMode { amplitude, .. } => format!("{amplitude}*e11"),
            InitialField::Custom { tag, .. } => tag.clone(),
        }
    }

    pub fn value(&self, y: f64, z: f64) -> f64 {
        match self {
            InitialField::Zero => 0.0,
            InitialField::Polynomial { scale } => scale * y * (1.0 - y) * z * (1.0 - z),
            InitialField::SingleMode { amplitude, params } => {
                amplitude * eigenfunction_at(params, EigenIndex::ONE_ONE, y, z)
            }
            InitialField::Custom { f, .. } => f(y, z),
        }
    }

    /// Checks the Dirichlet condition at 64 points per edge.
    pub fn check_boundary(&self) -> Result<()> {
        const SAMPLES: usize = 64;
        for i in 0..=SAMPLES {
            let s = i as f64 / SAMPLES as f64;
            for (y, z) in [(0.0, s), (1.0, s), (s, 0.0), (s, 1.0)] {
                let v = self.value(y, z);
                if !(v.abs() <= 1e-10) {
                    return Err(Error::Config(format!(
                        "initial field {} does not vanish on the boundary: value {v} at ({y},{z})",
                        self.describe()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Closed-form coefficient when one is available for these parameters.
    fn exact_coefficient(&self, params: &SpdeParams, idx: EigenIndex) -> Option<f64> {
        match self {
            InitialField::Zero => Some(0.0),
            InitialField::SingleMode { amplitude, params: p } if p == params => {
                Some(if idx == EigenIndex::ONE_ONE { *amplitude } else { 0.0 })
            }
            _ => None,
        }
    }
}

/// `x_{k,ℓ}(0) = ⟨ξ, e_{k,ℓ}⟩_θ`.
pub fn initial_coefficient(
    params: &SpdeParams,
    xi: &InitialField,
    idx: EigenIndex,
    rule: &GaussLegendre,
) -> Result<f64> {
    if let Some(c) = xi.exact_coefficient(params, idx) {
        return Ok(c);
    }
    inner_product(params, |y, z| xi.value(y, z), |y, z| eigenfunction_at(params, idx, y, z), rule)
}

/// Checks `⟨ξ, e₁,₁⟩_θ ≠ 0` and returns the coefficient.
pub fn check_identifiable_start(params: &SpdeParams, xi: &InitialField, rule: &GaussLegendre) -> Result<f64> {
    let c = initial_coefficient(params, xi, EigenIndex::ONE_ONE, rule)?;
    if c.abs() < 1e-12 {
        return Err(Error::Config(format!(
            "initial field {} has no (1,1) component; the zeroth-order coefficient is not estimable",
            xi.describe()
        )));
    }
    Ok(c)
}

/// Table of `⟨ξ, e_{k,ℓ}⟩_θ` for `1 ≤ k, ℓ ≤ kmax`, entry `[k-1, ℓ-1]`.
///
/// Uses one separable tensor-product pass; `kmax` should not exceed half the
/// quadrature order or the oscillating kernels are under-resolved.
pub fn initial_coefficient_table(
    params: &SpdeParams,
    xi: &InitialField,
    kmax: usize,
    rule: &GaussLegendre,
) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((kmax, kmax));
    match xi {
        InitialField::Zero => return Ok(out),
        InitialField::SingleMode { amplitude, params: p } if p == params => {
            if kmax >= 1 {
                out[[0, 0]] = *amplitude;
            }
            return Ok(out);
        }
        _ => {}
    }
    let q = rule.order();
    // ⟨ξ, e_kl⟩ = Σ_qr w_q w_r ξ(y_q,z_r) 2 sin(πk y_q) e^{κ y_q/2} sin(πl z_r) e^{η z_r/2}
    let (kappa, eta) = (params.kappa(), params.eta());
    let mut ay = Array2::<f64>::zeros((kmax, q));
    let mut az = Array2::<f64>::zeros((kmax, q));
    for k in 0..kmax {
        for (j, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            let s = (PI * (k + 1) as f64 * x).sin();
            ay[[k, j]] = 2.0 * w * s * (0.5 * kappa * x).exp();
            az[[k, j]] = w * s * (0.5 * eta * x).exp();
        }
    }
    let mut vals = Array2::<f64>::zeros((q, q));
    for (i, &y) in rule.nodes.iter().enumerate() {
        for (j, &z) in rule.nodes.iter().enumerate() {
            vals[[i, j]] = xi.value(y, z);
        }
    }
    out = ay.dot(&vals).dot(&az.t());
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::Numeric("non-finite initial coefficient".into()))
    }
}
