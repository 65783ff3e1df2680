//! Exact simulation of the coordinate Ornstein-Uhlenbeck processes and
//! spectral synthesis of the random field on the observation grid.
//!
//! The field is only ever observed on the grid `y_j = j/M₁, z_j = j/M₂`,
//! where `sin(πk y_j)` takes at most `M₁ − 1` distinct shapes: frequency `k`
//! aliases onto `r = k mod 2M₁` (with a sign flip when `r > M₁`) and vanishes
//! when `r ∈ {0, M₁}`. Modes are therefore folded onto `(M₁−1)(M₂−1)` grid
//! frequencies before synthesis, which is exact on the grid.
//!
//! Modes whose one-step autocorrelation `e^{−λΔ}` is below double precision
//! (`λΔ ≥ white_noise_cutoff`, default 37) are indistinguishable from white
//! noise on the time grid. Their contributions to one grid frequency are
//! independent Gaussians, so they are drawn as a single Gaussian per grid
//! frequency and time step with the summed transition variance. Only the
//! remaining low modes are simulated path by path.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use ndarray::{Array2, Array3, ArrayView2, ShapeBuilder};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    eigenfunction_at, initial_coefficient_table, noise_damping, EigenIndex, InitialField, NoiseSpec, SpdeParams,
    DEFAULT_QUADRATURE_ORDER,
};
use crate::quadrature::GaussLegendre;
use crate::rng::{Domain, SeedPath};

/// Largest per-axis truncation the adaptive policy may select.
pub const ADAPTIVE_K_LIMIT: usize = 512;
/// Per-axis extent of the explicit tail summation used by the adaptive policy.
const TAIL_SUM_EXTENT: usize = 2048;

/// One sampled mode path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatePath {
    pub idx: EigenIndex,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl CoordinatePath {
    /// Step of a uniform time grid.
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }
}

/// Per-unit-noise variance of the exact OU transition over `dt`,
/// `(1 − e^{−2λΔ})/(2λ)`.
#[inline]
pub fn transition_variance(lambda: f64, dt: f64) -> f64 {
    let s = 2.0 * lambda * dt;
    if s.abs() < 1e-8 {
        dt * (1.0 - lambda * dt)
    } else {
        -(-s).exp_m1() / (2.0 * lambda)
    }
}

/// Exact sampling of `dx = −λx dt + ε·damping dw` at the given times.
pub fn simulate_coordinate_path<R: Rng + ?Sized>(
    lambda: f64,
    damping: f64,
    epsilon: f64,
    x0: f64,
    times: &[f64],
    rng: &mut R,
) -> Result<CoordinatePath> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    if !(damping > 0.0) {
        return Err(Error::Domain(format!("damping must be positive, got {damping}")));
    }
    if times.first() != Some(&0.0) {
        return Err(Error::Domain("time grid must start at 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("time grid must be strictly ascending".into()));
    }
    let scale = epsilon * damping;
    let mut values = Vec::with_capacity(times.len());
    let mut x = x0;
    values.push(x);
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        let z: f64 = rng.sample(StandardNormal);
        x = (-lambda * dt).exp() * x + scale * transition_variance(lambda, dt).sqrt() * z;
        values.push(x);
    }
    Ok(CoordinatePath { idx: EigenIndex::ONE_ONE, times: times.to_vec(), values })
}

/// How many modes per axis to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TruncationPolicy {
    Fixed {
        k: usize,
    },
    /// Smallest `K` whose omitted stationary variance is below `tol`.
    Adaptive {
        tol: f64,
    },
}

impl TruncationPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TruncationPolicy::Fixed { k } if k >= 1 => Ok(()),
            TruncationPolicy::Adaptive { tol } if tol > 0.0 => Ok(()),
            _ => Err(Error::Config(format!("invalid truncation policy {self:?}"))),
        }
    }
}

impl std::str::FromStr for TruncationPolicy {
    type Err = Error;

    /// `fixed:<K>` or `adaptive:<tol>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("truncation must be fixed:<K> or adaptive:<tol>, got {s}")))?;
        let p = match kind.trim() {
            "fixed" => TruncationPolicy::Fixed {
                k: arg.trim().parse().map_err(|_| Error::Config(format!("bad truncation K: {arg}")))?,
            },
            "adaptive" => TruncationPolicy::Adaptive {
                tol: arg.trim().parse().map_err(|_| Error::Config(format!("bad truncation tol: {arg}")))?,
            },
            other => return Err(Error::Config(format!("unknown truncation mode {other}"))),
        };
        p.validate()?;
        Ok(p)
    }
}

impl std::fmt::Display for TruncationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TruncationPolicy::Fixed { k } => write!(f, "fixed:{k}"),
            TruncationPolicy::Adaptive { tol } => write!(f, "adaptive:{tol:e}"),
        }
    }
}

/// Stationary variance `ε²·damping²/(2λ)` of mode `(k, ℓ)`.
fn stationary_variance(params: &SpdeParams, noise: &NoiseSpec, epsilon: f64, k: usize, l: usize) -> f64 {
    let idx = EigenIndex { k: k as u32, l: l as u32 };
    let lambda = crate::model::eigenvalue(params, idx);
    let d = noise_damping(noise, params, idx);
    epsilon * epsilon * d * d / (2.0 * lambda)
}

/// Sum of stationary variances over the shells `k ∨ ℓ = s`, `s = 1..=extent`.
fn shell_sums(params: &SpdeParams, noise: &NoiseSpec, epsilon: f64, extent: usize) -> Vec<f64> {
    (1..=extent)
        .map(|s| {
            let mut acc = stationary_variance(params, noise, epsilon, s, s);
            for j in 1..s {
                acc += stationary_variance(params, noise, epsilon, s, j);
                acc += stationary_variance(params, noise, epsilon, j, s);
            }
            acc
        })
        .collect()
}

/// Continuum estimate of the stationary variance outside radius `r0`.
fn continuum_remainder(params: &SpdeParams, noise: &NoiseSpec, epsilon: f64, r0: f64) -> f64 {
    let alpha = noise.alpha();
    let c_lambda = PI * PI * params.theta2;
    let c_damp = match noise {
        NoiseSpec::Q1 { .. } => c_lambda.powf(-alpha),
        NoiseSpec::Q2 { .. } => (PI * PI).powf(-alpha),
    };
    // (π/2) ∫_{r0}^∞ r · ε² c_damp r^{-2α} / (2 c_λ r²) dr
    0.5 * PI * 0.5 * epsilon * epsilon * c_damp / c_lambda * r0.powf(-2.0 * alpha) / (2.0 * alpha)
}

/// Omitted-tail stationary variance `Σ_{k∨ℓ>K} ε² damping²/(2λ)` for every
/// `K = 0..=limit`.
pub fn truncation_tail_sums(params: &SpdeParams, noise: &NoiseSpec, epsilon: f64, limit: usize) -> Vec<f64> {
    let extent = TAIL_SUM_EXTENT.max(limit + 1);
    let shells = shell_sums(params, noise, epsilon, extent);
    let mut tail = continuum_remainder(params, noise, epsilon, extent as f64 + 0.5);
    let mut out = vec![0.0; limit + 1];
    for s in (1..=extent).rev() {
        if s <= limit {
            out[s] = tail;
        }
        tail += shells[s - 1];
    }
    out[0] = tail;
    out
}

/// Resolves a truncation policy to a per-axis mode count.
pub fn choose_truncation(
    policy: &TruncationPolicy,
    params: &SpdeParams,
    noise: &NoiseSpec,
    epsilon: f64,
) -> Result<usize> {
    policy.validate()?;
    match *policy {
        TruncationPolicy::Fixed { k } => Ok(k),
        TruncationPolicy::Adaptive { tol } => {
            if epsilon == 0.0 {
                return Ok(1);
            }
            let tails = truncation_tail_sums(params, noise, epsilon, ADAPTIVE_K_LIMIT);
            (1..=ADAPTIVE_K_LIMIT).find(|&k| tails[k] < tol).ok_or_else(|| {
                Error::Config(format!(
                    "adaptive truncation needs more than {ADAPTIVE_K_LIMIT} modes per axis for tol {tol:e} (tail at limit {:e})",
                    tails[ADAPTIVE_K_LIMIT]
                ))
            })
        }
    }
}

/// Sizes of the observation grid: `t_i = i/N`, `y_j = j/M₁`, `z_j = j/M₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_time: usize,
    pub m1: usize,
    pub m2: usize,
}

impl GridSpec {
    pub fn new(n_time: usize, m1: usize, m2: usize) -> Result<Self> {
        if n_time < 1 || m1 < 2 || m2 < 2 {
            return Err(Error::Config(format!("grid needs N ≥ 1 and M₁, M₂ ≥ 2, got N={n_time}, M=({m1},{m2})")));
        }
        Ok(GridSpec { n_time, m1, m2 })
    }
}

/// Numerical settings of the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub truncation: TruncationPolicy,
    /// Modes with `λΔ_N` at or above this value are sampled as white noise.
    pub white_noise_cutoff: f64,
    pub quadrature_order: usize,
    /// Initial coefficients are projected for `k, ℓ ≤` this bound and taken
    /// as zero above it. Must not exceed half the quadrature order.
    pub initial_modes: usize,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            truncation: TruncationPolicy::Fixed { k: 2048 },
            white_noise_cutoff: 37.0,
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            initial_modes: DEFAULT_QUADRATURE_ORDER / 2,
        }
    }
}

/// Sampled field `X_{t_i}(y_{j₁}, z_{j₂})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGrid {
    pub grid: GridSpec,
    pub epsilon: f64,
    /// Shape `(N+1, M₁+1, M₂+1)`.
    pub field: Array3<f64>,
    /// Per-axis truncation used, if known.
    pub truncation: Option<usize>,
    pub seed: Option<SeedPath>,
}

impl ObservationGrid {
    pub fn t(&self, i: usize) -> f64 {
        i as f64 / self.grid.n_time as f64
    }
    pub fn y(&self, j: usize) -> f64 {
        j as f64 / self.grid.m1 as f64
    }
    pub fn z(&self, j: usize) -> f64 {
        j as f64 / self.grid.m2 as f64
    }

    /// Time series `X_{t_i}(y_{j₁}, z_{j₂})`, `i = 0..=N`.
    pub fn series(&self, j1: usize, j2: usize) -> Vec<f64> {
        self.field.slice(ndarray::s![.., j1, j2]).to_vec()
    }

    /// Writes the surface dump: header `t,y,z,value`, rows in `(i, j₁, j₂)`
    /// order, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,y,z,value")?;
        let (n, m1, m2) = self.field.dim();
        for i in 0..n {
            let t = self.t(i);
            for j1 in 0..m1 {
                let y = self.y(j1);
                for j2 in 0..m2 {
                    writeln!(w, "{},{},{},{}", fmt17(t), fmt17(y), fmt17(self.z(j2)), fmt17(self.field[[i, j1, j2]]))?;
                }
            }
        }
        Ok(())
    }

    /// Reads a surface dump written by [`ObservationGrid::write_csv`].
    pub fn read_csv<R: BufRead>(r: R, epsilon: f64) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Io("empty surface file".into()))??;
        if header.trim() != "t,y,z,value" {
            return Err(Error::Io(format!("unexpected header {header:?}")));
        }
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Io(format!("bad number in {line:?}: {e}")))?;
            if vals.len() != 4 {
                return Err(Error::Io(format!("expected 4 columns in {line:?}")));
            }
            rows.push([vals[0], vals[1], vals[2], vals[3]]);
        }
        let count = |col: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.len()
        };
        let (nt, ny, nz) = (count(0), count(1), count(2));
        if nt < 2 || ny < 3 || nz < 3 || nt * ny * nz != rows.len() {
            return Err(Error::Io("surface file is not a complete tensor grid".into()));
        }
        let grid = GridSpec::new(nt - 1, ny - 1, nz - 1)?;
        let mut field = Array3::zeros((nt, ny, nz));
        for (pos, row) in rows.iter().enumerate() {
            let (i, rest) = (pos / (ny * nz), pos % (ny * nz));
            let (j1, j2) = (rest / nz, rest % nz);
            let expect = [i as f64 / grid.n_time as f64, j1 as f64 / grid.m1 as f64, j2 as f64 / grid.m2 as f64];
            if expect.iter().zip(row).any(|(e, v)| (e - v).abs() > 1e-12) {
                return Err(Error::Io(format!("row {pos} is out of (i, j1, j2) order")));
            }
            field[[i, j1, j2]] = row[3];
        }
        Ok(ObservationGrid { grid, epsilon, field, truncation: None, seed: None })
    }
}

/// `{:.16e}` trimmed to a plain decimal when that is exact.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Grid frequency and sign that mode `k` aliases onto on an `m`-interval grid.
#[inline]
fn alias(k: usize, m: usize) -> Option<(usize, f64)> {
    let r = k % (2 * m);
    if r == 0 || r == m {
        None
    } else if r < m {
        Some((r, 1.0))
    } else {
        Some((2 * m - r, -1.0))
    }
}

#[derive(Debug, Clone)]
struct ResolvedMode {
    idx: EigenIndex,
    lambda: f64,
    damping: f64,
    x0: f64,
    class: usize,
    sign: f64,
}

/// Everything about a simulation that does not depend on the seed.
#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub params: SpdeParams,
    pub noise: NoiseSpec,
    pub epsilon: f64,
    pub grid: GridSpec,
    pub kmax: usize,
    resolved: Vec<ResolvedMode>,
    /// White-noise standard deviation per grid frequency and step (ε included).
    class_sd: Vec<f64>,
    /// Folded initial coefficients of the white modes.
    class_x0: Vec<f64>,
    sin_y: Array2<f64>,
    sin_z: Array2<f64>,
    weight_y: Vec<f64>,
    weight_z: Vec<f64>,
    // resolved[class_start[c]..class_start[c + 1]] belong to alias class c
    class_start: Vec<usize>,
}

impl SimulationPlan {
    pub fn new(
        params: &SpdeParams,
        noise: &NoiseSpec,
        xi: &InitialField,
        epsilon: f64,
        grid: GridSpec,
        settings: &SimulationSettings,
    ) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon must be non-negative, got {epsilon}")));
        }
        if !(settings.white_noise_cutoff > 0.0) {
            return Err(Error::Config("white_noise_cutoff must be positive".into()));
        }
        let kmax = choose_truncation(&settings.truncation, params, noise, epsilon)?;
        let rule = GaussLegendre::new(settings.quadrature_order);
        let init_k = settings.initial_modes.min(kmax);
        let x0_table = initial_coefficient_table(params, xi, init_k, &rule)?;
        let (r1, r2) = (grid.m1 - 1, grid.m2 - 1);
        let dt = 1.0 / grid.n_time as f64;

        let mut resolved = Vec::new();
        let mut class_var = vec![0.0; r1 * r2];
        let mut class_x0 = vec![0.0; r1 * r2];
        for k in 1..=kmax {
            let Some((rk, sk)) = alias(k, grid.m1) else { continue };
            for l in 1..=kmax {
                let Some((rl, sl)) = alias(l, grid.m2) else { continue };
                let idx = EigenIndex { k: k as u32, l: l as u32 };
                let lambda = crate::model::eigenvalue(params, idx);
                let damping = noise_damping(noise, params, idx);
                let x0 = if k <= init_k && l <= init_k { x0_table[[k - 1, l - 1]] } else { 0.0 };
                let class = (rk - 1) * r2 + (rl - 1);
                let sign = sk * sl;
                if lambda * dt < settings.white_noise_cutoff {
                    resolved.push(ResolvedMode { idx, lambda, damping, x0, class, sign });
                } else {
                    class_var[class] += epsilon * epsilon * damping * damping * transition_variance(lambda, dt);
                    class_x0[class] += sign * x0;
                }
            }
        }
        resolved.sort_by(|a, b| {
            a.class
                .cmp(&b.class)
                .then(a.idx.norm_sq().total_cmp(&b.idx.norm_sq()))
                .then(a.idx.k.cmp(&b.idx.k))
                .then(a.idx.l.cmp(&b.idx.l))
        });

        let mut class_start = vec![resolved.len(); r1 * r2 + 1];
        for (i, m) in resolved.iter().enumerate().rev() {
            class_start[m.class] = i;
        }
        for c in (0..r1 * r2).rev() {
            class_start[c] = class_start[c].min(class_start[c + 1]);
        }

        let sin_table = |m: usize| {
            let mut s = Array2::zeros((m - 1, m - 1));
            for j in 1..m {
                for r in 1..m {
                    s[[j - 1, r - 1]] = (PI * (r * j) as f64 / m as f64).sin();
                }
            }
            s
        };
        let weight_y = (0..=grid.m1).map(|j| 2.0 * (-0.5 * params.kappa() * j as f64 / grid.m1 as f64).exp()).collect();
        let weight_z = (0..=grid.m2).map(|j| (-0.5 * params.eta() * j as f64 / grid.m2 as f64).exp()).collect();

        Ok(SimulationPlan {
            params: *params,
            noise: *noise,
            epsilon,
            grid,
            kmax,
            resolved,
            class_start,
            class_sd: class_var.into_iter().map(f64::sqrt).collect(),
            class_x0,
            sin_y: sin_table(grid.m1),
            sin_z: sin_table(grid.m2),
            weight_y,
            weight_z,
        })
    }

    /// Number of modes simulated path by path.
    pub fn resolved_modes(&self) -> usize {
        self.resolved.len()
    }

    /// Draws one realization.
    pub fn simulate(&self, seed: SeedPath) -> ObservationGrid {
        let n1 = self.grid.n_time + 1;
        let r2 = self.grid.m2 - 1;
        let dt = 1.0 / self.grid.n_time as f64;
        let mut folded = vec![0.0; (self.class_start.len() - 1) * n1];
        folded.par_chunks_mut(n1).enumerate().for_each(|(class, acc)| {
            let mut comp = vec![0.0; n1];
            let modes = &self.resolved[self.class_start[class]..self.class_start[class + 1]];
            for m in modes {
                let mut rng = seed.stream(Domain::Mode, m.idx.k, m.idx.l);
                let decay = (-m.lambda * dt).exp();
                let sd = self.epsilon * m.damping * transition_variance(m.lambda, dt).sqrt();
                let mut x = m.x0;
                kahan_step(&mut acc[0], &mut comp[0], m.sign * x);
                for (a, c) in acc[1..].iter_mut().zip(comp[1..].iter_mut()) {
                    let z: f64 = rng.sample(StandardNormal);
                    x = decay * x + sd * z;
                    kahan_step(a, c, m.sign * x);
                }
            }
            let (sd, x0) = (self.class_sd[class], self.class_x0[class]);
            if sd == 0.0 && x0 == 0.0 {
                return;
            }
            let (r, s) = (class / r2 + 1, class % r2 + 1);
            let mut rng = seed.stream(Domain::AliasClass, r as u32, s as u32);
            kahan_step(&mut acc[0], &mut comp[0], x0);
            for (a, c) in acc[1..].iter_mut().zip(comp[1..].iter_mut()) {
                let z: f64 = rng.sample(StandardNormal);
                kahan_step(a, c, sd * z);
            }
        });

        let field = self.synthesize(&folded);
        ObservationGrid { grid: self.grid, epsilon: self.epsilon, field, truncation: Some(self.kmax), seed: Some(seed) }
    }

    /// Folded coefficients (class-major, `N+1` per class) to field values.
    /// The result is column-major so each time series is contiguous.
    fn synthesize(&self, folded: &[f64]) -> Array3<f64> {
        let n1 = self.grid.n_time + 1;
        let (m1, m2) = (self.grid.m1, self.grid.m2);
        let (r1, r2) = (m1 - 1, m2 - 1);
        let coeffs = ArrayView2::from_shape((r1, r2 * n1), folded).expect("folded buffer shape");
        // t[j1, (s, i)] = Σ_r sin_y[j1, r] c[r, s, i]
        let t = self.sin_y.dot(&coeffs);
        let planes: Vec<Array2<f64>> = (0..r1)
            .into_par_iter()
            .map(|r| {
                let row = t.row(r);
                let row = row.to_shape((r2, n1)).expect("row shape");
                self.sin_z.dot(&row)
            })
            .collect();
        let mut field = Array3::zeros((n1, m1 + 1, m2 + 1).f());
        for (j1, u) in (1..m1).zip(&planes) {
            for j2 in 1..m2 {
                let w = self.weight_y[j1] * self.weight_z[j2];
                field.slice_mut(ndarray::s![.., j1, j2]).zip_mut_with(&u.row(j2 - 1), |f, &v| *f = w * v);
            }
        }
        field
    }

    /// Noise-free field `Σ x_{k,ℓ}(0) e^{−λ_{k,ℓ} t} e_{k,ℓ}` on the grid.
    pub fn deterministic_field(&self) -> Array3<f64> {
        let n1 = self.grid.n_time + 1;
        let dt = 1.0 / self.grid.n_time as f64;
        let mut folded = vec![0.0; (self.class_start.len() - 1) * n1];
        folded.par_chunks_mut(n1).enumerate().for_each(|(class, acc)| {
            let mut comp = vec![0.0; n1];
            let modes = &self.resolved[self.class_start[class]..self.class_start[class + 1]];
            for m in modes.iter().filter(|m| m.x0 != 0.0) {
                for (i, (a, c)) in acc.iter_mut().zip(comp.iter_mut()).enumerate() {
                    kahan_step(a, c, m.sign * m.x0 * (-m.lambda * i as f64 * dt).exp());
                }
            }
            acc[0] += self.class_x0[class];
        });
        self.synthesize(&folded)
    }
}

#[inline]
fn kahan_step(a: &mut f64, c: &mut f64, v: f64) {
    let y = v - *c;
    let t = *a + y;
    *c = (t - *a) - y;
    *a = t;
}

/// Builds a plan and draws one realization.
#[allow(clippy::too_many_arguments)]
pub fn simulate_dataset(
    params: &SpdeParams,
    noise: &NoiseSpec,
    xi: &InitialField,
    epsilon: f64,
    grid: GridSpec,
    settings: &SimulationSettings,
    seed: SeedPath,
) -> Result<ObservationGrid> {
    Ok(SimulationPlan::new(params, noise, xi, epsilon, grid, settings)?.simulate(seed))
}

/// Deterministic mean of the field at a point, summed directly over
/// `k, ℓ ≤ kmax` with projected initial coefficients. Independent of the
/// folding machinery; used as a cross-check.
pub fn mean_field_at(
    params: &SpdeParams,
    xi: &InitialField,
    kmax: usize,
    t: f64,
    y: f64,
    z: f64,
    rule: &GaussLegendre,
) -> Result<f64> {
    let table = initial_coefficient_table(params, xi, kmax, rule)?;
    let mut acc = 0.0;
    for k in 1..=kmax {
        for l in 1..=kmax {
            let idx = EigenIndex { k: k as u32, l: l as u32 };
            acc += table[[k - 1, l - 1]]
                * (-crate::model::eigenvalue(params, idx) * t).exp()
                * eigenfunction_at(params, idx, y, z);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::eigenvalue;

    fn theta_b() -> SpdeParams {
        SpdeParams::new(4.0, 0.3, 0.3, 0.3).unwrap()
    }

    #[test]
    fn alias_folding() {
        assert_eq!(alias(3, 10), Some((3, 1.0)));
        assert_eq!(alias(10, 10), None);
        assert_eq!(alias(20, 10), None);
        assert_eq!(alias(17, 10), Some((3, -1.0)));
        assert_eq!(alias(23, 10), Some((3, 1.0)));
        // sin(π k j/M) identity behind the folding
        for k in 1..60 {
            for j in 1..10 {
                let direct = (PI * (k * j) as f64 / 10.0).sin();
                let folded = alias(k, 10).map_or(0.0, |(r, s)| s * (PI * (r * j) as f64 / 10.0).sin());
                assert!((direct - folded).abs() < 1e-12, "k={k} j={j}");
            }
        }
    }

    #[test]
    fn deterministic_decay_when_noise_free() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let mut rng = SeedPath::new(1, 0).stream(Domain::Aux, 0, 0);
        let p = simulate_coordinate_path(2.5, 0.7, 0.0, 1.3, &times, &mut rng).unwrap();
        for (t, v) in times.iter().zip(&p.values) {
            assert!((v - 1.3 * (-2.5 * t).exp()).abs() < 1e-15);
        }
        assert!(simulate_coordinate_path(0.0, 1.0, 0.1, 1.0, &times, &mut rng).is_err());
        assert!(simulate_coordinate_path(1.0, 1.0, 0.1, 1.0, &[0.0, 0.5, 0.4], &mut rng).is_err());
    }

    #[test]
    fn variance_factor_is_stable() {
        let l = 3.0f64;
        for dt in [1e-12, 1e-9, 1e-6, 1e-3, 1.0] {
            let reference = (1.0 - (-2.0 * l * dt).exp()) / (2.0 * l);
            let v = transition_variance(l, dt);
            if dt >= 1e-6 {
                assert!((v / reference - 1.0).abs() < 1e-9);
            }
            assert!((v / dt - 1.0).abs() < 4.0 * l * dt + 1e-12);
        }
    }

    #[test]
    fn fixed_and_noise_free_truncation() {
        let p = theta_b();
        let q1 = NoiseSpec::q1(0.5).unwrap();
        assert_eq!(choose_truncation(&TruncationPolicy::Fixed { k: 8 }, &p, &q1, 0.01).unwrap(), 8);
        assert_eq!(choose_truncation(&TruncationPolicy::Adaptive { tol: 1e-12 }, &p, &q1, 0.0).unwrap(), 1);
        assert!(choose_truncation(&TruncationPolicy::Fixed { k: 0 }, &p, &q1, 0.01).is_err());
    }

    #[test]
    fn parse_truncation() {
        assert_eq!("fixed:64".parse::<TruncationPolicy>().unwrap(), TruncationPolicy::Fixed { k: 64 });
        assert_eq!("adaptive:1e-6".parse::<TruncationPolicy>().unwrap(), TruncationPolicy::Adaptive { tol: 1e-6 });
        assert!("fixed:0".parse::<TruncationPolicy>().is_err());
        assert!("banana".parse::<TruncationPolicy>().is_err());
    }

    #[test]
    fn single_mode_noise_free_field_is_exact() {
        let p = theta_b();
        let q1 = NoiseSpec::q1(0.5).unwrap();
        let xi = InitialField::single_mode(p, 0.8);
        let grid = GridSpec::new(20, 10, 8).unwrap();
        let settings = SimulationSettings { truncation: TruncationPolicy::Fixed { k: 40 }, ..Default::default() };
        let obs = simulate_dataset(&p, &q1, &xi, 0.0, grid, &settings, SeedPath::new(3, 0)).unwrap();
        let l11 = p.lambda11();
        for i in [0, 5, 20] {
            for j1 in 0..=10 {
                for j2 in 0..=8 {
                    let expect =
                        0.8 * (-l11 * obs.t(i)).exp() * eigenfunction_at(&p, EigenIndex::ONE_ONE, obs.y(j1), obs.z(j2));
                    assert!((obs.field[[i, j1, j2]] - expect).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn boundary_is_exactly_zero_and_runs_are_reproducible() {
        let p = theta_b();
        let q2 = NoiseSpec::q2(0.5, 0.0).unwrap();
        let grid = GridSpec::new(16, 6, 5).unwrap();
        let settings = SimulationSettings { truncation: TruncationPolicy::Fixed { k: 64 }, ..Default::default() };
        let plan = SimulationPlan::new(&p, &q2, &InitialField::polynomial(), 0.1, grid, &settings).unwrap();
        let a = plan.simulate(SeedPath::new(11, 2));
        let b = plan.simulate(SeedPath::new(11, 2));
        let c = plan.simulate(SeedPath::new(11, 3));
        assert_eq!(a, b);
        assert_ne!(a.field, c.field);
        for i in 0..=16 {
            for j in 0..=6 {
                assert_eq!(a.field[[i, j, 0]], 0.0);
                assert_eq!(a.field[[i, j, 5]], 0.0);
            }
            for j in 0..=5 {
                assert_eq!(a.field[[i, 0, j]], 0.0);
                assert_eq!(a.field[[i, 6, j]], 0.0);
            }
        }
    }

    #[test]
    fn folding_matches_direct_superposition() {
        // with a cutoff so large that every mode is path-simulated, the folded
        // synthesis must agree with a direct sum over modes at t = 0
        let p = theta_b();
        let q1 = NoiseSpec::q1(0.5).unwrap();
        let grid = GridSpec::new(4, 5, 7).unwrap();
        let rule = GaussLegendre::new(64);
        let settings = SimulationSettings { truncation: TruncationPolicy::Fixed { k: 24 }, ..Default::default() };
        let plan = SimulationPlan::new(&p, &q1, &InitialField::polynomial(), 0.0, grid, &settings).unwrap();
        let det = plan.deterministic_field();
        for (i, j1, j2) in [(0, 2, 3), (1, 1, 6), (4, 4, 1)] {
            let direct = mean_field_at(
                &p,
                &InitialField::polynomial(),
                24,
                i as f64 / 4.0,
                j1 as f64 / 5.0,
                j2 as f64 / 7.0,
                &rule,
            )
            .unwrap();
            assert!((det[[i, j1, j2]] - direct).abs() < 1e-12, "{} vs {direct}", det[[i, j1, j2]]);
        }
        // the projected initial field reproduces ξ away from the Gibbs-free boundary
        let xi = InitialField::polynomial().value(0.4, 3.0 / 7.0);
        assert!((det[[0, 2, 3]] - xi).abs() < 1e-3);
    }

    #[test]
    fn white_noise_split_preserves_marginal_variance() {
        // the per-point variance at the final time must equal the closed-form
        // sum regardless of where the white-noise cutoff sits
        let p = theta_b();
        let q1 = NoiseSpec::q1(0.5).unwrap();
        let grid = GridSpec::new(50, 4, 4).unwrap();
        let k = 48;
        let reps = 4000;
        let mut stats = Vec::new();
        for cutoff in [1e9, 2.0] {
            let settings = SimulationSettings {
                truncation: TruncationPolicy::Fixed { k },
                white_noise_cutoff: cutoff,
                ..Default::default()
            };
            let plan = SimulationPlan::new(&p, &q1, &InitialField::Zero, 1.0, grid, &settings).unwrap();
            let vals: Vec<f64> = (0..reps).map(|r| plan.simulate(SeedPath::new(5, r)).field[[50, 2, 2]]).collect();
            stats.push(vals.iter().map(|v| v * v).sum::<f64>() / reps as f64);
        }
        let mut exact = 0.0;
        for kk in 1..=k as u32 {
            for ll in 1..=k as u32 {
                let idx = EigenIndex { k: kk, l: ll };
                let lam = eigenvalue(&p, idx);
                let e = eigenfunction_at(&p, idx, 0.5, 0.5);
                exact += lam.powf(-0.5) * transition_variance(lam, 1.0) * e * e;
            }
        }
        let se = exact * (2.0 / reps as f64).sqrt();
        for s in stats {
            assert!((s - exact).abs() < 4.0 * se, "{s} vs {exact}");
        }
    }

    #[test]
    fn surface_csv_round_trip() {
        let p = theta_b();
        let q1 = NoiseSpec::q1(0.5).unwrap();
        let grid = GridSpec::new(3, 3, 2).unwrap();
        let settings = SimulationSettings { truncation: TruncationPolicy::Fixed { k: 16 }, ..Default::default() };
        let obs =
            simulate_dataset(&p, &q1, &InitialField::polynomial(), 0.05, grid, &settings, SeedPath::new(1, 1)).unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,y,z,value\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 4 * 3);
        let back = ObservationGrid::read_csv(&buf[..], 0.05).unwrap();
        assert_eq!(back.field, obs.field);
    }
}
