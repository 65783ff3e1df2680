//! Temporal quadratic variation of the field and the thinned grids.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::model::NoiseKind;
use crate::simulate::ObservationGrid;

/// `Z_N = N^{α−1} Σ_{i=1}^{N} (X_{t_i} − X_{t_{i−1}})²` for a series of length `N+1`.
pub fn z_statistic(series: &[f64], alpha: f64) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Domain(format!(
            "quadratic variation needs at least two observations, got {}",
            series.len()
        )));
    }
    let n = (series.len() - 1) as f64;
    let qv: f64 = series.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    Ok(n.powf(alpha - 1.0) * qv)
}

/// Interior coarse sub-grid of the observation space grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinnedSpaceGrid {
    pub delta: f64,
    /// Observation-grid indices of the retained `y` points.
    pub y_index: Vec<usize>,
    pub z_index: Vec<usize>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl ThinnedSpaceGrid {
    pub fn m1(&self) -> usize {
        self.y.len()
    }
    pub fn m2(&self) -> usize {
        self.z.len()
    }

    /// All points as `((j₁, j₂), (ỹ, z̃))`, `y` major.
    pub fn points(&self) -> impl Iterator<Item = ((usize, usize), (f64, f64))> + '_ {
        self.y_index
            .iter()
            .zip(&self.y)
            .flat_map(move |(&jy, &y)| self.z_index.iter().zip(&self.z).map(move |(&jz, &z)| ((jy, jz), (y, z))))
    }
}

/// Coarse points `ȳ_j = ⌊M/m̄⌋ j / M` from the first one at or above `δ`
/// up to the last one at or below `1 − δ`.
fn thin_axis(m: usize, m_bar: usize, delta: f64) -> Result<(Vec<usize>, Vec<f64>)> {
    if m_bar < 1 || m_bar > m {
        return Err(Error::Config(format!("coarse count m̄ must lie in 1..={m}, got {m_bar}")));
    }
    let step = m / m_bar;
    let (mut idx, mut pts) = (Vec::new(), Vec::new());
    let mut j = 0;
    while step * j <= m {
        let obs = step * j;
        let y = obs as f64 / m as f64;
        if y >= delta && y <= 1.0 - delta {
            idx.push(obs);
            pts.push(y);
        }
        j += 1;
    }
    if idx.is_empty() {
        return Err(Error::Config(format!(
            "no coarse grid point (step {step}/{m}) lies in [{delta}, {}]",
            1.0 - delta
        )));
    }
    Ok((idx, pts))
}

pub fn build_thinned_space_grid(
    m1: usize,
    m2: usize,
    m_bar1: usize,
    m_bar2: usize,
    delta: f64,
) -> Result<ThinnedSpaceGrid> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::Config(format!("delta must lie in (0, 1/2), got {delta}")));
    }
    let (y_index, y) = thin_axis(m1, m_bar1, delta)?;
    let (z_index, z) = thin_axis(m2, m_bar2, delta)?;
    Ok(ThinnedSpaceGrid { delta, y_index, z_index, y, z })
}

/// `t̃_i = ⌊N/n⌋ i / N`, `i = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinnedTimeGrid {
    pub n: usize,
    /// Observation-grid stride `⌊N/n⌋`.
    pub stride: usize,
    pub times: Vec<f64>,
    pub dt: f64,
}

impl ThinnedTimeGrid {
    /// Observation-grid time indices.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.n).map(move |i| i * self.stride)
    }
}

pub fn build_thinned_time_grid(n_obs: usize, n: usize) -> Result<ThinnedTimeGrid> {
    if n < 1 || n > n_obs {
        return Err(Error::Config(format!("thinned count n must lie in 1..={n_obs}, got {n}")));
    }
    let stride = n_obs / n;
    let times = (0..=n).map(|i| (stride * i) as f64 / n_obs as f64).collect();
    Ok(ThinnedTimeGrid { n, stride, times, dt: stride as f64 / n_obs as f64 })
}

/// `Γ(1−α)/(4πα)`.
pub fn surface_constant(alpha: f64) -> f64 {
    gamma(1.0 - alpha) / (4.0 * PI * alpha)
}

/// Amplitude `a` of the limit surface `a·e^{−κy−ηz}`.
pub fn surface_amplitude(kind: NoiseKind, alpha: f64, theta2: f64) -> f64 {
    let scale = match kind {
        NoiseKind::Q1 => theta2,
        NoiseKind::Q2 => theta2.powf(1.0 - alpha),
    };
    surface_constant(alpha) / scale
}

/// Inverse of [`surface_amplitude`] in `θ₂`.
pub fn theta2_from_amplitude(kind: NoiseKind, alpha: f64, amplitude: f64) -> f64 {
    let ratio = surface_constant(alpha) / amplitude;
    match kind {
        NoiseKind::Q1 => ratio,
        NoiseKind::Q2 => ratio.powf(1.0 / (1.0 - alpha)),
    }
}

/// Deterministic limit of `ε⁻²Z_N(y, z)`.
pub fn limit_surface(kind: NoiseKind, alpha: f64, theta1: f64, eta1: f64, theta2: f64, y: f64, z: f64) -> f64 {
    surface_amplitude(kind, alpha, theta2) * (-(theta1 * y + eta1 * z) / theta2).exp()
}

/// `ε⁻²Z_N` at every thinned point, shape `(m1, m2)`.
pub fn z_field(obs: &ObservationGrid, space: &ThinnedSpaceGrid, alpha: f64) -> Result<Array2<f64>> {
    if !(obs.epsilon > 0.0) {
        return Err(Error::Domain("ε⁻²Z_N needs ε > 0".into()));
    }
    let (_, om1, om2) = obs.field.dim();
    if space.y_index.iter().any(|&j| j >= om1) || space.z_index.iter().any(|&j| j >= om2) {
        return Err(Error::Config("thinned grid does not fit the observation grid".into()));
    }
    let scale = obs.epsilon.powi(-2);
    let mut out = Array2::zeros((space.m1(), space.m2()));
    for (a, &jy) in space.y_index.iter().enumerate() {
        for (b, &jz) in space.z_index.iter().enumerate() {
            let series = obs.field.slice(ndarray::s![.., jy, jz]);
            let series = series.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| series.to_vec());
            out[[a, b]] = scale * z_statistic(&series, alpha)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn z_statistic_examples() {
        assert_eq!(z_statistic(&[1.5; 10], 0.5).unwrap(), 0.0);
        assert_relative_eq!(z_statistic(&[0.2, 0.9], 0.3).unwrap(), 0.49, max_relative = 1e-15);
        assert!(z_statistic(&[1.0], 0.5).is_err());
        // N=4, α=0.5: 4^{-1/2}·(1+4+0+1)
        assert_relative_eq!(z_statistic(&[0.0, 1.0, 3.0, 3.0, 2.0], 0.5).unwrap(), 3.0);
    }

    #[test]
    fn thinned_space_examples() {
        let g = build_thinned_space_grid(10, 10, 10, 10, 0.05).unwrap();
        assert_eq!(g.y_index, (1..=9).collect::<Vec<_>>());
        assert_eq!((g.m1(), g.m2()), (9, 9));
        let g = build_thinned_space_grid(100, 100, 10, 10, 0.05).unwrap();
        assert_eq!(g.y_index, (1..=9).map(|j| 10 * j).collect::<Vec<_>>());
        assert_relative_eq!(g.y[0], 0.1);
        assert_eq!(g.points().count(), 81);
        // a single central coarse point survives a wide margin
        let g = build_thinned_space_grid(10, 10, 2, 2, 0.49).unwrap();
        assert_eq!(g.y_index, vec![5]);
        assert!(build_thinned_space_grid(10, 10, 3, 3, 0.45).is_err());
        assert!(build_thinned_space_grid(10, 10, 10, 10, 0.6).is_err());
        assert!(build_thinned_space_grid(10, 10, 11, 10, 0.1).is_err());
    }

    #[test]
    fn thinned_time_examples() {
        let g = build_thinned_time_grid(10, 10).unwrap();
        assert_eq!(g.dt, 0.1);
        let g = build_thinned_time_grid(10, 3).unwrap();
        assert_eq!(g.times, vec![0.0, 0.3, 0.6, 0.9]);
        assert_relative_eq!(g.dt, 0.3);
        assert_eq!(g.indices().collect::<Vec<_>>(), vec![0, 3, 6, 9]);
        assert_eq!(build_thinned_time_grid(1000, 100).unwrap().dt, 0.01);
        assert!(build_thinned_time_grid(10, 0).is_err());
        assert!(build_thinned_time_grid(10, 11).is_err());
    }

    #[test]
    fn limit_surface_examples() {
        let v = limit_surface(NoiseKind::Q1, 0.5, 0.0, 0.0, 1.0, 0.3, 0.8);
        assert_relative_eq!(v, 0.282_094_791_773_878_14, max_relative = 1e-12);
        assert_relative_eq!(v, limit_surface(NoiseKind::Q2, 0.5, 0.0, 0.0, 1.0, 0.3, 0.8), max_relative = 1e-15);
        let v = limit_surface(NoiseKind::Q1, 0.5, 0.3, 0.3, 0.3, 0.5, 0.5);
        assert_relative_eq!(v, 0.345_922_914_517_162_2, max_relative = 1e-12);
    }

    #[test]
    fn amplitude_inverse() {
        for kind in [NoiseKind::Q1, NoiseKind::Q2] {
            for t2 in [0.05, 0.3, 2.0] {
                let a = surface_amplitude(kind, 0.4, t2);
                assert_relative_eq!(theta2_from_amplitude(kind, 0.4, a), t2, max_relative = 1e-14);
            }
        }
    }
}
