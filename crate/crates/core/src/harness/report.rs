//! Single-dataset estimation report.

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelBlock, SpatialMode};
use crate::coordinate::{
    approximate_coordinate, asymptotic_variance, estimate_lambda_mu_q2, estimate_lambda_q1, recover_mu0,
    recover_theta0, LambdaEstimate, VarianceReport,
};
use crate::error::{Error, Result};
use crate::model::{initial_coefficient, mu_value, EigenIndex, NoiseKind, SpdeParams};
use crate::quadrature::GaussLegendre;
use crate::qv::{build_thinned_space_grid, build_thinned_time_grid, z_field};
use crate::simulate::ObservationGrid;
use crate::spatial::{minimize_contrast, SpatialContrastInput, SpatialDiagnostics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub theta1: f64,
    pub eta1: f64,
    pub theta2: f64,
    pub lambda11: f64,
    pub theta0: f64,
    pub mu0: Option<f64>,
    /// `None` when the true spatial parameters were plugged in.
    pub spatial: Option<SpatialDiagnostics>,
    pub coordinate: LambdaEstimate,
    /// Plug-in variances at the estimates, with `x₁,₁(0)` projected from `ξ`
    /// at the estimated parameters.
    pub variance: Option<VarianceReport>,
    pub n_eps2: f64,
}

/// Runs the estimation stages of `cfg` on one dataset.
pub fn estimate_dataset(cfg: &ExperimentConfig, obs: &ObservationGrid) -> Result<EstimationReport> {
    let ModelBlock::Spde(b) = &cfg.model else {
        return Err(Error::Usage("dataset estimation needs an SPDE model block".into()));
    };
    let g = &cfg.grid;
    let (_, m1p, m2p) = obs.field.dim();
    let space = build_thinned_space_grid(m1p - 1, m2p - 1, g.m_bar1.min(m1p - 1), g.m_bar2.min(m2p - 1), g.delta)?;
    let time = build_thinned_time_grid(obs.grid.n_time, g.n.min(obs.grid.n_time))?;
    let alpha = b.noise.alpha();
    let (plugin, spatial) = match cfg.estimation.spatial {
        SpatialMode::Truth => ((b.params.theta1, b.params.eta1, b.params.theta2), None),
        SpatialMode::Fit => {
            let zvals = z_field(obs, &space, alpha)?;
            let input = SpatialContrastInput::new(zvals, space, alpha, obs.epsilon, b.noise.kind())?;
            let est = minimize_contrast(&input, &cfg.estimation.search_box, &cfg.estimation.spatial_opt)?;
            ((est.theta1, est.eta1, est.theta2), Some(est.diagnostics))
        }
    };
    let path = approximate_coordinate(obs, &time, plugin, EigenIndex::ONE_ONE)?;
    let search = &cfg.estimation.lambda_search;
    let coordinate = match b.noise.kind() {
        NoiseKind::Q1 => estimate_lambda_q1(&path.values, path.dt, obs.epsilon, alpha, search)?,
        NoiseKind::Q2 => {
            let known = if b.mu0_known { Some(mu_value(&b.noise, EigenIndex::ONE_ONE)?) } else { None };
            estimate_lambda_mu_q2(&path.values, path.dt, obs.epsilon, alpha, search, known)?
        }
    };
    let theta0 = recover_theta0(coordinate.lambda, plugin);
    let variance = SpdeParams::new(theta0, plugin.0, plugin.1, plugin.2).ok().and_then(|p| {
        let rule = GaussLegendre::new(g.simulation.quadrature_order);
        let x0 = initial_coefficient(&p, &b.xi.build(&b.params), EigenIndex::ONE_ONE, &rule).ok()?;
        asymptotic_variance(b.noise.kind(), cfg.regime(), coordinate.lambda, coordinate.mu, alpha, x0).ok()
    });
    let n_eps2 = time.n as f64 * obs.epsilon * obs.epsilon;
    Ok(EstimationReport {
        theta1: plugin.0,
        eta1: plugin.1,
        theta2: plugin.2,
        lambda11: coordinate.lambda,
        theta0,
        mu0: if b.noise.is_q2() && !b.mu0_known { coordinate.mu.map(recover_mu0) } else { None },
        spatial,
        coordinate,
        variance,
        n_eps2,
    })
}
