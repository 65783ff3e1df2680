//! Replicate execution for SPDE and OU experiments.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelBlock, OuBlock, SpatialMode, SpdeBlock};
use crate::coordinate::{
    approximate_coordinate, asymptotic_variance, estimate_lambda_mu_q2, estimate_lambda_q1, recover_mu0,
    recover_theta0, AsymptoticRegime, VarianceReport,
};
use crate::error::{Error, FailCode, Result};
use crate::model::{check_identifiable_start, mu_value, EigenIndex, NoiseKind, SpdeParams};
use crate::ou::{estimate_case1, estimate_case2, simulate_ou, OuCase};
use crate::quadrature::GaussLegendre;
use crate::qv::{build_thinned_space_grid, build_thinned_time_grid, z_field, ThinnedSpaceGrid, ThinnedTimeGrid};
use crate::rng::SeedPath;
use crate::simulate::{GridSpec, ObservationGrid, SimulationPlan};
use crate::spatial::{minimize_contrast, SpatialContrastInput};

/// Fraction of failed replicates above which an experiment is failed.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

/// One end-to-end SPDE replicate. Estimates are `None` on failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: u64,
    pub theta1_hat: Option<f64>,
    pub eta1_hat: Option<f64>,
    pub theta2_hat: Option<f64>,
    pub lambda11_hat: Option<f64>,
    pub theta0_hat: Option<f64>,
    pub mu0_hat: Option<f64>,
    /// `ε⁻¹(λ̂ − λ*)/se`.
    pub stud_eps: Option<f64>,
    /// Q1: `√n(λ̂ − λ*)/se`; Q2: `√n(μ̂ − μ*)/se`.
    pub stud_sqrtn: Option<f64>,
    pub clamped: bool,
    pub fail_code: Option<FailCode>,
    pub wall_ms: u64,
}

impl ReplicateRecord {
    fn failed(rep: u64, code: FailCode, wall_ms: u64) -> Self {
        ReplicateRecord {
            rep,
            theta1_hat: None,
            eta1_hat: None,
            theta2_hat: None,
            lambda11_hat: None,
            theta0_hat: None,
            mu0_hat: None,
            stud_eps: None,
            stud_sqrtn: None,
            clamped: false,
            fail_code: Some(code),
            wall_ms,
        }
    }
}

/// One OU replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuRecord {
    pub rep: u64,
    pub lambda_hat: Option<f64>,
    pub mu_hat: Option<f64>,
    pub stud_eps: Option<f64>,
    pub stud_sqrtn: Option<f64>,
    pub clamped: bool,
    pub fail_code: Option<FailCode>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReplicateTable {
    Spde(Vec<ReplicateRecord>),
    Ou(Vec<OuRecord>),
}

impl ReplicateTable {
    pub fn len(&self) -> usize {
        match self {
            ReplicateTable::Spde(v) => v.len(),
            ReplicateTable::Ou(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn failures(&self) -> usize {
        match self {
            ReplicateTable::Spde(v) => v.iter().filter(|r| r.fail_code.is_some()).count(),
            ReplicateTable::Ou(v) => v.iter().filter(|r| r.fail_code.is_some()).count(),
        }
    }

    /// More than [`MAX_FAILURE_FRACTION`] of the replicates failed.
    pub fn experiment_failed(&self) -> bool {
        self.failures() as f64 > MAX_FAILURE_FRACTION * self.len() as f64
    }
}

/// Quantities that do not change across replicates.
pub struct SpdeContext {
    pub block: SpdeBlock,
    pub plan: SimulationPlan,
    pub space: ThinnedSpaceGrid,
    pub time: ThinnedTimeGrid,
    /// `x₁,₁(0)` at the true parameters.
    pub x11_0: f64,
    pub truth_mu11: Option<f64>,
    pub studentize: Option<VarianceReport>,
}

impl SpdeContext {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let ModelBlock::Spde(block) = cfg.model else {
            return Err(Error::Usage("SPDE context needs an SPDE model block".into()));
        };
        let g = &cfg.grid;
        let grid = GridSpec::new(g.n_obs, g.m1, g.m2)?;
        let xi = block.xi.build(&block.params);
        let rule = GaussLegendre::new(g.simulation.quadrature_order);
        let x11_0 = check_identifiable_start(&block.params, &xi, &rule)?;
        let plan = SimulationPlan::new(&block.params, &block.noise, &xi, block.epsilon, grid, &g.simulation)?;
        let space = build_thinned_space_grid(g.m1, g.m2, g.m_bar1, g.m_bar2, g.delta)?;
        let time = build_thinned_time_grid(g.n_obs, g.n)?;
        let truth_mu11 = block.noise.is_q2().then(|| mu_value(&block.noise, EigenIndex::ONE_ONE)).transpose()?;
        let studentize = studentizing_variance(block.noise.kind(), cfg, block.params.lambda11(), truth_mu11, x11_0);
        Ok(SpdeContext { block, plan, space, time, x11_0, truth_mu11, studentize })
    }

    /// Simulates and estimates replicate `rep`.
    pub fn run_one(&self, cfg: &ExperimentConfig, rep: u64) -> ReplicateRecord {
        let start = Instant::now();
        let obs = self.plan.simulate(SeedPath::new(cfg.run.seed, rep));
        let result = self.estimate(cfg, &obs);
        let wall_ms = if cfg.run.timing { start.elapsed().as_millis() as u64 } else { 0 };
        match result {
            Ok(mut r) => {
                r.rep = rep;
                r.wall_ms = wall_ms;
                r
            }
            Err(e) => ReplicateRecord::failed(rep, e.fail_code(), wall_ms),
        }
    }

    /// Estimation pipeline on one dataset.
    pub fn estimate(&self, cfg: &ExperimentConfig, obs: &ObservationGrid) -> Result<ReplicateRecord> {
        let b = &self.block;
        let alpha = b.noise.alpha();
        let mut clamped = false;
        let plugin = match cfg.estimation.spatial {
            SpatialMode::Truth => (b.params.theta1, b.params.eta1, b.params.theta2),
            SpatialMode::Fit => {
                let zvals = z_field(obs, &self.space, alpha)?;
                let input = SpatialContrastInput::new(zvals, self.space.clone(), alpha, b.epsilon, b.noise.kind())?;
                let est = minimize_contrast(&input, &cfg.estimation.search_box, &cfg.estimation.spatial_opt)?;
                clamped |= est.diagnostics.clamped;
                (est.theta1, est.eta1, est.theta2)
            }
        };
        let path = approximate_coordinate(obs, &self.time, plugin, EigenIndex::ONE_ONE)?;
        let search = &cfg.estimation.lambda_search;
        let (lambda_hat, mu_hat) = match b.noise.kind() {
            NoiseKind::Q1 => {
                let e = estimate_lambda_q1(&path.values, path.dt, b.epsilon, alpha, search)?;
                clamped |= e.clamped;
                (e.lambda, None)
            }
            NoiseKind::Q2 => {
                let known = if b.mu0_known { self.truth_mu11 } else { None };
                let e = estimate_lambda_mu_q2(&path.values, path.dt, b.epsilon, alpha, search, known)?;
                clamped |= e.clamped;
                (e.lambda, if b.mu0_known { None } else { e.mu })
            }
        };
        let lambda_true = b.params.lambda11();
        let n = self.time.n as f64;
        let (stud_eps, stud_sqrtn) = match &self.studentize {
            None => (None, None),
            Some(v) => {
                let se = v.se_eps.map(|s| (lambda_hat - lambda_true) / (b.epsilon * s));
                let sn = match (b.noise.kind(), mu_hat, self.truth_mu11) {
                    (NoiseKind::Q1, _, _) => v.se_sqrtn.map(|s| n.sqrt() * (lambda_hat - lambda_true) / s),
                    (NoiseKind::Q2, Some(m), Some(mt)) => v.se_sqrtn.map(|s| n.sqrt() * (m - mt) / s),
                    _ => None,
                };
                (se, sn)
            }
        };
        Ok(ReplicateRecord {
            rep: 0,
            theta1_hat: Some(plugin.0),
            eta1_hat: Some(plugin.1),
            theta2_hat: Some(plugin.2),
            lambda11_hat: Some(lambda_hat),
            theta0_hat: Some(recover_theta0(lambda_hat, plugin)),
            mu0_hat: mu_hat.map(recover_mu0),
            stud_eps,
            stud_sqrtn,
            clamped,
            fail_code: None,
            wall_ms: 0,
        })
    }
}

/// Variances at the truth used to studentize. For Q1 both normalizations
/// are reported, with `c` from the configured regime or the realized
/// `(nε²)⁻¹`.
pub fn studentizing_variance(
    kind: NoiseKind,
    cfg: &ExperimentConfig,
    lambda: f64,
    mu: Option<f64>,
    x0: f64,
) -> Option<VarianceReport> {
    let (n, eps) = cfg.n_and_epsilon();
    if !(eps > 0.0) {
        return None;
    }
    let alpha = match &cfg.model {
        ModelBlock::Spde(b) => b.noise.alpha(),
        ModelBlock::Ou(b) => b.model.alpha,
    };
    let regime = match kind {
        NoiseKind::Q1 => AsymptoticRegime::B2 {
            c: match cfg.estimation.regime {
                Some(AsymptoticRegime::B2 { c }) => c,
                _ => 1.0 / (n as f64 * eps * eps),
            },
        },
        NoiseKind::Q2 => cfg.regime(),
    };
    asymptotic_variance(kind, regime, lambda, mu, alpha, x0).ok()
}

/// Sizes rayon's global pool. Only the first call in a process has effect.
pub fn init_global_pool(threads: usize) -> Result<()> {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        Ok(()) => Ok(()),
        // already initialized
        Err(_) => Ok(()),
    }
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs replicates `0..R` and returns them in replicate order.
pub fn run_replicates(cfg: &ExperimentConfig) -> Result<ReplicateTable> {
    cfg.validate()?;
    let reps = cfg.run.replicates as u64;
    match &cfg.model {
        ModelBlock::Spde(_) => {
            let ctx = SpdeContext::new(cfg)?;
            let rows = with_pool(cfg.run.threads, || (0..reps).into_par_iter().map(|r| ctx.run_one(cfg, r)).collect())?;
            Ok(ReplicateTable::Spde(rows))
        }
        ModelBlock::Ou(block) => {
            let rows =
                with_pool(cfg.run.threads, || (0..reps).into_par_iter().map(|r| run_ou_one(cfg, block, r)).collect())?;
            Ok(ReplicateTable::Ou(rows))
        }
    }
}

pub fn run_ou_one(cfg: &ExperimentConfig, block: &OuBlock, rep: u64) -> OuRecord {
    let start = Instant::now();
    let m = &block.model;
    let result = (|| -> Result<OuRecord> {
        let path = simulate_ou(m, SeedPath::new(cfg.run.seed, rep))?;
        let search = &cfg.estimation.lambda_search;
        let est = match m.case {
            OuCase::Case1 => estimate_case1(&path, m.epsilon, m.alpha, m.x0, search, cfg.regime())?,
            OuCase::Case2 => {
                estimate_case2(&path, m.epsilon, m.alpha, m.x0, search, block.mu_known.then_some(m.mu).flatten())?
            }
        };
        let lam = est.estimate.lambda;
        let mu_hat = if block.mu_known { None } else { est.estimate.mu };
        let truth = studentizing_variance(m.kind(), cfg, m.lambda, m.mu, m.x0);
        let nsq = (m.n as f64).sqrt();
        let (stud_eps, stud_sqrtn) = match truth {
            None => (None, None),
            Some(v) => (
                v.se_eps.map(|s| (lam - m.lambda) / (m.epsilon * s)),
                match m.case {
                    OuCase::Case1 => v.se_sqrtn.map(|s| nsq * (lam - m.lambda) / s),
                    OuCase::Case2 => match (mu_hat, m.mu) {
                        (Some(mh), Some(mt)) => v.se_sqrtn.map(|s| nsq * (mh - mt) / s),
                        _ => None,
                    },
                },
            ),
        };
        Ok(OuRecord {
            rep,
            lambda_hat: Some(lam),
            mu_hat,
            stud_eps,
            stud_sqrtn,
            clamped: est.estimate.clamped,
            fail_code: None,
            wall_ms: 0,
        })
    })();
    let wall_ms = if cfg.run.timing { start.elapsed().as_millis() as u64 } else { 0 };
    match result {
        Ok(r) => OuRecord { wall_ms, ..r },
        Err(e) => OuRecord {
            rep,
            lambda_hat: None,
            mu_hat: None,
            stud_eps: None,
            stud_sqrtn: None,
            clamped: false,
            fail_code: Some(e.fail_code()),
            wall_ms,
        },
    }
}

/// True parameters echoed in summaries.
pub fn truth_of(cfg: &ExperimentConfig) -> Vec<(&'static str, f64)> {
    match &cfg.model {
        ModelBlock::Spde(b) => {
            let p: &SpdeParams = &b.params;
            let mut v = vec![
                ("theta1_hat", p.theta1),
                ("eta1_hat", p.eta1),
                ("theta2_hat", p.theta2),
                ("lambda11_hat", p.lambda11()),
                ("theta0_hat", p.theta0),
            ];
            if let crate::model::NoiseSpec::Q2 { mu0, .. } = b.noise {
                v.push(("mu0_hat", mu0));
            }
            v
        }
        ModelBlock::Ou(b) => {
            let mut v = vec![("lambda_hat", b.model.lambda)];
            if let Some(mu) = b.model.mu {
                v.push(("mu_hat", mu));
            }
            v
        }
    }
}
