//! Summaries and output files of an experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelBlock};
use super::run::{studentizing_variance, truth_of, OuRecord, ReplicateRecord, ReplicateTable};
use crate::coordinate::{AsymptoticRegime, VarianceReport};
use crate::error::{Error, Result};
use crate::model::{check_identifiable_start, mu_value, EigenIndex, NoiseKind};
use crate::quadrature::GaussLegendre;
use crate::stats::{ks_p_value, ks_statistic_normal, median, moments};

pub const SPDE_HEADER: &str =
    "rep,theta1_hat,eta1_hat,theta2_hat,lambda11_hat,theta0_hat,mu0_hat,stud_eps,stud_sqrtn,clamped,fail_code,wall_ms";
pub const OU_HEADER: &str = "rep,lambda_hat,mu_hat,stud_eps,stud_sqrtn,clamped,fail_code,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub truth: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub skew: Option<f64>,
    pub kurt: Option<f64>,
    pub median: Option<f64>,
    /// Median of `|estimate − truth| / |truth|`.
    pub median_rel_error: Option<f64>,
    pub median_abs_error: Option<f64>,
    /// KS statistic of the matching studentized errors against N(0, 1).
    pub ks_stat: Option<f64>,
    pub ks_p: Option<f64>,
    /// Predicted sd of the estimate.
    pub se_theoretical: Option<f64>,
    /// Empirical sd over `se_theoretical`.
    pub se_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_echo: ExperimentConfig,
    pub n_replicates: usize,
    pub n_success: usize,
    pub n_failed: usize,
    pub experiment_failed: bool,
    pub n_eps2: f64,
    pub inv_n_eps2: f64,
    pub regime: AsymptoticRegime,
    #[serde(flatten)]
    pub columns: BTreeMap<String, ColumnSummary>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Statistics of one column; `stud` are the matching studentized errors.
pub fn column_summary(values: &[f64], truth: Option<f64>, stud: Option<&[f64]>, se: Option<f64>) -> ColumnSummary {
    let m = moments(values);
    let sd = m.map(|m| m.sd);
    let ks_stat = stud.filter(|s| s.len() >= 2).map(|s| {
        // a degenerate column carries no distributional information
        if s.iter().all(|v| *v == s[0]) {
            1.0
        } else {
            ks_statistic_normal(s)
        }
    });
    let ks_p = ks_stat.zip(stud).map(|(d, s)| ks_p_value(d, s.len()));
    let rel: Option<Vec<f64>> =
        truth.filter(|t| *t != 0.0).map(|t| values.iter().map(|v| ((v - t) / t).abs()).collect());
    let abs: Option<Vec<f64>> = truth.map(|t| values.iter().map(|v| (v - t).abs()).collect());
    ColumnSummary {
        truth,
        mean: m.and_then(|m| finite(m.mean)),
        sd: sd.and_then(finite),
        skew: m.and_then(|m| finite(m.skew)),
        kurt: m.and_then(|m| finite(m.kurt)),
        median: median(values),
        median_rel_error: rel.as_deref().and_then(median),
        median_abs_error: abs.as_deref().and_then(median),
        ks_stat,
        ks_p,
        se_theoretical: se,
        se_ratio: sd.zip(se).and_then(|(s, t)| finite(s / t)),
    }
}

fn collect(values: impl Iterator<Item = Option<f64>>) -> Vec<f64> {
    values.flatten().filter(|v| v.is_finite()).collect()
}

/// Predicted sd of `λ̂` and `μ̂` on the estimate scale.
fn predicted_se(cfg: &ExperimentConfig, v: &VarianceReport) -> (Option<f64>, Option<f64>) {
    let (n, eps) = cfg.n_and_epsilon();
    let sqrt_n = (n as f64).sqrt();
    match (v.kind, cfg.regime()) {
        (NoiseKind::Q1, AsymptoticRegime::B1) => (v.se_eps.map(|s| eps * s), None),
        (NoiseKind::Q1, AsymptoticRegime::B2 { .. }) => (v.se_sqrtn.map(|s| s / sqrt_n), None),
        (NoiseKind::Q2, _) => (v.se_eps.map(|s| eps * s), v.se_sqrtn.map(|s| s / sqrt_n)),
    }
}

fn studentizing_for(cfg: &ExperimentConfig) -> Result<Option<VarianceReport>> {
    Ok(match &cfg.model {
        ModelBlock::Spde(b) => {
            let rule = GaussLegendre::new(cfg.grid.simulation.quadrature_order);
            let x0 = check_identifiable_start(&b.params, &b.xi.build(&b.params), &rule)?;
            let mu = b.noise.is_q2().then(|| mu_value(&b.noise, EigenIndex::ONE_ONE)).transpose()?;
            studentizing_variance(b.noise.kind(), cfg, b.params.lambda11(), mu, x0)
        }
        ModelBlock::Ou(b) => studentizing_variance(b.model.kind(), cfg, b.model.lambda, b.model.mu, b.model.x0),
    })
}

/// Per-estimator statistics of a replicate table.
pub fn summarize(cfg: &ExperimentConfig, table: &ReplicateTable) -> Result<Summary> {
    let n_failed = table.failures();
    let n_success = table.len() - n_failed;
    if n_success < 2 {
        return Err(Error::Usage(format!("summaries need at least two successful replicates, got {n_success}")));
    }
    let truth: BTreeMap<&str, f64> = truth_of(cfg).into_iter().collect();
    let variance = studentizing_for(cfg)?;
    let (se_lambda, se_mu) = variance.as_ref().map(|v| predicted_se(cfg, v)).unwrap_or((None, None));
    let primary_is_sqrtn = matches!((cfg.noise_kind(), cfg.regime()), (NoiseKind::Q1, AsymptoticRegime::B2 { .. }));
    let mut columns = BTreeMap::new();
    let mut put = |name: &str, values: Vec<f64>, stud: Option<&[f64]>, se: Option<f64>| {
        if !values.is_empty() {
            columns.insert(name.to_string(), column_summary(&values, truth.get(name).copied(), stud, se));
        }
    };
    macro_rules! col {
        ($rows:expr, $field:ident) => {
            collect($rows.iter().map(|r| r.$field))
        };
    }
    match table {
        ReplicateTable::Spde(rows) => {
            let rows: &Vec<ReplicateRecord> = rows;
            let (se, sn) = (col!(rows, stud_eps), col!(rows, stud_sqrtn));
            let lambda_stud = if primary_is_sqrtn { &sn } else { &se };
            let mu_unknown = rows.iter().any(|r| r.mu0_hat.is_some());
            for (name, values) in [
                ("theta1_hat", col!(rows, theta1_hat)),
                ("eta1_hat", col!(rows, eta1_hat)),
                ("theta2_hat", col!(rows, theta2_hat)),
            ] {
                put(name, values, None, None);
            }
            put("lambda11_hat", col!(rows, lambda11_hat), Some(lambda_stud), se_lambda);
            put("theta0_hat", col!(rows, theta0_hat), None, None);
            put("mu0_hat", col!(rows, mu0_hat), mu_unknown.then_some(&sn[..]), se_mu);
            put("stud_eps", se.clone(), Some(&se), None);
            put("stud_sqrtn", sn.clone(), Some(&sn), None);
        }
        ReplicateTable::Ou(rows) => {
            let rows: &Vec<OuRecord> = rows;
            let (se, sn) = (col!(rows, stud_eps), col!(rows, stud_sqrtn));
            let lambda_stud = if primary_is_sqrtn { &sn } else { &se };
            put("lambda_hat", col!(rows, lambda_hat), Some(lambda_stud), se_lambda);
            put("mu_hat", col!(rows, mu_hat), Some(&sn), se_mu);
            put("stud_eps", se.clone(), Some(&se), None);
            put("stud_sqrtn", sn.clone(), Some(&sn), None);
        }
    }
    let (n, eps) = cfg.n_and_epsilon();
    let n_eps2 = n as f64 * eps * eps;
    Ok(Summary {
        config_echo: cfg.clone(),
        n_replicates: table.len(),
        n_success,
        n_failed,
        experiment_failed: table.experiment_failed(),
        n_eps2,
        inv_n_eps2: 1.0 / n_eps2,
        regime: cfg.regime(),
        columns,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// `replicates.csv` contents.
pub fn replicates_csv(table: &ReplicateTable) -> String {
    let mut s = String::new();
    match table {
        ReplicateTable::Spde(rows) => {
            s.push_str(SPDE_HEADER);
            s.push('\n');
            for r in rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.rep,
                    opt(r.theta1_hat),
                    opt(r.eta1_hat),
                    opt(r.theta2_hat),
                    opt(r.lambda11_hat),
                    opt(r.theta0_hat),
                    opt(r.mu0_hat),
                    opt(r.stud_eps),
                    opt(r.stud_sqrtn),
                    r.clamped as u8,
                    r.fail_code.map(|c| c.as_str()).unwrap_or(""),
                    r.wall_ms
                );
            }
        }
        ReplicateTable::Ou(rows) => {
            s.push_str(OU_HEADER);
            s.push('\n');
            for r in rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    r.rep,
                    opt(r.lambda_hat),
                    opt(r.mu_hat),
                    opt(r.stud_eps),
                    opt(r.stud_sqrtn),
                    r.clamped as u8,
                    r.fail_code.map(|c| c.as_str()).unwrap_or(""),
                    r.wall_ms
                );
            }
        }
    }
    s
}

/// Writes `replicates.csv` and, when possible, `summary.json` into `dir`.
/// Returns the summary if one could be computed.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, table: &ReplicateTable) -> Result<Option<Summary>> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("replicates.csv"), replicates_csv(table))?;
    let summary = summarize(cfg, table).ok();
    if let Some(s) = &summary {
        let json = serde_json::to_string_pretty(s).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(dir.join("summary.json"), json + "\n")?;
    }
    Ok(summary)
}
