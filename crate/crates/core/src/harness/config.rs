//! Experiment configuration: a flat `section.key = value` text format.
//!
//! Blank lines and `#` comments are ignored. Unknown keys and repeated keys
//! are errors, so typos cannot silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coordinate::{AsymptoticRegime, LambdaSearch};
use crate::error::{Error, Result};
use crate::model::{InitialField, NoiseKind, NoiseSpec, SpdeParams};
use crate::ou::{OuCase, OuModel, B2_THRESHOLD};
use crate::qv::{build_thinned_space_grid, build_thinned_time_grid};
use crate::simulate::{GridSpec, SimulationSettings};
use crate::spatial::{SearchBox, SpatialOptConfig};

/// Parsed but untyped `key → value` pairs.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || !k.contains('.') {
            return Err(Error::Config(format!("line {}: key {k:?} must be `section.name`", no + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k}", no + 1)));
        }
    }
    Ok(out)
}

/// Initial field by name: `zero`, `polynomial[:scale]`, `single_mode:amplitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XiSpec {
    Zero,
    Polynomial { scale: f64 },
    SingleMode { amplitude: f64 },
}

impl XiSpec {
    pub fn build(&self, params: &SpdeParams) -> InitialField {
        match *self {
            XiSpec::Zero => InitialField::Zero,
            XiSpec::Polynomial { scale } => InitialField::Polynomial { scale },
            XiSpec::SingleMode { amplitude } => InitialField::single_mode(*params, amplitude),
        }
    }
}

impl FromStr for XiSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |a: Option<&str>, default: Option<f64>| -> Result<f64> {
            match (a, default) {
                (Some(a), _) => a.parse().map_err(|_| Error::Config(format!("bad number {a:?} in model.xi"))),
                (None, Some(d)) => Ok(d),
                (None, None) => Err(Error::Config(format!("model.xi = {s} needs an amplitude"))),
            }
        };
        match name {
            "zero" => Ok(XiSpec::Zero),
            "polynomial" => Ok(XiSpec::Polynomial { scale: num(arg, Some(30.0))? }),
            "single_mode" => Ok(XiSpec::SingleMode { amplitude: num(arg, None)? }),
            other => Err(Error::Config(format!("unknown initial field {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialMode {
    /// Fit `(θ₁, η₁, θ₂)` by minimum contrast.
    Fit,
    /// Plug in the true `(θ₁, η₁, θ₂)` (oracle runs; required when `ε = 0`).
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdeBlock {
    pub params: SpdeParams,
    pub noise: NoiseSpec,
    pub xi: XiSpec,
    pub epsilon: f64,
    /// Q2 only: treat `μ₀` as known.
    pub mu0_known: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuBlock {
    pub model: OuModel,
    pub mu_known: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelBlock {
    Spde(SpdeBlock),
    Ou(OuBlock),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBlock {
    pub n_obs: usize,
    pub m1: usize,
    pub m2: usize,
    /// Thinned time count `n`.
    pub n: usize,
    pub m_bar1: usize,
    pub m_bar2: usize,
    pub delta: f64,
    pub simulation: SimulationSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationBlock {
    pub search_box: SearchBox,
    pub spatial_opt: SpatialOptConfig,
    pub lambda_search: LambdaSearch,
    pub spatial: SpatialMode,
    /// `None` lets `(n, ε)` decide.
    pub regime: Option<AsymptoticRegime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBlock {
    pub replicates: usize,
    pub seed: u64,
    /// Not echoed, so moving the output directory keeps outputs identical.
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    /// Record wall-clock times (outputs are then not byte-reproducible).
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub grid: GridBlock,
    pub estimation: EstimationBlock,
    pub run: RunBlock,
}

struct Keys {
    map: BTreeMap<String, String>,
    used: Vec<String>,
}

impl Keys {
    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.push(key.to_string());
        }
        v
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            Some(v) => v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
            None => Ok(default),
        }
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.raw(key).ok_or_else(|| Error::Config(format!("missing required key {key}")))?;
        v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    fn pair(&mut self, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                match parts.as_slice() {
                    [a, b] => match (a.parse(), b.parse()) {
                        (Ok(a), Ok(b)) => Ok((a, b)),
                        _ => Err(Error::Config(format!("{key}: cannot parse {v:?} as `lo, hi`"))),
                    },
                    _ => Err(Error::Config(format!("{key}: expected `lo, hi`, got {v:?}"))),
                }
            }
        }
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self.map.keys().filter(|k| !self.used.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {unknown:?}")))
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut keys = Keys { map: parse_key_values(text)?, used: Vec::new() };
        let kind: String = keys.get("model.type", "spde".to_string())?;
        let epsilon: f64 = keys.require("model.epsilon")?;
        let alpha: f64 = keys.require("model.alpha")?;
        let model = match kind.as_str() {
            "spde" => {
                let params = SpdeParams::new(
                    keys.require("model.theta0")?,
                    keys.require("model.theta1")?,
                    keys.require("model.eta1")?,
                    keys.require("model.theta2")?,
                )
                .map_err(|e| Error::Config(e.to_string()))?;
                let noise = match keys.get("model.noise", "q1".to_string())?.as_str() {
                    "q1" => NoiseSpec::q1(alpha),
                    "q2" => NoiseSpec::q2(alpha, keys.get("model.mu0", 0.0)?),
                    other => return Err(Error::Config(format!("model.noise must be q1 or q2, got {other}"))),
                }
                .map_err(|e| Error::Config(e.to_string()))?;
                let xi: XiSpec = keys.get("model.xi", XiSpec::Polynomial { scale: 30.0 })?;
                let mu0_known = keys.get("model.mu0_known", false)?;
                ModelBlock::Spde(SpdeBlock { params, noise, xi, epsilon, mu0_known })
            }
            "ou" => {
                let case = match keys.get("ou.case", 1u8)? {
                    1 => OuCase::Case1,
                    2 => OuCase::Case2,
                    other => return Err(Error::Config(format!("ou.case must be 1 or 2, got {other}"))),
                };
                let mu = keys
                    .raw("ou.mu")
                    .map(|v| v.parse::<f64>())
                    .transpose()
                    .map_err(|_| Error::Config("ou.mu: not a number".into()))?;
                let model = OuModel {
                    case,
                    lambda: keys.require("ou.lambda")?,
                    mu,
                    epsilon,
                    alpha,
                    x0: keys.get("ou.x0", 1.0)?,
                    n: keys.require("ou.n")?,
                };
                model.validate()?;
                ModelBlock::Ou(OuBlock { model, mu_known: keys.get("ou.mu_known", false)? })
            }
            other => return Err(Error::Config(format!("model.type must be spde or ou, got {other}"))),
        };

        let sim_default = SimulationSettings::default();
        let simulation = SimulationSettings {
            truncation: keys.get("grid.truncation", sim_default.truncation)?,
            white_noise_cutoff: keys.get("grid.white_noise_cutoff", sim_default.white_noise_cutoff)?,
            quadrature_order: keys.get("grid.quadrature_order", sim_default.quadrature_order)?,
            initial_modes: keys.get("grid.initial_modes", sim_default.initial_modes)?,
        };
        let (m1, m2) = (keys.get("grid.M1", 50usize)?, keys.get("grid.M2", 50usize)?);
        let grid = GridBlock {
            n_obs: keys.get("grid.N", 2000usize)?,
            m1,
            m2,
            n: keys.get("grid.n", 100usize)?,
            m_bar1: keys.get("grid.m_bar1", 10usize)?,
            m_bar2: keys.get("grid.m_bar2", 10usize)?,
            delta: keys.get("grid.delta", 0.05)?,
            simulation,
        };

        let box_default = SearchBox::default();
        let opt_default = SpatialOptConfig::default();
        let lam_default = LambdaSearch::default();
        let regime = match keys.get("estimation.regime", "auto".to_string())?.as_str() {
            "auto" => None,
            "b1" => Some(AsymptoticRegime::B1),
            "b2" => Some(AsymptoticRegime::B2 { c: keys.require("estimation.c")? }),
            other => return Err(Error::Config(format!("estimation.regime must be auto, b1 or b2, got {other}"))),
        };
        let spatial = match keys.get("estimation.spatial", "fit".to_string())?.as_str() {
            "fit" => SpatialMode::Fit,
            "truth" => SpatialMode::Truth,
            other => return Err(Error::Config(format!("estimation.spatial must be fit or truth, got {other}"))),
        };
        let estimation = EstimationBlock {
            search_box: SearchBox {
                theta1: keys.pair("estimation.theta1_box", box_default.theta1)?,
                eta1: keys.pair("estimation.eta1_box", box_default.eta1)?,
                theta2: keys.pair("estimation.theta2_box", box_default.theta2)?,
            },
            spatial_opt: SpatialOptConfig {
                coarse_points: keys.get("estimation.coarse_points", opt_default.coarse_points)?,
                kappa_range: keys.pair("estimation.kappa_range", opt_default.kappa_range)?,
                eta_range: keys.pair("estimation.eta_range", opt_default.eta_range)?,
                ..opt_default
            },
            lambda_search: LambdaSearch {
                lambda_box: keys.pair("estimation.lambda_box", lam_default.lambda_box)?,
                mu_box: keys.pair("estimation.mu_box", lam_default.mu_box)?,
                grid_points: keys.get("estimation.lambda_grid", lam_default.grid_points)?,
                rel_tol: keys.get("estimation.lambda_tol", lam_default.rel_tol)?,
            },
            spatial,
            regime,
        };
        let run = RunBlock {
            replicates: keys.get("run.replicates", 100usize)?,
            seed: keys.get("run.seed", 1u64)?,
            out: keys.get("run.out", PathBuf::from("out"))?,
            threads: keys.get("run.threads", 0usize)?,
            timing: keys.get("run.timing", false)?,
        };
        keys.finish()?;
        let cfg = ExperimentConfig { model, grid, estimation, run };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every module-level precondition without simulating.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if self.run.replicates < 1 {
            return Err(Error::Config("run.replicates must be at least 1".into()));
        }
        self.estimation.search_box.validate()?;
        self.estimation.lambda_search.validate()?;
        if let Some(AsymptoticRegime::B2 { c }) = self.estimation.regime {
            if !(c >= 0.0) {
                return Err(Error::Config(format!("estimation.c must be non-negative, got {c}")));
            }
        }
        match &self.model {
            ModelBlock::Ou(b) => b.model.validate(),
            ModelBlock::Spde(b) => {
                if !(b.epsilon >= 0.0 && b.epsilon <= 1.0) {
                    return Err(Error::Config(format!("model.epsilon must lie in [0, 1], got {}", b.epsilon)));
                }
                if b.epsilon == 0.0 && self.estimation.spatial == SpatialMode::Fit {
                    return Err(Error::Config("ε = 0 leaves ε⁻²Z_N undefined; set estimation.spatial = truth".into()));
                }
                if b.mu0_known && !b.noise.is_q2() {
                    return Err(Error::Config("model.mu0_known only applies to q2 noise".into()));
                }
                let g = &self.grid;
                GridSpec::new(g.n_obs, g.m1, g.m2).map_err(cfg_err)?;
                self.grid.simulation.truncation.validate()?;
                if g.simulation.initial_modes > g.simulation.quadrature_order / 2 {
                    return Err(Error::Config(
                        "grid.initial_modes must not exceed half of grid.quadrature_order".into(),
                    ));
                }
                build_thinned_space_grid(g.m1, g.m2, g.m_bar1, g.m_bar2, g.delta).map_err(cfg_err)?;
                build_thinned_time_grid(g.n_obs, g.n).map_err(cfg_err)?;
                let xi = b.xi.build(&b.params);
                xi.check_boundary().map_err(cfg_err)?;
                Ok(())
            }
        }
    }

    pub fn noise_kind(&self) -> NoiseKind {
        match &self.model {
            ModelBlock::Spde(b) => b.noise.kind(),
            ModelBlock::Ou(b) => b.model.kind(),
        }
    }

    /// `(n, ε)` of the estimation stage.
    pub fn n_and_epsilon(&self) -> (usize, f64) {
        match &self.model {
            ModelBlock::Spde(b) => (self.grid.n, b.epsilon),
            ModelBlock::Ou(b) => (b.model.n, b.model.epsilon),
        }
    }

    /// Configured regime, or the one implied by `(n, ε)`.
    pub fn regime(&self) -> AsymptoticRegime {
        let (n, eps) = self.n_and_epsilon();
        self.estimation.regime.unwrap_or_else(|| AsymptoticRegime::from_run(n, eps, B2_THRESHOLD))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "
        # desk-scale Q1 run
        model.theta0 = 4
        model.theta1 = 0.3
        model.eta1 = 0.3
        model.theta2 = 0.3
        model.alpha = 0.5
        model.epsilon = 0.01
        grid.N = 200
        grid.M1 = 20
        grid.M2 = 20
        grid.n = 50
        run.replicates = 3
    ";

    #[test]
    fn parses_defaults() {
        let cfg = ExperimentConfig::parse(BASE).unwrap();
        let ModelBlock::Spde(b) = cfg.model else { panic!() };
        assert_eq!(b.noise, NoiseSpec::Q1 { alpha: 0.5 });
        assert_eq!(b.xi, XiSpec::Polynomial { scale: 30.0 });
        assert_eq!(cfg.grid.delta, 0.05);
        assert_eq!(cfg.run.replicates, 3);
        assert_eq!(cfg.regime(), AsymptoticRegime::B1);
    }

    #[test]
    fn rejects_bad_configs() {
        for extra in [
            "grid.delta = 0.6",
            "model.bogus = 1",
            "model.epsilon = 0.02",
            "model.noise = q3",
            "grid.n = 500",
            "estimation.theta2_box = 0, 1",
            "grid.truncation = fixed:0",
            "model.xi = single_mode",
        ] {
            assert!(ExperimentConfig::parse(&format!("{BASE}\n{extra}")).is_err(), "{extra}");
        }
        assert!(ExperimentConfig::parse("model.alpha 0.5").is_err());
        assert!(ExperimentConfig::parse(&BASE.replace("model.epsilon = 0.01", "model.epsilon = 0")).is_err());
        let ok = BASE.replace("model.epsilon = 0.01", "model.epsilon = 0") + "\nestimation.spatial = truth";
        assert!(ExperimentConfig::parse(&ok).is_ok());
    }

    #[test]
    fn parses_ou_block() {
        let cfg = ExperimentConfig::parse(
            "model.type = ou\nmodel.alpha = 0.5\nmodel.epsilon = 0.1\nou.lambda = 2\nou.n = 100\nestimation.regime = b2\nestimation.c = 1",
        )
        .unwrap();
        assert_eq!(cfg.regime(), AsymptoticRegime::B2 { c: 1.0 });
        assert_eq!(cfg.n_and_epsilon(), (100, 0.1));
    }
}
