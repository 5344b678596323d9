//! JSON scenario files.
//!
//! ```json
//! {
//!   "model": "admire_drift",
//!   "language": {"fault_model": {"horizon": 10, "include_never_faulty": false}},
//!   "problem": "h2",
//!   "noise": {"gaussian": {"scale": 1.0}},
//!   "cost": {"q": [[1,0,0],[0,1,0],[0,0,1]], "r": [[2,0,0,0],[0,2,0,0],[0,0,2,0],[0,0,0,2]]},
//!   "delay": 0,
//!   "runs": 1000,
//!   "seed": 7,
//!   "output_dir": "out/drift"
//! }
//! ```
//!
//! `model` is a preset name (`admire_drift`, `admire_sensor`) or
//! `{"modes": [{"a": .., "b": .., "c": ..}, ..]}` with row-major matrices.
//! `language` is `{"fault_model": {..}}` (uniform probabilities) or
//! `{"explicit": [[1,1,2], ..], "probabilities": [..]}`; it fixes the horizon.
//! `noise` is `{"gaussian": {"scale": s}}`, `{"gaussian": {"x0_cov": [..],
//! "w_cov": [..], "v_cov": [..]}}` (one matrix per mode) or
//! `{"bounded": {"w_bar": .., "v_bar": ..}}`. `cost` holds constant `q`, `r`
//! and is required for `h2`. Optional keys: `weighting` (`sqrt` | `literal`),
//! `formulation` (`shared` | `explicit`), `backend` (`dense` | `sparse` |
//! `auto`), `sampling` (`interior` | `vertex`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blockmat::Matrix;
use crate::error::{Error, Result};
use crate::language::{fault_language, uniform, SwitchingLanguage, SwitchingSignal};
use crate::sim::BoundedSampling;
use crate::solver::Backend;
use crate::synth::{Formulation, ProblemKind, SynthOptions, Weighting};
use crate::system::{
    admire_model, AdmireFault, BoundedNoise, CostSpec, GaussianNoise, ModeDynamics, NoiseSpec, SwitchedModel,
};

pub type MatrixRows = Vec<Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    AdmireDrift,
    AdmireSensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub a: MatrixRows,
    pub b: MatrixRows,
    pub c: MatrixRows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelConfig {
    Preset(ModelPreset),
    Inline { modes: Vec<ModeConfig> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultModelConfig {
    pub horizon: usize,
    #[serde(default)]
    pub include_never_faulty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LanguageConfig {
    FaultModel {
        fault_model: FaultModelConfig,
    },
    Explicit {
        explicit: Vec<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probabilities: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GaussianConfig {
    Isotropic { scale: f64 },
    Full { x0_cov: Vec<MatrixRows>, w_cov: Vec<MatrixRows>, v_cov: Vec<MatrixRows> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Gaussian(GaussianConfig),
    Bounded { w_bar: f64, v_bar: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub q: MatrixRows,
    pub r: MatrixRows,
}

impl ModelConfig {
    pub fn from_model(model: &SwitchedModel) -> Self {
        Self::Inline {
            modes: model.modes().iter().map(|d| ModeConfig { a: rows(&d.a), b: rows(&d.b), c: rows(&d.c) }).collect(),
        }
    }
}

fn default_runs() -> usize {
    1000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelConfig,
    pub language: LanguageConfig,
    pub problem: ProblemKind,
    pub noise: NoiseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostConfig>,
    #[serde(default)]
    pub delay: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub formulation: Formulation,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub sampling: BoundedSampling,
}

/// A validated scenario with every object built.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub model: SwitchedModel,
    pub language: SwitchingLanguage,
    pub noise: NoiseSpec,
    pub cost: Option<CostSpec>,
    pub options: SynthOptions,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn matrix(name: &str, rows: &MatrixRows) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{name} must be a non-empty rectangular array of rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} has non-finite entries")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(m: &Matrix) -> MatrixRows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn horizon(&self) -> usize {
        match &self.language {
            LanguageConfig::FaultModel { fault_model } => fault_model.horizon,
            LanguageConfig::Explicit { explicit, .. } => explicit.first().map_or(0, |s| s.len().saturating_sub(1)),
        }
    }

    /// SHA-256 over the fields that determine the synthesized controller.
    pub fn config_hash(&self) -> String {
        let key = serde_json::json!({
            "model": self.model,
            "language": self.language,
            "problem": self.problem,
            "noise": self.noise,
            "cost": self.cost,
            "delay": self.delay,
            "weighting": self.weighting,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }

    /// Builds and cross-checks every object; all failures are `Error::Config`.
    pub fn resolve(&self) -> Result<Resolved> {
        let horizon = self.horizon();
        let model = match &self.model {
            ModelConfig::Preset(ModelPreset::AdmireDrift) => admire_model(AdmireFault::Drift, horizon),
            ModelConfig::Preset(ModelPreset::AdmireSensor) => admire_model(AdmireFault::Sensor, horizon),
            ModelConfig::Inline { modes } => {
                let modes = modes
                    .iter()
                    .enumerate()
                    .map(|(i, mc)| {
                        Ok(ModeDynamics {
                            a: matrix(&format!("modes[{i}].a"), &mc.a)?,
                            b: matrix(&format!("modes[{i}].b"), &mc.b)?,
                            c: matrix(&format!("modes[{i}].c"), &mc.c)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                SwitchedModel::new(modes, horizon).map_err(config_err)?
            }
        };

        let language = match &self.language {
            LanguageConfig::FaultModel { fault_model } => {
                if model.num_modes() < 2 {
                    return Err(Error::Config("the fault model needs at least two modes".into()));
                }
                uniform(&fault_language(fault_model.horizon, fault_model.include_never_faulty))
            }
            LanguageConfig::Explicit { explicit, probabilities } => {
                let signals = explicit
                    .iter()
                    .map(|s| SwitchingSignal::new(s.clone(), model.num_modes()))
                    .collect::<Result<Vec<_>>>()
                    .map_err(config_err)?;
                let lang =
                    SwitchingLanguage::new(signals, probabilities.clone(), model.num_modes()).map_err(config_err)?;
                if probabilities.is_none() && self.problem == ProblemKind::H2 {
                    uniform(&lang)
                } else {
                    Ok(lang)
                }
            }
        }
        .map_err(config_err)?;

        let noise = match &self.noise {
            NoiseConfig::Gaussian(GaussianConfig::Isotropic { scale }) => {
                GaussianNoise::isotropic(model.num_modes(), model.n(), model.m(), *scale).map(NoiseSpec::Gaussian)
            }
            NoiseConfig::Gaussian(GaussianConfig::Full { x0_cov, w_cov, v_cov }) => {
                let stack = |name: &str, blocks: &[MatrixRows]| {
                    blocks
                        .iter()
                        .enumerate()
                        .map(|(i, b)| matrix(&format!("{name}[{i}]"), b))
                        .collect::<Result<Vec<_>>>()
                };
                GaussianNoise::new(stack("x0_cov", x0_cov)?, stack("w_cov", w_cov)?, stack("v_cov", v_cov)?)
                    .map(NoiseSpec::Gaussian)
            }
            NoiseConfig::Bounded { w_bar, v_bar } => BoundedNoise::new(*w_bar, *v_bar).map(NoiseSpec::Bounded),
        }
        .map_err(config_err)?;
        noise.check_model(&model).map_err(config_err)?;

        let cost = match &self.cost {
            Some(c) => {
                let spec = CostSpec::constant(horizon, matrix("cost.q", &c.q)?, matrix("cost.r", &c.r)?)
                    .map_err(config_err)?;
                spec.check_model(&model).map_err(config_err)?;
                Some(spec)
            }
            None => None,
        };

        match (self.problem, &noise) {
            (ProblemKind::H2, NoiseSpec::Bounded(_)) => {
                return Err(Error::Config("problem h2 needs gaussian noise".into()))
            }
            (ProblemKind::L1, NoiseSpec::Gaussian(_)) => {
                return Err(Error::Config("problem l1 needs bounded noise".into()))
            }
            _ => {}
        }
        if self.problem == ProblemKind::H2 && cost.is_none() {
            return Err(Error::Config("problem h2 needs a cost".into()));
        }
        if self.delay > horizon + 1 {
            return Err(Error::Config(format!("delay {} exceeds horizon + 1 = {}", self.delay, horizon + 1)));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        Ok(Resolved {
            model,
            language,
            noise,
            cost,
            options: SynthOptions {
                delay: self.delay,
                formulation: self.formulation,
                backend: self.backend,
                weighting: self.weighting,
                ..SynthOptions::default()
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DRIFT: &str = r#"{
        "model": "admire_drift",
        "language": {"fault_model": {"horizon": 4, "include_never_faulty": false}},
        "problem": "h2",
        "noise": {"gaussian": {"scale": 1.0}},
        "cost": {"q": [[1,0,0],[0,1,0],[0,0,1]], "r": [[2,0,0,0],[0,2,0,0],[0,0,2,0],[0,0,0,2]]},
        "seed": 3
    }"#;

    #[test]
    fn preset_resolves_with_defaults() {
        let sc = Scenario::from_json(DRIFT).unwrap();
        assert_eq!(sc.runs, 1000);
        assert_eq!(sc.delay, 0);
        let r = sc.resolve().unwrap();
        assert_eq!(r.model.horizon(), 4);
        assert_eq!(r.language.len(), 5);
        assert!(r.language.probabilities().is_some());
        assert_eq!(r.cost.unwrap().r(4)[(3, 3)], 2.0);
    }

    #[test]
    fn round_trip_is_identity() {
        let sc = Scenario::from_json(DRIFT).unwrap();
        let again = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(sc, again);
        assert_eq!(sc.config_hash(), again.config_hash());

        let inline = Scenario {
            model: ModelConfig::from_model(&admire_model(AdmireFault::Sensor, 2)),
            language: LanguageConfig::Explicit {
                explicit: vec![vec![1, 1, 2], vec![1, 2, 2]],
                probabilities: Some(vec![0.25, 0.75]),
            },
            problem: ProblemKind::L1,
            noise: NoiseConfig::Bounded { w_bar: 1.0, v_bar: 0.1 },
            cost: None,
            ..sc.clone()
        };
        let back = Scenario::from_json(&inline.to_json()).unwrap();
        assert_eq!(inline, back);
        assert_eq!(back.resolve().unwrap().model, admire_model(AdmireFault::Sensor, 2));
    }

    #[test]
    fn hash_ignores_campaign_fields() {
        let sc = Scenario::from_json(DRIFT).unwrap();
        let other = Scenario { runs: 5, seed: 99, output_dir: "x".into(), ..sc.clone() };
        assert_eq!(sc.config_hash(), other.config_hash());
        let changed = Scenario { delay: 1, ..sc.clone() };
        assert_ne!(sc.config_hash(), changed.config_hash());
        assert_eq!(sc.config_hash().len(), 64);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let base = Scenario::from_json(DRIFT).unwrap();
        let cases = [
            Scenario { noise: NoiseConfig::Bounded { w_bar: 1.0, v_bar: 1.0 }, ..base.clone() },
            Scenario { cost: None, ..base.clone() },
            Scenario { delay: 6, ..base.clone() },
            Scenario { runs: 0, ..base.clone() },
            Scenario { cost: Some(CostConfig { q: vec![vec![1.0]], r: vec![vec![1.0]] }), ..base.clone() },
            Scenario {
                language: LanguageConfig::Explicit { explicit: vec![vec![1, 3]], probabilities: None },
                ..base.clone()
            },
            Scenario { noise: NoiseConfig::Bounded { w_bar: -1.0, v_bar: 1.0 }, problem: ProblemKind::L1, ..base },
        ];
        for sc in cases {
            assert!(matches!(sc.resolve(), Err(Error::Config(_))), "{sc:?}");
        }
        assert!(Scenario::from_json("{\"model\": \"admire\"}").is_err());
        assert!(Scenario::from_json(&DRIFT.replace("\"seed\"", "\"sed\"")).is_err());
    }
}
