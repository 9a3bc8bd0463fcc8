//! Run configuration: a TOML document layered over a named preset.
//!
//! A file may set any subset of keys; the rest come from the preset it names
//! (`paper-sec4` when absent). After merging, the document is read strictly,
//! so a misspelled key is an error. Command-line overrides are applied last,
//! and the resolved configuration serializes back to a complete file, which
//! is what every run writes as its manifest.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::QLConfig;
use crate::channel::{GainMarkov, InitialGain};
use crate::detector::DetectorConfig;
use crate::error::Error;
use crate::mdp::DEFAULT_THETA;
use crate::sim::{Method, SimConfig};
use crate::system::{SystemParams, REFERENCE_GAINS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    PaperSec4,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperSec4 => "paper-sec4",
        }
    }

    pub fn config(self) -> RunConfig {
        match self {
            Preset::PaperSec4 => RunConfig {
                preset: self,
                command: None,
                seed: 1,
                method: None,
                system: SystemParams::reference(2.0),
                channel: ChannelSection {
                    transitions: GainMarkov::reference(),
                },
                solver: SolverSection {
                    theta: DEFAULT_THETA,
                },
                ql: QlSection {
                    alpha: 0.1,
                    eps0: 0.2,
                    max_steps: 100_000,
                },
                sim: SimSection {
                    n_slots: 10_000,
                    window: 1_000,
                    e_initial: 0,
                    initial_gain: InitialGain::Stationary,
                },
                sweep: SweepSection {
                    powers: vec![1.0, 1.5, 2.0, 2.5],
                    methods: Method::ALL.to_vec(),
                },
                detector: DetectorSection {
                    gains: REFERENCE_GAINS.to_vec(),
                    bits: 100_000,
                },
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper-sec4" => Ok(Preset::PaperSec4),
            other => Err(format!("unknown preset `{other}` (available: paper-sec4)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// Row-stochastic gain transition matrix.
    pub transitions: GainMarkov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Value-iteration stopping threshold on the sup-norm change.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QlSection {
    pub alpha: f64,
    pub eps0: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n_slots: usize,
    pub window: usize,
    pub e_initial: u32,
    pub initial_gain: InitialGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub powers: Vec<f64>,
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    /// Source-to-tag gains to test, one output row each.
    pub gains: Vec<f64>,
    pub bits: usize,
}

/// Fully resolved run configuration.
///
/// `seed` feeds every generator of the run and `system.gamma` is the discount
/// for both the solver and the learner, so neither is repeated per section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Subcommand that produced a manifest; informational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub seed: u64,
    /// Single method to run; all methods when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub system: SystemParams,
    pub channel: ChannelSection,
    pub solver: SolverSection,
    pub ql: QlSection,
    pub sim: SimSection,
    pub sweep: SweepSection,
    pub detector: DetectorSection,
}

/// Values given on the command line; each replaces the file's value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub p_t: Option<f64>,
    pub gamma: Option<f64>,
    pub method: Option<Method>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config: {0}")]
    Schema(String),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    fn invalid(section: &str, err: Error) -> Self {
        match err {
            Error::InvalidParam { key, reason } => ConfigError::Invalid {
                key: format!("{section}.{key}"),
                reason,
            },
            other => ConfigError::Invalid {
                key: section.to_string(),
                reason: other.to_string(),
            },
        }
    }
}

/// Overlays `top` onto `base`; tables merge key by key, anything else replaces.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses a (possibly partial) TOML document over its preset.
    pub fn from_toml_str(text: &str, preset_hint: Option<Preset>) -> Result<Self, ConfigError> {
        let top: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let preset = match top.get("preset") {
            Some(toml::Value::String(s)) => s.parse().map_err(|e| ConfigError::Invalid {
                key: "preset".into(),
                reason: e,
            })?,
            Some(_) => {
                return Err(ConfigError::Invalid {
                    key: "preset".into(),
                    reason: "must be a string".into(),
                })
            }
            None => preset_hint.unwrap_or(Preset::PaperSec4),
        };
        if let Some(hint) = preset_hint.filter(|h| *h != preset) {
            return Err(ConfigError::Invalid {
                key: "preset".into(),
                reason: format!("file names `{preset}` but `{hint}` was requested"),
            });
        }
        let mut base = toml::Table::try_from(preset.config())
            .map_err(|e| ConfigError::Schema(e.to_string()))?;
        merge(&mut base, top);
        let config: RunConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Schema(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path, preset_hint: Option<Preset>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, preset_hint)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(p_t) = o.p_t {
            self.system.p_t = p_t;
        }
        if let Some(gamma) = o.gamma {
            self.system.gamma = gamma;
        }
        if let Some(method) = o.method {
            self.method = Some(method);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system
            .validate()
            .map_err(|e| ConfigError::invalid("system", e))?;
        if self.channel.transitions.levels() != self.system.levels() {
            return Err(ConfigError::Invalid {
                key: "channel.transitions".into(),
                reason: format!(
                    "{} rows but system.gains has {} levels",
                    self.channel.transitions.levels(),
                    self.system.levels()
                ),
            });
        }
        if !(self.solver.theta.is_finite() && self.solver.theta > 0.0) {
            return Err(ConfigError::Invalid {
                key: "solver.theta".into(),
                reason: format!("{} must be > 0", self.solver.theta),
            });
        }
        self.ql_config()
            .validate()
            .map_err(|e| ConfigError::invalid("ql", e))?;
        self.sim_config()
            .validate(&self.system)
            .map_err(|e| ConfigError::invalid("sim", e))?;
        if self.sweep.powers.is_empty()
            || self
                .sweep
                .powers
                .iter()
                .any(|p| !(p.is_finite() && *p > 0.0))
        {
            return Err(ConfigError::Invalid {
                key: "sweep.powers".into(),
                reason: "need one or more positive powers".into(),
            });
        }
        if self.sweep.methods.is_empty() {
            return Err(ConfigError::Invalid {
                key: "sweep.methods".into(),
                reason: "need at least one method".into(),
            });
        }
        if self.detector.gains.is_empty() {
            return Err(ConfigError::Invalid {
                key: "detector.gains".into(),
                reason: "need at least one gain".into(),
            });
        }
        for &gain in &self.detector.gains {
            self.detector_config(gain)
                .validate()
                .map_err(|e| ConfigError::invalid("detector", e))?;
        }
        Ok(())
    }

    pub fn ql_config(&self) -> QLConfig {
        QLConfig {
            alpha: self.ql.alpha,
            eps0: self.ql.eps0,
            max_steps: self.ql.max_steps,
            gamma: self.system.gamma,
            seed: self.seed,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_slots: self.sim.n_slots,
            window: self.sim.window,
            e_initial: self.sim.e_initial,
            initial_gain: self.sim.initial_gain,
            seed: self.seed,
        }
    }

    pub fn detector_config(&self, gain: f64) -> DetectorConfig {
        DetectorConfig {
            gain,
            params: self.system.clone(),
            bits: self.detector.bits,
            seed: self.seed,
        }
    }

    /// Complete TOML text that reloads to `self`.
    pub fn to_manifest(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_preset() {
        let c = RunConfig::from_toml_str("", None).unwrap();
        assert_eq!(c, Preset::PaperSec4.config());
    }

    #[test]
    fn partial_file_overlays_preset() {
        let c = RunConfig::from_toml_str(
            "seed = 9\n[system]\np_t = 1.5\n[sim]\nn_slots = 500\n",
            None,
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.system.p_t, 1.5);
        assert_eq!(c.sim.n_slots, 500);
        assert_eq!(c.sim.window, 1_000);
        assert_eq!(c.system.b_c, 9);
    }

    #[test]
    fn manifest_round_trips() {
        let mut c = Preset::PaperSec4.config();
        c.apply(&Overrides {
            seed: Some(77),
            p_t: Some(2.5),
            gamma: Some(0.85),
            method: Some(Method::Ql),
        })
        .unwrap();
        c.command = Some("simulate".into());
        c.sim.initial_gain = InitialGain::Fixed(3);
        let back = RunConfig::from_toml_str(&c.to_manifest(), None).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "sed = 1",
            "[system]\npt = 2.0",
            "[nonsense]\nx = 1",
            "[ql]\nepsilon = 0.1",
        ] {
            let err = RunConfig::from_toml_str(text, None).unwrap_err();
            assert!(matches!(err, ConfigError::Schema(_)), "{text}: {err}");
        }
    }

    #[test]
    fn validation_names_the_key() {
        let cases = [
            ("[system]\np_t = -1.0", "system.p_t"),
            ("[ql]\nalpha = 0.0", "ql.alpha"),
            ("[sim]\nwindow = 0", "sim.window"),
            ("[solver]\ntheta = 0.0", "solver.theta"),
            ("[detector]\nbits = 10", "detector.bits"),
            ("[channel]\ntransitions = [[1.0]]", "channel.transitions"),
        ];
        for (text, key) in cases {
            let err = RunConfig::from_toml_str(text, None).unwrap_err();
            assert!(err.to_string().contains(key), "{text}: {err}");
        }
    }

    #[test]
    fn overrides_win_and_are_validated() {
        let mut c = RunConfig::from_toml_str("seed = 3\n[system]\np_t = 1.0", None).unwrap();
        c.apply(&Overrides {
            seed: Some(4),
            p_t: Some(2.5),
            ..Default::default()
        })
        .unwrap();
        assert_eq!((c.seed, c.system.p_t), (4, 2.5));
        let err = c
            .apply(&Overrides {
                gamma: Some(1.5),
                ..Default::default()
            })
            .unwrap_err();
        assert!(err.to_string().contains("system.gamma"));
    }

    #[test]
    fn unknown_preset_rejected() {
        let err = RunConfig::from_toml_str("preset = \"fig9\"", None).unwrap_err();
        assert!(err.to_string().contains("preset"));
    }
}
