use std::path::{Path, PathBuf};

use orl_core::agents::{BcConfig, Td3Hyperparams};
use orl_core::behavior::WeightConfig;
use orl_core::envs::EnvKind;
use orl_core::regularizers::{RegularizerKind, RegularizerSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "ORL_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Td3rkl,
    Td3bc,
    BcMse,
    BcRkl,
    BcFkl,
    BcRklstoch,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Td3rkl => "td3rkl",
            AgentKind::Td3bc => "td3bc",
            AgentKind::BcMse => "bc-mse",
            AgentKind::BcRkl => "bc-rkl",
            AgentKind::BcFkl => "bc-fkl",
            AgentKind::BcRklstoch => "bc-rklstoch",
        }
    }

    pub fn regularizer(self) -> RegularizerKind {
        match self {
            AgentKind::Td3bc | AgentKind::BcMse => RegularizerKind::MseBc,
            AgentKind::Td3rkl | AgentKind::BcRkl => RegularizerKind::RklContrastive,
            AgentKind::BcFkl => RegularizerKind::ForwardKl,
            AgentKind::BcRklstoch => RegularizerKind::ReverseKlStochastic,
        }
    }

    pub fn is_td3(self) -> bool {
        matches!(self, AgentKind::Td3rkl | AgentKind::Td3bc)
    }

    pub fn needs_behavior(self) -> bool {
        matches!(self, AgentKind::Td3rkl | AgentKind::BcRklstoch)
    }
}

/// Regularizer settings. `kind` may be omitted; it is implied by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<RegularizerKind>,
    pub alpha: f64,
    pub samples: usize,
}

impl Default for RegularizerSection {
    fn default() -> Self {
        let spec = RegularizerSpec::new(RegularizerKind::RklContrastive);
        Self {
            kind: None,
            alpha: spec.alpha,
            samples: spec.samples,
        }
    }
}

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    /// More than one path trains on their mixture, in order.
    pub datasets: Vec<PathBuf>,
    pub agent: AgentKind,
    /// Behavior checkpoint directory (td3rkl and bc-rklstoch).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval_seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub td3: Td3Hyperparams,
    #[serde(default)]
    pub weights: WeightConfig,
    #[serde(default)]
    pub regularizer: RegularizerSection,
    #[serde(default)]
    pub bc: BcConfig,
}

impl RunConfig {
    pub fn template(agent: AgentKind) -> Self {
        Self {
            env: EnvKind::PointMass2d.name().into(),
            datasets: vec!["data/expert.orld".into()],
            agent,
            behavior: agent.needs_behavior().then(|| "behavior".into()),
            seed: 0,
            eval_seed: 0,
            out_dir: format!("runs/{}", agent.name()).into(),
            td3: Td3Hyperparams::default(),
            weights: WeightConfig::default(),
            regularizer: RegularizerSection::default(),
            bc: BcConfig::default(),
        }
    }

    /// Parses `text`, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.datasets.iter_mut().for_each(resolve);
        if let Some(b) = cfg.behavior.as_mut() {
            resolve(b);
        }
        resolve(&mut cfg.out_dir);
        Ok(cfg)
    }

    /// Reads a config file and applies the `ORL_SEED` override.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::parse(&text, base)?;
        if let Ok(raw) = std::env::var(SEED_ENV) {
            cfg.seed = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        Ok(cfg)
    }

    pub fn env_kind(&self) -> Result<EnvKind, CliError> {
        self.env.parse().map_err(|e: orl_core::Error| CliError::Config(e.to_string()))
    }

    pub fn regularizer_spec(&self) -> RegularizerSpec {
        RegularizerSpec {
            kind: self.agent.regularizer(),
            alpha: self.regularizer.alpha,
            samples: self.regularizer.samples,
        }
    }

    /// Every problem with the config, checked before any data is loaded.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if let Err(e) = self.env_kind() {
            problems.push(e.to_string());
        }
        if self.datasets.is_empty() {
            problems.push("at least one dataset is required".into());
        }
        for d in &self.datasets {
            if !d.is_file() {
                problems.push(format!("dataset {} does not exist", d.display()));
            }
        }
        match (&self.behavior, self.agent.needs_behavior()) {
            (None, true) => problems.push(format!("agent {} needs a behavior checkpoint", self.agent.name())),
            (Some(b), true) if !b.join("behavior.json").is_file() => {
                problems.push(format!("behavior checkpoint {} not found", b.display()))
            }
            _ => {}
        }
        if let Some(kind) = self.regularizer.kind {
            if kind != self.agent.regularizer() {
                problems.push(format!(
                    "regularizer kind {kind:?} is inconsistent with agent {} ({:?})",
                    self.agent.name(),
                    self.agent.regularizer()
                ));
            }
        }
        let checks = [
            self.td3.validate(),
            self.weights.validate(),
            self.bc.validate(),
            self.regularizer_spec().validate(),
        ];
        problems.extend(checks.into_iter().filter_map(|r| r.err().map(|e| e.to_string())));
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("\n")))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }
}
