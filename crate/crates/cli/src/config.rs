//! Pipeline configuration: a TOML file with sections mirroring the library
//! modules. Every field has a default, so an empty file is a valid config.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use dwbc_core::attacks::{AttackKind, AttackSpec};
use dwbc_core::discriminator::DiscTrainConfig;
use dwbc_core::integrity::IntegrityMode;
use dwbc_core::pointmass::{EnvParams, ExpertGains};
use dwbc_core::policy::PolicyTrainConfig;
use dwbc_core::rng;
use dwbc_core::weighting::WeightConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_seed() -> u64 {
    42
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stage stream derives from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Default output directory; `--out` overrides it.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub expert: ExpertSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub integrity: IntegritySection,
    #[serde(default)]
    pub discriminator: DiscSection,
    #[serde(default)]
    pub weighting: WeightSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub evaluation: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub dt: f64,
    pub damping: f64,
    pub horizon: usize,
    pub action_bound: f64,
    pub goal: [f64; 2],
    pub start_halfwidth: f64,
    pub position_penalty: f64,
    pub action_penalty: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let p = EnvParams::default();
        Self {
            dt: p.dt,
            damping: p.damping,
            horizon: p.horizon,
            action_bound: p.action_bound,
            goal: p.goal,
            start_halfwidth: p.start_halfwidth,
            position_penalty: p.position_penalty,
            action_penalty: p.action_penalty,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertSection {
    pub k_p: f64,
    pub k_d: f64,
    pub noise_sigma: f64,
}

impl Default for ExpertSection {
    fn default() -> Self {
        let g = ExpertGains::default();
        Self { k_p: g.k_p, k_d: g.k_d, noise_sigma: g.noise_sigma }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Clean trajectories generated before the reference split.
    pub n_traj: usize,
    /// Trajectories split off into the reference set.
    pub n_ref: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { n_traj: 300, n_ref: 100 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    /// One of `none`, `action_inversion`, `action_noise`,
    /// `trajectory_injection`, `reward_flip`, `state_noise`.
    pub kind: String,
    pub fraction: f64,
    pub magnitude: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self { kind: "none".into(), fraction: 0.3, magnitude: 0.1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegritySection {
    /// One of `disabled`, `create`, `strict`.
    pub mode: String,
}

impl Default for IntegritySection {
    fn default() -> Self {
        Self { mode: "strict".into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
}

impl Default for DiscSection {
    fn default() -> Self {
        let c = DiscTrainConfig::default();
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            hidden: c.hidden,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSection {
    pub epsilon: f64,
    pub clip: f64,
}

impl Default for WeightSection {
    fn default() -> Self {
        let c = WeightConfig::default();
        Self { epsilon: c.epsilon, clip: c.clip }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
}

impl Default for PolicySection {
    fn default() -> Self {
        let c = PolicyTrainConfig::default();
        Self {
            epochs: c.epochs,
            minibatch: c.minibatch,
            learning_rate: c.learning_rate,
            hidden: c.hidden,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 100 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env_params().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.data.n_traj < 2 {
            return Err(ConfigError::Invalid("data.n_traj must be at least 2".into()));
        }
        if self.data.n_ref == 0 || self.data.n_ref >= self.data.n_traj {
            return Err(ConfigError::Invalid(format!(
                "data.n_ref must satisfy 1 <= n_ref < n_traj, got {} of {}",
                self.data.n_ref, self.data.n_traj
            )));
        }
        self.attack_spec()?;
        self.integrity_mode()?;
        if let Err(e) = self.weight_config().validate() {
            return Err(ConfigError::Invalid(e.to_string()));
        }
        if self.evaluation.episodes == 0 {
            return Err(ConfigError::Invalid("evaluation.episodes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            dt: self.env.dt,
            damping: self.env.damping,
            horizon: self.env.horizon,
            action_bound: self.env.action_bound,
            goal: self.env.goal,
            start_halfwidth: self.env.start_halfwidth,
            position_penalty: self.env.position_penalty,
            action_penalty: self.env.action_penalty,
        }
    }

    pub fn expert_gains(&self) -> ExpertGains {
        ExpertGains {
            k_p: self.expert.k_p,
            k_d: self.expert.k_d,
            noise_sigma: self.expert.noise_sigma,
        }
    }

    /// `None` when the attack kind is `none`.
    pub fn attack_spec(&self) -> Result<Option<AttackSpec>, ConfigError> {
        if self.attack.kind == "none" {
            return Ok(None);
        }
        let kind: AttackKind =
            self.attack.kind.parse().map_err(|e| ConfigError::Invalid(format!("{e}")))?;
        let spec = AttackSpec {
            kind,
            fraction: self.attack.fraction,
            magnitude: self.attack.magnitude,
            seed: self.seed,
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Some(spec))
    }

    pub fn integrity_mode(&self) -> Result<IntegrityMode, ConfigError> {
        match self.integrity.mode.as_str() {
            "disabled" => Ok(IntegrityMode::Disabled),
            "create" => Ok(IntegrityMode::Create),
            "strict" => Ok(IntegrityMode::Strict),
            other => Err(ConfigError::Invalid(format!("unknown integrity mode {other:?}"))),
        }
    }

    pub fn disc_config(&self) -> DiscTrainConfig {
        DiscTrainConfig {
            epochs: self.discriminator.epochs,
            batch_size: self.discriminator.batch_size,
            learning_rate: self.discriminator.learning_rate,
            hidden: self.discriminator.hidden.clone(),
            seed: self.seed ^ rng::SALT_DISC_TRAIN,
        }
    }

    pub fn weight_config(&self) -> WeightConfig {
        WeightConfig { epsilon: self.weighting.epsilon, clip: self.weighting.clip }
    }

    /// Baseline and weighted training share one seed so they differ only in
    /// the weights.
    pub fn policy_config(&self, baseline_mode: bool) -> PolicyTrainConfig {
        PolicyTrainConfig {
            epochs: self.policy.epochs,
            minibatch: self.policy.minibatch,
            learning_rate: self.policy.learning_rate,
            hidden: self.policy.hidden.clone(),
            seed: self.seed ^ rng::SALT_POLICY_TRAIN,
            baseline_mode,
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.seed ^ rng::SALT_SPLIT
    }

    pub fn eval_seed(&self) -> u64 {
        self.seed ^ rng::SALT_EVAL
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.data.n_traj, 300);
        assert_eq!(cfg.data.n_ref, 100);
        assert_eq!(cfg.env.dt, 0.1);
        assert_eq!(cfg.discriminator.epochs, 20_000);
        assert_eq!(cfg.policy.epochs, 500);
        assert_eq!(cfg.weighting.epsilon, 0.01);
        assert_eq!(cfg.weighting.clip, 10.0);
        assert_eq!(cfg.evaluation.episodes, 100);
        assert_eq!(cfg.attack.kind, "none");
        assert_eq!(cfg.integrity.mode, "strict");
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[env]\ndtt = 0.2\n").is_err());
        assert!(toml::from_str::<PipelineConfig>("typo = 1\n").is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        let cfg: PipelineConfig = toml::from_str("[data]\nn_traj = 10\nn_ref = 10\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: PipelineConfig = toml::from_str("[attack]\nkind = \"bad\"\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: PipelineConfig = toml::from_str("[integrity]\nmode = \"loose\"\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: PipelineConfig = toml::from_str("[attack]\nkind = \"action_noise\"\nfraction = 1.5\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seeds_differ_per_stage() {
        let cfg = PipelineConfig::default();
        let disc = cfg.disc_config().seed;
        let pol = cfg.policy_config(false).seed;
        assert_ne!(disc, pol);
        assert_ne!(cfg.split_seed(), cfg.eval_seed());
        // baseline and weighted policy share the seed
        assert_eq!(cfg.policy_config(true).seed, pol);
    }
}
