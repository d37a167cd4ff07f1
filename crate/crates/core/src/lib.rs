//! Offline behavioral-cloning defense toolkit.
//!
//! A poisoned offline dataset is met with three mechanisms: a hash manifest
//! over a clean reference set that gates training, a transition
//! discriminator whose scores become per-trajectory density-ratio weights,
//! and a weighted cloning loss that trains the final policy. A native
//! point-mass environment generates data and evaluates policies at desk
//! scale.

pub mod attacks;
pub mod dataset;
pub mod discriminator;
pub mod integrity;
pub mod nn;
mod parallel;
pub mod pointmass;
pub mod policy;
pub mod rng;
pub mod weighting;

pub use attacks::{apply_attack, AttackKind, AttackSpec, PoisonLabels};
pub use dataset::{
    decode_canonical, encode_canonical, read_jsonl, split_reference, write_jsonl, DataError,
    DatasetHeader, Trajectory, TrajectoryDataset, Transition,
};
pub use discriminator::{
    sample_balanced_batch, score_transition, train_discriminator, DiscTrainConfig,
    DiscriminatorModel,
};
pub use integrity::{
    compute_manifest, integrity_gate, verify_manifest, GateDecision, HashManifest, IntegrityMode,
    VerificationReport,
};
pub use nn::{AdamState, Mlp, TrainLog};
pub use pointmass::{
    env_step, evaluate_policy, expert_action, generate_dataset, rollout, EnvParams, EnvState,
    EvalReport, ExpertGains,
};
pub use policy::{policy_action, train_policy, PolicyModel, PolicyTrainConfig};
pub use weighting::{
    clip_weight, compute_weight_table, density_ratio, trajectory_score, WeightConfig, WeightTable,
};
