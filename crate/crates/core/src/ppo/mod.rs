//! Actor-critic PPO agent written from scratch: MLP, exact backprop,
//! GAE, clipped surrogate updates with Adam.

mod adam;
mod agent;
mod checkpoint;
mod gae;
mod loss;
mod net;

pub use adam::Adam;
pub use agent::{
    greedy_action, greedy_rollout, ppo_update, sample_action, train, EpisodeMetrics, PpoAgent, PpoError,
    PpoHyperparams, RewardNormalization, RewardNormalizer, Rollout, RolloutStep, TrainOutcome, UpdateStats,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, shape_differences, CheckpointError,
};
pub use gae::{compute_gae, Transition};
pub use loss::{ppo_loss, ppo_loss_and_gradient, LossBreakdown, LossCoefficients, Sample};
pub use net::{log_softmax, softmax, ForwardCache, LayerSlot, Layout, MlpShape, PolicyNetwork};
