//! Episode loop, PPO update and greedy evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::Adam;
use super::gae::{compute_gae, Transition};
use super::loss::{ppo_loss_and_gradient, LossBreakdown, LossCoefficients, Sample};
use super::net::{log_softmax, MlpShape, PolicyNetwork};
use crate::env::{Action, EnvError, EnvState, Environment};
use crate::probe::Phase;
use crate::scene::Vec3;

/// Advantage variance below which normalization is skipped.
const MIN_ADVANTAGE_VARIANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoHyperparams {
    pub hidden_layers: usize,
    pub width: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub value_loss_coeff: f64,
    pub entropy_coeff: f64,
    pub episodes: usize,
    pub seed: u64,
    /// Applied to rewards before they enter the update buffer. Reported
    /// returns stay raw.
    pub reward_normalization: RewardNormalization,
    /// Bootstrap from the value of the final state when an episode ends on
    /// its step limit instead of treating it as terminal.
    pub bootstrap_time_limit: bool,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            width: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            update_epochs: 4,
            minibatch_size: 64,
            value_loss_coeff: 0.5,
            entropy_coeff: 0.01,
            episodes: 300,
            seed: 42,
            reward_normalization: RewardNormalization::Center,
            bootstrap_time_limit: true,
        }
    }
}

impl PpoHyperparams {
    pub fn shape(&self) -> MlpShape {
        MlpShape {
            hidden_layers: self.hidden_layers,
            width: self.width,
            ..MlpShape::default()
        }
    }

    pub fn coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            clip_epsilon: self.clip_epsilon,
            value_loss_coeff: self.value_loss_coeff,
            entropy_coeff: self.entropy_coeff,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.hidden_layers < 1 || self.width < 1 {
            out.push("hidden_layers and width must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            out.push(format!("gamma must lie in [0, 1] (got {})", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            out.push(format!("gae_lambda must lie in [0, 1] (got {})", self.gae_lambda));
        }
        if !(self.clip_epsilon >= 0.0) {
            out.push("clip_epsilon must be >= 0".into());
        }
        if !(self.learning_rate > 0.0) {
            out.push("learning_rate must be > 0".into());
        }
        if self.update_epochs < 1 || self.minibatch_size < 1 {
            out.push("update_epochs and minibatch_size must be >= 1".into());
        }
        if !(self.value_loss_coeff >= 0.0) || !(self.entropy_coeff >= 0.0) {
            out.push("loss coefficients must be >= 0".into());
        }
        if self.episodes < 1 {
            out.push("episodes must be >= 1".into());
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("non-finite loss in update epoch {epoch}, minibatch {minibatch}")]
    NonFiniteLoss { epoch: usize, minibatch: usize },
    #[error("episode {episode}, step {step}: {source}")]
    Env {
        episode: usize,
        step: usize,
        #[source]
        source: EnvError,
    },
    #[error("policy network shape {net:?} does not match the configured shape {config:?}")]
    ShapeMismatch { net: MlpShape, config: MlpShape },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub minibatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Undiscounted sum of rewards.
    pub episode_return: f64,
    /// Mean over the episode's steps, per receiver.
    pub sinr_db: Vec<f64>,
    /// Mean over the episode's steps, per receiver, bits/s.
    pub capacity: Vec<f64>,
    pub capacity_sum: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Categorical sample from `softmax(logits)`.
pub fn sample_action<R: Rng>(logits: &[f64], rng: &mut R) -> (usize, f64) {
    let log_probs = log_softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = log_probs.len() - 1;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            chosen = i;
            break;
        }
    }
    (chosen, log_probs[chosen])
}

/// Index of the largest logit; ties go to the lowest index.
pub fn greedy_action(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

/// Runs `update_epochs` passes of clipped-surrogate minibatch updates over
/// one episode buffer. On a non-finite loss the parameters are restored
/// to their state before the call.
pub fn ppo_update<R: Rng>(
    net: &mut PolicyNetwork,
    adam: &mut Adam,
    buffer: &[Transition],
    bootstrap_value: f64,
    hyper: &PpoHyperparams,
    rng: &mut R,
) -> Result<(UpdateStats, u64), PpoError> {
    let (mut advantages, returns) = compute_gae(buffer, hyper.gamma, hyper.gae_lambda, bootstrap_value);
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    if var >= MIN_ADVANTAGE_VARIANCE {
        let std = var.sqrt();
        advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
    let samples: Vec<Sample> = buffer
        .iter()
        .zip(advantages.iter().zip(&returns))
        .map(|(tr, (&advantage, &target_return))| Sample {
            obs: tr.obs.to_vec(),
            action: tr.action,
            old_log_prob: tr.log_prob,
            advantage,
            target_return,
        })
        .collect();

    let backup = (net.params.clone(), adam.clone());
    let coeffs = hyper.coefficients();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut sum = LossBreakdown::default();
    let mut minibatches = 0;
    let mut macs = 0;
    for epoch in 0..hyper.update_epochs {
        order.shuffle(rng);
        for (mb, chunk) in order.chunks(hyper.minibatch_size).enumerate() {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (loss, grad, used) = ppo_loss_and_gradient(net, &batch, &coeffs);
            macs += used;
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                net.params = backup.0;
                *adam = backup.1;
                return Err(PpoError::NonFiniteLoss { epoch, minibatch: mb });
            }
            adam.step(&mut net.params, &grad);
            sum.policy += loss.policy;
            sum.value += loss.value;
            sum.entropy += loss.entropy;
            minibatches += 1;
        }
    }
    let k = minibatches.max(1) as f64;
    Ok((
        UpdateStats {
            policy_loss: sum.policy / k,
            value_loss: sum.value / k,
            entropy: sum.entropy / k,
            minibatches,
        },
        macs,
    ))
}

/// How rewards are rescaled before they enter the update buffer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardNormalization {
    None,
    /// Divide by a running standard deviation of the discounted return.
    ReturnScale,
    /// Subtract a running mean and divide by a running standard deviation
    /// of the per-step reward.
    #[default]
    Center,
}

/// Welford accumulator.
#[derive(Debug, Clone, Default, PartialEq)]
struct RunningStats {
    count: f64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.count < 1.0 {
            0.0
        } else {
            self.m2 / self.count
        }
    }
}

/// Running reward normalizer; statistics persist across episodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardNormalizer {
    mode: RewardNormalization,
    discounted: f64,
    stats: RunningStats,
}

impl RewardNormalizer {
    const EPS: f64 = 1e-8;

    pub fn new(mode: RewardNormalization) -> Self {
        Self {
            mode,
            ..Default::default()
        }
    }

    /// Folds `reward` into the running statistics and returns it rescaled.
    pub fn scale(&mut self, reward: f64, gamma: f64) -> f64 {
        match self.mode {
            RewardNormalization::None => reward,
            RewardNormalization::ReturnScale => {
                self.discounted = self.discounted * gamma + reward;
                self.stats.push(self.discounted);
                reward / (self.stats.variance() + Self::EPS).sqrt()
            }
            RewardNormalization::Center => {
                self.stats.push(reward);
                (reward - self.stats.mean) / (self.stats.variance() + Self::EPS).sqrt()
            }
        }
    }

    pub fn end_episode(&mut self) {
        self.discounted = 0.0;
    }

    pub fn mean(&self) -> f64 {
        self.stats.mean
    }

    pub fn variance(&self) -> f64 {
        self.stats.variance()
    }
}

/// Network, optimizer state and random stream of one training run.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub net: PolicyNetwork,
    pub adam: Adam,
    pub hyper: PpoHyperparams,
    normalizer: RewardNormalizer,
    rng: ChaCha8Rng,
}

impl PpoAgent {
    pub fn new(hyper: PpoHyperparams) -> Result<Self, PpoError> {
        let problems = hyper.problems();
        if !problems.is_empty() {
            return Err(PpoError::InvalidHyperparams(problems.join("; ")));
        }
        let net = PolicyNetwork::init(hyper.shape(), hyper.seed);
        let adam = Adam::new(net.params.len(), hyper.learning_rate);
        // Separate stream from the initializer so sampling does not alias it.
        let rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_5a3b_1e00_0001);
        Ok(Self {
            net,
            adam,
            normalizer: RewardNormalizer::new(hyper.reward_normalization),
            hyper,
            rng,
        })
    }

    pub fn act(&mut self, obs: &[f64]) -> (usize, f64, f64) {
        let (logits, value) = self.net.forward(obs);
        let (action, log_prob) = sample_action(&logits, &mut self.rng);
        (action, log_prob, value)
    }

    pub fn update(&mut self, buffer: &[Transition], bootstrap_value: f64) -> Result<(UpdateStats, u64), PpoError> {
        ppo_update(&mut self.net, &mut self.adam, buffer, bootstrap_value, &self.hyper, &mut self.rng)
    }

    /// One episode: observe, act, step, store; then a single policy update.
    pub fn run_episode(&mut self, env: &Environment, episode: usize) -> Result<EpisodeMetrics, PpoError> {
        let probe = env.probe().clone();
        let receivers = env.scene().receiver_count();
        let t_max = env.episode_length();
        let mut state = if env.config().params.start_jitter > 0.0 {
            env.reset_with(&mut self.rng)
        } else {
            env.reset()
        };
        let mut buffer: Vec<Transition> = Vec::with_capacity(t_max);
        let mut sinr = vec![0.0; receivers];
        let mut capacity = vec![0.0; receivers];
        let mut ret = 0.0;
        for step in 0..t_max {
            let obs = env.observe(&state);
            let started = Instant::now();
            let (action, log_prob, value) = self.act(&obs);
            probe.add_macs(self.net.shape().forward_macs());
            probe.add_time(Phase::Policy, started.elapsed());
            let result = env
                .step(&state, Action::from_index(action).expect("policy emits 6 logits"))
                .map_err(|source| PpoError::Env { episode, step, source })?;
            for r in &result.reports {
                sinr[r.receiver] += r.sinr_db;
                capacity[r.receiver] += r.capacity;
            }
            ret += result.reward;
            let reward = self.normalizer.scale(result.reward, self.hyper.gamma);
            buffer.push(Transition {
                obs,
                action,
                reward,
                next_obs: env.observe(&result.next_state),
                log_prob,
                value,
                done: result.done && !self.hyper.bootstrap_time_limit,
            });
            probe.add_transition(Transition::DIM as u64);
            state = result.next_state;
        }
        probe.observe_episode_buffer((buffer.len() * Transition::DIM) as u64);
        self.normalizer.end_episode();

        let started = Instant::now();
        let bootstrap_value = if self.hyper.bootstrap_time_limit {
            probe.add_macs(self.net.shape().forward_macs());
            self.net.forward(&env.observe(&state)).1
        } else {
            0.0
        };
        let (stats, macs) = self.update(&buffer, bootstrap_value)?;
        probe.add_macs(macs);
        probe.add_time(Phase::Update, started.elapsed());

        let t = t_max as f64;
        sinr.iter_mut().for_each(|v| *v /= t);
        capacity.iter_mut().for_each(|v| *v /= t);
        Ok(EpisodeMetrics {
            episode,
            episode_return: ret,
            capacity_sum: capacity.iter().sum(),
            sinr_db: sinr,
            capacity,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: PolicyNetwork,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Trains for `hyper.episodes` episodes, calling `on_episode` after each.
pub fn train<F>(env: &Environment, hyper: &PpoHyperparams, mut on_episode: F) -> Result<TrainOutcome, PpoError>
where
    F: FnMut(&EpisodeMetrics),
{
    let mut agent = PpoAgent::new(hyper.clone())?;
    let mut metrics = Vec::with_capacity(hyper.episodes);
    for episode in 0..hyper.episodes {
        let m = agent.run_episode(env, episode)?;
        on_episode(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome { net: agent.net, metrics })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub action: Action,
    pub state: EnvState,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub best_position: Vec3,
    pub best_reward: f64,
    pub best_step: usize,
}

/// Deterministic argmax rollout from reset. The best position is chosen
/// among the post-move positions; ties go to the earliest step.
pub fn greedy_rollout(net: &PolicyNetwork, env: &Environment) -> Result<Rollout, PpoError> {
    let mut state = env.reset();
    let mut steps = Vec::with_capacity(env.episode_length());
    let mut best = (0, f64::NEG_INFINITY, state.uav_pos);
    for step in 0..env.episode_length() {
        let (logits, _) = net.forward(&env.observe(&state));
        let action = Action::from_index(greedy_action(&logits)).expect("6 logits");
        let r = env
            .step(&state, action)
            .map_err(|source| PpoError::Env { episode: 0, step, source })?;
        if r.reward > best.1 {
            best = (step, r.reward, r.next_state.uav_pos);
        }
        state = r.next_state;
        steps.push(RolloutStep {
            action,
            state,
            reward: r.reward,
        });
    }
    Ok(Rollout {
        steps,
        best_position: best.2,
        best_reward: best.1,
        best_step: best.0,
    })
}
