//! UAV positioning environment: discrete axis moves inside the flight
//! volume, rewarded by the SINR of every ground receiver.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{link_report_with_faces, ChannelError, LinkReport, RadioConfig, TraceStats};
use crate::probe::{ComplexityProbe, Phase};
use crate::scene::{candidate_faces, validate_scene, Face, Scene, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScale {
    /// Sum of clamped per-receiver SINR in dB.
    #[default]
    DbSum,
    /// Sum of linear SINR.
    LinearSum,
}

/// Environment parameters other than the scene and radio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    /// Meters moved per action.
    pub step_size: f64,
    /// Steps per episode.
    pub episode_length: usize,
    pub reward_scale: RewardScale,
    /// Fixed co-channel transmitters; empty means SINR = SNR.
    pub interferers: Vec<Vec3>,
    /// Half-width (meters) of the uniform horizontal jitter applied to the
    /// start position on seeded resets. Zero keeps starts fixed.
    pub start_jitter: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            step_size: 5.0,
            episode_length: 50,
            reward_scale: RewardScale::DbSum,
            interferers: Vec::new(),
            start_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub scene: Scene,
    pub radio: RadioConfig,
    pub params: EnvParams,
}

impl EnvConfig {
    pub fn new(scene: Scene, radio: RadioConfig, params: EnvParams) -> Self {
        Self { scene, radio, params }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> = validate_scene(&self.scene).iter().map(|v| v.to_string()).collect();
        out.extend(self.radio.problems());
        if !(self.params.step_size > 0.0) {
            out.push(format!("step_size must be > 0 (got {})", self.params.step_size));
        }
        if self.params.episode_length < 1 {
            out.push("episode_length must be >= 1".into());
        }
        if !(self.params.start_jitter >= 0.0) {
            out.push("start_jitter must be >= 0".into());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub uav_pos: Vec3,
    pub step_index: usize,
}

/// Movement actions, encoded 0..=5 in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    PlusX = 0,
    MinusX = 1,
    PlusY = 2,
    MinusY = 3,
    PlusZ = 4,
    MinusZ = 5,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; 6] = [
        Action::PlusX,
        Action::MinusX,
        Action::PlusY,
        Action::MinusY,
        Action::PlusZ,
        Action::MinusZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

pub fn action_to_delta(action: Action, step_size: f64) -> Vec3 {
    let s = step_size;
    match action {
        Action::PlusX => Vec3::new(s, 0.0, 0.0),
        Action::MinusX => Vec3::new(-s, 0.0, 0.0),
        Action::PlusY => Vec3::new(0.0, s, 0.0),
        Action::MinusY => Vec3::new(0.0, -s, 0.0),
        Action::PlusZ => Vec3::new(0.0, 0.0, s),
        Action::MinusZ => Vec3::new(0.0, 0.0, -s),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub reports: Vec<LinkReport>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("episode already finished at step_index {step_index}")]
    EpisodeFinished { step_index: usize },
    #[error("position {pos} outside the flight bounds")]
    OutOfBounds { pos: Vec3 },
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Environment bound to one configuration. Holds no episode state; states
/// are passed in and returned explicitly.
#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    faces: Vec<Face>,
    probe: Arc<ComplexityProbe>,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        Self::with_probe(config, Arc::new(ComplexityProbe::new()))
    }

    pub fn with_probe(config: EnvConfig, probe: Arc<ComplexityProbe>) -> Result<Self, EnvError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(EnvError::InvalidConfig(problems.join("; ")));
        }
        let faces = candidate_faces(&config.scene);
        Ok(Self { config, faces, probe })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn scene(&self) -> &Scene {
        &self.config.scene
    }

    pub fn probe(&self) -> &Arc<ComplexityProbe> {
        &self.probe
    }

    pub fn episode_length(&self) -> usize {
        self.config.params.episode_length
    }

    pub fn reset(&self) -> EnvState {
        EnvState {
            uav_pos: self.config.scene.uav_start,
            step_index: 0,
        }
    }

    /// Reset with the configured horizontal start jitter drawn from `rng`.
    pub fn reset_with<R: Rng>(&self, rng: &mut R) -> EnvState {
        let mut state = self.reset();
        let j = self.config.params.start_jitter;
        if j > 0.0 {
            let offset = Vec3::new(rng.gen_range(-j..=j), rng.gen_range(-j..=j), 0.0);
            state.uav_pos = self.config.scene.bounds.clamp(state.uav_pos + offset);
        }
        state
    }

    /// Position normalized to [-1, 1] per axis by the flight bounds.
    pub fn observe(&self, state: &EnvState) -> [f64; 3] {
        normalize(&self.config.scene, state.uav_pos)
    }

    pub fn step(&self, state: &EnvState, action: Action) -> Result<StepResult, EnvError> {
        let t = self.config.params.episode_length;
        if state.step_index >= t {
            return Err(EnvError::EpisodeFinished {
                step_index: state.step_index,
            });
        }
        let delta = action_to_delta(action, self.config.params.step_size);
        let pos = self.config.scene.bounds.clamp(state.uav_pos + delta);
        let (reward, reports) = self.evaluate_position(pos)?;
        self.probe.add_step();
        let step_index = state.step_index + 1;
        Ok(StepResult {
            next_state: EnvState { uav_pos: pos, step_index },
            reward,
            done: step_index == t,
            reports,
        })
    }

    /// Reward and per-receiver reports for the UAV hovering at `pos`.
    pub fn evaluate_position(&self, pos: Vec3) -> Result<(f64, Vec<LinkReport>), EnvError> {
        if !pos.is_finite() || !self.config.scene.bounds.contains(pos) {
            return Err(EnvError::OutOfBounds { pos });
        }
        let started = Instant::now();
        let mut stats = TraceStats::default();
        let cfg = &self.config;
        let reports = (0..cfg.scene.receivers.len())
            .map(|i| link_report_with_faces(&cfg.scene, &self.faces, pos, i, &cfg.params.interferers, &cfg.radio, &mut stats))
            .collect::<Result<Vec<_>, _>>()?;
        self.probe.add_trace(stats.candidates, stats.box_tests);
        self.probe.add_time(Phase::Trace, started.elapsed());
        Ok((reward_of(cfg.params.reward_scale, &reports), reports))
    }
}

pub fn reward_of(scale: RewardScale, reports: &[LinkReport]) -> f64 {
    match scale {
        RewardScale::DbSum => reports.iter().map(|r| r.sinr_db).sum(),
        RewardScale::LinearSum => reports.iter().map(|r| r.sinr_linear).sum(),
    }
}

pub fn normalize(scene: &Scene, p: Vec3) -> [f64; 3] {
    let b = scene.bounds;
    let n = |v: f64, lo: f64, hi: f64| 2.0 * (v - lo) / (hi - lo) - 1.0;
    [n(p.x, b.min.x, b.max.x), n(p.y, b.min.y, b.max.y), n(p.z, b.min.z, b.max.z)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_urban_grid, Aabb, Building, UrbanGridParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn city_env(t: usize) -> Environment {
        let scene = generate_urban_grid(&UrbanGridParams::default()).unwrap();
        let params = EnvParams {
            episode_length: t,
            ..Default::default()
        };
        Environment::new(EnvConfig::new(scene, RadioConfig::default(), params)).unwrap()
    }

    fn open_env(receivers: Vec<Vec3>) -> Environment {
        let scene = Scene {
            buildings: vec![],
            ground_reflectance: 0.0,
            receivers,
            uav_start: Vec3::new(50.0, 50.0, 40.0),
            bounds: Aabb::new(Vec3::new(0.0, 0.0, 10.0), Vec3::new(100.0, 100.0, 120.0)),
        };
        Environment::new(EnvConfig::new(scene, RadioConfig::default(), EnvParams::default())).unwrap()
    }

    #[test]
    fn reset_is_start_position() {
        let env = city_env(5);
        let s = env.reset();
        assert_eq!(s.uav_pos, env.scene().uav_start);
        assert_eq!(s.step_index, 0);
        assert_eq!(env.reset(), s);
        let mut state = s;
        while state.step_index < 5 {
            state = env.step(&state, Action::PlusX).unwrap().next_state;
        }
        assert_eq!(env.reset(), s);
    }

    #[test]
    fn action_deltas() {
        assert_eq!(action_to_delta(Action::PlusX, 5.0), Vec3::new(5.0, 0.0, 0.0));
        assert_eq!(action_to_delta(Action::MinusZ, 2.5), Vec3::new(0.0, 0.0, -2.5));
        let sum = Action::ALL
            .iter()
            .fold(Vec3::ZERO, |acc, &a| acc + action_to_delta(a, 3.0));
        assert_eq!(sum, Vec3::ZERO);
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
        }
        assert_eq!(Action::from_index(6), None);
    }

    #[test]
    fn clamp_at_bounds() {
        let env = city_env(5);
        let mut s = env.reset();
        s.uav_pos.x = env.scene().bounds.max.x;
        let r = env.step(&s, Action::PlusX).unwrap();
        assert_eq!(r.next_state.uav_pos, s.uav_pos);
        assert!(r.reward.is_finite());
        assert_eq!(r.reports.len(), 3);
    }

    #[test]
    fn moving_above_receiver_beats_moving_away() {
        let env = open_env(vec![Vec3::new(60.0, 50.0, 1.5)]);
        let s = env.reset();
        let toward = env.step(&s, Action::PlusX).unwrap().reward;
        let away = env.step(&s, Action::MinusX).unwrap().reward;
        assert!(toward > away);
    }

    #[test]
    fn fully_blocked_receivers_sum_floor() {
        let mut cfg = open_env(vec![Vec3::new(5.0, 20.0, 1.5), Vec3::new(5.0, 80.0, 1.5)])
            .config()
            .clone();
        // Non-reflecting wall taller than the flight ceiling between the
        // receivers and the rest of the flight volume.
        cfg.scene.buildings.push(Building {
            min_corner: Vec3::new(10.0, -1.0, 0.0),
            max_corner: Vec3::new(12.0, 101.0, 200.0),
            reflectance: 0.0,
        });
        let env = Environment::new(cfg).unwrap();
        let (reward, reports) = env.evaluate_position(Vec3::new(50.0, 50.0, 40.0)).unwrap();
        assert!(reports.iter().all(|r| r.sinr_linear == 0.0 && r.capacity == 0.0));
        assert_eq!(reward, 2.0 * env.config().radio.sinr_floor_db);
    }

    #[test]
    fn stepping_finished_episode_fails() {
        let env = city_env(2);
        let mut s = env.reset();
        let r1 = env.step(&s, Action::PlusY).unwrap();
        assert!(!r1.done);
        s = r1.next_state;
        let r2 = env.step(&s, Action::PlusY).unwrap();
        assert!(r2.done);
        let err = env.step(&r2.next_state, Action::PlusY).unwrap_err();
        assert_eq!(err, EnvError::EpisodeFinished { step_index: 2 });
    }

    #[test]
    fn evaluate_rejects_outside_bounds() {
        let env = city_env(5);
        let mut p = env.scene().uav_start;
        p.z = 500.0;
        assert!(matches!(env.evaluate_position(p), Err(EnvError::OutOfBounds { .. })));
    }

    #[test]
    fn step_reward_matches_evaluate_position() {
        let env = city_env(50);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = env.scene().bounds;
        for _ in 0..1000 {
            let pos = Vec3::new(
                rng.gen_range(b.min.x..=b.max.x),
                rng.gen_range(b.min.y..=b.max.y),
                rng.gen_range(b.min.z..=b.max.z),
            );
            let state = EnvState {
                uav_pos: pos,
                step_index: rng.gen_range(0..50),
            };
            let action = Action::from_index(rng.gen_range(0..6)).unwrap();
            let r = env.step(&state, action).unwrap();
            let (reward, reports) = env.evaluate_position(r.next_state.uav_pos).unwrap();
            assert_eq!(r.reward.to_bits(), reward.to_bits());
            assert_eq!(r.reports, reports);
        }
    }

    #[test]
    fn ring_center_is_best_offset() {
        let ring: Vec<Vec3> = (0..6)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 6.0;
                Vec3::new(50.0 + 30.0 * a.cos(), 50.0 + 30.0 * a.sin(), 1.5)
            })
            .collect();
        let env = open_env(ring);
        let center = Vec3::new(50.0, 50.0, 40.0);
        let (best, _) = env.evaluate_position(center).unwrap();
        for a in [Action::PlusX, Action::MinusX, Action::PlusY, Action::MinusY] {
            for k in 1..=6 {
                let p = center + action_to_delta(a, 5.0 * k as f64);
                let (r, _) = env.evaluate_position(p).unwrap();
                assert!(best >= r, "{a:?} x{k}: {r} > {best}");
            }
        }
    }

    #[test]
    fn jittered_reset_stays_in_bounds() {
        let mut cfg = city_env(5).config().clone();
        cfg.params.start_jitter = 15.0;
        let env = Environment::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = env.reset_with(&mut rng);
        assert!(env.scene().bounds.contains(a.uav_pos));
        assert_ne!(a.uav_pos, env.scene().uav_start);
        assert_eq!(a.uav_pos.z, env.scene().uav_start.z);
    }

    #[test]
    fn observation_is_normalized() {
        let env = city_env(5);
        let b = env.scene().bounds;
        let s = EnvState { uav_pos: b.min, step_index: 0 };
        assert_eq!(env.observe(&s), [-1.0, -1.0, -1.0]);
        let s = EnvState { uav_pos: b.max, step_index: 0 };
        assert_eq!(env.observe(&s), [1.0, 1.0, 1.0]);
    }
}
