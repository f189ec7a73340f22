//! Operation counters backing the empirical complexity probe.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::Serialize;

/// Shared, monotone loop counters. Cloned `Arc`s are handed to the
/// environment and the agent; counters only grow until [`reset`](Self::reset).
#[derive(Debug, Default)]
pub struct ComplexityProbe {
    candidate_paths: AtomicU64,
    box_tests: AtomicU64,
    mlp_macs: AtomicU64,
    env_steps: AtomicU64,
    transitions: AtomicU64,
    transition_scalars: AtomicU64,
    peak_episode_scalars: AtomicU64,
    trace_nanos: AtomicU64,
    policy_nanos: AtomicU64,
    update_nanos: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProbeSnapshot {
    pub candidate_paths: u64,
    pub box_tests: u64,
    pub mlp_macs: u64,
    pub env_steps: u64,
    pub transitions: u64,
    pub transition_scalars: u64,
    /// Largest transition buffer (in scalars) held during one episode.
    pub peak_episode_scalars: u64,
    pub trace_nanos: u64,
    pub policy_nanos: u64,
    pub update_nanos: u64,
}

#[derive(Debug, Clone, Copy)]
pub enum Phase {
    Trace,
    Policy,
    Update,
}

impl ComplexityProbe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_trace(&self, candidates: u64, box_tests: u64) {
        self.candidate_paths.fetch_add(candidates, Ordering::Relaxed);
        self.box_tests.fetch_add(box_tests, Ordering::Relaxed);
    }

    pub fn add_macs(&self, macs: u64) {
        self.mlp_macs.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn add_step(&self) {
        self.env_steps.fetch_add(1, Ordering::Relaxed);
    }

    pub fn add_transition(&self, scalars: u64) {
        self.transitions.fetch_add(1, Ordering::Relaxed);
        self.transition_scalars.fetch_add(scalars, Ordering::Relaxed);
    }

    pub fn observe_episode_buffer(&self, scalars: u64) {
        self.peak_episode_scalars.fetch_max(scalars, Ordering::Relaxed);
    }

    pub fn add_time(&self, phase: Phase, elapsed: Duration) {
        let slot = match phase {
            Phase::Trace => &self.trace_nanos,
            Phase::Policy => &self.policy_nanos,
            Phase::Update => &self.update_nanos,
        };
        slot.fetch_add(elapsed.as_nanos() as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> ProbeSnapshot {
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        ProbeSnapshot {
            candidate_paths: get(&self.candidate_paths),
            box_tests: get(&self.box_tests),
            mlp_macs: get(&self.mlp_macs),
            env_steps: get(&self.env_steps),
            transitions: get(&self.transitions),
            transition_scalars: get(&self.transition_scalars),
            peak_episode_scalars: get(&self.peak_episode_scalars),
            trace_nanos: get(&self.trace_nanos),
            policy_nanos: get(&self.policy_nanos),
            update_nanos: get(&self.update_nanos),
        }
    }

    /// Zeroes every counter. Only meant to be called between runs.
    pub fn reset(&self) {
        for a in [
            &self.candidate_paths,
            &self.box_tests,
            &self.mlp_macs,
            &self.env_steps,
            &self.transitions,
            &self.transition_scalars,
            &self.peak_episode_scalars,
            &self.trace_nanos,
            &self.policy_nanos,
            &self.update_nanos,
        ] {
            a.store(0, Ordering::Relaxed);
        }
    }
}
