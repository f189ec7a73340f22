use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TaskSpec;
use crate::env::Environment;

/// Outcome of one `evaluate_position` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionResult {
    pub reward: f64,
    /// Per receiver, dB.
    pub sinr_db: Vec<f64>,
}

/// Computes task specs. Nodes and validators share one executor; node
/// dishonesty is injected by the ledger after the honest computation.
pub trait Executor {
    /// Receivers in the referenced twin, or `None` if it is unknown.
    fn receiver_count(&self, spec: &TaskSpec) -> Option<usize>;
    fn evaluate(&self, spec: &TaskSpec) -> Result<Vec<PositionResult>, String>;
}

/// Named digital twins keyed by (scene ref, radio ref).
#[derive(Default)]
pub struct EnvRegistry {
    envs: BTreeMap<(String, String), Environment>,
}

impl EnvRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, scene: impl Into<String>, radio: impl Into<String>, env: Environment) {
        self.envs.insert((scene.into(), radio.into()), env);
    }

    pub fn get(&self, scene: &str, radio: &str) -> Option<&Environment> {
        self.envs.get(&(scene.to_string(), radio.to_string()))
    }
}

impl Executor for EnvRegistry {
    fn receiver_count(&self, spec: &TaskSpec) -> Option<usize> {
        self.get(&spec.scene, &spec.radio).map(|e| e.scene().receiver_count())
    }

    fn evaluate(&self, spec: &TaskSpec) -> Result<Vec<PositionResult>, String> {
        let env = self
            .get(&spec.scene, &spec.radio)
            .ok_or_else(|| format!("unknown twin `{}`/`{}`", spec.scene, spec.radio))?;
        spec.positions
            .iter()
            .map(|&p| {
                let (reward, reports) = env.evaluate_position(p).map_err(|e| e.to_string())?;
                Ok(PositionResult {
                    reward,
                    sinr_db: reports.iter().map(|r| r.sinr_db).collect(),
                })
            })
            .collect()
    }
}

/// SHA-256 over the little-endian bytes of every reward followed by its
/// receiver count and SINR values.
pub fn result_hash(results: &[PositionResult]) -> String {
    let mut h = Sha256::new();
    h.update((results.len() as u64).to_le_bytes());
    for r in results {
        h.update(r.reward.to_le_bytes());
        h.update((r.sinr_db.len() as u64).to_le_bytes());
        for s in &r.sinr_db {
            h.update(s.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Fault injection: what a dishonest node reports instead of the truth.
pub fn corrupt(results: &mut [PositionResult]) {
    for r in results {
        r.reward += 1.0;
        r.sinr_db.iter_mut().for_each(|s| *s += 1.0);
    }
}
