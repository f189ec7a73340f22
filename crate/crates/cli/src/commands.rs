//! Subcommand implementations. Each validates the whole config first,
//! writes its artifacts under `output.dir` and returns a printable report.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use uavtwin::env::Environment;
use uavtwin::ledger::sim::{self, lattice_positions};
use uavtwin::ledger::{self, audit, timeline, AuditReport, EnvRegistry, Ledger, TaskSpec};
use uavtwin::ppo::{greedy_rollout, load_checkpoint, save_checkpoint, train, CheckpointError, PolicyNetwork};
use uavtwin::scene::{scene_from_str, scene_to_string, Vec3};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::metrics::{EpisodeTable, EpisodeWriter};
use crate::plot::{capacity_chart, sinr_chart};
use crate::probe::{run_probe, ProbeReport, Variable};
use crate::sweep::{sweep, Grid, SweepResult};

/// Twin name under which ledger tasks reference the configured scene.
pub const TWIN: &str = "default";
/// Side of the lattice ledger task positions are drawn from.
pub const TASK_LATTICE_SIDE: usize = 11;

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    Ok(dir)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path.display(), e))
}

fn fmt_vec(v: &[f64], precision: usize) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.precision$}")).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_pos(p: Vec3) -> String {
    format!("({:.2}, {:.2}, {:.2})", p.x, p.y, p.z)
}

#[derive(Debug, Clone, Serialize)]
pub struct SceneGenReport {
    pub path: PathBuf,
    pub buildings: usize,
    pub receivers: usize,
    /// Buildings plus candidate reflecting faces.
    pub complexity: usize,
}

impl fmt::Display for SceneGenReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scene written to {}", self.path.display())?;
        writeln!(f, "buildings: {}", self.buildings)?;
        writeln!(f, "receivers (R): {}", self.receivers)?;
        write!(f, "scene complexity (L): {}", self.complexity)
    }
}

pub fn cmd_scene_gen(cfg: &RunConfig, path: Option<&Path>) -> Result<SceneGenReport> {
    cfg.validate()?;
    let scene = cfg.build_scene()?;
    let text = scene_to_string(&scene);
    let back = scene_from_str(&text).map_err(|e| CliError::Invariant(format!("scene does not re-parse: {e}")))?;
    if back != scene {
        return Err(CliError::Invariant("scene does not round-trip through its text form".into()));
    }
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => out_dir(cfg)?.join("scene.txt"),
    };
    write(&path, text)?;
    Ok(SceneGenReport {
        path,
        buildings: scene.buildings.len(),
        receivers: scene.receiver_count(),
        complexity: scene.complexity(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub final_position: Vec3,
    /// Per receiver at the final position, dB.
    pub sinr_db: Vec<f64>,
    /// Per receiver at the final position, bits/s.
    pub capacity: Vec<f64>,
    /// Sum of rewards along the greedy rollout.
    pub total_reward: f64,
    pub best_position: Vec3,
    pub best_reward: f64,
    pub best_step: usize,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "final position: {}", fmt_pos(self.final_position))?;
        writeln!(f, "final SINR (dB): {}", fmt_vec(&self.sinr_db, 3))?;
        let mbps: Vec<f64> = self.capacity.iter().map(|c| c / 1e6).collect();
        writeln!(f, "final capacity (Mbit/s): {}", fmt_vec(&mbps, 3))?;
        writeln!(f, "total reward: {:.6}", self.total_reward)?;
        write!(
            f,
            "best position: {} (step {}, reward {:.6})",
            fmt_pos(self.best_position),
            self.best_step,
            self.best_reward
        )
    }
}

/// Greedy rollout summary for a trained network.
pub fn evaluate(env: &Environment, net: &PolicyNetwork) -> Result<EvalReport> {
    let rollout = greedy_rollout(net, env).map_err(|e| CliError::Runtime(e.to_string()))?;
    let final_position = rollout.steps.last().map_or(env.scene().uav_start, |s| s.state.uav_pos);
    let (_, reports) = env
        .evaluate_position(final_position)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(EvalReport {
        final_position,
        sinr_db: reports.iter().map(|r| r.sinr_db).collect(),
        capacity: reports.iter().map(|r| r.capacity).collect(),
        total_reward: rollout.steps.iter().map(|s| s.reward).sum(),
        best_position: rollout.best_position,
        best_reward: rollout.best_reward,
        best_step: rollout.best_step,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    pub episodes: usize,
    pub net: PolicyNetwork,
    pub greedy: EvalReport,
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trained {} episodes; artifacts in {}", self.episodes, self.out_dir.display())?;
        write!(f, "{}", self.greedy)
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let env = cfg.build_env()?;
    let dir = out_dir(cfg)?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    let csv_path = dir.join("episodes.csv");
    let mut writer = EpisodeWriter::create(&csv_path, env.scene().receiver_count())?;
    let mut csv_error = None;
    let outcome = train(&env, &cfg.ppo_params(), |m| {
        if csv_error.is_none() {
            csv_error = writer.append(m).err();
        }
    })
    .map_err(|e| CliError::Runtime(format!("training failed: {e}")))?;
    if let Some(e) = csv_error {
        return Err(e);
    }
    drop(writer);
    save_checkpoint(&outcome.net, dir.join("policy.ckpt")).map_err(|e| CliError::io("policy.ckpt", e))?;
    if cfg.output.plots {
        let table = EpisodeTable::read(&csv_path)?;
        write(&dir.join("sinr.svg"), sinr_chart(&table))?;
        write(&dir.join("capacity.svg"), capacity_chart(&table))?;
    }
    let greedy = evaluate(&env, &outcome.net)?;
    Ok(TrainReport {
        out_dir: dir.to_path_buf(),
        episodes: outcome.metrics.len(),
        net: outcome.net,
        greedy,
    })
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    let env = cfg.build_env()?;
    let net = load_checkpoint(checkpoint, cfg.ppo_params().shape()).map_err(|e| match e {
        CheckpointError::ShapeMismatch(_) => CliError::Config(format!("{}: {e}", checkpoint.display())),
        other => CliError::Runtime(format!("{}: {other}", checkpoint.display())),
    })?;
    evaluate(&env, &net)
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub path: PathBuf,
    pub result: SweepResult,
    pub start_reward: f64,
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.result.grid;
        let best = self.result.best();
        writeln!(
            f,
            "evaluated {}x{}x{} = {} positions; rows in {}",
            g.nx,
            g.ny,
            g.nz,
            g.len(),
            self.path.display()
        )?;
        writeln!(
            f,
            "argmax: index {:?} (linear {}) at {} with reward {:.6}",
            best.index,
            self.result.argmax,
            fmt_pos(best.position),
            best.reward
        )?;
        writeln!(f, "argmax SINR (dB): {}", fmt_vec(&best.sinr_db, 3))?;
        write!(f, "reward at uav_start: {:.6}", self.start_reward)
    }
}

pub fn cmd_sweep(cfg: &RunConfig, grid: Grid) -> Result<SweepReport> {
    let env = cfg.build_env()?;
    let result = sweep(&env, grid)?;
    let path = out_dir(cfg)?.join("sweep.csv");
    result.write_csv(&path)?;
    let (start_reward, _) = env
        .evaluate_position(env.scene().uav_start)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(SweepReport {
        path,
        result,
        start_reward,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerSimReport {
    pub out_dir: PathBuf,
    pub tasks: usize,
    pub rounds: usize,
    pub dishonest_nodes: usize,
    pub state_hash: String,
    pub audit: AuditReport,
}

impl fmt::Display for LedgerSimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = &self.audit;
        writeln!(
            f,
            "{} tasks in {} rounds, {} blocks; {} dishonest nodes",
            self.tasks, self.rounds, a.blocks, self.dishonest_nodes
        )?;
        writeln!(f, "settled: {}, refunded: {}, rejected: {}", a.settled, a.refunded, a.rejected)?;
        writeln!(
            f,
            "supply: {} of {} minted (burned gas {}, burned stake {})",
            a.final_supply, a.genesis_mint, a.burned_gas, a.burned_slash
        )?;
        writeln!(f, "audit: {}", if a.is_clean() { "clean" } else { "VIOLATIONS" })?;
        writeln!(f, "replay: state hash {} reproduced", self.state_hash)?;
        write!(f, "artifacts in {}", self.out_dir.display())
    }
}

fn write_timeline(ledger: &Ledger, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
    w.write_record([
        "task", "outcome", "node", "validated", "assigned", "executed", "verified", "terminal", "gas_used",
        "payment", "reason",
    ])
    .map_err(|e| CliError::io(path.display(), e))?;
    let opt = |v: Option<u64>| v.map(|h| h.to_string()).unwrap_or_default();
    for row in timeline(ledger) {
        w.write_record([
            row.task.to_string(),
            row.outcome,
            row.node.map(|n| n.to_string()).unwrap_or_default(),
            opt(row.validated),
            opt(row.assigned),
            opt(row.executed),
            opt(row.verified),
            opt(row.terminal),
            row.gas_used.to_string(),
            row.payment.to_string(),
            row.reason,
        ])
        .map_err(|e| CliError::io(path.display(), e))?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

/// Task spec drawing `n` distinct positions from the sweep lattice.
pub fn lattice_task(env: &Environment, n: usize, rng: &mut ChaCha8Rng) -> TaskSpec {
    TaskSpec {
        scene: TWIN.into(),
        radio: TWIN.into(),
        positions: lattice_positions(&env.scene().bounds, TASK_LATTICE_SIDE, n, rng),
    }
}

pub fn cmd_ledger_sim(cfg: &RunConfig) -> Result<LedgerSimReport> {
    let env = cfg.build_env()?;
    let params = &cfg.ledger;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run_seed());
    let genesis = params.genesis(&mut rng);
    let mut ledger = Ledger::new(genesis).map_err(|e| CliError::Config(e.to_string()))?;
    let mut registry = EnvRegistry::new();
    registry.insert(TWIN, TWIN, env.clone());

    let n = params.positions_per_task;
    let report = sim::run_workload(&mut ledger, &registry, params, |r| lattice_task(&env, n, r), &mut rng)
        .map_err(|e| CliError::Runtime(format!("ledger simulation failed: {e}")))?;

    let dir = out_dir(cfg)?;
    let log_path = dir.join("events.log");
    ledger::write_log(&ledger, &log_path).map_err(|e| CliError::io(log_path.display(), e))?;
    write_timeline(&ledger, &dir.join("timeline.csv"))?;
    let audit = audit(&ledger);
    write(
        &dir.join("audit.json"),
        serde_json::to_string_pretty(&audit).expect("audit serializes"),
    )?;

    if let Some(v) = audit.first_violation() {
        return Err(CliError::Invariant(format!("event {}: {}", v.event, v.message)));
    }
    if audit.state_matches != Some(true) || !ledger.conserves_supply() {
        return Err(CliError::Invariant("recomputed balances differ from ledger state".into()));
    }
    let replayed = ledger::read_log(&log_path).map_err(|e| CliError::Invariant(format!("replay failed: {e}")))?;
    if replayed.state_hash() != ledger.state_hash() || replayed.blocks() != ledger.blocks() {
        return Err(CliError::Invariant("replayed state differs from live state".into()));
    }
    Ok(LedgerSimReport {
        out_dir: dir.to_path_buf(),
        tasks: report.submitted.len(),
        rounds: report.rounds,
        dishonest_nodes: ledger.genesis().nodes.iter().filter(|n| !n.honest).count(),
        state_hash: ledger.state_hash(),
        audit,
    })
}

#[derive(Debug, Clone)]
pub struct ProbeCommandReport {
    pub path: PathBuf,
    pub report: ProbeReport,
}

impl fmt::Display for ProbeCommandReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.report;
        writeln!(f, "{:>8}  {:>16}", r.variable, r.counter)?;
        for row in &r.rows {
            let count = match r.variable {
                Variable::W => row.counters.mlp_macs,
                _ => row.counters.candidate_paths,
            };
            writeln!(f, "{:>8}  {:>16}", row.value, count)?;
        }
        writeln!(f, "log-log slope: {:.4}", r.slope)?;
        write!(f, "counters in {}", self.path.display())
    }
}

pub fn cmd_probe(cfg: &RunConfig, variable: Variable, values: &[usize]) -> Result<ProbeCommandReport> {
    cfg.validate()?;
    let report = run_probe(cfg, variable, values)?;
    let path = out_dir(cfg)?.join("probe.csv");
    report.write_csv(&path)?;
    Ok(ProbeCommandReport { path, report })
}
