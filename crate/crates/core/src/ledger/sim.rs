//! Workload generation: genesis construction, the end-to-end task flow and
//! randomized operation sequences with fault injection.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    Account, AccountId, DePinNode, Executor, Genesis, Ledger, LedgerError, LedgerParams, Notification, TaskId,
    TaskSpec, Tokens,
};
use crate::geometry::{Aabb, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub requesters: usize,
    pub requester_balance: Tokens,
    pub nodes: usize,
    pub node_stake: Tokens,
    pub node_capacity: u32,
    pub validators: usize,
    /// Fraction of nodes that return corrupted results.
    pub fault_rate: f64,
    pub tasks: usize,
    pub positions_per_task: usize,
    pub payment: Tokens,
    /// Tasks submitted per validation round.
    pub batch: usize,
    pub gas_price: Tokens,
    pub gas_base: u64,
    pub gas_per_evaluation: u64,
    pub slash_bps: u32,
    pub finality_depth: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            requesters: 4,
            requester_balance: 1_000_000,
            nodes: 5,
            node_stake: 10_000,
            node_capacity: 2,
            validators: 4,
            fault_rate: 0.0,
            tasks: 100,
            positions_per_task: 4,
            payment: 50,
            batch: 10,
            gas_price: 1,
            gas_base: 100,
            gas_per_evaluation: 1,
            slash_bps: 1000,
            finality_depth: 1,
        }
    }
}

impl SimParams {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.requesters < 1 {
            out.push("requesters must be >= 1".into());
        }
        if self.nodes < 1 {
            out.push("nodes must be >= 1".into());
        }
        if self.node_capacity < 1 {
            out.push("node_capacity must be >= 1".into());
        }
        if self.validators < 1 {
            out.push("validators must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.fault_rate) {
            out.push(format!("fault_rate must be in [0, 1] (got {})", self.fault_rate));
        }
        if self.positions_per_task < 1 {
            out.push("positions_per_task must be >= 1".into());
        }
        if self.payment < 1 {
            out.push("payment must be >= 1".into());
        }
        if self.slash_bps > 10_000 {
            out.push("slash_bps must be <= 10000".into());
        }
        if self.batch < 1 {
            out.push("batch must be >= 1".into());
        }
        out
    }

    pub fn ledger_params(&self) -> LedgerParams {
        LedgerParams {
            gas_price: self.gas_price,
            gas_base: self.gas_base,
            gas_per_evaluation: self.gas_per_evaluation,
            slash_bps: self.slash_bps,
            finality_depth: self.finality_depth,
        }
    }

    /// Number of dishonest nodes: `round(fault_rate · nodes)`.
    pub fn dishonest_nodes(&self) -> usize {
        (self.fault_rate * self.nodes as f64).round() as usize
    }

    /// Requesters get ids `0..requesters`; node `i` pays to account
    /// `requesters + i`, which starts empty. Which nodes are dishonest is
    /// drawn from `rng`.
    pub fn genesis<R: Rng>(&self, rng: &mut R) -> Genesis {
        let mut honest = vec![true; self.nodes];
        honest[..self.dishonest_nodes().min(self.nodes)].fill(false);
        honest.shuffle(rng);
        let node_account = |i: usize| (self.requesters + i) as AccountId;
        let accounts = (0..self.requesters)
            .map(|i| Account {
                id: i as AccountId,
                balance: self.requester_balance,
            })
            .chain((0..self.nodes).map(|i| Account {
                id: node_account(i),
                balance: 0,
            }))
            .collect();
        let nodes = honest
            .iter()
            .enumerate()
            .map(|(i, &honest)| DePinNode {
                id: i as u32,
                stake: self.node_stake,
                capacity: self.node_capacity,
                honest,
                account: node_account(i),
                active: 0,
            })
            .collect();
        Genesis {
            accounts,
            nodes,
            validators: (0..self.validators as u32).collect(),
            params: self.ledger_params(),
        }
    }
}

/// `n` distinct points of the `side`³ lattice spanning `bounds`.
pub fn lattice_positions<R: Rng>(bounds: &Aabb, side: usize, n: usize, rng: &mut R) -> Vec<Vec3> {
    let side = side.max(1);
    let coord = |lo: f64, hi: f64, i: usize| {
        if side == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (side - 1) as f64
        }
    };
    let total = side * side * side;
    rand::seq::index::sample(rng, total, n.min(total))
        .into_iter()
        .map(|k| {
            let (ix, iy, iz) = (k / (side * side), (k / side) % side, k % side);
            Vec3::new(
                coord(bounds.min.x, bounds.max.x, ix),
                coord(bounds.min.y, bounds.max.y, iy),
                coord(bounds.min.z, bounds.max.z, iz),
            )
        })
        .collect()
}

/// Outcome of driving a batch of tasks to completion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkloadReport {
    pub submitted: Vec<TaskId>,
    pub notifications: Vec<Notification>,
    pub rounds: usize,
}

/// Submits `params.tasks` requests in batches, runs rounds until every
/// task is terminal, seals enough empty blocks for finality and collects
/// one notification per task.
pub fn run_workload<R: Rng>(
    ledger: &mut Ledger,
    executor: &dyn Executor,
    params: &SimParams,
    spec: impl Fn(&mut R) -> TaskSpec,
    rng: &mut R,
) -> Result<WorkloadReport, LedgerError> {
    let mut report = WorkloadReport::default();
    let requesters = params.requesters as AccountId;
    while report.submitted.len() < params.tasks || !ledger.is_quiescent() {
        let room = params.tasks - report.submitted.len();
        for _ in 0..room.min(params.batch) {
            let requester = report.submitted.len() as AccountId % requesters;
            let s = spec(rng);
            let receivers = executor.receiver_count(&s).unwrap_or(0);
            let gas = ledger.gas_required(s.positions.len(), receivers).ok_or(LedgerError::Overflow)?;
            report
                .submitted
                .push(ledger.submit_request(requester, s, params.payment, gas)?);
        }
        ledger.run_round(executor)?;
        report.rounds += 1;
    }
    for _ in 0..ledger.params().finality_depth {
        ledger.heartbeat();
    }
    for &task in &report.submitted {
        report
            .notifications
            .push(ledger.notify(task).map_err(|e| LedgerError::Inconsistent {
                task,
                message: e.to_string(),
            })?);
    }
    Ok(report)
}

/// One randomized protocol operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Submit,
    Validate,
    Select,
    Execute,
    Verify,
    Heartbeat,
    Notify,
    Round,
}

impl Op {
    const WEIGHTED: [(Op, u32); 8] = [
        (Op::Submit, 5),
        (Op::Validate, 2),
        (Op::Select, 3),
        (Op::Execute, 3),
        (Op::Verify, 3),
        (Op::Heartbeat, 1),
        (Op::Notify, 2),
        (Op::Round, 1),
    ];

    pub fn draw<R: Rng>(rng: &mut R) -> Op {
        let total: u32 = Self::WEIGHTED.iter().map(|(_, w)| w).sum();
        let mut pick = rng.gen_range(0..total);
        for (op, w) in Self::WEIGHTED {
            if pick < w {
                return op;
            }
            pick -= w;
        }
        unreachable!()
    }
}

/// Applies one random operation. Operations that the protocol refuses
/// (wrong status, empty pool, insufficient funds, ...) come back as
/// `Ok((op, false))`. `Err` means a full round failed, which only happens
/// when the ledger itself is broken.
pub fn random_op<R: Rng>(
    ledger: &mut Ledger,
    executor: &dyn Executor,
    requesters: usize,
    spec: &dyn Fn(&mut R) -> TaskSpec,
    rng: &mut R,
) -> Result<(Op, bool), String> {
    let op = Op::draw(rng);
    let any_task = |ledger: &Ledger, rng: &mut R| {
        let n = ledger.tasks().len() + ledger.pending().len();
        (n > 0).then(|| rng.gen_range(0..n as TaskId + 1))
    };
    let accepted = match op {
        Op::Submit => {
            let requester = rng.gen_range(0..requesters as AccountId + 1);
            let mut s = spec(rng);
            if rng.gen_bool(0.05) {
                s.positions.clear();
            }
            let receivers = executor.receiver_count(&s).unwrap_or(3);
            let required = ledger.gas_required(s.positions.len(), receivers).unwrap_or(u64::MAX);
            let gas = if rng.gen_bool(0.1) { required / 2 } else { required };
            let payment = if rng.gen_bool(0.02) { 0 } else { rng.gen_range(1..200) };
            ledger.submit_request(requester, s, payment, gas).is_ok()
        }
        Op::Validate => ledger.validate_round().is_ok(),
        Op::Select => match any_task(ledger, rng) {
            Some(t) => matches!(ledger.select_node(t), Ok(Some(_))),
            None => false,
        },
        Op::Execute => match any_task(ledger, rng) {
            Some(t) => ledger.execute_task(t, executor).is_ok(),
            None => false,
        },
        Op::Verify => match any_task(ledger, rng) {
            Some(t) => ledger.verify_and_settle(t, executor).is_ok(),
            None => false,
        },
        Op::Heartbeat => {
            ledger.heartbeat();
            true
        }
        Op::Notify => match any_task(ledger, rng) {
            Some(t) => ledger.notify(t).is_ok(),
            None => false,
        },
        Op::Round => {
            ledger.run_round(executor).map_err(|e| format!("round failed: {e}"))?;
            true
        }
    };
    Ok((op, accepted))
}
