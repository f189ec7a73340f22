//! Discrete-event model of a token-metered compute market.
//!
//! A requester submits a batch of position evaluations; validators admit
//! it into a block and lock the payment plus a gas deposit in escrow; the
//! highest scoring provider node executes it; a validator re-executes and
//! compares result hashes; the escrow is then released to the node or
//! refunded to the requester. Every state change is a [`Record`] applied
//! through [`Ledger::apply`], sealed into hash-chained [`Block`]s, so the
//! event log alone reproduces the state.

mod audit;
mod exec;
mod log;
pub mod sim;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::Vec3;

pub use audit::{audit, audit_log, timeline, AuditReport, TaskTimeline, Violation};
pub use exec::{corrupt, result_hash, EnvRegistry, Executor, PositionResult};
pub use log::{decode_log, encode_log, read_log, replay, write_log, LogHeader, ReplayError, DIGEST_NAME};

pub type AccountId = u32;
pub type NodeId = u32;
pub type ValidatorId = u32;
pub type TaskId = u64;
/// Whole tokens; there are no fractional amounts.
pub type Tokens = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub id: AccountId,
    pub balance: Tokens,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DePinNode {
    pub id: NodeId,
    pub stake: Tokens,
    /// Maximum concurrent tasks.
    pub capacity: u32,
    /// Fault-injection switch: dishonest nodes return corrupted results.
    pub honest: bool,
    /// Account credited with payments.
    pub account: AccountId,
    /// Tasks currently assigned and not yet terminal.
    #[serde(default)]
    pub active: u32,
}

impl DePinNode {
    pub fn free_capacity(&self) -> u32 {
        self.capacity.saturating_sub(self.active)
    }
}

/// What a task asks to compute: `evaluate_position` for every position
/// in the named digital twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub scene: String,
    pub radio: String,
    pub positions: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TaskStatus {
    Submitted,
    Validated,
    Assigned { node: NodeId },
    Executed { node: NodeId },
    Verified { node: NodeId },
    Settled { node: NodeId },
    Refunded,
    /// Excluded by validators as malformed; nothing was escrowed.
    Rejected,
}

impl TaskStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Settled { .. } | Self::Refunded | Self::Rejected)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Submitted => "SUBMITTED",
            Self::Validated => "VALIDATED",
            Self::Assigned { .. } => "ASSIGNED",
            Self::Executed { .. } => "EXECUTED",
            Self::Verified { .. } => "VERIFIED",
            Self::Settled { .. } => "SETTLED",
            Self::Refunded => "REFUNDED",
            Self::Rejected => "REJECTED",
        }
    }
}

/// Output claimed by the executing node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    /// Hex SHA-256 of the canonical result bytes.
    pub hash: String,
    pub positions: Vec<PositionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub requester: AccountId,
    pub spec: TaskSpec,
    pub payment: Tokens,
    pub gas_limit: u64,
    pub status: TaskStatus,
    pub gas_used: u64,
    pub result: Option<TaskResult>,
    pub refund_reason: Option<String>,
    /// Height of the block holding the task's terminal record.
    pub terminal_height: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscrowState {
    Locked,
    Released,
    Refunded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Escrow {
    pub task: TaskId,
    /// Payment plus gas deposit; fixed at creation.
    pub locked: Tokens,
    pub state: EscrowState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RefundCause {
    GasExhausted { required: u64, limit: u64 },
    ExecutionFailed { reason: String },
    VerificationFailed { validator: ValidatorId, claimed: String, recomputed: String },
}

impl RefundCause {
    pub fn describe(&self) -> String {
        match self {
            Self::GasExhausted { required, limit } => {
                format!("gas exhausted: required {required}, limit {limit}")
            }
            Self::ExecutionFailed { reason } => format!("execution failed: {reason}"),
            Self::VerificationFailed { validator, .. } => {
                format!("verification failed: validator {validator} recomputed a different result hash")
            }
        }
    }
}

/// One state transition as stored in a block. Amount fields are receipts:
/// [`Ledger::apply`] recomputes them and rejects records that disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Validated {
        task: TaskId,
        requester: AccountId,
        spec: TaskSpec,
        payment: Tokens,
        gas_limit: u64,
        approvals: u32,
        escrowed: Tokens,
    },
    Rejected {
        task: TaskId,
        requester: AccountId,
        reason: String,
    },
    Assigned {
        task: TaskId,
        node: NodeId,
    },
    Executed {
        task: TaskId,
        node: NodeId,
        gas_used: u64,
        result: TaskResult,
    },
    Verified {
        task: TaskId,
        validator: ValidatorId,
    },
    Settled {
        task: TaskId,
        node: NodeId,
        paid: Tokens,
        gas_burned: Tokens,
        returned: Tokens,
    },
    Refunded {
        task: TaskId,
        cause: RefundCause,
        gas_burned: Tokens,
        returned: Tokens,
        slashed: Tokens,
    },
}

impl Record {
    pub fn task(&self) -> TaskId {
        match self {
            Self::Validated { task, .. }
            | Self::Rejected { task, .. }
            | Self::Assigned { task, .. }
            | Self::Executed { task, .. }
            | Self::Verified { task, .. }
            | Self::Settled { task, .. }
            | Self::Refunded { task, .. } => *task,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Rejected { .. } | Self::Settled { .. } | Self::Refunded { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Validated { .. } => "validated",
            Self::Rejected { .. } => "rejected",
            Self::Assigned { .. } => "assigned",
            Self::Executed { .. } => "executed",
            Self::Verified { .. } => "verified",
            Self::Settled { .. } => "settled",
            Self::Refunded { .. } => "refunded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: String,
    pub records: Vec<Record>,
    pub hash: String,
}

#[derive(Serialize)]
struct BlockBody<'a> {
    height: u64,
    prev_hash: &'a str,
    records: &'a [Record],
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn block_hash(height: u64, prev_hash: &str, records: &[Record]) -> String {
    let body = BlockBody {
        height,
        prev_hash,
        records,
    };
    sha256_hex(&serde_json::to_vec(&body).expect("records serialize"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedgerParams {
    /// Tokens per gas unit.
    pub gas_price: Tokens,
    /// Fixed gas per task (g0).
    pub gas_base: u64,
    /// Gas per position per receiver (g1).
    pub gas_per_evaluation: u64,
    /// Share of stake burned on failed verification, in basis points.
    pub slash_bps: u32,
    /// Blocks on top of a task's terminal block before it is final.
    pub finality_depth: u64,
}

impl Default for LedgerParams {
    fn default() -> Self {
        Self {
            gas_price: 1,
            gas_base: 100,
            gas_per_evaluation: 1,
            slash_bps: 1000,
            finality_depth: 1,
        }
    }
}

/// Initial allocation. Everything minted at genesis is accounted for by
/// [`Ledger::total_supply`] forever after.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genesis {
    pub accounts: Vec<Account>,
    pub nodes: Vec<DePinNode>,
    pub validators: Vec<ValidatorId>,
    pub params: LedgerParams,
}

impl Genesis {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let ids: BTreeSet<_> = self.accounts.iter().map(|a| a.id).collect();
        if ids.len() != self.accounts.len() {
            out.push("duplicate account id".into());
        }
        let node_ids: BTreeSet<_> = self.nodes.iter().map(|n| n.id).collect();
        if node_ids.len() != self.nodes.len() {
            out.push("duplicate node id".into());
        }
        for n in &self.nodes {
            if n.capacity < 1 {
                out.push(format!("node {} capacity must be >= 1", n.id));
            }
            if n.active != 0 {
                out.push(format!("node {} must start with no active tasks", n.id));
            }
            if !ids.contains(&n.account) {
                out.push(format!("node {} pays to unknown account {}", n.id, n.account));
            }
        }
        if self.validators.is_empty() {
            out.push("validator roster is empty".into());
        }
        if self.params.slash_bps > 10_000 {
            out.push("slash_bps must be <= 10000".into());
        }
        let mut total: Option<Tokens> = Some(0);
        for v in self.accounts.iter().map(|a| a.balance).chain(self.nodes.iter().map(|n| n.stake)) {
            total = total.and_then(|t| t.checked_add(v));
        }
        if total.is_none() {
            out.push("genesis mint overflows".into());
        }
        out
    }

    pub fn mint(&self) -> Tokens {
        self.accounts.iter().map(|a| a.balance).sum::<Tokens>() + self.nodes.iter().map(|n| n.stake).sum::<Tokens>()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("invalid genesis: {0}")]
    InvalidGenesis(String),
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("insufficient balance: required {required}, available {available}")]
    InsufficientBalance { required: Tokens, available: Tokens },
    #[error("payment must be > 0")]
    ZeroPayment,
    #[error("amount overflow")]
    Overflow,
    #[error("pending pool is empty")]
    EmptyPool,
    #[error("task {task} is {found}, expected {expected}")]
    WrongStatus {
        task: TaskId,
        found: &'static str,
        expected: &'static str,
    },
    #[error("task {0} already reached a terminal state")]
    AlreadyTerminal(TaskId),
    #[error("record for task {task} disagrees with state: {message}")]
    Inconsistent { task: TaskId, message: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum NotifyError {
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {task} is {status}, not settled or refunded")]
    NotTerminal { task: TaskId, status: &'static str },
    #[error("task {0} is terminal but its record is not yet in a block")]
    NotSealed(TaskId),
    #[error("task {task} not final: depth {depth}, required {required}")]
    NotFinal { task: TaskId, depth: u64, required: u64 },
    #[error("task {0} was already delivered")]
    AlreadyDelivered(TaskId),
}

/// A request waiting in the pool for the next validation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub task: TaskId,
    pub requester: AccountId,
    pub spec: TaskSpec,
    pub payment: Tokens,
    pub gas_limit: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecutionOutcome {
    Executed { gas_used: u64, hash: String },
    Refunded(RefundCause),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Settlement {
    Released { node: NodeId, paid: Tokens },
    Refunded { slashed: Tokens },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Notification {
    Result { task: TaskId, positions: Vec<PositionResult> },
    Refund { task: TaskId, reason: String },
    Rejected { task: TaskId, reason: String },
}

/// State that every replica agrees on; its hash is compared on replay.
#[derive(Serialize)]
struct CommittedView<'a> {
    accounts: &'a BTreeMap<AccountId, Account>,
    nodes: &'a BTreeMap<NodeId, DePinNode>,
    tasks: &'a BTreeMap<TaskId, Task>,
    escrows: &'a BTreeMap<TaskId, Escrow>,
    burned_gas: Tokens,
    burned_slash: Tokens,
    height: usize,
    tip: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    genesis: Genesis,
    genesis_hash: String,
    accounts: BTreeMap<AccountId, Account>,
    nodes: BTreeMap<NodeId, DePinNode>,
    tasks: BTreeMap<TaskId, Task>,
    escrows: BTreeMap<TaskId, Escrow>,
    burned_gas: Tokens,
    burned_slash: Tokens,
    blocks: Vec<Block>,
    /// Records applied since the last sealed block.
    journal: Vec<Record>,
    /// Submissions awaiting validation; not part of the committed state.
    pending: Vec<Submission>,
    next_task: TaskId,
    delivered: BTreeSet<TaskId>,
}

impl Ledger {
    pub fn new(genesis: Genesis) -> Result<Self, LedgerError> {
        let problems = genesis.problems();
        if !problems.is_empty() {
            return Err(LedgerError::InvalidGenesis(problems.join("; ")));
        }
        let genesis_hash = sha256_hex(&serde_json::to_vec(&genesis).expect("genesis serializes"));
        Ok(Self {
            accounts: genesis.accounts.iter().map(|a| (a.id, a.clone())).collect(),
            nodes: genesis.nodes.iter().map(|n| (n.id, n.clone())).collect(),
            genesis,
            genesis_hash,
            tasks: BTreeMap::new(),
            escrows: BTreeMap::new(),
            burned_gas: 0,
            burned_slash: 0,
            blocks: Vec::new(),
            journal: Vec::new(),
            pending: Vec::new(),
            next_task: 0,
            delivered: BTreeSet::new(),
        })
    }

    pub fn genesis(&self) -> &Genesis {
        &self.genesis
    }

    pub fn params(&self) -> &LedgerParams {
        &self.genesis.params
    }

    pub fn accounts(&self) -> &BTreeMap<AccountId, Account> {
        &self.accounts
    }

    pub fn balance(&self, id: AccountId) -> Option<Tokens> {
        self.accounts.get(&id).map(|a| a.balance)
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, DePinNode> {
        &self.nodes
    }

    pub fn tasks(&self) -> &BTreeMap<TaskId, Task> {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.tasks.get(&id)
    }

    pub fn escrows(&self) -> &BTreeMap<TaskId, Escrow> {
        &self.escrows
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn pending(&self) -> &[Submission] {
        &self.pending
    }

    pub fn journal(&self) -> &[Record] {
        &self.journal
    }

    pub fn burned_gas(&self) -> Tokens {
        self.burned_gas
    }

    pub fn burned_slash(&self) -> Tokens {
        self.burned_slash
    }

    /// Status including submissions still in the pool.
    pub fn status(&self, id: TaskId) -> Option<TaskStatus> {
        if let Some(t) = self.tasks.get(&id) {
            return Some(t.status.clone());
        }
        self.pending.iter().any(|s| s.task == id).then_some(TaskStatus::Submitted)
    }

    pub fn tip_hash(&self) -> &str {
        self.blocks.last().map_or(&self.genesis_hash, |b| &b.hash)
    }

    pub fn genesis_hash(&self) -> &str {
        &self.genesis_hash
    }

    /// Balances + stakes + locked escrow + burned gas + burned stake.
    pub fn total_supply(&self) -> Tokens {
        let balances: Tokens = self.accounts.values().map(|a| a.balance).sum();
        let stakes: Tokens = self.nodes.values().map(|n| n.stake).sum();
        let locked: Tokens = self
            .escrows
            .values()
            .filter(|e| e.state == EscrowState::Locked)
            .map(|e| e.locked)
            .sum();
        balances + stakes + locked + self.burned_gas + self.burned_slash
    }

    pub fn conserves_supply(&self) -> bool {
        self.total_supply() == self.genesis.mint()
    }

    /// Digest of the committed state (pool and delivery bookkeeping excluded).
    pub fn state_hash(&self) -> String {
        let view = CommittedView {
            accounts: &self.accounts,
            nodes: &self.nodes,
            tasks: &self.tasks,
            escrows: &self.escrows,
            burned_gas: self.burned_gas,
            burned_slash: self.burned_slash,
            height: self.blocks.len(),
            tip: self.tip_hash(),
        };
        sha256_hex(&serde_json::to_vec(&view).expect("state serializes"))
    }

    fn escrow_amount(&self, payment: Tokens, gas_limit: u64) -> Option<Tokens> {
        gas_limit
            .checked_mul(self.genesis.params.gas_price)
            .and_then(|deposit| deposit.checked_add(payment))
    }

    /// Queues a request. No tokens move until it is validated.
    pub fn submit_request(
        &mut self,
        requester: AccountId,
        spec: TaskSpec,
        payment: Tokens,
        gas_limit: u64,
    ) -> Result<TaskId, LedgerError> {
        let available = self.balance(requester).ok_or(LedgerError::UnknownAccount(requester))?;
        if payment == 0 {
            return Err(LedgerError::ZeroPayment);
        }
        let required = self.escrow_amount(payment, gas_limit).ok_or(LedgerError::Overflow)?;
        if available < required {
            return Err(LedgerError::InsufficientBalance { required, available });
        }
        let task = self.next_task;
        self.next_task += 1;
        self.pending.push(Submission {
            task,
            requester,
            spec,
            payment,
            gas_limit,
        });
        Ok(task)
    }

    fn malformed_reason(&self, s: &Submission) -> Option<String> {
        let Some(available) = self.balance(s.requester) else {
            return Some(format!("unknown requester {}", s.requester));
        };
        if s.payment == 0 {
            return Some("payment must be > 0".into());
        }
        if s.spec.positions.is_empty() {
            return Some("spec has no positions".into());
        }
        if s.spec.positions.iter().any(|p| !p.is_finite()) {
            return Some("spec has a non-finite position".into());
        }
        match self.escrow_amount(s.payment, s.gas_limit) {
            None => Some("escrow amount overflows".into()),
            Some(required) if required > available => Some(format!(
                "insufficient balance at validation: required {required}, available {available}"
            )),
            Some(_) => None,
        }
    }

    /// Validators vote on every pending submission in submission order and
    /// the round's records, together with anything applied since the last
    /// block, are sealed into a new block.
    pub fn validate_round(&mut self) -> Result<&Block, LedgerError> {
        if self.pending.is_empty() {
            return Err(LedgerError::EmptyPool);
        }
        let roster = self.genesis.validators.len() as u32;
        for s in std::mem::take(&mut self.pending) {
            let record = match self.malformed_reason(&s) {
                Some(reason) => Record::Rejected {
                    task: s.task,
                    requester: s.requester,
                    reason,
                },
                None => {
                    // Every validator runs the same well-formedness check.
                    let approvals = roster;
                    if 3 * approvals < 2 * roster {
                        unreachable!("identical validators always reach quorum");
                    }
                    Record::Validated {
                        task: s.task,
                        requester: s.requester,
                        escrowed: self.escrow_amount(s.payment, s.gas_limit).expect("checked"),
                        spec: s.spec,
                        payment: s.payment,
                        gas_limit: s.gas_limit,
                        approvals,
                    }
                }
            };
            self.apply(record)?;
        }
        Ok(self.seal())
    }

    /// Seals whatever has been applied since the last block, possibly
    /// nothing. Empty blocks advance finality depth.
    pub fn heartbeat(&mut self) -> &Block {
        self.seal()
    }

    fn seal(&mut self) -> &Block {
        let height = self.blocks.len() as u64;
        let records = std::mem::take(&mut self.journal);
        let prev_hash = self.tip_hash().to_string();
        let hash = block_hash(height, &prev_hash, &records);
        for r in records.iter().filter(|r| r.is_terminal()) {
            if let Some(t) = self.tasks.get_mut(&r.task()) {
                t.terminal_height = Some(height);
            }
        }
        self.blocks.push(Block {
            height,
            prev_hash,
            records,
            hash,
        });
        self.blocks.last().expect("just pushed")
    }

    fn task_in(&self, id: TaskId) -> Result<&Task, LedgerError> {
        self.tasks.get(&id).ok_or(LedgerError::UnknownTask(id))
    }

    /// Highest stake × free capacity; ties go to the lowest node id.
    pub fn best_node(&self) -> Option<NodeId> {
        let mut best: Option<(u128, NodeId)> = None;
        for n in self.nodes.values().filter(|n| n.free_capacity() > 0) {
            let score = n.stake as u128 * n.free_capacity() as u128;
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, n.id));
            }
        }
        best.map(|(_, id)| id)
    }

    /// Assigns a validated task. `Ok(None)` when every node is saturated;
    /// the task then stays validated.
    pub fn select_node(&mut self, task: TaskId) -> Result<Option<NodeId>, LedgerError> {
        let t = self.task_in(task)?;
        expect_status(t, "VALIDATED", |s| matches!(s, TaskStatus::Validated))?;
        let Some(node) = self.best_node() else {
            return Ok(None);
        };
        self.apply(Record::Assigned { task, node })?;
        Ok(Some(node))
    }

    pub fn gas_required(&self, positions: usize, receivers: usize) -> Option<u64> {
        let p = &self.genesis.params;
        (positions as u64)
            .checked_mul(receivers as u64)
            .and_then(|n| n.checked_mul(p.gas_per_evaluation))
            .and_then(|g| g.checked_add(p.gas_base))
    }

    /// Runs the assigned node's computation. Honest nodes report the true
    /// results; dishonest ones a corrupted vector.
    pub fn execute_task(&mut self, task: TaskId, executor: &dyn Executor) -> Result<ExecutionOutcome, LedgerError> {
        let t = self.task_in(task)?;
        let node = match t.status {
            TaskStatus::Assigned { node } => node,
            ref other if other.is_terminal() => return Err(LedgerError::AlreadyTerminal(task)),
            ref other => return Err(wrong(task, other, "ASSIGNED")),
        };
        let refund = |cause: RefundCause| (cause, 0);
        let (cause, gas_used) = match executor.receiver_count(&t.spec) {
            None => refund(RefundCause::ExecutionFailed {
                reason: format!("unknown twin `{}`/`{}`", t.spec.scene, t.spec.radio),
            }),
            Some(receivers) => match self.gas_required(t.spec.positions.len(), receivers) {
                None => refund(RefundCause::ExecutionFailed {
                    reason: "gas requirement overflows".into(),
                }),
                Some(required) if required > t.gas_limit => (
                    RefundCause::GasExhausted {
                        required,
                        limit: t.gas_limit,
                    },
                    t.gas_limit,
                ),
                Some(required) => match executor.evaluate(&t.spec) {
                    Err(reason) => refund(RefundCause::ExecutionFailed { reason }),
                    Ok(mut positions) => {
                        if !self.nodes[&node].honest {
                            corrupt(&mut positions);
                        }
                        let hash = result_hash(&positions);
                        self.apply(Record::Executed {
                            task,
                            node,
                            gas_used: required,
                            result: TaskResult {
                                hash: hash.clone(),
                                positions,
                            },
                        })?;
                        return Ok(ExecutionOutcome::Executed {
                            gas_used: required,
                            hash,
                        });
                    }
                },
            },
        };
        let record = self.refund_record(task, cause.clone(), gas_used)?;
        self.apply(record)?;
        Ok(ExecutionOutcome::Refunded(cause))
    }

    fn refund_record(&self, task: TaskId, cause: RefundCause, gas_used: u64) -> Result<Record, LedgerError> {
        let t = self.task_in(task)?;
        let escrow = &self.escrows[&task];
        let gas_burned = gas_used.checked_mul(self.genesis.params.gas_price).ok_or(LedgerError::Overflow)?;
        let slashed = match (&cause, &t.status) {
            (RefundCause::VerificationFailed { .. }, TaskStatus::Executed { node }) => {
                slash_amount(self.nodes[node].stake, self.genesis.params.slash_bps)
            }
            _ => 0,
        };
        Ok(Record::Refunded {
            task,
            cause,
            gas_burned,
            returned: escrow.locked - gas_burned,
            slashed,
        })
    }

    /// The validator `roster[task mod |roster|]`.
    pub fn verifier_for(&self, task: TaskId) -> ValidatorId {
        let roster = &self.genesis.validators;
        roster[(task % roster.len() as u64) as usize]
    }

    /// Re-executes the task on the verifying validator and settles on a
    /// matching hash; refunds and slashes otherwise.
    pub fn verify_and_settle(&mut self, task: TaskId, executor: &dyn Executor) -> Result<Settlement, LedgerError> {
        let t = self.task_in(task)?;
        let node = match t.status {
            TaskStatus::Executed { node } => node,
            ref other if other.is_terminal() => return Err(LedgerError::AlreadyTerminal(task)),
            ref other => return Err(wrong(task, other, "EXECUTED")),
        };
        let claimed = t.result.as_ref().expect("executed tasks carry a result").hash.clone();
        let validator = self.verifier_for(task);
        let recomputed = match executor.evaluate(&t.spec) {
            Ok(positions) => result_hash(&positions),
            Err(reason) => format!("error: {reason}"),
        };
        if recomputed == claimed {
            let gas_burned = t.gas_used * self.genesis.params.gas_price;
            let paid = t.payment;
            let returned = self.escrows[&task].locked - paid - gas_burned;
            self.apply(Record::Verified { task, validator })?;
            self.apply(Record::Settled {
                task,
                node,
                paid,
                gas_burned,
                returned,
            })?;
            return Ok(Settlement::Released { node, paid });
        }
        let cause = RefundCause::VerificationFailed {
            validator,
            claimed,
            recomputed,
        };
        let record = self.refund_record(task, cause, 0)?;
        let Record::Refunded { slashed, .. } = record else {
            unreachable!()
        };
        self.apply(record)?;
        Ok(Settlement::Refunded { slashed })
    }

    /// Depth of the block holding the task's terminal record.
    pub fn depth(&self, task: TaskId) -> Option<u64> {
        let h = self.tasks.get(&task)?.terminal_height?;
        Some(self.blocks.len() as u64 - 1 - h)
    }

    /// Delivers the outcome of a final task, at most once.
    pub fn notify(&mut self, task: TaskId) -> Result<Notification, NotifyError> {
        let t = self.tasks.get(&task).ok_or_else(|| {
            if self.pending.iter().any(|s| s.task == task) {
                NotifyError::NotTerminal {
                    task,
                    status: "SUBMITTED",
                }
            } else {
                NotifyError::UnknownTask(task)
            }
        })?;
        if !t.status.is_terminal() {
            return Err(NotifyError::NotTerminal {
                task,
                status: t.status.label(),
            });
        }
        let depth = self.depth(task).ok_or(NotifyError::NotSealed(task))?;
        let required = self.genesis.params.finality_depth;
        if depth < required {
            return Err(NotifyError::NotFinal { task, depth, required });
        }
        if !self.delivered.insert(task) {
            return Err(NotifyError::AlreadyDelivered(task));
        }
        let reason = t.refund_reason.clone().unwrap_or_default();
        Ok(match t.status {
            TaskStatus::Settled { .. } => Notification::Result {
                task,
                positions: t.result.as_ref().expect("settled tasks carry a result").positions.clone(),
            },
            TaskStatus::Rejected => Notification::Rejected { task, reason },
            _ => Notification::Refund { task, reason },
        })
    }

    /// Applies one record, checking it against the current state. This is
    /// the only place state changes; replay calls it too.
    pub fn apply(&mut self, record: Record) -> Result<(), LedgerError> {
        let id = record.task();
        let bad = |message: String| LedgerError::Inconsistent { task: id, message };
        match &record {
            Record::Validated {
                requester,
                spec,
                payment,
                gas_limit,
                escrowed,
                approvals,
                ..
            } => {
                if self.tasks.contains_key(&id) {
                    return Err(bad("task id already used".into()));
                }
                let roster = self.genesis.validators.len() as u32;
                if *approvals > roster || 3 * approvals < 2 * roster {
                    return Err(bad(format!("{approvals} approvals of {roster} is not a quorum")));
                }
                if *payment == 0 {
                    return Err(bad("payment must be > 0".into()));
                }
                let amount = self.escrow_amount(*payment, *gas_limit).ok_or(LedgerError::Overflow)?;
                if amount != *escrowed {
                    return Err(bad(format!("escrow {escrowed} != {amount}")));
                }
                let account = self
                    .accounts
                    .get_mut(requester)
                    .ok_or(LedgerError::UnknownAccount(*requester))?;
                if account.balance < amount {
                    return Err(LedgerError::InsufficientBalance {
                        required: amount,
                        available: account.balance,
                    });
                }
                account.balance -= amount;
                self.escrows.insert(
                    id,
                    Escrow {
                        task: id,
                        locked: amount,
                        state: EscrowState::Locked,
                    },
                );
                self.tasks.insert(
                    id,
                    Task {
                        id,
                        requester: *requester,
                        spec: spec.clone(),
                        payment: *payment,
                        gas_limit: *gas_limit,
                        status: TaskStatus::Validated,
                        gas_used: 0,
                        result: None,
                        refund_reason: None,
                        terminal_height: None,
                    },
                );
            }
            Record::Rejected { requester, reason, .. } => {
                if self.tasks.contains_key(&id) {
                    return Err(bad("task id already used".into()));
                }
                self.tasks.insert(
                    id,
                    Task {
                        id,
                        requester: *requester,
                        spec: TaskSpec {
                            scene: String::new(),
                            radio: String::new(),
                            positions: Vec::new(),
                        },
                        payment: 0,
                        gas_limit: 0,
                        status: TaskStatus::Rejected,
                        gas_used: 0,
                        result: None,
                        refund_reason: Some(reason.clone()),
                        terminal_height: None,
                    },
                );
            }
            Record::Assigned { node, .. } => {
                let t = self.task_in(id)?;
                expect_status(t, "VALIDATED", |s| matches!(s, TaskStatus::Validated))?;
                let n = self.nodes.get_mut(node).ok_or(LedgerError::UnknownNode(*node))?;
                if n.free_capacity() == 0 {
                    return Err(bad(format!("node {node} has no free capacity")));
                }
                n.active += 1;
                self.tasks.get_mut(&id).expect("checked").status = TaskStatus::Assigned { node: *node };
            }
            Record::Executed {
                node, gas_used, result, ..
            } => {
                let t = self.task_in(id)?;
                expect_status(t, "ASSIGNED", |s| matches!(s, TaskStatus::Assigned { node: n } if n == node))?;
                if *gas_used > t.gas_limit {
                    return Err(bad(format!("gas {gas_used} exceeds limit {}", t.gas_limit)));
                }
                if result_hash(&result.positions) != result.hash {
                    return Err(bad("result hash does not match result".into()));
                }
                let t = self.tasks.get_mut(&id).expect("checked");
                t.status = TaskStatus::Executed { node: *node };
                t.gas_used = *gas_used;
                t.result = Some(result.clone());
            }
            Record::Verified { validator, .. } => {
                let t = self.task_in(id)?;
                expect_status(t, "EXECUTED", |s| matches!(s, TaskStatus::Executed { .. }))?;
                if *validator != self.verifier_for(id) {
                    return Err(bad(format!("validator {validator} is not the task's verifier")));
                }
                let TaskStatus::Executed { node } = t.status else {
                    unreachable!()
                };
                self.tasks.get_mut(&id).expect("checked").status = TaskStatus::Verified { node };
            }
            Record::Settled {
                node,
                paid,
                gas_burned,
                returned,
                ..
            } => {
                let t = self.task_in(id)?;
                expect_status(t, "VERIFIED", |s| matches!(s, TaskStatus::Verified { node: n } if n == node))?;
                let burned = t.gas_used * self.genesis.params.gas_price;
                let escrow = &self.escrows[&id];
                if *paid != t.payment || *gas_burned != burned || escrow.locked != paid + burned + returned {
                    return Err(bad("settlement amounts do not match escrow".into()));
                }
                let requester = t.requester;
                let payee = self.nodes.get(node).ok_or(LedgerError::UnknownNode(*node))?.account;
                self.release_escrow(id, EscrowState::Released);
                self.credit(payee, *paid)?;
                self.credit(requester, *returned)?;
                self.burned_gas += burned;
                self.finish(id, *node, TaskStatus::Settled { node: *node }, None);
            }
            Record::Refunded {
                cause,
                gas_burned,
                returned,
                slashed,
                ..
            } => {
                let t = self.task_in(id)?;
                let (node, gas_units) = match (&t.status, cause) {
                    (TaskStatus::Assigned { node }, RefundCause::GasExhausted { required, limit }) => {
                        if *limit != t.gas_limit || required <= limit {
                            return Err(bad("gas exhaustion does not match the task's limit".into()));
                        }
                        if *gas_burned != limit * self.genesis.params.gas_price {
                            return Err(bad("gas burned must equal the gas limit".into()));
                        }
                        (*node, *limit)
                    }
                    (TaskStatus::Assigned { node }, RefundCause::ExecutionFailed { .. })
                    | (TaskStatus::Executed { node }, RefundCause::VerificationFailed { .. }) => {
                        if *gas_burned != 0 {
                            return Err(bad("no gas is charged for this refund".into()));
                        }
                        (*node, t.gas_used)
                    }
                    (s, _) if s.is_terminal() => return Err(LedgerError::AlreadyTerminal(id)),
                    (s, c) => return Err(bad(format!("{} cannot be refunded for {}", s.label(), c.describe()))),
                };
                let expected_slash = match cause {
                    RefundCause::VerificationFailed { .. } => {
                        slash_amount(self.nodes[&node].stake, self.genesis.params.slash_bps)
                    }
                    _ => 0,
                };
                if *slashed != expected_slash {
                    return Err(bad(format!("slash {slashed} != {expected_slash}")));
                }
                if self.escrows[&id].locked != gas_burned + returned {
                    return Err(bad("refund amounts do not match escrow".into()));
                }
                let requester = t.requester;
                self.release_escrow(id, EscrowState::Refunded);
                self.credit(requester, *returned)?;
                self.burned_gas += gas_burned;
                let n = self.nodes.get_mut(&node).expect("assigned node exists");
                n.stake -= slashed;
                self.burned_slash += slashed;
                self.tasks.get_mut(&id).expect("checked").gas_used = gas_units;
                self.finish(id, node, TaskStatus::Refunded, Some(cause.describe()));
            }
        }
        self.journal.push(record);
        Ok(())
    }

    fn credit(&mut self, account: AccountId, amount: Tokens) -> Result<(), LedgerError> {
        let a = self.accounts.get_mut(&account).ok_or(LedgerError::UnknownAccount(account))?;
        a.balance = a.balance.checked_add(amount).ok_or(LedgerError::Overflow)?;
        Ok(())
    }

    fn release_escrow(&mut self, task: TaskId, to: EscrowState) {
        let e = self.escrows.get_mut(&task).expect("validated tasks have an escrow");
        debug_assert_eq!(e.state, EscrowState::Locked);
        e.state = to;
    }

    fn finish(&mut self, task: TaskId, node: NodeId, status: TaskStatus, reason: Option<String>) {
        self.nodes.get_mut(&node).expect("node exists").active -= 1;
        let t = self.tasks.get_mut(&task).expect("task exists");
        t.status = status;
        t.refund_reason = reason;
    }

    /// One pass of the protocol: validate pending submissions, assign and
    /// execute everything possible in task-id order, verify, then seal.
    pub fn run_round(&mut self, executor: &dyn Executor) -> Result<(), LedgerError> {
        if !self.pending.is_empty() {
            self.validate_round()?;
        }
        let ids: Vec<TaskId> = self.tasks.keys().copied().collect();
        for &id in &ids {
            if self.tasks[&id].status == TaskStatus::Validated && self.select_node(id)?.is_none() {
                break;
            }
        }
        for &id in &ids {
            if matches!(self.tasks[&id].status, TaskStatus::Assigned { .. }) {
                self.execute_task(id, executor)?;
            }
        }
        for &id in &ids {
            if matches!(self.tasks[&id].status, TaskStatus::Executed { .. }) {
                self.verify_and_settle(id, executor)?;
            }
        }
        self.heartbeat();
        Ok(())
    }

    /// True when nothing is pending or in flight.
    pub fn is_quiescent(&self) -> bool {
        self.pending.is_empty() && self.journal.is_empty() && self.tasks.values().all(|t| t.status.is_terminal())
    }
}

fn slash_amount(stake: Tokens, bps: u32) -> Tokens {
    (stake as u128 * bps as u128 / 10_000) as Tokens
}

fn wrong(task: TaskId, found: &TaskStatus, expected: &'static str) -> LedgerError {
    LedgerError::WrongStatus {
        task,
        found: found.label(),
        expected,
    }
}

fn expect_status(t: &Task, expected: &'static str, ok: impl Fn(&TaskStatus) -> bool) -> Result<(), LedgerError> {
    if ok(&t.status) {
        Ok(())
    } else if t.status.is_terminal() {
        Err(LedgerError::AlreadyTerminal(t.id))
    } else {
        Err(wrong(t.id, &t.status, expected))
    }
}
