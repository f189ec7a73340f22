//! Log audits that recompute token flows from records alone, without the
//! state machine in `mod.rs`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{AccountId, Block, Genesis, Ledger, NodeId, Record, TaskId, Tokens};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Zero-based index of the offending record across the whole log.
    pub event: usize,
    pub height: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub events: usize,
    pub blocks: usize,
    pub tasks: usize,
    pub settled: usize,
    pub refunded: usize,
    pub rejected: usize,
    pub in_flight: usize,
    pub genesis_mint: Tokens,
    pub final_supply: Tokens,
    pub burned_gas: Tokens,
    pub burned_slash: Tokens,
    /// Balances and stakes recomputed from records equal the ledger's;
    /// `None` when auditing a bare log.
    pub state_matches: Option<bool>,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.state_matches != Some(false)
    }

    pub fn first_violation(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

#[derive(Default)]
struct Books {
    balances: BTreeMap<AccountId, i128>,
    stakes: BTreeMap<NodeId, i128>,
    node_account: BTreeMap<NodeId, AccountId>,
    locked: BTreeMap<TaskId, i128>,
    requester: BTreeMap<TaskId, AccountId>,
    assigned: BTreeMap<TaskId, NodeId>,
    executed: BTreeSet<TaskId>,
    verified: BTreeSet<TaskId>,
    terminal: BTreeMap<TaskId, &'static str>,
    burned_gas: i128,
    burned_slash: i128,
}

impl Books {
    fn supply(&self) -> i128 {
        self.balances.values().sum::<i128>()
            + self.stakes.values().sum::<i128>()
            + self.locked.values().sum::<i128>()
            + self.burned_gas
            + self.burned_slash
    }

    fn post(&mut self, r: &Record) -> Result<(), String> {
        let task = r.task();
        if let Some(kind) = self.terminal.get(&task) {
            return Err(format!("task {task} has a `{}` record after terminal `{kind}`", r.kind()));
        }
        match r {
            Record::Validated {
                requester, escrowed, ..
            } => {
                if self.requester.contains_key(&task) {
                    return Err(format!("task {task} validated twice"));
                }
                let b = self.balances.entry(*requester).or_default();
                *b -= *escrowed as i128;
                if *b < 0 {
                    return Err(format!("account {requester} overdrawn by escrow for task {task}"));
                }
                self.locked.insert(task, *escrowed as i128);
                self.requester.insert(task, *requester);
            }
            Record::Rejected { .. } => {
                if self.requester.contains_key(&task) {
                    return Err(format!("task {task} rejected after validation"));
                }
                self.terminal.insert(task, "rejected");
            }
            Record::Assigned { node, .. } => {
                if !self.locked.contains_key(&task) {
                    return Err(format!("task {task} assigned without escrow"));
                }
                self.assigned.insert(task, *node);
            }
            Record::Executed { node, .. } => {
                if self.assigned.get(&task) != Some(node) {
                    return Err(format!("task {task} executed by unassigned node {node}"));
                }
                self.executed.insert(task);
            }
            Record::Verified { .. } => {
                if !self.executed.contains(&task) {
                    return Err(format!("task {task} verified before execution"));
                }
                self.verified.insert(task);
            }
            Record::Settled {
                node,
                paid,
                gas_burned,
                returned,
                ..
            } => {
                if !self.verified.contains(&task) {
                    return Err(format!("node {node} paid for unverified task {task}"));
                }
                if self.assigned.get(&task) != Some(node) {
                    return Err(format!("task {task} paid to node {node}, which did not execute it"));
                }
                let locked = self
                    .locked
                    .remove(&task)
                    .ok_or_else(|| format!("task {task} settled without escrow"))?;
                if locked != (*paid + *gas_burned + *returned) as i128 {
                    return Err(format!("task {task} settlement does not add up to its escrow"));
                }
                let payee = self.node_account[node];
                *self.balances.entry(payee).or_default() += *paid as i128;
                *self.balances.entry(self.requester[&task]).or_default() += *returned as i128;
                self.burned_gas += *gas_burned as i128;
                self.terminal.insert(task, "settled");
            }
            Record::Refunded {
                gas_burned,
                returned,
                slashed,
                ..
            } => {
                let locked = self
                    .locked
                    .remove(&task)
                    .ok_or_else(|| format!("task {task} refunded without escrow"))?;
                if locked != (*gas_burned + *returned) as i128 {
                    return Err(format!("task {task} refund does not add up to its escrow"));
                }
                *self.balances.entry(self.requester[&task]).or_default() += *returned as i128;
                self.burned_gas += *gas_burned as i128;
                if *slashed > 0 {
                    let node = self
                        .assigned
                        .get(&task)
                        .ok_or_else(|| format!("task {task} slashes without an assigned node"))?;
                    let stake = self.stakes.entry(*node).or_default();
                    *stake -= *slashed as i128;
                    if *stake < 0 {
                        return Err(format!("node {node} slashed below zero"));
                    }
                    self.burned_slash += *slashed as i128;
                }
                self.terminal.insert(task, "refunded");
            }
        }
        Ok(())
    }
}

/// Audits every sealed and unsealed record of `ledger` and compares the
/// recomputed books with its state.
pub fn audit(ledger: &Ledger) -> AuditReport {
    let mut report = audit_records(ledger.genesis(), ledger.blocks(), ledger.journal());
    let books = &report.books;
    let matches = ledger
        .accounts()
        .values()
        .all(|a| books.balances.get(&a.id) == Some(&(a.balance as i128)))
        && ledger
            .nodes()
            .values()
            .all(|n| books.stakes.get(&n.id) == Some(&(n.stake as i128)))
        && books.burned_gas == ledger.burned_gas() as i128
        && books.burned_slash == ledger.burned_slash() as i128;
    report.report.state_matches = Some(matches);
    report.report
}

struct Audited {
    report: AuditReport,
    books: Books,
}

/// Audits a log given as genesis plus blocks, without a live ledger.
pub fn audit_log(genesis: &Genesis, blocks: &[Block]) -> AuditReport {
    audit_records(genesis, blocks, &[]).report
}

fn audit_records(genesis: &Genesis, blocks: &[Block], journal: &[Record]) -> Audited {
    let mint = genesis.mint() as i128;
    let mut books = Books::default();
    for a in &genesis.accounts {
        books.balances.insert(a.id, a.balance as i128);
    }
    for n in &genesis.nodes {
        books.stakes.insert(n.id, n.stake as i128);
        books.node_account.insert(n.id, n.account);
    }

    let sealed = blocks
        .iter()
        .flat_map(|b| b.records.iter().map(move |r| (Some(b.height), r)));
    let unsealed = journal.iter().map(|r| (None, r));
    let mut violations = Vec::new();
    let mut events = 0;
    for (event, (height, record)) in sealed.chain(unsealed).enumerate() {
        events += 1;
        if let Err(message) = books.post(record) {
            violations.push(Violation { event, height, message });
        }
        let supply = books.supply();
        if supply != mint {
            violations.push(Violation {
                event,
                height,
                message: format!("supply {supply} differs from genesis mint {mint}"),
            });
        }
    }

    let tasks: BTreeSet<TaskId> = books.requester.keys().chain(books.terminal.keys()).copied().collect();
    let count = |kind| books.terminal.values().filter(|k| **k == kind).count();
    let report = AuditReport {
        events,
        blocks: blocks.len(),
        tasks: tasks.len(),
        settled: count("settled"),
        refunded: count("refunded"),
        rejected: count("rejected"),
        in_flight: tasks.len() - books.terminal.len(),
        genesis_mint: genesis.mint(),
        final_supply: books.supply().max(0) as Tokens,
        burned_gas: books.burned_gas.max(0) as Tokens,
        burned_slash: books.burned_slash.max(0) as Tokens,
        state_matches: None,
        violations,
    };
    Audited { report, books }
}

/// Block heights at which each task passed through each stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TaskTimeline {
    pub task: TaskId,
    pub validated: Option<u64>,
    pub assigned: Option<u64>,
    pub executed: Option<u64>,
    pub verified: Option<u64>,
    pub terminal: Option<u64>,
    pub outcome: String,
    pub node: Option<NodeId>,
    pub gas_used: u64,
    pub payment: Tokens,
    pub reason: String,
}

pub fn timeline(ledger: &Ledger) -> Vec<TaskTimeline> {
    let mut rows: BTreeMap<TaskId, TaskTimeline> = BTreeMap::new();
    for b in ledger.blocks() {
        for r in &b.records {
            let row = rows.entry(r.task()).or_insert_with(|| TaskTimeline {
                task: r.task(),
                ..Default::default()
            });
            let h = Some(b.height);
            match r {
                Record::Validated { .. } => row.validated = h,
                Record::Assigned { node, .. } => {
                    row.assigned = h;
                    row.node = Some(*node);
                }
                Record::Executed { .. } => row.executed = h,
                Record::Verified { .. } => row.verified = h,
                Record::Rejected { .. } | Record::Settled { .. } | Record::Refunded { .. } => row.terminal = h,
            }
        }
    }
    for row in rows.values_mut() {
        if let Some(t) = ledger.task(row.task) {
            row.outcome = t.status.label().to_string();
            row.gas_used = t.gas_used;
            row.payment = t.payment;
            row.reason = t.refund_reason.clone().unwrap_or_default();
        }
    }
    rows.into_values().collect()
}
