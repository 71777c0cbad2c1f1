//! Run reports. Every collection is ordered so a report is a pure function
//! of seed and configuration.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::enclave::CensStatus;
use crate::time::Timestamp;
use crate::wallet::Phase;

/// Witness lines kept per failing check.
pub const MAX_WITNESSES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Items examined.
    pub examined: u64,
    pub witnesses: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferOutcome {
    Completed,
    Refunded,
    Rejected,
    Pending,
    /// Burned at the sender, never minted at the receiver.
    Unclaimed,
    /// Records on the two instances contradict each other.
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferRow {
    pub index: usize,
    pub from: String,
    pub to: String,
    pub amount: u64,
    pub outcome: TransferOutcome,
    pub sender_phase: Option<Phase>,
    pub receiver_phase: Option<Phase>,
    pub send_id: Option<u64>,
    pub recv_id: Option<u64>,
    pub started_at: Timestamp,
    pub finished_at: Option<Timestamp>,
    pub claim_rejections: Vec<String>,
    /// Why the sender wallet refused to start.
    pub start_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SupplyRow {
    pub instance: String,
    pub t_i: u64,
    pub t_s: u64,
    /// Ledger total: balances plus escrow.
    pub ledger_total: u64,
    pub snapshots: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CensorshipRow {
    pub instance: String,
    pub idx: u64,
    pub requester: String,
    pub query: bool,
    pub status: Option<CensStatus>,
    pub submitted_at: Timestamp,
    pub resolved_at: Option<Timestamp>,
    /// Unresolved for at least one deadline.
    pub proof_of_censorship: bool,
}

/// Supplies at one finalized height.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HeightRow {
    pub height: u64,
    pub time: Timestamp,
    pub sum_t_i: u64,
    pub sum_t_s: u64,
    /// Burned and snapshotted but not yet minted and snapshotted.
    pub in_flight: u64,
    pub t_s: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub end_time: Timestamp,
    pub final_height: u64,
    pub checks: Vec<CheckResult>,
    /// Facts worth reporting that do not gate the run.
    pub observations: Vec<String>,
    pub transfers: Vec<TransferRow>,
    pub supplies: Vec<SupplyRow>,
    pub balances: BTreeMap<String, u64>,
    pub censorship: Vec<CensorshipRow>,
    pub heights: Vec<HeightRow>,
    pub trace: Vec<String>,
}

impl RunReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "scenario {} seed {}: {}\n",
            self.scenario,
            self.seed,
            if self.passed { "PASS" } else { "FAIL" }
        );
        for c in &self.checks {
            out.push_str(&format!(
                "  [{}] {} ({} examined)\n",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.examined
            ));
            for w in &c.witnesses {
                out.push_str(&format!("        {w}\n"));
            }
        }
        for t in &self.transfers {
            out.push_str(&format!(
                "  transfer {} {} -> {} amount {}: {:?}\n",
                t.index, t.from, t.to, t.amount, t.outcome
            ));
        }
        for o in &self.observations {
            out.push_str(&format!("  note: {o}\n"));
        }
        out
    }
}

/// Accumulates one check's verdict.
#[derive(Debug, Clone)]
pub(crate) struct Verdict {
    name: &'static str,
    examined: u64,
    failures: u64,
    witnesses: Vec<String>,
}

impl Verdict {
    pub fn new(name: &'static str) -> Self {
        Verdict {
            name,
            examined: 0,
            failures: 0,
            witnesses: Vec::new(),
        }
    }

    pub fn expect(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        self.examined += 1;
        if !ok {
            self.fail(witness());
        }
    }

    pub fn fail(&mut self, witness: String) {
        self.failures += 1;
        if self.witnesses.len() < MAX_WITNESSES {
            self.witnesses.push(witness);
        }
    }

    pub fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            passed: self.failures == 0,
            examined: self.examined,
            witnesses: self.witnesses,
        }
    }
}
