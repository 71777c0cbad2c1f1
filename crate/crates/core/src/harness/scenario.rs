//! Scenario files: instances, clients, a timed schedule and expectations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::time::{Timestamp, HOUR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImscMode {
    Decentralized,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub name: String,
    #[serde(default = "default_t_i0")]
    pub t_i0: u64,
    /// Yearly inflation bound in percent.
    #[serde(default)]
    pub i_r: u64,
    #[serde(default = "yes")]
    pub issue_authority: bool,
    /// Admitted when the registry is deployed.
    #[serde(default = "yes")]
    pub member: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub name: String,
    pub home: String,
    /// Paid from the home treasury before the schedule starts.
    #[serde(default)]
    pub balance: u64,
    #[serde(default = "yes")]
    pub dedicated_keys: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    #[serde(default)]
    pub censor_tx_from: Vec<String>,
    #[serde(default)]
    pub censor_queries_from: Vec<String>,
    #[serde(default)]
    pub drop_sync: bool,
    #[serde(default)]
    pub equivocate: bool,
    #[serde(default)]
    pub stall_phase: Option<u8>,
    #[serde(default)]
    pub ignore_escalations: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Transfer {
        from: String,
        to: String,
        amount: u64,
        #[serde(default)]
        sender_abort_before: Option<u8>,
        #[serde(default)]
        receiver_abort_before: Option<u8>,
        #[serde(default)]
        collude: bool,
        #[serde(default)]
        reveal_after_recovery: bool,
    },
    /// Intra-instance payment.
    Pay {
        from: String,
        to: String,
        amount: u64,
    },
    SetPolicy {
        instance: String,
        #[serde(flatten)]
        policy: PolicySpec,
    },
    /// Operator issuance to a client of its instance.
    Issue {
        instance: String,
        to: String,
        amount: u64,
    },
    Join {
        instance: String,
    },
    ApproveJoin {
        voter: String,
        instance: String,
    },
    ApproveDelete {
        voter: String,
        instance: String,
    },
    AuthorityAdd {
        sender: String,
        instance: String,
    },
    AuthorityDel {
        sender: String,
        instance: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheduled {
    pub at: Timestamp,
    #[serde(flatten)]
    pub action: Action,
}

/// Final outcome of a scheduled transfer, by schedule order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    /// Receiver credited, sender debited.
    Completed,
    /// Sender refunded, receiver uncredited.
    Refunded,
    /// Never left phase 1: nothing escrowed, or escrow refunded.
    Rejected,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    #[serde(default)]
    pub balances: BTreeMap<String, u64>,
    #[serde(default)]
    pub transfers: Vec<Expected>,
    /// Instances admitted at the end, by name.
    #[serde(default)]
    pub approved: Option<Vec<String>>,
    #[serde(default)]
    pub t_i: BTreeMap<String, u64>,
    /// Operator transactions (issuance, payments) whose receipts revert.
    #[serde(default)]
    pub reverted_operator_txs: Option<usize>,
    /// Registry calls the chain rejects.
    #[serde(default)]
    pub rejected_registry_calls: Option<usize>,
    #[serde(default)]
    pub min_escalations: usize,
    #[serde(default)]
    pub min_unresolved: usize,
    /// Snapshots ignored because they did not extend the current root.
    #[serde(default)]
    pub min_ignored_snapshots: u64,
    #[serde(default)]
    pub min_rejected_claims: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_imsc")]
    pub imsc: ImscMode,
    #[serde(default = "one")]
    pub finality_depth: u64,
    #[serde(default = "default_htlc")]
    pub htlc_timeout: u64,
    #[serde(default = "ten")]
    pub batch_interval: u64,
    #[serde(default = "ten")]
    pub sync_interval: u64,
    /// Simulation step.
    #[serde(default = "ten")]
    pub step: u64,
    /// Escalation deadline; four batch intervals when absent.
    #[serde(default)]
    pub deadline: Option<u64>,
    /// Receiver patience past the timelock.
    #[serde(default = "default_grace")]
    pub grace: u64,
    /// Hard stop, relative to the last scheduled action.
    #[serde(default = "default_drain")]
    pub drain: u64,
    pub instances: Vec<InstanceSpec>,
    #[serde(default)]
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub schedule: Vec<Scheduled>,
    #[serde(default)]
    pub expect: Expectations,
}

fn default_t_i0() -> u64 {
    1000
}
fn yes() -> bool {
    true
}
fn one() -> u64 {
    1
}
fn ten() -> u64 {
    10
}
fn default_imsc() -> ImscMode {
    ImscMode::Decentralized
}
fn default_htlc() -> u64 {
    24 * HOUR
}
fn default_grace() -> u64 {
    60
}
fn default_drain() -> u64 {
    2 * 24 * HOUR
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("scenario {0}: {1}")]
    Parse(String, #[source] toml::de::Error),
    #[error("scenario {name}: {what}")]
    Invalid { name: String, what: String },
    #[error("no bundled scenario named {0}")]
    Unknown(String),
}

impl ScenarioConfig {
    pub fn parse(origin: &str, text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(origin.to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bundled(name: &str) -> Result<Self, ConfigError> {
        let text = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| ConfigError::Unknown(name.to_string()))?;
        Self::parse(name, text)
    }

    pub fn deadline(&self) -> u64 {
        self.deadline.unwrap_or(4 * self.batch_interval)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |what: String| {
            Err(ConfigError::Invalid {
                name: self.name.clone(),
                what,
            })
        };
        if self.instances.is_empty() {
            return bad("at least one instance is required".into());
        }
        if self.finality_depth == 0
            || self.batch_interval == 0
            || self.sync_interval == 0
            || self.step == 0
        {
            return bad("finality depth, intervals and step must be positive".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for i in &self.instances {
            if !names.insert(i.name.as_str()) {
                return bad(format!("duplicate instance {}", i.name));
            }
        }
        if !self.instances.iter().any(|i| i.member) {
            return bad("no instance is a registry member".into());
        }
        let mut clients = std::collections::BTreeSet::new();
        for c in &self.clients {
            if !names.contains(c.home.as_str()) {
                return bad(format!("client {} has unknown home {}", c.name, c.home));
            }
            if !clients.insert(c.name.as_str()) {
                return bad(format!("duplicate client {}", c.name));
            }
        }
        let mut last = 0;
        for (n, s) in self.schedule.iter().enumerate() {
            if s.at < last {
                return bad(format!("schedule entry {} goes back in time", n + 1));
            }
            last = s.at;
            let inst = |i: &str| names.contains(i);
            let client = |c: &str| clients.contains(c);
            let ok = match &s.action {
                Action::Transfer { from, to, .. } | Action::Pay { from, to, .. } => {
                    client(from) && client(to)
                }
                Action::SetPolicy { instance, policy } => {
                    inst(instance)
                        && policy
                            .censor_tx_from
                            .iter()
                            .chain(&policy.censor_queries_from)
                            .all(|c| client(c))
                }
                Action::Issue { instance, to, .. } => inst(instance) && client(to),
                Action::Join { instance } => inst(instance),
                Action::ApproveJoin { voter, instance }
                | Action::ApproveDelete { voter, instance } => inst(voter) && inst(instance),
                Action::AuthorityAdd { sender, instance }
                | Action::AuthorityDel { sender, instance } => inst(sender) && inst(instance),
            };
            if !ok {
                return bad(format!(
                    "schedule entry {} names an unknown instance or client",
                    n + 1
                ));
            }
        }
        for c in self.expect.balances.keys() {
            if !clients.contains(c.as_str()) {
                return bad(format!("expected balance for unknown client {c}"));
            }
        }
        Ok(())
    }
}

/// The scenario corpus shipped with the crate.
pub const BUNDLED: &[(&str, &str)] = &[
    (
        "happy_path",
        include_str!("../../scenarios/happy_path.toml"),
    ),
    ("censor_p2", include_str!("../../scenarios/censor_p2.toml")),
    ("censor_p3", include_str!("../../scenarios/censor_p3.toml")),
    ("censor_p4", include_str!("../../scenarios/censor_p4.toml")),
    (
        "revert_timeout",
        include_str!("../../scenarios/revert_timeout.toml"),
    ),
    ("collusion", include_str!("../../scenarios/collusion.toml")),
    (
        "equivocation",
        include_str!("../../scenarios/equivocation.toml"),
    ),
    ("overissue", include_str!("../../scenarios/overissue.toml")),
    ("fake_join", include_str!("../../scenarios/fake_join.toml")),
    (
        "central_authority_add_del",
        include_str!("../../scenarios/central_authority_add_del.toml"),
    ),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}
