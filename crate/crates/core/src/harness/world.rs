//! The simulated world: one chain, the instances' operators and the
//! clients' wallets, advanced in fixed virtual-time steps.

use std::collections::{BTreeMap, BTreeSet};

use crate::chain::{Chain, ChainCall, ChainConfig, ChainStatus, ChainTx};
use crate::crypto::{hash_tagged, Digest, KeyPair, Platform, PublicKey, Scheme};
use crate::enclave::{Enclave, GenesisParams, InflationRate};
use crate::ids::{Address, ClientId, ContractId};
use crate::ledger::{Call, Receipt};
use crate::node::{AdversaryPolicy, ClientMessage, Connection, Node, NodeConfig, Response};
use crate::time::Timestamp;
use crate::wallet::{Faults, Network, Package, Wallet, WalletConfig};

use super::checks::Checker;
use super::report::RunReport;
use super::scenario::{Action, ImscMode, PolicySpec, ScenarioConfig};

/// Nonces for harness-submitted operator calls start here, clear of the
/// nodes' own counters.
const ADMIN_NONCE_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SetupError {
    #[error("{0}")]
    Chain(String),
    #[error("enclave: {0}")]
    Enclave(String),
    #[error("registration of {client}: {reason}")]
    Register { client: String, reason: String },
}

/// What the network offers wallets during one step.
pub(crate) struct Net<'a> {
    pub chain: &'a mut Chain,
    pub nodes: &'a mut BTreeMap<ContractId, Node>,
    pub imsc: ContractId,
    pub outbox: &'a mut Vec<Package>,
    pub dropped: &'a mut u64,
}

impl Network for Net<'_> {
    fn now(&self) -> Timestamp {
        self.chain.now()
    }

    fn chain(&self) -> &Chain {
        self.chain
    }

    fn imsc(&self) -> ContractId {
        self.imsc
    }

    fn request(&mut self, target: &ContractId, msg: &ClientMessage) -> Option<Response> {
        let node = self.nodes.get_mut(target)?;
        let r = Connection::new(node).request(msg);
        if r.is_none() {
            *self.dropped += 1;
        }
        r
    }

    fn submit_chain(&mut self, tx: ChainTx) -> Option<Digest> {
        self.chain.submit(tx).ok()
    }

    fn deliver(&mut self, _to: ClientId, pkg: Package) {
        self.outbox.push(pkg);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct InstanceMeta {
    pub name: String,
    pub id: ContractId,
    pub operator: PublicKey,
}

/// A scheduled transfer and the tag its sender wallet gave it.
#[derive(Debug, Clone)]
pub(crate) struct TransferRef {
    pub from: String,
    pub to: String,
    pub amount: u64,
    pub at: Timestamp,
    pub tag: Option<u64>,
    pub start_error: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct OperatorTx {
    pub instance: ContractId,
    pub tx_hash: Digest,
    pub what: String,
    /// Client credited and amount, if the call pays a client.
    pub credit: Option<(String, u64)>,
}

/// An intra-instance payment submitted by a client.
#[derive(Debug, Clone)]
pub(crate) struct ClientTx {
    pub from: String,
    pub to: String,
    pub amount: u64,
    pub instance: ContractId,
    pub tx_hash: Digest,
}

pub struct World {
    pub(crate) cfg: ScenarioConfig,
    pub(crate) chain: Chain,
    pub(crate) imsc: ContractId,
    pub(crate) nodes: BTreeMap<ContractId, Node>,
    pub(crate) instances: Vec<InstanceMeta>,
    pub(crate) operators: BTreeMap<ContractId, KeyPair>,
    pub(crate) wallets: BTreeMap<String, Wallet>,
    pub(crate) homes: BTreeMap<String, ContractId>,
    pub(crate) initial: BTreeMap<String, u64>,
    pub(crate) mail: Vec<Package>,
    pub(crate) dropped: u64,
    pub(crate) transfers: Vec<TransferRef>,
    pub(crate) operator_txs: Vec<OperatorTx>,
    pub(crate) registry_calls: Vec<(String, Digest)>,
    pub(crate) client_txs: Vec<ClientTx>,
    pub(crate) trace: Vec<String>,
    pub(crate) checker: Checker,
    next_action: usize,
    admin_nonce: u64,
    last_checked: u64,
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SetupError> {
        let seed = cfg.seed;
        let mut chain = Chain::new(ChainConfig {
            finality_depth: cfg.finality_depth,
            seed: derive_seed(seed, "chain"),
        });
        let mut admin_nonce = ADMIN_NONCE_BASE;
        let mut instances = Vec::new();
        let mut operators = BTreeMap::new();
        let mut enclaves = BTreeMap::new();
        for spec in &cfg.instances {
            let operator = KeyPair::derive(Scheme::Pb, seed, &format!("operator/{}", spec.name));
            let mut enclave = Enclave::new(
                Platform::simulated(),
                derive_seed(seed, &format!("enclave/{}", spec.name)),
            );
            let init = enclave
                .init()
                .map_err(|e| SetupError::Enclave(e.to_string()))?;
            let r = settle(
                &mut chain,
                &operator,
                &mut admin_nonce,
                ChainCall::DeployIpsc {
                    pk_pb: init.pk_pb,
                    pk_tee: init.pk_tee,
                    quote: init.quote,
                    t_i0: spec.t_i0,
                    i_r: InflationRate::percent(spec.i_r),
                    issue_authority: spec.issue_authority,
                },
            )?;
            let id = r.ok_or_else(|| {
                SetupError::Chain(format!("deploying {} did not create a contract", spec.name))
            })?;
            instances.push(InstanceMeta {
                name: spec.name.clone(),
                id,
                operator: operator.public(),
            });
            operators.insert(id, operator);
            enclaves.insert(id, enclave);
        }
        let members: Vec<&InstanceMeta> = cfg
            .instances
            .iter()
            .zip(&instances)
            .filter(|(s, _)| s.member)
            .map(|(_, m)| m)
            .collect();
        let first = members[0].id;
        let imsc = match cfg.imsc {
            ImscMode::Decentralized => settle(
                &mut chain,
                &operators[&first],
                &mut admin_nonce,
                ChainCall::DeployImscD {
                    members: members.iter().map(|m| (m.id, m.operator)).collect(),
                },
            )?,
            ImscMode::Centralized => {
                let imsc = settle(
                    &mut chain,
                    &operators[&first],
                    &mut admin_nonce,
                    ChainCall::DeployImscC { authority: first },
                )?
                .ok_or_else(|| SetupError::Chain("registry not created".into()))?;
                for m in &members {
                    settle(
                        &mut chain,
                        &operators[&first],
                        &mut admin_nonce,
                        ChainCall::AddInstance {
                            imsc,
                            ipsc: m.id,
                            operator: m.operator,
                        },
                    )?;
                }
                Some(imsc)
            }
        }
        .ok_or_else(|| SetupError::Chain("registry not created".into()))?;

        let view = chain.view(&imsc);
        let mut nodes = BTreeMap::new();
        for (spec, meta) in cfg.instances.iter().zip(&instances) {
            let mut enclave = enclaves.remove(&meta.id).expect("enclave per instance");
            let params = GenesisParams {
                ipsc: meta.id,
                imsc,
                operator: meta.operator,
                t_i0: spec.t_i0,
                i_r: InflationRate::percent(spec.i_r),
                issue_authority: spec.issue_authority,
                htlc_timeout: cfg.htlc_timeout,
                ticket_window: 2 * cfg.htlc_timeout + cfg.drain,
                allow_fund: false,
            };
            let g = enclave
                .genesis(params, &view)
                .map_err(|e| SetupError::Enclave(e.to_string()))?;
            let mut ncfg = NodeConfig::new(meta.id, imsc, cfg.batch_interval, cfg.sync_interval);
            ncfg.adversary = AdversaryPolicy::default();
            let op = operators[&meta.id].clone();
            nodes.insert(meta.id, Node::new(ncfg, op, enclave, g.allocation));
        }

        let mut world = World {
            chain,
            imsc,
            nodes,
            operators,
            wallets: BTreeMap::new(),
            homes: BTreeMap::new(),
            initial: BTreeMap::new(),
            mail: Vec::new(),
            dropped: 0,
            transfers: Vec::new(),
            operator_txs: Vec::new(),
            registry_calls: Vec::new(),
            client_txs: Vec::new(),
            trace: Vec::new(),
            checker: Checker::default(),
            next_action: 0,
            admin_nonce,
            last_checked: 0,
            instances,
            cfg,
        };
        world.setup_clients()?;
        Ok(world)
    }

    fn setup_clients(&mut self) -> Result<(), SetupError> {
        let deadline = self.cfg.deadline();
        for c in self.cfg.clients.clone() {
            let home = self.instance_id(&c.home);
            let mut w = Wallet::new(
                &c.name,
                self.cfg.seed,
                WalletConfig {
                    deadline,
                    dedicated_keys: c.dedicated_keys,
                    grace: self.cfg.grace,
                },
            );
            let id = {
                let mut net = self.net_parts();
                w.register(&mut net, home)
            }
            .map_err(|reason| SetupError::Register {
                client: c.name.clone(),
                reason,
            })?;
            if c.balance > 0 {
                let node = self.nodes.get_mut(&home).expect("home node");
                let h = node.submit_operator(
                    Call::Transfer {
                        to: id.address(),
                        amount: c.balance,
                    },
                    0,
                );
                self.operator_txs.push(OperatorTx {
                    instance: home,
                    tx_hash: h,
                    what: format!("fund {} {}", c.name, c.balance),
                    credit: Some((c.name.clone(), c.balance)),
                });
            }
            self.initial.insert(c.name.clone(), c.balance);
            self.homes.insert(c.name.clone(), home);
            self.wallets.insert(c.name.clone(), w);
        }
        Ok(())
    }

    fn net_parts(&mut self) -> Net<'_> {
        Net {
            chain: &mut self.chain,
            nodes: &mut self.nodes,
            imsc: self.imsc,
            outbox: &mut self.mail,
            dropped: &mut self.dropped,
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn imsc(&self) -> ContractId {
        self.imsc
    }

    pub fn now(&self) -> Timestamp {
        self.chain.now()
    }

    pub fn node(&self, instance: &str) -> &Node {
        &self.nodes[&self.instance_id(instance)]
    }

    pub fn node_mut(&mut self, instance: &str) -> &mut Node {
        let id = self.instance_id(instance);
        self.nodes.get_mut(&id).expect("known instance")
    }

    pub fn wallet(&self, client: &str) -> &Wallet {
        &self.wallets[client]
    }

    pub fn instance_id(&self, name: &str) -> ContractId {
        self.instances
            .iter()
            .find(|m| m.name == name)
            .map(|m| m.id)
            .unwrap_or_else(|| panic!("unknown instance {name}"))
    }

    pub(crate) fn instance_name(&self, id: &ContractId) -> String {
        self.instances
            .iter()
            .find(|m| m.id == *id)
            .map_or_else(|| id.to_string(), |m| m.name.clone())
    }

    pub fn client_id(&self, client: &str) -> ClientId {
        let home = self.homes[client];
        self.wallets[client]
            .client_id(&home)
            .expect("registered at home")
    }

    /// Owner of a key, by client name.
    pub(crate) fn client_by_pk(&self, pk: &PublicKey) -> Option<String> {
        self.wallets
            .iter()
            .find(|(_, w)| w.client_ids().iter().any(|c| c.pk == *pk))
            .map(|(n, _)| n.clone())
    }

    pub fn balance(&self, client: &str) -> u64 {
        let id = self.client_id(client);
        self.nodes[&id.ipsc].account(&Address::of(&id.pk)).balance
    }

    fn note(&mut self, line: String) {
        let t = self.chain.now();
        self.trace.push(format!("t={t} {line}"));
    }

    fn last_action_at(&self) -> Timestamp {
        self.cfg.schedule.last().map_or(0, |s| s.at)
    }

    /// Advances one step.
    pub fn step(&mut self) {
        let t = self.chain.now() + self.cfg.step;
        self.chain.advance_time(t);
        self.apply_due_actions();
        for pkg in std::mem::take(&mut self.mail) {
            if let Some(w) = self
                .wallets
                .values_mut()
                .find(|w| w.client_ids().contains(&pkg.to))
            {
                w.receive(pkg);
            }
        }
        {
            let mut net = Net {
                chain: &mut self.chain,
                nodes: &mut self.nodes,
                imsc: self.imsc,
                outbox: &mut self.mail,
                dropped: &mut self.dropped,
            };
            for w in self.wallets.values_mut() {
                w.advance(&mut net);
            }
        }
        for node in self.nodes.values_mut() {
            node.tick(&mut self.chain);
        }
        self.chain.produce_block();
        for node in self.nodes.values_mut() {
            node.poll(&mut self.chain);
        }
        let h = self.chain.finalized_height();
        if h > self.last_checked {
            self.last_checked = h;
            let mut checker = std::mem::take(&mut self.checker);
            checker.at_height(self);
            self.checker = checker;
        }
    }

    /// Nothing left to happen without a new action.
    pub fn is_quiescent(&self) -> bool {
        self.next_action >= self.cfg.schedule.len()
            && self.mail.is_empty()
            && !self.chain.has_pending()
            && self.chain.finalized_height() == self.chain.height()
            && self.nodes.values().all(Node::is_idle)
            && self.wallets.values().all(Wallet::is_settled)
    }

    /// Runs the schedule and drains; returns the report.
    pub fn run(mut self) -> RunReport {
        let stop = self.last_action_at() + self.cfg.drain;
        while !self.is_quiescent() && self.chain.now() < stop {
            self.step();
        }
        // One more round of checks once everything settled.
        let mut checker = std::mem::take(&mut self.checker);
        checker.at_height(&self);
        checker.finish(&self)
    }

    fn apply_due_actions(&mut self) {
        let now = self.chain.now();
        while let Some(s) = self.cfg.schedule.get(self.next_action) {
            if s.at > now {
                break;
            }
            let action = s.action.clone();
            self.next_action += 1;
            self.apply(action);
        }
    }

    fn apply(&mut self, action: Action) {
        let now = self.chain.now();
        match action {
            Action::Transfer {
                from,
                to,
                amount,
                sender_abort_before,
                receiver_abort_before,
                collude,
                reveal_after_recovery,
            } => {
                let home = self.homes[&from];
                let dest = self.client_id(&to);
                if let Some(p) = receiver_abort_before {
                    let w = self.wallets.get_mut(&to).expect("known client");
                    w.set_receiver_faults(Faults {
                        abort_before: Some(p),
                        ..Faults::default()
                    });
                }
                let faults = Faults {
                    abort_before: sender_abort_before,
                    collude,
                    reveal_after_recovery,
                };
                let w = self.wallets.get_mut(&from).expect("known client");
                let r = w.start_transfer(now, home, dest, amount, faults);
                self.note(format!("transfer {from} -> {to} {amount}: {r:?}"));
                let (tag, start_error) = match r {
                    Ok(t) => (Some(t), None),
                    Err(e) => (None, Some(e)),
                };
                self.transfers.push(TransferRef {
                    from,
                    to,
                    amount,
                    at: now,
                    tag,
                    start_error,
                });
            }
            Action::Pay { from, to, amount } => {
                let home = self.homes[&from];
                let dest = self.client_id(&to).address();
                let mut net = Net {
                    chain: &mut self.chain,
                    nodes: &mut self.nodes,
                    imsc: self.imsc,
                    outbox: &mut self.mail,
                    dropped: &mut self.dropped,
                };
                let w = self.wallets.get_mut(&from).expect("known client");
                let r = w.submit_direct(&mut net, home, Call::Transfer { to: dest, amount }, 0);
                if let Some(h) = r {
                    self.client_txs.push(ClientTx {
                        from: from.clone(),
                        to: to.clone(),
                        amount,
                        instance: home,
                        tx_hash: h,
                    });
                }
                self.note(format!("pay {from} -> {to} {amount}: {r:?}"));
            }
            Action::SetPolicy { instance, policy } => {
                let p = self.policy(&policy);
                self.note(format!("policy at {instance}: {policy:?}"));
                self.node_mut(&instance).set_adversary(p);
            }
            Action::Issue {
                instance,
                to,
                amount,
            } => {
                let id = self.instance_id(&instance);
                let beneficiary = self.client_id(&to).address();
                let h = self
                    .nodes
                    .get_mut(&id)
                    .expect("known instance")
                    .submit_operator(
                        Call::Issue {
                            beneficiary,
                            amount,
                        },
                        0,
                    );
                self.note(format!("issue {amount} to {to} at {instance}"));
                self.operator_txs.push(OperatorTx {
                    instance: id,
                    tx_hash: h,
                    what: format!("issue {amount} to {to}"),
                    credit: Some((to.clone(), amount)),
                });
            }
            Action::Join { instance } => {
                let ipsc = self.instance_id(&instance);
                let call = ChainCall::NewJoin {
                    imsc: self.imsc,
                    ipsc,
                };
                self.registry_call(&instance, &instance, call);
            }
            Action::ApproveJoin { voter, instance } => {
                let call = ChainCall::ApproveJoin {
                    imsc: self.imsc,
                    my_ipsc: self.instance_id(&voter),
                    new_ipsc: self.instance_id(&instance),
                };
                self.registry_call(&voter, &format!("approve join of {instance}"), call);
            }
            Action::ApproveDelete { voter, instance } => {
                let call = ChainCall::ApproveDelete {
                    imsc: self.imsc,
                    my_ipsc: self.instance_id(&voter),
                    del_ipsc: self.instance_id(&instance),
                };
                self.registry_call(&voter, &format!("approve delete of {instance}"), call);
            }
            Action::AuthorityAdd { sender, instance } => {
                let ipsc = self.instance_id(&instance);
                let operator = self.operators[&ipsc].public();
                let call = ChainCall::AddInstance {
                    imsc: self.imsc,
                    ipsc,
                    operator,
                };
                self.registry_call(&sender, &format!("add {instance}"), call);
            }
            Action::AuthorityDel { sender, instance } => {
                let call = ChainCall::DelInstance {
                    imsc: self.imsc,
                    ipsc: self.instance_id(&instance),
                };
                self.registry_call(&sender, &format!("delete {instance}"), call);
            }
        }
    }

    fn registry_call(&mut self, sender: &str, what: &str, call: ChainCall) {
        let key = &self.operators[&self.instance_id(sender)];
        self.admin_nonce += 1;
        match self
            .chain
            .submit(ChainTx::sign(key, self.admin_nonce, call))
        {
            Ok(h) => self.registry_calls.push((format!("{sender}: {what}"), h)),
            Err(e) => self
                .trace
                .push(format!("registry call by {sender} not submitted: {e}")),
        }
        self.note(format!("registry call by {sender}: {what}"));
    }

    fn policy(&self, spec: &PolicySpec) -> AdversaryPolicy {
        let pks = |names: &[String]| -> BTreeSet<PublicKey> {
            names
                .iter()
                .flat_map(|n| self.wallets[n].client_ids())
                .map(|c| c.pk)
                .collect()
        };
        AdversaryPolicy {
            censor_tx_from: pks(&spec.censor_tx_from),
            censor_queries_from: pks(&spec.censor_queries_from),
            drop_sync: spec.drop_sync,
            equivocate: spec.equivocate,
            stall_phase: spec.stall_phase,
            ignore_escalations: spec.ignore_escalations,
        }
    }

    /// Receipt of a ledger transaction at `instance`, if executed.
    pub(crate) fn receipt(&self, instance: &ContractId, tx_hash: &Digest) -> Option<&Receipt> {
        self.nodes[instance]
            .blocks()
            .iter()
            .flat_map(|b| b.receipts.iter())
            .find(|r| r.tx_hash == *tx_hash)
    }
}

/// Submits a setup call and produces blocks until it is final; returns the
/// created contract, if any.
fn settle(
    chain: &mut Chain,
    key: &KeyPair,
    nonce: &mut u64,
    call: ChainCall,
) -> Result<Option<ContractId>, SetupError> {
    *nonce += 1;
    let h = chain
        .submit(ChainTx::sign(key, *nonce, call))
        .map_err(|e| SetupError::Chain(e.to_string()))?;
    loop {
        if let Some(r) = chain.final_receipt(&h) {
            if r.status != ChainStatus::Applied {
                return Err(SetupError::Chain(r.reason.clone()));
            }
            return Ok(r.contract);
        }
        chain.produce_block();
    }
}

pub(crate) fn derive_seed(seed: u64, label: &str) -> u64 {
    let d = hash_tagged(b"harness/seed", &[&seed.to_be_bytes(), label.as_bytes()]);
    u64::from_be_bytes(d.0[..8].try_into().expect("eight bytes"))
}
