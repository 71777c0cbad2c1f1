//! Client wallets and the four-phase cross-instance transfer they drive.
//!
//! A wallet holds one account per instance it joined. Every request that
//! stalls past the deadline is escalated to the target instance's contract;
//! every package received from a counterparty is verified before acting.

mod job;
mod verify;

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::chain::{Chain, ChainCall, ChainTx};
use crate::crypto::{hash_tagged, Digest, KeyPair, Scheme};
use crate::ids::{ClientId, ContractId};
use crate::ledger::{
    hashlock_of, AccessTicket, Call, Event, ForeignEvidence, IomcCall, TxEvidence,
};
use crate::node::{ClientMessage, Request, Response};
use crate::time::Timestamp;

pub use job::{EscalationRecord, Outcome};
pub use verify::{check_phase1, check_phase2, check_phase3, SendInfo};

use job::Job;

/// What a wallet needs from the world around it.
pub trait Network {
    fn now(&self) -> Timestamp;
    fn chain(&self) -> &Chain;
    fn imsc(&self) -> ContractId;
    /// `None` when the operator dropped the message.
    fn request(&mut self, target: &ContractId, msg: &ClientMessage) -> Option<Response>;
    fn submit_chain(&mut self, tx: ChainTx) -> Option<Digest>;
    fn deliver(&mut self, to: ClientId, pkg: Package);
}

/// Off-ledger message between the two parties of a transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Package {
    pub from: ClientId,
    pub to: ClientId,
    /// Sender-chosen transfer tag.
    pub tag: u64,
    pub body: PackageBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PackageBody {
    Phase1 {
        evidence: Box<TxEvidence>,
    },
    Phase2 {
        evidence: Box<TxEvidence>,
    },
    Phase3 {
        evidence: Box<TxEvidence>,
    },
    /// The hashlock preimage, handed over outside the protocol.
    Secret {
        secret: Vec<u8>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalletConfig {
    /// How long a direct request may stall before it is escalated.
    pub deadline: u64,
    /// One key per instance rather than one key for all.
    pub dedicated_keys: bool,
    /// Receiver patience past the timelock.
    pub grace: u64,
}

impl Default for WalletConfig {
    fn default() -> Self {
        WalletConfig {
            deadline: 40,
            dedicated_keys: true,
            grace: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Sender,
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    One,
    Two,
    Three,
    Four,
    Done,
    Reverted,
    Aborted,
    Expired,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            Phase::Done | Phase::Reverted | Phase::Aborted | Phase::Expired
        )
    }
}

/// Scripted misbehaviour of one party.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Faults {
    /// Stop before acting in this phase (2 to 4).
    pub abort_before: Option<u8>,
    /// Hand the secret to the receiver after aborting.
    pub collude: bool,
    /// Publish the secret to the receiver after recovering the escrow.
    pub reveal_after_recovery: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Step {
    // sender
    Init,
    AwaitPhase2,
    IncAtReceiver,
    Commit,
    /// Waiting out the timelock.
    Idle,
    Revert,
    // receiver
    IncAtSender1,
    ReceiveInit,
    AwaitPhase3,
    IncAtSender2,
    Claim,
    /// Trying a claim with a secret that did not come with a burn.
    SecretClaim {
        with_evidence: bool,
    },
    End(Phase),
}

#[derive(Debug, Clone)]
pub struct Session {
    pub tag: u64,
    pub role: Role,
    pub me: ClientId,
    pub peer: ClientId,
    pub amount: u64,
    pub faults: Faults,
    pub hashlock: Option<Digest>,
    pub timelock: Option<Timestamp>,
    /// Send-side record id at the sending instance.
    pub send_id: Option<u64>,
    /// Receive-side record id at the receiving instance.
    pub recv_id: Option<u64>,
    pub started_at: Timestamp,
    pub finished_at: Option<Timestamp>,
    pub secret_revealed: bool,
    /// Contract or enclave rejections of claims made without a burn.
    pub claim_rejections: Vec<String>,
    pub log: Vec<String>,
    step: Step,
    secret: Option<Vec<u8>>,
    info: Option<SendInfo>,
    peer_ticket: Option<AccessTicket>,
    evidence: [Option<TxEvidence>; 3],
    /// When the current claim without a burn started.
    claim_since: Option<Timestamp>,
    job: Option<Job>,
    inbox: Vec<PackageBody>,
}

impl Session {
    fn new(
        tag: u64,
        role: Role,
        me: ClientId,
        peer: ClientId,
        amount: u64,
        now: Timestamp,
    ) -> Self {
        Session {
            tag,
            role,
            me,
            peer,
            amount,
            faults: Faults::default(),
            hashlock: None,
            timelock: None,
            send_id: None,
            recv_id: None,
            started_at: now,
            finished_at: None,
            secret_revealed: false,
            claim_rejections: Vec::new(),
            log: Vec::new(),
            step: Step::Init,
            secret: None,
            info: None,
            peer_ticket: None,
            evidence: [None, None, None],
            claim_since: None,
            job: None,
            inbox: Vec::new(),
        }
    }

    /// The hashlock preimage, once known to this party.
    pub fn secret(&self) -> Option<&[u8]> {
        self.secret.as_deref()
    }

    pub fn phase(&self) -> Phase {
        match &self.step {
            Step::Init => Phase::One,
            Step::AwaitPhase2 | Step::IncAtSender1 | Step::ReceiveInit => Phase::Two,
            Step::IncAtReceiver | Step::Commit | Step::AwaitPhase3 => Phase::Three,
            Step::IncAtSender2 | Step::Claim => Phase::Four,
            Step::Idle | Step::Revert => Phase::Three,
            Step::SecretClaim { .. } => Phase::Aborted,
            Step::End(p) => *p,
        }
    }

    /// Nothing left to do, now or later.
    pub fn is_settled(&self) -> bool {
        matches!(self.step, Step::End(_)) && self.job.is_none()
    }

    /// Evidence for the phase-`n` transaction, once verified.
    pub fn evidence(&self, n: usize) -> Option<&TxEvidence> {
        self.evidence.get(n.checked_sub(1)?)?.as_ref()
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            tag: self.tag,
            role: self.role,
            me: self.me,
            peer: self.peer,
            amount: self.amount,
            phase: self.phase(),
            send_id: self.send_id,
            recv_id: self.recv_id,
            timelock: self.timelock,
            started_at: self.started_at,
            finished_at: self.finished_at,
            secret_revealed: self.secret_revealed,
            claim_rejections: self.claim_rejections.clone(),
        }
    }

    fn end(&mut self, phase: Phase, now: Timestamp, why: &str) {
        self.log.push(format!("t={now} {phase:?}: {why}"));
        self.step = Step::End(phase);
        self.finished_at = Some(now);
        self.job = None;
    }

    fn note(&mut self, now: Timestamp, line: String) {
        self.log.push(format!("t={now} {line}"));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionSummary {
    pub tag: u64,
    pub role: Role,
    pub me: ClientId,
    pub peer: ClientId,
    pub amount: u64,
    pub phase: Phase,
    pub send_id: Option<u64>,
    pub recv_id: Option<u64>,
    pub timelock: Option<Timestamp>,
    pub started_at: Timestamp,
    pub finished_at: Option<Timestamp>,
    pub secret_revealed: bool,
    pub claim_rejections: Vec<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct Slot {
    pub key: KeyPair,
    pub ticket: AccessTicket,
    pub nonce: u64,
}

pub struct Wallet {
    name: String,
    seed: u64,
    cfg: WalletConfig,
    accounts: BTreeMap<ContractId, Slot>,
    chain_nonce: u64,
    rng: ChaCha20Rng,
    inbox: Vec<Package>,
    sessions: Vec<Session>,
    escalations: Vec<EscalationRecord>,
    next_tag: u64,
    receiver_faults: Option<Faults>,
    pending_mail: Vec<Package>,
}

impl Wallet {
    pub fn new(name: &str, seed: u64, cfg: WalletConfig) -> Self {
        let d = hash_tagged(b"wallet/rng", &[&seed.to_be_bytes(), name.as_bytes()]);
        Wallet {
            name: name.to_string(),
            seed,
            cfg,
            accounts: BTreeMap::new(),
            chain_nonce: 0,
            rng: ChaCha20Rng::from_seed(d.0),
            inbox: Vec::new(),
            sessions: Vec::new(),
            escalations: Vec::new(),
            next_tag: 0,
            receiver_faults: None,
            pending_mail: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &WalletConfig {
        &self.cfg
    }

    pub fn key_for(&self, ipsc: &ContractId) -> KeyPair {
        let label = if self.cfg.dedicated_keys {
            format!("client/{}/{}", self.name, hex::encode(ipsc.0 .0))
        } else {
            format!("client/{}", self.name)
        };
        KeyPair::derive(Scheme::Pb, self.seed, &label)
    }

    pub fn client_id(&self, ipsc: &ContractId) -> Option<ClientId> {
        self.accounts.get(ipsc).map(|s| ClientId {
            pk: s.key.public(),
            ipsc: *ipsc,
        })
    }

    pub fn client_ids(&self) -> Vec<ClientId> {
        self.accounts
            .keys()
            .filter_map(|i| self.client_id(i))
            .collect()
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn session(&self, tag: u64, role: Role) -> Option<&Session> {
        self.sessions
            .iter()
            .find(|s| s.tag == tag && s.role == role)
    }

    pub fn escalations(&self) -> &[EscalationRecord] {
        &self.escalations
    }

    /// No session can make further progress.
    pub fn is_settled(&self) -> bool {
        self.inbox.is_empty() && self.sessions.iter().all(Session::is_settled)
    }

    /// Opens an account at `ipsc`.
    pub fn register(
        &mut self,
        net: &mut dyn Network,
        ipsc: ContractId,
    ) -> Result<ClientId, String> {
        let key = self.key_for(&ipsc);
        let msg = ClientMessage::sign(&key, 0, None, Request::RegisterClient {});
        match net.request(&ipsc, &msg) {
            Some(Response::Registered { ticket, .. }) => {
                let id = ClientId {
                    pk: key.public(),
                    ipsc,
                };
                self.accounts.insert(
                    ipsc,
                    Slot {
                        key,
                        ticket,
                        nonce: 0,
                    },
                );
                Ok(id)
            }
            Some(Response::Error { reason }) => Err(reason),
            Some(other) => Err(format!("unexpected response {other:?}")),
            None => Err("registration dropped".into()),
        }
    }

    /// Balance and nonce as the operator reports them.
    pub fn balance(&mut self, net: &mut dyn Network, ipsc: &ContractId) -> Option<u64> {
        let key = &self.accounts.get(ipsc)?.key;
        let msg = ClientMessage::sign(key, 0, None, Request::QueryAccount {});
        match net.request(ipsc, &msg)? {
            Response::Account { account } => Some(account.balance),
            _ => None,
        }
    }

    /// Submits one transaction directly, without follow-up; returns its hash
    /// if the operator accepted it.
    pub fn submit_direct(
        &mut self,
        net: &mut dyn Network,
        ipsc: ContractId,
        call: Call,
        value: u64,
    ) -> Option<Digest> {
        let slot = self.accounts.get_mut(&ipsc)?;
        let tx = crate::ledger::MicroTx::sign(&slot.key, slot.nonce, call, value);
        slot.nonce += 1;
        let msg = ClientMessage::sign(&slot.key, 0, None, Request::SubmitTx { tx });
        match net.request(&ipsc, &msg)? {
            Response::Accepted { tx_hash } => Some(tx_hash),
            _ => None,
        }
    }

    /// Starts sending `amount` from the account at `from` to `to`; returns
    /// the transfer tag.
    pub fn start_transfer(
        &mut self,
        now: Timestamp,
        from: ContractId,
        to: ClientId,
        amount: u64,
        faults: Faults,
    ) -> Result<u64, String> {
        let me = self
            .client_id(&from)
            .ok_or("no account at the sending instance")?;
        let tag = self.next_tag;
        self.next_tag += 1;
        let mut secret = vec![0u8; 32];
        self.rng.fill_bytes(&mut secret);
        let hashlock = hashlock_of(&secret);
        let mut s = Session::new(tag, Role::Sender, me, to, amount, now);
        s.faults = faults;
        s.hashlock = Some(hashlock);
        s.secret = Some(secret);
        s.job = Some(Job::tx(
            tag,
            from,
            1,
            Call::Iomc {
                call: IomcCall::SendInit {
                    receiver: to,
                    hashlock,
                },
            },
            amount,
        ));
        self.sessions.push(s);
        Ok(tag)
    }

    /// Makes the session with `tag` stop before `phase`.
    pub fn inject_abort(&mut self, tag: u64, role: Role, phase: u8) {
        if let Some(s) = self
            .sessions
            .iter_mut()
            .find(|s| s.tag == tag && s.role == role)
        {
            s.faults.abort_before = Some(phase);
        }
    }

    /// Applies faults to receiver sessions not yet created.
    pub fn set_receiver_faults(&mut self, faults: Faults) {
        self.receiver_faults = Some(faults);
    }

    pub fn receive(&mut self, pkg: Package) {
        self.inbox.push(pkg);
    }

    /// Handles mail, then advances every session and its pending request.
    pub fn advance(&mut self, net: &mut dyn Network) {
        let now = net.now();
        for pkg in std::mem::take(&mut self.inbox) {
            self.route(pkg, now);
        }
        let mut sessions = std::mem::take(&mut self.sessions);
        let mut busy: BTreeSet<ContractId> = sessions
            .iter()
            .filter_map(|s| s.job.as_ref())
            .filter(|j| j.is_tx() && j.started() && j.outcome.is_none())
            .map(|j| j.account)
            .collect();
        for s in &mut sessions {
            self.step_session(s, net, &mut busy);
        }
        self.sessions = sessions;
    }

    fn route(&mut self, pkg: Package, now: Timestamp) {
        if self.client_id(&pkg.to.ipsc) != Some(pkg.to) {
            return;
        }
        let role = match pkg.body {
            PackageBody::Phase2 { .. } => Role::Sender,
            _ => Role::Receiver,
        };
        let pos = self.sessions.iter().position(|s| {
            s.tag == pkg.tag && s.role == role && s.peer == pkg.from && s.me == pkg.to
        });
        match (pos, &pkg.body) {
            (Some(i), _) => self.sessions[i].inbox.push(pkg.body),
            (None, PackageBody::Phase1 { .. }) => {
                let mut s = Session::new(pkg.tag, Role::Receiver, pkg.to, pkg.from, 0, now);
                if let Some(f) = &self.receiver_faults {
                    s.faults = f.clone();
                }
                s.inbox.push(pkg.body);
                self.sessions.push(s);
            }
            (None, _) => {}
        }
    }

    fn step_session(
        &mut self,
        s: &mut Session,
        net: &mut dyn Network,
        busy: &mut BTreeSet<ContractId>,
    ) {
        let now = net.now();
        for body in std::mem::take(&mut s.inbox) {
            match s.role {
                Role::Sender => self.sender_package(s, body, now),
                Role::Receiver => self.receiver_package(s, body, net, now),
            }
        }
        self.check_timers(s, now);
        let Some(job) = s.job.take() else {
            return;
        };
        if job.is_tx() && !job.started() {
            if busy.contains(&job.account) {
                s.job = Some(job);
                return;
            }
            busy.insert(job.account);
        }
        let job = self.step_job(job, net);
        match job.outcome.clone() {
            None => s.job = Some(job),
            Some(out) => {
                busy.remove(&job.account);
                match s.role {
                    Role::Sender => self.sender_outcome(s, out, net),
                    Role::Receiver => self.receiver_outcome(s, out, net),
                }
            }
        }
    }

    fn check_timers(&mut self, s: &mut Session, now: Timestamp) {
        let Some(timelock) = s.timelock else {
            return;
        };
        match (s.role, &s.step) {
            // A commit still unconfirmed at the timelock races the refund;
            // the record admits only one of them.
            (Role::Sender, Step::AwaitPhase2 | Step::IncAtReceiver | Step::Commit | Step::Idle)
                if now >= timelock =>
            {
                s.note(now, "timelock expired; recovering escrow".into());
                self.start_revert(s);
            }
            (Role::Receiver, Step::SecretClaim { .. }) => {
                let since = s.claim_since.unwrap_or(now);
                if now >= since + self.cfg.grace + 2 * self.cfg.deadline {
                    s.claim_rejections.push("claim censored".into());
                    s.end(Phase::Aborted, now, "claim without a burn got no receipt");
                }
            }
            (Role::Receiver, Step::End(_)) => {}
            (Role::Receiver, _) if now >= timelock + self.cfg.grace => {
                s.end(
                    Phase::Expired,
                    now,
                    "sender did not complete before the timelock",
                );
            }
            _ => {}
        }
    }

    fn start_revert(&mut self, s: &mut Session) {
        let Some(id) = s.send_id else {
            return;
        };
        s.step = Step::Revert;
        s.job = Some(Job::tx(
            s.tag,
            s.me.ipsc,
            0,
            Call::Iomc {
                call: IomcCall::SendRevert { transfer_id: id },
            },
            0,
        ));
    }

    // ---- sender ----

    fn sender_package(&mut self, s: &mut Session, body: PackageBody, now: Timestamp) {
        let PackageBody::Phase2 { evidence } = body else {
            return;
        };
        if s.step != Step::AwaitPhase2 {
            return;
        }
        let hashlock = s.hashlock.expect("sender has a hashlock");
        let (ext_id, ticket) = match check_phase2(&evidence, &s.me, &s.peer, &hashlock, s.amount) {
            Ok(v) => v,
            Err(e) => {
                s.note(now, format!("phase-2 package rejected: {e}"));
                return;
            }
        };
        s.recv_id = Some(ext_id);
        s.peer_ticket = Some(ticket.clone());
        let from = evidence.lroot;
        s.evidence[1] = Some(*evidence);
        if matches!(s.faults.abort_before, Some(n) if n <= 3) {
            s.step = Step::Idle;
            s.note(now, "aborting before phase 3".into());
            if s.faults.collude {
                self.reveal(s, now);
            }
            return;
        }
        s.step = Step::IncAtReceiver;
        s.job = Some(Job::inc(
            s.tag,
            s.peer.ipsc,
            s.me.ipsc,
            Some(ticket),
            3,
            from,
        ));
    }

    fn reveal(&mut self, s: &mut Session, now: Timestamp) {
        if let Some(secret) = s.secret.clone() {
            s.secret_revealed = true;
            s.note(now, "secret handed to the receiver".into());
            self.outbox_secret(s, secret);
        }
    }

    fn outbox_secret(&mut self, s: &Session, secret: Vec<u8>) {
        self.pending_mail.push(Package {
            from: s.me,
            to: s.peer,
            tag: s.tag,
            body: PackageBody::Secret { secret },
        });
    }

    fn sender_outcome(&mut self, s: &mut Session, out: Outcome, net: &mut dyn Network) {
        let now = net.now();
        self.flush_mail(net);
        match (&s.step, out) {
            (Step::Init, Outcome::Evidence(e)) => {
                if !e.receipt.ok() {
                    let why = e.receipt.revert_reason().unwrap_or("reverted").to_string();
                    return s.end(
                        Phase::Aborted,
                        now,
                        &format!("send initialisation failed: {why}"),
                    );
                }
                let Some((id, timelock)) = e.receipt.events.iter().find_map(|ev| match ev {
                    Event::SendInitialized {
                        transfer_id,
                        timelock,
                        ..
                    } => Some((*transfer_id, *timelock)),
                    _ => None,
                }) else {
                    return s.end(
                        Phase::Aborted,
                        now,
                        "initialisation receipt lacks its event",
                    );
                };
                s.send_id = Some(id);
                s.timelock = Some(timelock);
                s.evidence[0] = Some(e.clone());
                s.step = Step::AwaitPhase2;
                net.deliver(
                    s.peer,
                    Package {
                        from: s.me,
                        to: s.peer,
                        tag: s.tag,
                        body: PackageBody::Phase1 {
                            evidence: Box::new(e),
                        },
                    },
                );
            }
            (Step::Init, Outcome::Failed(why)) => s.end(Phase::Aborted, now, &why),
            (Step::IncAtReceiver, Outcome::Inc(inc_proof, lroot_pb)) => {
                let inclusion = s.evidence[1].clone().expect("phase-2 evidence kept");
                let secret = s.secret.clone().expect("sender has the secret");
                let evidence = ForeignEvidence {
                    foreign_ipsc: s.peer.ipsc,
                    inclusion,
                    inc_proof,
                    lroot_pb,
                };
                s.step = Step::Commit;
                s.job = Some(Job::tx(
                    s.tag,
                    s.me.ipsc,
                    3,
                    Call::Iomc {
                        call: IomcCall::SendCommit {
                            transfer_id: s.send_id.expect("initialised"),
                            secret,
                            ext_transfer_id: s.recv_id.expect("phase 2 verified"),
                            evidence: Box::new(evidence),
                        },
                    },
                    0,
                ));
            }
            (Step::IncAtReceiver, Outcome::Failed(why)) => {
                s.note(now, format!("consistency proof failed: {why}"));
                s.step = Step::Idle;
            }
            (Step::Commit, Outcome::Evidence(e)) if e.receipt.ok() => {
                s.evidence[2] = Some(e.clone());
                net.deliver(
                    s.peer,
                    Package {
                        from: s.me,
                        to: s.peer,
                        tag: s.tag,
                        body: PackageBody::Phase3 {
                            evidence: Box::new(e),
                        },
                    },
                );
                s.end(
                    Phase::Done,
                    now,
                    "burn committed and proven to the receiver",
                );
            }
            (Step::Commit, out) => {
                s.note(now, format!("commit failed: {}", outcome_reason(&out)));
                s.step = Step::Idle;
            }
            (Step::Revert, Outcome::Evidence(e)) if e.receipt.ok() => {
                s.end(Phase::Reverted, now, "escrow recovered");
                if s.faults.reveal_after_recovery {
                    self.reveal(s, now);
                    self.flush_mail(net);
                }
            }
            (Step::Revert, Outcome::Evidence(e))
                if e.receipt.revert_reason() == Some("transfer is not pending") =>
            {
                // Only a late commit completes the record besides a refund.
                s.end(
                    Phase::Done,
                    now,
                    "burn executed after the commit was abandoned",
                );
            }
            (Step::Revert, out) => {
                // The enclave clock may trail the chain; try again later.
                s.note(now, format!("revert failed: {}", outcome_reason(&out)));
                s.step = Step::Idle;
            }
            _ => {}
        }
        self.flush_mail(net);
    }

    fn flush_mail(&mut self, net: &mut dyn Network) {
        for pkg in std::mem::take(&mut self.pending_mail) {
            net.deliver(pkg.to, pkg);
        }
    }

    // ---- receiver ----

    fn receiver_package(
        &mut self,
        s: &mut Session,
        body: PackageBody,
        net: &mut dyn Network,
        now: Timestamp,
    ) {
        match body {
            PackageBody::Phase1 { evidence } if s.step == Step::Init => {
                let st = net.chain().finalized_state();
                let info = match check_phase1(&evidence, &s.me, &st, &net.imsc(), now) {
                    Ok(i) => i,
                    Err(e) => {
                        return s.end(
                            Phase::Aborted,
                            now,
                            &format!("phase-1 package rejected: {e}"),
                        )
                    }
                };
                if info.sender != s.peer {
                    return s.end(Phase::Aborted, now, "phase-1 package from another sender");
                }
                s.amount = info.amount;
                s.hashlock = Some(info.hashlock);
                s.timelock = Some(info.timelock);
                s.send_id = Some(info.transfer_id);
                let from = evidence.lroot;
                s.evidence[0] = Some(*evidence);
                let ticket = info.ticket.clone();
                s.info = Some(info);
                if matches!(s.faults.abort_before, Some(n) if n <= 2) {
                    return s.end(Phase::Aborted, now, "aborting before phase 2");
                }
                s.step = Step::IncAtSender1;
                s.job = Some(Job::inc(
                    s.tag,
                    s.peer.ipsc,
                    s.me.ipsc,
                    Some(ticket),
                    2,
                    from,
                ));
            }
            PackageBody::Phase3 { evidence } if s.step == Step::AwaitPhase3 => {
                let info = s.info.clone().expect("phase 1 accepted");
                let local = s.recv_id.expect("phase 2 executed");
                let secret = match check_phase3(&evidence, &s.me, &info, local) {
                    Ok(v) => v,
                    Err(e) => {
                        s.note(now, format!("phase-3 package rejected: {e}"));
                        return;
                    }
                };
                s.secret = Some(secret);
                let from = evidence.lroot;
                s.evidence[2] = Some(*evidence);
                if matches!(s.faults.abort_before, Some(n) if n <= 4) {
                    return s.end(Phase::Aborted, now, "aborting before phase 4");
                }
                s.step = Step::IncAtSender2;
                s.job = Some(Job::inc(
                    s.tag,
                    s.peer.ipsc,
                    s.me.ipsc,
                    Some(info.ticket),
                    4,
                    from,
                ));
            }
            PackageBody::Secret { secret } => {
                if s.step == Step::End(Phase::Done) || s.job.is_some() {
                    return;
                }
                if s.hashlock != Some(hashlock_of(&secret)) {
                    s.note(now, "secret does not open the hashlock".into());
                    return;
                }
                if s.recv_id.is_none() {
                    s.claim_rejections
                        .push("no receive-side record to claim".into());
                    return;
                }
                s.note(
                    now,
                    "claiming with a secret that came without a burn".into(),
                );
                s.secret = Some(secret);
                self.secret_claim(s, true, now);
            }
            _ => {}
        }
    }

    fn secret_claim(&mut self, s: &mut Session, with_evidence: bool, now: Timestamp) {
        let secret = s.secret.clone().expect("secret set");
        // The initialisation is the only sender-side proof without a burn.
        let evidence = if with_evidence {
            s.evidence[0].clone().map(|inclusion| {
                Box::new(ForeignEvidence {
                    foreign_ipsc: s.peer.ipsc,
                    inc_proof: trivial_inc(&inclusion),
                    lroot_pb: inclusion.lroot,
                    inclusion,
                })
            })
        } else {
            None
        };
        s.step = Step::SecretClaim { with_evidence };
        s.claim_since = Some(now);
        s.job = Some(Job::tx(
            s.tag,
            s.me.ipsc,
            4,
            Call::Iomc {
                call: IomcCall::ReceiveCommit {
                    transfer_id: s.recv_id.expect("checked"),
                    secret,
                    evidence,
                },
            },
            0,
        ));
    }

    fn receiver_outcome(&mut self, s: &mut Session, out: Outcome, net: &mut dyn Network) {
        let now = net.now();
        match (s.step.clone(), out) {
            (Step::IncAtSender1, Outcome::Inc(..)) => {
                let info = s.info.clone().expect("phase 1 accepted");
                s.step = Step::ReceiveInit;
                s.job = Some(Job::tx(
                    s.tag,
                    s.me.ipsc,
                    2,
                    Call::Iomc {
                        call: IomcCall::ReceiveInit {
                            sender: info.sender,
                            hashlock: info.hashlock,
                            amount: info.amount,
                        },
                    },
                    0,
                ));
            }
            (Step::ReceiveInit, Outcome::Evidence(e)) if e.receipt.ok() => {
                let Some(id) = e.receipt.events.iter().find_map(|ev| match ev {
                    Event::ReceiveInitialized { transfer_id, .. } => Some(*transfer_id),
                    _ => None,
                }) else {
                    return s.end(Phase::Aborted, now, "receive receipt lacks its event");
                };
                s.recv_id = Some(id);
                s.evidence[1] = Some(e.clone());
                s.step = Step::AwaitPhase3;
                net.deliver(
                    s.peer,
                    Package {
                        from: s.me,
                        to: s.peer,
                        tag: s.tag,
                        body: PackageBody::Phase2 {
                            evidence: Box::new(e),
                        },
                    },
                );
            }
            (Step::IncAtSender2, Outcome::Inc(inc_proof, lroot_pb)) => {
                let inclusion = s.evidence[2].clone().expect("phase-3 evidence kept");
                let evidence = ForeignEvidence {
                    foreign_ipsc: s.peer.ipsc,
                    inclusion,
                    inc_proof,
                    lroot_pb,
                };
                s.step = Step::Claim;
                s.job = Some(Job::tx(
                    s.tag,
                    s.me.ipsc,
                    4,
                    Call::Iomc {
                        call: IomcCall::ReceiveCommit {
                            transfer_id: s.recv_id.expect("phase 2 executed"),
                            secret: s.secret.clone().expect("phase 3 verified"),
                            evidence: Some(Box::new(evidence)),
                        },
                    },
                    0,
                ));
            }
            (Step::Claim, Outcome::Evidence(e)) if e.receipt.ok() => {
                s.end(Phase::Done, now, "minted");
            }
            (Step::SecretClaim { with_evidence }, out) => {
                match out {
                    Outcome::Evidence(e) if e.receipt.ok() => {
                        s.claim_rejections.clear();
                        return s.end(Phase::Done, now, "minted without a proven burn");
                    }
                    other => s.claim_rejections.push(outcome_reason(&other)),
                }
                if with_evidence {
                    self.secret_claim(s, false, now);
                } else {
                    s.end(Phase::Aborted, now, "claims without a burn were refused");
                }
            }
            (step, out) => {
                let why = format!("{step:?} failed: {}", outcome_reason(&out));
                s.end(Phase::Aborted, now, &why);
            }
        }
    }

    // ---- chain ----

    fn post(
        &mut self,
        net: &mut dyn Network,
        account: &ContractId,
        call: ChainCall,
    ) -> Option<Digest> {
        let key = &self.accounts.get(account)?.key;
        self.chain_nonce += 1;
        net.submit_chain(ChainTx::sign(key, self.chain_nonce, call))
    }
}

fn outcome_reason(out: &Outcome) -> String {
    match out {
        Outcome::Evidence(e) => e.receipt.revert_reason().unwrap_or("reverted").to_string(),
        Outcome::Inc(..) => "unexpected consistency proof".into(),
        Outcome::Failed(why) => why.clone(),
    }
}

/// Consistency proof of a commitment with itself.
fn trivial_inc(e: &TxEvidence) -> crate::authlog::IncrementalProof {
    crate::authlog::IncrementalProof {
        from_version: e.lroot.version,
        to_version: e.lroot.version,
        node_hashes: vec![e.lroot.root],
    }
}
