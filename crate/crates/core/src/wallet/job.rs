//! Requests a wallet keeps retrying until they produce a verified answer,
//! escalating to the target instance's contract when the operator stalls.

use serde::Serialize;

use crate::authlog::{inc_verify, Commitment, IncrementalProof};
use crate::chain::{ChainCall, ChainStatus};
use crate::codec::{Decode, Encode};
use crate::crypto::{seal_to, Digest, SessionKey};
use crate::enclave::{CensStatus, QueryAnswer, QueryRequest};
use crate::ids::ContractId;
use crate::ledger::{AccessTicket, Call, MicroTx, TxEvidence};
use crate::node::{ClientMessage, Request, Response};
use crate::time::Timestamp;

use super::{Network, Wallet};

const MAX_QUERY_ESCALATIONS: u32 = 3;

#[derive(Debug, Clone)]
pub enum Outcome {
    Evidence(TxEvidence),
    Inc(IncrementalProof, Commitment),
    Failed(String),
}

#[derive(Debug, Clone)]
pub(crate) enum JobKind {
    Tx {
        call: Call,
        value: u64,
        tx: Option<MicroTx>,
    },
    Inc {
        from: Commitment,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Esc {
    chain_tx: Digest,
    session: SessionKey,
    idx: Option<u64>,
    at: Timestamp,
    status: Option<CensStatus>,
    dead: bool,
    record: usize,
}

/// A censorship escalation as the wallet saw it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EscalationRecord {
    pub client: String,
    pub tag: u64,
    pub target: ContractId,
    pub query: bool,
    pub idx: Option<u64>,
    pub submitted_at: Timestamp,
    pub status: Option<CensStatus>,
    /// Still unresolved one deadline after submission.
    pub flagged_unresolved: bool,
    pub contract_rejection: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct Job {
    pub tag: u64,
    pub target: ContractId,
    /// Which of the wallet's accounts signs.
    pub account: ContractId,
    /// Authenticates at a foreign target.
    pub ticket: Option<AccessTicket>,
    pub phase: u8,
    pub kind: JobKind,
    since: Timestamp,
    submitted: bool,
    tx_esc: Option<Esc>,
    q_esc: Option<Esc>,
    q_escalations: u32,
    pub outcome: Option<Outcome>,
}

impl Job {
    pub fn tx(tag: u64, account: ContractId, phase: u8, call: Call, value: u64) -> Self {
        Job::new(
            tag,
            account,
            account,
            None,
            phase,
            JobKind::Tx {
                call,
                value,
                tx: None,
            },
        )
    }

    pub fn inc(
        tag: u64,
        target: ContractId,
        account: ContractId,
        ticket: Option<AccessTicket>,
        phase: u8,
        from: Commitment,
    ) -> Self {
        Job::new(tag, target, account, ticket, phase, JobKind::Inc { from })
    }

    fn new(
        tag: u64,
        target: ContractId,
        account: ContractId,
        ticket: Option<AccessTicket>,
        phase: u8,
        kind: JobKind,
    ) -> Self {
        Job {
            tag,
            target,
            account,
            ticket,
            phase,
            kind,
            since: 0,
            submitted: false,
            tx_esc: None,
            q_esc: None,
            q_escalations: 0,
            outcome: None,
        }
    }

    pub fn started(&self) -> bool {
        self.submitted
    }

    pub fn is_tx(&self) -> bool {
        matches!(self.kind, JobKind::Tx { .. })
    }

    pub fn tx_hash(&self) -> Option<Digest> {
        match &self.kind {
            JobKind::Tx { tx: Some(tx), .. } => Some(tx.hash()),
            _ => None,
        }
    }

    fn query(&self) -> Option<QueryRequest> {
        match &self.kind {
            JobKind::Tx { tx, .. } => tx
                .as_ref()
                .map(|t| QueryRequest::TxEvidence { tx_hash: t.hash() }),
            JobKind::Inc { from } => Some(QueryRequest::IncProof { from: *from }),
        }
    }
}

impl Wallet {
    /// Advances one job; returns it with `outcome` set once finished.
    pub(crate) fn step_job(&mut self, mut job: Job, net: &mut dyn Network) -> Job {
        let now = net.now();
        if !job.submitted {
            job.submitted = true;
            job.since = now;
            if let JobKind::Tx { call, value, tx } = &mut job.kind {
                let slot = self
                    .accounts
                    .get_mut(&job.account)
                    .expect("job account exists");
                let signed = MicroTx::sign(&slot.key, slot.nonce, call.clone(), *value);
                slot.nonce += 1;
                *tx = Some(signed.clone());
                let r = self.send(net, &job, Request::SubmitTx { tx: signed });
                if let Some(Response::Error { reason }) = r {
                    job.outcome = Some(Outcome::Failed(reason));
                    return job;
                }
            }
        }
        if let Some(out) = self.poll_direct(net, &mut job) {
            job.outcome = Some(out);
            return job;
        }
        if let Some(out) = self.poll_escalations(net, &mut job, now) {
            job.outcome = Some(out);
        }
        job
    }

    fn send(&self, net: &mut dyn Network, job: &Job, request: Request) -> Option<Response> {
        let key = &self.accounts[&job.account].key;
        let ticket = if job.target == job.account {
            None
        } else {
            job.ticket.clone()
        };
        let msg = ClientMessage::sign(key, job.phase, ticket, request);
        net.request(&job.target, &msg)
    }

    fn poll_direct(&mut self, net: &mut dyn Network, job: &mut Job) -> Option<Outcome> {
        let request = match &job.kind {
            JobKind::Tx { tx: Some(tx), .. } => Request::QueryReceipt { tx_hash: tx.hash() },
            JobKind::Tx { tx: None, .. } => return None,
            JobKind::Inc { from } => Request::QueryIncProof { from: *from },
        };
        match self.send(net, job, request)? {
            Response::Evidence { evidence } => self.accept_evidence(net, job, *evidence),
            Response::IncProof { proof, to } => self.accept_inc(net, job, proof, to),
            Response::TxRejected { reason } => {
                self.resync_nonce(net, job);
                Some(Outcome::Failed(format!("transaction rejected: {reason}")))
            }
            Response::Error { reason } => Some(Outcome::Failed(reason)),
            _ => None,
        }
    }

    fn resync_nonce(&mut self, net: &mut dyn Network, job: &Job) {
        if let Some(Response::Account { account }) = self.send(net, job, Request::QueryAccount {}) {
            if let Some(slot) = self.accounts.get_mut(&job.account) {
                slot.nonce = account.nonce;
            }
        }
    }

    fn accept_evidence(&self, net: &dyn Network, job: &Job, e: TxEvidence) -> Option<Outcome> {
        let ok = Some(e.mu_tx.hash()) == job.tx_hash()
            && e.verify_inclusion()
            && snapshotted(net, &job.target, &e.lroot);
        ok.then_some(Outcome::Evidence(e))
    }

    fn accept_inc(
        &self,
        net: &dyn Network,
        job: &Job,
        proof: IncrementalProof,
        to: Commitment,
    ) -> Option<Outcome> {
        let JobKind::Inc { from } = &job.kind else {
            return None;
        };
        if !snapshotted(net, &job.target, &to) {
            return None;
        }
        if !inc_verify(&proof, from, &to) {
            return Some(Outcome::Failed("consistency proof does not verify".into()));
        }
        Some(Outcome::Inc(proof, to))
    }

    fn poll_escalations(
        &mut self,
        net: &mut dyn Network,
        job: &mut Job,
        now: Timestamp,
    ) -> Option<Outcome> {
        let deadline = self.cfg.deadline;
        if let Some(mut esc) = job.tx_esc.take() {
            let resolved = self.track(net, &mut esc, now);
            let status = esc.status;
            job.tx_esc = Some(esc);
            match status {
                Some(CensStatus::Malformed) if resolved => {
                    return Some(Outcome::Failed(
                        "escalated transaction was malformed".into(),
                    ));
                }
                Some(CensStatus::Rejected) if resolved => {
                    self.resync_nonce(net, job);
                    return Some(Outcome::Failed("escalated transaction was rejected".into()));
                }
                // The transaction ran; the receipt gets a fresh deadline.
                Some(_) if resolved => job.since = now,
                _ => {}
            }
        } else if job.is_tx() && now >= job.since + deadline {
            let plain = match &job.kind {
                JobKind::Tx { tx: Some(tx), .. } => tx.encode(),
                _ => return None,
            };
            job.tx_esc = self.escalate(net, job, plain, false);
            job.since = now;
            return None;
        }

        let tx_settled = job
            .tx_esc
            .as_ref()
            .map_or(!job.is_tx(), |e| e.status.is_some() || e.dead);
        if let Some(mut esc) = job.q_esc.take() {
            self.track(net, &mut esc, now);
            match (esc.status, esc.dead) {
                (Some(CensStatus::Answered), _) => {
                    let edata = self.escalation_edata(net, job, &esc);
                    let answer = edata
                        .and_then(|d| esc.session.open_reply(&d).ok())
                        .and_then(|p| QueryAnswer::decode(&p).ok());
                    let out = match answer {
                        Some(QueryAnswer::TxEvidence { evidence }) => {
                            self.accept_evidence(net, job, *evidence)
                        }
                        Some(QueryAnswer::IncProof { proof, to }) => {
                            self.accept_inc(net, job, proof, to)
                        }
                        _ => None,
                    };
                    return Some(out.unwrap_or_else(|| {
                        Outcome::Failed("escalated answer does not verify".into())
                    }));
                }
                (Some(_), _) | (None, true) => {
                    if job.q_escalations >= MAX_QUERY_ESCALATIONS {
                        return Some(Outcome::Failed("query unanswerable".into()));
                    }
                    job.since = now;
                }
                (None, false) => job.q_esc = Some(esc),
            }
        } else if tx_settled && now >= job.since + deadline {
            if let Some(q) = job.query() {
                job.q_escalations += 1;
                job.q_esc = self.escalate(net, job, q.encode(), true);
                job.since = now;
            }
        }
        None
    }

    fn escalation_edata(&self, net: &dyn Network, job: &Job, esc: &Esc) -> Option<Vec<u8>> {
        let st = net.chain().finalized_state();
        let info = st.ipsc(&job.target)?.cens_reqs.get(esc.idx? as usize)?;
        info.edata.clone()
    }

    /// True when the request resolved during this call.
    fn track(&mut self, net: &dyn Network, esc: &mut Esc, now: Timestamp) -> bool {
        if esc.dead || esc.status.is_some() {
            return false;
        }
        let chain = net.chain();
        let record = &mut self.escalations[esc.record];
        if esc.idx.is_none() {
            let Some(r) = chain.final_receipt(&esc.chain_tx) else {
                return false;
            };
            if r.status != ChainStatus::Applied {
                esc.dead = true;
                record.contract_rejection = Some(r.reason.clone());
                return false;
            }
            esc.idx = r.index;
            record.idx = r.index;
        }
        let st = chain.finalized_state();
        let target = record.target;
        let status = st
            .ipsc(&target)
            .and_then(|c| c.cens_reqs.get(esc.idx.unwrap_or(u64::MAX) as usize))
            .and_then(|i| i.status);
        if let Some(s) = status {
            esc.status = Some(s);
            record.status = Some(s);
            return true;
        }
        if now >= esc.at + self.cfg.deadline {
            record.flagged_unresolved = true;
        }
        false
    }

    fn escalate(
        &mut self,
        net: &mut dyn Network,
        job: &Job,
        plain: Vec<u8>,
        query: bool,
    ) -> Option<Esc> {
        let now = net.now();
        let pk_tee = *net
            .chain()
            .finalized_state()
            .ipsc(&job.target)?
            .latest_pk_tee();
        let ticket = match &job.ticket {
            Some(t) => t.clone(),
            None => self.accounts.get(&job.target)?.ticket.clone(),
        };
        let (sealed, session) = seal_to(&pk_tee, &plain, &mut self.rng).ok()?;
        let call = if query {
            ChainCall::SubmitCensQry {
                ipsc: job.target,
                equery: sealed,
                ticket,
            }
        } else {
            ChainCall::SubmitCensTx {
                ipsc: job.target,
                etx: sealed,
                ticket,
            }
        };
        let h = self.post(net, &job.account, call)?;
        self.escalations.push(EscalationRecord {
            client: self.name.clone(),
            tag: job.tag,
            target: job.target,
            query,
            idx: None,
            submitted_at: now,
            status: None,
            flagged_unresolved: false,
            contract_rejection: None,
        });
        Some(Esc {
            chain_tx: h,
            session,
            idx: None,
            at: now,
            status: None,
            dead: false,
            record: self.escalations.len() - 1,
        })
    }
}

fn snapshotted(net: &dyn Network, ipsc: &ContractId, c: &Commitment) -> bool {
    net.chain()
        .finalized_state()
        .ipsc(ipsc)
        .is_some_and(|s| s.roots.contains(c))
}
