//! The operator service of one instance.
//!
//! A [`Node`] owns the full ledger state, the block store and a history tree
//! mirroring the enclave's frozen-hash cache. It never signs ledger roots:
//! every pair it posts comes out of the enclave. Misbehaviour is configured
//! through an [`AdversaryPolicy`] rather than separate code paths.

mod message;
mod transport;

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::authlog::{mk_proof, Commitment, HistoryTree, IncrementalProof};
use crate::chain::{Chain, ChainCall, ChainStatus, ChainTx};
use crate::codec::{Decode, Encode};
use crate::crypto::{Digest, KeyPair, SealedBox};
use crate::enclave::{
    treasury, Enclave, EnclaveError, ExecOutput, QueryAnswer, QueryRequest, TxResolution,
};
use crate::ids::{Address, ContractId};
use crate::ledger::{
    touched_hint, AccessTicket, Account, Call, Header, MicroTx, Receipt, State, StateKey, TxError,
    TxEvidence, VmError,
};
use crate::time::Timestamp;

pub use message::{ClientMessage, Request, Response};
pub use transport::{serve, Connection, TcpClient};

/// What a dishonest operator does. The default is an honest operator.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryPolicy {
    pub censor_tx_from: BTreeSet<crate::crypto::PublicKey>,
    pub censor_queries_from: BTreeSet<crate::crypto::PublicKey>,
    pub drop_sync: bool,
    pub equivocate: bool,
    /// Direct messages tagged with this transfer phase are dropped.
    pub stall_phase: Option<u8>,
    /// Requests escalated to the contract are left unresolved.
    pub ignore_escalations: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub instance_id: ContractId,
    pub imsc: ContractId,
    pub batch_interval: u64,
    pub sync_interval: u64,
    pub adversary: AdversaryPolicy,
}

impl NodeConfig {
    /// Panics if an interval is zero.
    pub fn new(
        instance_id: ContractId,
        imsc: ContractId,
        batch_interval: u64,
        sync_interval: u64,
    ) -> Self {
        assert!(
            batch_interval > 0 && sync_interval > 0,
            "intervals must be positive"
        );
        NodeConfig {
            instance_id,
            imsc,
            batch_interval,
            sync_interval,
            adversary: AdversaryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tick {
    Batch,
    Sync,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredBlock {
    pub header: Header,
    pub txs: Vec<MicroTx>,
    pub receipts: Vec<Receipt>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NodeStats {
    pub batches: u64,
    pub pairs_posted: u64,
    pub pairs_applied: u64,
    pub pairs_ignored: u64,
    pub pairs_rejected: u64,
    pub dropped_messages: u64,
    pub resolutions_posted: u64,
}

/// Summary the harness records in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeDump {
    pub instance: ContractId,
    pub id_cur: u64,
    pub lroot_pb: Option<Commitment>,
    pub lroot_cur: Option<Commitment>,
    pub t_i: u64,
    pub t_s: u64,
    pub total_balance: u64,
    pub queued: usize,
    pub stats: NodeStats,
}

/// Ledger data kept outside the enclave. Cloned as a unit when an
/// equivocating operator forks its history.
#[derive(Clone)]
struct Replica {
    enclave: Enclave,
    state: State,
    history: HistoryTree,
    blocks: Vec<StoredBlock>,
    index: HashMap<Digest, (usize, usize)>,
    rejected: HashMap<Digest, TxError>,
}

impl Replica {
    fn exec(
        &mut self,
        txs: &[MicroTx],
        censored: &[SealedBox],
    ) -> Result<ExecOutput, EnclaveError> {
        let mut keys: BTreeSet<StateKey> = txs.iter().flat_map(touched_hint).collect();
        let out = loop {
            match self.enclave.exec(txs, censored, &self.state.partial(&keys)) {
                Err(EnclaveError::Vm(VmError::Missing(m))) => keys.extend(m),
                r => break r?,
            }
        };
        self.state.absorb(&out.partial);
        let c = self.history.add(&out.header.encode());
        assert_eq!(
            Some(c),
            self.enclave.lroot_cur(),
            "history tree diverged from the enclave"
        );
        let b = self.blocks.len();
        for (i, tx) in out.txs.iter().enumerate() {
            self.index.insert(tx.hash(), (b, i));
        }
        for (tx, e) in &out.rejected {
            self.rejected.insert(tx.hash(), e.clone());
        }
        self.blocks.push(StoredBlock {
            header: out.header,
            txs: out.txs.clone(),
            receipts: out.receipts.clone(),
        });
        Ok(out)
    }

    fn evidence_at(&self, tx_hash: &Digest, at: &Commitment) -> Option<TxEvidence> {
        let &(b, i) = self.index.get(tx_hash)?;
        let blk = &self.blocks[b];
        if blk.header.id > at.version {
            return None;
        }
        let rcps: Vec<Vec<u8>> = blk.receipts.iter().map(Encode::encode).collect();
        Some(TxEvidence {
            mu_tx: blk.txs[i].clone(),
            receipt: blk.receipts[i].clone(),
            header: blk.header,
            mk_proof: mk_proof(i, &rcps).ok()?,
            mem_proof: self.history.mem_proof(blk.header.id - 1, at).ok()?,
            lroot: *at,
        })
    }

    fn inc_proof(&self, from: &Commitment) -> Option<(IncrementalProof, Commitment)> {
        let to = self.enclave.lroot_pb()?;
        Some((self.history.inc_proof(from, &to).ok()?, to))
    }

    fn answer(&self, request: &QueryRequest) -> QueryAnswer {
        let found = match request {
            QueryRequest::IncProof { from } => self
                .inc_proof(from)
                .map(|(proof, to)| QueryAnswer::IncProof { proof, to }),
            QueryRequest::TxEvidence { tx_hash } => self.enclave.lroot_pb().and_then(|at| {
                self.evidence_at(tx_hash, &at)
                    .map(|e| QueryAnswer::TxEvidence {
                        evidence: Box::new(e),
                    })
            }),
        };
        found.unwrap_or(QueryAnswer::Unavailable {})
    }
}

type Resolutions = Vec<(u64, TxResolution)>;

struct Shadow {
    replica: Replica,
    resolutions: Resolutions,
}

struct Inflight {
    live_tx: Digest,
    shadow: Option<(Digest, Shadow)>,
}

pub struct Node {
    cfg: NodeConfig,
    operator: KeyPair,
    chain_nonce: u64,
    live: Replica,
    queue: Vec<MicroTx>,
    escalated: Vec<(u64, SealedBox)>,
    relayed: BTreeSet<u64>,
    resolutions: Resolutions,
    shadow: Option<Shadow>,
    inflight: Option<Inflight>,
    last_batch: Option<Timestamp>,
    last_sync: Option<Timestamp>,
    stats: NodeStats,
    log: Vec<String>,
}

impl Node {
    /// Wraps an enclave that has completed genesis, installing the genesis
    /// allocation in the operator's state.
    pub fn new(
        cfg: NodeConfig,
        operator: KeyPair,
        enclave: Enclave,
        allocation: Vec<(StateKey, crate::ledger::StateValue)>,
    ) -> Self {
        let mut state = State::new();
        for (k, v) in allocation {
            state.set(k, v);
        }
        assert_eq!(
            Some(state.root()),
            enclave.st_root(),
            "allocation does not match genesis"
        );
        Node {
            cfg,
            operator,
            chain_nonce: 0,
            live: Replica {
                enclave,
                state,
                history: HistoryTree::new(),
                blocks: Vec::new(),
                index: HashMap::new(),
                rejected: HashMap::new(),
            },
            queue: Vec::new(),
            escalated: Vec::new(),
            relayed: BTreeSet::new(),
            resolutions: Vec::new(),
            shadow: None,
            inflight: None,
            last_batch: None,
            last_sync: None,
            stats: NodeStats::default(),
            log: Vec::new(),
        }
    }

    pub fn id(&self) -> ContractId {
        self.cfg.instance_id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &KeyPair {
        &self.operator
    }

    pub fn enclave(&self) -> &Enclave {
        &self.live.enclave
    }

    pub fn state(&self) -> &State {
        &self.live.state
    }

    pub fn history(&self) -> &HistoryTree {
        &self.live.history
    }

    pub fn blocks(&self) -> &[StoredBlock] {
        &self.live.blocks
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    pub fn adversary(&self) -> &AdversaryPolicy {
        &self.cfg.adversary
    }

    pub fn set_adversary(&mut self, policy: AdversaryPolicy) {
        self.cfg.adversary = policy;
    }

    /// Nothing queued, escalated or awaiting finality.
    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
            && self.escalated.is_empty()
            && self.inflight.is_none()
            && self.live.enclave.pending_pair().is_none()
    }

    fn note(&mut self, line: String) {
        self.log.push(line);
    }

    // ---- client interface ----

    pub fn handle_frame(&mut self, frame: &[u8]) -> Option<Vec<u8>> {
        match ClientMessage::decode(frame) {
            Ok(msg) => self.handle(&msg).map(|r| r.encode()),
            Err(e) => Some(
                Response::Error {
                    reason: format!("malformed message: {e}"),
                }
                .encode(),
            ),
        }
    }

    /// `None` means the message was dropped.
    pub fn handle(&mut self, msg: &ClientMessage) -> Option<Response> {
        if !msg.signature_valid() {
            return Some(Response::error("message signature does not verify"));
        }
        let policy = &self.cfg.adversary;
        if msg.phase != 0 && policy.stall_phase == Some(msg.phase) {
            self.stats.dropped_messages += 1;
            return None;
        }
        if let Request::RegisterClient {} = msg.request {
            return Some(self.register(msg));
        }
        if !self.authorized(msg) {
            return Some(Response::error("unknown client"));
        }
        let censored = match msg.request {
            Request::SubmitTx { .. } => policy.censor_tx_from.contains(&msg.sender),
            _ => policy.censor_queries_from.contains(&msg.sender),
        };
        if censored {
            self.stats.dropped_messages += 1;
            return None;
        }
        Some(match &msg.request {
            Request::RegisterClient {} => unreachable!("handled above"),
            Request::SubmitTx { tx } => {
                if tx.body.sender != msg.sender {
                    return Some(Response::error(
                        "transaction sender differs from message sender",
                    ));
                }
                let tx_hash = tx.hash();
                if !self.queue.iter().any(|q| q.hash() == tx_hash) {
                    self.queue.push(tx.clone());
                }
                Response::Accepted { tx_hash }
            }
            Request::QueryIomcAddrs {} => Response::IomcAddrs {
                send: Address::iomc_send(),
                recv: Address::iomc_recv(),
            },
            Request::QueryReceipt { tx_hash } => self.receipt_response(tx_hash),
            Request::QueryIncProof { from } => match self.live.inc_proof(from) {
                Some((proof, to)) => Response::IncProof { proof, to },
                None if self.live.enclave.lroot_pb().is_none() => Response::NotSnapshotted {},
                None => Response::error("no consistency proof from that version"),
            },
            Request::QueryMemProof { index } => {
                let found = self.live.enclave.lroot_pb().and_then(|at| {
                    let blk = self.live.blocks.get(usize::try_from(*index).ok()?)?;
                    let proof = self.live.history.mem_proof(*index, &at).ok()?;
                    Some(Response::MemProof {
                        header: blk.header,
                        proof,
                        at,
                    })
                });
                found.unwrap_or(Response::NotSnapshotted {})
            }
            Request::QueryAccount {} => Response::Account {
                account: self.live.state.account(&Address::of(&msg.sender)),
            },
        })
    }

    fn register(&mut self, msg: &ClientMessage) -> Response {
        match self.live.enclave.register(msg.sender) {
            Ok((receipt, ticket)) => {
                if let Some(s) = &mut self.shadow {
                    let _ = s.replica.enclave.register(msg.sender);
                }
                if let Some((_, s)) = self.inflight.as_mut().and_then(|f| f.shadow.as_mut()) {
                    let _ = s.replica.enclave.register(msg.sender);
                }
                Response::Registered { receipt, ticket }
            }
            Err(e) => Response::error(&e.to_string()),
        }
    }

    fn authorized(&self, msg: &ClientMessage) -> bool {
        if self.live.enclave.is_registered(&msg.sender) {
            return true;
        }
        let Some(t) = &msg.ticket else {
            return false;
        };
        let Some((_, pk_tee)) = self.live.enclave.public_keys() else {
            return false;
        };
        ticket_valid(
            t,
            &msg.sender,
            &self.cfg.instance_id,
            self.live.enclave.now(),
            &pk_tee,
        )
    }

    fn receipt_response(&self, tx_hash: &Digest) -> Response {
        if self.queue.iter().any(|q| q.hash() == *tx_hash) {
            return Response::NotSnapshotted {};
        }
        if let Some(e) = self.live.rejected.get(tx_hash) {
            if !self.live.index.contains_key(tx_hash) {
                return Response::TxRejected {
                    reason: e.to_string(),
                };
            }
        }
        if !self.live.index.contains_key(tx_hash) {
            return Response::Unknown {};
        }
        match self
            .live
            .enclave
            .lroot_pb()
            .and_then(|at| self.live.evidence_at(tx_hash, &at))
        {
            Some(e) => Response::Evidence {
                evidence: Box::new(e),
            },
            None => Response::NotSnapshotted {},
        }
    }

    /// Evidence for a transaction under the latest snapshot.
    pub fn evidence(&self, tx_hash: &Digest) -> Option<TxEvidence> {
        let at = self.live.enclave.lroot_pb()?;
        self.live.evidence_at(tx_hash, &at)
    }

    /// Queues a transaction signed by the operator's treasury key.
    pub fn submit_operator(&mut self, call: Call, value: u64) -> Digest {
        let tx = MicroTx::sign(&self.operator, self.operator_nonce(&self.live), call, value);
        let h = tx.hash();
        self.queue.push(tx);
        h
    }

    fn operator_nonce(&self, replica: &Replica) -> u64 {
        let me = self.operator.public();
        replica.state.account(&treasury(&me)).nonce
            + self.queue.iter().filter(|t| t.body.sender == me).count() as u64
    }

    // ---- ticks ----

    /// Runs whichever ticks are due at the chain's current time, after
    /// picking up escalated requests.
    pub fn tick(&mut self, chain: &mut Chain) {
        self.relay_censored(chain);
        let now = chain.now();
        if due(self.last_batch, self.cfg.batch_interval, now) {
            self.last_batch = Some(now);
            self.batch_tick(chain);
        }
        if due(self.last_sync, self.cfg.sync_interval, now) {
            self.last_sync = Some(now);
            self.sync_tick(chain);
        }
    }

    /// Admin endpoint: forces one tick regardless of schedule.
    pub fn force(&mut self, kind: Tick, chain: &mut Chain) {
        match kind {
            Tick::Batch => self.batch_tick(chain),
            Tick::Sync => self.sync_tick(chain),
        }
    }

    pub fn batch_tick(&mut self, chain: &Chain) {
        if self.inflight.is_some() || (self.queue.is_empty() && self.escalated.is_empty()) {
            return;
        }
        let view = chain.view(&self.cfg.imsc);
        if let Err(e) = self.live.enclave.update_light_client(&view) {
            self.note(format!("light client update failed: {e}"));
            return;
        }
        let txs = std::mem::take(&mut self.queue);
        let escalated = std::mem::take(&mut self.escalated);
        let sealed: Vec<SealedBox> = escalated.iter().map(|(_, e)| e.clone()).collect();
        if let Some(s) = &mut self.shadow {
            if let Err(e) = s.replica.enclave.update_light_client(&view) {
                self.log
                    .push(format!("shadow light client update failed: {e}"));
            }
            match s.replica.exec(&txs, &sealed) {
                Ok(out) => s
                    .resolutions
                    .extend(escalated.iter().map(|(i, _)| *i).zip(out.resolutions)),
                Err(e) => self.log.push(format!("shadow batch failed: {e}")),
            }
        } else if self.cfg.adversary.equivocate {
            let mut replica = self.live.clone();
            let mut alt = txs.clone();
            let me = self.operator.public();
            let nonce = replica.state.account(&treasury(&me)).nonce
                + txs.iter().filter(|t| t.body.sender == me).count() as u64;
            alt.push(MicroTx::sign(
                &self.operator,
                nonce,
                Call::Transfer {
                    to: treasury(&me),
                    amount: 1,
                },
                0,
            ));
            match replica.exec(&alt, &sealed) {
                Ok(out) => {
                    let mut resolutions = self.resolutions.clone();
                    resolutions.extend(escalated.iter().map(|(i, _)| *i).zip(out.resolutions));
                    self.shadow = Some(Shadow {
                        replica,
                        resolutions,
                    });
                }
                Err(e) => self.note(format!("shadow batch failed: {e}")),
            }
        }
        match self.live.exec(&txs, &sealed) {
            Ok(out) => {
                self.stats.batches += 1;
                self.resolutions
                    .extend(escalated.iter().map(|(i, _)| *i).zip(out.resolutions));
            }
            Err(e) => {
                self.note(format!("batch failed: {e}"));
                self.queue = txs;
                self.escalated = escalated;
            }
        }
    }

    pub fn sync_tick(&mut self, chain: &mut Chain) {
        if self.inflight.is_some() || self.cfg.adversary.drop_sync {
            return;
        }
        let Some(pair) = self.live.enclave.pending_pair() else {
            return;
        };
        let ipsc = self.cfg.instance_id;
        let Some(live_tx) = self.post(chain, ChainCall::Snapshot { ipsc, pair }) else {
            return;
        };
        let shadow = self.shadow.take().and_then(|s| {
            let pair = s.replica.enclave.pending_pair()?;
            let h = self.post(chain, ChainCall::Snapshot { ipsc, pair })?;
            Some((h, s))
        });
        self.inflight = Some(Inflight { live_tx, shadow });
    }

    /// Adopts whichever posted pair became final as applied, then flushes
    /// and posts resolutions for the batches it covered.
    pub fn poll(&mut self, chain: &mut Chain) {
        let Some(f) = &self.inflight else {
            return;
        };
        let Some(live) = chain.final_receipt(&f.live_tx).cloned() else {
            return;
        };
        let shadow_r = match &f.shadow {
            Some((h, _)) => match chain.final_receipt(h) {
                Some(r) => Some(r.clone()),
                None => return,
            },
            None => None,
        };
        let f = self.inflight.take().expect("checked above");
        for r in std::iter::once(&live).chain(shadow_r.iter()) {
            match r.status {
                ChainStatus::Applied => self.stats.pairs_applied += 1,
                ChainStatus::Ignored => self.stats.pairs_ignored += 1,
                ChainStatus::Rejected => {
                    self.stats.pairs_rejected += 1;
                    self.note(format!("snapshot rejected: {}", r.reason));
                }
            }
        }
        let adopted = if live.status == ChainStatus::Applied {
            true
        } else if let (Some(r), Some((_, s))) = (&shadow_r, f.shadow) {
            if r.status == ChainStatus::Applied {
                self.live = s.replica;
                self.resolutions = s.resolutions;
                self.note("adopted the equivocating branch".to_string());
                true
            } else {
                false
            }
        } else {
            false
        };
        if !adopted {
            return;
        }
        self.live
            .enclave
            .flush()
            .expect("enclave past genesis always flushes");
        let ipsc = self.cfg.instance_id;
        for (idx, res) in std::mem::take(&mut self.resolutions) {
            let call = ChainCall::ResolveCensTx {
                ipsc,
                idx,
                status: res.status,
                sig: res.sig,
            };
            if self.post(chain, call).is_some() {
                self.stats.resolutions_posted += 1;
            }
        }
    }

    /// Hands escalated transactions to the next batch and answers escalated
    /// queries through the enclave.
    pub fn relay_censored(&mut self, chain: &mut Chain) {
        if self.cfg.adversary.ignore_escalations {
            return;
        }
        let st = chain.finalized_state();
        let Some(ipsc) = st.ipsc(&self.cfg.instance_id) else {
            return;
        };
        let mut queries = Vec::new();
        for (idx, info) in ipsc.cens_reqs.iter().enumerate() {
            let idx = idx as u64;
            if info.status.is_some() || !self.relayed.insert(idx) {
                continue;
            }
            if let Some(etx) = &info.etx {
                self.escalated.push((idx, etx.clone()));
            } else if let Some(eq) = &info.equery {
                queries.push((idx, eq.clone()));
            }
        }
        let id = self.cfg.instance_id;
        for (idx, equery) in queries {
            let answer = match self.live.enclave.open_query(&equery) {
                Ok(req) => self.live.answer(&req),
                Err(_) => QueryAnswer::Unavailable {},
            };
            match self.live.enclave.answer_query(&equery, &answer) {
                Ok(res) => {
                    let call = ChainCall::ResolveCensQry {
                        ipsc: id,
                        idx,
                        status: res.status,
                        edata: res.edata,
                        sig: res.sig,
                    };
                    if self.post(chain, call).is_some() {
                        self.stats.resolutions_posted += 1;
                    }
                }
                Err(e) => self.note(format!("query {idx} not answered: {e}")),
            }
        }
    }

    fn post(&mut self, chain: &mut Chain, call: ChainCall) -> Option<Digest> {
        self.chain_nonce += 1;
        if matches!(call, ChainCall::Snapshot { .. }) {
            self.stats.pairs_posted += 1;
        }
        match chain.submit(ChainTx::sign(&self.operator, self.chain_nonce, call)) {
            Ok(h) => Some(h),
            Err(e) => {
                self.note(format!("chain submission failed: {e}"));
                None
            }
        }
    }

    pub fn dump_state(&self) -> NodeDump {
        let s = self.live.enclave.supply();
        NodeDump {
            instance: self.cfg.instance_id,
            id_cur: self.live.enclave.id_cur(),
            lroot_pb: self.live.enclave.lroot_pb(),
            lroot_cur: self.live.enclave.lroot_cur(),
            t_i: s.t_i,
            t_s: s.t_s,
            total_balance: self.live.state.total_balance() as u64,
            queued: self.queue.len(),
            stats: self.stats,
        }
    }

    pub fn account(&self, address: &Address) -> Account {
        self.live.state.account(address)
    }
}

fn due(last: Option<Timestamp>, interval: u64, now: Timestamp) -> bool {
    last.is_none_or(|t| now >= t + interval)
}

/// Ticket checks shared by the node's access control and the wallet.
pub fn ticket_valid(
    t: &AccessTicket,
    holder: &crate::crypto::PublicKey,
    ipsc: &ContractId,
    now: Timestamp,
    pk_tee: &crate::crypto::PublicKey,
) -> bool {
    t.client_pk == *holder
        && t.issuing_ipsc == *ipsc
        && t.expires_at >= now
        && t.verifies_under(pk_tee)
}
