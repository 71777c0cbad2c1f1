//! Simulated public blockchain.
//!
//! Transactions are ordered per block by taking each sender's transactions
//! in arrival order and interleaving senders round-robin in a seeded order.
//! A block at height `h` is final once the chain reaches `h + k - 1`; every
//! read goes through the finalized state unless it asks for a height.

mod imsc;
mod ipsc;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::codec::Encode;
use crate::crypto::{
    hash_tagged, AttestationQuote, Digest, KeyPair, PublicKey, Scheme, SealedBox, Signature, Tagged,
};
use crate::enclave::{
    view_authority, CensStatus, ChainView, InflationRate, InstanceView, SignedView,
    VersionTransitionPair,
};
use crate::ids::ContractId;
use crate::ledger::AccessTicket;
use crate::time::Timestamp;
use crate::{impl_codec, impl_codec_enum, impl_codec_unit_enum};

pub use imsc::{ImscCentralized, ImscDecentralized, InstanceInfo};
pub use ipsc::{CensInfo, IpscState, SnapshotOutcome};

/// A contract call failed one of its checks and had no effect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject(pub &'static str);

impl Reject {
    pub const fn new(reason: &'static str) -> Self {
        Reject(reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainCall {
    DeployIpsc {
        pk_pb: PublicKey,
        pk_tee: PublicKey,
        quote: AttestationQuote,
        t_i0: u64,
        i_r: InflationRate,
        issue_authority: bool,
    },
    Snapshot {
        ipsc: ContractId,
        pair: VersionTransitionPair,
    },
    SubmitCensTx {
        ipsc: ContractId,
        etx: SealedBox,
        ticket: AccessTicket,
    },
    ResolveCensTx {
        ipsc: ContractId,
        idx: u64,
        status: CensStatus,
        sig: Signature,
    },
    SubmitCensQry {
        ipsc: ContractId,
        equery: SealedBox,
        ticket: AccessTicket,
    },
    ResolveCensQry {
        ipsc: ContractId,
        idx: u64,
        status: CensStatus,
        edata: Vec<u8>,
        sig: Signature,
    },
    ReplaceEnc {
        ipsc: ContractId,
        pk_pb: PublicKey,
        pk_tee: PublicKey,
        quote: AttestationQuote,
        pair: VersionTransitionPair,
    },
    DeployImscD {
        members: Vec<(ContractId, PublicKey)>,
    },
    NewJoin {
        imsc: ContractId,
        ipsc: ContractId,
    },
    ApproveJoin {
        imsc: ContractId,
        my_ipsc: ContractId,
        new_ipsc: ContractId,
    },
    ApproveDelete {
        imsc: ContractId,
        my_ipsc: ContractId,
        del_ipsc: ContractId,
    },
    DeployImscC {
        authority: ContractId,
    },
    AddInstance {
        imsc: ContractId,
        ipsc: ContractId,
        operator: PublicKey,
    },
    DelInstance {
        imsc: ContractId,
        ipsc: ContractId,
    },
}
impl_codec_enum!(ChainCall, "chain call" {
    0 => DeployIpsc { pk_pb, pk_tee, quote, t_i0, i_r, issue_authority },
    1 => Snapshot { ipsc, pair },
    2 => SubmitCensTx { ipsc, etx, ticket },
    3 => ResolveCensTx { ipsc, idx, status, sig },
    4 => SubmitCensQry { ipsc, equery, ticket },
    5 => ResolveCensQry { ipsc, idx, status, edata, sig },
    6 => ReplaceEnc { ipsc, pk_pb, pk_tee, quote, pair },
    7 => DeployImscD { members },
    8 => NewJoin { imsc, ipsc },
    9 => ApproveJoin { imsc, my_ipsc, new_ipsc },
    10 => ApproveDelete { imsc, my_ipsc, del_ipsc },
    11 => DeployImscC { authority },
    12 => AddInstance { imsc, ipsc, operator },
    13 => DelInstance { imsc, ipsc },
});

#[derive(Debug, Clone, PartialEq, Eq)]
struct ChainTxBody {
    sender: PublicKey,
    nonce: u64,
    call: ChainCall,
}
impl_codec!(ChainTxBody {
    sender,
    nonce,
    call
});
impl Tagged for ChainTxBody {
    const TAG: &'static str = "chain-tx";
}

/// A signed public-chain transaction. `nonce` only makes otherwise equal
/// calls distinct; the chain rejects exact replays by hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainTx {
    pub sender: PublicKey,
    pub nonce: u64,
    pub call: ChainCall,
    pub sig: Signature,
}
impl_codec!(ChainTx {
    sender,
    nonce,
    call,
    sig
});
impl Tagged for ChainTx {
    const TAG: &'static str = "chain-tx/signed";
}

impl ChainTx {
    pub fn sign(key: &KeyPair, nonce: u64, call: ChainCall) -> Self {
        let body = ChainTxBody {
            sender: key.public(),
            nonce,
            call,
        };
        ChainTx {
            sig: key.sign(&body.signing_bytes()),
            sender: body.sender,
            nonce,
            call: body.call,
        }
    }

    fn body(&self) -> ChainTxBody {
        ChainTxBody {
            sender: self.sender,
            nonce: self.nonce,
            call: self.call.clone(),
        }
    }

    pub fn hash(&self) -> Digest {
        self.digest()
    }

    pub fn signature_valid(&self) -> bool {
        self.sender.scheme == Scheme::Pb
            && self
                .sender
                .verifies(&self.body().signing_bytes(), &self.sig)
    }
}

/// Id of a contract deployed by the transaction with hash `tx_hash`.
pub fn contract_id(tx_hash: &Digest) -> ContractId {
    ContractId(hash_tagged(b"contract", &[&tx_hash.0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChainStatus {
    Applied,
    /// Accepted but without effect (a snapshot that does not extend the root).
    Ignored,
    Rejected,
}
impl_codec_unit_enum!(ChainStatus, "chain status" { Applied = 0, Ignored = 1, Rejected = 2 });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainReceipt {
    pub tx_hash: Digest,
    pub status: ChainStatus,
    pub reason: String,
    /// Deployed contract, for deployments.
    pub contract: Option<ContractId>,
    /// Request index, for censorship submissions.
    pub index: Option<u64>,
}
impl_codec!(ChainReceipt {
    tx_hash,
    status,
    reason,
    contract,
    index
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub time: Timestamp,
    pub txs: Vec<ChainTx>,
    pub receipts: Vec<ChainReceipt>,
}
impl_codec!(Block {
    height,
    time,
    txs,
    receipts
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Contract {
    Ipsc { state: IpscState },
    ImscD { state: ImscDecentralized },
    ImscC { state: ImscCentralized },
}
impl_codec_enum!(Contract, "contract" {
    0 => Ipsc { state },
    1 => ImscD { state },
    2 => ImscC { state },
});

/// Contract storage after some block.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainState {
    pub contracts: BTreeMap<ContractId, Contract>,
}

impl ChainState {
    pub fn ipsc(&self, id: &ContractId) -> Option<&IpscState> {
        match self.contracts.get(id) {
            Some(Contract::Ipsc { state }) => Some(state),
            _ => None,
        }
    }

    fn ipsc_mut(&mut self, id: &ContractId) -> Result<&mut IpscState, Reject> {
        match self.contracts.get_mut(id) {
            Some(Contract::Ipsc { state }) => Ok(state),
            _ => Err(Reject::new("no such integrity contract")),
        }
    }

    pub fn ipscs(&self) -> impl Iterator<Item = (&ContractId, &IpscState)> {
        self.contracts.iter().filter_map(|(id, c)| match c {
            Contract::Ipsc { state } => Some((id, state)),
            _ => None,
        })
    }

    /// Whether `ipsc` is admitted by the registry `imsc`.
    pub fn is_approved(&self, imsc: &ContractId, ipsc: &ContractId) -> bool {
        match self.contracts.get(imsc) {
            Some(Contract::ImscD { state }) => state.is_approved(ipsc),
            Some(Contract::ImscC { state }) => state.is_approved(ipsc),
            _ => false,
        }
    }

    /// Instances admitted by `imsc`, in id order.
    pub fn approved(&self, imsc: &ContractId) -> Vec<ContractId> {
        self.ipscs()
            .map(|(id, _)| *id)
            .filter(|id| self.is_approved(imsc, id))
            .collect()
    }

    pub fn imsc_d(&self, id: &ContractId) -> Option<&ImscDecentralized> {
        match self.contracts.get(id) {
            Some(Contract::ImscD { state }) => Some(state),
            _ => None,
        }
    }

    pub fn imsc_c(&self, id: &ContractId) -> Option<&ImscCentralized> {
        match self.contracts.get(id) {
            Some(Contract::ImscC { state }) => Some(state),
            _ => None,
        }
    }

    fn imsc_d_mut(&mut self, id: &ContractId) -> Result<&mut ImscDecentralized, Reject> {
        match self.contracts.get_mut(id) {
            Some(Contract::ImscD { state }) => Ok(state),
            _ => Err(Reject::new("no such majority registry")),
        }
    }

    fn imsc_c_mut(&mut self, id: &ContractId) -> Result<&mut ImscCentralized, Reject> {
        match self.contracts.get_mut(id) {
            Some(Contract::ImscC { state }) => Ok(state),
            _ => Err(Reject::new("no such authority registry")),
        }
    }

    /// Runs one transaction. A rejected call leaves the state untouched.
    fn apply(&mut self, tx: &ChainTx, now: Timestamp) -> ChainReceipt {
        let tx_hash = tx.hash();
        let mut receipt = ChainReceipt {
            tx_hash,
            status: ChainStatus::Applied,
            reason: String::new(),
            contract: None,
            index: None,
        };
        let mut next = self.clone();
        match next.execute(tx, tx_hash, now, &mut receipt) {
            Ok(()) => *self = next,
            Err(Reject(reason)) => {
                receipt.status = ChainStatus::Rejected;
                receipt.reason = reason.to_string();
                receipt.contract = None;
                receipt.index = None;
            }
        }
        receipt
    }

    fn execute(
        &mut self,
        tx: &ChainTx,
        tx_hash: Digest,
        now: Timestamp,
        receipt: &mut ChainReceipt,
    ) -> Result<(), Reject> {
        let sender = tx.sender;
        match &tx.call {
            ChainCall::DeployIpsc {
                pk_pb,
                pk_tee,
                quote,
                t_i0,
                i_r,
                issue_authority,
            } => {
                let state = IpscState::init(
                    *pk_pb,
                    *pk_tee,
                    quote.clone(),
                    sender,
                    *t_i0,
                    *i_r,
                    *issue_authority,
                    now,
                )?;
                let id = contract_id(&tx_hash);
                self.contracts.insert(id, Contract::Ipsc { state });
                receipt.contract = Some(id);
            }
            ChainCall::Snapshot { ipsc, pair } => {
                match self.ipsc_mut(ipsc)?.snapshot_ledger(pair, now)? {
                    SnapshotOutcome::Transitioned => {}
                    SnapshotOutcome::Ignored => {
                        receipt.status = ChainStatus::Ignored;
                        receipt.reason = "root_from is not the current root".into();
                    }
                }
            }
            ChainCall::SubmitCensTx { ipsc, etx, ticket } => {
                let c = self.ipsc_mut(ipsc)?;
                c.access_control(ipsc, &sender, ticket, now)?;
                receipt.index = Some(c.submit_cens_tx(sender, etx.clone(), now));
            }
            ChainCall::ResolveCensTx {
                ipsc,
                idx,
                status,
                sig,
            } => self
                .ipsc_mut(ipsc)?
                .resolve_cens_tx(*idx, *status, sig, now)?,
            ChainCall::SubmitCensQry {
                ipsc,
                equery,
                ticket,
            } => {
                let c = self.ipsc_mut(ipsc)?;
                c.access_control(ipsc, &sender, ticket, now)?;
                receipt.index = Some(c.submit_cens_qry(sender, equery.clone(), now));
            }
            ChainCall::ResolveCensQry {
                ipsc,
                idx,
                status,
                edata,
                sig,
            } => self
                .ipsc_mut(ipsc)?
                .resolve_cens_qry(*idx, *status, edata.clone(), sig, now)?,
            ChainCall::ReplaceEnc {
                ipsc,
                pk_pb,
                pk_tee,
                quote,
                pair,
            } => self.ipsc_mut(ipsc)?.replace_enclave(
                &sender,
                *pk_pb,
                *pk_tee,
                quote.clone(),
                pair,
                now,
            )?,
            ChainCall::DeployImscD { members } => {
                let state = ImscDecentralized::init(members)?;
                let id = contract_id(&tx_hash);
                self.contracts.insert(id, Contract::ImscD { state });
                receipt.contract = Some(id);
            }
            ChainCall::NewJoin { imsc, ipsc } => self.imsc_d_mut(imsc)?.new_join(*ipsc, sender)?,
            ChainCall::ApproveJoin {
                imsc,
                my_ipsc,
                new_ipsc,
            } => {
                self.imsc_d_mut(imsc)?
                    .approve_join(*my_ipsc, *new_ipsc, sender)?;
            }
            ChainCall::ApproveDelete {
                imsc,
                my_ipsc,
                del_ipsc,
            } => {
                self.imsc_d_mut(imsc)?
                    .approve_delete(*my_ipsc, *del_ipsc, sender)?;
            }
            ChainCall::DeployImscC { authority } => {
                let id = contract_id(&tx_hash);
                self.contracts.insert(
                    id,
                    Contract::ImscC {
                        state: ImscCentralized::init(*authority, sender),
                    },
                );
                receipt.contract = Some(id);
            }
            ChainCall::AddInstance {
                imsc,
                ipsc,
                operator,
            } => self.imsc_c_mut(imsc)?.add(*ipsc, *operator, sender)?,
            ChainCall::DelInstance { imsc, ipsc } => self.imsc_c_mut(imsc)?.del(*ipsc, sender)?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("transaction signature does not verify")]
    BadSignature,
    #[error("transaction already submitted")]
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    pub finality_depth: u64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            finality_depth: 1,
            seed: 0,
        }
    }
}

pub struct Chain {
    cfg: ChainConfig,
    rng: ChaCha20Rng,
    now: Timestamp,
    mempool: Vec<ChainTx>,
    seen: HashSet<Digest>,
    blocks: Vec<Block>,
    /// `states[h]` is the state after block `h`; `states[0]` is empty.
    states: Vec<Arc<ChainState>>,
    receipts: HashMap<Digest, (u64, usize)>,
    /// Height of the latest block that carried transactions.
    last_busy: u64,
    view_key: KeyPair,
}

impl Chain {
    pub fn new(cfg: ChainConfig) -> Self {
        assert!(
            cfg.finality_depth >= 1,
            "finality depth must be at least one"
        );
        Chain {
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
            cfg,
            now: 0,
            mempool: Vec::new(),
            seen: HashSet::new(),
            blocks: Vec::new(),
            states: vec![Arc::new(ChainState::default())],
            receipts: HashMap::new(),
            last_busy: 0,
            view_key: view_authority(),
        }
    }

    pub fn config(&self) -> ChainConfig {
        self.cfg
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    /// Moves the chain clock forward; earlier times are ignored.
    pub fn advance_time(&mut self, now: Timestamp) {
        self.now = self.now.max(now);
    }

    pub fn submit(&mut self, tx: ChainTx) -> Result<Digest, ChainError> {
        if !tx.signature_valid() {
            return Err(ChainError::BadSignature);
        }
        let h = tx.hash();
        if !self.seen.insert(h) {
            return Err(ChainError::Duplicate);
        }
        self.mempool.push(tx);
        Ok(h)
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn finalized_height(&self) -> u64 {
        self.height().saturating_sub(self.cfg.finality_depth - 1)
    }

    pub fn has_pending(&self) -> bool {
        !self.mempool.is_empty()
    }

    /// Produces a block if there are queued transactions or a block with
    /// transactions that is not yet final. Returns the new height.
    pub fn produce_block(&mut self) -> Option<u64> {
        if self.mempool.is_empty() && self.last_busy <= self.finalized_height() {
            return None;
        }
        let arrivals = std::mem::take(&mut self.mempool);
        let txs = self.order(arrivals);
        let mut state = (**self.states.last().expect("genesis state")).clone();
        let height = self.height() + 1;
        if !txs.is_empty() {
            self.last_busy = height;
        }
        let mut receipts = Vec::with_capacity(txs.len());
        for (i, tx) in txs.iter().enumerate() {
            let r = state.apply(tx, self.now);
            self.receipts.insert(r.tx_hash, (height, i));
            receipts.push(r);
        }
        self.blocks.push(Block {
            height,
            time: self.now,
            txs,
            receipts,
        });
        self.states.push(Arc::new(state));
        Some(height)
    }

    fn order(&mut self, arrivals: Vec<ChainTx>) -> Vec<ChainTx> {
        let mut queues: BTreeMap<PublicKey, Vec<ChainTx>> = BTreeMap::new();
        let mut senders = Vec::new();
        for tx in arrivals {
            let q = queues.entry(tx.sender).or_default();
            if q.is_empty() {
                senders.push(tx.sender);
            }
            q.push(tx);
        }
        senders.shuffle(&mut self.rng);
        let mut queues: Vec<std::vec::IntoIter<ChainTx>> = senders
            .iter()
            .map(|s| queues.remove(s).expect("sender queued").into_iter())
            .collect();
        let mut out = Vec::new();
        loop {
            let mut progressed = false;
            for q in &mut queues {
                if let Some(tx) = q.next() {
                    out.push(tx);
                    progressed = true;
                }
            }
            if !progressed {
                return out;
            }
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn state_at(&self, height: u64) -> Option<Arc<ChainState>> {
        self.states.get(height as usize).cloned()
    }

    pub fn finalized_state(&self) -> Arc<ChainState> {
        self.states[self.finalized_height() as usize].clone()
    }

    /// Receipt of `tx_hash` if its block is final.
    pub fn final_receipt(&self, tx_hash: &Digest) -> Option<&ChainReceipt> {
        let (h, i) = *self.receipts.get(tx_hash)?;
        if h > self.finalized_height() {
            return None;
        }
        Some(&self.blocks[h as usize - 1].receipts[i])
    }

    /// Receipt of `tx_hash` whether or not its block is final.
    pub fn receipt(&self, tx_hash: &Digest) -> Option<&ChainReceipt> {
        let (h, i) = *self.receipts.get(tx_hash)?;
        Some(&self.blocks[h as usize - 1].receipts[i])
    }

    /// Signed finalized view of every integrity contract, with admission
    /// status read from `imsc`.
    pub fn view(&self, imsc: &ContractId) -> SignedView {
        let state = self.finalized_state();
        SignedView::sign(
            &self.view_key,
            build_view(&state, imsc, self.finalized_height(), self.now),
        )
    }

    /// Every byte the chain has made public, for privacy scans.
    pub fn public_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for b in &self.blocks {
            b.encode_to(&mut out);
        }
        for tx in &self.mempool {
            tx.encode_to(&mut out);
        }
        out
    }
}

pub fn build_view(
    state: &ChainState,
    imsc: &ContractId,
    height: u64,
    time: Timestamp,
) -> ChainView {
    let instances = state
        .ipscs()
        .map(|(id, c)| InstanceView {
            ipsc: *id,
            approved: state.is_approved(imsc, id),
            lroot_pb: c.lroot_pb,
            roots: c.roots.clone(),
            pk_tee: *c.latest_pk_tee(),
            pk_pb: *c.latest_pk_pb(),
            t_i: c.t_i,
            t_s: c.t_s,
            i_r: c.i_r,
            issue_authority: c.issue_authority,
            created_at: c.created_at,
        })
        .collect();
    ChainView {
        height,
        time,
        imsc: *imsc,
        instances,
    }
}
