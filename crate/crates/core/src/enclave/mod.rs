//! The trusted ledger program.
//!
//! An [`Enclave`] holds the signing keys and the integrity state of one
//! ledger: the last header, the frozen-hash cache over all headers, the
//! snapshotted and current history roots, and the supply counters. The
//! operator keeps the full state and the block store outside and drives the
//! enclave through ecalls; nothing the operator supplies is trusted unless
//! it verifies against this state or the signed chain view.

mod ecall;
mod issuance;
mod light_client;
mod pair;
mod query;

use std::collections::BTreeSet;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use thiserror::Error;

use crate::authlog::{
    history_leaf_hash, inc_verify, mk_root_or_empty, Commitment, FrozenHashCache,
};
use crate::codec::{Decode, Encode};
use crate::crypto::{
    hash_tagged, AttestationQuote, Digest, KeyPair, Platform, PublicKey, Scheme, SealedBox,
};
use crate::ids::{Address, ContractId};
use crate::impl_codec;
use crate::ledger::{
    run_vm, AccessTicket, Event, ForeignEvidence, Header, MicroTx, PartialState, RcptStatus,
    Receipt, State, StateError, StateKey, StateValue, Supply, TxError, VmConfig, VmEnv, VmError,
};
use crate::time::Timestamp;

pub use ecall::{EcallRequest, EcallResponse};
pub use issuance::{allowed_issued, periods_started, InflationRate};
pub use light_client::{
    view_authority, view_authority_public, ChainView, ForeignError, InstanceView, LightClient,
    SignedView, ViewError,
};
pub use pair::{sealed_hash, CensStatus, QueryResolution, TxResolution, VersionTransitionPair};
pub use query::{QueryAnswer, QueryRequest};

const CODE_ID: &str = "cbdc-enclave/1";

/// Code identity every honest enclave reports in its quote.
pub fn measurement() -> Digest {
    hash_tagged(b"enclave/measurement", &[CODE_ID.as_bytes()])
}

/// Address credited with the genesis allocation.
pub fn treasury(operator: &PublicKey) -> Address {
    Address::of(operator)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisParams {
    pub ipsc: ContractId,
    pub imsc: ContractId,
    pub operator: PublicKey,
    pub t_i0: u64,
    pub i_r: InflationRate,
    pub issue_authority: bool,
    pub htlc_timeout: u64,
    pub ticket_window: u64,
    pub allow_fund: bool,
}
impl_codec!(GenesisParams {
    ipsc,
    imsc,
    operator,
    t_i0,
    i_r,
    issue_authority,
    htlc_timeout,
    ticket_window,
    allow_fund
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitOutput {
    pub pk_tee: PublicKey,
    pub pk_pb: PublicKey,
    pub quote: AttestationQuote,
}
impl_codec!(InitOutput {
    pk_tee,
    pk_pb,
    quote
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisOutput {
    /// Entries the operator must install before the first batch.
    pub allocation: Vec<(StateKey, StateValue)>,
    pub st_root: Digest,
}
impl_codec!(GenesisOutput {
    allocation,
    st_root
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutput {
    pub pair: VersionTransitionPair,
    pub partial: PartialState,
    pub header: Header,
    /// Transactions included in the block, in execution order.
    pub txs: Vec<MicroTx>,
    pub receipts: Vec<Receipt>,
    pub rejected: Vec<(MicroTx, TxError)>,
    /// One per escalated transaction handed to this call, in order.
    pub resolutions: Vec<TxResolution>,
}
impl_codec!(ExecOutput {
    pair,
    partial,
    header,
    txs,
    receipts,
    rejected,
    resolutions
});

/// Sealed enclave state for a successor enclave on the same platform, plus
/// a transition pair the successor's operator posts with the key rotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub blob: Vec<u8>,
    pub handover: VersionTransitionPair,
}
impl_codec!(Checkpoint { blob, handover });

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnclaveError {
    #[error("enclave already initialised")]
    AlreadyInitialized,
    #[error("enclave not initialised")]
    NotInitialized,
    #[error("genesis already applied")]
    AlreadyGenesis,
    #[error("genesis not applied")]
    NoGenesis,
    #[error("genesis rejected: {0}")]
    Genesis(&'static str),
    #[error("partial state root {got} does not match last state root {expected}")]
    StaleState { expected: Digest, got: Digest },
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Foreign(#[from] ForeignError),
    #[error("client already registered")]
    AlreadyRegistered,
    #[error("client not registered")]
    NotRegistered,
    #[error("key has the wrong signature scheme")]
    WrongScheme,
    #[error("request does not decrypt or parse")]
    Malformed,
    #[error("checkpoint rejected: {0}")]
    Checkpoint(&'static str),
}

#[derive(Clone)]
struct Keys {
    pb: KeyPair,
    tee: KeyPair,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Core {
    params: GenesisParams,
    created_at: Timestamp,
    st_root: Digest,
    hdr_last: Option<Header>,
    lroot_pb: Option<Commitment>,
    lroot_cur: Option<Commitment>,
    fh: FrozenHashCache,
    id_cur: u64,
    supply: Supply,
    registered: BTreeSet<Address>,
    lc: LightClient,
}
impl_codec!(Core {
    params,
    created_at,
    st_root,
    hdr_last,
    lroot_pb,
    lroot_cur,
    fh,
    id_cur,
    supply,
    registered,
    lc
});

impl Core {
    fn vm_config(&self) -> VmConfig {
        VmConfig {
            htlc_timeout: self.params.htlc_timeout,
            ticket_window: self.params.ticket_window,
            allow_fund: self.params.allow_fund,
            operator: self.params.operator,
            issue_authority: self.params.issue_authority,
        }
    }

    fn now(&self) -> Timestamp {
        self.lc.time()
    }
}

struct Env<'a> {
    core: &'a Core,
    tee: &'a KeyPair,
}

impl VmEnv for Env<'_> {
    fn now(&self) -> Timestamp {
        self.core.now()
    }

    fn own_instance(&self) -> ContractId {
        self.core.params.ipsc
    }

    fn is_registered(&self, address: &Address) -> bool {
        self.core.registered.contains(address)
    }

    fn knows_instance(&self, id: &ContractId) -> bool {
        *id != self.core.params.ipsc && self.core.lc.is_approved(id)
    }

    fn verify_foreign(&self, evidence: &ForeignEvidence) -> bool {
        self.core.lc.verify_foreign(evidence).is_ok()
    }

    fn issuance_allowed(&self, new_t_i: u64) -> bool {
        let p = &self.core.params;
        new_t_i <= allowed_issued(p.t_i0, p.i_r, self.core.created_at, self.core.now())
    }

    fn issue_ticket(&self, client: PublicKey, expires_at: Timestamp) -> AccessTicket {
        AccessTicket::sign(self.tee, client, self.core.params.ipsc, expires_at)
    }
}

/// A simulated enclave. Cloning one models a rollback of its sealed state,
/// which only an attacker with control of the host would do.
#[derive(Clone)]
pub struct Enclave {
    platform: Platform,
    seed: u64,
    keys: Option<Keys>,
    core: Option<Core>,
}

impl std::fmt::Debug for Enclave {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Enclave")
            .field("pk_pb", &self.keys.as_ref().map(|k| k.pb.public()))
            .field("id_cur", &self.id_cur())
            .field("lroot_pb", &self.lroot_pb())
            .field("lroot_cur", &self.lroot_cur())
            .finish()
    }
}

impl Enclave {
    /// An enclave whose keys will be derived from `seed` at init.
    pub fn new(platform: Platform, seed: u64) -> Self {
        Enclave {
            platform,
            seed,
            keys: None,
            core: None,
        }
    }

    pub fn init(&mut self) -> Result<InitOutput, EnclaveError> {
        if self.keys.is_some() {
            return Err(EnclaveError::AlreadyInitialized);
        }
        let keys = Keys {
            pb: KeyPair::derive(Scheme::Pb, self.seed, "enclave/pb"),
            tee: KeyPair::derive(Scheme::Tee, self.seed, "enclave/tee"),
        };
        let out = self.init_output(&keys);
        self.keys = Some(keys);
        Ok(out)
    }

    fn init_output(&self, keys: &Keys) -> InitOutput {
        InitOutput {
            pk_tee: keys.tee.public(),
            pk_pb: keys.pb.public(),
            quote: self
                .platform
                .attest(measurement(), keys.tee.public(), keys.pb.public()),
        }
    }

    fn keys(&self) -> Result<&Keys, EnclaveError> {
        self.keys.as_ref().ok_or(EnclaveError::NotInitialized)
    }

    fn ready(&self) -> Result<(&Keys, &Core), EnclaveError> {
        let keys = self.keys()?;
        let core = self.core.as_ref().ok_or(EnclaveError::NoGenesis)?;
        Ok((keys, core))
    }

    fn core_mut(&mut self) -> Result<&mut Core, EnclaveError> {
        self.core.as_mut().ok_or(EnclaveError::NoGenesis)
    }

    /// Binds the enclave to its public contract, read from a signed chain
    /// view, and allocates the initial supply to the operator's treasury.
    pub fn genesis(
        &mut self,
        params: GenesisParams,
        view: &SignedView,
    ) -> Result<GenesisOutput, EnclaveError> {
        let keys = self.keys()?;
        if self.core.is_some() {
            return Err(EnclaveError::AlreadyGenesis);
        }
        if params.operator.scheme != Scheme::Pb {
            return Err(EnclaveError::WrongScheme);
        }
        if !params.i_r.is_valid() {
            return Err(EnclaveError::Genesis(
                "inflation rate has a zero denominator",
            ));
        }
        let mut lc = LightClient::new();
        lc.update(view, &params.imsc)?;
        let inst = lc
            .instance(&params.ipsc)
            .ok_or(EnclaveError::Genesis("contract not in chain view"))?;
        if inst.pk_pb != keys.pb.public() || inst.pk_tee != keys.tee.public() {
            return Err(EnclaveError::Genesis("contract holds other enclave keys"));
        }
        if inst.lroot_pb.is_some() {
            return Err(EnclaveError::Genesis("contract already has a snapshot"));
        }
        if inst.t_i != params.t_i0 || inst.t_s != params.t_i0 {
            return Err(EnclaveError::Genesis(
                "contract supply differs from initial issuance",
            ));
        }
        if inst.i_r != params.i_r || inst.issue_authority != params.issue_authority {
            return Err(EnclaveError::Genesis("contract issuance policy differs"));
        }
        let created_at = inst.created_at;
        let treasury = treasury(&params.operator);
        let mut allocation = Vec::new();
        if params.t_i0 > 0 {
            allocation.push((
                StateKey::account(treasury),
                StateValue::Account {
                    account: crate::ledger::Account {
                        balance: params.t_i0,
                        nonce: 0,
                    },
                },
            ));
        }
        let mut st = State::new();
        for (k, v) in &allocation {
            st.set(k.clone(), v.clone());
        }
        let st_root = st.root();
        let mut registered = BTreeSet::new();
        registered.insert(treasury);
        self.core = Some(Core {
            supply: Supply {
                t_i: params.t_i0,
                t_s: params.t_i0,
            },
            params,
            created_at,
            st_root,
            hdr_last: None,
            lroot_pb: None,
            lroot_cur: None,
            fh: FrozenHashCache::new(),
            id_cur: 1,
            registered,
            lc,
        });
        Ok(GenesisOutput {
            allocation,
            st_root,
        })
    }

    pub fn update_light_client(&mut self, view: &SignedView) -> Result<(), EnclaveError> {
        let core = self.core_mut()?;
        let imsc = core.params.imsc;
        core.lc.update(view, &imsc)?;
        Ok(())
    }

    /// Executes one batch. `censored` are sealed transactions clients
    /// escalated to the public contract; they run after `txs`.
    ///
    /// On any error the enclave state is unchanged.
    pub fn exec(
        &mut self,
        txs: &[MicroTx],
        censored: &[SealedBox],
        partial: &PartialState,
    ) -> Result<ExecOutput, EnclaveError> {
        let (keys, core) = self.ready()?;
        if partial.root != core.st_root {
            return Err(EnclaveError::StaleState {
                expected: core.st_root,
                got: partial.root,
            });
        }
        let mut batch = txs.to_vec();
        let mut seen: BTreeSet<Digest> = batch.iter().map(MicroTx::hash).collect();
        let mut escalated = Vec::with_capacity(censored.len());
        for etx in censored {
            let tx = keys
                .tee
                .open(etx)
                .ok()
                .and_then(|(plain, _)| MicroTx::decode(&plain).ok());
            let tx_hash = tx.map(|tx| {
                let h = tx.hash();
                if seen.insert(h) {
                    batch.push(tx);
                }
                h
            });
            escalated.push((sealed_hash(etx), tx_hash));
        }

        let cfg = core.vm_config();
        let env = Env {
            core,
            tee: &keys.tee,
        };
        let out = run_vm(&batch, partial, core.supply, &cfg, &env)?;
        let new_partial = partial.apply(&out.writes)?;
        let txs_enc: Vec<Vec<u8>> = out.accepted.iter().map(Encode::encode).collect();
        let rcps_enc: Vec<Vec<u8>> = out.receipts.iter().map(Encode::encode).collect();
        let header = Header {
            id: core.id_cur,
            txs_root: mk_root_or_empty(&txs_enc),
            rcp_root: mk_root_or_empty(&rcps_enc),
            st_root: new_partial.root,
        };
        let resolutions = escalated
            .into_iter()
            .map(|(etx_hash, tx_hash)| {
                let status = match tx_hash {
                    None => CensStatus::Malformed,
                    Some(h) => match out.receipts.iter().find(|r| r.tx_hash == h) {
                        Some(r) if r.status == RcptStatus::Ok => CensStatus::Executed,
                        Some(_) => CensStatus::Reverted,
                        None => CensStatus::Rejected,
                    },
                };
                TxResolution::sign(&keys.pb, etx_hash, status)
            })
            .collect();

        let pb = keys.pb.clone();
        let core = self.core_mut()?;
        core.fh
            .update(history_leaf_hash(&header.encode()), header.id)
            .expect("id_cur is always one past the cache count");
        let lroot_cur = Commitment {
            version: header.id,
            root: core
                .fh
                .reduce()
                .expect("cache is non-empty after an update"),
        };
        core.id_cur += 1;
        core.hdr_last = Some(header);
        core.st_root = header.st_root;
        core.lroot_cur = Some(lroot_cur);
        core.supply = out.supply;
        let pair = VersionTransitionPair::sign(
            &pb,
            core.lroot_pb,
            lroot_cur,
            core.supply.t_i,
            core.supply.t_s,
        );
        Ok(ExecOutput {
            pair,
            partial: new_partial,
            header,
            txs: out.accepted,
            receipts: out.receipts,
            rejected: out.rejected,
            resolutions,
        })
    }

    /// Marks the current root as snapshotted.
    pub fn flush(&mut self) -> Result<(), EnclaveError> {
        let core = self.core_mut()?;
        core.lroot_pb = core.lroot_cur;
        Ok(())
    }

    /// Transition pair from the snapshotted root to the current one, if the
    /// ledger has moved since the last flush.
    pub fn pending_pair(&self) -> Option<VersionTransitionPair> {
        let (keys, core) = self.ready().ok()?;
        let to = core.lroot_cur?;
        if core.lroot_pb == Some(to) {
            return None;
        }
        Some(VersionTransitionPair::sign(
            &keys.pb,
            core.lroot_pb,
            to,
            core.supply.t_i,
            core.supply.t_s,
        ))
    }

    /// Registers a client after the operator's off-ledger identity checks.
    /// The account itself appears in the state on first credit.
    pub fn register(&mut self, pk: PublicKey) -> Result<(Receipt, AccessTicket), EnclaveError> {
        if pk.scheme != Scheme::Pb {
            return Err(EnclaveError::WrongScheme);
        }
        let (keys, core) = self.ready()?;
        let address = Address::of(&pk);
        if core.registered.contains(&address) {
            return Err(EnclaveError::AlreadyRegistered);
        }
        let ticket = AccessTicket::sign(
            &keys.tee,
            pk,
            core.params.ipsc,
            core.now() + core.params.ticket_window,
        );
        let receipt = Receipt {
            tx_hash: hash_tagged(b"registration", &[&pk.bytes]),
            status: RcptStatus::Ok,
            events: vec![Event::TicketIssued {
                ticket: ticket.clone(),
            }],
            gas: 0,
        };
        self.core_mut()?.registered.insert(address);
        Ok((receipt, ticket))
    }

    /// Fresh own-instance ticket for an already registered client.
    pub fn renew_ticket(&self, pk: &PublicKey) -> Result<AccessTicket, EnclaveError> {
        let (keys, core) = self.ready()?;
        if !core.registered.contains(&Address::of(pk)) {
            return Err(EnclaveError::NotRegistered);
        }
        Ok(AccessTicket::sign(
            &keys.tee,
            *pk,
            core.params.ipsc,
            core.now() + core.params.ticket_window,
        ))
    }

    /// Decrypts an escalated query so the operator can prepare an answer.
    pub fn open_query(&self, equery: &SealedBox) -> Result<QueryRequest, EnclaveError> {
        let keys = self.keys()?;
        let (plain, _) = keys.tee.open(equery).map_err(|_| EnclaveError::Malformed)?;
        QueryRequest::decode(&plain).map_err(|_| EnclaveError::Malformed)
    }

    /// Checks the operator's answer against the snapshotted root and returns
    /// a signed resolution whose data only the querying client can read.
    pub fn answer_query(
        &self,
        equery: &SealedBox,
        answer: &QueryAnswer,
    ) -> Result<QueryResolution, EnclaveError> {
        let (keys, core) = self.ready()?;
        let h = sealed_hash(equery);
        let Ok((plain, session)) = keys.tee.open(equery) else {
            return Ok(QueryResolution::sign(
                &keys.pb,
                h,
                CensStatus::Malformed,
                Vec::new(),
            ));
        };
        let Ok(request) = QueryRequest::decode(&plain) else {
            return Ok(QueryResolution::sign(
                &keys.pb,
                h,
                CensStatus::Malformed,
                Vec::new(),
            ));
        };
        let (status, reply) = if answer_valid(core.lroot_pb, &request, answer) {
            (CensStatus::Answered, answer.encode())
        } else {
            (
                CensStatus::Unanswerable,
                QueryAnswer::Unavailable {}.encode(),
            )
        };
        Ok(QueryResolution::sign(
            &keys.pb,
            h,
            status,
            session.seal_reply(&reply),
        ))
    }

    pub fn verify_foreign(&self, evidence: &ForeignEvidence) -> Result<(), EnclaveError> {
        let (_, core) = self.ready()?;
        core.lc.verify_foreign(evidence)?;
        Ok(())
    }

    /// Seals the enclave's state for a replacement enclave.
    pub fn checkpoint(&self) -> Result<Checkpoint, EnclaveError> {
        let (keys, core) = self.ready()?;
        let to = core
            .lroot_cur
            .ok_or(EnclaveError::Checkpoint("no ledger version to hand over"))?;
        let handover = VersionTransitionPair::sign(
            &keys.pb,
            core.lroot_pb,
            to,
            core.supply.t_i,
            core.supply.t_s,
        );
        let plain = core.encode();
        let nonce = hash_tagged(b"enclave/seal-nonce", &[&plain]);
        let ct = sealing_cipher(&self.platform)
            .encrypt(Nonce::from_slice(&nonce.0[..12]), plain.as_slice())
            .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
        let mut blob = nonce.0[..12].to_vec();
        blob.extend_from_slice(&ct);
        Ok(Checkpoint { blob, handover })
    }

    /// Starts a replacement enclave from a checkpoint sealed on `platform`.
    pub fn restore(
        platform: Platform,
        seed: u64,
        checkpoint: &Checkpoint,
    ) -> Result<(Enclave, InitOutput), EnclaveError> {
        if checkpoint.blob.len() < 12 {
            return Err(EnclaveError::Checkpoint("truncated blob"));
        }
        let (nonce, ct) = checkpoint.blob.split_at(12);
        let plain = sealing_cipher(&platform)
            .decrypt(Nonce::from_slice(nonce), ct)
            .map_err(|_| EnclaveError::Checkpoint("blob not sealed for this platform"))?;
        let core = Core::decode(&plain).map_err(|_| EnclaveError::Checkpoint("corrupt state"))?;
        let mut e = Enclave::new(platform, seed);
        let out = e.init()?;
        e.core = Some(core);
        Ok((e, out))
    }

    pub fn public_keys(&self) -> Option<(PublicKey, PublicKey)> {
        self.keys.as_ref().map(|k| (k.pb.public(), k.tee.public()))
    }

    pub fn own_instance(&self) -> Option<ContractId> {
        self.core.as_ref().map(|c| c.params.ipsc)
    }

    pub fn id_cur(&self) -> u64 {
        self.core.as_ref().map_or(1, |c| c.id_cur)
    }

    pub fn lroot_pb(&self) -> Option<Commitment> {
        self.core.as_ref().and_then(|c| c.lroot_pb)
    }

    pub fn lroot_cur(&self) -> Option<Commitment> {
        self.core.as_ref().and_then(|c| c.lroot_cur)
    }

    pub fn hdr_last(&self) -> Option<Header> {
        self.core.as_ref().and_then(|c| c.hdr_last)
    }

    pub fn st_root(&self) -> Option<Digest> {
        self.core.as_ref().map(|c| c.st_root)
    }

    pub fn supply(&self) -> Supply {
        self.core.as_ref().map_or(Supply::default(), |c| c.supply)
    }

    pub fn frozen_hashes(&self) -> Option<&FrozenHashCache> {
        self.core.as_ref().map(|c| &c.fh)
    }

    pub fn now(&self) -> Timestamp {
        self.core.as_ref().map_or(0, Core::now)
    }

    pub fn is_registered(&self, pk: &PublicKey) -> bool {
        self.core
            .as_ref()
            .is_some_and(|c| c.registered.contains(&Address::of(pk)))
    }

    pub fn light_client(&self) -> Option<&LightClient> {
        self.core.as_ref().map(|c| &c.lc)
    }

    /// Issuance cap in force at the enclave's current time.
    pub fn issuance_cap(&self) -> Option<u64> {
        let c = self.core.as_ref()?;
        Some(allowed_issued(
            c.params.t_i0,
            c.params.i_r,
            c.created_at,
            c.now(),
        ))
    }
}

fn answer_valid(
    lroot_pb: Option<Commitment>,
    request: &QueryRequest,
    answer: &QueryAnswer,
) -> bool {
    let Some(snap) = lroot_pb else {
        return false;
    };
    match (request, answer) {
        (QueryRequest::IncProof { from }, QueryAnswer::IncProof { proof, to }) => {
            *to == snap && inc_verify(proof, from, to)
        }
        (QueryRequest::TxEvidence { tx_hash }, QueryAnswer::TxEvidence { evidence }) => {
            evidence.lroot == snap
                && evidence.mu_tx.hash() == *tx_hash
                && evidence.verify_inclusion()
        }
        _ => false,
    }
}

fn sealing_cipher(platform: &Platform) -> ChaCha20Poly1305 {
    let k = hash_tagged(b"enclave/seal", &[&platform.id().0, &measurement().0]);
    ChaCha20Poly1305::new(Key::from_slice(&k.0))
}
